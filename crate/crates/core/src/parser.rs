//! Text front end: a small expression language and its printer.
//!
//! ```text
//! program    = { line } ;
//! line       = [ decl | binding | output | expr ] ( NEWLINE | EOF ) ;
//! decl       = "var" IDENT ":" [ LABELS ] "(" [ INT { "," INT } ] ")" ;
//! binding    = "let" IDENT "=" expr ;
//! output     = IDENT "=" expr ;
//! expr       = term { ( "+" | "-" ) term } ;
//! term       = unary { ( "*" | ".*" ) unary } ;
//! unary      = "-" unary | postfix ;
//! postfix    = primary { "'" } ;
//! primary    = NUMBER | IDENT | call | "(" expr ")" ;
//! call       = "einsum" "(" sig ";" expr [ "," expr ] ")"
//!            | "transpose" "(" expr ";" LABELS ")"
//!            | "delta" "(" LABELS "|" LABELS ";" INT { "," INT } ")"
//!            | "tensor" "(" [ LABELS ] ";" INT { "," INT } ";" "[" NUMBER { "," NUMBER } "]" ")"
//!            | "const" "(" NUMBER ";" [ LABELS ] ";" [ INT { "," INT } ] ")"
//!            | "var" "(" IDENT ";" [ LABELS ] ")"
//!            | "sum" "(" expr ")" | "diag" "(" expr ")"
//!            | OPNAME "(" expr ")" ;
//! sig        = [ LABELS ] "," [ LABELS ] "->" [ LABELS ] | [ LABELS ] "->" [ LABELS ] ;
//! ```
//!
//! `LABELS` is a run of index labels, each a letter followed by optional
//! digits (`ij`, `i1j2`). `#` starts a comment. Expression lines without a
//! name become outputs `y`, `y1`, `y2`, ...
//!
//! Matrix notation is translated to generic multiplication:
//!
//! | text           | signature        |
//! |----------------|------------------|
//! | `y * x'`       | `(i, j, ij)`     |
//! | `A * x`        | `(ij, j, i)`     |
//! | `y' * x`       | `(i, i, ∅)`      |
//! | `A * B`        | `(ij, jk, ik)`   |
//! | `y .* x`       | `(i, i, i)`      |
//! | `A .* B`       | `(ij, ij, ij)`   |
//! | `A * diag(x)`  | `(ij, i, ij)`    |
//!
//! A transpose is folded into the labels of the product that consumes it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::index::{join_labels, split_labels, IndexSet};
use crate::registry;
use crate::tensor::DenseTensor;

const CANON: &str = "ijklmnopqrstuvwxyzabcdefgh";

fn canon(r: usize) -> Vec<String> {
    CANON.chars().take(r).map(|c| c.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Pipe,
    Arrow,
    Plus,
    Minus,
    Star,
    DotStar,
    Quote,
    Eq,
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut depth = 0i32;
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: l0, col: c0 });
        if c == '\n' {
            if depth == 0 {
                push(&mut out, Tok::Newline);
            }
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            push(&mut out, Tok::Ident(word));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            } else if i < chars.len() && chars[i] == '.' && !matches!(chars.get(i + 1), Some('*'))
            {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = text
                .parse()
                .map_err(|_| Error::syntax(l0, c0, format!("bad number `{text}`")))?;
            push(&mut out, Tok::Number(v));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, width) = match (c, two.as_str()) {
            (_, "->") => (Tok::Arrow, 2),
            (_, ".*") => (Tok::DotStar, 2),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('[', _) => (Tok::LBracket, 1),
            (']', _) => (Tok::RBracket, 1),
            (',', _) => (Tok::Comma, 1),
            (';', _) => (Tok::Semi, 1),
            (':', _) => (Tok::Colon, 1),
            ('|', _) => (Tok::Pipe, 1),
            ('+', _) => (Tok::Plus, 1),
            ('-', _) => (Tok::Minus, 1),
            ('*', _) => (Tok::Star, 1),
            ('\'', _) => (Tok::Quote, 1),
            ('=', _) => (Tok::Eq, 1),
            _ => return Err(Error::syntax(l0, c0, format!("unexpected character `{c}`"))),
        };
        match tok {
            Tok::LParen | Tok::LBracket => depth += 1,
            Tok::RParen | Tok::RBracket => depth -= 1,
            _ => {}
        }
        push(&mut out, tok);
        i += width;
        col += width;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// An operand as seen by matrix notation: a node, the order in which its axes
/// are read, and whether a vector is a row.
#[derive(Debug, Clone)]
struct View {
    node: NodeId,
    /// `perm[k]` is the node axis read as logical axis `k`.
    perm: Vec<usize>,
    row: bool,
    /// `diag(x)`: a vector standing for the diagonal matrix.
    diag: bool,
}

impl View {
    fn plain(dag: &ExprDag, node: NodeId) -> Self {
        View {
            node,
            perm: (0..dag.rank(node)).collect(),
            row: false,
            diag: false,
        }
    }

    fn rank(&self) -> usize {
        if self.diag {
            2
        } else {
            self.perm.len()
        }
    }

    /// Node-axis labels when logical axis `k` is called `logical[k]`.
    fn labels(&self, logical: &[String]) -> Vec<String> {
        let mut s = vec![String::new(); self.perm.len()];
        for (k, &p) in self.perm.iter().enumerate() {
            s[p] = logical[k].clone();
        }
        s
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dag: ExprDag,
    decls: HashMap<String, IndexSet>,
    lets: HashMap<String, NodeId>,
    unnamed: usize,
}

/// Parse a program (declarations followed by expressions) into a DAG.
pub fn parse(src: &str) -> Result<ExprDag> {
    parse_with(src, &[])
}

/// Parse with declarations supplied out of band in addition to any in `src`.
pub fn parse_with(src: &str, decls: &[(String, IndexSet)]) -> Result<ExprDag> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        dag: ExprDag::new(),
        decls: HashMap::new(),
        lets: HashMap::new(),
        unnamed: 0,
    };
    for (name, shape) in decls {
        p.declare(name, shape.clone())?;
    }
    p.program()?;
    Ok(p.dag)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (l, c) = self.here();
        Err(Error::syntax(l, c, msg))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.err(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected {what}, found {}", describe(&t))),
        }
    }

    /// An optional run of labels, empty when the next token is not an identifier.
    fn labels(&mut self) -> Result<Vec<String>> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let (l, c) = self.here();
                self.bump();
                split_labels(&s).map_err(|_| Error::syntax(l, c, format!("bad labels `{s}`")))
            }
            _ => Ok(Vec::new()),
        }
    }

    fn int(&mut self) -> Result<usize> {
        match self.peek().clone() {
            Tok::Number(v) if v >= 0.0 && v.fract() == 0.0 => {
                self.bump();
                Ok(v as usize)
            }
            t => self.err(format!("expected an extent, found {}", describe(&t))),
        }
    }

    fn int_list(&mut self, close: &Tok) -> Result<Vec<usize>> {
        let mut v = Vec::new();
        if self.peek() == close {
            return Ok(v);
        }
        loop {
            v.push(self.int()?);
            if !self.eat(&Tok::Comma) {
                return Ok(v);
            }
        }
    }

    fn number(&mut self) -> Result<f64> {
        let neg = self.eat(&Tok::Minus);
        let v = match self.peek().clone() {
            Tok::Number(v) => v,
            Tok::Ident(s) if s == "NaN" => f64::NAN,
            Tok::Ident(s) if s == "inf" => f64::INFINITY,
            t => return self.err(format!("expected a number, found {}", describe(&t))),
        };
        self.bump();
        Ok(if neg { -v } else { v })
    }

    fn declare(&mut self, name: &str, shape: IndexSet) -> Result<()> {
        self.dag.variable(name, shape.clone())?;
        self.decls.insert(name.to_string(), shape);
        Ok(())
    }

    fn program(&mut self) -> Result<()> {
        loop {
            while self.eat(&Tok::Newline) {}
            if *self.peek() == Tok::Eof {
                return Ok(());
            }
            self.line()?;
            match self.peek() {
                Tok::Newline | Tok::Eof => {}
                t => return self.err(format!("expected end of line, found {}", describe(t))),
            }
        }
    }

    fn line(&mut self) -> Result<()> {
        let kw = match self.peek() {
            Tok::Ident(s) => Some(s.clone()),
            _ => None,
        };
        match (kw.as_deref(), self.peek_at(1), self.peek_at(2)) {
            (Some("var"), Tok::Ident(_), Tok::Colon) => {
                self.bump();
                let name = self.ident("a variable name")?;
                self.expect(Tok::Colon, "`:`")?;
                let labels = self.labels()?;
                self.expect(Tok::LParen, "`(`")?;
                let dims = self.int_list(&Tok::RParen)?;
                self.expect(Tok::RParen, "`)`")?;
                if labels.len() != dims.len() {
                    return self.err(format!(
                        "{} labels but {} extents for `{name}`",
                        labels.len(),
                        dims.len()
                    ));
                }
                let shape = IndexSet::from_parts(&labels, &dims)?;
                self.declare(&name, shape)
            }
            (Some("let"), Tok::Ident(_), Tok::Eq) => {
                self.bump();
                let name = self.ident("a binding name")?;
                self.expect(Tok::Eq, "`=`")?;
                let v = self.expr()?;
                let id = self.materialize(v)?;
                self.lets.insert(name, id);
                Ok(())
            }
            (Some(_), Tok::Eq, _) => {
                let name = self.ident("an output name")?;
                self.bump();
                let v = self.expr()?;
                let id = self.materialize(v)?;
                self.dag.set_output(name, id);
                Ok(())
            }
            _ => {
                let v = self.expr()?;
                let id = self.materialize(v)?;
                let name = if self.unnamed == 0 {
                    "y".to_string()
                } else {
                    format!("y{}", self.unnamed)
                };
                self.unnamed += 1;
                self.dag.set_output(name, id);
                Ok(())
            }
        }
    }

    fn expr(&mut self) -> Result<View> {
        let mut acc = self.term()?;
        loop {
            let neg = match self.peek() {
                Tok::Plus => false,
                Tok::Minus => true,
                _ => return Ok(acc),
            };
            self.bump();
            let rhs = self.term()?;
            acc = self.add(acc, rhs, neg)?;
        }
    }

    fn term(&mut self) -> Result<View> {
        let mut acc = self.unary()?;
        loop {
            let (l, c) = self.here();
            let elementwise = match self.peek() {
                Tok::Star => false,
                Tok::DotStar => true,
                _ => return Ok(acc),
            };
            self.bump();
            let rhs = self.unary()?;
            acc = if elementwise {
                self.hadamard(acc, rhs, l, c)?
            } else {
                self.multiply(acc, rhs, l, c)?
            };
        }
    }

    fn unary(&mut self) -> Result<View> {
        if self.eat(&Tok::Minus) {
            if let Tok::Number(v) = *self.peek() {
                if !matches!(self.peek_at(1), Tok::Quote) {
                    self.bump();
                    let id = self.dag.scalar(-v);
                    return Ok(View::plain(&self.dag, id));
                }
            }
            let v = self.unary()?;
            let id = self.materialize(v)?;
            let n = self.dag.neg(id)?;
            return Ok(View::plain(&self.dag, n));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<View> {
        let mut v = self.primary()?;
        while *self.peek() == Tok::Quote {
            let (l, c) = self.here();
            self.bump();
            if v.diag {
                continue;
            }
            match v.perm.len() {
                0 => {}
                1 => v.row = !v.row,
                2 => v.perm.swap(0, 1),
                r => {
                    return Err(Error::syntax(
                        l,
                        c,
                        format!("`'` on a rank-{r} tensor; use transpose(A; ...)"),
                    ))
                }
            }
        }
        Ok(v)
    }

    fn primary(&mut self) -> Result<View> {
        let (l, c) = self.here();
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                let id = self.dag.scalar(v);
                Ok(View::plain(&self.dag, id))
            }
            Tok::LParen => {
                self.bump();
                let v = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(v)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let v = self.call(&name, l, c)?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(v);
                }
                if let Some(&id) = self.lets.get(&name) {
                    return Ok(View::plain(&self.dag, id));
                }
                if let Some(shape) = self.decls.get(&name).cloned() {
                    let id = self.dag.variable(&name, shape)?;
                    return Ok(View::plain(&self.dag, id));
                }
                match name.as_str() {
                    "NaN" | "inf" => {
                        let id = self.dag.scalar(if name == "NaN" { f64::NAN } else { f64::INFINITY });
                        Ok(View::plain(&self.dag, id))
                    }
                    _ => Err(Error::UnknownIdentifier(format!("{name} at {l}:{c}"))),
                }
            }
            t => self.err(format!("expected an expression, found {}", describe(&t))),
        }
    }

    fn call(&mut self, name: &str, l: usize, c: usize) -> Result<View> {
        let id = match name {
            "einsum" => {
                let s1 = self.labels()?;
                let (s2, two) = if self.eat(&Tok::Comma) {
                    (self.labels()?, true)
                } else {
                    (Vec::new(), false)
                };
                self.expect(Tok::Arrow, "`->`")?;
                let s3 = self.labels()?;
                self.expect(Tok::Semi, "`;`")?;
                let a = self.expr()?;
                let a = self.materialize(a)?;
                let b = if two {
                    self.expect(Tok::Comma, "`,` between operands")?;
                    let b = self.expr()?;
                    self.materialize(b)?
                } else {
                    self.dag.scalar(1.0)
                };
                self.dag.einsum(a, &s1, b, &s2, &s3)?
            }
            "transpose" => {
                let a = self.expr()?;
                let a = self.materialize(a)?;
                self.expect(Tok::Semi, "`;`")?;
                let (tl, tc) = self.here();
                let order = self.labels()?;
                let own = self.dag.shape(a).labels();
                let perm: Option<Vec<usize>> =
                    order.iter().map(|o| own.iter().position(|x| x == o)).collect();
                match perm {
                    Some(perm) if perm.len() == own.len() => {
                        return Ok(View {
                            node: a,
                            perm,
                            row: false,
                            diag: false,
                        })
                    }
                    _ => {
                        return Err(Error::syntax(
                            tl,
                            tc,
                            format!("`{}` is not a permutation of `{}`", join_labels(&order), join_labels(&own)),
                        ))
                    }
                }
            }
            "delta" => {
                let left = self.labels()?;
                self.expect(Tok::Pipe, "`|`")?;
                let right = self.labels()?;
                self.expect(Tok::Semi, "`;`")?;
                let dims = self.int_list(&Tok::RParen)?;
                if left.len() != right.len() || left.len() != dims.len() {
                    return self.err("delta needs matching label and extent counts");
                }
                let ls = IndexSet::from_parts(&left, &dims)?;
                let rs = IndexSet::from_parts(&right, &dims)?;
                self.dag.delta(ls, rs)?
            }
            "tensor" => {
                let labels = self.labels()?;
                self.expect(Tok::Semi, "`;`")?;
                let dims = self.int_list(&Tok::Semi)?;
                self.expect(Tok::Semi, "`;`")?;
                self.expect(Tok::LBracket, "`[`")?;
                let mut data = Vec::new();
                if *self.peek() != Tok::RBracket {
                    loop {
                        data.push(self.number()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`]`")?;
                if labels.len() != dims.len() {
                    return self.err("tensor needs one extent per label");
                }
                let shape = IndexSet::from_parts(&labels, &dims)?;
                let t = DenseTensor::new(dims, data)?;
                self.dag.tensor(shape, t)?
            }
            "const" => {
                let v = self.number()?;
                self.expect(Tok::Semi, "`;`")?;
                let labels = self.labels()?;
                self.expect(Tok::Semi, "`;`")?;
                let dims = self.int_list(&Tok::RParen)?;
                if labels.len() != dims.len() {
                    return self.err("const needs one extent per label");
                }
                if labels.is_empty() {
                    self.dag.scalar(v)
                } else {
                    let shape = IndexSet::from_parts(&labels, &dims)?;
                    self.dag.filled(shape, v)
                }
            }
            "var" => {
                let name = self.ident("a variable name")?;
                self.expect(Tok::Semi, "`;`")?;
                let labels = self.labels()?;
                let shape = self
                    .decls
                    .get(&name)
                    .cloned()
                    .ok_or_else(|| Error::UnknownIdentifier(format!("{name} at {l}:{c}")))?;
                let relabeled = shape.relabeled(&labels)?;
                self.dag.variable(&name, relabeled)?
            }
            "sum" => {
                let a = self.expr()?;
                let a = self.materialize(a)?;
                self.dag.sum_all(a)?
            }
            "diag" => {
                let a = self.expr()?;
                let a = self.materialize(a)?;
                if self.dag.rank(a) != 1 {
                    return Err(Error::syntax(l, c, "diag expects a vector"));
                }
                let mut v = View::plain(&self.dag, a);
                v.diag = true;
                return Ok(v);
            }
            op if registry::is_registered(op) => {
                let a = self.expr()?;
                let a = self.materialize(a)?;
                self.dag.unary(op, a)?
            }
            other => return Err(Error::UnknownIdentifier(format!("{other} at {l}:{c}"))),
        };
        Ok(View::plain(&self.dag, id))
    }

    /// Turn a view into a node; transposes become relabelling products.
    fn materialize(&mut self, v: View) -> Result<NodeId> {
        if v.diag {
            let shape = self.dag.shape(v.node).clone();
            let n = shape.dims()[0];
            let d = self
                .dag
                .delta(IndexSet::parse("i", &[n])?, IndexSet::parse("j", &[n])?)?;
            return self.dag.einsum(v.node, &["i"], d, &["i", "j"], &["i", "j"]);
        }
        if v.perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(v.node);
        }
        let own = self.dag.shape(v.node).labels();
        let out: Vec<String> = v.perm.iter().map(|&p| own[p].clone()).collect();
        let one = self.dag.scalar(1.0);
        self.dag.einsum(one, &[] as &[String], v.node, &own, &out)
    }

    fn flat(&mut self, v: View) -> Result<View> {
        let id = self.materialize(v)?;
        Ok(View::plain(&self.dag, id))
    }

    fn add(&mut self, a: View, b: View, negate: bool) -> Result<View> {
        let row = a.row;
        let a_scalar_lit = self.dag.rank(a.node) == 0 && !a.diag;
        let b_scalar_lit = self.dag.rank(b.node) == 0 && !b.diag;
        let mut x = self.materialize(a)?;
        let mut y = self.materialize(b)?;
        if negate {
            y = match self.dag.kind(y).scalar_value() {
                Some(v) => self.dag.scalar(-v),
                None => self.dag.neg(y)?,
            };
        }
        // a scalar constant added to a tensor is broadcast
        if b_scalar_lit && self.dag.rank(x) > 0 {
            if let Some(v) = self.dag.kind(y).scalar_value() {
                let shape = self.dag.shape(x).clone();
                y = self.dag.filled(shape, v);
            }
        } else if a_scalar_lit && self.dag.rank(y) > 0 {
            if let Some(v) = self.dag.kind(x).scalar_value() {
                let shape = self.dag.shape(y).clone();
                x = self.dag.filled(shape, v);
            }
        }
        let id = self.dag.add(x, y)?;
        let mut v = View::plain(&self.dag, id);
        v.row = row;
        Ok(v)
    }

    fn scale_view(&mut self, s: NodeId, v: View, scalar_left: bool) -> Result<View> {
        let row = v.row;
        let x = self.materialize(v)?;
        let labels = self.dag.shape(x).labels();
        let id = if scalar_left {
            self.dag.einsum(s, &[] as &[String], x, &labels, &labels)?
        } else {
            self.dag.einsum(x, &labels, s, &[], &labels)?
        };
        let mut out = View::plain(&self.dag, id);
        out.row = row;
        Ok(out)
    }

    fn product(&mut self, a: &View, la: &[&str], b: &View, lb: &[&str], lc: &[&str]) -> Result<NodeId> {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let sa = a.labels(&own(la));
        let sb = b.labels(&own(lb));
        self.dag.einsum(a.node, &sa, b.node, &sb, &own(lc))
    }

    fn multiply(&mut self, a: View, b: View, l: usize, c: usize) -> Result<View> {
        if a.rank() == 0 {
            return self.scale_view(a.node, b, true);
        }
        if b.rank() == 0 {
            return self.scale_view(b.node, a, false);
        }
        let vec = |v: &View| View::plain_vector(v.node);
        let (id, row) = match (a.rank(), a.row, a.diag, b.rank(), b.row, b.diag) {
            (2, _, false, 2, _, true) => (self.product(&a, &["i", "j"], &vec(&b), &["i"], &["i", "j"])?, false),
            (2, _, true, 2, _, false) => (self.product(&vec(&a), &["i"], &b, &["i", "j"], &["i", "j"])?, false),
            (2, _, true, _, _, _) | (_, _, _, 2, _, true) => {
                let a = self.flat(a)?;
                let b = self.flat(b)?;
                return self.multiply(a, b, l, c);
            }
            (2, _, _, 2, _, _) => (self.product(&a, &["i", "j"], &b, &["j", "k"], &["i", "k"])?, false),
            (2, _, _, 1, false, _) => (self.product(&a, &["i", "j"], &b, &["j"], &["i"])?, false),
            (1, true, _, 2, _, _) => (self.product(&a, &["i"], &b, &["i", "j"], &["j"])?, true),
            (1, true, _, 1, false, _) => (self.product(&a, &["i"], &b, &["i"], &[])?, false),
            (1, false, _, 1, true, _) => (self.product(&a, &["i"], &b, &["j"], &["i", "j"])?, false),
            (ra, _, _, rb, _, _) if ra >= 3 || rb >= 3 => {
                return Err(Error::syntax(
                    l,
                    c,
                    format!("`*` is not defined for ranks {ra} and {rb}; use einsum(...)"),
                ))
            }
            _ => {
                return Err(Error::syntax(
                    l,
                    c,
                    "operand orientations do not form a matrix product; transpose one side or use `.*`",
                ))
            }
        };
        let mut v = View::plain(&self.dag, id);
        v.row = row;
        Ok(v)
    }

    fn hadamard(&mut self, a: View, b: View, l: usize, c: usize) -> Result<View> {
        if a.rank() == 0 {
            return self.scale_view(a.node, b, true);
        }
        if b.rank() == 0 {
            return self.scale_view(b.node, a, false);
        }
        let a = if a.diag { self.flat(a)? } else { a };
        let b = if b.diag { self.flat(b)? } else { b };
        if a.rank() != b.rank() {
            return Err(Error::syntax(
                l,
                c,
                format!("`.*` needs equal ranks, got {} and {}", a.rank(), b.rank()),
            ));
        }
        let names = canon(a.rank());
        let sa = a.labels(&names);
        let sb = b.labels(&names);
        let id = self.dag.einsum(a.node, &sa, b.node, &sb, &names)?;
        let mut v = View::plain(&self.dag, id);
        v.row = a.row;
        Ok(v)
    }
}

impl View {
    fn plain_vector(node: NodeId) -> Self {
        View {
            node,
            perm: vec![0],
            row: false,
            diag: false,
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(v) => format!("`{v}`"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Print a DAG in the explicit form of the language. Shared interior nodes
/// become `let` bindings.
pub fn print_expr(dag: &ExprDag) -> String {
    let roots: Vec<NodeId> = dag.outputs().iter().map(|(_, id)| *id).collect();
    let live = dag.reachable(&roots);
    let mut uses: HashMap<NodeId, usize> = HashMap::new();
    for &id in &live {
        for ch in dag.kind(id).children() {
            *uses.entry(ch).or_default() += 1;
        }
    }
    let mut out = String::new();
    for (name, shape) in dag.inputs() {
        let labels = shape.label_string();
        let sep = if labels.is_empty() { "" } else { " " };
        out.push_str(&format!(
            "var {name} :{sep}{labels} ({})\n",
            shape
                .dims()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    let mut names: HashMap<NodeId, String> = HashMap::new();
    for &id in &live {
        let leaf = matches!(
            dag.kind(id),
            NodeKind::Variable { .. } | NodeKind::ConstScalar { .. }
        );
        if !leaf && uses.get(&id).copied().unwrap_or(0) > 1 {
            let text = print_node(dag, id, &names);
            let name = format!("_t{}", names.len());
            out.push_str(&format!("let {name} = {text}\n"));
            names.insert(id, name);
        }
    }
    for (name, id) in dag.outputs() {
        out.push_str(&format!("{name} = {}\n", print_node(dag, *id, &names)));
    }
    out
}

fn print_node(dag: &ExprDag, id: NodeId, names: &HashMap<NodeId, String>) -> String {
    if let Some(n) = names.get(&id) {
        return n.clone();
    }
    let p = |c: NodeId| print_node(dag, c, names);
    let node = dag.node(id);
    let dims = |s: &IndexSet| {
        s.dims()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    match &node.kind {
        NodeKind::Variable { name } => {
            let declared = dag.input_shape(name);
            if declared.map(|s| s.labels()) == Some(node.shape.labels()) {
                name.clone()
            } else {
                format!("var({name}; {})", node.shape.label_string())
            }
        }
        NodeKind::ConstScalar { bits } => fmt_num(f64::from_bits(*bits)),
        NodeKind::ConstTensor { value } => format!(
            "tensor({}; {}; [{}])",
            node.shape.label_string(),
            dims(&node.shape),
            value
                .0
                .data()
                .iter()
                .map(|v| fmt_num(*v))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        NodeKind::Delta { left, right } => {
            let r = left.len();
            let d: Vec<String> = node.shape.dims()[..r].iter().map(|d| d.to_string()).collect();
            format!(
                "delta({}|{}; {})",
                join_labels(left),
                join_labels(right),
                d.join(",")
            )
        }
        NodeKind::Add { left, right } => {
            let r = p(*right);
            let r = if matches!(dag.kind(*right), NodeKind::Add { .. }) && !names.contains_key(right) {
                format!("({r})")
            } else {
                r
            };
            format!("{} + {r}", p(*left))
        }
        NodeKind::Einsum {
            s1,
            s2,
            s3,
            left,
            right,
        } => format!(
            "einsum({},{}->{}; {}, {})",
            join_labels(s1),
            join_labels(s2),
            join_labels(s3),
            p(*left),
            p(*right)
        ),
        NodeKind::ElemUnary { op, child } | NodeKind::GenUnary { op, child } => {
            format!("{op}({})", p(*child))
        }
    }
}
