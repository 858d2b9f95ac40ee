//! Desk-scale benchmark problems: logistic regression, matrix
//! factorization, and a small ReLU network with softmax cross-entropy.
//!
//! Data are standard normal, labels are uniform, masks are Bernoulli(0.5).
//! Everything is seeded, so the problems and all FLOP counts are
//! reproducible.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{compress, higher_order, DerivativeResult, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate_node, flop_report, Environment};
use crate::expr::{ExprDag, NodeId, NodeKind};
use crate::parser::parse;
use crate::solve::{solve_compressed, solve_dense};
use crate::tensor::DenseTensor;

pub const DEFAULT_SEED: u64 = 42;
pub const CSV_HEADER: &str = "problem,n,k,mode,build_ms,eval_flops,eval_ms,compressed,solve_ms";

/// Smallest admissible `|pre-activation|` before a ReLU.
pub const KINK_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Logreg,
    Matfac,
    Nn,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(ProblemKind::Logreg),
            "matfac" => Ok(ProblemKind::Matfac),
            "nn" => Ok(ProblemKind::Nn),
            other => Err(Error::InvalidNode(format!("unknown problem `{other}`"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Logreg => "logreg",
            ProblemKind::Matfac => "matfac",
            ProblemKind::Nn => "nn",
        })
    }
}

/// A benchmark objective with bound data.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: ProblemKind,
    pub src: String,
    pub dag: ExprDag,
    pub env: Environment,
    /// The differentiated variable.
    pub wrt: String,
    /// Size columns of the CSV.
    pub n: usize,
    pub k: usize,
}

impl Instance {
    pub fn output(&self) -> NodeId {
        self.dag.output("y").expect("benchmark objectives are named y")
    }

    /// Objective value at the bound data.
    pub fn value(&self) -> Result<f64> {
        Ok(evaluate_node(&self.dag, &self.env, self.output())?.data()[0])
    }

    /// Derivative of order `order`, one mode per level.
    pub fn derivative(&self, modes: &[Mode]) -> Result<DerivativeResult> {
        higher_order(&self.dag, "y", &self.wrt, modes.len(), modes)
    }

    /// Hessian built with `mode` at every level, except that cross-country
    /// differentiates the gradient produced by reverse mode.
    pub fn hessian(&self, mode: Mode) -> Result<DerivativeResult> {
        self.derivative(&hessian_modes(mode))
    }
}

pub fn hessian_modes(mode: Mode) -> Vec<Mode> {
    match mode {
        Mode::Cross => vec![Mode::Reverse, Mode::Cross],
        m => vec![m, m],
    }
}

fn normal(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> DenseTensor {
    DenseTensor::from_fn(dims, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Standard normal data for every declared input of `dag`.
pub fn random_env(dag: &ExprDag, seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::new();
    for (name, shape) in dag.inputs() {
        env.insert(name.clone(), normal(&mut rng, &shape.dims(), 1.0));
    }
    env
}

/// `sum_i log(exp(-l_i (X w)_i) + 1)` with `X` of size `2n x n`.
pub fn logreg(n: usize, seed: u64) -> Result<Instance> {
    check_sizes(&[n])?;
    let m = 2 * n;
    let src = format!(
        "var X : ij ({m},{n})\nvar w : j ({n})\nvar l : i ({m})\nsum(log(exp(-(l .* (X*w))) + 1))\n"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal(&mut rng, &[m, n], 1.0);
    let w = normal(&mut rng, &[n], 1.0 / (n as f64).sqrt());
    let l = DenseTensor::from_fn(&[m], |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    Ok(Instance {
        kind: ProblemKind::Logreg,
        dag: parse(&src)?,
        src,
        env: Environment::new().with("X", x).with("w", w).with("l", l),
        wrt: "w".into(),
        n,
        k: 0,
    })
}

/// `sum((T - U V^T)^2)`, optionally masked element-wise by `O`; `T` is
/// `n x n` and the factors are `n x k`. Differentiated in `U`.
pub fn matfac(n: usize, k: usize, masked: bool, seed: u64) -> Result<Instance> {
    check_sizes(&[n, k])?;
    let body = if masked {
        "sum(elem_square(O .* (T - U * V')))"
    } else {
        "sum(elem_square(T - U * V'))"
    };
    let mut src = format!("var T : ij ({n},{n})\nvar U : ik ({n},{k})\nvar V : jk ({n},{k})\n");
    if masked {
        src += &format!("var O : ij ({n},{n})\n");
    }
    src += body;
    src.push('\n');
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::new()
        .with("T", normal(&mut rng, &[n, n], 1.0))
        .with("U", normal(&mut rng, &[n, k], 1.0))
        .with("V", normal(&mut rng, &[n, k], 1.0));
    if masked {
        let o = DenseTensor::from_fn(&[n, n], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        env.insert("O", o);
    }
    Ok(Instance {
        kind: ProblemKind::Matfac,
        dag: parse(&src)?,
        src,
        env,
        wrt: "U".into(),
        n,
        k,
    })
}

/// Program text of a `layers`-deep fully connected ReLU network on a batch
/// of `batch` rows, with a softmax cross-entropy loss against one-hot `Y`.
pub fn nn_source(layers: usize, width: usize, batch: usize) -> String {
    let mut src = format!("var X : bi ({batch},{width})\nvar Y : bi ({batch},{width})\n");
    for l in 1..=layers {
        src += &format!("var W{l} : ij ({width},{width})\nvar b{l} : j ({width})\n");
    }
    let mut h = "X".to_string();
    for l in 1..=layers {
        src += &format!("let Z{l} = {h} * W{l} + const(1.0; b; {batch}) * b{l}'\n");
        if l < layers {
            src += &format!("let H{l} = relu(Z{l})\n");
            h = format!("H{l}");
        }
    }
    src += &format!("sum(log(exp(Z{layers}) * const(1.0; j; {width}))) - sum(Y .* Z{layers})\n");
    src
}

/// The ReLU network differentiated in its input batch `X`. Data are redrawn
/// from derived seeds until every ReLU input is at least [`KINK_MARGIN`]
/// away from zero.
pub fn nn(layers: usize, width: usize, seed: u64) -> Result<Instance> {
    check_sizes(&[layers, width])?;
    let batch = 4;
    let src = nn_source(layers, width, batch);
    let dag = parse(&src)?;
    let kinks: Vec<NodeId> = dag
        .nodes()
        .filter_map(|(_, node)| match &node.kind {
            NodeKind::ElemUnary { op, child } if op == "relu" => Some(*child),
            _ => None,
        })
        .collect();
    for attempt in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let scale = 1.0 / (width as f64).sqrt();
        let mut env = Environment::new().with("X", normal(&mut rng, &[batch, width], 1.0));
        for l in 1..=layers {
            env.insert(format!("W{l}"), normal(&mut rng, &[width, width], scale));
            env.insert(format!("b{l}"), normal(&mut rng, &[width], 0.1));
        }
        let classes: Vec<usize> = (0..batch).map(|_| rng.random_range(0..width)).collect();
        env.insert(
            "Y",
            DenseTensor::from_fn(&[batch, width], |ix| f64::from(u8::from(classes[ix[0]] == ix[1]))),
        );
        let mut clear = true;
        for &z in &kinks {
            let v = evaluate_node(&dag, &env, z)?;
            if v.data().iter().any(|x| x.abs() < KINK_MARGIN) {
                clear = false;
                break;
            }
        }
        if clear {
            return Ok(Instance {
                kind: ProblemKind::Nn,
                src,
                dag,
                env,
                wrt: "X".into(),
                n: width,
                k: layers,
            });
        }
    }
    Err(Error::InvalidNode("could not draw data away from ReLU kinks".into()))
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.contains(&0) {
        return Err(Error::DimMismatch("benchmark sizes must be positive".into()));
    }
    Ok(())
}

/// Reachable nodes of rank at least `order` that are not unit tensors.
pub fn high_order_nodes(dag: &ExprDag, roots: &[NodeId], order: usize) -> Vec<NodeId> {
    dag.reachable(roots)
        .into_iter()
        .filter(|&id| dag.rank(id) >= order && !dag.kind(id).is_delta())
        .collect()
}

/// Evaluation FLOPs of a derivative's stored expression.
pub fn derivative_flops(r: &DerivativeResult) -> u64 {
    flop_report(&r.dag, &[r.root]).total()
}

/// The full Hessian of a matrix variable as an `(nk) x (nk)` row-major matrix.
fn hessian_matrix(h: &DerivativeResult, env: &Environment) -> Result<(Vec<f64>, usize)> {
    let t = evaluate_node(&h.dag, env, h.root)?;
    let half: usize = t.dims()[..t.rank() / 2].iter().product();
    Ok((t.into_data(), half))
}

/// Gradient of the objective, evaluated.
pub fn gradient(inst: &Instance) -> Result<DenseTensor> {
    let g = inst.derivative(&[Mode::Reverse])?;
    evaluate_node(&g.dag, &inst.env, g.root)
}

/// Newton step computed from the dense Hessian.
pub fn newton_dense(h: &DerivativeResult, env: &Environment, g: &DenseTensor) -> Result<DenseTensor> {
    let (a, n) = hessian_matrix(h, env)?;
    DenseTensor::new(g.dims().to_vec(), solve_dense(&a, n, g.data())?)
}

/// Newton step computed from a compressed Hessian.
pub fn newton_compressed(c: &DerivativeResult, env: &Environment, g: &DenseTensor) -> Result<DenseTensor> {
    let rec = c
        .compression
        .as_ref()
        .ok_or_else(|| Error::NotCompressible("result carries no compression record".into()))?;
    let core = evaluate_node(&c.dag, env, c.root)?;
    solve_compressed(&core, rec, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub problem: ProblemKind,
    pub n: usize,
    pub k: usize,
    pub mode: Mode,
    pub build_ms: f64,
    pub eval_flops: u64,
    pub eval_ms: f64,
    pub compressed: bool,
    pub solve_ms: Option<f64>,
}

impl Row {
    pub fn csv(&self) -> String {
        let solve = self.solve_ms.map(|s| format!("{s:.3}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.3},{},{:.3},{},{}",
            self.problem, self.n, self.k, self.mode, self.build_ms, self.eval_flops, self.eval_ms,
            self.compressed, solve
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub modes: Vec<Mode>,
    pub repeat: usize,
    /// Report zero for every wall-clock column.
    pub deterministic: bool,
}

fn best_ms<T>(repeat: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeat.max(1) {
        let t0 = Instant::now();
        let v = f()?;
        best = best.min(t0.elapsed().as_secs_f64() * 1e3);
        out = Some(v);
    }
    Ok((out.expect("at least one run"), best))
}

/// Hessian rows for every requested mode; matfac and nn add a compressed
/// row when the Hessian compresses, and matfac times both Newton solves.
pub fn run(inst: &Instance, opts: &BenchOptions) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let zero = |v: f64| if opts.deterministic { 0.0 } else { v };
    let grad = match inst.kind {
        ProblemKind::Matfac => Some(gradient(inst)?),
        _ => None,
    };
    for &mode in &opts.modes {
        let (h, build_ms) = best_ms(opts.repeat, || inst.hessian(mode))?;
        let (_, eval_ms) = best_ms(opts.repeat, || evaluate_node(&h.dag, &inst.env, h.root))?;
        let solve_ms = match &grad {
            Some(g) => Some(best_ms(opts.repeat, || newton_dense(&h, &inst.env, g))?.1),
            None => None,
        };
        rows.push(Row {
            problem: inst.kind,
            n: inst.n,
            k: inst.k,
            mode,
            build_ms: zero(build_ms),
            eval_flops: derivative_flops(&h),
            eval_ms: zero(eval_ms),
            compressed: false,
            solve_ms: solve_ms.map(zero),
        });
        if inst.kind == ProblemKind::Logreg {
            continue;
        }
        let c = match compress(&h) {
            Ok(c) => c,
            Err(Error::NotCompressible(_)) => continue,
            Err(e) => return Err(e),
        };
        let (_, c_eval_ms) = best_ms(opts.repeat, || evaluate_node(&c.dag, &inst.env, c.root))?;
        let solve_ms = match &grad {
            Some(g) => Some(best_ms(opts.repeat, || newton_compressed(&c, &inst.env, g))?.1),
            None => None,
        };
        rows.push(Row {
            problem: inst.kind,
            n: inst.n,
            k: inst.k,
            mode,
            build_ms: zero(build_ms),
            eval_flops: derivative_flops(&c),
            eval_ms: zero(c_eval_ms),
            compressed: true,
            solve_ms: solve_ms.map(zero),
        });
    }
    Ok(rows)
}

/// Default mode list per problem.
pub fn default_bench_modes(kind: ProblemKind) -> Vec<Mode> {
    match kind {
        ProblemKind::Matfac => vec![Mode::Cross],
        _ => vec![Mode::Reverse, Mode::Cross],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::expand;
    use crate::eval::{finite_difference, finite_difference_second};
    use crate::tensor::max_rel_diff;

    #[test]
    fn logreg_objective_matches_direct_sum() {
        let p = logreg(3, 7).unwrap();
        let (x, w, l) = (p.env.get("X").unwrap(), p.env.get("w").unwrap(), p.env.get("l").unwrap());
        let direct: f64 = (0..6)
            .map(|i| {
                let z: f64 = (0..3).map(|j| x.get(&[i, j]) * w.get(&[j])).sum();
                (-l.get(&[i]) * z).exp().ln_1p()
            })
            .sum();
        assert!((p.value().unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn masked_matfac_objective_matches_direct_sum() {
        let p = matfac(4, 2, true, 3).unwrap();
        let e = |n: &str| p.env.get(n).unwrap().clone();
        let (t, u, v, o) = (e("T"), e("U"), e("V"), e("O"));
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let uv: f64 = (0..2).map(|a| u.get(&[i, a]) * v.get(&[j, a])).sum();
                direct += (o.get(&[i, j]) * (t.get(&[i, j]) - uv)).powi(2);
            }
        }
        assert!((p.value().unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn nn_objective_matches_direct_forward_pass() {
        let p = nn(2, 3, 5).unwrap();
        let e = |n: &str| p.env.get(n).unwrap().clone();
        let (x, y) = (e("X"), e("Y"));
        let mut total = 0.0;
        for b in 0..4 {
            let mut h: Vec<f64> = (0..3).map(|i| x.get(&[b, i])).collect();
            for l in 1..=2 {
                let (w, bias) = (e(&format!("W{l}")), e(&format!("b{l}")));
                let z: Vec<f64> = (0..3)
                    .map(|j| (0..3).map(|i| h[i] * w.get(&[i, j])).sum::<f64>() + bias.get(&[j]))
                    .collect();
                assert!(l == 2 || z.iter().all(|v| v.abs() >= KINK_MARGIN));
                h = if l < 2 { z.iter().map(|v| v.max(0.0)).collect() } else { z };
            }
            let lse = h.iter().map(|v| v.exp()).sum::<f64>().ln();
            total += lse - (0..3).map(|j| y.get(&[b, j]) * h[j]).sum::<f64>();
        }
        assert!((p.value().unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = nn(2, 4, 11).unwrap();
        let b = nn(2, 4, 11).unwrap();
        for name in a.env.names() {
            assert_eq!(a.env.get(name).unwrap().data(), b.env.get(name).unwrap().data());
        }
        assert_ne!(
            logreg(4, 1).unwrap().env.get("X").unwrap().data(),
            logreg(4, 2).unwrap().env.get("X").unwrap().data()
        );
    }

    #[test]
    fn small_hessians_match_differences() {
        for p in [logreg(3, 1).unwrap(), matfac(3, 2, true, 1).unwrap(), nn(2, 3, 1).unwrap()] {
            let y = p.output();
            let g = p.derivative(&[Mode::Reverse]).unwrap();
            let fd = finite_difference(&p.dag, y, &p.wrt, &p.env, 1e-5).unwrap();
            let gv = evaluate_node(&g.dag, &p.env, g.root).unwrap();
            assert!(max_rel_diff(&gv, &fd.reshaped(gv.dims()).unwrap()) < 1e-6, "{}", p.kind);
            let h = p.hessian(Mode::Cross).unwrap();
            let fd2 = finite_difference_second(&p.dag, y, &p.wrt, &p.env, 1e-3).unwrap();
            let hv = evaluate_node(&h.dag, &p.env, h.root).unwrap();
            assert!(max_rel_diff(&hv, &fd2.reshaped(hv.dims()).unwrap()) < 1e-4, "{}", p.kind);
        }
    }

    #[test]
    fn compressed_newton_step_matches_dense() {
        let p = matfac(5, 2, false, 9).unwrap();
        let g = gradient(&p).unwrap();
        let h = p.hessian(Mode::Cross).unwrap();
        let c = compress(&h).unwrap();
        assert_eq!(c.index_set().dims(), vec![2, 2]);
        let e = expand(&c).unwrap();
        let full = evaluate_node(&e.dag, &p.env, e.root).unwrap();
        assert!(max_rel_diff(&full, &evaluate_node(&h.dag, &p.env, h.root).unwrap()) < 1e-12);
        let a = newton_dense(&h, &p.env, &g).unwrap();
        let b = newton_compressed(&c, &p.env, &g).unwrap();
        assert!(max_rel_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn deterministic_rows_are_reproducible() {
        let p = matfac(4, 2, false, 42).unwrap();
        let opts = BenchOptions {
            modes: vec![Mode::Reverse, Mode::Cross],
            repeat: 1,
            deterministic: true,
        };
        let a: Vec<String> = run(&p, &opts).unwrap().iter().map(Row::csv).collect();
        let b: Vec<String> = run(&p, &opts).unwrap().iter().map(Row::csv).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|r| r.contains(",true,")));
        assert!(a[0].starts_with("matfac,4,2,reverse,0.000,"));
    }

    #[test]
    fn random_env_binds_every_input() {
        let dag = parse("var A : ij (2,3)\nvar x : j (3)\nA * x").unwrap();
        let env = random_env(&dag, 4);
        assert_eq!(env.get("A").unwrap().dims(), &[2, 3]);
        assert_eq!(env.get("x").unwrap().data(), random_env(&dag, 4).get("x").unwrap().data());
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(logreg(0, 1).is_err());
        assert!(matfac(3, 0, false, 1).is_err());
    }
}
