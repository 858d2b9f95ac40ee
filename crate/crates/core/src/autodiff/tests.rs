use super::*;
use crate::eval::{evaluate_node, finite_difference, flop_report, Environment};
use crate::parser::parse;
use crate::tensor::{max_rel_diff, DenseTensor};

fn value(r: &DerivativeResult, env: &Environment) -> DenseTensor {
    let full = r.expanded().unwrap();
    evaluate_node(&full.dag, env, full.root).unwrap()
}

fn t(dims: &[usize], data: &[f64]) -> DenseTensor {
    DenseTensor::new(dims.to_vec(), data.to_vec()).unwrap()
}

fn all_modes(dag: &ExprDag, y: &str, x: &str, env: &Environment) -> Vec<DenseTensor> {
    [Mode::Forward, Mode::Reverse, Mode::Cross]
        .iter()
        .map(|&m| value(&differentiate(dag, y, x, m).unwrap(), env))
        .collect()
}

#[test]
fn gradient_of_squared_norm() {
    let dag = parse("var x : i (2)\neinsum(i,i->; x, x)").unwrap();
    let env = Environment::new().with("x", t(&[2], &[1.0, 2.0]));
    for v in all_modes(&dag, "y", "x", &env) {
        assert_eq!(v.data(), &[2.0, 4.0]);
    }
}

#[test]
fn jacobian_of_linear_map() {
    let dag = parse("var A : ij (2,2)\nvar x : j (2)\nA * x").unwrap();
    let env = Environment::new()
        .with("A", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]))
        .with("x", t(&[2], &[0.5, -1.0]));
    for v in all_modes(&dag, "y", "x", &env) {
        assert_eq!(v.dims(), &[2, 2]);
        assert_eq!(v.data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}

#[test]
fn elementwise_exp_is_diagonal() {
    let dag = parse("var x : i (2)\nexp(x)").unwrap();
    let env = Environment::new().with("x", t(&[2], &[0.0, 2f64.ln()]));
    let fd = finite_difference(&dag, dag.output("y").unwrap(), "x", &env, 1e-6).unwrap();
    for v in all_modes(&dag, "y", "x", &env) {
        assert!((v.data()[0] - 1.0).abs() < 1e-12 && (v.data()[3] - 2.0).abs() < 1e-12);
        assert_eq!(v.data()[1], 0.0);
        assert!(max_rel_diff(&v, &fd) < 1e-8);
    }
}

#[test]
fn softmax_jacobian_at_origin() {
    let dag = parse("var x : i (2)\nsoftmax(x)").unwrap();
    let env = Environment::new().with("x", t(&[2], &[0.0, 0.0]));
    let fd = finite_difference(&dag, dag.output("y").unwrap(), "x", &env, 1e-6).unwrap();
    // diag(p) - p p^T with p = [1/2, 1/2]
    let p = [0.5, 0.5];
    let analytic: Vec<f64> = (0..4)
        .map(|e| {
            let (a, b) = (e / 2, e % 2);
            (if a == b { p[a] } else { 0.0 }) - p[a] * p[b]
        })
        .collect();
    for v in all_modes(&dag, "y", "x", &env) {
        assert!(max_rel_diff(&v, &t(&[2, 2], &analytic)) < 1e-12);
        assert!(max_rel_diff(&v, &fd) < 1e-8);
    }
}

#[test]
fn pullback_of_summed_product_is_column_sums() {
    let dag = parse("var A : ij (2,2)\nvar x : j (2)\nsum(A * x)").unwrap();
    let a = [1.0, 2.0, 3.0, 4.0];
    let env = Environment::new()
        .with("A", t(&[2, 2], &a))
        .with("x", t(&[2], &[1.0, 1.0]));
    let grads = reverse_diff(&dag, "y").unwrap();
    let gx = value(&grads["x"], &env);
    // brute force: d/dx_j sum_i A_ij x_j
    let brute: Vec<f64> = (0..2).map(|j| (0..2).map(|i| a[i * 2 + j]).sum()).collect();
    assert_eq!(gx.data(), brute.as_slice());
}

#[test]
fn unreachable_variable_gets_zero() {
    let dag = parse("var x : i (3)\nvar z : j (2)\nx .* x").unwrap();
    let grads = reverse_diff(&dag, "y").unwrap();
    let env = Environment::new()
        .with("x", t(&[3], &[1.0, 2.0, 3.0]))
        .with("z", t(&[2], &[1.0, 1.0]));
    let gz = value(&grads["z"], &env);
    assert_eq!(gz.dims(), &[3, 2]);
    assert!(gz.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_output_pullback_uses_vjp_signature() {
    let mut dag = parse("var A : ij (2,3)\nvar x : j (3)\nvar w : i (2)\nw' * (A * x)").unwrap();
    let y = dag.output("y").unwrap();
    let bar = super::reverse::pullbacks(&mut dag, y).unwrap();
    let a = dag.variable_nodes("A")[0];
    match dag.kind(bar[&a]) {
        NodeKind::Einsum { s1, s2, s3, .. } => {
            // (s4 s3, s2, s4 s1) with s4 empty and the product A x as (ij, j, i)
            assert_eq!((s1.len(), s2.len(), s3.len()), (1, 1, 2));
            assert_eq!(s3[0], s1[0]);
            assert_eq!(s3[1], s2[0]);
        }
        k => panic!("{k:?}"),
    }
}

#[test]
fn logistic_gradient_matches_differences() {
    let src = "var X : ij (8,4)\nvar w : j (4)\nvar l : i (8)\nsum(log(exp(-(l .* (X*w))) + 1))";
    let dag = parse(src).unwrap();
    let env = Environment::new()
        .with("X", DenseTensor::from_fn(&[8, 4], |ix| ((ix[0] * 7 + ix[1] * 3) % 5) as f64 * 0.2 - 0.4))
        .with("w", t(&[4], &[0.3, -0.2, 0.1, 0.5]))
        .with("l", DenseTensor::from_fn(&[8], |ix| if ix[0] % 3 == 0 { -1.0 } else { 1.0 }));
    let fd = finite_difference(&dag, dag.output("y").unwrap(), "w", &env, 1e-5).unwrap();
    for v in all_modes(&dag, "y", "w", &env) {
        assert!(max_rel_diff(&v, &fd) < 1e-6);
    }
}

#[test]
fn chain_of_elementwise_maps_is_cheaper_cross_country() {
    let src = "var A : ij (3,3)\nvar B : ij (3,3)\nvar x : i (3)\nB * exp(log(A * x))";
    let dag = parse(src).unwrap();
    let env = Environment::new()
        .with("A", DenseTensor::from_fn(&[3, 3], |ix| 1.0 + (ix[0] + 2 * ix[1]) as f64 * 0.1))
        .with("B", DenseTensor::from_fn(&[3, 3], |ix| (ix[0] as f64) - 0.5 * ix[1] as f64))
        .with("x", t(&[3], &[0.5, 1.0, 1.5]));
    let cross = cross_country_diff(&dag, "y", "x").unwrap();
    let rev = differentiate(&dag, "y", "x", Mode::Reverse).unwrap();
    let fwd = differentiate(&dag, "y", "x", Mode::Forward).unwrap();
    let vc = value(&cross.result, &env);
    assert!(max_rel_diff(&vc, &value(&rev, &env)) < 1e-12);
    assert!(max_rel_diff(&vc, &value(&fwd, &env)) < 1e-12);
    let fc = cross.flops.total();
    let fr = flop_report(&rev.dag, &[rev.root]).total();
    assert!(fc < fr, "cross {fc} reverse {fr}");
    // the two element-wise factors meet first: exp'(.) .* log'(.) is a vector product
    let first = cross
        .result
        .dag
        .nodes()
        .find(|(_, n)| match &n.kind {
            NodeKind::Einsum { left, right, .. } => {
                let is_unary = |id: NodeId| {
                    matches!(cross.result.dag.kind(id), NodeKind::ElemUnary { .. })
                };
                is_unary(*left) && is_unary(*right)
            }
            _ => false,
        })
        .expect("element-wise derivatives are multiplied together");
    assert_eq!(first.1.rank(), 1);
}

#[test]
fn hessian_of_quadratic_form() {
    let dag = parse("var A : ij (2,2)\nvar x : i (2)\nx' * (A * x)").unwrap();
    let env = Environment::new()
        .with("A", t(&[2, 2], &[2.0, 1.0, 1.0, 2.0]))
        .with("x", t(&[2], &[0.3, -0.7]));
    for modes in [
        vec![Mode::Reverse, Mode::Cross],
        vec![Mode::Reverse, Mode::Reverse],
        vec![Mode::Forward, Mode::Forward],
        vec![Mode::Cross, Mode::Forward],
    ] {
        let h = higher_order(&dag, "y", "x", 2, &modes).unwrap();
        assert_eq!(h.order, 2);
        assert_eq!(value(&h, &env).data(), &[4.0, 2.0, 2.0, 4.0], "{modes:?}");
    }
}

#[test]
fn matfac_hessian_compresses_to_gram_matrix() {
    let (n, m, k) = (6, 4, 2);
    let src = format!(
        "var T : ij ({n},{m})\nvar U : ik ({n},{k})\nvar V : jk ({m},{k})\nsum(elem_square(T - U * V'))"
    );
    let dag = parse(&src).unwrap();
    let v = DenseTensor::from_fn(&[m, k], |ix| (ix[0] as f64 + 1.0) * 0.3 - ix[1] as f64 * 0.5);
    let env = Environment::new()
        .with("T", DenseTensor::from_fn(&[n, m], |ix| ((ix[0] * 5 + ix[1]) % 7) as f64 * 0.1))
        .with("U", DenseTensor::from_fn(&[n, k], |ix| (ix[0] as f64 - 2.0) * 0.2 + ix[1] as f64))
        .with("V", v.clone());
    let h = higher_order(&dag, "y", "U", 2, &[]).unwrap();
    let c = compress(&h).unwrap();
    let rec = c.compression.clone().unwrap();
    assert_eq!(c.index_set().dims(), vec![k, k]);
    let core = evaluate_node(&c.dag, &env, c.root).unwrap();
    // 2 V^T V by loops
    let gram = DenseTensor::from_fn(&[k, k], |ix| {
        2.0 * (0..m).map(|j| v.get(&[j, ix[0]]) * v.get(&[j, ix[1]])).sum::<f64>()
    });
    assert!(max_rel_diff(&core, &gram) < 1e-12);
    assert_eq!(rec.delta_dims, vec![n]);
    let full = value(&h, &env);
    assert_eq!(full.dims(), &[n, k, n, k]);
    assert!(max_rel_diff(&value(&c, &env), &full) < 1e-12);
}

#[test]
fn gradient_is_not_compressible() {
    let dag = parse("var x : i (3)\nsum(exp(x))").unwrap();
    let g = differentiate(&dag, "y", "x", Mode::Cross).unwrap();
    assert!(matches!(compress(&g), Err(Error::NotCompressible(_))));
}

#[test]
fn cut_formula_matches_reverse_mode() {
    let mut dag = parse("var x : i (3)\nvar A : ij (3,3)\nlet h = exp(A * x)\nsum(h .* h)").unwrap();
    let y = dag.output("y").unwrap();
    let h = dag
        .nodes()
        .find(|(_, n)| matches!(&n.kind, NodeKind::ElemUnary { op, .. } if op == "exp"))
        .map(|(id, _)| id)
        .unwrap();
    let env = Environment::new()
        .with("x", t(&[3], &[0.1, 0.2, -0.3]))
        .with("A", DenseTensor::from_fn(&[3, 3], |ix| (ix[0] + ix[1]) as f64 * 0.1));
    let via_cut = cut_diff(&dag, "y", "x", &Cut { nodes: vec![h] }).unwrap();
    let rev = differentiate(&dag, "y", "x", Mode::Reverse).unwrap();
    assert!(max_rel_diff(&value(&via_cut, &env), &value(&rev, &env)) < 1e-12);
    // the output alone is a cut; the variable plus a downstream node is not
    assert!(validate_cut(&dag, "y", "x", &Cut { nodes: vec![y] }).is_ok());
    let x = dag.variable_nodes("x")[0];
    assert!(validate_cut(&dag, "y", "x", &Cut { nodes: vec![x, h] }).is_err());
    assert!(validate_cut(&dag, "y", "x", &Cut { nodes: vec![] }).is_err());
    dag.set_output("y", y);
}

#[test]
fn unknown_names_are_reported() {
    let dag = parse("var x : i (2)\nexp(x)").unwrap();
    assert!(matches!(forward_diff(&dag, "q"), Err(Error::UnknownVariable(_))));
    assert!(matches!(reverse_diff(&dag, "nope"), Err(Error::UnknownOutput(_))));
}
