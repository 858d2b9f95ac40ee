mod common;

use common::{random_dag, swap_groups, Options};
use proptest::prelude::*;

use tensorcalc::autodiff::{compress, differentiate, expand, higher_order, Mode};
use tensorcalc::eval::{evaluate_node, finite_difference, tensor_norm};
use tensorcalc::json::{dag_from_json, dag_to_json};
use tensorcalc::parser::{parse, print_expr};
use tensorcalc::simplify::simplify;
use tensorcalc::tensor::max_rel_diff;
use tensorcalc::{DenseTensor, Environment};

fn value(dag: &tensorcalc::ExprDag, env: &Environment) -> DenseTensor {
    evaluate_node(dag, env, dag.output("y").unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplify_preserves_values(seed in any::<u64>()) {
        let r = random_dag(seed, Options::default());
        let s = simplify(&r.dag);
        prop_assert!(max_rel_diff(&value(&r.dag, &r.env), &value(&s, &r.env)) <= 1e-12);
        prop_assert!(s.reachable(&[s.output("y").unwrap()]).len() <= r.dag.reachable(&[r.dag.output("y").unwrap()]).len());
        prop_assert!(simplify(&s).structurally_equal(&s));
    }

    #[test]
    fn modes_agree(seed in any::<u64>()) {
        let r = random_dag(seed, Options::default());
        let vals: Vec<DenseTensor> = [Mode::Forward, Mode::Reverse, Mode::Cross]
            .iter()
            .map(|&m| {
                let d = differentiate(&r.dag, "y", &r.wrt, m).unwrap();
                evaluate_node(&d.dag, &r.env, d.root).unwrap()
            })
            .collect();
        prop_assert!(max_rel_diff(&vals[0], &vals[1]) <= 1e-10);
        prop_assert!(max_rel_diff(&vals[0], &vals[2]) <= 1e-10);
    }

    #[test]
    fn derivative_shape_is_output_then_variable(seed in any::<u64>(), order in 1usize..=2) {
        let r = random_dag(seed, Options { max_nodes: 10, ..Options::default() });
        let h = higher_order(&r.dag, "y", &r.wrt, order, &[]).unwrap();
        let y = r.dag.shape(r.dag.output("y").unwrap()).dims();
        let x = r.dag.input_shape(&r.wrt).unwrap().dims();
        let mut want = y;
        for _ in 0..order {
            want.extend_from_slice(&x);
        }
        prop_assert_eq!(h.full_dims(), want);
    }

    #[test]
    fn hessians_of_scalars_are_symmetric(seed in any::<u64>()) {
        let r = random_dag(seed, Options { max_nodes: 12, scalar: true, ..Options::default() });
        let h = higher_order(&r.dag, "y", &r.wrt, 2, &[]).unwrap();
        let v = evaluate_node(&h.dag, &r.env, h.root).unwrap();
        prop_assert!(max_rel_diff(&v, &swap_groups(&v)) <= 1e-10);
    }

    #[test]
    fn compression_is_sound(seed in any::<u64>()) {
        let r = random_dag(seed, Options { max_nodes: 12, scalar: true, ..Options::default() });
        let h = higher_order(&r.dag, "y", &r.wrt, 2, &[]).unwrap();
        if let Ok(c) = compress(&h) {
            let e = expand(&c).unwrap();
            let full = evaluate_node(&h.dag, &r.env, h.root).unwrap();
            prop_assert!(max_rel_diff(&evaluate_node(&e.dag, &r.env, e.root).unwrap(), &full) <= 1e-10);
        }
    }

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let r = random_dag(seed, Options::default());
        let text = print_expr(&r.dag);
        let back = parse(&text).unwrap();
        prop_assert!(r.dag.compacted().structurally_equal(&back.compacted()), "{}", text);
        prop_assert_eq!(print_expr(&back), text);
    }

    #[test]
    fn json_round_trip_is_exact(seed in any::<u64>()) {
        let r = random_dag(seed, Options::default());
        let text = dag_to_json(&r.dag, None);
        let (back, _) = dag_from_json(&text).unwrap();
        prop_assert!(r.dag.compacted().structurally_equal(&back));
        prop_assert_eq!(dag_to_json(&back, None), text);
    }

    #[test]
    fn binary_tensors_round_trip(dims in proptest::collection::vec(1usize..4, 0..4), bits in proptest::collection::vec(any::<u64>(), 81)) {
        let n: usize = dims.iter().product();
        let t = DenseTensor::new(dims.clone(), bits[..n].iter().map(|b| f64::from_bits(*b)).collect()).unwrap();
        let back = DenseTensor::from_bytes(&t.to_bytes()).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        let raw = |t: &DenseTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(raw(&back), raw(&t));
    }
}

/// The linearization remainder shrinks at least linearly in the step.
#[test]
fn frechet_remainder_vanishes() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let r = random_dag(seed, Options { max_nodes: 10, ..Options::default() });
        let d = differentiate(&r.dag, "y", &r.wrt, Mode::Reverse).unwrap();
        let jac = evaluate_node(&d.dag, &r.env, d.root).unwrap();
        let x0 = r.env.get(&r.wrt).unwrap().clone();
        let dir = common::normal_tensor(&mut common::rng(seed + 1000), x0.dims(), 1.0);
        let f0 = value(&r.dag, &r.env);
        let ny = f0.len();
        let remainder = |h: f64| {
            let mut env = r.env.clone();
            let step = dir.map(|v| v * h);
            *env.get_mut(&r.wrt).unwrap() = x0.zip_with(&step, |a, b| a + b).unwrap();
            let f1 = value(&r.dag, &env);
            let nx = x0.len();
            let lin = DenseTensor::from_fn(&[ny], |ix| {
                (0..nx).map(|e| jac.data()[ix[0] * nx + e] * step.data()[e]).sum()
            });
            let diff = DenseTensor::from_fn(&[ny], |ix| f1.data()[ix[0]] - f0.data()[ix[0]] - lin.data()[ix[0]]);
            tensor_norm(&diff) / tensor_norm(&step)
        };
        let (r2, r3) = (remainder(1e-2), remainder(1e-3));
        if r2 < 1e-9 {
            continue;
        }
        checked += 1;
        assert!(r3 < r2 * 0.2, "seed {seed}: remainder {r2:e} -> {r3:e}");
    }
    assert!(checked > 10);
}

/// Gradients of random scalar DAGs agree with central differences.
#[test]
fn gradients_match_differences() {
    for seed in 0..60u64 {
        let r = random_dag(seed, Options { max_nodes: 12, scalar: true, ..Options::default() });
        let d = differentiate(&r.dag, "y", &r.wrt, Mode::Cross).unwrap();
        let v = evaluate_node(&d.dag, &r.env, d.root).unwrap();
        let fd = finite_difference(&r.dag, r.dag.output("y").unwrap(), &r.wrt, &r.env, 1e-5).unwrap();
        let err = max_rel_diff(&v, &fd.reshaped(v.dims()).unwrap());
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}
