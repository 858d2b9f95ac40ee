//! Seeded random DAGs and environments shared by the integration tests.
#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensorcalc::index::IndexSet;
use tensorcalc::{DenseTensor, Environment, ExprDag, NodeId};

pub const LETTERS: [&str; 12] = ["a", "b", "c", "d", "e", "f", "g", "h", "p", "q", "r", "t"];

pub struct RandomDag {
    pub dag: ExprDag,
    pub env: Environment,
    pub wrt: String,
}

#[derive(Clone, Copy)]
pub struct Options {
    /// Upper bound on the number of nodes reachable from the output.
    pub max_nodes: usize,
    pub max_dim: usize,
    /// Allow constant tensors, unit tensors and scalars as extra leaves.
    pub constants: bool,
    /// Force a scalar output by summing the last node.
    pub scalar: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_nodes: 20,
            max_dim: 4,
            constants: true,
            scalar: false,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> DenseTensor {
    DenseTensor::from_fn(dims, |_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn shape(labels: &[&str], dims: &[usize]) -> IndexSet {
    IndexSet::from_parts(labels, dims).unwrap()
}

fn random_dims(rng: &mut ChaCha8Rng, rank: usize, max_dim: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max_dim)).collect()
}

/// A random einsum of `a` and `b`: right-hand axes reuse a left label of the
/// same extent with probability one half; the output keeps a random subset.
fn random_einsum(dag: &mut ExprDag, rng: &mut ChaCha8Rng, a: NodeId, b: NodeId) -> Option<NodeId> {
    let (da, db) = (dag.shape(a).dims(), dag.shape(b).dims());
    let mut next = 0;
    let mut s1 = Vec::new();
    for _ in &da {
        s1.push(LETTERS[next]);
        next += 1;
    }
    let mut s2 = Vec::new();
    for &d in &db {
        let reuse: Vec<usize> = (0..da.len())
            .filter(|&p| da[p] == d && !s2.contains(&s1[p]))
            .collect();
        if !reuse.is_empty() && rng.random_bool(0.5) {
            s2.push(s1[*reuse.choose(rng).unwrap()]);
        } else {
            s2.push(LETTERS[next]);
            next += 1;
        }
    }
    let mut union: Vec<&str> = s1.clone();
    for l in &s2 {
        if !union.contains(l) {
            union.push(l);
        }
    }
    union.shuffle(rng);
    let s3: Vec<&str> = union.into_iter().filter(|_| rng.random_bool(0.55)).take(3).collect();
    dag.einsum(a, &s1, b, &s2, &s3).ok()
}

fn random_leaf(dag: &mut ExprDag, rng: &mut ChaCha8Rng, max_dim: usize) -> NodeId {
    match rng.random_range(0..3) {
        0 => dag.scalar((rng.random_range(-20..=20) as f64) / 8.0),
        1 => {
            let rank = rng.random_range(1..=2);
            let dims = random_dims(rng, rank, max_dim);
            let t = normal_tensor(rng, &dims, 1.0);
            dag.tensor(shape(&LETTERS[..rank], &dims), t).unwrap()
        }
        _ => {
            let d = rng.random_range(1..=max_dim);
            dag.delta(shape(&["a"], &[d]), shape(&["b"], &[d])).unwrap()
        }
    }
}

/// Random DAG whose single output `y` depends on at least one variable.
pub fn random_dag(seed: u64, opts: Options) -> RandomDag {
    let mut rng = rng(seed);
    loop {
        let mut dag = ExprDag::new();
        let mut pool = Vec::new();
        let nvars = rng.random_range(1..=3);
        let mut names = Vec::new();
        for v in 0..nvars {
            let rank = rng.random_range(0..=2);
            let dims = random_dims(&mut rng, rank, opts.max_dim);
            let name = format!("x{v}");
            pool.push(dag.variable(&name, shape(&LETTERS[..rank], &dims)).unwrap());
            names.push(name);
        }
        let mut last = pool[pool.len() - 1];
        let steps = rng.random_range(2..=opts.max_nodes / 2);
        for _ in 0..steps {
            let a = *pool.choose(&mut rng).unwrap();
            let made = match rng.random_range(0..10) {
                0..=3 => {
                    let b = if opts.constants && rng.random_bool(0.2) {
                        random_leaf(&mut dag, &mut rng, opts.max_dim)
                    } else {
                        *pool.choose(&mut rng).unwrap()
                    };
                    random_einsum(&mut dag, &mut rng, a, b)
                }
                4 | 5 => {
                    let dims = dag.shape(a).dims();
                    let same: Vec<NodeId> = pool
                        .iter()
                        .copied()
                        .filter(|&b| dag.shape(b).dims() == dims)
                        .collect();
                    let b = *same.choose(&mut rng).unwrap();
                    dag.add(a, b).ok()
                }
                6 => dag.elem("exp", a).ok(),
                7 => {
                    // log(a^2 + 1) stays finite and smooth
                    let sq = dag.elem("elem_square", a).unwrap();
                    let one = dag.filled(dag.shape(a).clone(), 1.0);
                    let s = dag.add(sq, one).unwrap();
                    dag.elem("log", s).ok()
                }
                8 => {
                    let e = dag.elem("exp", a).unwrap();
                    let one = dag.filled(dag.shape(a).clone(), 1.0);
                    let s = dag.add(e, one).unwrap();
                    dag.elem("elem_inverse", s).ok()
                }
                _ => {
                    if dag.rank(a) == 1 {
                        dag.gen_unary("softmax", a).ok()
                    } else {
                        dag.elem("elem_square", a).ok()
                    }
                }
            };
            if let Some(id) = made {
                if dag.reachable(&[id]).len() > opts.max_nodes {
                    break;
                }
                pool.push(id);
                last = id;
            }
        }
        if opts.scalar && dag.rank(last) > 0 {
            last = dag.sum_all(last).unwrap();
        }
        let live = dag.reachable(&[last]);
        let used: Vec<String> = names
            .iter()
            .filter(|n| live.iter().any(|&id| dag.variable_nodes(n).contains(&id)))
            .cloned()
            .collect();
        if used.is_empty() || live.len() > opts.max_nodes + 1 {
            continue;
        }
        dag.set_output("y", last);
        let mut env = Environment::new();
        for (name, s) in dag.inputs() {
            env.insert(name.clone(), normal_tensor(&mut rng, &s.dims(), 0.7));
        }
        let wrt = used.choose(&mut rng).unwrap().clone();
        return RandomDag { dag, env, wrt };
    }
}

/// Swap the two derivative index groups of a Hessian of a scalar.
pub fn swap_groups(h: &DenseTensor) -> DenseTensor {
    let r = h.rank() / 2;
    let perm: Vec<usize> = (r..2 * r).chain(0..r).collect();
    h.permuted(&perm)
}
