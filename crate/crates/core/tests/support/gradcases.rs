//! Finite-difference checks of every differentiable op and of the full
//! model loss. Shared by the gradcheck and acceptance targets.

use msnmt::seq2seq::{ModelConfig, MultiEncoderModel};
use msnmt::tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Builds a scalar loss from the given inputs and compares analytic and
/// central-difference gradients for every input entry.
fn check(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let loss_at = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = f(&mut g, &vars);
    g.backward(l).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
            let err = rel_err(analytic[i], numeric);
            assert!(
                err < TOL || (analytic[i] - numeric).abs() < 1e-9,
                "{name}: input {k} entry {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }
}

/// Reduces any tensor to a scalar with fixed random weights so that every
/// output entry gets a distinct upstream gradient.
fn project(g: &mut Graph, x: Var) -> Var {
    let shape = g.shape(x).to_vec();
    let w = g.constant(rand_tensor(&shape, 999));
    let p = g.mul(x, w).unwrap();
    g.sum(p).unwrap()
}

pub fn matmul_ops() {
    check("matmul", vec![rand_tensor(&[2, 3], 1), rand_tensor(&[3, 4], 2)], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("matmul_t", vec![rand_tensor(&[2, 3], 3), rand_tensor(&[4, 3], 4)], |g, v| {
        let y = g.matmul_t(v[0], v[1]).unwrap();
        project(g, y)
    });
}

pub fn elementwise_ops() {
    let ab = || vec![rand_tensor(&[2, 3], 5), rand_tensor(&[2, 3], 6)];
    check("add", ab(), |g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("mul", ab(), |g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("add_row", vec![rand_tensor(&[3, 2], 7), rand_tensor(&[2], 8)], |g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("scale", vec![rand_tensor(&[4], 9)], |g, v| {
        let y = g.scale(v[0], -1.7).unwrap();
        project(g, y)
    });
    check("tanh", vec![rand_tensor(&[2, 2], 10)], |g, v| {
        let y = g.tanh(v[0]).unwrap();
        project(g, y)
    });
    check("sigmoid", vec![rand_tensor(&[2, 2], 11)], |g, v| {
        let y = g.sigmoid(v[0]).unwrap();
        project(g, y)
    });
}

pub fn shape_ops() {
    check("concat0", vec![rand_tensor(&[1, 3], 12), rand_tensor(&[2, 3], 13)], |g, v| {
        let y = g.concat(&[v[0], v[1]], 0).unwrap();
        project(g, y)
    });
    check("concat1", vec![rand_tensor(&[2, 1], 14), rand_tensor(&[2, 3], 15)], |g, v| {
        let y = g.concat(&[v[0], v[1]], 1).unwrap();
        project(g, y)
    });
    check("stack", vec![rand_tensor(&[2, 3], 16), rand_tensor(&[2, 3], 17)], |g, v| {
        let y = g.stack(&[v[0], v[1]], 1).unwrap();
        project(g, y)
    });
    check("slice", vec![rand_tensor(&[3, 4], 18)], |g, v| {
        let y = g.slice(v[0], 1, 1, 2).unwrap();
        project(g, y)
    });
}

pub fn softmax_and_losses() {
    check("softmax", vec![rand_tensor(&[2, 4], 19)], |g, v| {
        let y = g.softmax(v[0]).unwrap();
        project(g, y)
    });
    check("cross_entropy", vec![rand_tensor(&[5], 20)], |g, v| g.cross_entropy(v[0], 3).unwrap());
    check("cross_entropy_masked", vec![rand_tensor(&[3, 4], 21)], |g, v| {
        g.cross_entropy_masked(v[0], &[1, 0, 3], &[1.0, 0.0, 0.5]).unwrap()
    });
}

pub fn lookup_and_attention_ops() {
    check("lookup", vec![rand_tensor(&[4, 3], 22)], |g, v| {
        let y = g.lookup(v[0], 2).unwrap();
        project(g, y)
    });
    check("lookup_rows", vec![rand_tensor(&[4, 3], 23)], |g, v| {
        let y = g.lookup_rows(v[0], &[1, 3, 1]).unwrap();
        project(g, y)
    });
    check("batch_dot", vec![rand_tensor(&[2, 3, 4], 24), rand_tensor(&[2, 4], 25)], |g, v| {
        let y = g.batch_dot(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("weighted_sum", vec![rand_tensor(&[2, 3], 26), rand_tensor(&[2, 3, 4], 27)], |g, v| {
        let y = g.weighted_sum(v[0], v[1]).unwrap();
        project(g, y)
    });
    check("add_all", vec![rand_tensor(&[], 28), rand_tensor(&[], 29)], |g, v| g.add_all(&[v[0], v[1]]).unwrap());
}

pub fn full_model_loss() {
    let config = ModelConfig {
        source_vocab_sizes: vec![7, 7],
        target_vocab_size: 7,
        embed_dim: 4,
        d_lstm: 2,
    };
    let mut model = MultiEncoderModel::init(config, 5).unwrap();
    // larger weights give gradients well above the difference noise floor
    for p in model.params_mut() {
        for x in p.data_mut() {
            *x *= 5.0;
        }
    }
    let sources = vec![vec![vec![5, 6, 5], vec![6]], vec![vec![6, 5], vec![5, 5, 6]]];
    let targets = vec![vec![5, 6], vec![6, 6, 5]];
    let loss_of = |m: &MultiEncoderModel| {
        let mut g = Graph::new();
        let b = m.bind(&mut g, false);
        let l = m.batch_nll(&mut g, &b, &sources, &targets).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let l = model.batch_nll(&mut g, &bound, &sources, &targets).unwrap();
    g.backward(l).unwrap();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = bound
        .vars()
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();
    for (k, name) in names.iter().enumerate() {
        for i in 0..grads[k].len() {
            let mut plus = model.clone();
            plus.params_mut()[k].data_mut()[i] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[k].data_mut()[i] -= STEP;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
            let a = grads[k][i];
            if (a - numeric).abs() > 1e-7 {
                let e = rel_err(a, numeric);
                assert!(e < TOL, "{name}[{i}]: analytic {a} numeric {numeric}");
            }
        }
    }
}

/// Every case above, for runners that report them one by one.
#[allow(dead_code)]
pub fn all() -> Vec<(&'static str, fn())> {
    vec![
        ("matmul", matmul_ops),
        ("elementwise", elementwise_ops),
        ("shape", shape_ops),
        ("softmax and losses", softmax_and_losses),
        ("lookup and attention", lookup_and_attention_ops),
        ("full model", full_model_loss),
    ]
}
