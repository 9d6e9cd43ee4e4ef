mod common;

use common::{analytic_grads, max_graph_error, parameter_gradient_error, random_array, small_config, GRAD_TOL};
use hazardcast::models::{Architecture, Model, ModelConfig};
use hazardcast::ndgrad::{Array, Graph, Var};
use hazardcast::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 100;

/// Contracts `x` against a fixed random weight so every output entry feeds
/// the scalar with a different coefficient.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random_array(&mut rng, r, c, 1.0));
    let prod = g.mul(x, w)?;
    Ok(g.sum_all(prod))
}

fn check_op(name: &str, shapes: &[[usize; 2]], scale: f64, build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Array> = shapes.iter().map(|&[r, c]| random_array(&mut rng, r, c, scale)).collect();
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let y = build(g, v)?;
            weighted_sum(g, y, seed)
        };
        worst = worst.max(max_graph_error(&inputs, &f));
    }
    assert!(worst <= GRAD_TOL, "{name}: worst relative error {worst:e}");
}

#[test]
fn matmul_gradients() {
    check_op("matmul", &[[3, 4], [4, 2]], 1.0, |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn broadcast_add_sub_mul_gradients() {
    check_op("add row", &[[3, 4], [1, 4]], 1.0, |g, v| g.add(v[0], v[1]));
    check_op("sub col", &[[3, 4], [3, 1]], 1.0, |g, v| g.sub(v[0], v[1]));
    check_op("mul same", &[[3, 4], [3, 4]], 1.0, |g, v| g.mul(v[0], v[1]));
    check_op("mul scalar", &[[3, 4], [1, 1]], 1.0, |g, v| g.mul(v[0], v[1]));
}

#[test]
fn pointwise_gradients() {
    check_op("tanh", &[[3, 3]], 2.0, |g, v| Ok(g.tanh(v[0])));
    check_op("sigmoid", &[[3, 3]], 3.0, |g, v| Ok(g.sigmoid(v[0])));
    check_op("exp", &[[3, 3]], 2.0, |g, v| Ok(g.exp(v[0])));
    check_op("log", &[[3, 3]], 1.0, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        let pos = g.shift(sq, 0.5);
        Ok(g.log(pos))
    });
    check_op("powf", &[[3, 3]], 1.0, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        let pos = g.shift(sq, 0.1);
        Ok(g.powf(pos, -0.5))
    });
}

#[test]
fn softmax_gradients() {
    check_op("softmax rows", &[[3, 5]], 2.0, |g, v| g.softmax(v[0], 1));
    check_op("softmax cols", &[[4, 2]], 2.0, |g, v| g.softmax(v[0], 0));
}

#[test]
fn structural_gradients() {
    check_op("concat cols", &[[2, 3], [2, 1]], 1.0, |g, v| g.concat(&[v[0], v[1], v[0]], 1));
    check_op("concat rows", &[[2, 3], [1, 3]], 1.0, |g, v| g.concat(&[v[1], v[0]], 0));
    check_op("slice", &[[4, 5]], 1.0, |g, v| {
        let a = g.slice(v[0], 0, 1, 2)?;
        g.slice(a, 1, 2, 3)
    });
    check_op("sum", &[[3, 4]], 1.0, |g, v| g.sum(v[0], 0));
    check_op("mean", &[[3, 4]], 1.0, |g, v| g.mean(v[0], 1));
    check_op("transpose", &[[3, 2]], 1.0, |g, v| Ok(g.transpose(v[0])));
}

#[test]
fn random_five_parameter_graph() {
    // five scalar parameters, shared subexpressions
    check_op("composite", &[[1, 1]; 5], 1.0, |g, v| {
        let ab = g.mul(v[0], v[1])?;
        let t = g.tanh(ab);
        let c = g.sigmoid(v[2]);
        let tc = g.add(t, c)?;
        let e = g.exp(v[3]);
        let mixed = g.mul(tc, e)?;
        let parts = g.concat(&[mixed, v[4], t], 1)?;
        let s = g.softmax(parts, 1)?;
        let d = g.mul(s, parts)?;
        g.sum(d, 1)
    });
}

#[test]
fn layer_norm_composite() {
    check_op("layer norm", &[[4, 6], [1, 6]], 1.0, |g, v| {
        let mean = g.mean(v[0], 1)?;
        let centered = g.sub(v[0], mean)?;
        let sq = g.mul(centered, centered)?;
        let var = g.mean(sq, 1)?;
        let var = g.shift(var, 1e-5);
        let inv = g.powf(var, -0.5);
        let normed = g.mul(centered, inv)?;
        g.mul(normed, v[1])
    });
}

#[test]
fn lstm_end_to_end_gradients() {
    let worst = parameter_gradient_error(Architecture::Lstm);
    assert!(worst <= GRAD_TOL, "worst {worst:e}");
}

#[test]
fn bilstm_end_to_end_gradients() {
    let worst = parameter_gradient_error(Architecture::BiLstm);
    assert!(worst <= GRAD_TOL, "worst {worst:e}");
}

#[test]
fn transformer_end_to_end_gradients() {
    let worst = parameter_gradient_error(Architecture::Transformer);
    assert!(worst <= GRAD_TOL, "worst {worst:e}");
}

#[test]
fn lstm_final_state_gradients() {
    // d(Σ h_L)/d(weights) on a standalone cell
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![
        random_array(&mut rng, 6, 2, 1.0),
        random_array(&mut rng, 2, 12, 0.7),
        random_array(&mut rng, 3, 12, 0.7),
        random_array(&mut rng, 1, 12, 0.5),
    ];
    let build = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let cfg = {
            let mut c = ModelConfig::new(Architecture::Lstm, 2);
            c.hidden_size = 3;
            c
        };
        let model = Model::new(cfg)?;
        // the store's first three slots are the cell weights; point them at
        // the graph inputs
        let steps: Vec<Var> = (0..g.shape(v[0])[0])
            .map(|t| g.slice(v[0], 0, t, 1))
            .collect::<Result<_>>()?;
        let mut bound = model.params.bind(g, false);
        bound.vars[0] = v[1];
        bound.vars[1] = v[2];
        bound.vars[2] = v[3];
        let hs = hazardcast::models::lstm_forward(g, &bound, "lstm", &steps)?;
        Ok(g.sum_all(*hs.last().unwrap()))
    };
    let worst = max_graph_error(&inputs, &build);
    assert!(worst <= GRAD_TOL, "worst {worst:e}");
}

#[test]
fn transformer_pooled_output_wrt_input() {
    let cfg = small_config(Architecture::Transformer, 4);
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = random_array(&mut rng, 8, 4, 1.0);
    let build = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let p = model.params.bind(g, false);
        let enc = hazardcast::models::transformer_forward(g, &p, &cfg.transformer, v[0])?;
        weighted_sum(g, enc.pooled, 3)
    };
    let worst = max_graph_error(&[input], &build);
    assert!(worst <= GRAD_TOL, "worst {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random_array(&mut rng, 3, 3, 1.0), random_array(&mut rng, 3, 3, 1.0)];
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let m = g.matmul(v[0], v[1])?;
            let t = g.tanh(m);
            Ok(g.sum_all(t))
        };
        let h = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let s = g.softmax(v[0], 1)?;
            let p = g.mul(s, v[1])?;
            Ok(g.sum_all(p))
        };
        let combined = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let a = f(g, v)?;
            let b = h(g, v)?;
            let a = g.scale(a, alpha);
            let b = g.scale(b, beta);
            g.add(a, b)
        };
        let gf = analytic_grads(&inputs, &f);
        let gh = analytic_grads(&inputs, &h);
        let gc = analytic_grads(&inputs, &combined);
        for i in 0..2 {
            for k in 0..9 {
                let expect = alpha * gf[i].data()[k] + beta * gh[i].data()[k];
                prop_assert!((gc[i].data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
