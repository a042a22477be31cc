mod common;

use common::{objective_errors, op_errors, probe, rel_err, GRAD_TOL};
use proptest::prelude::*;
use zslc::tensor::{Graph, RngStream, Tensor};

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..3 {
        for (name, err) in op_errors(seed) {
            assert!(err < GRAD_TOL, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn every_objective_matches_central_differences() {
    for seed in 0..2 {
        for (name, err) in objective_errors(seed) {
            assert!(err < GRAD_TOL, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn softmax_cross_entropy_gradient_is_softmax_minus_one_hot() {
    let g = Graph::new();
    let logits = g.variable(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.4]).unwrap();
    let labels = [2, 0];
    let grad = g.backward(&logits.softmax_cross_entropy(&labels).unwrap(), &[&logits]).unwrap().remove(0);
    let v = logits.values();
    let mut expected = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let row = &v[3 * i..3 * i + 3];
        let z: f64 = row.iter().map(|a| a.exp()).sum();
        expected.extend(row.iter().enumerate().map(|(j, a)| (a.exp() / z - (j == y) as u8 as f64) / 2.0));
    }
    assert!(rel_err(grad.values(), &expected) < 1e-12);
}

#[test]
fn unreachable_inputs_get_zero_gradient() {
    let g = Graph::new();
    let x = g.variable(vec![2], vec![1.0, 2.0]).unwrap();
    let w = g.variable(vec![2], vec![3.0, 4.0]).unwrap();
    let grads = g.backward(&x.square().sum(), &[&x, &w]).unwrap();
    assert_eq!(grads[0].values(), &[2.0, 4.0]);
    assert_eq!(grads[1].values(), &[0.0, 0.0]);
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, x in values(6), w in values(6)) {
        let g = Graph::new();
        let xt = g.variable(vec![2, 3], x).unwrap();
        let wt = g.variable(vec![3, 2], w).unwrap();
        let l1 = probe(&xt.matmul(&wt).unwrap().leaky_relu(0.2));
        let l2 = xt.square().sum();
        let grad = |l: &Tensor| g.backward(l, &[&xt, &wt]).unwrap();
        let combined = grad(&l1.scale(a).add(&l2.scale(b)).unwrap());
        let (g1, g2) = (grad(&l1), grad(&l2));
        for k in 0..2 {
            let expected: Vec<f64> = g1[k].values().iter().zip(g2[k].values()).map(|(p, q)| a * p + b * q).collect();
            for (c, e) in combined[k].values().iter().zip(&expected) {
                prop_assert!((c - e).abs() <= 1e-12 * (1.0 + e.abs()));
            }
        }
    }

    #[test]
    fn input_gradient_of_linear_map_is_its_weights(x in values(8), w in values(4), bias in -1.0f64..1.0) {
        let g = Graph::new();
        let xt = g.variable(vec![2, 4], x).unwrap();
        let wt = g.constant(vec![4, 1], w.clone()).unwrap();
        let bt = g.constant(vec![1], vec![bias]).unwrap();
        let score = xt.affine(&wt, &bt).unwrap();
        let gx = g.input_gradient(&score.reshape(&[2]).unwrap(), &xt).unwrap();
        prop_assert_eq!(gx.values(), &[w.clone(), w].concat()[..]);
    }

    #[test]
    fn identical_seeds_give_identical_values(seed in any::<u64>()) {
        let run = || {
            let g = Graph::new();
            let mut rng = RngStream::new(seed, "prop");
            let x = rng.sample_gaussian(&g, &[3, 4]);
            let w = g.variable_matrix(&rng.gaussian_matrix(4, 2));
            let loss = x.matmul(&w).unwrap().relu().square().mean().unwrap();
            let grad = g.backward(&loss, &[&w]).unwrap().remove(0);
            (loss.item().to_bits(), grad.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
