#![allow(dead_code)]

use zslc::losses::{
    adversarial_loss, classification_loss, generator_objective, inference_objective, interpolate_with, joint_critic_value,
    joint_max_loss, total_objective, wgan_critic_value,
};
use zslc::nn::{
    build_classifier, build_critic, build_generator, build_inference, forward_generator, forward_inference, BoundMlp, MlpModel,
    NetConfig,
};
use zslc::ot::{alignment_loss, SinkhornOptions};
use zslc::tensor::{Graph, Matrix, RngStream, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a floor so that two zero vectors agree.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-10)
}

pub type Input = (Vec<usize>, Vec<f64>);

/// Largest relative error between the backward-pass gradient of `f` and
/// central differences, over every input.
pub fn tensor_grad_error(inputs: &[Input], f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let eval = |vals: &[Input]| {
        let g = Graph::new();
        let ts: Vec<Tensor> = vals.iter().map(|(s, v)| g.variable(s.clone(), v.clone()).unwrap()).collect();
        (g, ts)
    };
    let (g, ts) = eval(inputs);
    let loss = f(&ts);
    let refs: Vec<&Tensor> = ts.iter().collect();
    let grads = g.backward(&loss, &refs).unwrap();
    let mut worst: f64 = 0.0;
    for (k, (_, v)) in inputs.iter().enumerate() {
        let numeric: Vec<f64> = (0..v.len())
            .map(|i| {
                let mut plus = inputs.to_vec();
                plus[k].1[i] += FD_STEP;
                let mut minus = inputs.to_vec();
                minus[k].1[i] -= FD_STEP;
                (f(&eval(&plus).1).item() - f(&eval(&minus).1).item()) / (2.0 * FD_STEP)
            })
            .collect();
        assert!(grads[k].values().iter().any(|&v| v != 0.0), "vacuous check: gradient of input {k} is zero");
        worst = worst.max(rel_err(grads[k].values(), &numeric));
    }
    worst
}

fn perturb(models: &[MlpModel], m: usize, flat: usize, delta: f64) -> Vec<MlpModel> {
    let mut out = models.to_vec();
    let mut k = flat;
    for layer in out[m].layers_mut() {
        let nw = layer.weight.data().len();
        if k < nw {
            layer.weight.data_mut()[k] += delta;
            return out;
        }
        k -= nw;
        if k < layer.bias.len() {
            layer.bias[k] += delta;
            return out;
        }
        k -= layer.bias.len();
    }
    panic!("parameter index out of range");
}

/// Largest relative error between analytic parameter gradients and central
/// differences, over the models listed in `wrt`. `f` returns the tensor that
/// is differentiated and the scalar whose central differences it must match.
pub fn model_grad_error(models: &[MlpModel], wrt: &[usize], f: &dyn Fn(&Graph, &[BoundMlp]) -> (Tensor, f64)) -> f64 {
    let g = Graph::new();
    let bound: Vec<BoundMlp> = models.iter().map(|m| m.bind(&g, true)).collect();
    let (loss, _) = f(&g, &bound);
    let value = |ms: Vec<MlpModel>| {
        let g = Graph::new();
        let b: Vec<BoundMlp> = ms.iter().map(|m| m.bind(&g, false)).collect();
        f(&g, &b).1
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &m in wrt {
        let params = bound[m].parameters();
        let refs: Vec<&Tensor> = params.iter().collect();
        analytic.extend(g.backward(&loss, &refs).unwrap().iter().flat_map(|t| t.values().to_vec()));
        numeric.extend(
            (0..models[m].num_params())
                .map(|k| (value(perturb(models, m, k, FD_STEP)) - value(perturb(models, m, k, -FD_STEP))) / (2.0 * FD_STEP)),
        );
    }
    assert!(analytic.iter().any(|&v| v != 0.0), "vacuous check: analytic gradient is zero");
    rel_err(&analytic, &numeric)
}

fn random_input(rng: &mut RngStream, shape: &[usize]) -> Input {
    let n = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// `Σ out ⊙ W` for a fixed random `W`, so every output entry gets its own
/// upstream weight.
pub fn probe(t: &Tensor) -> Tensor {
    let mut rng = RngStream::new(99, "probe");
    let w: Vec<f64> = (0..t.numel()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let w = t.graph().constant(t.shape().to_vec(), w).unwrap();
    t.mul(&w).unwrap().sum()
}

type OpFn = Box<dyn Fn(&[Tensor]) -> Tensor>;

/// Every differentiable op, reduced to a scalar by [`probe`], with the
/// shapes of its inputs.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&[Tensor]) -> Tensor + 'static) -> (&'static str, Vec<Vec<usize>>, OpFn) {
        (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
    }
    vec![
        case("add", &[&[3, 4], &[3, 4]], |t| probe(&t[0].add(&t[1]).unwrap())),
        case("sub", &[&[3, 4], &[3, 4]], |t| probe(&t[0].sub(&t[1]).unwrap())),
        case("mul", &[&[3, 4], &[3, 4]], |t| probe(&t[0].mul(&t[1]).unwrap())),
        case("scale", &[&[3, 4]], |t| probe(&t[0].scale(-2.5))),
        case("neg", &[&[3, 4]], |t| probe(&t[0].neg())),
        case("add_scalar", &[&[3, 4]], |t| probe(&t[0].add_scalar(0.7))),
        case("square", &[&[3, 4]], |t| probe(&t[0].square())),
        case("matmul", &[&[3, 4], &[4, 2]], |t| probe(&t[0].matmul(&t[1]).unwrap())),
        case("transpose", &[&[3, 4]], |t| probe(&t[0].transpose().unwrap())),
        case("add_bias", &[&[3, 4], &[4]], |t| probe(&t[0].add_bias(&t[1]).unwrap())),
        case("affine", &[&[3, 4], &[4, 2], &[2]], |t| probe(&t[0].affine(&t[1], &t[2]).unwrap())),
        case("sum", &[&[3, 4]], |t| t[0].sum().scale(1.3)),
        case("mean", &[&[3, 4]], |t| t[0].mean().unwrap().scale(1.3)),
        case("sum_rows", &[&[3, 4]], |t| probe(&t[0].sum_rows().unwrap())),
        case("row_sum", &[&[3, 4]], |t| probe(&t[0].row_sum().unwrap())),
        case("scale_rows", &[&[3, 4], &[3]], |t| probe(&t[0].scale_rows(&t[1]).unwrap())),
        case("concat", &[&[3, 2], &[3, 4], &[3, 1]], |t| probe(&Tensor::concat(&[&t[0], &t[1], &t[2]]).unwrap())),
        case("slice_cols", &[&[3, 5]], |t| probe(&t[0].slice_cols(1, 3).unwrap())),
        case("reshape", &[&[3, 4]], |t| probe(&t[0].reshape(&[2, 6]).unwrap())),
        case("row_l2_norm", &[&[3, 4]], |t| probe(&t[0].row_l2_norm().unwrap())),
        case("leaky_relu", &[&[3, 4]], |t| probe(&t[0].leaky_relu(0.2))),
        case("relu", &[&[3, 4]], |t| probe(&t[0].relu())),
        case("softmax_cross_entropy", &[&[4, 3]], |t| t[0].scale(3.0).softmax_cross_entropy(&[0, 2, 1, 2]).unwrap()),
        case("pairwise_sq_dist", &[&[3, 4], &[2, 4]], |t| probe(&t[0].pairwise_sq_dist(&t[1]).unwrap())),
        case("input_gradient", &[&[4, 5], &[5, 1]], |t| {
            // Squared input-gradient norm of a one-hidden-layer critic,
            // differentiated through the returned gradient node. Its
            // x-gradient is zero with constant masks, so only the weights
            // are checked.
            let mut rng = RngStream::new(7, "critic-input");
            let x = t[0].graph().variable(vec![3, 4], (0..12).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
            let score = x.matmul(&t[0]).unwrap().leaky_relu(0.2).matmul(&t[1]).unwrap();
            let gx = x.graph().input_gradient(&score, &x).unwrap();
            probe(&gx.square())
        }),
    ]
}

/// Worst FD error of each op on seeded random inputs.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::new(seed, "op-inputs");
    op_cases()
        .into_iter()
        .map(|(name, shapes, f)| {
            let inputs: Vec<Input> = shapes.iter().map(|s| random_input(&mut rng, s)).collect();
            (name, tensor_grad_error(&inputs, f.as_ref()))
        })
        .collect()
}

pub const G: usize = 0;
pub const I: usize = 1;
pub const D1: usize = 2;
pub const D2: usize = 3;
pub const D3: usize = 4;
pub const CLS: usize = 5;

/// Tiny networks and a batch of 4: `d_x = 6`, `d_h = 3`, hidden width 8.
pub struct Tiny {
    pub models: Vec<MlpModel>,
    pub x: Matrix,
    pub h: Matrix,
    pub z: Matrix,
    pub attributes: Matrix,
    pub labels: Vec<usize>,
    pub seen_pos: Vec<usize>,
    pub alphas: [Vec<f64>; 3],
}

pub const LAMBDA: f64 = 10.0;
pub const BETA: f64 = 0.3;
pub const GAMMA: f64 = 0.7;
pub const ALPHA1: f64 = 1.5;
pub const ALPHA2: f64 = 2.0;
pub const EPSILON: f64 = 0.1;

pub fn sinkhorn_options() -> SinkhornOptions {
    SinkhornOptions { max_iter: 100_000, tol: 1e-14 }
}

impl Tiny {
    pub fn new(seed: u64) -> Self {
        let net = NetConfig::with_hidden(6, 3, 8);
        let mut rng = RngStream::new(seed, "tiny");
        let mut models = vec![
            build_generator(&net, &mut rng).unwrap(),
            build_inference(&net, &mut rng).unwrap(),
            build_critic(9, 8, net.leaky_slope, &mut rng).unwrap(),
            build_critic(9, 8, net.leaky_slope, &mut rng).unwrap(),
            build_critic(9, 8, net.leaky_slope, &mut rng).unwrap(),
            build_classifier(6, 2, &mut rng).unwrap(),
        ];
        // Keep the ReLU outputs of G and I active so their gradients are
        // not identically zero.
        for m in &mut models[..2] {
            let last = m.layers_mut().last_mut().unwrap();
            last.bias.iter_mut().for_each(|b| *b = 0.5);
        }
        let attributes = Matrix::new(3, 3, (0..9).map(|_| rng.uniform()).collect()).unwrap();
        let labels = vec![0, 1, 0, 2];
        Tiny {
            models,
            x: Matrix::new(4, 6, (0..24).map(|_| rng.uniform()).collect()).unwrap(),
            h: attributes.gather_rows(&labels),
            z: rng.gaussian_matrix(4, 3),
            attributes,
            labels,
            seen_pos: vec![0, 1, 0, 1],
            alphas: [0, 1, 2].map(|_| (0..4).map(|_| rng.uniform()).collect()),
        }
    }
}

struct Batch {
    xr: Tensor,
    hr: Tensor,
    x_gen: Tensor,
    h_inf: Tensor,
}

fn batch(t: &Tiny, g: &Graph, nets: &[BoundMlp]) -> Batch {
    let xr = g.constant_matrix(&t.x);
    let hr = g.constant_matrix(&t.h);
    let z = g.constant_matrix(&t.z);
    let x_gen = forward_generator(&nets[G], &z, &hr).unwrap();
    let h_inf = forward_inference(&nets[I], &xr).unwrap().attributes;
    Batch { xr, hr, x_gen, h_inf }
}

fn plain(t: Tensor) -> (Tensor, f64) {
    let v = t.item();
    (t, v)
}

/// Analytic alignment tensor and the entropic transport objective it is
/// the envelope gradient of.
fn align(t: &Tiny, b: &Batch) -> (Tensor, f64) {
    let a = alignment_loss(&b.h_inf, &t.labels, &t.attributes, EPSILON, &sinkhorn_options()).unwrap();
    (a.loss, a.plan.objective)
}

/// FD errors of each training objective with respect to the networks it
/// updates.
pub fn objective_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let t = Tiny::new(seed);
    let t = &t;
    let check = |wrt: &[usize], f: &dyn Fn(&Graph, &[BoundMlp], &Batch) -> (Tensor, f64)| {
        model_grad_error(&t.models, wrt, &|g, nets| f(g, nets, &batch(t, g, nets)))
    };
    vec![
        (
            "d1 critic",
            check(&[D1], &|_, n, b| {
                let xt = interpolate_with(&b.xr, &b.x_gen, &t.alphas[0]).unwrap();
                plain(wgan_critic_value(&n[D1], (&b.xr, &b.hr), (&b.x_gen, &b.hr), (&xt, &b.hr), LAMBDA).unwrap().value)
            }),
        ),
        ("classification", check(&[G], &|_, n, b| plain(classification_loss(&n[CLS], &b.x_gen, &t.seen_pos).unwrap()))),
        (
            "generator",
            check(&[G], &|_, n, b| {
                let w = adversarial_loss(&n[D1], (&b.x_gen, &b.hr)).unwrap();
                let c = classification_loss(&n[CLS], &b.x_gen, &t.seen_pos).unwrap();
                plain(generator_objective(&w, &c, BETA).unwrap())
            }),
        ),
        (
            "d2 critic",
            check(&[D2], &|_, n, b| {
                let ht = interpolate_with(&b.hr, &b.h_inf, &t.alphas[1]).unwrap();
                plain(wgan_critic_value(&n[D2], (&b.hr, &b.xr), (&b.h_inf, &b.xr), (&ht, &b.xr), LAMBDA).unwrap().value)
            }),
        ),
        ("alignment", check(&[I], &|_, _, b| align(t, b))),
        (
            "inference",
            check(&[I], &|_, n, b| {
                let w = adversarial_loss(&n[D2], (&b.h_inf, &b.xr)).unwrap();
                let (a, a_obj) = align(t, b);
                let v = w.item() + GAMMA * a_obj;
                (inference_objective(&w, &a, GAMMA).unwrap(), v)
            }),
        ),
        (
            "d3 critic",
            check(&[D3], &|_, n, b| {
                let xt = interpolate_with(&b.xr, &b.x_gen, &t.alphas[2]).unwrap();
                let ht = interpolate_with(&b.h_inf, &b.hr, &t.alphas[2]).unwrap();
                plain(joint_critic_value(&n[D3], &b.xr, &b.h_inf, &b.x_gen, &b.hr, &xt, &ht, LAMBDA).unwrap().value)
            }),
        ),
        ("joint max", check(&[G, I], &|_, n, b| plain(joint_max_loss(&n[D3], &b.xr, &b.h_inf, &b.x_gen, &b.hr).unwrap()))),
        (
            "total",
            check(&[G, I], &|_, n, b| {
                let w1 = adversarial_loss(&n[D1], (&b.x_gen, &b.hr)).unwrap();
                let c = classification_loss(&n[CLS], &b.x_gen, &t.seen_pos).unwrap();
                let l_gen = generator_objective(&w1, &c, BETA).unwrap();
                let w2 = adversarial_loss(&n[D2], (&b.h_inf, &b.xr)).unwrap();
                let (a, a_obj) = align(t, b);
                let l_inf = inference_objective(&w2, &a, GAMMA).unwrap();
                let jm = joint_max_loss(&n[D3], &b.xr, &b.h_inf, &b.x_gen, &b.hr).unwrap();
                let total = total_objective(&l_gen, &l_inf, &jm, ALPHA1, ALPHA2).unwrap();
                let v = total.item() - ALPHA1 * GAMMA * (a.item() - a_obj);
                (total, v)
            }),
        ),
    ]
}

/// Exact optimal transport cost by enumerating the basic feasible solutions
/// of `{X ≥ 0, X·1 = r, Xᵀ·1 = c}`.
pub fn lp_optimum(cost: &Matrix, r: &[f64], c: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let (k, m) = (cost.rows(), cost.cols());
    let n = k * m;
    // One of the k + m marginal constraints is redundant; drop the last.
    let rank = k + m - 1;
    let constraint = |row: usize, var: usize| {
        let (i, j) = (var / m, var % m);
        if row < k {
            (i == row) as u8 as f64
        } else {
            (j == row - k) as u8 as f64
        }
    };
    let rhs = DVector::from_iterator(rank, r.iter().chain(c).take(rank).copied());
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != rank {
            continue;
        }
        let basis: Vec<usize> = (0..n).filter(|v| mask >> v & 1 == 1).collect();
        let a = DMatrix::from_fn(rank, rank, |row, col| constraint(row, basis[col]));
        let Some(x) = a.lu().solve(&rhs) else { continue };
        if x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut plan = vec![0.0; n];
        for (&var, &v) in basis.iter().zip(x.iter()) {
            plan[var] = v;
        }
        let feasible = (0..k).all(|i| ((0..m).map(|j| plan[i * m + j]).sum::<f64>() - r[i]).abs() < 1e-9)
            && (0..m).all(|j| ((0..k).map(|i| plan[i * m + j]).sum::<f64>() - c[j]).abs() < 1e-9);
        if feasible {
            best = best.min(plan.iter().zip(cost.data()).map(|(x, c)| x * c).sum());
        }
    }
    best
}

/// Random `k × m` cost in `[0, 1)` with random positive marginals.
pub fn random_problem(seed: u64, k: usize, m: usize, uniform: bool) -> (Matrix, Vec<f64>, Vec<f64>) {
    let mut rng = RngStream::new(seed, "ot-problem");
    let cost = Matrix::new(k, m, (0..k * m).map(|_| rng.uniform()).collect()).unwrap();
    let mut marginal = |n: usize| {
        let w: Vec<f64> = (0..n).map(|_| if uniform { 1.0 } else { 0.2 + rng.uniform() }).collect();
        let s: f64 = w.iter().sum();
        let mut w: Vec<f64> = w.iter().map(|v| v / s).collect();
        // Put the rounding residue on the last entry so the sum is 1 to
        // within one ulp.
        let head: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - head;
        w
    };
    let r = marginal(k);
    let c = marginal(m);
    (cost, r, c)
}
