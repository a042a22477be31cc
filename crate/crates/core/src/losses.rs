//! Objective terms: conditional WGAN-GP critics, the joint critic over
//! (visual, semantic) pairs, the frozen-classifier loss, and their weighted
//! combinations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward_critic, BoundMlp};
use crate::tensor::{RngStream, Tensor};

/// Every scalar knob of the objective, optimizer and schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Weight of the classification loss on generated features.
    pub beta: f64,
    /// Gradient-penalty weight shared by all three critics.
    pub lambda: f64,
    /// Weight of the semantic alignment loss.
    pub gamma: f64,
    /// Weight of the inference objective.
    pub alpha1: f64,
    /// Weight of the joint-max term.
    pub alpha2: f64,
    /// Sinkhorn entropy weight.
    pub epsilon: f64,
    pub n_critic: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Synthesized features per unseen class at recognition time.
    pub n_syn: usize,
    pub seed: u64,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub recognizer_epochs: usize,
    pub recognizer_lr: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// When set, G and I ascend the joint-max term instead of descending it.
    pub joint_max_ascent: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Cub,
    Flo,
    Awa1,
    Awa2,
    Desk,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Cub, Preset::Flo, Preset::Awa1, Preset::Awa2, Preset::Desk];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cub => "cub",
            Preset::Flo => "flo",
            Preset::Awa1 => "awa1",
            Preset::Awa2 => "awa2",
            Preset::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {s:?} (expected cub, flo, awa1, awa2 or desk)")))
    }

    /// `(β, λ, γ, α₁, α₂)` for this preset.
    pub fn weights(self) -> [f64; 5] {
        match self {
            Preset::Cub => [0.01, 10.0, 3.0, 1.0, 2.0],
            Preset::Flo => [0.01, 10.0, 0.01, 1.0, 1.0],
            Preset::Awa1 => [0.01, 10.0, 0.001, 10.0, 2.0],
            Preset::Awa2 => [0.01, 10.0, 0.01, 5.0, 4.0],
            Preset::Desk => [0.01, 10.0, 1.0, 1.0, 1.0],
        }
    }

    pub fn hyper_params(self) -> HyperParams {
        let [beta, lambda, gamma, alpha1, alpha2] = self.weights();
        HyperParams { beta, lambda, gamma, alpha1, alpha2, ..HyperParams::default() }
    }
}

impl Default for HyperParams {
    /// The desk preset.
    fn default() -> Self {
        let [beta, lambda, gamma, alpha1, alpha2] = Preset::Desk.weights();
        HyperParams {
            beta,
            lambda,
            gamma,
            alpha1,
            alpha2,
            epsilon: 0.05,
            n_critic: 5,
            lr: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 60,
            n_syn: 200,
            seed: 0,
            classifier_epochs: 30,
            classifier_lr: 1e-3,
            recognizer_epochs: 30,
            recognizer_lr: 1e-3,
            sinkhorn_max_iter: 500,
            sinkhorn_tol: 1e-9,
            joint_max_ascent: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.gamma > 0.0 && self.epsilon <= 0.0 {
            return bad("epsilon must be > 0 when gamma > 0");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        for (name, v) in [("lr", self.lr), ("classifier_lr", self.classifier_lr), ("recognizer_lr", self.recognizer_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.sinkhorn_max_iter == 0 || !(self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_max_iter must be >= 1 and sinkhorn_tol > 0");
        }
        Ok(())
    }
}

/// One `α ~ U(0, 1)` per sample.
pub fn interpolation_weights(rng: &mut RngStream, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| rng.uniform()).collect()
}

/// `αᵢ·realᵢ + (1 − αᵢ)·fakeᵢ` as a fresh leaf variable.
///
/// The result is a leaf so that the critic's input gradient can be taken
/// with respect to it; no gradient flows back into `real` or `fake`.
pub fn interpolate_with(real: &Tensor, fake: &Tensor, alphas: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() || real.shape().len() != 2 {
        return Err(Error::dim("interpolate", format!("{:?} vs {:?}", real.shape(), fake.shape())));
    }
    let (b, d) = (real.shape()[0], real.shape()[1]);
    if alphas.len() != b {
        return Err(Error::dim("interpolate", format!("{} weights for batch {b}", alphas.len())));
    }
    let v = real
        .values()
        .iter()
        .zip(fake.values())
        .enumerate()
        .map(|(k, (&r, &f))| {
            let a = alphas[k / d];
            a * r + (1.0 - a) * f
        })
        .collect();
    real.graph().variable(vec![b, d], v)
}

pub fn interpolate(real: &Tensor, fake: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
    let b = real.shape().first().copied().unwrap_or(0);
    interpolate_with(real, fake, &interpolation_weights(rng, b))
}

fn unit_norm_penalty(norms: &Tensor, lambda: f64) -> Result<Tensor> {
    Ok(norms.add_scalar(-1.0).square().mean()?.scale(lambda))
}

/// `λ·mean((‖∇ₐ D(a, cond)‖ − 1)²)`, the gradient taken with respect to the
/// first slot only. Differentiable in the critic's parameters.
pub fn gradient_penalty(d: &BoundMlp, interp: &Tensor, cond: &Tensor, lambda: f64) -> Result<Tensor> {
    let score = forward_critic(d, interp, cond)?;
    let g = interp.graph().input_gradient(&score, interp)?;
    unit_norm_penalty(&g.row_l2_norm()?, lambda)
}

/// Penalty with one norm over the concatenated gradients of both slots.
pub fn joint_gradient_penalty(d: &BoundMlp, x_interp: &Tensor, h_interp: &Tensor, lambda: f64) -> Result<Tensor> {
    let score = forward_critic(d, x_interp, h_interp)?;
    let graph = x_interp.graph();
    let g = graph.grad(&score.sum(), &[x_interp, h_interp], true)?;
    let both = Tensor::concat(&[&g[0], &g[1]])?;
    unit_norm_penalty(&both.row_l2_norm()?, lambda)
}

/// A critic objective and its parts.
pub struct CriticTerms {
    /// `real_mean − fake_mean − penalty`; critics ascend this.
    pub value: Tensor,
    pub real_mean: f64,
    pub fake_mean: f64,
    pub penalty: f64,
}

fn critic_terms(real: Tensor, fake: Tensor, penalty: Option<Tensor>) -> Result<CriticTerms> {
    let mut value = real.sub(&fake)?;
    let mut p = 0.0;
    if let Some(pen) = penalty {
        p = pen.item();
        value = value.sub(&pen)?;
    }
    Ok(CriticTerms { real_mean: real.item(), fake_mean: fake.item(), penalty: p, value })
}

/// `E[D(real)] − E[D(fake)] − λ·E[(‖∇D(interp)‖ − 1)²]`, penalizing the
/// first slot of the interpolated pair. `λ = 0` drops the penalty.
pub fn wgan_critic_value(
    d: &BoundMlp,
    real: (&Tensor, &Tensor),
    fake: (&Tensor, &Tensor),
    interp: (&Tensor, &Tensor),
    lambda: f64,
) -> Result<CriticTerms> {
    let r = forward_critic(d, real.0, real.1)?.mean()?;
    let f = forward_critic(d, fake.0, fake.1)?.mean()?;
    let penalty = if lambda != 0.0 { Some(gradient_penalty(d, interp.0, interp.1, lambda)?) } else { None };
    critic_terms(r, f, penalty)
}

/// Joint critic value: real pairs `(x, ĥ)`, fake pairs `(x̂, h)`, penalty on
/// both slots of `(x̃, h̃)`.
#[allow(clippy::too_many_arguments)]
pub fn joint_critic_value(
    d3: &BoundMlp,
    x_real: &Tensor,
    h_inferred: &Tensor,
    x_generated: &Tensor,
    h_real: &Tensor,
    x_interp: &Tensor,
    h_interp: &Tensor,
    lambda: f64,
) -> Result<CriticTerms> {
    let r = forward_critic(d3, x_real, h_inferred)?.mean()?;
    let f = forward_critic(d3, x_generated, h_real)?.mean()?;
    let penalty = if lambda != 0.0 { Some(joint_gradient_penalty(d3, x_interp, h_interp, lambda)?) } else { None };
    critic_terms(r, f, penalty)
}

/// `−(E[D₃(x, ĥ)] − E[D₃(x̂, h)])`. Bind `d3` frozen so that only G and I
/// receive gradients.
pub fn joint_max_loss(d3: &BoundMlp, x_real: &Tensor, h_inferred: &Tensor, x_generated: &Tensor, h_real: &Tensor) -> Result<Tensor> {
    let r = forward_critic(d3, x_real, h_inferred)?.mean()?;
    let f = forward_critic(d3, x_generated, h_real)?.mean()?;
    f.sub(&r)
}

/// Generator-side adversarial term `−E[D(fake)]`.
pub fn adversarial_loss(d: &BoundMlp, fake: (&Tensor, &Tensor)) -> Result<Tensor> {
    Ok(forward_critic(d, fake.0, fake.1)?.mean()?.neg())
}

/// Cross-entropy of a frozen classifier on generated features, unweighted.
pub fn classification_loss(classifier: &BoundMlp, x_generated: &Tensor, labels: &[usize]) -> Result<Tensor> {
    classifier.forward(x_generated)?.softmax_cross_entropy(labels)
}

/// `β·CE(classifier(x̂), labels)`.
pub fn cls_loss(classifier: &BoundMlp, x_generated: &Tensor, labels: &[usize], beta: f64) -> Result<Tensor> {
    Ok(classification_loss(classifier, x_generated, labels)?.scale(beta))
}

/// `wgan + β·cls`.
pub fn generator_objective(wgan: &Tensor, cls: &Tensor, beta: f64) -> Result<Tensor> {
    wgan.add(&cls.scale(beta))
}

/// `wgan + γ·align`.
pub fn inference_objective(wgan: &Tensor, align: &Tensor, gamma: f64) -> Result<Tensor> {
    wgan.add(&align.scale(gamma))
}

/// `gen + α₁·inf + α₂·joint_max`.
pub fn total_objective(gen: &Tensor, inf: &Tensor, joint_max: &Tensor, alpha1: f64, alpha2: f64) -> Result<Tensor> {
    gen.add(&inf.scale(alpha1))?.add(&joint_max.scale(alpha2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Critic,
    Generator,
}

/// Scalar values of one optimization step.
///
/// In a critic step `wgan1`, `wgan2` and `joint_d3` are the three critic
/// values and `total` is their sum. In a generator step `wgan1` and `wgan2`
/// are the generator-side adversarial terms, `cls` and `align` are
/// unweighted, and `total` is the weighted objective. Terms that are
/// switched off by a zero weight are not evaluated and read as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub phase: Phase,
    pub epoch: u64,
    pub step: u64,
    pub wgan1: f64,
    pub wgan2: f64,
    pub joint_d3: f64,
    pub joint_max: f64,
    pub cls: f64,
    pub align: f64,
    pub total: f64,
}

impl LossReport {
    pub fn expected_total(&self, hp: &HyperParams) -> f64 {
        match self.phase {
            Phase::Critic => self.wgan1 + self.wgan2 + self.joint_d3,
            Phase::Generator => {
                (self.wgan1 + hp.beta * self.cls) + hp.alpha1 * (self.wgan2 + hp.gamma * self.align) + hp.alpha2 * self.joint_max
            }
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("wgan1", self.wgan1),
            ("wgan2", self.wgan2),
            ("joint_d3", self.joint_d3),
            ("joint_max", self.joint_max),
            ("cls", self.cls),
            ("align", self.align),
            ("total", self.total),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|(_, v)| v.is_finite())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}
