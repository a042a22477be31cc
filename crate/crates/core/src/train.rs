//! Alternating adversarial training of the generator, inference network and
//! the three critics, plus the frozen seen-class classifier used by the
//! classification loss.
//!
//! Each minibatch runs `n_critic` critic phases followed by one generator
//! phase. Critics are stepped one after another (D₁, D₂, D₃) on features
//! generated and inferred before any of them moves.
//!
//! Checkpoints are taken between epochs and hold every parameter, optimizer
//! moment, counter, random-stream position and the loss history, so a
//! resumed run continues bit-for-bit.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::data::{GzslDataset, Partition};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss, classification_loss, generator_objective, inference_objective, interpolate_with,
    interpolation_weights, joint_critic_value, joint_max_loss, total_objective, wgan_critic_value, HyperParams, LossReport,
    Phase,
};
use crate::nn::{
    build_classifier, build_critic, build_generator, build_inference, forward_generator, forward_inference, MlpAdam,
    MlpModel, NetConfig,
};
use crate::ot::{alignment_loss, SinkhornOptions};
use crate::tensor::{AdamConfig, Graph, Matrix, RngStream, Tensor};

const CHECKPOINT_MAGIC: &[u8; 8] = b"ZSLCTRN\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Cumulative ablation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Generative module only; recognition on raw features.
    S1,
    /// Adds the inference module and the joint critic.
    S2,
    /// Adds latent features to the recognizer input.
    S3,
    /// Adds the alignment loss: the complete model.
    S4,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Ablation::S1),
            "S2" => Ok(Ablation::S2),
            "S3" => Ok(Ablation::S3),
            "S4" => Ok(Ablation::S4),
            _ => Err(Error::InvalidArgument(format!("unknown ablation {s:?} (S1..S4)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::S1 => "S1",
            Ablation::S2 => "S2",
            Ablation::S3 => "S3",
            Ablation::S4 => "S4",
        }
    }

    /// Zeroes the weights this configuration switches off.
    pub fn apply(self, hp: &mut HyperParams) {
        match self {
            Ablation::S1 => {
                hp.alpha1 = 0.0;
                hp.alpha2 = 0.0;
                hp.gamma = 0.0;
            }
            Ablation::S2 | Ablation::S3 => hp.gamma = 0.0,
            Ablation::S4 => {}
        }
    }

    pub fn uses_latents(self) -> bool {
        matches!(self, Ablation::S3 | Ablation::S4)
    }
}

/// Parameter hashes of every network, for routing checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamHashes {
    pub generator: u64,
    pub inference: u64,
    pub d1: u64,
    pub d2: u64,
    pub d3: u64,
    pub classifier: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub hp: HyperParams,
    pub net: NetConfig,
    pub generator: MlpModel,
    pub inference: MlpModel,
    pub d1: MlpModel,
    pub d2: MlpModel,
    pub d3: MlpModel,
    /// Frozen seen-class classifier; its outputs are seen-class positions.
    pub classifier: MlpModel,
    pub opt_generator: MlpAdam,
    pub opt_inference: MlpAdam,
    pub opt_d1: MlpAdam,
    pub opt_d2: MlpAdam,
    pub opt_d3: MlpAdam,
    /// Completed epochs.
    pub epoch: u64,
    /// Phases run so far, critic and generator alike.
    pub step: u64,
    pub generator_steps: u64,
    pub rng_noise: RngStream,
    pub rng_interp: RngStream,
    pub rng_shuffle: RngStream,
    pub history: Vec<LossReport>,
}

fn check(term: &str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string(), step })
    }
}

fn grads_for(g: &Graph, loss: &Tensor, params: &[Tensor]) -> Result<Vec<Tensor>> {
    let refs: Vec<&Tensor> = params.iter().collect();
    g.backward(loss, &refs)
}

/// Trains a single linear softmax layer with Adam on shuffled minibatches.
pub fn train_softmax(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<MlpModel> {
    if x.rows() == 0 || x.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows with {} labels", x.rows(), labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
    }
    let mut model = build_classifier(x.cols(), classes, rng)?;
    let mut opt = MlpAdam::new(&model);
    let cfg = AdamConfig { lr, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let g = Graph::new();
            let bound = model.bind(&g, true);
            let xb = g.constant_matrix(&x.gather_rows(chunk));
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = bound.forward(&xb)?.softmax_cross_entropy(&yb)?;
            check("softmax", loss.item(), 0)?;
            let grads = grads_for(&g, &loss, &bound.parameters())?;
            model.adam_update(&grads, &mut opt, &cfg)?;
        }
    }
    Ok(model)
}

/// Linear classifier over the seen classes, trained on train-seen features.
/// Output `k` scores the `k`-th entry of `ds.seen_classes()`.
pub fn pretrain_classifier(ds: &GzslDataset, epochs: usize, lr: f64, batch_size: usize, rng: &mut RngStream) -> Result<MlpModel> {
    let (x, labels) = ds.subset(Partition::TrainSeen);
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("train-seen partition is empty".into()));
    }
    let pos: Vec<usize> = labels.iter().map(|&y| ds.seen_position(y).expect("train labels are seen")).collect();
    train_softmax(&x, &pos, ds.seen_classes().len(), epochs, lr, batch_size, rng)
}

/// Fraction of rows whose argmax logit is the label.
pub fn accuracy(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = model.predict(x)?;
    let hits = (0..x.rows()).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
    Ok(hits as f64 / x.rows().max(1) as f64)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

impl TrainState {
    /// Fresh networks and optimizers plus a pretrained, frozen classifier.
    pub fn init(ds: &GzslDataset, hp: &HyperParams, net: &NetConfig) -> Result<Self> {
        hp.validate()?;
        net.validate()?;
        if ds.d_x() != net.d_x || ds.d_h() != net.d_h {
            return Err(Error::dim(
                "train",
                format!("dataset is {}x{} but networks expect {}x{}", ds.d_x(), ds.d_h(), net.d_x, net.d_h),
            ));
        }
        let seed = hp.seed;
        let generator = build_generator(net, &mut RngStream::new(seed, "init/generator"))?;
        let inference = build_inference(net, &mut RngStream::new(seed, "init/inference"))?;
        let pair = net.d_x + net.d_h;
        let d1 = build_critic(pair, net.hidden_critic, net.leaky_slope, &mut RngStream::new(seed, "init/d1"))?;
        let d2 = build_critic(pair, net.hidden_critic, net.leaky_slope, &mut RngStream::new(seed, "init/d2"))?;
        let d3 = build_critic(pair, net.hidden_critic, net.leaky_slope, &mut RngStream::new(seed, "init/d3"))?;
        let classifier = pretrain_classifier(
            ds,
            hp.classifier_epochs,
            hp.classifier_lr,
            hp.batch_size,
            &mut RngStream::new(seed, "classifier"),
        )?;
        Ok(TrainState {
            hp: hp.clone(),
            net: *net,
            opt_generator: MlpAdam::new(&generator),
            opt_inference: MlpAdam::new(&inference),
            opt_d1: MlpAdam::new(&d1),
            opt_d2: MlpAdam::new(&d2),
            opt_d3: MlpAdam::new(&d3),
            generator,
            inference,
            d1,
            d2,
            d3,
            classifier,
            epoch: 0,
            step: 0,
            generator_steps: 0,
            rng_noise: RngStream::new(seed, "noise"),
            rng_interp: RngStream::new(seed, "interpolation"),
            rng_shuffle: RngStream::new(seed, "shuffle"),
            history: Vec::new(),
        })
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.hp.lr, beta1: self.hp.adam_beta1, beta2: self.hp.adam_beta2, eps: self.hp.adam_eps }
    }

    fn sinkhorn(&self) -> SinkhornOptions {
        SinkhornOptions { max_iter: self.hp.sinkhorn_max_iter, tol: self.hp.sinkhorn_tol }
    }

    pub fn param_hashes(&self) -> ParamHashes {
        ParamHashes {
            generator: self.generator.param_hash(),
            inference: self.inference.param_hash(),
            d1: self.d1.param_hash(),
            d2: self.d2.param_hash(),
            d3: self.d3.param_hash(),
            classifier: self.classifier.param_hash(),
        }
    }

    fn uses_inference(&self) -> bool {
        self.hp.alpha1 > 0.0 || self.hp.alpha2 > 0.0
    }

    /// One ascent step for each active critic on `(x, labels)`.
    ///
    /// D₂ is skipped when `α₁ = 0` and D₃ when `α₂ = 0`: their values feed
    /// no generator-side term, and the skipped values are logged as 0.
    pub fn critic_phase(&mut self, x: &Matrix, labels: &[usize], attributes: &Matrix) -> Result<LossReport> {
        let b = x.rows();
        let step = self.step;
        let lambda = self.hp.lambda;
        let adam = self.adam();
        let g = Graph::new();
        let xr = g.constant_matrix(x);
        let hr = g.constant_matrix(&attributes.gather_rows(labels));
        let z = self.rng_noise.sample_gaussian(&g, &[b, self.net.d_z]);
        let x_gen = forward_generator(&self.generator.bind(&g, false), &z, &hr)?.detach();
        let h_inf = if self.uses_inference() {
            Some(forward_inference(&self.inference.bind(&g, false), &xr)?.attributes.detach())
        } else {
            None
        };

        let alphas = interpolation_weights(&mut self.rng_interp, b);
        let xt = interpolate_with(&xr, &x_gen, &alphas)?;
        let d1 = self.d1.bind(&g, true);
        let t1 = wgan_critic_value(&d1, (&xr, &hr), (&x_gen, &hr), (&xt, &hr), lambda)?;
        let wgan1 = check("wgan1", t1.value.item(), step)?;
        let grads = grads_for(&g, &t1.value.neg(), &d1.parameters())?;
        self.d1.adam_update(&grads, &mut self.opt_d1, &adam)?;

        let mut wgan2 = 0.0;
        let mut joint_d3 = 0.0;
        if let Some(h_inf) = &h_inf {
            if self.hp.alpha1 > 0.0 {
                let alphas = interpolation_weights(&mut self.rng_interp, b);
                let ht = interpolate_with(&hr, h_inf, &alphas)?;
                let d2 = self.d2.bind(&g, true);
                let t2 = wgan_critic_value(&d2, (&hr, &xr), (h_inf, &xr), (&ht, &xr), lambda)?;
                wgan2 = check("wgan2", t2.value.item(), step)?;
                let grads = grads_for(&g, &t2.value.neg(), &d2.parameters())?;
                self.d2.adam_update(&grads, &mut self.opt_d2, &adam)?;
            }
            if self.hp.alpha2 > 0.0 {
                let alphas = interpolation_weights(&mut self.rng_interp, b);
                let xt = interpolate_with(&xr, &x_gen, &alphas)?;
                let ht = interpolate_with(h_inf, &hr, &alphas)?;
                let d3 = self.d3.bind(&g, true);
                let t3 = joint_critic_value(&d3, &xr, h_inf, &x_gen, &hr, &xt, &ht, lambda)?;
                joint_d3 = check("joint_d3", t3.value.item(), step)?;
                let grads = grads_for(&g, &t3.value.neg(), &d3.parameters())?;
                self.d3.adam_update(&grads, &mut self.opt_d3, &adam)?;
            }
        }
        let report = LossReport {
            phase: Phase::Critic,
            epoch: self.epoch,
            step,
            wgan1,
            wgan2,
            joint_d3,
            joint_max: 0.0,
            cls: 0.0,
            align: 0.0,
            total: wgan1 + wgan2 + joint_d3,
        };
        self.step += 1;
        self.history.push(report.clone());
        Ok(report)
    }

    /// One descent step for G and I on the combined objective, critics and
    /// classifier frozen. `seen_pos[i]` is the classifier output index of
    /// `labels[i]`.
    ///
    /// The reported `total` is `L_gen + α₁·L_inf + α₂·L_joint-max`. With
    /// `joint_max_ascent` the networks ascend the joint-max term, so the
    /// descended objective is `L_gen + α₁·L_inf − α₂·L_joint-max`.
    pub fn generator_phase(&mut self, x: &Matrix, labels: &[usize], seen_pos: &[usize], attributes: &Matrix) -> Result<LossReport> {
        let b = x.rows();
        let step = self.step;
        let hp = self.hp.clone();
        let g = Graph::new();
        let xr = g.constant_matrix(x);
        let hr = g.constant_matrix(&attributes.gather_rows(labels));
        let z = self.rng_noise.sample_gaussian(&g, &[b, self.net.d_z]);
        let gen = self.generator.bind(&g, true);
        let x_gen = forward_generator(&gen, &z, &hr)?;
        let zero = g.scalar(0.0);

        let wgan1 = adversarial_loss(&self.d1.bind(&g, false), (&x_gen, &hr))?;
        let cls = if hp.beta > 0.0 {
            classification_loss(&self.classifier.bind(&g, false), &x_gen, seen_pos)?
        } else {
            zero.clone()
        };
        let l_gen = generator_objective(&wgan1, &cls, hp.beta)?;

        let inf = self.uses_inference().then(|| self.inference.bind(&g, true));
        let (mut wgan2, mut align, mut jm) = (zero.clone(), zero.clone(), zero.clone());
        if let Some(inf) = &inf {
            let h_inf = forward_inference(inf, &xr)?.attributes;
            if hp.alpha1 > 0.0 {
                wgan2 = adversarial_loss(&self.d2.bind(&g, false), (&h_inf, &xr))?;
                if hp.gamma > 0.0 {
                    align = alignment_loss(&h_inf, labels, attributes, hp.epsilon, &self.sinkhorn())
                        .map_err(|e| match e {
                            Error::Numerical(d) => Error::Numerical(format!("{d} at step {step}")),
                            other => other,
                        })?
                        .loss;
                }
            }
            if hp.alpha2 > 0.0 {
                jm = joint_max_loss(&self.d3.bind(&g, false), &xr, &h_inf, &x_gen, &hr)?;
            }
        }
        let l_inf = inference_objective(&wgan2, &align, hp.gamma)?;
        let total = total_objective(&l_gen, &l_inf, &jm, hp.alpha1, hp.alpha2)?;
        let report = LossReport {
            phase: Phase::Generator,
            epoch: self.epoch,
            step,
            wgan1: check("wgan1", wgan1.item(), step)?,
            wgan2: check("wgan2", wgan2.item(), step)?,
            joint_d3: 0.0,
            joint_max: check("joint_max", jm.item(), step)?,
            cls: check("cls", cls.item(), step)?,
            align: check("align", align.item(), step)?,
            total: check("total", total.item(), step)?,
        };
        let descended = if hp.joint_max_ascent && hp.alpha2 > 0.0 {
            total.sub(&jm.scale(2.0 * hp.alpha2))?
        } else {
            total
        };

        let adam = self.adam();
        let gen_params = gen.parameters();
        let inf_params = inf.as_ref().map(|i| i.parameters()).unwrap_or_default();
        let all: Vec<Tensor> = gen_params.iter().chain(&inf_params).cloned().collect();
        let grads = grads_for(&g, &descended, &all)?;
        let (gg, gi) = grads.split_at(gen_params.len());
        self.generator.adam_update(gg, &mut self.opt_generator, &adam)?;
        if inf.is_some() {
            self.inference.adam_update(gi, &mut self.opt_inference, &adam)?;
        }
        self.step += 1;
        self.generator_steps += 1;
        self.history.push(report.clone());
        Ok(report)
    }

    /// One pass over the shuffled train-seen partition.
    pub fn run_epoch(&mut self, ds: &GzslDataset) -> Result<()> {
        let batches = ds.batches(Partition::TrainSeen, self.hp.batch_size, &mut self.rng_shuffle, true)?;
        for batch in &batches {
            let seen_pos: Vec<usize> = batch
                .labels
                .iter()
                .map(|&y| ds.seen_position(y).ok_or_else(|| Error::Invariant(format!("class {y} is not seen"))))
                .collect::<Result<_>>()?;
            for _ in 0..self.hp.n_critic {
                self.critic_phase(&batch.features, &batch.labels, ds.attributes())?;
            }
            self.generator_phase(&batch.features, &batch.labels, &seen_pos, ds.attributes())?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs epochs until `epochs` are complete, calling `after_epoch` after
    /// each one (for checkpoints and logs).
    pub fn run_until(&mut self, ds: &GzslDataset, epochs: u64, mut after_epoch: impl FnMut(&TrainState) -> Result<()>) -> Result<()> {
        while self.epoch < epochs {
            self.run_epoch(ds)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        encode_hp(&self.hp, &mut w);
        encode_net(&self.net, &mut w);
        for m in [&self.generator, &self.inference, &self.d1, &self.d2, &self.d3, &self.classifier] {
            m.encode(&mut w);
        }
        for o in [&self.opt_generator, &self.opt_inference, &self.opt_d1, &self.opt_d2, &self.opt_d3] {
            o.encode(&mut w);
        }
        w.u64(self.epoch);
        w.u64(self.step);
        w.u64(self.generator_steps);
        for r in [&self.rng_noise, &self.rng_interp, &self.rng_shuffle] {
            w.u64(r.seed());
            w.u64(r.stream());
            w.u128(r.counter());
        }
        w.len(self.history.len());
        for r in &self.history {
            w.u8(matches!(r.phase, Phase::Generator) as u8);
            w.u64(r.epoch);
            w.u64(r.step);
            for (_, v) in r.terms() {
                w.f64(v);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let hp = decode_hp(&mut r)?;
        let net = decode_net(&mut r)?;
        let mut models = (0..6).map(|_| MlpModel::decode(&mut r)).collect::<Result<Vec<_>>>()?.into_iter();
        let mut opts = (0..5).map(|_| MlpAdam::decode(&mut r)).collect::<Result<Vec<_>>>()?.into_iter();
        let epoch = r.u64()?;
        let step = r.u64()?;
        let generator_steps = r.u64()?;
        let mut rngs = (0..3)
            .map(|_| Ok(RngStream::from_parts(r.u64()?, r.u64()?, r.u128()?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let n = r.len()?;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            let phase = match r.u8()? {
                0 => Phase::Critic,
                1 => Phase::Generator,
                t => return Err(Error::Checkpoint(format!("unknown phase tag {t}"))),
            };
            let epoch = r.u64()?;
            let step = r.u64()?;
            let mut v = [0.0; 7];
            for x in &mut v {
                *x = r.f64()?;
            }
            let [wgan1, wgan2, joint_d3, joint_max, cls, align, total] = v;
            history.push(LossReport { phase, epoch, step, wgan1, wgan2, joint_d3, joint_max, cls, align, total });
        }
        if !r.at_end() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        let mut next = || models.next().expect("six models");
        let state = TrainState {
            hp,
            net,
            generator: next(),
            inference: next(),
            d1: next(),
            d2: next(),
            d3: next(),
            classifier: next(),
            opt_generator: opts.next().expect("five"),
            opt_inference: opts.next().expect("five"),
            opt_d1: opts.next().expect("five"),
            opt_d2: opts.next().expect("five"),
            opt_d3: opts.next().expect("five"),
            epoch,
            step,
            generator_steps,
            rng_noise: rngs.next().expect("three"),
            rng_interp: rngs.next().expect("three"),
            rng_shuffle: rngs.next().expect("three"),
            history,
        };
        for (m, o) in [
            (&state.generator, &state.opt_generator),
            (&state.inference, &state.opt_inference),
            (&state.d1, &state.opt_d1),
            (&state.d2, &state.opt_d2),
            (&state.d3, &state.opt_d3),
        ] {
            if MlpAdam::new(m).states.iter().map(|s| s.m.len()).ne(o.states.iter().map(|s| s.m.len())) {
                return Err(Error::Checkpoint("optimizer state does not match its model".into()));
            }
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn encode_hp(hp: &HyperParams, w: &mut Writer) {
    for v in [hp.beta, hp.lambda, hp.gamma, hp.alpha1, hp.alpha2, hp.epsilon, hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps] {
        w.f64(v);
    }
    for v in [hp.n_critic, hp.batch_size, hp.epochs, hp.n_syn, hp.classifier_epochs, hp.recognizer_epochs, hp.sinkhorn_max_iter] {
        w.len(v);
    }
    w.u64(hp.seed);
    w.f64(hp.classifier_lr);
    w.f64(hp.recognizer_lr);
    w.f64(hp.sinkhorn_tol);
    w.u8(hp.joint_max_ascent as u8);
}

fn decode_hp(r: &mut Reader) -> Result<HyperParams> {
    let mut f = [0.0; 10];
    for v in &mut f {
        *v = r.f64()?;
    }
    let mut n = [0usize; 7];
    for v in &mut n {
        *v = r.u64()? as usize;
    }
    let [beta, lambda, gamma, alpha1, alpha2, epsilon, lr, adam_beta1, adam_beta2, adam_eps] = f;
    let [n_critic, batch_size, epochs, n_syn, classifier_epochs, recognizer_epochs, sinkhorn_max_iter] = n;
    Ok(HyperParams {
        beta,
        lambda,
        gamma,
        alpha1,
        alpha2,
        epsilon,
        lr,
        adam_beta1,
        adam_beta2,
        adam_eps,
        n_critic,
        batch_size,
        epochs,
        n_syn,
        classifier_epochs,
        recognizer_epochs,
        sinkhorn_max_iter,
        seed: r.u64()?,
        classifier_lr: r.f64()?,
        recognizer_lr: r.f64()?,
        sinkhorn_tol: r.f64()?,
        joint_max_ascent: r.u8()? != 0,
    })
}

fn encode_net(net: &NetConfig, w: &mut Writer) {
    for v in [net.d_x, net.d_h, net.d_z, net.hidden_generator, net.hidden_inference, net.hidden_critic] {
        w.len(v);
    }
    w.f64(net.leaky_slope);
}

fn decode_net(r: &mut Reader) -> Result<NetConfig> {
    let mut n = [0usize; 6];
    for v in &mut n {
        *v = r.u64()? as usize;
    }
    let [d_x, d_h, d_z, hidden_generator, hidden_inference, hidden_critic] = n;
    Ok(NetConfig { d_x, d_h, d_z, hidden_generator, hidden_inference, hidden_critic, leaky_slope: r.f64()? })
}

/// Builds a fresh state and trains it for `hp.epochs` epochs.
pub fn fit(ds: &GzslDataset, hp: &HyperParams, net: &NetConfig) -> Result<TrainState> {
    let mut state = TrainState::init(ds, hp, net)?;
    state.run_until(ds, hp.epochs as u64, |_| Ok(()))?;
    Ok(state)
}
