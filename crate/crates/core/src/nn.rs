//! Fully connected networks: generator, inference network, critics and
//! softmax classifiers.
//!
//! Models are plain parameter data. To evaluate one, [`MlpModel::bind`] it to
//! a [`Graph`], either as trainable leaves or as constants (frozen).

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Matrix, RngStream, Tensor};

const MODEL_MAGIC: &[u8; 8] = b"ZSLCMLP\0";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::LeakyRelu(s) => x.leaky_relu(s),
            Activation::Relu => x.relu(),
            Activation::Identity => x.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Inference,
    Critic,
    Classifier,
}

/// One dense layer, `act(x·W + b)` with `W` stored as `[in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    role: Role,
    layers: Vec<Dense>,
}

/// Dimensions shared by the five networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// Visual feature width.
    pub d_x: usize,
    /// Semantic attribute width.
    pub d_h: usize,
    /// Noise width; equal to `d_h` unless overridden.
    pub d_z: usize,
    pub hidden_generator: usize,
    pub hidden_inference: usize,
    pub hidden_critic: usize,
    pub leaky_slope: f64,
}

impl NetConfig {
    /// Desk-scale widths (64 hidden units).
    pub fn desk(d_x: usize, d_h: usize) -> Self {
        Self::with_hidden(d_x, d_h, 64)
    }

    /// Widths of the full-scale architecture (4096 hidden units).
    pub fn full(d_x: usize, d_h: usize) -> Self {
        Self::with_hidden(d_x, d_h, 4096)
    }

    pub fn with_hidden(d_x: usize, d_h: usize, hidden: usize) -> Self {
        NetConfig {
            d_x,
            d_h,
            d_z: d_h,
            hidden_generator: hidden,
            hidden_inference: hidden,
            hidden_critic: hidden,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_x,
            self.d_h,
            self.d_z,
            self.hidden_generator,
            self.hidden_inference,
            self.hidden_critic,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("all network widths must be >= 1: {self:?}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Width of the recognizer input when latent features are appended:
    /// `[x ; f1 ; f2 ; ĥ]`.
    pub fn augmented_dim(&self) -> usize {
        self.d_x + 2 * self.hidden_inference + self.d_h
    }
}

impl MlpModel {
    pub fn new(role: Role, layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::dim("mlp", format!("layer {i}: bias {} vs out {}", l.bias.len(), l.out_dim())));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(Error::dim(
                        "mlp",
                        format!("layer {i} outputs {} but layer {} takes {}", l.out_dim(), i + 1, next.in_dim()),
                    ));
                }
            }
        }
        let last = layers.last().expect("non-empty");
        let ok = match role {
            Role::Critic => last.activation == Activation::Identity && last.out_dim() == 1,
            Role::Generator | Role::Inference => last.activation == Activation::Relu,
            Role::Classifier => last.activation == Activation::Identity,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{role:?} cannot end with {:?} of width {}",
                last.activation,
                last.out_dim()
            )));
        }
        Ok(MlpModel { role, layers })
    }

    /// Layers of widths `dims[0]→dims[1]→…`, weights drawn from
    /// `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn random(role: Role, dims: &[usize], activations: &[Activation], rng: &mut RngStream) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(Error::InvalidArgument("need one activation per layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.uniform_range(-bound, bound)).collect();
                Dense {
                    weight: Matrix::new(w[0], w[1], data).expect("sized"),
                    bias: vec![0.0; w[1]],
                    activation,
                }
            })
            .collect();
        MlpModel::new(role, layers)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// `[in, hidden…, out]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Sets every weight and bias to zero.
    pub fn zero_params(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Hash of the exact parameter bits, for change detection.
    pub fn param_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            for v in l.weight.data().iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Records the parameters on `graph`, as variables when `trainable` and
    /// as constants otherwise.
    pub fn bind(&self, graph: &Graph, trainable: bool) -> BoundMlp {
        let params = self
            .layers
            .iter()
            .map(|l| {
                let bias = l.bias.clone();
                let n = bias.len();
                let (w, b) = if trainable {
                    (graph.variable_matrix(&l.weight), graph.variable(vec![n], bias))
                } else {
                    (graph.constant_matrix(&l.weight), graph.constant(vec![n], bias))
                };
                (w, b.expect("bias sized"), l.activation)
            })
            .collect();
        BoundMlp { params }
    }

    /// Applies one Adam step given gradients in [`BoundMlp::parameters`] order.
    pub fn adam_update(&mut self, grads: &[Tensor], opt: &mut MlpAdam, cfg: &AdamConfig) -> Result<()> {
        if grads.len() != 2 * self.layers.len() || opt.states.len() != grads.len() {
            return Err(Error::dim("adam_update", format!("{} gradients for {} layers", grads.len(), self.layers.len())));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            adam_step(l.weight.data_mut(), grads[2 * i].values(), &mut opt.states[2 * i], cfg)?;
            adam_step(&mut l.bias, grads[2 * i + 1].values(), &mut opt.states[2 * i + 1], cfg)?;
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u8(match self.role {
            Role::Generator => 0,
            Role::Inference => 1,
            Role::Critic => 2,
            Role::Classifier => 3,
        });
        w.len(self.layers.len());
        for l in &self.layers {
            let (tag, slope) = match l.activation {
                Activation::Identity => (0, 0.0),
                Activation::Relu => (1, 0.0),
                Activation::LeakyRelu(s) => (2, s),
            };
            w.u8(tag);
            w.f64(slope);
            w.matrix(&l.weight);
            w.f64s(&l.bias);
        }
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self> {
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSION)?;
        let role = match r.u8()? {
            0 => Role::Generator,
            1 => Role::Inference,
            2 => Role::Critic,
            3 => Role::Classifier,
            t => return Err(Error::Checkpoint(format!("unknown role tag {t}"))),
        };
        let n = r.len()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.u8()?;
            let slope = r.f64()?;
            let activation = match tag {
                0 => Activation::Identity,
                1 => Activation::Relu,
                2 => Activation::LeakyRelu(slope),
                t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
            };
            let weight = r.matrix()?;
            let bias = r.f64s()?;
            layers.push(Dense { weight, bias, activation });
        }
        MlpModel::new(role, layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Serializes to the versioned binary model layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let m = Self::decode(&mut r)?;
        if !r.at_end() {
            return Err(Error::Checkpoint("trailing bytes after model".into()));
        }
        Ok(m)
    }

    /// Plain forward pass outside of any caller-visible graph.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let g = Graph::new();
        self.bind(&g, false).forward(&g.constant_matrix(x))?.to_matrix()
    }
}

/// Adam moments for every parameter buffer of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpAdam {
    pub states: Vec<AdamState>,
}

impl MlpAdam {
    pub fn new(model: &MlpModel) -> Self {
        let states = model
            .layers
            .iter()
            .flat_map(|l| [AdamState::new(l.weight.data().len()), AdamState::new(l.bias.len())])
            .collect();
        MlpAdam { states }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.len(self.states.len());
        for s in &self.states {
            w.u64(s.t);
            w.f64s(&s.m);
            w.f64s(&s.v);
        }
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self> {
        let n = r.len()?;
        let states = (0..n)
            .map(|_| {
                let t = r.u64()?;
                let m = r.f64s()?;
                let v = r.f64s()?;
                Ok(AdamState { m, v, t })
            })
            .collect::<Result<_>>()?;
        Ok(MlpAdam { states })
    }
}

/// A model's parameters recorded on a graph.
pub struct BoundMlp {
    params: Vec<(Tensor, Tensor, Activation)>,
}

impl BoundMlp {
    /// Parameter tensors as `[W₀, b₀, W₁, b₁, …]`.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .flat_map(|(w, b, _)| [w.clone(), b.clone()])
            .collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_hidden(x)?.0)
    }

    /// Output together with every hidden-layer activation.
    pub fn forward_hidden(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut h = x.clone();
        let mut hidden = Vec::with_capacity(self.params.len().saturating_sub(1));
        for (i, (w, b, act)) in self.params.iter().enumerate() {
            h = act.apply(&h.affine(w, b)?);
            if i + 1 < self.params.len() {
                hidden.push(h.clone());
            }
        }
        Ok((h, hidden))
    }
}

/// `[d_z + d_h → hidden → hidden → d_x]`, leaky-ReLU hidden layers and a
/// ReLU output.
pub fn build_generator(cfg: &NetConfig, rng: &mut RngStream) -> Result<MlpModel> {
    cfg.validate()?;
    let a = Activation::LeakyRelu(cfg.leaky_slope);
    let h = cfg.hidden_generator;
    MlpModel::random(Role::Generator, &[cfg.d_z + cfg.d_h, h, h, cfg.d_x], &[a, a, Activation::Relu], rng)
}

/// `[d_x → hidden → hidden → d_h]`; the two hidden activations are the
/// latent features used for recognition.
pub fn build_inference(cfg: &NetConfig, rng: &mut RngStream) -> Result<MlpModel> {
    cfg.validate()?;
    let a = Activation::LeakyRelu(cfg.leaky_slope);
    let h = cfg.hidden_inference;
    MlpModel::random(Role::Inference, &[cfg.d_x, h, h, cfg.d_h], &[a, a, Activation::Relu], rng)
}

/// `[input → hidden → hidden → 1]` with a linear output.
pub fn build_critic(input_dim: usize, hidden: usize, leaky_slope: f64, rng: &mut RngStream) -> Result<MlpModel> {
    if input_dim == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("critic widths must be >= 1".into()));
    }
    let a = Activation::LeakyRelu(leaky_slope);
    MlpModel::random(Role::Critic, &[input_dim, hidden, hidden, 1], &[a, a, Activation::Identity], rng)
}

/// Single linear layer producing class logits.
pub fn build_classifier(input_dim: usize, classes: usize, rng: &mut RngStream) -> Result<MlpModel> {
    if input_dim == 0 || classes == 0 {
        return Err(Error::InvalidArgument("classifier widths must be >= 1".into()));
    }
    MlpModel::random(Role::Classifier, &[input_dim, classes], &[Activation::Identity], rng)
}

/// `x̂ = G([z ; h])`.
pub fn forward_generator(g: &BoundMlp, z: &Tensor, h: &Tensor) -> Result<Tensor> {
    g.forward(&Tensor::concat(&[z, h])?)
}

/// Output of the inference network with its latent features.
pub struct InferenceOutput {
    /// Predicted attributes `ĥ`.
    pub attributes: Tensor,
    pub f1: Tensor,
    pub f2: Tensor,
}

pub fn forward_inference(i: &BoundMlp, x: &Tensor) -> Result<InferenceOutput> {
    let (attributes, mut hidden) = i.forward_hidden(x)?;
    if hidden.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "inference network must have two hidden layers, has {}",
            hidden.len()
        )));
    }
    let f2 = hidden.pop().expect("len 2");
    let f1 = hidden.pop().expect("len 2");
    Ok(InferenceOutput { attributes, f1, f2 })
}

/// One critic score per sample for the pair `[a ; b]`, shape `[batch]`.
pub fn forward_critic(d: &BoundMlp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out = d.forward(&Tensor::concat(&[a, b])?)?;
    let n = out.shape()[0];
    out.reshape(&[n])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(5, "init")
    }

    #[test]
    fn generator_dims() {
        let full = NetConfig::full(2048, 312);
        assert_eq!(build_generator(&full, &mut rng()).unwrap().layer_dims(), vec![624, 4096, 4096, 2048]);
        let small = NetConfig::with_hidden(4, 2, 3);
        assert_eq!(build_generator(&small, &mut rng()).unwrap().layer_dims(), vec![4, 3, 3, 4]);
    }

    #[test]
    fn inference_dims_and_outputs() {
        let full = NetConfig::full(2048, 312);
        assert_eq!(build_inference(&full, &mut rng()).unwrap().layer_dims(), vec![2048, 4096, 4096, 312]);
        let cfg = NetConfig::with_hidden(32, 8, 16);
        let inf = build_inference(&cfg, &mut rng()).unwrap();
        assert_eq!(inf.layer_dims(), vec![32, 16, 16, 8]);
        let g = Graph::new();
        let x = RngStream::new(1, "x").sample_gaussian(&g, &[5, 32]);
        let out = forward_inference(&inf.bind(&g, false), &x).unwrap();
        assert_eq!(out.attributes.shape(), &[5, 8]);
        assert_eq!(out.f1.shape(), &[5, 16]);
        assert_eq!(out.f2.shape(), &[5, 16]);
        assert!(out.attributes.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let cfg = NetConfig::with_hidden(6, 3, 4);
        let g = Graph::new();
        let mut gen = build_generator(&cfg, &mut rng()).unwrap();
        gen.zero_params();
        let z = g.zeros(&[2, 3]);
        let h = g.constant(vec![2, 3], vec![1.0; 6]).unwrap();
        let xh = forward_generator(&gen.bind(&g, false), &z, &h).unwrap();
        assert!(xh.values().iter().all(|&v| v == 0.0));

        let mut inf = build_inference(&cfg, &mut rng()).unwrap();
        inf.zero_params();
        let x = g.constant(vec![2, 6], vec![1.5; 12]).unwrap();
        let out = forward_inference(&inf.bind(&g, false), &x).unwrap();
        for t in [&out.attributes, &out.f1, &out.f2] {
            assert!(t.values().iter().all(|&v| v == 0.0));
        }

        let mut d = build_critic(9, 4, 0.2, &mut rng()).unwrap();
        d.zero_params();
        let s = forward_critic(&d.bind(&g, false), &x, &h).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0]);
    }

    #[test]
    fn critic_can_score_negative() {
        let mut d = build_critic(2, 1, 0.2, &mut rng()).unwrap();
        d.zero_params();
        d.layers_mut()[2].bias[0] = -3.5;
        let g = Graph::new();
        let a = g.zeros(&[1, 1]);
        let s = forward_critic(&d.bind(&g, false), &a, &a).unwrap();
        assert_eq!(s.values(), &[-3.5]);
    }

    #[test]
    fn generator_is_deterministic_and_nonnegative() {
        let cfg = NetConfig::with_hidden(7, 3, 5);
        let gen = build_generator(&cfg, &mut rng()).unwrap();
        let g = Graph::new();
        let z = RngStream::new(9, "z").sample_gaussian(&g, &[5, 3]);
        let h = RngStream::new(9, "h").sample_gaussian(&g, &[5, 3]);
        let bound = gen.bind(&g, false);
        let a = forward_generator(&bound, &z, &h).unwrap();
        let b = forward_generator(&bound, &z, &h).unwrap();
        assert_eq!(a.shape(), &[5, 7]);
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn param_count() {
        let d = build_critic(10, 6, 0.2, &mut rng()).unwrap();
        assert_eq!(d.num_params(), 10 * 6 + 6 + 6 * 6 + 6 + 6 + 1);
    }

    #[test]
    fn role_invariants() {
        let dense = |i, o, activation| Dense { weight: Matrix::zeros(i, o), bias: vec![0.0; o], activation };
        assert!(MlpModel::new(Role::Critic, vec![dense(3, 2, Activation::Identity)]).is_err());
        assert!(MlpModel::new(Role::Generator, vec![dense(3, 2, Activation::Identity)]).is_err());
        assert!(MlpModel::new(Role::Classifier, vec![dense(3, 2, Activation::Identity), dense(3, 2, Activation::Identity)]).is_err());
    }

    #[test]
    fn bytes_round_trip_and_rejects_corruption() {
        let m = build_critic(5, 3, 0.2, &mut rng()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(MlpModel::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpModel::from_bytes(&bad).is_err());
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
