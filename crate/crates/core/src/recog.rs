//! Recognition: synthesize unseen-class features, optionally append the
//! inference network's latent features, train a softmax recognizer over all
//! classes and score it with per-class GZSL metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{GzslDataset, Partition};
use crate::error::{Error, Result};
use crate::nn::{forward_inference, MlpModel};
use crate::tensor::{Graph, Matrix, RngStream};
use crate::train::{argmax, train_softmax, TrainState};

/// Where a recognizer training row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    RealSeen,
    SynthesizedUnseen,
}

/// Training rows of the recognizer. With latents the columns are
/// `[x ; f₁ ; f₂ ; ĥ]`, otherwise just `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
    pub latents: bool,
}

/// `n_syn` generated features per unseen class, each from fresh noise.
/// Rows are grouped by class in the order of `unseen`.
pub fn synthesize_unseen(
    generator: &MlpModel,
    attributes: &Matrix,
    unseen: &[usize],
    n_syn: usize,
    d_z: usize,
    rng: &mut RngStream,
) -> Result<(Matrix, Vec<usize>)> {
    if unseen.is_empty() {
        return Err(Error::InvalidArgument("no unseen classes to synthesize".into()));
    }
    let d_x = generator.output_dim();
    if n_syn == 0 {
        return Ok((Matrix::zeros(0, d_x), Vec::new()));
    }
    let labels: Vec<usize> = unseen.iter().flat_map(|&c| std::iter::repeat_n(c, n_syn)).collect();
    let h = attributes.gather_rows(&labels);
    let z = rng.gaussian_matrix(labels.len(), d_z);
    let x = generator.predict(&Matrix::hstack(&[&z, &h])?)?;
    Ok((x, labels))
}

/// `[x ; f₁ ; f₂ ; ĥ]` for every row of `x`, in row order.
pub fn augment_with_latents(inference: &MlpModel, x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        let width = x.cols() + 2 * inference.layers()[0].out_dim() + inference.output_dim();
        return Ok(Matrix::zeros(0, width));
    }
    let g = Graph::new();
    let out = forward_inference(&inference.bind(&g, false), &g.constant_matrix(x))?;
    Matrix::hstack(&[x, &out.f1.to_matrix()?, &out.f2.to_matrix()?, &out.attributes.to_matrix()?])
}

impl RecognitionSet {
    /// Real train-seen rows followed by synthesized unseen rows.
    pub fn build(
        ds: &GzslDataset,
        synthesized: (Matrix, Vec<usize>),
        inference: Option<&MlpModel>,
    ) -> Result<Self> {
        let (real_x, real_y) = ds.subset(Partition::TrainSeen);
        let (syn_x, syn_y) = synthesized;
        if let Some(y) = syn_y.iter().find(|y| !ds.unseen_classes().contains(y)) {
            return Err(Error::Invariant(format!("synthesized row carries non-unseen class {y}")));
        }
        let mut x = Matrix::vstack(&[&real_x, &syn_x])?;
        if let Some(inf) = inference {
            x = augment_with_latents(inf, &x)?;
        }
        let provenance = std::iter::repeat_n(Provenance::RealSeen, real_y.len())
            .chain(std::iter::repeat_n(Provenance::SynthesizedUnseen, syn_y.len()))
            .collect();
        Ok(RecognitionSet { features: x, labels: real_y.into_iter().chain(syn_y).collect(), provenance, latents: inference.is_some() })
    }
}

/// Linear softmax recognizer with one logit per class of the dataset.
pub fn train_recognizer(rs: &RecognitionSet, classes: usize, epochs: usize, lr: f64, batch_size: usize, rng: &mut RngStream) -> Result<MlpModel> {
    let mut present = rs.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(format!("recognizer needs at least 2 classes, got {}", present.len())));
    }
    train_softmax(&rs.features, &rs.labels, classes, epochs, lr, batch_size, rng)
}

/// Per-class top-1 accuracy in percent over `classes`.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<Vec<f64>> {
    if preds.len() != labels.len() {
        return Err(Error::dim("per_class_accuracy", format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    classes
        .iter()
        .map(|&c| {
            let (mut n, mut hit) = (0usize, 0usize);
            for (&p, &y) in preds.iter().zip(labels) {
                if y == c {
                    n += 1;
                    hit += (p == c) as usize;
                }
            }
            if n == 0 {
                Err(Error::InvalidArgument(format!("class {c} has no test samples")))
            } else {
                Ok(100.0 * hit as f64 / n as f64)
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `2us / (u + s)`, or 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> Result<f64> {
    if !(u >= 0.0 && s >= 0.0) {
        return Err(Error::InvalidArgument(format!("accuracies must be nonnegative, got {u} and {s}")));
    }
    Ok(if u + s == 0.0 { 0.0 } else { 2.0 * u * s / (u + s) })
}

/// GZSL scores over the joint label space, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    #[serde(rename = "U")]
    pub unseen: f64,
    #[serde(rename = "S")]
    pub seen: f64,
    #[serde(rename = "H")]
    pub harmonic: f64,
    /// Accuracy per class id.
    pub per_class: BTreeMap<String, f64>,
    /// `confusion[true][predicted]` counts over dense class indices.
    #[serde(skip)]
    pub confusion: Vec<Vec<u64>>,
}

impl GzslMetrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct serializes");
        s.push('\n');
        s
    }

    pub const CSV_HEADER: &'static str = "U,S,H";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.unseen, self.seen, self.harmonic)
    }
}

/// Labels predicted by `recognizer` for the test partitions, together with
/// the true labels, seen-test rows first.
pub fn predict_test(recognizer: &MlpModel, inference: Option<&MlpModel>, ds: &GzslDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let (xs, ys) = ds.subset(Partition::TestSeen);
    let (xu, yu) = ds.subset(Partition::TestUnseen);
    if ys.is_empty() || yu.is_empty() {
        return Err(Error::InvalidArgument("both test partitions must be nonempty".into()));
    }
    let mut x = Matrix::vstack(&[&xs, &xu])?;
    if let Some(inf) = inference {
        x = augment_with_latents(inf, &x)?;
    }
    let logits = recognizer.predict(&x)?;
    let preds = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
    Ok((preds, ys.into_iter().chain(yu).collect()))
}

/// Metrics from predictions on the test partitions.
pub fn gzsl_metrics(ds: &GzslDataset, preds: &[usize], labels: &[usize]) -> Result<GzslMetrics> {
    let seen = per_class_accuracy(preds, labels, ds.seen_classes())?;
    let unseen = per_class_accuracy(preds, labels, ds.unseen_classes())?;
    let (s, u) = (mean(&seen), mean(&unseen));
    let per_class = ds
        .seen_classes()
        .iter()
        .zip(&seen)
        .chain(ds.unseen_classes().iter().zip(&unseen))
        .map(|(&c, &a)| (ds.class_ids()[c].to_string(), a))
        .collect();
    let c = ds.num_classes();
    let mut confusion = vec![vec![0u64; c]; c];
    for (&p, &y) in preds.iter().zip(labels) {
        if p < c {
            confusion[y][p] += 1;
        }
    }
    Ok(GzslMetrics { unseen: u, seen: s, harmonic: harmonic_mean(u, s)?, per_class, confusion })
}

/// Classifies every test row over the full label space and scores U, S, H.
pub fn evaluate_gzsl(recognizer: &MlpModel, inference: Option<&MlpModel>, ds: &GzslDataset) -> Result<GzslMetrics> {
    let (preds, labels) = predict_test(recognizer, inference, ds)?;
    gzsl_metrics(ds, &preds, &labels)
}

/// Output of the full recognition stage.
pub struct Recognition {
    pub set: RecognitionSet,
    pub recognizer: MlpModel,
    pub metrics: GzslMetrics,
}

/// Synthesizes `state.hp.n_syn` features per unseen class, trains the
/// recognizer (on latent-augmented rows when `latents`) and evaluates it.
///
/// Test partitions are read only after the recognizer is trained.
pub fn recognize(state: &TrainState, ds: &GzslDataset, latents: bool) -> Result<Recognition> {
    let hp = &state.hp;
    let synthesized = synthesize_unseen(
        &state.generator,
        ds.attributes(),
        ds.unseen_classes(),
        hp.n_syn,
        state.net.d_z,
        &mut RngStream::new(hp.seed, "recognition/synthesis"),
    )?;
    let inference = latents.then_some(&state.inference);
    let set = RecognitionSet::build(ds, synthesized, inference)?;
    let recognizer = train_recognizer(
        &set,
        ds.num_classes(),
        hp.recognizer_epochs,
        hp.recognizer_lr,
        hp.batch_size,
        &mut RngStream::new(hp.seed, "recognition/train"),
    )?;
    let metrics = evaluate_gzsl(&recognizer, inference, ds)?;
    Ok(Recognition { set, recognizer, metrics })
}
