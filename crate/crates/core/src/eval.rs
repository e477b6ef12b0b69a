//! Fréchet distance between feature statistics, pixel-space mixing,
//! accuracy evaluation and pluggable feature extractors.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{make_chimeras, resize_images, ChimeraSource};
use crate::classifier::Classifier;
use crate::data::{LabeledImageDataset, PairSampler};
use crate::error::{Error, Result};
use crate::masks::{MaskSampler, MixMask};
use crate::model::to_model_range;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gaussian fit of a feature distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn activation_stats(features: &[Vec<f64>]) -> Result<ActivationStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Invalid(format!("activation statistics need >= 2 samples, got {n}")));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature vectors must share a positive dimension".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let mut sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    // Exact symmetry regardless of summation order.
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(ActivationStats { mu, sigma, n })
}

/// Eigenvalues of a symmetric matrix, negatives clamped to zero.
fn clamped_eigenvalues(m: DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(m).eigenvalues.map(|v| v.max(0.0))
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`, clamped at 0.
pub fn fid(a: &ActivationStats, b: &ActivationStats) -> Result<f64> {
    if a.mu.len() != b.mu.len() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.mu.len(),
            b.mu.len()
        )));
    }
    let finite = |s: &ActivationStats| s.mu.iter().chain(s.sigma.iter()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::Invalid("activation statistics contain non-finite values".into()));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let ra = sqrt_psd(&a.sigma);
    let inner = &ra * &b.sigma * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clamped_eigenvalues(inner).iter().map(|v| v.sqrt()).sum();
    Ok((mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross).max(0.0))
}

/// `x1 * M + x2 * (1 - M)` in pixel space, with each mask nearest-upsampled
/// to the image resolution.
pub fn pixel_mix<T: Scalar>(x1: &Tensor<T>, x2: &Tensor<T>, masks: &[MixMask]) -> Result<Tensor<T>> {
    if x1.shape() != x2.shape() || x1.shape().len() != 4 {
        return Err(Error::Shape(format!("images {:?} and {:?} differ", x1.shape(), x2.shape())));
    }
    let (n, c, h, w) = x1.dims4();
    if masks.len() != n {
        return Err(Error::Shape(format!("{} masks for a batch of {n}", masks.len())));
    }
    let mut out = x2.clone();
    for (i, m) in masks.iter().enumerate() {
        if m.height > h || m.width > w {
            return Err(Error::Shape(format!(
                "mask {}x{} exceeds image {h}x{w}",
                m.height, m.width
            )));
        }
        let full = m.upsample_nearest(h, w);
        let src = x1.sample(i);
        let dst = out.sample_mut(i);
        for ch in 0..c {
            for (p, &bit) in full.iter().enumerate() {
                if bit {
                    dst[ch * h * w + p] = src[ch * h * w + p];
                }
            }
        }
    }
    Ok(out)
}

/// Anything that assigns class indices to `[0, 1]` images.
pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>>;
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.row_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

const EVAL_BATCH: usize = 64;

impl<T: Scalar> Predictor for Classifier<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
            let x = to_model_range::<T>(&images.select(&idx));
            out.extend(argmax_rows(&self.logits(&x)?));
        }
        Ok(out)
    }
}

/// Top-1 accuracy of `model` on `ds`.
pub fn evaluate_accuracy(model: &dyn Predictor, ds: &LabeledImageDataset) -> Result<f64> {
    if model.num_classes() != ds.class_count() {
        return Err(Error::Invalid(format!(
            "model predicts {} classes, dataset has {}",
            model.num_classes(),
            ds.class_count()
        )));
    }
    let pred = model.predict(ds.images())?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Deterministic image -> feature vector map.
pub trait FeatureExtractor {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// One feature vector per `[0, 1]` image of an `[N, C, H, W]` batch.
    fn extract(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>>;
}

/// Images are bilinearly resized (antialiased) to a square input before
/// feature extraction.
pub const FID_RESIZE: &str = "bilinear-antialias";

/// Fixed-seed random linear projection followed by `tanh`.
#[derive(Clone, Debug)]
pub struct RandomProjectionExtractor {
    pub seed: u64,
    pub channels: usize,
    pub input_size: usize,
    weights: DMatrix<f64>,
}

impl RandomProjectionExtractor {
    pub fn new(seed: u64, channels: usize, input_size: usize, dim: usize) -> Self {
        let inputs = channels * input_size * input_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (1.0 / inputs as f64).sqrt();
        let weights = DMatrix::from_fn(dim, inputs, |_, _| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            v * std
        });
        RandomProjectionExtractor {
            seed,
            channels,
            input_size,
            weights,
        }
    }
}

fn prepare(images: &Tensor<f32>, channels: usize, size: usize) -> Result<Tensor<f64>> {
    let (_, c, _, _) = images.dims4();
    if c != channels {
        return Err(Error::Shape(format!("extractor expects {channels} channels, got {c}")));
    }
    Ok(resize_images(&images.cast::<f64>(), size, size)?.map(|v| 2.0 * v - 1.0))
}

impl FeatureExtractor for RandomProjectionExtractor {
    fn id(&self) -> String {
        format!(
            "random-projection(seed={}, in={}x{}x{}, dim={})",
            self.seed,
            self.channels,
            self.input_size,
            self.input_size,
            self.weights.nrows()
        )
    }

    fn dim(&self) -> usize {
        self.weights.nrows()
    }

    fn extract(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let x = prepare(images, self.channels, self.input_size)?;
        Ok((0..x.shape()[0])
            .map(|i| {
                let v = DVector::from_column_slice(x.sample(i));
                (&self.weights * v).iter().map(|f| f.tanh()).collect()
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    /// Row-major `[outputs][inputs]`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Multi-layer perceptron feature extractor read from a JSON weights file:
/// `{"id", "channels", "input_size", "layers": [{"weight", "bias", "activation"}]}`.
/// Inputs are flattened `C x S x S` images scaled to `[-1, 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpExtractor {
    pub id: String,
    pub channels: usize,
    pub input_size: usize,
    pub layers: Vec<DenseLayer>,
}

impl MlpExtractor {
    pub fn from_json(text: &str) -> Result<Self> {
        let e: MlpExtractor = serde_json::from_str(text).map_err(|e| Error::Format(format!("extractor weights: {e}")))?;
        e.validate()?;
        Ok(e)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn validate(&self) -> Result<()> {
        let mut width = self.channels * self.input_size * self.input_size;
        if self.layers.is_empty() {
            return Err(Error::Format("extractor has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.is_empty() || l.weight.iter().any(|r| r.len() != width) || l.bias.len() != l.weight.len() {
                return Err(Error::Format(format!("extractor layer {i} does not take {width} inputs")));
            }
            width = l.weight.len();
        }
        Ok(())
    }
}

impl FeatureExtractor for MlpExtractor {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    fn extract(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let x = prepare(images, self.channels, self.input_size)?;
        Ok((0..x.shape()[0])
            .map(|i| {
                let mut v = x.sample(i).to_vec();
                for l in &self.layers {
                    v = l
                        .weight
                        .iter()
                        .zip(&l.bias)
                        .map(|(row, b)| {
                            let s = row.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>() + b;
                            match l.activation {
                                Activation::None => s,
                                Activation::Relu => s.max(0.0),
                                Activation::Tanh => s.tanh(),
                            }
                        })
                        .collect();
                }
                v
            })
            .collect())
    }
}

pub fn dataset_stats(extractor: &dyn FeatureExtractor, images: &Tensor<f32>) -> Result<ActivationStats> {
    activation_stats(&extractor.extract(images)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidManifest {
    pub seed: u64,
    pub extractor: String,
    pub resize: String,
    pub n_generated: usize,
    pub n_reference: usize,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub manifest: FidManifest,
}

impl FidReport {
    pub fn to_text(&self) -> String {
        let m = &self.manifest;
        let mut s = String::new();
        let _ = writeln!(s, "fid = {:.6}", self.fid);
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "extractor = {}", m.extractor);
        let _ = writeln!(s, "resize = {}", m.resize);
        let _ = writeln!(s, "n_generated = {}", m.n_generated);
        let _ = writeln!(s, "n_reference = {}", m.n_reference);
        let _ = writeln!(s, "mask = {}", m.mask);
        s
    }
}

/// FID between `n_samples` chimeras drawn from `train` and the reference images.
pub fn fid_report(
    source: &dyn ChimeraSource,
    masks: &MaskSampler,
    train: &LabeledImageDataset,
    reference: &Tensor<f32>,
    extractor: &dyn FeatureExtractor,
    n_samples: usize,
    seed: u64,
) -> Result<FidReport> {
    if n_samples < 2 {
        return Err(Error::Invalid(format!("fid needs >= 2 samples, got {n_samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = PairSampler::new(train);
    let mut generated = Vec::with_capacity(n_samples);
    for start in (0..n_samples).step_by(EVAL_BATCH) {
        let count = EVAL_BATCH.min(n_samples - start);
        let anchors: Vec<usize> = (0..count).map(|_| rng.random_range(0..train.len())).collect();
        let imgs = make_chimeras(source, train, &pairs, masks, &anchors, &mut rng)?;
        generated.extend(extractor.extract(&imgs)?);
    }
    let a = activation_stats(&generated)?;
    let b = dataset_stats(extractor, reference)?;
    let mask = match masks {
        MaskSampler::Grid { size } => format!("grid({size})"),
        MaskSampler::Segmentation { mode, .. } => format!("segmentation({mode:?})"),
    };
    Ok(FidReport {
        fid: fid(&a, &b)?,
        manifest: FidManifest {
            seed,
            extractor: extractor.id(),
            resize: FID_RESIZE.into(),
            n_generated: n_samples,
            n_reference: reference.shape()[0],
            mask,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskOrigin;

    fn stats(mu: &[f64], diag: &[f64]) -> ActivationStats {
        ActivationStats {
            mu: DVector::from_column_slice(mu),
            sigma: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            n: 10,
        }
    }

    #[test]
    fn two_point_stats() {
        let s = activation_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(s.mu.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.sigma, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(activation_stats(&[vec![1.0]]).is_err());
    }

    #[test]
    fn diagonal_closed_form() {
        let a = stats(&[0.0, 0.0], &[4.0, 1.0]);
        let b = stats(&[0.0, 0.0], &[1.0, 1.0]);
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        let c = stats(&[1.0, 2.0], &[4.0, 1.0]);
        assert!((fid(&a, &c).unwrap() - 5.0).abs() < 1e-9);
        assert!(fid(&a, &stats(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn pixel_mix_half_plane() {
        let x1 = Tensor::<f32>::from_vec(&[1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let x2 = x1.map(|v| -v);
        let m = MixMask::from_bits(2, 2, vec![true, false, true, false], MaskOrigin::Grid).unwrap();
        let out = pixel_mix(&x1, &x2, &[m]).unwrap();
        let expect: Vec<f32> = (0..16).map(|i| if i % 4 < 2 { i as f32 } else { -(i as f32) }).collect();
        assert_eq!(out.data(), expect.as_slice());
    }

    struct Fixed(Vec<usize>, usize);

    impl Predictor for Fixed {
        fn num_classes(&self) -> usize {
            self.1
        }
        fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
            Ok(self.0.iter().cycle().take(images.shape()[0]).copied().collect())
        }
    }

    #[test]
    fn accuracy_counts_matches() {
        let ds = LabeledImageDataset::new("t", Tensor::zeros(&[4, 1, 1, 1]), vec![0, 1, 1, 0], 2).unwrap();
        assert_eq!(evaluate_accuracy(&Fixed(vec![0, 1, 1, 0], 2), &ds).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&Fixed(vec![0, 1, 0, 1], 2), &ds).unwrap(), 0.5);
        assert!(evaluate_accuracy(&Fixed(vec![0], 3), &ds).is_err());
    }

    #[test]
    fn mlp_extractor_parses_and_checks_widths() {
        let json = r#"{"id": "toy", "channels": 1, "input_size": 1,
            "layers": [{"weight": [[2.0], [-1.0]], "bias": [0.0, 0.5], "activation": "relu"}]}"#;
        let e = MlpExtractor::from_json(json).unwrap();
        let f = e.extract(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(f, vec![vec![2.0, 0.0]]);
        let bad = json.replace("[[2.0], [-1.0]]", "[[2.0, 1.0], [-1.0]]");
        assert!(MlpExtractor::from_json(&bad).is_err());
    }
}
