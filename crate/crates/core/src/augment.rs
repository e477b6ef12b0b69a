//! Chimera synthesis for classifier training: the generator-backed mixer,
//! the pixel-space ablation mixer and stochastic batch replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledImageDataset, PairBatch, PairSampler};
use crate::error::{Error, Result};
use crate::eval::pixel_mix;
use crate::kernels::{resample2d, Resample1d};
use crate::masks::{MaskSampler, MixMask};
use crate::model::{from_model_range, to_model_range, Generator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bilinear resize with antialiasing when shrinking.
pub fn resize_images<T: Scalar>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let rows = Resample1d::linear(h, height, true);
    let cols = Resample1d::linear(w, width, true);
    Tensor::from_vec(&[n, c, height, width], resample2d(x.data(), n * c, &rows, &cols))
}

/// Produces images from two same-class parent batches and per-pair masks.
/// Images are `[0, 1]` intensities at the dataset's native resolution.
pub trait ChimeraSource {
    /// `(height, width)` at which masks must be sampled.
    fn mask_dims(&self) -> (usize, usize);
    fn mix(&self, x1: &Tensor<f32>, x2: &Tensor<f32>, masks: &[MixMask]) -> Result<Tensor<f32>>;
}

/// Feature-space mixing through a trained generator.
pub struct GeneratorMixer<T: Scalar> {
    pub generator: Generator<T>,
}

impl<T: Scalar> ChimeraSource for GeneratorMixer<T> {
    fn mask_dims(&self) -> (usize, usize) {
        let (_, h, w) = self.generator.feature_dims();
        (h, w)
    }

    fn mix(&self, x1: &Tensor<f32>, x2: &Tensor<f32>, masks: &[MixMask]) -> Result<Tensor<f32>> {
        let (_, _, h, w) = x1.dims4();
        let (gh, gw) = (self.generator.config.input_height, self.generator.config.input_width);
        let a = to_model_range::<T>(&resize_images(x1, gh, gw)?);
        let b = to_model_range::<T>(&resize_images(x2, gh, gw)?);
        let out = from_model_range(&self.generator.generate_tensor(&a, &b, masks)?);
        Ok(resize_images(&out, h, w)?.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Pixel-space mixing without a generator. Masks are sampled at
/// `mask_dims` and nearest-upsampled to the image.
pub struct PixelMixer {
    pub mask_height: usize,
    pub mask_width: usize,
}

impl ChimeraSource for PixelMixer {
    fn mask_dims(&self) -> (usize, usize) {
        (self.mask_height, self.mask_width)
    }

    fn mix(&self, x1: &Tensor<f32>, x2: &Tensor<f32>, masks: &[MixMask]) -> Result<Tensor<f32>> {
        pixel_mix(x1, x2, masks)
    }
}

/// Chimeras for the given anchors: each anchor is paired with a fresh
/// same-class partner and a fresh mask. Labels are the anchors' labels.
pub fn make_chimeras<R: Rng + ?Sized>(
    source: &dyn ChimeraSource,
    ds: &LabeledImageDataset,
    pairs: &PairSampler,
    masks: &MaskSampler,
    anchors: &[usize],
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let batch = pairs.pairs_for(ds, anchors, rng);
    let (mh, mw) = source.mask_dims();
    let ms = anchors
        .iter()
        .map(|&a| masks.sample(a, mh, mw, rng))
        .collect::<Result<Vec<_>>>()?;
    source.mix(&batch.first, &batch.second, &ms)
}

/// `n` random same-class pairs with their chimeras, reproducible from `seed`.
/// Returns the pairs and the mixed images, both in `[0, 1]`.
pub fn sample_chimeras(
    source: &dyn ChimeraSource,
    ds: &LabeledImageDataset,
    masks: &MaskSampler,
    n: usize,
    seed: u64,
) -> Result<(PairBatch, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = PairSampler::new(ds);
    let anchors: Vec<usize> = (0..n).map(|_| rng.random_range(0..ds.len())).collect();
    let batch = pairs.pairs_for(ds, &anchors, &mut rng);
    let (mh, mw) = source.mask_dims();
    let ms = anchors
        .iter()
        .map(|&a| masks.sample(a, mh, mw, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mixed = source.mix(&batch.first, &batch.second, &ms)?;
    Ok((batch, mixed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    /// The whole batch is swapped for chimeras with probability `p`.
    WholeBatch,
    /// Each sample is swapped independently with probability `p`.
    PerSample,
}

/// Everything batch replacement needs besides the batch itself.
pub struct Augmenter<'a> {
    pub source: Option<&'a dyn ChimeraSource>,
    pub masks: Option<&'a MaskSampler>,
    pub pairs: PairSampler,
    pub replace_prob: f64,
    pub mode: Replacement,
}

impl<'a> Augmenter<'a> {
    pub fn new(
        ds: &LabeledImageDataset,
        source: Option<&'a dyn ChimeraSource>,
        masks: Option<&'a MaskSampler>,
        replace_prob: f64,
        mode: Replacement,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&replace_prob) {
            return Err(Error::Invalid(format!("replace_prob {replace_prob} outside [0, 1]")));
        }
        if replace_prob > 0.0 && (source.is_none() || masks.is_none()) {
            return Err(Error::Invalid(
                "batch replacement needs a chimera source and a mask sampler".into(),
            ));
        }
        Ok(Augmenter {
            source,
            masks,
            pairs: PairSampler::new(ds),
            replace_prob,
            mode,
        })
    }

    /// Images for the batch `indices`, with chimeras substituted according to
    /// the replacement rule. Returns the images and how many were replaced.
    /// Labels never change: partners are drawn from the anchor's class.
    pub fn augment_batch<R: Rng + ?Sized>(
        &self,
        ds: &LabeledImageDataset,
        indices: &[usize],
        rng: &mut R,
    ) -> Result<(Tensor<f32>, usize)> {
        let mut images = ds.gather(indices);
        if self.replace_prob == 0.0 {
            return Ok((images, 0));
        }
        let chosen: Vec<usize> = match self.mode {
            Replacement::WholeBatch => {
                if rng.random_bool(self.replace_prob) {
                    (0..indices.len()).collect()
                } else {
                    Vec::new()
                }
            }
            Replacement::PerSample => (0..indices.len()).filter(|_| rng.random_bool(self.replace_prob)).collect(),
        };
        if chosen.is_empty() {
            return Ok((images, 0));
        }
        let (Some(source), Some(masks)) = (self.source, self.masks) else {
            unreachable!("checked in Augmenter::new");
        };
        let anchors: Vec<usize> = chosen.iter().map(|&k| indices[k]).collect();
        let chimeras = make_chimeras(source, ds, &self.pairs, masks, &anchors, rng)?;
        for (j, &k) in chosen.iter().enumerate() {
            images.sample_mut(k).copy_from_slice(chimeras.sample(j));
        }
        Ok((images, chosen.len()))
    }
}
