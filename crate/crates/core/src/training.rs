//! Alternating generator/discriminator optimisation and classifier training
//! with stochastic batch replacement.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{resize_images, Augmenter, Replacement};
use crate::autograd::Graph;
use crate::checkpoint::Checkpoint;
use crate::classifier::{Classifier, ClassifierConfig};
use crate::data::{epoch_order, repetition_factor, LabeledImageDataset, PairSampler};
use crate::error::{Error, Result};
use crate::eval::evaluate_accuracy;
use crate::losses::{
    generator_total_loss_var, lsgan_d_loss, lsgan_g_loss, perceptual_loss, reconstruction_loss, LossParts,
    LossWeights,
};
use crate::masks::{constant_mask, MaskSampler, MixMask};
use crate::model::{mix_vars, to_model_range, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{apply_bn_updates, Forward};
use crate::optim::{collect_grads, cosine_lr, step_lr, AdamW, Sgd};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GENERATOR_CHECKPOINT_KIND: &str = "generator";
pub const CLASSIFIER_CHECKPOINT_KIND: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    /// Per-epoch traversal count is `max(1, repetition_base / samples_per_class)`.
    pub repetition_base: usize,
    /// Resize dataset images to the generator input size when they differ.
    pub pre_upsample: bool,
    pub pyramid_levels: usize,
    pub loss_weights: LossWeights,
    /// Write an intermediate checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 5e-4,
            lr_milestones: vec![60, 120, 160],
            lr_factor: 0.2,
            repetition_base: 500,
            pre_upsample: true,
            pyramid_levels: 3,
            loss_weights: LossWeights::default(),
            checkpoint_every: 0,
        }
    }
}

impl GenTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.repetition_base == 0 {
            return Err(Error::Invalid("epochs, batch_size and repetition_base must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("lr must be positive, got {}", self.lr)));
        }
        self.loss_weights.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(epoch, self.lr, &self.lr_milestones, self.lr_factor)
    }
}

/// Per-epoch means of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenEpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub l_rec: f64,
    pub l_per: f64,
    pub l_gdisc: f64,
    pub l_ddisc: f64,
}

pub const GEN_METRICS_HEADER: &str = "epoch,lr,l_rec,l_per,l_gdisc,l_ddisc";

impl GenEpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.lr, self.l_rec, self.l_per, self.l_gdisc, self.l_ddisc
        )
    }
}

pub fn gen_metrics_csv(rows: &[GenEpochMetrics]) -> String {
    let mut s = format!("{GEN_METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Model-range parent batches and masks for one iteration.
#[derive(Clone, Debug)]
pub struct StepBatch<T> {
    pub x1: Tensor<T>,
    pub x2: Tensor<T>,
    pub masks: Vec<MixMask>,
}

fn check_finite(what: &str, v: f64, epoch: usize, iter: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} = {v} at epoch {epoch}, iteration {iter}")))
    }
}

/// Generator, discriminator and their optimisers.
pub struct GanTrainer<T: Scalar> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub config: GenTrainConfig,
    g_opt: AdamW<T>,
    d_opt: AdamW<T>,
    masks: MaskSampler,
    pairs: PairSampler,
    images: Tensor<T>,
    repeats: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> GanTrainer<T> {
    /// `init_seed` fixes the weights, `train_seed` the pairing, masks and order.
    pub fn new(
        ds: &LabeledImageDataset,
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        config: GenTrainConfig,
        masks: MaskSampler,
        init_seed: u64,
        train_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (c, h, w) = ds.image_dims();
        if c != gen_cfg.channels || c != disc_cfg.channels {
            return Err(Error::Invalid(format!(
                "dataset has {c} channels, models expect {} / {}",
                gen_cfg.channels, disc_cfg.channels
            )));
        }
        let (gh, gw) = (gen_cfg.input_height, gen_cfg.input_width);
        if (h, w) != (gh, gw) && !config.pre_upsample {
            return Err(Error::Invalid(format!(
                "images are {h}x{w} but the generator takes {gh}x{gw}; enable pre_upsample"
            )));
        }
        if disc_cfg.output_size(gh, gw).is_none() {
            return Err(Error::Invalid(format!(
                "{gh}x{gw} generator output is smaller than the discriminator's receptive field"
            )));
        }
        let images = to_model_range::<T>(&resize_images(ds.images(), gh, gw)?);
        let generator = Generator::new(gen_cfg, init_seed)?;
        let discriminator = Discriminator::new(disc_cfg, init_seed.wrapping_add(1))?;
        let g_opt = AdamW::new(&generator.params, config.beta1, config.beta2, config.weight_decay);
        let d_opt = AdamW::new(&discriminator.params, config.beta1, config.beta2, config.weight_decay);
        let spc = ds.class_indices().iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(1);
        let repeats = repetition_factor(spc, config.repetition_base)?;
        Ok(GanTrainer {
            generator,
            discriminator,
            g_opt,
            d_opt,
            masks,
            pairs: PairSampler::new(ds),
            images,
            repeats,
            rng: ChaCha8Rng::seed_from_u64(train_seed),
            config,
        })
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    /// `ceil(N * repetition_factor / batch)`.
    pub fn iterations_per_epoch(&self) -> usize {
        (self.images.shape()[0] * self.repeats).div_ceil(self.config.batch_size)
    }

    /// Parents, partners and masks for a list of anchors.
    pub fn prepare(&mut self, ds: &LabeledImageDataset, anchors: &[usize]) -> Result<StepBatch<T>> {
        let partners: Vec<usize> = anchors
            .iter()
            .map(|&a| self.pairs.partner(ds.labels()[a], &mut self.rng))
            .collect();
        let (_, fh, fw) = self.generator.feature_dims();
        let masks = anchors
            .iter()
            .map(|&a| self.masks.sample(a, fh, fw, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepBatch {
            x1: self.images.select(anchors),
            x2: self.images.select(&partners),
            masks,
        })
    }

    /// One discriminator update on real parents against detached mixes.
    pub fn d_step(&mut self, b: &StepBatch<T>, lr: f64) -> Result<f64> {
        let fake = self.generator.generate_tensor(&b.x1, &b.x2, &b.masks)?;
        let real = Tensor::concat(&[&b.x1, &b.x2])?;
        let mut g = Graph::new();
        let p = self.discriminator.params.bind(&mut g, true);
        let (rv, fv) = (g.constant(real), g.constant(fake));
        let mut f = Forward::new(&mut g, &p, true);
        let sr = self.discriminator.forward(&mut f, rv)?;
        let sf = self.discriminator.forward(&mut f, fv)?;
        let loss = lsgan_d_loss(&mut g, sr, sf)?;
        let value = g.value(loss).item().as_f64();
        if value.is_finite() {
            let mut grads = g.backward(loss);
            let grads = collect_grads(&p, &mut grads);
            self.d_opt.step(&mut self.discriminator.params, &grads, lr)?;
        }
        Ok(value)
    }

    /// One generator update on the weighted objective; the discriminator is
    /// bound as constants and is not modified.
    pub fn g_step(&mut self, b: &StepBatch<T>, lr: f64) -> Result<LossParts> {
        let n = b.masks.len();
        let (_, fh, fw) = self.generator.feature_dims();
        let ones = vec![constant_mask(1, fh, fw)?; n];
        let zeros = vec![constant_mask(0, fh, fw)?; n];
        let mut g = Graph::new();
        let gp = self.generator.params.bind(&mut g, true);
        let dp = self.discriminator.params.bind(&mut g, false);
        let (x1, x2) = (g.constant(b.x1.clone()), g.constant(b.x2.clone()));
        let mut f = Forward::new(&mut g, &gp, true);
        let e1 = self.generator.encode(&mut f, x1)?;
        let e2 = self.generator.encode(&mut f, x2)?;
        let decode = |f: &mut Forward<'_, T>, masks: &[MixMask]| -> Result<_> {
            let mixed = mix_vars(f.g, e1, e2, masks)?;
            self.generator.decode(f, mixed)
        };
        let mix = decode(&mut f, &b.masks)?;
        let rec1 = decode(&mut f, &ones)?;
        let rec2 = decode(&mut f, &zeros)?;
        let mut fd = Forward::new(f.g, &dp, true);
        let scores = self.discriminator.forward(&mut fd, mix)?;
        let g = fd.g;
        let l_rec = reconstruction_loss(g, rec1, x1, rec2, x2)?;
        let p1 = perceptual_loss(g, rec1, x1, self.config.pyramid_levels)?;
        let p2 = perceptual_loss(g, rec2, x2, self.config.pyramid_levels)?;
        let l_per = g.add(p1, p2)?;
        let l_adv = lsgan_g_loss(g, scores);
        let total = generator_total_loss_var(g, l_rec, l_per, l_adv, &self.config.loss_weights)?;
        let parts = LossParts {
            rec: g.value(l_rec).item().as_f64(),
            per: g.value(l_per).item().as_f64(),
            gdisc: g.value(l_adv).item().as_f64(),
        };
        if g.value(total).item().is_finite() {
            let mut grads = g.backward(total);
            let grads = collect_grads(&gp, &mut grads);
            self.g_opt.step(&mut self.generator.params, &grads, lr)?;
        }
        Ok(parts)
    }

    /// One D-then-G iteration.
    pub fn iteration(&mut self, ds: &LabeledImageDataset, anchors: &[usize], lr: f64) -> Result<(f64, LossParts)> {
        let b = self.prepare(ds, anchors)?;
        let d = self.d_step(&b, lr)?;
        let parts = self.g_step(&b, lr)?;
        Ok((d, parts))
    }

    pub fn run_epoch(&mut self, ds: &LabeledImageDataset, epoch: usize) -> Result<GenEpochMetrics> {
        let lr = self.config.lr_at(epoch);
        let order = epoch_order(ds.len(), self.repeats, &mut self.rng);
        let mut m = GenEpochMetrics {
            epoch,
            lr,
            ..Default::default()
        };
        let mut iters = 0usize;
        for (it, anchors) in order.chunks(self.config.batch_size).enumerate() {
            let (d, p) = self.iteration(ds, anchors, lr)?;
            m.l_ddisc += check_finite("l_ddisc", d, epoch, it)?;
            m.l_rec += check_finite("l_rec", p.rec, epoch, it)?;
            m.l_per += check_finite("l_per", p.per, epoch, it)?;
            m.l_gdisc += check_finite("l_gdisc", p.gdisc, epoch, it)?;
            iters += 1;
        }
        let k = iters.max(1) as f64;
        m.l_rec /= k;
        m.l_per /= k;
        m.l_gdisc /= k;
        m.l_ddisc /= k;
        Ok(m)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint<T>> {
        generator_checkpoint(&self.generator, &self.discriminator)
    }
}

fn to_json<S: Serialize>(v: &S) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn generator_checkpoint<T: Scalar>(gen: &Generator<T>, disc: &Discriminator<T>) -> Result<Checkpoint<T>> {
    let config = serde_json::json!({
        "generator": to_json(&gen.config)?,
        "discriminator": to_json(&disc.config)?,
    });
    let mut c = Checkpoint::new(GENERATOR_CHECKPOINT_KIND, config);
    c.push_store("generator", &gen.params);
    c.push_store("discriminator", &disc.params);
    Ok(c)
}

/// Restores the generator stored in a checkpoint. When `expected` is given,
/// the stored generator config must equal it.
pub fn load_generator<T: Scalar>(ckpt: &Checkpoint<T>, expected: Option<&GeneratorConfig>) -> Result<Generator<T>> {
    ckpt.expect_kind(GENERATOR_CHECKPOINT_KIND)?;
    let stored = ckpt
        .config
        .get("generator")
        .ok_or_else(|| Error::Checkpoint("checkpoint has no generator config".into()))?;
    if let Some(exp) = expected {
        let diff = crate::checkpoint::config_diff(stored, &to_json(exp)?);
        if !diff.is_empty() {
            return Err(Error::ConfigMismatch(diff.into_iter().map(|d| format!("generator.{d}")).collect()));
        }
    }
    let cfg: GeneratorConfig =
        serde_json::from_value(stored.clone()).map_err(|e| Error::Checkpoint(format!("generator config: {e}")))?;
    let mut gen = Generator::new(cfg, 0)?;
    ckpt.fill_store("generator", &mut gen.params)?;
    Ok(gen)
}

pub fn load_discriminator<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Discriminator<T>> {
    ckpt.expect_kind(GENERATOR_CHECKPOINT_KIND)?;
    let stored = ckpt
        .config
        .get("discriminator")
        .ok_or_else(|| Error::Checkpoint("checkpoint has no discriminator config".into()))?;
    let cfg: DiscriminatorConfig =
        serde_json::from_value(stored.clone()).map_err(|e| Error::Checkpoint(format!("discriminator config: {e}")))?;
    let mut d = Discriminator::new(cfg, 0)?;
    ckpt.fill_store("discriminator", &mut d.params)?;
    Ok(d)
}

pub struct GenTrainOutcome<T: Scalar> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub metrics: Vec<GenEpochMetrics>,
}

/// Full generator training. With `out_dir`, the metrics CSV is rewritten
/// after every epoch and checkpoints are written there.
#[allow(clippy::too_many_arguments)]
pub fn train_generator<T: Scalar>(
    ds: &LabeledImageDataset,
    gen_cfg: GeneratorConfig,
    disc_cfg: DiscriminatorConfig,
    config: GenTrainConfig,
    masks: MaskSampler,
    init_seed: u64,
    train_seed: u64,
    out_dir: Option<&Path>,
) -> Result<GenTrainOutcome<T>> {
    let mut tr = GanTrainer::new(ds, gen_cfg, disc_cfg, config, masks, init_seed, train_seed)?;
    let mut metrics = Vec::with_capacity(tr.config.epochs);
    for epoch in 0..tr.config.epochs {
        metrics.push(tr.run_epoch(ds, epoch)?);
        if let Some(dir) = out_dir {
            let path = dir.join("metrics.csv");
            std::fs::write(&path, gen_metrics_csv(&metrics)).map_err(|e| Error::io(&path, e))?;
            let every = tr.config.checkpoint_every;
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < tr.config.epochs {
                tr.checkpoint()?.save(&dir.join(format!("generator-epoch{:04}.ckpt", epoch + 1)))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        tr.checkpoint()?.save(&dir.join("generator.ckpt"))?;
    }
    Ok(GenTrainOutcome {
        generator: tr.generator,
        discriminator: tr.discriminator,
        metrics,
    })
}

// ---- classifier ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub repetition_base: usize,
    pub replace_prob: f64,
    pub replacement: Replacement,
    /// Random horizontal flips and 4-pixel padded crops.
    pub base_augment: bool,
}

impl Default for ClsTrainConfig {
    fn default() -> Self {
        ClsTrainConfig {
            epochs: 200,
            batch_size: 10,
            lr: 0.0046,
            momentum: 0.9,
            weight_decay: 0.0053,
            repetition_base: 500,
            replace_prob: 0.5,
            replacement: Replacement::WholeBatch,
            base_augment: false,
        }
    }
}

impl ClsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.repetition_base == 0 {
            return Err(Error::Invalid("epochs, batch_size and repetition_base must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.replace_prob) {
            return Err(Error::Invalid(format!("replace_prob {} outside [0, 1]", self.replace_prob)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClsEpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub replaced_batches: usize,
    /// Test accuracy after the epoch, when a test set was given.
    pub acc: Option<f64>,
}

pub const CLS_METRICS_HEADER: &str = "epoch,lr,loss,replaced_batches,acc";

pub fn cls_metrics_csv(rows: &[ClsEpochMetrics]) -> String {
    let mut s = format!("{CLS_METRICS_HEADER}\n");
    for r in rows {
        let acc = r.acc.map(|a| format!("{a}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:e},{:e},{},{}", r.epoch, r.lr, r.loss, r.replaced_batches, acc);
    }
    s
}

pub struct ClsTrainOutcome<T: Scalar> {
    pub classifier: Classifier<T>,
    pub metrics: Vec<ClsEpochMetrics>,
    pub final_acc: Option<f64>,
    pub best_acc: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn flip_and_crop<R: Rng + ?Sized>(x: &mut Tensor<f32>, rng: &mut R) {
    const PAD: i64 = 4;
    let (n, c, h, w) = x.dims4();
    for i in 0..n {
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(-PAD..=PAD) as isize;
        let dx = rng.random_range(-PAD..=PAD) as isize;
        let src = x.sample(i).to_vec();
        let dst = x.sample_mut(i);
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = xx as isize + dx;
                    let sx = if flip { w as isize - 1 - sx0 } else { sx0 };
                    let inside = (0..h as isize).contains(&sy) && (0..w as isize).contains(&sx);
                    dst[(ch * h + y) * w + xx] = if inside {
                        src[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

/// Supervised training with cross-entropy, SGD with momentum and a cosine
/// schedule. Batches pass through `augmenter` before the forward pass; the
/// augmenter draws from its own random stream, so `replace_prob = 0`
/// reproduces the plain trainer exactly.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier<T: Scalar>(
    train: &LabeledImageDataset,
    test: Option<&LabeledImageDataset>,
    model_cfg: ClassifierConfig,
    config: &ClsTrainConfig,
    augmenter: &Augmenter<'_>,
    init_seed: u64,
    train_seed: u64,
    mut on_epoch: impl FnMut(&ClsEpochMetrics),
) -> Result<ClsTrainOutcome<T>> {
    config.validate()?;
    let (c, _, _) = train.image_dims();
    if c != model_cfg.channels || train.class_count() != model_cfg.num_classes {
        return Err(Error::Invalid(format!(
            "classifier expects {} channels / {} classes, dataset has {c} / {}",
            model_cfg.channels,
            model_cfg.num_classes,
            train.class_count()
        )));
    }
    let mut model = Classifier::<T>::new(model_cfg, init_seed)?;
    let mut opt = Sgd::new(&model.params, config.momentum, config.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(train_seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(train_seed);
    aug_rng.set_stream(1);
    let mut base_rng = ChaCha8Rng::seed_from_u64(train_seed);
    base_rng.set_stream(2);
    let spc = train.class_indices().iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(1);
    let repeats = repetition_factor(spc, config.repetition_base)?;
    let mut metrics = Vec::with_capacity(config.epochs);
    let (mut best_acc, mut best_epoch) = (None::<f64>, None);
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr);
        let order = epoch_order(train.len(), repeats, &mut order_rng);
        let mut m = ClsEpochMetrics {
            epoch,
            lr,
            ..Default::default()
        };
        let mut iters = 0;
        for (it, idx) in order.chunks(config.batch_size).enumerate() {
            let (mut images, replaced) = augmenter.augment_batch(train, idx, &mut aug_rng)?;
            m.replaced_batches += (replaced > 0) as usize;
            if config.base_augment {
                flip_and_crop(&mut images, &mut base_rng);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let x = g.constant(to_model_range::<T>(&images));
            let mut f = Forward::new(&mut g, &p, true);
            let logits = model.forward(&mut f, x)?;
            let updates = std::mem::take(&mut f.bn_updates);
            let loss = g.cross_entropy(logits, &labels)?;
            let value = check_finite("classifier loss", g.value(loss).item().as_f64(), epoch, it)?;
            let mut grads = g.backward(loss);
            let grads = collect_grads(&p, &mut grads);
            opt.step(&mut model.params, &grads, lr)?;
            apply_bn_updates(&mut model.params, &updates);
            m.loss += value;
            iters += 1;
        }
        m.loss /= iters.max(1) as f64;
        if let Some(test) = test {
            let acc = evaluate_accuracy(&model, test)?;
            m.acc = Some(acc);
            if best_acc.is_none_or(|b| acc > b) {
                best_acc = Some(acc);
                best_epoch = Some(epoch);
            }
        }
        on_epoch(&m);
        metrics.push(m);
    }
    let final_acc = metrics.last().and_then(|m| m.acc);
    Ok(ClsTrainOutcome {
        classifier: model,
        metrics,
        final_acc,
        best_acc,
        best_epoch,
    })
}

pub fn classifier_checkpoint<T: Scalar>(model: &Classifier<T>) -> Result<Checkpoint<T>> {
    let mut c = Checkpoint::new(CLASSIFIER_CHECKPOINT_KIND, serde_json::json!({ "classifier": to_json(&model.config)? }));
    c.push_store("classifier", &model.params);
    Ok(c)
}

pub fn load_classifier<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Classifier<T>> {
    ckpt.expect_kind(CLASSIFIER_CHECKPOINT_KIND)?;
    let stored = ckpt
        .config
        .get("classifier")
        .ok_or_else(|| Error::Checkpoint("checkpoint has no classifier config".into()))?;
    let cfg: ClassifierConfig =
        serde_json::from_value(stored.clone()).map_err(|e| Error::Checkpoint(format!("classifier config: {e}")))?;
    let mut model = Classifier::new(cfg, 0)?;
    ckpt.fill_store("classifier", &mut model.params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierArch;
    use crate::model::UpsampleMode;

    fn toy_ds() -> LabeledImageDataset {
        let n = 4;
        let px: Vec<f32> = (0..n * 3 * 16 * 16).map(|i| ((i * 7919) % 101) as f32 / 100.0).collect();
        LabeledImageDataset::new("toy", Tensor::from_vec(&[n, 3, 16, 16], px).unwrap(), vec![0, 0, 1, 1], 2).unwrap()
    }

    fn tiny_gen() -> GeneratorConfig {
        GeneratorConfig {
            channels: 3,
            input_height: 16,
            input_width: 16,
            base_channels: 4,
            n_res_blocks: 2,
            mix_after_block: 1,
            upsample: UpsampleMode::ResizeConv,
            init_std: 0.02,
        }
    }

    fn tiny_disc() -> DiscriminatorConfig {
        DiscriminatorConfig {
            block_channels: vec![4, 8],
            ..DiscriminatorConfig::default()
        }
    }

    fn trainer() -> GanTrainer<f32> {
        let cfg = GenTrainConfig {
            epochs: 1,
            batch_size: 3,
            repetition_base: 4,
            ..GenTrainConfig::default()
        };
        GanTrainer::new(&toy_ds(), tiny_gen(), tiny_disc(), cfg, MaskSampler::Grid { size: 2 }, 0, 1).unwrap()
    }

    #[test]
    fn generator_step_leaves_discriminator_untouched() {
        let ds = toy_ds();
        let mut tr = trainer();
        let b = tr.prepare(&ds, &[0, 2]).unwrap();
        let d_before = tr.discriminator.params.clone();
        let g_before = tr.generator.params.clone();
        tr.g_step(&b, 1e-3).unwrap();
        assert_eq!(tr.discriminator.params, d_before);
        assert_ne!(tr.generator.params, g_before);
        let g_mid = tr.generator.params.clone();
        tr.d_step(&b, 1e-3).unwrap();
        assert_eq!(tr.generator.params, g_mid);
        assert_ne!(tr.discriminator.params, d_before);
    }

    #[test]
    fn iterations_per_epoch_is_ceiling() {
        let tr = trainer();
        // 4 images, repeated 4 / 2 = 2 times, batches of 3.
        assert_eq!(tr.repeats(), 2);
        assert_eq!(tr.iterations_per_epoch(), 3);
    }

    #[test]
    fn generator_checkpoint_round_trip() {
        let tr = trainer();
        let ck = tr.checkpoint().unwrap();
        let bytes = ck.encode();
        let back = Checkpoint::<f32>::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        let g = load_generator(&back, Some(&tiny_gen())).unwrap();
        assert_eq!(g.params, tr.generator.params);
        let other = GeneratorConfig {
            base_channels: 8,
            ..tiny_gen()
        };
        match load_generator(&back, Some(&other)) {
            Err(Error::ConfigMismatch(d)) => assert_eq!(d, vec!["generator.base_channels: stored 4, expected 8"]),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("mismatch accepted"),
        }
    }

    #[test]
    fn zero_replacement_matches_plain_training() {
        let ds = toy_ds();
        let cfg = ClsTrainConfig {
            epochs: 2,
            batch_size: 2,
            repetition_base: 2,
            replace_prob: 0.0,
            ..ClsTrainConfig::default()
        };
        let model = ClassifierConfig {
            arch: ClassifierArch::Tiny { width: 4 },
            channels: 3,
            num_classes: 2,
        };
        let plain = Augmenter::new(&ds, None, None, 0.0, Replacement::WholeBatch).unwrap();
        let a = train_classifier::<f32>(&ds, Some(&ds), model.clone(), &cfg, &plain, 3, 4, |_| {}).unwrap();
        let b = train_classifier::<f32>(&ds, Some(&ds), model, &cfg, &plain, 3, 4, |_| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.classifier.params, b.classifier.params);
        let ck = classifier_checkpoint(&a.classifier).unwrap();
        assert_eq!(load_classifier(&ck).unwrap().params, a.classifier.params);
    }
}
