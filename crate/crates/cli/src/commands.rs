//! Subcommand bodies. Each resolves the configuration, takes the output
//! directory lock and then runs at the configured precision.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chimeramix::augment::{sample_chimeras, Augmenter, ChimeraSource, GeneratorMixer, PixelMixer};
use chimeramix::checkpoint::Checkpoint;
use chimeramix::config::{load_dataset_auto, preset_config, Datasets, EvalConfig, MaskKind, Overrides, RunConfig};
use chimeramix::data::{write_manifest, LabeledImageDataset};
use chimeramix::eval::{dataset_stats, evaluate_accuracy, fid as fid_distance, fid_report, FID_RESIZE};
use chimeramix::masks::MaskSampler;
use chimeramix::preview::{save_png, segmentation_overlay, tile_grid};
use chimeramix::segment::felzenszwalb_segment;
use chimeramix::training::{
    classifier_checkpoint, cls_metrics_csv, load_classifier, load_generator, train_classifier as fit_classifier,
    train_generator as fit_generator,
};
use chimeramix::{DType, Error, Result, Scalar};

use crate::lock::DirLock;
use crate::Common;

macro_rules! at_precision {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub enum ClassifierMode {
    Baseline,
    Ablation(MaskKind),
    Generator(PathBuf),
}

fn config_error(path: &str, message: &str) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(p), None) => RunConfig::load(p)?,
        (None, Some(name)) => preset_config(name)?,
        (Some(_), Some(_)) => {
            return Err(config_error(
                "--preset",
                "give either --config or --preset; a config file selects its preset with `preset = \"...\"`",
            ))
        }
        (None, None) => {
            return Err(config_error("--config", "a run configuration is required (--config FILE or --preset NAME)"))
        }
    };
    cfg.apply(&Overrides {
        seed_split: c.seed_split,
        seed_train: c.seed_train,
        samples_per_class: c.samples_per_class,
        mask: c.mask.map(Into::into),
        output_dir: c.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<Datasets> {
    let data = cfg.dataset.load(cfg.seeds.split)?;
    cfg.check_data(&data)?;
    Ok(data)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---- train-generator ----------------------------------------------------------

pub fn train_generator(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = cfg.output_dir.clone();
    let _lock = DirLock::acquire(&out)?;
    cfg.write_snapshot(&out)?;
    let data = load_data(&cfg)?;
    write_manifest(&data.full, &data.split, &out.join("split.tsv"))?;
    let masks = cfg.masks.sampler(cfg.masks.kind, &data.train, Some(&out))?;
    at_precision!(cfg.precision, run_train_generator(&cfg, &data, masks, &out))
}

fn run_train_generator<T: Scalar>(cfg: &RunConfig, data: &Datasets, masks: MaskSampler, out: &Path) -> Result<()> {
    let o = fit_generator::<T>(
        &data.train,
        cfg.generator.clone(),
        cfg.discriminator.clone(),
        cfg.generator_training.clone(),
        masks,
        cfg.seeds.init,
        cfg.seeds.train,
        Some(out),
    )?;
    if let Some(m) = o.metrics.last() {
        println!(
            "epoch {}: l_rec {:.5} l_per {:.4} l_gdisc {:.4} l_ddisc {:.4}",
            m.epoch, m.l_rec, m.l_per, m.l_gdisc, m.l_ddisc
        );
    }
    println!("wrote {}", out.join("generator.ckpt").display());
    Ok(())
}

// ---- sample -------------------------------------------------------------------

pub fn sample(common: &Common, checkpoint: &Path, n: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("samples"));
    let _lock = DirLock::acquire(&out)?;
    if n == 0 {
        return Ok(());
    }
    let data = load_data(&cfg)?;
    let masks = cfg.masks.sampler(cfg.masks.kind, &data.train, None)?;
    at_precision!(cfg.precision, run_sample(&cfg, checkpoint, &data.train, &masks, n, &out))
}

fn run_sample<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    train: &LabeledImageDataset,
    masks: &MaskSampler,
    n: usize,
    out: &Path,
) -> Result<()> {
    let generator = load_generator(&Checkpoint::<T>::load(checkpoint)?, Some(&cfg.generator))?;
    let mixer = GeneratorMixer { generator };
    let (pairs, mixed) = sample_chimeras(&mixer, train, masks, n, cfg.seeds.train)?;
    let (c, h, w) = train.image_dims();
    let tiles: Vec<&[f32]> = (0..n)
        .flat_map(|i| [pairs.first.sample(i), pairs.second.sample(i), mixed.sample(i)])
        .collect();
    let path = out.join("samples.png");
    save_png(&tile_grid(&tiles, 3, c, h, w)?, &path)?;
    println!("wrote {n} rows to {}", path.display());
    Ok(())
}

// ---- train-classifier ---------------------------------------------------------

pub fn train_classifier(common: &Common, mode: ClassifierMode) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let ClassifierMode::Baseline = mode {
        cfg.classifier_training.replace_prob = 0.0;
    }
    let out = cfg.output_dir.clone();
    let _lock = DirLock::acquire(&out)?;
    cfg.write_snapshot(&out)?;
    let data = load_data(&cfg)?;
    let masks = match &mode {
        ClassifierMode::Baseline => None,
        ClassifierMode::Ablation(kind) => Some(cfg.masks.sampler(*kind, &data.train, Some(&out))?),
        ClassifierMode::Generator(_) => Some(cfg.masks.sampler(cfg.masks.kind, &data.train, Some(&out))?),
    };
    at_precision!(cfg.precision, run_train_classifier(&cfg, &mode, &data, masks.as_ref(), &out))
}

fn run_train_classifier<T: Scalar>(
    cfg: &RunConfig,
    mode: &ClassifierMode,
    data: &Datasets,
    masks: Option<&MaskSampler>,
    out: &Path,
) -> Result<()> {
    let pixels;
    let features;
    let (source, label): (Option<&dyn ChimeraSource>, String) = match mode {
        ClassifierMode::Baseline => (None, "baseline".into()),
        ClassifierMode::Ablation(kind) => {
            let (_, h, w) = cfg.generator.feature_dims();
            pixels = PixelMixer {
                mask_height: h,
                mask_width: w,
            };
            let name = match kind {
                MaskKind::Grid => "gridmix",
                MaskKind::Seg => "segmix",
            };
            (Some(&pixels), name.into())
        }
        ClassifierMode::Generator(path) => {
            let generator = load_generator(&Checkpoint::<T>::load(path)?, Some(&cfg.generator))?;
            features = GeneratorMixer { generator };
            (Some(&features), format!("generator {}", path.display()))
        }
    };
    let tc = &cfg.classifier_training;
    let augmenter = Augmenter::new(&data.train, source, masks, tc.replace_prob, tc.replacement)?;
    let o = fit_classifier::<T>(
        &data.train,
        data.test.as_ref(),
        cfg.classifier.clone(),
        tc,
        &augmenter,
        cfg.seeds.init,
        cfg.seeds.train,
        |m| match m.acc {
            Some(acc) => eprintln!("epoch {:>4}  loss {:.4}  acc {acc:.4}", m.epoch, m.loss),
            None => eprintln!("epoch {:>4}  loss {:.4}", m.epoch, m.loss),
        },
    )?;
    write_text(&out.join("cls-metrics.csv"), &cls_metrics_csv(&o.metrics))?;
    classifier_checkpoint(&o.classifier)?.save(&out.join("classifier.ckpt"))?;
    let mut report = String::new();
    let _ = writeln!(report, "mode = {label}");
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6}"));
    let _ = writeln!(report, "final_acc = {}", fmt(o.final_acc));
    let _ = writeln!(report, "best_acc = {}", fmt(o.best_acc));
    let _ = writeln!(report, "best_epoch = {}", o.best_epoch.map_or("n/a".into(), |e| e.to_string()));
    let _ = writeln!(report, "\nepoch,acc");
    for m in &o.metrics {
        let _ = writeln!(report, "{},{}", m.epoch, fmt(m.acc));
    }
    write_text(&out.join("report.txt"), &report)?;
    print!("{}", report.split("\n\n").next().unwrap_or_default());
    println!();
    Ok(())
}

// ---- fid ----------------------------------------------------------------------

pub fn fid(common: &Common, generator: Option<&Path>, pair: Option<(PathBuf, PathBuf)>) -> Result<()> {
    match (generator, pair) {
        (Some(ckpt), _) => {
            let cfg = load_config(common)?;
            let out = cfg.output_dir.clone();
            let _lock = DirLock::acquire(&out)?;
            cfg.write_snapshot(&out)?;
            let data = load_data(&cfg)?;
            let masks = cfg.masks.sampler(cfg.masks.kind, &data.train, Some(&out))?;
            at_precision!(cfg.precision, run_fid(&cfg, ckpt, &data, &masks, &out))
        }
        (None, Some((a, b))) => {
            let eval: EvalConfig = if common.config.is_some() || common.preset.is_some() {
                load_config(common)?.eval
            } else {
                preset_config("cifair-small")?.eval
            };
            let (da, db) = (load_dataset_auto(&a)?, load_dataset_auto(&b)?);
            let (ca, cb) = (da.image_dims().0, db.image_dims().0);
            if ca != cb {
                return Err(Error::Dataset(format!("{} has {ca} channels, {} has {cb}", a.display(), b.display())));
            }
            let extractor = eval.extractor.build(ca)?;
            let value = fid_distance(
                &dataset_stats(extractor.as_ref(), da.images())?,
                &dataset_stats(extractor.as_ref(), db.images())?,
            )?;
            let mut text = String::new();
            let _ = writeln!(text, "fid = {value:.6}");
            let _ = writeln!(text, "extractor = {}", extractor.id());
            let _ = writeln!(text, "resize = {FID_RESIZE}");
            let _ = writeln!(text, "n_a = {}", da.len());
            let _ = writeln!(text, "n_b = {}", db.len());
            if let Some(out) = &common.out {
                let _lock = DirLock::acquire(out)?;
                write_text(&out.join("fid-report.txt"), &text)?;
            }
            print!("{text}");
            Ok(())
        }
        (None, None) => Err(config_error("fid", "pass --generator <ckpt> or both --a and --b")),
    }
}

fn run_fid<T: Scalar>(cfg: &RunConfig, ckpt: &Path, data: &Datasets, masks: &MaskSampler, out: &Path) -> Result<()> {
    let generator = load_generator(&Checkpoint::<T>::load(ckpt)?, Some(&cfg.generator))?;
    let mixer = GeneratorMixer { generator };
    let extractor = cfg.eval.extractor.build(data.train.image_dims().0)?;
    let report = fid_report(
        &mixer,
        masks,
        &data.train,
        data.full.images(),
        extractor.as_ref(),
        cfg.eval.n_samples,
        cfg.eval.seed,
    )?;
    let text = report.to_text();
    write_text(&out.join("fid-report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

// ---- eval ---------------------------------------------------------------------

pub fn eval(common: &Common, checkpoint: &Path, test: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let test = match test {
        Some(p) => load_dataset_auto(p)?,
        None => cfg
            .dataset
            .load(cfg.seeds.split)?
            .test
            .ok_or_else(|| config_error("dataset.test_path", "no test set configured; pass --test"))?,
    };
    let acc = at_precision!(cfg.precision, run_eval(checkpoint, &test))?;
    let text = format!("accuracy = {acc:.6}\nn_test = {}\n", test.len());
    if let Some(out) = &common.out {
        let _lock = DirLock::acquire(out)?;
        cfg.write_snapshot(out)?;
        write_text(&out.join("eval-report.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn run_eval<T: Scalar>(checkpoint: &Path, test: &LabeledImageDataset) -> Result<f64> {
    let model = load_classifier(&Checkpoint::<T>::load(checkpoint)?)?;
    evaluate_accuracy(&model, test)
}

// ---- segment-preview ----------------------------------------------------------

pub fn segment_preview(common: &Common, input: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let images = match input {
        Some(p) => load_dataset_auto(p)?,
        None => load_data(&cfg)?.train,
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("segment-preview"));
    let _lock = DirLock::acquire(&out)?;
    let (c, h, w) = images.image_dims();
    let mut regions = 0;
    for i in 0..images.len() {
        let seg = felzenszwalb_segment(images.image(i), c, h, w, &cfg.masks.segmentation);
        regions += seg.region_count;
        save_png(
            &segmentation_overlay(images.image(i), c, &seg)?,
            &out.join(format!("segment-{i:04}.png")),
        )?;
    }
    println!(
        "wrote {} previews to {} ({:.2} regions per image)",
        images.len(),
        out.display(),
        regions as f64 / images.len() as f64
    );
    Ok(())
}
