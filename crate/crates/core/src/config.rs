//! Run configuration: TOML files layered over named presets.
//!
//! A file may name a `preset`; its keys are deep-merged over the preset's
//! tables, then the result must describe every section completely.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::classifier::{ClassifierArch, ClassifierConfig};
use crate::data::{load_cifar_binary, load_image_folder, subsample_indices, LabeledImageDataset};
use crate::error::{Error, Result};
use crate::eval::{FeatureExtractor, MlpExtractor, RandomProjectionExtractor};
use crate::masks::{MaskSampler, SegMaskMode};
use crate::model::{DiscriminatorConfig, GeneratorConfig, UpsampleMode};
use crate::scalar::DType;
use crate::segment::{segment_dataset, FelzParams};
use crate::synthetic::{flat_color_dataset, structured_dataset};
use crate::training::{ClsTrainConfig, GenTrainConfig};

pub const PRESET_NAMES: [&str; 3] = ["cifair-small", "stl-large", "tiny-ci"];

/// File name of the resolved configuration written into every output directory.
pub const SNAPSHOT_NAME: &str = "resolved-config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    CifarBinary,
    ImageFolder,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Three classes told apart by the colour pair of their objects.
    Structured,
    /// One flat noisy colour per class.
    FlatColor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub classes: usize,
    /// Pool the training subsample is drawn from.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    /// The test pool uses `seed + 1`.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub format: DatasetFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub samples_per_class: usize,
}

/// Training pool, the drawn subsample and the optional test set.
pub struct Datasets {
    pub full: LabeledImageDataset,
    pub split: Vec<usize>,
    pub train: LabeledImageDataset,
    pub test: Option<LabeledImageDataset>,
}

fn load_path(format: DatasetFormat, path: &Path) -> Result<LabeledImageDataset> {
    match format {
        DatasetFormat::CifarBinary => load_cifar_binary(path),
        DatasetFormat::ImageFolder => load_image_folder(path).map(|(ds, _)| ds),
        DatasetFormat::Synthetic => unreachable!("synthetic data has no path"),
    }
}

/// Guess the on-disk format: directories are image folders, files CIFAR binaries.
pub fn load_dataset_auto(path: &Path) -> Result<LabeledImageDataset> {
    if path.is_dir() {
        load_path(DatasetFormat::ImageFolder, path)
    } else {
        load_path(DatasetFormat::CifarBinary, path)
    }
}

impl DatasetSpec {
    pub fn load(&self, split_seed: u64) -> Result<Datasets> {
        let (full, test) = match self.format {
            DatasetFormat::Synthetic => {
                let s = self.synthetic.as_ref().ok_or_else(|| missing("dataset.synthetic"))?;
                let make = |per_class, seed| match s.kind {
                    SyntheticKind::Structured => structured_dataset(per_class, s.size, seed),
                    SyntheticKind::FlatColor => flat_color_dataset(s.classes, per_class, s.size, seed),
                };
                let test = (s.test_per_class > 0).then(|| make(s.test_per_class, s.seed.wrapping_add(1)));
                (make(s.train_per_class, s.seed), test)
            }
            format => {
                let path = self.path.as_ref().ok_or_else(|| missing("dataset.path"))?;
                let test = self.test_path.as_ref().map(|p| load_path(format, p)).transpose()?;
                (load_path(format, path)?, test)
            }
        };
        if let Some(t) = &test {
            if t.class_count() != full.class_count() || t.image_dims() != full.image_dims() {
                return Err(Error::Dataset(format!(
                    "test set ({} classes, {:?}) does not match training set ({} classes, {:?})",
                    t.class_count(),
                    t.image_dims(),
                    full.class_count(),
                    full.image_dims()
                )));
            }
        }
        let split = subsample_indices(&full, self.samples_per_class, split_seed)?;
        let train = full.subset(&split)?;
        Ok(Datasets {
            full,
            split,
            train,
            test,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Subsample selection.
    pub split: u64,
    /// Weight initialisation.
    pub init: u64,
    /// Data order, pairing, masks and augmentation.
    pub train: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Grid,
    Seg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub kind: MaskKind,
    /// Blocks per side of a grid mask.
    pub grid_size: usize,
    pub segmentation: FelzParams,
    pub seg_mode: SegMaskMode,
    /// Keep segmentations in `segments.bin` inside the output directory.
    pub cache: bool,
}

impl MaskConfig {
    /// Mask sampler of `kind` for `ds`; segmentation runs here when needed.
    pub fn sampler(&self, kind: MaskKind, ds: &LabeledImageDataset, out_dir: Option<&Path>) -> Result<MaskSampler> {
        match kind {
            MaskKind::Grid => Ok(MaskSampler::Grid { size: self.grid_size }),
            MaskKind::Seg => {
                let cache = out_dir.filter(|_| self.cache).map(|d| d.join("segments.bin"));
                Ok(MaskSampler::Segmentation {
                    maps: segment_dataset(ds, &self.segmentation, cache.as_deref())?,
                    mode: self.seg_mode,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExtractorSpec {
    RandomProjection { seed: u64, input_size: usize, dim: usize },
    /// Dense network weights in the JSON layout read by [`MlpExtractor`].
    Mlp { path: PathBuf },
}

impl ExtractorSpec {
    pub fn build(&self, channels: usize) -> Result<Box<dyn FeatureExtractor>> {
        Ok(match self {
            ExtractorSpec::RandomProjection { seed, input_size, dim } => {
                Box::new(RandomProjectionExtractor::new(*seed, channels, *input_size, *dim))
            }
            ExtractorSpec::Mlp { path } => Box::new(MlpExtractor::load(path)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub extractor: ExtractorSpec,
    /// Chimeras generated for FID.
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub precision: DType,
    pub dataset: DatasetSpec,
    pub seeds: Seeds,
    pub masks: MaskConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub generator_training: GenTrainConfig,
    pub classifier: ClassifierConfig,
    pub classifier_training: ClsTrainConfig,
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed_split: Option<u64>,
    pub seed_train: Option<u64>,
    pub samples_per_class: Option<usize>,
    pub mask: Option<MaskKind>,
    pub output_dir: Option<PathBuf>,
}

fn missing(path: &str) -> Error {
    Error::Config {
        path: path.into(),
        message: "missing required key".into(),
    }
}

fn invalid(path: &str, e: Error) -> Error {
    let message = match e {
        Error::Invalid(m) => m,
        other => other.to_string(),
    };
    Error::Config {
        path: path.into(),
        message,
    }
}

fn cifair_small() -> RunConfig {
    RunConfig {
        output_dir: "runs/cifair-small".into(),
        precision: DType::F32,
        dataset: DatasetSpec {
            format: DatasetFormat::CifarBinary,
            path: None,
            test_path: None,
            synthetic: None,
            samples_per_class: 5,
        },
        seeds: Seeds {
            split: 0,
            init: 0,
            train: 0,
        },
        masks: MaskConfig {
            kind: MaskKind::Grid,
            grid_size: 4,
            segmentation: FelzParams::default(),
            seg_mode: SegMaskMode::SingleRegion,
            cache: true,
        },
        generator: GeneratorConfig::default(),
        discriminator: DiscriminatorConfig::default(),
        generator_training: GenTrainConfig::default(),
        classifier: ClassifierConfig {
            arch: ClassifierArch::WideResnet { depth: 16, widen: 8 },
            channels: 3,
            num_classes: 10,
        },
        classifier_training: ClsTrainConfig::default(),
        eval: EvalConfig {
            extractor: ExtractorSpec::RandomProjection {
                seed: 0,
                input_size: 32,
                dim: 64,
            },
            n_samples: 1000,
            seed: 0,
        },
    }
}

fn stl_large() -> RunConfig {
    let mut c = cifair_small();
    c.output_dir = "runs/stl-large".into();
    c.dataset.format = DatasetFormat::ImageFolder;
    c.dataset.samples_per_class = 10;
    c.masks.segmentation.scale = 400.0;
    c.masks.segmentation.min_size = 400;
    c.generator.input_height = 96;
    c.generator.input_width = 96;
    c.generator_training.batch_size = 8;
    c.generator_training.repetition_base = 120;
    c.classifier.arch = ClassifierArch::Resnet50;
    c.classifier_training.batch_size = 16;
    c.classifier_training.lr = 0.0074;
    c.classifier_training.weight_decay = 0.00041;
    c.classifier_training.repetition_base = 120;
    c.eval.extractor = ExtractorSpec::RandomProjection {
        seed: 0,
        input_size: 48,
        dim: 64,
    };
    c
}

fn tiny_ci() -> RunConfig {
    let mut c = cifair_small();
    c.output_dir = "runs/tiny-ci".into();
    c.dataset = DatasetSpec {
        format: DatasetFormat::Synthetic,
        path: None,
        test_path: None,
        synthetic: Some(SyntheticSpec {
            kind: SyntheticKind::Structured,
            classes: 3,
            train_per_class: 20,
            test_per_class: 100,
            size: 32,
            seed: 0,
        }),
        samples_per_class: 5,
    };
    c.generator = GeneratorConfig {
        input_height: 32,
        input_width: 32,
        base_channels: 8,
        upsample: UpsampleMode::ResizeConv,
        ..GeneratorConfig::default()
    };
    c.discriminator.block_channels = vec![8, 16, 16, 32];
    c.generator_training = GenTrainConfig {
        epochs: 30,
        batch_size: 8,
        lr_milestones: vec![],
        repetition_base: 20,
        ..GenTrainConfig::default()
    };
    c.classifier = ClassifierConfig {
        arch: ClassifierArch::Tiny { width: 8 },
        channels: 3,
        num_classes: 3,
    };
    c.classifier_training = ClsTrainConfig {
        epochs: 15,
        lr: 0.05,
        weight_decay: 5e-4,
        repetition_base: 50,
        ..ClsTrainConfig::default()
    };
    c.eval = EvalConfig {
        extractor: ExtractorSpec::RandomProjection {
            seed: 0,
            input_size: 16,
            dim: 32,
        },
        n_samples: 64,
        seed: 0,
    };
    c
}

/// Fully populated configuration of a named preset.
pub fn preset_config(name: &str) -> Result<RunConfig> {
    match name {
        "cifair-small" => Ok(cifair_small()),
        "stl-large" => Ok(stl_large()),
        "tiny-ci" => Ok(tiny_ci()),
        other => Err(Error::Config {
            path: "preset".into(),
            message: format!("unknown preset `{other}`, expected one of {}", PRESET_NAMES.join(", ")),
        }),
    }
}

fn to_table(cfg: &RunConfig) -> Result<Table> {
    match Value::try_from(cfg) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => unreachable!("structs serialise to tables"),
        Err(e) => Err(Error::Config {
            path: String::new(),
            message: e.to_string(),
        }),
    }
}

pub fn preset_table(name: &str) -> Result<Table> {
    to_table(&preset_config(name)?)
}

/// Tables holding internally tagged enums; a different `kind` starts afresh.
const TAGGED_TABLES: [&str; 2] = ["classifier.arch", "eval.extractor"];

/// Recursively overlay `over` onto `base`. Tables merge key by key; any
/// other value, arrays included, replaces the base value.
pub fn merge_tables(base: &mut Table, over: Table) {
    merge_at(base, over, "");
}

fn merge_at(base: &mut Table, over: Table, prefix: &str) {
    for (key, value) in over {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o))
                if !TAGGED_TABLES.contains(&path.as_str()) || o.get("kind").is_none() || b.get("kind") == o.get("kind") =>
            {
                merge_at(b, o, &path)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn from_table(table: Table) -> Result<RunConfig> {
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let mut path = e.path().to_string();
        if path == "." {
            path.clear();
        }
        let message = e.into_inner().to_string();
        let message = message.lines().next().unwrap_or_default().trim().to_string();
        // Missing keys are reported against their parent; name the key itself.
        if let Some(key) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            path = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
        }
        Error::Config { path, message }
    })
}

impl RunConfig {
    /// Parse TOML text; relative paths stay relative.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::Config {
            path: String::new(),
            message: e.to_string().trim().to_string(),
        })?;
        if let Some(p) = table.remove("preset") {
            let name = p.as_str().ok_or_else(|| Error::Config {
                path: "preset".into(),
                message: "expected a string".into(),
            })?;
            let mut base = preset_table(name)?;
            merge_tables(&mut base, table);
            table = base;
        }
        from_table(table)
    }

    /// Read a file and resolve its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(dir);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.dataset.path.as_mut().map(fix);
        self.dataset.test_path.as_mut().map(fix);
        if let ExtractorSpec::Mlp { path } = &mut self.eval.extractor {
            fix(path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed_split {
            self.seeds.split = s;
        }
        if let Some(s) = o.seed_train {
            self.seeds.train = s;
        }
        if let Some(n) = o.samples_per_class {
            self.dataset.samples_per_class = n;
        }
        if let Some(m) = o.mask {
            self.masks.kind = m;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    /// Semantic checks beyond the schema, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.samples_per_class == 0 {
            return Err(invalid("dataset.samples_per_class", Error::Invalid("must be >= 1".into())));
        }
        match d.format {
            DatasetFormat::Synthetic => {
                let s = d.synthetic.as_ref().ok_or_else(|| missing("dataset.synthetic"))?;
                if s.kind == SyntheticKind::Structured && s.classes != 3 {
                    return Err(invalid(
                        "dataset.synthetic.classes",
                        Error::Invalid(format!("the structured dataset has 3 classes, got {}", s.classes)),
                    ));
                }
                if s.classes < 2 || s.size < 8 || s.train_per_class < d.samples_per_class {
                    return Err(invalid(
                        "dataset.synthetic",
                        Error::Invalid("needs >= 2 classes, size >= 8 and train_per_class >= samples_per_class".into()),
                    ));
                }
            }
            _ => {
                let path = d.path.as_ref().ok_or_else(|| missing("dataset.path"))?;
                if !path.exists() {
                    return Err(invalid("dataset.path", Error::Invalid(format!("{} does not exist", path.display()))));
                }
            }
        }
        if let Some(p) = &d.test_path {
            if !p.exists() {
                return Err(invalid("dataset.test_path", Error::Invalid(format!("{} does not exist", p.display()))));
            }
        }
        if let ExtractorSpec::Mlp { path } = &self.eval.extractor {
            if !path.exists() {
                return Err(invalid("eval.extractor.path", Error::Invalid(format!("{} does not exist", path.display()))));
            }
        }
        if self.masks.grid_size == 0 {
            return Err(invalid("masks.grid_size", Error::Invalid("must be >= 1".into())));
        }
        self.masks.segmentation.validate().map_err(|e| invalid("masks.segmentation", e))?;
        self.generator.validate().map_err(|e| invalid("generator", e))?;
        self.discriminator.validate().map_err(|e| invalid("discriminator", e))?;
        self.generator_training.validate().map_err(|e| invalid("generator_training", e))?;
        self.classifier.validate().map_err(|e| invalid("classifier", e))?;
        self.classifier_training.validate().map_err(|e| invalid("classifier_training", e))?;
        if self.discriminator.channels != self.generator.channels {
            return Err(invalid(
                "discriminator.channels",
                Error::Invalid(format!("{} but the generator has {}", self.discriminator.channels, self.generator.channels)),
            ));
        }
        if self.discriminator.output_size(self.generator.input_height, self.generator.input_width).is_none() {
            return Err(invalid(
                "discriminator",
                Error::Invalid("receptive field exceeds the generator output".into()),
            ));
        }
        if self.eval.n_samples < 2 {
            return Err(invalid("eval.n_samples", Error::Invalid("must be >= 2".into())));
        }
        Ok(())
    }

    /// Check the loaded data against the model shapes.
    pub fn check_data(&self, data: &Datasets) -> Result<()> {
        let (c, _, _) = data.train.image_dims();
        if c != self.generator.channels || c != self.classifier.channels {
            return Err(invalid(
                "generator.channels",
                Error::Invalid(format!("dataset images have {c} channels")),
            ));
        }
        if data.train.class_count() != self.classifier.num_classes {
            return Err(invalid(
                "classifier.num_classes",
                Error::Invalid(format!("dataset has {} classes", data.train.class_count())),
            ));
        }
        Ok(())
    }

    /// TOML text that parses back to an identical configuration.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: String::new(),
            message: e.to_string(),
        })
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(SNAPSHOT_NAME);
        std::fs::write(&path, self.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESET_NAMES {
            let cfg = preset_config(name).unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
        }
        tiny_ci().validate().unwrap();
        assert!(matches!(cifair_small().validate(), Err(Error::Config { path, .. }) if path == "dataset.path"));
    }

    #[test]
    fn preset_carries_the_tabulated_hyperparameters() {
        let c = preset_config("cifair-small").unwrap();
        assert_eq!(c.generator_training.lr, 0.0002);
        assert_eq!(c.generator_training.lr_milestones, vec![60, 120, 160]);
        assert_eq!(c.generator_training.batch_size, 64);
        assert_eq!((c.generator.input_height, c.generator.n_res_blocks, c.generator.mix_after_block), (64, 4, 2));
        assert_eq!(c.masks.grid_size, 4);
        assert_eq!((c.masks.segmentation.scale, c.masks.segmentation.min_size), (60.0, 60));
        assert_eq!((c.classifier_training.lr, c.classifier_training.weight_decay), (0.0046, 0.0053));
        let s = preset_config("stl-large").unwrap();
        assert_eq!((s.generator_training.batch_size, s.generator_training.repetition_base), (8, 120));
        assert_eq!((s.classifier_training.batch_size, s.classifier_training.lr), (16, 0.0074));
        assert_eq!(s.classifier.arch, ClassifierArch::Resnet50);
    }

    #[test]
    fn file_keys_override_preset_keys() {
        let cfg = RunConfig::from_toml_str(
            "preset = \"tiny-ci\"\n[generator_training]\nepochs = 3\n[dataset.synthetic]\nkind = \"flat-color\"\nclasses = 2\n[masks]\nkind = \"seg\"\n",
        )
        .unwrap();
        assert_eq!((cfg.masks.kind, cfg.masks.grid_size), (MaskKind::Seg, 4));
        assert_eq!(cfg.generator_training.epochs, 3);
        assert_eq!(cfg.generator_training.batch_size, 8);
        let s = cfg.dataset.synthetic.unwrap();
        assert_eq!((s.kind, s.classes, s.size), (SyntheticKind::FlatColor, 2, 32));
    }

    #[test]
    fn missing_key_error_names_the_full_path() {
        let mut t = preset_table("tiny-ci").unwrap();
        t["generator_training"].as_table_mut().unwrap().remove("epochs");
        let text = toml::to_string(&t).unwrap();
        match RunConfig::from_toml_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "generator_training.epochs"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml_str("preset = \"tiny-ci\"\n[masks]\nkind = \"circle\"\n") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "masks.kind"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::from_toml_str("preset = \"huge\"\n").is_err());
    }

    #[test]
    fn enum_tables_with_a_new_tag_replace_the_preset() {
        let cfg = RunConfig::from_toml_str(
            "preset = \"tiny-ci\"\n[classifier.arch]\nkind = \"wide_resnet\"\ndepth = 16\nwiden = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.classifier.arch, ClassifierArch::WideResnet { depth: 16, widen: 2 });
    }

    #[test]
    fn overrides_apply() {
        let mut c = tiny_ci();
        c.apply(&Overrides {
            seed_split: Some(4),
            seed_train: Some(5),
            samples_per_class: Some(2),
            mask: Some(MaskKind::Seg),
            output_dir: Some("x".into()),
        });
        assert_eq!((c.seeds.split, c.seeds.train, c.seeds.init), (4, 5, 0));
        assert_eq!(c.dataset.samples_per_class, 2);
        assert_eq!(c.masks.kind, MaskKind::Seg);
        assert_eq!(c.output_dir, PathBuf::from("x"));
    }

    #[test]
    fn synthetic_split_is_seeded() {
        let c = tiny_ci();
        let a = c.dataset.load(1).unwrap();
        assert_eq!(a.train.len(), 15);
        assert_eq!(a.test.as_ref().unwrap().len(), 300);
        assert_eq!(a.split, c.dataset.load(1).unwrap().split);
        assert_ne!(a.split, c.dataset.load(2).unwrap().split);
        c.check_data(&a).unwrap();
    }
}
