//! Labelled image datasets, the small-data subsampling protocol and
//! same-class pair sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// CIFAR-10 binary record: 1 label byte followed by three 32x32 planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

/// Images with class labels. Pixel intensities live in `[0, 1]` and are
/// stored as an `[N, C, H, W]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageDataset {
    pub name: String,
    images: Tensor<f32>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledImageDataset {
    pub fn new(
        name: impl Into<String>,
        images: Tensor<f32>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Dataset("dataset must contain at least one image".into()));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::LabelRange {
                record,
                label,
                classes: class_count,
            });
        }
        Ok(LabeledImageDataset {
            name: name.into(),
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `(channels, height, width)`.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dims4();
        (c, h, w)
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.sample(i)
    }

    /// Indices of every sample, grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        LabeledImageDataset::new(
            self.name.clone(),
            self.images.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    /// Batch of images at `indices`.
    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        self.images.select(indices)
    }
}

/// Decode the CIFAR-10 binary layout.
pub fn parse_cifar_binary(bytes: &[u8], name: &str) -> Result<LabeledImageDataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "{name}: length {} is not a positive multiple of the {CIFAR_RECORD_LEN}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelRange {
                record: i,
                label,
                classes: CIFAR_CLASSES,
            });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::from_vec(&[n, 3, 32, 32], pixels)?;
    LabeledImageDataset::new(name, images, labels, CIFAR_CLASSES)
}

pub fn load_cifar_binary(path: &Path) -> Result<LabeledImageDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_binary(&bytes, &path.display().to_string())
}

/// Inverse of [`parse_cifar_binary`] for 32x32x3 datasets with < 256 classes.
pub fn encode_cifar_binary(ds: &LabeledImageDataset) -> Result<Vec<u8>> {
    if ds.image_dims() != (3, 32, 32) {
        return Err(Error::Dataset(format!(
            "CIFAR layout needs 3x32x32 images, got {:?}",
            ds.image_dims()
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD_LEN);
    for i in 0..ds.len() {
        out.push(ds.labels[i] as u8);
        out.extend(ds.image(i).iter().map(|&v| to_byte(v)));
    }
    Ok(out)
}

pub fn write_cifar_binary(ds: &LabeledImageDataset, path: &Path) -> Result<()> {
    let bytes = encode_cifar_binary(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load `root/<class>/<image>` trees. Classes are labelled in lexicographic
/// directory order and images are read as RGB.
pub fn load_image_folder(root: &Path) -> Result<(LabeledImageDataset, Vec<String>)> {
    let mut classes: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no class directories found",
            root.display()
        )));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut size: Option<(u32, u32, String)> = None;
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory {} is empty", dir.display())));
        }
        for file in files {
            let img = image::open(&file)?.to_rgb8();
            let (w, h) = img.dimensions();
            match &size {
                None => size = Some((w, h, file.display().to_string())),
                Some((w0, h0, first)) if (*w0, *h0) != (w, h) => {
                    return Err(Error::Dataset(format!(
                        "{} is {w}x{h} but {first} is {w0}x{h0}",
                        file.display()
                    )));
                }
                _ => {}
            }
            let (w, h) = (w as usize, h as usize);
            let raw = img.into_raw();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        pixels.push(raw[(y * w + x) * 3 + c] as f32 / 255.0);
                    }
                }
            }
            labels.push(label);
        }
    }
    let (w, h, _) = size.expect("at least one image");
    let images = Tensor::from_vec(&[labels.len(), 3, h as usize, w as usize], pixels)?;
    let ds = LabeledImageDataset::new(root.display().to_string(), images, labels, classes.len())?;
    Ok((ds, classes))
}

/// Indices of `n` samples per class drawn uniformly without replacement.
pub fn subsample_indices(ds: &LabeledImageDataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * ds.class_count());
    for (class, mut members) in ds.class_indices().into_iter().enumerate() {
        if members.len() < n {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples, {n} requested",
                members.len()
            )));
        }
        let (chosen, _) = members.partial_shuffle(&mut rng, n);
        out.extend_from_slice(chosen);
    }
    Ok(out)
}

pub fn subsample_per_class(ds: &LabeledImageDataset, n: usize, seed: u64) -> Result<LabeledImageDataset> {
    ds.subset(&subsample_indices(ds, n, seed)?)
}

/// Split manifest: one `index<TAB>label` line per selected sample.
pub fn format_manifest(ds: &LabeledImageDataset, indices: &[usize]) -> String {
    let mut s = String::new();
    for &i in indices {
        s.push_str(&format!("{i}\t{}\n", ds.labels()[i]));
    }
    s
}

pub fn write_manifest(ds: &LabeledImageDataset, indices: &[usize], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_manifest(ds, indices).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &str) -> Result<Vec<(usize, usize)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(ln, line)| {
            let mut it = line.split('\t');
            let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<usize>().ok());
            match (parse(it.next()), parse(it.next())) {
                (Some(i), Some(l)) => Ok((i, l)),
                _ => Err(Error::Format(format!("manifest line {}: `{line}`", ln + 1))),
            }
        })
        .collect()
}

/// How many times the training data is traversed per epoch:
/// `max(1, floor(base / samples_per_class))`.
pub fn repetition_factor(samples_per_class: usize, base: usize) -> Result<usize> {
    if samples_per_class == 0 || base == 0 {
        return Err(Error::Invalid(format!(
            "repetition_factor needs positive inputs, got spc={samples_per_class} base={base}"
        )));
    }
    Ok((base / samples_per_class).max(1))
}

/// Anchor order for one epoch: every index `repeats` times, shuffled.
pub fn epoch_order<R: Rng + ?Sized>(n: usize, repeats: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..repeats).flat_map(|_| 0..n).collect();
    order.shuffle(rng);
    order
}

/// Two aligned image batches whose entries share a class label.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub first: Tensor<f32>,
    pub second: Tensor<f32>,
    pub labels: Vec<usize>,
    pub first_indices: Vec<usize>,
    pub second_indices: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws same-class partners for anchor images.
#[derive(Clone, Debug)]
pub struct PairSampler {
    by_class: Vec<Vec<usize>>,
}

impl PairSampler {
    pub fn new(ds: &LabeledImageDataset) -> Self {
        PairSampler {
            by_class: ds.class_indices(),
        }
    }

    /// Uniform draw from the anchor's class (the anchor itself included, so a
    /// single-member class pairs with itself).
    pub fn partner<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> usize {
        let members = &self.by_class[label];
        members[rng.random_range(0..members.len())]
    }

    pub fn pairs_for<R: Rng + ?Sized>(
        &self,
        ds: &LabeledImageDataset,
        anchors: &[usize],
        rng: &mut R,
    ) -> PairBatch {
        let labels: Vec<usize> = anchors.iter().map(|&i| ds.labels()[i]).collect();
        let partners: Vec<usize> = labels.iter().map(|&l| self.partner(l, rng)).collect();
        PairBatch {
            first: ds.gather(anchors),
            second: ds.gather(&partners),
            labels,
            first_indices: anchors.to_vec(),
            second_indices: partners,
        }
    }
}

/// Uniformly drawn anchors, each with a uniformly drawn same-class partner.
pub fn sample_same_class_pairs<R: Rng + ?Sized>(
    ds: &LabeledImageDataset,
    batch: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot sample pairs from an empty dataset".into()));
    }
    let sampler = PairSampler::new(ds);
    let anchors: Vec<usize> = (0..batch).map(|_| rng.random_range(0..ds.len())).collect();
    Ok(sampler.pairs_for(ds, &anchors, rng))
}
