//! Binary mixing masks at feature resolution.
//!
//! A mask value of 1 selects the first parent's feature vector at that
//! location, 0 selects the second parent's.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Resample1d;
use crate::segment::SegmentationMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrigin {
    Grid,
    Segmentation,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixMask {
    pub height: usize,
    pub width: usize,
    values: Vec<bool>,
    pub origin: MaskOrigin,
}

impl MixMask {
    pub fn from_bits(height: usize, width: usize, values: Vec<bool>, origin: MaskOrigin) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {height}x{width} needs {} entries, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(MixMask {
            height,
            width,
            values,
            origin,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn ones_fraction(&self) -> f64 {
        self.ones() as f64 / self.values.len() as f64
    }

    /// All-zero masks reduce a mix to a reconstruction of the second parent.
    pub fn is_degenerate(&self) -> bool {
        self.ones() == 0
    }

    pub fn complement(&self) -> Self {
        MixMask {
            values: self.values.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    /// Nearest-neighbour resize to `height x width`.
    pub fn upsample_nearest(&self, height: usize, width: usize) -> Vec<bool> {
        let rows = Resample1d::nearest(self.height, height);
        let cols = Resample1d::nearest(self.width, width);
        let mut out = Vec::with_capacity(height * width);
        for r in &rows.taps {
            for c in &cols.taps {
                out.push(self.values[r[0].0 * self.width + c[0].0]);
            }
        }
        out
    }
}

/// Flatten per-sample masks into the `[N, H, W]` layout used by the mixer.
pub fn stack_masks(masks: &[MixMask]) -> Vec<bool> {
    masks.iter().flat_map(|m| m.values.iter().copied()).collect()
}

pub fn constant_mask(value: u8, height: usize, width: usize) -> Result<MixMask> {
    if value > 1 {
        return Err(Error::Invalid(format!("constant mask value must be 0 or 1, got {value}")));
    }
    Ok(MixMask {
        height,
        width,
        values: vec![value == 1; height * width],
        origin: MaskOrigin::Constant,
    })
}

/// A `grid x grid` array of fair coin flips, nearest-upsampled to the feature
/// resolution so the mask is constant on each block.
pub fn sample_grid_mask<R: Rng + ?Sized>(grid: usize, height: usize, width: usize, rng: &mut R) -> Result<MixMask> {
    if grid == 0 || grid > height.min(width) {
        return Err(Error::Invalid(format!(
            "grid size {grid} must be in 1..={} for a {height}x{width} feature map",
            height.min(width)
        )));
    }
    let coarse: Vec<bool> = (0..grid * grid).map(|_| rng.random_bool(0.5)).collect();
    let coarse = MixMask {
        height: grid,
        width: grid,
        values: coarse,
        origin: MaskOrigin::Grid,
    };
    Ok(MixMask {
        height,
        width,
        values: coarse.upsample_nearest(height, width),
        origin: MaskOrigin::Grid,
    })
}

/// Area-average a full-resolution binary region onto the feature grid and
/// threshold at one half (ties become 1).
pub fn downsample_region(region: &[bool], src_h: usize, src_w: usize, height: usize, width: usize) -> Vec<bool> {
    let rows = Resample1d::area(src_h, height);
    let cols = Resample1d::area(src_w, width);
    let src: Vec<f64> = region.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let frac = crate::kernels::resample2d(&src, 1, &rows, &cols);
    frac.iter().map(|&f| f >= 0.5 - 1e-9).collect()
}

/// Mask from one uniformly chosen region of `seg`.
pub fn sample_seg_mask<R: Rng + ?Sized>(seg: &SegmentationMap, height: usize, width: usize, rng: &mut R) -> MixMask {
    let region = rng.random_range(0..seg.region_count.max(1)) as u32;
    let full: Vec<bool> = seg.labels.iter().map(|&l| l == region).collect();
    MixMask {
        height,
        width,
        values: downsample_region(&full, seg.height, seg.width, height, width),
        origin: MaskOrigin::Segmentation,
    }
}

/// Variant that flips a fair coin for every region independently.
pub fn sample_seg_mask_per_region<R: Rng + ?Sized>(
    seg: &SegmentationMap,
    height: usize,
    width: usize,
    rng: &mut R,
) -> MixMask {
    let picks: Vec<bool> = (0..seg.region_count).map(|_| rng.random_bool(0.5)).collect();
    let full: Vec<bool> = seg.labels.iter().map(|&l| picks[l as usize]).collect();
    MixMask {
        height,
        width,
        values: downsample_region(&full, seg.height, seg.width, height, width),
        origin: MaskOrigin::Segmentation,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegMaskMode {
    SingleRegion,
    PerRegion,
}

/// Where a training or augmentation step gets its masks from.
#[derive(Clone, Debug)]
pub enum MaskSampler {
    Grid { size: usize },
    /// One segmentation per dataset image, indexed like the dataset.
    Segmentation { maps: Vec<SegmentationMap>, mode: SegMaskMode },
}

impl MaskSampler {
    /// Mask for a pair whose first parent is dataset image `anchor`.
    pub fn sample<R: Rng + ?Sized>(&self, anchor: usize, height: usize, width: usize, rng: &mut R) -> Result<MixMask> {
        match self {
            MaskSampler::Grid { size } => sample_grid_mask(*size, height, width, rng),
            MaskSampler::Segmentation { maps, mode } => {
                let seg = maps.get(anchor).ok_or_else(|| {
                    Error::Invalid(format!("no segmentation for image {anchor}"))
                })?;
                Ok(match mode {
                    SegMaskMode::SingleRegion => sample_seg_mask(seg, height, width, rng),
                    SegMaskMode::PerRegion => sample_seg_mask_per_region(seg, height, width, rng),
                })
            }
        }
    }
}
