//! Graph-based image segmentation (Felzenszwalb & Huttenlocher).
//!
//! Pixels are nodes of a grid graph whose edges carry the Euclidean colour
//! distance of the (Gaussian-smoothed) endpoints, measured on the 0..255
//! intensity scale so that `scale` keeps its customary units. Edges are visited in
//! ascending weight; two components merge when the connecting edge is no
//! heavier than either component's internal difference plus `scale / |C|`.
//! A second pass folds components smaller than `min_size` into a neighbour.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::reflect_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn tag(self) -> u8 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FelzParams {
    /// Merge threshold constant `k`; larger values favour larger regions.
    pub scale: f64,
    /// Minimum region size in pixels.
    pub min_size: usize,
    /// Standard deviation of the pre-smoothing Gaussian, in pixels.
    pub sigma: f64,
    pub connectivity: Connectivity,
}

impl Default for FelzParams {
    fn default() -> Self {
        FelzParams {
            scale: 60.0,
            min_size: 60,
            sigma: 0.8,
            connectivity: Connectivity::Eight,
        }
    }
}

impl FelzParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Invalid(format!("segmentation scale must be > 0, got {}", self.scale)));
        }
        if self.min_size < 1 {
            return Err(Error::Invalid("segmentation min_size must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Invalid(format!("segmentation sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Dense per-pixel region labels `0..region_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub region_count: usize,
}

impl SegmentationMap {
    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Disjoint-set forest with union by size and path halving. Each root also
/// tracks the largest MST edge absorbed so far (the internal difference).
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn size(&self, root: usize) -> usize {
        self.size[root]
    }

    pub fn internal(&self, root: usize) -> f64 {
        self.internal[root]
    }

    /// Merge two roots joined by an edge of weight `w`; returns the new root.
    pub fn union(&mut self, a: usize, b: usize, w: f64) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(w);
        big
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of each channel with mirrored borders.
pub fn gaussian_smooth(image: &[f32], c: usize, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let src: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let t = &mut tmp[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                t[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * plane[y * w + reflect_index(x as isize + j as isize - r, w)])
                    .sum();
            }
        }
        let o = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                o[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * t[reflect_index(y as isize + j as isize - r, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Weighted grid-graph edges `(a, b, weight)`.
pub fn grid_edges(pixels: &[f64], c: usize, h: usize, w: usize, conn: Connectivity) -> Vec<(usize, usize, f64)> {
    let dist = |a: usize, b: usize| -> f64 {
        (0..c)
            .map(|ch| {
                let d = pixels[ch * h * w + a] - pixels[ch * h * w + b];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(h * w * 4);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if x + 1 < w {
                edges.push((a, a + 1, dist(a, a + 1)));
            }
            if y + 1 < h {
                edges.push((a, a + w, dist(a, a + w)));
            }
            if conn == Connectivity::Eight && y + 1 < h {
                if x + 1 < w {
                    edges.push((a, a + w + 1, dist(a, a + w + 1)));
                }
                if x > 0 {
                    edges.push((a, a + w - 1, dist(a, a + w - 1)));
                }
            }
        }
    }
    edges
}

/// Segment one `[C, H, W]` image with intensities in `[0, 1]`.
pub fn felzenszwalb_segment(image: &[f32], c: usize, h: usize, w: usize, params: &FelzParams) -> SegmentationMap {
    assert_eq!(image.len(), c * h * w, "image buffer does not match {c}x{h}x{w}");
    let smoothed: Vec<f64> = gaussian_smooth(image, c, h, w, params.sigma)
        .into_iter()
        .map(|v| v * 255.0)
        .collect();
    let mut edges = grid_edges(&smoothed, c, h, w, params.connectivity);
    // Stable sort keeps ties in raster order, which makes the result deterministic.
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));

    let mut uf = UnionFind::new(h * w);
    for &(a, b, wt) in &edges {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            continue;
        }
        let ta = uf.internal(ra) + params.scale / uf.size(ra) as f64;
        let tb = uf.internal(rb) + params.scale / uf.size(rb) as f64;
        if wt <= ta.min(tb) {
            uf.union(ra, rb, wt);
        }
    }
    for &(a, b, wt) in &edges {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra != rb && (uf.size(ra) < params.min_size || uf.size(rb) < params.min_size) {
            uf.union(ra, rb, wt);
        }
    }

    let mut dense = vec![u32::MAX; h * w];
    let mut labels = Vec::with_capacity(h * w);
    let mut next = 0u32;
    for p in 0..h * w {
        let r = uf.find(p);
        if dense[r] == u32::MAX {
            dense[r] = next;
            next += 1;
        }
        labels.push(dense[r]);
    }
    SegmentationMap {
        height: h,
        width: w,
        labels,
        region_count: next as usize,
    }
}

// ---- cache file -------------------------------------------------------------

const SEG_MAGIC: &[u8; 8] = b"CHMXSEG\0";
const SEG_VERSION: u32 = 1;

/// Content key of an image: SHA-256 over its dimensions and f32 bytes.
pub fn image_key(image: &[f32], c: usize, h: usize, w: usize) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for d in [c, h, w] {
        hasher.update((d as u32).to_le_bytes());
    }
    for v in image {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Precomputed segmentations keyed by image content, for one parameter set.
///
/// Layout (little endian): magic `CHMXSEG\0`, `u32` version, `f64` scale,
/// `u64` min_size, `f64` sigma, `u8` connectivity (4 or 8), `u64` entry
/// count; then per entry a 32-byte key, `u32` height, `u32` width,
/// `u32` region count and `height * width` `u32` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationCache {
    pub params: FelzParams,
    pub entries: Vec<([u8; 32], SegmentationMap)>,
}

impl SegmentationCache {
    pub fn new(params: FelzParams) -> Self {
        SegmentationCache {
            params,
            entries: Vec::new(),
        }
    }

    pub fn lookup(&self, key: &[u8; 32]) -> Option<&SegmentationMap> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, m)| m)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SEG_MAGIC);
        out.extend_from_slice(&SEG_VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.scale.to_le_bytes());
        out.extend_from_slice(&(self.params.min_size as u64).to_le_bytes());
        out.extend_from_slice(&self.params.sigma.to_le_bytes());
        out.push(self.params.connectivity.tag());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, map) in &self.entries {
            out.extend_from_slice(key);
            out.extend_from_slice(&(map.height as u32).to_le_bytes());
            out.extend_from_slice(&(map.width as u32).to_le_bytes());
            out.extend_from_slice(&(map.region_count as u32).to_le_bytes());
            for &l in &map.labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let bad = |m: &str| Error::Format(format!("segmentation cache: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != SEG_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut u32_ = |r: &mut Cursor<&[u8]>| -> Result<u32> {
            r.read_exact(&mut b4).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b4))
        };
        let version = u32_(&mut r)?;
        if version != SEG_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut u64_ = |r: &mut Cursor<&[u8]>| -> Result<u64> {
            r.read_exact(&mut b8).map_err(|_| bad("truncated"))?;
            Ok(u64::from_le_bytes(b8))
        };
        let scale = f64::from_bits(u64_(&mut r)?);
        let min_size = u64_(&mut r)? as usize;
        let sigma = f64::from_bits(u64_(&mut r)?);
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| bad("truncated"))?;
        let connectivity = match tag[0] {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            t => return Err(bad(&format!("connectivity {t}"))),
        };
        let count = u64_(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut key = [0u8; 32];
            r.read_exact(&mut key).map_err(|_| bad("truncated entry"))?;
            let u32_ = |r: &mut Cursor<&[u8]>| -> Result<u32> {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| bad("truncated entry"))?;
                Ok(u32::from_le_bytes(b))
            };
            let height = u32_(&mut r)? as usize;
            let width = u32_(&mut r)? as usize;
            let region_count = u32_(&mut r)? as usize;
            let labels = (0..height * width)
                .map(|_| u32_(&mut r))
                .collect::<Result<Vec<_>>>()?;
            if labels.iter().any(|&l| l as usize >= region_count) {
                return Err(bad("label outside region count"));
            }
            entries.push((
                key,
                SegmentationMap {
                    height,
                    width,
                    labels,
                    region_count,
                },
            ));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(SegmentationCache {
            params: FelzParams {
                scale,
                min_size,
                sigma,
                connectivity,
            },
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Segment every image of a dataset, reusing and refreshing an on-disk cache
/// when `cache_path` is given. A cache built with other parameters is ignored
/// and overwritten.
pub fn segment_dataset(
    ds: &crate::data::LabeledImageDataset,
    params: &FelzParams,
    cache_path: Option<&Path>,
) -> Result<Vec<SegmentationMap>> {
    params.validate()?;
    let (c, h, w) = ds.image_dims();
    let mut cache = match cache_path {
        Some(p) if p.exists() => {
            let cache = SegmentationCache::load(p)?;
            if cache.params == *params {
                cache
            } else {
                SegmentationCache::new(*params)
            }
        }
        _ => SegmentationCache::new(*params),
    };
    let mut dirty = false;
    let mut maps = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let img = ds.image(i);
        let key = image_key(img, c, h, w);
        let map = match cache.lookup(&key) {
            Some(m) => m.clone(),
            None => {
                let m = felzenszwalb_segment(img, c, h, w, params);
                cache.entries.push((key, m.clone()));
                dirty = true;
                m
            }
        };
        maps.push(map);
    }
    if let (Some(p), true) = (cache_path, dirty) {
        cache.save(p)?;
    }
    Ok(maps)
}
