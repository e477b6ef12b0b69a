//! PNG output for sample grids and segmentation previews.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::segment::SegmentationMap;

fn pixel(img: &[f32], c: usize, h: usize, w: usize, y: usize, x: usize) -> [u8; 3] {
    let at = |ch: usize| {
        let ch = if c == 1 { 0 } else { ch };
        (img[(ch * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
    };
    [at(0), at(1), at(2)]
}

/// Tiles laid out row-major in a `rows x cols` grid with a 1-pixel gutter.
/// Each tile is a `[C, H, W]` image in `[0, 1]` with 1 or 3 channels.
pub fn tile_grid(tiles: &[&[f32]], cols: usize, c: usize, h: usize, w: usize) -> Result<RgbImage> {
    if tiles.is_empty() || cols == 0 || !(c == 1 || c == 3) {
        return Err(Error::Invalid(format!(
            "tile grid needs tiles, cols >= 1 and 1 or 3 channels (got {} tiles, {cols} cols, {c} channels)",
            tiles.len()
        )));
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != c * h * w) {
        return Err(Error::Shape(format!("tile of length {} is not {c}x{h}x{w}", t.len())));
    }
    let rows = tiles.len().div_ceil(cols);
    let gw = (cols * (w + 1) - 1) as u32;
    let gh = (rows * (h + 1) - 1) as u32;
    let mut out = RgbImage::from_pixel(gw, gh, Rgb([255, 255, 255]));
    for (k, tile) in tiles.iter().enumerate() {
        let (oy, ox) = ((k / cols) * (h + 1), (k % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                out.put_pixel((ox + x) as u32, (oy + y) as u32, Rgb(pixel(tile, c, h, w, y, x)));
            }
        }
    }
    Ok(out)
}

/// Each region painted with its mean colour, region borders in black.
pub fn segmentation_overlay(img: &[f32], c: usize, seg: &SegmentationMap) -> Result<RgbImage> {
    let (h, w) = (seg.height, seg.width);
    if img.len() != c * h * w || !(c == 1 || c == 3) {
        return Err(Error::Shape(format!("image of length {} does not match a {h}x{w} segmentation", img.len())));
    }
    let n = seg.region_count;
    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![0usize; n];
    for y in 0..h {
        for x in 0..w {
            let r = seg.label(y, x) as usize;
            let p = pixel(img, c, h, w, y, x);
            for k in 0..3 {
                sums[r][k] += p[k] as f64;
            }
            counts[r] += 1;
        }
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let r = seg.label(y, x);
            let border = (x + 1 < w && seg.label(y, x + 1) != r) || (y + 1 < h && seg.label(y + 1, x) != r);
            let color = if border {
                [0, 0, 0]
            } else {
                let (s, n) = (sums[r as usize], counts[r as usize] as f64);
                [(s[0] / n).round() as u8, (s[1] / n).round() as u8, (s[2] / n).round() as u8]
            };
            out.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
    Ok(out)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry_and_placement() {
        let a = vec![1.0f32; 3 * 2 * 2];
        let b = vec![0.0f32; 3 * 2 * 2];
        let g = tile_grid(&[&a, &b, &b], 2, 3, 2, 2).unwrap();
        assert_eq!(g.dimensions(), (5, 5));
        assert_eq!(g.get_pixel(0, 0).0, [255, 255, 255]);
        assert_eq!(g.get_pixel(3, 0).0, [0, 0, 0]);
        assert_eq!(g.get_pixel(0, 3).0, [0, 0, 0]);
        assert!(tile_grid(&[&a[..5]], 1, 3, 2, 2).is_err());
    }

    #[test]
    fn overlay_uses_region_means() {
        let seg = SegmentationMap {
            height: 1,
            width: 3,
            labels: vec![0, 0, 1],
            region_count: 2,
        };
        let img = vec![0.0, 1.0, 0.5];
        let o = segmentation_overlay(&img, 1, &seg).unwrap();
        assert_eq!(o.get_pixel(0, 0).0, [128, 128, 128]);
        assert_eq!(o.get_pixel(1, 0).0, [0, 0, 0]);
        assert_eq!(o.get_pixel(2, 0).0, [128, 128, 128]);
    }
}
