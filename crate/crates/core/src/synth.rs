//! Deterministic synthetic images and annotated pairs.
//!
//! All pixel values are multiples of `1/255`, so images survive a PPM round
//! trip unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{BbsError, Result};
use crate::eval::{write_annotations, BoundingBox, PairAnnotation};
use crate::features::{save_image, FeatureGrid};
use crate::statsim::stream_rng;

fn level<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0..=255u32) as f64 / 255.0
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Random piecewise-constant clutter: `block x block` tiles of random
/// colors, with per-pixel jitter of up to `jitter` levels.
pub fn clutter(width: usize, height: usize, block: usize, jitter: u32, seed: u64) -> Result<FeatureGrid> {
    if block == 0 {
        return Err(BbsError::Config("block size must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let bw = width.div_ceil(block);
    let bh = height.div_ceil(block);
    let palette: Vec<f64> = (0..bw * bh * 3).map(|_| level(&mut rng)).collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let b = (y / block) * bw + x / block;
            for c in 0..3 {
                let j = if jitter == 0 {
                    0.0
                } else {
                    rng.random_range(0..=2 * jitter) as f64 - jitter as f64
                };
                data.push(quantize(palette[b * 3 + c] + j / 255.0));
            }
        }
    }
    FeatureGrid::new(height, width, 3, data)
}

/// A textured object: a few colored ellipses over a two-color gradient.
pub fn textured_object(width: usize, height: usize, seed: u64) -> Result<FeatureGrid> {
    let mut rng = stream_rng(seed, 1);
    let base: Vec<[f64; 3]> = (0..2).map(|_| [level(&mut rng), level(&mut rng), level(&mut rng)]).collect();
    let blobs: Vec<([f64; 2], [f64; 2], [f64; 3])> = (0..4)
        .map(|_| {
            let c = [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)];
            let r = [
                rng.random_range(0.15..0.4) * width as f64,
                rng.random_range(0.15..0.4) * height as f64,
            ];
            (c, r, [level(&mut rng), level(&mut rng), level(&mut rng)])
        })
        .collect();
    FeatureGrid::from_fn(height, width, 3, |y, x, ch| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        for (c, r, color) in blobs.iter().rev() {
            let dx = (fx - c[0]) / r[0];
            let dy = (fy - c[1]) / r[1];
            if dx * dx + dy * dy <= 1.0 {
                return color[ch];
            }
        }
        let t = (fx + fy) / (width + height) as f64;
        quantize(base[0][ch] * (1.0 - t) + base[1][ch] * t)
    })
}

/// Template source image, target image and the two boxes.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub template_image: FeatureGrid,
    pub target_image: FeatureGrid,
    pub template_box: BoundingBox,
    pub gt_box: BoundingBox,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PlantedSpec {
    pub image_size: (usize, usize),
    pub object_size: (usize, usize),
    /// Target positions are multiples of this value.
    pub align: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            image_size: (72, 72),
            object_size: (24, 24),
            align: 3,
        }
    }
}

fn aligned_origin<R: Rng + ?Sized>(rng: &mut R, limit: usize, align: usize) -> usize {
    rng.random_range(0..=limit / align) * align
}

/// The same object on two unrelated clutter backgrounds at different places.
pub fn planted_pair(spec: &PlantedSpec, seed: u64) -> Result<SyntheticPair> {
    let (iw, ih) = spec.image_size;
    let (ow, oh) = spec.object_size;
    if ow > iw || oh > ih || spec.align == 0 {
        return Err(BbsError::Config(format!("object {ow}x{oh} does not fit image {iw}x{ih}")));
    }
    let object = textured_object(ow, oh, seed)?;
    let mut rng = stream_rng(seed, 2);
    let mut template_image = clutter(iw, ih, 6, 8, seed.wrapping_mul(2).wrapping_add(11))?;
    let mut target_image = clutter(iw, ih, 6, 8, seed.wrapping_mul(2).wrapping_add(12))?;
    let (tx, ty) = (rng.random_range(0..=iw - ow), rng.random_range(0..=ih - oh));
    let (gx, gy) = (
        aligned_origin(&mut rng, iw - ow, spec.align),
        aligned_origin(&mut rng, ih - oh, spec.align),
    );
    template_image.paste(&object, tx, ty)?;
    target_image.paste(&object, gx, gy)?;
    Ok(SyntheticPair {
        template_image,
        target_image,
        template_box: BoundingBox::new(tx as i64, ty as i64, ow as i64, oh as i64),
        gt_box: BoundingBox::new(gx as i64, gy as i64, ow as i64, oh as i64),
    })
}

/// Fraction of the object hidden in [`occluded_pair`].
pub const OCCLUSION_FRACTION: f64 = 0.3;

/// An object whose template box includes a background margin. In the target
/// the margin shows a different background and a solid occluder covers
/// [`OCCLUSION_FRACTION`] of the object's columns.
pub fn occluded_pair(seed: u64) -> Result<SyntheticPair> {
    let (iw, ih) = (96, 96);
    let (ow, oh) = (30, 30);
    let margin = 3;
    let (bw, bh) = (ow + 2 * margin, oh + 2 * margin);
    let object = textured_object(ow, oh, seed)?;
    let mut template_image = clutter(iw, ih, 4, 6, seed.wrapping_add(101))?;
    let mut target_image = clutter(iw, ih, 4, 6, seed.wrapping_add(202))?;
    let (tx, ty) = (15, 21);
    let (gx, gy) = (51, 42);
    template_image.paste(&object, tx + margin, ty + margin)?;
    target_image.paste(&object, gx + margin, gy + margin)?;
    let hidden = (ow as f64 * OCCLUSION_FRACTION).round() as usize;
    let mut rng = stream_rng(seed, 3);
    let color = [level(&mut rng), level(&mut rng), level(&mut rng)];
    let occluder = FeatureGrid::from_fn(oh, hidden, 3, |_, _, c| color[c])?;
    target_image.paste(&occluder, gx + margin + ow - hidden, gy + margin)?;
    Ok(SyntheticPair {
        template_image,
        target_image,
        template_box: BoundingBox::new(tx as i64, ty as i64, bw as i64, bh as i64),
        gt_box: BoundingBox::new(gx as i64, gy as i64, bw as i64, bh as i64),
    })
}

fn write_pair(dir: &Path, id: &str, pair: &SyntheticPair) -> Result<PairAnnotation> {
    let template_name = PathBuf::from(format!("{id}_template.ppm"));
    let target_name = PathBuf::from(format!("{id}_target.ppm"));
    save_image(&pair.template_image, dir.join(&template_name))?;
    save_image(&pair.target_image, dir.join(&target_name))?;
    Ok(PairAnnotation {
        id: id.to_string(),
        template_image: template_name,
        target_image: target_name,
        template_box: pair.template_box,
        gt_box: pair.gt_box,
    })
}

/// Writes `count` planted pairs and `annotations.jsonl` into `dir`.
pub fn write_planted_set(dir: &Path, count: usize, spec: &PlantedSpec, seed: u64) -> Result<Vec<PairAnnotation>> {
    fs::create_dir_all(dir).map_err(|e| BbsError::io(dir, e))?;
    let mut anns = Vec::with_capacity(count);
    for i in 0..count {
        let pair = planted_pair(spec, seed.wrapping_add(i as u64))?;
        anns.push(write_pair(dir, &format!("pair{i:02}"), &pair)?);
    }
    write_annotations(&dir.join("annotations.jsonl"), &anns)?;
    Ok(anns)
}

/// Writes the occlusion pair and a one-line `annotations.jsonl` into `dir`.
pub fn write_occluded_pair(dir: &Path, seed: u64) -> Result<PairAnnotation> {
    fs::create_dir_all(dir).map_err(|e| BbsError::io(dir, e))?;
    let ann = write_pair(dir, "occluded", &occluded_pair(seed)?)?;
    write_annotations(&dir.join("annotations.jsonl"), std::slice::from_ref(&ann))?;
    Ok(ann)
}

/// Seeds and sizes of the fixture sets shipped under `fixtures/`.
pub const FIXTURE_PLANTED_COUNT: usize = 8;
pub const FIXTURE_PLANTED_SEED: u64 = 1000;
pub const FIXTURE_OCCLUDED_SEED: u64 = 7;

/// Writes the shipped fixture sets into `root/synthetic` and `root/occlusion`.
pub fn write_fixtures(root: &Path) -> Result<()> {
    write_planted_set(
        &root.join("synthetic"),
        FIXTURE_PLANTED_COUNT,
        &PlantedSpec::default(),
        FIXTURE_PLANTED_SEED,
    )?;
    write_occluded_pair(&root.join("occlusion"), FIXTURE_OCCLUDED_SEED)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{decode_ppm, encode_ppm};

    #[test]
    fn images_are_quantized() {
        let g = clutter(13, 7, 4, 5, 9).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&g).unwrap()).unwrap(), g);
        let o = textured_object(10, 12, 3).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&o).unwrap()).unwrap(), o);
    }

    #[test]
    fn planted_pair_contains_object() {
        let spec = PlantedSpec::default();
        let p = planted_pair(&spec, 5).unwrap();
        let (t, g) = (p.template_box, p.gt_box);
        assert_eq!(g.x % 3, 0);
        assert_eq!(g.y % 3, 0);
        let a = p.template_image.crop(t.x as usize, t.y as usize, 24, 24).unwrap();
        let b = p.target_image.crop(g.x as usize, g.y as usize, 24, 24).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic() {
        let a = occluded_pair(1).unwrap();
        let b = occluded_pair(1).unwrap();
        assert_eq!(a.target_image, b.target_image);
    }
}
