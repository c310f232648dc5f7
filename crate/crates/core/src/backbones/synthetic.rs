//! Model-free stand-in backbone.
//!
//! Produces deterministic colour/texture statistics in place of diffusion
//! features, a colour-name caption and hashed embeddings. It carries no
//! semantics; it exists so the cache, CLI and fixtures can be exercised on
//! machines without model weights.

use ndarray::Array3;

use super::{Backbone, FeatureMap, MapKind};
use crate::error::Result;
use crate::imaging::ImageRecord;

pub const SYNTHETIC_DIM: usize = 64;

const ANCHORS: [[f64; 3]; 4] = [
    [0.1, 0.1, 0.1],
    [0.9, 0.9, 0.9],
    [0.8, 0.3, 0.2],
    [0.2, 0.5, 0.8],
];

const COLOR_NAMES: [(&str, [f64; 3]); 8] = [
    ("black", [0.05, 0.05, 0.05]),
    ("white", [0.95, 0.95, 0.95]),
    ("red", [0.8, 0.15, 0.15]),
    ("green", [0.2, 0.6, 0.2]),
    ("blue", [0.2, 0.35, 0.8]),
    ("brown", [0.45, 0.3, 0.15]),
    ("yellow", [0.9, 0.85, 0.2]),
    ("gray", [0.5, 0.5, 0.5]),
];

#[derive(Clone, Debug, Default)]
pub struct SyntheticBackbone;

fn cell_bounds(i: usize, cells: usize, n: usize) -> (usize, usize) {
    let lo = i * n / cells;
    let hi = ((i + 1) * n).div_ceil(cells).max(lo + 1).min(n);
    (lo, hi)
}

/// Per-cell mean RGB in [0,1] and luminance standard deviation.
fn pooled(image: &ImageRecord, r: usize) -> (Array3<f64>, Array3<f64>) {
    let mut mean = Array3::<f64>::zeros((3, r, r));
    let mut std = Array3::<f64>::zeros((1, r, r));
    for cy in 0..r {
        let (y0, y1) = cell_bounds(cy, r, image.height());
        for cx in 0..r {
            let (x0, x1) = cell_bounds(cx, r, image.width());
            let (mut s, mut l, mut l2, mut n) = ([0.0; 3], 0.0, 0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = image.rgb(x, y);
                    let rgb = [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0];
                    let lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                    for k in 0..3 {
                        s[k] += rgb[k];
                    }
                    l += lum;
                    l2 += lum * lum;
                    n += 1.0;
                }
            }
            for k in 0..3 {
                mean[[k, cy, cx]] = s[k] / n;
            }
            std[[0, cy, cx]] = (l2 / n - (l / n).powi(2)).max(0.0).sqrt();
        }
    }
    (mean, std)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

impl Backbone for SyntheticBackbone {
    fn features(
        &self,
        image: &ImageRecord,
        _timestep: u32,
        resolutions: &[usize],
        include_attention: bool,
    ) -> Result<Vec<FeatureMap>> {
        let mut maps = Vec::new();
        let mut order = 0;
        for &r in resolutions {
            let (mean, std) = pooled(image, r);
            let color = Array3::from_shape_fn((5, r, r), |(c, y, x)| {
                let (red, g, b) = (mean[[0, y, x]], mean[[1, y, x]], mean[[2, y, x]]);
                (match c {
                    0..=2 => mean[[c, y, x]],
                    3 => red - g,
                    _ => b - 0.5 * (red + g),
                }) as f32
            });
            maps.push(FeatureMap {
                resolution: r,
                kind: MapKind::Feature,
                block: format!("synthetic.color.{r}"),
                order,
                tensor: color,
            });
            order += 1;
            maps.push(FeatureMap {
                resolution: r,
                kind: MapKind::Feature,
                block: format!("synthetic.texture.{r}"),
                order,
                tensor: std.mapv(|v| v as f32),
            });
            order += 1;
            if include_attention {
                let attn = Array3::from_shape_fn((ANCHORS.len(), r, r), |(a, y, x)| {
                    let logits: Vec<f64> = ANCHORS
                        .iter()
                        .map(|c| -(0..3).map(|k| (mean[[k, y, x]] - c[k]).powi(2)).sum::<f64>() * 8.0)
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                    ((logits[a] - m).exp() / z) as f32
                });
                maps.push(FeatureMap {
                    resolution: r,
                    kind: MapKind::Attention,
                    block: format!("synthetic.attention.{r}"),
                    order,
                    tensor: attn,
                });
                order += 1;
            }
        }
        Ok(maps)
    }

    fn caption(&self, image: &ImageRecord) -> Result<String> {
        let mut counts = [0usize; COLOR_NAMES.len()];
        for px in image.pixels().chunks_exact(3) {
            let rgb = [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0];
            let best = COLOR_NAMES
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let d = |c: &[f64; 3]| (0..3).map(|k| (rgb[k] - c[k]).powi(2)).sum::<f64>();
                    d(&a.1 .1).total_cmp(&d(&b.1 .1))
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            counts[best] += 1;
        }
        let mut idx: Vec<usize> = (0..COLOR_NAMES.len()).collect();
        idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let names: Vec<&str> = idx
            .iter()
            .take(2)
            .filter(|&&i| counts[i] > 0)
            .map(|&i| COLOR_NAMES[i].0)
            .collect();
        Ok(format!("a scene in {}", names.join(" and ")))
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Vec<f32>> {
        // 4x4x4 colour histogram
        let mut hist = vec![0f32; SYNTHETIC_DIM];
        for px in image.pixels().chunks_exact(3) {
            let bin = (px[0] as usize / 64) * 16 + (px[1] as usize / 64) * 4 + px[2] as usize / 64;
            hist[bin] += 1.0;
        }
        Ok(hist)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let padded = format!("  {}  ", text.to_lowercase());
        let bytes = padded.as_bytes();
        let mut v = vec![0f32; SYNTHETIC_DIM];
        for w in bytes.windows(3) {
            let h = fnv1a(w);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % SYNTHETIC_DIM as u64) as usize] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let img = ImageRecord::from_fn("a", 40, 30, |x, y| [(x * 6) as u8, (y * 8) as u8, 50]).unwrap();
        let b = SyntheticBackbone;
        let m1 = b.features(&img, 0, &[16, 64], true).unwrap();
        let m2 = b.features(&img, 0, &[16, 64], true).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.len(), 6);
        assert_eq!(m1[0].tensor.dim(), (5, 16, 16));
        assert_eq!(m1[5].tensor.dim(), (4, 64, 64));
        assert_eq!(b.embed_text("dog").unwrap(), b.embed_text("dog").unwrap());
        assert!(!b.caption(&img).unwrap().is_empty());
    }
}
