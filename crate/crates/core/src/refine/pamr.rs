//! Pixel-adaptive mask refinement: label scores are repeatedly averaged
//! over dilated 8-neighbourhoods, weighted by local colour affinity.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{argmax_labels, UnaryField};
use crate::assignment::SegmentationMap;
use crate::error::{Error, Result};
use crate::imaging::ImageRecord;

/// Guards the division by the local standard deviation.
pub const PAMR_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PamrParams {
    pub iterations: usize,
    pub dilations: Vec<usize>,
}

impl Default for PamrParams {
    fn default() -> Self {
        PamrParams {
            iterations: 10,
            dilations: vec![1, 2, 4, 8, 12, 24],
        }
    }
}

const RING: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn offsets(dilations: &[usize]) -> Vec<(isize, isize)> {
    dilations
        .iter()
        .flat_map(|&d| RING.iter().map(move |&(dy, dx)| (dy * d as isize, dx * d as isize)))
        .collect()
}

/// Replicate-padded neighbour index.
#[inline]
fn clamp_at(x: usize, y: usize, (dy, dx): (isize, isize), w: usize, h: usize) -> usize {
    let xs = (x as isize + dx).clamp(0, w as isize - 1) as usize;
    let ys = (y as isize + dy).clamp(0, h as isize - 1) as usize;
    ys * w + xs
}

/// Neighbour offsets `(dy, dx)` and the affinity matrix of shape
/// `(H·W, 8·|dilations|)`; each row sums to 1.
pub fn pamr_affinities(image: &ImageRecord, dilations: &[usize]) -> Result<(Vec<(isize, isize)>, Array2<f64>)> {
    if dilations.is_empty() || dilations.contains(&0) {
        return Err(Error::InvalidArgument("dilations must be positive and non-empty".into()));
    }
    let (w, h) = (image.width(), image.height());
    let offs = offsets(dilations);
    let k = offs.len();
    let px = |i: usize| {
        let [r, g, b] = image.rgb(i % w, i / w);
        [r as f64, g as f64, b as f64]
    };
    let mut aff = Array2::<f64>::zeros((w * h, k));
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let centre = px(p);
            // unbiased std over each dilation's 3x3 window, centre included
            let samples: Vec<[f64; 3]> = dilations
                .iter()
                .flat_map(|&d| {
                    std::iter::once((0, 0))
                        .chain(RING.iter().copied())
                        .map(move |(dy, dx)| (dy * d as isize, dx * d as isize))
                })
                .map(|o| px(clamp_at(x, y, o, w, h)))
                .collect();
            let n = samples.len() as f64;
            let mut std = [0.0; 3];
            for c in 0..3 {
                let mean = samples.iter().map(|s| s[c]).sum::<f64>() / n;
                let var = samples.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                std[c] = var.sqrt();
            }
            let mut logits = vec![0.0; k];
            for (j, &o) in offs.iter().enumerate() {
                let q = px(clamp_at(x, y, o, w, h));
                logits[j] = (0..3)
                    .map(|c| -(centre[c] - q[c]).abs() / (PAMR_EPS + 0.1 * std[c]))
                    .sum::<f64>()
                    / 3.0;
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in &mut logits {
                *v = (*v - max).exp();
                s += *v;
            }
            for j in 0..k {
                aff[[p, j]] = logits[j] / s;
            }
        }
    }
    Ok((offs, aff))
}

/// Scores after `iterations` rounds of affinity-weighted propagation.
pub fn pamr_propagate(
    image: &ImageRecord,
    unary: &UnaryField,
    iterations: usize,
    dilations: &[usize],
) -> Result<Array3<f64>> {
    unary.check_image(image)?;
    let mut scores = unary.probs.clone();
    if iterations == 0 {
        return Ok(scores);
    }
    let (offs, aff) = pamr_affinities(image, dilations)?;
    let (l, h, w) = scores.dim();
    let mut next = Array3::<f64>::zeros((l, h, w));
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                for lab in 0..l {
                    let mut acc = 0.0;
                    for (j, &o) in offs.iter().enumerate() {
                        let q = clamp_at(x, y, o, w, h);
                        acc += aff[[p, j]] * scores[[lab, q / w, q % w]];
                    }
                    next[[lab, y, x]] = acc;
                }
            }
        }
        std::mem::swap(&mut scores, &mut next);
    }
    Ok(scores)
}

pub fn pamr(image: &ImageRecord, unary: &UnaryField, iterations: usize, dilations: &[usize]) -> Result<SegmentationMap> {
    let scores = pamr_propagate(image, unary, iterations, dilations)?;
    Ok(argmax_labels(&scores, &unary.labels, unary.classes.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::labels_to_unary;

    #[test]
    fn constant_image_has_uniform_affinities() {
        let im = ImageRecord::from_fn("c", 9, 8, |_, _| [50, 60, 70]).unwrap();
        let (offs, aff) = pamr_affinities(&im, &[1, 2]).unwrap();
        assert_eq!(offs.len(), 16);
        for &a in aff.iter() {
            assert!((a - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn affinity_rows_sum_to_one() {
        let im = ImageRecord::from_fn("r", 11, 9, |x, y| [(x * 23) as u8, (y * 27) as u8, ((x ^ y) * 9) as u8]).unwrap();
        let (_, aff) = pamr_affinities(&im, &PamrParams::default().dilations).unwrap();
        for row in aff.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_unary_is_fixed_point() {
        let im = ImageRecord::from_fn("c", 8, 8, |x, _| [(x * 30) as u8, 0, 0]).unwrap();
        let probs = Array3::from_elem((2, 8, 8), 0.5);
        let u = UnaryField::new(probs.clone(), vec![0, 1], vec![]).unwrap();
        let out = pamr_propagate(&im, &u, 10, &[1, 2, 4]).unwrap();
        for (a, b) in out.iter().zip(probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_iterations_is_unary_argmax() {
        let im = ImageRecord::from_fn("z", 8, 8, |x, _| [(x * 30) as u8, 0, 0]).unwrap();
        let seg = SegmentationMap {
            width: 8,
            height: 8,
            labels: (0..64).map(|p| u16::from(p % 8 > 2)).collect(),
            classes: vec![],
        };
        let u = labels_to_unary(&seg, &[0, 1], 0.8).unwrap();
        assert_eq!(pamr(&im, &u, 0, &[1]).unwrap(), seg);
    }

    #[test]
    fn misaligned_boundary_snaps_to_edge() {
        let im = ImageRecord::from_fn("e", 8, 8, |x, _| if x < 4 { [20, 20, 20] } else { [230, 230, 230] }).unwrap();
        let seg = |edge: usize| SegmentationMap {
            width: 8,
            height: 8,
            labels: (0..64).map(|p| u16::from(p % 8 >= edge)).collect(),
            classes: vec![],
        };
        let u = labels_to_unary(&seg(5), &[0, 1], 0.8).unwrap();
        let p = PamrParams::default();
        assert_eq!(pamr(&im, &u, p.iterations, &p.dilations).unwrap(), seg(4));
    }
}
