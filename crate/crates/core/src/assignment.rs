//! Naming class-agnostic masks and composing them into a label map.

use serde::{Deserialize, Serialize};

use crate::backbones::Embedding;
use crate::clustering::BinaryMask;
use crate::error::{Error, Result};
use crate::imaging::{ImageRecord, MIN_EDGE};
use crate::vocabulary::{argmin, CandidateClassSet, ClassEmbeddings};

/// Per-pixel class indices; index 0 is `unlabeled`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    /// Class names indexed by label.
    pub classes: Vec<String>,
}

impl SegmentationMap {
    pub fn filled(width: usize, height: usize, label: u16, classes: Vec<String>) -> Self {
        SegmentationMap {
            width,
            height,
            labels: vec![label; width * height],
            classes,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Distinct labels in ascending order.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..seen.len()).filter(|&i| seen[i]).map(|i| i as u16).collect()
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Labels as bytes for PNG output; values above 255 saturate.
    pub fn to_u8(&self) -> Vec<u8> {
        self.labels.iter().map(|&l| l.min(255) as u8).collect()
    }
}

/// What replaces the pixels outside a mask before embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFill {
    /// Black background, full frame.
    #[default]
    Black,
    /// Per-channel mean colour of the whole image, full frame.
    Mean,
    /// Black background, cropped to the mask's bounding box (at least 8×8).
    Crop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskLabel {
    pub mask_id: usize,
    /// Assigned class; 0 when the nearest class is not a candidate.
    pub class_index: u16,
    pub nearest_class: u16,
    pub distance: f64,
}

/// Keeps pixels inside `mask` and replaces the rest according to `fill`.
pub fn apply_mask(image: &ImageRecord, mask: &BinaryMask, fill: MaskFill) -> Result<ImageRecord> {
    if mask.width != image.width() || mask.height != image.height() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width,
            mask.height,
            image.width(),
            image.height()
        )));
    }
    let Some((bx0, by0, bx1, by1)) = mask.bbox() else {
        return Err(Error::EmptyMask);
    };
    let background = match fill {
        MaskFill::Mean => {
            let n = (image.width() * image.height()) as f64;
            let mut s = [0f64; 3];
            for px in image.pixels().chunks_exact(3) {
                for k in 0..3 {
                    s[k] += px[k] as f64;
                }
            }
            s.map(|v| (v / n).round() as u8)
        }
        MaskFill::Black | MaskFill::Crop => [0, 0, 0],
    };
    let mut out = image.clone();
    for (px, &keep) in out.pixels_mut().chunks_exact_mut(3).zip(&mask.bits) {
        if !keep {
            px.copy_from_slice(&background);
        }
    }
    if fill != MaskFill::Crop {
        return Ok(out);
    }
    // widen a short span symmetrically, then shift it back inside [0, n)
    let grow = |lo: usize, hi: usize, n: usize| {
        let len = (hi - lo).max(MIN_EDGE).min(n);
        let start = lo.saturating_sub((len - (hi - lo)) / 2).min(n - len);
        (start, start + len)
    };
    let (x0, x1) = grow(bx0, bx1, image.width());
    let (y0, y1) = grow(by0, by1, image.height());
    out.crop(x0, y0, x1, y1)
}

/// Labels one masked image by its nearest class text embedding.
///
/// The nearest class is searched over every labelled dataset class; it is
/// kept only when it belongs to the candidate set, otherwise the mask is
/// `unlabeled`.
pub fn classify_mask(
    mask_id: usize,
    image_embedding: &Embedding,
    classes: &CandidateClassSet,
    class_embeddings: &ClassEmbeddings,
) -> Result<MaskLabel> {
    if classes.dataset_classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least one class besides `unlabeled`".into(),
        ));
    }
    if class_embeddings.len() != classes.dataset_classes.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} class embeddings for {} classes",
            class_embeddings.len(),
            classes.dataset_classes.len()
        )));
    }
    let distances = class_embeddings.distances(image_embedding);
    let i = argmin(&distances);
    let nearest = (i + 1) as u16;
    Ok(MaskLabel {
        mask_id,
        class_index: if classes.contains(i + 1) { nearest } else { 0 },
        nearest_class: nearest,
        distance: distances[i],
    })
}

/// Paints every mask with its label. Masks must cover each pixel exactly once.
pub fn compose(
    masks: &[(BinaryMask, MaskLabel)],
    height: usize,
    width: usize,
    classes: Vec<String>,
) -> Result<SegmentationMap> {
    let mut labels = vec![0u16; width * height];
    let mut cover = vec![0u8; width * height];
    for (mask, label) in masks {
        if mask.width != width || mask.height != height {
            return Err(Error::ShapeMismatch(format!(
                "mask {} is {}x{}, expected {width}x{height}",
                label.mask_id, mask.width, mask.height
            )));
        }
        for (p, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
            if cover[p] > 0 {
                return Err(Error::PartitionViolation(format!(
                    "pixel ({}, {}) covered by more than one mask",
                    p % width,
                    p / width
                )));
            }
            cover[p] = 1;
            labels[p] = label.class_index;
        }
    }
    if let Some(p) = cover.iter().position(|&c| c == 0) {
        return Err(Error::PartitionViolation(format!(
            "pixel ({}, {}) not covered by any mask",
            p % width,
            p / width
        )));
    }
    Ok(SegmentationMap {
        width,
        height,
        labels,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::EmbeddingSource;
    use crate::clustering::MaskResolution;
    use std::collections::BTreeSet;

    fn img() -> ImageRecord {
        ImageRecord::from_fn("i", 10, 8, |x, y| [(x * 20 + 1) as u8, (y * 30 + 2) as u8, 7]).unwrap()
    }

    fn mask(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut bits = Vec::new();
        for y in 0..h {
            for x in 0..w {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width: w,
            height: h,
            bits,
            resolution: MaskResolution::Image,
        }
    }

    #[test]
    fn full_mask_is_identity_and_empty_is_error() {
        let im = img();
        assert_eq!(apply_mask(&im, &mask(10, 8, |_, _| true), MaskFill::Black).unwrap(), im);
        assert!(matches!(
            apply_mask(&im, &mask(10, 8, |_, _| false), MaskFill::Black),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn left_half_mask() {
        let im = img();
        let out = apply_mask(&im, &mask(10, 8, |x, _| x < 5), MaskFill::Black).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                let expect = if x < 5 { im.rgb(x, y) } else { [0, 0, 0] };
                assert_eq!(out.rgb(x, y), expect);
            }
        }
    }

    #[test]
    fn crop_keeps_at_least_min_edge() {
        let im = img();
        let out = apply_mask(&im, &mask(10, 8, |x, y| x == 9 && y == 0), MaskFill::Crop).unwrap();
        assert_eq!((out.width(), out.height()), (8, 8));
        assert_eq!(out.rgb(7, 0), im.rgb(9, 0));
        assert_eq!(out.rgb(0, 0), [0, 0, 0]);
    }

    #[test]
    fn mean_fill_uses_image_mean() {
        let im = ImageRecord::from_fn("m", 8, 8, |x, _| if x < 4 { [0, 0, 0] } else { [200, 100, 50] }).unwrap();
        let out = apply_mask(&im, &mask(8, 8, |x, _| x == 0), MaskFill::Mean).unwrap();
        assert_eq!(out.rgb(7, 7), [100, 50, 25]);
        assert_eq!(out.rgb(0, 3), [0, 0, 0]);
    }

    fn unit(v: &[f32]) -> Embedding {
        Embedding::normalized(v, EmbeddingSource::Text).unwrap()
    }

    fn three_classes(candidates: &[usize]) -> (CandidateClassSet, ClassEmbeddings) {
        let mut set = CandidateClassSet::all(vec!["unlabeled".into(), "a".into(), "b".into(), "c".into()]);
        set.candidates = candidates.iter().copied().collect::<BTreeSet<_>>();
        let ce = ClassEmbeddings::from_vec(vec![
            unit(&[1.0, 0.0, 0.0]),
            unit(&[0.0, 1.0, 0.0]),
            unit(&[0.0, 0.0, 1.0]),
        ]);
        (set, ce)
    }

    #[test]
    fn candidate_gate() {
        let e = unit(&[0.0, 0.0, 1.0]);
        let (set, ce) = three_classes(&[3]);
        let l = classify_mask(0, &e, &set, &ce).unwrap();
        assert_eq!((l.class_index, l.nearest_class), (3, 3));
        assert!(l.distance.abs() < 1e-7);
        let (set, ce) = three_classes(&[1, 2]);
        let l = classify_mask(0, &e, &set, &ce).unwrap();
        assert_eq!((l.class_index, l.nearest_class), (0, 3));
    }

    #[test]
    fn equidistant_classes_pick_lowest_index() {
        // equal angle to classes 1 and 2
        let e = unit(&[1.0, 1.0, 0.0]);
        let (set, ce) = three_classes(&[1, 2, 3]);
        let d = ce.distances(&e);
        assert_eq!(d[0], d[1]);
        let l = classify_mask(0, &e, &set, &ce).unwrap();
        assert_eq!(l.nearest_class, 1);
    }

    fn label(id: usize, c: u16) -> MaskLabel {
        MaskLabel {
            mask_id: id,
            class_index: c,
            nearest_class: c,
            distance: 0.0,
        }
    }

    #[test]
    fn compose_partitions() {
        let names: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let m = compose(&[(mask(8, 8, |_, _| true), label(0, 5))], 8, 8, names.clone()).unwrap();
        assert!(m.labels.iter().all(|&l| l == 5));
        let m = compose(
            &[
                (mask(8, 8, |x, _| x < 3), label(0, 2)),
                (mask(8, 8, |x, _| x >= 3), label(1, 0)),
            ],
            8,
            8,
            names.clone(),
        )
        .unwrap();
        assert_eq!(m.present_labels(), vec![0, 2]);
        assert_eq!(m.count(2), 24);
        assert_eq!(m.count(0), 40);
        let overlap = compose(
            &[
                (mask(8, 8, |x, _| x < 4), label(0, 1)),
                (mask(8, 8, |x, _| x >= 3), label(1, 2)),
            ],
            8,
            8,
            names.clone(),
        );
        assert!(matches!(overlap, Err(Error::PartitionViolation(_))));
        let gap = compose(&[(mask(8, 8, |x, _| x < 4), label(0, 1))], 8, 8, names);
        assert!(matches!(gap, Err(Error::PartitionViolation(_))));
    }
}
