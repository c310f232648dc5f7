//! Boundary refinement of a coarse label map against the image.
//!
//! Hard labels become a soft [`UnaryField`], which is refined either by
//! mean-field inference in a fully connected CRF ([`dense_crf`]) or by
//! pixel-adaptive label propagation ([`pamr`]).

mod crf;
mod pamr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use crf::{dense_crf, dense_crf_per_region, CellGrid, CrfParams, MeanField, EXACT_LIMIT, MAX_CELLS};
pub use pamr::{pamr, pamr_affinities, pamr_propagate, PamrParams, PAMR_EPS};

use crate::assignment::SegmentationMap;
use crate::error::{Error, Result};
use crate::imaging::ImageRecord;

/// Soft per-pixel label distribution over a small set of active labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryField {
    /// `probs[[l, y, x]]` is the probability of `labels[l]` at `(x, y)`.
    pub probs: Array3<f64>,
    pub labels: Vec<u16>,
    /// Class names carried through to the refined map.
    pub classes: Vec<String>,
}

impl UnaryField {
    pub fn new(probs: Array3<f64>, labels: Vec<u16>, classes: Vec<String>) -> Result<Self> {
        let (l, h, w) = probs.dim();
        if l != labels.len() || l == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{l} probability planes for {} labels",
                labels.len()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for k in 0..l {
                    let p = probs[[k, y, x]];
                    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                        return Err(Error::NonFinite(format!("probability {p} at ({x}, {y})")));
                    }
                    s += p;
                }
                if (s - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "probabilities at ({x}, {y}) sum to {s}"
                    )));
                }
            }
        }
        Ok(UnaryField { probs, labels, classes })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn height(&self) -> usize {
        self.probs.dim().1
    }

    pub fn width(&self) -> usize {
        self.probs.dim().2
    }

    pub(crate) fn check_image(&self, image: &ImageRecord) -> Result<()> {
        if image.width() != self.width() || image.height() != self.height() {
            return Err(Error::ShapeMismatch(format!(
                "unary is {}x{}, image is {}x{}",
                self.width(),
                self.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    /// Per-pixel argmax of the unary itself.
    pub fn argmax(&self) -> SegmentationMap {
        argmax_labels(&self.probs, &self.labels, self.classes.clone())
    }
}

/// Per-pixel argmax over the first axis, lowest plane on ties.
pub(crate) fn argmax_labels(q: &Array3<f64>, labels: &[u16], classes: Vec<String>) -> SegmentationMap {
    let (l, h, w) = q.dim();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            for k in 1..l {
                if q[[k, y, x]] > q[[best, y, x]] {
                    best = k;
                }
            }
            out.push(labels[best]);
        }
    }
    SegmentationMap {
        width: w,
        height: h,
        labels: out,
        classes,
    }
}

/// Turns hard labels into a unary field: the assigned label gets
/// `confidence`, the other active labels share the remainder equally.
pub fn labels_to_unary(seg: &SegmentationMap, active_labels: &[u16], confidence: f64) -> Result<UnaryField> {
    let l = active_labels.len();
    if l < 2 {
        return Err(Error::InvalidArgument("need at least two active labels".into()));
    }
    let mut index = vec![usize::MAX; u16::MAX as usize + 1];
    for (k, &lab) in active_labels.iter().enumerate() {
        if index[lab as usize] != usize::MAX {
            return Err(Error::InvalidArgument(format!("label {lab} listed twice")));
        }
        index[lab as usize] = k;
    }
    let uniform = 1.0 / l as f64;
    if !(confidence >= uniform && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence {confidence} outside [1/{l}, 1)"
        )));
    }
    let rest = (1.0 - confidence) / (l - 1) as f64;
    let mut probs = Array3::from_elem((l, seg.height, seg.width), rest);
    for (p, &lab) in seg.labels.iter().enumerate() {
        let k = index[lab as usize];
        if k == usize::MAX {
            return Err(Error::UnknownLabel(lab));
        }
        probs[[k, p / seg.width, p % seg.width]] = confidence;
    }
    Ok(UnaryField {
        probs,
        labels: active_labels.to_vec(),
        classes: seg.classes.clone(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMethod {
    None,
    #[default]
    Crf,
    Pamr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub method: RefineMethod,
    pub crf: CrfParams,
    pub pamr: PamrParams,
    /// Refine each label as its own binary problem instead of jointly.
    pub per_region: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            method: RefineMethod::Crf,
            crf: CrfParams::default(),
            pamr: PamrParams::default(),
            per_region: false,
        }
    }
}

/// Refines `coarse` over the labels it contains. Maps with fewer than two
/// labels are returned unchanged.
pub fn refine(image: &ImageRecord, coarse: &SegmentationMap, config: &RefineConfig) -> Result<SegmentationMap> {
    let active = coarse.present_labels();
    if config.method == RefineMethod::None || active.len() < 2 {
        return Ok(coarse.clone());
    }
    let unary = labels_to_unary(coarse, &active, config.crf.unary_confidence)?;
    match (config.method, config.per_region) {
        (RefineMethod::Crf, false) => dense_crf(image, &unary, &config.crf),
        (RefineMethod::Crf, true) => dense_crf_per_region(image, &unary, &config.crf),
        (RefineMethod::Pamr, _) => pamr(image, &unary, config.pamr.iterations, &config.pamr.dilations),
        (RefineMethod::None, _) => unreachable!(),
    }
}
