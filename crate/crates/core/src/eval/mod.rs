//! Ground-truth loading, confusion-matrix metrics and benchmark reports.

mod bench;
mod coco;
mod dataset;
mod report;
mod rle;

use serde::{Deserialize, Serialize};

pub use bench::{run_benchmark, run_benchmark_with};
pub use coco::{rasterize_polygon, CocoAnnotation, CocoCategory, CocoFile, CocoImage, CocoSegmentation};
pub use dataset::{builtin_classes, builtin_remap, load_ground_truth, Dataset, DatasetKind, DatasetSpec};
pub use report::{label_checksum, ImageTiming, Report};
pub use rle::Rle;

use crate::assignment::SegmentationMap;
use crate::error::{Error, Result};

pub const IGNORE_INDEX: u16 = 255;

/// Confusion counts; rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalAccumulator {
    num_classes: usize,
    confusion: Vec<u64>,
    pub ignore_index: u16,
}

impl EvalAccumulator {
    pub fn new(num_classes: usize) -> Self {
        EvalAccumulator {
            num_classes,
            confusion: vec![0; num_classes * num_classes],
            ignore_index: IGNORE_INDEX,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.confusion[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().sum()
    }

    pub fn update(&mut self, gt: &SegmentationMap, pred: &SegmentationMap) -> Result<()> {
        if gt.width != pred.width || gt.height != pred.height {
            return Err(Error::ShapeMismatch(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.width, gt.height, pred.width, pred.height
            )));
        }
        self.update_pixels(&gt.labels, &pred.labels)
    }

    pub fn update_pixels(&mut self, gt: &[u16], pred: &[u16]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} pixels", gt.len(), pred.len())));
        }
        let l = self.num_classes;
        // validate first so a failed update leaves the counts untouched
        for (&g, &p) in gt.iter().zip(pred) {
            if g == self.ignore_index {
                continue;
            }
            if g as usize >= l {
                return Err(Error::UnknownLabel(g));
            }
            if p as usize >= l {
                return Err(Error::UnknownLabel(p));
            }
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g != self.ignore_index {
                self.confusion[g as usize * l + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "merging {} classes into {}",
                other.num_classes, self.num_classes
            )));
        }
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
        Ok(())
    }

    /// `(TP, FP, FN)` of one class.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let l = self.num_classes;
        let tp = self.get(c, c);
        let row: u64 = (0..l).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..l).map(|g| self.get(g, c)).sum();
        (tp, col - tp, row - tp)
    }

    /// IoU per class; `None` where the class never occurs in either map.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let (tp, fp, fn_) = self.class_counts(c);
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}
