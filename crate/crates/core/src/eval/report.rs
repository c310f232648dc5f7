//! Benchmark reports: metrics, per-image records and a config echo.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalAccumulator;
use crate::assignment::SegmentationMap;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTiming {
    pub id: String,
    /// sha256 of the predicted label map.
    pub labels_sha256: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub classes: Vec<String>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub confusion: EvalAccumulator,
    /// sha256 over every predicted label map, in image order.
    pub checksum: String,
    pub images: Vec<ImageTiming>,
    /// The configuration the run used; feeding it back reproduces the run.
    pub config: serde_json::Value,
}

/// sha256 of one label map's dimensions and little-endian labels.
pub fn label_checksum(map: &SegmentationMap) -> String {
    let mut h = Sha256::new();
    h.update((map.width as u64).to_le_bytes());
    h.update((map.height as u64).to_le_bytes());
    for l in &map.labels {
        h.update(l.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl Report {
    pub fn new(
        dataset: impl Into<String>,
        classes: Vec<String>,
        confusion: EvalAccumulator,
        images: Vec<ImageTiming>,
        config: serde_json::Value,
    ) -> Result<Report> {
        let mut h = Sha256::new();
        for im in &images {
            h.update(im.id.as_bytes());
            h.update([0]);
            h.update(im.labels_sha256.as_bytes());
        }
        Ok(Report {
            dataset: dataset.into(),
            classes,
            per_class_iou: confusion.per_class_iou(),
            miou: confusion.miou()?,
            pixel_accuracy: confusion.pixel_accuracy()?,
            confusion,
            checksum: hex::encode(h.finalize()),
            images,
            config,
        })
    }

    pub fn total_seconds(&self) -> f64 {
        self.images.iter().map(|i| i.seconds).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report with timing zeroed, for byte comparisons between runs.
    pub fn without_timing(&self) -> Report {
        let mut r = self.clone();
        for im in &mut r.images {
            im.seconds = 0.0;
        }
        r
    }

    pub fn render_table(&self) -> String {
        let width = self.classes.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        writeln!(out, "dataset: {}  images: {}", self.dataset, self.images.len()).unwrap();
        writeln!(out, "{:<width$}  {:>6}", "class", "IoU").unwrap();
        for (name, iou) in self.classes.iter().zip(&self.per_class_iou) {
            match iou {
                Some(v) => writeln!(out, "{name:<width$}  {:>6.2}", 100.0 * v).unwrap(),
                None => writeln!(out, "{name:<width$}  {:>6}", "-").unwrap(),
            }
        }
        writeln!(out, "{:<width$}  {:>6.2}", "mIoU", 100.0 * self.miou).unwrap();
        writeln!(out, "{:<width$}  {:>6.2}", "pixel acc", 100.0 * self.pixel_accuracy).unwrap();
        out
    }
}
