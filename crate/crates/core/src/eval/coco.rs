//! COCO annotation files and their rasterization to label maps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rle::Rle;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default)]
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: CocoSegmentation,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Uncompressed { counts: Vec<u64>, size: [usize; 2] },
    Compressed { counts: String, size: [usize; 2] },
}

impl CocoSegmentation {
    /// Row-major mask on an `height × width` canvas.
    pub fn to_mask(&self, height: usize, width: usize) -> Result<Vec<bool>> {
        let rle = match self {
            CocoSegmentation::Polygons(polys) => {
                let mut mask = vec![false; height * width];
                for poly in polys {
                    for (m, v) in mask.iter_mut().zip(rasterize_polygon(poly, height, width)) {
                        *m |= v;
                    }
                }
                return Ok(mask);
            }
            CocoSegmentation::Uncompressed { counts, size } => Rle {
                height: size[0],
                width: size[1],
                counts: counts.clone(),
            },
            CocoSegmentation::Compressed { counts, size } => Rle::from_compressed(counts, size[0], size[1])?,
        };
        if (rle.height, rle.width) != (height, width) {
            return Err(Error::CorruptRle(format!(
                "RLE size {}x{} on a {height}x{width} image",
                rle.height, rle.width
            )));
        }
        rle.decode()
    }
}

/// Even-odd fill of a flat `[x0, y0, x1, y1, ...]` polygon, sampled at
/// pixel centres.
pub fn rasterize_polygon(coords: &[f64], height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    let pts: Vec<(f64, f64)> = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if pts.len() < 3 {
        return mask;
    }
    let mut xs = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            // half-open in y so shared vertices count once
            if (y0 <= cy) != (y1 <= cy) {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel centres cx with pair[0] <= cx < pair[1]
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                mask[y * width + x] = true;
            }
        }
    }
    mask
}

/// Annotations grouped per image, in file order.
pub(crate) struct CocoIndex {
    pub images: HashMap<String, CocoImage>,
    pub by_image: HashMap<u64, Vec<CocoAnnotation>>,
    pub categories: HashMap<u64, CocoCategory>,
}

impl CocoIndex {
    pub fn new(file: CocoFile) -> CocoIndex {
        let mut by_image: HashMap<u64, Vec<CocoAnnotation>> = HashMap::new();
        for a in file.annotations {
            by_image.entry(a.image_id).or_default().push(a);
        }
        let images = file
            .images
            .into_iter()
            .map(|im| (stem(&im.file_name).to_string(), im))
            .collect();
        let categories = file.categories.into_iter().map(|c| (c.id, c)).collect();
        CocoIndex {
            images,
            by_image,
            categories,
        }
    }

    /// Category id per pixel (0 where nothing is annotated); later
    /// annotations overwrite earlier ones.
    pub fn rasterize(&self, image: &CocoImage) -> Result<Vec<u64>> {
        let (h, w) = (image.height, image.width);
        let mut out = vec![0u64; h * w];
        for ann in self.by_image.get(&image.id).into_iter().flatten() {
            let mask = ann.segmentation.to_mask(h, w)?;
            for (o, m) in out.iter_mut().zip(mask) {
                if m {
                    *o = ann.category_id;
                }
            }
        }
        Ok(out)
    }
}

fn stem(file_name: &str) -> &str {
    let base = file_name.rsplit('/').next().unwrap_or(file_name);
    base.rsplit_once('.').map_or(base, |(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(m: &[bool]) -> usize {
        m.iter().filter(|&&b| b).count()
    }

    #[test]
    fn axis_aligned_square() {
        let m = rasterize_polygon(&[1.0, 1.0, 4.0, 1.0, 4.0, 3.0, 1.0, 3.0], 5, 6);
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(m[y * 6 + x], (1..4).contains(&x) && (1..3).contains(&y), "({x},{y})");
            }
        }
    }

    #[test]
    fn triangle_area() {
        // right triangle with legs 20: row y holds 19 - y centres
        let m = rasterize_polygon(&[0.0, 0.0, 20.0, 0.0, 0.0, 20.0], 20, 20);
        assert_eq!(count(&m), 190);
    }

    #[test]
    fn later_annotation_overwrites() {
        let file: CocoFile = serde_json::from_str(
            r#"{
            "images": [{"id": 7, "file_name": "000007.jpg", "width": 4, "height": 2}],
            "categories": [{"id": 18, "name": "dog", "supercategory": "animal"},
                           {"id": 1, "name": "person", "supercategory": "person"}],
            "annotations": [
              {"image_id": 7, "category_id": 18, "segmentation": {"counts": [0, 8], "size": [2, 4]}},
              {"image_id": 7, "category_id": 1, "segmentation": [[0, 0, 2, 0, 2, 2, 0, 2]]}
            ]}"#,
        )
        .unwrap();
        let idx = CocoIndex::new(file);
        let im = idx.images["000007"].clone();
        assert_eq!(idx.rasterize(&im).unwrap(), vec![1, 1, 18, 18, 1, 1, 18, 18]);
    }

    #[test]
    fn compressed_segmentation_parses() {
        let seg: CocoSegmentation = serde_json::from_str(r#"{"counts": "325", "size": [1, 10]}"#).unwrap();
        let m = seg.to_mask(1, 10).unwrap();
        assert_eq!(count(&m), 2);
        assert!(m[3] && m[4]);
        assert!(matches!(seg.to_mask(2, 5), Err(Error::CorruptRle(_))));
    }
}
