//! Benchmark datasets on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::coco::{CocoFile, CocoIndex};
use super::IGNORE_INDEX;
use crate::assignment::SegmentationMap;
use crate::error::{Error, Result};
use crate::imaging::{read_indexed_png, ImageRecord};
use crate::vocabulary::{load_class_list, parse_class_list};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Pascal VOC 2012, 20 classes plus `unlabeled`.
    Voc21,
    /// A VOC subset given by a split file.
    VocC,
    /// COCO objects, 80 things plus `unlabeled`.
    Coco81,
    /// COCO remapped to 27 supercategories.
    Coco27,
    /// VOC layout with a user class list.
    Custom,
}

impl DatasetKind {
    fn is_coco(self) -> bool {
        matches!(self, DatasetKind::Coco81 | DatasetKind::Coco27)
    }
}

/// Where a dataset lives. Relative paths resolve against `root`.
///
/// VOC-style defaults: `JPEGImages/`, `SegmentationClass/` and
/// `ImageSets/Segmentation/val.txt`. COCO defaults: `val2017/` and
/// `annotations/instances_val2017.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetKind,
    pub root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// JSON object from COCO category name to target class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remap: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn new(name: DatasetKind, root: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            name,
            root: root.into(),
            classes: None,
            split: None,
            images: None,
            labels: None,
            annotations: None,
            remap: None,
        }
    }

    fn resolve(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        match p {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.root.join(p),
            None => self.root.join(default),
        }
    }
}

/// Class list shipped with the library: `voc21`, `coco81` or `coco27`.
pub fn builtin_classes(name: &str) -> Option<Vec<String>> {
    let text = match name {
        "voc21" | "voc-c" => include_str!("../../data/voc21.txt"),
        "coco81" => include_str!("../../data/coco81.txt"),
        "coco27" => include_str!("../../data/coco27.txt"),
        _ => return None,
    };
    Some(parse_class_list(text).expect("bundled class list"))
}

/// COCO thing category name to COCO-27 supercategory.
pub fn builtin_remap() -> BTreeMap<String, String> {
    serde_json::from_str(include_str!("../../data/coco27_remap.json")).expect("bundled remap")
}

enum Source {
    Voc { labels: PathBuf },
    Coco { index: CocoIndex, category_to_class: BTreeMap<u64, u16> },
}

/// An opened dataset: class list, image ids and ground-truth access.
pub struct Dataset {
    pub spec: DatasetSpec,
    pub classes: Vec<String>,
    ids: Vec<String>,
    images: PathBuf,
    source: Source,
}

impl Dataset {
    pub fn open(spec: &DatasetSpec) -> Result<Dataset> {
        let classes = match (&spec.classes, spec.name) {
            (Some(p), _) => load_class_list(&spec.resolve(&Some(p.clone()), ""))?,
            (None, DatasetKind::Custom) => {
                return Err(Error::InvalidArgument("custom datasets need a class list".into()))
            }
            (None, DatasetKind::Voc21 | DatasetKind::VocC) => builtin_classes("voc21").unwrap(),
            (None, DatasetKind::Coco81) => builtin_classes("coco81").unwrap(),
            (None, DatasetKind::Coco27) => builtin_classes("coco27").unwrap(),
        };
        if spec.name == DatasetKind::VocC && spec.split.is_none() {
            return Err(Error::InvalidArgument("voc-c needs a split file listing its image ids".into()));
        }
        if spec.name.is_coco() {
            Self::open_coco(spec, classes)
        } else {
            Self::open_voc(spec, classes)
        }
    }

    fn open_voc(spec: &DatasetSpec, classes: Vec<String>) -> Result<Dataset> {
        let labels = spec.resolve(&spec.labels, "SegmentationClass");
        let split = spec.resolve(&spec.split, "ImageSets/Segmentation/val.txt");
        let ids = if spec.split.is_some() || split.exists() {
            read_split(&split)?
        } else {
            list_stems(&labels, "png")?
        };
        Ok(Dataset {
            images: spec.resolve(&spec.images, "JPEGImages"),
            spec: spec.clone(),
            classes,
            ids,
            source: Source::Voc { labels },
        })
    }

    fn open_coco(spec: &DatasetSpec, classes: Vec<String>) -> Result<Dataset> {
        let path = spec.resolve(&spec.annotations, "annotations/instances_val2017.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: CocoFile = serde_json::from_str(&text)?;
        let index = CocoIndex::new(file);
        let remap = match (&spec.remap, spec.name) {
            (Some(p), _) => {
                let p = spec.resolve(&Some(p.clone()), "");
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Some(serde_json::from_str::<BTreeMap<String, String>>(&text)?)
            }
            (None, DatasetKind::Coco27) => Some(builtin_remap()),
            _ => None,
        };
        let position = |name: &str| classes.iter().position(|c| c == name).map(|i| i as u16);
        let mut category_to_class = BTreeMap::new();
        for (&id, cat) in &index.categories {
            let target = match &remap {
                Some(r) => r.get(&cat.name).and_then(|n| position(n)),
                None => position(&cat.name),
            };
            match target {
                Some(t) => {
                    category_to_class.insert(id, t);
                }
                None => log::debug!("category {} has no target class; scored as ignore", cat.name),
            }
        }
        let ids = if spec.split.is_some() {
            read_split(&spec.resolve(&spec.split, ""))?
        } else {
            let mut v: Vec<(u64, String)> = index.images.iter().map(|(k, im)| (im.id, k.clone())).collect();
            v.sort();
            v.into_iter().map(|(_, k)| k).collect()
        };
        Ok(Dataset {
            images: spec.resolve(&spec.images, "val2017"),
            spec: spec.clone(),
            classes,
            ids,
            source: Source::Coco {
                index,
                category_to_class,
            },
        })
    }

    pub fn image_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf> {
        for ext in ["jpg", "jpeg", "png", "JPG", "JPEG", "PNG"] {
            let p = self.images.join(format!("{id}.{ext}"));
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(Error::io(
            self.images.join(format!("{id}.jpg")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        ))
    }

    pub fn load_image(&self, id: &str) -> Result<ImageRecord> {
        ImageRecord::open(&self.image_path(id)?)
    }

    pub fn ground_truth(&self, id: &str) -> Result<SegmentationMap> {
        let (width, height, labels) = match &self.source {
            Source::Voc { labels } => {
                let path = labels.join(format!("{id}.png"));
                if !path.is_file() {
                    return Err(Error::MissingAnnotation(id.to_string()));
                }
                let (w, h, raw) = read_indexed_png(&path)?;
                let l = self.classes.len() as u16;
                let labels = raw
                    .into_iter()
                    .map(|v| {
                        let v = v as u16;
                        if v < l || v == IGNORE_INDEX {
                            Ok(v)
                        } else {
                            Err(Error::UnknownLabel(v))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                (w, h, labels)
            }
            Source::Coco {
                index,
                category_to_class,
            } => {
                let image = index
                    .images
                    .get(id)
                    .ok_or_else(|| Error::MissingAnnotation(id.to_string()))?;
                let cats = index.rasterize(image)?;
                let labels = cats
                    .into_iter()
                    .map(|c| {
                        if c == 0 {
                            0
                        } else {
                            category_to_class.get(&c).copied().unwrap_or(IGNORE_INDEX)
                        }
                    })
                    .collect();
                (image.width, image.height, labels)
            }
        };
        Ok(SegmentationMap {
            width,
            height,
            labels,
            classes: self.classes.clone(),
        })
    }
}

/// Ground truth for one image in dataset class space.
pub fn load_ground_truth(spec: &DatasetSpec, image_id: &str) -> Result<SegmentationMap> {
    Dataset::open(spec)?.ground_truth(image_id)
}

fn read_split(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect())
}

fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    Ok(ids)
}
