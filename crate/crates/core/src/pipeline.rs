//! The full per-image pipeline: features, clusters, caption vocabulary,
//! mask labels, coarse map and refinement.

use std::time::Instant;

use serde::Serialize;

use crate::assignment::{apply_mask, classify_mask, compose, MaskLabel, SegmentationMap};
use crate::backbones::{caption_image, embed_image, embed_text, extract_features, Backbone};
use crate::clustering::{cluster_features, upsample_assignments, BinaryMask, ClusterResult, MaskResolution};
use crate::config::{CandidateMode, PipelineConfig};
use crate::error::Result;
use crate::imaging::ImageRecord;
use crate::refine::refine;
use crate::vocabulary::{
    extract_entities, match_candidates, open_vocab_candidates, CandidateClassSet, ClassEmbeddings, EntityList,
};

/// Everything produced for one image.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub image_id: String,
    pub caption: Option<String>,
    pub entities: Option<EntityList>,
    pub candidates: CandidateClassSet,
    pub clusters: ClusterResult,
    /// Cluster id per image pixel.
    pub pixel_clusters: Vec<usize>,
    pub masks: Vec<BinaryMask>,
    pub mask_labels: Vec<MaskLabel>,
    pub coarse: SegmentationMap,
    pub refined: SegmentationMap,
    pub seconds: f64,
}

#[derive(Serialize)]
struct MaskDump<'a> {
    image_id: &'a str,
    caption: Option<&'a str>,
    keywords: Option<&'a [String]>,
    classes: &'a [String],
    candidates: Vec<&'a str>,
    per_keyword: &'a [crate::vocabulary::KeywordMatch],
    masks: Vec<MaskRecord<'a>>,
}

#[derive(Serialize)]
struct MaskRecord<'a> {
    #[serde(flatten)]
    label: &'a MaskLabel,
    class_name: &'a str,
    nearest_name: &'a str,
    pixels: usize,
}

impl Segmentation {
    /// Mask labels, caption and candidates as pretty JSON.
    pub fn masks_json(&self) -> String {
        let classes = &self.candidates.dataset_classes;
        let dump = MaskDump {
            image_id: &self.image_id,
            caption: self.caption.as_deref(),
            keywords: self.entities.as_ref().map(|e| e.keywords.as_slice()),
            classes,
            candidates: self.candidates.candidate_names(),
            per_keyword: &self.candidates.per_keyword,
            masks: self
                .mask_labels
                .iter()
                .map(|l| MaskRecord {
                    label: l,
                    class_name: &classes[l.class_index as usize],
                    nearest_name: &classes[l.nearest_class as usize],
                    pixels: self.masks[l.mask_id].count(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("mask dump serializes")
    }

    /// Cluster ids as a label map, for visualisation.
    pub fn cluster_map(&self) -> SegmentationMap {
        SegmentationMap {
            width: self.coarse.width,
            height: self.coarse.height,
            labels: self.pixel_clusters.iter().map(|&c| c as u16).collect(),
            classes: (0..self.clusters.k).map(|c| format!("cluster {c}")).collect(),
        }
    }
}

enum Vocabulary {
    Closed {
        classes: Vec<String>,
        embeddings: ClassEmbeddings,
    },
    Open,
}

pub struct Pipeline<'a> {
    backbone: &'a dyn Backbone,
    config: PipelineConfig,
    vocabulary: Vocabulary,
}

impl<'a> Pipeline<'a> {
    /// Closed vocabulary; class text embeddings are computed here, once.
    pub fn closed(backbone: &'a dyn Backbone, config: PipelineConfig, classes: Vec<String>) -> Result<Self> {
        config.validate()?;
        let embeddings = ClassEmbeddings::compute(&classes, &config.prompt_template, |t| embed_text(backbone, t))?;
        Ok(Pipeline {
            backbone,
            config,
            vocabulary: Vocabulary::Closed { classes, embeddings },
        })
    }

    /// Open vocabulary: each image's caption keywords become its classes.
    pub fn open(backbone: &'a dyn Backbone, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            backbone,
            config,
            vocabulary: Vocabulary::Open,
        })
    }

    /// Pipeline for `config.candidate_mode`; `classes` is ignored in open mode.
    pub fn new(backbone: &'a dyn Backbone, config: PipelineConfig, classes: Vec<String>) -> Result<Self> {
        match config.candidate_mode {
            CandidateMode::Closed => Self::closed(backbone, config, classes),
            CandidateMode::Open => Self::open(backbone, config),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn segment(&self, image: &ImageRecord) -> Result<Segmentation> {
        let start = Instant::now();
        let cfg = &self.config;
        let (h, w) = (image.height(), image.width());

        let stack = extract_features(self.backbone, image, &cfg.feature_request())?;
        let clusters = cluster_features(&stack, &cfg.cluster_config())?;
        let pixel_clusters = upsample_assignments(&clusters.assignments, cfg.grid_size, h, w);
        let masks: Vec<BinaryMask> = (0..clusters.k)
            .map(|k| BinaryMask {
                width: w,
                height: h,
                bits: pixel_clusters.iter().map(|&c| c == k).collect(),
                resolution: MaskResolution::Image,
            })
            .collect();

        let needs_caption = cfg.candidate_mode == CandidateMode::Open || cfg.use_caption;
        let (caption, entities) = if needs_caption {
            let caption = caption_image(self.backbone, image)?;
            let entities = extract_entities(&caption);
            (Some(caption), Some(entities))
        } else {
            (None, None)
        };

        let open_embeddings;
        let (candidates, class_embeddings) = match &self.vocabulary {
            Vocabulary::Closed { classes, embeddings } => {
                let candidates = match &entities {
                    Some(e) if cfg.use_caption => {
                        match_candidates(e, classes, embeddings, cfg.candidate_filter, |k| {
                            embed_text(self.backbone, k)
                        })?
                    }
                    _ => CandidateClassSet::all(classes.clone()),
                };
                (candidates, Some(embeddings))
            }
            Vocabulary::Open => {
                let candidates = open_vocab_candidates(entities.as_ref().expect("open mode captions"));
                open_embeddings = if candidates.dataset_classes.len() > 1 {
                    Some(ClassEmbeddings::compute(
                        &candidates.dataset_classes,
                        &cfg.prompt_template,
                        |t| embed_text(self.backbone, t),
                    )?)
                } else {
                    None
                };
                (candidates, open_embeddings.as_ref())
            }
        };

        let mut mask_labels = Vec::new();
        let mut labelled = Vec::new();
        for (id, mask) in masks.iter().enumerate() {
            if mask.is_empty() {
                continue;
            }
            let label = match class_embeddings {
                Some(ce) => {
                    let masked = apply_mask(image, mask, cfg.mask_fill)?;
                    let e = embed_image(self.backbone, &masked)?;
                    classify_mask(id, &e, &candidates, ce)?
                }
                None => MaskLabel {
                    mask_id: id,
                    class_index: 0,
                    nearest_class: 0,
                    distance: f64::NAN,
                },
            };
            labelled.push((mask.clone(), label.clone()));
            mask_labels.push(label);
        }
        let coarse = compose(&labelled, h, w, candidates.dataset_classes.clone())?;
        let refined = refine(image, &coarse, &cfg.refine_config())?;
        log::debug!(
            "{}: {} masks, candidates {:?}",
            image.id,
            mask_labels.len(),
            candidates.candidate_names()
        );
        Ok(Segmentation {
            image_id: image.id.clone(),
            caption,
            entities,
            candidates,
            clusters,
            pixel_clusters,
            masks,
            mask_labels,
            coarse,
            refined,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}
