use rayon::prelude::*;

use super::{label_checksum, Dataset, EvalAccumulator, ImageTiming, Report};
use crate::backbones::Backbone;
use crate::config::{CandidateMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::imaging::ImageRecord;
use crate::pipeline::{Pipeline, Segmentation};

/// Segments up to `limit` dataset images and scores the refined maps.
///
/// Images run on the current rayon pool; results are merged in image order
/// so the report does not depend on the number of workers.
pub fn run_benchmark(
    backbone: &dyn Backbone,
    dataset: &Dataset,
    config: &PipelineConfig,
    limit: Option<usize>,
) -> Result<Report> {
    run_benchmark_with(backbone, dataset, config, limit, |_, _| Ok(()))
}

/// As [`run_benchmark`], calling `on_image` with every finished image.
pub fn run_benchmark_with(
    backbone: &dyn Backbone,
    dataset: &Dataset,
    config: &PipelineConfig,
    limit: Option<usize>,
    on_image: impl Fn(&ImageRecord, &Segmentation) -> Result<()> + Sync,
) -> Result<Report> {
    if config.candidate_mode == CandidateMode::Open {
        return Err(Error::InvalidArgument(
            "benchmarks need a closed vocabulary".into(),
        ));
    }
    let pipeline = Pipeline::closed(backbone, config.clone(), dataset.classes.clone())?;
    let ids: Vec<&String> = dataset
        .image_ids()
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    let per_image: Vec<(EvalAccumulator, ImageTiming)> = ids
        .par_iter()
        .map(|id| {
            let image = dataset.load_image(id)?;
            let gt = dataset.ground_truth(id)?;
            let seg = pipeline.segment(&image)?;
            on_image(&image, &seg)?;
            let mut acc = EvalAccumulator::new(dataset.classes.len());
            acc.update(&gt, &seg.refined)?;
            let timing = ImageTiming {
                id: id.to_string(),
                labels_sha256: label_checksum(&seg.refined),
                seconds: seg.seconds,
            };
            log::info!("{id}: {:.3}s", seg.seconds);
            Ok((acc, timing))
        })
        .collect::<Result<_>>()?;
    let mut total = EvalAccumulator::new(dataset.classes.len());
    let mut timings = Vec::with_capacity(per_image.len());
    for (acc, t) in per_image {
        total.merge(&acc)?;
        timings.push(t);
    }
    let name = serde_json::to_value(dataset.spec.name)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    Report::new(name, dataset.classes.clone(), total, timings, serde_json::to_value(config)?)
}
