use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use freeseg::ablation::{run_ablation, AblationGrid, AblationResult};
use freeseg::eval::{run_benchmark_with, Dataset, Report};
use freeseg::imaging::{overlay, write_indexed_png};
use freeseg::refine::RefineMethod;
use freeseg::{ImageRecord, Pipeline, Segmentation};

use crate::args::{ensure_outside, Common, DatasetArgs, VocabArgs};
use crate::failure::{create_dir, write_file, CliResult, Failure};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn write_outputs(out: &Path, image: &ImageRecord, seg: &Segmentation) -> CliResult {
    let stem = &image.id;
    let labels = &seg.refined;
    write_indexed_png(&out.join(format!("{stem}_labels.png")), labels.width, labels.height, &labels.to_u8())?;
    overlay(image, &labels.labels, 0.5).save_png(&out.join(format!("{stem}_overlay.png")))?;
    let clusters = seg.cluster_map();
    write_indexed_png(
        &out.join(format!("{stem}_clusters.png")),
        clusters.width,
        clusters.height,
        &clusters.to_u8(),
    )?;
    write_file(&out.join(format!("{stem}_masks.json")), seg.masks_json() + "\n")?;
    let caption = seg.caption.as_deref().unwrap_or_default();
    write_file(&out.join(format!("{stem}_caption.txt")), format!("{caption}\n"))
}

pub fn segment(common: &Common, vocab: &VocabArgs, images: &[PathBuf], out: &Path) -> CliResult {
    let mut config = common.pipeline_config()?;
    let classes = vocab.apply(&mut config)?;
    if let Some(ds) = &config.dataset {
        ensure_outside(out, "output directory", &ds.root)?;
    }
    let mut stems = BTreeSet::new();
    for p in images {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !stems.insert(stem.clone()) {
            return Err(Failure::Config(format!("two inputs share the name `{stem}`")));
        }
    }
    let backbone = common.backbone(&config)?;
    let pipeline = Pipeline::new(backbone.as_ref(), config, classes)?;
    create_dir(out)?;
    let lines: Vec<String> = common.thread_pool()?.install(|| {
        images
            .par_iter()
            .map(|path| -> CliResult<String> {
                let image = ImageRecord::open(path)?;
                let seg = pipeline.segment(&image)?;
                write_outputs(out, &image, &seg)?;
                let map = &seg.refined;
                let names: Vec<&str> = map.present_labels().iter().map(|&l| map.classes[l as usize].as_str()).collect();
                Ok(format!("{}: {}", image.id, names.join(", ")))
            })
            .collect::<CliResult<_>>()
    })?;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Io(dir.to_path_buf(), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Io(dir.to_path_buf(), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Runs the pipeline over every image in `dir` through the cache so that
/// later runs with the same config replay offline. Failures are logged and
/// the first one decides the exit code.
pub fn cache(common: &Common, vocab: &VocabArgs, dir: &Path) -> CliResult {
    let mut config = common.pipeline_config()?;
    let classes = vocab.apply(&mut config)?;
    let paths = list_images(dir)?;
    if paths.is_empty() {
        println!("no images in {}", dir.display());
        return Ok(());
    }
    let Some(root) = config.cache.clone() else {
        return Err(Failure::Config("cache needs a root: --cache or FREESEG_CACHE".into()));
    };
    ensure_outside(&root, "cache root", dir)?;
    // refinement never touches the backend
    config.refinement = RefineMethod::None;
    let backbone = common.backbone(&config)?;
    let pipeline = Pipeline::new(backbone.as_ref(), config, classes)?;
    let results: Vec<CliResult> = common.thread_pool()?.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let image = ImageRecord::open(path)?;
                pipeline.segment(&image)?;
                Ok(())
            })
            .collect()
    });
    let mut first = None;
    let mut failed = 0;
    for (path, r) in paths.iter().zip(results) {
        if let Err(e) = r {
            log::error!("{}: {e}", path.display());
            failed += 1;
            first.get_or_insert(e);
        }
    }
    match first {
        None => {
            println!("cached {} images in {}", paths.len(), root.display());
            Ok(())
        }
        Some(e) => {
            eprintln!("{failed} of {} images failed", paths.len());
            Err(e)
        }
    }
}

fn write_report(out: &Path, report: &Report) -> CliResult {
    write_file(&out.join("report.json"), report.to_json() + "\n")?;
    write_file(&out.join("report.txt"), report.render_table())
}

fn open_dataset(common: &Common, data: &DatasetArgs, out: Option<&Path>) -> CliResult<(freeseg::PipelineConfig, Dataset)> {
    let mut config = common.pipeline_config()?;
    let spec = data.spec(&config)?;
    if let Some(out) = out {
        ensure_outside(out, "output directory", &spec.root)?;
    }
    if let (Some(root), true) = (&config.cache, common.writes_cache()) {
        ensure_outside(root, "cache root", &spec.root)?;
    }
    let dataset = Dataset::open(&spec)?;
    config.dataset = Some(spec);
    Ok((config, dataset))
}

pub fn bench(common: &Common, data: &DatasetArgs, out: Option<&Path>, overlays: bool) -> CliResult {
    let (config, dataset) = open_dataset(common, data, out)?;
    let backbone = common.backbone(&config)?;
    let overlay_dir = match (out, overlays) {
        (Some(o), true) => Some(o.join("overlays")),
        (None, true) => return Err(Failure::Config("--overlays needs --out".into())),
        _ => None,
    };
    if let Some(o) = out {
        create_dir(o)?;
    }
    if let Some(d) = &overlay_dir {
        create_dir(d)?;
    }
    let report = common.thread_pool()?.install(|| {
        run_benchmark_with(backbone.as_ref(), &dataset, &config, data.limit, |image, seg| {
            if let Some(d) = &overlay_dir {
                overlay(image, &seg.refined.labels, 0.5).save_png(&d.join(format!("{}.png", image.id)))?;
            }
            Ok(())
        })
    })?;
    print!("{}", report.render_table());
    if let Some(o) = out {
        write_report(o, &report)?;
    }
    Ok(())
}

fn file_label(labels: &[String]) -> String {
    labels
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn write_ablation(out: &Path, result: &AblationResult) -> CliResult {
    let cells = out.join("cells");
    create_dir(&cells)?;
    for (i, cell) in result.cells.iter().enumerate() {
        let path = cells.join(format!("{i:03}_{}.json", file_label(&cell.labels)));
        write_file(&path, cell.report.to_json() + "\n")?;
    }
    write_file(&out.join("summary.txt"), result.summary_table())?;
    let json = serde_json::to_string_pretty(result).map_err(freeseg::Error::from)?;
    write_file(&out.join("ablation.json"), json + "\n")
}

pub fn ablate(
    common: &Common,
    data: &DatasetArgs,
    grid: Option<&Path>,
    preset: Option<&str>,
    out: Option<&Path>,
) -> CliResult {
    let grid = match (grid, preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
            AblationGrid::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => AblationGrid::preset(name).map_err(|e| Failure::Config(e.to_string()))?,
        _ => return Err(Failure::Config("give either a grid file or --preset".into())),
    };
    let (config, dataset) = open_dataset(common, data, out)?;
    // reject bad cells before any work is done
    for indices in grid.cell_indices() {
        grid.cell_config(&config, &indices)
            .map_err(|e| Failure::Config(format!("cell {}: {e}", grid.cell_labels(&indices).join(" "))))?;
    }
    let backbone = common.backbone(&config)?;
    let result = common
        .thread_pool()?
        .install(|| run_ablation(backbone.as_ref(), &dataset, &config, &grid, data.limit))?;
    print!("{}", result.summary_table());
    if let Some(o) = out {
        create_dir(o)?;
        write_ablation(o, &result)?;
    }
    Ok(())
}
