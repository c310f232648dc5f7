//! End-to-end runs over the bundled fixtures, replaying the shipped cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use freeseg::ablation::{run_ablation, AblationGrid};
use freeseg::backbones::{CachedBackbone, TensorCache};
use freeseg::config::CandidateMode;
use freeseg::eval::{run_benchmark, Dataset, DatasetKind, DatasetSpec};
use freeseg::refine::RefineMethod;
use freeseg::{Error, ImageRecord, Pipeline, PipelineConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn replay() -> CachedBackbone {
    CachedBackbone::replay(Arc::new(TensorCache::new(fixtures().join("cache"))))
}

fn voc() -> Dataset {
    Dataset::open(&DatasetSpec::new(DatasetKind::Voc21, fixtures().join("voc"))).unwrap()
}

fn tree_digest(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.clone(), hex::encode(Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    out
}

#[test]
fn bench_smoke_with_limit_two() {
    let before = tree_digest(&fixtures());
    let backbone = replay();
    let dataset = voc();
    let config = PipelineConfig::default();
    let a = run_benchmark(&backbone, &dataset, &config, Some(2)).unwrap();
    assert_eq!(a.images.len(), 2);
    assert_eq!(a.classes.len(), 21);
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| run_benchmark(&backbone, &dataset, &config, Some(2)).unwrap());
    assert_eq!(a.without_timing().to_json(), b.without_timing().to_json());
    assert_eq!(a.checksum, b.checksum);
    // replay reads only
    assert_eq!(before, tree_digest(&fixtures()));
}

#[test]
fn echoed_config_reproduces_the_metrics() {
    let backbone = replay();
    let dataset = voc();
    let config = PipelineConfig {
        k: 5,
        refinement: RefineMethod::None,
        ..Default::default()
    };
    let first = run_benchmark(&backbone, &dataset, &config, None).unwrap();
    let echoed: PipelineConfig = serde_json::from_value(first.config.clone()).unwrap();
    let second = run_benchmark(&backbone, &dataset, &echoed, None).unwrap();
    assert_eq!(first.without_timing().to_json(), second.without_timing().to_json());
}

#[test]
fn closed_vocabulary_finds_the_labelled_objects() {
    let backbone = replay();
    let dataset = voc();
    let report = run_benchmark(&backbone, &dataset, &PipelineConfig::default(), None).unwrap();
    let iou = |name: &str| report.per_class_iou[dataset.classes.iter().position(|c| c == name).unwrap()];
    for name in ["bird", "cat", "potted plant", "sofa"] {
        assert!(iou(name).unwrap() > 0.5, "{name}: {:?}", iou(name));
    }
}

#[test]
fn open_vocabulary_uses_the_caption_nouns() {
    let backbone = replay();
    let image = ImageRecord::open(&fixtures().join("voc/JPEGImages/bird.png")).unwrap();
    let config = PipelineConfig {
        candidate_mode: CandidateMode::Open,
        ..Default::default()
    };
    let seg = Pipeline::open(&backbone, config).unwrap().segment(&image).unwrap();
    assert_eq!(seg.caption.as_deref(), Some("A small bird perched on a branch of a tree"));
    assert_eq!(seg.candidates.candidate_names(), ["bird", "branch", "tree"]);
    assert_eq!(seg.refined.classes, ["unlabeled", "bird", "branch", "tree"]);
}

#[test]
fn one_cell_grid_equals_bench() {
    let backbone = replay();
    let dataset = voc();
    let base = PipelineConfig {
        refinement: RefineMethod::None,
        ..Default::default()
    };
    let grid = AblationGrid::from_toml("name = \"one\"\n[[axis]]\nkey = \"k\"\nvalues = [4]\n").unwrap();
    let result = run_ablation(&backbone, &dataset, &base, &grid, None).unwrap();
    let bench = run_benchmark(&backbone, &dataset, &base, None).unwrap();
    assert_eq!(result.cells.len(), 1);
    assert_eq!(result.cells[0].report.without_timing().to_json(), bench.without_timing().to_json());
}

#[test]
fn k_axis_gives_one_report_per_value() {
    let backbone = replay();
    let dataset = voc();
    let base = PipelineConfig {
        refinement: RefineMethod::None,
        ..Default::default()
    };
    let grid = AblationGrid::preset("coco-k").unwrap();
    let result = run_ablation(&backbone, &dataset, &base, &grid, None).unwrap();
    let ks: Vec<usize> = result.cells.iter().map(|c| c.config.k).collect();
    assert_eq!(ks, [3, 4, 5]);
    let table = result.summary_table();
    assert_eq!(table.lines().count(), 5, "{table}");
}

#[test]
fn stage_and_feature_grids_have_the_table_layouts() {
    let stages = AblationGrid::preset("stages").unwrap();
    let labels: Vec<String> = stages.cell_indices().iter().map(|i| stages.cell_labels(i).join("")).collect();
    assert_eq!(labels, ["baseline", "+caption", "+refinement", "+attention"]);
    let base = PipelineConfig::default();
    let configs: Vec<PipelineConfig> =
        stages.cell_indices().iter().map(|i| stages.cell_config(&base, i).unwrap()).collect();
    assert!(!configs[0].use_caption && configs[0].refinement == RefineMethod::None);
    assert!(configs[1].use_caption && configs[1].refinement == RefineMethod::None);
    assert!(configs[2].refinement == RefineMethod::Crf && !configs[2].include_attention);
    assert!(configs[3].include_attention);

    let features = AblationGrid::preset("features").unwrap();
    assert_eq!(features.num_cells(), 36);
    let backbone = replay();
    let dataset = voc();
    let base = PipelineConfig {
        refinement: RefineMethod::None,
        ..Default::default()
    };
    let result = run_ablation(&backbone, &dataset, &base, &features, Some(1)).unwrap();
    let table = result.summary_table();
    let rows: Vec<&str> = table.lines().collect();
    // title, header, six resolution rows
    assert_eq!(rows.len(), 8, "{table}");
    assert_eq!(rows[1].split_whitespace().count(), 1 + 6 * 2);
}

#[test]
fn uncached_image_is_a_backend_error() {
    let backbone = replay();
    let image = ImageRecord::from_fn("not-cached", 16, 16, |x, y| [x as u8 * 9, y as u8 * 9, 40]).unwrap();
    let pipeline = Pipeline::closed(&backbone, PipelineConfig::default(), freeseg::eval::builtin_classes("voc21").unwrap()).unwrap();
    let err = pipeline.segment(&image).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
    assert!(err.is_backend());
}
