//! The example files under `configs/` stay loadable.

use std::path::Path;

use freeseg::ablation::AblationGrid;
use freeseg::PipelineConfig;

fn read(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(rel)).unwrap()
}

#[test]
fn voc_example_spells_out_the_defaults() {
    let mut config = PipelineConfig::from_toml(&read("voc.toml")).unwrap();
    config.validate().unwrap();
    assert!(config.dataset.take().is_some());
    assert_eq!(config, PipelineConfig::default());
}

#[test]
fn other_examples_parse_and_validate() {
    PipelineConfig::from_toml(&read("coco27.toml")).unwrap().validate().unwrap();
    for (file, cells) in [("grids/crf.toml", 12), ("grids/resolutions.toml", 8)] {
        let grid = AblationGrid::from_toml(&read(file)).unwrap();
        assert_eq!(grid.num_cells(), cells, "{file}");
        let base = PipelineConfig::default();
        for idx in grid.cell_indices() {
            grid.cell_config(&base, &idx).unwrap().validate().unwrap();
        }
    }
}
