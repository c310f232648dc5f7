//! ProcessBackbone against the standard-library stub worker.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use freeseg::backbones::{Backbone, CachedBackbone, ProcessBackbone, TensorCache};
use freeseg::{ImageRecord, Pipeline, PipelineConfig};

fn worker() -> Option<ProcessBackbone> {
    let python = Command::new("python3").arg("--version").output().ok()?;
    if !python.status.success() {
        eprintln!("python3 not available; skipping");
        return None;
    }
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workers/stub_worker.py");
    Some(ProcessBackbone::new(vec!["python3".into(), script.to_string_lossy().into_owned()]).unwrap())
}

fn image() -> ImageRecord {
    ImageRecord::from_fn("square", 24, 20, |x, y| {
        if (6..16).contains(&x) && (5..14).contains(&y) {
            [220, 30, 30]
        } else {
            [20, 40, 200]
        }
    })
    .unwrap()
}

#[test]
fn worker_round_trip_then_offline_replay() {
    let Some(worker) = worker() else { return };
    let maps = worker.features(&image(), 0, &[16, 32], true).unwrap();
    assert_eq!(maps.len(), 4);
    assert_eq!(maps[0].tensor.shape(), &[3, 16, 16]);

    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(TensorCache::new(dir.path()));
    let config = PipelineConfig { k: 2, ..Default::default() };
    let classes = freeseg::eval::builtin_classes("voc21").unwrap();
    let online = {
        let backbone = CachedBackbone::with_client(cache.clone(), Box::new(worker));
        let seg = Pipeline::closed(&backbone, config.clone(), classes.clone()).unwrap().segment(&image()).unwrap();
        seg.refined
    };
    let replay = CachedBackbone::replay(cache);
    let offline = Pipeline::closed(&replay, config, classes).unwrap().segment(&image()).unwrap();
    assert_eq!(offline.refined, online);
    assert_eq!(offline.caption.as_deref(), Some("a red square on a blue background"));
}

#[test]
fn worker_errors_are_backend_errors() {
    let Some(_) = worker() else { return };
    let b = ProcessBackbone::new(vec!["python3".into(), "-c".into(), "import sys; sys.exit(0)".into()]).unwrap();
    let err = b.embed_text("dog").unwrap_err();
    assert!(err.is_backend(), "{err}");
}
