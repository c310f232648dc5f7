use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::de::DeserializeOwned;

use freeseg::assignment::MaskFill;
use freeseg::backbones::{Backbone, CachedBackbone, ProcessBackbone, SyntheticBackbone, TensorCache};
use freeseg::config::CandidateMode;
use freeseg::eval::{builtin_classes, DatasetKind, DatasetSpec};
use freeseg::refine::RefineMethod;
use freeseg::vocabulary::load_class_list;
use freeseg::PipelineConfig;

use crate::failure::{CliResult, Failure};

/// Parses a flag value with the same spelling the config file uses.
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Options shared by every command. Precedence, lowest first: built-in
/// defaults, the `--config` file, then flags. The cache root is taken from
/// `--cache`, else `FREESEG_CACHE`, else the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cache root for features, captions and embeddings.
    #[arg(long, env = "FREESEG_CACHE", global = true)]
    pub cache: Option<PathBuf>,
    /// Model worker command speaking the JSON-lines protocol; results are
    /// written through to the cache.
    #[arg(long, global = true, conflicts_with = "synthetic")]
    pub backend_cmd: Option<String>,
    /// Use the built-in synthetic backend (colour features, no model).
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Images processed in parallel.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..), global = true)]
    pub jobs: u16,

    /// Diffusion timestep of the single denoising step.
    #[arg(long, global = true)]
    pub timestep: Option<u32>,
    /// Comma-separated native resolutions, e.g. `16,32`.
    #[arg(long, value_delimiter = ',', global = true)]
    pub resolutions: Option<Vec<usize>>,
    /// Number of clusters.
    #[arg(short, long, global = true)]
    pub k: Option<usize>,
    /// K-means seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cluster attention maps alongside the features.
    #[arg(long, global = true)]
    pub attention: bool,
    /// crf, pamr or none.
    #[arg(long, value_parser = serde_value::<RefineMethod>, global = true)]
    pub refine: Option<RefineMethod>,
    /// black, mean or crop.
    #[arg(long, value_parser = serde_value::<MaskFill>, global = true)]
    pub mask_fill: Option<MaskFill>,
    /// Skip the caption; every class is a candidate.
    #[arg(long, global = true)]
    pub no_caption: bool,
}

impl Common {
    pub fn pipeline_config(&self) -> CliResult<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(path.clone(), e))?;
                PipelineConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(t) = self.timestep {
            config.timestep = t;
        }
        if let Some(r) = &self.resolutions {
            config.resolutions = r.iter().copied().collect();
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if self.attention {
            config.include_attention = true;
        }
        if let Some(r) = self.refine {
            config.refinement = r;
        }
        if let Some(m) = self.mask_fill {
            config.mask_fill = m;
        }
        if self.no_caption {
            config.use_caption = false;
        }
        if let Some(c) = &self.cache {
            config.cache = Some(c.clone());
        }
        config.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(config)
    }

    fn client(&self) -> CliResult<Option<Box<dyn Backbone>>> {
        if self.synthetic {
            return Ok(Some(Box::new(SyntheticBackbone)));
        }
        match &self.backend_cmd {
            Some(cmd) => {
                let argv = shlex::split(cmd).ok_or_else(|| Failure::Config(format!("cannot parse `{cmd}`")))?;
                let worker = ProcessBackbone::new(argv).map_err(|e| Failure::Config(e.to_string()))?;
                Ok(Some(Box::new(worker)))
            }
            None => Ok(None),
        }
    }

    /// Whether results will be written into the cache.
    pub fn writes_cache(&self) -> bool {
        self.synthetic || self.backend_cmd.is_some()
    }

    /// Replay from the cache, write through it when a backend is given, or
    /// call the backend directly when there is no cache root.
    pub fn backbone(&self, config: &PipelineConfig) -> CliResult<Box<dyn Backbone>> {
        let client = self.client()?;
        match (&config.cache, client) {
            (Some(root), Some(inner)) => Ok(Box::new(CachedBackbone::with_client(
                Arc::new(TensorCache::new(root)),
                inner,
            ))),
            (Some(root), None) => Ok(Box::new(CachedBackbone::replay(Arc::new(TensorCache::new(root))))),
            (None, Some(inner)) => Ok(inner),
            (None, None) => Err(Failure::Lib(freeseg::Error::BackendUnavailable(
                "no cache root (--cache or FREESEG_CACHE) and no backend (--backend-cmd or --synthetic)".into(),
            ))),
        }
    }

    pub fn thread_pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs as usize)
            .build()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))
    }
}

/// Vocabulary for single images.
#[derive(Args, Debug, Clone)]
pub struct VocabArgs {
    /// Class list: a built-in name (voc21, coco81, coco27) or a file with one
    /// class per line. Defaults to voc21.
    #[arg(long, conflicts_with = "open_vocab")]
    pub classes: Option<String>,
    /// Use the nouns of the caption as the vocabulary.
    #[arg(long)]
    pub open_vocab: bool,
}

impl VocabArgs {
    pub fn apply(&self, config: &mut PipelineConfig) -> CliResult<Vec<String>> {
        if self.open_vocab {
            config.candidate_mode = CandidateMode::Open;
            return Ok(Vec::new());
        }
        config.candidate_mode = CandidateMode::Closed;
        let name = self.classes.as_deref().unwrap_or("voc21");
        if let Some(classes) = builtin_classes(name) {
            return Ok(classes);
        }
        let path = Path::new(name);
        if !path.exists() {
            return Err(Failure::Config(format!(
                "`{name}` is neither a built-in class list nor a file"
            )));
        }
        load_class_list(path).map_err(Failure::from)
    }
}

/// Dataset selection for `bench` and `ablate`; overrides the config's
/// `[dataset]` table.
#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// voc21, voc-c, coco81, coco27 or custom.
    #[arg(long, value_parser = serde_value::<DatasetKind>)]
    pub dataset: Option<DatasetKind>,
    /// Dataset root directory.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Split file listing image ids, relative to the root.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Score at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl DatasetArgs {
    pub fn spec(&self, config: &PipelineConfig) -> CliResult<DatasetSpec> {
        let mut spec = match (self.dataset, &self.data_root, &config.dataset) {
            (Some(kind), Some(root), _) => DatasetSpec::new(kind, root),
            (Some(kind), None, Some(base)) => DatasetSpec::new(kind, &base.root),
            (None, Some(root), Some(base)) => DatasetSpec {
                root: root.clone(),
                ..base.clone()
            },
            (None, None, Some(base)) => base.clone(),
            (None, Some(root), None) => DatasetSpec::new(DatasetKind::Voc21, root),
            (_, None, None) => {
                return Err(Failure::Config(
                    "no dataset: pass --data-root or add a [dataset] table to the config".into(),
                ))
            }
        };
        if let Some(split) = &self.split {
            spec.split = Some(split.clone());
        }
        Ok(spec)
    }
}

/// Absolute, symlink-resolved form of a path that may not exist yet.
fn resolved(path: &Path) -> CliResult<PathBuf> {
    let abs = std::path::absolute(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    let mut existing = abs.as_path();
    let mut rest = Vec::new();
    while !existing.exists() {
        match (existing.parent(), existing.file_name()) {
            (Some(parent), Some(name)) => {
                rest.push(name.to_owned());
                existing = parent;
            }
            _ => break,
        }
    }
    let mut out = existing.canonicalize().map_err(|e| Failure::Io(existing.to_path_buf(), e))?;
    out.extend(rest.iter().rev());
    Ok(out)
}

/// Refuses output locations inside the dataset root.
pub fn ensure_outside(target: &Path, what: &str, dataset_root: &Path) -> CliResult {
    let root = resolved(dataset_root)?;
    if resolved(target)?.starts_with(&root) {
        return Err(Failure::Config(format!(
            "{what} {} lies inside the dataset root {}",
            target.display(),
            dataset_root.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = 6\nseed = 3\nrefinement = \"pamr\"\n").unwrap();
        let common = Common {
            config: Some(path),
            k: Some(5),
            ..Default::default()
        };
        let c = common.pipeline_config().unwrap();
        assert_eq!((c.k, c.seed, c.refinement), (5, 3, RefineMethod::Pamr));
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "colour = 1\n").unwrap();
        let common = Common {
            config: Some(path),
            ..Default::default()
        };
        assert_eq!(common.pipeline_config().unwrap_err().code(), 1);
        let common = Common {
            resolutions: Some(vec![20]),
            ..Default::default()
        };
        assert_eq!(common.pipeline_config().unwrap_err().code(), 1);
    }

    #[test]
    fn no_cache_no_backend_is_a_backend_error() {
        let common = Common::default();
        let config = common.pipeline_config().unwrap();
        assert_eq!(common.backbone(&config).err().unwrap().code(), 2);
    }

    #[test]
    fn outputs_inside_the_dataset_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("voc");
        std::fs::create_dir(&root).unwrap();
        assert!(ensure_outside(&root.join("out/x"), "output", &root).is_err());
        assert!(ensure_outside(&root.join("../voc/./out"), "output", &root).is_err());
        assert!(ensure_outside(&dir.path().join("out"), "output", &root).is_ok());
    }
}
