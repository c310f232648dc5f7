//! Regenerates `fixtures/`: three small VOC-style images with ground truth
//! and a replay cache covering the configurations the tests use.
//!
//! Features come from `SyntheticBackbone`. Captions are fixed per image.
//! Image embeddings come from an oracle that knows which named region each
//! pixel belongs to: a masked image embeds as the pixel-weighted mix of the
//! text embeddings of the regions visible through the mask. This stands in
//! for a real image-text encoder so that the shipped cache gives sensible
//! labels without any model weights.
//!
//!     cargo run -p freeseg --example make_fixtures -- <fixtures dir>

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use freeseg::backbones::{Backbone, CachedBackbone, FeatureMap, SyntheticBackbone, TensorCache, SYNTHETIC_DIM};
use freeseg::config::{CandidateMode, PipelineConfig};
use freeseg::eval::builtin_classes;
use freeseg::imaging::write_indexed_png;
use freeseg::refine::RefineMethod;
use freeseg::vocabulary::{prompt, DEFAULT_PROMPT};
use freeseg::{ImageRecord, Pipeline, Result};

struct Scene {
    id: &'static str,
    width: usize,
    height: usize,
    caption: &'static str,
    /// Region name per pixel, painted back to front.
    regions: Vec<&'static str>,
    colours: BTreeMap<&'static str, [u8; 3]>,
}

fn noise(x: usize, y: usize, salt: u64) -> i32 {
    let mut h = (x as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (y as u64).wrapping_mul(0xc2b2ae3d27d4eb4f) ^ salt;
    h ^= h >> 29;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 32;
    (h % 17) as i32 - 8
}

impl Scene {
    fn new(id: &'static str, width: usize, height: usize, caption: &'static str, base: &'static str) -> Scene {
        Scene {
            id,
            width,
            height,
            caption,
            regions: vec![base; width * height],
            colours: BTreeMap::new(),
        }
    }

    fn paint(&mut self, name: &'static str, colour: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        self.colours.insert(name, colour);
        for y in 0..self.height {
            for x in 0..self.width {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.regions[y * self.width + x] = name;
                }
            }
        }
    }

    fn image(&self) -> ImageRecord {
        let salt = self.id.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        ImageRecord::from_fn(self.id, self.width, self.height, |x, y| {
            let c = self.colours[self.regions[y * self.width + x]];
            let n = noise(x, y, salt);
            c.map(|v| (v as i32 + n).clamp(10, 245) as u8)
        })
        .expect("scene image")
    }

    fn ground_truth(&self, voc: &[String]) -> Vec<u8> {
        self.regions
            .iter()
            .map(|r| voc.iter().position(|c| c == r).unwrap_or(0) as u8)
            .collect()
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> impl Fn(f64, f64) -> bool {
    move |x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
}

fn scenes() -> Vec<Scene> {
    let mut bird = Scene::new("bird", 64, 64, "A small bird perched on a branch of a tree", "sky");
    bird.colours.insert("sky", [110, 160, 225]);
    bird.paint("tree", [40, 120, 45], ellipse(50.0, 52.0, 22.0, 20.0));
    bird.paint("branch", [110, 75, 40], |x, y| (y - (40.0 - 6.0 * x / 64.0)).abs() <= 2.5);
    bird.paint("bird", [200, 60, 40], ellipse(26.0, 30.0, 10.0, 7.0));

    let mut dog = Scene::new("dog", 96, 72, "A brown dog sleeping on a sofa in the living room", "wall");
    dog.colours.insert("wall", [215, 200, 170]);
    dog.paint("floor", [120, 90, 60], |_, y| y >= 60.0);
    dog.paint("sofa", [60, 80, 140], |x, y| (8.0..88.0).contains(&x) && (28.0..62.0).contains(&y));
    dog.paint("dog", [175, 125, 70], |x, y| ellipse(44.0, 38.0, 20.0, 9.0)(x, y) || ellipse(64.0, 30.0, 7.0, 7.0)(x, y));

    let mut cat = Scene::new("cat", 80, 60, "A cat sitting next to a potted plant on the floor", "wall");
    cat.colours.insert("wall", [180, 190, 200]);
    cat.paint("floor", [140, 110, 80], |_, y| y >= 45.0);
    cat.paint("cat", [70, 70, 70], |x, y| ellipse(28.0, 36.0, 12.0, 10.0)(x, y) || ellipse(28.0, 22.0, 7.0, 6.0)(x, y));
    cat.paint("potted plant", [50, 140, 60], ellipse(59.0, 28.0, 11.0, 11.0));
    let pot = [170, 90, 50];
    cat.paint("potted plant", pot, |x, y| (52.0..66.0).contains(&x) && (38.0..52.0).contains(&y));
    // both parts of the plant share one name; keep the foliage colour for the top
    cat.colours.insert("potted plant", [50, 140, 60]);
    cat.colours.insert("pot", pot);
    for y in 38..52 {
        for x in 52..66 {
            cat.regions[y * 80 + x] = "pot";
        }
    }

    vec![bird, dog, cat]
}

/// Synthetic features, fixed captions and the region-mix image embedder.
struct Oracle {
    synthetic: SyntheticBackbone,
    scenes: Vec<Scene>,
}

impl Oracle {
    fn region_name(name: &str) -> &str {
        if name == "pot" {
            "potted plant"
        } else {
            name
        }
    }

    fn unit(v: Vec<f32>) -> Vec<f32> {
        let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
        v.into_iter().map(|x| x / n).collect()
    }
}

impl Backbone for Oracle {
    fn features(&self, image: &ImageRecord, t: u32, res: &[usize], attn: bool) -> Result<Vec<FeatureMap>> {
        self.synthetic.features(image, t, res, attn)
    }

    fn caption(&self, image: &ImageRecord) -> Result<String> {
        let s = self.scenes.iter().find(|s| s.id == image.id).expect("known scene");
        Ok(s.caption.to_string())
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Vec<f32>> {
        let s = self.scenes.iter().find(|s| s.id == image.id).expect("known scene");
        assert_eq!((image.width(), image.height()), (s.width, s.height), "oracle needs full-frame masks");
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (p, px) in image.pixels().chunks_exact(3).enumerate() {
            if px != [0, 0, 0] {
                *counts.entry(Self::region_name(s.regions[p])).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        let mut out = vec![0f32; SYNTHETIC_DIM];
        for (name, n) in counts {
            let e = Self::unit(self.synthetic.embed_text(&prompt(DEFAULT_PROMPT, name))?);
            let w = n as f32 / total as f32;
            for (o, v) in out.iter_mut().zip(e) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.synthetic.embed_text(text)
    }
}

fn main() -> Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let voc_root = root.join("voc");
    let images = voc_root.join("JPEGImages");
    let labels = voc_root.join("SegmentationClass");
    let sets = voc_root.join("ImageSets/Segmentation");
    for d in [&images, &labels, &sets] {
        fs::create_dir_all(d).map_err(|e| freeseg::Error::Io {
            path: d.to_path_buf(),
            source: e,
        })?;
    }
    let voc = builtin_classes("voc21").expect("voc21");
    let scenes = scenes();
    let mut ids: Vec<&str> = scenes.iter().map(|s| s.id).collect();
    ids.sort();
    for s in &scenes {
        s.image().save_png(&images.join(format!("{}.png", s.id)))?;
        write_indexed_png(&labels.join(format!("{}.png", s.id)), s.width, s.height, &s.ground_truth(&voc))?;
    }
    write(&sets.join("val.txt"), &(ids.join("\n") + "\n"));
    write(&sets.join("voc_c.txt"), "bird\ndog\n");

    let cache_dir = root.join("cache");
    if cache_dir.exists() {
        fs::remove_dir_all(&cache_dir).expect("clear cache");
    }
    let records: Vec<ImageRecord> = scenes.iter().map(Scene::image).collect();
    let backbone = CachedBackbone::with_client(
        Arc::new(TensorCache::new(&cache_dir)),
        Box::new(Oracle {
            synthetic: SyntheticBackbone,
            scenes,
        }),
    );
    let resolution_sets: [&[usize]; 7] = [&[16], &[32], &[64], &[16, 32], &[32, 64], &[16, 64], &[16, 32, 64]];
    for mode in [CandidateMode::Closed, CandidateMode::Open] {
        for res in resolution_sets {
            for k in 2..=6 {
                for attention in [false, true] {
                    let config = PipelineConfig {
                        candidate_mode: mode,
                        resolutions: res.iter().copied().collect::<BTreeSet<_>>(),
                        k,
                        include_attention: attention,
                        refinement: RefineMethod::None,
                        ..Default::default()
                    };
                    let pipeline = Pipeline::new(&backbone, config, voc.clone())?;
                    for im in &records {
                        pipeline.segment(im)?;
                    }
                }
            }
        }
    }
    println!("fixtures written to {}", root.display());
    Ok(())
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
}
