//! Interfaces to the frozen external models.
//!
//! Three models feed the pipeline: a diffusion U-Net whose intermediate
//! activations serve as dense features, an image captioner, and a joint
//! image-text embedder. They are reached through the [`Backbone`] trait so that
//! every downstream stage can run from the on-disk [`TensorCache`] alone.

mod cache;
mod client;
mod process;
mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

pub use cache::{
    validate_key, Manifest, ManifestEntry, MapMeta, Tensor, TensorCache, DTYPE_F32, LAYOUT,
    MANIFEST_FILE,
};
pub use client::{map_key, CachedBackbone, TEXT_NAMESPACE};
pub use process::ProcessBackbone;
pub use synthetic::{SyntheticBackbone, SYNTHETIC_DIM};

use crate::error::{Error, Result};
use crate::imaging::ImageRecord;

/// Native U-Net block resolutions that can be requested.
pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [16, 32, 64];
pub const DEFAULT_GRID_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Feature,
    Attention,
}

/// One spatial map returned by the diffusion backbone, `C × r × r`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub resolution: usize,
    pub kind: MapKind,
    /// Backbone-declared block name (e.g. `up_blocks.1.resnets.2`).
    pub block: String,
    /// Position of the block in the backbone's own ordering.
    pub order: usize,
    pub tensor: Array3<f32>,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    fn check(&self) -> Result<()> {
        let s = self.tensor.shape();
        if s[1] != s[2] {
            return Err(Error::ShapeMismatch(format!(
                "map `{}` is not square: {}x{}",
                self.block, s[1], s[2]
            )));
        }
        if s[1] != self.resolution {
            return Err(Error::ShapeMismatch(format!(
                "map `{}` declares resolution {} but is {}x{}",
                self.block, self.resolution, s[1], s[2]
            )));
        }
        if s[0] == 0 {
            return Err(Error::ShapeMismatch(format!("map `{}` has no channels", self.block)));
        }
        Ok(())
    }
}

/// Which maps to pull from the diffusion backbone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureRequest {
    pub timestep: u32,
    pub resolutions: BTreeSet<usize>,
    pub include_attention: bool,
    pub grid_size: usize,
}

impl Default for FeatureRequest {
    fn default() -> Self {
        FeatureRequest {
            timestep: 0,
            resolutions: BTreeSet::from([16]),
            include_attention: false,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

/// Multi-resolution maps for one image and their per-cell concatenation.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub image_id: String,
    pub maps: Vec<FeatureMap>,
    pub grid_size: usize,
    /// `grid_size² × C`, row `y * grid_size + x`.
    pub concat: Array2<f64>,
    pub timestep: u32,
}

impl FeatureStack {
    /// Validates, orders canonically and concatenates `maps`.
    ///
    /// Canonical order is resolution ascending, features before attention,
    /// then the backbone's block order.
    pub fn from_maps(
        image_id: impl Into<String>,
        mut maps: Vec<FeatureMap>,
        grid_size: usize,
        timestep: u32,
    ) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::InvalidArgument("grid_size must be positive".into()));
        }
        if maps.is_empty() {
            return Err(Error::ShapeMismatch("backbone returned no maps".into()));
        }
        for m in &maps {
            m.check()?;
        }
        maps.sort_by(|a, b| {
            (a.resolution, a.kind, a.order, &a.block).cmp(&(b.resolution, b.kind, b.order, &b.block))
        });
        let channels: usize = maps.iter().map(FeatureMap::channels).sum();
        let cells = grid_size * grid_size;
        let mut concat = Array2::<f64>::zeros((cells, channels));
        let mut col = 0;
        for m in &maps {
            let resized = resize_bilinear(m.tensor.view(), grid_size, grid_size);
            for c in 0..m.channels() {
                for y in 0..grid_size {
                    for x in 0..grid_size {
                        concat[[y * grid_size + x, col + c]] = resized[[c, y, x]] as f64;
                    }
                }
            }
            col += m.channels();
        }
        Ok(FeatureStack {
            image_id: image_id.into(),
            maps,
            grid_size,
            concat,
            timestep,
        })
    }

    pub fn channels(&self) -> usize {
        self.concat.ncols()
    }
}

/// Bilinear resize of every channel of a `C × h × w` tensor, half-pixel
/// centres with edge clamping (no anti-aliasing).
pub fn resize_bilinear(src: ArrayView3<'_, f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, in_h, in_w) = src.dim();
    let rows = axis_weights(in_h, out_h);
    let cols = axis_weights(in_w, out_w);
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = src[[ch, y0, x0]] as f64 * (1.0 - fx) + src[[ch, y0, x1]] as f64 * fx;
                let bot = src[[ch, y1, x0]] as f64 * (1.0 - fx) + src[[ch, y1, x1]] as f64 * fx;
                out[[ch, y, x]] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    out
}

fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Image,
    Text,
}

/// Unit-norm vector in the shared image-text embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    pub source: EmbeddingSource,
}

impl Embedding {
    /// L2-normalizes `raw`; rejects empty, zero or non-finite vectors.
    pub fn normalized(raw: &[f32], source: EmbeddingSource) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::ShapeMismatch("empty embedding".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let norm = raw.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateInput("zero embedding".into()));
        }
        Ok(Embedding {
            values: raw.iter().map(|&v| (v as f64 / norm) as f32).collect(),
            source,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    /// `1 − cosine`.
    pub fn distance(&self, other: &Embedding) -> f64 {
        1.0 - self.cosine(other)
    }
}

/// A frozen model stack (diffusion features, captioner, embedder).
pub trait Backbone: Send + Sync {
    /// Raw maps for the requested native resolutions. Attention maps are only
    /// returned when `include_attention` is set.
    fn features(
        &self,
        image: &ImageRecord,
        timestep: u32,
        resolutions: &[usize],
        include_attention: bool,
    ) -> Result<Vec<FeatureMap>>;

    fn caption(&self, image: &ImageRecord) -> Result<String>;

    /// Unnormalized image embedding.
    fn embed_image(&self, image: &ImageRecord) -> Result<Vec<f32>>;

    /// Unnormalized text embedding.
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
}

/// Runs the diffusion backbone for a single denoising step and assembles the
/// canonical [`FeatureStack`].
pub fn extract_features(
    backbone: &dyn Backbone,
    image: &ImageRecord,
    request: &FeatureRequest,
) -> Result<FeatureStack> {
    if request.resolutions.is_empty() {
        return Err(Error::InvalidArgument("no feature resolutions requested".into()));
    }
    if let Some(r) = request
        .resolutions
        .iter()
        .find(|r| !SUPPORTED_RESOLUTIONS.contains(r))
    {
        return Err(Error::InvalidArgument(format!(
            "unsupported resolution {r}; expected one of {SUPPORTED_RESOLUTIONS:?}"
        )));
    }
    let resolutions: Vec<usize> = request.resolutions.iter().copied().collect();
    let maps = backbone.features(image, request.timestep, &resolutions, request.include_attention)?;
    let mut maps_checked = Vec::with_capacity(maps.len());
    for m in maps {
        if !request.resolutions.contains(&m.resolution) {
            return Err(Error::ShapeMismatch(format!(
                "backbone returned unrequested resolution {} (block `{}`)",
                m.resolution, m.block
            )));
        }
        if m.kind == MapKind::Attention && !request.include_attention {
            continue;
        }
        maps_checked.push(m);
    }
    for r in &request.resolutions {
        if !maps_checked
            .iter()
            .any(|m| m.resolution == *r && m.kind == MapKind::Feature)
        {
            return Err(Error::ShapeMismatch(format!(
                "backbone returned no feature map at resolution {r}"
            )));
        }
    }
    FeatureStack::from_maps(image.id.clone(), maps_checked, request.grid_size, request.timestep)
}

pub fn caption_image(backbone: &dyn Backbone, image: &ImageRecord) -> Result<String> {
    let caption = backbone.caption(image)?;
    if caption.trim().is_empty() {
        return Err(Error::EmptyCaption);
    }
    Ok(caption)
}

pub fn embed_image(backbone: &dyn Backbone, image: &ImageRecord) -> Result<Embedding> {
    Embedding::normalized(&backbone.embed_image(image)?, EmbeddingSource::Image)
}

pub fn embed_text(backbone: &dyn Backbone, text: &str) -> Result<Embedding> {
    Embedding::normalized(&backbone.embed_text(text)?, EmbeddingSource::Text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bilinear_two_by_two_corners() {
        let src = array![[[1.0f32, 2.0], [3.0, 4.0]]];
        let out = resize_bilinear(src.view(), 4, 4);
        // half-pixel oracle: output i samples source coordinate (i + 0.5)/2 - 0.5
        // -> -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
        let coords = [0.0, 0.25, 0.75, 1.0];
        let v = |y: f64, x: f64| {
            let top = 1.0 * (1.0 - x) + 2.0 * x;
            let bot = 3.0 * (1.0 - x) + 4.0 * x;
            top * (1.0 - y) + bot * y
        };
        for (i, &cy) in coords.iter().enumerate() {
            for (j, &cx) in coords.iter().enumerate() {
                assert!((out[[0, i, j]] as f64 - v(cy, cx)).abs() < 1e-6);
            }
        }
        assert_eq!(out[[0, 0, 0]], 1.0);
        assert_eq!(out[[0, 0, 3]], 2.0);
        assert_eq!(out[[0, 3, 0]], 3.0);
        assert_eq!(out[[0, 3, 3]], 4.0);
        assert_eq!(out[[0, 1, 1]], 1.75);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let src = Array3::from_shape_fn((3, 5, 5), |(c, y, x)| (c * 31 + y * 7 + x) as f32 * 0.37);
        assert_eq!(resize_bilinear(src.view(), 5, 5), src);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let src = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f32);
        let out = resize_bilinear(src.view(), 2, 2);
        // samples at 0.5 and 2.5 in each axis
        assert_eq!(out[[0, 0, 0]], 2.5);
        assert_eq!(out[[0, 1, 1]], 12.5);
    }

    fn map(res: usize, kind: MapKind, c: usize, order: usize) -> FeatureMap {
        FeatureMap {
            resolution: res,
            kind,
            block: format!("b{order}"),
            order,
            tensor: Array3::from_elem((c, res, res), order as f32),
        }
    }

    #[test]
    fn concat_width_is_channel_sum_and_order_is_canonical() {
        let maps = vec![
            map(64, MapKind::Feature, 2, 0),
            map(16, MapKind::Attention, 1, 1),
            map(16, MapKind::Feature, 3, 2),
            map(32, MapKind::Feature, 5, 3),
        ];
        let stack = FeatureStack::from_maps("x", maps, 32, 0).unwrap();
        assert_eq!(stack.concat.dim(), (1024, 11));
        let order: Vec<_> = stack.maps.iter().map(|m| (m.resolution, m.kind)).collect();
        assert_eq!(
            order,
            vec![
                (16, MapKind::Feature),
                (16, MapKind::Attention),
                (32, MapKind::Feature),
                (64, MapKind::Feature)
            ]
        );
        assert_eq!(stack.concat[[0, 0]], 2.0);
        assert_eq!(stack.concat[[0, 3]], 1.0);
        assert_eq!(stack.concat[[0, 10]], 0.0);
    }

    #[test]
    fn non_square_map_is_rejected() {
        let m = FeatureMap {
            resolution: 16,
            kind: MapKind::Feature,
            block: "b".into(),
            order: 0,
            tensor: Array3::zeros((2, 16, 8)),
        };
        assert!(matches!(
            FeatureStack::from_maps("x", vec![m], 32, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let e = Embedding::normalized(&[3.0, 4.0, 12.0], EmbeddingSource::Text).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!((e.cosine(&e) - 1.0).abs() < 1e-6);
        assert!(Embedding::normalized(&[0.0, 0.0], EmbeddingSource::Text).is_err());
        assert!(Embedding::normalized(&[f32::NAN], EmbeddingSource::Text).is_err());
    }
}
