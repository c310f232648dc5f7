use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array3;

use super::cache::{MapMeta, Tensor, TensorCache};
use super::{Backbone, FeatureMap, MapKind};
use crate::error::{Error, Result};
use crate::imaging::{sha256_hex, ImageRecord};

/// Cache directory holding text embeddings, which belong to no image.
pub const TEXT_NAMESPACE: &str = "_text";

const HASH_LEN: usize = 16;

/// Cache key for a backbone map.
pub fn map_key(timestep: u32, resolution: usize, kind: MapKind, order: usize) -> String {
    let kind = match kind {
        MapKind::Feature => "feature",
        MapKind::Attention => "attention",
    };
    format!("map_t{timestep}_r{resolution}_{kind}_{order:03}")
}

fn short_hash(hex: &str) -> &str {
    &hex[..HASH_LEN]
}

/// Cache-first backbone.
///
/// Without an inner client this is the replay adapter: every request must be
/// served from the cache or fails with `BackendUnavailable`. With a client,
/// misses and corrupt entries are computed and written back.
pub struct CachedBackbone {
    cache: Arc<TensorCache>,
    inner: Option<Box<dyn Backbone>>,
}

impl CachedBackbone {
    pub fn replay(cache: Arc<TensorCache>) -> Self {
        CachedBackbone { cache, inner: None }
    }

    pub fn with_client(cache: Arc<TensorCache>, inner: Box<dyn Backbone>) -> Self {
        CachedBackbone {
            cache,
            inner: Some(inner),
        }
    }

    pub fn cache(&self) -> &TensorCache {
        &self.cache
    }

    fn client(&self, what: &str) -> Result<&dyn Backbone> {
        self.inner.as_deref().ok_or_else(|| {
            Error::BackendUnavailable(format!(
                "{what} not in cache at {} and no model backend configured",
                self.cache.root().display()
            ))
        })
    }

    /// Loads cached maps covering the request, or `None` when the cache cannot
    /// serve it completely.
    fn cached_maps(
        &self,
        image_id: &str,
        timestep: u32,
        resolutions: &[usize],
        include_attention: bool,
    ) -> Result<Option<Vec<FeatureMap>>> {
        let Some(manifest) = self.cache.manifest(image_id)? else {
            return Ok(None);
        };
        let wanted: BTreeSet<usize> = resolutions.iter().copied().collect();
        let selected: Vec<_> = manifest
            .entries
            .iter()
            .filter_map(|(k, e)| e.map.as_ref().map(|m| (k, e, m)))
            .filter(|(_, _, m)| m.timestep == timestep && wanted.contains(&m.resolution))
            .filter(|(_, _, m)| include_attention || m.kind == MapKind::Feature)
            .collect();
        for &r in &wanted {
            let has = |kind| selected.iter().any(|(_, _, m)| m.resolution == r && m.kind == kind);
            if !has(MapKind::Feature) || (include_attention && !has(MapKind::Attention)) {
                return Ok(None);
            }
        }
        let mut maps = Vec::with_capacity(selected.len());
        for (key, entry, meta) in selected {
            let t = self.cache.read_entry(image_id, key, entry)?;
            maps.push(tensor_to_map(key, t, meta)?);
        }
        Ok(Some(maps))
    }

    fn store_maps(&self, image_id: &str, timestep: u32, maps: &[FeatureMap]) -> Result<()> {
        for m in maps {
            let (c, h, w) = m.tensor.dim();
            let data = m.tensor.iter().copied().collect();
            let tensor = Tensor::new(vec![c, h, w], data)?;
            let meta = MapMeta {
                kind: m.kind,
                resolution: m.resolution,
                timestep,
                block: m.block.clone(),
                order: m.order,
            };
            let key = map_key(timestep, m.resolution, m.kind, m.order);
            self.cache.put_map(image_id, &key, &tensor, Some(meta))?;
        }
        Ok(())
    }

    fn cached_tensor(&self, namespace: &str, key: &str) -> Result<Option<Tensor>> {
        match self.cache.get(namespace, key) {
            Err(Error::CorruptEntry { key, reason }) if self.inner.is_some() => {
                log::warn!("replacing corrupt cache entry {key}: {reason}");
                Ok(None)
            }
            other => other,
        }
    }
}

fn tensor_to_map(key: &str, t: Tensor, meta: &MapMeta) -> Result<FeatureMap> {
    let [c, h, w] = t.shape[..] else {
        return Err(Error::CorruptEntry {
            key: key.to_string(),
            reason: format!("expected a 3-d tensor, found shape {:?}", t.shape),
        });
    };
    let tensor = Array3::from_shape_vec((c, h, w), t.data)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(FeatureMap {
        resolution: meta.resolution,
        kind: meta.kind,
        block: meta.block.clone(),
        order: meta.order,
        tensor,
    })
}

impl Backbone for CachedBackbone {
    fn features(
        &self,
        image: &ImageRecord,
        timestep: u32,
        resolutions: &[usize],
        include_attention: bool,
    ) -> Result<Vec<FeatureMap>> {
        let cached = match self.cached_maps(&image.id, timestep, resolutions, include_attention) {
            Err(Error::CorruptEntry { key, reason }) if self.inner.is_some() => {
                log::warn!("re-extracting features for {}: {key}: {reason}", image.id);
                None
            }
            other => other?,
        };
        if let Some(maps) = cached {
            return Ok(maps);
        }
        let client = self.client(&format!("features for `{}`", image.id))?;
        let maps = client.features(image, timestep, resolutions, include_attention)?;
        self.store_maps(&image.id, timestep, &maps)?;
        Ok(maps)
    }

    fn caption(&self, image: &ImageRecord) -> Result<String> {
        let key = format!("caption_{}", short_hash(&image.content_hash()));
        if let Some(c) = self.cache.get_text(&image.id, &key)? {
            return Ok(c);
        }
        let caption = self
            .client(&format!("caption for `{}`", image.id))?
            .caption(image)?;
        if caption.trim().is_empty() {
            return Err(Error::EmptyCaption);
        }
        self.cache.put_text(&image.id, &key, &caption)?;
        Ok(caption)
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Vec<f32>> {
        let key = format!("emb_{}", short_hash(&image.content_hash()));
        if let Some(t) = self.cached_tensor(&image.id, &key)? {
            return Ok(t.data);
        }
        let v = self
            .client(&format!("image embedding for `{}` ({key})", image.id))?
            .embed_image(image)?;
        self.cache.put(&image.id, &key, &Tensor::new(vec![v.len()], v.clone())?)?;
        Ok(v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let hash = sha256_hex(text.as_bytes());
        let key = format!("emb_{}", short_hash(&hash));
        if let Some(t) = self.cached_tensor(TEXT_NAMESPACE, &key)? {
            return Ok(t.data);
        }
        let v = self
            .client(&format!("text embedding for {text:?}"))?
            .embed_text(text)?;
        self.cache
            .put(TEXT_NAMESPACE, &key, &Tensor::new(vec![v.len()], v.clone())?)?;
        self.cache
            .put_text(TEXT_NAMESPACE, &format!("text_{}", short_hash(&hash)), text)?;
        Ok(v)
    }
}
