//! Class-agnostic region discovery: K-means over per-cell feature vectors,
//! one binary mask per cluster, nearest-neighbour upsampling to image size.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbones::FeatureStack;
use crate::error::{Error, Result};

/// Rows per block when summing centroids; blocks are reduced in index order
/// so results do not depend on the number of worker threads.
const SUM_BLOCK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Zero-mean, unit-variance columns before clustering.
    pub standardize: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 4,
            seed: 0,
            max_iters: 300,
            tol: 1e-4,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    /// `k × C`.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Clusters that were found empty, either during iteration (their
    /// centroid was moved onto the farthest point) or after the final
    /// assignment.
    pub empty_reseeded: Vec<bool>,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
}

impl ClusterResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every row, ties to the lowest index.
fn assign(points: &[f64], dim: usize, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    points
        .par_chunks(dim)
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.chunks(dim).enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn block_sums(points: &[f64], dim: usize, k: usize, assignments: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let partials: Vec<(Vec<f64>, Vec<usize>)> = points
        .par_chunks(SUM_BLOCK * dim)
        .zip(assignments.par_chunks(SUM_BLOCK))
        .map(|(block, labels)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (p, &a) in block.chunks(dim).zip(labels) {
                counts[a] += 1;
                for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in partials {
        for (acc, v) in sums.iter_mut().zip(s) {
            *acc += v;
        }
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }
    (sums, counts)
}

fn kmeans_plus_plus(points: &[f64], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut nearest: Vec<f64> = points
        .chunks(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total weight")
        } else {
            0
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (w, p) in nearest.iter_mut().zip(points.chunks(dim)) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when the Frobenius norm of the centroid update drops below `tol` or
/// after `max_iters` assignment/update rounds. A cluster left empty by an
/// assignment step gets its centroid moved onto the point farthest from its
/// own centroid. Final assignments are exact nearest-centroid against the
/// returned centroids, ties resolved to the lowest index.
pub fn kmeans(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterResult> {
    let (n, dim) = points.dim();
    if k == 0 || n < k {
        return Err(Error::DegenerateInput(format!("{n} points for {k} clusters")));
    }
    if dim == 0 {
        return Err(Error::DegenerateInput("points have no coordinates".into()));
    }
    if max_iters == 0 || !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_iters={max_iters}, tol={tol}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let owned;
    let data: &[f64] = match points.as_slice() {
        Some(s) => s,
        None => {
            owned = points.as_standard_layout().into_owned();
            owned.as_slice().expect("standard layout")
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(data, dim, n, k, &mut rng);
    let mut empty = vec![false; k];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let (labels, dists) = assign(data, dim, &centroids);
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev, "inertia rose from {prev} to {inertia}");
        }
        history.push(inertia);

        let (sums, counts) = block_sums(data, dim, k, &labels);
        let mut next = centroids.clone();
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            let row = &mut next[j * dim..(j + 1) * dim];
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, s) in row.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / inv;
                }
            } else {
                empty[j] = true;
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, d)) if dists[i] <= d => best,
                        _ => Some((i, dists[i])),
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.push(far);
                row.copy_from_slice(&data[far * dim..(far + 1) * dim]);
            }
        }
        let shift = sq_dist(&centroids, &next).sqrt();
        centroids = next;
        if shift < tol || shift == 0.0 {
            break;
        }
    }

    let (assignments, dists) = assign(data, dim, &centroids);
    let inertia: f64 = dists.iter().sum();
    history.push(inertia);
    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    for (e, &c) in empty.iter_mut().zip(&counts) {
        *e |= c == 0;
    }
    let centroids = Array2::from_shape_vec((k, dim), centroids).expect("k × C centroid buffer");
    Ok(ClusterResult {
        k,
        centroids,
        assignments,
        inertia,
        iterations,
        seed,
        empty_reseeded: empty,
        inertia_history: history,
    })
}

/// Per-column standardization; columns with (numerically) zero variance are
/// set to zero.
pub fn standardize_columns(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, c) = x.dim();
    let mut out = Array2::<f64>::zeros((n, c));
    for j in 0..c {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        for i in 0..n {
            out[[i, j]] = (x[[i, j]] - mean) / std;
        }
    }
    out
}

/// Clusters the rows of `stack.concat`.
pub fn cluster_features(stack: &FeatureStack, config: &ClusterConfig) -> Result<ClusterResult> {
    let expected = stack.grid_size * stack.grid_size;
    if stack.concat.nrows() != expected || stack.concat.ncols() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "concat is {:?}, expected {expected} rows and at least one column",
            stack.concat.dim()
        )));
    }
    if config.standardize {
        let z = standardize_columns(stack.concat.view());
        kmeans(z.view(), config.k, config.seed, config.max_iters, config.tol)
    } else {
        kmeans(stack.concat.view(), config.k, config.seed, config.max_iters, config.tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskResolution {
    FeatureGrid,
    Image,
}

/// Row-major boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub resolution: MaskResolution,
}

impl BinaryMask {
    pub fn filled(width: usize, height: usize, value: bool, resolution: MaskResolution) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![value; width * height],
            resolution,
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Inclusive-exclusive bounding box `(x0, y0, x1, y1)` of set bits.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }
}

/// One mask per cluster id.
pub fn binarize(result: &ClusterResult, grid_size: usize) -> Result<Vec<BinaryMask>> {
    if result.assignments.len() != grid_size * grid_size {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for a {grid_size}x{grid_size} grid",
            result.assignments.len()
        )));
    }
    Ok((0..result.k)
        .map(|k| BinaryMask {
            width: grid_size,
            height: grid_size,
            bits: result.assignments.iter().map(|&a| a == k).collect(),
            resolution: MaskResolution::FeatureGrid,
        })
        .collect())
}

/// Source index for output index `i` under nearest-neighbour resampling.
#[inline]
pub fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    i * src / dst
}

/// Nearest-neighbour upsampling (`src_i = ⌊i·h/H⌋`).
pub fn upsample_nearest(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    if height < mask.height || width < mask.width {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {}x{} to {height}x{width}",
            mask.height, mask.width
        )));
    }
    let xs: Vec<usize> = (0..width).map(|x| nearest_index(x, mask.width, width)).collect();
    let mut bits = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = nearest_index(y, mask.height, height);
        bits.extend(xs.iter().map(|&sx| mask.get(sx, sy)));
    }
    Ok(BinaryMask {
        width,
        height,
        bits,
        resolution: MaskResolution::Image,
    })
}

/// Cluster id per image pixel, by the same nearest-neighbour mapping.
pub fn upsample_assignments(assignments: &[usize], grid_size: usize, height: usize, width: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = nearest_index(y, grid_size, height);
        for x in 0..width {
            out.push(assignments[sy * grid_size + nearest_index(x, grid_size, width)]);
        }
    }
    out
}
