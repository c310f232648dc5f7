//! Mean-field inference in a fully connected CRF with Potts compatibility,
//! a Gaussian smoothness kernel and a bilateral appearance kernel.

use std::collections::HashMap;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{argmax_labels, UnaryField};
use crate::assignment::SegmentationMap;
use crate::error::{Error, Result};
use crate::imaging::ImageRecord;

/// Images up to this many pixels use exact pairwise sums.
pub const EXACT_LIMIT: usize = 4096;
/// Upper bound on bilateral cells for larger images.
pub const MAX_CELLS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub iterations: usize,
    pub w_smooth: f64,
    pub theta_xy_smooth: f64,
    pub w_bilateral: f64,
    pub theta_xy_bilateral: f64,
    pub theta_rgb: f64,
    /// Probability given to the coarse label when building the unary.
    pub unary_confidence: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            iterations: 5,
            w_smooth: 3.0,
            theta_xy_smooth: 3.0,
            w_bilateral: 10.0,
            theta_xy_bilateral: 60.0,
            theta_rgb: 10.0,
            unary_confidence: 0.8,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !nonneg(self.w_smooth) || !nonneg(self.w_bilateral) {
            return Err(Error::InvalidArgument("CRF weights must be finite and non-negative".into()));
        }
        if !pos(self.theta_xy_smooth) || !pos(self.theta_xy_bilateral) || !pos(self.theta_rgb) {
            return Err(Error::InvalidArgument("CRF bandwidths must be positive".into()));
        }
        if !(self.unary_confidence > 0.0 && self.unary_confidence < 1.0) {
            return Err(Error::InvalidArgument("unary confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Cell size for the bilateral approximation: square blocks of `spatial`
/// pixels, split further into colour bins of width `colour`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGrid {
    pub spatial: usize,
    pub colour: f64,
}

/// Bilateral cells: groups of pixels that share one kernel position.
/// With one pixel per cell the sums are exact.
struct Cells {
    of_pixel: Vec<usize>,
    features: Vec<[f64; 5]>,
}

impl Cells {
    fn build(image: &ImageRecord, params: &CrfParams, grid: Option<CellGrid>) -> Cells {
        let (w, h) = (image.width(), image.height());
        let feature = |x: usize, y: usize| {
            let [r, g, b] = image.rgb(x, y);
            [
                x as f64 / params.theta_xy_bilateral,
                y as f64 / params.theta_xy_bilateral,
                r as f64 / params.theta_rgb,
                g as f64 / params.theta_rgb,
                b as f64 / params.theta_rgb,
            ]
        };
        let Some(grid) = grid.filter(|g| g.spatial > 1) else {
            let mut features = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    features.push(feature(x, y));
                }
            }
            return Cells {
                of_pixel: (0..w * h).collect(),
                features,
            };
        };
        let bin = |v: u8| (v as f64 / grid.colour).floor() as i64;
        let mut index: HashMap<[i64; 5], usize> = HashMap::new();
        let mut sums: Vec<[f64; 5]> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut of_pixel = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let [r, g, b] = image.rgb(x, y);
                let key = [
                    (x / grid.spatial) as i64,
                    (y / grid.spatial) as i64,
                    bin(r),
                    bin(g),
                    bin(b),
                ];
                let c = *index.entry(key).or_insert_with(|| {
                    sums.push([0.0; 5]);
                    counts.push(0.0);
                    sums.len() - 1
                });
                let f = feature(x, y);
                for k in 0..5 {
                    sums[c][k] += f[k];
                }
                counts[c] += 1.0;
                of_pixel.push(c);
            }
        }
        let features = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.map(|v| v / n))
            .collect();
        Cells { of_pixel, features }
    }

    /// Grid for images above [`EXACT_LIMIT`], coarsened until it fits
    /// under [`MAX_CELLS`].
    fn auto(image: &ImageRecord, params: &CrfParams) -> Cells {
        let n = image.width() * image.height();
        if n <= EXACT_LIMIT {
            return Cells::build(image, params, None);
        }
        let mut grid = CellGrid {
            spatial: ((n as f64 / 1024.0).sqrt().ceil() as usize).max(2),
            colour: params.theta_rgb,
        };
        loop {
            let cells = Cells::build(image, params, Some(grid));
            if cells.len() <= MAX_CELLS {
                return cells;
            }
            if (grid.spatial as f64) < params.theta_xy_bilateral / 2.0 || grid.colour >= 256.0 {
                grid.spatial += (grid.spatial / 2).max(1);
            } else {
                grid.colour *= 1.5;
            }
        }
    }

    fn len(&self) -> usize {
        self.features.len()
    }

    /// `Σ_j k(i, j) Q_j` for every pixel, with `j = i` excluded.
    fn messages(&self, q: &Array2<f64>) -> Array2<f64> {
        let (n, l) = q.dim();
        let m = self.len();
        let mut sums = Array2::<f64>::zeros((m, l));
        for (i, &c) in self.of_pixel.iter().enumerate() {
            for k in 0..l {
                sums[[c, k]] += q[[i, k]];
            }
        }
        // self-pairs have kernel value 1
        let mut acc = sums.clone();
        for a in 0..m {
            let fa = self.features[a];
            for b in a + 1..m {
                let fb = &self.features[b];
                let mut d2 = 0.0;
                for k in 0..5 {
                    let d = fa[k] - fb[k];
                    d2 += d * d;
                }
                let kv = (-0.5 * d2).exp();
                for k in 0..l {
                    acc[[a, k]] += kv * sums[[b, k]];
                    acc[[b, k]] += kv * sums[[a, k]];
                }
            }
        }
        let mut out = Array2::<f64>::zeros((n, l));
        for (i, &c) in self.of_pixel.iter().enumerate() {
            for k in 0..l {
                out[[i, k]] = acc[[c, k]] - q[[i, k]];
            }
        }
        out
    }
}

/// Separable Gaussian sum over the whole image, self excluded.
fn smooth_messages(q: &Array2<f64>, h: usize, w: usize, theta: f64) -> Array2<f64> {
    let l = q.ncols();
    let radius = ((6.0 * theta).ceil() as usize).min(h.max(w));
    let g: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * theta * theta)).exp())
        .collect();
    let mut rows = Array2::<f64>::zeros((h * w, l));
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            for xs in lo..=hi {
                let kv = g[x.abs_diff(xs)];
                for k in 0..l {
                    rows[[y * w + x, k]] += kv * q[[y * w + xs, k]];
                }
            }
        }
    }
    let mut out = Array2::<f64>::zeros((h * w, l));
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for ys in lo..=hi {
            let kv = g[y.abs_diff(ys)];
            for x in 0..w {
                for k in 0..l {
                    out[[y * w + x, k]] += kv * rows[[ys * w + x, k]];
                }
            }
        }
    }
    out - q
}

/// Step-by-step mean-field inference, so intermediate `Q` can be inspected.
pub struct MeanField {
    params: CrfParams,
    height: usize,
    width: usize,
    /// Pixel-major `ln p`, shape `(H·W, L)`.
    log_unary: Array2<f64>,
    q: Array2<f64>,
    cells: Cells,
    labels: Vec<u16>,
    classes: Vec<String>,
    iterations_done: usize,
}

impl MeanField {
    /// Exact sums up to [`EXACT_LIMIT`] pixels, the cell grid above.
    pub fn new(image: &ImageRecord, unary: &UnaryField, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        unary.check_image(image)?;
        Ok(Self::with_cells(unary, params, Cells::auto(image, params)))
    }

    /// Forces the cell approximation with the given grid.
    pub fn with_grid(image: &ImageRecord, unary: &UnaryField, params: &CrfParams, grid: CellGrid) -> Result<Self> {
        params.validate()?;
        unary.check_image(image)?;
        if grid.spatial == 0 || !(grid.colour > 0.0) {
            return Err(Error::InvalidArgument("cell grid sizes must be positive".into()));
        }
        Ok(Self::with_cells(unary, params, Cells::build(image, params, Some(grid))))
    }

    fn with_cells(unary: &UnaryField, params: &CrfParams, cells: Cells) -> Self {
        let (l, h, w) = unary.probs.dim();
        let q = unary
            .probs
            .view()
            .into_shape_with_order((l, h * w))
            .expect("contiguous unary")
            .t()
            .to_owned();
        MeanField {
            params: params.clone(),
            height: h,
            width: w,
            log_unary: q.mapv(f64::ln),
            q,
            cells,
            labels: unary.labels.clone(),
            classes: unary.classes.clone(),
            iterations_done: 0,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations_done
    }

    /// Current marginals as `(L, H, W)`.
    pub fn q(&self) -> Array3<f64> {
        let l = self.q.ncols();
        self.q
            .t()
            .to_owned()
            .into_shape_with_order((l, self.height, self.width))
            .expect("shape")
    }

    /// One parallel mean-field update.
    pub fn step(&mut self) -> Result<()> {
        let p = &self.params;
        self.iterations_done += 1;
        if p.w_smooth == 0.0 && p.w_bilateral == 0.0 {
            // softmax(ln p) is p itself
            return Ok(());
        }
        let mut logits = self.log_unary.clone();
        if p.w_smooth > 0.0 {
            logits.scaled_add(p.w_smooth, &smooth_messages(&self.q, self.height, self.width, p.theta_xy_smooth));
        }
        if p.w_bilateral > 0.0 {
            logits.scaled_add(p.w_bilateral, &self.cells.messages(&self.q));
        }
        for (i, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::NonFinite(format!(
                    "mean-field normaliser {s} at pixel {i}"
                )));
            }
            row /= s;
        }
        self.q = logits;
        Ok(())
    }

    pub fn segmentation(&self) -> SegmentationMap {
        argmax_labels(&self.q(), &self.labels, self.classes.clone())
    }

    /// Runs the remaining iterations and returns the argmax labels.
    pub fn run(mut self) -> Result<SegmentationMap> {
        while self.iterations_done < self.params.iterations {
            self.step()?;
        }
        Ok(self.segmentation())
    }
}

/// Joint multi-label refinement.
pub fn dense_crf(image: &ImageRecord, unary: &UnaryField, params: &CrfParams) -> Result<SegmentationMap> {
    MeanField::new(image, unary, params)?.run()
}

/// Refines each label as a foreground/background problem and keeps, per
/// pixel, the label with the highest foreground marginal.
pub fn dense_crf_per_region(image: &ImageRecord, unary: &UnaryField, params: &CrfParams) -> Result<SegmentationMap> {
    let (l, h, w) = unary.probs.dim();
    let mut fg = Array3::<f64>::zeros((l, h, w));
    for k in 0..l {
        let mut probs = Array3::<f64>::zeros((2, h, w));
        for y in 0..h {
            for x in 0..w {
                let p = unary.probs[[k, y, x]];
                probs[[0, y, x]] = 1.0 - p;
                probs[[1, y, x]] = p;
            }
        }
        let binary = UnaryField {
            probs,
            labels: vec![0, 1],
            classes: Vec::new(),
        };
        let mut mf = MeanField::new(image, &binary, params)?;
        while mf.iterations_done() < params.iterations {
            mf.step()?;
        }
        fg.index_axis_mut(Axis(0), k).assign(&mf.q().index_axis(Axis(0), 1));
    }
    Ok(argmax_labels(&fg, &unary.labels, unary.classes.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::labels_to_unary;

    fn edge_image(w: usize, h: usize, edge: usize) -> ImageRecord {
        ImageRecord::from_fn("edge", w, h, |x, _| if x < edge { [20, 20, 20] } else { [230, 230, 230] }).unwrap()
    }

    fn coarse(w: usize, h: usize, edge: usize) -> SegmentationMap {
        SegmentationMap {
            width: w,
            height: h,
            labels: (0..w * h).map(|p| if p % w < edge { 0 } else { 1 }).collect(),
            classes: vec![],
        }
    }

    #[test]
    fn defaults() {
        let p = CrfParams::default();
        assert_eq!(p.iterations, 5);
        assert_eq!((p.w_smooth, p.theta_xy_smooth), (3.0, 3.0));
        assert_eq!((p.w_bilateral, p.theta_xy_bilateral, p.theta_rgb), (10.0, 60.0, 10.0));
        assert_eq!(p.unary_confidence, 0.8);
    }

    #[test]
    fn misaligned_boundary_snaps_to_edge() {
        let im = edge_image(8, 8, 4);
        let u = labels_to_unary(&coarse(8, 8, 5), &[0, 1], 0.8).unwrap();
        let out = dense_crf(&im, &u, &CrfParams::default()).unwrap();
        assert_eq!(out, coarse(8, 8, 4));
    }

    #[test]
    fn zero_iterations_and_zero_weights_return_unary_argmax() {
        let im = edge_image(8, 8, 4);
        let u = labels_to_unary(&coarse(8, 8, 6), &[0, 1], 0.8).unwrap();
        let p = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        assert_eq!(dense_crf(&im, &u, &p).unwrap(), u.argmax());
        let p = CrfParams {
            w_smooth: 0.0,
            w_bilateral: 0.0,
            ..CrfParams::default()
        };
        assert_eq!(dense_crf(&im, &u, &p).unwrap(), u.argmax());
    }

    #[test]
    fn q_stays_normalised() {
        let im = ImageRecord::from_fn("n", 9, 8, |x, y| [(x * 28) as u8, (y * 36) as u8, ((x * y) % 256) as u8]).unwrap();
        let seg = SegmentationMap {
            width: 9,
            height: 8,
            labels: (0..72).map(|p| (p % 3) as u16).collect(),
            classes: vec![],
        };
        let u = labels_to_unary(&seg, &[0, 1, 2], 0.7).unwrap();
        let mut mf = MeanField::new(&im, &u, &CrfParams::default()).unwrap();
        for _ in 0..5 {
            mf.step().unwrap();
            let q = mf.q();
            for y in 0..8 {
                for x in 0..9 {
                    let s: f64 = (0..3).map(|k| q[[k, y, x]]).sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
            assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn one_pixel_cells_are_exact() {
        let im = edge_image(10, 8, 3);
        let u = labels_to_unary(&coarse(10, 8, 5), &[0, 1], 0.8).unwrap();
        let p = CrfParams::default();
        let mut a = MeanField::new(&im, &u, &p).unwrap();
        let mut b = MeanField::with_grid(&im, &u, &p, CellGrid { spatial: 1, colour: 1.0 }).unwrap();
        a.step().unwrap();
        b.step().unwrap();
        assert_eq!(a.q(), b.q());
    }

    #[test]
    fn large_image_uses_bounded_cells() {
        let im = ImageRecord::from_fn("big", 120, 90, |x, y| [(x * 2) as u8, (y * 2) as u8, 100]).unwrap();
        let seg = SegmentationMap {
            width: 120,
            height: 90,
            labels: (0..120 * 90).map(|p| u16::from(p % 120 >= 60)).collect(),
            classes: vec![],
        };
        let u = labels_to_unary(&seg, &[0, 1], 0.8).unwrap();
        let mf = MeanField::new(&im, &u, &CrfParams::default()).unwrap();
        assert!(mf.num_cells() <= MAX_CELLS);
        assert!(mf.num_cells() < 120 * 90);
        let out = mf.run().unwrap();
        assert_eq!(out.width, 120);
    }

    #[test]
    fn per_region_mode_on_edge() {
        let im = edge_image(8, 8, 4);
        let u = labels_to_unary(&coarse(8, 8, 3), &[0, 1], 0.8).unwrap();
        let out = dense_crf_per_region(&im, &u, &CrfParams::default()).unwrap();
        assert_eq!(out, coarse(8, 8, 4));
    }

    #[test]
    fn rejects_bad_params() {
        let im = edge_image(8, 8, 4);
        let u = labels_to_unary(&coarse(8, 8, 3), &[0, 1], 0.8).unwrap();
        let p = CrfParams {
            theta_rgb: 0.0,
            ..CrfParams::default()
        };
        assert!(dense_crf(&im, &u, &p).is_err());
    }
}
