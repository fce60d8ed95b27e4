//! Occlusion-sensitivity heatmaps.
//!
//! A square patch slides over the image; each grid cell holds the drop in
//! the class score when the patch at that position is replaced by a fill
//! value. Larger values mark regions the prediction depends on.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::pnm;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// Anything that maps an `[N, H, W, C]` batch to `[N, classes]` scores.
pub trait ClassScorer: Sync {
    fn scores(&self, batch: &Tensor) -> Result<Tensor>;
}

impl ClassScorer for Network {
    fn scores(&self, batch: &Tensor) -> Result<Tensor> {
        self.predict(batch)
    }
}

/// Adapts a closure into a [`ClassScorer`].
pub struct FnScorer<F>(pub F);

impl<F> ClassScorer for FnScorer<F>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    fn scores(&self, batch: &Tensor) -> Result<Tensor> {
        (self.0)(batch)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// The mean of the whole image.
    #[default]
    Mean,
    Zero,
}

impl std::str::FromStr for Fill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fill::Mean),
            "zero" => Ok(Fill::Zero),
            other => Err(Error::Argument(format!("fill {other:?} (expected mean or zero)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    pub fill: Fill,
    /// Evaluate windows on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            patch: 32,
            stride: 16,
            fill: Fill::Mean,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows × cols`.
    pub grid: Vec<f32>,
    pub patch: usize,
    pub stride: usize,
    pub class: usize,
}

impl Heatmap {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.grid[row * self.cols + col]
    }

    /// `(row, col)` of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .grid
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.grid[best] { i } else { best });
        (i / self.cols, i % self.cols)
    }

    /// Min-max normalized to `0..=255`; a constant grid maps to 128.
    pub fn normalized(&self) -> Vec<u8> {
        let lo = self.grid.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.grid.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi <= lo {
            return vec![128; self.grid.len()];
        }
        self.grid
            .iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    /// Binary PGM of the normalized grid, nearest-neighbour upsampled to
    /// `height × width`.
    pub fn to_pgm(&self, height: usize, width: usize) -> Result<Vec<u8>> {
        let norm = self.normalized();
        let mut px = Vec::with_capacity(height * width);
        for y in 0..height {
            let r = y * self.rows / height;
            for x in 0..width {
                px.push(norm[r * self.cols + x * self.cols / width]);
            }
        }
        pnm::encode_pgm(width, height, &px)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.grid.chunks_exact(self.cols) {
            let cells: Vec<String> = row.iter().map(f32::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Grid extent along one axis: `⌊(len − patch)/stride⌋ + 1`.
pub fn grid_extent(len: usize, patch: usize, stride: usize) -> Result<usize> {
    if patch == 0 || stride == 0 {
        return Err(Error::Argument("patch and stride must be positive".into()));
    }
    if patch > len {
        return Err(Error::Argument(format!("patch {patch} exceeds image extent {len}")));
    }
    Ok((len - patch) / stride + 1)
}

/// Score drop of class `class` for every occluder position over an
/// `[H, W, C]` image.
pub fn occlusion_heatmap<S: ClassScorer + ?Sized>(
    scorer: &S,
    image: &Tensor,
    class: usize,
    cfg: &OcclusionConfig,
) -> Result<Heatmap> {
    let (h, w, c) = pnm::dims3(image)?;
    let rows = grid_extent(h, cfg.patch, cfg.stride)?;
    let cols = grid_extent(w, cfg.patch, cfg.stride)?;
    let batch = image.clone().reshape(&[1, h, w, c])?;
    let score_of = |t: &Tensor| -> Result<f32> {
        let s = scorer.scores(t)?;
        let (_, classes) = s.dims2()?;
        if class >= classes {
            return Err(Error::Argument(format!("class {class} of {classes}")));
        }
        Ok(s.data()[class])
    };
    let base = score_of(&batch)?;
    let fill = match cfg.fill {
        Fill::Mean => (image.data().iter().map(|&v| v as f64).sum::<f64>() / image.numel() as f64) as f32,
        Fill::Zero => 0.0,
    };
    let cell = |i: usize| -> Result<f32> {
        let (top, left) = ((i / cols) * cfg.stride, (i % cols) * cfg.stride);
        let mut occluded = batch.clone();
        let data = occluded.data_mut();
        for y in top..top + cfg.patch {
            data[(y * w + left) * c..(y * w + left + cfg.patch) * c].fill(fill);
        }
        Ok(base - score_of(&occluded)?)
    };
    let grid = if cfg.parallel {
        (0..rows * cols).into_par_iter().map(cell).collect::<Result<Vec<_>>>()?
    } else {
        (0..rows * cols).map(cell).collect::<Result<Vec<_>>>()?
    };
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("heatmap has non-finite values".into()));
    }
    Ok(Heatmap {
        rows,
        cols,
        grid,
        patch: cfg.patch,
        stride: cfg.stride,
        class,
    })
}
