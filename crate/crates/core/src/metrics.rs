//! Localization scoring: binarization, consensus IoU, success curves and AUC.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BINARIZE_LEVEL: f32 = 0.5;
pub const GRID_STEP: f64 = 0.05;
pub const GRID_POINTS: usize = 21;

/// `mask[i] = map[i] >= 0.5`.
pub fn binarize(map: &[f32]) -> Vec<bool> {
    map.iter().map(|&v| v >= BINARIZE_LEVEL).collect()
}

/// Pixels of a `side x side` view whose centers fall inside `b`
/// (`x_min, y_min, x_max, y_max`, upper edges exclusive).
pub fn box_mask(b: [f32; 4], side: usize) -> Vec<bool> {
    let mut m = vec![false; side * side];
    for y in 0..side {
        let cy = y as f32 + 0.5;
        if cy < b[1] || cy >= b[3] {
            continue;
        }
        for x in 0..side {
            let cx = x as f32 + 0.5;
            m[y * side + x] = cx >= b[0] && cx < b[2];
        }
    }
    m
}

/// `|mask & gt| / (|gt| + |mask & !gt|)`.
pub fn ciou(mask: &[bool], gt: &[bool]) -> Result<f64> {
    if mask.len() != gt.len() {
        return Err(Error::Usage(format!("mask has {} pixels, ground truth {}", mask.len(), gt.len())));
    }
    let (mut hit, mut gt_count, mut extra) = (0usize, 0usize, 0usize);
    for (&m, &g) in mask.iter().zip(gt) {
        hit += (m && g) as usize;
        gt_count += g as usize;
        extra += (m && !g) as usize;
    }
    if gt_count == 0 {
        return Err(Error::Usage("empty ground-truth mask".into()));
    }
    Ok(hit as f64 / (gt_count + extra) as f64)
}

pub fn thresholds() -> [f64; GRID_POINTS] {
    std::array::from_fn(|i| i as f64 * GRID_STEP)
}

/// Fraction of samples with cIoU at least `tau`.
pub fn success_ratio(cious: &[f64], tau: f64) -> Result<f64> {
    if cious.is_empty() {
        return Err(Error::Usage("no samples to score".into()));
    }
    // grid points are computed as i * 0.05; compare with a little slack so a
    // cIoU of exactly 0.15 counts at the 0.15 grid point
    let hits = cious.iter().filter(|&&c| c >= tau - 1e-12).count();
    Ok(hits as f64 / cious.len() as f64)
}

/// Trapezoidal area under a curve sampled on the uniform threshold grid.
pub fn auc(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::Usage("curve needs at least two points".into()));
    }
    let h = 1.0 / (curve.len() - 1) as f64;
    Ok(curve.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_sample: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub success: Vec<f64>,
    pub ciou_at_half: f64,
    pub auc: f64,
}

impl EvalReport {
    pub fn from_cious(per_sample: Vec<f64>) -> Result<Self> {
        let thresholds = thresholds().to_vec();
        let success = thresholds.iter().map(|&t| success_ratio(&per_sample, t)).collect::<Result<Vec<_>>>()?;
        let ciou_at_half = success[GRID_POINTS / 2];
        let auc = auc(&success)?;
        Ok(Self { per_sample, thresholds, success, ciou_at_half, auc })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,success\n");
        for (t, s) in self.thresholds.iter().zip(&self.success) {
            let _ = writeln!(out, "{t:.2},{s:.6}");
        }
        let _ = writeln!(out, "ciou_at_half,{:.6}", self.ciou_at_half);
        let _ = writeln!(out, "auc,{:.6}", self.auc);
        out
    }
}
