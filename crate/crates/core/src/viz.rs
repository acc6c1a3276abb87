//! Portable pixmap export of inputs and per-cycle localization maps.

use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::synth::Dataset;
use crate::train::{localize, minmax};

/// Binary PPM (P6) bytes from channel-major RGB in [0, 1].
pub fn ppm_bytes(rgb: &[f32], side: usize) -> Vec<u8> {
    let plane = side * side;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for i in 0..plane {
        for c in 0..3 {
            out.push((rgb[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Grayscale heatmap as RGB, rescaled so it spans the full range.
pub fn heatmap_rgb(map: &[f32]) -> Vec<f32> {
    let m = minmax(map);
    m.iter().chain(&m).chain(&m).copied().collect()
}

/// Canonical image with a one-pixel red outline of the box.
pub fn outlined(image: &[f32], side: usize, b: [u16; 4]) -> Vec<f32> {
    let mut out = image.to_vec();
    let plane = side * side;
    let (x0, y0, x1, y1) = (b[0] as usize, b[1] as usize, b[2] as usize - 1, b[3] as usize - 1);
    let mut paint = |x: usize, y: usize| {
        for (c, v) in [1.0, 0.0, 0.0].into_iter().enumerate() {
            out[c * plane + y * side + x] = v;
        }
    };
    for x in x0..=x1 {
        paint(x, y0);
        paint(x, y1);
    }
    for y in y0..=y1 {
        paint(x0, y);
        paint(x1, y);
    }
    out
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Write `<index>_input.ppm` and one `<index>_t<t>.ppm` per cycle (a single
/// `_t1` map for models without the predictive coding module).
pub fn visualize(
    cfg: &Config,
    model: &Model,
    store: &mut ParamStore<f32>,
    data: &Dataset,
    indices: &[usize],
    steps: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Usage(format!("sample index {bad} out of range for {} samples", data.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let side = cfg.image_size;
    let scenes: Vec<_> = indices.iter().map(|&i| &data.scenes[i]).collect();
    let maps = localize(cfg, model, store, &scenes, steps, true)?;
    let mut written = Vec::new();
    for ((&index, scene), m) in indices.iter().zip(&scenes).zip(&maps) {
        let input = outlined(&scene.image, side, scene.gt_box);
        written.push(write(out_dir.join(format!("{index}_input.ppm")), &ppm_bytes(&input, side))?);
        let per_step = if m.steps.is_empty() { std::slice::from_ref(&m.map) } else { &m.steps[..] };
        for (t, map) in per_step.iter().enumerate() {
            let path = out_dir.join(format!("{index}_t{}.ppm", t + 1));
            written.push(write(path, &ppm_bytes(&heatmap_rgb(map), side))?);
        }
    }
    Ok(written)
}
