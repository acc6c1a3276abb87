//! Procedural audio-visual scenes, view augmentation and the dataset file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use avloc_tensor::bilinear_resize_plain;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    /// Pixel coverage of a `side x side` sprite.
    pub fn mask(self, side: usize) -> Vec<bool> {
        let c = side as f32 / 2.0;
        let bar = side as f32 / 6.0 + 0.01 * side as f32;
        let mut out = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                out.push(match self {
                    Shape::Circle => (px - c).powi(2) + (py - c).powi(2) <= c * c,
                    Shape::Square => true,
                    Shape::Triangle => (px - c).abs() <= py / side as f32 * c,
                    Shape::Cross => (px - c).abs() <= bar || (py - c).abs() <= bar,
                });
            }
        }
        out
    }
}

/// Appearance and sound of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStyle {
    pub shape: Shape,
    pub color: [f32; 3],
    /// Frequency rows `[lo, hi)` that carry the class's energy.
    pub band: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub spec_bins: usize,
    pub spec_frames: usize,
    pub image_noise: f32,
    pub spec_noise: f32,
    pub max_distractors: usize,
    pub palette: Vec<ClassStyle>,
}

const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross];
const COLORS: [[f32; 3]; 4] = [[1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.2, 0.35, 1.0], [1.0, 1.0, 0.15]];
pub const MIN_SIDE: usize = 12;
pub const MAX_SIDE: usize = 28;
const MAX_OVERLAP: f32 = 0.3;

impl GeneratorConfig {
    pub fn from_config(cfg: &Config) -> Self {
        let slot = cfg.spec_bins / cfg.classes;
        let palette = (0..cfg.classes)
            .map(|k| ClassStyle { shape: SHAPES[k], color: COLORS[k], band: (k * slot + slot / 4, (k + 1) * slot) })
            .collect();
        Self {
            image_size: cfg.image_size,
            spec_bins: cfg.spec_bins,
            spec_frames: cfg.spec_frames,
            image_noise: cfg.image_noise as f32,
            spec_noise: cfg.spec_noise as f32,
            max_distractors: cfg.max_distractors,
            palette,
        }
    }

    pub fn classes(&self) -> usize {
        self.palette.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.palette.iter().enumerate() {
            if a.band.0 >= a.band.1 || a.band.1 > self.spec_bins {
                return Err(Error::Config(format!("class {i} band {:?} is empty or out of range", a.band)));
            }
            for (j, b) in self.palette.iter().enumerate().skip(i + 1) {
                if a.band.0 < b.band.1 && b.band.0 < a.band.1 {
                    return Err(Error::Config(format!("classes {i} and {j} have overlapping bands")));
                }
                if a.color == b.color {
                    return Err(Error::Config(format!("classes {i} and {j} share a color")));
                }
            }
        }
        if self.image_size < MAX_SIDE {
            return Err(Error::Config("image smaller than the largest object".into()));
        }
        Ok(())
    }
}

/// One scene: channel-major image in [0, 1], spectrogram (bins x frames),
/// sounding class and its tight box `(x_min, y_min, x_max, y_max)` with
/// exclusive upper corners.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Vec<f32>,
    pub spectrogram: Vec<f32>,
    pub class: u16,
    pub gt_box: [u16; 4],
}

impl Scene {
    pub fn box_area(&self) -> usize {
        let [x0, y0, x1, y1] = self.gt_box;
        (x1 - x0) as usize * (y1 - y0) as usize
    }
}

fn overlap(a: [usize; 4], b: [usize; 4]) -> usize {
    let ix = a[2].min(b[2]).saturating_sub(a[0].max(b[0]));
    let iy = a[3].min(b[3]).saturating_sub(a[1].max(b[1]));
    ix * iy
}

fn place(rng: &mut Rng, size: usize, placed: &[[usize; 4]]) -> [usize; 4] {
    let mut last = [0; 4];
    for _ in 0..100 {
        let side = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let x = rng.random_range(0..=size - side);
        let y = rng.random_range(0..=size - side);
        last = [x, y, x + side, y + side];
        let clash = placed.iter().any(|&b| {
            let smaller = (side * side).min((b[2] - b[0]) * (b[3] - b[1]));
            overlap(last, b) as f32 > MAX_OVERLAP * smaller as f32
        });
        if !clash {
            break;
        }
    }
    last
}

/// Draw one scene from `rng`.
pub fn gen_scene(cfg: &GeneratorConfig, rng: &mut Rng) -> Scene {
    let k = cfg.classes();
    let size = cfg.image_size;
    let class = rng.random_range(0..k);
    let n_distractors = if k > 1 { rng.random_range(0..=cfg.max_distractors) } else { 0 };
    let mut objects = vec![class];
    for _ in 0..n_distractors {
        let o = rng.random_range(0..k - 1);
        objects.push(if o >= class { o + 1 } else { o });
    }
    let mut boxes: Vec<[usize; 4]> = Vec::new();
    for _ in &objects {
        let b = place(rng, size, &boxes);
        boxes.push(b);
    }

    let plane = size * size;
    let mut image = vec![0.0f32; 3 * plane];
    // distractors first so the sounding object is never occluded
    let mut gt = [0u16; 4];
    for (&o, b) in objects.iter().zip(&boxes).rev() {
        let style = &cfg.palette[o];
        let side = b[2] - b[0];
        let mask = style.shape.mask(side);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let (x, y) = (b[0] + i % side, b[1] + i / side);
            for c in 0..3 {
                image[c * plane + y * size + x] = style.color[c];
            }
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
        }
        gt = [x0 as u16, y0 as u16, x1 as u16, y1 as u16];
    }
    for v in &mut image {
        let n: f32 = StandardNormal.sample(rng);
        *v = (*v + cfg.image_noise * n).clamp(0.0, 1.0);
    }

    let (bins, frames) = (cfg.spec_bins, cfg.spec_frames);
    let mut spectrogram = vec![0.0f32; bins * frames];
    let active = rng.random_range((3 * frames).div_ceil(5)..=frames);
    let (lo, hi) = cfg.palette[class].band;
    for col in sample(rng, frames, active) {
        for row in lo..hi {
            spectrogram[row * frames + col] = 1.0;
        }
    }
    for v in &mut spectrogram {
        let n: f32 = StandardNormal.sample(rng);
        *v = (*v + cfg.spec_noise * n).max(0.0);
    }
    Scene { image, spectrogram, class: class as u16, gt_box: gt }
}

/// Scene `index` of the family selected by `purpose`.
pub fn scene_at(cfg: &GeneratorConfig, seed: u64, purpose: Purpose, index: usize) -> Scene {
    gen_scene(cfg, &mut stream(seed, purpose, index as u64))
}

/// Array dimensions stored in a dataset header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub frames: usize,
    pub classes: usize,
}

impl Dims {
    pub fn of(cfg: &GeneratorConfig) -> Self {
        Dims { height: cfg.image_size, width: cfg.image_size, bins: cfg.spec_bins, frames: cfg.spec_frames, classes: cfg.classes() }
    }

    pub fn record_bytes(&self) -> usize {
        2 + 8 + 4 * (3 * self.height * self.width + self.bins * self.frames)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn generate(cfg: &GeneratorConfig, seed: u64, purpose: Purpose, count: usize) -> Self {
        let scenes = (0..count).map(|i| scene_at(cfg, seed, purpose, i)).collect();
        Dataset { dims: Dims::of(cfg), scenes }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

pub const MAGIC: &[u8; 4] = b"SSPL";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 4 + 5 * 2;

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Usage("refusing to write an empty dataset".into()));
    }
    let d = data.dims;
    let dims = [d.height, d.width, d.bins, d.frames, d.classes];
    if let Some(v) = dims.iter().find(|&&v| v > u16::MAX as usize) {
        return Err(Error::Config(format!("dimension {v} does not fit the header")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&(data.len() as u32).to_le_bytes())?;
    for v in dims {
        put(&(v as u16).to_le_bytes())?;
    }
    for s in &data.scenes {
        if s.image.len() != 3 * d.height * d.width || s.spectrogram.len() != d.bins * d.frames {
            return Err(Error::Config("scene arrays do not match dataset dimensions".into()));
        }
        put(&s.class.to_le_bytes())?;
        for v in s.gt_box {
            put(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * (s.image.len() + s.spectrogram.len()));
        for v in s.image.iter().chain(&s.spectrogram) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Little-endian reader that reports the byte offset of truncation.
pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos as u64, detail: format!("truncated while reading {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("eight bytes")))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad magic".into() });
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        });
    }
    let count = c.u32("record count")? as usize;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = c.u16("dimensions")? as usize;
    }
    let dims = Dims { height: dims[0], width: dims[1], bins: dims[2], frames: dims[3], classes: dims[4] };
    let mut scenes = Vec::with_capacity(count.min(bytes.len() / dims.record_bytes().max(1)));
    for i in 0..count {
        let start = c.pos as u64;
        let class = c.u16("class id")?;
        if class as usize >= dims.classes {
            return Err(Error::Format { offset: start, detail: format!("record {i}: class {class} out of range") });
        }
        let mut gt_box = [0u16; 4];
        for v in &mut gt_box {
            *v = c.u16("box")?;
        }
        let image = c.f32s(3 * dims.height * dims.width, "image")?;
        let spectrogram = c.f32s(dims.bins * dims.frames, "spectrogram")?;
        scenes.push(Scene { image, spectrogram, class, gt_box });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format { offset: c.pos as u64, detail: "trailing bytes after last record".into() });
    }
    Ok(Dataset { dims, scenes })
}

/// Spatial augmentation switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Resize to `floor(1.1 * side)` then crop back to `side`.
    pub crop: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub grayscale: bool,
}

impl AugmentConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self { crop: cfg.aug_crop, hflip: cfg.aug_hflip, vflip: cfg.aug_vflip, grayscale: cfg.aug_grayscale }
    }

    pub fn none() -> Self {
        Self { crop: false, hflip: false, vflip: false, grayscale: false }
    }
}

pub fn enlarged_side(side: usize) -> usize {
    side * 11 / 10
}

/// Image resized to the enlarged side, shared by every crop of one scene.
pub fn enlarge(image: &[f32], side: usize) -> Vec<f32> {
    let big = enlarged_side(side);
    let plane = side * side;
    (0..3).flat_map(|c| bilinear_resize_plain(&image[c * plane..(c + 1) * plane], side, side, big, big)).collect()
}

/// Geometry of one view: crop offset into the enlarged image and flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewGeom {
    pub offset: (usize, usize),
    pub hflip: bool,
    pub vflip: bool,
}

impl ViewGeom {
    /// Deterministic evaluation view.
    pub fn center(side: usize) -> Self {
        let m = (enlarged_side(side) - side) / 2;
        ViewGeom { offset: (m, m), hflip: false, vflip: false }
    }

    /// Map a canonical-image box into this view (clipped to the view).
    pub fn map_box(&self, gt: [u16; 4], side: usize, crop: bool) -> [f32; 4] {
        let (scale, (ox, oy)) =
            if crop { (enlarged_side(side) as f32 / side as f32, self.offset) } else { (1.0, (0, 0)) };
        let s = side as f32;
        let mut b = [
            gt[0] as f32 * scale - ox as f32,
            gt[1] as f32 * scale - oy as f32,
            gt[2] as f32 * scale - ox as f32,
            gt[3] as f32 * scale - oy as f32,
        ];
        if self.hflip {
            b = [s - b[2], b[1], s - b[0], b[3]];
        }
        if self.vflip {
            b = [b[0], s - b[3], b[2], s - b[1]];
        }
        b.map(|v| v.clamp(0.0, s))
    }
}

fn box_area(b: [f32; 4]) -> f32 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Draw a view geometry; crops that keep less than a quarter of the box are
/// redrawn up to 10 times before falling back to the center crop.
pub fn draw_view(aug: &AugmentConfig, side: usize, gt: [u16; 4], rng: &mut Rng) -> ViewGeom {
    let slack = enlarged_side(side) - side;
    let mut geom = ViewGeom::center(side);
    if aug.crop {
        let full = box_area(ViewGeom { offset: (0, 0), hflip: false, vflip: false }.map_box(gt, side, false))
            * (enlarged_side(side) as f32 / side as f32).powi(2);
        let mut accepted = false;
        for _ in 0..10 {
            let offset = (rng.random_range(0..=slack), rng.random_range(0..=slack));
            let cand = ViewGeom { offset, hflip: false, vflip: false };
            if box_area(cand.map_box(gt, side, true)) >= 0.25 * full {
                geom = cand;
                accepted = true;
                break;
            }
        }
        if !accepted {
            geom = ViewGeom::center(side);
        }
    }
    geom.hflip = aug.hflip && rng.random_bool(0.5);
    geom.vflip = aug.vflip && rng.random_bool(0.5);
    geom
}

/// Render a view. `enlarged` is the output of [`enlarge`] when cropping,
/// otherwise the canonical image.
pub fn render_view(source: &[f32], side: usize, aug: &AugmentConfig, geom: ViewGeom, out: &mut [f32]) {
    let (src_side, (ox, oy)) = if aug.crop { (enlarged_side(side), geom.offset) } else { (side, (0, 0)) };
    let src_plane = src_side * src_side;
    for c in 0..3 {
        for y in 0..side {
            let sy = if geom.vflip { side - 1 - y } else { y } + oy;
            for x in 0..side {
                let sx = if geom.hflip { side - 1 - x } else { x } + ox;
                out[(c * side + y) * side + x] = source[c * src_plane + sy * src_side + sx];
            }
        }
    }
    if aug.grayscale {
        let plane = side * side;
        for i in 0..plane {
            let l = 0.299 * out[i] + 0.587 * out[plane + i] + 0.114 * out[2 * plane + i];
            for c in 0..3 {
                out[c * plane + i] = l;
            }
        }
    }
}

/// One augmented view of a scene and its box in view coordinates.
pub fn augment_view(scene: &Scene, side: usize, aug: &AugmentConfig, rng: &mut Rng) -> (Vec<f32>, [f32; 4]) {
    let geom = draw_view(aug, side, scene.gt_box, rng);
    let source = if aug.crop { enlarge(&scene.image, side) } else { scene.image.clone() };
    let mut out = vec![0.0; 3 * side * side];
    render_view(&source, side, aug, geom, &mut out);
    (out, geom.map_box(scene.gt_box, side, aug.crop))
}

/// The deterministic evaluation view and its box.
pub fn center_view(scene: &Scene, side: usize, crop: bool) -> (Vec<f32>, [f32; 4]) {
    let aug = AugmentConfig { crop, ..AugmentConfig::none() };
    let geom = ViewGeom::center(side);
    let source = if crop { enlarge(&scene.image, side) } else { scene.image.clone() };
    let mut out = vec![0.0; 3 * side * side];
    render_view(&source, side, &aug, geom, &mut out);
    (out, geom.map_box(scene.gt_box, side, crop))
}
