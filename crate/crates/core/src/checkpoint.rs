//! Binary checkpoints: named parameters, batch-norm statistics, optimizer
//! moments, the config that built the model, and training position.
//!
//! Layout (little endian): magic `SSCK`, version u16, config text
//! (u32 length + UTF-8), epoch u32, PRNG cursor u64, optimizer step u64,
//! then parameter records (name, shape, values, first and second moments)
//! and statistics records (name, mean, variance).

use std::collections::HashMap;
use std::path::Path;

use avloc_tensor::{BatchNormStats, Tensor};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::synth::Cursor;

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    /// Last completed epoch.
    pub epoch: u32,
    /// Next epoch index for the shuffle and augmentation streams.
    pub rng_cursor: u64,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: usize) {
        self.bytes(&(v as u32).to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
}

fn read_text(c: &mut Cursor<'_>, what: &str) -> Result<String> {
    let at = c.pos as u64;
    let n = c.u32(what)? as usize;
    let raw = c.take(n, what)?;
    String::from_utf8(raw.to_vec()).map_err(|_| Error::Format { offset: at, detail: format!("{what} is not UTF-8") })
}

struct Entry {
    shape: Vec<usize>,
    value: Vec<f32>,
    first: Vec<f32>,
    second: Vec<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.bytes(&VERSION.to_le_bytes());
        w.text(&self.config.to_text());
        w.u32(self.epoch as usize);
        w.bytes(&self.rng_cursor.to_le_bytes());
        w.bytes(&self.optimizer.step.to_le_bytes());
        w.u32(self.store.params.len());
        for (i, p) in self.store.params.iter().enumerate() {
            w.text(&p.name);
            w.u32(p.value.ndim());
            for &d in p.value.shape() {
                w.u32(d);
            }
            w.f32s(p.value.data());
            w.f32s(self.optimizer.first[i].data());
            w.f32s(self.optimizer.second[i].data());
        }
        w.u32(self.store.stats.len());
        for (name, s) in &self.store.stats {
            w.text(name);
            w.u32(s.channels());
            w.f32s(&s.mean);
            w.f32s(&s.var);
        }
        w.0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Model)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parse a checkpoint and rebuild the model it was saved from. Every
    /// parameter the config's model declares must be present with its
    /// shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Model)> {
        let mut c = Cursor::new(bytes);
        if c.take(4, "magic")? != MAGIC {
            return Err(Error::Format { offset: 0, detail: "not a checkpoint (bad magic)".into() });
        }
        let version = c.u16("version")?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let config = Config::parse_text(&read_text(&mut c, "config")?)?;
        let epoch = c.u32("epoch")?;
        let rng_cursor = c.u64("rng cursor")?;
        let step = c.u64("optimizer step")?;

        let mut entries = HashMap::new();
        for _ in 0..c.u32("parameter count")? {
            let name = read_text(&mut c, "parameter name")?;
            let ndim = c.u32("rank")? as usize;
            let shape = (0..ndim).map(|_| c.u32("shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let value = c.f32s(n, "parameter values")?;
            let first = c.f32s(n, "first moment")?;
            let second = c.f32s(n, "second moment")?;
            entries.insert(name, Entry { shape, value, first, second });
        }
        let mut stats = HashMap::new();
        for _ in 0..c.u32("statistics count")? {
            let name = read_text(&mut c, "statistics name")?;
            let ch = c.u32("channels")? as usize;
            let mean = c.f32s(ch, "running mean")?;
            let var = c.f32s(ch, "running variance")?;
            stats.insert(name, (mean, var));
        }
        if c.pos != bytes.len() {
            return Err(Error::Format { offset: c.pos as u64, detail: "trailing bytes".into() });
        }

        let mut store = ParamStore::new();
        let model = Model::new(&config, &mut store)?;
        let mut optimizer =
            AdamW::new(&store, config.lr_heads, config.lr_rest, config.beta1, config.beta2, config.weight_decay);
        optimizer.step = step;
        for (i, p) in store.params.iter_mut().enumerate() {
            let e = entries.remove(&p.name).ok_or_else(|| Error::MissingParameter(p.name.clone()))?;
            if e.shape != p.value.shape() {
                return Err(Error::ShapeMismatch { name: p.name.clone(), expected: p.value.shape().to_vec(), found: e.shape });
            }
            p.value = Tensor::new(&e.shape, e.value)?;
            optimizer.first[i] = Tensor::new(&e.shape, e.first)?;
            optimizer.second[i] = Tensor::new(&e.shape, e.second)?;
        }
        for (name, s) in &mut store.stats {
            let (mean, var) = stats.remove(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if mean.len() != s.channels() {
                return Err(Error::ShapeMismatch { name: name.clone(), expected: vec![s.channels()], found: vec![mean.len()] });
            }
            *s = BatchNormStats { mean, var, ..s.clone() };
        }
        Ok((Checkpoint { config, epoch, rng_cursor, store, optimizer }, model))
    }
}
