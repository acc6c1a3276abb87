//! Flat `key = value` run configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the raw similarity map is turned into pooling weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    MinMax,
    Relu,
    Sigmoid,
    Softmax,
    ReluSoftmax,
}

impl Scaling {
    pub const ALL: [Scaling; 5] = [Scaling::Relu, Scaling::Sigmoid, Scaling::Softmax, Scaling::ReluSoftmax, Scaling::MinMax];
}

/// How audio and visual features are combined before projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Attention,
    Concat,
    Multiply,
    Add,
}

impl Fusion {
    pub const ALL: [Fusion; 4] = [Fusion::Concat, Fusion::Multiply, Fusion::Add, Fusion::Attention];
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Symmetric predictive loss with stop-gradient targets.
    Sspl,
    /// Audio-visual InfoNCE over the whole batch.
    InfoNce,
    /// InfoNCE with same-class negatives removed.
    InfoNceMasked,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(Scaling { MinMax => "minmax", Relu => "relu", Sigmoid => "sigmoid", Softmax => "softmax", ReluSoftmax => "relu_softmax" });
keyword_enum!(Fusion { Attention => "attention", Concat => "concat", Multiply => "multiply", Add => "add" });
keyword_enum!(Objective { Sspl => "sspl", InfoNce => "infonce", InfoNceMasked => "infonce_masked" });

/// Value types usable in a config entry.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($ty:ty),*) => {$(
        impl ConfigValue for $ty {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, bool, String, Scaling, Fusion, Objective);

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{e}"))).collect()
    }
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

macro_rules! config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),+ $(,)?) => {
        /// Every tunable of a run. Keys in config files match field names.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $( $(#[$doc])* pub $field: $ty, )+
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $field: $default, )+ }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),+];

            /// Overwrite one entry from its textual form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
                    } )+
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// All entries in declaration order, rendered as text.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), ConfigValue::render(&self.$field)) ),+]
            }
        }
    };
}

config! {
    seed: u64 = 0,
    /// Dataset files; empty means generate in memory from `seed`.
    train_data: String = String::new(),
    test_data: String = String::new(),
    classes: usize = 4,
    image_size: usize = 64,
    spec_bins: usize = 32,
    spec_frames: usize = 32,
    image_noise: f64 = 0.1,
    spec_noise: f64 = 0.1,
    max_distractors: usize = 2,
    train_size: usize = 2000,
    test_size: usize = 500,
    visual_channels: Vec<usize> = vec![8, 16, 32],
    audio_channels: Vec<usize> = vec![8, 16],
    audio_dim: usize = 16,
    transform_hidden: usize = 32,
    proj_hidden: usize = 32,
    embed_dim: usize = 32,
    pred_hidden: usize = 8,
    use_pcm: bool = true,
    pcm_layers: usize = 3,
    pcm_steps: usize = 5,
    scaling: Scaling = Scaling::MinMax,
    fusion: Fusion = Fusion::Attention,
    objective: Objective = Objective::Sspl,
    stop_gradient: bool = true,
    temperature: f64 = 0.07,
    aug_crop: bool = true,
    aug_hflip: bool = true,
    aug_vflip: bool = false,
    aug_grayscale: bool = false,
    epochs: usize = 30,
    batch_size: usize = 64,
    lr_heads: f64 = 2e-3,
    lr_rest: f64 = 5e-4,
    weight_decay: f64 = 1e-4,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    patience: usize = 5,
    val_fraction: f64 = 0.1,
}

impl Config {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 (batch normalization)".into());
        }
        if !(self.lr_heads > 0.0 && self.lr_rest > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.classes < 1 || self.classes > 4 {
            return fail("classes must be between 1 and 4".into());
        }
        if self.visual_channels.len() != 3 {
            return fail("visual_channels needs three entries (three pooling stages)".into());
        }
        if self.audio_channels.is_empty() {
            return fail("audio_channels needs at least one entry".into());
        }
        if !self.image_size.is_multiple_of(8) || self.image_size < 16 {
            return fail(format!("image_size {} must be a multiple of 8, at least 16", self.image_size));
        }
        let pool = 1 << self.audio_channels.len();
        if !self.spec_bins.is_multiple_of(pool) || !self.spec_frames.is_multiple_of(pool) {
            return fail(format!("spectrogram dims must be divisible by {pool}"));
        }
        if self.spec_bins < 4 * self.classes {
            return fail("spec_bins too small for disjoint class bands".into());
        }
        let top = self.image_size / 8;
        let bottom = top.checked_shr(self.pcm_layers as u32).unwrap_or(0);
        if self.pcm_layers == 0 || bottom == 0 || bottom << self.pcm_layers != top {
            return fail(format!("pcm_layers {} does not fit a {top}x{top} feature map", self.pcm_layers));
        }
        if self.pcm_steps == 0 {
            return fail("pcm_steps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must be in [0, 1)".into());
        }
        if self.temperature <= 0.0 {
            return fail("temperature must be positive".into());
        }
        Ok(())
    }
}
