//! Self-supervised sound source localization on synthetic audio-visual
//! scenes: encoders, predictive coding alignment, attention fusion,
//! objectives, training, evaluation and export.

pub mod ablate;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod pcm;
pub mod rng;
pub mod synth;
pub mod train;
pub mod viz;

pub use config::{Config, Fusion, Objective, Scaling};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::Model;
pub use params::{ParamStore, Session};
