//! One-factor ablations over a base configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::{Config, Fusion, Objective, Scaling};
use crate::error::Result;
use crate::synth::Dataset;
use crate::train::{evaluate, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Scaling,
    StopGradient,
    PcmSteps,
    Fusion,
    Augmentation,
    Negatives,
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "scaling" => Axis::Scaling,
            "stop_gradient" => Axis::StopGradient,
            "pcm_T" | "pcm_steps" => Axis::PcmSteps,
            "fusion" => Axis::Fusion,
            "augmentation" => Axis::Augmentation,
            "negatives" => Axis::Negatives,
            _ => return Err("expected scaling, stop_gradient, pcm_T, fusion, augmentation or negatives".into()),
        })
    }
}

pub const PCM_STEP_GRID: [usize; 6] = [1, 3, 5, 6, 7, 8];

/// Labeled configurations for every value of an axis.
pub fn variants(axis: Axis, base: &Config) -> Vec<(String, Config)> {
    let with = |f: &dyn Fn(&mut Config)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        Axis::Scaling => {
            Scaling::ALL.iter().map(|&m| (m.to_string(), with(&|c: &mut Config| c.scaling = m))).collect()
        }
        Axis::StopGradient => [("on", true), ("off", false)]
            .into_iter()
            .map(|(l, v)| (l.to_string(), with(&|c: &mut Config| c.stop_gradient = v)))
            .collect(),
        Axis::PcmSteps => PCM_STEP_GRID
            .iter()
            .map(|&t| {
                (format!("T={t}"), with(&|c: &mut Config| {
                    c.use_pcm = true;
                    c.pcm_steps = t;
                }))
            })
            .collect(),
        Axis::Fusion => Fusion::ALL.iter().map(|&m| (m.to_string(), with(&|c: &mut Config| c.fusion = m))).collect(),
        Axis::Augmentation => [
            ("none", false, false, false),
            ("crop", true, false, false),
            ("hflip", false, true, false),
            ("crop+hflip", true, true, false),
            ("crop+hflip+grayscale", true, true, true),
        ]
        .into_iter()
        .map(|(l, crop, hflip, gray)| {
            (l.to_string(), with(&|c: &mut Config| {
                c.aug_crop = crop;
                c.aug_hflip = hflip;
                c.aug_vflip = false;
                c.aug_grayscale = gray;
            }))
        })
        .collect(),
        Axis::Negatives => [Objective::InfoNce, Objective::InfoNceMasked, Objective::Sspl]
            .into_iter()
            .map(|o| (o.to_string(), with(&|c: &mut Config| c.objective = o)))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub success: f64,
    pub auc: f64,
    pub collapse: f64,
}

/// Train and evaluate every variant on the same data.
pub fn ablate(
    axis: Axis,
    base: &Config,
    train: &Dataset,
    test: &Dataset,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in variants(axis, base) {
        log(&format!("== {label}"));
        let mut trained = Trainer::new(cfg.clone(), train)?.run(log)?;
        let report = evaluate(&cfg, &trained.model, &mut trained.store, test, None)?;
        rows.push(AblationRow {
            label,
            success: report.ciou_at_half,
            auc: report.auc,
            collapse: trained.final_collapse(),
        });
    }
    Ok(rows)
}

pub fn table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,success_at_half,auc,collapse\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.4},{:.4},{:.6}", r.label, r.success, r.auc, r.collapse);
    }
    out
}
