//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `AVLOC_ACCEPTANCE` selects criteria, e.g. `1,2,3` (default: all). The
//! training criteria share their runs, so selecting 5 and 7 together trains
//! the reference model once.
//!
//! Every selected criterion runs and reports; failures are listed in the
//! summary. The exit status is nonzero on a failure only with
//! `AVLOC_ACCEPTANCE_STRICT=1`, so a failing training trend does not hide
//! the rest of `cargo test`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use avloc::checkpoint::Checkpoint;
use avloc::config::{Config, Objective, Scaling};
use avloc::rng::Purpose;
use avloc::synth::{load_dataset, write_dataset, Dataset, GeneratorConfig};
use avloc::train::{evaluate, untrained, Trained, Trainer};
use avloc_tensor::opsuite::{worst_errors_f32, worst_errors_f64};

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct Run {
    trained: Trained,
    /// success@0.5 on the test set at the configured cycle count.
    success: f64,
    /// success@0.5 per test-time cycle count, for PCM models.
    by_steps: BTreeMap<usize, f64>,
    elapsed: Duration,
}

/// Training runs keyed by label, trained on first use.
#[derive(Default)]
struct Runs {
    done: BTreeMap<String, Run>,
    data: BTreeMap<(u64, usize), (Dataset, Dataset)>,
}

impl Runs {
    fn get(&mut self, label: &str, cfg: &Config) -> &Run {
        if !self.done.contains_key(label) {
            let key = (cfg.seed, cfg.classes);
            let (train, test) = self.data.entry(key).or_insert_with(|| {
                let gen = GeneratorConfig::from_config(cfg);
                (
                    Dataset::generate(&gen, cfg.seed, Purpose::TrainScene, cfg.train_size),
                    Dataset::generate(&gen, cfg.seed, Purpose::TestScene, cfg.test_size),
                )
            });
            let start = Instant::now();
            let mut trained = Trainer::new(cfg.clone(), train)
                .unwrap()
                .run(&mut |line| println!("    [{label}] {line}"))
                .unwrap();
            let elapsed = start.elapsed();
            let success = evaluate(cfg, &trained.model, &mut trained.store, test, None).unwrap().ciou_at_half;
            let mut by_steps = BTreeMap::new();
            if cfg.use_pcm {
                for steps in [1, 3, 5] {
                    let r = evaluate(cfg, &trained.model, &mut trained.store, test, Some(steps)).unwrap();
                    by_steps.insert(steps, r.ciou_at_half);
                }
            }
            println!("    [{label}] success@0.5 {success:.3} {by_steps:?} trained in {elapsed:.0?}");
            self.done.insert(label.to_string(), Run { trained, success, by_steps, elapsed });
        }
        &self.done[label]
    }

    fn untrained_success(&mut self, cfg: &Config) -> f64 {
        self.get("seed0-pcm", cfg);
        let (_, test) = &self.data[&(cfg.seed, cfg.classes)];
        let (model, mut store) = untrained(cfg).unwrap();
        evaluate(cfg, &model, &mut store, test, None).unwrap().ciou_at_half
    }
}

fn reference() -> Config {
    Config::default()
}

fn variant(f: impl Fn(&mut Config)) -> Config {
    let mut c = reference();
    f(&mut c);
    c
}

fn gradient_suite(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let worst = |v: Vec<(&'static str, f64)>| v.into_iter().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let (op64, e64) = worst(worst_errors_f64(20).map_err(|e| e.to_string())?);
    let (op32, e32) = worst(worst_errors_f32(20).map_err(|e| e.to_string())?);
    let (plain64, plain32, k1) = common::composed::check(false);
    let (pcm64, pcm32, k2) = common::composed::check(true);
    let elapsed = start.elapsed();
    let ok = e64 < 1e-6
        && e32 < 1e-3
        && plain64.max(pcm64) < 1e-6
        && plain32.max(pcm32) < 1e-3
        && elapsed < Duration::from_secs(60);
    ensure(
        ok,
        format!(
            "ops worst 64-bit {e64:.1e} ({op64}), 32-bit {e32:.1e} ({op32}); composed loss 64-bit {:.1e}, 32-bit {:.1e}, {} kink probes skipped; {elapsed:.1?}",
            plain64.max(pcm64),
            plain32.max(pcm32),
            k1 + k2
        ),
    )
}

fn stop_gradient_blocking(_: &mut Runs) -> Outcome {
    common::blocking::stop_gradient_zeroes_target_only_parameters_bitwise(20);
    Ok("target-only adjoints bitwise zero on 20 seeds".into())
}

fn pcm_suite(_: &mut Runs) -> Outcome {
    use common::pcm_checks::*;
    let start = Instant::now();
    errors_equal_representation_minus_prediction();
    full_feedback_rate_reaches_predictions();
    zero_rates_leave_representations_unchanged();
    initial_shapes_follow_the_channel_plan();
    output_shape_is_preserved();
    let (first, last, _) = descent_endpoints();
    let elapsed = start.elapsed();
    ensure(
        last < first && elapsed < Duration::from_secs(10),
        format!("diagnostic loss {first:.3} -> {last:.3} over five cycles; {elapsed:.1?}"),
    )
}

fn metric_oracle(_: &mut Runs) -> Outcome {
    common::metric_oracle::ciou_equals_set_iou_on_random_masks(1000);
    common::metric_oracle::auc_matches_closed_form_curves();
    Ok("1000 mask pairs match the set oracle; both closed-form AUC curves match".into())
}

fn end_to_end(runs: &mut Runs) -> Outcome {
    let base = reference();
    let untrained = runs.untrained_success(&base);
    let pcm = runs.get("seed0-pcm", &base);
    let (with_pcm, minutes) = (pcm.by_steps[&5], pcm.elapsed.as_secs_f64() / 60.0);
    let without = runs.get("seed0-nopcm", &variant(|c| c.use_pcm = false)).success;
    let mut detail = format!(
        "seed 0: PCM {with_pcm:.3}, no PCM {without:.3}, untrained {untrained:.3}, PCM run {minutes:.1} min"
    );
    let mut ok = with_pcm >= 0.6 && with_pcm - untrained >= 0.05 && with_pcm - without >= 0.05 && minutes <= 30.0;
    for seed in 1..=3 {
        let p = runs.get(&format!("seed{seed}-pcm"), &variant(|c| c.seed = seed)).by_steps[&5];
        let n = runs
            .get(&format!("seed{seed}-nopcm"), &variant(|c| {
                c.seed = seed;
                c.use_pcm = false;
            }))
            .success;
        detail += &format!("; seed {seed}: PCM {p:.3}, no PCM {n:.3}");
        ok &= p >= n && p >= 0.5;
    }
    ensure(ok, detail)
}

fn collapse(runs: &mut Runs) -> Outcome {
    let base = reference();
    let uniform = 1.0 / (base.embed_dim as f64).sqrt();
    let on_min = runs
        .get("seed0-pcm", &base)
        .trained
        .history
        .iter()
        .map(|h| h.collapse)
        .fold(f64::INFINITY, f64::min);
    let off = runs.get("seed0-pcm-sg-off", &variant(|c| {
        c.stop_gradient = false;
        c.epochs = 10;
    }));
    let off_min = off.trained.history.iter().map(|h| h.collapse).fold(f64::INFINITY, f64::min);
    let minutes = off.elapsed.as_secs_f64() / 60.0;
    ensure(
        off_min < 0.2 * uniform && on_min > 0.5 * uniform && minutes <= 10.0,
        format!(
            "1/sqrt(d) = {uniform:.4}; stop-gradient off reaches {off_min:.4} in {} epochs ({minutes:.1} min); on stays >= {on_min:.4}",
            off.trained.epochs_run
        ),
    )
}

fn test_time_cycles(runs: &mut Runs) -> Outcome {
    let run = runs.get("seed0-pcm", &reference());
    let (one, three, five) = (run.by_steps[&1], run.by_steps[&3], run.by_steps[&5]);
    ensure(five >= one, format!("T=1 {one:.3}, T=3 {three:.3}, T=5 {five:.3}"))
}

fn scaling_order(runs: &mut Runs) -> Outcome {
    let mut table = String::from("    scaling,success_at_half\n");
    let mut score = BTreeMap::new();
    for m in Scaling::ALL {
        let s = if m == reference().scaling {
            runs.get("seed0-pcm", &reference()).success
        } else {
            runs.get(&format!("seed0-pcm-{m}"), &variant(|c| c.scaling = m)).success
        };
        table += &format!("    {m},{s:.4}\n");
        score.insert(m.to_string(), s);
    }
    print!("{table}");
    let minmax = score[&Scaling::MinMax.to_string()];
    ensure(
        minmax >= score[&Scaling::Relu.to_string()] && minmax >= score[&Scaling::ReluSoftmax.to_string()],
        format!("{score:?}"),
    )
}

fn false_negatives(runs: &mut Runs) -> Outcome {
    let mut score = [Objective::InfoNce, Objective::InfoNceMasked, Objective::Sspl].map(|o| {
        let cfg = variant(|c| {
            c.classes = 2;
            c.objective = o;
        });
        runs.get(&format!("two-class-{o}"), &cfg).success
    });
    let [plain, masked, sspl] = std::mem::take(&mut score);
    ensure(
        plain < masked && sspl >= masked - 0.05,
        format!("two classes: infonce {plain:.3}, class-masked {masked:.3}, sspl {sspl:.3}"),
    )
}

fn reproducibility(runs: &mut Runs) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = variant(|c| {
        c.train_size = 160;
        c.test_size = 32;
        c.epochs = 2;
    });
    let gen = GeneratorConfig::from_config(&cfg);
    let data = Dataset::generate(&gen, cfg.seed, Purpose::TrainScene, cfg.train_size);
    let path = dir.path().join("train.bin");
    write_dataset(&data, &path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back = load_dataset(&path).map_err(|e| e.to_string())?;
    let again = dir.path().join("again.bin");
    write_dataset(&back, &again).map_err(|e| e.to_string())?;
    let dataset_ok = back == data && std::fs::read(&again).map_err(|e| e.to_string())? == bytes;

    let log = |d: &Dataset| {
        let mut lines = Vec::new();
        let t = Trainer::new(cfg.clone(), d).unwrap().run(&mut |l| lines.push(l.to_string())).unwrap();
        (lines, t)
    };
    let (first, trained) = log(&data);
    let (second, _) = log(&back);
    let logs_ok = first == second;

    // The reference checkpoint when it has been trained, else the small one.
    let (config, store, optimizer) = match runs.done.get("seed0-pcm") {
        Some(r) => (reference(), r.trained.store.clone(), r.trained.optimizer.clone()),
        None => (cfg.clone(), trained.store, trained.optimizer),
    };
    let ckpt = Checkpoint { config, epoch: 0, rng_cursor: 0, store, optimizer };
    let ckpt_path = dir.path().join("model.ckpt");
    ckpt.save(&ckpt_path).map_err(|e| e.to_string())?;
    let (loaded, _) = Checkpoint::load(&ckpt_path).map_err(|e| e.to_string())?;
    let ckpt_ok = loaded.to_bytes() == ckpt.to_bytes();

    ensure(
        dataset_ok && logs_ok && ckpt_ok,
        format!(
            "dataset round trip {dataset_ok}, checkpoint round trip {ckpt_ok}, {} identical log lines {logs_ok}",
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    type Check = fn(&mut Runs) -> Outcome;
    let criteria: [(&str, Check); 10] = [
        ("gradient suite", gradient_suite),
        ("stop-gradient blocking", stop_gradient_blocking),
        ("PCM algebraic suite", pcm_suite),
        ("metric oracle", metric_oracle),
        ("end-to-end localization", end_to_end),
        ("collapse without stop-gradient", collapse),
        ("test-time PCM cycles", test_time_cycles),
        ("scaling-method ordering", scaling_order),
        ("false negatives", false_negatives),
        ("reproducibility and formats", reproducibility),
    ];
    let selected: Vec<usize> = match std::env::var("AVLOC_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() && list.trim() != "all" => {
            list.split(',').filter_map(|s| s.trim().parse().ok()).collect()
        }
        _ => (1..=criteria.len()).collect(),
    };
    let mut runs = Runs::default();
    let mut lines = Vec::new();
    let mut failed = false;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.contains(&number) {
            continue;
        }
        println!("criterion {number}: {name} ...");
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut runs)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed = true;
                ("FAIL", d)
            }
        };
        let line = format!("criterion {number} {verdict} {name}: {detail} [{:.1?}]", start.elapsed());
        println!("{line}");
        lines.push(line);
    }
    let failures = lines.iter().filter(|l| l.contains(" FAIL ")).count();
    println!("\nacceptance summary: {} passed, {failures} failed", lines.len() - failures);
    for l in &lines {
        println!("{l}");
    }
    let strict = std::env::var("AVLOC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
