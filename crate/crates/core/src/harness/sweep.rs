use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_model, checkpoint};
use crate::robustness::run_probes;
use crate::seed;
use crate::sparsity::{apply_masks_in_place, connectivity_report, generate_static_masks, magnitude_prune, Schedule};
use crate::train::{init_seed, train_model, StopReason, TrainConfig};

use super::config::ExperimentConfig;

/// One long-format result value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale_point: usize,
    pub keep_fraction_pct: f64,
    pub seed: u64,
    pub metric: String,
    pub parameter: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub scale_point: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<RunFailure>,
}

impl SweepResult {
    /// Sorts rows by (scale point, seed, metric, parameter).
    pub fn canonicalize(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.scale_point, a.seed, &a.metric, &a.parameter).cmp(&(b.scale_point, b.seed, &b.metric, &b.parameter))
        });
        self.failures.sort_by(|a, b| (a.scale_point, a.seed).cmp(&(b.scale_point, b.seed)));
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    }
}

/// Per-run seed: splitmix mix of (master seed, grid index, repeat index).
pub fn run_seed(master: u64, point_index: usize, repeat: usize) -> u64 {
    seed::mix(&[master, point_index as u64, repeat as u64])
}

struct Task {
    point_index: usize,
    point: usize,
    repeat: usize,
}

/// Runs every (grid point, repeat) pair on a pool of `workers` threads.
/// Configuration problems fail up front; failures of individual runs are
/// recorded in the result instead.
pub fn run_sweep(config: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    config.validate()?;
    let (train, test) = config.dataset.load(config.seed)?;
    run_sweep_on(config, &train, &test, workers)
}

/// [`run_sweep`] with preloaded data.
pub fn run_sweep_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset, workers: usize) -> Result<SweepResult> {
    config.validate()?;
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let want = &config.base.input_shape;
    for d in [train, test] {
        let shape = d.image_shape();
        let fits = shape.iter().product::<usize>() == want.iter().product::<usize>();
        if !fits || d.class_count() != config.base.num_classes {
            return Err(Error::Config(format!(
                "dataset {} ({shape:?}, {} classes) does not fit input {want:?} with {} classes",
                d.name(),
                d.class_count(),
                config.base.num_classes
            )));
        }
    }
    if let Some(dir) = &config.output_dir {
        if config.save_checkpoints {
            let ck = dir.join("checkpoints");
            std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        }
    }
    let tasks: Vec<Task> = config
        .grid
        .iter()
        .enumerate()
        .flat_map(|(point_index, &point)| {
            (0..config.repeats).map(move |repeat| Task {
                point_index,
                point,
                repeat,
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<(Task, Result<Vec<SweepRow>>)> = pool.install(|| {
        tasks
            .into_par_iter()
            .map(|t| {
                let r = run_one(config, train, test, &t);
                (t, r)
            })
            .collect()
    });
    let mut result = SweepResult::default();
    for (t, outcome) in outcomes {
        let seed = run_seed(config.seed, t.point_index, t.repeat);
        match outcome {
            Ok(rows) => result.rows.extend(rows),
            Err(e) => {
                result.rows.push(SweepRow {
                    scale_point: t.point,
                    keep_fraction_pct: config.keep_fraction(t.point)? * 100.0,
                    seed,
                    metric: "run_failed".into(),
                    parameter: String::new(),
                    value: 1.0,
                });
                result.failures.push(RunFailure {
                    scale_point: t.point,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    result.canonicalize();
    Ok(result)
}

fn run_one(config: &ExperimentConfig, train: &Dataset, test: &Dataset, t: &Task) -> Result<Vec<SweepRow>> {
    let seed = run_seed(config.seed, t.point_index, t.repeat);
    let spec = config.scaled_spec(t.point);
    let keep = config.keep_fraction(t.point)?;
    let tc = TrainConfig {
        seed,
        ..config.train_config()
    };
    let mut model = build_model(&spec, init_seed(seed))?;
    let (masks, history) = match config.schedule {
        Schedule::AtInit => {
            let masks = generate_static_masks(&model, keep, seed::mix(&[seed, seed::hash_str("mask")]))?;
            let history = train_model(&mut model, Some(&masks), train, &tc, |_, _| {})?;
            (masks, history)
        }
        Schedule::PostTrain => {
            let history = train_model(&mut model, None, train, &tc, |_, _| {})?;
            let masks = magnitude_prune(&model, keep)?;
            apply_masks_in_place(&mut model, &masks)?;
            (masks, history)
        }
    };
    let mut rows = Vec::new();
    let mut push = |metric: &str, parameter: String, value: f64| {
        rows.push(SweepRow {
            scale_point: t.point,
            keep_fraction_pct: keep * 100.0,
            seed,
            metric: metric.to_string(),
            parameter,
            value,
        })
    };
    let stop = match history.stop_reason {
        StopReason::Epochs => "epochs",
        StopReason::LossThreshold => "loss_threshold",
        StopReason::Divergence => "divergence",
    };
    push("stop_reason", stop.into(), 1.0);
    push("epochs", String::new(), history.epochs.len() as f64);
    if let Some(last) = history.epochs.last() {
        push("train_loss", String::new(), last.loss);
        push("train_accuracy", String::new(), last.accuracy);
    }
    push("nonzero_weights", String::new(), model.nonzero_weights() as f64);
    let conn = connectivity_report(&model, &masks)?;
    push("is_connected", String::new(), if conn.is_connected { 1.0 } else { 0.0 });
    push("dead_fraction", String::new(), conn.dead_fraction);
    if history.stop_reason == StopReason::Divergence {
        return Ok(rows);
    }
    if let (true, Some(dir)) = (config.save_checkpoints, &config.output_dir) {
        let path = dir.join("checkpoints").join(format!("p{}_s{seed:016x}.splb", t.point));
        checkpoint::save(&path, &model, Some(&masks))?;
    }
    let report = run_probes(&model, Some(&masks), test, &config.probes, seed)?;
    for r in report.rows() {
        push(&r.metric, r.parameter, r.value);
    }
    Ok(rows)
}

/// Runs whose rows record divergence or failure.
pub(crate) fn excluded_runs(rows: &[SweepRow]) -> std::collections::BTreeSet<(usize, u64)> {
    rows.iter()
        .filter(|r| (r.metric == "stop_reason" && r.parameter == "divergence") || r.metric == "run_failed")
        .map(|r| (r.scale_point, r.seed))
        .collect()
}
