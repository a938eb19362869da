//! The four experiment commands. Each reads and writes plain files so that
//! runs can be chained and compared.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{
    rec_attack, rec_attack_from, write_trace_csv, AttackOutcome, AttackProblem, DummyData,
    DummyLabels, LossKind, WeightVectorQ,
};
use crate::autodiff::Array;
use crate::bayesopt::{awa_optimize, write_timings_csv, write_trials_csv};
use crate::error::{Error, Result};
use crate::fedsim::{client_update, fedavg_round, RoundRecord};
use crate::metrics::{match_batches, split_batch, BatchMatch};
use crate::model::build_model;

use super::config::ExperimentConfig;
use super::images::{make_dataset, write_netpbm};

pub const LABELS_FILE: &str = "labels.json";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const Q_STAR_FILE: &str = "q_star.json";
pub const REPORT_FILE: &str = "report.csv";

/// The client's samples in the order it processed them in its first epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl GroundTruth {
    pub fn to_array(&self) -> Result<Array> {
        Ok(Array::new(self.shape.clone(), self.data.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownLabels {
    pub labels: Vec<usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("cannot read: {e}"),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn write_images(dir: &Path, prefix: &str, batch: &Array) -> Result<()> {
    for (i, img) in split_batch(batch).iter().enumerate() {
        write_netpbm(
            &dir.join(format!(
                "{prefix}_{i:02}.{}",
                if img.shape()[0] == 3 { "ppm" } else { "pgm" }
            )),
            img,
        )?;
    }
    Ok(())
}

pub struct SimulateSummary {
    pub record: RoundRecord,
    pub labels: Vec<usize>,
    pub truth: Array,
}

/// Runs the warm-up rounds and then the observed round, writing the round
/// record, the first-epoch labels and the ground truth to `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let train = cfg.training_config()?;
    let (arch, mut theta) = build_model(
        cfg.model.arch,
        cfg.input_shape(),
        cfg.model.classes,
        cfg.model_seed(),
    )?;
    let data = make_dataset(
        &cfg.dataset,
        cfg.input_shape(),
        cfg.training.n,
        cfg.model.classes,
        cfg.dataset_seed(),
    )?;
    let clients = std::slice::from_ref(&data);
    for round in 0..cfg.training.warmup_rounds {
        theta = fedavg_round(&arch, &theta, clients, &train, round)?;
    }
    let round = cfg.training.warmup_rounds;
    let (theta_end, trace) = client_update(&arch, &theta, &data, &train, round)?;
    let (truth, labels) = data.gather(&trace.permutations[0]);
    let record = RoundRecord {
        arch,
        theta_start: theta,
        theta_end,
        config: train,
        dataset_size: data.len(),
        round,
    };

    fs::create_dir_all(out)?;
    record.save(out)?;
    write_json(
        &out.join(LABELS_FILE),
        &KnownLabels {
            labels: labels.clone(),
        },
    )?;
    write_json(
        &out.join(TRUTH_FILE),
        &GroundTruth {
            shape: truth.shape().to_vec(),
            data: truth.data().to_vec(),
        },
    )?;
    write_images(out, "truth", &truth)?;
    log::info!(
        "simulated round {round} ({} samples) into {}",
        data.len(),
        out.display()
    );
    Ok(SimulateSummary {
        record,
        labels,
        truth,
    })
}

/// A saved round together with what the evaluation needs.
pub struct LoadedRound {
    pub record: RoundRecord,
    pub labels: Vec<usize>,
    pub truth: Array,
}

pub fn load_round(dir: &Path) -> Result<LoadedRound> {
    let record = RoundRecord::load(dir)?;
    let labels = read_json::<KnownLabels>(&dir.join(LABELS_FILE))?.labels;
    let truth = read_json::<GroundTruth>(&dir.join(TRUTH_FILE))?.to_array()?;
    Ok(LoadedRound {
        record,
        labels,
        truth,
    })
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: String,
    pub case: String,
    pub loss: LossKind,
    pub q: [f64; 6],
    pub f: f64,
    pub diverged: bool,
    #[serde(rename = "match")]
    pub matched: Option<BatchMatch>,
}

/// `E`, `B` and `N` of a round, used to group runs in reports.
pub fn case_key(record: &RoundRecord) -> String {
    format!(
        "N{}_E{}_B{}",
        record.dataset_size, record.config.epochs, record.config.batches
    )
}

fn check_arch(cfg: &ExperimentConfig, record: &RoundRecord) -> Result<()> {
    let arch = cfg.architecture()?;
    if arch != record.arch {
        return Err(Error::ArchitectureMismatch(format!(
            "config describes {:?}, the round was recorded with {:?}",
            arch, record.arch
        )));
    }
    Ok(())
}

fn finish_run(
    out: &Path,
    round: &LoadedRound,
    outcome: &AttackOutcome,
    method: &str,
    loss: LossKind,
    q: WeightVectorQ,
) -> Result<RunMetrics> {
    fs::create_dir_all(out)?;
    write_trace_csv(&out.join(TRACE_FILE), &outcome.trace)?;
    let recon = &outcome.dummy.x_hat;
    write_images(out, "recon", recon)?;
    let matched = if recon.data().iter().all(|v| v.is_finite()) {
        Some(match_batches(
            &split_batch(&round.truth),
            &split_batch(recon),
        )?)
    } else {
        None
    };
    let metrics = RunMetrics {
        method: method.to_string(),
        case: case_key(&round.record),
        loss,
        q: q.to_array(),
        f: outcome.f_value,
        diverged: outcome.diverged,
        matched,
    };
    write_json(&out.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

/// One attack with a fixed `Q` (ignored by the unweighted loss). With
/// `init_from_truth` the dummy batch starts at the ground truth.
pub fn cmd_attack(
    cfg: &ExperimentConfig,
    round_dir: &Path,
    q: Option<WeightVectorQ>,
    init_from_truth: bool,
    out: &Path,
) -> Result<RunMetrics> {
    let round = load_round(round_dir)?;
    check_arch(cfg, &round.record)?;
    let loss = cfg.attack.loss;
    let q = match (q.or(cfg.attack.q.map(WeightVectorQ::from_array)), loss) {
        (Some(q), _) => q.validated(&cfg.bounds())?,
        (None, LossKind::Unweighted) => WeightVectorQ::unweighted(),
        (None, LossKind::Weighted) => {
            return Err(Error::InvalidConfig(
                "the weighted loss needs a Q (attack.q or --q)".into(),
            ));
        }
    };
    let atk = cfg.attack_config(loss)?;
    let problem =
        AttackProblem::from_round(&round.record, round.labels.clone(), cfg.attack.target_epoch)?;
    let outcome = if init_from_truth {
        let init = DummyData {
            x_hat: round.truth.clone(),
            labels: DummyLabels::Known(round.labels.clone()),
        };
        rec_attack_from(&q, &problem, &atk, init)?
    } else {
        rec_attack(&q, &problem, &atk)?
    };
    let method = match loss {
        LossKind::Unweighted => "unweighted",
        LossKind::Weighted => "weighted",
    };
    let metrics = finish_run(out, &round, &outcome, method, loss, q)?;
    if outcome.diverged {
        return Err(Error::Diverged(out.display().to_string()));
    }
    Ok(metrics)
}

pub struct TuneSummary {
    pub q_star: WeightVectorQ,
    pub best_trial: usize,
    pub metrics: RunMetrics,
}

#[derive(Serialize)]
struct QStarFile {
    q_star: [f64; 6],
    best_trial: usize,
    f: f64,
}

/// Tunes `Q` and reruns the attack at `Q*`.
pub fn cmd_tune(cfg: &ExperimentConfig, round_dir: &Path, out: &Path) -> Result<TuneSummary> {
    let round = load_round(round_dir)?;
    check_arch(cfg, &round.record)?;
    let atk = cfg.attack_config(LossKind::Weighted)?;
    let bo = cfg.bo_config();
    let problem =
        AttackProblem::from_round(&round.record, round.labels.clone(), cfg.attack.target_epoch)?;
    let result = awa_optimize(&problem, &atk, &bo)?;
    fs::create_dir_all(out)?;
    write_trials_csv(&out.join(TRIALS_FILE), &result.trials, &bo.bounds)?;
    write_timings_csv(&out.join(TIMINGS_FILE), &result.trials)?;
    write_json(
        &out.join(Q_STAR_FILE),
        &QStarFile {
            q_star: result.q_star.to_array(),
            best_trial: result.best_trial,
            f: result.attack.f_value,
        },
    )?;
    let metrics = finish_run(
        out,
        &round,
        &result.attack,
        "awa",
        LossKind::Weighted,
        result.q_star,
    )?;
    Ok(TuneSummary {
        q_star: result.q_star,
        best_trial: result.best_trial,
        metrics,
    })
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub case: String,
    pub method: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mse: Option<f64>,
    /// `ok`, or why the run was skipped.
    pub status: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Collects the matched metrics of each run into one CSV. Runs without a
/// readable metrics file get a warning row instead.
pub fn cmd_report(runs: &[PathBuf], out_csv: &Path) -> Result<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(Error::InvalidConfig(
            "report needs at least one run directory".into(),
        ));
    }
    let rows: Vec<ReportRow> = runs
        .iter()
        .map(|dir| {
            let run = dir.display().to_string();
            match read_json::<RunMetrics>(&dir.join(METRICS_FILE)) {
                Ok(m) => {
                    let mean = m.matched.as_ref().map(|b| b.mean);
                    ReportRow {
                        run,
                        case: m.case,
                        method: m.method,
                        psnr: mean.map(|x| x.psnr),
                        ssim: mean.map(|x| x.ssim),
                        mse: mean.map(|x| x.mse),
                        status: "ok".into(),
                    }
                }
                Err(e) => {
                    log::warn!("skipping {run}: {e}");
                    ReportRow {
                        run,
                        case: String::new(),
                        method: String::new(),
                        psnr: None,
                        ssim: None,
                        mse: None,
                        status: format!("skipped: {e}").replace(',', ";"),
                    }
                }
            }
        })
        .collect();
    if let Some(parent) = out_csv.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(out_csv)?);
    writeln!(f, "run,case,method,psnr,ssim,mse,status")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.run,
            r.case,
            r.method,
            fmt_opt(r.psnr),
            fmt_opt(r.ssim),
            fmt_opt(r.mse),
            r.status
        )?;
    }
    f.flush()?;
    Ok(rows)
}
