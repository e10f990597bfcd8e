//! The `gen-data`, `train`, `evaluate` and `sample` subcommands. Each reads
//! and writes only files under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use advnf_core::flow::FlowModel;
use advnf_core::lattice::{log_boltzmann_unnorm, SpinConfig};
use advnf_core::mcmc::imh_resample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{derive_seed, ExperimentConfig};
use crate::csvio::{write_meta, Stamp};
use crate::data::{self, Dataset};
use crate::error::{AppError, AppResult};
use crate::pipeline::{self, model_label, stamp, Evaluation, Trained};

/// Condition index, point and optional `log q`.
pub type SampleRow = (usize, Vec<f64>, Option<f64>);

/// Phase-2 iteration and the draws recorded there.
pub type Snapshot = (usize, Vec<SampleRow>);

type TargetFn = Box<dyn Fn(&Vec<f64>) -> f64>;

/// Draws per condition recorded at each phase-2 snapshot.
pub const SNAPSHOT_DRAWS: usize = 500;

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.txt")
}

fn write_config(out: &Path, cfg: &ExperimentConfig) -> AppResult<()> {
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| AppError::io(&path, e))
}

fn elapsed(t: Instant) -> String {
    format!("{:.3}", t.elapsed().as_secs_f64())
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> AppResult<Dataset> {
    let t = Instant::now();
    let data = data::generate(cfg)?;
    let dir = data_dir(out);
    let st = stamp(cfg);
    data::write(&dir, &st, &data)?;
    write_config(out, cfg)?;
    write_meta(&dir.join("meta.toml"), &st, &[("wall_seconds", elapsed(t))])?;
    log::info!("wrote {} conditions to {}", data.num_conditions(), dir.display());
    Ok(data)
}

/// Reads `out/data`, generating it first when absent.
pub fn load_or_generate(cfg: &ExperimentConfig, out: &Path) -> AppResult<Dataset> {
    let dir = data_dir(out);
    if dir.join("train.csv").exists() {
        data::read(&dir, cfg)
    } else {
        gen_data(cfg, out)
    }
}

/// Raw flow samples at each condition, for snapshot files.
fn snapshot_rows(cfg: &ExperimentConfig, model: &FlowModel, conds: &[Vec<f64>], it: usize) -> AppResult<Vec<SampleRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "snapshot", it as u64));
    let mut rows = Vec::new();
    for (i, c) in conds.iter().enumerate() {
        let s = model.sample(SNAPSHOT_DRAWS, c, &mut rng)?;
        for r in 0..SNAPSHOT_DRAWS {
            rows.push((i, s.x.row(r).to_vec(), None));
        }
    }
    Ok(rows)
}

/// Trains and returns the model with per-iteration snapshots.
pub fn train_with_snapshots(
    cfg: &ExperimentConfig,
    data: &Dataset,
) -> AppResult<(Trained, Vec<Snapshot>)> {
    let conds: Vec<Vec<f64>> = data.condition_data()?.into_iter().map(|c| c.cond).collect();
    let mut snaps = Vec::new();
    let mut failure = None;
    let trained = pipeline::train(cfg, data, |it, m| {
        if failure.is_none() && cfg.train.snapshots.contains(&it) {
            match snapshot_rows(cfg, m, &conds, it) {
                Ok(rows) => snaps.push((it, rows)),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((trained, snaps))
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> AppResult<Trained> {
    let data = load_or_generate(cfg, out)?;
    let t = Instant::now();
    let (trained, snaps) = train_with_snapshots(cfg, &data)?;
    let st = stamp(cfg);
    checkpoint::save(&checkpoint_path(out), &trained.model)?;
    let mut trace = trained.phase1.trace.clone();
    trace.extend_from_slice(&trained.phase2.trace);
    pipeline::write_trace(&out.join("trace.csv"), &st, &trace)?;
    if !snaps.is_empty() {
        write_snapshots(&out.join("snapshots.csv"), &st, cfg.dim(), &snaps)?;
    }
    write_config(out, cfg)?;
    write_meta(
        &out.join("train-meta.toml"),
        &st,
        &[
            ("wall_seconds", elapsed(t)),
            ("phase1_epochs", trained.phase1.epochs.to_string()),
            ("phase1_best_epoch", trained.phase1.best_epoch.to_string()),
            ("model", model_label(cfg)),
        ],
    )?;
    Ok(trained)
}

pub fn write_snapshots(path: &Path, st: &Stamp, dim: usize, snaps: &[Snapshot]) -> AppResult<()> {
    let mut header = vec!["iteration".to_string(), "condition_index".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    let rows = snaps.iter().flat_map(|(it, rows)| {
        rows.iter().map(move |(c, x, _)| {
            let mut r = vec![it.to_string(), c.to_string()];
            r.extend(x.iter().map(|&v| crate::csvio::fmt(v)));
            r
        })
    });
    crate::csvio::write_csv(path, st, &header, rows)
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> AppResult<Evaluation> {
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(out));
    let model = checkpoint::load(&ck)?;
    let data = load_or_generate(cfg, out)?;
    let t = Instant::now();
    let ev = pipeline::evaluate(cfg, &model, &data)?;
    let st = stamp(cfg);
    pipeline::write_report(&out.join("report.csv"), &st, &model_label(cfg), &data, &ev)?;
    write_meta(&out.join("evaluate-meta.toml"), &st, &[("wall_seconds", elapsed(t))])?;
    Ok(ev)
}

/// Writes `out/samples.csv`: raw flow samples with `log_q`, or the IMH
/// chain when `imh` is set, in which case the acceptance rate is returned.
pub fn sample(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    condition: usize,
    n: usize,
    imh: bool,
) -> AppResult<Option<f64>> {
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(out));
    let model = checkpoint::load(&ck)?;
    if model.config() != &cfg.flow_config() {
        return Err(AppError::Validation(
            "checkpoint architecture does not match the configuration".into(),
        ));
    }
    if n == 0 {
        return Err(AppError::Validation("sample count must be positive".into()));
    }
    let conds = condition_embeddings(cfg)?;
    let cond = conds.get(condition).ok_or_else(|| {
        AppError::Validation(format!("condition index {condition} out of range (0..{})", conds.len()))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sample", condition as u64));
    let draws = model.sample(n, cond, &mut rng)?;
    let raw: Vec<(Vec<f64>, f64)> = (0..n).map(|r| (draws.x.row(r).to_vec(), draws.log_q[r])).collect();
    let st = stamp(cfg);
    let path = out.join("samples.csv");
    if !imh {
        let rows: Vec<_> = raw.into_iter().map(|(x, lq)| (condition, x, Some(lq))).collect();
        pipeline::write_samples(&path, &st, cfg.dim(), &rows)?;
        return Ok(None);
    }
    let target: TargetFn = match &cfg.dataset {
        crate::config::DatasetConfig::Lattice(l) => {
            let c = l.conditions()?[condition];
            let n = l.n;
            Box::new(move |x: &Vec<f64>| {
                SpinConfig::new(n, x.clone())
                    .and_then(|s| log_boltzmann_unnorm(&s, &c))
                    .unwrap_or(f64::NAN)
            })
        }
        crate::config::DatasetConfig::Synthetic(_) => {
            let Dataset::Synthetic(set) = data_for_targets(cfg)? else {
                unreachable!("synthetic config yields synthetic data")
            };
            let t = set.target(condition)?;
            Box::new(move |x: &Vec<f64>| t.log_prob(x))
        }
    };
    let res = imh_resample(raw, |x| target(x), &mut rng)?;
    let rows: Vec<_> = res.chain.into_iter().map(|x| (condition, x, None)).collect();
    pipeline::write_samples(&path, &st, cfg.dim(), &rows)?;
    Ok(Some(res.acceptance_rate))
}

/// Synthetic targets need no samples; an empty dataset carries them.
fn data_for_targets(cfg: &ExperimentConfig) -> AppResult<Dataset> {
    let mut c = cfg.clone();
    if let crate::config::DatasetConfig::Synthetic(s) = &mut c.dataset {
        s.train_per_component = Some(0);
        s.test_per_component = Some(0);
        s.valid_per_component = 0;
    }
    data::generate(&c)
}

pub fn condition_embeddings(cfg: &ExperimentConfig) -> AppResult<Vec<Vec<f64>>> {
    Ok(match &cfg.dataset {
        crate::config::DatasetConfig::Lattice(l) => l.conditions()?.iter().map(|c| c.embedding()).collect(),
        crate::config::DatasetConfig::Synthetic(s) => s.name.dataset().conditions().iter().map(|c| c.embedding()).collect(),
    })
}
