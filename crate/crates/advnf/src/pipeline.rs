//! Training and evaluation driven by an [`ExperimentConfig`], plus the
//! report and trace files each step writes.

use std::path::Path;

use advnf_core::adversarial::{DiscInput, Discriminator};
use advnf_core::flow::FlowModel;
use advnf_core::lattice::{energy_per_site, log_boltzmann_unnorm, magnetization, SpinConfig};
use advnf_core::mcmc::imh_resample;
use advnf_core::metrics::{chain_metrics, mean_std, nll, ConditionMetrics, LatticeEval, MetricsReport};
use advnf_core::train::{train_phase1, train_phase2, ConditionData, Phase1Report, Phase2Report, TraceRow};
use advnf_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{derive_seed, ExperimentConfig};
use crate::csvio::{fmt, write_csv, Stamp};
use crate::data::{spins_tensor, Dataset, LatticeSet, SyntheticSet};
use crate::error::{AppError, AppResult};

pub fn stamp(cfg: &ExperimentConfig) -> Stamp {
    Stamp {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

/// `AdvNF(RKL)`, `CNF(FKL)` and so on.
pub fn model_label(cfg: &ExperimentConfig) -> String {
    let kind = if cfg.train.adversarial { "AdvNF" } else { "CNF" };
    format!("{kind}({})", cfg.train.variant.label())
}

/// Freshly initialised flow and discriminator.
pub fn init_models(cfg: &ExperimentConfig) -> AppResult<(FlowModel, Discriminator)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init", 0));
    let model = FlowModel::new(cfg.flow_config(), &mut rng)?;
    let input = if cfg.is_lattice() {
        DiscInput::Angles
    } else {
        DiscInput::Raw
    };
    let disc = Discriminator::new(cfg.dim(), cfg.cond_dim(), &cfg.disc_hidden(), input, &mut rng);
    Ok((model, disc))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FlowModel,
    pub phase1: Phase1Report,
    pub phase2: Phase2Report,
}

pub fn phase1(cfg: &ExperimentConfig, data: &[ConditionData]) -> AppResult<(FlowModel, Discriminator, Phase1Report)> {
    let (mut model, disc) = init_models(cfg)?;
    let report = train_phase1(&mut model, data, &cfg.train_config()?)?;
    log::info!(
        "phase 1: {} epochs, best {} ({:?})",
        report.epochs,
        report.best_epoch,
        report.valid.get(report.best_epoch.saturating_sub(1))
    );
    Ok((model, disc, report))
}

pub fn phase2<F>(
    cfg: &ExperimentConfig,
    data: &[ConditionData],
    model: &mut FlowModel,
    disc: &mut Discriminator,
    observer: F,
) -> AppResult<Phase2Report>
where
    F: FnMut(usize, &FlowModel),
{
    let report = train_phase2(model, disc, data, &cfg.train_config()?, observer)?;
    log::info!("phase 2: {} iterations", report.trace.len());
    Ok(report)
}

/// Both phases; `observer` sees the model during phase 2. The CNF
/// baseline is the converged phase-1 model and skips phase 2.
pub fn train<F>(cfg: &ExperimentConfig, dataset: &Dataset, observer: F) -> AppResult<Trained>
where
    F: FnMut(usize, &FlowModel),
{
    let data = dataset.condition_data()?;
    let (mut model, mut disc, p1) = phase1(cfg, &data)?;
    let p2 = if cfg.train.adversarial {
        phase2(cfg, &data, &mut model, &mut disc, observer)?
    } else {
        Phase2Report { trace: Vec::new() }
    };
    Ok(Trained {
        model,
        phase1: p1,
        phase2: p2,
    })
}

/// The CNF baseline and AdvNF for the configured variant. AdvNF starts
/// from the converged CNF, so phase 1 runs once.
pub fn train_pair(cfg: &ExperimentConfig, dataset: &Dataset) -> AppResult<(Trained, Trained)> {
    let mut adv_cfg = cfg.clone();
    adv_cfg.train.adversarial = true;
    let data = dataset.condition_data()?;
    let (model, mut disc, p1) = phase1(&adv_cfg, &data)?;
    let cnf = Trained {
        model: model.clone(),
        phase1: p1.clone(),
        phase2: Phase2Report { trace: Vec::new() },
    };
    let mut adv = model;
    let p2 = phase2(&adv_cfg, &data, &mut adv, &mut disc, |_, _| {})?;
    Ok((
        cnf,
        Trained {
            model: adv,
            phase1: p1,
            phase2: p2,
        },
    ))
}

/// Mean and standard deviation of the de-biased observables at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservablePoint {
    pub temperature: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub mag_mean: f64,
    pub mag_std: f64,
}

pub fn observables(temperature: f64, configs: &[SpinConfig], j: f64, k: f64) -> AppResult<ObservablePoint> {
    let e: Vec<f64> = configs
        .iter()
        .map(|s| energy_per_site(s, j, k))
        .collect::<Result<_, _>>()?;
    let m: Vec<f64> = configs.iter().map(magnetization).collect();
    let (energy_mean, energy_std) = mean_std(&e);
    let (mag_mean, mag_std) = mean_std(&m);
    Ok(ObservablePoint {
        temperature,
        energy_mean,
        energy_std,
        mag_mean,
        mag_std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEvaluation {
    pub report: MetricsReport,
    /// IMH-chain observables per temperature.
    pub curve: Vec<ObservablePoint>,
}

/// Flow samples at every temperature, de-biased with IMH and compared with
/// the held-out MCMC ensemble.
pub fn evaluate_lattice(cfg: &ExperimentConfig, model: &FlowModel, set: &LatticeSet) -> AppResult<LatticeEvaluation> {
    let n = cfg.eval.samples_per_condition;
    let results = set
        .conditions
        .par_iter()
        .zip(&set.splits)
        .enumerate()
        .map(|(i, (c, sp))| -> AppResult<(ConditionMetrics, ObservablePoint)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval", i as u64));
            let draws = model.sample(n, &c.embedding(), &mut rng)?;
            let proposals = (0..n)
                .map(|r| Ok((SpinConfig::new(set.n, draws.x.row(r).to_vec())?, draws.log_q[r])))
                .collect::<AppResult<Vec<_>>>()?;
            let imh = imh_resample(
                proposals,
                |s: &SpinConfig| log_boltzmann_unnorm(s, c).unwrap_or(f64::NAN),
                &mut rng,
            )?;
            let test = spins_tensor(set.n, &sp.test);
            let eval = LatticeEval {
                condition: *c,
                reference: &sp.test,
                test: &test,
            };
            let metrics = chain_metrics(model, &imh.chain, imh.acceptance_rate, &eval)?;
            Ok((metrics, observables(c.temperature, &imh.chain, c.j, c.k)?))
        })
        .collect::<AppResult<Vec<_>>>()?;
    let (rows, curve) = results.into_iter().unzip();
    Ok(LatticeEvaluation {
        report: MetricsReport::from_rows(rows),
        curve,
    })
}

/// Observables of the reference ensembles.
pub fn reference_curve(set: &LatticeSet) -> AppResult<Vec<ObservablePoint>> {
    set.conditions
        .iter()
        .zip(&set.splits)
        .map(|(c, sp)| observables(c.temperature, &sp.test, c.j, c.k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    pub component: usize,
    pub nll: f64,
    pub acceptance_rate: f64,
    /// Percentage of this condition's raw samples near each mode.
    pub occupancy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEvaluation {
    pub rows: Vec<SyntheticRow>,
    pub mean_nll: f64,
    pub mean_acceptance_rate: f64,
    /// Occupancy (percent) of the raw samples pooled over all conditions.
    pub pooled_occupancy: Vec<f64>,
    /// Raw flow samples per condition.
    pub samples: Vec<Vec<[f64; 2]>>,
}

impl SyntheticEvaluation {
    pub fn min_occupancy(&self) -> f64 {
        self.pooled_occupancy.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn percent(fractions: Vec<f64>) -> Vec<f64> {
    fractions.into_iter().map(|f| 100.0 * f).collect()
}

pub fn evaluate_synthetic(cfg: &ExperimentConfig, model: &FlowModel, set: &SyntheticSet) -> AppResult<SyntheticEvaluation> {
    let n = cfg.eval.samples_per_condition;
    let results = set
        .conditions
        .par_iter()
        .zip(&set.splits)
        .enumerate()
        .map(|(i, (c, sp))| -> AppResult<(SyntheticRow, Vec<[f64; 2]>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval", i as u64));
            let cond = c.embedding();
            let draws = model.sample(n, &cond, &mut rng)?;
            let points: Vec<[f64; 2]> = (0..n).map(|r| [draws.x.row(r)[0], draws.x.row(r)[1]]).collect();
            let target = set.target(i)?;
            let imh = imh_resample(
                points.iter().copied().zip(draws.log_q.iter().copied()),
                |x: &[f64; 2]| target.log_prob(x),
                &mut rng,
            )?;
            let test = Tensor::new(vec![sp.test.len(), 2], sp.test.iter().flatten().copied().collect())?;
            let row = SyntheticRow {
                component: c.component,
                nll: nll(model, &test, &cond)?,
                acceptance_rate: imh.acceptance_rate,
                occupancy: percent(set.dataset.mode_occupancy(&points)),
            };
            Ok((row, points))
        })
        .collect::<AppResult<Vec<_>>>()?;
    let (rows, samples): (Vec<SyntheticRow>, Vec<Vec<[f64; 2]>>) = results.into_iter().unzip();
    let pooled: Vec<[f64; 2]> = samples.iter().flatten().copied().collect();
    let nlls: Vec<f64> = rows.iter().map(|r| r.nll).collect();
    let ars: Vec<f64> = rows.iter().map(|r| r.acceptance_rate).collect();
    Ok(SyntheticEvaluation {
        mean_nll: mean_std(&nlls).0,
        mean_acceptance_rate: mean_std(&ars).0,
        pooled_occupancy: percent(set.dataset.mode_occupancy(&pooled)),
        rows,
        samples,
    })
}

pub enum Evaluation {
    Synthetic(SyntheticEvaluation),
    Lattice(LatticeEvaluation),
}

pub fn evaluate(cfg: &ExperimentConfig, model: &FlowModel, data: &Dataset) -> AppResult<Evaluation> {
    if model.config() != &cfg.flow_config() {
        return Err(AppError::Validation(
            "checkpoint architecture does not match the configuration".into(),
        ));
    }
    Ok(match data {
        Dataset::Synthetic(s) => Evaluation::Synthetic(evaluate_synthetic(cfg, model, s)?),
        Dataset::Lattice(l) => Evaluation::Lattice(evaluate_lattice(cfg, model, l)?),
    })
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

const LATTICE_COLUMNS: [&str; 10] = [
    "nll",
    "ar",
    "ol_energy",
    "emd_energy",
    "ol_mag",
    "emd_mag",
    "emd_energy_raw",
    "emd_mag_raw",
    "mean_energy",
    "mean_mag",
];

/// Report columns in header order; EMD is scaled by 1000 in the `emd_*` columns.
pub fn lattice_values(m: &ConditionMetrics) -> [f64; 10] {
    [
        m.nll,
        m.acceptance_rate,
        m.ol_energy,
        1000.0 * m.emd_energy,
        m.ol_mag,
        1000.0 * m.emd_mag,
        m.emd_energy,
        m.emd_mag,
        m.mean_energy,
        m.mean_mag,
    ]
}

/// One row per temperature plus a `mean` row carrying `*_std` columns.
pub fn write_lattice_report(path: &Path, stamp: &Stamp, label: &str, set: &LatticeSet, ev: &LatticeEvaluation) -> AppResult<()> {
    let mut header = strings(&["variant", "condition"]);
    header.extend(strings(&LATTICE_COLUMNS));
    header.extend(LATTICE_COLUMNS.iter().map(|c| format!("{c}_std")));
    let blanks = || std::iter::repeat_n(String::new(), LATTICE_COLUMNS.len());
    let mut rows: Vec<Vec<String>> = set
        .conditions
        .iter()
        .zip(&ev.report.rows)
        .map(|(c, m)| {
            let mut r = vec![label.to_string(), fmt(c.temperature)];
            r.extend(lattice_values(m).iter().map(|&v| fmt(v)));
            r.extend(blanks());
            r
        })
        .collect();
    let mut summary = vec![label.to_string(), "mean".to_string()];
    summary.extend(lattice_values(&ev.report.mean).iter().map(|&v| fmt(v)));
    summary.extend(lattice_values(&ev.report.std).iter().map(|&v| fmt(v)));
    rows.push(summary);
    write_csv(path, stamp, &header, rows)
}

/// One row per component plus a `pooled` row.
pub fn write_synthetic_report(path: &Path, stamp: &Stamp, label: &str, ev: &SyntheticEvaluation) -> AppResult<()> {
    let k = ev.pooled_occupancy.len();
    let mut header = strings(&["variant", "condition", "nll", "ar"]);
    header.extend((0..k).map(|i| format!("occupancy_{i}")));
    let mut rows: Vec<Vec<String>> = ev
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![label.to_string(), r.component.to_string(), fmt(r.nll), fmt(r.acceptance_rate)];
            row.extend(r.occupancy.iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    let mut pooled = vec![
        label.to_string(),
        "pooled".to_string(),
        fmt(ev.mean_nll),
        fmt(ev.mean_acceptance_rate),
    ];
    pooled.extend(ev.pooled_occupancy.iter().map(|&v| fmt(v)));
    rows.push(pooled);
    write_csv(path, stamp, &header, rows)
}

pub fn write_report(path: &Path, stamp: &Stamp, label: &str, data: &Dataset, ev: &Evaluation) -> AppResult<()> {
    match (data, ev) {
        (Dataset::Lattice(set), Evaluation::Lattice(e)) => write_lattice_report(path, stamp, label, set, e),
        (_, Evaluation::Synthetic(e)) => write_synthetic_report(path, stamp, label, e),
        _ => Err(AppError::Validation("dataset and evaluation kinds differ".into())),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_trace(path: &Path, stamp: &Stamp, rows: &[TraceRow]) -> AppResult<()> {
    let header = strings(&[
        "phase",
        "iteration",
        "lambda1",
        "lambda2",
        "lambda3",
        "loss_total",
        "loss_fkl",
        "loss_rkl",
        "loss_adv",
        "lr_gen",
        "lr_disc",
    ]);
    let body = rows.iter().map(|t| {
        vec![
            t.phase.to_string(),
            t.iteration.to_string(),
            fmt(t.weights.lambda1),
            fmt(t.weights.lambda2),
            fmt(t.weights.lambda3),
            fmt(t.loss_total),
            opt(t.loss_fkl),
            opt(t.loss_rkl),
            opt(t.loss_adv),
            fmt(t.lr_gen),
            opt(t.lr_disc),
        ]
    });
    write_csv(path, stamp, &header, body)
}

pub fn write_curves(path: &Path, stamp: &Stamp, curves: &[(String, Vec<ObservablePoint>)]) -> AppResult<()> {
    let header = strings(&["model", "T", "energy_mean", "energy_std", "mag_mean", "mag_std"]);
    let rows = curves.iter().flat_map(|(name, pts)| {
        pts.iter().map(move |p| {
            vec![
                name.clone(),
                fmt(p.temperature),
                fmt(p.energy_mean),
                fmt(p.energy_std),
                fmt(p.mag_mean),
                fmt(p.mag_std),
            ]
        })
    });
    write_csv(path, stamp, &header, rows)
}

/// Sample file: condition index, coordinates and (for raw samples) `log_q`.
pub fn write_samples(path: &Path, stamp: &Stamp, dim: usize, rows: &[crate::commands::SampleRow]) -> AppResult<()> {
    let mut header = vec!["condition_index".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    let with_logq = rows.iter().any(|r| r.2.is_some());
    if with_logq {
        header.push("log_q".into());
    }
    let body = rows.iter().map(|(c, x, lq)| {
        let mut r = vec![c.to_string()];
        r.extend(x.iter().map(|&v| fmt(v)));
        if with_logq {
            r.push(opt(*lq));
        }
        r
    });
    write_csv(path, stamp, &header, body)
}
