//! Study bundles: comparison tables and scatter or curve data for plotting.

use std::path::Path;
use std::str::FromStr;

use advnf_core::train::Variant;

use crate::commands::train_with_snapshots;
use crate::config::{preset, DatasetConfig, ExperimentConfig, SyntheticName};
use crate::csvio::{fmt, write_csv, Stamp};
use crate::data::{self, Dataset};
use crate::error::{AppError, AppResult};
use crate::pipeline::{
    evaluate_lattice, evaluate_synthetic, lattice_values, model_label, reference_curve, stamp, train, train_pair,
    write_curves, SyntheticEvaluation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Table1,
    Table2Desk,
    Table6Desk,
    Fig3Data,
    Fig4Data,
}

impl FromStr for Study {
    type Err = AppError;

    fn from_str(s: &str) -> AppResult<Self> {
        Ok(match s {
            "table1" => Study::Table1,
            "table2-desk" => Study::Table2Desk,
            "table6-desk" => Study::Table6Desk,
            "fig3-data" => Study::Fig3Data,
            "fig4-data" => Study::Fig4Data,
            other => {
                return Err(AppError::Validation(format!(
                    "unknown study {other}; expected table1, table2-desk, table6-desk, fig3-data or fig4-data"
                )))
            }
        })
    }
}

/// Ensemble sizes compared by `table6-desk`.
pub const TABLE6_SIZES: [usize; 4] = [100, 512, 1024, 5120];

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn run(study: Study, seed: u64, out: &Path) -> AppResult<()> {
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    match study {
        Study::Table1 => table1(seed, out),
        Study::Table2Desk => table2_desk(seed, out),
        Study::Table6Desk => table6_desk(seed, out),
        Study::Fig3Data => fig3_data(seed, out),
        Study::Fig4Data => fig4_data(seed, out),
    }
}

fn synthetic_cfg(name: SyntheticName, seed: u64, variant: Variant) -> AppResult<ExperimentConfig> {
    let key = match name {
        SyntheticName::Mog4 => "mog4",
        SyntheticName::Mog8 => "mog8",
        SyntheticName::Rings4 => "rings4",
    };
    let mut cfg = preset(key, seed)?;
    cfg.train.variant = variant;
    Ok(cfg)
}

fn synthetic_pair(cfg: &ExperimentConfig) -> AppResult<[(String, SyntheticEvaluation); 2]> {
    let data = data::generate(cfg)?;
    let Dataset::Synthetic(set) = &data else {
        unreachable!("synthetic preset")
    };
    let (cnf, adv) = train_pair(cfg, &data)?;
    let mut c = cfg.clone();
    c.train.adversarial = false;
    let cnf_label = model_label(&c);
    c.train.adversarial = true;
    let adv_label = model_label(&c);
    Ok([
        (cnf_label, evaluate_synthetic(cfg, &cnf.model, set)?),
        (adv_label, evaluate_synthetic(cfg, &adv.model, set)?),
    ])
}

/// Every variant with and without the adversarial term on the three
/// synthetic datasets.
fn table1(seed: u64, out: &Path) -> AppResult<()> {
    let mut rows = Vec::new();
    let mut st = None;
    for name in SyntheticName::ALL {
        for variant in Variant::ALL {
            let cfg = synthetic_cfg(name, seed, variant)?;
            st.get_or_insert_with(|| stamp(&cfg));
            for (label, ev) in synthetic_pair(&cfg)? {
                log::info!("{} {label}: nll {:.3}", name.label(), ev.mean_nll);
                let occ: Vec<String> = ev.pooled_occupancy.iter().map(|&v| fmt(v)).collect();
                rows.push(vec![
                    name.label().to_string(),
                    label,
                    fmt(ev.mean_nll),
                    fmt(ev.mean_acceptance_rate),
                    fmt(ev.min_occupancy()),
                    occ.join(";"),
                ]);
            }
        }
    }
    let header = strings(&["dataset", "model", "nll", "ar", "min_occupancy", "occupancy"]);
    write_csv(&out.join("table1.csv"), &st.expect("at least one run"), &header, rows)
}

/// Scatter data of CNF(RKL) and AdvNF(RKL) samples per condition.
fn fig3_data(seed: u64, out: &Path) -> AppResult<()> {
    let mut rows = Vec::new();
    let mut st = None;
    for name in SyntheticName::ALL {
        let cfg = synthetic_cfg(name, seed, Variant::Rkl)?;
        st.get_or_insert_with(|| stamp(&cfg));
        for (label, ev) in synthetic_pair(&cfg)? {
            for (c, pts) in ev.samples.iter().enumerate() {
                for p in pts {
                    rows.push(vec![
                        name.label().to_string(),
                        label.clone(),
                        c.to_string(),
                        fmt(p[0]),
                        fmt(p[1]),
                    ]);
                }
            }
        }
    }
    let header = strings(&["dataset", "model", "component_index", "x1", "x2"]);
    write_csv(&out.join("fig3.csv"), &st.expect("at least one run"), &header, rows)
}

/// Rings-4 AdvNF(RKL) samples at scheduled phase-2 iterations.
fn fig4_data(seed: u64, out: &Path) -> AppResult<()> {
    let mut cfg = synthetic_cfg(SyntheticName::Rings4, seed, Variant::Rkl)?;
    let k = cfg.train_config()?.phase2.iterations;
    cfg.train.snapshots = (0..=8).map(|i| i * k / 8).collect();
    let data = data::generate(&cfg)?;
    let (_, snaps) = train_with_snapshots(&cfg, &data)?;
    crate::commands::write_snapshots(&out.join("fig4.csv"), &stamp(&cfg), 2, &snaps)
}

fn lattice_table_header(first: &[&str]) -> Vec<String> {
    let cols = [
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
    let mut h = strings(first);
    for c in cols {
        h.push(c.to_string());
        h.push(format!("{c}_std"));
    }
    h
}

fn mean_std_cells(report: &advnf_core::metrics::MetricsReport) -> Vec<String> {
    lattice_values(&report.mean)
        .iter()
        .zip(lattice_values(&report.std))
        .flat_map(|(m, s)| [fmt(*m), fmt(s)])
        .collect()
}

/// All variants, CNF and AdvNF, on the 4×4 desk lattice, with observable
/// curves against temperature.
fn table2_desk(seed: u64, out: &Path) -> AppResult<()> {
    let base = preset("desk", seed)?;
    let data = data::generate(&base)?;
    let Dataset::Lattice(set) = &data else {
        unreachable!("lattice preset")
    };
    let st: Stamp = stamp(&base);
    let mut rows = Vec::new();
    let mut curves = vec![("MCMC".to_string(), reference_curve(set)?)];
    for variant in Variant::ALL {
        let mut cfg = base.clone();
        cfg.train.variant = variant;
        let (cnf, adv) = train_pair(&cfg, &data)?;
        for (adversarial, t) in [(false, cnf), (true, adv)] {
            cfg.train.adversarial = adversarial;
            let label = model_label(&cfg);
            let ev = evaluate_lattice(&cfg, &t.model, set)?;
            log::info!("{label}: ar {:.2} ol_energy {:.2}", ev.report.mean.acceptance_rate, ev.report.mean.ol_energy);
            let mut row = vec![label.clone()];
            row.extend(mean_std_cells(&ev.report));
            rows.push(row);
            curves.push((label, ev.curve));
        }
    }
    write_csv(&out.join("table2_desk.csv"), &st, &lattice_table_header(&["model"]), rows)?;
    write_curves(&out.join("curves.csv"), &st, &curves)
}

/// AdvNF(RKL) on nested training ensembles of increasing size.
fn table6_desk(seed: u64, out: &Path) -> AppResult<()> {
    let mut base = preset("desk", seed)?;
    let largest = *TABLE6_SIZES.iter().max().expect("sizes");
    if let DatasetConfig::Lattice(l) = &mut base.dataset {
        l.train_per_temperature = largest;
    }
    let full = data::generate(&base)?;
    let st = stamp(&base);
    let mut rows = Vec::new();
    for size in TABLE6_SIZES {
        let mut data = full.clone();
        data.truncate_train(size);
        let mut cfg = base.clone();
        if let DatasetConfig::Lattice(l) = &mut cfg.dataset {
            l.train_per_temperature = size;
        }
        let Dataset::Lattice(set) = &data else {
            unreachable!("lattice preset")
        };
        let t = train(&cfg, &data, |_, _| {})?;
        let ev = evaluate_lattice(&cfg, &t.model, set)?;
        let mut row = vec![size.to_string()];
        row.extend(mean_std_cells(&ev.report));
        rows.push(row);
    }
    write_csv(&out.join("table6_desk.csv"), &st, &lattice_table_header(&["train_size"]), rows)
}
