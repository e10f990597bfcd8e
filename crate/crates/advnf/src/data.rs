//! Training, validation and test ensembles: generation, CSV export and reload.

use std::path::Path;
use std::sync::Arc;

use advnf_core::lattice::{BoltzmannTarget, LatticeCondition, SpinConfig};
use advnf_core::mcmc::mh_generate;
use advnf_core::synthetic::{SyntheticCondition, SyntheticDataset};
use advnf_core::target::LogDensity;
use advnf_core::train::ConditionData;
use advnf_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{derive_seed, DatasetConfig, ExperimentConfig, LatticeConfig, RklTarget, SyntheticConfig};
use crate::csvio::{fmt, parse_f64, parse_usize, read_csv, write_csv, Stamp};
use crate::error::{AppError, AppResult};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// The three ensembles of one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for Split<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> Split<T> {
    pub fn get(&self, name: &str) -> &[T] {
        match name {
            "train" => &self.train,
            "valid" => &self.valid,
            _ => &self.test,
        }
    }

    fn get_mut(&mut self, name: &str) -> &mut Vec<T> {
        match name {
            "train" => &mut self.train,
            "valid" => &mut self.valid,
            _ => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub dataset: SyntheticDataset,
    pub conditions: Vec<SyntheticCondition>,
    pub splits: Vec<Split<[f64; 2]>>,
    pub rkl_target: RklTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSet {
    pub n: usize,
    pub conditions: Vec<LatticeCondition>,
    pub splits: Vec<Split<SpinConfig>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Synthetic(SyntheticSet),
    Lattice(LatticeSet),
}

impl SyntheticSet {
    /// Density used by the reverse-KL term and IMH for condition `i`.
    pub fn target(&self, i: usize) -> AppResult<Arc<dyn LogDensity>> {
        Ok(match self.rkl_target {
            RklTarget::Mixture => Arc::new(self.dataset.mixture_target()),
            RklTarget::Component => Arc::new(self.dataset.component_target(&self.conditions[i])?),
        })
    }
}

fn points_tensor(points: &[[f64; 2]]) -> Tensor {
    Tensor::new(vec![points.len(), 2], points.iter().flatten().copied().collect()).expect("point tensor")
}

/// `[N, n²]` tensor of spin angles.
pub fn spins_tensor(n: usize, configs: &[SpinConfig]) -> Tensor {
    Tensor::new(
        vec![configs.len(), n * n],
        configs.iter().flat_map(|s| s.angles().iter().copied()).collect(),
    )
    .expect("spin tensor")
}

impl Dataset {
    pub fn num_conditions(&self) -> usize {
        match self {
            Dataset::Synthetic(s) => s.conditions.len(),
            Dataset::Lattice(l) => l.conditions.len(),
        }
    }

    /// Per-condition training inputs.
    pub fn condition_data(&self) -> AppResult<Vec<ConditionData>> {
        match self {
            Dataset::Synthetic(s) => s
                .conditions
                .iter()
                .zip(&s.splits)
                .enumerate()
                .map(|(i, (c, sp))| {
                    Ok(ConditionData {
                        cond: c.embedding(),
                        train: points_tensor(&sp.train),
                        valid: points_tensor(&sp.valid),
                        target: Some(s.target(i)?),
                    })
                })
                .collect(),
            Dataset::Lattice(l) => l
                .conditions
                .iter()
                .zip(&l.splits)
                .map(|(c, sp)| {
                    let target: Arc<dyn LogDensity> = Arc::new(BoltzmannTarget::new(l.n, *c)?);
                    Ok(ConditionData {
                        cond: c.embedding(),
                        train: spins_tensor(l.n, &sp.train),
                        valid: spins_tensor(l.n, &sp.valid),
                        target: Some(target),
                    })
                })
                .collect(),
        }
    }

    /// Keeps only the first `n` training samples of every condition.
    pub fn truncate_train(&mut self, n: usize) {
        match self {
            Dataset::Synthetic(s) => s.splits.iter_mut().for_each(|sp| sp.train.truncate(n)),
            Dataset::Lattice(l) => l.splits.iter_mut().for_each(|sp| sp.train.truncate(n)),
        }
    }
}

/// Generates every ensemble named by the config.
pub fn generate(cfg: &ExperimentConfig) -> AppResult<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic(s) => generate_synthetic(cfg.seed, s).map(Dataset::Synthetic),
        DatasetConfig::Lattice(l) => generate_lattice(cfg, l).map(Dataset::Lattice),
    }
}

fn generate_synthetic(seed: u64, s: &SyntheticConfig) -> AppResult<SyntheticSet> {
    let dataset = s.name.dataset();
    let conditions = dataset.conditions();
    let sizes = [s.train_size(), s.valid_per_component, s.test_size()];
    let splits = conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut sp = Split::default();
            for (name, size) in SPLITS.iter().zip(sizes) {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synthetic-{name}"), i as u64));
                *sp.get_mut(name) = dataset.sample_component(c, size, &mut rng)?;
            }
            Ok(sp)
        })
        .collect::<AppResult<_>>()?;
    Ok(SyntheticSet {
        dataset,
        conditions,
        splits,
        rkl_target: s.rkl_target,
    })
}

fn generate_lattice(cfg: &ExperimentConfig, l: &LatticeConfig) -> AppResult<LatticeSet> {
    let conditions = l.conditions()?;
    let sizes = [l.train_per_temperature, l.valid_per_temperature, l.test_per_temperature];
    let splits = conditions
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut sp = Split::default();
            for (name, size) in SPLITS.iter().zip(sizes) {
                let seed = derive_seed(cfg.seed, &format!("mh-{name}"), i as u64);
                let mh = cfg.mcmc.mh_config(l.n, size, seed);
                *sp.get_mut(name) = if size == 0 {
                    Vec::new()
                } else {
                    mh_generate(l.n, c, &mh)?
                };
            }
            Ok(sp)
        })
        .collect::<AppResult<_>>()?;
    Ok(LatticeSet {
        n: l.n,
        conditions,
        splits,
    })
}

fn file(dir: &Path, split: &str) -> std::path::PathBuf {
    dir.join(format!("{split}.csv"))
}

/// Writes `train.csv`, `valid.csv` and `test.csv` under `dir`.
pub fn write(dir: &Path, stamp: &Stamp, data: &Dataset) -> AppResult<()> {
    for split in SPLITS {
        let path = file(dir, split);
        match data {
            Dataset::Synthetic(s) => {
                let cdim = s.dataset.condition_dim();
                let mut header = vec!["x1".to_string(), "x2".into(), "component_index".into()];
                header.extend((0..cdim).map(|i| format!("condition_{i}")));
                let rows = s.conditions.iter().zip(&s.splits).flat_map(|(c, sp)| {
                    let emb = c.embedding();
                    sp.get(split).iter().map(move |x| {
                        let mut r = vec![fmt(x[0]), fmt(x[1]), c.component.to_string()];
                        r.extend(emb.iter().map(|&v| fmt(v)));
                        r
                    })
                });
                write_csv(&path, stamp, &header, rows)?;
            }
            Dataset::Lattice(l) => {
                let mut header = vec!["n".to_string(), "T".into(), "J".into(), "K".into()];
                header.extend((0..l.n * l.n).map(|i| format!("theta_{i}")));
                let rows = l.conditions.iter().zip(&l.splits).flat_map(|(c, sp)| {
                    sp.get(split).iter().map(move |s| {
                        let mut r = vec![l.n.to_string(), fmt(c.temperature), fmt(c.j), fmt(c.k)];
                        r.extend(s.angles().iter().map(|&v| fmt(v)));
                        r
                    })
                });
                write_csv(&path, stamp, &header, rows)?;
            }
        }
    }
    Ok(())
}

/// Reads ensembles written by [`write`], grouping rows by the config's conditions.
pub fn read(dir: &Path, cfg: &ExperimentConfig) -> AppResult<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic(s) => {
            let dataset = s.name.dataset();
            let conditions = dataset.conditions();
            let mut splits = vec![Split::default(); conditions.len()];
            for split in SPLITS {
                let path = file(dir, split);
                let t = read_csv(&path)?;
                if t.header.len() != 3 + dataset.condition_dim() {
                    return Err(AppError::format(&path, "column count does not match the dataset"));
                }
                for row in &t.rows {
                    let k = parse_usize(&path, &row[2])?;
                    let sp: &mut Split<[f64; 2]> = splits
                        .get_mut(k)
                        .ok_or_else(|| AppError::format(&path, format!("component {k} out of range")))?;
                    sp.get_mut(split).push([parse_f64(&path, &row[0])?, parse_f64(&path, &row[1])?]);
                }
            }
            Ok(Dataset::Synthetic(SyntheticSet {
                dataset,
                conditions,
                splits,
                rkl_target: s.rkl_target,
            }))
        }
        DatasetConfig::Lattice(l) => {
            let conditions = l.conditions()?;
            let mut splits = vec![Split::default(); conditions.len()];
            for split in SPLITS {
                let path = file(dir, split);
                let t = read_csv(&path)?;
                if t.header.len() != 4 + l.n * l.n {
                    return Err(AppError::format(&path, "column count does not match the lattice size"));
                }
                for row in &t.rows {
                    let temp = parse_f64(&path, &row[1])?;
                    let i = conditions
                        .iter()
                        .position(|c| c.temperature == temp)
                        .ok_or_else(|| AppError::format(&path, format!("temperature {temp} not in the grid")))?;
                    let angles = row[4..]
                        .iter()
                        .map(|v| parse_f64(&path, v))
                        .collect::<AppResult<Vec<_>>>()?;
                    splits[i].get_mut(split).push(SpinConfig::new(l.n, angles)?);
                }
            }
            Ok(Dataset::Lattice(LatticeSet {
                n: l.n,
                conditions,
                splits,
            }))
        }
    }
}
