//! Small configurations and file helpers shared by the pipeline tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use advnf::config::{preset, DatasetConfig, ExperimentConfig, Temperatures};
use advnf::csvio::body;

/// A 4×4 XY run over two temperatures that trains in about a second.
pub fn tiny_lattice(seed: u64) -> ExperimentConfig {
    let mut cfg = preset("desk-small", seed).unwrap();
    if let DatasetConfig::Lattice(l) = &mut cfg.dataset {
        l.temperatures = Temperatures::List(vec![0.5, 1.5]);
        l.train_per_temperature = 64;
        l.valid_per_temperature = 32;
        l.test_per_temperature = 64;
    }
    cfg.model.layers = Some(2);
    cfg.model.hidden = Some(vec![16, 16]);
    cfg.model.disc_hidden = Some(vec![16]);
    cfg.mcmc.burn_in_sweeps = 10;
    shrink_training(&mut cfg);
    cfg.eval.samples_per_condition = 64;
    cfg
}

/// MOG-4 with a few samples per component.
pub fn tiny_synthetic(seed: u64) -> ExperimentConfig {
    let mut cfg = preset("mog4", seed).unwrap();
    if let DatasetConfig::Synthetic(s) = &mut cfg.dataset {
        s.train_per_component = Some(50);
        s.test_per_component = Some(50);
        s.valid_per_component = 20;
    }
    cfg.model.layers = Some(2);
    cfg.model.hidden = Some(vec![8, 8]);
    cfg.model.disc_hidden = Some(vec![8]);
    shrink_training(&mut cfg);
    cfg.eval.samples_per_condition = 64;
    cfg
}

fn shrink_training(cfg: &mut ExperimentConfig) {
    cfg.train.max_epochs = Some(2);
    cfg.train.rkl_batches_per_epoch = 2;
    cfg.train.iterations = Some(12);
    cfg.train.batch_size = 32;
    cfg.train.valid_draws = 64;
}

/// Bodies of every CSV below `dir`, keyed by relative path.
pub fn csv_bodies(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    collect(dir, dir, &mut out);
    out
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else if path.extension().is_some_and(|e| e == "csv") {
            let key = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(key, body(&std::fs::read_to_string(&path).unwrap()));
        }
    }
}
