#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cotmisr::experiment::ExperimentConfig;
use cotmisr::synth::{self, SynthConfig};
use cotmisr_core::model::{Architecture, CotConfig};

/// A model small enough to train for a few epochs in well under a second.
pub fn tiny_model(k: usize) -> CotConfig {
    let mut m = CotConfig { k, c_e: 8, arch: Architecture::parse("1c1t").unwrap(), ..CotConfig::default() };
    m.lrca.ca_reduction = 2;
    m.tblock.heads = 2;
    m.tblock.ff_dim = 16;
    m
}

pub fn tiny_synth(n_scenes: usize, seed: u64) -> SynthConfig {
    SynthConfig { n_scenes, hr_size: 24, frames: 3, seed, ..SynthConfig::default() }
}

/// Writes a synthetic dataset under `dir/data` and returns a matching experiment.
pub fn tiny_experiment(dir: &Path, n_scenes: usize, epochs: usize) -> ExperimentConfig {
    let root = dir.join("data");
    let synth = tiny_synth(n_scenes, 5);
    if !root.exists() {
        synth::synthesize_dataset(&root, &synth).unwrap();
    }
    let mut exp = ExperimentConfig { model: tiny_model(3), synth, ..ExperimentConfig::default() };
    exp.data.root = Some(root);
    exp.train.epochs = epochs;
    exp.train.batch_size = 2;
    exp.train.seed = 11;
    exp
}

pub fn write_config(dir: &Path, exp: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.cfg");
    std::fs::write(&path, exp.to_text()).unwrap();
    path
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
