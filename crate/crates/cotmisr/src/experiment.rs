//! The experiment file: model, training, data, metric and synthesis settings
//! in one `key = value` document.

use std::path::{Path, PathBuf};

use cotmisr_core::kv::Document;
use cotmisr_core::metrics::MetricConfig;
use cotmisr_core::model::CotConfig;
use cotmisr_core::scene::BandSelection;
use cotmisr_core::train::TrainConfig;

use crate::error::{Error, Result};
use crate::synth::SynthConfig;

/// Overrides `[data] root` when set.
pub const DATA_ROOT_ENV: &str = "COTMISR_DATA_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub band: BandSelection,
    /// Frames with a smaller clear fraction are dropped.
    pub min_clearance: f64,
    pub split_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: None, band: BandSelection::All, min_clearance: 0.85, split_ratio: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub model: CotConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub metrics: MetricConfig,
    pub synth: SynthConfig,
    pub out: Option<PathBuf>,
}


const SECTIONS: &[&str] = &["data", "metrics", "model", "train", "synth", "output"];

fn path_string(p: &Path) -> Result<String> {
    let s = p.to_str().ok_or_else(|| Error::Config(format!("path {} is not UTF-8", p.display())))?;
    if s.trim() != s || s.contains('\n') {
        return Err(Error::Config(format!("path {s:?} has surrounding whitespace or newlines")));
    }
    Ok(s.to_string())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        let d = &self.data;
        if !(0.0..=1.0).contains(&d.min_clearance) {
            return Err(Error::Config(format!("min_clearance must lie in [0, 1], got {}", d.min_clearance)));
        }
        if !(d.split_ratio > 0.0 && d.split_ratio <= 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1], got {}", d.split_ratio)));
        }
        let m = &self.metrics;
        if m.max_shift > m.border {
            return Err(Error::Config(format!("max_shift {} exceeds border {}", m.max_shift, m.border)));
        }
        if !(m.cap_db > 0.0 && m.cap_db.is_finite()) {
            return Err(Error::Config(format!("cap_db must be positive, got {}", m.cap_db)));
        }
        for p in [&d.root, &self.out].into_iter().flatten() {
            path_string(p)?;
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        if let Some(root) = &self.data.root {
            doc.set("data", "root", root.display());
        }
        doc.set("data", "band", self.data.band);
        doc.set("data", "min_clearance", self.data.min_clearance);
        doc.set("data", "split_ratio", self.data.split_ratio);
        doc.set("metrics", "border", self.metrics.border);
        doc.set("metrics", "max_shift", self.metrics.max_shift);
        doc.set("metrics", "cap_db", self.metrics.cap_db);
        self.model.write_to(&mut doc);
        self.train.write_to(&mut doc);
        self.synth.write_to(&mut doc);
        if let Some(out) = &self.out {
            doc.set("output", "dir", out.display());
        }
        doc
    }

    /// Canonical text: fixed section and key order, every value explicit.
    pub fn to_text(&self) -> String {
        self.to_document().render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        if let Some(s) = doc.sections().find(|s| !SECTIONS.contains(s)) {
            return Err(Error::Config(if s.is_empty() {
                "keys before the first [section]".into()
            } else {
                format!("unknown section [{s}]")
            }));
        }
        doc.reject_unknown("data", &["root", "band", "min_clearance", "split_ratio"])?;
        doc.reject_unknown("metrics", &["border", "max_shift", "cap_db"])?;
        doc.reject_unknown("output", &["dir"])?;
        let (dd, dm) = (DataConfig::default(), MetricConfig::default());
        let cfg = Self {
            model: CotConfig::read_from(&doc)?,
            train: TrainConfig::read_from(&doc)?,
            data: DataConfig {
                root: doc.get("data", "root").map(PathBuf::from),
                band: doc.parse_or("data", "band", dd.band)?,
                min_clearance: doc.parse_or("data", "min_clearance", dd.min_clearance)?,
                split_ratio: doc.parse_or("data", "split_ratio", dd.split_ratio)?,
            },
            metrics: MetricConfig {
                border: doc.parse_or("metrics", "border", dm.border)?,
                max_shift: doc.parse_or("metrics", "max_shift", dm.max_shift)?,
                cap_db: doc.parse_or("metrics", "cap_db", dm.cap_db)?,
            },
            synth: SynthConfig::read_from(&doc)?,
            out: doc.get("output", "dir").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Core(c) => Error::Config(format!("{}: {c}", path.display())),
            other => other,
        })
    }

    /// Data root after applying the environment override.
    pub fn data_root(&self) -> Result<PathBuf> {
        if let Some(v) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
            return Ok(PathBuf::from(v));
        }
        self.data.root.clone().ok_or_else(|| Error::Config(format!("no data root: set [data] root or {DATA_ROOT_ENV}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cotmisr_core::model::Architecture;

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.arch = Architecture::parse("8c 4t").unwrap();
        cfg.train.lr_decay = 0.97;
        cfg.data.root = Some(PathBuf::from("/tmp/data set"));
        cfg.data.band = BandSelection::Red;
        cfg.out = Some(PathBuf::from("runs/a"));
        let text = cfg.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn sparse_files_fill_defaults() {
        let cfg = ExperimentConfig::from_text("[model]\narch = (1c1t)x2\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.model.arch.blocks().len(), 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.data, DataConfig::default());
        let again = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
    }

    #[test]
    fn invalid_files_are_config_errors() {
        for bad in [
            "[bogus]\na = 1\n",
            "x = 1\n",
            "[data]\nband = GREEN\n",
            "[data]\ncolour = 1\n",
            "[metrics]\nmax_shift = 4\n",
            "[model]\nembed_channels = 10\nheads = 3\n",
            "[train]\nbatch_size = 0\n",
            "[model]\narch = 2q\n",
        ] {
            let err = ExperimentConfig::from_text(bad).unwrap_err();
            let code = match &err {
                Error::Core(_) | Error::Config(_) => err.exit_code(),
                _ => 0,
            };
            assert_eq!(code, 2, "{bad:?}: {err}");
        }
    }
}
