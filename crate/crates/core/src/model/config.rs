//! Network hyperparameters and their canonical text form.

use alloc::format;
use alloc::string::String;

use super::arch::Architecture;
use crate::error::{Error, Result};
use crate::kv::Document;

#[derive(Debug, Clone, PartialEq)]
pub struct LrcaConfig {
    pub use_ca: bool,
    pub use_sa: bool,
    pub ca_reduction: usize,
    pub sa_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TBlockConfig {
    /// Encoder layers inside each `t` unit.
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Side of the learned positional-embedding grid; 0 disables it.
    pub pos_embed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotConfig {
    /// Frames per scene fed to the network.
    pub k: usize,
    pub c_in: usize,
    /// Embedding width of the shallow encoder and every CoT unit.
    pub c_e: usize,
    pub upscale: usize,
    pub arch: Architecture,
    pub lrca: LrcaConfig,
    pub tblock: TBlockConfig,
    pub ln_eps: f64,
}

impl Default for CotConfig {
    fn default() -> Self {
        Self {
            k: 9,
            c_in: 1,
            c_e: 64,
            upscale: 3,
            arch: Architecture::parse("(2c1t)x4").expect("valid default"),
            lrca: LrcaConfig {
                use_ca: true,
                use_sa: true,
                ca_reduction: 8,
                sa_kernel: 3,
            },
            tblock: TBlockConfig {
                layers: 1,
                heads: 8,
                ff_dim: 256,
                dropout: 0.0,
                pos_embed: 0,
            },
            ln_eps: 1e-5,
        }
    }
}

pub const SECTION: &str = "model";

const KEYS: &[&str] = &[
    "arch",
    "frames",
    "in_channels",
    "embed_channels",
    "upscale",
    "channel_attention",
    "spatial_attention",
    "ca_reduction",
    "sa_kernel",
    "tblock_layers",
    "heads",
    "ff_dim",
    "dropout",
    "pos_embed",
    "ln_eps",
];

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl CotConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lrca;
        let t = &self.tblock;
        if self.k == 0 {
            return Err(bad("frames (k) must be at least 1".into()));
        }
        if self.c_in == 0 || self.c_e <= self.c_in {
            return Err(bad(format!(
                "embed_channels ({}) must exceed in_channels ({}) and in_channels must be positive",
                self.c_e, self.c_in
            )));
        }
        if self.upscale < 2 {
            return Err(bad(format!("upscale must be at least 2, got {}", self.upscale)));
        }
        if !l.use_ca && !l.use_sa {
            return Err(bad("LRCA needs channel_attention or spatial_attention enabled".into()));
        }
        if l.ca_reduction == 0 || !self.c_e.is_multiple_of(l.ca_reduction) {
            return Err(bad(format!(
                "ca_reduction {} must divide embed_channels {}",
                l.ca_reduction, self.c_e
            )));
        }
        if l.sa_kernel.is_multiple_of(2) {
            return Err(bad(format!("sa_kernel must be odd, got {}", l.sa_kernel)));
        }
        if t.heads == 0 || !self.c_e.is_multiple_of(t.heads) {
            return Err(bad(format!(
                "embed_channels {} must be divisible by heads {}",
                self.c_e, t.heads
            )));
        }
        if t.ff_dim == 0 {
            return Err(bad("ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(bad(format!("dropout must lie in [0, 1), got {}", t.dropout)));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(bad(format!("ln_eps must be positive, got {}", self.ln_eps)));
        }
        Ok(())
    }

    /// Writes the `[model]` section.
    pub fn write_to(&self, doc: &mut Document) {
        let s = SECTION;
        doc.set(s, "arch", &self.arch);
        doc.set(s, "frames", self.k);
        doc.set(s, "in_channels", self.c_in);
        doc.set(s, "embed_channels", self.c_e);
        doc.set(s, "upscale", self.upscale);
        doc.set(s, "channel_attention", self.lrca.use_ca);
        doc.set(s, "spatial_attention", self.lrca.use_sa);
        doc.set(s, "ca_reduction", self.lrca.ca_reduction);
        doc.set(s, "sa_kernel", self.lrca.sa_kernel);
        doc.set(s, "tblock_layers", self.tblock.layers);
        doc.set(s, "heads", self.tblock.heads);
        doc.set(s, "ff_dim", self.tblock.ff_dim);
        doc.set(s, "dropout", self.tblock.dropout);
        doc.set(s, "pos_embed", self.tblock.pos_embed);
        doc.set(s, "ln_eps", self.ln_eps);
    }

    /// Reads the `[model]` section; absent keys keep their defaults.
    pub fn read_from(doc: &Document) -> Result<Self> {
        let s = SECTION;
        doc.reject_unknown(s, KEYS)?;
        let d = Self::default();
        let arch = match doc.get(s, "arch") {
            Some(a) => Architecture::parse(a)?,
            None => d.arch.clone(),
        };
        let cfg = Self {
            k: doc.parse_or(s, "frames", d.k)?,
            c_in: doc.parse_or(s, "in_channels", d.c_in)?,
            c_e: doc.parse_or(s, "embed_channels", d.c_e)?,
            upscale: doc.parse_or(s, "upscale", d.upscale)?,
            arch,
            lrca: LrcaConfig {
                use_ca: doc.parse_or(s, "channel_attention", d.lrca.use_ca)?,
                use_sa: doc.parse_or(s, "spatial_attention", d.lrca.use_sa)?,
                ca_reduction: doc.parse_or(s, "ca_reduction", d.lrca.ca_reduction)?,
                sa_kernel: doc.parse_or(s, "sa_kernel", d.lrca.sa_kernel)?,
            },
            tblock: TBlockConfig {
                layers: doc.parse_or(s, "tblock_layers", d.tblock.layers)?,
                heads: doc.parse_or(s, "heads", d.tblock.heads)?,
                ff_dim: doc.parse_or(s, "ff_dim", d.tblock.ff_dim)?,
                dropout: doc.parse_or(s, "dropout", d.tblock.dropout)?,
                pos_embed: doc.parse_or(s, "pos_embed", d.tblock.pos_embed)?,
            },
            ln_eps: doc.parse_or(s, "ln_eps", d.ln_eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut doc = Document::new();
        self.write_to(&mut doc);
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_from(&Document::parse(text)?)
    }
}

impl core::fmt::Display for CotConfig {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.to_text())
    }
}
