//! Resumable run state as JSON. Floats are written in shortest round-trip
//! form and parsed with correct rounding, so a restore is value-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WarmStart;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    pub mu: f64,
    pub kappa: f64,
    pub loss: String,
    pub seed: u64,
    pub round: u64,
    /// Dual values in example order.
    pub alpha: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    /// Proximal center; all zeros for an unshifted objective.
    pub y: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "checkpoint format {} not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.alpha.len() != self.n || [self.u.len(), self.w.len(), self.y.len()] != [self.d; 3] {
            return Err(Error::InvalidArgument("checkpoint array lengths disagree with n and d".into()));
        }
        Ok(())
    }

    /// Dual state to resume the unshifted problem from. The stored direction
    /// is converted back when the checkpoint was taken inside a shifted stage.
    pub fn warm_start(&self) -> WarmStart {
        if self.kappa == 0.0 {
            return WarmStart { alpha: self.alpha.clone(), u: self.u.clone() };
        }
        let le = self.lambda + self.kappa;
        let u = self
            .u
            .iter()
            .zip(&self.y)
            .map(|(&uj, &yj)| (le * uj - self.kappa * yj) / self.lambda)
            .collect();
        WarmStart { alpha: self.alpha.clone(), u }
    }
}
