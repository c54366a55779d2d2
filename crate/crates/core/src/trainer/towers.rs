use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainError;

pub const DEFAULT_TAU: f64 = 0.1;
pub const TAU_RANGE: (f64, f64) = (0.01, 100.0);
const PARAMS_MAGIC: &str = "convrec-towers v1";

/// Linear adapters on both sides of the dual encoder:
/// `score(c, x) = <W_c e_c, W_x e_x> / tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    dim: usize,
    /// Row-major `dim × dim`.
    pub context: Vec<f64>,
    /// Row-major `dim × dim`.
    pub item: Vec<f64>,
    tau: f64,
}

impl TowerParams {
    pub fn identity(dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Self {
            dim,
            context: eye.clone(),
            item: eye,
            tau: DEFAULT_TAU,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            context: vec![0.0; dim * dim],
            item: vec![0.0; dim * dim],
            tau: DEFAULT_TAU,
        }
    }

    pub fn from_parts(
        dim: usize,
        context: Vec<f64>,
        item: Vec<f64>,
        tau: f64,
    ) -> Result<Self, TrainError> {
        if context.len() != dim * dim || item.len() != dim * dim {
            return Err(TrainError::Params(format!("matrices must be {dim}x{dim}")));
        }
        let p = Self {
            dim,
            context,
            item,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self, TrainError> {
        self.tau = tau;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(TAU_RANGE.0..=TAU_RANGE.1).contains(&self.tau) {
            return Err(TrainError::Params(format!(
                "tau {} outside [{}, {}]",
                self.tau, TAU_RANGE.0, TAU_RANGE.1
            )));
        }
        if self
            .context
            .iter()
            .chain(&self.item)
            .any(|v| !v.is_finite())
        {
            return Err(TrainError::Params("non-finite tower weight".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn project_context(&self, e: &[f64]) -> Vec<f64> {
        matvec(&self.context, self.dim, e)
    }

    pub fn project_item(&self, e: &[f64]) -> Vec<f64> {
        matvec(&self.item, self.dim, e)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.tau.to_le_bytes());
        for v in self.context.iter().chain(&self.item) {
            h.update(v.to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Text format: magic line, `dim`, `tau`, then the context and item
    /// matrices row by row. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{PARAMS_MAGIC}\ndim {}\ntau {}\n", self.dim, self.tau);
        for (name, m) in [("context", &self.context), ("item", &self.item)] {
            out.push_str(name);
            out.push('\n');
            for row in m.chunks(self.dim) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |msg: &str| TrainError::Params(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(PARAMS_MAGIC) {
            return Err(bad("missing params header"));
        }
        let dim: usize = field(&mut lines, "dim")?
            .parse()
            .map_err(|_| bad("bad dim"))?;
        let tau: f64 = field(&mut lines, "tau")?
            .parse()
            .map_err(|_| bad("bad tau"))?;
        let mut matrices = Vec::new();
        for name in ["context", "item"] {
            if !field(&mut lines, name)?.is_empty() {
                return Err(bad("unexpected text after matrix name"));
            }
            let mut m = Vec::with_capacity(dim * dim);
            for _ in 0..dim {
                let line = lines.next().ok_or_else(|| bad("truncated matrix"))?;
                let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
                let row = row.map_err(|_| bad("bad matrix entry"))?;
                if row.len() != dim {
                    return Err(bad("matrix row has wrong length"));
                }
                m.extend(row);
            }
            matrices.push(m);
        }
        let item = matrices.pop().expect("two matrices");
        let context = matrices.pop().expect("two matrices");
        Self::from_parts(dim, context, item, tau)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, name: &str) -> Result<String, TrainError> {
    let line = lines
        .next()
        .ok_or_else(|| TrainError::Params("truncated params file".into()))?;
    line.strip_prefix(name)
        .map(|v| v.trim().to_string())
        .ok_or_else(|| TrainError::Params(format!("expected `{name}`")))
}

pub(crate) fn matvec(m: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    m.chunks(dim)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}
