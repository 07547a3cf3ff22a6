//! Evaluation contract shared by the KAN and MLP surrogates, plus the
//! checkpoint file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::Jet2;
use crate::kan::KanNetwork;
use crate::mlp::MlpNetwork;
use crate::splines::{SplineError, SplineSpec};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-coordinate map `y = scale · x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine { scale: 1.0, offset: 0.0 };

    /// Maps `[lo, hi]` onto `[-1, 1]`. A collapsed range only recentres.
    pub fn normalizing(lo: f64, hi: f64) -> Self {
        let half = 0.5 * (hi - lo);
        if half.abs() <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            return Affine { scale: 1.0, offset: -0.5 * (lo + hi) };
        }
        Affine { scale: 1.0 / half, offset: -(lo + hi) / (hi - lo) }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    #[inline]
    pub fn apply_jet(&self, x: Jet2) -> Jet2 {
        Jet2::new(self.scale * x.v + self.offset, self.scale * x.d1, self.scale * x.d2)
    }
}

/// A network mapping raw inputs `(t, P_m…)` to bus angles, with exact time
/// jets and a reverse sweep for parameter gradients.
///
/// `jet_forward` records whatever `jet_backward` needs in `Cache`; the two
/// must be called with the same parameters.
pub trait Surrogate: Clone + Send + Sync {
    type Cache: Default + Send;

    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn params(&self) -> &[f64];
    fn set_params(&mut self, p: &[f64]) -> Result<(), NetError>;

    /// Parameter count as reported in comparison tables.
    fn reported_param_count(&self) -> usize;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn forward_with(&self, params: &[f64], input: &[f64], out: &mut [f64]);

    fn jet_forward(&self, params: &[f64], input: &[Jet2], cache: &mut Self::Cache, out: &mut [Jet2]);

    /// Accumulates `Σ_k out_adj[k] · ∂out[k]/∂params` into `grad`, where
    /// `out_adj[k]` weights the `(v, d1, d2)` components of output `k`.
    fn jet_backward(&self, params: &[f64], cache: &Self::Cache, out_adj: &[[f64; 3]], grad: &mut [f64]);

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        check_len(self.n_inputs(), input.len())?;
        let mut out = vec![0.0; self.n_outputs()];
        self.forward_with(self.params(), input, &mut out);
        Ok(out)
    }

    fn forward_jet(&self, input: &[Jet2]) -> Result<Vec<Jet2>, NetError> {
        check_len(self.n_inputs(), input.len())?;
        let mut out = vec![Jet2::ZERO; self.n_outputs()];
        let mut cache = Self::Cache::default();
        self.jet_forward(self.params(), input, &mut cache, &mut out);
        Ok(out)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), NetError> {
    if expected != got {
        return Err(NetError::Shape { expected, got });
    }
    Ok(())
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<(), NetError> {
    if shape.len() < 2 {
        return Err(NetError::Config(format!("need at least two layer widths, got {shape:?}")));
    }
    if shape.contains(&0) {
        return Err(NetError::Config(format!("layer widths must be positive, got {shape:?}")));
    }
    Ok(())
}

/// Either surrogate kind, for code that picks the architecture at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Kan(KanNetwork),
    Mlp(MlpNetwork),
}

impl Network {
    pub fn kind(&self) -> &'static str {
        match self {
            Network::Kan(_) => "kan",
            Network::Mlp(_) => "mlp",
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        match self {
            Network::Kan(n) => n.forward(input),
            Network::Mlp(n) => n.forward(input),
        }
    }

    pub fn reported_param_count(&self) -> usize {
        match self {
            Network::Kan(n) => n.reported_param_count(),
            Network::Mlp(n) => n.reported_param_count(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Network::Kan(n) => Checkpoint {
                kind: "kan".into(),
                shape: n.shape().to_vec(),
                k_b: Some(n.spec().order()),
                grid: Some(n.spec().intervals()),
                domain: Some(n.spec().domain().into()),
                train_scale: Some(n.train_scale()),
                seed: n.seed(),
                params: n.params().to_vec(),
                affines: Affines { input: n.input_affine().to_vec(), output: n.output_affine().to_vec() },
            },
            Network::Mlp(n) => Checkpoint {
                kind: "mlp".into(),
                shape: n.widths().to_vec(),
                k_b: None,
                grid: None,
                domain: None,
                train_scale: None,
                seed: n.seed(),
                params: n.params().to_vec(),
                affines: Affines { input: n.input_affine().to_vec(), output: n.output_affine().to_vec() },
            },
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, NetError> {
        let net = match c.kind.as_str() {
            "kan" => {
                let missing = |f: &str| NetError::Config(format!("kan checkpoint missing `{f}`"));
                let (lo, hi) = c.domain.ok_or_else(|| missing("domain"))?;
                let spec = SplineSpec::new(
                    c.k_b.ok_or_else(|| missing("k_b"))?,
                    c.grid.ok_or_else(|| missing("G"))?,
                    lo,
                    hi,
                )?;
                let mut n = KanNetwork::new(&c.shape, spec, c.seed)?
                    .with_input_affine(c.affines.input.clone())?
                    .with_output_affine(c.affines.output.clone())?;
                n.set_train_scale(c.train_scale.unwrap_or(true));
                n.set_params(&c.params)?;
                Network::Kan(n)
            }
            "mlp" => {
                let mut n = MlpNetwork::new(&c.shape, c.seed)?
                    .with_input_affine(c.affines.input.clone())?
                    .with_output_affine(c.affines.output.clone())?;
                n.set_params(&c.params)?;
                Network::Mlp(n)
            }
            other => return Err(NetError::Config(format!("unknown network kind `{other}`"))),
        };
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// Checkpoint JSON: `{kind, shape, k_b, G, domain, seed, params, affines}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_b: Option<usize>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_scale: Option<bool>,
    pub seed: u64,
    pub params: Vec<f64>,
    pub affines: Affines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affines {
    pub input: Vec<Affine>,
    pub output: Vec<Affine>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizing_affine_maps_range() {
        let a = Affine::normalizing(0.0, 20.0);
        assert_eq!(a.apply(0.0), -1.0);
        assert_eq!(a.apply(20.0), 1.0);
        let b = Affine::normalizing(-0.95, -0.05);
        assert!((b.apply(-0.95) + 1.0).abs() < 1e-15);
        assert!((b.apply(-0.05) - 1.0).abs() < 1e-15);
        let c = Affine::normalizing(0.3, 0.3);
        assert_eq!(c.apply(0.3), 0.0);
    }
}
