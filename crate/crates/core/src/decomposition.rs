//! The result type shared by the linear and nonlinear decompositions.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::Result;
use crate::fields::{lp_norm, MatrixField, ScalarField};
use crate::mat::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    Skew,
    Rotation,
}

/// Which path of a construction produced (part of) a decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum Branch {
    /// One exponent left: `S` = mean skew part, `F = Du − S`.
    KornClassical,
    /// Exponent `eliminated` folded into `into` (0-based indices).
    KornMerge { eliminated: usize, into: usize },
    /// Full ball-cover pipeline.
    KornCover { balls: usize, graph_balls: usize, clipped_balls: usize },
    /// Nonlinear level-0 step (exponents within a factor 2).
    RigiditySmallRatio,
    /// Nonlinear level `k` ≥ 1, recursing on the doubled exponents.
    RigidityLevel { k: u32 },
    /// Nonlinear merge of exponent `eliminated` into `into`.
    RigidityMerge { eliminated: usize, into: usize },
    /// Nonlinear shortcut: a single rotation with one nonzero part.
    RigidityShortcut,
    /// Lipschitz truncation at level `lambda`, exceptional mass charged to `charged_to`.
    Truncation { lambda: f64, exceptional_cells: usize, charged_to: usize },
}

pub(crate) fn ser_ratios<S: Serializer>(ratios: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(ratios.len()))?;
    for r in ratios {
        if r.is_finite() {
            seq.serialize_element(r)?;
        } else {
            seq.serialize_element("inf")?;
        }
    }
    seq.end()
}

/// `Du = constant + Σ F_α` with per-exponent measurements.
#[derive(Clone, Debug)]
pub struct MixedDecomposition {
    pub constant: Mat,
    pub kind: ConstantKind,
    pub parts: Vec<MatrixField>,
    pub exponents: Vec<f64>,
    pub part_norms: Vec<f64>,
    pub majorant_norms: Vec<f64>,
    pub ratios: Vec<f64>,
    pub branches: Vec<Branch>,
    pub cover: Option<CoverStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverStats {
    pub balls: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub radius: f64,
    /// `max |S_i − S_0|` over the cover.
    pub max_local_spread: f64,
}

/// Serializable summary of a [`MixedDecomposition`] (fields omitted).
#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub kind: ConstantKind,
    pub constant: Mat,
    pub exponents: Vec<f64>,
    pub part_norms: Vec<f64>,
    pub majorant_norms: Vec<f64>,
    #[serde(serialize_with = "ser_ratios")]
    pub ratios: Vec<f64>,
    pub branches: Vec<Branch>,
    pub cover: Option<CoverStats>,
    pub reconstruction_error: f64,
}

/// `num/den`, with `0/0 = 0` and `x/0 = ∞`.
pub fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Norms below this fraction of the data scale are treated as zero.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// [`ratio`] after flushing `num` and `den` to zero when they fall below
/// [`ROUNDOFF_FLOOR`]` · scale`.
pub fn ratio_above_roundoff(num: f64, den: f64, scale: f64) -> f64 {
    let floor = ROUNDOFF_FLOOR * scale;
    let flush = |v: f64| if v <= floor { 0.0 } else { v };
    ratio(flush(num), flush(den))
}

impl MixedDecomposition {
    /// Fills norms and ratios against the scalar majorants.
    pub(crate) fn assemble(
        constant: Mat,
        kind: ConstantKind,
        parts: Vec<MatrixField>,
        majorants: &[ScalarField],
        exponents: &[f64],
        branches: Vec<Branch>,
        cover: Option<CoverStats>,
    ) -> Result<Self> {
        let part_norms = parts.iter().zip(exponents).map(|(f, &p)| lp_norm(f, p)).collect::<Result<Vec<_>>>()?;
        let majorant_norms =
            majorants.iter().zip(exponents).map(|(f, &p)| lp_norm(f, p)).collect::<Result<Vec<_>>>()?;
        let measure = parts[0].domain().measure();
        let ratios = part_norms
            .iter()
            .zip(&majorant_norms)
            .zip(exponents)
            .map(|((&a, &b), &p)| {
                let scale = constant.norm() * measure.powf(1.0 / p) + part_norms.iter().sum::<f64>();
                ratio_above_roundoff(a, b, scale)
            })
            .collect();
        Ok(MixedDecomposition {
            constant,
            kind,
            parts,
            exponents: exponents.to_vec(),
            part_norms,
            majorant_norms,
            ratios,
            branches,
            cover,
        })
    }

    /// `max_cells |constant + Σ F_α − Du|`.
    pub fn reconstruction_error(&self, du: &MatrixField) -> f64 {
        du.domain()
            .inside_cells()
            .map(|c| {
                let sum = self.parts.iter().fold(self.constant, |acc, f| acc + f.get(c));
                (sum - du.get(c)).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn report(&self, du: &MatrixField) -> DecompositionReport {
        DecompositionReport {
            kind: self.kind,
            constant: self.constant,
            exponents: self.exponents.clone(),
            part_norms: self.part_norms.clone(),
            majorant_norms: self.majorant_norms.clone(),
            ratios: self.ratios.clone(),
            branches: self.branches.clone(),
            cover: self.cover.clone(),
            reconstruction_error: self.reconstruction_error(du),
        }
    }

    /// Largest `‖F_α‖_∞`.
    pub fn max_part_sup(&self) -> f64 {
        self.parts.iter().flat_map(|f| f.domain().inside_cells().map(move |c| f.get(c).norm())).fold(0.0, f64::max)
    }
}
