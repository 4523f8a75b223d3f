//! Unbiased sketches of vector-Jacobian products through linear layers.
//!
//! A linear layer `y = x·Wᵀ + b` backpropagates an output-gradient block
//! `G` (stored `B × d_out`, one row per sample) into
//! `dX = G·W`, `dW = Gᵀ·X` and `db = Σ_b G[b, :]`. Every sketch here replaces
//! `G` (or, for per-element masking, `W` and `X`) by a random surrogate whose
//! expectation is the original, so the three products stay unbiased.
//!
//! Three families are provided:
//!
//! * uniform masks ([`SketchKind::PerElement`], [`SketchKind::PerColumn`],
//!   [`SketchKind::PerSample`]);
//! * data-dependent coordinate sketches that keep output coordinates with
//!   optimised probabilities (`ProxyL1`, `ProxyL2`, `ProxyVar`,
//!   `DiagonalSketch`);
//! * spectral sketches that keep directions of a data-dependent basis
//!   (`RankConstrainedSketch`, `ProxyGsv`).
//!
//! [`unbiased_lowrank_sketch`] is the standalone minimum-variance unbiased
//! rank-`r` approximation of a matrix.

mod backward;
mod grad_batch;
mod lowrank;
mod plan;

pub use backward::{
    apply_sketched_backward, apply_sketched_backward_with, exact_backward, sketched_input_grad, BackwardOptions, LinearGrads,
};
pub use grad_batch::GradBatch;
pub use lowrank::{unbiased_lowrank_sketch, LowRankSketchResult, LowRankSketcher};
pub use plan::{operator_matrix, plan_sketch, SketchBasis, SketchPlan};

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// The operator catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchKind {
    /// Independent element masks on `W` (for `dX`) and on `X` (for `dW`).
    PerElement,
    /// Mask on output coordinates (columns of the practical `G`).
    PerColumn,
    /// Mask on samples (rows of the practical `G`).
    PerSample,
    /// Coordinate weights from the ℓ1 norm of each gradient coordinate.
    ProxyL1,
    /// Coordinate weights from the ℓ2 norm of each gradient coordinate.
    ProxyL2,
    /// Coordinate weights from the batch variance of each gradient coordinate.
    ProxyVar,
    /// Directions of the left singular basis of `G`, weighted by `σᵢ(G)`.
    ProxyGsv,
    /// Diagonal sketch with weights `(Γ)ᵢᵢ ‖W row i‖²`.
    DiagonalSketch,
    /// Rank-constrained sketch in the eigenbasis of `Γ^{1/2} W Wᵀ Γ^{1/2}`.
    RankConstrainedSketch,
    /// No sketching.
    ExactIdentity,
}

impl SketchKind {
    pub const ALL: [SketchKind; 10] = [
        SketchKind::PerElement,
        SketchKind::PerColumn,
        SketchKind::PerSample,
        SketchKind::ProxyL1,
        SketchKind::ProxyL2,
        SketchKind::ProxyVar,
        SketchKind::ProxyGsv,
        SketchKind::DiagonalSketch,
        SketchKind::RankConstrainedSketch,
        SketchKind::ExactIdentity,
    ];

    /// Short lowercase name used in configs and reports.
    pub fn name(self) -> &'static str {
        match self {
            SketchKind::PerElement => "per_element",
            SketchKind::PerColumn => "per_column",
            SketchKind::PerSample => "per_sample",
            SketchKind::ProxyL1 => "l1",
            SketchKind::ProxyL2 => "l2",
            SketchKind::ProxyVar => "var",
            SketchKind::ProxyGsv => "gsv",
            SketchKind::DiagonalSketch => "ds",
            SketchKind::RankConstrainedSketch => "rcs",
            SketchKind::ExactIdentity => "exact",
        }
    }

    /// Kinds whose probabilities depend on the batch.
    pub fn is_data_dependent(self) -> bool {
        matches!(
            self,
            SketchKind::ProxyL1
                | SketchKind::ProxyL2
                | SketchKind::ProxyVar
                | SketchKind::ProxyGsv
                | SketchKind::DiagonalSketch
                | SketchKind::RankConstrainedSketch
        )
    }

    /// Kinds that select directions of a non-canonical basis.
    pub fn is_spectral(self) -> bool {
        matches!(self, SketchKind::ProxyGsv | SketchKind::RankConstrainedSketch)
    }

    /// Kinds for which `squared` changes the weights.
    pub fn is_proxy(self) -> bool {
        matches!(self, SketchKind::ProxyL1 | SketchKind::ProxyL2 | SketchKind::ProxyVar | SketchKind::ProxyGsv)
    }

    /// Kinds built through [`plan_sketch`].
    pub fn has_plan(self) -> bool {
        self.is_data_dependent() || self == SketchKind::PerColumn
    }

    /// Whether exact-`r` correlated sampling is the default.
    pub fn default_correlated(self) -> bool {
        self.is_data_dependent()
    }
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let kind = match lower.as_str() {
            "per_element" | "element" => SketchKind::PerElement,
            "per_column" | "column" => SketchKind::PerColumn,
            "per_sample" | "sample" => SketchKind::PerSample,
            "l1" => SketchKind::ProxyL1,
            "l2" => SketchKind::ProxyL2,
            "var" => SketchKind::ProxyVar,
            "gsv" | "g_sv" | "g-sv" => SketchKind::ProxyGsv,
            "ds" | "diagonal" => SketchKind::DiagonalSketch,
            "rcs" | "rank_constrained" => SketchKind::RankConstrainedSketch,
            "exact" | "identity" | "baseline" => SketchKind::ExactIdentity,
            _ => return Err(Error::InvalidArgument(format!("unknown sketch kind `{s}`"))),
        };
        Ok(kind)
    }
}

/// Sampling budget: a keep fraction or a number of kept units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// `p ∈ (0, 1]`.
    Fraction(f64),
    /// `r ≥ 1`.
    Count(usize),
}

impl Budget {
    pub fn validate(self) -> Result<()> {
        match self {
            Budget::Fraction(p) if !(p > 0.0 && p <= 1.0) => {
                Err(Error::InvalidArgument(format!("budget fraction {p} outside (0, 1]")))
            }
            Budget::Count(0) => Err(Error::InvalidArgument("budget count must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Number of units kept out of `n`: `max(1, round(p·n))` for a fraction,
    /// `min(r, n)` for a count.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Budget::Fraction(p) => ((p * n as f64).round() as usize).clamp(1, n.max(1)),
            Budget::Count(r) => r.min(n),
        }
    }

    /// Keep probability of a uniform mask over `n` units.
    pub fn fraction(self, n: usize) -> f64 {
        match self {
            Budget::Fraction(p) => p,
            Budget::Count(r) => (r as f64 / n.max(1) as f64).min(1.0),
        }
    }
}

/// Which operator to apply and with what budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchOperatorSpec {
    pub kind: SketchKind,
    pub budget: Budget,
    /// Proxy families only: use the squared proxy as weight (`p ∝ proxy`).
    pub squared: bool,
    /// Planned kinds only: exact-`r` systematic sampling instead of
    /// independent Bernoulli draws.
    pub correlated: bool,
}

impl SketchOperatorSpec {
    /// Spec with the default `squared = true` and the kind's default sampling mode.
    pub fn new(kind: SketchKind, budget: Budget) -> Self {
        SketchOperatorSpec { kind, budget, squared: true, correlated: kind.default_correlated() }
    }

    pub fn exact() -> Self {
        Self::new(SketchKind::ExactIdentity, Budget::Fraction(1.0))
    }

    pub fn with_squared(mut self, squared: bool) -> Self {
        self.squared = squared;
        self
    }

    pub fn with_correlated(mut self, correlated: bool) -> Self {
        self.correlated = correlated;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()
    }

    /// True when the operator is the identity for `d_out` output coordinates.
    pub fn is_identity(&self, d_out: usize) -> bool {
        match self.kind {
            SketchKind::ExactIdentity => true,
            SketchKind::PerElement | SketchKind::PerSample => self.budget.fraction(d_out) >= 1.0,
            SketchKind::PerColumn if !self.correlated => self.budget.fraction(d_out) >= 1.0,
            _ => self.budget.resolve(d_out) >= d_out,
        }
    }

    /// Name such as `corr_l1_squared`, `indep_ds` or `per_sample`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.kind.has_plan() && self.correlated != self.kind.default_correlated() || self.kind.is_data_dependent() {
            s.push_str(if self.correlated { "corr_" } else { "indep_" });
        }
        s.push_str(self.kind.name());
        if self.kind.is_proxy() {
            s.push_str(if self.squared { "_squared" } else { "_plain" });
        }
        s
    }
}

impl FromStr for SketchOperatorSpec {
    type Err = Error;

    /// Parses `[corr_|indep_]kind[_squared|_plain]`; the budget is left at 1.
    fn from_str(s: &str) -> Result<Self> {
        let mut rest = s.trim().to_ascii_lowercase();
        let mut correlated = None;
        for (prefix, flag) in [("corr_", true), ("indep_", false)] {
            if let Some(r) = rest.strip_prefix(prefix) {
                correlated = Some(flag);
                rest = r.to_string();
            }
        }
        let mut squared = None;
        for (suffix, flag) in [("_squared", true), ("_plain", false)] {
            if let Some(r) = rest.strip_suffix(suffix) {
                squared = Some(flag);
                rest = r.to_string();
            }
        }
        let kind: SketchKind = rest.parse()?;
        if correlated.is_some() && !kind.has_plan() {
            return Err(Error::InvalidArgument(format!("`{s}`: sampling mode does not apply to {kind}")));
        }
        if squared.is_some() && !kind.is_proxy() {
            return Err(Error::InvalidArgument(format!("`{s}`: squared/plain only applies to proxy kinds")));
        }
        let mut spec = SketchOperatorSpec::new(kind, Budget::Fraction(1.0));
        if let Some(c) = correlated {
            spec.correlated = c;
        }
        if let Some(q) = squared {
            spec.squared = q;
        }
        Ok(spec)
    }
}
