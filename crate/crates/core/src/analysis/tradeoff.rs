use crate::{Error, Result};

/// Inputs of the SGD iteration-count and wall-clock trade-off.
///
/// With gradient variance `σ²`, injected sketch variance `V`, smoothness `β`,
/// initial gap `F₀ − F*` and target accuracy `ε`, SGD needs on the order of
/// `(σ² + V)·β·(F₀ − F*)/ε²` iterations; each costs `ρ(V)` instead of `ρ(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffParams {
    pub sigma2: f64,
    pub v: f64,
    pub beta: f64,
    pub gap: f64,
    pub eps: f64,
    pub rho0: f64,
    pub rho_v: f64,
}

impl TradeoffParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma2", self.sigma2),
            ("v", self.v),
            ("beta", self.beta),
            ("gap", self.gap),
            ("eps", self.eps),
            ("rho0", self.rho0),
            ("rho_v", self.rho_v),
        ];
        if let Some((name, value)) = fields.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} = {value} must be finite and non-negative")));
        }
        if self.eps == 0.0 {
            return Err(Error::InvalidArgument("target accuracy eps must be positive".into()));
        }
        Ok(())
    }

    /// `(σ² + V)·β·(F₀ − F*)/ε²`.
    pub fn iterations_for_accuracy(&self) -> Result<f64> {
        self.validate()?;
        Ok((self.sigma2 + self.v) * self.beta * self.gap / (self.eps * self.eps))
    }

    /// Iteration count relative to the unsketched baseline, `(σ² + V)/σ²`.
    pub fn iteration_ratio(&self) -> Result<f64> {
        self.validate()?;
        Ok((self.sigma2 + self.v) / self.sigma2)
    }

    /// `ρ(V)·(σ² + V) ≤ ρ(0)·σ²`: sketching reduces total cost.
    pub fn net_gain(&self) -> Result<bool> {
        self.validate()?;
        Ok(self.rho_v * (self.sigma2 + self.v) <= self.rho0 * self.sigma2)
    }
}
