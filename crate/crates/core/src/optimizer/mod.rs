//! Watermarked histogram optimization.
//!
//! Each stage bounds the cross-cluster terms of every bit's constraints over a box
//! of radius `tau * sum(h)`, solves the resulting pairwise problem exactly and then
//! shrinks or grows the box around the incumbent.

mod pairs;
mod surrogate;

use serde::{Deserialize, Serialize};

pub use pairs::{solve_simplified, SimplifiedSolution, STRICT_EPS};
pub use surrogate::{surrogate_bounds, SearchBox, SurrogateBounds};

use crate::error::{Error, Result};
use crate::robustness::{analytic_ber, emit_constraints, BitCoefficients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub tau_init: f64,
    pub stages: usize,
    /// Budget doublings allowed per stage before settling for an uncertified optimum.
    pub effort: usize,
    pub tau_cap: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            tau_init: 0.01,
            stages: 6,
            effort: 24,
            tau_cap: 0.2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_init > 0.0 && self.tau_init <= self.tau_cap && self.tau_cap <= 1.0) {
            return Err(Error::validation("need 0 < tau_init <= tau_cap <= 1"));
        }
        if self.stages == 0 {
            return Err(Error::validation("stages must be at least 1"));
        }
        if self.effort == 0 {
            return Err(Error::validation("effort must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub tau: f64,
    pub radius: i64,
    pub retries: usize,
    pub feasible: bool,
    pub certified: bool,
    pub verified: bool,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub stages: Vec<StageReport>,
    pub best_stage: usize,
    pub mse: f64,
    pub delta_ber: f64,
    pub ber: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkedHistogram {
    pub x: Vec<u64>,
    pub mse: f64,
    pub ber: Vec<f64>,
    pub report: OptimizerReport,
}

pub fn mse(x: &[u64], h: &[u64]) -> f64 {
    let s: f64 = x.iter().zip(h).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    s / h.len().max(1) as f64
}

/// Bits that fail at `x` under the full constraints or the BER target, or every bit
/// when the cardinality is wrong.
pub fn verify(x: &[u64], h: &[u64], coeffs: &BitCoefficients) -> Vec<usize> {
    let set = emit_constraints(coeffs, h.iter().sum());
    if x.len() != h.len() || !set.cardinality_holds(x) {
        return (0..coeffs.bits()).collect();
    }
    let limit = coeffs.delta_ber * (1.0 + 1e-9);
    let mut bad = set.violations(x);
    for i in 0..coeffs.bits() {
        if analytic_ber(x, coeffs, i) > limit && !bad.contains(&i) {
            bad.push(i);
        }
    }
    bad.sort_unstable();
    bad
}

/// Runs the staged optimization and returns the verified histogram of least MSE.
pub fn optimize(h: &[u64], coeffs: &BitCoefficients, config: &OptimizerConfig) -> Result<WatermarkedHistogram> {
    config.validate()?;
    if h.len() != coeffs.m() {
        return Err(Error::validation("histogram length must equal the coefficient cluster count"));
    }
    let total: u64 = h.iter().sum();
    if total == 0 {
        return Err(Error::validation("histogram is empty"));
    }
    let floor = 1.0 / total as f64;
    let mut tau = config.tau_init.max(floor).min(config.tau_cap.max(floor));
    let mut stages = Vec::with_capacity(config.stages);
    let mut best: Option<(f64, Vec<u64>, usize)> = None;
    let mut last_bad: Vec<usize> = Vec::new();

    for stage in 0..config.stages {
        let mut retries = 0;
        let solved = loop {
            let bx = SearchBox::new(h, tau);
            let attempt = surrogate::surrogate_bounds_in(coeffs, &bx, total as i64)
                .and_then(|b| pairs::solve_in(h, coeffs, &b, &bx, config.effort));
            match attempt {
                Ok(sol) => break Some((sol, bx.radius)),
                Err(Error::Infeasible { bits, .. }) => {
                    last_bad = bits;
                    if tau >= config.tau_cap {
                        break None;
                    }
                    tau = (tau * 2.0).min(config.tau_cap);
                    retries += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let Some((sol, radius)) = solved else {
            stages.push(StageReport {
                stage,
                tau,
                radius: SearchBox::new(h, tau).radius,
                retries,
                feasible: false,
                certified: false,
                verified: false,
                mse: None,
            });
            break;
        };
        let err = mse(&sol.x, h);
        let bad = verify(&sol.x, h, coeffs);
        let verified = bad.is_empty();
        if verified {
            if best.as_ref().is_none_or(|(m, _, _)| err < *m) {
                best = Some((err, sol.x.clone(), stage));
            }
        } else {
            last_bad = bad;
        }
        stages.push(StageReport {
            stage,
            tau,
            radius,
            retries,
            feasible: true,
            certified: sol.certified,
            verified,
            mse: Some(err),
        });
        let shift = sol.x.iter().zip(h).map(|(&a, &b)| a.abs_diff(b)).max().unwrap_or(0);
        tau = (shift as f64 / total as f64).max(floor);
    }

    let Some((err, x, best_stage)) = best else {
        return Err(Error::Infeasible {
            reason: "no stage produced a histogram that passes verification".into(),
            bits: last_bad,
        });
    };
    let ber: Vec<f64> = (0..coeffs.bits()).map(|i| analytic_ber(&x, coeffs, i)).collect();
    Ok(WatermarkedHistogram {
        report: OptimizerReport {
            stages,
            best_stage,
            mse: err,
            delta_ber: coeffs.delta_ber,
            ber: ber.clone(),
        },
        x,
        mse: err,
        ber,
    })
}
