//! Allocation-ratio schedule built from truncated Kumaraswamy CDF curves.
//!
//! The ratio starts on a plateau at `eta_max`, follows a decreasing Kumaraswamy
//! curve rescaled onto `[eta_min, eta_max]`, and ends on a plateau at `eta_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_args(x: f64, a: f64, b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Range(format!("x={x} outside [0, 1]")));
    }
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::Range(format!("shape parameters a={a}, b={b} must be positive and finite")));
    }
    Ok(())
}

/// Kumaraswamy CDF `1 - (1 - x^a)^b`.
pub fn kcdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_args(x, a, b)?;
    Ok(1.0 - (1.0 - x.powf(a)).powf(b))
}

/// Reversed Kumaraswamy CDF `(1 - x^a)^b`.
pub fn rkcdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_args(x, a, b)?;
    Ok((1.0 - x.powf(a)).powf(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub a: f64,
    pub b: f64,
    /// Use the reversed CDF as the decreasing branch; otherwise the mirrored CDF
    /// `kcdf(1 - u)` is used.
    pub reversed: bool,
    pub eta_min: f64,
    pub eta_max: f64,
    pub total_iters: usize,
    /// End of the `eta_max` plateau, as a fraction of `total_iters`.
    pub phase1_end: f64,
    /// Start of the `eta_min` plateau, as a fraction of `total_iters`.
    pub phase3_start: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 2.0,
            reversed: true,
            eta_min: 0.3,
            eta_max: 0.7,
            total_iters: 2000,
            phase1_end: 0.2,
            phase3_start: 0.8,
        }
    }
}

impl ScheduleConfig {
    /// A schedule that holds `eta` for the whole run.
    pub fn constant(eta: f64, total_iters: usize) -> Self {
        Self { eta_min: eta, eta_max: eta, total_iters, ..Self::default() }
    }

    pub fn with_total_iters(mut self, total_iters: usize) -> Self {
        self.total_iters = total_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("shape parameters a={}, b={} must be positive", self.a, self.b));
        }
        if !(0.0 <= self.eta_min && self.eta_min <= self.eta_max && self.eta_max <= 1.0) {
            return bad(format!("need 0 <= eta_min ({}) <= eta_max ({}) <= 1", self.eta_min, self.eta_max));
        }
        if !(0.0 <= self.phase1_end && self.phase1_end <= self.phase3_start && self.phase3_start <= 1.0) {
            return bad(format!(
                "need 0 <= phase1_end ({}) <= phase3_start ({}) <= 1",
                self.phase1_end, self.phase3_start
            ));
        }
        if self.total_iters == 0 {
            return bad("total_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.eta_min == self.eta_max
    }

    /// Decreasing curve on `[0, 1]`, from 1 down to 0.
    fn curve(&self, u: f64) -> Result<f64> {
        if self.reversed {
            rkcdf(u, self.a, self.b)
        } else {
            kcdf(1.0 - u, self.a, self.b)
        }
    }
}

/// Source-selection ratio at `iter` (0 ≤ iter ≤ K).
pub fn eta_at(cfg: &ScheduleConfig, iter: usize) -> Result<f64> {
    cfg.validate()?;
    if iter > cfg.total_iters {
        return Err(Error::Range(format!("iteration {iter} beyond total {}", cfg.total_iters)));
    }
    let x = iter as f64 / cfg.total_iters as f64;
    if x < cfg.phase1_end {
        return Ok(cfg.eta_max);
    }
    if x >= cfg.phase3_start {
        return Ok(cfg.eta_min);
    }
    let u = ((x - cfg.phase1_end) / (cfg.phase3_start - cfg.phase1_end)).clamp(0.0, 1.0);
    let eta = cfg.eta_min + (cfg.eta_max - cfg.eta_min) * cfg.curve(u)?;
    Ok(eta.clamp(cfg.eta_min, cfg.eta_max))
}

/// `iteration,eta` rows for every iteration in `0..=K`.
pub fn schedule_csv(cfg: &ScheduleConfig) -> Result<String> {
    let mut out = String::from("iteration,eta\n");
    for iter in 0..=cfg.total_iters {
        out.push_str(&format!("{iter},{}\n", eta_at(cfg, iter)?));
    }
    Ok(out)
}
