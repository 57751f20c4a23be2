//! Carbon-aware provisioning: k-search thresholds turned into a time-varying
//! executor quota that wraps any scheduler.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CarbonSnapshot, ClusterView, Deferral, PolicyDecision, SchedulingPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum CapError {
    #[error("need 1 <= B <= K, got K={k} B={b}")]
    InvalidQuotaRange { k: u32, b: u32 },
    #[error("need 0 <= L <= U, got L={lower} U={upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("L >= U has no threshold spread; bypass instead of solving")]
    DegenerateRange,
    #[error("L = 0 sends alpha to infinity; floor L above zero first")]
    ZeroLower,
}

/// Relative floor applied to L before solving, as a fraction of U.
pub const LOWER_FLOOR: f64 = 1e-6;
/// Spreads below this fraction of U are treated as a flat signal.
pub const FLAT_TOLERANCE: f64 = 1e-9;

fn lhs(k: f64, alpha: f64) -> f64 {
    (k * (1.0 / (k * alpha)).ln_1p()).exp()
}

/// `lhs - rhs` of the alpha condition, parameterized by `x = alpha - 1` so the
/// root near 1 keeps full relative precision.
fn g(k: f64, spread: f64, x: f64) -> f64 {
    let alpha = 1.0 + x;
    lhs(k, alpha) - spread * alpha / x
}

/// Relative residual of the alpha condition for `k = K - B`.
pub fn alpha_residual(k: u32, lower: f64, upper: f64, alpha: f64) -> f64 {
    let k = k as f64;
    let rhs = (upper - lower) / (upper * (1.0 - 1.0 / alpha));
    (lhs(k, alpha) - rhs).abs() / rhs.abs()
}

/// Root in (1, inf) of `(1 + 1/(kα))^k = (U - L) / (U (1 - 1/α))` with
/// `k = K - B`, by bisection down to adjacent floats.
pub fn solve_alpha(k_total: u32, b: u32, lower: f64, upper: f64) -> Result<f64, CapError> {
    if b < 1 || b >= k_total {
        return Err(CapError::InvalidQuotaRange { k: k_total, b });
    }
    if !(lower >= 0.0 && upper.is_finite()) {
        return Err(CapError::InvalidBounds { lower, upper });
    }
    if lower >= upper {
        return Err(CapError::DegenerateRange);
    }
    if lower == 0.0 {
        return Err(CapError::ZeroLower);
    }
    let k = (k_total - b) as f64;
    let spread = (upper - lower) / upper;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while g(k, spread, hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(k, spread, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // pick whichever endpoint sits closer to the root
    let x = if g(k, spread, lo).abs() <= g(k, spread, hi).abs() {
        lo
    } else {
        hi
    };
    Ok(1.0 + x)
}

/// Thresholds Φ_B..Φ_K for one (K, B, L, U).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub k: u32,
    pub b: u32,
    pub lower: f64,
    pub upper: f64,
    /// `None` when no root is needed (B = K or a flat signal).
    pub alpha: Option<f64>,
    /// `phis[j]` is Φ_{B+j}.
    pub phis: Vec<f64>,
    pub flat: bool,
}

pub fn compute_thresholds(k: u32, b: u32, lower: f64, upper: f64) -> Result<ThresholdSet, CapError> {
    if b < 1 || b > k {
        return Err(CapError::InvalidQuotaRange { k, b });
    }
    if !(lower >= 0.0 && lower <= upper && upper.is_finite()) {
        return Err(CapError::InvalidBounds { lower, upper });
    }
    let mut set = ThresholdSet {
        k,
        b,
        lower,
        upper,
        alpha: None,
        phis: vec![upper; (k - b + 1) as usize],
        flat: false,
    };
    if upper - lower <= FLAT_TOLERANCE * upper {
        set.flat = true;
        return Ok(set);
    }
    if b == k {
        return Ok(set);
    }
    let floored = lower.max(LOWER_FLOOR * upper);
    let alpha = solve_alpha(k, b, floored, upper)?;
    let step = 1.0 + 1.0 / ((k - b) as f64 * alpha);
    let drop = upper - upper / alpha;
    for (i, phi) in set.phis.iter_mut().enumerate().skip(1) {
        *phi = upper - drop * step.powi(i as i32 - 1);
    }
    set.alpha = Some(alpha);
    Ok(set)
}

impl ThresholdSet {
    pub fn phi(&self, i: u32) -> f64 {
        self.phis[(i - self.b) as usize]
    }

    /// Smallest index whose threshold is at or below `c`; K when none is.
    pub fn quota(&self, c: f64) -> u32 {
        if self.flat {
            return self.k;
        }
        if c >= self.upper {
            return self.b;
        }
        self.phis
            .iter()
            .position(|&phi| phi <= c)
            .map_or(self.k, |j| self.b + j as u32)
    }
}

/// `ceil(P r / K)`, limited to the executors that may still start.
pub fn cap_parallelism(p: u32, r: u32, k: u32, available: u32) -> u32 {
    let scaled = (p as u64 * r as u64).div_ceil(k as u64) as u32;
    scaled.min(available)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapConfig {
    pub b: u32,
}

/// Quota wrapper. The inner policy runs unchanged while fewer than r(t)
/// executors are busy; nothing is preempted when the quota drops.
#[derive(Debug, Clone)]
pub struct Cap<P> {
    pub b: u32,
    inner: P,
    thresholds: Option<ThresholdSet>,
    quota: Option<u32>,
}

impl<P: SchedulingPolicy> Cap<P> {
    pub fn new(b: u32, inner: P) -> Self {
        Self {
            b,
            inner,
            thresholds: None,
            quota: None,
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn thresholds(&self) -> Option<&ThresholdSet> {
        self.thresholds.as_ref()
    }
}

impl<P: SchedulingPolicy> SchedulingPolicy for Cap<P> {
    fn name(&self) -> String {
        format!("cap(B={}, {})", self.b, self.inner.name())
    }

    fn on_carbon_change(&mut self, now: f64, carbon: &CarbonSnapshot, executors: u32) {
        let (l, u) = (carbon.bounds.lower, carbon.bounds.upper);
        let stale = self
            .thresholds
            .as_ref()
            .is_none_or(|t| t.lower != l || t.upper != u || t.k != executors);
        if stale {
            let b = self.b.clamp(1, executors);
            self.thresholds = Some(compute_thresholds(executors, b, l, u).expect("bounds come from a validated trace"));
        }
        self.quota = self.thresholds.as_ref().map(|t| t.quota(carbon.intensity));
        self.inner.on_carbon_change(now, carbon, executors);
    }

    fn quota(&self) -> Option<u32> {
        self.quota
    }

    fn decide(&mut self, view: &ClusterView<'_>, deferrals: &mut Vec<Deferral>) -> PolicyDecision {
        let r = self.quota.unwrap_or(view.executors);
        if view.busy >= r {
            return PolicyDecision::Idle;
        }
        match self.inner.decide(view, deferrals) {
            PolicyDecision::Schedule {
                job_id,
                stage_id,
                parallelism,
            } => PolicyDecision::Schedule {
                job_id,
                stage_id,
                parallelism: cap_parallelism(parallelism, r, view.executors, view.idle.min(r - view.busy)),
            },
            PolicyDecision::Idle => PolicyDecision::Idle,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn alpha_closed_form_k1() {
        let a = solve_alpha(2, 1, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(a, 2f64.sqrt(), epsilon = 1e-12);
        let a = solve_alpha(7, 6, 37.0, 412.0).unwrap();
        assert_abs_diff_eq!(a, (412.0f64 / 37.0).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn alpha_near_flat() {
        let a = solve_alpha(2, 1, 0.999999, 1.0).unwrap();
        assert!(a > 1.0 && a < 1.0 + 1e-5);
        assert!(alpha_residual(1, 0.999999, 1.0, a) <= 1e-9);
    }

    #[test]
    fn alpha_residual_mid_range() {
        let a = solve_alpha(25, 5, 100.0, 500.0).unwrap();
        assert!(alpha_residual(20, 100.0, 500.0, a) <= 1e-9);
    }

    #[test]
    fn alpha_errors() {
        assert_eq!(solve_alpha(3, 1, 5.0, 5.0), Err(CapError::DegenerateRange));
        assert_eq!(solve_alpha(3, 1, 0.0, 5.0), Err(CapError::ZeroLower));
        assert!(matches!(
            solve_alpha(3, 3, 1.0, 5.0),
            Err(CapError::InvalidQuotaRange { .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        let t = compute_thresholds(2, 1, 0.5, 1.0).unwrap();
        assert_eq!(t.phi(1), 1.0);
        assert_abs_diff_eq!(t.phi(2), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(t.quota(0.8), 2);
        assert_eq!(t.quota(1.0), 1);
        assert_eq!(t.quota(0.6), 2);

        let flat = compute_thresholds(5, 2, 3.0, 3.0).unwrap();
        assert!(flat.phis.iter().all(|&p| p == 3.0));
        assert_eq!(flat.quota(3.0), 5);

        let full = compute_thresholds(4, 4, 1.0, 9.0).unwrap();
        assert_eq!(full.phis, vec![9.0]);
        assert_eq!(full.quota(9.0), 4);
    }

    #[test]
    fn zero_lower_is_floored() {
        let t = compute_thresholds(10, 2, 0.0, 400.0).unwrap();
        assert!(*t.phis.last().unwrap() >= 0.0);
        assert!(t.phis.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn quota_extremes() {
        let t = compute_thresholds(25, 5, 100.0, 500.0).unwrap();
        assert_eq!(t.quota(500.0), 5);
        assert_eq!(t.quota(900.0), 5);
        assert_eq!(t.quota(t.phi(25) - 1e-6), 25);
        assert_eq!(t.quota(100.0), 25);
    }

    #[test]
    fn parallelism_examples() {
        assert_eq!(cap_parallelism(7, 4, 4, 10), 7);
        assert_eq!(cap_parallelism(10, 5, 20, 10), 3);
        assert_eq!(cap_parallelism(10, 5, 20, 2), 2);
        assert_eq!(cap_parallelism(1, 1, 64, 1), 1);
    }
}
