//! Precedence- and carbon-aware scheduling: a carbon filter on top of the
//! probabilistic scheduler that lets bottleneck stages through and defers
//! low-importance ones while carbon is high.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ClusterView, Deferral, PolicyDecision, SchedulingPolicy};
use crate::schedulers::{Pb, SchedError, ScoreDistribution};

#[derive(Debug, Error, PartialEq)]
pub enum PcapsError {
    #[error("gamma must lie in [0, 1], got {0}")]
    Gamma(f64),
    #[error("relative importance must lie in [0, 1], got {0}")]
    Importance(f64),
    #[error("need 0 <= L <= U, got L={lower} U={upper}")]
    Bounds { lower: f64, upper: f64 },
    #[error(transparent)]
    Scheduler(#[from] SchedError),
}

/// `p / max p` over the distribution. The most likely stage gets exactly 1.
pub fn relative_importance(dist: &ScoreDistribution) -> Vec<f64> {
    let max = dist.max_probability();
    dist.entries.iter().map(|e| e.probability / max).collect()
}

/// Importance-to-carbon threshold: `γL + (1-γ)U` at r = 0 rising
/// exponentially to `U` at r = 1.
pub fn psi(gamma: f64, lower: f64, upper: f64, r: f64) -> Result<f64, PcapsError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PcapsError::Gamma(gamma));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(PcapsError::Importance(r));
    }
    if !(lower >= 0.0 && lower <= upper) {
        return Err(PcapsError::Bounds { lower, upper });
    }
    let base = gamma * lower + (1.0 - gamma) * upper;
    let ratio = if gamma == 0.0 {
        r
    } else {
        (gamma * r).exp_m1() / gamma.exp_m1()
    };
    // written from the top so r = 1 lands on U exactly
    Ok(upper - (upper - base) * (1.0 - ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CarbonScale {
    Raw,
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcapsConfig {
    pub gamma: f64,
    #[serde(default)]
    pub carbon_scale: CarbonScale,
    /// Apply the threshold to r = 1 stages too, even when c exceeds U.
    #[serde(default)]
    pub strict_filter: bool,
}

impl PcapsConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            carbon_scale: CarbonScale::Normalized,
            strict_filter: false,
        }
    }

    pub fn validate(&self) -> Result<(), PcapsError> {
        if (0.0..=1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(PcapsError::Gamma(self.gamma))
        }
    }
}

/// True when the sampled stage may run now.
pub fn filter_decision(
    cfg: &PcapsConfig,
    r: f64,
    c: f64,
    lower: f64,
    upper: f64,
    any_busy: bool,
) -> Result<bool, PcapsError> {
    let threshold = psi(cfg.gamma, lower, upper, r)?;
    if !any_busy || (!cfg.strict_filter && r >= 1.0) {
        return Ok(true);
    }
    Ok(threshold >= c)
}

/// Carbon-scaled parallelism limit, at least 1.
pub fn pcaps_parallelism(cfg: &PcapsConfig, p: u32, c: f64, lower: f64, upper: f64) -> u32 {
    let g = cfg.gamma;
    let decay = match cfg.carbon_scale {
        CarbonScale::Normalized => {
            let c_hat = if upper > lower {
                ((c - lower) / (upper - lower)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (-g * c_hat).exp()
        }
        CarbonScale::Raw => (g * (lower - c)).exp(),
    };
    let factor = decay.min(1.0 - g);
    ((p as f64 * factor).ceil() as u32).max(1)
}

#[derive(Debug, Clone)]
pub struct Pcaps {
    pub config: PcapsConfig,
    pb: Pb,
}

impl Pcaps {
    pub fn new(config: PcapsConfig, pb: Pb) -> Result<Self, PcapsError> {
        config.validate()?;
        Ok(Self { config, pb })
    }
}

impl SchedulingPolicy for Pcaps {
    fn name(&self) -> String {
        format!("pcaps(gamma={}, {})", self.config.gamma, self.pb.name())
    }

    fn decide(&mut self, view: &ClusterView<'_>, deferrals: &mut Vec<Deferral>) -> PolicyDecision {
        let Ok((dist, i)) = self.pb.sample(view.available) else {
            return PolicyDecision::Idle;
        };
        let r = dist.entries[i].probability / dist.max_probability();
        let stage = &view.available[i];
        let c = view.carbon.intensity;
        let (l, u) = (view.carbon.bounds.lower, view.carbon.bounds.upper);
        let pass =
            filter_decision(&self.config, r, c, l, u, view.busy > 0).expect("config validated and bounds ordered");
        if pass {
            PolicyDecision::Schedule {
                job_id: stage.job_id,
                stage_id: stage.stage_id,
                parallelism: pcaps_parallelism(&self.config, stage.unstarted_tasks, c, l, u),
            }
        } else {
            deferrals.push(Deferral {
                time: view.now,
                job_id: stage.job_id,
                stage_id: stage.stage_id,
                relative_importance: r,
                carbon: c,
            });
            PolicyDecision::Idle
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::ScoreEntry;
    use approx::assert_abs_diff_eq;

    fn dist(ps: &[f64]) -> ScoreDistribution {
        ScoreDistribution {
            entries: ps
                .iter()
                .enumerate()
                .map(|(i, &p)| ScoreEntry {
                    job_id: 0,
                    stage_id: i as u32,
                    probability: p,
                })
                .collect(),
        }
    }

    #[test]
    fn importance_examples() {
        assert_eq!(relative_importance(&dist(&[0.2, 0.8])), vec![0.25, 1.0]);
        assert_eq!(relative_importance(&dist(&[1.0])), vec![1.0]);
        let r = relative_importance(&dist(&[0.5, 0.3, 0.2]));
        assert_abs_diff_eq!(r[1], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(r[2], 0.4, epsilon = 1e-15);
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn psi_examples() {
        for g in [0.1, 0.5, 0.9, 1.0] {
            assert_eq!(psi(g, 100.0, 500.0, 1.0).unwrap(), 500.0);
        }
        assert_abs_diff_eq!(psi(0.5, 100.0, 500.0, 0.0).unwrap(), 300.0, epsilon = 1e-12);
        let want = (0.5f64.exp() - 1.0) / (1f64.exp() - 1.0);
        assert_abs_diff_eq!(psi(1.0, 0.0, 1.0, 0.5).unwrap(), want, epsilon = 1e-15);
        assert_abs_diff_eq!(want, 0.377540668798145, epsilon = 1e-14);
        assert_eq!(psi(0.0, 100.0, 500.0, 0.3).unwrap(), 500.0);
        assert!(psi(1.2, 0.0, 1.0, 0.5).is_err());
        assert!(psi(0.5, 2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn filter_examples() {
        let agnostic = PcapsConfig::new(0.0);
        assert!(filter_decision(&agnostic, 0.01, 499.0, 100.0, 500.0, true).unwrap());
        let aware = PcapsConfig::new(0.9);
        assert!(filter_decision(&aware, 1.0, 500.0, 100.0, 500.0, true).unwrap());
        assert!(!filter_decision(&aware, 0.2, 480.0, 100.0, 500.0, true).unwrap());
        assert!(filter_decision(&aware, 0.2, 480.0, 100.0, 500.0, false).unwrap());
        // above the forecast ceiling only the strict rule defers bottlenecks
        assert!(filter_decision(&aware, 1.0, 600.0, 100.0, 500.0, true).unwrap());
        let strict = PcapsConfig {
            strict_filter: true,
            ..aware
        };
        assert!(!filter_decision(&strict, 1.0, 600.0, 100.0, 500.0, true).unwrap());
    }

    #[test]
    fn parallelism_examples() {
        assert_eq!(pcaps_parallelism(&PcapsConfig::new(0.0), 13, 400.0, 100.0, 500.0), 13);
        assert_eq!(pcaps_parallelism(&PcapsConfig::new(0.5), 10, 100.0, 100.0, 500.0), 5);
        assert_eq!(pcaps_parallelism(&PcapsConfig::new(1.0), 10, 500.0, 100.0, 500.0), 1);
        let raw = PcapsConfig {
            carbon_scale: CarbonScale::Raw,
            ..PcapsConfig::new(0.5)
        };
        // exp(0.5 * (100 - 110)) ~ 0.0067 -> ceil(0.067) = 1
        assert_eq!(pcaps_parallelism(&raw, 10, 110.0, 100.0, 500.0), 1);
        assert_eq!(pcaps_parallelism(&raw, 10, 100.0, 100.0, 500.0), 5);
    }
}
