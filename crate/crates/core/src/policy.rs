//! Serializable policy selection.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cap::Cap;
use crate::carbon::CarbonTrace;
use crate::engine::SchedulingPolicy;
use crate::pcaps::{CarbonScale, Pcaps, PcapsConfig, PcapsError};
use crate::schedulers::{BrownApportion, Fifo, GreenHadoop, Pb, SchedError, WeightedFair, DEFAULT_TAU};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Scheduler(#[from] SchedError),
    #[error(transparent)]
    Pcaps(#[from] PcapsError),
    #[error("cap.B must lie in [1, K={k}], got {b}")]
    CapRange { b: u32, k: u32 },
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_w() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PolicySpec {
    Fifo,
    WeightedFair {
        #[serde(default = "default_w")]
        w: f64,
    },
    Pb {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    #[serde(rename = "greenhadoop")]
    GreenHadoop {
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default)]
        apportion: BrownApportion,
    },
    Cap {
        b: u32,
        inner: Box<PolicySpec>,
    },
    Pcaps {
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default)]
        carbon_scale: CarbonScale,
        #[serde(default)]
        strict_filter: bool,
    },
}

pub type BoxedPolicy = Box<dyn SchedulingPolicy + Send>;

impl PolicySpec {
    pub fn pb() -> Self {
        Self::Pb { tau: DEFAULT_TAU }
    }

    pub fn pcaps(gamma: f64) -> Self {
        Self::Pcaps {
            gamma,
            tau: DEFAULT_TAU,
            carbon_scale: CarbonScale::Normalized,
            strict_filter: false,
        }
    }

    pub fn cap(b: u32, inner: PolicySpec) -> Self {
        Self::Cap {
            b,
            inner: Box::new(inner),
        }
    }

    /// Checks knob domains against a cluster of `k` executors.
    pub fn validate(&self, k: u32) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::Scheduler(SchedError::InvalidParam(m)));
        match self {
            Self::Fifo => Ok(()),
            Self::WeightedFair { w } if !w.is_finite() || *w < 0.0 => bad(format!("w must be >= 0, got {w}")),
            Self::WeightedFair { .. } => Ok(()),
            Self::Pb { tau } => Pb::new(*tau, 0).map(|_| ()).map_err(Into::into),
            Self::GreenHadoop { theta, .. } if !(0.0..=1.0).contains(theta) => {
                bad(format!("theta must lie in [0, 1], got {theta}"))
            }
            Self::GreenHadoop { .. } => Ok(()),
            Self::Cap { b, inner } => {
                if *b < 1 || *b > k {
                    return Err(PolicyError::CapRange { b: *b, k });
                }
                inner.validate(k)
            }
            Self::Pcaps { gamma, tau, .. } => {
                PcapsConfig::new(*gamma).validate()?;
                Pb::new(*tau, 0)?;
                Ok(())
            }
        }
    }

    pub fn build(&self, trace: &Arc<CarbonTrace>, seed: u64) -> Result<BoxedPolicy, PolicyError> {
        Ok(match self {
            Self::Fifo => Box::new(Fifo),
            Self::WeightedFair { w } => Box::new(WeightedFair { exponent: *w }),
            Self::Pb { tau } => Box::new(Pb::new(*tau, seed)?),
            Self::GreenHadoop { theta, apportion } => {
                let mut g = GreenHadoop::new(*theta, Arc::clone(trace))?;
                g.apportion = *apportion;
                Box::new(g)
            }
            Self::Cap { b, inner } => Box::new(Cap::new(*b, inner.build(trace, seed)?)),
            Self::Pcaps {
                gamma,
                tau,
                carbon_scale,
                strict_filter,
            } => {
                let cfg = PcapsConfig {
                    gamma: *gamma,
                    carbon_scale: *carbon_scale,
                    strict_filter: *strict_filter,
                };
                Box::new(Pcaps::new(cfg, Pb::new(*tau, seed)?)?)
            }
        })
    }

    /// Short label for tables and directory names.
    pub fn label(&self) -> String {
        match self {
            Self::Fifo => "fifo".into(),
            Self::WeightedFair { w } => format!("weighted-fair-w{w}"),
            Self::Pb { .. } => "pb".into(),
            Self::GreenHadoop { theta, .. } => format!("greenhadoop-theta{theta}"),
            Self::Cap { b, inner } => format!("cap-b{b}-{}", inner.label()),
            Self::Pcaps { gamma, .. } => format!("pcaps-gamma{gamma}"),
        }
    }
}
