//! Synthetic carbon signals for experiments and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CarbonTrace, TraceError, SECONDS_PER_HOUR};

/// Alternating low/high signal. The first half of every period is `low`.
/// `period_steps` must be even and at least 2.
pub fn square_wave(
    low: f64,
    high: f64,
    period_steps: usize,
    n_steps: usize,
    step: f64,
) -> Result<CarbonTrace, TraceError> {
    let half = (period_steps / 2).max(1);
    let values = (0..n_steps)
        .map(|k| if (k / half).is_multiple_of(2) { low } else { high })
        .collect();
    CarbonTrace::new(0, step, values, None)
}

/// Parameters of a grid-like hourly signal: a mean level modulated by a
/// daily cycle, a yearly cycle and autocorrelated noise.
#[derive(Debug, Clone)]
pub struct DiurnalParams {
    pub n_steps: usize,
    pub mean: f64,
    pub daily_amplitude: f64,
    pub seasonal_amplitude: f64,
    pub noise_sd: f64,
    pub floor: f64,
    pub start_epoch: i64,
}

impl Default for DiurnalParams {
    /// Three years of hourly data from 2020-01-01 (26,304 points).
    fn default() -> Self {
        Self {
            n_steps: 26_304,
            mean: 274.0,
            daily_amplitude: 90.0,
            seasonal_amplitude: 35.0,
            noise_sd: 25.0,
            floor: 20.0,
            start_epoch: 1_577_836_800,
        }
    }
}

/// Deterministic grid-like trace with a green fraction derived from the
/// intensity (cleaner hours carry more renewable share). Values are rounded
/// to 0.1 g/kWh and 0.001 green fraction so a CSV round trip is exact.
pub fn diurnal(params: &DiurnalParams, seed: u64) -> Result<CarbonTrace, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sd.max(0.0)).expect("noise sd is finite and non-negative");
    let day = std::f64::consts::TAU / 24.0;
    let year = std::f64::consts::TAU / (24.0 * 365.25);
    let mut ar = 0.0;
    let mut values = Vec::with_capacity(params.n_steps);
    for k in 0..params.n_steps {
        let h = k as f64;
        // midday dip from solar, winter peak
        ar = 0.8 * ar + noise.sample(&mut rng);
        let v = params.mean - params.daily_amplitude * (day * (h - 6.0)).sin()
            + params.seasonal_amplitude * (year * h).cos()
            + ar
            + rng.random_range(-1.0..1.0);
        values.push(((v.max(params.floor)) * 10.0).round() / 10.0);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let green = values
        .iter()
        .map(|v| ((1.0 - (v - lo) / span) * 1000.0).round() / 1000.0)
        .collect();
    CarbonTrace::new(params.start_epoch, SECONDS_PER_HOUR, values, Some(green))
}
