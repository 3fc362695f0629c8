//! Return targets: symlog encoding, generalized advantage estimation and
//! range-based advantage scaling.

use serde::{Deserialize, Serialize};

/// `sign(x) ln(1 + |x|)`.
pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Inverse of [`symlog`].
pub fn symexp(y: f64) -> f64 {
    y.signum() * y.abs().exp_m1()
}

/// One step of a lane, with values already decoded to reward units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    pub terminated: bool,
    /// Value of the successor state when the lane does not continue with it
    /// (truncation or end of rollout). Ignored when `terminated`.
    pub bootstrap: Option<f64>,
}

/// Advantages and λ-returns of one lane, computed backwards.
///
/// A step continues into the next one unless it terminated or carries a
/// bootstrap value; the last step must do one or the other.
pub fn compute_gae(steps: &[GaeStep], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = steps.len();
    let mut advantages = vec![0.0; n];
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        let s = &steps[t];
        let (next_value, continues) = if s.terminated {
            (0.0, false)
        } else if let Some(b) = s.bootstrap {
            (b, false)
        } else {
            assert!(t + 1 < n, "last step of a lane needs a bootstrap value");
            (steps[t + 1].value, true)
        };
        let delta = s.reward + gamma * next_value - s.value;
        let carry = if continues { gamma * lambda * next_advantage } else { 0.0 };
        advantages[t] = delta + carry;
        next_advantage = advantages[t];
    }
    let returns = advantages.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (advantages, returns)
}

/// Linear-interpolation percentile, `p` in `[0, 100]`. Zero for no data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 100.0) * (sorted.len() - 1) as f64 / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Exponential moving average of the 5th-to-95th percentile return range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaRangeScaler {
    pub alpha: f64,
    /// `None` until the first batch.
    pub scale: Option<f64>,
}

impl EmaRangeScaler {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, scale: None }
    }

    /// Folds in the range of `returns` and returns the new `S`.
    pub fn update(&mut self, returns: &[f64]) -> f64 {
        let range = percentile(returns, 95.0) - percentile(returns, 5.0);
        let s = match self.scale {
            None => range,
            Some(s) => self.alpha * s + (1.0 - self.alpha) * range,
        };
        self.scale = Some(s);
        s
    }

    pub fn divisor(&self) -> f64 {
        self.scale.unwrap_or(0.0).max(1.0)
    }
}

/// Updates `scaler` with `returns` and divides `advantages` by `max(1, S)`.
pub fn scale_advantages(advantages: &mut [f64], returns: &[f64], scaler: &mut EmaRangeScaler) -> f64 {
    scaler.update(returns);
    let d = scaler.divisor();
    advantages.iter_mut().for_each(|a| *a /= d);
    d
}
