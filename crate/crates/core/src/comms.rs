//! Measurement chain between bus-angle sensors and controllers: sensor lag,
//! additive noise, and delayed delivery with jitter.

use alloc::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::util::wrap_angle;

pub type CommsRng = ChaCha8Rng;

/// Channel and sensor-noise settings shared by all sensors of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommsConfig {
    /// Expected delay range (s); one draw per sensor.
    pub delay_min: f64,
    pub delay_max: f64,
    /// Half-width of the uniform per-sample jitter (s).
    pub jitter: f64,
    /// Noise standard deviation (rad).
    pub noise_std: f64,
    /// Bias added to every sample (rad).
    pub bias: f64,
    /// Report one sample every `decimation` integration steps.
    pub decimation: u32,
}

impl CommsConfig {
    /// Zero delay, jitter and noise.
    pub fn ideal() -> Self {
        Self {
            delay_min: 0.0,
            delay_max: 0.0,
            jitter: 0.0,
            noise_std: 0.0,
            bias: 0.0,
            decimation: 1,
        }
    }

    /// Delays of 67 to 250 ms with 10 ms jitter and 1 mrad noise.
    pub fn nonideal() -> Self {
        Self {
            delay_min: 0.067,
            delay_max: 0.250,
            jitter: 0.010,
            noise_std: 1e-3,
            bias: 0.0,
            decimation: 1,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.delay_max == 0.0 && self.jitter == 0.0 && self.noise_std == 0.0 && self.bias == 0.0
    }

    pub fn validate(&self) -> Result<(), CommsError> {
        if !(self.delay_min >= 0.0 && self.delay_max >= self.delay_min && self.delay_max.is_finite()) {
            return Err(CommsError::DelayRange);
        }
        if !(self.jitter >= 0.0 && self.noise_std >= 0.0 && self.bias.is_finite()) || self.decimation == 0 {
            return Err(CommsError::Parameter);
        }
        Ok(())
    }
}

impl Default for CommsConfig {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommsError {
    #[error("invalid delay range")]
    DelayRange,
    #[error("invalid channel parameter")]
    Parameter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorModel {
    pub time_constant: f64,
    pub noise_std: f64,
    pub bias: f64,
}

/// Lagged angle held by the sensor (continuous radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorState {
    pub value: f64,
}

/// Draws one zero-mean normal sample; no draw when `std` is zero.
fn gaussian(rng: &mut CommsRng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Advances the sensor lag by `dt` toward `true_angle` (held over the step)
/// and returns the reported sample, wrapped to `(-pi, pi]`.
pub fn sensor_step(state: &mut SensorState, true_angle: f64, dt: f64, model: &SensorModel, rng: &mut CommsRng) -> f64 {
    state.value = true_angle + (state.value - true_angle) * (-dt / model.time_constant).exp();
    wrap_angle(state.value + model.bias + gaussian(rng, model.noise_std))
}

/// Draws the expected delay of one sensor.
pub fn channel_delay_draw(rng: &mut CommsRng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Packet {
    timestamp: f64,
    arrival: f64,
    value: f64,
}

/// Delayed delivery of one sensor stream with zero-order hold.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub delay: f64,
    pub jitter: f64,
    pending: VecDeque<Packet>,
    held_timestamp: f64,
    held_value: f64,
}

impl Channel {
    /// A channel holding `initial` (stamped `t0`) until newer samples arrive.
    pub fn new(delay: f64, jitter: f64, t0: f64, initial: f64) -> Self {
        Self {
            delay,
            jitter,
            pending: VecDeque::new(),
            held_timestamp: t0,
            held_value: initial,
        }
    }

    pub fn push(&mut self, timestamp: f64, value: f64, rng: &mut CommsRng) {
        let j = if self.jitter > 0.0 {
            rng.random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        let arrival = timestamp + (self.delay + j).max(0.0);
        self.pending.push_back(Packet {
            timestamp,
            arrival,
            value,
        });
    }

    /// Newest delivered sample at `t_now`; older arrivals are discarded.
    pub fn delayed_read(&mut self, t_now: f64) -> f64 {
        let mut k = 0;
        while k < self.pending.len() {
            let p = self.pending[k];
            if p.arrival <= t_now {
                if p.timestamp > self.held_timestamp {
                    self.held_timestamp = p.timestamp;
                    self.held_value = p.value;
                }
                self.pending.remove(k);
            } else if p.timestamp <= self.held_timestamp {
                // overtaken by a newer delivered sample
                self.pending.remove(k);
            } else {
                k += 1;
            }
        }
        self.held_value
    }

    pub fn held_timestamp(&self) -> f64 {
        self.held_timestamp
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn model(noise: f64) -> SensorModel {
        SensorModel {
            time_constant: 0.02,
            noise_std: noise,
            bias: 0.0,
        }
    }

    #[test]
    fn sensor_settles_and_lags() {
        let mut rng = CommsRng::seed_from_u64(1);
        let mut s = SensorState { value: 0.0 };
        let mut y = 0.0;
        for _ in 0..2000 {
            y = sensor_step(&mut s, 0.3, 0.001, &model(0.0), &mut rng);
        }
        assert!((y - 0.3).abs() < 1e-9);
        let mut s = SensorState { value: 0.0 };
        for _ in 0..20 {
            y = sensor_step(&mut s, 1.0, 0.001, &model(0.0), &mut rng);
        }
        assert!((y - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((y - 0.632).abs() < 1e-3);
    }

    #[test]
    fn sensor_noise_variance() {
        let mut rng = CommsRng::seed_from_u64(42);
        let mut s = SensorState { value: 0.1 };
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sensor_step(&mut s, 0.1, 0.01, &model(1e-3), &mut rng) - 0.1)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var / 1e-6 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn delay_draws() {
        let mut rng = CommsRng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = channel_delay_draw(&mut rng, (0.067, 0.250));
            assert!((0.067..=0.250).contains(&d));
        }
        assert_eq!(channel_delay_draw(&mut rng, (0.1, 0.1)), 0.1);
        let a: Vec<f64> = {
            let mut r = CommsRng::seed_from_u64(9);
            (0..5).map(|_| channel_delay_draw(&mut r, (0.0, 1.0))).collect()
        };
        let b: Vec<f64> = {
            let mut r = CommsRng::seed_from_u64(9);
            (0..5).map(|_| channel_delay_draw(&mut r, (0.0, 1.0))).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn hold_and_delivery() {
        let mut rng = CommsRng::seed_from_u64(0);
        let mut c = Channel::new(0.1, 0.0, 0.0, 0.25);
        assert_eq!(c.delayed_read(5.0), 0.25);
        c.push(0.01, 0.3, &mut rng);
        c.push(0.02, 0.4, &mut rng);
        assert_eq!(c.delayed_read(0.10), 0.25);
        assert_eq!(c.delayed_read(0.11 + 1e-9), 0.3);
        assert_eq!(c.delayed_read(0.2), 0.4);
        assert_eq!(c.pending(), 0);
    }

    #[test]
    fn zero_delay_is_immediate() {
        let mut rng = CommsRng::seed_from_u64(0);
        let mut c = Channel::new(0.0, 0.0, 0.0, 0.0);
        c.push(0.004, 0.7, &mut rng);
        assert_eq!(c.delayed_read(0.004), 0.7);
    }

    proptest! {
        #[test]
        fn delivered_timestamps_monotone(seed in 0u64..1000, jitter in 0.0f64..0.05) {
            let mut rng = CommsRng::seed_from_u64(seed);
            let mut c = Channel::new(0.08, jitter, 0.0, 0.0);
            let dt = 0.004;
            let mut last = 0.0;
            for k in 1..500 {
                let t = k as f64 * dt;
                c.push(t, t, &mut rng);
                let v = c.delayed_read(t);
                prop_assert!(v >= last);
                prop_assert_eq!(v, c.held_timestamp());
                last = v;
            }
        }
    }
}
