//! Filter-cavity frequency scan: ramp geometry and the mapping between scan
//! phase and filter detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::s_to_ps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    /// Sawtooth: one linear sweep per period, instant flyback.
    #[default]
    Linear,
    /// Up during the first half period, down during the second.
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub scan_rate_hz: f64,
    pub scan_span_hz: f64,
    #[serde(default)]
    pub ramp: RampShape,
    pub fc_linewidth_hz: f64,
    /// Filter detuning at the centre of the sweep.
    #[serde(default)]
    pub center_hz: f64,
}

impl ScanConfig {
    /// 30 Hz sweep over 4 GHz with the 80 MHz filter.
    pub fn reference() -> Self {
        ScanConfig {
            scan_rate_hz: 30.0,
            scan_span_hz: 4.0e9,
            ramp: RampShape::Linear,
            fc_linewidth_hz: crate::spectral::REFERENCE_FC_LINEWIDTH_HZ,
            center_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scan_rate_hz > 0.0 && self.scan_rate_hz.is_finite()) {
            return Err(Error::invalid("scan_rate_hz", "must be > 0"));
        }
        if !(self.scan_span_hz > 0.0 && self.scan_span_hz.is_finite()) {
            return Err(Error::invalid("scan_span_hz", "must be > 0"));
        }
        if !(self.fc_linewidth_hz > 0.0) {
            return Err(Error::invalid("fc_linewidth_hz", "must be > 0"));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> i64 {
        s_to_ps(1.0 / self.scan_rate_hz)
    }

    /// Filter detuning at a phase in [0, 1) of the scan period.
    pub fn frequency_at_phase(&self, phase: f64) -> f64 {
        let ramp = match self.ramp {
            RampShape::Linear => phase,
            RampShape::Triangle => {
                if phase < 0.5 {
                    2.0 * phase
                } else {
                    2.0 - 2.0 * phase
                }
            }
        };
        self.center_hz - self.scan_span_hz / 2.0 + ramp * self.scan_span_hz
    }

    /// Filter detuning at absolute time `t_ps`; the ramp restarts at every
    /// multiple of the period.
    pub fn frequency_at(&self, t_ps: i64) -> f64 {
        let period = self.period_ps();
        let phase = t_ps.rem_euclid(period) as f64 / period as f64;
        self.frequency_at_phase(phase)
    }

    /// Phase at which the rising ramp passes `f_hz`, if inside the sweep.
    pub fn phase_of_frequency(&self, f_hz: f64) -> Option<f64> {
        let x = (f_hz - (self.center_hz - self.scan_span_hz / 2.0)) / self.scan_span_hz;
        if !(0.0..1.0).contains(&x) {
            return None;
        }
        Some(match self.ramp {
            RampShape::Linear => x,
            RampShape::Triangle => x / 2.0,
        })
    }

    /// Trigger timestamps, one at the start of every period within `[0, duration]`.
    pub fn trigger_times(&self, duration_ps: i64) -> Vec<i64> {
        let period = self.period_ps();
        (0..)
            .map(|k: i64| k * period)
            .take_while(|&t| t <= duration_ps)
            .collect()
    }

    /// Scan-time windows `[start, end)` (ps after the trigger) over which the
    /// rising ramp sits within `half_width_hz` of each mode frequency.
    /// Windows are clipped to the sweep.
    pub fn mode_windows(&self, mode_frequencies_hz: &[f64], half_width_hz: f64) -> Vec<(i64, i64)> {
        let period = self.period_ps() as f64;
        let rising = match self.ramp {
            RampShape::Linear => 1.0,
            RampShape::Triangle => 0.5,
        };
        let lo = self.center_hz - self.scan_span_hz / 2.0;
        mode_frequencies_hz
            .iter()
            .map(|&f| {
                let a = ((f - half_width_hz - lo) / self.scan_span_hz).clamp(0.0, 1.0);
                let b = ((f + half_width_hz - lo) / self.scan_span_hz).clamp(0.0, 1.0);
                (
                    (a * rising * period).round() as i64,
                    (b * rising * period).round() as i64,
                )
            })
            .collect()
    }

    /// Converts a trigger-relative time into filter detuning.
    pub fn frequency_of_offset(&self, offset_ps: i64) -> f64 {
        let period = self.period_ps();
        self.frequency_at_phase(offset_ps.rem_euclid(period) as f64 / period as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ramp_geometry() {
        let s = ScanConfig::reference();
        assert_eq!(s.frequency_at(0), -2.0e9);
        let half = s.period_ps() / 2;
        assert!((s.frequency_at(half)).abs() < 1.0);
        assert!((s.frequency_at(s.period_ps() + half)).abs() < 1.0);
        let phase = s.phase_of_frequency(261.1e6).unwrap();
        assert!((s.frequency_at_phase(phase) - 261.1e6).abs() < 1e-3);
    }

    #[test]
    fn triggers_once_per_period() {
        let s = ScanConfig::reference();
        let t = s.trigger_times(crate::time::s_to_ps(1.0));
        assert_eq!(t.len(), 31);
        assert_eq!(t[1] - t[0], s.period_ps());
    }

    #[test]
    fn mode_windows_are_disjoint_for_fsr_halves() {
        let s = ScanConfig::reference();
        let f: Vec<f64> = (-7..=7).map(|m| m as f64 * 261.1e6).collect();
        let w = s.mode_windows(&f, 261.1e6 / 2.0);
        for pair in w.windows(2) {
            assert!(pair[0].1 <= pair[1].0 + 1);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut s = ScanConfig::reference();
        s.scan_span_hz = 0.0;
        assert!(s.validate().is_err());
    }
}
