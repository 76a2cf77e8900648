//! Beating of the multimode biphoton: Fourier spectrum of coincidence
//! histograms, beat period, and the jitter-broadened width of a beat peak.

use std::f64::consts::{LN_2, PI};

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::coincidence::CoincidenceHistogram;
use crate::engine::DelaySampler;
use crate::error::{Error, Result};
use crate::time::{fwhm_to_sigma, s_to_ps, PS_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftWindow {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Spacing of the frequency axis.
    pub resolution_hz: f64,
}

/// Peak of a beat spectrum compared with its neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatPeak {
    pub frequency_hz: f64,
    pub magnitude: f64,
    /// Mean magnitude of the surrounding bins, peak region excluded.
    pub background: f64,
}

impl BeatPeak {
    pub fn ratio(&self) -> f64 {
        if self.background > 0.0 {
            self.magnitude / self.background
        } else if self.magnitude > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

impl BeatSpectrum {
    fn bin_of(&self, f_hz: f64) -> usize {
        ((f_hz / self.resolution_hz).round().max(0.0) as usize)
            .min(self.magnitudes.len().saturating_sub(1))
    }

    /// Largest magnitude within `search_bins` of `target_hz`, against the
    /// mean of the bins from `search_bins + 1` to `search_bins + background_bins`
    /// on either side.
    pub fn peak_near(
        &self,
        target_hz: f64,
        search_bins: usize,
        background_bins: usize,
    ) -> BeatPeak {
        let n = self.magnitudes.len();
        if n == 0 {
            return BeatPeak {
                frequency_hz: target_hz,
                magnitude: 0.0,
                background: 0.0,
            };
        }
        let c = self.bin_of(target_hz);
        let lo = c.saturating_sub(search_bins);
        let hi = (c + search_bins).min(n - 1);
        let k = (lo..=hi)
            .max_by(|&a, &b| self.magnitudes[a].total_cmp(&self.magnitudes[b]))
            .unwrap_or(c);
        let bg: Vec<f64> = (1..=background_bins)
            .flat_map(|d| {
                let d = d + search_bins;
                [c.checked_sub(d), Some(c + d)]
            })
            .flatten()
            .filter(|&j| j >= 1 && j < n)
            .map(|j| self.magnitudes[j])
            .collect();
        let background = if bg.is_empty() {
            0.0
        } else {
            bg.iter().sum::<f64>() / bg.len() as f64
        };
        BeatPeak {
            frequency_hz: self.frequencies_hz[k],
            magnitude: self.magnitudes[k],
            background,
        }
    }
}

/// Magnitude of the discrete Fourier transform of the mean-subtracted
/// counts of all bins inside `[start, end)`.
pub fn beat_spectrum(
    hist: &CoincidenceHistogram,
    window_s: (f64, f64),
    fft_window: FftWindow,
) -> Result<BeatSpectrum> {
    let (start, end) = (s_to_ps(window_s.0), s_to_ps(window_s.1));
    if start < hist.t_min_ps || end > hist.t_max_ps || end <= start {
        return Err(Error::invalid(
            "window",
            "must lie inside the histogram range",
        ));
    }
    let bins = hist.bins_in(start, end);
    let x: Vec<f64> = hist.counts[bins].iter().map(|&c| c as f64).collect();
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("window", "needs at least two bins"));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = match fft_window {
                FftWindow::Rectangular => 1.0,
                FftWindow::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos(),
            };
            Complex64::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let resolution_hz = 1.0 / (n as f64 * hist.bin_width_s());
    let half = n / 2 + 1;
    Ok(BeatSpectrum {
        frequencies_hz: (0..half).map(|k| k as f64 * resolution_hz).collect(),
        magnitudes: buf[..half].iter().map(|c| c.norm()).collect(),
        resolution_hz,
    })
}

/// Beat period of the histogram inside `window`: first maximum of the
/// autocorrelation of the mean-subtracted counts beyond `min_lag`, refined by
/// a parabola through the three surrounding lags.
pub fn beat_period(
    hist: &CoincidenceHistogram,
    window_s: (f64, f64),
    min_lag_s: f64,
    max_lag_s: f64,
) -> Result<f64> {
    let bins = hist.bins_in(s_to_ps(window_s.0), s_to_ps(window_s.1));
    let x: Vec<f64> = hist.counts[bins].iter().map(|&c| c as f64).collect();
    let n = x.len();
    let w = hist.bin_width_s();
    let lag_lo = (min_lag_s / w).ceil() as usize;
    let lag_hi = ((max_lag_s / w).floor() as usize).min(n.saturating_sub(2));
    if lag_lo < 1 || lag_hi <= lag_lo + 1 {
        return Err(Error::invalid(
            "lag range",
            "needs at least three lags inside the window",
        ));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ac = |lag: usize| -> f64 {
        (0..n - lag).map(|i| d[i] * d[i + lag]).sum::<f64>() / (n - lag) as f64
    };
    let vals: Vec<f64> = (lag_lo - 1..=lag_hi + 1).map(ac).collect();
    let best = (1..vals.len() - 1)
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .ok_or(Error::ZeroCounts("autocorrelation"))?;
    let (y0, y1, y2) = (vals[best - 1], vals[best], vals[best + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom != 0.0 {
        0.5 * (y0 - y2) / denom
    } else {
        0.0
    };
    Ok(((lag_lo - 1 + best) as f64 + shift.clamp(-0.5, 0.5)) * w)
}

/// FWHM of the central peak of `y` sampled on a grid of `step`, measured at
/// half of `y[center]` with linear interpolation.
fn central_fwhm(y: &[f64], center: usize, step: f64) -> Option<f64> {
    let half = y[center] / 2.0;
    let right = (center..y.len() - 1).find(|&i| y[i] >= half && y[i + 1] < half)?;
    let left = (1..=center)
        .rev()
        .find(|&i| y[i] >= half && y[i - 1] < half)?;
    let xr = right as f64 + (y[right] - half) / (y[right] - y[right + 1]);
    let xl = left as f64 - (y[left] - half) / (y[left] - y[left - 1]);
    Some((xr - xl) * step)
}

/// Envelope FWHM of a single mode, returned by [`beat_width_model`] for
/// `n_modes = 1`.
pub fn envelope_fwhm(linewidth_hz: f64) -> f64 {
    LN_2 / (PI * linewidth_hz)
}

/// Expected FWHM of the central beat peak of `n_modes` adjacent modes
/// (equal amplitudes unless given), after Gaussian jitter. Computed on a
/// 1 ps grid over one beat period plus the jitter kernel.
pub fn beat_width_model(
    n_modes: usize,
    amplitudes: Option<&[f64]>,
    fsr_hz: f64,
    linewidth_hz: f64,
    jitter_fwhm_s: f64,
) -> Result<f64> {
    if n_modes == 0 {
        return Err(Error::invalid("n_modes", "must be >= 1"));
    }
    if n_modes == 1 {
        return Ok(envelope_fwhm(linewidth_hz));
    }
    let weights: Vec<(i32, f64)> = match amplitudes {
        Some(a) if a.len() != n_modes => {
            return Err(Error::invalid("amplitudes", "length must equal n_modes"));
        }
        Some(a) => a.iter().enumerate().map(|(i, &w)| (i as i32, w)).collect(),
        None => (0..n_modes as i32).map(|i| (i, 1.0)).collect(),
    };
    let density = DelaySampler::new(fsr_hz, linewidth_hz, &weights)?;
    let step = 1e-12;
    let sigma = fwhm_to_sigma(jitter_fwhm_s);
    let kernel_half = (6.0 * sigma / step).ceil() as usize;
    let span = (0.5 / fsr_hz / step).ceil() as usize;
    let reach = span + kernel_half;
    let p: Vec<f64> = (0..=2 * reach)
        .map(|i| density.density((i as f64 - reach as f64) * step))
        .collect();
    let y: Vec<f64> = if kernel_half == 0 {
        p[kernel_half..=2 * reach - kernel_half].to_vec()
    } else {
        let kernel: Vec<f64> = (0..=2 * kernel_half)
            .map(|j| {
                let t = (j as f64 - kernel_half as f64) * step;
                (-0.5 * (t / sigma).powi(2)).exp()
            })
            .collect();
        let norm: f64 = kernel.iter().sum();
        (0..=2 * span)
            .map(|i| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * p[i + j])
                    .sum::<f64>()
                    / norm
            })
            .collect()
    };
    central_fwhm(&y, span, step).ok_or_else(|| {
        Error::invalid(
            "n_modes",
            "the jitter-broadened beat peak never falls to half maximum within one period",
        )
    })
}

/// Smallest mode number whose model width is compatible with
/// `measured + error`; the model decreases with the mode number, so every
/// smaller number is excluded.
pub fn mode_count_lower_bound(
    measured_width_s: f64,
    width_error_s: f64,
    fsr_hz: f64,
    linewidth_hz: f64,
    jitter_fwhm_s: f64,
) -> Result<usize> {
    if !(measured_width_s > 0.0) {
        return Err(Error::invalid("measured_width", "must be > 0"));
    }
    let limit = measured_width_s + width_error_s.max(0.0);
    let max_n = (fsr_hz / linewidth_hz).floor().max(2.0) as usize;
    for n in 1..=max_n {
        match beat_width_model(n, None, fsr_hz, linewidth_hz, jitter_fwhm_s) {
            // Allow for rounding when the measurement is itself a model point.
            Ok(w) if w <= limit * (1.0 + 1e-9) => return Ok(n),
            Ok(_) | Err(Error::InvalidParameter { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::invalid(
        "measured_width",
        "narrower than the model allows for any resolvable mode count",
    ))
}

/// Lower bounds reported side by side: with the jitter in the model and with
/// the jitter ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCountBounds {
    pub with_jitter: usize,
    pub without_jitter: usize,
}

pub fn mode_count_bounds(
    measured_width_s: f64,
    width_error_s: f64,
    fsr_hz: f64,
    linewidth_hz: f64,
    jitter_fwhm_s: f64,
) -> Result<ModeCountBounds> {
    Ok(ModeCountBounds {
        with_jitter: mode_count_lower_bound(
            measured_width_s,
            width_error_s,
            fsr_hz,
            linewidth_hz,
            jitter_fwhm_s,
        )?,
        without_jitter: mode_count_lower_bound(
            measured_width_s,
            width_error_s,
            fsr_hz,
            linewidth_hz,
            0.0,
        )?,
    })
}

/// FWHM of the highest peak of `hist` within `center +- search`, measured at
/// half its height above `baseline` counts per bin.
pub fn histogram_peak_fwhm(
    hist: &CoincidenceHistogram,
    center_s: f64,
    search_s: f64,
    baseline: f64,
) -> Result<f64> {
    let bins = hist.bins_in(s_to_ps(center_s - search_s), s_to_ps(center_s + search_s));
    let y: Vec<f64> = hist.counts[bins]
        .iter()
        .map(|&c| c as f64 - baseline)
        .collect();
    if y.len() < 3 {
        return Err(Error::invalid("search", "covers fewer than three bins"));
    }
    let k = (0..y.len())
        .max_by(|&a, &b| y[a].total_cmp(&y[b]))
        .unwrap_or(0);
    if !(y[k] > 0.0) {
        return Err(Error::ZeroCounts("peak above baseline"));
    }
    central_fwhm(&y, k, hist.bin_width_ps as f64 / PS_PER_S).ok_or_else(|| {
        Error::invalid(
            "search",
            "peak does not fall to half maximum inside the search range",
        )
    })
}
