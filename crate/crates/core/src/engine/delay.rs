//! Signal-minus-idler delay distribution of a mode-locked biphoton.
//!
//! The density is `exp(-2 pi lw |t|) * |sum_m sqrt(w_m) exp(i 2 pi m FSR t)|^2`.
//! Sampling is exact rejection from the two-sided exponential envelope: the
//! comb factor is bounded by `(sum_m sqrt(w_m))^2`, so no time grid is
//! involved.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::spectral::BiphotonSpectrum;

#[derive(Debug, Clone)]
pub struct DelaySampler {
    fsr_hz: f64,
    envelope: Exp<f64>,
    decay_rate: f64,
    first_index: i32,
    /// sqrt(weight) for every index from `first_index`, zero in gaps.
    field: Vec<f64>,
    bound: f64,
}

impl DelaySampler {
    /// `weights` are relative mode rates (index, weight >= 0).
    pub fn new(fsr_hz: f64, linewidth_hz: f64, weights: &[(i32, f64)]) -> Result<Self> {
        if !(linewidth_hz > 0.0 && linewidth_hz.is_finite()) {
            return Err(Error::invalid(
                "linewidth_hz",
                "delay density is not normalizable for zero linewidth",
            ));
        }
        if !(fsr_hz > 0.0) {
            return Err(Error::invalid("fsr_hz", "must be > 0"));
        }
        let active: Vec<(i32, f64)> = weights.iter().copied().filter(|&(_, w)| w > 0.0).collect();
        if weights.iter().any(|&(_, w)| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", "must be finite and >= 0"));
        }
        if active.is_empty() {
            return Err(Error::invalid(
                "weights",
                "need at least one mode with weight > 0",
            ));
        }
        let first_index = active.iter().map(|m| m.0).min().unwrap_or(0);
        let last_index = active.iter().map(|m| m.0).max().unwrap_or(0);
        let mut field = vec![0.0; (last_index - first_index + 1) as usize];
        for &(i, w) in &active {
            field[(i - first_index) as usize] += w.sqrt();
        }
        let sum: f64 = field.iter().sum();
        let decay_rate = 2.0 * PI * linewidth_hz;
        Ok(DelaySampler {
            fsr_hz,
            envelope: Exp::new(decay_rate).expect("positive rate"),
            decay_rate,
            first_index,
            field,
            bound: sum * sum,
        })
    }

    pub fn from_spectrum(source: &BiphotonSpectrum) -> Result<Self> {
        let weights: Vec<(i32, f64)> = source
            .modes()
            .iter()
            .map(|m| (m.index, m.amplitude))
            .collect();
        Self::new(source.fsr_hz(), source.linewidth_hz(), &weights)
    }

    /// `|sum_m sqrt(w_m) e^{i m theta}|^2` at delay `t` seconds.
    pub fn comb_factor(&self, t: f64) -> f64 {
        let theta = 2.0 * PI * self.fsr_hz * t;
        let step = Complex64::from_polar(1.0, theta);
        let mut phase = Complex64::from_polar(1.0, theta * self.first_index as f64);
        let mut acc = Complex64::new(0.0, 0.0);
        for &a in &self.field {
            if a != 0.0 {
                acc += phase * a;
            }
            phase *= step;
        }
        acc.norm_sqr()
    }

    /// Unnormalized density.
    pub fn density(&self, t: f64) -> f64 {
        (-self.decay_rate * t.abs()).exp() * self.comb_factor(t)
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    /// Draws a delay in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let magnitude = self.envelope.sample(rng);
            let t = if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            };
            if self.field.len() == 1 {
                return t;
            }
            let u: f64 = rng.random();
            if u * self.bound <= self.comb_factor(t) {
                return t;
            }
        }
    }
}

/// One delay draw for the given source spectrum.
pub fn sample_delay<R: Rng + ?Sized>(source: &BiphotonSpectrum, rng: &mut R) -> Result<f64> {
    Ok(DelaySampler::from_spectrum(source)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ};
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn single_mode_is_two_sided_exponential() {
        let s = BiphotonSpectrum::equal_modes(REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ, 1).unwrap();
        let sampler = DelaySampler::from_spectrum(&s).unwrap();
        let mut r = rng();
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut r).abs()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Analytic CDF of |t|: 1 - exp(-k t), k = 2 pi lw.
        let k = 2.0 * PI * REFERENCE_LINEWIDTH_HZ;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-k * x).exp();
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (f - lo).abs().max((hi - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic Kolmogorov critical value for p = 0.01.
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn fifteen_modes_beat_at_inverse_fsr() {
        let s =
            BiphotonSpectrum::equal_modes(REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ, 15).unwrap();
        let sampler = DelaySampler::from_spectrum(&s).unwrap();
        let mut r = rng();
        let bin = 100e-12;
        let nbins = 200; // +-10 ns
        let mut hist = vec![0u32; nbins];
        for _ in 0..200_000 {
            let t = sampler.sample(&mut r);
            let k = ((t + 10e-9) / bin).floor();
            if k >= 0.0 && (k as usize) < nbins {
                hist[k as usize] += 1;
            }
        }
        // local maxima that dominate a +-1 ns neighbourhood
        let maxima: Vec<usize> = (10..nbins - 10)
            .filter(|&i| (i - 10..=i + 10).all(|j| hist[j] <= hist[i]) && hist[i] > 50)
            .collect();
        assert!(maxima.len() >= 4, "{maxima:?}");
        let spacing =
            (maxima[maxima.len() - 1] - maxima[0]) as f64 * bin / (maxima.len() - 1) as f64;
        assert!(
            (spacing - 1.0 / REFERENCE_FSR_HZ).abs() < 1.5 * bin,
            "spacing {spacing}"
        );
    }

    #[test]
    fn density_is_mirror_symmetric() {
        let s = BiphotonSpectrum::new(
            REFERENCE_FSR_HZ,
            REFERENCE_LINEWIDTH_HZ,
            vec![
                crate::spectral::SpectralMode {
                    index: -2,
                    amplitude: 0.3,
                },
                crate::spectral::SpectralMode {
                    index: 0,
                    amplitude: 1.0,
                },
                crate::spectral::SpectralMode {
                    index: 1,
                    amplitude: 0.6,
                },
                crate::spectral::SpectralMode {
                    index: 5,
                    amplitude: 0.1,
                },
            ],
        )
        .unwrap();
        let sampler = DelaySampler::from_spectrum(&s).unwrap();
        for k in 0..200 {
            let t = k as f64 * 37e-12;
            let (a, b) = (sampler.density(t), sampler.density(-t));
            assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_linewidth_rejected() {
        assert!(DelaySampler::new(REFERENCE_FSR_HZ, 0.0, &[(0, 1.0)]).is_err());
        assert!(DelaySampler::new(REFERENCE_FSR_HZ, 1e6, &[(0, 0.0)]).is_err());
    }
}
