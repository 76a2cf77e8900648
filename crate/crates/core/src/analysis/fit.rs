//! Damped least squares: a generic Levenberg-Marquardt driver, the
//! Lorentzian-train fit and the g2-versus-modes noise model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{lorentzian_train, LorentzianPeak, LorentzianTrainParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Relative change of chi2 below which an accepted step ends the fit.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_lambda: f64,
}

/// Box constraints; trial points are clamped into them.
pub type Bounds = [(f64, f64)];

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            tolerance: 1e-8,
            max_iterations: 10_000,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Parameter covariance, scaled by the reduced chi2 when it exceeds 1.
    pub covariance: DMatrix<f64>,
    pub errors: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl LmResult {
    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

fn chi2_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

fn weighted_residuals(
    model: &dyn Fn(&[f64], f64) -> f64,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(y)
            .zip(sigma)
            .map(|((&xi, &yi), &si)| (yi - model(p, xi)) / si),
    )
}

/// Jacobian of the model divided by sigma, by central differences.
fn jacobian(
    model: &dyn Fn(&[f64], f64) -> f64,
    p: &[f64],
    x: &[f64],
    sigma: &[f64],
    scale: &[f64],
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(scale[k]);
        q[k] = p[k] + h;
        let up: Vec<f64> = x.iter().map(|&xi| model(&q, xi)).collect();
        q[k] = p[k] - h;
        let down: Vec<f64> = x.iter().map(|&xi| model(&q, xi)).collect();
        q[k] = p[k];
        for i in 0..x.len() {
            j[(i, k)] = (up[i] - down[i]) / (2.0 * h * sigma[i]);
        }
    }
    j
}

/// Minimizes `sum ((y - model(p, x)) / sigma)^2` from `p0`. `scale` gives a
/// typical magnitude per parameter for the finite-difference steps.
pub fn levenberg_marquardt(
    model: &dyn Fn(&[f64], f64) -> f64,
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    p0: &[f64],
    scale: &[f64],
    opts: LmOptions,
) -> Result<LmResult> {
    levenberg_marquardt_bounded(model, x, y, sigma, p0, scale, None, opts)
}

/// [`levenberg_marquardt`] with every parameter held inside `bounds`.
#[allow(clippy::too_many_arguments)]
pub fn levenberg_marquardt_bounded(
    model: &dyn Fn(&[f64], f64) -> f64,
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    p0: &[f64],
    scale: &[f64],
    bounds: Option<&Bounds>,
    opts: LmOptions,
) -> Result<LmResult> {
    if let Some(b) = bounds {
        if b.len() != p0.len() || b.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::invalid("bounds", "one ordered pair per parameter"));
        }
    }
    let clamp = |p: &mut [f64]| {
        if let Some(b) = bounds {
            for (v, (lo, hi)) in p.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    };
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::invalid("data", "x, y and sigma lengths differ"));
    }
    if p0.len() != scale.len() {
        return Err(Error::invalid("scale", "one entry per parameter"));
    }
    if x.len() < p0.len() {
        return Err(Error::invalid("data", "fewer points than parameters"));
    }
    if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("sigma", "must be finite and > 0"));
    }
    let np = p0.len();
    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut r = weighted_residuals(model, &p, x, y, sigma);
    let mut chi2 = chi2_of(&r);
    if !chi2.is_finite() {
        return Err(Error::FitDiverged {
            iterations: 0,
            chi2,
            lambda: opts.initial_lambda,
            reason: "non-finite residuals at the initial point".into(),
        });
    }
    let mut lambda = opts.initial_lambda;
    let mut j = jacobian(model, &p, x, sigma, scale);
    for it in 1..=opts.max_iterations {
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut a = jtj.clone();
        let floor = 1e-12 * (0..np).map(|k| jtj[(k, k)]).fold(0.0, f64::max);
        for k in 0..np {
            a[(k, k)] += lambda * jtj[(k, k)].max(floor).max(1e-300);
        }
        let step = match a.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => match a.lu().solve(&g) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            },
        };
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        clamp(&mut trial);
        let step = DVector::from_iterator(np, trial.iter().zip(&p).map(|(t, v)| t - v));
        let r_new = weighted_residuals(model, &trial, x, y, sigma);
        let chi2_new = chi2_of(&r_new);
        if chi2_new.is_finite() && chi2_new <= chi2 {
            let rel = (chi2 - chi2_new) / chi2.max(f64::MIN_POSITIVE);
            p = trial;
            r = r_new;
            chi2 = chi2_new;
            lambda = (lambda / 10.0).max(1e-15);
            j = jacobian(model, &p, x, sigma, scale);
            let small_step = step
                .iter()
                .zip(&p)
                .zip(scale)
                .all(|((s, v), sc)| s.abs() <= 1e-10 * v.abs().max(*sc));
            if rel < opts.tolerance || chi2 == 0.0 || small_step {
                return finish(p, &j, chi2, x.len(), it);
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // Gradient step vanished: we sit at a minimum within precision.
                return finish(p, &j, chi2, x.len(), it);
            }
        }
    }
    Err(Error::FitDiverged {
        iterations: opts.max_iterations,
        chi2,
        lambda,
        reason: "iteration limit reached".into(),
    })
}

fn finish(
    p: Vec<f64>,
    j: &DMatrix<f64>,
    chi2: f64,
    n: usize,
    iterations: usize,
) -> Result<LmResult> {
    let np = p.len();
    let dof = n - np;
    let jtj = j.transpose() * j;
    let mut cov = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-14).ok())
        .ok_or_else(|| Error::FitDiverged {
            iterations,
            chi2,
            lambda: 0.0,
            reason: "singular normal matrix".into(),
        })?;
    if dof > 0 {
        let red = chi2 / dof as f64;
        if red > 1.0 {
            cov *= red;
        }
    }
    let errors = (0..np).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    Ok(LmResult {
        params: p,
        covariance: cov,
        errors,
        chi2,
        dof,
        iterations,
    })
}

/// Starting point for a Lorentzian-train fit.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainInit {
    /// Peaks seeded on a regular grid, amplitudes read off the data.
    Grid {
        first_center_hz: f64,
        spacing_hz: f64,
        sigma_hz: f64,
    },
    Explicit(LorentzianTrainParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianTrainFit {
    pub params: LorentzianTrainParams,
    pub amplitude_errors: Vec<f64>,
    pub center_errors: Vec<f64>,
    pub sigma_error: f64,
    pub offset_error: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

fn train_from_vec(p: &[f64], n_peaks: usize) -> LorentzianTrainParams {
    LorentzianTrainParams {
        peaks: (0..n_peaks)
            .map(|i| LorentzianPeak {
                amplitude: p[2 * i],
                center_hz: p[2 * i + 1],
            })
            .collect(),
        sigma_hz: p[2 * n_peaks],
        offset: p[2 * n_peaks + 1],
    }
}

fn eval_vec(p: &[f64], x: f64) -> f64 {
    let n = (p.len() - 2) / 2;
    let h = p[2 * n] / 2.0;
    let h2 = h * h;
    (0..n)
        .map(|i| {
            let dx = x - p[2 * i + 1];
            p[2 * i] * h / (dx * dx + h2)
        })
        .sum::<f64>()
        + p[2 * n + 1]
}

fn poisson_sigma(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v.max(1.0).sqrt()).collect()
}

/// Least-squares fit of `n_peaks` Lorentzians with shared width plus an
/// offset. `sigma_y = None` uses Poisson errors `sqrt(max(y, 1))`.
pub fn fit_lorentzian_train(
    x: &[f64],
    y: &[f64],
    sigma_y: Option<&[f64]>,
    n_peaks: usize,
    init: &TrainInit,
) -> Result<LorentzianTrainFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(
            "data",
            "need equal, nonzero numbers of x and y",
        ));
    }
    if n_peaks == 0 {
        return Err(Error::invalid("n_peaks", "must be >= 1"));
    }
    let sigma: Vec<f64> = match sigma_y {
        Some(s) => s.to_vec(),
        None => poisson_sigma(y),
    };
    let p0 = match init {
        TrainInit::Explicit(t) => {
            if t.peaks.len() != n_peaks {
                return Err(Error::invalid("init", "peak count differs from n_peaks"));
            }
            t.validate()?;
            let mut v: Vec<f64> = t
                .peaks
                .iter()
                .flat_map(|p| [p.amplitude, p.center_hz])
                .collect();
            v.extend([t.sigma_hz, t.offset]);
            v
        }
        TrainInit::Grid {
            first_center_hz,
            spacing_hz,
            sigma_hz,
        } => {
            if !(*sigma_hz > 0.0) {
                return Err(Error::invalid("init.sigma_hz", "must be > 0"));
            }
            let mut sorted = y.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let offset = sorted[sorted.len() / 10].max(0.0);
            let mut v = Vec::with_capacity(2 * n_peaks + 2);
            for i in 0..n_peaks {
                let c = first_center_hz + i as f64 * spacing_hz;
                let k = x
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - c).abs().total_cmp(&(b.1 - c).abs()))
                    .map_or(0, |(k, _)| k);
                // peak height of a (s/2)/(dx^2 + (s/2)^2) profile is 2a/s
                v.push(((y[k] - offset).max(0.0)) * sigma_hz / 2.0);
                v.push(c);
            }
            v.extend([*sigma_hz, offset]);
            v
        }
    };
    let span = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let sig0 = p0[2 * n_peaks];
    let mut scale = Vec::with_capacity(p0.len());
    for _ in 0..n_peaks {
        scale.extend([ymax * sig0, span * 1e-3]);
    }
    scale.extend([sig0, ymax]);
    // Centres stay inside the data and the width between the grid step and
    // the data span; without these, flat data lets a peak melt into the offset.
    let (xmin, xmax) = x
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let mut xs = x.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let step = xs
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::MAX, f64::min);
    let step = if step == f64::MAX { 1.0 } else { step };
    let mut bounds = Vec::with_capacity(p0.len());
    for _ in 0..n_peaks {
        bounds.extend([(f64::MIN, f64::MAX), (xmin, xmax)]);
    }
    bounds.extend([(step / 10.0, (xmax - xmin).max(step)), (f64::MIN, f64::MAX)]);
    let r = levenberg_marquardt_bounded(
        &eval_vec,
        x,
        y,
        &sigma,
        &p0,
        &scale,
        Some(&bounds),
        LmOptions::default(),
    )?;
    let e = &r.errors;
    Ok(LorentzianTrainFit {
        params: train_from_vec(&r.params, n_peaks),
        amplitude_errors: (0..n_peaks).map(|i| e[2 * i]).collect(),
        center_errors: (0..n_peaks).map(|i| e[2 * i + 1]).collect(),
        sigma_error: e[2 * n_peaks],
        offset_error: e[2 * n_peaks + 1],
        chi2: r.chi2,
        dof: r.dof,
        iterations: r.iterations,
    })
}

/// Result of refitting a fixed train shape with one global scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub scale: f64,
    pub scale_error: f64,
    pub offset: f64,
    pub offset_error: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Fits `y = s * (template without offset) + d`, keeping the template's
/// relative amplitudes, centres and width. Linear in `(s, d)`.
pub fn fit_train_rescaled(
    x: &[f64],
    y: &[f64],
    sigma_y: Option<&[f64]>,
    template: &LorentzianTrainParams,
) -> Result<ScaleFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid("data", "need at least three points"));
    }
    let sigma: Vec<f64> = match sigma_y {
        Some(s) => s.to_vec(),
        None => poisson_sigma(y),
    };
    let shape = LorentzianTrainParams {
        offset: 0.0,
        ..template.clone()
    };
    let n = x.len();
    let a = DMatrix::from_fn(n, 2, |i, k| {
        if k == 0 {
            lorentzian_train(&shape, x[i]) / sigma[i]
        } else {
            1.0 / sigma[i]
        }
    });
    let b = DVector::from_iterator(n, y.iter().zip(&sigma).map(|(v, s)| v / s));
    let ata = a.transpose() * &a;
    let cov = ata.clone().try_inverse().ok_or(Error::FitDiverged {
        iterations: 0,
        chi2: f64::NAN,
        lambda: 0.0,
        reason: "template is degenerate with the offset".into(),
    })?;
    let sol = &cov * (a.transpose() * &b);
    let chi2 = (&b - &a * &sol).norm_squared();
    let dof = n - 2;
    let inflate = (chi2 / dof as f64).max(1.0);
    Ok(ScaleFit {
        scale: sol[0],
        scale_error: (cov[(0, 0)] * inflate).sqrt(),
        offset: sol[1],
        offset_error: (cov[(1, 1)] * inflate).sqrt(),
        chi2,
        dof,
    })
}

/// Per-window probabilities of the g2-versus-modes model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    pub p_si: f64,
    pub p_s: f64,
    pub p_i: f64,
    pub b: f64,
    pub m: f64,
}

impl NoiseModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_si", self.p_si),
            ("p_s", self.p_s),
            ("p_i", self.p_i),
            ("b", self.b),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "must be in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn asymptote(&self) -> f64 {
        self.p_si / (self.p_s * self.m * self.p_i)
    }
}

/// `g2 = N p_si / ((N p_s + B) M p_i)`.
pub fn g2_vs_modes_model(params: &NoiseModelParams, n_em: f64) -> Result<f64> {
    if params.p_i == 0.0 {
        return Err(Error::invalid("p_i", "must be nonzero"));
    }
    if params.m == 0.0 {
        return Err(Error::invalid("m", "must be nonzero"));
    }
    let denom = (n_em * params.p_s + params.b) * params.m * params.p_i;
    if !(denom > 0.0) {
        return Err(Error::invalid("denominator", "N p_s + B must be > 0"));
    }
    Ok(n_em * params.p_si / denom)
}

/// Whether the measured g2 carries the accidental floor of 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseBaseline {
    /// Fit the model to g2 as given.
    #[default]
    None,
    /// Fit the model to g2 - 1.
    SubtractAccidental,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelFit {
    /// `p_si / (p_s M p_i)`.
    pub asymptote: f64,
    pub asymptote_error: f64,
    /// `B / p_s`.
    pub b_over_ps: f64,
    pub b_over_ps_error: f64,
    /// Absolute parameters given the supplied `p_s`, `p_i` and `M`.
    pub params: NoiseModelParams,
    pub b_error: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Weighted fit of `g2(N) = A N / (N + r)` with `A` the asymptote and
/// `r = B / p_s`. `p_s` and `p_i` are the per-window singles probabilities
/// for one effective mode and only convert `(A, r)` to absolute values.
pub fn fit_noise_model(
    points: &[(f64, f64, f64)],
    m: f64,
    p_s: f64,
    p_i: f64,
    baseline: NoiseBaseline,
) -> Result<NoiseModelFit> {
    if points.len() < 3 {
        return Err(Error::invalid("points", "need at least three points"));
    }
    if !(m > 0.0) || !(p_i > 0.0) || !(p_s > 0.0) {
        return Err(Error::invalid("m, p_s, p_i", "must be > 0"));
    }
    let shift = match baseline {
        NoiseBaseline::None => 0.0,
        NoiseBaseline::SubtractAccidental => 1.0,
    };
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 - shift).collect();
    let s: Vec<f64> = points.iter().map(|p| p.2).collect();
    let model = |p: &[f64], n: f64| p[0] * n / (n + p[1]);
    // Start from the largest-N point as asymptote and the half-value crossing.
    let a0 = y.iter().fold(f64::MIN, |a, &b| a.max(b)).max(1e-6);
    let r0 = 1.0;
    let r = levenberg_marquardt(
        &model,
        &x,
        &y,
        &s,
        &[a0 * 1.2, r0],
        &[a0.max(1e-3), 1.0],
        LmOptions::default(),
    )?;
    let (a, rr) = (r.params[0], r.params[1]);
    let params = NoiseModelParams {
        p_si: a * p_s * m * p_i,
        p_s,
        p_i,
        b: rr * p_s,
        m,
    };
    Ok(NoiseModelFit {
        asymptote: a,
        asymptote_error: r.errors[0],
        b_over_ps: rr,
        b_over_ps_error: r.errors[1],
        params,
        b_error: r.errors[1] * p_s,
        chi2: r.chi2,
        dof: r.dof,
    })
}
