//! Figure recipes: each simulates the measurement configurations of one
//! figure or table, analyses them, and writes plot-ready CSV plus a JSON
//! summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{
    mean_spacing, scan_spectrum, write_histogram_csv, write_json, write_params_csv, write_table,
};
use super::scenario::{
    config_hash, prepared_memory, reference_locked_filter, reference_scenario, AnalysisParams,
    EomSetting, MemorySpec, ScenarioFile, REFERENCE_JITTER_FWHM_S,
};
use crate::analysis::{
    beat_period, beat_spectrum, beat_width_model, coincidence_histogram_par, crosstalk_expected_g2,
    fit_lorentzian_train, fit_noise_model, fit_train_rescaled, g2_cross, g2_vs_modes_model,
    gate_idler_by_scan, heralded_g2, histogram_peak_fwhm, merge_sorted, mode_count_bounds,
    spectral_overlap_with_errors, BeatPeak, BeatSpectrum, CoincidenceHistogram, FftWindow,
    G2Estimate, HeraldedG2, LorentzianTrainFit, ModeCountBounds, NoiseBaseline, NoiseModelFit,
    NoiseModelParams, Overlap, ScaleFit, TrainInit,
};
use crate::engine::rng::stream_id;
use crate::engine::{
    generate_run, simulate_fc_scan, EventStream, ScanConfig, ScenarioConfig, CH_IDLER, CH_SIGNAL_A,
    CH_SIGNAL_B, CH_TRIGGER,
};
use crate::error::{Error, Result};
use crate::memory::{effective_modes, ProgramKind};
use crate::time::s_to_ps;

pub const RECIPES: [&str; 10] = [
    "fig2a", "fig2bcd", "fig3", "fig4ab", "fig4cd", "tableI", "appC", "appD", "appG", "appH",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeOptions {
    /// Base seed; every run derives its own from it and its label.
    pub seed: u64,
    /// Multiplies every simulated duration.
    pub duration_scale: f64,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        RecipeOptions {
            seed: 1,
            duration_scale: 1.0,
        }
    }
}

impl RecipeOptions {
    fn validate(&self) -> Result<()> {
        if !(self.duration_scale > 0.0 && self.duration_scale.is_finite()) {
            return Err(Error::invalid("duration_scale", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub recipe: String,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

/// Identity of one simulated run inside a recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRef {
    pub label: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub duration_s: f64,
    pub events: usize,
}

/// Channel timestamps of one run.
#[derive(Debug, Clone)]
pub struct Run {
    pub reference: RunRef,
    pub config: ScenarioConfig,
    pub duration_ps: i64,
    pub idler: Vec<i64>,
    pub signal_a: Vec<i64>,
    pub signal_b: Vec<i64>,
    pub signal: Vec<i64>,
    pub triggers: Vec<i64>,
}

impl Run {
    fn from_stream(reference: RunRef, config: ScenarioConfig, stream: EventStream) -> Self {
        let idler = stream.channel(CH_IDLER);
        let signal_a = stream.channel(CH_SIGNAL_A);
        let signal_b = stream.channel(CH_SIGNAL_B);
        let triggers = stream.channel(CH_TRIGGER);
        let signal = merge_sorted(&[&signal_a, &signal_b]);
        Run {
            reference: RunRef {
                events: stream.len(),
                ..reference
            },
            config,
            duration_ps: stream.duration_ps(),
            idler,
            signal_a,
            signal_b,
            signal,
            triggers,
        }
    }

    /// Idler-signal g2 over `[start, start + window)`.
    pub fn g2(&self, start_s: f64, window_s: f64) -> Result<G2Estimate> {
        g2_cross(
            &self.idler,
            &self.signal,
            s_to_ps(window_s),
            s_to_ps(start_s),
            self.duration_ps,
        )
    }

    pub fn heralded(&self, start_s: f64, window_s: f64) -> Result<HeraldedG2> {
        heralded_g2(
            &self.idler,
            &self.signal_a,
            &self.signal_b,
            s_to_ps(window_s),
            s_to_ps(start_s),
        )
    }

    pub fn histogram(&self, bin_s: f64, range_s: (f64, f64)) -> Result<CoincidenceHistogram> {
        coincidence_histogram_par(
            &self.idler,
            &self.signal,
            s_to_ps(bin_s),
            (s_to_ps(range_s.0), s_to_ps(range_s.1)),
            self.duration_ps,
        )
    }
}

fn prepare(
    label: &str,
    file: &ScenarioFile,
    opts: &RecipeOptions,
    duration_s: f64,
) -> Result<(RunRef, ScenarioConfig)> {
    opts.validate()?;
    let mut config = file.resolve()?;
    config.seed = stream_id(label, opts.seed);
    config.duration_s = duration_s * opts.duration_scale;
    config.validate()?;
    let reference = RunRef {
        label: label.into(),
        scenario: file.name.clone(),
        config_sha256: config_hash(&config)?,
        seed: config.seed,
        duration_s: config.duration_s,
        events: 0,
    };
    Ok((reference, config))
}

/// Simulates `file` for `duration_s` (times the option scale) with a seed
/// derived from `label`.
pub fn simulate(
    label: &str,
    file: &ScenarioFile,
    opts: &RecipeOptions,
    duration_s: f64,
) -> Result<Run> {
    let (reference, config) = prepare(label, file, opts, duration_s)?;
    let stream = generate_run(&config)?;
    Ok(Run::from_stream(reference, config, stream))
}

/// Filter-scan counterpart of [`simulate`].
pub fn simulate_scan(
    label: &str,
    file: &ScenarioFile,
    scan: &ScanConfig,
    opts: &RecipeOptions,
    duration_s: f64,
) -> Result<Run> {
    let (reference, config) = prepare(label, file, opts, duration_s)?;
    let stream = simulate_fc_scan(&config, scan)?;
    Ok(Run::from_stream(reference, config, stream))
}

fn with_memory(mut file: ScenarioFile, memory: MemorySpec, name: &str) -> ScenarioFile {
    file.memory = memory;
    file.name = name.into();
    file
}

fn source_file() -> ScenarioFile {
    with_memory(reference_scenario(), MemorySpec::Bypass, "source")
}

fn single_mode_file() -> ScenarioFile {
    with_memory(
        reference_scenario(),
        prepared_memory(EomSetting::Off, ProgramKind::Afc),
        "single-mode",
    )
}

fn reference_file() -> ScenarioFile {
    reference_scenario()
}

fn params() -> AnalysisParams {
    AnalysisParams::default()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

struct Bundle<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Bundle<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Bundle {
            dir,
            files: Vec::new(),
        })
    }

    fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let p = self.dir.join(name);
        write_table(&p, header, rows)?;
        self.files.push(path_str(&p));
        Ok(())
    }

    fn histogram(&mut self, name: &str, h: &CoincidenceHistogram) -> Result<()> {
        let p = self.dir.join(name);
        write_histogram_csv(&p, h)?;
        self.files.push(path_str(&p));
        Ok(())
    }

    fn params(&mut self, name: &str, rows: &[(String, f64, f64)]) -> Result<()> {
        let p = self.dir.join(name);
        write_params_csv(&p, rows)?;
        self.files.push(path_str(&p));
        Ok(())
    }

    fn spectrum(&mut self, name: &str, s: &BeatSpectrum) -> Result<()> {
        self.table(
            name,
            &["frequency_hz", "magnitude"],
            s.frequencies_hz
                .iter()
                .zip(&s.magnitudes)
                .map(|(f, m)| vec![f.to_string(), m.to_string()])
                .collect(),
        )
    }

    fn finish<T: Serialize>(mut self, recipe: &str, summary: &T) -> Result<RecipeReport> {
        let p = self.dir.join("summary.json");
        self.files.push(path_str(&p));
        let summary = serde_json::to_value(summary)?;
        let report = RecipeReport {
            recipe: recipe.into(),
            files: self.files,
            summary,
        };
        write_json(&p, &report)?;
        Ok(report)
    }
}

fn g2_row(label: &str, g: &G2Estimate) -> (String, f64, f64) {
    (label.into(), g.value, g.error)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// `y = c1 + c2 x` by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("data", "need two or more points"));
    }
    let n = x.len() as f64;
    let (xm, ym) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x", "all values equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    Ok(LineFit {
        intercept,
        slope,
        r_squared: r_squared(x, y, |v| intercept + slope * v),
    })
}

/// `y = k x` by least squares. R² is taken against the mean of `y`.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("data", "need one or more points"));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x", "all zero"));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    Ok(LineFit {
        intercept: 0.0,
        slope,
        r_squared: r_squared(x, y, |v| slope * v),
    })
}

fn r_squared(x: &[f64], y: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - f(*a)).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Accidental-subtracted echo area over input area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoEfficiency {
    pub ratio: f64,
    pub error: f64,
    pub input: G2Estimate,
    pub echo: G2Estimate,
    pub runs: Vec<RunRef>,
}

/// Compares the echo window of `stored` with the input window of a
/// reference run through a bypassed memory.
pub fn echo_efficiency_from(
    reference: &Run,
    stored: &Run,
    p: &AnalysisParams,
) -> Result<EchoEfficiency> {
    let input = reference.g2(p.input_start_s, p.window_s)?;
    let echo = stored.g2(p.echo_start_s, p.window_s)?;
    let net = |g: &G2Estimate| g.n_c as f64 - g.accidentals;
    let (ni, ne) = (net(&input), net(&echo));
    if !(ni > 0.0) {
        return Err(Error::ZeroCounts(
            "input-window coincidences above accidentals",
        ));
    }
    let ratio = ne / ni;
    let rel =
        ((echo.n_c as f64).max(1.0) / (ne * ne).max(1.0) + input.n_c as f64 / (ni * ni)).sqrt();
    Ok(EchoEfficiency {
        ratio,
        error: ratio.abs() * rel,
        input,
        echo,
        runs: vec![reference.reference.clone(), stored.reference.clone()],
    })
}

/// Runs `file` and its bypassed twin for `pairs` emitted pairs each.
pub fn echo_efficiency(
    file: &ScenarioFile,
    opts: &RecipeOptions,
    pairs: f64,
) -> Result<EchoEfficiency> {
    let config = file.resolve()?;
    let duration = pairs / config.total_pair_rate_hz();
    let reference = with_memory(file.clone(), MemorySpec::Bypass, "reference");
    let r = simulate("efficiency-reference", &reference, opts, duration)?;
    let s = simulate("efficiency-stored", file, opts, duration)?;
    echo_efficiency_from(&r, &s, &file.analysis)
}

// ---------------------------------------------------------------- fig2a

pub const FIG2A_POWERS_MW: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub power_mw: f64,
    pub source: G2Estimate,
    pub stored: G2Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2a {
    pub points: Vec<PowerPoint>,
    /// `g2 = c1 + c2 / P` for the source.
    pub source_inverse_power_fit: LineFit,
    pub stored_inverse_power_fit: LineFit,
    pub efficiency_at_max_power: EchoEfficiency,
    pub runs: Vec<RunRef>,
    #[serde(skip)]
    pub inset: Option<(CoincidenceHistogram, CoincidenceHistogram)>,
}

/// g2 in the input window (source) and echo window (stored) versus pump
/// power.
pub fn fig2a(opts: &RecipeOptions) -> Result<Fig2a> {
    fig2a_with(&reference_file(), &FIG2A_POWERS_MW, opts, 10.0)
}

pub fn fig2a_with(
    file: &ScenarioFile,
    powers: &[f64],
    opts: &RecipeOptions,
    duration_s: f64,
) -> Result<Fig2a> {
    let p = &file.analysis;
    let source = with_memory(file.clone(), MemorySpec::Bypass, "source");
    let mut points = Vec::new();
    let mut runs = Vec::new();
    let mut last = None;
    for &pw in powers {
        let mut s = source.clone();
        s.config.pump_power_mw = pw;
        let mut a = file.clone();
        a.config.pump_power_mw = pw;
        let rs = simulate(&format!("fig2a-source-{pw}"), &s, opts, duration_s)?;
        let ra = simulate(&format!("fig2a-stored-{pw}"), &a, opts, duration_s)?;
        points.push(PowerPoint {
            power_mw: pw,
            source: rs.g2(p.input_start_s, p.window_s)?,
            stored: ra.g2(p.echo_start_s, p.window_s)?,
        });
        runs.push(rs.reference.clone());
        runs.push(ra.reference.clone());
        last = Some((rs, ra));
    }
    let (rs, ra) = last.ok_or_else(|| Error::invalid("powers", "empty"))?;
    let inv: Vec<f64> = points.iter().map(|q| 1.0 / q.power_mw).collect();
    let gs: Vec<f64> = points.iter().map(|q| q.source.value).collect();
    let ga: Vec<f64> = points.iter().map(|q| q.stored.value).collect();
    let range = p.histogram_range_s;
    Ok(Fig2a {
        source_inverse_power_fit: linear_fit(&inv, &gs)?,
        stored_inverse_power_fit: linear_fit(&inv, &ga)?,
        efficiency_at_max_power: echo_efficiency_from(&rs, &ra, p)?,
        inset: Some((
            rs.histogram(p.histogram_bin_s, range)?,
            ra.histogram(p.histogram_bin_s, range)?,
        )),
        points,
        runs,
    })
}

fn write_fig2a(r: &Fig2a, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    b.table(
        "g2_vs_power.csv",
        &[
            "power_mw",
            "g2_source",
            "g2_source_error",
            "g2_stored",
            "g2_stored_error",
        ],
        r.points
            .iter()
            .map(|q| {
                vec![
                    fmt(q.power_mw),
                    fmt(q.source.value),
                    fmt(q.source.error),
                    fmt(q.stored.value),
                    fmt(q.stored.error),
                ]
            })
            .collect(),
    )?;
    if let Some((s, a)) = &r.inset {
        b.table(
            "inset_histogram.csv",
            &["bin_center_s", "source", "stored"],
            (0..s.len())
                .map(|k| {
                    vec![
                        format!("{:.6e}", s.bin_center_s(k)),
                        s.counts[k].to_string(),
                        a.counts[k].to_string(),
                    ]
                })
                .collect(),
        )?;
    }
    b.params(
        "fits.csv",
        &[
            (
                "source_c1".into(),
                r.source_inverse_power_fit.intercept,
                f64::NAN,
            ),
            (
                "source_c2_mw".into(),
                r.source_inverse_power_fit.slope,
                f64::NAN,
            ),
            (
                "source_r2".into(),
                r.source_inverse_power_fit.r_squared,
                f64::NAN,
            ),
            (
                "stored_c1".into(),
                r.stored_inverse_power_fit.intercept,
                f64::NAN,
            ),
            (
                "stored_c2_mw".into(),
                r.stored_inverse_power_fit.slope,
                f64::NAN,
            ),
            (
                "stored_r2".into(),
                r.stored_inverse_power_fit.r_squared,
                f64::NAN,
            ),
            (
                "echo_efficiency".into(),
                r.efficiency_at_max_power.ratio,
                r.efficiency_at_max_power.error,
            ),
        ],
    )?;
    b.finish("fig2a", r)
}

// -------------------------------------------------------------- fig2bcd

pub const FIG2B_POWERS_MW: [f64; 4] = [0.25, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2bcd {
    pub source_vs_power: Vec<(f64, HeraldedG2)>,
    pub pit: HeraldedG2,
    pub stored: HeraldedG2,
    pub runs: Vec<RunRef>,
    #[serde(skip)]
    pub source_autocorrelation: Option<CoincidenceHistogram>,
    #[serde(skip)]
    pub stored_autocorrelation: Option<CoincidenceHistogram>,
}

/// Histogram of `t_B - t_A` among signal clicks that fall in some herald's
/// window.
pub fn heralded_autocorrelation(
    run: &Run,
    start_s: f64,
    window_s: f64,
    bin_s: f64,
    half_range_s: f64,
) -> Result<CoincidenceHistogram> {
    let (lo, w) = (s_to_ps(start_s), s_to_ps(window_s));
    let keep = |sig: &[i64]| -> Vec<i64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        for &t in sig {
            // first herald whose window could still contain t
            while k < run.idler.len() && run.idler[k] + lo + w <= t {
                k += 1;
            }
            if k < run.idler.len() && run.idler[k] + lo <= t {
                out.push(t);
            }
        }
        out
    };
    let (a, b) = (keep(&run.signal_a), keep(&run.signal_b));
    let h = s_to_ps(half_range_s);
    coincidence_histogram_par(&a, &b, s_to_ps(bin_s), (-h, h), run.duration_ps)
}

/// Heralded autocorrelation of the source versus pump power, and of pit
/// and stored photons at the highest power.
pub fn fig2bcd(opts: &RecipeOptions) -> Result<Fig2bcd> {
    let p = params();
    let source = source_file();
    let mut runs = Vec::new();
    let mut source_vs_power = Vec::new();
    let mut low = None;
    for &pw in &FIG2B_POWERS_MW {
        let mut s = source.clone();
        s.config.pump_power_mw = pw;
        let r = simulate(&format!("fig2b-source-{pw}"), &s, opts, 10.0)?;
        source_vs_power.push((pw, r.heralded(p.input_start_s, p.window_s)?));
        runs.push(r.reference.clone());
        if low.is_none() {
            low = Some(heralded_autocorrelation(
                &r,
                p.input_start_s,
                p.window_s,
                10e-9,
                400e-9,
            )?);
        }
    }
    let pit_file = with_memory(
        reference_file(),
        prepared_memory(EomSetting::Both, ProgramKind::Pit),
        "pit",
    );
    let rp = simulate("fig2b-pit", &pit_file, opts, 10.0)?;
    let pit = rp.heralded(p.input_start_s, p.window_s)?;
    runs.push(rp.reference.clone());
    drop(rp);
    let ra = simulate("fig2b-stored", &reference_file(), opts, 30.0)?;
    let stored = ra.heralded(p.echo_start_s, p.window_s)?;
    let stored_ac = heralded_autocorrelation(&ra, p.echo_start_s, p.window_s, 10e-9, 400e-9)?;
    runs.push(ra.reference.clone());
    Ok(Fig2bcd {
        source_vs_power,
        pit,
        stored,
        runs,
        source_autocorrelation: low,
        stored_autocorrelation: Some(stored_ac),
    })
}

fn write_fig2bcd(r: &Fig2bcd, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    let row = |label: String, h: &HeraldedG2| {
        vec![
            label,
            fmt(h.value),
            fmt(h.error),
            h.n_i.to_string(),
            h.n_ia.to_string(),
            h.n_ib.to_string(),
            h.n_iab.to_string(),
        ]
    };
    let mut rows: Vec<Vec<String>> = r
        .source_vs_power
        .iter()
        .map(|(pw, h)| row(format!("source_{pw}mW"), h))
        .collect();
    rows.push(row("pit_3mW".into(), &r.pit));
    rows.push(row("stored_3mW".into(), &r.stored));
    b.table(
        "heralded_g2.csv",
        &[
            "configuration",
            "value",
            "error",
            "n_i",
            "n_ia",
            "n_ib",
            "n_iab",
        ],
        rows,
    )?;
    if let Some(h) = &r.source_autocorrelation {
        b.histogram("autocorrelation_source.csv", h)?;
    }
    if let Some(h) = &r.stored_autocorrelation {
        b.histogram("autocorrelation_stored.csv", h)?;
    }
    b.finish("fig2bcd", r)
}

// ----------------------------------------------------------- fig3, appD

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatAnalysis {
    pub center_s: f64,
    pub period_s: Option<f64>,
    pub fsr_peak: BeatPeak,
    pub resolution_hz: f64,
    pub central_peak_fwhm_s: Option<f64>,
    #[serde(skip)]
    pub histogram: Option<CoincidenceHistogram>,
    #[serde(skip)]
    pub spectrum: Option<BeatSpectrum>,
}

/// Beat analysis of `run` in `center +- half_span` at fine binning.
pub fn beat_analysis(run: &Run, center_s: f64, p: &AnalysisParams) -> Result<BeatAnalysis> {
    let half = p.beat_half_span_s;
    let window = (center_s - half, center_s + half);
    let h = run.histogram(p.beat_bin_s, window)?;
    let spec = beat_spectrum(&h, window, FftWindow::Rectangular)?;
    let fsr = p.fsr_hz;
    let period = beat_period(&h, window, 0.5 / fsr, 1.5 / fsr).ok();
    let peak = spec.peak_near(fsr, 1, 10);
    let baseline = h.accidentals_per_bin();
    let fwhm = histogram_peak_fwhm(&h, center_s, 0.5 / fsr, baseline).ok();
    Ok(BeatAnalysis {
        center_s,
        period_s: period,
        fsr_peak: peak,
        resolution_hz: spec.resolution_hz,
        central_peak_fwhm_s: fwhm,
        histogram: Some(h),
        spectrum: Some(spec),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3 {
    pub source_input: BeatAnalysis,
    pub multimode_echo: BeatAnalysis,
    pub single_mode_echo: BeatAnalysis,
    pub runs: Vec<RunRef>,
    #[serde(skip)]
    pub overview: Option<(CoincidenceHistogram, CoincidenceHistogram)>,
}

/// Coincidence histograms of source and stored photons, the beating around
/// input and echo, and the echo of a single stored mode for comparison.
pub fn fig3(opts: &RecipeOptions) -> Result<Fig3> {
    let p = params();
    let rs = simulate("fig3-source", &source_file(), opts, 10.0)?;
    let rm = simulate("fig3-multimode", &reference_file(), opts, 10.0)?;
    let r1 = simulate("fig3-single-mode", &single_mode_file(), opts, 10.0)?;
    let input_center = p.input_start_s + p.window_s / 2.0;
    let echo_center = p.echo_start_s + p.window_s / 2.0;
    let range = (p.histogram_range_s.0, p.histogram_range_s.1 + 1e-6);
    Ok(Fig3 {
        source_input: beat_analysis(&rs, input_center, &p)?,
        multimode_echo: beat_analysis(&rm, echo_center, &p)?,
        single_mode_echo: beat_analysis(&r1, echo_center, &p)?,
        overview: Some((
            rs.histogram(p.histogram_bin_s, range)?,
            rm.histogram(p.histogram_bin_s, range)?,
        )),
        runs: vec![rs.reference, rm.reference, r1.reference],
    })
}

fn write_fig3(r: &Fig3, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    if let Some((s, a)) = &r.overview {
        b.table(
            "panel_a_histogram.csv",
            &["bin_center_s", "source", "stored"],
            (0..s.len())
                .map(|k| {
                    vec![
                        format!("{:.6e}", s.bin_center_s(k)),
                        s.counts[k].to_string(),
                        a.counts[k].to_string(),
                    ]
                })
                .collect(),
        )?;
    }
    if let Some(h) = &r.source_input.histogram {
        b.histogram("panel_b_input_histogram.csv", h)?;
    }
    if let Some(h) = &r.multimode_echo.histogram {
        b.histogram("panel_c_echo_histogram.csv", h)?;
    }
    let mut rows = Vec::new();
    for (name, a) in [
        ("input", &r.source_input),
        ("echo", &r.multimode_echo),
        ("single_mode_echo", &r.single_mode_echo),
    ] {
        if let Some(pd) = a.period_s {
            rows.push((format!("{name}_beat_period_s"), pd, params().beat_bin_s));
        }
        if let Some(w) = a.central_peak_fwhm_s {
            rows.push((format!("{name}_peak_fwhm_s"), w, params().beat_bin_s));
        }
        rows.push((
            format!("{name}_fsr_peak_ratio"),
            a.fsr_peak.ratio(),
            f64::NAN,
        ));
    }
    b.params("beat.csv", &rows)?;
    b.finish("fig3", r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppD {
    pub multimode: BeatAnalysis,
    pub single_mode: BeatAnalysis,
    pub runs: Vec<RunRef>,
}

/// Fourier spectra of the echo histograms with all modes or one mode
/// stored.
pub fn app_d(opts: &RecipeOptions) -> Result<AppD> {
    let p = params();
    let center = p.echo_start_s + p.window_s / 2.0;
    let rm = simulate("fig3-multimode", &reference_file(), opts, 10.0)?;
    let r1 = simulate("fig3-single-mode", &single_mode_file(), opts, 10.0)?;
    Ok(AppD {
        multimode: beat_analysis(&rm, center, &p)?,
        single_mode: beat_analysis(&r1, center, &p)?,
        runs: vec![rm.reference, r1.reference],
    })
}

fn write_app_d(r: &AppD, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    if let Some(s) = &r.multimode.spectrum {
        b.spectrum("spectrum_multimode.csv", s)?;
    }
    if let Some(s) = &r.single_mode.spectrum {
        b.spectrum("spectrum_single_mode.csv", s)?;
    }
    b.params(
        "fsr_peaks.csv",
        &[
            (
                "multimode_peak_hz".into(),
                r.multimode.fsr_peak.frequency_hz,
                r.multimode.resolution_hz,
            ),
            (
                "multimode_ratio".into(),
                r.multimode.fsr_peak.ratio(),
                f64::NAN,
            ),
            (
                "single_mode_peak_hz".into(),
                r.single_mode.fsr_peak.frequency_hz,
                r.single_mode.resolution_hz,
            ),
            (
                "single_mode_ratio".into(),
                r.single_mode.fsr_peak.ratio(),
                f64::NAN,
            ),
        ],
    )?;
    b.finish("appD", r)
}

// ---------------------------------------------------------------- appC

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppC {
    /// `(n, width without jitter, width with jitter)`.
    pub widths: Vec<(usize, f64, f64)>,
    pub jitter_fwhm_s: f64,
    pub measured_width_s: f64,
    pub measured_width_error_s: f64,
    pub bounds: ModeCountBounds,
    pub simulated_width_s: Option<f64>,
    pub simulated_bounds: Option<ModeCountBounds>,
    pub runs: Vec<RunRef>,
}

pub const MEASURED_BEAT_WIDTH_S: f64 = 910e-12;
pub const MEASURED_BEAT_WIDTH_ERROR_S: f64 = 110e-12;

/// Beat width versus interfering mode number, the mode-count bounds of the
/// measured width, and the same analysis on a simulated echo.
pub fn app_c(opts: &RecipeOptions) -> Result<AppC> {
    let file = reference_file();
    let src = &file.config.source;
    let (fsr, lw) = (src.fsr_hz(), src.linewidth_hz());
    let widths = (1..=15)
        .map(|n| {
            Ok((
                n,
                beat_width_model(n, None, fsr, lw, 0.0)?,
                beat_width_model(n, None, fsr, lw, REFERENCE_JITTER_FWHM_S)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let bounds = mode_count_bounds(
        MEASURED_BEAT_WIDTH_S,
        MEASURED_BEAT_WIDTH_ERROR_S,
        fsr,
        lw,
        REFERENCE_JITTER_FWHM_S,
    )?;
    let p = params();
    let run = simulate("fig3-multimode", &file, opts, 10.0)?;
    let beat = beat_analysis(&run, p.echo_start_s + p.window_s / 2.0, &p)?;
    let simulated_bounds = beat
        .central_peak_fwhm_s
        .map(|w| mode_count_bounds(w, p.beat_bin_s, fsr, lw, REFERENCE_JITTER_FWHM_S))
        .transpose()?;
    Ok(AppC {
        widths,
        jitter_fwhm_s: REFERENCE_JITTER_FWHM_S,
        measured_width_s: MEASURED_BEAT_WIDTH_S,
        measured_width_error_s: MEASURED_BEAT_WIDTH_ERROR_S,
        bounds,
        simulated_width_s: beat.central_peak_fwhm_s,
        simulated_bounds,
        runs: vec![run.reference],
    })
}

fn write_app_c(r: &AppC, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    b.table(
        "beat_width_vs_modes.csv",
        &["n_modes", "width_s", "width_with_jitter_s"],
        r.widths
            .iter()
            .map(|(n, a, j)| vec![n.to_string(), fmt(*a), fmt(*j)])
            .collect(),
    )?;
    b.finish("appC", r)
}

// --------------------------------------------------------------- fig4ab

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStat {
    pub mode: i32,
    pub frequency_hz: f64,
    pub heralds: usize,
    pub coincidences: u64,
    pub g2: Option<G2Estimate>,
}

/// Per-mode coincidences and g2 of a scan run, gating idler clicks by
/// the filter position.
pub fn per_mode_stats(
    run: &Run,
    scan: &ScanConfig,
    start_s: f64,
    p: &AnalysisParams,
) -> Result<Vec<ModeStat>> {
    let src = &run.config.source;
    let modes: Vec<i32> = src.modes().iter().map(|m| m.index).collect();
    let freqs: Vec<f64> = modes.iter().map(|&m| src.mode_frequency(m)).collect();
    let half = p.mode_half_width_hz.unwrap_or(src.fsr_hz() / 2.0);
    let windows = scan.mode_windows(&freqs, half);
    let gated = gate_idler_by_scan(&run.idler, &run.triggers, &windows)?;
    let (w, s) = (s_to_ps(p.window_s), s_to_ps(start_s));
    Ok(modes
        .iter()
        .zip(&freqs)
        .zip(&gated)
        .map(|((&mode, &f), idl)| {
            let g2 = g2_cross(idl, &run.signal, w, s, run.duration_ps).ok();
            ModeStat {
                mode,
                frequency_hz: f,
                heralds: idl.len(),
                coincidences: g2.map_or(0, |g| g.n_c),
                g2,
            }
        })
        .collect())
}

/// Idler clicks repeated once per signal partner in the window, i.e. the
/// herald times of detected coincidences.
pub fn coincident_heralds(
    idler: &[i64],
    signal: &[i64],
    start_ps: i64,
    window_ps: i64,
) -> Vec<i64> {
    let mut out = Vec::new();
    let mut j = 0usize;
    for &t in idler {
        let (lo, hi) = (t + start_ps, t + start_ps + window_ps);
        while j < signal.len() && signal[j] < lo {
            j += 1;
        }
        let mut k = j;
        while k < signal.len() && signal[k] < hi {
            out.push(t);
            k += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrace {
    pub label: String,
    #[serde(skip)]
    pub frequencies_hz: Vec<f64>,
    #[serde(skip)]
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4ab {
    pub scan: ScanConfig,
    pub bins: usize,
    pub source_fit: Option<LorentzianTrainFit>,
    pub fitted_spacing_hz: Option<f64>,
    pub multimode_rescale: Option<ScaleFit>,
    pub single_mode_rescale: Option<ScaleFit>,
    pub source_modes: Vec<ModeStat>,
    pub stored_modes: Vec<ModeStat>,
    pub count_overlap: Overlap,
    pub g2_overlap: Overlap,
    pub runs: Vec<RunRef>,
    pub traces: Vec<ScanTrace>,
}

pub const SCAN_BINS: usize = 1000;

fn scan_trace(
    label: &str,
    run: &Run,
    scan: &ScanConfig,
    start_s: f64,
    p: &AnalysisParams,
) -> Result<ScanTrace> {
    let heralds = coincident_heralds(
        &run.idler,
        &run.signal,
        s_to_ps(start_s),
        s_to_ps(p.window_s),
    );
    let (x, y) = scan_spectrum(&heralds, &run.triggers, scan, SCAN_BINS)?;
    Ok(ScanTrace {
        label: label.into(),
        frequencies_hz: x,
        counts: y,
    })
}

fn vector_overlap(
    a: &[ModeStat],
    b: &[ModeStat],
    f: impl Fn(&ModeStat) -> Option<(f64, f64)>,
) -> Result<Overlap> {
    let mut v1 = Vec::new();
    let mut e1 = Vec::new();
    let mut v2 = Vec::new();
    let mut e2 = Vec::new();
    for (x, y) in a.iter().zip(b) {
        if let (Some(p), Some(q)) = (f(x), f(y)) {
            v1.push(p.0.max(0.0));
            e1.push(p.1);
            v2.push(q.0.max(0.0));
            e2.push(q.1);
        }
    }
    spectral_overlap_with_errors(&v1, Some(&e1), &v2, Some(&e2))
}

/// Filter-cavity scans of the source and of the stored photons with all
/// modes or one mode prepared: trigger-referenced coincidence spectra, a
/// Lorentzian-train fit of the source, and per-mode count and g2 vectors.
pub fn fig4ab(opts: &RecipeOptions) -> Result<Fig4ab> {
    let p = params();
    let scan = ScanConfig::reference();
    let rs = simulate_scan("fig4-scan-source", &source_file(), &scan, opts, 20.0)?;
    let source_trace = scan_trace("source", &rs, &scan, p.input_start_s, &p)?;
    let source_modes = per_mode_stats(&rs, &scan, p.input_start_s, &p)?;
    let mut runs = vec![rs.reference.clone()];
    drop(rs);
    let rm = simulate_scan("fig4-scan-multimode", &reference_file(), &scan, opts, 60.0)?;
    let mm_trace = scan_trace("multimode", &rm, &scan, p.echo_start_s, &p)?;
    let stored_modes = per_mode_stats(&rm, &scan, p.echo_start_s, &p)?;
    runs.push(rm.reference.clone());
    drop(rm);
    let r1 = simulate_scan(
        "fig4-scan-single-mode",
        &single_mode_file(),
        &scan,
        opts,
        60.0,
    )?;
    let sm_trace = scan_trace("single_mode", &r1, &scan, p.echo_start_s, &p)?;
    runs.push(r1.reference.clone());
    drop(r1);

    let n = p.fit_peaks;
    let init = TrainInit::Grid {
        first_center_hz: -((n as f64 - 1.0) / 2.0) * p.fsr_hz,
        spacing_hz: p.fsr_hz,
        sigma_hz: scan.fc_linewidth_hz,
    };
    let source_fit = fit_lorentzian_train(
        &source_trace.frequencies_hz,
        &source_trace.counts,
        None,
        n,
        &init,
    )
    .ok();
    let rescale = |t: &ScanTrace| {
        source_fit
            .as_ref()
            .and_then(|f| fit_train_rescaled(&t.frequencies_hz, &t.counts, None, &f.params).ok())
    };
    let fitted_spacing_hz = source_fit.as_ref().and_then(|f| {
        mean_spacing(
            &f.params
                .peaks
                .iter()
                .map(|q| q.center_hz)
                .collect::<Vec<_>>(),
        )
    });
    let counts = |m: &ModeStat| {
        Some((
            m.coincidences as f64,
            (m.coincidences as f64).max(1.0).sqrt(),
        ))
    };
    let g2 = |m: &ModeStat| m.g2.map(|g| (g.value, g.error));
    Ok(Fig4ab {
        scan,
        bins: SCAN_BINS,
        multimode_rescale: rescale(&mm_trace),
        single_mode_rescale: rescale(&sm_trace),
        source_fit,
        fitted_spacing_hz,
        count_overlap: vector_overlap(&source_modes, &stored_modes, counts)?,
        g2_overlap: vector_overlap(&source_modes, &stored_modes, g2)?,
        source_modes,
        stored_modes,
        runs,
        traces: vec![source_trace, mm_trace, sm_trace],
    })
}

fn write_fig4ab(r: &Fig4ab, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    let x = &r.traces[0].frequencies_hz;
    let fit = |f: f64| r.source_fit.as_ref().map_or(f64::NAN, |t| t.params.eval(f));
    b.table(
        "scan_traces.csv",
        &[
            "frequency_hz",
            "source",
            "multimode",
            "single_mode",
            "source_fit",
        ],
        (0..x.len())
            .map(|k| {
                vec![
                    fmt(x[k]),
                    fmt(r.traces[0].counts[k]),
                    fmt(r.traces[1].counts[k]),
                    fmt(r.traces[2].counts[k]),
                    fmt(fit(x[k])),
                ]
            })
            .collect(),
    )?;
    let g = |m: &ModeStat| m.g2.map_or((f64::NAN, f64::NAN), |g| (g.value, g.error));
    b.table(
        "per_mode.csv",
        &[
            "mode",
            "frequency_hz",
            "source_coincidences",
            "stored_coincidences",
            "source_g2",
            "source_g2_error",
            "stored_g2",
            "stored_g2_error",
        ],
        r.source_modes
            .iter()
            .zip(&r.stored_modes)
            .map(|(s, a)| {
                vec![
                    s.mode.to_string(),
                    fmt(s.frequency_hz),
                    s.coincidences.to_string(),
                    a.coincidences.to_string(),
                    fmt(g(s).0),
                    fmt(g(s).1),
                    fmt(g(a).0),
                    fmt(g(a).1),
                ]
            })
            .collect(),
    )?;
    let mut rows = vec![
        (
            "count_overlap".into(),
            r.count_overlap.value,
            r.count_overlap.error,
        ),
        ("g2_overlap".into(), r.g2_overlap.value, r.g2_overlap.error),
    ];
    if let Some(s) = r.fitted_spacing_hz {
        rows.push(("fitted_spacing_hz".into(), s, f64::NAN));
    }
    if let Some(f) = &r.source_fit {
        for (k, q) in f.params.peaks.iter().enumerate() {
            rows.push((format!("amplitude_{k}"), q.amplitude, f.amplitude_errors[k]));
            rows.push((format!("center_hz_{k}"), q.center_hz, f.center_errors[k]));
        }
        rows.push(("sigma_hz".into(), f.params.sigma_hz, f.sigma_error));
    }
    for (name, s) in [
        ("multimode", &r.multimode_rescale),
        ("single_mode", &r.single_mode_rescale),
    ] {
        if let Some(s) = s {
            rows.push((format!("{name}_scale"), s.scale, s.scale_error));
        }
    }
    b.params("fit.csv", &rows)?;
    b.finish("fig4ab", r)
}

// --------------------------------------------------------------- fig4cd

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesPoint {
    pub setting: EomSetting,
    pub n_em: f64,
    pub stored: G2Estimate,
    pub pit: G2Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4cd {
    pub points: Vec<ModesPoint>,
    /// Accidental-subtracted stored coincidences against `N_eM`.
    pub stored_linearity: LineFit,
    pub pit_linearity: LineFit,
    pub noise_fit: Option<NoiseModelFit>,
    /// `B / p_s` implied by the configured noise and efficiencies.
    pub injected_b_over_ps: f64,
    pub runs: Vec<RunRef>,
}

pub const EOM_SETTINGS: [EomSetting; 4] = [
    EomSetting::Off,
    EomSetting::Eom2,
    EomSetting::Eom1,
    EomSetting::Both,
];

/// Signal noise in units of the detected signal rate of one effective mode.
pub fn injected_b_over_ps(config: &ScenarioConfig) -> Result<f64> {
    let eta0 = match config.program.action(0) {
        crate::memory::MemoryAction::Afc { efficiency, .. } => efficiency,
        crate::memory::MemoryAction::Pit { transmission } => transmission,
        crate::memory::MemoryAction::Absorb { .. } => 0.0,
    };
    let d = &config.detectors;
    let (eta_s, dark) = match config.beamsplitter_transmission {
        Some(t) => (
            t * d.signal_a.efficiency + (1.0 - t) * d.signal_b.efficiency,
            d.signal_a.dark_rate_hz + d.signal_b.dark_rate_hz,
        ),
        None => (d.signal_a.efficiency, d.signal_a.dark_rate_hz),
    };
    let p_s = config.central_pair_rate_hz() * eta0 * eta_s;
    if !(p_s > 0.0) {
        return Err(Error::ZeroCounts("central-mode signal rate"));
    }
    Ok((config.broadband_noise_rate_hz + dark) / p_s)
}

/// Coincidences and g2 after pit and AFC for the four EOM settings, with
/// the linear and noise-model fits.
pub fn fig4cd(opts: &RecipeOptions) -> Result<Fig4cd> {
    fig4cd_with(&reference_file(), opts, 10.0)
}

pub fn fig4cd_with(base: &ScenarioFile, opts: &RecipeOptions, duration_s: f64) -> Result<Fig4cd> {
    let p = &base.analysis;
    let mut points = Vec::new();
    let mut runs = Vec::new();
    let mut injected = f64::NAN;
    for setting in EOM_SETTINGS {
        let afc = with_memory(
            base.clone(),
            prepared_memory(setting, ProgramKind::Afc),
            &format!("{}-afc", base.name),
        );
        let pit = with_memory(
            base.clone(),
            prepared_memory(setting, ProgramKind::Pit),
            &format!("{}-pit", base.name),
        );
        let cfg = afc.resolve()?;
        let n_em = effective_modes(&cfg.source, &cfg.program)?;
        if setting == EomSetting::Off {
            injected = injected_b_over_ps(&cfg)?;
        }
        let ra = simulate(&format!("fig4cd-afc-{setting:?}"), &afc, opts, duration_s)?;
        let stored = ra.g2(p.echo_start_s, p.window_s)?;
        runs.push(ra.reference.clone());
        drop(ra);
        let rp = simulate(&format!("fig4cd-pit-{setting:?}"), &pit, opts, duration_s)?;
        let pit_g2 = rp.g2(p.input_start_s, p.window_s)?;
        runs.push(rp.reference.clone());
        points.push(ModesPoint {
            setting,
            n_em,
            stored,
            pit: pit_g2,
        });
    }
    let x: Vec<f64> = points.iter().map(|q| q.n_em).collect();
    let net = |g: &G2Estimate| g.n_c as f64 - g.accidentals;
    let ys: Vec<f64> = points.iter().map(|q| net(&q.stored)).collect();
    let yp: Vec<f64> = points.iter().map(|q| net(&q.pit)).collect();
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|q| (q.n_em, q.stored.value, q.stored.error))
        .collect();
    let noise_fit = noise_fit_of(&pts, &points[0].stored).ok();
    Ok(Fig4cd {
        stored_linearity: fit_through_origin(&x, &ys)?,
        pit_linearity: fit_through_origin(&x, &yp)?,
        noise_fit,
        injected_b_over_ps: injected,
        points,
        runs,
    })
}

/// Noise-model fit of g2 - 1 with per-window probabilities taken from the
/// single-mode point.
pub fn noise_fit_of(points: &[(f64, f64, f64)], single: &G2Estimate) -> Result<NoiseModelFit> {
    let duration = single.n_a as f64 * single.n_b as f64 * single.window_s
        / single.accidentals.max(f64::MIN_POSITIVE);
    let windows = duration / single.window_s;
    let p_i = single.n_a as f64 / windows;
    let p_s = (single.n_b as f64 / windows).max(f64::MIN_POSITIVE);
    fit_noise_model(points, 1.0, p_s, p_i, NoiseBaseline::SubtractAccidental)
}

fn write_fig4cd(r: &Fig4cd, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    let net = |g: &G2Estimate| g.n_c as f64 - g.accidentals;
    let first = r
        .points
        .first()
        .map_or(1.0, |q| net(&q.stored).max(f64::MIN_POSITIVE));
    let first_pit = r
        .points
        .first()
        .map_or(1.0, |q| net(&q.pit).max(f64::MIN_POSITIVE));
    b.table(
        "coincidences_vs_modes.csv",
        &[
            "n_em",
            "stored_net",
            "stored_normalized",
            "pit_net",
            "pit_normalized",
        ],
        r.points
            .iter()
            .map(|q| {
                vec![
                    fmt(q.n_em),
                    fmt(net(&q.stored)),
                    fmt(net(&q.stored) / first),
                    fmt(net(&q.pit)),
                    fmt(net(&q.pit) / first_pit),
                ]
            })
            .collect(),
    )?;
    b.table(
        "g2_vs_modes.csv",
        &[
            "n_em",
            "g2_stored",
            "g2_stored_error",
            "g2_pit",
            "g2_pit_error",
        ],
        r.points
            .iter()
            .map(|q| {
                vec![
                    fmt(q.n_em),
                    fmt(q.stored.value),
                    fmt(q.stored.error),
                    fmt(q.pit.value),
                    fmt(q.pit.error),
                ]
            })
            .collect(),
    )?;
    if let Some(f) = &r.noise_fit {
        b.table(
            "noise_model.csv",
            &["n_em", "g2_model"],
            (0..=60)
                .map(|k| {
                    let n = 0.25 + k as f64 * 0.1;
                    vec![fmt(n), fmt(1.0 + f.asymptote * n / (n + f.b_over_ps))]
                })
                .collect(),
        )?;
        b.params(
            "noise_fit.csv",
            &[
                ("asymptote".into(), f.asymptote, f.asymptote_error),
                ("b_over_ps".into(), f.b_over_ps, f.b_over_ps_error),
                ("injected_b_over_ps".into(), r.injected_b_over_ps, 0.0),
            ],
        )?;
    }
    b.params(
        "linearity.csv",
        &[
            ("stored_slope".into(), r.stored_linearity.slope, f64::NAN),
            ("stored_r2".into(), r.stored_linearity.r_squared, f64::NAN),
            ("pit_slope".into(), r.pit_linearity.slope, f64::NAN),
            ("pit_r2".into(), r.pit_linearity.r_squared, f64::NAN),
        ],
    )?;
    b.finish("fig4cd", r)
}

// --------------------------------------------------------------- tableI

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub signal: String,
    pub idler: String,
    pub g2: G2Estimate,
    pub measured_value: f64,
    pub measured_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableI {
    pub rows: Vec<TableRow>,
    pub runs: Vec<RunRef>,
}

impl TableI {
    pub fn get(&self, signal: &str, idler: &str) -> Option<&G2Estimate> {
        self.rows
            .iter()
            .find(|r| r.signal == signal && r.idler == idler)
            .map(|r| &r.g2)
    }
}

/// Echo-window g2 for one or all modes stored, heralded by a multimode
/// idler or by the filter locked on the central mode.
pub fn table_i(opts: &RecipeOptions) -> Result<TableI> {
    let p = params();
    let grid = [
        ("SM", "MM", 2.48, 0.17),
        ("MM", "MM", 4.35, 0.22),
        ("MM", "SM", 15.8, 1.5),
        ("SM", "SM", 72.0, 12.0),
    ];
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (s, i, v, e) in grid {
        let mut f = if s == "SM" {
            single_mode_file()
        } else {
            reference_file()
        };
        if i == "SM" {
            f.config.idler_filter = Some(reference_locked_filter());
        }
        f.name = format!("{}-{s}s-{i}i", f.name);
        let r = simulate(&format!("tableI-{s}-{i}"), &f, opts, 10.0)?;
        rows.push(TableRow {
            signal: s.into(),
            idler: i.into(),
            g2: r.g2(p.echo_start_s, p.window_s)?,
            measured_value: v,
            measured_error: e,
        });
        runs.push(r.reference);
    }
    Ok(TableI { rows, runs })
}

fn write_table_i(r: &TableI, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    b.table(
        "table1.csv",
        &[
            "signal",
            "idler",
            "g2",
            "g2_error",
            "measured_g2",
            "measured_error",
        ],
        r.rows
            .iter()
            .map(|q| {
                vec![
                    q.signal.clone(),
                    q.idler.clone(),
                    fmt(q.g2.value),
                    fmt(q.g2.error),
                    fmt(q.measured_value),
                    fmt(q.measured_error),
                ]
            })
            .collect(),
    )?;
    b.finish("tableI", r)
}

// ---------------------------------------------------------------- appG

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppG {
    pub measured_locked_g2: f64,
    pub measured_expected_scanned_g2: f64,
    pub simulated_locked: G2Estimate,
    pub simulated_expected_scanned_g2: f64,
    pub simulated_scanned_central: Option<G2Estimate>,
    pub runs: Vec<RunRef>,
}

/// Cross-talk correction between the locked-filter g2 and the central mode
/// of a scan, from the measured value and from simulation.
pub fn app_g(opts: &RecipeOptions) -> Result<AppG> {
    let p = params();
    let file = reference_file();
    let src = &file.config.source;
    let fc = reference_locked_filter().linewidth_hz;
    let measured = crosstalk_expected_g2(src, fc, &[(0, 15.8)], 0)?;
    let mut locked = file.clone();
    locked.config.idler_filter = Some(reference_locked_filter());
    let rl = simulate("appG-locked", &locked, opts, 10.0)?;
    let g_locked = rl.g2(p.echo_start_s, p.window_s)?;
    let expected = crosstalk_expected_g2(src, fc, &[(0, g_locked.value)], 0)?;
    let scan = ScanConfig::reference();
    let rs = simulate_scan("fig4-scan-multimode", &file, &scan, opts, 60.0)?;
    let modes = per_mode_stats(&rs, &scan, p.echo_start_s, &p)?;
    let central = modes.iter().find(|m| m.mode == 0).and_then(|m| m.g2);
    Ok(AppG {
        measured_locked_g2: 15.8,
        measured_expected_scanned_g2: measured,
        simulated_locked: g_locked,
        simulated_expected_scanned_g2: expected,
        simulated_scanned_central: central,
        runs: vec![rl.reference, rs.reference],
    })
}

fn write_app_g(r: &AppG, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    let mut rows = vec![
        ("measured_locked_g2".into(), r.measured_locked_g2, 1.5),
        (
            "measured_expected_scanned_g2".into(),
            r.measured_expected_scanned_g2,
            f64::NAN,
        ),
        g2_row("simulated_locked_g2", &r.simulated_locked),
        (
            "simulated_expected_scanned_g2".into(),
            r.simulated_expected_scanned_g2,
            f64::NAN,
        ),
    ];
    if let Some(g) = &r.simulated_scanned_central {
        rows.push(g2_row("simulated_scanned_central_g2", g));
    }
    b.params("crosstalk.csv", &rows)?;
    b.finish("appG", r)
}

// ---------------------------------------------------------------- appH

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppH {
    pub base: NoiseModelParams,
    pub b_over_ps: Vec<f64>,
    #[serde(skip)]
    pub curves: Vec<Vec<(f64, f64)>>,
}

/// Noise-model curves g2(N_eM) for the per-window probabilities of the
/// reference configuration and several noise levels.
pub fn app_h() -> Result<AppH> {
    let file = reference_file();
    let cfg = file.resolve()?;
    let dt = file.analysis.window_s;
    let eta0 = crate::memory::REFERENCE_AFC_EFFICIENCY;
    let d = &cfg.detectors;
    let r0 = cfg.central_pair_rate_hz();
    let eta_s = 0.5 * (d.signal_a.efficiency + d.signal_b.efficiency);
    let p_s = r0 * eta0 * eta_s * dt;
    let idler_rate = cfg.total_pair_rate_hz() * d.idler.efficiency
        + d.idler.dark_rate_hz
        + cfg.idler_noise.map_or(0.0, |n| n.rate_hz);
    let p_i = idler_rate * dt;
    let p_si = r0 * d.idler.efficiency * eta0 * eta_s;
    let base = NoiseModelParams {
        p_si: p_si * dt,
        p_s,
        p_i,
        b: 0.0,
        m: 1.0,
    };
    let levels = vec![0.0, 0.5, 1.0, 2.0, 4.0];
    let curves = levels
        .iter()
        .map(|&r| {
            (1..=30)
                .map(|k| {
                    let n = k as f64 * 0.25;
                    let params = NoiseModelParams { b: r * p_s, ..base };
                    Ok((n, g2_vs_modes_model(&params, n)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AppH {
        base,
        b_over_ps: levels,
        curves,
    })
}

fn write_app_h(r: &AppH, dir: &Path) -> Result<RecipeReport> {
    let mut b = Bundle::new(dir)?;
    let mut header = vec!["n_em".to_string()];
    header.extend(r.b_over_ps.iter().map(|v| format!("g2_b_over_ps_{v}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..r.curves[0].len())
        .map(|k| {
            let mut row = vec![fmt(r.curves[0][k].0)];
            row.extend(r.curves.iter().map(|c| fmt(c[k].1)));
            row
        })
        .collect();
    b.table("noise_model_curves.csv", &header_refs, rows)?;
    b.finish("appH", r)
}

/// Runs one recipe and writes its bundle into `out_dir`.
pub fn run_recipe(name: &str, opts: &RecipeOptions, out_dir: &Path) -> Result<RecipeReport> {
    match name {
        "fig2a" => write_fig2a(&fig2a(opts)?, out_dir),
        "fig2bcd" => write_fig2bcd(&fig2bcd(opts)?, out_dir),
        "fig3" => write_fig3(&fig3(opts)?, out_dir),
        "fig4ab" => write_fig4ab(&fig4ab(opts)?, out_dir),
        "fig4cd" => write_fig4cd(&fig4cd(opts)?, out_dir),
        "tableI" => write_table_i(&table_i(opts)?, out_dir),
        "appC" => write_app_c(&app_c(opts)?, out_dir),
        "appD" => write_app_d(&app_d(opts)?, out_dir),
        "appG" => write_app_g(&app_g(opts)?, out_dir),
        "appH" => write_app_h(&app_h()?, out_dir),
        _ => Err(Error::UnknownRecipe {
            name: name.into(),
            available: RECIPES.to_vec(),
        }),
    }
}
