//! Provenance sidecars, report bundles and the simulate / analyze / fit
//! entry points shared by the command line and the figure recipes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::events::{read_events, split_channels, write_events, EventFormat};
use super::scenario::{config_hash, AnalysisParams, ScenarioFile};
use crate::analysis::{
    beat_period, beat_spectrum, coincidence_histogram_par, fit_lorentzian_train, g2_cross,
    heralded_g2, merge_sorted, trigger_referenced_histogram, BeatPeak, CoincidenceHistogram,
    FftWindow, G2Estimate, HeraldedG2, LorentzianTrainFit, TrainInit,
};
use crate::engine::{
    generate_run, simulate_fc_scan, Event, EventStream, ScanConfig, CH_IDLER, CH_SIGNAL_A,
    CH_SIGNAL_B, CH_TRIGGER,
};
use crate::error::{Error, Result};
use crate::time::{ps_to_s, s_to_ps};

pub const TOOL_NAME: &str = "afcmux";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written next to every event file as `<file>.provenance.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub duration_ps: i64,
    pub format: EventFormat,
    pub events: usize,
    pub events_sha256: String,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
}

pub fn sidecar_path(events_path: &Path) -> PathBuf {
    let mut s = events_path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

pub fn read_provenance(events_path: &Path) -> Result<Option<Provenance>> {
    let p = sidecar_path(events_path);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a CSV with a header row.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_histogram_csv(path: &Path, h: &CoincidenceHistogram) -> Result<()> {
    write_table(
        path,
        &["bin_center_s", "counts"],
        (0..h.len()).map(|k| {
            vec![
                format!("{:.6e}", h.bin_center_s(k)),
                h.counts[k].to_string(),
            ]
        }),
    )
}

/// `parameter,value,error` rows.
pub fn write_params_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    write_table(
        path,
        &["parameter", "value", "error"],
        rows.iter()
            .map(|(n, v, e)| vec![n.clone(), v.to_string(), e.to_string()]),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with_sidecar(
    stream: &EventStream,
    file: &ScenarioFile,
    seed: u64,
    scan: Option<ScanConfig>,
    out: &Path,
    format: EventFormat,
) -> Result<Provenance> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut config = file.resolve()?;
    config.seed = seed;
    let digest = write_events(stream, out, format)?;
    let prov = Provenance {
        tool: TOOL_NAME.into(),
        tool_version: TOOL_VERSION.into(),
        scenario: file.name.clone(),
        config_sha256: config_hash(&config)?,
        seed,
        duration_ps: stream.duration_ps(),
        format,
        events: stream.len(),
        events_sha256: digest,
        scan,
    };
    write_json(&sidecar_path(out), &prov)?;
    Ok(prov)
}

/// Runs the scenario and writes the events plus their sidecar.
pub fn run_simulate(
    file: &ScenarioFile,
    seed: Option<u64>,
    out: &Path,
    format: EventFormat,
) -> Result<Provenance> {
    let mut config = file.resolve()?;
    let seed = seed.unwrap_or(config.seed);
    config.seed = seed;
    let stream = generate_run(&config)?;
    write_with_sidecar(&stream, file, seed, None, out, format)
}

/// Runs a filter-cavity scan with the file's scan settings, or the reference
/// sweep when absent.
pub fn run_scan(
    file: &ScenarioFile,
    seed: Option<u64>,
    out: &Path,
    format: EventFormat,
) -> Result<Provenance> {
    let mut config = file.resolve()?;
    let seed = seed.unwrap_or(config.seed);
    config.seed = seed;
    let scan = file.scan.unwrap_or_else(ScanConfig::reference);
    let stream = simulate_fc_scan(&config, &scan)?;
    write_with_sidecar(&stream, file, seed, Some(scan), out, format)
}

/// Identity of one analysed input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
}

/// An estimator output tagged with the hashes of the files it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traced<T> {
    pub result: T,
    pub inputs: Vec<String>,
}

fn traced<T>(result: T, inputs: &[String]) -> Traced<T> {
    Traced {
        result,
        inputs: inputs.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Ok,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSummary {
    pub period_s: Option<f64>,
    pub fsr_peak: BeatPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub status: ReportStatus,
    pub tool_version: String,
    pub inputs: Vec<InputRef>,
    pub duration_ps: i64,
    pub duration_source: String,
    pub counts: Vec<(u8, usize)>,
    pub g2_input: Option<Traced<G2Estimate>>,
    pub g2_echo: Option<Traced<G2Estimate>>,
    pub heralded_input: Option<Traced<HeraldedG2>>,
    pub heralded_echo: Option<Traced<HeraldedG2>>,
    pub beat: Option<Traced<BeatSummary>>,
    pub notes: Vec<String>,
    pub files: Vec<String>,
}

/// Event files merged into one stream.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub events: Vec<Event>,
    pub refs: Vec<InputRef>,
    pub duration_ps: i64,
    /// `provenance` or `last_event`.
    pub duration_source: String,
    pub scan: Option<ScanConfig>,
}

/// Loads event files and merges them into one stream. The duration comes
/// from the sidecars when present, otherwise from the last timestamp.
pub fn load_inputs(paths: &[PathBuf]) -> Result<LoadedInputs> {
    let mut all = Vec::new();
    let mut refs = Vec::new();
    let mut duration = 0i64;
    let mut from_sidecar = true;
    let mut scan = None;
    for p in paths {
        let (events, digest) = read_events(p, None)?;
        let prov = read_provenance(p)?;
        match &prov {
            Some(pr) => {
                duration = duration.max(pr.duration_ps);
                scan = scan.or(pr.scan);
            }
            None => {
                from_sidecar = false;
                duration =
                    duration.max(events.iter().map(|e| e.timestamp_ps + 1).max().unwrap_or(0));
            }
        }
        refs.push(InputRef {
            path: p.display().to_string(),
            sha256: digest,
            config_sha256: prov.as_ref().map(|p| p.config_sha256.clone()),
            seed: prov.as_ref().map(|p| p.seed),
        });
        all.extend(events);
    }
    all.sort_by_key(|e| (e.timestamp_ps, e.channel));
    let source = if from_sidecar {
        "provenance"
    } else {
        "last_event"
    };
    Ok(LoadedInputs {
        events: all,
        refs,
        duration_ps: duration,
        duration_source: source.into(),
        scan,
    })
}

/// Correlation analysis of idler against the merged signal detectors, in
/// the input and echo windows, plus the beat spectrum around the echo.
pub fn run_analyze(
    paths: &[PathBuf],
    params: &AnalysisParams,
    out_dir: &Path,
) -> Result<AnalysisReport> {
    params.validate()?;
    create_dir(out_dir)?;
    let LoadedInputs {
        events,
        refs: inputs,
        duration_ps,
        duration_source,
        ..
    } = load_inputs(paths)?;
    let hashes: Vec<String> = inputs.iter().map(|i| i.sha256.clone()).collect();
    let ch = split_channels(&events);
    let mut report = AnalysisReport {
        status: ReportStatus::Ok,
        tool_version: TOOL_VERSION.into(),
        inputs: inputs.clone(),
        duration_ps,
        duration_source,
        counts: ch.iter().map(|(c, v)| (*c, v.len())).collect(),
        g2_input: None,
        g2_echo: None,
        heralded_input: None,
        heralded_echo: None,
        beat: None,
        notes: Vec::new(),
        files: Vec::new(),
    };
    let empty = Vec::new();
    let idler = ch.get(&CH_IDLER).unwrap_or(&empty);
    let sa = ch.get(&CH_SIGNAL_A).unwrap_or(&empty);
    let sb = ch.get(&CH_SIGNAL_B).unwrap_or(&empty);
    let signal = merge_sorted(&[sa, sb]);
    let report_path = out_dir.join("report.json");
    if events.is_empty() || duration_ps <= 0 || idler.is_empty() || signal.is_empty() {
        report.status = ReportStatus::NoData;
        report.notes.push(if events.is_empty() {
            "no data: input contains no events".into()
        } else {
            "no data: idler or signal channel is empty".into()
        });
        report.files.push(report_path.display().to_string());
        write_json(&report_path, &report)?;
        return Ok(report);
    }
    let window = s_to_ps(params.window_s);
    let (input_start, echo_start) = (s_to_ps(params.input_start_s), s_to_ps(params.echo_start_s));
    let bin = s_to_ps(params.histogram_bin_s);
    let range = (
        s_to_ps(params.histogram_range_s.0),
        s_to_ps(params.histogram_range_s.1),
    );
    let hist = coincidence_histogram_par(idler, &signal, bin, range, duration_ps)?;
    let hist_path = out_dir.join("histogram.csv");
    write_histogram_csv(&hist_path, &hist)?;
    report.files.push(hist_path.display().to_string());

    let mut rows = Vec::new();
    for (label, start, slot) in [
        ("input", input_start, &mut report.g2_input),
        ("echo", echo_start, &mut report.g2_echo),
    ] {
        match g2_cross(idler, &signal, window, start, duration_ps) {
            Ok(g) => {
                rows.push((format!("g2_{label}"), g.value, g.error));
                *slot = Some(traced(g, &hashes));
            }
            Err(e) => report.notes.push(format!("g2_{label}: {e}")),
        }
    }
    for (label, start, slot) in [
        ("input", input_start, &mut report.heralded_input),
        ("echo", echo_start, &mut report.heralded_echo),
    ] {
        if sb.is_empty() {
            continue;
        }
        match heralded_g2(idler, sa, sb, window, start) {
            Ok(h) => {
                rows.push((format!("heralded_g2_{label}"), h.value, h.error));
                *slot = Some(traced(h, &hashes));
            }
            Err(e) => report.notes.push(format!("heralded_g2_{label}: {e}")),
        }
    }

    let center = ps_to_s(echo_start + window / 2);
    let half = params.beat_half_span_s;
    let fine = coincidence_histogram_par(
        idler,
        &signal,
        s_to_ps(params.beat_bin_s),
        (s_to_ps(center - half), s_to_ps(center + half)),
        duration_ps,
    )?;
    let fine_path = out_dir.join("echo_histogram.csv");
    write_histogram_csv(&fine_path, &fine)?;
    report.files.push(fine_path.display().to_string());
    let fsr = params.fsr_hz;
    match beat_spectrum(
        &fine,
        (center - half, center + half),
        FftWindow::Rectangular,
    ) {
        Ok(spec) => {
            let spec_path = out_dir.join("beat_spectrum.csv");
            write_table(
                &spec_path,
                &["frequency_hz", "magnitude"],
                spec.frequencies_hz
                    .iter()
                    .zip(&spec.magnitudes)
                    .map(|(f, m)| vec![f.to_string(), m.to_string()]),
            )?;
            report.files.push(spec_path.display().to_string());
            let period =
                beat_period(&fine, (center - half, center + half), 0.5 / fsr, 1.5 / fsr).ok();
            let peak = spec.peak_near(fsr, 1, 10);
            if let Some(p) = period {
                rows.push(("beat_period_s".into(), p, params.beat_bin_s));
            }
            rows.push(("beat_peak_ratio".into(), peak.ratio(), f64::NAN));
            report.beat = Some(traced(
                BeatSummary {
                    period_s: period,
                    fsr_peak: peak,
                },
                &hashes,
            ));
        }
        Err(e) => report.notes.push(format!("beat spectrum: {e}")),
    }
    let params_path = out_dir.join("estimates.csv");
    write_params_csv(&params_path, &rows)?;
    report.files.push(params_path.display().to_string());
    report.files.push(report_path.display().to_string());
    write_json(&report_path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFitReport {
    pub status: ReportStatus,
    pub inputs: Vec<InputRef>,
    pub scan: ScanConfig,
    pub bins: usize,
    pub fit: Option<Traced<LorentzianTrainFit>>,
    pub spacing_hz: Option<f64>,
    pub notes: Vec<String>,
}

/// Trigger-referenced idler counts versus filter detuning over the rising
/// ramp, as `(frequency, counts)` pairs.
pub fn scan_spectrum(
    idler: &[i64],
    triggers: &[i64],
    scan: &ScanConfig,
    bins: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let period = scan.period_ps();
    let counts = trigger_referenced_histogram(idler, triggers, period, bins)?;
    let rising = match scan.ramp {
        crate::engine::RampShape::Linear => bins,
        crate::engine::RampShape::Triangle => bins / 2,
    };
    let x = (0..rising)
        .map(|k| scan.frequency_of_offset(((k as f64 + 0.5) * period as f64 / bins as f64) as i64))
        .collect();
    let y = counts[..rising].iter().map(|&c| c as f64).collect();
    Ok((x, y))
}

/// Fits a Lorentzian train to the trigger-referenced idler spectrum of a
/// scan file.
pub fn run_fit(
    paths: &[PathBuf],
    params: &AnalysisParams,
    scan: Option<ScanConfig>,
    bins: usize,
    out_dir: &Path,
) -> Result<ScanFitReport> {
    params.validate()?;
    create_dir(out_dir)?;
    let LoadedInputs {
        events,
        refs: inputs,
        scan: file_scan,
        ..
    } = load_inputs(paths)?;
    let scan = scan.or(file_scan).unwrap_or_else(ScanConfig::reference);
    scan.validate()?;
    let ch = split_channels(&events);
    let mut report = ScanFitReport {
        status: ReportStatus::Ok,
        inputs: inputs.clone(),
        scan,
        bins,
        fit: None,
        spacing_hz: None,
        notes: Vec::new(),
    };
    let report_path = out_dir.join("fit.json");
    let (Some(idler), Some(trig)) = (ch.get(&CH_IDLER), ch.get(&CH_TRIGGER)) else {
        report.status = ReportStatus::NoData;
        report
            .notes
            .push("no data: need idler clicks and scan triggers".into());
        write_json(&report_path, &report)?;
        return Ok(report);
    };
    let (x, y) = scan_spectrum(idler, trig, &scan, bins)?;
    write_table(
        &out_dir.join("scan_spectrum.csv"),
        &["frequency_hz", "counts"],
        x.iter()
            .zip(&y)
            .map(|(f, c)| vec![f.to_string(), c.to_string()]),
    )?;
    let n = params.fit_peaks;
    let first = -((n as f64 - 1.0) / 2.0) * params.fsr_hz;
    let init = TrainInit::Grid {
        first_center_hz: first,
        spacing_hz: params.fsr_hz,
        sigma_hz: scan.fc_linewidth_hz,
    };
    match fit_lorentzian_train(&x, &y, None, n, &init) {
        Ok(fit) => {
            let centers: Vec<f64> = fit.params.peaks.iter().map(|p| p.center_hz).collect();
            report.spacing_hz = mean_spacing(&centers);
            let mut rows = Vec::new();
            for (k, p) in fit.params.peaks.iter().enumerate() {
                rows.push((
                    format!("amplitude_{k}"),
                    p.amplitude,
                    fit.amplitude_errors[k],
                ));
                rows.push((format!("center_hz_{k}"), p.center_hz, fit.center_errors[k]));
            }
            rows.push(("sigma_hz".into(), fit.params.sigma_hz, fit.sigma_error));
            rows.push(("offset".into(), fit.params.offset, fit.offset_error));
            write_params_csv(&out_dir.join("fit_params.csv"), &rows)?;
            report.fit = Some(Traced {
                result: fit,
                inputs: inputs.iter().map(|i| i.sha256.clone()).collect(),
            });
        }
        Err(e) => report.notes.push(format!("fit: {e}")),
    }
    write_json(&report_path, &report)?;
    Ok(report)
}

/// Slope of a least-squares line through sorted peak centres.
pub fn mean_spacing(centers: &[f64]) -> Option<f64> {
    if centers.len() < 2 {
        return None;
    }
    let mut c = centers.to_vec();
    c.sort_by(f64::total_cmp);
    let n = c.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = c.iter().sum::<f64>() / n;
    let num: f64 = c
        .iter()
        .enumerate()
        .map(|(i, y)| (i as f64 - xm) * (y - ym))
        .sum();
    let den: f64 = (0..c.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    Some(num / den)
}
