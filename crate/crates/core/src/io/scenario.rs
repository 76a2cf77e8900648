//! Versioned scenario documents and the named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{
    DetectorModel, Detectors, IdlerNoise, LockedFilter, ScanConfig, ScenarioConfig,
    DEFAULT_MAX_EVENTS,
};
use crate::error::{Error, Result};
use crate::memory::{
    build_program, CalibrationCurve, MemoryProgram, PreparationPower, ProgramKind, REFERENCE_TAU_S,
};
use crate::spectral::{
    eom_sidebands, BiphotonSpectrum, EomChainConfig, EomStage, PreparationLine,
    PreparationSpectrum, SpectralMode, REFERENCE_FC_LINEWIDTH_HZ, REFERENCE_FSR_HZ,
    REFERENCE_LINEWIDTH_HZ,
};

pub const SCENARIO_VERSION: u32 = 1;

/// Relative mode amplitudes `a_|m|` of the reference source, central mode first.
pub const REFERENCE_AMPLITUDES: [f64; 8] = [1.0, 0.60, 0.45, 0.25, 0.40, 0.40, 0.15, 0.05];

/// Total jitter of a signal-idler coincidence, FWHM.
pub const REFERENCE_JITTER_FWHM_S: f64 = 730e-12;

pub const REFERENCE_WINDOW_S: f64 = 400e-9;

/// Where the memory program comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreparationChoice {
    /// Bessel sidebands of the file's EOM chain.
    Eom,
    /// A measured line table.
    Measured {
        spectrum: PreparationSpectrum,
    },
    SingleLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemorySpec {
    /// Use `config.program` as written.
    Explicit,
    Bypass,
    Prepared {
        preparation: PreparationChoice,
        kind: ProgramKind,
        #[serde(default = "default_tau")]
        tau_s: f64,
        /// Line power fraction that counts as relative power 1. Defaults to
        /// the strongest line.
        #[serde(default)]
        nominal_line_fraction: Option<f64>,
    },
}

fn default_tau() -> f64 {
    REFERENCE_TAU_S
}

/// Coincidence windows and histogram binning. Window starts are signal
/// minus idler delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    /// Mode spacing looked for in beat spectra and scan fits.
    pub fsr_hz: f64,
    pub window_s: f64,
    pub input_start_s: f64,
    pub echo_start_s: f64,
    pub histogram_bin_s: f64,
    pub histogram_range_s: (f64, f64),
    pub beat_bin_s: f64,
    pub beat_half_span_s: f64,
    /// Half width of each mode's gate in a filter scan. `None` is FSR / 2.
    pub mode_half_width_hz: Option<f64>,
    pub fit_peaks: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            fsr_hz: REFERENCE_FSR_HZ,
            window_s: REFERENCE_WINDOW_S,
            input_start_s: -REFERENCE_WINDOW_S / 2.0,
            echo_start_s: REFERENCE_TAU_S - REFERENCE_WINDOW_S / 2.0,
            histogram_bin_s: 1e-9,
            histogram_range_s: (-1e-6, 5e-6),
            beat_bin_s: 100e-12,
            beat_half_span_s: 50e-9,
            mode_half_width_hz: None,
            fit_peaks: 15,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {v}")))
            }
        };
        pos("analysis.fsr_hz", self.fsr_hz)?;
        pos("analysis.window_s", self.window_s)?;
        pos("analysis.histogram_bin_s", self.histogram_bin_s)?;
        pos("analysis.beat_bin_s", self.beat_bin_s)?;
        pos("analysis.beat_half_span_s", self.beat_half_span_s)?;
        if !(self.histogram_range_s.1 > self.histogram_range_s.0) {
            return Err(Error::invalid("analysis.histogram_range_s", "empty range"));
        }
        if self.fit_peaks == 0 {
            return Err(Error::invalid("analysis.fit_peaks", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub config: ScenarioConfig,
    /// When not `explicit`, regenerates `config.program` on resolve.
    #[serde(default = "explicit")]
    pub memory: MemorySpec,
    #[serde(default)]
    pub eom: EomChainConfig,
    #[serde(default)]
    pub calibration: CalibrationCurve,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub analysis: AnalysisParams,
}

fn explicit() -> MemorySpec {
    MemorySpec::Explicit
}

impl ScenarioFile {
    /// Parses and validates. Syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported version {}, expected {SCENARIO_VERSION}",
                self.version
            )));
        }
        if let Some(scan) = &self.scan {
            scan.validate()?;
        }
        self.analysis.validate()?;
        self.resolve()?.validate()
    }

    /// The scenario with its memory program rebuilt from `memory`.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut config = self.config.clone();
        config.program = self.program()?;
        Ok(config)
    }

    fn program(&self) -> Result<MemoryProgram> {
        let fsr = self.config.source.fsr_hz();
        match &self.memory {
            MemorySpec::Explicit => Ok(self.config.program.clone()),
            MemorySpec::Bypass => Ok(MemoryProgram::bypass()),
            MemorySpec::Prepared {
                preparation,
                kind,
                tau_s,
                nominal_line_fraction,
            } => {
                let prep = match preparation {
                    PreparationChoice::Eom => eom_sidebands(&self.eom, fsr)?,
                    PreparationChoice::Measured { spectrum } => spectrum.clone(),
                    PreparationChoice::SingleLine => PreparationSpectrum::single_line(fsr),
                };
                let nominal = match nominal_line_fraction {
                    Some(f) => *f,
                    None => prep.lines().iter().map(|l| l.power).fold(0.0, f64::max),
                };
                if !(nominal > 0.0) {
                    return Err(Error::invalid(
                        "memory.nominal_line_fraction",
                        "must be > 0",
                    ));
                }
                build_program(
                    &prep,
                    PreparationPower::normalized_to(nominal),
                    &self.calibration,
                    *kind,
                    *tau_s,
                )
            }
        }
    }

    /// SHA-256 of the resolved configuration's canonical JSON.
    pub fn config_hash(&self) -> Result<String> {
        config_hash(&self.resolve()?)
    }
}

pub fn config_hash(config: &ScenarioConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fifteen modes on the 261.1 MHz grid with the measured amplitude profile.
pub fn reference_source() -> BiphotonSpectrum {
    let modes = (-7i32..=7)
        .map(|i| SpectralMode {
            index: i,
            amplitude: REFERENCE_AMPLITUDES[i.unsigned_abs() as usize],
        })
        .collect();
    BiphotonSpectrum::new(REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ, modes).expect("static spectrum")
}

/// Two EOMs at 1 and 3 FSR, each driven near equal carrier and first
/// sideband power, covering -4..4 flat.
pub fn reference_eom_chain() -> EomChainConfig {
    EomChainConfig {
        stages: vec![
            EomStage {
                modulation_frequency_hz: REFERENCE_FSR_HZ,
                modulation_index: 1.435,
            },
            EomStage {
                modulation_frequency_hz: 3.0 * REFERENCE_FSR_HZ,
                modulation_index: 1.435,
            },
        ],
    }
}

/// Which modulators shape the preparation light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EomSetting {
    Both,
    Eom1,
    Eom2,
    Off,
}

fn table(lines: &[(i32, f64)]) -> PreparationSpectrum {
    let mut out = Vec::new();
    for &(i, p) in lines {
        out.push(PreparationLine { index: i, power: p });
        if i != 0 {
            out.push(PreparationLine {
                index: -i,
                power: p,
            });
        }
    }
    PreparationSpectrum::new(REFERENCE_FSR_HZ, out).expect("static table")
}

/// Measured line powers of the preparation light, as fractions of the
/// input power.
pub fn measured_preparation(setting: EomSetting) -> PreparationSpectrum {
    match setting {
        EomSetting::Both => table(&[
            (0, 0.095),
            (1, 0.095),
            (2, 0.095),
            (3, 0.095),
            (4, 0.095),
            (5, 0.025),
            (6, 0.018),
            (7, 0.0065),
        ]),
        EomSetting::Eom1 => table(&[(0, 0.19), (1, 0.19), (2, 0.19), (3, 0.019)]),
        EomSetting::Eom2 => table(&[(0, 0.19), (3, 0.19), (6, 0.19), (9, 0.019)]),
        EomSetting::Off => PreparationSpectrum::single_line(REFERENCE_FSR_HZ),
    }
}

pub fn prepared_memory(setting: EomSetting, kind: ProgramKind) -> MemorySpec {
    let spectrum = measured_preparation(setting);
    let nominal = spectrum.lines().iter().map(|l| l.power).fold(0.0, f64::max);
    MemorySpec::Prepared {
        preparation: PreparationChoice::Measured { spectrum },
        kind,
        tau_s: REFERENCE_TAU_S,
        nominal_line_fraction: Some(nominal),
    }
}

/// Reference configuration: 3 mW pump, both EOMs, AFC storage, multimode
/// idler, 10 s.
pub fn reference_scenario() -> ScenarioFile {
    let jitter = REFERENCE_JITTER_FWHM_S / std::f64::consts::SQRT_2;
    let signal = DetectorModel {
        efficiency: 0.5,
        dark_rate_hz: 25.0,
        jitter_fwhm_s: jitter,
        dead_time_s: 0.0,
    };
    let config = ScenarioConfig {
        pump_power_mw: 3.0,
        pair_rate_per_mw_per_unit_amplitude_hz: 7800.0,
        source: reference_source(),
        program: MemoryProgram::absorbing(),
        detectors: Detectors {
            idler: DetectorModel {
                efficiency: 0.4,
                dark_rate_hz: 1000.0,
                jitter_fwhm_s: jitter,
                dead_time_s: 0.0,
            },
            signal_a: signal,
            signal_b: signal,
        },
        beamsplitter_transmission: Some(0.5),
        broadband_noise_rate_hz: 975.0,
        idler_noise: Some(IdlerNoise {
            rate_hz: 200e3,
            bandwidth_hz: 145e9,
        }),
        idler_filter: None,
        pump_gating: None,
        duration_s: 10.0,
        seed: 1,
        max_events: DEFAULT_MAX_EVENTS,
    };
    let mut file = ScenarioFile {
        version: SCENARIO_VERSION,
        name: "default".into(),
        config,
        memory: prepared_memory(EomSetting::Both, ProgramKind::Afc),
        eom: reference_eom_chain(),
        calibration: CalibrationCurve::default(),
        scan: Some(ScanConfig::reference()),
        analysis: AnalysisParams::default(),
    };
    file.config.program = file.program().expect("static program");
    file
}

/// Named variations of the reference configuration.
pub const PRESETS: [&str; 10] = [
    "default",
    "source",
    "pit",
    "eom1",
    "eom2",
    "single-mode",
    "sm-idler",
    "sm-sm",
    "noise-off",
    "signal-noise",
];

pub fn preset(name: &str) -> Result<ScenarioFile> {
    let mut f = reference_scenario();
    match name {
        "default" => {}
        "source" => f.memory = MemorySpec::Bypass,
        "pit" => f.memory = prepared_memory(EomSetting::Both, ProgramKind::Pit),
        "eom1" => f.memory = prepared_memory(EomSetting::Eom1, ProgramKind::Afc),
        "eom2" => f.memory = prepared_memory(EomSetting::Eom2, ProgramKind::Afc),
        "single-mode" => f.memory = prepared_memory(EomSetting::Off, ProgramKind::Afc),
        "sm-idler" => f.config.idler_filter = Some(reference_locked_filter()),
        "sm-sm" => {
            f.memory = prepared_memory(EomSetting::Off, ProgramKind::Afc);
            f.config.idler_filter = Some(reference_locked_filter());
        }
        "noise-off" => {
            f.config.broadband_noise_rate_hz = 0.0;
            f.config.idler_noise = None;
            f.config.detectors.idler.dark_rate_hz = 0.0;
            f.config.detectors.signal_a.dark_rate_hz = 0.0;
            f.config.detectors.signal_b.dark_rate_hz = 0.0;
        }
        // Signal-arm noise only: idler noise and idler darks removed.
        "signal-noise" => {
            f.config.idler_noise = None;
            f.config.detectors.idler.dark_rate_hz = 0.0;
        }
        _ => {
            return Err(Error::Scenario(format!(
                "unknown preset `{name}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    }
    f.name = name.into();
    f.config.program = f.program()?;
    Ok(f)
}

pub fn reference_locked_filter() -> LockedFilter {
    LockedFilter {
        center_mode: 0,
        linewidth_hz: REFERENCE_FC_LINEWIDTH_HZ,
    }
}
