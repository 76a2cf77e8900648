//! Frequency-domain objects: the clustered biphoton comb, EOM preparation
//! sidebands, the filter-cavity response and the Lorentzian-train lineshape.
//!
//! Frequencies are offsets in Hz from the central mode. Absolute optical
//! frequencies never enter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cavity free spectral range of the pair source, Hz.
pub const REFERENCE_FSR_HZ: f64 = 261.1e6;
/// Linewidth (FWHM) of each biphoton mode, Hz.
pub const REFERENCE_LINEWIDTH_HZ: f64 = 1.8e6;
/// Signal/idler FSR mismatch that yields the 15-mode cluster.
pub const DEFAULT_DELTA_FSR_HZ: f64 = 0.12e6;
/// Filter-cavity linewidth (FWHM), Hz.
pub const REFERENCE_FC_LINEWIDTH_HZ: f64 = 80e6;

/// One spectral mode of the pair source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralMode {
    pub index: i32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumMetadata {
    pub fsr_hz: f64,
    pub linewidth_hz: f64,
}

/// Discrete comb of biphoton modes sharing one linewidth.
///
/// Amplitudes are relative pair rates normalized so that mode 0 has
/// amplitude 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BiphotonSpectrumDoc", into = "BiphotonSpectrumDoc")]
pub struct BiphotonSpectrum {
    fsr_hz: f64,
    linewidth_hz: f64,
    modes: Vec<SpectralMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BiphotonSpectrumDoc {
    metadata: SpectrumMetadata,
    modes: Vec<SpectralMode>,
}

impl TryFrom<BiphotonSpectrumDoc> for BiphotonSpectrum {
    type Error = Error;

    fn try_from(doc: BiphotonSpectrumDoc) -> Result<Self> {
        BiphotonSpectrum::new(doc.metadata.fsr_hz, doc.metadata.linewidth_hz, doc.modes)
    }
}

impl From<BiphotonSpectrum> for BiphotonSpectrumDoc {
    fn from(s: BiphotonSpectrum) -> Self {
        BiphotonSpectrumDoc {
            metadata: SpectrumMetadata {
                fsr_hz: s.fsr_hz,
                linewidth_hz: s.linewidth_hz,
            },
            modes: s.modes,
        }
    }
}

impl BiphotonSpectrum {
    /// Builds a spectrum, rescaling amplitudes so that mode 0 is 1.
    pub fn new(fsr_hz: f64, linewidth_hz: f64, mut modes: Vec<SpectralMode>) -> Result<Self> {
        if !(fsr_hz > 0.0 && fsr_hz.is_finite()) {
            return Err(Error::invalid(
                "fsr_hz",
                format!("must be > 0, got {fsr_hz}"),
            ));
        }
        if !(linewidth_hz > 0.0 && linewidth_hz.is_finite()) {
            return Err(Error::invalid(
                "linewidth_hz",
                format!("must be > 0, got {linewidth_hz}"),
            ));
        }
        if linewidth_hz >= fsr_hz {
            return Err(Error::invalid(
                "linewidth_hz",
                format!("unresolved comb: linewidth {linewidth_hz} Hz >= fsr {fsr_hz} Hz"),
            ));
        }
        modes.sort_by_key(|m| m.index);
        for pair in modes.windows(2) {
            if pair[0].index == pair[1].index {
                return Err(Error::invalid(
                    "modes",
                    format!("duplicate mode index {}", pair[0].index),
                ));
            }
        }
        if let Some(m) = modes
            .iter()
            .find(|m| !(m.amplitude >= 0.0 && m.amplitude.is_finite()))
        {
            return Err(Error::invalid(
                "modes",
                format!("mode {} has invalid amplitude {}", m.index, m.amplitude),
            ));
        }
        let central = modes
            .iter()
            .find(|m| m.index == 0)
            .map(|m| m.amplitude)
            .unwrap_or(0.0);
        if central <= 0.0 {
            return Err(Error::invalid(
                "modes",
                "central mode (index 0) must be present with amplitude > 0",
            ));
        }
        for m in &mut modes {
            m.amplitude /= central;
        }
        Ok(BiphotonSpectrum {
            fsr_hz,
            linewidth_hz,
            modes,
        })
    }

    /// `n` equal-amplitude modes on indices centred on 0 (for even `n` the
    /// extra mode sits at positive index).
    pub fn equal_modes(fsr_hz: f64, linewidth_hz: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "need at least one mode"));
        }
        let lo = -((n as i32 - 1) / 2);
        let modes = (0..n as i32)
            .map(|k| SpectralMode {
                index: lo + k,
                amplitude: 1.0,
            })
            .collect();
        Self::new(fsr_hz, linewidth_hz, modes)
    }

    pub fn fsr_hz(&self) -> f64 {
        self.fsr_hz
    }

    pub fn linewidth_hz(&self) -> f64 {
        self.linewidth_hz
    }

    pub fn modes(&self) -> &[SpectralMode] {
        &self.modes
    }

    /// Number of generated modes (amplitude > 0).
    pub fn mode_count(&self) -> usize {
        self.modes.iter().filter(|m| m.amplitude > 0.0).count()
    }

    pub fn amplitude(&self, index: i32) -> f64 {
        self.modes
            .binary_search_by_key(&index, |m| m.index)
            .map(|i| self.modes[i].amplitude)
            .unwrap_or(0.0)
    }

    pub fn total_amplitude(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude).sum()
    }

    /// Frequency offset of a mode from the central mode.
    pub fn mode_frequency(&self, index: i32) -> f64 {
        index as f64 * self.fsr_hz
    }
}

/// How doubly-resonant modes are selected from the signal/idler walk-off.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClusterCriterion {
    /// Keep modes whose walk-off is within half a linewidth.
    #[default]
    Threshold,
    /// Keep modes whose overlap amplitude is at least `min_amplitude`.
    WeightedOverlap { min_amplitude: f64 },
}

/// Overlap of two Lorentzian resonances of equal FWHM detuned by `detuning`,
/// relative to zero detuning.
fn lorentzian_overlap(detuning: f64, linewidth: f64) -> f64 {
    let r = detuning / linewidth;
    1.0 / (1.0 + r * r)
}

/// Enumerates the doubly resonant modes of a cavity whose signal and idler
/// FSRs differ by `delta_fsr_hz`. `max_index = None` means unbounded, which
/// needs a nonzero walk-off to terminate.
pub fn cluster_modes(
    fsr_signal_hz: f64,
    delta_fsr_hz: f64,
    linewidth_hz: f64,
    max_index: Option<u32>,
    criterion: ClusterCriterion,
) -> Result<BiphotonSpectrum> {
    if !(fsr_signal_hz > 0.0) || !(linewidth_hz > 0.0) {
        return Err(Error::invalid("cluster_modes", "frequencies must be > 0"));
    }
    if delta_fsr_hz < 0.0 || !delta_fsr_hz.is_finite() {
        return Err(Error::invalid("delta_fsr_hz", "must be >= 0"));
    }
    if linewidth_hz >= fsr_signal_hz {
        return Err(Error::invalid(
            "linewidth_hz",
            format!("unresolved comb: linewidth {linewidth_hz} Hz >= fsr {fsr_signal_hz} Hz"),
        ));
    }
    if delta_fsr_hz == 0.0 && max_index.is_none() {
        return Err(Error::invalid(
            "max_index",
            "degenerate FSRs with unbounded max_index never terminate",
        ));
    }
    if let ClusterCriterion::WeightedOverlap { min_amplitude } = criterion {
        if !(min_amplitude > 0.0 && min_amplitude <= 1.0) {
            return Err(Error::invalid("min_amplitude", "must be in (0, 1]"));
        }
    }

    let accepts = |m: i64| -> bool {
        let walk_off = (m as f64 * delta_fsr_hz).abs();
        match criterion {
            ClusterCriterion::Threshold => walk_off <= linewidth_hz / 2.0,
            ClusterCriterion::WeightedOverlap { min_amplitude } => {
                lorentzian_overlap(walk_off, linewidth_hz) >= min_amplitude
            }
        }
    };

    let mut modes = vec![SpectralMode {
        index: 0,
        amplitude: 1.0,
    }];
    let limit = max_index.map(i64::from).unwrap_or(i64::from(i32::MAX));
    let mut m = 1i64;
    while m <= limit && accepts(m) {
        let amplitude = lorentzian_overlap(m as f64 * delta_fsr_hz, linewidth_hz);
        modes.push(SpectralMode {
            index: m as i32,
            amplitude,
        });
        modes.push(SpectralMode {
            index: -m as i32,
            amplitude,
        });
        m += 1;
    }
    BiphotonSpectrum::new(fsr_signal_hz, linewidth_hz, modes)
}

/// One phase modulator in the preparation chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EomStage {
    pub modulation_frequency_hz: f64,
    pub modulation_index: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EomChainConfig {
    pub stages: Vec<EomStage>,
}

impl EomChainConfig {
    /// Returns the integer FSR multiple of each stage, rejecting drives that
    /// are not on the source FSR grid.
    pub fn grid_multiples(&self, fsr_hz: f64) -> Result<Vec<i32>> {
        self.stages
            .iter()
            .map(|s| {
                if !(s.modulation_index >= 0.0 && s.modulation_index.is_finite()) {
                    return Err(Error::invalid("modulation_index", "must be >= 0"));
                }
                let ratio = s.modulation_frequency_hz / fsr_hz;
                let k = ratio.round();
                if !(k >= 1.0) || (ratio - k).abs() > 1e-6 * k {
                    return Err(Error::invalid(
                        "modulation_frequency_hz",
                        format!(
                            "{} Hz is not a positive integer multiple of the FSR {} Hz",
                            s.modulation_frequency_hz, fsr_hz
                        ),
                    ));
                }
                Ok(k as i32)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationLine {
    pub index: i32,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationMetadata {
    pub fsr_hz: f64,
}

/// Preparation light on the mode grid, powers normalized to the total
/// input power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PreparationDoc", into = "PreparationDoc")]
pub struct PreparationSpectrum {
    fsr_hz: f64,
    lines: Vec<PreparationLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreparationDoc {
    metadata: PreparationMetadata,
    lines: Vec<PreparationLine>,
}

impl TryFrom<PreparationDoc> for PreparationSpectrum {
    type Error = Error;

    fn try_from(doc: PreparationDoc) -> Result<Self> {
        PreparationSpectrum::new(doc.metadata.fsr_hz, doc.lines)
    }
}

impl From<PreparationSpectrum> for PreparationDoc {
    fn from(p: PreparationSpectrum) -> Self {
        PreparationDoc {
            metadata: PreparationMetadata { fsr_hz: p.fsr_hz },
            lines: p.lines,
        }
    }
}

const POWER_SUM_TOLERANCE: f64 = 1e-9;

impl PreparationSpectrum {
    pub fn new(fsr_hz: f64, mut lines: Vec<PreparationLine>) -> Result<Self> {
        if !(fsr_hz > 0.0) {
            return Err(Error::invalid("fsr_hz", "must be > 0"));
        }
        lines.sort_by_key(|l| l.index);
        for pair in lines.windows(2) {
            if pair[0].index == pair[1].index {
                return Err(Error::invalid(
                    "lines",
                    format!("duplicate line index {}", pair[0].index),
                ));
            }
        }
        if lines
            .iter()
            .any(|l| !(l.power >= 0.0 && l.power.is_finite()))
        {
            return Err(Error::invalid("lines", "powers must be finite and >= 0"));
        }
        let total: f64 = lines.iter().map(|l| l.power).sum();
        if total > 1.0 + POWER_SUM_TOLERANCE {
            return Err(Error::invalid(
                "lines",
                format!("relative powers sum to {total} > 1"),
            ));
        }
        Ok(PreparationSpectrum { fsr_hz, lines })
    }

    /// A single unmodulated line (all EOMs off).
    pub fn single_line(fsr_hz: f64) -> Self {
        PreparationSpectrum {
            fsr_hz,
            lines: vec![PreparationLine {
                index: 0,
                power: 1.0,
            }],
        }
    }

    pub fn empty(fsr_hz: f64) -> Self {
        PreparationSpectrum {
            fsr_hz,
            lines: Vec::new(),
        }
    }

    pub fn fsr_hz(&self) -> f64 {
        self.fsr_hz
    }

    pub fn lines(&self) -> &[PreparationLine] {
        &self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn power(&self, index: i32) -> f64 {
        self.lines
            .binary_search_by_key(&index, |l| l.index)
            .map(|i| self.lines[i].power)
            .unwrap_or(0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.lines.iter().map(|l| l.power).sum()
    }
}

/// Bessel functions of the first kind `J_0(x) ..= J_nmax(x)` for `x >= 0`,
/// by Miller's downward recurrence normalized with
/// `J_0 + 2 * sum_k J_2k = 1`.
pub fn bessel_j_orders(x: f64, n_max: usize) -> Vec<f64> {
    assert!(
        x >= 0.0 && x.is_finite(),
        "bessel argument must be finite and >= 0"
    );
    if x == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    let top = n_max.max(x.ceil() as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;

    let mut out = vec![0.0; n_max + 1];
    let (mut j_next, mut j_cur) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    for k in (0..=start).rev() {
        // j_cur holds J_k, j_next holds J_{k+1}
        if k <= n_max {
            out[k] = j_cur;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j_cur } else { 2.0 * j_cur };
        }
        if k == 0 {
            break;
        }
        let j_prev = 2.0 * k as f64 / x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    for v in &mut out {
        *v /= norm;
    }
    out
}

/// Sideband orders are kept until their power drops below this fraction.
const SIDEBAND_TRUNCATION: f64 = 1e-12;

fn stage_powers(beta: f64) -> BTreeMap<i32, f64> {
    let mut n_max = (beta.ceil() as usize + 4).max(8);
    let j = loop {
        let j = bessel_j_orders(beta, n_max);
        if j[n_max] * j[n_max] < SIDEBAND_TRUNCATION {
            break j;
        }
        n_max *= 2;
    };
    let mut out = BTreeMap::new();
    for (n, &jn) in j.iter().enumerate() {
        let p = jn * jn;
        if p < SIDEBAND_TRUNCATION && n as f64 > beta {
            break;
        }
        out.insert(n as i32, p);
        if n > 0 {
            out.insert(-(n as i32), p);
        }
    }
    out
}

/// Spectrum of phase-modulated preparation light after a cascade of EOMs.
/// Each stage spreads power over orders with weights `J_n(beta)^2`; a stage
/// driven at `k` FSRs shifts order `n` by `n*k` grid indices.
pub fn eom_sidebands(eom: &EomChainConfig, fsr_hz: f64) -> Result<PreparationSpectrum> {
    let multiples = eom.grid_multiples(fsr_hz)?;
    let mut spectrum: BTreeMap<i32, f64> = BTreeMap::from([(0, 1.0)]);
    for (stage, k) in eom.stages.iter().zip(multiples) {
        let weights = stage_powers(stage.modulation_index);
        let mut next = BTreeMap::new();
        for (&i, &p) in &spectrum {
            for (&n, &w) in &weights {
                *next.entry(i + n * k).or_insert(0.0) += p * w;
            }
        }
        spectrum = next;
    }
    let lines = spectrum
        .into_iter()
        .map(|(index, power)| PreparationLine { index, power })
        .collect();
    PreparationSpectrum::new(fsr_hz, lines)
}

/// One Lorentzian of a train: amplitude `a` (area scale) and centre `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzianPeak {
    pub amplitude: f64,
    pub center_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzianTrainParams {
    pub peaks: Vec<LorentzianPeak>,
    /// Shared FWHM.
    pub sigma_hz: f64,
    pub offset: f64,
}

impl LorentzianTrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_hz > 0.0) {
            return Err(Error::invalid("sigma_hz", "must be > 0"));
        }
        if self.peaks.iter().any(|p| !(p.amplitude >= 0.0)) {
            return Err(Error::invalid("peaks", "amplitudes must be >= 0"));
        }
        if !(self.offset >= 0.0) {
            return Err(Error::invalid("offset", "must be >= 0"));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        lorentzian_train(self, x)
    }
}

/// `S(x) = sum_i a_i (s/2) / ((x - b_i)^2 + (s/2)^2) + d`.
pub fn lorentzian_train(params: &LorentzianTrainParams, x: f64) -> f64 {
    let h = params.sigma_hz / 2.0;
    let h2 = h * h;
    params
        .peaks
        .iter()
        .map(|p| {
            let dx = x - p.center_hz;
            p.amplitude * h / (dx * dx + h2)
        })
        .sum::<f64>()
        + params.offset
}

/// Intensity transmission of a Fabry-Perot filter modelled as a single
/// Lorentzian line. FSR replicas are ignored, which holds while the scan
/// window is much narrower than the cavity FSR.
pub fn fp_transmission(center_hz: f64, linewidth_hz: f64, f_hz: f64) -> f64 {
    let h = linewidth_hz / 2.0;
    let d = f_hz - center_hz;
    h * h / (d * d + h * h)
}

/// Filter transmission summed over the given neighbour orders when the
/// filter sits on mode 0.
pub fn fp_crosstalk_sum(
    fsr_hz: f64,
    fc_linewidth_hz: f64,
    orders: impl IntoIterator<Item = i32>,
) -> f64 {
    orders
        .into_iter()
        .map(|k| fp_transmission(0.0, fc_linewidth_hz, k as f64 * fsr_hz))
        .sum()
}
