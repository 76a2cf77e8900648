//! Monte Carlo generation of detection-event streams.
//!
//! A run is cut into fixed 0.1 s segments. Every segment draws from its own
//! seeded streams, so the output does not depend on how segments are spread
//! over threads. Segment outputs are concatenated in order, optionally pump
//! gated, passed through detector dead time and sorted by timestamp.

pub mod delay;
pub mod rng;
pub mod scan;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryAction, MemoryProgram, OutcomeKind};
use crate::spectral::{fp_transmission, BiphotonSpectrum};
use crate::time::{fwhm_to_sigma, s_to_ps, PS_PER_S};

pub use delay::{sample_delay, DelaySampler};
pub use scan::{RampShape, ScanConfig};

pub const CH_IDLER: u8 = 0;
pub const CH_SIGNAL_A: u8 = 1;
pub const CH_SIGNAL_B: u8 = 2;
pub const CH_TRIGGER: u8 = 3;

/// Length of one generation segment.
pub const SEGMENT_PS: i64 = 100_000_000_000;

pub const DEFAULT_MAX_EVENTS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    /// Gaussian timing jitter, FWHM.
    pub jitter_fwhm_s: f64,
    #[serde(default)]
    pub dead_time_s: f64,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_fwhm_s: 0.0,
            dead_time_s: 0.0,
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(name, "efficiency must be in [0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(Error::invalid(name, "dark rate must be >= 0"));
        }
        if !(self.jitter_fwhm_s >= 0.0 && self.jitter_fwhm_s.is_finite()) {
            return Err(Error::invalid(name, "jitter must be >= 0"));
        }
        if !(self.dead_time_s >= 0.0 && self.dead_time_s.is_finite()) {
            return Err(Error::invalid(name, "dead time must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detectors {
    pub idler: DetectorModel,
    pub signal_a: DetectorModel,
    pub signal_b: DetectorModel,
}

/// Spectrally white idler-arm noise, given as the detected rate without any
/// filter and the band it spreads over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdlerNoise {
    pub rate_hz: f64,
    pub bandwidth_hz: f64,
}

/// Filter cavity on the idler arm, locked on one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockedFilter {
    pub center_mode: i32,
    pub linewidth_hz: f64,
}

/// Pump switched off for `off_window_s` after every idler detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpGating {
    pub off_window_s: f64,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub pump_power_mw: f64,
    pub pair_rate_per_mw_per_unit_amplitude_hz: f64,
    pub source: BiphotonSpectrum,
    pub program: MemoryProgram,
    pub detectors: Detectors,
    /// Fraction routed to signal detector A. `None` means no beamsplitter:
    /// every signal photon goes to A and channel B stays silent.
    #[serde(default)]
    pub beamsplitter_transmission: Option<f64>,
    /// Detected uncorrelated rate on the signal arm, before the beamsplitter.
    #[serde(default)]
    pub broadband_noise_rate_hz: f64,
    #[serde(default)]
    pub idler_noise: Option<IdlerNoise>,
    #[serde(default)]
    pub idler_filter: Option<LockedFilter>,
    #[serde(default)]
    pub pump_gating: Option<PumpGating>,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be >= 0, got {v}")))
            }
        };
        nonneg("pump_power_mw", self.pump_power_mw)?;
        nonneg(
            "pair_rate_per_mw_per_unit_amplitude_hz",
            self.pair_rate_per_mw_per_unit_amplitude_hz,
        )?;
        nonneg("broadband_noise_rate_hz", self.broadband_noise_rate_hz)?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid(
                "duration_s",
                format!("must be > 0, got {}", self.duration_s),
            ));
        }
        self.detectors.idler.validate("detectors.idler")?;
        self.detectors.signal_a.validate("detectors.signal_a")?;
        self.detectors.signal_b.validate("detectors.signal_b")?;
        if let Some(t) = self.beamsplitter_transmission {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(
                    "beamsplitter_transmission",
                    "must be in [0, 1]",
                ));
            }
        }
        if let Some(n) = self.idler_noise {
            nonneg("idler_noise.rate_hz", n.rate_hz)?;
            if !(n.bandwidth_hz > 0.0) {
                return Err(Error::invalid("idler_noise.bandwidth_hz", "must be > 0"));
            }
        }
        if let Some(f) = self.idler_filter {
            if !(f.linewidth_hz > 0.0) {
                return Err(Error::invalid("idler_filter.linewidth_hz", "must be > 0"));
            }
        }
        if let Some(g) = self.pump_gating {
            if !(g.off_window_s > 0.0 && g.off_window_s.is_finite()) {
                return Err(Error::invalid("pump_gating.off_window_s", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> i64 {
        s_to_ps(self.duration_s)
    }

    /// Pair emission rate of the central mode.
    pub fn central_pair_rate_hz(&self) -> f64 {
        self.pump_power_mw * self.pair_rate_per_mw_per_unit_amplitude_hz
    }

    /// Pair emission rate summed over all modes.
    pub fn total_pair_rate_hz(&self) -> f64 {
        self.central_pair_rate_hz() * self.source.total_amplitude()
    }

    fn signal_dark_rate_hz(&self) -> f64 {
        match self.beamsplitter_transmission {
            Some(_) => self.detectors.signal_a.dark_rate_hz + self.detectors.signal_b.dark_rate_hz,
            None => self.detectors.signal_a.dark_rate_hz,
        }
    }

    /// Upper estimate of the number of generated events.
    pub fn expected_events(&self, filter_pass: f64, triggers: f64) -> f64 {
        let idler_noise = self.idler_noise.map_or(0.0, |n| n.rate_hz) * filter_pass;
        self.duration_s
            * (2.0 * self.total_pair_rate_hz()
                + self.detectors.idler.dark_rate_hz
                + self.signal_dark_rate_hz()
                + self.broadband_noise_rate_hz
                + idler_noise)
            + triggers
    }
}

/// Fraction of white noise over `bandwidth` that a Lorentzian filter of FWHM
/// `linewidth` transmits.
pub fn filter_noise_fraction(linewidth_hz: f64, bandwidth_hz: f64) -> f64 {
    (PI / 2.0 * linewidth_hz / bandwidth_hz).min(1.0)
}

/// One detection record. `tag` is the emitting mode for photons of a pair
/// and `None` for noise, dark counts and triggers. Estimators never read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub timestamp_ps: i64,
    pub channel: u8,
    pub tag: Option<i32>,
}

/// Detection events of one run, sorted by `(timestamp, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    duration_ps: i64,
}

impl EventStream {
    /// Sorts the events; rejects timestamps outside `[0, duration]`.
    pub fn new(mut events: Vec<Event>, duration_ps: i64) -> Result<Self> {
        if duration_ps <= 0 {
            return Err(Error::invalid("duration_ps", "must be > 0"));
        }
        if let Some((i, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.timestamp_ps < 0 || e.timestamp_ps > duration_ps)
        {
            return Err(Error::invalid(
                "events",
                format!(
                    "record {i} at {} ps lies outside [0, {duration_ps}]",
                    e.timestamp_ps
                ),
            ));
        }
        events.sort_by_key(|e| (e.timestamp_ps, e.channel));
        Ok(EventStream {
            events,
            duration_ps,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn duration_ps(&self) -> i64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sorted timestamps of one channel.
    pub fn channel(&self, channel: u8) -> Vec<i64> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.timestamp_ps)
            .collect()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    /// Events of one channel, with tags.
    pub fn channel_events(&self, channel: u8) -> Vec<Event> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .copied()
            .collect()
    }
}

/// Ground truth for one emitted pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub emission_ps: i64,
    pub mode: i32,
    /// Signal minus idler arrival time at the memory input.
    pub delay_ps: i64,
    pub outcome: OutcomeKind,
    /// Signal time leaving the memory, before jitter.
    pub signal_out_ps: Option<i64>,
    pub idler_detected: Option<i64>,
    pub signal_detected: Option<(u8, i64)>,
}

/// Routes every item to A with probability `transmission`, else to B.
pub fn beamsplit<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    transmission: f64,
    rng: &mut R,
) -> (Vec<T>, Vec<T>) {
    let mut a = Vec::with_capacity((items.len() as f64 * transmission) as usize + 1);
    let mut b = Vec::new();
    for it in items {
        if rng.random::<f64>() < transmission {
            a.push(it.clone());
        } else {
            b.push(it.clone());
        }
    }
    (a, b)
}

/// Coherent delay samplers for each memory outcome, with and without the
/// locked idler filter in the weights.
struct PathSamplers {
    echo: Option<DelaySampler>,
    transmitted: Option<DelaySampler>,
    echo_filtered: Option<DelaySampler>,
    transmitted_filtered: Option<DelaySampler>,
}

impl PathSamplers {
    fn new(
        source: &BiphotonSpectrum,
        program: &MemoryProgram,
        filter: Option<LockedFilter>,
    ) -> Result<Self> {
        let build = |p: &dyn Fn(MemoryAction) -> f64,
                     filt: Option<LockedFilter>|
         -> Result<Option<DelaySampler>> {
            let weights: Vec<(i32, f64)> = source
                .modes()
                .iter()
                .map(|m| {
                    let t = filt.map_or(1.0, |f| {
                        fp_transmission(
                            source.mode_frequency(f.center_mode),
                            f.linewidth_hz,
                            source.mode_frequency(m.index),
                        )
                    });
                    (m.index, m.amplitude * p(program.action(m.index)) * t)
                })
                .collect();
            if weights.iter().all(|w| w.1 <= 0.0) {
                return Ok(None);
            }
            DelaySampler::new(source.fsr_hz(), source.linewidth_hz(), &weights).map(Some)
        };
        let echo = |a: MemoryAction| a.echo_probability();
        let trans = |a: MemoryAction| a.transmit_probability();
        Ok(PathSamplers {
            echo: build(&echo, None)?,
            transmitted: build(&trans, None)?,
            echo_filtered: if filter.is_some() {
                build(&echo, filter)?
            } else {
                None
            },
            transmitted_filtered: if filter.is_some() {
                build(&trans, filter)?
            } else {
                None
            },
        })
    }

    fn get(&self, kind: OutcomeKind, filtered: bool) -> Option<&DelaySampler> {
        match (kind, filtered) {
            (OutcomeKind::Echo, false) => self.echo.as_ref(),
            (OutcomeKind::Echo, true) => self.echo_filtered.as_ref(),
            (OutcomeKind::Transmitted, false) => self.transmitted.as_ref(),
            (OutcomeKind::Transmitted, true) => self.transmitted_filtered.as_ref(),
            (OutcomeKind::Lost, _) => None,
        }
    }
}

/// Event as produced inside a segment, before gating and dead time.
#[derive(Debug, Clone, Copy)]
struct Raw {
    event: Event,
    /// Pair emission time, or the event time for noise.
    decision_ps: i64,
    /// Pump-induced, hence removed by gating.
    suppressible: bool,
}

struct SegmentOut {
    raw: Vec<Raw>,
    pairs: Vec<PairRecord>,
}

struct Plan<'a> {
    config: &'a ScenarioConfig,
    scan: Option<&'a ScanConfig>,
    samplers: PathSamplers,
    mode_index: Vec<i32>,
    mode_cdf: Vec<f64>,
    duration_ps: i64,
    idler_noise_rate: f64,
    diagnostics: bool,
}

struct Jitter(Option<Normal<f64>>);

impl Jitter {
    fn new(fwhm_s: f64) -> Self {
        let sigma = fwhm_to_sigma(fwhm_s) * PS_PER_S;
        Jitter((sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")))
    }

    fn apply<R: Rng + ?Sized>(&self, t: i64, rng: &mut R) -> i64 {
        match &self.0 {
            Some(n) => t + n.sample(rng).round() as i64,
            None => t,
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("finite mean").sample(rng) as u64
    }
}

/// Sorted uniform times for a homogeneous Poisson process on `[start, end)`.
fn poisson_times<R: Rng + ?Sized>(rate_hz: f64, start: i64, end: i64, rng: &mut R) -> Vec<i64> {
    let n = poisson(rate_hz * (end - start) as f64 / PS_PER_S, rng);
    let mut t: Vec<i64> = (0..n).map(|_| rng.random_range(start..end)).collect();
    t.sort_unstable();
    t
}

impl<'a> Plan<'a> {
    fn new(
        config: &'a ScenarioConfig,
        scan: Option<&'a ScanConfig>,
        diagnostics: bool,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(s) = scan {
            s.validate()?;
        }
        let filter = if scan.is_some() {
            None
        } else {
            config.idler_filter
        };
        let samplers = PathSamplers::new(&config.source, &config.program, filter)?;
        let mut acc = 0.0;
        let total = config.source.total_amplitude();
        let mut mode_index = Vec::new();
        let mut mode_cdf = Vec::new();
        for m in config.source.modes() {
            acc += m.amplitude / total;
            mode_index.push(m.index);
            mode_cdf.push(acc);
        }
        let filter_pass = match (scan, filter) {
            (Some(s), _) => config.idler_noise.map_or(1.0, |n| {
                filter_noise_fraction(s.fc_linewidth_hz, n.bandwidth_hz)
            }),
            (None, Some(f)) => config.idler_noise.map_or(1.0, |n| {
                filter_noise_fraction(f.linewidth_hz, n.bandwidth_hz)
            }),
            (None, None) => 1.0,
        };
        let triggers = scan.map_or(0.0, |s| config.duration_s * s.scan_rate_hz + 1.0);
        let expected = config.expected_events(filter_pass, triggers);
        if expected > config.max_events as f64 {
            return Err(Error::BudgetExceeded {
                expected,
                budget: config.max_events,
            });
        }
        Ok(Plan {
            config,
            scan,
            samplers,
            mode_index,
            mode_cdf,
            duration_ps: config.duration_ps(),
            idler_noise_rate: config.idler_noise.map_or(0.0, |n| n.rate_hz) * filter_pass,
            diagnostics,
        })
    }

    fn segments(&self) -> u64 {
        ((self.duration_ps + SEGMENT_PS - 1) / SEGMENT_PS) as u64
    }

    fn pick_mode(&self, u: f64) -> i32 {
        let k = self.mode_cdf.partition_point(|&c| c <= u);
        self.mode_index[k.min(self.mode_index.len() - 1)]
    }

    /// Idler transmission through the locked or scanning filter.
    fn idler_filter(&self, mode: i32, emission_ps: i64) -> f64 {
        let src = &self.config.source;
        if let Some(s) = self.scan {
            fp_transmission(
                s.frequency_at(emission_ps),
                s.fc_linewidth_hz,
                src.mode_frequency(mode),
            )
        } else if let Some(f) = self.config.idler_filter {
            fp_transmission(
                src.mode_frequency(f.center_mode),
                f.linewidth_hz,
                src.mode_frequency(mode),
            )
        } else {
            1.0
        }
    }

    fn segment(&self, k: u64) -> SegmentOut {
        let cfg = self.config;
        let seed = cfg.seed;
        let start = k as i64 * SEGMENT_PS;
        let end = (start + SEGMENT_PS).min(self.duration_ps);
        let mut raw = Vec::new();
        let mut pairs = Vec::new();
        let det = &cfg.detectors;
        let jit_i = Jitter::new(det.idler.jitter_fwhm_s);
        let jit_a = Jitter::new(det.signal_a.jitter_fwhm_s);
        let jit_b = Jitter::new(det.signal_b.jitter_fwhm_s);

        let mut r = rng::stream(seed, "pairs", k);
        let emissions = poisson_times(cfg.total_pair_rate_hz(), start, end, &mut r);
        let has_filter = self.scan.is_none() && cfg.idler_filter.is_some();
        for te in emissions {
            let mode = self.pick_mode(r.random());
            let idler_pass = r.random::<f64>() < det.idler.efficiency * self.idler_filter(mode, te);
            let idler_t = jit_i.apply(te, &mut r);
            let action = cfg.program.action(mode);
            let kind = action.outcome_kind(r.random());
            let mut rec = PairRecord {
                emission_ps: te,
                mode,
                delay_ps: 0,
                outcome: kind,
                signal_out_ps: None,
                idler_detected: None,
                signal_detected: None,
            };
            if idler_pass && (0..=self.duration_ps).contains(&idler_t) {
                rec.idler_detected = Some(idler_t);
                raw.push(Raw {
                    event: Event {
                        timestamp_ps: idler_t,
                        channel: CH_IDLER,
                        tag: Some(mode),
                    },
                    decision_ps: te,
                    suppressible: true,
                });
            }
            if let Some(sampler) = self.samplers.get(kind, has_filter && idler_pass) {
                let dt = s_to_ps(sampler.sample(&mut r));
                rec.delay_ps = dt;
                let t_in = te + dt;
                let t_out = t_in
                    + action
                        .delay_ps()
                        .filter(|_| kind == OutcomeKind::Echo)
                        .unwrap_or(0);
                rec.signal_out_ps = Some(t_out);
                let to_a = match cfg.beamsplitter_transmission {
                    Some(t) => r.random::<f64>() < t,
                    None => true,
                };
                let (ch, model, jit) = if to_a {
                    (CH_SIGNAL_A, &det.signal_a, &jit_a)
                } else {
                    (CH_SIGNAL_B, &det.signal_b, &jit_b)
                };
                if r.random::<f64>() < model.efficiency {
                    let ts = jit.apply(t_out, &mut r);
                    if (0..=self.duration_ps).contains(&ts) {
                        rec.signal_detected = Some((ch, ts));
                        raw.push(Raw {
                            event: Event {
                                timestamp_ps: ts,
                                channel: ch,
                                tag: Some(mode),
                            },
                            decision_ps: te,
                            suppressible: true,
                        });
                    }
                }
            }
            if self.diagnostics {
                pairs.push(rec);
            }
        }

        let push_uniform =
            |name: &str, rate: f64, ch: u8, suppressible: bool, raw: &mut Vec<Raw>| {
                let mut r = rng::stream(seed, name, k);
                for t in poisson_times(rate, start, end, &mut r) {
                    raw.push(Raw {
                        event: Event {
                            timestamp_ps: t,
                            channel: ch,
                            tag: None,
                        },
                        decision_ps: t,
                        suppressible,
                    });
                }
            };
        push_uniform(
            "dark-idler",
            det.idler.dark_rate_hz,
            CH_IDLER,
            false,
            &mut raw,
        );
        push_uniform(
            "noise-idler",
            self.idler_noise_rate,
            CH_IDLER,
            true,
            &mut raw,
        );
        match cfg.beamsplitter_transmission {
            Some(t) => {
                push_uniform(
                    "dark-signal-a",
                    det.signal_a.dark_rate_hz,
                    CH_SIGNAL_A,
                    false,
                    &mut raw,
                );
                push_uniform(
                    "dark-signal-b",
                    det.signal_b.dark_rate_hz,
                    CH_SIGNAL_B,
                    false,
                    &mut raw,
                );
                let mut r = rng::stream(seed, "noise-signal", k);
                let noise = poisson_times(cfg.broadband_noise_rate_hz, start, end, &mut r);
                let (a, b) = beamsplit(&noise, t, &mut r);
                for (ch, ts) in [(CH_SIGNAL_A, a), (CH_SIGNAL_B, b)] {
                    raw.extend(ts.into_iter().map(|t| Raw {
                        event: Event {
                            timestamp_ps: t,
                            channel: ch,
                            tag: None,
                        },
                        decision_ps: t,
                        suppressible: true,
                    }));
                }
            }
            None => {
                push_uniform(
                    "dark-signal-a",
                    det.signal_a.dark_rate_hz,
                    CH_SIGNAL_A,
                    false,
                    &mut raw,
                );
                push_uniform(
                    "noise-signal",
                    cfg.broadband_noise_rate_hz,
                    CH_SIGNAL_A,
                    true,
                    &mut raw,
                );
            }
        }
        SegmentOut { raw, pairs }
    }

    fn run(&self) -> (Vec<Event>, Vec<PairRecord>) {
        let outs: Vec<SegmentOut> = (0..self.segments())
            .into_par_iter()
            .map(|k| self.segment(k))
            .collect();
        let mut raw = Vec::with_capacity(outs.iter().map(|o| o.raw.len()).sum());
        let mut pairs = Vec::new();
        for o in outs {
            raw.extend(o.raw);
            pairs.extend(o.pairs);
        }
        if let Some(g) = self.config.pump_gating {
            raw = apply_gating(raw, s_to_ps(g.off_window_s));
        }
        let mut events: Vec<Event> = raw.into_iter().map(|r| r.event).collect();
        if let Some(s) = self.scan {
            events.extend(
                s.trigger_times(self.duration_ps)
                    .into_iter()
                    .map(|t| Event {
                        timestamp_ps: t,
                        channel: CH_TRIGGER,
                        tag: None,
                    }),
            );
        }
        events.sort_by_key(|e| (e.timestamp_ps, e.channel));
        let det = &self.config.detectors;
        for (ch, d) in [
            (CH_IDLER, det.idler),
            (CH_SIGNAL_A, det.signal_a),
            (CH_SIGNAL_B, det.signal_b),
        ] {
            if d.dead_time_s > 0.0 {
                events = apply_dead_time(events, ch, s_to_ps(d.dead_time_s));
            }
        }
        (events, pairs)
    }
}

/// Drops pump-induced records whose decision time falls within `window` after
/// a surviving idler click. Records are processed in decision order, so a
/// dropped pair opens no gate of its own.
fn apply_gating(mut raw: Vec<Raw>, window: i64) -> Vec<Raw> {
    raw.sort_by_key(|r| r.decision_ps);
    let mut out = Vec::with_capacity(raw.len());
    let mut gate_end = i64::MIN;
    let mut i = 0;
    while i < raw.len() {
        let d = raw[i].decision_ps;
        let mut j = i;
        while j < raw.len() && raw[j].decision_ps == d {
            j += 1;
        }
        for r in &raw[i..j] {
            if r.suppressible && d <= gate_end {
                continue;
            }
            out.push(*r);
        }
        for r in &raw[i..j] {
            if r.event.channel == CH_IDLER && !(r.suppressible && d <= gate_end) {
                gate_end = gate_end.max(r.event.timestamp_ps + window);
            }
        }
        i = j;
    }
    out
}

/// Non-paralyzable dead time on one channel of a sorted event list.
fn apply_dead_time(events: Vec<Event>, channel: u8, dead_ps: i64) -> Vec<Event> {
    let mut last = i64::MIN;
    events
        .into_iter()
        .filter(|e| {
            if e.channel != channel {
                return true;
            }
            if last != i64::MIN && e.timestamp_ps - last < dead_ps {
                return false;
            }
            last = e.timestamp_ps;
            true
        })
        .collect()
}

pub fn generate_run(config: &ScenarioConfig) -> Result<EventStream> {
    let plan = Plan::new(config, None, false)?;
    let (events, _) = plan.run();
    Ok(EventStream {
        events,
        duration_ps: plan.duration_ps,
    })
}

/// Like [`generate_run`], also returning the ground truth of every pair.
pub fn generate_run_with_diagnostics(
    config: &ScenarioConfig,
) -> Result<(EventStream, Vec<PairRecord>)> {
    let plan = Plan::new(config, None, true)?;
    let (events, pairs) = plan.run();
    Ok((
        EventStream {
            events,
            duration_ps: plan.duration_ps,
        },
        pairs,
    ))
}

/// Run with the idler filter swept across the comb. The sweep replaces any
/// locked filter; one trigger per sweep period lands on channel 3.
pub fn simulate_fc_scan(config: &ScenarioConfig, scan: &ScanConfig) -> Result<EventStream> {
    let plan = Plan::new(config, Some(scan), false)?;
    let (events, _) = plan.run();
    Ok(EventStream {
        events,
        duration_ps: plan.duration_ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{ProgramEntry, REFERENCE_TAU_S};
    use crate::spectral::{REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ};

    fn base(n_modes: usize) -> ScenarioConfig {
        ScenarioConfig {
            pump_power_mw: 1.0,
            pair_rate_per_mw_per_unit_amplitude_hz: 10_000.0,
            source: BiphotonSpectrum::equal_modes(
                REFERENCE_FSR_HZ,
                REFERENCE_LINEWIDTH_HZ,
                n_modes,
            )
            .unwrap(),
            program: MemoryProgram::bypass(),
            detectors: Detectors {
                idler: DetectorModel::ideal(),
                signal_a: DetectorModel::ideal(),
                signal_b: DetectorModel::ideal(),
            },
            beamsplitter_transmission: Some(0.5),
            broadband_noise_rate_hz: 0.0,
            idler_noise: None,
            idler_filter: None,
            pump_gating: None,
            duration_s: 0.25,
            seed: 7,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    #[test]
    fn zero_rates_give_empty_stream() {
        let mut c = base(1);
        c.pump_power_mw = 0.0;
        assert!(generate_run(&c).unwrap().is_empty());
    }

    #[test]
    fn dark_count_total_is_poisson() {
        let mut c = base(1);
        c.pump_power_mw = 0.0;
        c.detectors.idler.dark_rate_hz = 2000.0;
        c.duration_s = 1.0;
        let mean = 2000.0;
        for seed in 0..10 {
            c.seed = seed;
            let n = generate_run(&c).unwrap().count(CH_IDLER) as f64;
            assert!(
                (n - mean).abs() < 3.0 * mean.sqrt() + 1.0,
                "seed {seed}: {n}"
            );
        }
    }

    #[test]
    fn echo_is_exactly_tau_after_input() {
        let mut c = base(3);
        c.program = MemoryProgram::new(
            (-1..=1)
                .map(|index| ProgramEntry {
                    index,
                    action: MemoryAction::Afc {
                        efficiency: 0.5,
                        delay_s: REFERENCE_TAU_S,
                        leakage: 0.2,
                    },
                })
                .collect(),
            0.0,
        )
        .unwrap();
        let (_, pairs) = generate_run_with_diagnostics(&c).unwrap();
        let tau = s_to_ps(REFERENCE_TAU_S);
        let mut echoes = 0;
        for p in &pairs {
            match p.outcome {
                OutcomeKind::Echo => {
                    echoes += 1;
                    assert_eq!(p.signal_out_ps, Some(p.emission_ps + p.delay_ps + tau));
                }
                OutcomeKind::Transmitted => {
                    assert_eq!(p.signal_out_ps, Some(p.emission_ps + p.delay_ps))
                }
                OutcomeKind::Lost => assert_eq!(p.signal_out_ps, None),
            }
        }
        assert!(echoes > 1000);
    }

    #[test]
    fn single_pair_events_never_hit_both_detectors() {
        let c = base(5);
        let (_, pairs) = generate_run_with_diagnostics(&c).unwrap();
        assert!(!pairs.is_empty());
        // One signal photon per pair, so at most one signal detection each.
        assert!(pairs
            .iter()
            .all(|p| p.signal_detected.is_none() || p.signal_out_ps.is_some()));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut c = base(15);
        c.duration_s = 0.35;
        c.detectors.idler.jitter_fwhm_s = 500e-12;
        c.broadband_noise_rate_hz = 1000.0;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| generate_run(&c).unwrap());
        let b = four.install(|| generate_run(&c).unwrap());
        assert_eq!(a, b);
        c.seed += 1;
        assert_ne!(a, generate_run(&c).unwrap());
    }

    #[test]
    fn budget_is_enforced() {
        let mut c = base(1);
        c.max_events = 10;
        assert!(matches!(
            generate_run(&c),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn zero_duration_rejected() {
        let mut c = base(1);
        c.duration_s = 0.0;
        assert!(generate_run(&c).is_err());
    }

    #[test]
    fn beamsplit_conserves_and_balances() {
        let items: Vec<u32> = (0..1_000_000).collect();
        let mut r = rng::stream(3, "bs", 0);
        let (a, b) = beamsplit(&items, 0.5, &mut r);
        assert_eq!(a.len() + b.len(), items.len());
        let n = items.len() as f64;
        let sigma = (n * 0.25).sqrt();
        assert!((a.len() as f64 - n / 2.0).abs() < 3.0 * sigma);
        let (a, b) = beamsplit(&items[..100], 1.0, &mut r);
        assert_eq!((a.len(), b.len()), (100, 0));
    }

    #[test]
    fn gating_leaves_only_dark_counts_in_window() {
        let mut c = base(1);
        c.pump_power_mw = 0.0;
        c.detectors.idler.dark_rate_hz = 20_000.0;
        c.detectors.signal_a.dark_rate_hz = 500.0;
        c.detectors.signal_b.dark_rate_hz = 500.0;
        c.broadband_noise_rate_hz = 200_000.0;
        c.duration_s = 1.0;
        let window = 10e-6;
        c.pump_gating = Some(PumpGating {
            off_window_s: window,
        });
        let s = generate_run(&c).unwrap();
        let idler = s.channel(CH_IDLER);
        let w = s_to_ps(window);
        let mut inside = 0u64;
        let mut covered = 0i64;
        let mut gate_end = i64::MIN;
        for &t in &idler {
            let from = t.max(gate_end);
            covered += (t + w - from).max(0);
            gate_end = gate_end.max(t + w);
        }
        let mut k = 0;
        for e in s.events().iter().filter(|e| e.channel != CH_IDLER) {
            while k < idler.len() && idler[k] + w < e.timestamp_ps {
                k += 1;
            }
            if k < idler.len() && idler[k] < e.timestamp_ps {
                inside += 1;
            }
        }
        let expected = 1000.0 * covered as f64 / PS_PER_S;
        assert!(
            (inside as f64 - expected).abs() < 4.0 * expected.sqrt() + 2.0,
            "{inside} vs dark-only {expected}"
        );
    }

    #[test]
    fn scan_adds_one_trigger_per_period() {
        let mut c = base(1);
        c.duration_s = 0.2;
        let s = simulate_fc_scan(&c, &ScanConfig::reference()).unwrap();
        assert_eq!(s.count(CH_TRIGGER), 7);
    }

    #[test]
    fn dead_time_spaces_clicks() {
        let mut c = base(1);
        c.pump_power_mw = 0.0;
        c.detectors.idler.dark_rate_hz = 1e6;
        c.detectors.idler.dead_time_s = 50e-9;
        c.duration_s = 0.05;
        let t = generate_run(&c).unwrap().channel(CH_IDLER);
        assert!(t.windows(2).all(|w| w[1] - w[0] >= 50_000));
    }
}
