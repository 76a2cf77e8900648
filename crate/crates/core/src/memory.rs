//! Per-mode model of the prepared memory: spectral pits, AFC echoes and the
//! absorbing background, plus the preparation-power calibration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{BiphotonSpectrum, PreparationSpectrum};
use crate::time::s_to_ps;

/// AFC storage time of the reference comb.
pub const REFERENCE_TAU_S: f64 = 3.5e-6;
/// Echo efficiency at nominal preparation power.
pub const REFERENCE_AFC_EFFICIENCY: f64 = 0.085;
/// Preparation power per mode that the calibration axis calls 1.
pub const NOMINAL_POWER_PER_MODE_W: f64 = 160e-6;

/// What the memory does to a photon in one spectral mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemoryAction {
    /// Transparency window.
    Pit { transmission: f64 },
    /// Atomic frequency comb: echo after `delay_s`, unabsorbed leakage at the
    /// input time.
    Afc {
        efficiency: f64,
        delay_s: f64,
        leakage: f64,
    },
    /// Unprepared absorption line.
    Absorb { residual: f64 },
}

impl MemoryAction {
    fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} not in [0, 1]")))
            }
        };
        match *self {
            MemoryAction::Pit { transmission } => unit("transmission", transmission),
            MemoryAction::Absorb { residual } => unit("residual", residual),
            MemoryAction::Afc {
                efficiency,
                delay_s,
                leakage,
            } => {
                unit("efficiency", efficiency)?;
                unit("leakage", leakage)?;
                if efficiency + leakage > 1.0 + 1e-12 {
                    return Err(Error::invalid("leakage", "efficiency + leakage exceeds 1"));
                }
                if !(delay_s > 0.0 && delay_s.is_finite()) {
                    return Err(Error::invalid("delay_s", "must be > 0"));
                }
                Ok(())
            }
        }
    }

    /// Echo probability.
    pub fn echo_probability(&self) -> f64 {
        match *self {
            MemoryAction::Afc { efficiency, .. } => efficiency,
            _ => 0.0,
        }
    }

    /// Probability of leaving the memory at the input time.
    pub fn transmit_probability(&self) -> f64 {
        match *self {
            MemoryAction::Pit { transmission } => transmission,
            MemoryAction::Afc { leakage, .. } => leakage,
            MemoryAction::Absorb { residual } => residual,
        }
    }

    pub fn delay_ps(&self) -> Option<i64> {
        match *self {
            MemoryAction::Afc { delay_s, .. } => Some(s_to_ps(delay_s)),
            _ => None,
        }
    }

    /// Which outcome a uniform draw `u` in [0, 1) selects.
    pub fn outcome_kind(&self, u: f64) -> OutcomeKind {
        let echo = self.echo_probability();
        if u < echo {
            OutcomeKind::Echo
        } else if u < echo + self.transmit_probability() {
            OutcomeKind::Transmitted
        } else {
            OutcomeKind::Lost
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Transmitted,
    Echo,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryOutcome {
    Transmitted { t_ps: i64 },
    Echo { t_ps: i64 },
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramEntry {
    pub index: i32,
    pub action: MemoryAction,
}

/// Memory transfer actions keyed by mode index. Modes without an entry are
/// absorbed with the program's residual transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MemoryProgramDoc", into = "MemoryProgramDoc")]
pub struct MemoryProgram {
    entries: BTreeMap<i32, MemoryAction>,
    unprepared: MemoryAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryProgramDoc {
    #[serde(default)]
    unprepared_residual: f64,
    entries: Vec<ProgramEntry>,
}

impl TryFrom<MemoryProgramDoc> for MemoryProgram {
    type Error = Error;

    fn try_from(doc: MemoryProgramDoc) -> Result<Self> {
        MemoryProgram::new(doc.entries, doc.unprepared_residual)
    }
}

impl From<MemoryProgram> for MemoryProgramDoc {
    fn from(p: MemoryProgram) -> Self {
        let unprepared_residual = p.unprepared.transmit_probability();
        MemoryProgramDoc {
            unprepared_residual,
            entries: p
                .entries
                .into_iter()
                .map(|(index, action)| ProgramEntry { index, action })
                .collect(),
        }
    }
}

impl MemoryProgram {
    pub fn new(entries: Vec<ProgramEntry>, unprepared_residual: f64) -> Result<Self> {
        let unprepared = MemoryAction::Absorb {
            residual: unprepared_residual,
        };
        unprepared.validate()?;
        let mut map = BTreeMap::new();
        for e in entries {
            e.action.validate()?;
            if map.insert(e.index, e.action).is_some() {
                return Err(Error::invalid(
                    "entries",
                    format!("duplicate mode index {}", e.index),
                ));
            }
        }
        Ok(MemoryProgram {
            entries: map,
            unprepared,
        })
    }

    /// Everything absorbed.
    pub fn absorbing() -> Self {
        MemoryProgram {
            entries: BTreeMap::new(),
            unprepared: MemoryAction::Absorb { residual: 0.0 },
        }
    }

    /// No memory in the path: every mode passes at its input time.
    pub fn bypass() -> Self {
        MemoryProgram {
            entries: BTreeMap::new(),
            unprepared: MemoryAction::Absorb { residual: 1.0 },
        }
    }

    pub fn action(&self, mode: i32) -> MemoryAction {
        self.entries.get(&mode).copied().unwrap_or(self.unprepared)
    }

    /// Explicitly prepared modes.
    pub fn prepared(&self) -> impl Iterator<Item = (i32, MemoryAction)> + '_ {
        self.entries.iter().map(|(&i, &a)| (i, a))
    }

    pub fn is_prepared(&self, mode: i32) -> bool {
        self.entries.contains_key(&mode)
    }

    /// Replaces every echo efficiency, keeping delays and leakage.
    pub fn with_flat_afc_efficiency(&self, efficiency: f64) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|(&index, &action)| ProgramEntry {
                index,
                action: match action {
                    MemoryAction::Afc {
                        delay_s, leakage, ..
                    } => MemoryAction::Afc {
                        efficiency,
                        delay_s,
                        leakage,
                    },
                    other => other,
                },
            })
            .collect();
        MemoryProgram::new(entries, self.unprepared.transmit_probability())
    }
}

/// Stochastic realization of the memory action for one photon. `u` is a
/// uniform draw in [0, 1) supplied by the caller.
pub fn apply_memory(program: &MemoryProgram, mode: i32, t_in_ps: i64, u: f64) -> MemoryOutcome {
    let action = program.action(mode);
    match action.outcome_kind(u) {
        OutcomeKind::Echo => MemoryOutcome::Echo {
            t_ps: t_in_ps + action.delay_ps().unwrap_or(0),
        },
        OutcomeKind::Transmitted => MemoryOutcome::Transmitted { t_ps: t_in_ps },
        OutcomeKind::Lost => MemoryOutcome::Lost,
    }
}

/// Piecewise-linear table mapping relative preparation power to an
/// efficiency. Outside the table the end values are held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct CalibrationTable {
    points: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for CalibrationTable {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        CalibrationTable::new(points)
    }
}

impl From<CalibrationTable> for Vec<(f64, f64)> {
    fn from(t: CalibrationTable) -> Self {
        t.points
    }
}

impl CalibrationTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("calibration", "table is empty"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    "calibration",
                    "relative powers must be strictly increasing",
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::invalid(
                    "calibration",
                    "efficiencies must be nondecreasing",
                ));
            }
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
            return Err(Error::invalid(
                "calibration",
                "efficiencies must lie in [0, 1]",
            ));
        }
        Ok(CalibrationTable { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, relative_power: f64) -> f64 {
        let pts = &self.points;
        if relative_power <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if relative_power >= last.0 {
            return last.1;
        }
        let k = pts.partition_point(|p| p.0 <= relative_power);
        let (x0, y0) = pts[k - 1];
        let (x1, y1) = pts[k];
        y0 + (y1 - y0) * (relative_power - x0) / (x1 - x0)
    }
}

/// AFC efficiency and pit transmission versus relative preparation power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCurve {
    pub afc: CalibrationTable,
    pub pit: CalibrationTable,
}

impl Default for CalibrationCurve {
    /// Hand-sampled through the anchors 8.5 % at nominal power and 3.5 % at
    /// one tenth of it; the pit saturates early.
    fn default() -> Self {
        CalibrationCurve {
            afc: CalibrationTable::new(vec![
                (0.0, 0.0),
                (0.05, 0.020),
                (0.1, 0.035),
                (0.15, 0.075),
                (0.2, 0.082),
                (0.3, 0.084),
                (1.0, REFERENCE_AFC_EFFICIENCY),
            ])
            .expect("static table"),
            pit: CalibrationTable::new(vec![(0.0, 0.0), (0.05, 0.5), (0.1, 0.6), (1.0, 0.6)])
                .expect("static table"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramKind {
    Pit,
    Afc,
}

/// Optical power available for preparation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationPower {
    /// Total power entering the EOM chain.
    pub input_w: f64,
    /// Per-line power defined as relative power 1.
    pub nominal_per_mode_w: f64,
}

impl PreparationPower {
    /// Input power chosen so that a line carrying `line_fraction` of it sits
    /// at relative power 1.
    pub fn normalized_to(line_fraction: f64) -> Self {
        PreparationPower {
            input_w: NOMINAL_POWER_PER_MODE_W / line_fraction,
            nominal_per_mode_w: NOMINAL_POWER_PER_MODE_W,
        }
    }

    pub fn relative(&self, line_power: f64) -> f64 {
        line_power * self.input_w / self.nominal_per_mode_w
    }
}

/// Prepares one pit or comb per preparation line, with efficiency read from
/// the calibration at that line's relative power.
pub fn build_program(
    prep: &PreparationSpectrum,
    power: PreparationPower,
    calib: &CalibrationCurve,
    kind: ProgramKind,
    tau_s: f64,
) -> Result<MemoryProgram> {
    if kind == ProgramKind::Afc && !(tau_s > 0.0 && tau_s.is_finite()) {
        return Err(Error::invalid(
            "tau_s",
            format!("must be > 0 for AFC, got {tau_s}"),
        ));
    }
    if !(power.input_w >= 0.0) || !(power.nominal_per_mode_w > 0.0) {
        return Err(Error::invalid(
            "power",
            "input >= 0 and nominal > 0 required",
        ));
    }
    let entries = prep
        .lines()
        .iter()
        .filter(|l| l.power > 0.0)
        .map(|l| {
            let rel = power.relative(l.power);
            let action = match kind {
                ProgramKind::Afc => MemoryAction::Afc {
                    efficiency: calib.afc.eval(rel),
                    delay_s: tau_s,
                    leakage: 0.0,
                },
                ProgramKind::Pit => MemoryAction::Pit {
                    transmission: calib.pit.eval(rel),
                },
            };
            ProgramEntry {
                index: l.index,
                action,
            }
        })
        .collect();
    MemoryProgram::new(entries, 0.0)
}

fn primary_efficiency(action: MemoryAction) -> f64 {
    match action {
        MemoryAction::Afc { efficiency, .. } => efficiency,
        MemoryAction::Pit { transmission } => transmission,
        MemoryAction::Absorb { .. } => 0.0,
    }
}

/// Number of effective modes: prepared-mode count rate in units of the
/// central mode's rate.
pub fn effective_modes(source: &BiphotonSpectrum, program: &MemoryProgram) -> Result<f64> {
    let central = source.amplitude(0)
        * program
            .entries
            .get(&0)
            .map_or(0.0, |&a| primary_efficiency(a));
    if central <= 0.0 {
        return Err(Error::ZeroCounts("central mode amplitude x efficiency"));
    }
    let total: f64 = program
        .prepared()
        .map(|(i, a)| source.amplitude(i) * primary_efficiency(a))
        .sum();
    Ok(total / central)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{
        PreparationLine, SpectralMode, REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_source() -> BiphotonSpectrum {
        let amps = [1.0, 0.60, 0.45, 0.25, 0.40, 0.40, 0.15, 0.05];
        let modes = (-7i32..=7)
            .map(|i| SpectralMode {
                index: i,
                amplitude: amps[i.unsigned_abs() as usize],
            })
            .collect();
        BiphotonSpectrum::new(REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ, modes).unwrap()
    }

    #[test]
    fn single_line_gives_nominal_efficiency() {
        let prep = PreparationSpectrum::single_line(REFERENCE_FSR_HZ);
        let p = build_program(
            &prep,
            PreparationPower::normalized_to(1.0),
            &CalibrationCurve::default(),
            ProgramKind::Afc,
            REFERENCE_TAU_S,
        )
        .unwrap();
        match p.action(0) {
            MemoryAction::Afc {
                efficiency,
                delay_s,
                ..
            } => {
                assert_relative_eq!(efficiency, 0.085);
                assert_eq!(delay_s, 3.5e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.action(3), MemoryAction::Absorb { residual: 0.0 });
    }

    #[test]
    fn empty_preparation_absorbs_everything() {
        let p = build_program(
            &PreparationSpectrum::empty(REFERENCE_FSR_HZ),
            PreparationPower::normalized_to(1.0),
            &CalibrationCurve::default(),
            ProgramKind::Pit,
            0.0,
        )
        .unwrap();
        assert_eq!(p.prepared().count(), 0);
        assert_eq!(p.action(0).transmit_probability(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_tau_for_afc() {
        let prep = PreparationSpectrum::single_line(REFERENCE_FSR_HZ);
        let r = build_program(
            &prep,
            PreparationPower::normalized_to(1.0),
            &CalibrationCurve::default(),
            ProgramKind::Afc,
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn weak_outer_lines_get_lower_efficiency() {
        let mut lines: Vec<PreparationLine> = (-4..=4)
            .map(|i| PreparationLine {
                index: i,
                power: 0.095,
            })
            .collect();
        for (i, p) in [(5, 0.025), (6, 0.018), (7, 0.0065)] {
            lines.push(PreparationLine { index: i, power: p });
            lines.push(PreparationLine {
                index: -i,
                power: p,
            });
        }
        let prep = PreparationSpectrum::new(REFERENCE_FSR_HZ, lines).unwrap();
        let p = build_program(
            &prep,
            PreparationPower::normalized_to(0.095),
            &CalibrationCurve::default(),
            ProgramKind::Afc,
            REFERENCE_TAU_S,
        )
        .unwrap();
        for i in -4..=4 {
            assert_relative_eq!(p.action(i).echo_probability(), 0.085, epsilon = 1e-12);
        }
        assert!(p.action(7).echo_probability() < 0.5 * 0.085);
        assert!(p.action(-7).echo_probability() < p.action(6).echo_probability());
    }

    #[test]
    fn effective_mode_counts() {
        let src = reference_source();
        let only_centre = MemoryProgram::new(
            vec![ProgramEntry {
                index: 0,
                action: MemoryAction::Pit { transmission: 0.6 },
            }],
            0.0,
        )
        .unwrap();
        assert_eq!(effective_modes(&src, &only_centre).unwrap(), 1.0);

        let flat = MemoryProgram::new(
            (-7..=7)
                .map(|i| ProgramEntry {
                    index: i,
                    action: MemoryAction::Afc {
                        efficiency: 0.085,
                        delay_s: REFERENCE_TAU_S,
                        leakage: 0.0,
                    },
                })
                .collect(),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(effective_modes(&src, &flat).unwrap(), 5.6, epsilon = 1e-9);
        assert!(effective_modes(&src, &MemoryProgram::absorbing()).is_err());
    }

    #[test]
    fn memory_outcomes() {
        let pit = MemoryProgram::new(
            vec![ProgramEntry {
                index: 0,
                action: MemoryAction::Pit { transmission: 1.0 },
            }],
            0.0,
        )
        .unwrap();
        for u in [0.0, 0.5, 0.999_999] {
            assert_eq!(
                apply_memory(&pit, 0, 1234, u),
                MemoryOutcome::Transmitted { t_ps: 1234 }
            );
        }
        let afc = MemoryProgram::new(
            vec![ProgramEntry {
                index: 0,
                action: MemoryAction::Afc {
                    efficiency: 1.0,
                    delay_s: 3.5e-6,
                    leakage: 0.0,
                },
            }],
            0.0,
        )
        .unwrap();
        assert_eq!(
            apply_memory(&afc, 0, 1_000_000, 0.3),
            MemoryOutcome::Echo { t_ps: 4_500_000 }
        );
    }

    #[test]
    fn echo_fraction_matches_binomial() {
        use rand::{Rng, SeedableRng};
        let afc = MemoryProgram::new(
            vec![ProgramEntry {
                index: 0,
                action: MemoryAction::Afc {
                    efficiency: 0.085,
                    delay_s: 3.5e-6,
                    leakage: 0.0,
                },
            }],
            0.0,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let echoes = (0..n)
            .filter(|_| {
                matches!(
                    apply_memory(&afc, 0, 0, rng.random()),
                    MemoryOutcome::Echo { .. }
                )
            })
            .count() as f64;
        let sigma = (n as f64 * 0.085 * 0.915).sqrt();
        assert!((echoes - 0.085 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn invalid_actions_rejected() {
        let bad = vec![ProgramEntry {
            index: 0,
            action: MemoryAction::Afc {
                efficiency: 0.7,
                delay_s: 1e-6,
                leakage: 0.5,
            },
        }];
        assert!(MemoryProgram::new(bad, 0.0).is_err());
        assert!(CalibrationTable::new(vec![(0.0, 0.1), (0.0, 0.2)]).is_err());
        assert!(CalibrationTable::new(vec![(0.0, 0.3), (1.0, 0.2)]).is_err());
    }

    #[test]
    fn calibration_interpolates_and_clamps() {
        let c = CalibrationCurve::default();
        assert_relative_eq!(c.afc.eval(1.0), 0.085);
        assert_relative_eq!(c.afc.eval(0.1), 0.035);
        assert_relative_eq!(c.afc.eval(0.075), 0.0275);
        assert_relative_eq!(c.afc.eval(5.0), 0.085);
        assert_eq!(c.afc.eval(-1.0), 0.0);
    }

    proptest! {
        #[test]
        fn outcome_probabilities_partition_unit_interval(eff in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let leak = (1.0 - eff) * frac;
            let a = MemoryAction::Afc { efficiency: eff, delay_s: 1e-6, leakage: leak };
            let lost = 1.0 - a.echo_probability() - a.transmit_probability();
            prop_assert!(lost >= -1e-12);
            prop_assert!((a.echo_probability() + a.transmit_probability() + lost - 1.0).abs() < 1e-12);
        }

        #[test]
        fn effective_modes_is_scale_invariant(scale in 0.01f64..1.0) {
            let src = reference_source();
            let prog = |e: f64| MemoryProgram::new(
                (-3..=3).map(|i| ProgramEntry { index: i, action: MemoryAction::Pit { transmission: e * (1.0 - 0.1 * i.abs() as f64) } }).collect(),
                0.0,
            ).unwrap();
            let a = effective_modes(&src, &prog(1.0)).unwrap();
            let b = effective_modes(&src, &prog(scale)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn calibration_is_monotone(x in 0.0f64..2.0, dx in 0.0f64..1.0) {
            let c = CalibrationCurve::default();
            prop_assert!(c.afc.eval(x + dx) >= c.afc.eval(x));
            prop_assert!(c.afc.eval(x) <= 0.085 + 1e-15);
        }
    }
}
