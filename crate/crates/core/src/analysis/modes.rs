//! Per-mode analysis of filter-cavity scans: gating idler clicks by scan
//! phase, comparing spectra, and the neighbour cross-talk correction.

use serde::{Deserialize, Serialize};

use super::coincidence::check_sorted;
use crate::error::{Error, Result};
use crate::spectral::{fp_transmission, BiphotonSpectrum};

/// Splits idler clicks by their time since the last trigger. Windows are
/// `[start, end)` offsets in ps; clicks before the first trigger or outside
/// every window are dropped. Output `k` belongs to window `k`.
pub fn gate_idler_by_scan(
    idler: &[i64],
    triggers: &[i64],
    mode_windows: &[(i64, i64)],
) -> Result<Vec<Vec<i64>>> {
    check_sorted(idler)?;
    check_sorted(triggers)?;
    let mut order: Vec<usize> = (0..mode_windows.len()).collect();
    order.sort_by_key(|&k| mode_windows[k]);
    for &k in &order {
        let (s, e) = mode_windows[k];
        if e < s {
            return Err(Error::invalid(
                "mode_windows",
                format!("window [{s}, {e}) is reversed"),
            ));
        }
    }
    for w in order.windows(2) {
        let (a, b) = (mode_windows[w[0]], mode_windows[w[1]]);
        if b.0 < a.1 {
            return Err(Error::OverlappingWindows {
                a_start: a.0,
                a_end: a.1,
                b_start: b.0,
                b_end: b.1,
            });
        }
    }
    let starts: Vec<i64> = order.iter().map(|&k| mode_windows[k].0).collect();
    let mut out = vec![Vec::new(); mode_windows.len()];
    let mut trig = 0usize;
    for &t in idler {
        while trig < triggers.len() && triggers[trig] <= t {
            trig += 1;
        }
        if trig == 0 {
            continue;
        }
        let offset = t - triggers[trig - 1];
        let pos = starts.partition_point(|&s| s <= offset);
        if pos == 0 {
            continue;
        }
        let k = order[pos - 1];
        if offset < mode_windows[k].1 {
            out[k].push(t);
        }
    }
    Ok(out)
}

/// Counts of clicks versus time since the last trigger, `bins` equal bins
/// over `[0, period)`. Clicks before the first trigger or a full period
/// past the last one are dropped.
pub fn trigger_referenced_histogram(
    idler: &[i64],
    triggers: &[i64],
    period_ps: i64,
    bins: usize,
) -> Result<Vec<u64>> {
    check_sorted(idler)?;
    check_sorted(triggers)?;
    if period_ps <= 0 || bins == 0 {
        return Err(Error::invalid("period_ps, bins", "must be > 0"));
    }
    let mut out = vec![0u64; bins];
    let mut trig = 0usize;
    for &t in idler {
        while trig < triggers.len() && triggers[trig] <= t {
            trig += 1;
        }
        if trig == 0 {
            continue;
        }
        let offset = t - triggers[trig - 1];
        if offset < period_ps {
            out[(offset as i128 * bins as i128 / period_ps as i128) as usize] += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub value: f64,
    pub error: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalized scalar product of two nonnegative vectors.
pub fn spectral_overlap(v1: &[f64], v2: &[f64]) -> Result<f64> {
    Ok(spectral_overlap_with_errors(v1, None, v2, None)?.value)
}

/// Overlap with first-order error propagation of independent per-entry
/// errors. Missing errors count as zero.
pub fn spectral_overlap_with_errors(
    v1: &[f64],
    e1: Option<&[f64]>,
    v2: &[f64],
    e2: Option<&[f64]>,
) -> Result<Overlap> {
    if v1.len() != v2.len() {
        return Err(Error::invalid("vectors", "lengths differ"));
    }
    if v1.iter().chain(v2).any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("vectors", "entries must be nonnegative"));
    }
    let (n1, n2) = (norm(v1), norm(v2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::invalid("vectors", "zero vector"));
    }
    let dot: f64 = v1.iter().zip(v2).map(|(a, b)| a * b).sum();
    let value = dot / (n1 * n2);
    let mut var = 0.0;
    for k in 0..v1.len() {
        let d1 = v2[k] / (n1 * n2) - value * v1[k] / (n1 * n1);
        let d2 = v1[k] / (n1 * n2) - value * v2[k] / (n2 * n2);
        let s1 = e1.map_or(0.0, |e| e[k]);
        let s2 = e2.map_or(0.0, |e| e[k]);
        var += d1 * d1 * s1 * s1 + d2 * d2 * s2 * s2;
    }
    Ok(Overlap {
        value,
        error: var.sqrt(),
    })
}

/// Overlap of two count vectors with Poisson errors.
pub fn spectral_overlap_counts(c1: &[u64], c2: &[u64]) -> Result<Overlap> {
    let v1: Vec<f64> = c1.iter().map(|&c| c as f64).collect();
    let v2: Vec<f64> = c2.iter().map(|&c| c as f64).collect();
    let e1: Vec<f64> = v1.iter().map(|v| v.sqrt()).collect();
    let e2: Vec<f64> = v2.iter().map(|v| v.sqrt()).collect();
    spectral_overlap_with_errors(&v1, Some(&e1), &v2, Some(&e2))
}

/// g2 expected when the filter sits on `target_mode` of a comb whose modes
/// leak through its Lorentzian tail.
///
/// Heralds from neighbour `k` arrive with relative weight
/// `w_k / w_t = a_k T_k / a_t`; their correlated coincidences do not belong to
/// the target pair and count as background, scaled by that mode's own g2:
/// `g = g_t / (1 + sum_k (w_k / w_t) g_k)`. Modes missing from
/// `per_mode_g2` take the target's value.
pub fn crosstalk_expected_g2(
    source: &BiphotonSpectrum,
    fc_linewidth_hz: f64,
    per_mode_g2: &[(i32, f64)],
    target_mode: i32,
) -> Result<f64> {
    let a_t = source.amplitude(target_mode);
    if a_t <= 0.0 {
        return Err(Error::invalid(
            "target_mode",
            format!("mode {target_mode} is not in the source"),
        ));
    }
    let g_of = |m: i32| per_mode_g2.iter().find(|p| p.0 == m).map(|p| p.1);
    let g_t = g_of(target_mode)
        .ok_or_else(|| Error::invalid("per_mode_g2", "no value for the target mode"))?;
    if !(fc_linewidth_hz > 0.0) {
        return Ok(g_t);
    }
    let f_t = source.mode_frequency(target_mode);
    let leak: f64 = source
        .modes()
        .iter()
        .filter(|m| m.index != target_mode)
        .map(|m| {
            let w = m.amplitude
                * fp_transmission(f_t, fc_linewidth_hz, source.mode_frequency(m.index))
                / a_t;
            w * g_of(m.index).unwrap_or(g_t)
        })
        .sum();
    Ok(g_t / (1.0 + leak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{
        SpectralMode, REFERENCE_FC_LINEWIDTH_HZ, REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ,
    };
    use proptest::prelude::*;

    #[test]
    fn full_period_window_is_identity() {
        let idler: Vec<i64> = (0..100).map(|k| k * 37).collect();
        let out = gate_idler_by_scan(&idler, &[0, 1000, 2000, 3000], &[(0, 1000)]).unwrap();
        assert_eq!(out[0], idler);
    }

    #[test]
    fn overlapping_windows_rejected() {
        let e = gate_idler_by_scan(&[1], &[0], &[(0, 10), (5, 20)]).unwrap_err();
        assert!(matches!(e, Error::OverlappingWindows { .. }));
    }

    proptest! {
        #[test]
        fn disjoint_windows_partition(mut idler in prop::collection::vec(0i64..10_000, 0..300), cuts in prop::collection::btree_set(1i64..999, 2..8)) {
            idler.sort_unstable();
            let c: Vec<i64> = cuts.into_iter().collect();
            let windows: Vec<(i64, i64)> = c.windows(2).step_by(2).map(|w| (w[0], w[1])).collect();
            let triggers: Vec<i64> = (0..10).map(|k| k * 1000).collect();
            let out = gate_idler_by_scan(&idler, &triggers, &windows).unwrap();
            let mut all: Vec<i64> = out.iter().flatten().copied().collect();
            all.sort_unstable();
            let total: usize = out.iter().map(|v| v.len()).sum();
            prop_assert_eq!(total, all.len());
            for t in &all {
                prop_assert!(idler.binary_search(t).is_ok());
            }
            for (k, v) in out.iter().enumerate() {
                for t in v {
                    let off = t % 1000;
                    prop_assert!(off >= windows[k].0 && off < windows[k].1);
                }
            }
        }

        #[test]
        fn overlap_is_scale_invariant(v1 in prop::collection::vec(0.01f64..10.0, 1..20), alpha in 0.01f64..100.0) {
            let v2: Vec<f64> = v1.iter().rev().copied().collect();
            let scaled: Vec<f64> = v1.iter().map(|x| x * alpha).collect();
            let a = spectral_overlap(&v1, &v2).unwrap();
            let b = spectral_overlap(&scaled, &v2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_examples() {
        assert!((spectral_overlap(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(spectral_overlap(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(
            (spectral_overlap(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2)
                .abs()
                < 1e-15
        );
        assert!(spectral_overlap(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn reference_source() -> BiphotonSpectrum {
        let amps = [1.0, 0.60, 0.45, 0.25, 0.40, 0.40, 0.15, 0.05];
        BiphotonSpectrum::new(
            REFERENCE_FSR_HZ,
            REFERENCE_LINEWIDTH_HZ,
            (-7i32..=7)
                .map(|i| SpectralMode {
                    index: i,
                    amplitude: amps[i.unsigned_abs() as usize],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn crosstalk_limits() {
        let single =
            BiphotonSpectrum::equal_modes(REFERENCE_FSR_HZ, REFERENCE_LINEWIDTH_HZ, 1).unwrap();
        assert_eq!(
            crosstalk_expected_g2(&single, 80e6, &[(0, 15.8)], 0).unwrap(),
            15.8
        );
        assert_eq!(
            crosstalk_expected_g2(&reference_source(), 0.0, &[(0, 15.8)], 0).unwrap(),
            15.8
        );
    }

    #[test]
    fn crosstalk_measured_value() {
        let g = crosstalk_expected_g2(
            &reference_source(),
            REFERENCE_FC_LINEWIDTH_HZ,
            &[(0, 15.8)],
            0,
        )
        .unwrap();
        // direct sum: 2 * sum_k a_k T(k FSR) = 0.03623
        assert!((g - 15.8 / (1.0 + 15.8 * 0.036_23)).abs() < 0.01, "{g}");
        assert!((g / 9.8 - 1.0).abs() < 0.15);
    }
}
