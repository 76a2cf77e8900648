//! Coincidence counting and second-order correlation estimators.
//!
//! All counters walk sorted timestamp lists with a sliding lower pointer, so
//! the cost is O(N + matches) rather than O(N^2).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{ps_to_s, PS_PER_S};

/// Rejects a list that is not nondecreasing.
pub fn check_sorted(ts: &[i64]) -> Result<()> {
    match ts.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted {
            index: i + 1,
            timestamp_ps: ts[i + 1],
        }),
        None => Ok(()),
    }
}

/// Delay histogram of `b - a`. Bins are `[t_min + k w, t_min + (k+1) w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: i64,
    pub t_min_ps: i64,
    pub t_max_ps: i64,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    pub duration_ps: i64,
}

impl CoincidenceHistogram {
    fn empty(
        bin_width_ps: i64,
        range_ps: (i64, i64),
        n_a: u64,
        n_b: u64,
        duration_ps: i64,
    ) -> Result<Self> {
        let (t_min, t_max) = range_ps;
        if bin_width_ps <= 0 {
            return Err(Error::invalid("bin_width", "must be > 0"));
        }
        if t_max <= t_min || (t_max - t_min) % bin_width_ps != 0 {
            return Err(Error::invalid(
                "range",
                format!(
                    "[{t_min}, {t_max}) ps is not a positive multiple of the {bin_width_ps} ps bin"
                ),
            ));
        }
        Ok(CoincidenceHistogram {
            bin_width_ps,
            t_min_ps: t_min,
            t_max_ps: t_max,
            counts: vec![0; ((t_max - t_min) / bin_width_ps) as usize],
            n_a,
            n_b,
            duration_ps,
        })
    }

    pub fn bin_width_s(&self) -> f64 {
        ps_to_s(self.bin_width_ps)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Left edge of bin `k`.
    pub fn bin_start_ps(&self, k: usize) -> i64 {
        self.t_min_ps + k as i64 * self.bin_width_ps
    }

    pub fn bin_center_s(&self, k: usize) -> f64 {
        (self.bin_start_ps(k) as f64 + self.bin_width_ps as f64 / 2.0) / PS_PER_S
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index range of bins fully inside `[start, end)`.
    pub fn bins_in(&self, start_ps: i64, end_ps: i64) -> std::ops::Range<usize> {
        let w = self.bin_width_ps;
        let lo = (start_ps - self.t_min_ps).div_euclid(w)
            + i64::from((start_ps - self.t_min_ps).rem_euclid(w) != 0);
        let hi = (end_ps - self.t_min_ps).div_euclid(w);
        let lo = lo.clamp(0, self.counts.len() as i64) as usize;
        let hi = hi.clamp(0, self.counts.len() as i64) as usize;
        lo..hi.max(lo)
    }

    /// Sum of bins in `[start, end)`; both edges must sit on bin edges.
    pub fn sum_window(&self, start_ps: i64, end_ps: i64) -> Result<u64> {
        let w = self.bin_width_ps;
        if (start_ps - self.t_min_ps) % w != 0 || (end_ps - self.t_min_ps) % w != 0 {
            return Err(Error::invalid("window", "edges must fall on bin edges"));
        }
        if start_ps < self.t_min_ps || end_ps > self.t_max_ps || end_ps < start_ps {
            return Err(Error::invalid("window", "outside the histogram range"));
        }
        Ok(self.counts[self.bins_in(start_ps, end_ps)].iter().sum())
    }

    /// Accidental coincidences expected per bin for uncorrelated streams.
    pub fn accidentals_per_bin(&self) -> f64 {
        self.n_a as f64 * self.n_b as f64 * self.bin_width_ps as f64 / self.duration_ps as f64
    }

    /// Histogram of `(b, a)`: the same pairs with mirrored delays.
    pub fn mirrored(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        CoincidenceHistogram {
            bin_width_ps: self.bin_width_ps,
            t_min_ps: -self.t_max_ps,
            t_max_ps: -self.t_min_ps,
            counts,
            n_a: self.n_b,
            n_b: self.n_a,
            duration_ps: self.duration_ps,
        }
    }

    /// Bin-wise sum of two histograms with identical geometry.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.bin_width_ps != other.bin_width_ps
            || self.t_min_ps != other.t_min_ps
            || self.t_max_ps != other.t_max_ps
        {
            return Err(Error::invalid("merge", "histogram geometries differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

fn accumulate(a: &[i64], b: &[i64], hist: &mut CoincidenceHistogram) {
    let (t_min, t_max, w) = (hist.t_min_ps, hist.t_max_ps, hist.bin_width_ps);
    let mut lo = 0usize;
    for &ta in a {
        while lo < b.len() && b[lo] - ta < t_min {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] - ta < t_max {
            hist.counts[((b[j] - ta - t_min) / w) as usize] += 1;
            j += 1;
        }
    }
}

/// Histogram of delays `t_b - t_a` within `range_ps = [t_min, t_max)`.
/// `duration_ps` is the acquisition time used for normalization.
pub fn coincidence_histogram(
    a: &[i64],
    b: &[i64],
    bin_width_ps: i64,
    range_ps: (i64, i64),
    duration_ps: i64,
) -> Result<CoincidenceHistogram> {
    check_sorted(a)?;
    check_sorted(b)?;
    let mut h = CoincidenceHistogram::empty(
        bin_width_ps,
        range_ps,
        a.len() as u64,
        b.len() as u64,
        duration_ps,
    )?;
    accumulate(a, b, &mut h);
    Ok(h)
}

/// Same result as [`coincidence_histogram`], accumulated over chunks of `a`
/// in parallel and merged bin-wise.
pub fn coincidence_histogram_par(
    a: &[i64],
    b: &[i64],
    bin_width_ps: i64,
    range_ps: (i64, i64),
    duration_ps: i64,
) -> Result<CoincidenceHistogram> {
    check_sorted(a)?;
    check_sorted(b)?;
    let empty = CoincidenceHistogram::empty(
        bin_width_ps,
        range_ps,
        a.len() as u64,
        b.len() as u64,
        duration_ps,
    )?;
    let chunk = (a.len() / (4 * rayon::current_num_threads()).max(1)).max(4096);
    let partials: Vec<CoincidenceHistogram> = a
        .par_chunks(chunk)
        .map(|c| {
            let mut h = empty.clone();
            let first = b.partition_point(|&t| t - c[0] < range_ps.0);
            accumulate(c, &b[first..], &mut h);
            h
        })
        .collect();
    let mut out = empty;
    for p in &partials {
        out.merge(p)?;
    }
    Ok(out)
}

/// Number of pairs with `t_b - t_a` in `[start, end)`.
pub fn count_pairs_in_window(a: &[i64], b: &[i64], start_ps: i64, end_ps: i64) -> u64 {
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut n = 0u64;
    for &ta in a {
        while lo < b.len() && b[lo] - ta < start_ps {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < b.len() && b[hi] - ta < end_ps {
            hi += 1;
        }
        n += (hi - lo) as u64;
    }
    n
}

/// Merges several sorted lists into one sorted list.
pub fn merge_sorted(lists: &[&[i64]]) -> Vec<i64> {
    let mut out: Vec<i64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    pub error: f64,
    pub window_s: f64,
    pub offset_s: f64,
    pub n_c: u64,
    pub n_a: u64,
    pub n_b: u64,
    /// Accidental coincidences expected in the window.
    pub accidentals: f64,
}

fn g2_from_counts(
    n_c: u64,
    n_a: u64,
    n_b: u64,
    window_ps: i64,
    offset_ps: i64,
    duration_ps: i64,
) -> Result<G2Estimate> {
    if window_ps <= 0 {
        return Err(Error::invalid("window", "must be > 0"));
    }
    if duration_ps <= 0 {
        return Err(Error::invalid("duration", "must be > 0"));
    }
    if n_a == 0 {
        return Err(Error::ZeroCounts("N_a"));
    }
    if n_b == 0 {
        return Err(Error::ZeroCounts("N_b"));
    }
    let accidentals = n_a as f64 * n_b as f64 * window_ps as f64 / duration_ps as f64;
    let value = n_c as f64 / accidentals;
    // With no coincidences the error is that of a single count.
    let rel_c = 1.0 / (n_c.max(1) as f64);
    let scale = if n_c == 0 { 1.0 / accidentals } else { value };
    let error = scale * (rel_c + 1.0 / n_a as f64 + 1.0 / n_b as f64).sqrt();
    Ok(G2Estimate {
        value,
        error,
        window_s: ps_to_s(window_ps),
        offset_s: ps_to_s(offset_ps),
        n_c,
        n_a,
        n_b,
        accidentals,
    })
}

/// `g2 = N_c T / (N_a N_b dt)` with `N_c` the pairs whose delay `t_b - t_a`
/// lies in `[offset, offset + window)`.
pub fn g2_cross(
    a: &[i64],
    b: &[i64],
    window_ps: i64,
    offset_ps: i64,
    duration_ps: i64,
) -> Result<G2Estimate> {
    check_sorted(a)?;
    check_sorted(b)?;
    if window_ps <= 0 {
        return Err(Error::invalid("window", "must be > 0"));
    }
    let n_c = count_pairs_in_window(a, b, offset_ps, offset_ps + window_ps);
    g2_from_counts(
        n_c,
        a.len() as u64,
        b.len() as u64,
        window_ps,
        offset_ps,
        duration_ps,
    )
}

/// [`g2_cross`] evaluated on a histogram; the window must sit on bin edges.
pub fn g2_cross_from_histogram(
    h: &CoincidenceHistogram,
    window_ps: i64,
    offset_ps: i64,
) -> Result<G2Estimate> {
    let n_c = h.sum_window(offset_ps, offset_ps + window_ps)?;
    g2_from_counts(n_c, h.n_a, h.n_b, window_ps, offset_ps, h.duration_ps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldedG2 {
    pub value: f64,
    pub error: f64,
    pub n_i: u64,
    pub n_ia: u64,
    pub n_ib: u64,
    pub n_iab: u64,
    pub window_s: f64,
    pub offset_s: f64,
}

/// Signal autocorrelation conditioned on idler clicks. Each herald opens the
/// window `[t_i + offset, t_i + offset + window)`; a detector counts at most
/// once per herald.
pub fn heralded_g2(
    idler: &[i64],
    sig_a: &[i64],
    sig_b: &[i64],
    window_ps: i64,
    offset_ps: i64,
) -> Result<HeraldedG2> {
    check_sorted(idler)?;
    check_sorted(sig_a)?;
    check_sorted(sig_b)?;
    if window_ps <= 0 {
        return Err(Error::invalid("window", "must be > 0"));
    }
    let (mut pa, mut pb) = (0usize, 0usize);
    let (mut n_ia, mut n_ib, mut n_iab) = (0u64, 0u64, 0u64);
    for &ti in idler {
        let (lo, hi) = (ti + offset_ps, ti + offset_ps + window_ps);
        while pa < sig_a.len() && sig_a[pa] < lo {
            pa += 1;
        }
        while pb < sig_b.len() && sig_b[pb] < lo {
            pb += 1;
        }
        let a = pa < sig_a.len() && sig_a[pa] < hi;
        let b = pb < sig_b.len() && sig_b[pb] < hi;
        n_ia += u64::from(a);
        n_ib += u64::from(b);
        n_iab += u64::from(a && b);
    }
    if n_ia == 0 {
        return Err(Error::ZeroCounts("N_iA"));
    }
    if n_ib == 0 {
        return Err(Error::ZeroCounts("N_iB"));
    }
    let n_i = idler.len() as u64;
    let base = n_i as f64 / (n_ia as f64 * n_ib as f64);
    let value = n_iab as f64 * base;
    let error = if n_iab == 0 {
        base
    } else {
        value
            * (1.0 / n_iab as f64 + 1.0 / n_ia as f64 + 1.0 / n_ib as f64 + 1.0 / n_i as f64).sqrt()
    };
    Ok(HeraldedG2 {
        value,
        error,
        n_i,
        n_ia,
        n_ib,
        n_iab,
        window_s: ps_to_s(window_ps),
        offset_s: ps_to_s(offset_ps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classicality {
    /// Cauchy-Schwarz ratio `g_si^2 / (g_ss g_ii)`; above 1 is nonclassical.
    pub ratio: f64,
    /// `g_si > 2`, the bound for thermal marginals.
    pub simplified_bound_passed: bool,
}

pub fn classicality_check(g2_si: f64, g2_ss: f64, g2_ii: f64) -> Result<Classicality> {
    if !(g2_si >= 0.0) {
        return Err(Error::invalid("g2_si", "must be >= 0"));
    }
    if !(g2_ss > 0.0) || !(g2_ii > 0.0) {
        return Err(Error::invalid(
            "autocorrelation",
            "g2_ss and g2_ii must be > 0",
        ));
    }
    Ok(Classicality {
        ratio: g2_si * g2_si / (g2_ss * g2_ii),
        simplified_bound_passed: g2_si > 2.0,
    })
}

/// Classical bound on g2_si for N thermal modes.
pub fn multimode_classical_bound(n_modes: f64) -> Result<f64> {
    if !(n_modes > 0.0) {
        return Err(Error::invalid("n_modes", "must be > 0"));
    }
    Ok(1.0 + 1.0 / n_modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(a: &[i64], b: &[i64], lo: i64, hi: i64) -> u64 {
        let mut n = 0;
        for &x in a {
            for &y in b {
                if y - x >= lo && y - x < hi {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn spec_example_histogram() {
        // 100 ps lands in [100, 200), 250 ps in [200, 300).
        let h = coincidence_histogram(&[0], &[100, 250], 100, (0, 300), 1000).unwrap();
        assert_eq!(h.counts, vec![0, 1, 1]);
    }

    #[test]
    fn empty_streams_give_zero_histogram() {
        let h = coincidence_histogram(&[], &[], 10, (-50, 50), 1000).unwrap();
        assert_eq!(h.counts, vec![0; 10]);
    }

    #[test]
    fn unsorted_rejected_with_index() {
        let e = coincidence_histogram(&[0, 5, 3], &[1], 1, (0, 2), 10).unwrap_err();
        assert!(matches!(
            e,
            Error::Unsorted {
                index: 2,
                timestamp_ps: 3
            }
        ));
    }

    #[test]
    fn range_must_be_whole_bins() {
        assert!(coincidence_histogram(&[0], &[1], 3, (0, 10), 10).is_err());
    }

    #[test]
    fn self_correlation_one_event_per_window() {
        let a: Vec<i64> = (0..100).map(|k| k * 1000).collect();
        let g = g2_cross(&a, &a, 10, 0, 100_000).unwrap();
        assert_eq!(g.n_c, 100);
        assert!((g.value - 100_000.0 / (100.0 * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_singles_rejected() {
        assert!(matches!(
            g2_cross(&[], &[1], 10, 0, 100),
            Err(Error::ZeroCounts(_))
        ));
        assert!(matches!(
            g2_cross(&[1], &[], 10, 0, 100),
            Err(Error::ZeroCounts(_))
        ));
        assert!(heralded_g2(&[0], &[], &[1], 10, 0).is_err());
    }

    #[test]
    fn classicality_examples() {
        let c = classicality_check(2.0, 2.0, 2.0).unwrap();
        assert!((c.ratio - 1.0).abs() < 1e-15);
        assert!(!c.simplified_bound_passed);
        assert!(
            classicality_check(4.35, 2.0, 2.0)
                .unwrap()
                .simplified_bound_passed
        );
        assert!((multimode_classical_bound(9.0).unwrap() - 1.111_111_111_111_111).abs() < 1e-12);
        assert!(classicality_check(1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn single_photon_heralds_have_no_triples() {
        let idler: Vec<i64> = (0..1000).map(|k| k * 10_000).collect();
        let a: Vec<i64> = idler.iter().step_by(2).map(|t| t + 5).collect();
        let b: Vec<i64> = idler.iter().skip(1).step_by(2).map(|t| t + 5).collect();
        let g = heralded_g2(&idler, &a, &b, 100, -50).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.error > 0.0);
    }

    fn sorted_vec(max_len: usize) -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(0i64..20_000, 0..max_len).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn histogram_matches_brute_force(a in sorted_vec(200), b in sorted_vec(200), w in 1i64..50, k in 1i64..40, lo in -2000i64..0) {
            let h = coincidence_histogram(&a, &b, w, (lo, lo + k * w), 20_000).unwrap();
            for (i, &c) in h.counts.iter().enumerate() {
                let s = h.bin_start_ps(i);
                prop_assert_eq!(c, brute(&a, &b, s, s + w));
            }
            let hp = coincidence_histogram_par(&a, &b, w, (lo, lo + k * w), 20_000).unwrap();
            prop_assert_eq!(&hp, &h);
        }

        #[test]
        fn mirrored_histogram_is_swapped_histogram(a in sorted_vec(100), b in sorted_vec(100), w in 1i64..30, k in 1i64..30) {
            let lo = -(k / 2) * w;
            let h = coincidence_histogram(&a, &b, w, (lo, lo + k * w), 20_000).unwrap();
            // Swapped delays sit in (-hi, -lo]; a 1 ps shift restores half-open bins.
            let shifted: Vec<i64> = a.iter().map(|t| t - 1).collect();
            let g = coincidence_histogram(&b, &shifted, w, (-(lo + k * w), -lo), 20_000).unwrap();
            prop_assert_eq!(h.mirrored().counts, g.counts);
        }

        #[test]
        fn histogram_and_stream_paths_agree(a in sorted_vec(150), b in sorted_vec(150), w in 1i64..40, m in 1i64..10, off in -30i64..30) {
            let off = off * w;
            let h = coincidence_histogram(&a, &b, w, (-40 * w, 40 * w), 20_000).unwrap();
            if !a.is_empty() && !b.is_empty() {
                let x = g2_cross(&a, &b, m * w, off, 20_000).unwrap();
                let y = g2_cross_from_histogram(&h, m * w, off).unwrap();
                prop_assert_eq!(x.n_c, y.n_c);
                prop_assert_eq!(x.value, y.value);
            }
        }
    }
}
