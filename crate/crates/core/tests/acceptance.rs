//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL` line with the measured values, then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use afcmux::analysis::{
    beat_width_model, classicality_check, count_pairs_in_window, crosstalk_expected_g2, g2_cross,
    heralded_g2, mode_count_bounds,
};
use afcmux::engine::generate_run;
use afcmux::io::encode_events;
use afcmux::io::recipes::{
    echo_efficiency, fig3, fig4ab, fig4cd_with, table_i, RecipeOptions,
    MEASURED_BEAT_WIDTH_ERROR_S, MEASURED_BEAT_WIDTH_S,
};
use afcmux::io::scenario::{
    preset, reference_locked_filter, reference_scenario, reference_source, REFERENCE_JITTER_FWHM_S,
};
use afcmux::io::EventFormat;

fn verdict(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: String) -> bool {
    let ok = pass && elapsed <= limit;
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {} | {detail} | {:.2} s (limit {} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

const SECOND: Duration = Duration::from_secs(1);
const MINUTE: Duration = Duration::from_secs(60);

#[test]
fn criterion_01_echo_efficiency() {
    let t = Instant::now();
    let e = echo_efficiency(&reference_scenario(), &RecipeOptions::default(), 1e6).unwrap();
    let pass = (e.ratio - 0.085).abs() <= 0.005;
    let detail = format!(
        "eta = {:.4} +- {:.4}, target 0.085 +- 0.005",
        e.ratio, e.error
    );
    assert!(verdict(1, pass, t.elapsed(), MINUTE, detail));
}

#[test]
fn criterion_02_beating_periodicity() {
    let t = Instant::now();
    let r = fig3(&RecipeOptions::default()).unwrap();
    let mm = &r.multimode_echo;
    let sm = &r.single_mode_echo;
    let period = mm.period_s.unwrap_or(f64::NAN);
    let period_ok = (period - 3.83e-9).abs() <= 100e-12;
    let peak_ok = (mm.fsr_peak.frequency_hz - 261.1e6).abs() <= mm.resolution_hz;
    let contrast_ok = mm.fsr_peak.ratio() >= 2.0;
    let sm_ok = sm.fsr_peak.ratio() < 2.0;
    let detail = format!(
        "period {:.3} ns (3.83 +- 0.1); MM FFT peak {:.1} MHz (261.1 +- {:.1}), {:.1}x background; SM {:.2}x (< 2)",
        period * 1e9,
        mm.fsr_peak.frequency_hz / 1e6,
        mm.resolution_hz / 1e6,
        mm.fsr_peak.ratio(),
        sm.fsr_peak.ratio()
    );
    assert!(verdict(
        2,
        period_ok && peak_ok && contrast_ok && sm_ok,
        t.elapsed(),
        2 * MINUTE,
        detail
    ));
}

#[test]
fn criterion_03_beat_width_model() {
    let t = Instant::now();
    let src = reference_source();
    let (fsr, lw) = (src.fsr_hz(), src.linewidth_hz());
    let w0 = beat_width_model(6, None, fsr, lw, 0.0).unwrap();
    let wj = beat_width_model(6, None, fsr, lw, REFERENCE_JITTER_FWHM_S).unwrap();
    let pass = (w0 / 600e-12 - 1.0).abs() <= 0.1 && (wj / 970e-12 - 1.0).abs() <= 0.1;
    let detail = format!(
        "6 modes: {:.0} ps (600 +- 10%), with jitter {:.0} ps (970 +- 10%)",
        w0 * 1e12,
        wj * 1e12
    );
    assert!(verdict(3, pass, t.elapsed(), SECOND, detail));
}

#[test]
fn criterion_04_mode_count_bound() {
    let t = Instant::now();
    let src = reference_source();
    let b = mode_count_bounds(
        MEASURED_BEAT_WIDTH_S,
        MEASURED_BEAT_WIDTH_ERROR_S,
        src.fsr_hz(),
        src.linewidth_hz(),
        REFERENCE_JITTER_FWHM_S,
    )
    .unwrap();
    let pass = b.with_jitter == 5 && b.without_jitter == 4;
    let detail = format!(
        "910 +- 110 ps: {} with jitter (5), {} without (4)",
        b.with_jitter, b.without_jitter
    );
    assert!(verdict(4, pass, t.elapsed(), SECOND, detail));
}

#[test]
fn criteria_05_06_modes_linearity_and_noise_model() {
    let opts = RecipeOptions::default();

    let t = Instant::now();
    let quiet = fig4cd_with(&preset("noise-off").unwrap(), &opts, 10.0).unwrap();
    let n_em: Vec<String> = quiet
        .points
        .iter()
        .map(|p| format!("{:.2}", p.n_em))
        .collect();
    let r2 = quiet.stored_linearity.r_squared;
    let detail = format!(
        "noise off, N_eM = [{}], R^2 through origin = {r2:.4} (> 0.98)",
        n_em.join(", ")
    );
    let c5 = verdict(5, r2 > 0.98, t.elapsed(), 5 * MINUTE, detail);

    let t = Instant::now();
    let noisy = fig4cd_with(&preset("signal-noise").unwrap(), &opts, 10.0).unwrap();
    let g: Vec<f64> = noisy.points.iter().map(|p| p.stored.value).collect();
    let monotone = g.windows(2).all(|w| w[1] > w[0]);
    let depression = quiet.points[0].stored.value / noisy.points[0].stored.value;
    let depression_ok = (1.5..=3.0).contains(&depression);
    let (recovered, detail) = match &noisy.noise_fit {
        Some(f) => {
            let dev = (f.b_over_ps - noisy.injected_b_over_ps).abs();
            (
                dev <= 2.0 * f.b_over_ps_error,
                format!(
                    "signal-arm noise, g2 = {:?}, N_eM=1 depressed {depression:.2}x (~2x); B/p_s fit {:.3} +- {:.3} vs injected {:.3}",
                    g.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    f.b_over_ps,
                    f.b_over_ps_error,
                    noisy.injected_b_over_ps
                ),
            )
        }
        None => (false, "noise-model fit failed".to_string()),
    };
    let c6 = verdict(
        6,
        monotone && depression_ok && recovered,
        t.elapsed(),
        5 * MINUTE,
        detail,
    );
    assert!(c5 && c6);
}

#[test]
fn criterion_07_table_i_ordering() {
    let t = Instant::now();
    let r = table_i(&RecipeOptions::default()).unwrap();
    let v = |s: &str, i: &str| r.get(s, i).unwrap().value;
    let (sm_mm, mm_mm, mm_sm, sm_sm) = (v("SM", "MM"), v("MM", "MM"), v("MM", "SM"), v("SM", "SM"));
    let ordered = sm_mm < mm_mm && mm_mm < mm_sm && mm_sm < sm_sm;
    let ratio = mm_sm / mm_mm;
    let ratio_ok = ratio > 3.0 && (ratio / (15.8 / 4.35) - 1.0).abs() <= 0.3;
    let detail = format!(
        "SM,MM {sm_mm:.2} < MM,MM {mm_mm:.2} < MM,SM {mm_sm:.2} < SM,SM {sm_sm:.2}; MM,SM/MM,MM = {ratio:.2} (> 3, 3.63 +- 30%)"
    );
    assert!(verdict(
        7,
        ordered && ratio_ok,
        t.elapsed(),
        10 * MINUTE,
        detail
    ));
}

#[test]
fn criterion_08_spectral_preservation() {
    let t = Instant::now();
    let r = fig4ab(&RecipeOptions::default()).unwrap();
    let pass = r.count_overlap.value >= 0.95 && r.g2_overlap.value >= 0.92;
    let detail = format!(
        "count overlap {:.4} +- {:.4} (>= 0.95), g2 overlap {:.4} +- {:.4} (>= 0.92)",
        r.count_overlap.value, r.count_overlap.error, r.g2_overlap.value, r.g2_overlap.error
    );
    assert!(verdict(8, pass, t.elapsed(), 10 * MINUTE, detail));
}

#[test]
fn criterion_09_crosstalk_correction() {
    let t = Instant::now();
    let g = crosstalk_expected_g2(
        &reference_source(),
        reference_locked_filter().linewidth_hz,
        &[(0, 15.8)],
        0,
    )
    .unwrap();
    let pass = (g / 9.8 - 1.0).abs() <= 0.15;
    let detail = format!("locked 15.8 -> scanned central {g:.2} (9.8 +- 15%)");
    assert!(verdict(9, pass, t.elapsed(), SECOND, detail));
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize, span: i64) -> Vec<i64> {
    let mut v: Vec<i64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

fn oracle_pairs(a: &[i64], b: &[i64], lo: i64, hi: i64) -> u64 {
    let mut n = 0;
    for &x in a {
        for &y in b {
            let d = y - x;
            if d >= lo && d < hi {
                n += 1;
            }
        }
    }
    n
}

fn oracle_heralded(idler: &[i64], a: &[i64], b: &[i64], lo: i64, hi: i64) -> (u64, u64, u64) {
    let hit = |ti: i64, s: &[i64]| s.iter().any(|&t| t - ti >= lo && t - ti < hi);
    let (mut na, mut nb, mut nab) = (0, 0, 0);
    for &ti in idler {
        let (x, y) = (hit(ti, a), hit(ti, b));
        na += u64::from(x);
        nb += u64::from(y);
        nab += u64::from(x && y);
    }
    (na, nb, nab)
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300)
}

#[test]
fn criterion_10_estimator_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = Vec::new();
    let mut heralded_checked = 0;
    for case in 0..50 {
        let span = rng.random_range(1_000..1_000_000i64);
        let n_i = rng.random_range(1..400);
        let n_a = rng.random_range(1..300);
        let n_b = rng.random_range(1..1000 - n_i - n_a);
        let idler = random_stream(&mut rng, n_i, span);
        let sa = random_stream(&mut rng, n_a, span);
        let sb = random_stream(&mut rng, n_b, span);
        let window = rng.random_range(1..span / 4 + 2);
        let offset = rng.random_range(-span / 4..span / 4 + 1);
        let duration = span + rng.random_range(0..span);

        let n_c = oracle_pairs(&idler, &sa, offset, offset + window);
        if count_pairs_in_window(&idler, &sa, offset, offset + window) != n_c {
            mismatches.push(format!("case {case}: pair count"));
        }
        let g = g2_cross(&idler, &sa, window, offset, duration).unwrap();
        let expect = n_c as f64 * duration as f64 / (n_i as f64 * n_a as f64 * window as f64);
        if g.n_c != n_c || !close(g.value, expect) {
            mismatches.push(format!("case {case}: g2_cross {} vs {expect}", g.value));
        }

        let (na, nb, nab) = oracle_heralded(&idler, &sa, &sb, offset, offset + window);
        match heralded_g2(&idler, &sa, &sb, window, offset) {
            Ok(h) => {
                heralded_checked += 1;
                let expect = n_i as f64 * nab as f64 / (na as f64 * nb as f64);
                if (h.n_ia, h.n_ib, h.n_iab) != (na, nb, nab) || !close(h.value, expect) {
                    mismatches.push(format!("case {case}: heralded {} vs {expect}", h.value));
                }
            }
            Err(_) if na == 0 || nb == 0 => {}
            Err(e) => mismatches.push(format!("case {case}: heralded error {e}")),
        }
    }
    let detail = format!(
        "50 streams, {heralded_checked} with heralded coincidences, {} mismatches {:?}",
        mismatches.len(),
        mismatches
    );
    assert!(verdict(
        10,
        mismatches.is_empty(),
        t.elapsed(),
        MINUTE,
        detail
    ));
}

#[test]
fn criterion_11_statistical_sanity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let duration = 1_000_000_000_000i64;
    let mut poisson = |rate_hz: f64| {
        let gap = Exp::new(rate_hz * 1e-12).unwrap();
        let mut out = Vec::new();
        let mut now = 0.0;
        loop {
            now += gap.sample(&mut rng);
            if now >= duration as f64 {
                return out;
            }
            out.push(now as i64);
        }
    };
    let a = poisson(100_000.0);
    let b = poisson(100_000.0);
    let g = g2_cross(&a, &b, 100_000, -50_000, duration).unwrap();
    let poisson_ok = (g.value - 1.0).abs() <= 3.0 * g.error;

    // One pair per 10 us slot, signal routed to A or B at random.
    let (mut idler, mut sa, mut sb) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..100_000i64 {
        let ti = k * 10_000_000 + rng.random_range(0..1_000_000);
        idler.push(ti);
        let ts = ti + rng.random_range(-1_000..1_000);
        if rng.random_bool(0.5) {
            sa.push(ts);
        } else {
            sb.push(ts);
        }
    }
    let h = heralded_g2(&idler, &sa, &sb, 400_000, -200_000).unwrap();
    let single_ok = h.value == 0.0 && h.n_iab == 0;

    let c = classicality_check(4.35, 2.0, 2.0).unwrap();
    let class_ok = c.simplified_bound_passed && c.ratio > 1.0;
    let detail = format!(
        "Poisson g2 = {:.4} +- {:.4}; single-pair heralded g2 = {} ({} heralds); 4.35 vs bound 2 nonclassical = {}",
        g.value, g.error, h.value, h.n_i, c.simplified_bound_passed
    );
    assert!(verdict(
        11,
        poisson_ok && single_ok && class_ok,
        t.elapsed(),
        MINUTE,
        detail
    ));
}

#[test]
fn criterion_12_determinism() {
    let t = Instant::now();
    let mut cfg = reference_scenario().resolve().unwrap();
    cfg.duration_s = 1.0;
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let stream = pool.install(|| generate_run(&cfg)).unwrap();
        encode_events(stream.events(), EventFormat::Bin).unwrap()
    };
    let one = run_with(1);
    let many = run_with(8);
    let again = run_with(3);
    let pass = !one.is_empty() && one == many && one == again;
    let detail = format!(
        "{} bytes, 1 vs 8 vs 3 threads identical = {pass}",
        one.len()
    );
    assert!(verdict(12, pass, t.elapsed(), MINUTE, detail));
}
