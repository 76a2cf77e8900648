use afcmux::engine::generate_run;
use afcmux::io::recipes::{fig2a_with, RecipeOptions, FIG2A_POWERS_MW};
use afcmux::io::report::{read_provenance, run_analyze, run_simulate, sidecar_path, ReportStatus};
use afcmux::io::scenario::{preset, reference_scenario, AnalysisParams};
use afcmux::io::{read_events, EventFormat};

#[test]
fn g2_scales_with_inverse_power_without_noise() {
    let file = preset("noise-off").unwrap();
    let r = fig2a_with(&file, &FIG2A_POWERS_MW, &RecipeOptions::default(), 10.0).unwrap();
    for fit in [&r.source_inverse_power_fit, &r.stored_inverse_power_fit] {
        assert!(fit.r_squared > 0.95, "{fit:?}");
        assert!(fit.slope > 0.0);
    }
    let g: Vec<f64> = r.points.iter().map(|p| p.source.value).collect();
    assert!(g.windows(2).all(|w| w[1] < w[0]), "{g:?}");
}

#[test]
fn files_round_trip_through_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = reference_scenario();
    file.config.duration_s = 0.3;
    let expected = generate_run(&file.resolve().unwrap()).unwrap();
    let mut reports = Vec::new();
    for format in [EventFormat::Csv, EventFormat::Bin, EventFormat::Json] {
        let path = dir.path().join(format!("ev.{}", format.extension()));
        let prov = run_simulate(&file, None, &path, format).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_provenance(&path).unwrap(), Some(prov.clone()));

        let (events, sha) = read_events(&path, None).unwrap();
        assert_eq!(sha, prov.events_sha256);
        assert_eq!(events.len(), expected.len());
        for (a, b) in events.iter().zip(expected.events()) {
            assert_eq!((a.channel, a.timestamp_ps), (b.channel, b.timestamp_ps));
        }

        let out = dir.path().join(format!("rep-{}", format.extension()));
        let r = run_analyze(&[path], &AnalysisParams::default(), &out).unwrap();
        assert_eq!(r.status, ReportStatus::Ok);
        assert_eq!(r.duration_ps, expected.duration_ps());
        reports.push(r);
    }
    for r in &reports[1..] {
        assert_eq!(r.counts, reports[0].counts);
        assert_eq!(
            r.g2_input.as_ref().map(|t| t.result),
            reports[0].g2_input.as_ref().map(|t| t.result)
        );
        assert_eq!(
            r.g2_echo.as_ref().map(|t| t.result),
            reports[0].g2_echo.as_ref().map(|t| t.result)
        );
    }
}
