//! Estimators, spectral analysis and fits.

pub mod beat;
pub mod coincidence;
pub mod fit;
pub mod modes;

pub use beat::{
    beat_period, beat_spectrum, beat_width_model, envelope_fwhm, histogram_peak_fwhm,
    mode_count_bounds, mode_count_lower_bound, BeatPeak, BeatSpectrum, FftWindow, ModeCountBounds,
};
pub use coincidence::{
    check_sorted, classicality_check, coincidence_histogram, coincidence_histogram_par,
    count_pairs_in_window, g2_cross, g2_cross_from_histogram, heralded_g2, merge_sorted,
    multimode_classical_bound, Classicality, CoincidenceHistogram, G2Estimate, HeraldedG2,
};
pub use fit::{
    fit_lorentzian_train, fit_noise_model, fit_train_rescaled, g2_vs_modes_model,
    levenberg_marquardt, levenberg_marquardt_bounded, LmOptions, LmResult, LorentzianTrainFit,
    NoiseBaseline, NoiseModelFit, NoiseModelParams, ScaleFit, TrainInit,
};
pub use modes::{
    crosstalk_expected_g2, gate_idler_by_scan, spectral_overlap, spectral_overlap_counts,
    spectral_overlap_with_errors, trigger_referenced_histogram, Overlap,
};
