//! Scenario files, event files, reports and figure recipes.

pub mod events;
pub mod recipes;
pub mod report;
pub mod scenario;

pub use events::{decode_events, encode_events, read_events, write_events, EventFormat};
pub use recipes::{run_recipe, RecipeOptions, RecipeReport, RECIPES};
pub use report::{
    read_provenance, run_analyze, run_fit, run_scan, run_simulate, sidecar_path, AnalysisReport,
    Provenance, ReportStatus, ScanFitReport,
};
pub use scenario::{
    preset, reference_scenario, reference_source, AnalysisParams, ScenarioFile, PRESETS,
};
