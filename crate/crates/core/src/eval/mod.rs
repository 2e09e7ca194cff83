//! Recommendation accuracy evaluation against human preferences.

mod degrade;
mod harness;
mod preferences;

pub use degrade::{decode_image, degrade_bytes, degrade_image, encode_png, CropRect, DegradationSpec, Scenario};
pub use harness::{
    emit_report, faithful_mock_responses, load_manifest, render_markdown, run_eval, CellResult, EvalReport, ManifestEntry,
    ReportFormat, ScenarioSummary, StimulusManifest,
};
pub use preferences::{
    load_preferences, load_preferences_with, PreferenceMatrix, DEFAULT_PARTICIPANTS, STANDARD_RESPONSES, TOP_K,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("preference schema: {0}")]
    Schema(String),
    #[error("score {value} for ({stimulus:?}, {response:?}) is outside the Likert total range")]
    Range { stimulus: String, response: String, value: u32 },
    #[error("unknown stimulus {0:?}")]
    UnknownStimulus(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid degradation: {0}")]
    InvalidSpec(String),
    #[error("decode: {0}")]
    Decode(String),
    #[error("io: {0}")]
    Io(String),
}
