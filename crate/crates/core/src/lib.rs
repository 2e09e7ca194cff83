//! Core of the augmented body communicator: a simulated gesture arm with
//! kinetic memory, a safety watchdog, image-driven gesture recommendation
//! and the recommendation accuracy harness.

pub mod arm;
pub mod control;
pub mod eval;
pub mod memory;
pub mod playback;
pub mod recommend;
pub mod safety;

pub use arm::{ActuatorSpec, Arm, ArmConfig, ArmError, ArmSnapshot, FaultSpec, JointVector, KinematicChain, JOINT_COUNT};
pub use control::{ControlConfig, ControlError, ControlEvent, Controller, SharedLibrary};
pub use memory::{ActionClip, ActionLibrary, MemoryError, RecordingSession, Sample, INIT_ACTION};
pub use playback::{PlaybackHandle, PlaybackPhase, PlaybackStatus};
pub use recommend::{
    build_prompt, parse_response, request_recommendation, LlmBackend, MockBackend, RecommendationRequest,
    RecommendationResult,
};
pub use safety::{LockReason, SafetyMode, SafetyState, UnlockSource, WatchdogParams};
