//! Python bindings: the simulated arm, the action library, the control
//! loop, prompt building and parsing, and the evaluation helpers.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use abc_core::arm::{Arm, ArmConfig, FaultSpec, JointVector};
use abc_core::control::{ControlConfig, ControlError, ControlEvent, Controller};
use abc_core::eval::{self, DegradationSpec, Scenario};
use abc_core::memory::{ActionClip, ActionLibrary, Sample};
use abc_core::recommend::{self, MockBackend};
use abc_core::safety::{LockReason, UnlockSource};

create_exception!(abc_arm, AbcError, PyException, "Base class for errors raised by abc_arm.");
create_exception!(abc_arm, ArmError, AbcError, "Invalid arm command or configuration.");
create_exception!(abc_arm, LibraryError, AbcError, "Action library or recording failure.");
create_exception!(abc_arm, LockedError, AbcError, "The arm is locked by the safety monitor.");
create_exception!(abc_arm, RecommendError, AbcError, "Prompt, parse or backend failure.");
create_exception!(abc_arm, EvalError, AbcError, "Evaluation input or degradation failure.");

fn arm_err(e: impl ToString) -> PyErr {
    ArmError::new_err(e.to_string())
}

fn lib_err(e: impl ToString) -> PyErr {
    LibraryError::new_err(e.to_string())
}

fn eval_err(e: impl ToString) -> PyErr {
    EvalError::new_err(e.to_string())
}

fn control_err(e: ControlError) -> PyErr {
    match e {
        ControlError::Locked => LockedError::new_err(e.to_string()),
        ControlError::Arm(_) => arm_err(e),
        _ => lib_err(e),
    }
}

/// Converts through JSON so nested structs arrive as plain dicts and lists.
fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| AbcError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn joints(values: Vec<f64>) -> PyResult<JointVector> {
    let n = values.len();
    values
        .try_into()
        .map_err(|_| arm_err(format!("expected {} joint values, got {n}", abc_core::JOINT_COUNT)))
}

/// Simulated 8-joint arm.
#[pyclass(name = "Arm", module = "abc_arm")]
struct PyArm {
    inner: Arm,
}

#[pymethods]
impl PyArm {
    /// Default actuator complement and geometry, or those in `config` (JSON path).
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<String>) -> PyResult<Self> {
        let inner = match config {
            Some(path) => ArmConfig::load(path).and_then(|c| c.build()).map_err(arm_err)?,
            None => Arm::with_defaults(),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.inner.positions().to_vec()
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets().to_vec()
    }

    #[getter]
    fn torque_enabled(&self) -> bool {
        self.inner.torque_enabled()
    }

    #[getter]
    fn timestamp(&self) -> f64 {
        self.inner.timestamp()
    }

    fn set_torque(&mut self, enabled: bool) {
        self.inner.set_torque(enabled);
    }

    fn command(&mut self, targets: Vec<f64>) -> PyResult<()> {
        self.inner.command_positions(joints(targets)?).map_err(arm_err)
    }

    /// Moves a torque-off arm by hand.
    fn guide(&mut self, positions: Vec<f64>) -> PyResult<()> {
        self.inner.guide_positions(joints(positions)?).map_err(arm_err)
    }

    /// Advances the servo model by `dt` seconds and returns the new positions.
    fn step(&mut self, dt: f64) -> Vec<f64> {
        self.inner.step(dt).positions.to_vec()
    }

    fn inject_stuck(&mut self, joint: usize) -> PyResult<()> {
        self.inner.inject_fault(FaultSpec::stuck(joint)).map_err(arm_err)
    }

    fn inject_offset(&mut self, joint: usize, magnitude: f64) -> PyResult<()> {
        self.inner.inject_fault(FaultSpec::offset(joint, magnitude)).map_err(arm_err)
    }

    fn clear_faults(&mut self) {
        self.inner.clear_faults();
    }

    /// End-effector `(position xyz, orientation wxyz)`.
    fn forward_kinematics(&self) -> (Vec<f64>, Vec<f64>) {
        let pose = self.inner.forward_kinematics();
        (pose.position.to_vec(), pose.orientation.to_vec())
    }

    fn joint_points(&self) -> Vec<[f64; 3]> {
        self.inner.joint_points()
    }

    fn __repr__(&self) -> String {
        format!("Arm(t={:.3}, torque={})", self.inner.timestamp(), self.inner.torque_enabled())
    }
}

/// Named recorded gestures, optionally backed by a JSON file.
#[pyclass(name = "ActionLibrary", module = "abc_arm")]
struct PyActionLibrary {
    inner: ActionLibrary,
}

#[pymethods]
impl PyActionLibrary {
    /// Opens `path` (an empty library if the file does not exist yet), or
    /// an in-memory library without a path.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<String>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => ActionLibrary::open(p).map_err(lib_err)?,
            None => ActionLibrary::new(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ActionLibrary::from_json(text).map_err(lib_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(lib_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_library(path).map_err(lib_err)
    }

    fn names(&self) -> Vec<String> {
        self.inner.names()
    }

    /// Gesture names (no `init`) matching `query`, most recently used first.
    #[pyo3(signature = (query=""))]
    fn search(&self, query: &str) -> Vec<String> {
        self.inner.search_actions(query)
    }

    /// Adds a clip from `(t, [8 positions])` pairs.
    #[pyo3(signature = (name, samples, sample_rate=30.0, overwrite=false))]
    fn add(&mut self, name: &str, samples: Vec<(f64, Vec<f64>)>, sample_rate: f64, overwrite: bool) -> PyResult<()> {
        let samples = samples
            .into_iter()
            .map(|(t, p)| Ok(Sample { t, positions: joints(p)? }))
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.save_action(ActionClip::new("", sample_rate, samples), name, overwrite).map_err(lib_err)
    }

    fn samples(&self, name: &str) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let clip = self.inner.get(name).ok_or_else(|| lib_err(format!("no action named {name:?}")))?;
        Ok(clip.samples.iter().map(|s| (s.t, s.positions.to_vec())).collect())
    }

    fn rename(&mut self, old: &str, new: &str) -> PyResult<()> {
        self.inner.rename_action(old, new).map_err(lib_err)
    }

    fn delete(&mut self, name: &str) -> PyResult<()> {
        self.inner.delete_action(name).map(|_| ()).map_err(lib_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, name: &str) -> bool {
        self.inner.contains(name)
    }
}

fn event_to_py(py: Python<'_>, event: &ControlEvent) -> PyResult<(String, Py<PyAny>)> {
    Ok(match event {
        ControlEvent::Arm(state) => ("arm".into(), to_py(py, state)?),
        ControlEvent::Safety(state) => (
            "safety".into(),
            to_py(py, &serde_json::json!({ "mode": state.mode(), "reason": state.reason(), "since": state.since() }))?,
        ),
        ControlEvent::Playback(status) => ("playback".into(), to_py(py, status)?),
        ControlEvent::Library(change) => ("library".into(), to_py(py, change)?),
        ControlEvent::Recording { active, samples } => {
            ("recording".into(), to_py(py, &serde_json::json!({ "active": active, "samples": samples }))?)
        }
    })
}

/// The fixed-rate control loop, stepped explicitly from Python.
#[pyclass(name = "Controller", module = "abc_arm")]
struct PyController {
    inner: Controller,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (library=None, tick_rate=30.0, auto_home=true))]
    fn new(library: Option<PyRef<'_, PyActionLibrary>>, tick_rate: f64, auto_home: bool) -> PyResult<Self> {
        let lib = library.map(|l| l.inner.clone()).unwrap_or_default();
        let mut config = ControlConfig { tick_rate, ..ControlConfig::default() };
        config.playback.auto_home = auto_home;
        let inner = Controller::new(Arm::with_defaults(), Arc::new(RwLock::new(lib)), config).map_err(control_err)?;
        Ok(Self { inner })
    }

    /// Advances one period (or `dt`) and returns `(type, payload)` events.
    #[pyo3(signature = (dt=None))]
    fn tick(&mut self, py: Python<'_>, dt: Option<f64>) -> PyResult<Vec<(String, Py<PyAny>)>> {
        let dt = dt.unwrap_or_else(|| self.inner.config().tick_period());
        self.inner.tick(dt).iter().map(|e| event_to_py(py, e)).collect()
    }

    fn play(&mut self, name: &str) -> PyResult<()> {
        self.inner.play(name).map(|_| ()).map_err(control_err)
    }

    /// Safety stop: `"tap"`, `"estop_user"` or `"estop_assistant"`.
    #[pyo3(signature = (source="tap"))]
    fn stop(&mut self, source: &str) -> PyResult<()> {
        let reason = match source {
            "tap" => LockReason::TapStop,
            "estop_user" => LockReason::EstopUser,
            "estop_assistant" => LockReason::EstopAssistant,
            other => return Err(AbcError::new_err(format!("unknown stop source {other:?}"))),
        };
        self.inner.trip(reason);
        Ok(())
    }

    fn unlock(&mut self) -> PyResult<()> {
        self.inner.unlock(UnlockSource::Assistant).map_err(control_err)
    }

    fn start_recording(&mut self) -> PyResult<()> {
        self.inner.start_recording().map_err(control_err)
    }

    /// Stops recording and saves the clip under `name`.
    fn stop_recording(&mut self, name: &str) -> PyResult<usize> {
        let clip = self.inner.stop_recording().map_err(control_err)?;
        let n = clip.samples.len();
        self.inner.library().write().expect("library lock").save_action(clip, name, false).map_err(lib_err)?;
        Ok(n)
    }

    fn guide(&mut self, positions: Vec<f64>) -> PyResult<()> {
        self.inner.guide(joints(positions)?).map_err(control_err)
    }

    fn inject_stuck(&mut self, joint: usize) -> PyResult<()> {
        self.inner.inject_fault(FaultSpec::stuck(joint)).map_err(control_err)
    }

    fn clear_faults(&mut self) {
        self.inner.clear_faults();
    }

    #[getter]
    fn locked(&self) -> bool {
        self.inner.safety_state().is_locked()
    }

    #[getter]
    fn now(&self) -> f64 {
        self.inner.now()
    }

    #[getter]
    fn playback_active(&self) -> bool {
        self.inner.playback_active()
    }

    fn state(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.arm_state())
    }

    fn library(&self) -> PyActionLibrary {
        PyActionLibrary { inner: self.inner.library().read().expect("library lock").clone() }
    }
}

/// Human preference scores per stimulus and response.
#[pyclass(name = "PreferenceMatrix", module = "abc_arm")]
struct PyPreferenceMatrix {
    inner: eval::PreferenceMatrix,
}

#[pymethods]
impl PyPreferenceMatrix {
    #[staticmethod]
    #[pyo3(signature = (path, participants=eval::DEFAULT_PARTICIPANTS))]
    fn load(path: &str, participants: u32) -> PyResult<Self> {
        Ok(Self { inner: eval::load_preferences_with(path, participants).map_err(eval_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (text, participants=eval::DEFAULT_PARTICIPANTS))]
    fn from_csv(text: &str, participants: u32) -> PyResult<Self> {
        Ok(Self { inner: eval::PreferenceMatrix::from_csv_str(text, participants).map_err(eval_err)? })
    }

    fn stimuli(&self) -> Vec<String> {
        self.inner.stimuli().to_vec()
    }

    fn score(&self, stimulus: &str, response: &str) -> PyResult<Option<u32>> {
        self.inner.score(stimulus, response).map_err(eval_err)
    }

    /// Top three responses by total score.
    fn rank_human(&self, stimulus: &str) -> PyResult<Vec<String>> {
        self.inner.rank_human(stimulus).map_err(eval_err)
    }
}

#[pyfunction]
fn build_prompt(action_names: Vec<String>) -> PyResult<String> {
    recommend::build_prompt(&action_names).map_err(|e| RecommendError::new_err(e.to_string()))
}

#[pyfunction]
fn parse_response(text: &str, library_names: Vec<String>) -> PyResult<Vec<String>> {
    recommend::parse_response(text, &library_names).map_err(|e| RecommendError::new_err(e.to_string()))
}

#[pyfunction]
fn image_digest(image: &[u8]) -> String {
    recommend::image_digest(image)
}

/// Asks a digest-keyed mock backend for suggestions.
#[pyfunction]
fn recommend_with_mock(image: Vec<u8>, action_names: Vec<String>, responses: HashMap<String, String>) -> PyResult<Vec<String>> {
    let err = |e: recommend::RecommendError| RecommendError::new_err(e.to_string());
    let request = recommend::RecommendationRequest::new(image, action_names).map_err(err)?;
    Ok(recommend::request_recommendation(&MockBackend::new(responses), request).map_err(err)?.suggestions)
}

fn scenario(label: &str) -> PyResult<Scenario> {
    label.parse().map_err(eval_err)
}

/// Applies a scenario preset to PNG/JPEG bytes and returns PNG bytes.
#[pyfunction]
fn degrade<'py>(py: Python<'py>, image: &[u8], scenario_label: &str) -> PyResult<Bound<'py, PyBytes>> {
    let out = eval::degrade_bytes(image, &DegradationSpec::preset(scenario(scenario_label)?)).map_err(eval_err)?;
    Ok(PyBytes::new(py, &out))
}

#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    Scenario::ALL.iter().map(|s| s.label()).collect()
}

/// Runs the evaluation with a mock reply table and returns the report.
#[pyfunction]
#[pyo3(signature = (manifest, preferences, mock, scenario_labels=None, parallel=1))]
fn evaluate_with_mock(
    py: Python<'_>,
    manifest: &str,
    preferences: &str,
    mock: &str,
    scenario_labels: Option<Vec<String>>,
    parallel: usize,
) -> PyResult<Py<PyAny>> {
    let manifest = eval::load_manifest(manifest).map_err(eval_err)?;
    let matrix = eval::load_preferences(preferences).map_err(eval_err)?;
    let backend = MockBackend::from_file(mock).map_err(eval_err)?;
    let specs = match scenario_labels {
        Some(labels) => labels.iter().map(|l| scenario(l).map(DegradationSpec::preset)).collect::<PyResult<Vec<_>>>()?,
        None => Scenario::ALL.iter().map(|&s| DegradationSpec::preset(s)).collect(),
    };
    let report = py
        .detach(|| eval::run_eval(&manifest, &matrix, &backend, &specs, parallel.max(1)))
        .map_err(eval_err)?;
    to_py(py, &report)
}

#[pymodule]
fn abc_arm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("AbcError", py.get_type::<AbcError>())?;
    m.add("ArmError", py.get_type::<ArmError>())?;
    m.add("LibraryError", py.get_type::<LibraryError>())?;
    m.add("LockedError", py.get_type::<LockedError>())?;
    m.add("RecommendError", py.get_type::<RecommendError>())?;
    m.add("EvalError", py.get_type::<EvalError>())?;
    m.add("JOINT_COUNT", abc_core::JOINT_COUNT)?;
    m.add("PROMPT_TEMPLATE", recommend::PROMPT_TEMPLATE)?;
    m.add_class::<PyArm>()?;
    m.add_class::<PyActionLibrary>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyPreferenceMatrix>()?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(image_digest, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_with_mock, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_with_mock, m)?)?;
    Ok(())
}
