//! Kinetic memory: recorded joint trajectories and the named action library.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::arm::{ActuatorSpec, Arm, ArmSnapshot, JointVector, JOINT_COUNT};

/// Name of the neutral pose clip. It is excluded from search results and
/// recommendations and may be replayed after each action to return home.
pub const INIT_ACTION: &str = "init";

pub const LIBRARY_VERSION: u32 = 1;

pub const DEFAULT_RECORDING_RATE: f64 = 30.0;

const SAMPLE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("already recording")]
    AlreadyRecording,
    #[error("not recording")]
    NotRecording,
    #[error("arm torque is enabled; recording needs a torque-off arm")]
    TorqueEnabled,
    #[error("recording rate must be positive")]
    InvalidRate,
    #[error("an action named {0:?} already exists")]
    DuplicateName(String),
    #[error("action name is empty")]
    EmptyName,
    #[error("clip is not playable: {0}")]
    UnplayableClip(String),
    #[error("no action named {0:?}")]
    NotFound(String),
    #[error("io: {0}")]
    Io(String),
    #[error("library schema version {found} is not supported (expected {LIBRARY_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("corrupt library file: {0}")]
    CorruptFile(String),
}

/// Joint positions at `t` seconds from clip start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub positions: JointVector,
}

impl Serialize for Sample {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(JOINT_COUNT + 1))?;
        seq.serialize_element(&self.t)?;
        for p in &self.positions {
            seq.serialize_element(p)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Sample {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SampleVisitor;

        impl<'de> Visitor<'de> for SampleVisitor {
            type Value = Sample;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "an array [t, p0..p{}]", JOINT_COUNT - 1)
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Sample, A::Error> {
                let t = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let mut positions = [0.0; JOINT_COUNT];
                for (i, p) in positions.iter_mut().enumerate() {
                    *p = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(i + 1, &self))?;
                }
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(JOINT_COUNT + 2, &self));
                }
                Ok(Sample { t, positions })
            }
        }

        deserializer.deserialize_seq(SampleVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClip {
    pub id: Uuid,
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub last_used_at: Option<DateTime<Utc>>,
    #[serde(rename = "sample_rate_hz")]
    pub sample_rate: f64,
    pub samples: Vec<Sample>,
}

impl ActionClip {
    pub fn new(name: impl Into<String>, sample_rate: f64, samples: Vec<Sample>) -> Self {
        Self {
            id: Uuid::new_v4(),
            name: name.into(),
            created_at: Utc::now(),
            last_used_at: None,
            sample_rate,
            samples,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn first_positions(&self) -> Option<JointVector> {
        self.samples.first().map(|s| s.positions)
    }

    /// Linear interpolation between samples, held at the ends.
    pub fn position_at(&self, t: f64) -> JointVector {
        let samples = &self.samples;
        match samples.len() {
            0 => return [0.0; JOINT_COUNT],
            1 => return samples[0].positions,
            _ => {}
        }
        if t <= samples[0].t {
            return samples[0].positions;
        }
        let last = samples[samples.len() - 1];
        if t >= last.t {
            return last.positions;
        }
        let upper = samples.partition_point(|s| s.t <= t);
        let (a, b) = (samples[upper - 1], samples[upper]);
        let w = (t - a.t) / (b.t - a.t);
        std::array::from_fn(|j| a.positions[j] + w * (b.positions[j] - a.positions[j]))
    }

    /// Checks the playable-clip invariants: at least two samples, times
    /// strictly increasing from zero, finite positions inside `limits` when
    /// given.
    pub fn validate(&self, limits: Option<&[ActuatorSpec]>) -> Result<(), MemoryError> {
        let bad = |msg: String| Err(MemoryError::UnplayableClip(msg));
        if self.samples.len() < 2 {
            return bad(format!("{} samples, need at least 2", self.samples.len()));
        }
        if self.samples[0].t != 0.0 {
            return bad("first sample must be at t = 0".into());
        }
        for w in self.samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return bad(format!("sample times not strictly increasing at t = {}", w[1].t));
            }
        }
        for s in &self.samples {
            if !s.t.is_finite() || s.positions.iter().any(|p| !p.is_finite()) {
                return bad("non-finite sample".into());
            }
            if let Some(specs) = limits {
                for (j, spec) in specs.iter().enumerate() {
                    if !spec.contains(s.positions[j]) {
                        return bad(format!("joint {j} outside limits at t = {}", s.t));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LibraryFile {
    version: u32,
    actions: Vec<ActionClip>,
}

/// Named clips, persisted to `path` after each mutation when one is set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionLibrary {
    clips: Vec<ActionClip>,
    path: Option<PathBuf>,
    limits: Option<Vec<ActuatorSpec>>,
}

impl ActionLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads the library at `path`, or starts an empty one there if the
    /// file does not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let mut lib = if path.exists() { Self::load(&path)? } else { Self::new() };
        lib.path = Some(path);
        Ok(lib)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn set_path(&mut self, path: Option<PathBuf>) {
        self.path = path;
    }

    /// Joint limits that clips must respect to be saved.
    pub fn set_limits(&mut self, specs: Option<Vec<ActuatorSpec>>) {
        self.limits = specs;
    }

    pub fn clips(&self) -> &[ActionClip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ActionClip> {
        self.clips.iter().find(|c| c.name == name)
    }

    pub fn get_by_id(&self, id: Uuid) -> Option<&ActionClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// All names in library order, including `init`.
    pub fn names(&self) -> Vec<String> {
        self.clips.iter().map(|c| c.name.clone()).collect()
    }

    /// Number of actions other than `init`.
    pub fn gesture_count(&self) -> usize {
        self.clips.iter().filter(|c| c.name != INIT_ACTION).count()
    }

    pub fn save_action(&mut self, mut clip: ActionClip, name: &str, overwrite: bool) -> Result<(), MemoryError> {
        if name.trim().is_empty() {
            return Err(MemoryError::EmptyName);
        }
        clip.validate(self.limits.as_deref())?;
        clip.name = name.to_string();
        match self.clips.iter().position(|c| c.name == name) {
            Some(_) if !overwrite => return Err(MemoryError::DuplicateName(name.to_string())),
            Some(i) => self.clips[i] = clip,
            None => self.clips.push(clip),
        }
        self.persist()
    }

    pub fn rename_action(&mut self, old: &str, new: &str) -> Result<(), MemoryError> {
        if new.trim().is_empty() {
            return Err(MemoryError::EmptyName);
        }
        let i = self.index_of(old)?;
        if old == new {
            return Ok(());
        }
        if self.contains(new) {
            return Err(MemoryError::DuplicateName(new.to_string()));
        }
        self.clips[i].name = new.to_string();
        self.persist()
    }

    pub fn delete_action(&mut self, name: &str) -> Result<ActionClip, MemoryError> {
        let i = self.index_of(name)?;
        let clip = self.clips.remove(i);
        self.persist()?;
        Ok(clip)
    }

    pub fn mark_used(&mut self, name: &str, when: DateTime<Utc>) -> Result<(), MemoryError> {
        let i = self.index_of(name)?;
        self.clips[i].last_used_at = Some(when);
        self.persist()
    }

    fn index_of(&self, name: &str) -> Result<usize, MemoryError> {
        self.clips
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| MemoryError::NotFound(name.to_string()))
    }

    /// Case-insensitive substring search over names other than `init`.
    /// Most recently used first; never-used clips follow, newest first;
    /// remaining ties go by name.
    pub fn search_actions(&self, query: &str) -> Vec<String> {
        let needle = query.to_lowercase();
        let mut hits: Vec<&ActionClip> = self
            .clips
            .iter()
            .filter(|c| c.name != INIT_ACTION && c.name.to_lowercase().contains(&needle))
            .collect();
        hits.sort_by(|a, b| {
            b.last_used_at
                .cmp(&a.last_used_at)
                .then_with(|| b.created_at.cmp(&a.created_at))
                .then_with(|| a.name.cmp(&b.name))
        });
        hits.into_iter().map(|c| c.name.clone()).collect()
    }

    fn persist(&self) -> Result<(), MemoryError> {
        match &self.path {
            Some(path) => self.save_library(path),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String, MemoryError> {
        let file = LibraryFile { version: LIBRARY_VERSION, actions: self.clips.clone() };
        serde_json::to_string_pretty(&file).map_err(|e| MemoryError::Io(e.to_string()))
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save_library(&self, path: impl AsRef<Path>) -> Result<(), MemoryError> {
        let path = path.as_ref();
        let text = self.to_json()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("library")
        ));
        let io = |e: std::io::Error| MemoryError::Io(e.to_string());
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let text = fs::read_to_string(path).map_err(|e| MemoryError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| MemoryError::CorruptFile(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| MemoryError::CorruptFile("missing version".into()))?;
        if version != u64::from(LIBRARY_VERSION) {
            return Err(MemoryError::SchemaVersionMismatch { found: version });
        }
        let file: LibraryFile =
            serde_json::from_value(value).map_err(|e| MemoryError::CorruptFile(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for clip in &file.actions {
            if clip.name.trim().is_empty() || !seen.insert(clip.name.as_str()) {
                return Err(MemoryError::CorruptFile(format!("bad or duplicate name {:?}", clip.name)));
            }
            clip.validate(None).map_err(|e| MemoryError::CorruptFile(format!("{}: {e}", clip.name)))?;
        }
        Ok(Self { clips: file.actions, path: None, limits: None })
    }
}

#[derive(Debug, Clone)]
struct ActiveRecording {
    rate: f64,
    start_time: f64,
    next_index: u64,
    buffer: Vec<Sample>,
}

/// Samples a torque-off arm at a fixed rate while it is guided by hand.
#[derive(Debug, Clone, Default)]
pub struct RecordingSession {
    active: Option<ActiveRecording>,
}

impl RecordingSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recording(&self) -> bool {
        self.active.is_some()
    }

    pub fn buffered(&self) -> &[Sample] {
        self.active.as_ref().map_or(&[], |a| &a.buffer)
    }

    /// Takes the first sample immediately from the arm's current pose.
    pub fn start_recording(&mut self, arm: &Arm, rate: f64) -> Result<(), MemoryError> {
        if self.active.is_some() {
            return Err(MemoryError::AlreadyRecording);
        }
        if arm.torque_enabled() {
            return Err(MemoryError::TorqueEnabled);
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(MemoryError::InvalidRate);
        }
        let snap = arm.snapshot();
        self.active = Some(ActiveRecording {
            rate,
            start_time: snap.timestamp,
            next_index: 1,
            buffer: vec![Sample { t: 0.0, positions: snap.positions }],
        });
        Ok(())
    }

    /// Feeds one control-loop snapshot. A sample is stored when the next
    /// sampling instant has been reached.
    pub fn observe(&mut self, snapshot: &ArmSnapshot) {
        let Some(rec) = self.active.as_mut() else { return };
        let elapsed = snapshot.timestamp - rec.start_time;
        let due = rec.next_index as f64 / rec.rate;
        if elapsed + SAMPLE_SLACK < due {
            return;
        }
        if rec.buffer.last().is_some_and(|s| elapsed <= s.t) {
            return;
        }
        rec.buffer.push(Sample { t: elapsed, positions: snapshot.positions });
        rec.next_index = ((elapsed + SAMPLE_SLACK) * rec.rate).floor() as u64 + 1;
    }

    /// Returns the unnamed clip. Clips with fewer than two samples are
    /// returned too; the library refuses to save them.
    pub fn stop_recording(&mut self) -> Result<ActionClip, MemoryError> {
        let rec = self.active.take().ok_or(MemoryError::NotRecording)?;
        Ok(ActionClip::new(String::new(), rec.rate, rec.buffer))
    }
}
