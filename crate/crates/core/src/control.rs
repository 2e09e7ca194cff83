//! The fixed-rate control loop.
//!
//! One `Controller` owns the arm, the safety monitor, the recorder and the
//! active playback. Callers apply commands between ticks; `tick` then
//! emits playback targets, steps the arm, samples the recorder and runs the
//! watchdog, in that order. A watchdog trip in one tick therefore prevents
//! any target emission in the next.

use std::sync::{Arc, RwLock};

use chrono::Utc;
use serde::Serialize;
use thiserror::Error;

use crate::arm::{Arm, ArmError, ArmSnapshot, FaultSpec, JointVector, Pose};
use crate::memory::{ActionClip, ActionLibrary, MemoryError, RecordingSession, DEFAULT_RECORDING_RATE};
use crate::playback::{Playback, PlaybackError, PlaybackHandle, PlaybackOptions, PlaybackStatus};
use crate::safety::{LockReason, SafetyError, SafetyMonitor, SafetyState, UnlockSource, Verdict, WatchdogParams};

pub type SharedLibrary = Arc<RwLock<ActionLibrary>>;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Playback(#[from] PlaybackError),
    #[error("arm is locked")]
    Locked,
    #[error("a recording is in progress")]
    Recording,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlConfig {
    pub tick_rate: f64,
    pub recording_rate: f64,
    pub watchdog: WatchdogParams,
    pub playback: PlaybackOptions,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            tick_rate: 30.0,
            recording_rate: DEFAULT_RECORDING_RATE,
            watchdog: WatchdogParams::default(),
            playback: PlaybackOptions::default(),
        }
    }
}

impl ControlConfig {
    pub fn tick_period(&self) -> f64 {
        1.0 / self.tick_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmState {
    #[serde(flatten)]
    pub snapshot: ArmSnapshot,
    pub end_effector: Pose,
    pub joint_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum LibraryChange {
    Saved { name: String },
    Renamed { from: String, to: String },
    Deleted { name: String },
    Used { name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlEvent {
    Arm(ArmState),
    Safety(SafetyState),
    Playback(PlaybackStatus),
    Library(LibraryChange),
    Recording { active: bool, samples: usize },
}

pub struct Controller {
    arm: Arm,
    safety: SafetyMonitor,
    recorder: RecordingSession,
    playback: Option<Playback>,
    library: SharedLibrary,
    config: ControlConfig,
    events: Vec<ControlEvent>,
}

impl Controller {
    pub fn new(arm: Arm, library: SharedLibrary, config: ControlConfig) -> Result<Self, ControlError> {
        Ok(Self {
            safety: SafetyMonitor::new(config.watchdog)?,
            arm,
            recorder: RecordingSession::new(),
            playback: None,
            library,
            config,
            events: Vec::new(),
        })
    }

    pub fn arm(&self) -> &Arm {
        &self.arm
    }

    pub fn snapshot(&self) -> ArmSnapshot {
        self.arm.snapshot()
    }

    pub fn arm_state(&self) -> ArmState {
        ArmState {
            snapshot: self.arm.snapshot(),
            end_effector: self.arm.forward_kinematics(),
            joint_points: self.arm.joint_points(),
        }
    }

    pub fn safety_state(&self) -> SafetyState {
        self.safety.state()
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn library(&self) -> &SharedLibrary {
        &self.library
    }

    pub fn is_recording(&self) -> bool {
        self.recorder.is_recording()
    }

    pub fn playback_active(&self) -> bool {
        self.playback.is_some()
    }

    pub fn playback_status(&self) -> Option<PlaybackStatus> {
        self.playback.as_ref().map(|p| p.handle().status())
    }

    pub fn now(&self) -> f64 {
        self.arm.timestamp()
    }

    /// Starts playing `name`, enabling torque if needed.
    pub fn play(&mut self, name: &str) -> Result<PlaybackHandle, ControlError> {
        if self.playback.is_some() {
            return Err(PlaybackError::PlaybackInProgress.into());
        }
        if self.recorder.is_recording() {
            return Err(ControlError::Recording);
        }
        let lib = self.library.read().expect("library lock poisoned");
        if !lib.contains(name) {
            return Err(PlaybackError::NotFound(name.to_string()).into());
        }
        if self.safety.is_locked() {
            return Err(ControlError::Locked);
        }
        if !self.arm.torque_enabled() {
            self.arm.set_torque(true);
        }
        let playback = Playback::start(&lib, name, &self.arm, &self.safety.state(), self.config.playback)?;
        drop(lib);
        self.safety.reset_tracker();
        let handle = playback.handle();
        self.events.push(ControlEvent::Playback(handle.status()));
        self.playback = Some(playback);
        Ok(handle)
    }

    /// Locks the arm, disables torque and aborts any playback. Repeated
    /// trips keep the first reason.
    pub fn trip(&mut self, reason: LockReason) {
        let now = self.now();
        let newly = self.safety.trip(reason, now);
        self.arm.set_torque(false);
        if let Some(mut pb) = self.playback.take() {
            pb.interrupt(&format!("{reason:?}"));
            self.events.push(ControlEvent::Playback(pb.handle().status()));
        }
        if newly {
            self.events.push(ControlEvent::Safety(self.safety.state()));
        }
    }

    pub fn unlock(&mut self, source: UnlockSource) -> Result<(), ControlError> {
        self.safety.unlock(source, self.now())?;
        self.events.push(ControlEvent::Safety(self.safety.state()));
        Ok(())
    }

    pub fn set_torque(&mut self, enabled: bool) -> Result<(), ControlError> {
        if enabled && self.safety.is_locked() {
            return Err(ControlError::Locked);
        }
        if self.playback.is_some() {
            return Err(PlaybackError::PlaybackInProgress.into());
        }
        self.arm.set_torque(enabled);
        Ok(())
    }

    /// Puts the arm in teaching mode (torque off) and starts sampling.
    pub fn start_recording(&mut self) -> Result<(), ControlError> {
        if self.playback.is_some() {
            return Err(PlaybackError::PlaybackInProgress.into());
        }
        if self.recorder.is_recording() {
            return Err(MemoryError::AlreadyRecording.into());
        }
        self.arm.set_torque(false);
        self.recorder.start_recording(&self.arm, self.config.recording_rate)?;
        self.events.push(ControlEvent::Recording { active: true, samples: 1 });
        Ok(())
    }

    pub fn stop_recording(&mut self) -> Result<ActionClip, ControlError> {
        let clip = self.recorder.stop_recording()?;
        self.events.push(ControlEvent::Recording { active: false, samples: clip.samples.len() });
        Ok(clip)
    }

    /// Simulated hand guidance of the torque-off arm.
    pub fn guide(&mut self, positions: JointVector) -> Result<(), ControlError> {
        Ok(self.arm.guide_positions(positions)?)
    }

    pub fn inject_fault(&mut self, fault: FaultSpec) -> Result<(), ControlError> {
        Ok(self.arm.inject_fault(fault)?)
    }

    pub fn clear_faults(&mut self) {
        self.arm.clear_faults();
    }

    pub fn notify_library(&mut self, change: LibraryChange) {
        self.events.push(ControlEvent::Library(change));
    }

    /// Torque off and playback aborted, without locking.
    pub fn shutdown(&mut self) {
        if let Some(mut pb) = self.playback.take() {
            pb.interrupt("shutdown");
            self.events.push(ControlEvent::Playback(pb.handle().status()));
        }
        self.arm.set_torque(false);
    }

    /// Advances the loop by `dt` and returns the events raised since the
    /// previous tick, ending with the arm state.
    pub fn tick(&mut self, dt: f64) -> Vec<ControlEvent> {
        if let Some(pb) = self.playback.as_mut() {
            match pb.advance(dt) {
                Some(target) => {
                    if let Err(e) = self.arm.command_positions(target) {
                        pb.interrupt(&e.to_string());
                        self.events.push(ControlEvent::Playback(pb.handle().status()));
                        self.playback = None;
                        self.arm.set_torque(false);
                    }
                }
                None => self.finish_playback(),
            }
        }

        let snapshot = self.arm.step(dt);
        self.recorder.observe(&snapshot);

        if let Some(pb) = &self.playback {
            self.events.push(ControlEvent::Playback(pb.handle().status()));
            if snapshot.torque_enabled {
                if let Verdict::Trip(joint) = self.safety.monitor_tick(&snapshot) {
                    self.trip(LockReason::Deviation(joint));
                }
            }
        }
        if self.recorder.is_recording() {
            self.events.push(ControlEvent::Recording { active: true, samples: self.recorder.buffered().len() });
        }

        self.events.push(ControlEvent::Arm(self.arm_state()));
        std::mem::take(&mut self.events)
    }

    fn finish_playback(&mut self) {
        let Some(pb) = self.playback.take() else { return };
        let status = pb.handle().status();
        let name = status.name.clone();
        self.events.push(ControlEvent::Playback(status));
        let used = self.library.write().expect("library lock poisoned").mark_used(&name, Utc::now());
        match used {
            Ok(()) => self.events.push(ControlEvent::Library(LibraryChange::Used { name })),
            Err(e) => log::warn!("could not record use of {name:?}: {e}"),
        }
    }
}
