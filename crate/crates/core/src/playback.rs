//! Streaming a recorded clip back onto the arm.
//!
//! A playback is a queue of segments. Each segment first leads the arm in to
//! the clip's first sample at a capped velocity, then streams the clip on its
//! recorded timing. After the requested action, the `init` clip (if present)
//! is queued as a homing segment.
//!
//! Targets are computed one step ahead: the target issued before an arm step
//! of `dt` is the clip position at the clock value reached after that step,
//! so a rate-limited arm lands on the recorded pose at each sample instant.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::arm::{rate_limited, Arm, JointVector, JOINT_COUNT};
use crate::memory::{ActionClip, ActionLibrary, MemoryError, INIT_ACTION};
use crate::safety::SafetyState;

const CLOCK_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaybackPhase {
    LeadIn,
    Playing,
    Homing,
    Completed,
    Interrupted,
}

impl PlaybackPhase {
    pub fn is_finished(self) -> bool {
        matches!(self, PlaybackPhase::Completed | PlaybackPhase::Interrupted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackStatus {
    pub name: String,
    pub phase: PlaybackPhase,
    /// Fraction of the requested clip played, 0..=1.
    pub progress: f64,
    /// Clock inside the requested clip while it is streaming.
    pub clip_time: Option<f64>,
    pub interrupt_reason: Option<String>,
}

/// Shared view of a playback's progress.
#[derive(Debug, Clone)]
pub struct PlaybackHandle(Arc<Mutex<PlaybackStatus>>);

impl PlaybackHandle {
    fn new(name: &str) -> Self {
        Self(Arc::new(Mutex::new(PlaybackStatus {
            name: name.to_string(),
            phase: PlaybackPhase::LeadIn,
            progress: 0.0,
            clip_time: None,
            interrupt_reason: None,
        })))
    }

    pub fn status(&self) -> PlaybackStatus {
        self.0.lock().unwrap().clone()
    }

    pub fn name(&self) -> String {
        self.0.lock().unwrap().name.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.0.lock().unwrap().phase.is_finished()
    }

    pub fn was_interrupted(&self) -> bool {
        self.0.lock().unwrap().phase == PlaybackPhase::Interrupted
    }

    fn update(&self, f: impl FnOnce(&mut PlaybackStatus)) {
        f(&mut self.0.lock().unwrap());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaybackOptions {
    /// Queue `init` after the action to return home.
    pub auto_home: bool,
    /// Lead-in speed as a fraction of each joint's max velocity.
    pub lead_in_fraction: f64,
}

impl Default for PlaybackOptions {
    fn default() -> Self {
        Self { auto_home: true, lead_in_fraction: 0.5 }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    clip: ActionClip,
    homing: bool,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    LeadIn,
    Streaming { clock: f64 },
}

#[derive(Debug)]
pub struct Playback {
    handle: PlaybackHandle,
    queue: VecDeque<Segment>,
    current: Option<(Segment, Stage)>,
    last_target: JointVector,
    lead_in_velocity: JointVector,
}

impl Playback {
    /// Validates the request and prepares the segment queue. The arm is not
    /// touched until the first `advance`.
    pub fn start(
        library: &ActionLibrary,
        name: &str,
        arm: &Arm,
        safety: &SafetyState,
        options: PlaybackOptions,
    ) -> Result<Self, PlaybackError> {
        let clip = library.get(name).ok_or_else(|| PlaybackError::NotFound(name.to_string()))?;
        if safety.is_locked() {
            return Err(PlaybackError::Locked);
        }
        if !arm.torque_enabled() {
            return Err(PlaybackError::TorqueDisabled);
        }
        clip.validate(Some(arm.specs())).map_err(PlaybackError::Clip)?;
        let mut queue = VecDeque::from([Segment { clip: clip.clone(), homing: false }]);
        if options.auto_home && name != INIT_ACTION {
            if let Some(init) = library.get(INIT_ACTION) {
                if init.validate(Some(arm.specs())).is_ok() {
                    queue.push_back(Segment { clip: init.clone(), homing: true });
                }
            }
        }
        let fraction = options.lead_in_fraction.clamp(f64::MIN_POSITIVE, 1.0);
        let max_v = arm.max_velocities();
        Ok(Self {
            handle: PlaybackHandle::new(name),
            queue,
            current: None,
            last_target: arm.targets(),
            lead_in_velocity: std::array::from_fn(|j| max_v[j] * fraction),
        })
    }

    pub fn handle(&self) -> PlaybackHandle {
        self.handle.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    /// Target for the step of length `dt` about to be taken, or `None` once
    /// every segment has been streamed (the handle is then `Completed`).
    pub fn advance(&mut self, dt: f64) -> Option<JointVector> {
        if self.is_finished() {
            return None;
        }
        loop {
            if self.current.is_none() {
                match self.queue.pop_front() {
                    Some(seg) => self.current = Some((seg, Stage::LeadIn)),
                    None => {
                        self.handle.update(|s| {
                            s.phase = PlaybackPhase::Completed;
                            s.progress = 1.0;
                            s.clip_time = None;
                        });
                        return None;
                    }
                }
            }
            let (seg, stage) = self.current.as_mut().expect("set above");
            let homing = seg.homing;
            match *stage {
                Stage::LeadIn => {
                    let goal = seg.clip.first_positions().expect("validated clip has samples");
                    if self.last_target == goal {
                        *stage = Stage::Streaming { clock: 0.0 };
                        continue;
                    }
                    let target: JointVector = std::array::from_fn(|j| {
                        rate_limited(self.last_target[j], goal[j], self.lead_in_velocity[j] * dt)
                    });
                    self.last_target = target;
                    self.handle.update(|s| {
                        s.phase = if homing { PlaybackPhase::Homing } else { PlaybackPhase::LeadIn };
                        s.clip_time = None;
                    });
                    return Some(target);
                }
                Stage::Streaming { clock } => {
                    let duration = seg.clip.duration();
                    let next = clock + dt;
                    if next > duration + CLOCK_SLACK {
                        self.current = None;
                        continue;
                    }
                    *stage = Stage::Streaming { clock: next };
                    let target = seg.clip.position_at(next.min(duration));
                    self.last_target = target;
                    let progress = (next / duration).min(1.0);
                    self.handle.update(|s| {
                        if homing {
                            s.phase = PlaybackPhase::Homing;
                            s.progress = 1.0;
                            s.clip_time = None;
                        } else {
                            s.phase = PlaybackPhase::Playing;
                            s.progress = progress;
                            s.clip_time = Some(next);
                        }
                    });
                    return Some(target);
                }
            }
        }
    }

    pub fn interrupt(&mut self, reason: &str) {
        if self.is_finished() {
            return;
        }
        self.queue.clear();
        self.current = None;
        self.handle.update(|s| {
            s.phase = PlaybackPhase::Interrupted;
            s.clip_time = None;
            s.interrupt_reason = Some(reason.to_string());
        });
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlaybackError {
    #[error("no action named {0:?}")]
    NotFound(String),
    #[error("arm is locked")]
    Locked,
    #[error("another playback is in progress")]
    PlaybackInProgress,
    #[error("arm torque is disabled")]
    TorqueDisabled,
    #[error(transparent)]
    Clip(MemoryError),
}

/// Straight-line joint-space clip between two poses at `speed` rad/s on the
/// slowest joint. Handy for building `init` and test fixtures.
pub fn linear_clip(name: &str, from: JointVector, to: JointVector, speed: f64, rate: f64) -> ActionClip {
    let dist = (0..JOINT_COUNT).map(|j| (to[j] - from[j]).abs()).fold(0.0, f64::max);
    let duration = (dist / speed).max(1.0 / rate);
    let n = (duration * rate).ceil() as usize;
    let samples = (0..=n)
        .map(|i| {
            let w = i as f64 / n as f64;
            crate::memory::Sample {
                t: i as f64 / rate,
                positions: std::array::from_fn(|j| from[j] + w * (to[j] - from[j])),
            }
        })
        .collect();
    ActionClip::new(name, rate, samples)
}
