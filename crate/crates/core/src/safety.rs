//! Safety watchdog and lock state machine.
//!
//! Joint positions are compared against their commanded targets at the
//! monitor rate. A joint whose deviation exceeds `epsilon` continuously for
//! longer than `window` trips the watchdog. Any trip locks the arm; only an
//! explicit unlock releases it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmSnapshot, JOINT_COUNT};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_WINDOW: f64 = 0.5;
pub const DEFAULT_MONITOR_RATE: f64 = 30.0;

/// Absorbs floating-point drift in accumulated timestamps so that a
/// deviation lasting exactly `window` does not trip.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SafetyError {
    #[error("arm is not locked")]
    NotLocked,
    #[error("invalid watchdog parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyMode {
    Unlocked,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "joint")]
pub enum LockReason {
    EstopUser,
    EstopAssistant,
    Deviation(usize),
    TapStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlockSource {
    Assistant,
    UserConfirmation,
}

/// Lock state. The reason is present exactly when the arm is locked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyState {
    reason: Option<LockReason>,
    since: f64,
}

impl SafetyState {
    pub fn unlocked(since: f64) -> Self {
        Self { reason: None, since }
    }

    pub fn mode(&self) -> SafetyMode {
        if self.reason.is_some() {
            SafetyMode::Locked
        } else {
            SafetyMode::Unlocked
        }
    }

    pub fn is_locked(&self) -> bool {
        self.reason.is_some()
    }

    pub fn reason(&self) -> Option<LockReason> {
        self.reason
    }

    pub fn since(&self) -> f64 {
        self.since
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatchdogParams {
    pub epsilon: f64,
    pub window: f64,
    pub monitor_rate: f64,
}

impl Default for WatchdogParams {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, window: DEFAULT_WINDOW, monitor_rate: DEFAULT_MONITOR_RATE }
    }
}

impl WatchdogParams {
    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.window > 0.0) {
            return Err(SafetyError::InvalidParams("window must be positive"));
        }
        if !(self.monitor_rate > 0.0) {
            return Err(SafetyError::InvalidParams("monitor rate must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(SafetyError::InvalidParams("epsilon must be non-negative"));
        }
        Ok(())
    }

    pub fn monitor_period(&self) -> f64 {
        1.0 / self.monitor_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Trip(usize),
}

#[derive(Debug, Clone)]
pub struct DeviationTracker {
    params: WatchdogParams,
    deviation_start: [Option<f64>; JOINT_COUNT],
}

impl DeviationTracker {
    pub fn new(params: WatchdogParams) -> Result<Self, SafetyError> {
        params.validate()?;
        Ok(Self { params, deviation_start: [None; JOINT_COUNT] })
    }

    pub fn params(&self) -> &WatchdogParams {
        &self.params
    }

    pub fn deviation_start(&self, joint: usize) -> Option<f64> {
        self.deviation_start[joint]
    }

    pub fn reset(&mut self) {
        self.deviation_start = [None; JOINT_COUNT];
    }

    /// Returns the lowest-numbered joint whose deviation has outlasted the
    /// window, if any.
    pub fn tick(&mut self, snapshot: &ArmSnapshot) -> Verdict {
        let now = snapshot.timestamp;
        let mut verdict = Verdict::Ok;
        for joint in 0..JOINT_COUNT {
            let deviation = (snapshot.positions[joint] - snapshot.targets[joint]).abs();
            if deviation > self.params.epsilon {
                let start = *self.deviation_start[joint].get_or_insert(now);
                if now - start > self.params.window + TIME_SLACK && verdict == Verdict::Ok {
                    verdict = Verdict::Trip(joint);
                }
            } else {
                self.deviation_start[joint] = None;
            }
        }
        verdict
    }
}

/// Lock state plus the deviation tracker it resets on unlock.
#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    state: SafetyState,
    tracker: DeviationTracker,
}

impl SafetyMonitor {
    pub fn new(params: WatchdogParams) -> Result<Self, SafetyError> {
        Ok(Self { state: SafetyState::unlocked(0.0), tracker: DeviationTracker::new(params)? })
    }

    pub fn state(&self) -> SafetyState {
        self.state
    }

    pub fn is_locked(&self) -> bool {
        self.state.is_locked()
    }

    pub fn params(&self) -> &WatchdogParams {
        self.tracker.params()
    }

    pub fn tracker(&self) -> &DeviationTracker {
        &self.tracker
    }

    pub fn monitor_tick(&mut self, snapshot: &ArmSnapshot) -> Verdict {
        self.tracker.tick(snapshot)
    }

    pub fn reset_tracker(&mut self) {
        self.tracker.reset();
    }

    /// Locks the arm. Returns `false` when already locked; the original
    /// reason and time are kept.
    pub fn trip(&mut self, reason: LockReason, now: f64) -> bool {
        if self.state.is_locked() {
            return false;
        }
        self.state = SafetyState { reason: Some(reason), since: now };
        true
    }

    pub fn unlock(&mut self, _source: UnlockSource, now: f64) -> Result<(), SafetyError> {
        if !self.state.is_locked() {
            return Err(SafetyError::NotLocked);
        }
        self.state = SafetyState::unlocked(now);
        self.tracker.reset();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATE: f64 = 30.0;

    fn snapshot(k: usize, deviation: f64) -> ArmSnapshot {
        let mut positions = [0.0; JOINT_COUNT];
        positions[2] = deviation;
        ArmSnapshot { timestamp: k as f64 / RATE, positions, targets: [0.0; JOINT_COUNT], torque_enabled: true }
    }

    fn tracker() -> DeviationTracker {
        DeviationTracker::new(WatchdogParams::default()).unwrap()
    }

    #[test]
    fn short_deviation_never_trips() {
        let mut t = tracker();
        // 0.4 s of deviation (12 ticks), then recovery.
        for k in 0..100 {
            let dev = if (10..=22).contains(&k) { 0.5 } else { 0.0 };
            assert_eq!(t.tick(&snapshot(k, dev)), Verdict::Ok);
        }
    }

    #[test]
    fn sustained_deviation_trips_on_sixteenth_tick() {
        // Tick-arithmetic oracle: first tick strictly after 0.5 s is
        // ceil(0.5 * 30) + 1 = 16 ticks past onset.
        let expected = (DEFAULT_WINDOW * RATE).ceil() as usize + 1;
        assert_eq!(expected, 16);
        let onset = 7;
        let mut t = tracker();
        for k in 0..onset {
            assert_eq!(t.tick(&snapshot(k, 0.0)), Verdict::Ok);
        }
        for k in onset..onset + 40 {
            let v = t.tick(&snapshot(k, 0.3));
            if k - onset < expected {
                assert_eq!(v, Verdict::Ok, "tick {}", k - onset);
            } else {
                assert_eq!(v, Verdict::Trip(2));
                break;
            }
        }
    }

    #[test]
    fn deviation_of_exactly_window_does_not_trip() {
        let mut t = tracker();
        for k in 0..=15 {
            assert_eq!(t.tick(&snapshot(k, 0.3)), Verdict::Ok);
        }
        assert_eq!(t.tick(&snapshot(16, 0.0)), Verdict::Ok);
    }

    #[test]
    fn zero_deviation_is_always_ok() {
        let mut t = tracker();
        for k in 0..10_000 {
            assert_eq!(t.tick(&snapshot(k, 0.0)), Verdict::Ok);
        }
    }

    #[test]
    fn trip_is_idempotent() {
        let mut s = SafetyMonitor::new(WatchdogParams::default()).unwrap();
        assert!(s.trip(LockReason::TapStop, 1.0));
        assert!(!s.trip(LockReason::EstopAssistant, 2.0));
        assert_eq!(s.state().reason(), Some(LockReason::TapStop));
        assert_eq!(s.state().since(), 1.0);
        assert_eq!(s.state().mode(), SafetyMode::Locked);
    }

    #[test]
    fn unlock_transitions() {
        let mut s = SafetyMonitor::new(WatchdogParams::default()).unwrap();
        assert_eq!(s.unlock(UnlockSource::Assistant, 0.0), Err(SafetyError::NotLocked));
        s.trip(LockReason::EstopUser, 0.5);
        s.unlock(UnlockSource::UserConfirmation, 1.0).unwrap();
        assert_eq!(s.state().mode(), SafetyMode::Unlocked);
        assert_eq!(s.state().reason(), None);
    }

    #[test]
    fn unlock_resets_deviation_tracking() {
        let mut s = SafetyMonitor::new(WatchdogParams::default()).unwrap();
        for k in 0..10 {
            s.monitor_tick(&snapshot(k, 0.3));
        }
        s.trip(LockReason::EstopAssistant, 10.0 / RATE);
        s.unlock(UnlockSource::Assistant, 10.0 / RATE).unwrap();
        assert_eq!(s.tracker().deviation_start(2), None);
        // A fresh deviation needs its own full window.
        for k in 10..26 {
            assert_eq!(s.monitor_tick(&snapshot(k, 0.3)), Verdict::Ok);
        }
        assert_eq!(s.monitor_tick(&snapshot(26, 0.3)), Verdict::Trip(2));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = WatchdogParams { window: 0.0, ..Default::default() };
        assert!(DeviationTracker::new(p).is_err());
        let p = WatchdogParams { monitor_rate: -1.0, ..Default::default() };
        assert!(DeviationTracker::new(p).is_err());
    }

    proptest! {
        #[test]
        fn bounded_noise_never_trips(noise in proptest::collection::vec(prop::array::uniform8(-0.0999f64..0.0999), 1..400)) {
            let mut t = tracker();
            for (k, n) in noise.iter().enumerate() {
                let s = ArmSnapshot { timestamp: k as f64 / RATE, positions: *n, targets: [0.0; JOINT_COUNT], torque_enabled: true };
                prop_assert_eq!(t.tick(&s), Verdict::Ok);
            }
        }
    }
}
