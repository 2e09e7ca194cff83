//! Simulated servo arm.
//!
//! Eight position-controlled actuators (seven arm joints plus the end
//! effector). Each actuator tracks its target with a first-order rate limit:
//! per step a joint moves toward its target by at most `max_velocity * dt`,
//! then the result is clamped to the joint's position limits. No torque or
//! inertia is simulated; stall torque is carried as descriptive metadata.

use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of actuators, including the end effector.
pub const JOINT_COUNT: usize = 8;

/// One value per actuator, indexed by actuator id.
pub type JointVector = [f64; JOINT_COUNT];

pub const ARM_CONFIG_VERSION: u32 = 1;

pub const DEFAULT_MAX_VELOCITY: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ArmError {
    #[error("expected {JOINT_COUNT} actuator specs, got {0}")]
    SpecCountMismatch(usize),
    #[error("actuator {0}: invalid position limits")]
    InvalidLimits(usize),
    #[error("actuator {0}: max velocity must be positive")]
    InvalidVelocity(usize),
    #[error("actuator ids must be unique and contiguous 0..{JOINT_COUNT}")]
    InvalidIds,
    #[error("torque is disabled")]
    TorqueDisabled,
    #[error("torque is enabled")]
    TorqueEnabled,
    #[error("joint {joint}: position {value} outside limits")]
    LimitViolation { joint: usize, value: f64 },
    #[error("kinematic chain: {0}")]
    InvalidChain(String),
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("arm config: {0}")]
    Config(String),
    #[error("unsupported arm config version {0}")]
    ConfigVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub id: usize,
    pub model_name: String,
    /// Newton-meters. Not used by the servo model.
    pub stall_torque: f64,
    /// Radians per second.
    pub max_velocity: f64,
    /// `[min, max]` in radians.
    pub position_limits: [f64; 2],
}

impl ActuatorSpec {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.position_limits[0] && value <= self.position_limits[1]
    }

    fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.position_limits[0], self.position_limits[1])
    }

    /// The built arm's motor complement: three XM540-W150 (7.3 N·m) on the
    /// proximal joints and five XM430-W350 (4.1 N·m) for the rest.
    pub fn default_complement() -> Vec<ActuatorSpec> {
        (0..JOINT_COUNT)
            .map(|id| {
                let (model_name, stall_torque) = if id < 3 {
                    ("XM540-W150", 7.3)
                } else {
                    ("XM430-W350", 4.1)
                };
                ActuatorSpec {
                    id,
                    model_name: model_name.to_string(),
                    stall_torque,
                    max_velocity: DEFAULT_MAX_VELOCITY,
                    position_limits: [-std::f64::consts::PI, std::f64::consts::PI],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Joint no longer moves.
    Stuck,
    /// Joint settles at `target + magnitude`.
    Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub joint: usize,
    pub kind: FaultKind,
    #[serde(default)]
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn stuck(joint: usize) -> Self {
        Self { joint, kind: FaultKind::Stuck, magnitude: 0.0 }
    }

    pub fn offset(joint: usize, magnitude: f64) -> Self {
        Self { joint, kind: FaultKind::Offset, magnitude }
    }
}

/// One revolute joint of a serial chain: rotate about `axis`, then
/// translate `link_length` along the rotated local x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub axis: [f64; 3],
    pub link_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    links: Vec<ChainLink>,
}

/// End-effector pose in the base frame. Orientation is a unit quaternion
/// stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl KinematicChain {
    pub fn new(links: Vec<ChainLink>) -> Result<Self, ArmError> {
        for (i, link) in links.iter().enumerate() {
            let norm = link.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
                return Err(ArmError::InvalidChain(format!("joint {i}: axis is not a unit vector")));
            }
            if !(link.link_length >= 0.0) || !link.link_length.is_finite() {
                return Err(ArmError::InvalidChain(format!("joint {i}: negative link length")));
            }
        }
        Ok(Self { links })
    }

    /// Shoulder (yaw, pitch, roll), elbow, wrist (roll, pitch, yaw) and a
    /// gripper joint with zero length. Lengths are roughly human scale.
    pub fn default_arm() -> Self {
        const Z: [f64; 3] = [0.0, 0.0, 1.0];
        const Y: [f64; 3] = [0.0, 1.0, 0.0];
        const X: [f64; 3] = [1.0, 0.0, 0.0];
        let spec = [
            (Z, 0.0),
            (Y, 0.0),
            (X, 0.30),
            (Y, 0.0),
            (X, 0.25),
            (Y, 0.0),
            (Z, 0.08),
            (X, 0.0),
        ];
        Self {
            links: spec.iter().map(|&(axis, link_length)| ChainLink { axis, link_length }).collect(),
        }
    }

    pub fn links(&self) -> &[ChainLink] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    fn frames(&self, positions: &[f64]) -> Result<Vec<Isometry3<f64>>, ArmError> {
        if positions.len() != self.links.len() {
            return Err(ArmError::DimensionMismatch { expected: self.links.len(), got: positions.len() });
        }
        let mut frame = Isometry3::identity();
        let mut out = Vec::with_capacity(self.links.len() + 1);
        out.push(frame);
        for (link, &angle) in self.links.iter().zip(positions) {
            let axis = Unit::new_normalize(Vector3::from(link.axis));
            let rotation = UnitQuaternion::from_axis_angle(&axis, angle);
            frame = frame
                * Isometry3::from_parts(Translation3::identity(), rotation)
                * Isometry3::translation(link.link_length, 0.0, 0.0);
            out.push(frame);
        }
        Ok(out)
    }

    pub fn forward_kinematics(&self, positions: &[f64]) -> Result<Pose, ArmError> {
        let frames = self.frames(positions)?;
        let end = frames.last().expect("frames always include the base");
        let q = end.rotation.quaternion();
        let t = end.translation.vector;
        Ok(Pose { position: [t.x, t.y, t.z], orientation: [q.w, q.i, q.j, q.k] })
    }

    /// Base plus the origin of every joint frame, for skeleton rendering.
    pub fn joint_points(&self, positions: &[f64]) -> Result<Vec<[f64; 3]>, ArmError> {
        Ok(self
            .frames(positions)?
            .iter()
            .map(|f| {
                let t = f.translation.vector;
                [t.x, t.y, t.z]
            })
            .collect())
    }
}

/// Immutable arm state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSnapshot {
    pub timestamp: f64,
    pub positions: JointVector,
    pub targets: JointVector,
    pub torque_enabled: bool,
}

/// On-disk arm configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub version: u32,
    pub actuators: Vec<ActuatorSpec>,
    pub chain: KinematicChain,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            version: ARM_CONFIG_VERSION,
            actuators: ActuatorSpec::default_complement(),
            chain: KinematicChain::default_arm(),
        }
    }
}

impl ArmConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArmError> {
        let text = fs::read_to_string(path).map_err(|e| ArmError::Config(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ArmError> {
        let config: ArmConfig = serde_json::from_str(text).map_err(|e| ArmError::Config(e.to_string()))?;
        if config.version != ARM_CONFIG_VERSION {
            return Err(ArmError::ConfigVersion(config.version));
        }
        // Re-validate the chain since deserialization bypasses `KinematicChain::new`.
        KinematicChain::new(config.chain.links.clone())?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArmError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ArmError::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| ArmError::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Arm, ArmError> {
        Arm::new(self.actuators.clone(), self.chain.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    specs: Vec<ActuatorSpec>,
    chain: KinematicChain,
    positions: JointVector,
    targets: JointVector,
    torque_enabled: bool,
    timestamp: f64,
    faults: Vec<FaultSpec>,
}

impl Arm {
    /// Positions and targets start at zero with torque off.
    pub fn new(specs: Vec<ActuatorSpec>, chain: KinematicChain) -> Result<Self, ArmError> {
        if specs.len() != JOINT_COUNT {
            return Err(ArmError::SpecCountMismatch(specs.len()));
        }
        let mut specs = specs;
        specs.sort_by_key(|s| s.id);
        if specs.iter().enumerate().any(|(i, s)| s.id != i) {
            return Err(ArmError::InvalidIds);
        }
        for s in &specs {
            let [lo, hi] = s.position_limits;
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(ArmError::InvalidLimits(s.id));
            }
            if !(s.max_velocity > 0.0) || !s.max_velocity.is_finite() {
                return Err(ArmError::InvalidVelocity(s.id));
            }
        }
        if chain.len() != JOINT_COUNT {
            return Err(ArmError::InvalidChain(format!("expected {JOINT_COUNT} links, got {}", chain.len())));
        }
        // Zero must be reachable; otherwise start at the nearest limit.
        let mut positions = [0.0; JOINT_COUNT];
        for (p, s) in positions.iter_mut().zip(&specs) {
            *p = s.clamp(0.0);
        }
        Ok(Self {
            specs,
            chain,
            positions,
            targets: positions,
            torque_enabled: false,
            timestamp: 0.0,
            faults: Vec::new(),
        })
    }

    pub fn with_defaults() -> Self {
        ArmConfig::default().build().expect("default arm config is valid")
    }

    pub fn specs(&self) -> &[ActuatorSpec] {
        &self.specs
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn max_velocities(&self) -> JointVector {
        std::array::from_fn(|i| self.specs[i].max_velocity)
    }

    pub fn torque_enabled(&self) -> bool {
        self.torque_enabled
    }

    pub fn positions(&self) -> JointVector {
        self.positions
    }

    pub fn targets(&self) -> JointVector {
        self.targets
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn snapshot(&self) -> ArmSnapshot {
        ArmSnapshot {
            timestamp: self.timestamp,
            positions: self.positions,
            targets: self.targets,
            torque_enabled: self.torque_enabled,
        }
    }

    pub fn check_limits(&self, values: &JointVector) -> Result<(), ArmError> {
        for (joint, (&value, spec)) in values.iter().zip(&self.specs).enumerate() {
            if !spec.contains(value) {
                return Err(ArmError::LimitViolation { joint, value });
            }
        }
        Ok(())
    }

    pub fn command_positions(&mut self, targets: JointVector) -> Result<(), ArmError> {
        if !self.torque_enabled {
            return Err(ArmError::TorqueDisabled);
        }
        self.check_limits(&targets)?;
        self.targets = targets;
        Ok(())
    }

    /// Toggling torque in either direction sets the targets to the current
    /// positions, so the arm holds where it is.
    pub fn set_torque(&mut self, enabled: bool) {
        self.torque_enabled = enabled;
        self.targets = self.positions;
    }

    /// Moves a torque-off arm directly, as an assistant would by hand.
    pub fn guide_positions(&mut self, positions: JointVector) -> Result<(), ArmError> {
        if self.torque_enabled {
            return Err(ArmError::TorqueEnabled);
        }
        self.check_limits(&positions)?;
        for (joint, p) in positions.iter().enumerate() {
            if self.fault_for(joint).map(|f| f.kind) != Some(FaultKind::Stuck) {
                self.positions[joint] = *p;
            }
        }
        self.targets = self.positions;
        Ok(())
    }

    pub fn inject_fault(&mut self, fault: FaultSpec) -> Result<(), ArmError> {
        if fault.joint >= JOINT_COUNT {
            return Err(ArmError::DimensionMismatch { expected: JOINT_COUNT, got: fault.joint });
        }
        self.faults.retain(|f| f.joint != fault.joint);
        self.faults.push(fault);
        Ok(())
    }

    pub fn clear_fault(&mut self, joint: usize) {
        self.faults.retain(|f| f.joint != joint);
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
    }

    fn fault_for(&self, joint: usize) -> Option<&FaultSpec> {
        self.faults.iter().find(|f| f.joint == joint)
    }

    /// Advances the simulation by `dt` seconds. Non-positive or non-finite
    /// `dt` leaves the arm unchanged.
    pub fn step(&mut self, dt: f64) -> ArmSnapshot {
        if !(dt > 0.0) || !dt.is_finite() {
            return self.snapshot();
        }
        if self.torque_enabled {
            for joint in 0..JOINT_COUNT {
                let spec = &self.specs[joint];
                let goal = match self.fault_for(joint) {
                    Some(FaultSpec { kind: FaultKind::Stuck, .. }) => continue,
                    Some(FaultSpec { kind: FaultKind::Offset, magnitude, .. }) => {
                        spec.clamp(self.targets[joint] + magnitude)
                    }
                    None => self.targets[joint],
                };
                self.positions[joint] = spec.clamp(rate_limited(self.positions[joint], goal, spec.max_velocity * dt));
            }
        }
        self.timestamp += dt;
        self.snapshot()
    }

    pub fn forward_kinematics(&self) -> Pose {
        self.chain
            .forward_kinematics(&self.positions)
            .expect("arm chain length is checked at construction")
    }

    pub fn joint_points(&self) -> Vec<[f64; 3]> {
        self.chain
            .joint_points(&self.positions)
            .expect("arm chain length is checked at construction")
    }
}

/// Moves `from` toward `to` by at most `max_step`, landing exactly on `to`
/// when it is within reach.
pub fn rate_limited(from: f64, to: f64, max_step: f64) -> f64 {
    let delta = to - from;
    if delta.abs() <= max_step {
        to
    } else {
        from + max_step.copysign(delta)
    }
}
