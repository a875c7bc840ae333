//! Quasi-dynamic simulation of the arm, bowl, food and user's head, and all
//! synthetic sensing derived from it.

pub mod arm;
pub mod face;
pub mod food;
pub mod utensil;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PoseSE3, UnitQuaternion, Vec3};
use crate::perception::food::{BowlGeometry, FoodCloud};
use arm::{ArmModel, JointState, JointVector, N_JOINTS};
use face::{FaceScene, Intrinsics, LandmarkFrame, LandmarkNoise};
use food::{FoodField, FoodSpec};
use utensil::{Utensil, UtensilKind};

/// Fixed integration step, seconds.
pub const DT: f64 = 0.001;
/// Simulation ticks per second.
pub const TICK_HZ: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("joint {joint} at {value} rad is outside [{min}, {max}]")]
    JointLimit { joint: usize, value: f64, min: f64, max: f64 },
    #[error("non-finite torque command, state frozen")]
    NonFiniteTorque,
    #[error("simulation frozen after a fault")]
    Frozen,
}

/// Skin patches that report contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactPatch {
    Bowl,
    Bar,
    Mouth,
    Face,
}

pub const N_PATCHES: usize = 4;

/// One timestamped multimodal reading, sampled every tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub tick: u64,
    pub timestamp: f64,
    pub position: JointVector,
    pub velocity: JointVector,
    /// Joint current proxies, A.
    pub currents: JointVector,
    /// Wrist force, N.
    pub force: Vec3,
    /// Wrist torque, N·m.
    pub torque: Vec3,
    pub contacts: [bool; N_PATCHES],
    /// RMS sound energy proxy.
    pub sound: f64,
    /// Fraction of face landmarks visible in the latest camera frame.
    pub face_visibility: f64,
}

impl SensorFrame {
    pub fn empty() -> Self {
        Self {
            tick: 0,
            timestamp: 0.0,
            position: JointVector::zeros(),
            velocity: JointVector::zeros(),
            currents: JointVector::zeros(),
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
            contacts: [false; N_PATCHES],
            sound: 0.0,
            face_visibility: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    ForceSpike,
    SoundBurst,
    MouthOcclusion,
    MouthClosed,
    CurrentSurge,
}

/// A fault scheduled relative to the start of a subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Subtask name the fault is tied to: scoop, wipe or deliver.
    pub subtask: String,
    /// Seconds after the subtask starts.
    pub after: f64,
    /// Seconds the fault lasts.
    pub duration: f64,
    #[serde(default)]
    pub magnitude: f64,
    /// Which run of the subtask the fault fires in, counting from 1.
    #[serde(default = "one")]
    pub occurrence: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveFault {
    pub kind: FaultKind,
    pub start_tick: u64,
    pub end_tick: u64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub eye: [f64; 3],
    /// Viewpoint used while registering the mouth during delivery.
    pub lifted_eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default)]
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    /// Proximity that counts as contact, m.
    pub contact_threshold: f64,
    /// Current proxy per unit torque, A/(N·m).
    pub k_current: f64,
    /// Per-axis wrist force noise, N.
    pub force_noise: f64,
    pub sound_floor: f64,
    pub sound_noise: f64,
    pub cloud_noise: f64,
    pub landmarks: LandmarkNoise,
    /// Landmark frame period in ticks; 100 gives 10 Hz.
    pub landmark_period: u64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            contact_threshold: 0.002,
            k_current: 0.1,
            force_noise: 0.05,
            sound_floor: 0.02,
            sound_noise: 0.003,
            cloud_noise: 0.001,
            landmarks: LandmarkNoise::default(),
            landmark_period: 100,
        }
    }
}

/// Everything needed to build a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub arm: ArmModel,
    /// Initial joint angles.
    pub home: [f64; N_JOINTS],
    pub bowl: BowlGeometry,
    pub food: FoodSpec,
    /// Wiping bar endpoints in the bowl frame.
    pub bar: [[f64; 3]; 2],
    pub mouth: PoseSE3,
    pub mouth_open: bool,
    pub utensil: UtensilKind,
    pub camera: CameraConfig,
    pub sensing: SensingConfig,
    pub faults: Vec<FaultSpec>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl WorldConfig {
    /// Desk layout used by the shipped scenario and the tests.
    pub fn standard() -> Self {
        let mouth = PoseSE3::new(
            Vec3::new(0.90, 0.22, 0.10),
            UnitQuaternion::from_axes(&Vec3::new(0.0, -1.0, 0.0), &Vec3::z(), &Vec3::new(-1.0, 0.0, 0.0)),
        );
        Self {
            arm: ArmModel::pr2_like(),
            home: [0.3, 0.5, 0.0, -1.6, 0.0, 0.6, 0.0],
            bowl: BowlGeometry {
                pose: PoseSE3::from_translation(Vec3::new(0.80, -0.12, -0.28)),
                diameter: 0.14,
                guard_height: 0.03,
            },
            food: FoodSpec::default(),
            bar: [[0.075, 0.0675, 0.05], [0.075, -0.0675, 0.05]],
            mouth,
            mouth_open: true,
            utensil: UtensilKind::SiliconeSpoon,
            camera: CameraConfig {
                eye: [0.45, 0.22, 0.18],
                lifted_eye: [0.45, 0.22, 0.32],
                target: [0.90, 0.22, 0.10],
                intrinsics: Intrinsics::default(),
            },
            sensing: SensingConfig::default(),
            faults: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        if !(self.bowl.diameter > 0.0) || !(self.bowl.guard_height > 0.0) {
            return Err(SimError::Config("bowl diameter and guard height must be positive".into()));
        }
        let bar = Vec3::from(self.bar[1]) - Vec3::from(self.bar[0]);
        if (bar.norm() - 0.135).abs() > 1e-9 {
            return Err(SimError::Config(format!("wiping bar must be 0.135 m long, got {:.4}", bar.norm())));
        }
        if !(self.food.cell_size > 0.0 && self.food.density > 0.0 && self.food.uniform_height >= 0.0) {
            return Err(SimError::Config("food cell size, density and height must be positive".into()));
        }
        let home = JointVector::from(self.home);
        self.arm.check_limits(&home)?;
        if self.sensing.landmark_period < 100 {
            return Err(SimError::Config("landmark frames must not exceed 10 Hz".into()));
        }
        Ok(())
    }
}

/// Where all food currently is, grams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassLedger {
    pub bowl: f64,
    pub utensil_top: f64,
    pub utensil_bottom: f64,
    pub eaten: f64,
    pub spilled: f64,
}

impl MassLedger {
    pub fn total(&self) -> f64 {
        self.bowl + self.utensil_top + self.utensil_bottom + self.eaten + self.spilled
    }
}

/// Camera viewpoint preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraView {
    Normal,
    Lifted,
}

const LANDMARK_LOG: usize = 64;
/// Tilt beyond which a loaded utensil outside the mouth spills, radians.
const SPILL_TILT: f64 = 35.0 * std::f64::consts::PI / 180.0;
/// Tilt inside the mouth at which the load is released, radians.
const RELEASE_TILT: f64 = 15.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub arm: ArmModel,
    pub state: JointState,
    pub bowl: BowlGeometry,
    pub food: FoodField,
    pub utensil: Utensil,
    pub mouth: PoseSE3,
    pub mouth_open: bool,
    /// Wiping bar endpoints in world coordinates.
    pub bar: [Vec3; 2],
    pub camera_view: CameraView,
    pub eaten: f64,
    pub spilled: f64,
    tick: u64,
    frozen: bool,
    faults: Vec<ActiveFault>,
    subtask_runs: Vec<(String, u32)>,
    sensor: SensorFrame,
    landmarks: VecDeque<LandmarkFrame>,
    landmark_count: u64,
    bar_contact_ticks: u64,
    last_torque: JointVector,
    sensor_rng: ChaCha8Rng,
    landmark_rng: ChaCha8Rng,
    cloud_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, SimError> {
        config.validate()?;
        let food = FoodField::from_spec(&config.food, &config.bowl);
        let bar = [config.bowl.to_world(&Vec3::from(config.bar[0])), config.bowl.to_world(&Vec3::from(config.bar[1]))];
        let mut w = Self {
            arm: config.arm.clone(),
            state: JointState::at_rest(JointVector::from(config.home)),
            bowl: config.bowl,
            food,
            utensil: Utensil::new(config.utensil),
            mouth: config.mouth,
            mouth_open: config.mouth_open,
            bar,
            camera_view: CameraView::Normal,
            eaten: 0.0,
            spilled: 0.0,
            tick: 0,
            frozen: false,
            faults: Vec::new(),
            subtask_runs: Vec::new(),
            sensor: SensorFrame::empty(),
            landmarks: VecDeque::new(),
            landmark_count: 0,
            bar_contact_ticks: 0,
            last_torque: JointVector::zeros(),
            sensor_rng: stream(config.seed, 1),
            landmark_rng: stream(config.seed, 2),
            cloud_rng: stream(config.seed, 3),
            config,
        };
        w.sample_sensors(&Vec3::zeros());
        Ok(w)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn sensor(&self) -> &SensorFrame {
        &self.sensor
    }

    pub fn last_torque(&self) -> &JointVector {
        &self.last_torque
    }

    pub fn gravity_torque(&self) -> JointVector {
        self.arm.gravity_torque(&self.state.position)
    }

    pub fn flange_pose(&self) -> PoseSE3 {
        self.arm.frames_unchecked(&self.state.position).flange
    }

    pub fn tip_pose(&self) -> PoseSE3 {
        self.flange_pose().compose(&self.utensil.tip)
    }

    pub fn camera_pose(&self) -> PoseSE3 {
        let c = &self.config.camera;
        let eye = match self.camera_view {
            CameraView::Normal => c.eye,
            CameraView::Lifted => c.lifted_eye,
        };
        face::look_at(Vec3::from(eye), Vec3::from(c.target))
    }

    pub fn mass_ledger(&self) -> MassLedger {
        MassLedger {
            bowl: self.food.total_mass(),
            utensil_top: self.utensil.load_top,
            utensil_bottom: self.utensil.load_bottom,
            eaten: self.eaten,
            spilled: self.spilled,
        }
    }

    /// Advances one tick under joint torques `tau`.
    ///
    /// Per joint, `θ̈ = (τ − τ_g(θ) − bθ̇)/M` integrated by semi-implicit
    /// Euler; joints that hit a limit are clamped and stopped.
    pub fn step(&mut self, tau: &JointVector) -> Result<(), SimError> {
        if self.frozen {
            return Err(SimError::Frozen);
        }
        if !tau.iter().all(|t| t.is_finite()) {
            self.frozen = true;
            log::error!("non-finite torque at tick {}, simulation frozen", self.tick);
            return Err(SimError::NonFiniteTorque);
        }
        let tip_before = self.tip_pose().position;
        let g = self.arm.gravity_torque(&self.state.position);
        let m = self.arm.inertia();
        let b = self.arm.friction();
        let lo = self.arm.lower_limits();
        let hi = self.arm.upper_limits();
        for i in 0..N_JOINTS {
            let acc = (tau[i] - g[i] - b[i] * self.state.velocity[i]) / m[i];
            self.state.velocity[i] += acc * DT;
            self.state.position[i] += self.state.velocity[i] * DT;
            if self.state.position[i] < lo[i] {
                self.state.position[i] = lo[i];
                self.state.velocity[i] = 0.0;
            } else if self.state.position[i] > hi[i] {
                self.state.position[i] = hi[i];
                self.state.velocity[i] = 0.0;
            }
        }
        self.last_torque = *tau;
        self.tick += 1;
        let tip_velocity = (self.tip_pose().position - tip_before) / DT;
        self.apply_food_rules();
        self.sample_sensors(&tip_velocity);
        Ok(())
    }

    /// Advances the clock with the arm held still and no torque issued.
    pub fn idle_tick(&mut self) {
        self.state.velocity = JointVector::zeros();
        self.last_torque = JointVector::zeros();
        self.tick += 1;
        self.sample_sensors(&Vec3::zeros());
    }

    /// Teleports the arm, for tests and scenario setup.
    pub fn set_joints(&mut self, theta: JointVector) -> Result<(), SimError> {
        self.arm.check_limits(&theta)?;
        self.state = JointState::at_rest(theta);
        Ok(())
    }

    pub fn set_camera_view(&mut self, view: CameraView) {
        self.camera_view = view;
    }

    /// Renders the food surface as a noisy world-frame point cloud.
    pub fn render_food_cloud(&mut self, noise_sigma: f64) -> FoodCloud {
        self.food.render_cloud(&self.bowl, noise_sigma, &mut self.cloud_rng)
    }

    /// Scoops at a world point onto the utensil; returns grams acquired.
    pub fn scoop_effect(&mut self, site: &Vec3) -> f64 {
        let local = self.bowl.to_bowl_frame(site);
        let params = self.utensil.kind.scoop_params();
        let grams = self.food.scoop(&local, self.bowl.radius(), &params);
        let bottom = grams * self.utensil.kind.residue_fraction();
        self.utensil.load_bottom += bottom;
        self.utensil.load_top += grams - bottom;
        grams
    }

    /// Clears underside residue back into the bowl if the utensil touched
    /// the bar since the last call. Returns grams removed.
    pub fn wipe_effect(&mut self) -> f64 {
        let touched = self.bar_contact_ticks > 0;
        self.bar_contact_ticks = 0;
        if !touched {
            return 0.0;
        }
        let grams = self.utensil.load_bottom;
        let mid = 0.5 * (self.bar[0] + self.bar[1]);
        self.food.deposit(&self.bowl.to_bowl_frame(&mid), grams);
        self.utensil.load_bottom = 0.0;
        grams
    }

    pub fn reset_bar_contact(&mut self) {
        self.bar_contact_ticks = 0;
    }

    /// Starts the fault clock for one run of a subtask.
    pub fn arm_faults(&mut self, subtask: &str) {
        let run = match self.subtask_runs.iter_mut().find(|(s, _)| s == subtask) {
            Some((_, n)) => {
                *n += 1;
                *n
            }
            None => {
                self.subtask_runs.push((subtask.to_string(), 1));
                1
            }
        };
        for f in &self.config.faults {
            if f.subtask == subtask && f.occurrence == run {
                let start = self.tick + (f.after * TICK_HZ as f64).round() as u64;
                let end = start + ((f.duration * TICK_HZ as f64).round() as u64).max(1);
                self.faults.push(ActiveFault { kind: f.kind, start_tick: start, end_tick: end, magnitude: f.magnitude });
            }
        }
    }

    /// Drops faults that have not fired yet.
    pub fn disarm_faults(&mut self) {
        let now = self.tick;
        self.faults.retain(|f| f.start_tick <= now && f.end_tick > now);
    }

    pub fn active_faults(&self) -> impl Iterator<Item = &ActiveFault> {
        let now = self.tick;
        self.faults.iter().filter(move |f| f.start_tick <= now && now < f.end_tick)
    }

    fn fault_magnitude(&self, kind: FaultKind) -> Option<f64> {
        self.active_faults().filter(|f| f.kind == kind).map(|f| f.magnitude).reduce(f64::max)
    }

    /// Mouth open state as the world currently presents it.
    pub fn effective_mouth_open(&self) -> bool {
        self.mouth_open && self.fault_magnitude(FaultKind::MouthClosed).is_none()
    }

    /// Tip position in the mouth frame.
    pub fn tip_in_mouth_frame(&self) -> Vec3 {
        self.mouth.inverse().transform_point(&self.tip_pose().position)
    }

    fn inside_mouth(&self, local: &Vec3) -> bool {
        local.x.abs() < 0.03 && local.y.abs() < 0.02 && local.z < 0.0 && local.z > -0.08
    }

    fn tilt(&self) -> f64 {
        let z = self.tip_pose().orientation.rotate(&Vec3::z());
        z.z.clamp(-1.0, 1.0).acos()
    }

    fn apply_food_rules(&mut self) {
        if self.utensil.load() <= 0.0 {
            return;
        }
        let tilt = self.tilt();
        let local = self.tip_in_mouth_frame();
        if self.effective_mouth_open() && self.inside_mouth(&local) {
            if tilt > RELEASE_TILT {
                self.eaten += self.utensil.load();
                self.utensil.load_top = 0.0;
                self.utensil.load_bottom = 0.0;
            }
        } else if tilt > SPILL_TILT {
            self.spilled += self.utensil.load();
            self.utensil.load_top = 0.0;
            self.utensil.load_bottom = 0.0;
        }
    }

    /// Proximity contacts and the wrist force they produce.
    fn contacts_and_force(&self, tip: &PoseSE3, tip_velocity: &Vec3) -> ([bool; N_PATCHES], Vec3) {
        let th = self.config.sensing.contact_threshold;
        let mut contacts = [false; N_PATCHES];
        let mut force = Vec3::new(0.0, 0.0, -self.utensil.load() * 9.81e-3);

        let local = self.bowl.to_bowl_frame(&tip.position);
        let r = local.xy().norm();
        if r <= self.bowl.radius() && local.z <= self.bowl.guard_height + 0.02 {
            let surface = self.food.surface_at(&local);
            let depth = surface - local.z;
            if depth >= -th || local.z <= th {
                contacts[ContactPatch::Bowl as usize] = true;
                let speed = tip_velocity.norm();
                let drag = if speed > 1e-9 { -tip_velocity / speed * (0.3 + 15.0 * speed) } else { Vec3::zeros() };
                force += drag + Vec3::z() * 150.0 * depth.max(0.0);
            }
        }

        let underside = tip.transform_point(&Vec3::new(0.0, 0.0, -0.004));
        let bar_d = face::segment_distance(&underside, &underside, &self.bar[0], &self.bar[1]);
        if bar_d <= th {
            contacts[ContactPatch::Bar as usize] = true;
            force += Vec3::z() * 1.5;
        }

        let m = self.mouth.inverse().transform_point(&tip.position);
        let in_lips = m.x.abs() < 0.03 && m.y.abs() < 0.02 && m.z < th && m.z > -0.08;
        if in_lips {
            let normal = self.mouth.transform_vector(&Vec3::z());
            if self.effective_mouth_open() {
                contacts[ContactPatch::Mouth as usize] = true;
                force += normal * 0.8;
            } else {
                contacts[ContactPatch::Face as usize] = true;
                force += normal * (2.0 + 400.0 * (th - m.z));
            }
        }
        (contacts, force)
    }

    fn sample_sensors(&mut self, tip_velocity: &Vec3) {
        let sense = self.config.sensing;
        if self.tick.is_multiple_of(sense.landmark_period) {
            self.emit_landmarks();
        }
        let flange = self.flange_pose();
        let tip = flange.compose(&self.utensil.tip);
        let (contacts, mut force) = self.contacts_and_force(&tip, tip_velocity);
        if contacts[ContactPatch::Bar as usize] {
            self.bar_contact_ticks += 1;
        }
        let fnoise = Normal::new(0.0, sense.force_noise).expect("finite noise");
        let snoise = Normal::new(0.0, sense.sound_noise).expect("finite noise");
        force += Vec3::new(
            fnoise.sample(&mut self.sensor_rng),
            fnoise.sample(&mut self.sensor_rng),
            fnoise.sample(&mut self.sensor_rng),
        );
        if let Some(m) = self.fault_magnitude(FaultKind::ForceSpike) {
            force += Vec3::x() * m;
        }
        let torque = (tip.position - flange.position).cross(&force);
        let mut sound = sense.sound_floor + 0.05 * self.state.velocity.norm() + snoise.sample(&mut self.sensor_rng).abs();
        if let Some(m) = self.fault_magnitude(FaultKind::SoundBurst) {
            sound += m;
        }
        let surge = self.fault_magnitude(FaultKind::CurrentSurge).unwrap_or(0.0);
        let currents = self.last_torque.map(|t| t.abs() * sense.k_current + surge);
        let face_visibility = self
            .landmarks
            .back()
            .map_or(0.0, |f| f.visible_count() as f64 / face::N_LANDMARKS as f64);
        self.sensor = SensorFrame {
            tick: self.tick,
            timestamp: self.time(),
            position: self.state.position,
            velocity: self.state.velocity,
            currents,
            force,
            torque,
            contacts,
            sound,
            face_visibility,
        };
    }

    fn emit_landmarks(&mut self) {
        let flange = self.flange_pose();
        let tip = flange.compose(&self.utensil.tip);
        let camera = self.camera_pose();
        let scene = FaceScene {
            timestamp: self.time(),
            mouth: &self.mouth,
            mouth_open: self.effective_mouth_open(),
            camera: &camera,
            intrinsics: &self.config.camera.intrinsics,
            utensil: Some((flange.position, tip.position, self.utensil.radius)),
            face_blocked: self.fault_magnitude(FaultKind::MouthOcclusion).is_some(),
        };
        let frame = face::emit_landmarks(&scene, &self.config.sensing.landmarks, &mut self.landmark_rng);
        self.landmarks.push_back(frame);
        self.landmark_count += 1;
        if self.landmarks.len() > LANDMARK_LOG {
            self.landmarks.pop_front();
        }
    }

    /// Number of landmark frames emitted so far.
    pub fn landmark_count(&self) -> u64 {
        self.landmark_count
    }

    pub fn latest_landmarks(&self) -> Option<&LandmarkFrame> {
        self.landmarks.back()
    }
}
