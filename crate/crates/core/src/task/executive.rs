//! The executive: owns the world and runs subtasks tick by tick.
//!
//! Commands arrive through a [`Driver`] polled once per simulation tick.
//! Subtasks block inside the controller loop; every tick the hook polls
//! the driver, feeds the monitor and, on Stop or an anomaly, switches to
//! AbortReturn and interrupts the motion before the next torque is issued.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::control::plan::{plan_primitive, MotionKind, MotionPrimitive};
use crate::control::track::{track, ControllerConfig, TraceSample, TrackReport};
use crate::geometry::{pitch_roll, PoseSE3, UnitQuaternion, Vec3};
use crate::monitor::{AnomalyEvent, FeatureSequence, Monitor};
use crate::perception::food::{local_surface_height, select_scoop_site, FoodEstimatorConfig, ScoopSiteSet};
use crate::perception::mouth::{MouthConfig, MouthEstimate, MouthEstimator};
use crate::perception::PerceptionError;
use crate::sim::{CameraView, World};
use crate::task::calibration::DeliveryCalibration;
use crate::task::fsm::{Decision, Fsm, Guards, Transition};
use crate::task::script::{delivery_rotation, Action, FrameSet, PrimitiveSpec, ScriptLibrary, SubtaskScript};
use crate::task::{CommandKind, FeedbackLabel, Label, Source, Subtask, TaskError, TaskState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub controller: ControllerConfig,
    pub food: FoodEstimatorConfig,
    pub mouth: MouthConfig,
    /// Stored mouth estimates are reused for this long, s.
    pub mouth_fresh_for: f64,
    /// Give up on mouth estimation after this long, s.
    pub mouth_timeout: f64,
    /// Estimates averaged per mouth estimation.
    pub mouth_samples: usize,
    /// Delivery succeeds if the tip ends this close to the insert waypoint, m.
    pub insert_tolerance: f64,
    /// Abort returns first level the utensil if it is tilted more than this, rad.
    pub level_tolerance: f64,
    pub leveling_duration: f64,
    /// Abort return speed, m/s.
    pub return_speed: f64,
    pub min_return_duration: f64,
    /// Food-surface search radius around the chosen site, m.
    pub surface_radius: f64,
    /// Keep controller traces of every primitive.
    pub record_trace: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            food: FoodEstimatorConfig::default(),
            mouth: MouthConfig::default(),
            mouth_fresh_for: 60.0,
            mouth_timeout: 3.0,
            mouth_samples: 5,
            insert_tolerance: 0.01,
            level_tolerance: 2f64.to_radians(),
            leveling_duration: 1.0,
            return_speed: 0.08,
            min_return_duration: 2.0,
            surface_radius: 0.02,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub tick: u64,
    pub start_tick: u64,
    pub subtask: Subtask,
    pub success: bool,
    pub aborted: bool,
    pub reason: String,
    /// Scooped, wiped off or eaten, depending on the subtask, g.
    pub grams: f64,
    #[serde(default)]
    pub dry_run: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert_tip: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert_target: Option<Vec3>,
}

impl Outcome {
    pub fn duration(&self) -> f64 {
        (self.tick - self.start_tick) as f64 / crate::sim::TICK_HZ as f64
    }
}

/// One append-only session-log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Command {
        tick: u64,
        #[serde(flatten)]
        command: CommandKind,
        source: Source,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Transition(Transition),
    Outcome(Outcome),
    Anomaly(AnomalyEvent),
    Feedback {
        tick: u64,
        execution: usize,
        subtask: Subtask,
        /// None when the prompt was dismissed.
        label: Option<FeedbackLabel>,
    },
    Calibration {
        tick: u64,
        offset: Vec3,
    },
    FoodSite {
        tick: u64,
        index: usize,
        site: Vec3,
        masked_points: usize,
    },
    MouthEstimate {
        tick: u64,
        pose: PoseSE3,
        confidence: f64,
        open: bool,
        reused: bool,
    },
    AbortReturn {
        tick: u64,
        subtask: Subtask,
        /// Largest |pitch| or |roll| while returning, deg.
        max_tilt_deg: f64,
        leveled: bool,
        fallback: bool,
        spilled: f64,
    },
}

impl SessionEvent {
    pub fn tick(&self) -> u64 {
        match self {
            SessionEvent::Command { tick, .. }
            | SessionEvent::Feedback { tick, .. }
            | SessionEvent::Calibration { tick, .. }
            | SessionEvent::FoodSite { tick, .. }
            | SessionEvent::MouthEstimate { tick, .. }
            | SessionEvent::AbortReturn { tick, .. } => *tick,
            SessionEvent::Transition(t) => t.tick,
            SessionEvent::Outcome(o) => o.tick,
            SessionEvent::Anomaly(a) => a.tick,
        }
    }
}

/// Source of operator commands and sink for session events.
pub trait Driver {
    /// Called once per simulation tick; returns commands received.
    fn poll(&mut self, world: &World, state: TaskState) -> Vec<(CommandKind, Source)>;

    fn on_event(&mut self, _event: &SessionEvent) {}

    /// Whether the session may end; asked only while idle.
    fn finished(&mut self, world: &World) -> bool;
}

/// Why a subtask stopped early.
#[derive(Debug, Clone, PartialEq)]
enum Halt {
    Abort,
    Fail(String),
}

struct Collect {
    samples: Vec<MouthEstimate>,
    seen: u64,
}

/// Everything but the world, so the controller hook can borrow it.
struct Ctx {
    fsm: Fsm,
    events: Vec<SessionEvent>,
    monitor: Monitor,
    calibration: DeliveryCalibration,
    calibration_path: Option<PathBuf>,
    mouth: MouthEstimator,
    stored_mouth: Option<MouthEstimate>,
    force_reestimate: bool,
    collect: Option<Collect>,
    mouth_samples: usize,
    dry_run: bool,
    last_polled: Option<u64>,
    interrupt: bool,
    tilt_probe: Option<f64>,
    outcomes: usize,
    pending_feedback: Option<(usize, Subtask)>,
    features: Vec<FeatureSequence>,
}

impl Ctx {
    fn emit(&mut self, e: SessionEvent, driver: &mut dyn Driver) {
        driver.on_event(&e);
        self.events.push(e);
    }

    fn transition(&mut self, to: TaskState, label: Label, cause: &str, source: Source, tick: u64, driver: &mut dyn Driver) {
        let t = self.fsm.go(to, label, cause, source, tick);
        self.emit(SessionEvent::Transition(t), driver);
    }

    fn close_feedback(&mut self, tick: u64, driver: &mut dyn Driver) {
        if let Some((execution, subtask)) = self.pending_feedback.take() {
            self.emit(SessionEvent::Feedback { tick, execution, subtask, label: None }, driver);
        }
    }

    fn command(&mut self, world: &World, kind: CommandKind, source: Source, driver: &mut dyn Driver) {
        let tick = world.tick();
        let guards = Guards { spoon: world.utensil.kind.is_spoon(), loaded: world.utensil.load() > 0.0 };
        let log = |accepted: bool, reason: Option<String>| SessionEvent::Command { tick, command: kind, source, accepted, reason };
        match self.fsm.decide(&kind, &guards) {
            Decision::Reject { reason } => self.emit(log(false, Some(reason)), driver),
            Decision::Go { to, label } => {
                self.emit(log(true, None), driver);
                if to == TaskState::AbortReturn {
                    self.transition(to, label, "stop", source, tick, driver);
                    self.interrupt = true;
                } else {
                    self.close_feedback(tick, driver);
                    self.dry_run = kind == CommandKind::DryRun;
                    self.transition(to, label, kind.name(), source, tick, driver);
                }
            }
            Decision::Accept => match kind {
                CommandKind::Calibrate { direction } => {
                    self.calibration = self.calibration.apply(direction);
                    let persisted = match &self.calibration_path {
                        Some(p) => self.calibration.save(p).map_err(|e| e.to_string()),
                        None => Ok(()),
                    };
                    match persisted {
                        Ok(()) => {
                            self.emit(log(true, None), driver);
                            let offset = self.calibration.offset();
                            self.emit(SessionEvent::Calibration { tick, offset }, driver);
                        }
                        Err(e) => self.emit(log(false, Some(e)), driver),
                    }
                }
                CommandKind::Feedback { label } => match self.pending_feedback.take() {
                    Some((execution, subtask)) => {
                        self.emit(log(true, None), driver);
                        for f in self.features.iter_mut().filter(|f| f.execution == execution) {
                            f.label = Some(label);
                        }
                        self.emit(SessionEvent::Feedback { tick, execution, subtask, label: Some(label) }, driver);
                    }
                    None => self.emit(log(false, Some("no execution awaiting feedback".into())), driver),
                },
                CommandKind::ReEstimateMouth => {
                    self.force_reestimate = true;
                    self.stored_mouth = None;
                    self.emit(log(true, None), driver);
                }
                _ => self.emit(log(true, None), driver),
            },
        }
    }

    /// Runs after every tick. Returns true to interrupt the current motion.
    fn after_tick(&mut self, world: &World, driver: &mut dyn Driver) -> bool {
        let tick = world.tick();
        if let Some(a) = self.monitor.push(world.sensor()) {
            log::info!("anomaly at tick {tick}: {} (score {:.2} < {:.2})", a.label, a.score, a.threshold);
            self.emit(SessionEvent::Anomaly(a), driver);
            self.command(world, CommandKind::Stop, Source::Monitor, driver);
        }
        if self.last_polled != Some(tick) {
            self.last_polled = Some(tick);
            for (kind, source) in driver.poll(world, self.fsm.state) {
                self.command(world, kind, source, driver);
            }
        }
        if let Some(t) = self.tilt_probe.as_mut() {
            let (p, r) = pitch_roll(&world.tip_pose());
            *t = t.max(p.abs()).max(r.abs());
        }
        let mut done = false;
        if let Some(c) = self.collect.as_mut() {
            if world.landmark_count() > c.seen {
                c.seen = world.landmark_count();
                if let Some(frame) = world.latest_landmarks() {
                    match self.mouth.process(frame) {
                        Ok(Some(e)) => c.samples.push(e),
                        Ok(None) => {}
                        Err(e) => log::debug!("mouth frame skipped: {e}"),
                    }
                }
            }
            done = c.samples.len() >= self.mouth_samples && self.mouth.is_registered();
        }
        std::mem::take(&mut self.interrupt) || done
    }
}

/// Mean pose of several estimates.
fn average_estimates(samples: &[MouthEstimate]) -> MouthEstimate {
    let n = samples.len() as f64;
    let position = samples.iter().map(|s| s.pose.position).sum::<Vec3>() / n;
    let q0 = samples[0].pose.orientation;
    let (mut w, mut x, mut y, mut z) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let q = s.pose.orientation;
        let sign = if q.dot(&q0) < 0.0 { -1.0 } else { 1.0 };
        w += sign * q.w;
        x += sign * q.x;
        y += sign * q.y;
        z += sign * q.z;
    }
    let orientation = UnitQuaternion::new_normalize(w, x, y, z).unwrap_or(q0);
    let last = samples.last().expect("nonempty");
    MouthEstimate {
        pose: PoseSE3::new(position, orientation),
        confidence: samples.iter().map(|s| s.confidence).sum::<f64>() / n,
        timestamp: last.timestamp,
        open: last.open,
    }
}

/// The same heading with pitch and roll removed.
fn level(q: &UnitQuaternion) -> UnitQuaternion {
    let x = q.rotate(&Vec3::x());
    let yaw = if x.xy().norm() > 1e-9 { x.y.atan2(x.x) } else { 0.0 };
    UnitQuaternion::from_euler(0.0, 0.0, yaw)
}

pub struct Executive {
    pub world: World,
    pub scripts: ScriptLibrary,
    pub config: ExecConfig,
    /// Controller traces by primitive name, when recording.
    pub traces: Vec<(String, Vec<TraceSample>)>,
    ctx: Ctx,
}

impl Executive {
    pub fn new(world: World, scripts: ScriptLibrary, config: ExecConfig, monitor: Monitor) -> Self {
        let ctx = Ctx {
            fsm: Fsm::default(),
            events: Vec::new(),
            monitor,
            calibration: DeliveryCalibration::default(),
            calibration_path: None,
            mouth: MouthEstimator::new(config.mouth),
            stored_mouth: None,
            force_reestimate: false,
            collect: None,
            mouth_samples: config.mouth_samples.max(1),
            dry_run: false,
            last_polled: None,
            interrupt: false,
            tilt_probe: None,
            outcomes: 0,
            pending_feedback: None,
            features: Vec::new(),
        };
        Self { world, scripts, config, traces: Vec::new(), ctx }
    }

    /// Loads and persists calibration at `path`.
    pub fn with_calibration_file(mut self, path: PathBuf) -> Result<Self, TaskError> {
        self.ctx.calibration = DeliveryCalibration::load(&path)?;
        self.ctx.calibration_path = Some(path);
        Ok(self)
    }

    pub fn state(&self) -> TaskState {
        self.ctx.fsm.state
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.ctx.events
    }

    pub fn calibration(&self) -> DeliveryCalibration {
        self.ctx.calibration
    }

    pub fn set_calibration(&mut self, c: DeliveryCalibration) {
        self.ctx.calibration = c;
    }

    pub fn monitor_mut(&mut self) -> &mut Monitor {
        &mut self.ctx.monitor
    }

    pub fn stored_mouth(&self) -> Option<&MouthEstimate> {
        self.ctx.stored_mouth.as_ref()
    }

    /// Feature sequences of every monitored phase so far.
    pub fn features(&self) -> &[FeatureSequence] {
        &self.ctx.features
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.ctx.events.iter().filter_map(|e| match e {
            SessionEvent::Transition(t) => Some(t),
            _ => None,
        })
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &Outcome> {
        self.ctx.events.iter().filter_map(|e| match e {
            SessionEvent::Outcome(o) => Some(o),
            _ => None,
        })
    }

    /// Runs until the driver finishes while idle, or `max_tick` passes.
    pub fn run(&mut self, driver: &mut dyn Driver, max_tick: u64) -> Result<(), TaskError> {
        loop {
            self.ctx.after_tick(&self.world, driver);
            self.ctx.interrupt = false;
            match self.ctx.fsm.state {
                TaskState::Idle => {
                    if driver.finished(&self.world) || self.world.tick() >= max_tick {
                        break;
                    }
                    self.world.idle_tick();
                }
                TaskState::AbortReturn => self.abort_return(driver)?,
                TaskState::InitScoop | TaskState::InitWipe | TaskState::InitDeliver => self.run_subtask(driver)?,
                s => return Err(TaskError::Sim(format!("executive resumed in {s:?}"))),
            }
            if self.world.is_frozen() {
                return Err(TaskError::Sim("simulation frozen".into()));
            }
        }
        let tick = self.world.tick();
        self.ctx.close_feedback(tick, driver);
        Ok(())
    }

    fn frames(&self) -> FrameSet {
        FrameSet { bowl: self.world.bowl.pose, site: None, bar: self.world.bar, delivery: None }
    }

    fn script(&self, subtask: Subtask) -> &SubtaskScript {
        match subtask {
            Subtask::Scoop if self.world.utensil.kind.is_spoon() => &self.scripts.scoop,
            Subtask::Scoop => &self.scripts.stab,
            Subtask::Wipe => &self.scripts.wipe,
            Subtask::Deliver => &self.scripts.deliver,
        }
    }

    fn go(&mut self, to: TaskState, cause: &str, driver: &mut dyn Driver) {
        let tick = self.world.tick();
        self.ctx.transition(to, Label::Normal, cause, Source::System, tick, driver);
    }

    /// Plans and tracks one primitive. Stop interrupts unless `shielded`.
    fn motion(&mut self, driver: &mut dyn Driver, name: &str, prim: &MotionPrimitive, shielded: bool) -> Result<TrackReport, Halt> {
        let world = &mut self.world;
        let sp = plan_primitive(prim, &world.arm, &world.utensil.tip, &world.state.position)
            .map_err(|e| Halt::Fail(format!("{name}: {e}")))?;
        let ctx = &mut self.ctx;
        let report = track(world, &sp, &self.config.controller, &mut |w| ctx.after_tick(w, driver), self.config.record_trace)
            .map_err(|e| Halt::Fail(format!("{name}: {e}")))?;
        if self.config.record_trace {
            self.traces.push((name.to_string(), report.trace.clone()));
        }
        if report.interrupted && !shielded && self.ctx.fsm.state == TaskState::AbortReturn {
            return Err(Halt::Abort);
        }
        if report.timed_out {
            return Err(Halt::Fail(format!(
                "controller timeout in {name} ({:.1} mm, {:.2} deg)",
                report.position_error * 1e3,
                report.angle_error.to_degrees()
            )));
        }
        Ok(report)
    }

    fn run_specs(&mut self, driver: &mut dyn Driver, specs: &[PrimitiveSpec], frames: &FrameSet) -> Result<Vec<(Action, TrackReport, MotionPrimitive)>, Halt> {
        let mut actions = Vec::new();
        for p in specs {
            let prim = frames.resolve(p).map_err(|e| Halt::Fail(e.to_string()))?;
            let report = self.motion(driver, &p.name, &prim, false)?;
            if let Some(a) = p.action {
                match a {
                    Action::Scoop | Action::Wipe => actions.push((a, report, prim)),
                    Action::CheckInsert => actions.push((a, report, prim)),
                }
            }
        }
        Ok(actions)
    }

    /// Holds the current tip pose for `seconds` or until the hook ends it.
    fn hold(&mut self, driver: &mut dyn Driver, seconds: f64) -> Result<(), Halt> {
        let prim = MotionPrimitive { goal: self.world.tip_pose(), duration: seconds, kind: MotionKind::CartesianLinear };
        self.motion(driver, "hold", &prim, false).map(|_| ())
    }

    fn run_subtask(&mut self, driver: &mut dyn Driver) -> Result<(), TaskError> {
        let subtask = self.ctx.fsm.subtask.expect("init state has a subtask");
        let start_tick = self.ctx.fsm.started;
        let dry_run = self.ctx.dry_run;
        let eaten_before = self.world.eaten;
        let result = match subtask {
            Subtask::Scoop => self.run_scoop(driver),
            Subtask::Wipe => self.run_wipe(driver),
            Subtask::Deliver => self.run_deliver(driver),
        };
        let phase = self.ctx.monitor.end();
        self.world.disarm_faults();
        self.world.set_camera_view(CameraView::Normal);
        let execution = self.ctx.outcomes;
        let mut outcome = Outcome {
            tick: self.world.tick(),
            start_tick,
            subtask,
            success: false,
            aborted: false,
            reason: String::new(),
            grams: 0.0,
            dry_run,
            insert_error: None,
            insert_tip: None,
            insert_target: None,
        };
        match result {
            Err(Halt::Abort) => {
                if let Some((s, features)) = phase {
                    self.ctx.features.push(FeatureSequence { subtask: s, execution, features, completed: false, success: false, label: None });
                }
                // the outcome is written when the return completes
                return Ok(());
            }
            Err(Halt::Fail(reason)) => {
                log::warn!("{} failed: {reason}", subtask.name());
                if self.ctx.fsm.state != self.script_init_state(subtask) {
                    self.return_to_init(driver, subtask, true);
                }
                outcome.tick = self.world.tick();
                outcome.reason = reason;
            }
            Ok(o) => {
                outcome.success = o.success;
                outcome.reason = o.reason;
                outcome.grams = if subtask == Subtask::Deliver { self.world.eaten - eaten_before } else { o.grams };
                outcome.insert_error = o.insert_error;
                outcome.insert_tip = o.insert_tip;
                outcome.insert_target = o.insert_target;
                outcome.tick = self.world.tick();
            }
        }
        if let Some((s, features)) = phase {
            let completed = outcome.reason != "aborted";
            self.ctx.features.push(FeatureSequence { subtask: s, execution, features, completed, success: outcome.success, label: None });
        }
        let cause = if outcome.success { "done" } else { "failed" };
        self.finish(driver, outcome, cause);
        Ok(())
    }

    fn script_init_state(&self, s: Subtask) -> TaskState {
        s.init_state()
    }

    fn finish(&mut self, driver: &mut dyn Driver, outcome: Outcome, cause: &str) {
        let execution = self.ctx.outcomes;
        let subtask = outcome.subtask;
        self.ctx.outcomes += 1;
        self.ctx.emit(SessionEvent::Outcome(outcome), driver);
        self.ctx.pending_feedback = Some((execution, subtask));
        self.go(TaskState::Idle, cause, driver);
    }

    fn run_scoop(&mut self, driver: &mut dyn Driver) -> Result<StepResult, Halt> {
        let script = self.script(Subtask::Scoop).clone();
        let mut frames = self.frames();
        self.run_specs(driver, &script.init, &frames)?;
        self.go(TaskState::EstimateFood, "at_bowl", driver);
        self.hold(driver, self.scripts.estimate_food_hold)?;

        let noise = self.world.config.sensing.cloud_noise;
        let cloud = self.world.render_food_cloud(noise);
        let sites = ScoopSiteSet::standard(&self.world.bowl, &self.config.food);
        let sel = match select_scoop_site(&cloud, &sites, &self.config.food) {
            Ok(s) => s,
            Err(PerceptionError::NoFood) => return Err(Halt::Fail("no food".into())),
            Err(e) => return Err(Halt::Fail(e.to_string())),
        };
        let local = sites.sites[sel.index];
        let surface = local_surface_height(&cloud, &self.config.food, &local, self.config.surface_radius).unwrap_or(0.0);
        let site_local = Vec3::new(local.x, local.y, surface);
        let bowl = self.world.bowl;
        frames.site = Some(bowl.pose.compose(&PoseSE3::from_translation(site_local)));
        let tick = self.world.tick();
        let site = bowl.to_world(&site_local);
        self.ctx.emit(SessionEvent::FoodSite { tick, index: sel.index, site, masked_points: sel.masked_points }, driver);

        self.go(TaskState::Scoop, "food_found", driver);
        self.world.arm_faults("scoop");
        self.ctx.monitor.begin(Subtask::Scoop, self.world.tick(), script.main_duration());
        let actions = self.run_specs(driver, &script.main, &frames)?;
        let mut grams = 0.0;
        for (a, _, _) in actions {
            if a == Action::Scoop {
                grams += self.world.scoop_effect(&site);
            }
        }
        Ok(StepResult { success: grams > 0.0, reason: if grams > 0.0 { "acquired".into() } else { "nothing acquired".into() }, grams, ..StepResult::default() })
    }

    fn run_wipe(&mut self, driver: &mut dyn Driver) -> Result<StepResult, Halt> {
        let script = self.scripts.wipe.clone();
        let frames = self.frames();
        self.run_specs(driver, &script.init, &frames)?;
        self.go(TaskState::Wipe, "at_bar", driver);
        self.world.arm_faults("wipe");
        self.world.reset_bar_contact();
        let mut grams = 0.0;
        for p in &script.main {
            let prim = frames.resolve(p).map_err(|e| Halt::Fail(e.to_string()))?;
            self.motion(driver, &p.name, &prim, false)?;
            if p.action == Some(Action::Wipe) {
                grams += self.world.wipe_effect();
            }
        }
        Ok(StepResult { success: true, reason: "wiped".into(), grams, ..StepResult::default() })
    }

    fn obtain_mouth(&mut self, driver: &mut dyn Driver) -> Result<MouthEstimate, Halt> {
        let now = self.world.time();
        if !self.ctx.force_reestimate {
            if let Some(m) = self.ctx.stored_mouth.clone() {
                if now - m.timestamp <= self.config.mouth_fresh_for {
                    let tick = self.world.tick();
                    self.ctx.emit(SessionEvent::MouthEstimate { tick, pose: m.pose, confidence: m.confidence, open: m.open, reused: true }, driver);
                    return Ok(m);
                }
            }
        }
        if std::mem::take(&mut self.ctx.force_reestimate) {
            self.ctx.mouth.reregister();
        }
        self.ctx.mouth.filter.reset();
        self.ctx.collect = Some(Collect { samples: Vec::new(), seen: self.world.landmark_count() });
        let held = self.hold(driver, self.config.mouth_timeout);
        let samples = self.ctx.collect.take().map(|c| c.samples).unwrap_or_default();
        held?;
        if samples.is_empty() {
            return Err(Halt::Fail("no mouth estimate".into()));
        }
        let m = average_estimates(&samples);
        let tick = self.world.tick();
        self.ctx.emit(SessionEvent::MouthEstimate { tick, pose: m.pose, confidence: m.confidence, open: m.open, reused: false }, driver);
        self.ctx.stored_mouth = Some(m.clone());
        Ok(m)
    }

    fn run_deliver(&mut self, driver: &mut dyn Driver) -> Result<StepResult, Halt> {
        let script = self.scripts.deliver.clone();
        let mut frames = self.frames();
        self.world.set_camera_view(CameraView::Lifted);
        self.run_specs(driver, &script.init, &frames)?;
        self.go(TaskState::EstimateMouth, "at_face_view", driver);
        let mouth = self.obtain_mouth(driver)?;
        let target = self.ctx.calibration.target_pose(&mouth.pose);
        frames.delivery = Some(target.compose(&PoseSE3::from_rotation(delivery_rotation())));

        self.go(TaskState::Deliver, "mouth_found", driver);
        self.world.arm_faults("deliver");
        self.ctx.monitor.begin(Subtask::Deliver, self.world.tick(), script.main_duration());
        let mut out = StepResult::default();
        for (a, _, prim) in self.run_specs(driver, &script.main, &frames)? {
            if a == Action::CheckInsert {
                let tip = self.world.tip_pose().position;
                let err = (tip - prim.goal.position).norm();
                out.insert_error = Some(err);
                out.insert_tip = Some(tip);
                out.insert_target = Some(prim.goal.position);
            }
        }
        self.go(TaskState::TiltAndRetract, "inserted", driver);
        self.run_specs(driver, &script.release, &frames)?;
        out.success = out.insert_error.is_some_and(|e| e <= self.config.insert_tolerance);
        out.reason = if out.success { "delivered".into() } else { "insert point missed".into() };
        Ok(out)
    }

    /// Level-utensil return to the subtask's initial pose. Returns the
    /// largest tilt seen during the return, whether leveling was needed
    /// and whether the joint-space fallback ran.
    fn return_to_init(&mut self, driver: &mut dyn Driver, subtask: Subtask, _failed: bool) -> (f64, bool, bool) {
        let init = &self.script(subtask).init[0].clone();
        let target = match self.frames().resolve(init) {
            Ok(p) => p.goal,
            Err(_) => self.world.tip_pose(),
        };
        let tip = self.world.tip_pose();
        let (p, r) = pitch_roll(&tip);
        let mut leveled = false;
        if p.abs().max(r.abs()) > self.config.level_tolerance {
            leveled = true;
            let prim = MotionPrimitive {
                goal: PoseSE3::new(tip.position, level(&tip.orientation)),
                duration: self.config.leveling_duration,
                kind: MotionKind::CartesianLinear,
            };
            if let Err(Halt::Fail(e)) = self.motion(driver, "level", &prim, true) {
                log::warn!("leveling incomplete: {e}");
            }
        }
        self.ctx.tilt_probe = Some(0.0);
        let here = self.world.tip_pose();
        let dist = (target.position - here.position).norm();
        let duration = (dist / self.config.return_speed).max(self.config.min_return_duration);
        let goal = PoseSE3::new(target.position, level(&target.orientation));
        let prim = MotionPrimitive { goal, duration, kind: MotionKind::CartesianLinear };
        let mut fallback = false;
        if let Err(Halt::Fail(e)) = self.motion(driver, "return", &prim, true) {
            log::warn!("return fell back to joint space: {e}");
            fallback = true;
            let prim = MotionPrimitive { kind: MotionKind::JointPtp, ..prim };
            let _ = self.motion(driver, "return_joint", &prim, true);
        }
        let max_tilt = self.ctx.tilt_probe.take().unwrap_or(0.0);
        (max_tilt, leveled, fallback)
    }

    fn abort_return(&mut self, driver: &mut dyn Driver) -> Result<(), TaskError> {
        let subtask = self.ctx.fsm.subtask.expect("abort keeps its subtask");
        let start_tick = self.ctx.fsm.started;
        let spilled_before = self.world.spilled;
        let eaten_before = self.world.eaten;
        if let Some((s, features)) = self.ctx.monitor.end() {
            let execution = self.ctx.outcomes;
            self.ctx.features.push(FeatureSequence { subtask: s, execution, features, completed: false, success: false, label: None });
        }
        self.world.disarm_faults();
        let (max_tilt, leveled, fallback) = self.return_to_init(driver, subtask, false);
        self.world.set_camera_view(CameraView::Normal);
        let tick = self.world.tick();
        let spilled = self.world.spilled - spilled_before;
        self.ctx.emit(
            SessionEvent::AbortReturn { tick, subtask, max_tilt_deg: max_tilt.to_degrees(), leveled, fallback, spilled },
            driver,
        );
        let outcome = Outcome {
            tick,
            start_tick,
            subtask,
            success: false,
            aborted: true,
            reason: "aborted".into(),
            grams: self.world.eaten - eaten_before,
            dry_run: self.ctx.dry_run,
            insert_error: None,
            insert_tip: None,
            insert_target: None,
        };
        self.finish(driver, outcome, "returned");
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct StepResult {
    success: bool,
    reason: String,
    grams: f64,
    insert_error: Option<f64>,
    insert_tip: Option<Vec3>,
    insert_target: Option<Vec3>,
}

/// Issues commands at fixed ticks; finishes when all are sent. In
/// sequential mode each command also waits for the executive to be idle.
#[derive(Debug, Clone, Default)]
pub struct TimedDriver {
    pub commands: std::collections::VecDeque<(u64, CommandKind, Source)>,
    pub sequential: bool,
}

impl TimedDriver {
    pub fn new(mut commands: Vec<(u64, CommandKind, Source)>) -> Self {
        commands.sort_by_key(|c| c.0);
        Self { commands: commands.into(), sequential: false }
    }

    /// Runs `commands` back to back, each as soon as the executive is idle.
    pub fn sequence(commands: impl IntoIterator<Item = CommandKind>) -> Self {
        Self { commands: commands.into_iter().map(|c| (0, c, Source::Cli)).collect(), sequential: true }
    }
}

impl Driver for TimedDriver {
    fn poll(&mut self, world: &World, state: TaskState) -> Vec<(CommandKind, Source)> {
        let mut out = Vec::new();
        while self.commands.front().is_some_and(|c| c.0 <= world.tick()) {
            if self.sequential && (state != TaskState::Idle || !out.is_empty()) {
                break;
            }
            let (_, k, s) = self.commands.pop_front().expect("checked");
            out.push((k, s));
        }
        out
    }

    fn finished(&mut self, _world: &World) -> bool {
        self.commands.is_empty()
    }
}
