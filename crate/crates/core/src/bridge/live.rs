//! Driver for interactive sessions: commands arrive on a channel,
//! broadcasts leave through a sink, and the clock is paced to real time.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::bridge::protocol::{EventMapper, Payload, SceneBody};
use crate::sim::{World, TICK_HZ};
use crate::task::{CommandKind, Driver, SessionEvent, Source, TaskState};

/// Scene snapshots every this many ticks (10 Hz).
pub const SCENE_PERIOD: u64 = TICK_HZ / 10;

pub struct LiveDriver<F: FnMut(Payload, f64)> {
    inbox: Receiver<(CommandKind, Source)>,
    sink: F,
    mapper: EventMapper,
    state: TaskState,
    now: f64,
    /// Simulated seconds per wall second; None runs flat out.
    speed: Option<f64>,
    start: Option<(Instant, u64)>,
    shutdown: Arc<AtomicBool>,
}

impl<F: FnMut(Payload, f64)> LiveDriver<F> {
    pub fn new(inbox: Receiver<(CommandKind, Source)>, sink: F, speed: Option<f64>, shutdown: Arc<AtomicBool>) -> Self {
        Self { inbox, sink, mapper: EventMapper::default(), state: TaskState::Idle, now: 0.0, speed, start: None, shutdown }
    }

    fn pace(&mut self, tick: u64) {
        let Some(speed) = self.speed else { return };
        let (t0, k0) = *self.start.get_or_insert((Instant::now(), tick));
        if !tick.is_multiple_of(10) {
            return;
        }
        let target = Duration::from_secs_f64((tick - k0) as f64 / TICK_HZ as f64 / speed);
        let elapsed = t0.elapsed();
        if target > elapsed {
            std::thread::sleep(target - elapsed);
        }
    }
}

fn starts_subtask(c: CommandKind) -> bool {
    matches!(c, CommandKind::Scoop | CommandKind::Wipe | CommandKind::Feed | CommandKind::DryRun)
}

/// Orders commands that arrived in the same tick: every Stop first, then
/// the last subtask request, then the rest in arrival order. The rest
/// reach the executive too and are rejected there as busy.
pub fn arbitrate(batch: Vec<(CommandKind, Source)>) -> Vec<(CommandKind, Source)> {
    let last = batch.iter().rposition(|(c, _)| starts_subtask(*c));
    let (mut out, mut rest) = (Vec::with_capacity(batch.len()), Vec::new());
    let mut winner = None;
    for (i, c) in batch.into_iter().enumerate() {
        if c.0 == CommandKind::Stop {
            out.push(c);
        } else if Some(i) == last {
            winner = Some(c);
        } else {
            rest.push(c);
        }
    }
    out.extend(winner);
    out.extend(rest);
    out
}

impl<F: FnMut(Payload, f64)> Driver for LiveDriver<F> {
    fn poll(&mut self, world: &World, state: TaskState) -> Vec<(CommandKind, Source)> {
        self.now = world.time();
        self.state = state;
        self.pace(world.tick());
        if world.tick().is_multiple_of(SCENE_PERIOD) {
            (self.sink)(Payload::Scene(SceneBody::capture(world)), self.now);
        }
        let mut batch = Vec::new();
        loop {
            match self.inbox.try_recv() {
                Ok(c) => batch.push(c),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.shutdown.store(true, Ordering::SeqCst);
                    break;
                }
            }
        }
        arbitrate(batch)
    }

    fn on_event(&mut self, event: &SessionEvent) {
        if let SessionEvent::Transition(t) = event {
            self.state = t.to;
        }
        if let Some(p) = self.mapper.map(event, self.state) {
            (self.sink)(p, self.now);
        }
    }

    fn finished(&mut self, _world: &World) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }
}
