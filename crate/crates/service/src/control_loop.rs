use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use abc_core::control::{ControlEvent, Controller};

use crate::session::{Event, Shared};

/// A command applied to the controller between ticks.
pub(crate) type Job = Box<dyn FnOnce(&mut Controller) + Send>;

pub(crate) struct ControlLoop {
    commands: Sender<Job>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ControlLoop {
    pub fn spawn(controller: Controller, shared: Arc<Shared>) -> Self {
        let (commands, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || run(controller, rx, shared, flag))
            .expect("spawning control loop");
        Self { commands, stop, thread: Some(thread) }
    }

    pub fn commands(&self) -> Sender<Job> {
        self.commands.clone()
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ControlLoop {
    fn drop(&mut self) {
        self.halt();
    }
}

fn run(mut controller: Controller, rx: Receiver<Job>, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    {
        let mut view = shared.view();
        view.arm = Some(controller.arm_state());
        view.safety = Some(controller.safety_state());
    }
    let dt = controller.config().tick_period();
    let period = Duration::from_secs_f64(dt);
    let mut next = Instant::now();

    while !stop.load(Ordering::SeqCst) {
        while let Ok(job) = rx.try_recv() {
            job(&mut controller);
        }
        let events = controller.tick(dt);
        dispatch(&shared, &events);

        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }

    controller.shutdown();
    let events = controller.tick(0.0);
    dispatch(&shared, &events);
    log::info!("control loop stopped, torque off");
}

fn dispatch(shared: &Shared, events: &[ControlEvent]) {
    {
        let mut view = shared.view();
        for event in events {
            match event {
                ControlEvent::Arm(state) => view.arm = Some(state.clone()),
                ControlEvent::Safety(state) => view.safety = Some(*state),
                ControlEvent::Playback(status) => view.playback = Some(status.clone()),
                ControlEvent::Recording { active, .. } => view.recording = *active,
                ControlEvent::Library(_) => {}
            }
        }
    }
    for event in events {
        match event {
            ControlEvent::Library(change) => shared.library_changed(change.clone()),
            other => shared.publish(Event::from(other)),
        }
    }
}
