//! Dual-port HTTP and WebSocket front end for the gesture arm.
//!
//! The user and the assistant each get their own listener. Both share one
//! arm, one safety state and one action library; which endpoints answer on
//! a port depends only on the port's role. Arm-affecting commands go through
//! a single queue drained by the fixed-rate control loop.

pub mod config;
mod control_loop;
mod routes;
mod session;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use abc_core::arm::{Arm, ArmConfig};
use abc_core::control::{ControlConfig, Controller};
use abc_core::memory::ActionLibrary;
use abc_core::playback::PlaybackOptions;
use abc_core::recommend::{BackendError, Conversation, LiveBackend, LlmBackend, MockBackend};

pub use config::{BackendConfig, InputSettings, ServiceConfig};
pub use routes::Role;
pub use session::{HistoryEntry, RecommendationStatus, HISTORY_CAPACITY};

use control_loop::ControlLoop;
use routes::AppState;
use session::Shared;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Stands in for a live backend whose credential is missing, so the rest
/// of the service still runs and capture reports a readable error.
struct UnconfiguredBackend(String);

impl LlmBackend for UnconfiguredBackend {
    fn id(&self) -> String {
        "unconfigured".into()
    }

    fn complete(&self, _conversation: &Conversation<'_>) -> Result<String, BackendError> {
        Err(BackendError::Unavailable(self.0.clone()))
    }
}

fn build_backend(config: &BackendConfig) -> Result<Arc<dyn LlmBackend>, ServiceError> {
    match config {
        BackendConfig::Mock { file } => MockBackend::from_file(file)
            .map(|b| Arc::new(b) as Arc<dyn LlmBackend>)
            .map_err(|e| ServiceError::Config(format!("mock backend: {e}"))),
        BackendConfig::Live(live) => match LiveBackend::from_env(live.clone()) {
            Ok(b) => Ok(Arc::new(b)),
            Err(e) => {
                log::warn!("live backend disabled: {e}");
                Ok(Arc::new(UnconfiguredBackend(e.to_string())))
            }
        },
    }
}

pub struct RunningService {
    user_addr: SocketAddr,
    assistant_addr: SocketAddr,
    shutdown_tx: watch::Sender<bool>,
    servers: Vec<JoinHandle<()>>,
    control: Option<ControlLoop>,
}

impl RunningService {
    pub fn user_addr(&self) -> SocketAddr {
        self.user_addr
    }

    pub fn assistant_addr(&self) -> SocketAddr {
        self.assistant_addr
    }

    /// Stops both listeners and the control loop, leaving the arm torque-off.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown_tx.send(true);
        for server in self.servers.drain(..) {
            let _ = server.await;
        }
        if let Some(control) = self.control.take() {
            let _ = tokio::task::spawn_blocking(move || control.stop()).await;
        }
    }

    /// Runs until ctrl-c, then shuts down.
    pub async fn run_until_ctrl_c(self) {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
        self.shutdown().await;
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        let _ = self.shutdown_tx.send(true);
        if let Some(control) = self.control.take() {
            control.stop();
        }
    }
}

pub async fn serve(config: ServiceConfig) -> Result<RunningService, ServiceError> {
    config.validate()?;
    let backend = build_backend(&config.backend)?;
    serve_with_backend(config, backend).await
}

/// Like [`serve`], with the recommendation backend supplied by the caller.
pub async fn serve_with_backend(
    config: ServiceConfig,
    backend: Arc<dyn LlmBackend>,
) -> Result<RunningService, ServiceError> {
    config.validate()?;

    let arm = match &config.arm_config {
        Some(path) => ArmConfig::load(path).and_then(|c| c.build()),
        None => Ok(Arm::with_defaults()),
    }
    .map_err(|e| ServiceError::Config(format!("arm: {e}")))?;

    let mut library =
        ActionLibrary::open(&config.library_path).map_err(|e| ServiceError::Config(format!("library: {e}")))?;
    library.set_limits(Some(arm.specs().to_vec()));
    let library = Arc::new(RwLock::new(library));

    let control_config = ControlConfig {
        tick_rate: config.tick_rate,
        watchdog: config.watchdog,
        playback: PlaybackOptions { auto_home: config.auto_home, ..PlaybackOptions::default() },
        ..ControlConfig::default()
    };
    let controller = Controller::new(arm, library.clone(), control_config)
        .map_err(|e| ServiceError::Config(e.to_string()))?;

    let user_listener = bind(&config, config.user_port).await?;
    let assistant_listener = bind(&config, config.assistant_port).await?;
    let user_addr = user_listener.local_addr()?;
    let assistant_addr = assistant_listener.local_addr()?;

    let shared = Arc::new(Shared::new(library, backend, config.input));
    let control = ControlLoop::spawn(controller, shared.clone());
    let state = AppState { shared, commands: control.commands() };

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let mut servers = Vec::new();
    for (listener, role) in [(user_listener, Role::User), (assistant_listener, Role::Assistant)] {
        let app = routes::router(role, state.clone());
        let mut rx = shutdown_rx.clone();
        servers.push(tokio::spawn(async move {
            let result = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = rx.wait_for(|stop| *stop).await;
                })
                .await;
            if let Err(e) = result {
                log::error!("{role:?} listener failed: {e}");
            }
        }));
    }
    log::info!("user interface on {user_addr}, assistant interface on {assistant_addr}");

    Ok(RunningService { user_addr, assistant_addr, shutdown_tx, servers, control: Some(control) })
}

async fn bind(config: &ServiceConfig, port: u16) -> Result<TcpListener, ServiceError> {
    TcpListener::bind((config.bind_addr, port)).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(port),
        _ => ServiceError::Io(e),
    })
}
