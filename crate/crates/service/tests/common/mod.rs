#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures_util::StreamExt;
use serde_json::Value;
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;

use abc_core::arm::JOINT_COUNT;
use abc_core::memory::{ActionLibrary, INIT_ACTION};
use abc_core::playback::linear_clip;
use abc_core::recommend::MockBackend;
use abc_service::{serve_with_backend, RunningService, ServiceConfig};

pub fn fixture_image(n: usize) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/fixtures/study1/images/stimulus_{n:02}.png"));
    std::fs::read(path).expect("fixture image")
}

/// Writes a library holding `init` plus short clips under `names`.
pub fn seed_library(path: &Path, names: &[&str]) {
    let mut lib = ActionLibrary::new();
    lib.save_action(linear_clip(INIT_ACTION, [0.2; JOINT_COUNT], [0.0; JOINT_COUNT], 1.0, 30.0), INIT_ACTION, false)
        .unwrap();
    for (i, name) in names.iter().enumerate() {
        let to = [0.1 + 0.05 * i as f64; JOINT_COUNT];
        lib.save_action(linear_clip(name, [0.0; JOINT_COUNT], to, 1.0, 30.0), name, false).unwrap();
    }
    lib.save_library(path).unwrap();
}

pub struct Harness {
    pub service: Option<RunningService>,
    pub dir: TempDir,
    pub mock: Arc<MockBackend>,
    pub client: reqwest::Client,
}

impl Harness {
    pub async fn start(names: &[&str], mock: MockBackend) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let library_path = dir.path().join("actions.json");
        if !names.is_empty() {
            seed_library(&library_path, names);
        }
        let config = ServiceConfig { user_port: 0, assistant_port: 0, library_path, ..Default::default() };
        let mock = Arc::new(mock);
        let service = serve_with_backend(config, mock.clone()).await.unwrap();
        Self { service: Some(service), dir, mock, client: reqwest::Client::new() }
    }

    fn service(&self) -> &RunningService {
        self.service.as_ref().expect("service running")
    }

    pub fn user(&self, path: &str) -> String {
        format!("http://{}{path}", self.service().user_addr())
    }

    pub fn assistant(&self, path: &str) -> String {
        format!("http://{}{path}", self.service().assistant_addr())
    }

    pub fn ws_url(&self, user: bool) -> String {
        let addr = if user { self.service().user_addr() } else { self.service().assistant_addr() };
        format!("ws://{addr}/ws/state")
    }

    pub fn library_path(&self) -> PathBuf {
        self.dir.path().join("actions.json")
    }

    pub async fn get_json(&self, url: String) -> Value {
        self.client.get(url).send().await.unwrap().json().await.unwrap()
    }

    pub async fn post(&self, url: String) -> reqwest::Response {
        self.client.post(url).send().await.unwrap()
    }

    pub async fn capture(&self, image: Vec<u8>) -> reqwest::Response {
        let part = reqwest::multipart::Part::bytes(image).file_name("frame.png").mime_str("image/png").unwrap();
        let form = reqwest::multipart::Form::new().part("image", part);
        self.client.post(self.user("/capture")).multipart(form).send().await.unwrap()
    }

    /// Polls `/state` until `pred` holds or `timeout` passes.
    pub async fn wait_state(&self, timeout: Duration, pred: impl Fn(&Value) -> bool) -> Value {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let state = self.get_json(self.user("/state")).await;
            if pred(&state) || tokio::time::Instant::now() > deadline {
                return state;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn shutdown(&mut self) {
        if let Some(service) = self.service.take() {
            service.shutdown().await;
        }
    }
}

pub type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

pub async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

/// Next JSON envelope, or `None` on close or timeout.
pub async fn next_event(ws: &mut Ws, timeout: Duration) -> Option<Value> {
    loop {
        match tokio::time::timeout(timeout, ws.next()).await {
            Ok(Some(Ok(Message::Text(text)))) => return serde_json::from_str(&text).ok(),
            Ok(Some(Ok(Message::Close(_)))) | Ok(None) | Ok(Some(Err(_))) | Err(_) => return None,
            Ok(Some(Ok(_))) => continue,
        }
    }
}
