use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use abc_core::recommend::LiveConfig;
use abc_core::safety::WatchdogParams;

use crate::ServiceError;

pub const MIN_SCAN_INTERVAL: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Digest-keyed reply table (JSON object).
    Mock { file: PathBuf },
    /// Vision chat API; the key comes from `ABC_LLM_API_KEY`.
    Live(LiveConfig),
}

/// Switch-access settings forwarded to the user panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSettings {
    pub scan_interval_s: f64,
    pub debounce_s: f64,
}

impl Default for InputSettings {
    fn default() -> Self {
        Self { scan_interval_s: 1.0, debounce_s: 0.3 }
    }
}

impl InputSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.scan_interval_s >= MIN_SCAN_INTERVAL) || !self.scan_interval_s.is_finite() {
            return Err(format!("scan_interval_s must be at least {MIN_SCAN_INTERVAL}"));
        }
        if !(self.debounce_s >= 0.0) || !self.debounce_s.is_finite() {
            return Err("debounce_s must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind_addr: IpAddr,
    pub user_port: u16,
    pub assistant_port: u16,
    pub library_path: PathBuf,
    pub arm_config: Option<PathBuf>,
    pub backend: BackendConfig,
    pub watchdog: WatchdogParams,
    pub tick_rate: f64,
    pub auto_home: bool,
    pub input: InputSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_addr: IpAddr::from([127, 0, 0, 1]),
            user_port: 8080,
            assistant_port: 8081,
            library_path: PathBuf::from("actions.json"),
            arm_config: None,
            backend: BackendConfig::Live(LiveConfig::default()),
            watchdog: WatchdogParams::default(),
            tick_rate: 30.0,
            auto_home: true,
            input: InputSettings::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Port 0 on both sides (ephemeral ports) is allowed.
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.user_port == self.assistant_port && self.user_port != 0 {
            return Err(ServiceError::Config("user_port and assistant_port must differ".into()));
        }
        self.watchdog.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if !(self.tick_rate > 0.0) || !self.tick_rate.is_finite() {
            return Err(ServiceError::Config("tick_rate must be positive".into()));
        }
        self.input.validate().map_err(ServiceError::Config)?;
        Ok(())
    }
}
