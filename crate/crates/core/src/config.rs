//! Run configuration: TOML file, `INFSTORY_CONFIG` fallback, flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::mock::world::MockWorld;
use crate::backends::{Backends, MockConfig, MockService, RetryPolicy, Seat};

pub const CONFIG_ENV: &str = "INFSTORY_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

/// Background used when composing keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// One canonical background per location, reused by every keyframe.
    Injected,
    /// A freshly generated background for every keyframe (ablation).
    PerShotRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    /// Frames per clip.
    pub frames_per_shot: u32,
    pub backend: BackendKind,
    /// Base URL for every remote seat.
    pub endpoint: String,
    /// Per-seat base URL overrides, keyed by seat name.
    pub endpoints: BTreeMap<String, String>,
    pub strict: bool,
    pub out: PathBuf,
    pub run_id: Option<String>,
    /// Largest per-frame glyph displacement of the mock world, in pixels.
    pub s_max: f64,
    /// Visibility change bound; derived from `s_max` and the glyph size when unset.
    pub delta_max: Option<f64>,
    pub edge_margin: u32,
    pub glyph_size: u32,
    pub jobs: usize,
    /// Muxer command template; `{frames}`, `{fps}` and `{output}` are substituted.
    pub mux: Option<String>,
    pub background_mode: BackgroundMode,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub t2v_fail_fraction: f64,
    pub dataset: DatasetSettings,
}

/// Transition dataset factory settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    /// Fraction of the ten variation batches generated per flavor.
    pub scale: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: u32,
    pub max_characters: u32,
    /// Manifest size; defaults to the number of passing clips.
    pub manifest_rows: Option<usize>,
    /// Attempts per dataset agent call.
    pub llm_attempts: u32,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            scale: 1.0,
            width: 128,
            height: 64,
            frame_count: 10,
            fps: 2,
            max_characters: 4,
            manifest_rows: None,
            llm_attempts: 3,
        }
    }
}

impl DatasetSettings {
    /// Variation batches per flavor: `round(10 * scale)`, at least one.
    pub fn batches(&self) -> u32 {
        ((10.0 * self.scale).round() as u32).max(1)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            width: 128,
            height: 80,
            fps: 8,
            frames_per_shot: 40,
            backend: BackendKind::Mock,
            endpoint: "http://127.0.0.1:8765".into(),
            endpoints: BTreeMap::new(),
            strict: false,
            out: PathBuf::from("runs"),
            run_id: None,
            s_max: 2.0,
            delta_max: None,
            edge_margin: 16,
            glyph_size: 16,
            jobs: 1,
            mux: None,
            background_mode: BackgroundMode::Injected,
            retries: 3,
            backoff_ms: 200,
            timeout_ms: 600_000,
            t2v_fail_fraction: crate::backends::mock::CALIBRATED_T2V_FAILURE,
            dataset: DatasetSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Load from `path`, else from `$INFSTORY_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Read { path: p.clone(), source })?;
                Self::from_toml(&text, &p)
            }
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.frames_per_shot < 2 {
            return bad("frames_per_shot must be at least 2");
        }
        if self.fps == 0 {
            return bad("fps must be positive");
        }
        if self.glyph_size == 0 || self.width < 2 * self.glyph_size || self.height < self.glyph_size {
            return bad("frame must fit at least two glyphs side by side");
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return bad("s_max must be a positive number");
        }
        if !(0.0..=1.0).contains(&self.t2v_fail_fraction) {
            return bad("t2v_fail_fraction must lie in [0, 1]");
        }
        let d = &self.dataset;
        if !(d.scale > 0.0 && d.scale <= 1.0) {
            return bad("dataset.scale must lie in (0, 1]");
        }
        if d.frame_count < 2 || d.fps == 0 || d.width < 4 * self.glyph_size || d.height < 2 * self.glyph_size {
            return bad("dataset clips need at least two frames, a positive fps and room for four glyphs");
        }
        if d.max_characters > 4 {
            return bad("dataset.max_characters is at most 4");
        }
        for seat in self.endpoints.keys() {
            if Seat::parse(seat).is_none() {
                return Err(ConfigError::Invalid(format!("unknown seat \"{seat}\" in endpoints")));
            }
        }
        Ok(())
    }

    pub fn world(&self) -> MockWorld {
        MockWorld { seed: self.seed, glyph_size: self.glyph_size, s_max: self.s_max, edge_margin: self.edge_margin }
    }

    /// Pixels a mock figure must cover in one transition versus the pixels
    /// it can cover at `s_max`. Transitions fail when the first exceeds the second.
    pub fn transition_reach(&self) -> (f64, f64) {
        let need = self.width as f64 / 2.0 + self.glyph_size as f64 / 2.0 + 1.0;
        (need, self.s_max * (self.frames_per_shot - 1) as f64)
    }

    pub fn effective_delta_max(&self) -> f64 {
        self.delta_max.unwrap_or_else(|| self.world().delta_max())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.retries.max(1), base_delay_ms: self.backoff_ms, max_delay_ms: self.backoff_ms.saturating_mul(16) }
    }

    pub fn mock_config(&self) -> MockConfig {
        MockConfig { world: self.world(), t2v_fail_fraction: self.t2v_fail_fraction }
    }

    /// Build the seat handles this configuration asks for.
    pub fn backends(&self) -> Backends {
        match self.backend {
            BackendKind::Mock => Backends::mock(Arc::new(MockService::new(self.mock_config())), self.retry_policy()),
            BackendKind::Remote => {
                let endpoints =
                    self.endpoints.iter().filter_map(|(k, v)| Seat::parse(k).map(|s| (s, v.clone()))).collect();
                Backends::remote(&self.endpoint, &endpoints, self.retry_policy(), Duration::from_millis(self.timeout_ms))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.effective_delta_max(), 0.5);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\nframes_per_shot = 16\n[endpoints]\nllm = \"http://h:1\"\n", Path::new("x")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.frames_per_shot, 16);
        assert_eq!(cfg.fps, 8);
        assert_eq!(cfg.endpoints["llm"], "http://h:1");
        let cfg = RunConfig::from_toml("[dataset]\nscale = 0.1\n", Path::new("x")).unwrap();
        assert_eq!(cfg.dataset.batches(), 1);
        assert_eq!(cfg.dataset.width, 128);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::from_toml("sed = 1", Path::new("x")), Err(ConfigError::Parse { .. })));
        assert!(matches!(RunConfig::from_toml("frames_per_shot = 1", Path::new("x")), Err(ConfigError::Invalid(_))));
        assert!(RunConfig::from_toml("[endpoints]\nvideo = \"u\"", Path::new("x")).is_err());
    }
}
