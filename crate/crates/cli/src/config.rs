//! Mission configuration: defaults, then the `--config` document, then `VB_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use voxbridge_core::mission::RunnerConfig;
use voxbridge_core::sim::SimConfig;
use voxbridge_core::world::WorldModel;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// World file; the built-in 5x6x3 m room when absent.
    pub world: Option<PathBuf>,
    pub bind: String,
    pub port: u16,
    pub seed: u64,
    pub map_rate_hz: f64,
    pub max_voxels: usize,
    pub sensor_rate_hz: f64,
    pub v_max: f64,
    pub clearance: f64,
    /// Pace the simulator to the wall clock. Subcommands pick their own default when unset.
    pub realtime: Option<bool>,
    pub script: Option<PathBuf>,
    pub session_log: Option<PathBuf>,
    /// Simulated-time limit. Scripted runs default to 600 s, serving runs to unlimited.
    pub max_duration: Option<f64>,
    pub odometry_noise: f64,
    pub gzip: bool,
    /// PLY served once to each /mesh_map subscriber.
    pub mesh: Option<PathBuf>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let runner = RunnerConfig::default();
        Self {
            world: None,
            bind: "127.0.0.1".into(),
            port: 9090,
            seed: sim.seed,
            map_rate_hz: runner.map_rate_hz,
            max_voxels: runner.max_voxels,
            sensor_rate_hz: sim.sensor.rate_hz,
            v_max: sim.v_max,
            clearance: sim.clearance,
            realtime: None,
            script: None,
            session_log: None,
            max_duration: None,
            odometry_noise: sim.odometry_noise,
            gzip: false,
            mesh: None,
        }
    }
}

impl MissionConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let parsed = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            serde_yaml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("map_rate_hz", self.map_rate_hz),
            ("sensor_rate_hz", self.sensor_rate_hz),
            ("v_max", self.v_max),
            ("clearance", self.clearance),
            ("max_duration", self.max_duration.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CliError::Usage(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_voxels < 1 {
            return Err(CliError::Usage("max_voxels must be >= 1".into()));
        }
        if !(self.odometry_noise >= 0.0) {
            return Err(CliError::Usage("odometry_noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn world_model(&self) -> Result<WorldModel, CliError> {
        match &self.world {
            Some(path) => WorldModel::load(path).map_err(|e| CliError::Usage(e.to_string())),
            None => Ok(WorldModel::reference()),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig {
            seed: self.seed,
            v_max: self.v_max,
            clearance: self.clearance,
            odometry_noise: self.odometry_noise,
            ..SimConfig::default()
        };
        cfg.sensor.rate_hz = self.sensor_rate_hz;
        cfg
    }

    pub fn runner_config(&self) -> RunnerConfig {
        let defaults = RunnerConfig::default();
        RunnerConfig {
            map_rate_hz: self.map_rate_hz,
            max_voxels: self.max_voxels,
            max_duration: self.max_duration.unwrap_or(defaults.max_duration),
            ..defaults
        }
    }
}

/// Flags shared by the simulator-driving subcommands. Each also reads `VB_<NAME>`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// World file (YAML or JSON).
    #[arg(long, env = "VB_WORLD")]
    pub world: Option<PathBuf>,
    #[arg(long, env = "VB_BIND")]
    pub bind: Option<String>,
    #[arg(long, env = "VB_PORT")]
    pub port: Option<u16>,
    #[arg(long, env = "VB_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "VB_MAP_RATE_HZ")]
    pub map_rate_hz: Option<f64>,
    #[arg(long, env = "VB_MAX_VOXELS")]
    pub max_voxels: Option<usize>,
    #[arg(long = "rate", alias = "sensor-rate-hz", env = "VB_SENSOR_RATE_HZ")]
    pub sensor_rate_hz: Option<f64>,
    #[arg(long, env = "VB_V_MAX")]
    pub v_max: Option<f64>,
    #[arg(long, env = "VB_CLEARANCE")]
    pub clearance: Option<f64>,
    /// Command script (YAML or JSON).
    #[arg(long, env = "VB_SCRIPT")]
    pub script: Option<PathBuf>,
    /// Where to write the JSON-lines session log.
    #[arg(long = "log", env = "VB_SESSION_LOG")]
    pub session_log: Option<PathBuf>,
    /// Stop after this many simulated seconds.
    #[arg(long, env = "VB_MAX_DURATION")]
    pub max_duration: Option<f64>,
    #[arg(long, env = "VB_ODOMETRY_NOISE")]
    pub odometry_noise: Option<f64>,
    /// Gzip every outbound frame into a binary message.
    #[arg(long, env = "VB_GZIP")]
    pub gzip: Option<bool>,
    /// PLY mesh for /mesh_map.
    #[arg(long, env = "VB_MESH")]
    pub mesh: Option<PathBuf>,
    /// Pace to the wall clock.
    #[arg(long, conflicts_with = "fast")]
    pub realtime: bool,
    /// Run as fast as possible.
    #[arg(long)]
    pub fast: bool,
    #[arg(long = "realtime-default", env = "VB_REALTIME", hide = true)]
    pub realtime_env: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut MissionConfig) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = Some(v.clone());
                }
            )*};
        }
        take!(bind, port, seed, map_rate_hz, max_voxels, sensor_rate_hz, v_max, clearance, odometry_noise, gzip);
        take_opt!(world, script, session_log, mesh, max_duration);
        if let Some(r) = self.realtime_env {
            cfg.realtime = Some(r);
        }
        if self.realtime {
            cfg.realtime = Some(true);
        }
        if self.fast {
            cfg.realtime = Some(false);
        }
    }
}

/// Builds the effective configuration for a subcommand.
pub fn resolve(config_file: Option<&Path>, overrides: &Overrides) -> Result<MissionConfig, CliError> {
    let mut cfg = match config_file {
        Some(path) => MissionConfig::load(path)?,
        None => MissionConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_values() {
        let mut cfg = MissionConfig::parse("port: 7000\nseed: 4\nrealtime: true\n").unwrap();
        let o = Overrides {
            port: Some(8000),
            fast: true,
            ..Overrides::default()
        };
        o.apply(&mut cfg);
        assert_eq!(cfg.port, 8000);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.realtime, Some(false));
    }

    #[test]
    fn json_and_yaml_agree() {
        let y = MissionConfig::parse("map_rate_hz: 4\nmax_voxels: 100\n").unwrap();
        let j = MissionConfig::parse(r#"{"map_rate_hz": 4, "max_voxels": 100}"#).unwrap();
        assert_eq!(y, j);
        assert_eq!(y.port, MissionConfig::default().port);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        assert!(matches!(MissionConfig::parse("portt: 1\n"), Err(CliError::Usage(_))));
        for text in ["map_rate_hz: 0\n", "max_voxels: 0\n", "v_max: -1\n", "sensor_rate_hz: .nan\n"] {
            let cfg = MissionConfig::parse(text).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Usage(_))), "{text}");
        }
    }

    #[test]
    fn config_maps_onto_sim_and_runner() {
        let cfg = MissionConfig::parse("sensor_rate_hz: 5\nmap_rate_hz: 1\nseed: 3\n").unwrap();
        assert_eq!(cfg.sim_config().sensor.rate_hz, 5.0);
        assert_eq!(cfg.sim_config().seed, 3);
        assert_eq!(cfg.runner_config().map_rate_hz, 1.0);
    }
}
