//! Flat key-value run configuration (`key = value`, one per line, dotted
//! sections, `#` comments). Diff-friendly and language-neutral.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::aiding::{AidingThresholds, MeasurementNoise, RoverGeometry};
use crate::ekf::{ImuNoiseSpec, InitialUncertainty};
use crate::geodesy::GeodeticPosition;
use crate::pipeline::PipelineError;
use crate::smoother::DEFAULT_MAX_EPOCHS;

/// How odom.csv encodes wheel motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdomFormat {
    /// Columns `t, left_mps, right_mps`.
    Speeds,
    /// Columns `t, left_pulses, right_pulses` (counts per tick), converted
    /// through `odometry.pulses_per_m`.
    Pulses,
}

/// Initial navigation state for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitState {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub velocity_ned: Vector3<f64>,
    pub time: f64,
}

/// Everything a filter run needs besides the sensor streams themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub imu_path: String,
    pub odom_path: String,
    pub truth_path: Option<String>,
    pub odom_format: OdomFormat,
    pub pulses_per_m: f64,
    pub imu_rate: f64,
    pub odom_rate: f64,
    pub geometry: RoverGeometry,
    pub imu_noise: ImuNoiseSpec,
    pub init: InitState,
    /// Draw the initial estimate error from the initial covariance
    /// (seeded); off means start exactly at `init`.
    pub perturb_init: bool,
    pub uncertainty: InitialUncertainty,
    pub noise: MeasurementNoise,
    pub thresholds: AidingThresholds,
    pub max_segment_epochs: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for a dataset rooted at standard file names.
    pub fn defaults(init: InitState) -> Self {
        let imu_noise = ImuNoiseSpec::tactical_grade();
        RunConfig {
            imu_path: "imu.csv".to_string(),
            odom_path: "odom.csv".to_string(),
            truth_path: Some("truth.csv".to_string()),
            odom_format: OdomFormat::Speeds,
            pulses_per_m: 78_000.0,
            imu_rate: 100.0,
            odom_rate: 10.0,
            geometry: RoverGeometry::skid_steer_default(),
            imu_noise,
            init,
            perturb_init: true,
            uncertainty: InitialUncertainty::defaults(&imu_noise),
            noise: MeasurementNoise::default(),
            thresholds: AidingThresholds::default(),
            max_segment_epochs: DEFAULT_MAX_EPOCHS,
            seed: 1,
        }
    }

    pub fn init_position(&self) -> Result<GeodeticPosition, PipelineError> {
        GeodeticPosition::new(self.init.latitude, self.init.longitude, self.init.height)
            .map_err(|e| PipelineError::Config(format!("init position: {e}")))
    }

    /// Serializes to the flat key-value text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# rover-nav run configuration");
        let _ = writeln!(out, "dataset.imu = {}", self.imu_path);
        let _ = writeln!(out, "dataset.odom = {}", self.odom_path);
        if let Some(t) = &self.truth_path {
            let _ = writeln!(out, "dataset.truth = {t}");
        }
        let _ = writeln!(
            out,
            "odometry.format = {}",
            match self.odom_format {
                OdomFormat::Speeds => "speeds",
                OdomFormat::Pulses => "pulses",
            }
        );
        let _ = writeln!(out, "odometry.pulses_per_m = {}", self.pulses_per_m);
        let _ = writeln!(out, "rates.imu_hz = {}", self.imu_rate);
        let _ = writeln!(out, "rates.odom_hz = {}", self.odom_rate);
        let _ = writeln!(out, "rover.wheel_radius = {}", self.geometry.wheel_radius);
        let _ = writeln!(out, "rover.track_width = {}", self.geometry.track_width);
        let arm = self.geometry.lever_arm_body_to_rear;
        let _ = writeln!(out, "rover.lever_arm_x = {}", arm[0]);
        let _ = writeln!(out, "rover.lever_arm_y = {}", arm[1]);
        let _ = writeln!(out, "rover.lever_arm_z = {}", arm[2]);
        let n = &self.imu_noise;
        let _ = writeln!(out, "imu.gyro_arw = {}", n.gyro_arw);
        let _ = writeln!(out, "imu.gyro_bias_instability = {}", n.gyro_bias_instability);
        let _ = writeln!(out, "imu.accel_vrw = {}", n.accel_vrw);
        let _ = writeln!(out, "imu.accel_bias_instability = {}", n.accel_bias_instability);
        let _ = writeln!(out, "imu.bias_correlation_time = {}", n.bias_correlation_time);
        let i = &self.init;
        let _ = writeln!(out, "init.latitude_rad = {:.17}", i.latitude);
        let _ = writeln!(out, "init.longitude_rad = {:.17}", i.longitude);
        let _ = writeln!(out, "init.height_m = {:.10}", i.height);
        let _ = writeln!(out, "init.roll_rad = {:.17}", i.roll);
        let _ = writeln!(out, "init.pitch_rad = {:.17}", i.pitch);
        let _ = writeln!(out, "init.yaw_rad = {:.17}", i.yaw);
        let _ = writeln!(out, "init.vn_mps = {:.17}", i.velocity_ned[0]);
        let _ = writeln!(out, "init.ve_mps = {:.17}", i.velocity_ned[1]);
        let _ = writeln!(out, "init.vd_mps = {:.17}", i.velocity_ned[2]);
        let _ = writeln!(out, "init.time_s = {}", i.time);
        let _ = writeln!(out, "init.perturb = {}", self.perturb_init);
        let u = &self.uncertainty;
        let _ = writeln!(out, "sigma.roll_pitch_rad = {}", u.roll_pitch);
        let _ = writeln!(out, "sigma.heading_rad = {}", u.heading);
        let _ = writeln!(out, "sigma.velocity_mps = {}", u.velocity);
        let _ = writeln!(out, "sigma.position_m = {}", u.position_m);
        let _ = writeln!(out, "sigma.accel_bias = {}", u.accel_bias);
        let _ = writeln!(out, "sigma.gyro_bias = {}", u.gyro_bias);
        let m = &self.noise;
        let _ = writeln!(out, "noise.nhc_velocity = {}", m.nhc_velocity);
        let _ = writeln!(out, "noise.zupt_velocity = {}", m.zupt_velocity);
        let _ = writeln!(out, "noise.zaru_rate = {}", m.zaru_rate);
        let _ = writeln!(out, "noise.odom_velocity = {}", m.odom_velocity);
        let _ = writeln!(out, "noise.odom_yaw_rate = {}", m.odom_yaw_rate);
        let _ = writeln!(out, "noise.slip_inflation = {}", m.slip_inflation);
        let t = &self.thresholds;
        let _ = writeln!(out, "gates.heading_rate = {}", t.heading_rate_gate);
        let _ = writeln!(out, "gates.stationary_speed = {}", t.stationary_speed);
        let _ = writeln!(out, "gates.imu_std_window = {}", t.imu_std_window);
        let _ = writeln!(out, "gates.imu_std = {}", t.imu_std_gate);
        let _ = writeln!(out, "gates.mahalanobis = {}", t.mahalanobis_gate);
        let _ = writeln!(out, "gates.slip_ratio = {}", t.slip_ratio_gate);
        let _ = writeln!(out, "smoother.max_epochs = {}", self.max_segment_epochs);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    /// Parses the flat key-value format; every key present overrides its
    /// default, unknown keys are rejected.
    pub fn from_text(text: &str, source: &str) -> Result<Self, PipelineError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PipelineError::Parse {
                path: source.to_string(),
                line: idx + 1,
                message: "expected `key = value`".to_string(),
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut cfg = RunConfig::defaults(InitState {
            latitude: 0.0,
            longitude: 0.0,
            height: 0.0,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            velocity_ned: Vector3::zeros(),
            time: 0.0,
        });

        let parse_f64 = |k: &str, v: &str| -> Result<f64, PipelineError> {
            v.parse::<f64>()
                .map_err(|_| PipelineError::Config(format!("{k}: not a number: {v}")))
        };
        for (key, value) in &map {
            match key.as_str() {
                "dataset.imu" => cfg.imu_path = value.clone(),
                "dataset.odom" => cfg.odom_path = value.clone(),
                "dataset.truth" => cfg.truth_path = Some(value.clone()),
                "odometry.format" => {
                    cfg.odom_format = match value.as_str() {
                        "speeds" => OdomFormat::Speeds,
                        "pulses" => OdomFormat::Pulses,
                        other => {
                            return Err(PipelineError::Config(format!(
                                "odometry.format: expected speeds|pulses, got {other}"
                            )));
                        }
                    }
                }
                "odometry.pulses_per_m" => cfg.pulses_per_m = parse_f64(key, value)?,
                "rates.imu_hz" => cfg.imu_rate = parse_f64(key, value)?,
                "rates.odom_hz" => cfg.odom_rate = parse_f64(key, value)?,
                "rover.wheel_radius" => cfg.geometry.wheel_radius = parse_f64(key, value)?,
                "rover.track_width" => cfg.geometry.track_width = parse_f64(key, value)?,
                "rover.lever_arm_x" => {
                    cfg.geometry.lever_arm_body_to_rear[0] = parse_f64(key, value)?
                }
                "rover.lever_arm_y" => {
                    cfg.geometry.lever_arm_body_to_rear[1] = parse_f64(key, value)?
                }
                "rover.lever_arm_z" => {
                    cfg.geometry.lever_arm_body_to_rear[2] = parse_f64(key, value)?
                }
                "imu.gyro_arw" => cfg.imu_noise.gyro_arw = parse_f64(key, value)?,
                "imu.gyro_bias_instability" => {
                    cfg.imu_noise.gyro_bias_instability = parse_f64(key, value)?
                }
                "imu.accel_vrw" => cfg.imu_noise.accel_vrw = parse_f64(key, value)?,
                "imu.accel_bias_instability" => {
                    cfg.imu_noise.accel_bias_instability = parse_f64(key, value)?
                }
                "imu.bias_correlation_time" => {
                    cfg.imu_noise.bias_correlation_time = parse_f64(key, value)?
                }
                "init.latitude_rad" => cfg.init.latitude = parse_f64(key, value)?,
                "init.longitude_rad" => cfg.init.longitude = parse_f64(key, value)?,
                "init.height_m" => cfg.init.height = parse_f64(key, value)?,
                "init.roll_rad" => cfg.init.roll = parse_f64(key, value)?,
                "init.pitch_rad" => cfg.init.pitch = parse_f64(key, value)?,
                "init.yaw_rad" => cfg.init.yaw = parse_f64(key, value)?,
                "init.vn_mps" => cfg.init.velocity_ned[0] = parse_f64(key, value)?,
                "init.ve_mps" => cfg.init.velocity_ned[1] = parse_f64(key, value)?,
                "init.vd_mps" => cfg.init.velocity_ned[2] = parse_f64(key, value)?,
                "init.time_s" => cfg.init.time = parse_f64(key, value)?,
                "init.perturb" => {
                    cfg.perturb_init = value.parse::<bool>().map_err(|_| {
                        PipelineError::Config(format!("init.perturb: not a bool: {value}"))
                    })?
                }
                "sigma.roll_pitch_rad" => cfg.uncertainty.roll_pitch = parse_f64(key, value)?,
                "sigma.heading_rad" => cfg.uncertainty.heading = parse_f64(key, value)?,
                "sigma.velocity_mps" => cfg.uncertainty.velocity = parse_f64(key, value)?,
                "sigma.position_m" => cfg.uncertainty.position_m = parse_f64(key, value)?,
                "sigma.accel_bias" => cfg.uncertainty.accel_bias = parse_f64(key, value)?,
                "sigma.gyro_bias" => cfg.uncertainty.gyro_bias = parse_f64(key, value)?,
                "noise.nhc_velocity" => cfg.noise.nhc_velocity = parse_f64(key, value)?,
                "noise.zupt_velocity" => cfg.noise.zupt_velocity = parse_f64(key, value)?,
                "noise.zaru_rate" => cfg.noise.zaru_rate = parse_f64(key, value)?,
                "noise.odom_velocity" => cfg.noise.odom_velocity = parse_f64(key, value)?,
                "noise.odom_yaw_rate" => cfg.noise.odom_yaw_rate = parse_f64(key, value)?,
                "noise.slip_inflation" => cfg.noise.slip_inflation = parse_f64(key, value)?,
                "gates.heading_rate" => cfg.thresholds.heading_rate_gate = parse_f64(key, value)?,
                "gates.stationary_speed" => {
                    cfg.thresholds.stationary_speed = parse_f64(key, value)?
                }
                "gates.imu_std_window" => cfg.thresholds.imu_std_window = parse_f64(key, value)?,
                "gates.imu_std" => cfg.thresholds.imu_std_gate = parse_f64(key, value)?,
                "gates.mahalanobis" => cfg.thresholds.mahalanobis_gate = parse_f64(key, value)?,
                "gates.slip_ratio" => cfg.thresholds.slip_ratio_gate = parse_f64(key, value)?,
                "smoother.max_epochs" => {
                    cfg.max_segment_epochs = parse_f64(key, value)? as usize
                }
                "seed" => {
                    cfg.seed = value.parse::<u64>().map_err(|_| {
                        PipelineError::Config(format!("seed: not an integer: {value}"))
                    })?
                }
                other => {
                    return Err(PipelineError::Config(format!("unknown key: {other}")));
                }
            }
        }
        validate(&cfg)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn validate(cfg: &RunConfig) -> Result<(), PipelineError> {
    let positive = [
        ("odometry.pulses_per_m", cfg.pulses_per_m),
        ("rates.imu_hz", cfg.imu_rate),
        ("rates.odom_hz", cfg.odom_rate),
        ("rover.wheel_radius", cfg.geometry.wheel_radius),
        ("rover.track_width", cfg.geometry.track_width),
        ("gates.heading_rate", cfg.thresholds.heading_rate_gate),
        ("gates.stationary_speed", cfg.thresholds.stationary_speed),
        ("gates.imu_std_window", cfg.thresholds.imu_std_window),
        ("gates.imu_std", cfg.thresholds.imu_std_gate),
        ("gates.mahalanobis", cfg.thresholds.mahalanobis_gate),
        ("gates.slip_ratio", cfg.thresholds.slip_ratio_gate),
    ];
    for (name, value) in positive {
        // rejects NaN as well
        if value > 0.0 {
            continue;
        }
        return Err(PipelineError::Config(format!("{name} must be positive")));
    }
    if cfg.init.latitude.abs() > std::f64::consts::FRAC_PI_2 {
        return Err(PipelineError::Config("init.latitude_rad out of range".into()));
    }
    Ok(())
}
