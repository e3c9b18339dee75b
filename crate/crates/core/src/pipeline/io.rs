//! CSV dataset formats and validated ingestion.
//!
//! Three files per dataset, headers mandatory, UTF-8, '.' decimal:
//!
//! * `imu.csv`:   `t,wx,wy,wz,fx,fy,fz` (rad/s, m/s^2)
//! * `odom.csv`:  `t,left_mps,right_mps` or `t,left_pulses,right_pulses`
//! * `truth.csv`: `t,lat_rad,lon_rad,h_m,roll,pitch,yaw,vn,ve,vd`
//!
//! Estimate traces use the truth columns plus `sigma3_n,sigma3_e,sigma3_u`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::aiding::OdomSample;
use crate::geodesy::{self, GeodeticPosition};
use crate::mechanization::{ImuSample, NavState};
use crate::pipeline::run::TraceEpoch;
use crate::pipeline::{OdomFormat, PipelineError, RunConfig};
use crate::sim::TruthEpoch;

/// One reference-trajectory record (ground truth or an external estimate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub time: f64,
    pub position: GeodeticPosition,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub velocity_ned: Vector3<f64>,
}

/// Validated, unit-converted, time-sorted streams ready for the filter.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub odom: Vec<OdomSample>,
    pub truth: Option<Vec<TruthRecord>>,
    /// Non-fatal findings (dropped duplicate timestamps and the like).
    pub warnings: Vec<String>,
}

struct CsvReader {
    path: String,
    rows: Vec<(usize, Vec<f64>)>,
}

impl CsvReader {
    fn open(path: &Path, expected_header: &str) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        let display = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| PipelineError::Parse {
            path: display.clone(),
            line: 1,
            message: "empty file (missing header)".to_string(),
        })?;
        if header.trim() != expected_header {
            return Err(PipelineError::Parse {
                path: display,
                line: 1,
                message: format!("expected header `{expected_header}`, got `{}`", header.trim()),
            });
        }
        let columns = expected_header.split(',').count();
        let mut rows = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut values = Vec::with_capacity(columns);
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| PipelineError::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    message: format!("not a number: `{}`", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(PipelineError::Parse {
                        path: display.clone(),
                        line: idx + 1,
                        message: format!("non-finite value: {v}"),
                    });
                }
                values.push(v);
            }
            if values.len() != columns {
                return Err(PipelineError::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    message: format!("expected {columns} columns, got {}", values.len()),
                });
            }
            rows.push((idx + 1, values));
        }
        Ok(CsvReader {
            path: display,
            rows,
        })
    }

    /// Enforces strictly increasing time (column 0); exact duplicates are
    /// dropped with a warning, regressions are fatal.
    fn monotone(self, warnings: &mut Vec<String>) -> Result<Vec<Vec<f64>>, PipelineError> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.rows.len());
        let mut last: Option<f64> = None;
        for (line, row) in self.rows {
            let t = row[0];
            match last {
                Some(prev) if t == prev => {
                    warnings.push(format!("{}:{line}: dropped duplicate timestamp {t}", self.path));
                    continue;
                }
                Some(prev) if t < prev => {
                    return Err(PipelineError::NonMonotoneTime {
                        path: self.path,
                        line,
                    });
                }
                _ => {}
            }
            last = Some(t);
            out.push(row);
        }
        Ok(out)
    }
}

pub const IMU_HEADER: &str = "t,wx,wy,wz,fx,fy,fz";
pub const ODOM_SPEEDS_HEADER: &str = "t,left_mps,right_mps";
pub const ODOM_PULSES_HEADER: &str = "t,left_pulses,right_pulses";
pub const TRUTH_HEADER: &str = "t,lat_rad,lon_rad,h_m,roll,pitch,yaw,vn,ve,vd";
pub const TRACE_HEADER: &str = "t,lat_rad,lon_rad,h_m,roll,pitch,yaw,vn,ve,vd,sigma3_n,sigma3_e,sigma3_u";

pub fn read_imu_csv(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<ImuSample>, PipelineError> {
    let rows = CsvReader::open(path, IMU_HEADER)?.monotone(warnings)?;
    Ok(rows
        .into_iter()
        .map(|r| ImuSample {
            time: r[0],
            angular_rate: Vector3::new(r[1], r[2], r[3]),
            specific_force: Vector3::new(r[4], r[5], r[6]),
        })
        .collect())
}

pub fn read_odom_csv(
    path: &Path,
    format: OdomFormat,
    pulses_per_m: f64,
    odom_rate: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<OdomSample>, PipelineError> {
    let header = match format {
        OdomFormat::Speeds => ODOM_SPEEDS_HEADER,
        OdomFormat::Pulses => ODOM_PULSES_HEADER,
    };
    let rows = CsvReader::open(path, header)?.monotone(warnings)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let (left, right) = match format {
                OdomFormat::Speeds => (r[1], r[2]),
                // counts per tick -> m/s
                OdomFormat::Pulses => (
                    r[1] * odom_rate / pulses_per_m,
                    r[2] * odom_rate / pulses_per_m,
                ),
            };
            OdomSample {
                time: r[0],
                left_speed: left,
                right_speed: right,
            }
        })
        .collect())
}

pub fn read_truth_csv(
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<TruthRecord>, PipelineError> {
    let display = path.display().to_string();
    let rows = CsvReader::open(path, TRUTH_HEADER)?.monotone(warnings)?;
    rows.into_iter()
        .map(|r| {
            let position = GeodeticPosition::new(r[1], r[2], r[3]).map_err(|e| {
                PipelineError::Parse {
                    path: display.clone(),
                    line: 0,
                    message: e.to_string(),
                }
            })?;
            Ok(TruthRecord {
                time: r[0],
                position,
                roll: r[4],
                pitch: r[5],
                yaw: r[6],
                velocity_ned: Vector3::new(r[7], r[8], r[9]),
            })
        })
        .collect()
}

/// Reads an estimate trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceEpoch>, PipelineError> {
    let mut warnings = Vec::new();
    let display = path.display().to_string();
    let rows = CsvReader::open(path, TRACE_HEADER)?.monotone(&mut warnings)?;
    rows.into_iter()
        .map(|r| {
            let position = GeodeticPosition::new(r[1], r[2], r[3]).map_err(|e| {
                PipelineError::Parse {
                    path: display.clone(),
                    line: 0,
                    message: e.to_string(),
                }
            })?;
            Ok(TraceEpoch {
                time: r[0],
                nav: NavState {
                    attitude: geodesy::euler_to_dcm(r[4], r[5], r[6]),
                    velocity_ned: Vector3::new(r[7], r[8], r[9]),
                    position,
                    time: r[0],
                },
                sigma3_ned: Vector3::new(r[10], r[11], r[12]),
            })
        })
        .collect()
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), PipelineError> {
    let mut out = String::from(IMU_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.time,
            s.angular_rate[0],
            s.angular_rate[1],
            s.angular_rate[2],
            s.specific_force[0],
            s.specific_force[1],
            s.specific_force[2]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_odom_csv(path: &Path, samples: &[OdomSample]) -> Result<(), PipelineError> {
    let mut out = String::from(ODOM_SPEEDS_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{},{},{}\n", s.time, s.left_speed, s.right_speed));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_truth_csv(path: &Path, truth: &[TruthEpoch]) -> Result<(), PipelineError> {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for e in truth {
        let (roll, pitch, yaw) =
            geodesy::dcm_to_euler(&e.nav.attitude).map_err(PipelineError::Geodesy)?;
        out.push_str(&format!(
            "{},{:.17},{:.17},{:.10},{},{},{},{},{},{}\n",
            e.time,
            e.nav.position.latitude,
            e.nav.position.longitude,
            e.nav.position.height,
            roll,
            pitch,
            yaw,
            e.nav.velocity_ned[0],
            e.nav.velocity_ned[1],
            e.nav.velocity_ned[2]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a filter trace (forward or smoothed).
pub fn write_trace_csv(path: &Path, trace: &[TraceEpoch]) -> Result<(), PipelineError> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for e in trace {
        let (roll, pitch, yaw) =
            geodesy::dcm_to_euler(&e.nav.attitude).map_err(PipelineError::Geodesy)?;
        out.push_str(&format!(
            "{},{:.17},{:.17},{:.10},{},{},{},{},{},{},{},{},{}\n",
            e.time,
            e.nav.position.latitude,
            e.nav.position.longitude,
            e.nav.position.height,
            roll,
            pitch,
            yaw,
            e.nav.velocity_ned[0],
            e.nav.velocity_ned[1],
            e.nav.velocity_ned[2],
            e.sigma3_ned[0],
            e.sigma3_ned[1],
            e.sigma3_ned[2]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a complete simulated dataset (sensor CSVs, truth, config) into a
/// directory, creating it if needed.
pub fn write_dataset(
    dir: &Path,
    truth: &[TruthEpoch],
    imu: &[ImuSample],
    odom: &[OdomSample],
    config: &RunConfig,
) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    write_imu_csv(&dir.join(&config.imu_path), imu)?;
    write_odom_csv(&dir.join(&config.odom_path), odom)?;
    if let Some(truth_path) = &config.truth_path {
        write_truth_csv(&dir.join(truth_path), truth)?;
    }
    config.save(&dir.join("run.cfg"))?;
    Ok(())
}

/// Run configuration for a simulated scenario, with the filter tuning made
/// consistent with the synthesized noise: vibration folded into the assumed
/// velocity random walk, ZARU noise matched to the gyro white level, and
/// the stationarity gate raised above the quiescent specific-force scatter.
pub fn scenario_run_config(
    scn: &crate::sim::Scenario,
    seed: u64,
    truth: &[crate::sim::TruthEpoch],
) -> Result<RunConfig, PipelineError> {
    use crate::pipeline::config::InitState;

    let spec = &scn.imu_spec;
    let first = &truth[0];
    let (roll, pitch, yaw) = geodesy::dcm_to_euler(&first.nav.attitude)?;
    let mut config = RunConfig::defaults(InitState {
        latitude: first.nav.position.latitude,
        longitude: first.nav.position.longitude,
        height: first.nav.position.height,
        roll,
        pitch,
        yaw,
        velocity_ned: first.nav.velocity_ned,
        time: first.time,
    });
    config.geometry = crate::aiding::RoverGeometry::skid_steer_default();
    config.imu_rate = scn.imu_rate;
    config.odom_rate = scn.odom_rate;
    config.seed = seed;
    config.imu_noise = *spec;
    let vibration = crate::sim::VIBRATION_BASE * scn.roughness;
    let dt = 1.0 / scn.imu_rate;
    config.imu_noise.accel_vrw = (spec.accel_vrw.powi(2) + vibration * vibration * dt).sqrt();
    let gyro_white = spec.gyro_arw / dt.sqrt();
    config.noise.zaru_rate = config.noise.zaru_rate.max(gyro_white);
    let accel_white = spec.accel_vrw / dt.sqrt();
    let vib_stationary = vibration * crate::sim::VIBRATION_STATIONARY_FACTOR;
    let quiescent = (accel_white * accel_white + vib_stationary * vib_stationary).sqrt();
    config.thresholds.imu_std_gate = config.thresholds.imu_std_gate.max(1.5 * quiescent);
    config.uncertainty = crate::ekf::InitialUncertainty::defaults(&config.imu_noise);
    Ok(config)
}

/// Simulates a scenario end to end and writes the dataset directory:
/// truth, sensor streams, and the matching run config.
pub fn simulate_dataset(
    scn: &crate::sim::Scenario,
    seed: u64,
    dir: &Path,
) -> Result<RunConfig, PipelineError> {
    let geom = crate::aiding::RoverGeometry::skid_steer_default();
    let truth = crate::sim::generate_truth(scn, scn.imu_rate)?;
    let imu = crate::sim::synthesize_imu(&truth, &scn.imu_spec, seed);
    let config = scenario_run_config(scn, seed, &truth)?;
    let odom = crate::sim::synthesize_odometry(
        &truth,
        &geom,
        config.pulses_per_m,
        scn.odom_rate,
        seed + 1,
    );
    write_dataset(dir, &truth, &imu, &odom, &config)?;
    Ok(config)
}

/// Loads `run.cfg` from a dataset directory.
pub fn read_config(dir: &Path) -> Result<RunConfig, PipelineError> {
    let path = dir.join("run.cfg");
    let text = fs::read_to_string(&path)?;
    RunConfig::from_text(&text, &path.display().to_string())
}

/// Reads and validates all streams referenced by a config.
pub fn ingest(dir: &Path, config: &RunConfig) -> Result<Dataset, PipelineError> {
    let mut warnings = Vec::new();
    let imu = read_imu_csv(&dir.join(&config.imu_path), &mut warnings)?;
    let odom = read_odom_csv(
        &dir.join(&config.odom_path),
        config.odom_format,
        config.pulses_per_m,
        config.odom_rate,
        &mut warnings,
    )?;
    let truth = match &config.truth_path {
        Some(p) => {
            let full: PathBuf = dir.join(p);
            if full.exists() {
                Some(read_truth_csv(&full, &mut warnings)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok(Dataset {
        imu,
        odom,
        truth,
        warnings,
    })
}
