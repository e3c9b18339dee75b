//! Filter orchestration: replays time-aligned IMU/odometry streams through
//! the error-state filter under a selected update combination.

use nalgebra::{SMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::aiding::{
    self, NhcUpdate, OdomSample, SlipFlag, StationarityWindow, body_rate_relative_to_planet,
    odom_kinematics,
};
use crate::ekf::{ErrorFilter, POS, Vector15, apply_error_delta};
use crate::geodesy::{self, EllipsoidModel};
use crate::mechanization::{ImuSample, NavState};
use crate::pipeline::{PipelineError, RunConfig};
use crate::smoother::{SegmentRecorder, rts_smooth};

/// Wheel speed below which slip ratios are not evaluated: near zero the
/// ratio is numerically meaningless and speed-ramp transients would flood
/// the slip log with false alarms.
pub const SLIP_EVAL_MIN_WHEEL_SPEED: f64 = 0.2;

/// Which aiding updates run; inertial propagation is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateCombo {
    pub odometry: bool,
    pub zero_type: bool,
    pub nonholonomic: bool,
    pub backward: bool,
}

impl UpdateCombo {
    pub const INS_ONLY: UpdateCombo = UpdateCombo {
        odometry: false,
        zero_type: false,
        nonholonomic: false,
        backward: false,
    };

    /// Parses flag strings like `IZNO`, `i+z+b`, `O`. `I` is implied.
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        let mut combo = UpdateCombo::INS_ONLY;
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'I' | '+' | ' ' => {}
                'O' => combo.odometry = true,
                'Z' => combo.zero_type = true,
                'N' => combo.nonholonomic = true,
                'B' => combo.backward = true,
                other => return Err(PipelineError::InvalidCombo(format!("{other} in {s}"))),
            }
        }
        Ok(combo)
    }

    /// Conventional label, e.g. `I+Z+N+B+O`.
    pub fn label(&self) -> String {
        match (self.odometry, self.zero_type, self.nonholonomic, self.backward) {
            (false, false, false, false) => "I".to_string(),
            (true, false, false, false) => "I+O".to_string(),
            (true, false, true, false) => "I+O+N".to_string(),
            (true, false, true, true) => "I+O+N+B".to_string(),
            (false, true, false, false) => "I+Z".to_string(),
            (false, true, false, true) => "I+Z+B".to_string(),
            (false, true, true, false) => "I+Z+N".to_string(),
            (false, true, true, true) => "I+Z+N+B".to_string(),
            (true, true, false, false) => "I+Z+O".to_string(),
            (true, true, false, true) => "I+Z+B+O".to_string(),
            (true, true, true, false) => "I+Z+N+O".to_string(),
            (true, true, true, true) => "I+Z+N+B+O".to_string(),
            // off-menu combinations get a generic flag order
            _ => {
                let mut label = String::from("I");
                for (on, flag) in [
                    (self.zero_type, "+Z"),
                    (self.nonholonomic, "+N"),
                    (self.backward, "+B"),
                    (self.odometry, "+O"),
                ] {
                    if on {
                        label.push_str(flag);
                    }
                }
                label
            }
        }
    }

    /// The twelve standard combinations in report order.
    pub fn standard_menu() -> Vec<UpdateCombo> {
        ["I", "IO", "ION", "IONB", "IZ", "IZB", "IZN", "IZNB", "IZO", "IZBO", "IZNO", "IZNBO"]
            .iter()
            .map(|s| UpdateCombo::parse(s).unwrap())
            .collect()
    }
}

/// One navigation solution epoch with 3-sigma position bounds in meters
/// (north, east, down).
#[derive(Debug, Clone, Copy)]
pub struct TraceEpoch {
    pub time: f64,
    pub nav: NavState,
    pub sigma3_ned: Vector3<f64>,
}

/// Outcome of the slip test at one odometry epoch.
#[derive(Debug, Clone, Copy)]
pub struct SlipRecord {
    pub time: f64,
    pub chi: f64,
    /// Largest |slip ratio| over the wheels (0 when undefined).
    pub max_ratio: f64,
    pub significant: bool,
}

/// One detected stationary interval.
#[derive(Debug, Clone, Copy)]
pub struct StopRecord {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub combo: UpdateCombo,
    pub forward: Vec<TraceEpoch>,
    pub smoothed: Vec<TraceEpoch>,
    pub slip_log: Vec<SlipRecord>,
    pub stop_log: Vec<StopRecord>,
    pub final_gyro_bias: Vector3<f64>,
    pub final_accel_bias: Vector3<f64>,
    /// Odometry samples that found no IMU epoch within half an odometry
    /// period.
    pub dropped_odom: usize,
}

fn trace_epoch(filter: &ErrorFilter, model: &EllipsoidModel) -> TraceEpoch {
    let pos = filter.nav.position;
    let (r_n, r_e) = geodesy::radii_of_curvature(pos.latitude, model);
    let p = &filter.covariance;
    TraceEpoch {
        time: filter.nav.time,
        nav: filter.nav,
        sigma3_ned: Vector3::new(
            3.0 * p[(POS, POS)].sqrt() * (r_n + pos.height),
            3.0 * p[(POS + 1, POS + 1)].sqrt() * (r_e + pos.height) * pos.latitude.cos(),
            3.0 * p[(POS + 2, POS + 2)].sqrt(),
        ),
    }
}

fn smoothed_trace(segment: &crate::smoother::SmoothedSegment, model: &EllipsoidModel) -> Vec<TraceEpoch> {
    segment
        .times
        .iter()
        .zip(&segment.smoothed_states)
        .zip(&segment.smoothed_covariances)
        .map(|((t, nav), p)| {
            let pos = nav.position;
            let (r_n, r_e) = geodesy::radii_of_curvature(pos.latitude, model);
            TraceEpoch {
                time: *t,
                nav: *nav,
                sigma3_ned: Vector3::new(
                    3.0 * p[(POS, POS)].sqrt() * (r_n + pos.height),
                    3.0 * p[(POS + 1, POS + 1)].sqrt() * (r_e + pos.height) * pos.latitude.cos(),
                    3.0 * p[(POS + 2, POS + 2)].sqrt(),
                ),
            }
        })
        .collect()
}

/// Replays the streams through the filter.
///
/// Event order per IMU sample: propagate, accumulate detector/odometry
/// windows, apply odometry and non-holonomic updates at odometry epochs,
/// then zero-type updates while the stationarity detector holds. Stops
/// delimit smoothing segments when backward smoothing is enabled.
pub fn run_filter(
    imu: &[ImuSample],
    odom: &[OdomSample],
    config: &RunConfig,
    combo: &UpdateCombo,
) -> Result<RunOutput, PipelineError> {
    let model = EllipsoidModel::wgs84();
    let geom = config.geometry;
    let thr = config.thresholds;
    let noise = config.noise;

    let init_pos = config.init_position()?;
    let mut nav0 = NavState {
        attitude: geodesy::euler_to_dcm(config.init.roll, config.init.pitch, config.init.yaw),
        velocity_ned: config.init.velocity_ned,
        position: init_pos,
        time: config.init.time,
    };
    let p0 = config.uncertainty.covariance(&init_pos, &model);
    if config.perturb_init {
        // draw the initial estimate error from the initial covariance
        let mut rng =
            ChaCha12Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x1234);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut delta = Vector15::zeros();
        for i in 0..9 {
            delta[i] = normal.sample(&mut rng) * p0[(i, i)].sqrt();
        }
        nav0 = apply_error_delta(&nav0, &delta);
    }
    let mut filter = ErrorFilter::new(nav0, p0, config.imu_noise, model);

    let mut r_zupt = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        r_zupt[(i, i)] = noise.zupt_velocity * noise.zupt_velocity;
        r_zupt[(3 + i, 3 + i)] = noise.zaru_rate * noise.zaru_rate;
    }
    let r_nhc_full =
        SMatrix::<f64, 2, 2>::identity() * noise.nhc_velocity * noise.nhc_velocity;
    let r_nhc_vert =
        SMatrix::<f64, 1, 1>::identity() * noise.nhc_velocity * noise.nhc_velocity;
    let mut r_odom = SMatrix::<f64, 4, 4>::zeros();
    for i in 0..3 {
        r_odom[(i, i)] = noise.odom_velocity * noise.odom_velocity;
    }
    r_odom[(3, 3)] = noise.odom_yaw_rate * noise.odom_yaw_rate;

    let mut recorder = SegmentRecorder::new(config.max_segment_epochs);
    let mut detector_window = StationarityWindow::new();
    let mut odom_window = aiding::OdomWindow::new();

    let mut forward = Vec::with_capacity(imu.len());
    let mut smoothed = Vec::new();
    let mut slip_log = Vec::new();
    let mut stop_log = Vec::new();

    let mut odom_idx = 0usize;
    let mut last_odom: Option<OdomSample> = None;
    let mut dropped_odom = 0usize;
    let mut stationary = false;
    let mut stop_start = 0.0f64;
    let odom_half_period = 0.5 / config.odom_rate;

    for sample in imu {
        let dt = sample.time - filter.nav.time;
        if dt <= 0.0 {
            return Err(PipelineError::TimestampRegression(sample.time));
        }
        let pre_nav = filter.nav;
        let pre_cov = filter.covariance;
        let propagation = filter.propagate(sample, dt)?;
        if combo.backward {
            recorder.record_propagation(&pre_nav, &pre_cov, &propagation)?;
        }

        let t = filter.nav.time;
        detector_window.push(*sample, thr.imu_std_window);
        let compensated = filter.compensate(sample);
        let w_eb = body_rate_relative_to_planet(&filter.nav, &compensated.angular_rate, &model);
        if combo.odometry {
            odom_window.accumulate(&filter.nav, &w_eb, &geom, dt)?;
        }

        // consume odometry samples that align with this IMU epoch
        let mut odom_now: Option<OdomSample> = None;
        while odom_idx < odom.len() && odom[odom_idx].time <= t + 0.5 * dt {
            if (odom[odom_idx].time - t).abs() <= odom_half_period {
                odom_now = Some(odom[odom_idx]);
            } else {
                dropped_odom += 1;
            }
            odom_idx += 1;
        }

        if let Some(od) = odom_now {
            last_odom = Some(od);
            let od_kin = odom_kinematics(&od, &geom);

            if combo.odometry && !odom_window.is_empty() {
                let (innovation, mut h) = aiding::odometry_update(&odom_window, od_kin, &filter.nav)?;
                aiding::project_out_heading(&mut h, &filter.nav);
                // skid-steer scrub makes the odometry heading rate
                // unreliable while turning hard; soft-gate that row
                let mut r_epoch = r_odom;
                if od_kin.1.abs() > thr.heading_rate_gate {
                    r_epoch[(3, 3)] *= noise.slip_inflation;
                }
                // tentative update for the slip test
                let (_, _, chi) =
                    crate::ekf::measurement_update(&filter.covariance, &h, &r_epoch, &innovation)?;

                let axle = filter.nav.attitude.transpose() * filter.nav.velocity_ned
                    + w_eb.cross(&geom.lever_arm_body_to_rear);
                let half_track = 0.5 * geom.track_width;
                let mut ratios = Vec::with_capacity(2);
                for (wheel_speed, side) in [(od.left_speed, 1.0), (od.right_speed, -1.0)] {
                    if wheel_speed.abs() < SLIP_EVAL_MIN_WHEEL_SPEED {
                        continue;
                    }
                    let v_ins = axle[0] + side * w_eb[2] * half_track;
                    if let Ok(ratio) =
                        aiding::slip_ratio(v_ins, &geom, wheel_speed / geom.wheel_radius)
                    {
                        ratios.push(ratio);
                    }
                }
                let flag = aiding::classify_slip(chi, &ratios, &thr);
                let r_used = if flag == SlipFlag::Significant {
                    r_epoch * noise.slip_inflation
                } else {
                    r_epoch
                };
                let (dx, _) = filter.apply_update(&h, &r_used, &innovation)?;
                if combo.backward {
                    recorder.record_correction(&dx.0);
                }
                slip_log.push(SlipRecord {
                    time: t,
                    chi,
                    max_ratio: ratios.iter().fold(0.0, |m: f64, r| m.max(r.abs())),
                    significant: flag == SlipFlag::Significant,
                });
                odom_window.reset();
            }

            if combo.nonholonomic {
                match aiding::nonholonomic_update(&filter.nav, &compensated, &geom, &thr, &model) {
                    NhcUpdate::Full { innovation, mut h } => {
                        aiding::project_out_heading(&mut h, &filter.nav);
                        let (dx, _) = filter.apply_update(&h, &r_nhc_full, &innovation)?;
                        if combo.backward {
                            recorder.record_correction(&dx.0);
                        }
                    }
                    NhcUpdate::VerticalOnly { innovation, mut h } => {
                        aiding::project_out_heading(&mut h, &filter.nav);
                        let (dx, _) = filter.apply_update(&h, &r_nhc_vert, &innovation)?;
                        if combo.backward {
                            recorder.record_correction(&dx.0);
                        }
                    }
                }
            }
        }

        // stationarity detection and zero-type updates
        let is_stationary = match &last_odom {
            Some(od) if detector_window.len() >= 10 => {
                aiding::detect_stationary(detector_window.contiguous(), od, &geom, &thr)?
            }
            _ => false,
        };
        if is_stationary && !stationary {
            stop_start = t;
        }
        if is_stationary && combo.zero_type {
            let (innovation, mut h) =
                aiding::zero_type_update(&filter.nav, &compensated.angular_rate, &model);
            aiding::project_out_heading(&mut h, &filter.nav);
            let (dx, _) = filter.apply_update(&h, &r_zupt, &innovation)?;
            if combo.backward {
                recorder.record_correction(&dx.0);
            }
        }
        if !is_stationary && stationary {
            stop_log.push(StopRecord {
                start: stop_start,
                end: t,
            });
            if combo.backward && !recorder.is_empty() {
                let segment = recorder.take_segment(&filter.nav, &filter.covariance);
                smoothed.extend(smoothed_trace(&rts_smooth(&segment)?, &model));
            }
        }
        stationary = is_stationary;

        forward.push(trace_epoch(&filter, &model));
    }

    // close the trailing segment (runs normally end inside a stop)
    if stationary {
        stop_log.push(StopRecord {
            start: stop_start,
            end: filter.nav.time,
        });
    }
    if combo.backward && !recorder.is_empty() {
        let segment = recorder.take_segment(&filter.nav, &filter.covariance);
        smoothed.extend(smoothed_trace(&rts_smooth(&segment)?, &model));
    }

    Ok(RunOutput {
        combo: *combo,
        forward,
        smoothed,
        slip_log,
        stop_log,
        final_gyro_bias: filter.gyro_bias,
        final_accel_bias: filter.accel_bias,
        dropped_odom,
    })
}
