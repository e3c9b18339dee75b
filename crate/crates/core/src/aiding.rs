//! Pseudo-measurement constructors and detectors that aid the INS.
//!
//! Four aiding sources, none of which needs external infrastructure:
//!
//! * non-holonomic constraints: a wheeled rover without side slip has zero
//!   lateral and vertical velocity at its rear axle,
//! * zero-type updates (ZUPT + ZARU) while the rover is confirmed
//!   stationary,
//! * wheel odometry, averaged over the odometry sampling interval,
//! * slip detection from post-fit Mahalanobis distance and per-wheel slip
//!   ratios.
//!
//! All constructors return `(innovation, H)` pairs ready for the generic
//! EKF update; the sign convention matches the error state ("estimate minus
//! truth"), i.e. `innovation = H * dx + noise`.

use nalgebra::{Matrix3, RowSVector, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::ekf::{BG, VEL};
use crate::geodesy::{self, EllipsoidModel, GeodesyError, angle_difference, skew};
use crate::mechanization::{ImuSample, NavState};

#[derive(Debug, Error, PartialEq)]
pub enum AidingError {
    #[error("stationarity window has only {0} samples (need at least 10)")]
    InsufficientWindow(usize),
    #[error("odometry window is empty; accumulate IMU-rate samples first")]
    IncompleteWindow,
    #[error("wheel speed {0} m/s too small for a slip ratio")]
    WheelStopped(f64),
    #[error("singular innovation covariance in Mahalanobis distance")]
    SingularCovariance,
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

/// One wheel-odometry sample: left/right wheel ground speeds in m/s,
/// derived upstream from quadrature encoder counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomSample {
    pub time: f64,
    pub left_speed: f64,
    pub right_speed: f64,
}

/// Rover geometry used by the kinematic models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoverGeometry {
    /// Wheel radius, m.
    pub wheel_radius: f64,
    /// Lateral distance between left and right wheel contact lines, m.
    pub track_width: f64,
    /// Body-frame vector from the IMU/body origin to the rear-axle odometry
    /// reference point, m.
    pub lever_arm_body_to_rear: Vector3<f64>,
}

impl RoverGeometry {
    /// Skid-steer testbed defaults: 0.165 m wheels, 0.555 m track.
    pub fn skid_steer_default() -> Self {
        RoverGeometry {
            wheel_radius: 0.165,
            track_width: 0.555,
            lever_arm_body_to_rear: Vector3::new(-0.27, 0.0, 0.14),
        }
    }
}

/// Gates and windows for the detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AidingThresholds {
    /// Yaw-rate magnitude above which the lateral constraint is dropped,
    /// rad/s.
    pub heading_rate_gate: f64,
    /// Wheel speed below which the rover may be stationary, m/s.
    pub stationary_speed: f64,
    /// Length of the IMU standard-deviation window, s.
    pub imu_std_window: f64,
    /// Per-axis specific-force standard deviation below which the rover is
    /// considered vibration-free, m/s^2.
    pub imu_std_gate: f64,
    /// Mahalanobis distance above which an odometry residual is anomalous.
    pub mahalanobis_gate: f64,
    /// Slip-ratio magnitude above which slip is significant.
    pub slip_ratio_gate: f64,
}

impl Default for AidingThresholds {
    fn default() -> Self {
        AidingThresholds {
            heading_rate_gate: 0.1,
            stationary_speed: 0.01,
            imu_std_window: 1.0,
            imu_std_gate: 0.02,
            mahalanobis_gate: 3.0,
            slip_ratio_gate: 0.3,
        }
    }
}

/// Measurement noise (1-sigma) for each aiding update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise {
    /// Non-holonomic lateral/vertical velocity, m/s.
    pub nhc_velocity: f64,
    /// ZUPT velocity, m/s.
    pub zupt_velocity: f64,
    /// ZARU angular rate, rad/s.
    pub zaru_rate: f64,
    /// Odometry body-velocity rows, m/s.
    pub odom_velocity: f64,
    /// Odometry yaw-rate row, rad/s.
    pub odom_yaw_rate: f64,
    /// Multiplier applied to the odometry R when slip is flagged.
    pub slip_inflation: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        MeasurementNoise {
            nhc_velocity: 0.05,
            zupt_velocity: 0.01,
            zaru_rate: 1e-4,
            odom_velocity: 0.03,
            odom_yaw_rate: 0.01,
            slip_inflation: 100.0,
        }
    }
}

/// Longitudinal speed and yaw rate from differential wheel speeds.
///
/// The yaw rate follows the usual mobile-robot convention (positive
/// counterclockwise seen from above, i.e. z-up): `(right - left) / track`.
/// The body z-axis points down, so the body yaw rate is the negative.
pub fn odom_kinematics(s: &OdomSample, geom: &RoverGeometry) -> (f64, f64) {
    let v_lon = 0.5 * (s.left_speed + s.right_speed);
    let yaw_rate = (s.right_speed - s.left_speed) / geom.track_width;
    (v_lon, yaw_rate)
}

/// A non-holonomic constraint update, possibly reduced to the vertical row
/// when the rover is turning fast enough to side-slip.
#[derive(Debug, Clone)]
pub enum NhcUpdate {
    /// Lateral and vertical constraint rows.
    Full {
        innovation: Vector2<f64>,
        h: SMatrix<f64, 2, 15>,
    },
    /// Vertical row only (lateral dropped by the heading-rate gate).
    VerticalOnly {
        innovation: SVector<f64, 1>,
        h: SMatrix<f64, 1, 15>,
    },
}

/// Body angular rate relative to the planet: measured rate minus the
/// attitude-resolved Earth and transport rates.
pub fn body_rate_relative_to_planet(
    nav: &NavState,
    angular_rate_compensated: &Vector3<f64>,
    model: &EllipsoidModel,
) -> Vector3<f64> {
    let w_in = geodesy::earth_rate_ned(nav.position.latitude, model)
        + geodesy::transport_rate(&nav.position, &nav.velocity_ned, model);
    angular_rate_compensated - nav.attitude.transpose() * w_in
}

/// Zero-lateral / zero-vertical velocity pseudo-measurement at the rear
/// axle.
///
/// The innovation is minus the predicted lateral/vertical velocity of the
/// axle point, `C_n^b v + w_eb x L`; the measurement matrix couples the
/// velocity-error block through `-C_n^b`. When the yaw-rate magnitude
/// exceeds the gate the lateral row is dropped and only the vertical
/// constraint is returned.
pub fn nonholonomic_update(
    nav: &NavState,
    imu_compensated: &ImuSample,
    geom: &RoverGeometry,
    thr: &AidingThresholds,
    model: &EllipsoidModel,
) -> NhcUpdate {
    let c_nb = nav.attitude.transpose();
    let w_eb = body_rate_relative_to_planet(nav, &imu_compensated.angular_rate, model);
    let axle_velocity = c_nb * nav.velocity_ned + w_eb.cross(&geom.lever_arm_body_to_rear);

    // rows 2 and 3 select lateral (body y) and vertical (body z)
    let mut h = SMatrix::<f64, 2, 15>::zeros();
    h.fixed_view_mut::<1, 3>(0, VEL).copy_from(&(-c_nb.row(1)));
    h.fixed_view_mut::<1, 3>(1, VEL).copy_from(&(-c_nb.row(2)));
    let innovation = Vector2::new(-axle_velocity[1], -axle_velocity[2]);

    if w_eb[2].abs() > thr.heading_rate_gate {
        NhcUpdate::VerticalOnly {
            innovation: SVector::<f64, 1>::new(innovation[1]),
            h: h.fixed_view::<1, 15>(1, 0).into_owned(),
        }
    } else {
        NhcUpdate::Full { innovation, h }
    }
}

/// Stationarity test from wheel odometry speed and the per-axis standard
/// deviation of recent specific-force samples.
///
/// A third condition vetoes rotation: a skid-steer point turn shows nearly
/// zero mean wheel speed and (on smooth ground) a quiet accelerometer, but
/// a rover turning in place is not stationary and must not receive
/// zero-angular-rate updates. The window-mean angular rate is therefore
/// required to stay under the heading-rate gate.
pub fn detect_stationary(
    imu_window: &[ImuSample],
    odom: &OdomSample,
    geom: &RoverGeometry,
    thr: &AidingThresholds,
) -> Result<bool, AidingError> {
    if imu_window.len() < 10 {
        return Err(AidingError::InsufficientWindow(imu_window.len()));
    }
    let (v_lon, _) = odom_kinematics(odom, geom);
    if v_lon.abs() >= thr.stationary_speed {
        return Ok(false);
    }
    let n = imu_window.len() as f64;
    let mean_rate = imu_window
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, s| {
            acc + s.angular_rate
        })
        / n;
    if mean_rate.norm() >= thr.heading_rate_gate {
        return Ok(false);
    }
    let mean = imu_window
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, s| {
            acc + s.specific_force
        })
        / n;
    let var = imu_window
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, s| {
            let d = s.specific_force - mean;
            acc + d.component_mul(&d)
        })
        / n;
    Ok((0..3).all(|i| var[i].sqrt() < thr.imu_std_gate))
}

/// Rolling buffer of recent IMU samples for [`detect_stationary`].
#[derive(Debug, Clone, Default)]
pub struct StationarityWindow {
    samples: std::collections::VecDeque<ImuSample>,
}

impl StationarityWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pushes a sample and drops everything older than `window_s`.
    pub fn push(&mut self, sample: ImuSample, window_s: f64) {
        self.samples.push_back(sample);
        while let Some(front) = self.samples.front() {
            if sample.time - front.time > window_s {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn samples(&self) -> (&[ImuSample], &[ImuSample]) {
        self.samples.as_slices()
    }

    /// Contiguous view of the window (amortized no-op after steady state).
    pub fn contiguous(&mut self) -> &[ImuSample] {
        self.samples.make_contiguous();
        self.samples.as_slices().0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Zero-velocity plus zero-angular-rate innovation for a stationary rover.
///
/// `gyro_compensated` is the bias-corrected gyro reading; the expected
/// Earth rate `C_n^b w_ie^n` is removed before forming the angular-rate
/// innovation so that the update calibrates the gyro bias instead of
/// absorbing the planet's rotation.
pub fn zero_type_update(
    nav: &NavState,
    gyro_compensated: &Vector3<f64>,
    model: &EllipsoidModel,
) -> (SVector<f64, 6>, SMatrix<f64, 6, 15>) {
    let earth_rate_body =
        nav.attitude.transpose() * geodesy::earth_rate_ned(nav.position.latitude, model);
    let mut innovation = SVector::<f64, 6>::zeros();
    innovation
        .fixed_rows_mut::<3>(0)
        .copy_from(&(-nav.velocity_ned));
    innovation
        .fixed_rows_mut::<3>(3)
        .copy_from(&(-(gyro_compensated - earth_rate_body)));

    let mut h = SMatrix::<f64, 6, 15>::zeros();
    for i in 0..3 {
        h[(i, VEL + i)] = -1.0;
        h[(3 + i, BG + i)] = -1.0;
    }
    (innovation, h)
}

/// Accumulator over one odometry interval.
///
/// Integrates the attitude-dependent quantities of the odometry measurement
/// model at IMU rate so that the update can be formed at the (slower)
/// odometry rate. Reset after every odometry update.
#[derive(Debug, Clone)]
pub struct OdomWindow {
    duration: f64,
    int_axle_velocity: Vector3<f64>,
    int_c_nb: Matrix3<f64>,
    int_c_nb_skew_v: Matrix3<f64>,
    int_yaw_row: RowSVector<f64, 3>,
    int_cos_pitch: f64,
    yaw_start: Option<f64>,
    yaw_end: f64,
}

impl Default for OdomWindow {
    fn default() -> Self {
        OdomWindow {
            duration: 0.0,
            int_axle_velocity: Vector3::zeros(),
            int_c_nb: Matrix3::zeros(),
            int_c_nb_skew_v: Matrix3::zeros(),
            int_yaw_row: RowSVector::zeros(),
            int_cos_pitch: 0.0,
            yaw_start: None,
            yaw_end: 0.0,
        }
    }
}

impl OdomWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn is_empty(&self) -> bool {
        self.duration <= 0.0
    }

    /// Adds one IMU-rate contribution. `w_eb_b` is the body rate relative to
    /// the planet (see [`body_rate_relative_to_planet`]).
    pub fn accumulate(
        &mut self,
        nav: &NavState,
        w_eb_b: &Vector3<f64>,
        geom: &RoverGeometry,
        dt: f64,
    ) -> Result<(), AidingError> {
        let c_nb = nav.attitude.transpose();
        let (roll, pitch, yaw) = geodesy::dcm_to_euler(&nav.attitude)?;
        if self.yaw_start.is_none() {
            self.yaw_start = Some(yaw);
        }
        self.yaw_end = yaw;
        self.int_axle_velocity +=
            (c_nb * nav.velocity_ned + w_eb_b.cross(&geom.lever_arm_body_to_rear)) * dt;
        self.int_c_nb += c_nb * dt;
        self.int_c_nb_skew_v += c_nb * skew(&nav.velocity_ned) * dt;
        let tilt = RowSVector::<f64, 3>::new(0.0, roll.cos(), roll.sin());
        self.int_yaw_row += pitch.sin() * tilt * c_nb * dt;
        self.int_cos_pitch += pitch.cos() * dt;
        self.duration += dt;
        Ok(())
    }
}

/// Wheel-odometry measurement: window-averaged body velocity rows
/// (longitudinal observed by the wheels, lateral/vertical constrained to
/// zero) plus the heading-rate row.
///
/// `odom_avg` is `(v_lon, yaw_rate)` from [`odom_kinematics`].
pub fn odometry_update(
    window: &OdomWindow,
    odom_avg: (f64, f64),
    nav: &NavState,
) -> Result<(SVector<f64, 4>, SMatrix<f64, 4, 15>), AidingError> {
    if window.is_empty() || window.yaw_start.is_none() {
        return Err(AidingError::IncompleteWindow);
    }
    let tau = window.duration;
    let predicted = window.int_axle_velocity / tau;
    let mean_cos_pitch = window.int_cos_pitch / tau;
    let ins_heading_rate = angle_difference(window.yaw_end, window.yaw_start.unwrap()) / tau;
    // odom_kinematics yaw rate is z-up; the body yaw rate is z-down
    let odo_body_yaw_rate = -odom_avg.1;

    let mut innovation = SVector::<f64, 4>::zeros();
    innovation[0] = odom_avg.0 - predicted[0];
    innovation[1] = -predicted[1];
    innovation[2] = -predicted[2];
    innovation[3] = odo_body_yaw_rate - ins_heading_rate * mean_cos_pitch;

    let mut h = SMatrix::<f64, 4, 15>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-window.int_c_nb_skew_v / tau));
    h.fixed_view_mut::<3, 3>(0, VEL)
        .copy_from(&(-window.int_c_nb / tau));
    let yaw_att_row = window.int_yaw_row
        * (angle_difference(window.yaw_end, window.yaw_start.unwrap()) / (tau * tau));
    h.fixed_view_mut::<1, 3>(3, 0).copy_from(&yaw_att_row);
    // sensitivity of the measured body yaw rate to gyro bias; a bias feeds
    // the windowed heading difference one-for-one, so no 1/tau scaling
    let bias_row = -mean_cos_pitch * nav.attitude.0.row(2);
    h.fixed_view_mut::<1, 3>(3, BG).copy_from(&bias_row);
    Ok((innovation, h))
}

/// Covariance-normalized residual magnitude `sqrt(r^T S^-1 r)`.
pub fn mahalanobis_distance<const M: usize>(
    residual: &SVector<f64, M>,
    s: &SMatrix<f64, M, M>,
) -> Result<f64, AidingError> {
    let chol = nalgebra::Cholesky::new(*s).ok_or(AidingError::SingularCovariance)?;
    Ok(residual.dot(&chol.solve(residual)).max(0.0).sqrt())
}

/// Longitudinal slip ratio `i = 1 - v_x / (r w)`, clamped to [-1, 1].
///
/// `v_x` is the INS-estimated forward speed at the wheel, `wheel_omega` the
/// encoder-derived wheel angular rate. Undefined (error) when the wheel is
/// essentially stopped.
pub fn slip_ratio(v_x: f64, geom: &RoverGeometry, wheel_omega: f64) -> Result<f64, AidingError> {
    let wheel_speed = geom.wheel_radius * wheel_omega;
    if wheel_speed.abs() <= 1e-3 {
        return Err(AidingError::WheelStopped(wheel_speed));
    }
    Ok((1.0 - v_x / wheel_speed).clamp(-1.0, 1.0))
}

/// Error-space direction no body-frame measurement can observe: a rotation
/// about gravity applied coherently to the attitude and velocity errors.
///
/// Wheel speeds, velocity constraints, and zero-velocity updates are all
/// expressed in the body frame; a common heading offset rotates the
/// estimated attitude and NED velocity together and leaves every body-frame
/// prediction unchanged. The linearized H matrices still pick up apparent
/// sensitivity along this direction (through their attitude and velocity
/// blocks separately), and feeding that to the filter collapses the heading
/// covariance without any real information arriving.
pub fn heading_null_direction(nav: &NavState) -> crate::ekf::Vector15 {
    let v = nav.velocity_ned;
    let mut n = crate::ekf::Vector15::zeros();
    n[crate::ekf::ATT + 2] = 1.0;
    n[VEL] = -v[1];
    n[VEL + 1] = v[0];
    n
}

/// Removes the [`heading_null_direction`] component from every row of a
/// measurement matrix, so the update cannot claim heading information.
pub fn project_out_heading<const M: usize>(
    h: &mut SMatrix<f64, M, 15>,
    nav: &NavState,
) {
    let n = heading_null_direction(nav);
    let nn = n.norm_squared();
    if nn <= 0.0 {
        return;
    }
    for r in 0..M {
        let dot = h.row(r) * n;
        let correction = n.transpose() * (dot[(0, 0)] / nn);
        let updated = h.row(r) - correction;
        h.row_mut(r).copy_from(&updated);
    }
}

/// Outcome of the per-update slip test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipFlag {
    NoSlip,
    Significant,
}

/// Slip is significant only when the Mahalanobis distance and at least one
/// wheel's slip ratio exceed their gates at the same time step.
pub fn classify_slip(chi: f64, ratios: &[f64], thr: &AidingThresholds) -> SlipFlag {
    let ratio_exceeded = ratios.iter().any(|i| i.abs() > thr.slip_ratio_gate);
    if chi > thr.mahalanobis_gate && ratio_exceeded {
        SlipFlag::Significant
    } else {
        SlipFlag::NoSlip
    }
}
