//! 15-state error-state extended Kalman filter around the INS mechanization.
//!
//! Error-state ordering: attitude (rad), velocity (m/s), position
//! (rad, rad, m), accelerometer bias (m/s^2), gyro bias (rad/s). All errors
//! are "estimate minus truth"; the attitude error is the small rotation
//! taking truth to estimate in the navigation frame, so the closed-loop
//! correction is `C <- (I - skew(dPsi)) C`, `v <- v - dv`, `p <- p - dp`.
//! Sensor biases are additive on the measurements; their estimates are held
//! by the filter and subtracted from raw IMU data before mechanization.
//!
//! The filter is closed-loop: every measurement update is immediately folded
//! into the navigation state and the error mean resets to zero, which keeps
//! the linearization honest.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geodesy::{self, Dcm, EllipsoidModel, GeodeticPosition, skew};
use crate::mechanization::{self, ImuSample, MechanizationError, NavState};

pub type Vector15 = SVector<f64, 15>;
pub type Matrix15 = SMatrix<f64, 15, 15>;

/// Index of the first attitude-error component.
pub const ATT: usize = 0;
/// Index of the first velocity-error component.
pub const VEL: usize = 3;
/// Index of the first position-error component.
pub const POS: usize = 6;
/// Index of the first accelerometer-bias component.
pub const BA: usize = 9;
/// Index of the first gyro-bias component.
pub const BG: usize = 12;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("covariance lost positive definiteness (diagonal {0} = {1})")]
    NonPositiveDefinite(usize, f64),
    #[error("innovation covariance is singular")]
    SingularInnovationCovariance,
    #[error("attitude error {0} rad too large for small-angle correction")]
    LargeAttitudeError(f64),
    #[error(transparent)]
    Mechanization(#[from] MechanizationError),
}

/// 15-element error state in the fixed ordering above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState(pub Vector15);

impl ErrorState {
    pub fn zero() -> Self {
        ErrorState(Vector15::zeros())
    }

    pub fn attitude_err(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(ATT).into()
    }

    pub fn velocity_err(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(VEL).into()
    }

    pub fn position_err(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(POS).into()
    }

    pub fn accel_bias(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(BA).into()
    }

    pub fn gyro_bias(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(BG).into()
    }
}

/// 15x15 error covariance. Kept symmetric by construction; use
/// [`symmetrize`] after any update.
pub type Covariance = Matrix15;

/// Forces exact symmetry, `(P + P^T) / 2`.
pub fn symmetrize(p: &Covariance) -> Covariance {
    (p + p.transpose()) * 0.5
}

/// IMU stochastic error description in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseSpec {
    /// Angular random walk, rad/sqrt(s).
    pub gyro_arw: f64,
    /// Gyro in-run bias instability (1-sigma), rad/s.
    pub gyro_bias_instability: f64,
    /// Velocity random walk, (m/s)/sqrt(s).
    pub accel_vrw: f64,
    /// Accelerometer bias instability (1-sigma), m/s^2.
    pub accel_bias_instability: f64,
    /// First-order Gauss-Markov correlation time for both biases, s.
    pub bias_correlation_time: f64,
}

impl ImuNoiseSpec {
    /// All-zero noise (ideal sensor); Q becomes exactly zero.
    pub fn zero() -> Self {
        ImuNoiseSpec {
            gyro_arw: 0.0,
            gyro_bias_instability: 0.0,
            accel_vrw: 0.0,
            accel_bias_instability: 0.0,
            bias_correlation_time: 3600.0,
        }
    }

    /// Tactical-grade MEMS IMU: 0.1 deg/sqrt(hr) ARW, 1.6 deg/hr bias,
    /// 0.008 (m/s)/sqrt(hr) VRW, 3.2 ug accelerometer bias.
    pub fn tactical_grade() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        ImuNoiseSpec {
            gyro_arw: 0.1 * deg / 60.0,
            gyro_bias_instability: 1.6 * deg / 3600.0,
            accel_vrw: 0.008 / 60.0,
            accel_bias_instability: 3.2e-6 * 9.80665,
            bias_correlation_time: 3600.0,
        }
    }

    /// Low-cost consumer MEMS IMU: 1 deg/sqrt(hr) ARW, 40 deg/hr bias,
    /// 0.05 (m/s)/sqrt(hr) VRW, 300 ug accelerometer bias.
    pub fn consumer_grade() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        ImuNoiseSpec {
            gyro_arw: 1.0 * deg / 60.0,
            gyro_bias_instability: 40.0 * deg / 3600.0,
            accel_vrw: 0.05 / 60.0,
            accel_bias_instability: 3.0e-4 * 9.80665,
            bias_correlation_time: 3600.0,
        }
    }
}

/// One recorded filter step, the unit of storage for backward smoothing.
///
/// `nav`/`covariance` are the filtered quantities at this epoch (after any
/// measurement updates applied here), `transition` maps this epoch to the
/// next, `predicted_covariance` is the covariance right after that
/// propagation, and `update_correction` is the total error-state correction
/// folded into `nav` at this epoch (zero when no update fired).
#[derive(Debug, Clone)]
pub struct FilterEpoch {
    pub time: f64,
    pub nav: NavState,
    pub covariance: Covariance,
    pub transition: Matrix15,
    pub predicted_covariance: Covariance,
    pub update_correction: Vector15,
}

/// Continuous-time error-dynamics matrix F linearized about `state`.
///
/// `f_ned` is the specific force resolved in NED (what the velocity update
/// consumed). Bias blocks are first-order Gauss-Markov with the given
/// correlation time; pass 0 for constant biases.
pub fn system_matrix(
    state: &NavState,
    f_ned: &Vector3<f64>,
    model: &EllipsoidModel,
    bias_correlation_time: f64,
) -> Matrix15 {
    let lat = state.position.latitude;
    let h = state.position.height;
    let v = state.velocity_ned;
    let c_bn = state.attitude.0;
    let (r_n, r_e) = geodesy::radii_of_curvature(lat, model);
    let (sin_lat, cos_lat) = lat.sin_cos();
    let tan_lat = sin_lat / cos_lat;
    let w_ie = model.rotation_rate;

    // radii derivatives with latitude (small but kept for Jacobian fidelity)
    let denom = 1.0 - model.eccentricity_sq * sin_lat * sin_lat;
    let dr_n = 3.0 * r_n * model.eccentricity_sq * sin_lat * cos_lat / denom;
    let dr_e = r_e * model.eccentricity_sq * sin_lat * cos_lat / denom;

    let omega_ie = geodesy::earth_rate_ned(lat, model);
    let omega_en = geodesy::transport_rate(&state.position, &v, model);

    // d(omega_en)/dv
    let m_v = Matrix3::new(
        0.0,
        1.0 / (r_e + h),
        0.0,
        -1.0 / (r_n + h),
        0.0,
        0.0,
        0.0,
        -tan_lat / (r_e + h),
        0.0,
    );
    // d(omega_ie)/d(lat)
    let d_ie_dlat = Vector3::new(-w_ie * sin_lat, 0.0, -w_ie * cos_lat);
    // d(omega_en)/d(lat), including the radii variation
    let d_en_dlat = Vector3::new(
        -v[1] * dr_e / (r_e + h).powi(2),
        v[0] * dr_n / (r_n + h).powi(2),
        -v[1] / ((r_e + h) * cos_lat * cos_lat) + v[1] * tan_lat * dr_e / (r_e + h).powi(2),
    );
    // d(omega_en)/dh
    let d_en_dh = Vector3::new(
        -v[1] / (r_e + h).powi(2),
        v[0] / (r_n + h).powi(2),
        v[1] * tan_lat / (r_e + h).powi(2),
    );

    let mut f = Matrix15::zeros();

    // attitude error: -w_in x dPsi - d(omega_in)(dv, dp) + C b_g
    f.fixed_view_mut::<3, 3>(ATT, ATT)
        .copy_from(&(-skew(&(omega_ie + omega_en))));
    f.fixed_view_mut::<3, 3>(ATT, VEL).copy_from(&(-m_v));
    let mut att_pos = Matrix3::zeros();
    att_pos.set_column(0, &(-(d_ie_dlat + d_en_dlat)));
    att_pos.set_column(2, &(-d_en_dh));
    f.fixed_view_mut::<3, 3>(ATT, POS).copy_from(&att_pos);
    f.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&c_bn);

    // velocity error
    f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&(-skew(f_ned)));
    let coriolis = skew(&omega_en) + skew(&omega_ie) * 2.0;
    f.fixed_view_mut::<3, 3>(VEL, VEL)
        .copy_from(&(-coriolis + skew(&v) * m_v));
    // gravity gradient plus Coriolis dependence on position
    let g_mag = geodesy::gravity_magnitude(lat, h, model);
    let eps = 1e-7;
    let dg_dlat = (geodesy::gravity_magnitude(lat + eps, h, model)
        - geodesy::gravity_magnitude(lat - eps, h, model))
        / (2.0 * eps);
    let dg_dh = match model.gravity.height {
        geodesy::HeightCorrection::LinearFreeAir { gradient } => -gradient,
        geodesy::HeightCorrection::InverseSquare => -2.0 * g_mag / (model.semi_major_axis + h),
    };
    let mut vel_pos = Matrix3::zeros();
    vel_pos.set_column(
        0,
        &(Vector3::new(0.0, 0.0, dg_dlat) + skew(&v) * (d_en_dlat + d_ie_dlat * 2.0)),
    );
    vel_pos.set_column(2, &(Vector3::new(0.0, 0.0, dg_dh) + skew(&v) * d_en_dh));
    f.fixed_view_mut::<3, 3>(VEL, POS).copy_from(&vel_pos);
    f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&c_bn);

    // position error kinematics
    let pos_vel = Matrix3::new(
        1.0 / (r_n + h),
        0.0,
        0.0,
        0.0,
        1.0 / ((r_e + h) * cos_lat),
        0.0,
        0.0,
        0.0,
        -1.0,
    );
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&pos_vel);
    let pos_pos = Matrix3::new(
        -v[0] * dr_n / (r_n + h).powi(2),
        0.0,
        -v[0] / (r_n + h).powi(2),
        v[1] * (sin_lat / ((r_e + h) * cos_lat * cos_lat) - dr_e / ((r_e + h).powi(2) * cos_lat)),
        0.0,
        -v[1] / ((r_e + h).powi(2) * cos_lat),
        0.0,
        0.0,
        0.0,
    );
    f.fixed_view_mut::<3, 3>(POS, POS).copy_from(&pos_pos);

    // first-order Gauss-Markov biases
    if bias_correlation_time > 0.0 {
        let decay = -1.0 / bias_correlation_time;
        for i in BA..15 {
            f[(i, i)] = decay;
        }
    }

    f
}

/// First-order discretization `Phi = I + F dt`.
pub fn state_transition(f: &Matrix15, dt: f64) -> Matrix15 {
    Matrix15::identity() + f * dt
}

/// Block-diagonal process noise over one step of length `dt`.
///
/// White sensor noise drives the attitude and velocity blocks; the
/// Gauss-Markov driving noise `2 sigma^2 / tau` keeps the bias blocks at
/// their stationary variance. The position block receives no direct noise.
pub fn process_noise(spec: &ImuNoiseSpec, dt: f64) -> Matrix15 {
    let mut q = Matrix15::zeros();
    let arw2 = spec.gyro_arw * spec.gyro_arw * dt;
    let vrw2 = spec.accel_vrw * spec.accel_vrw * dt;
    let (qa, qg) = if spec.bias_correlation_time > 0.0 {
        (
            2.0 * spec.accel_bias_instability.powi(2) / spec.bias_correlation_time * dt,
            2.0 * spec.gyro_bias_instability.powi(2) / spec.bias_correlation_time * dt,
        )
    } else {
        (0.0, 0.0)
    };
    for i in 0..3 {
        q[(ATT + i, ATT + i)] = arw2;
        q[(VEL + i, VEL + i)] = vrw2;
        q[(BA + i, BA + i)] = qa;
        q[(BG + i, BG + i)] = qg;
    }
    q
}

/// Covariance time update `P+ = Phi P Phi^T + Q`, resymmetrized.
pub fn propagate(p: &Covariance, phi: &Matrix15, q: &Matrix15) -> Result<Covariance, FilterError> {
    let p_new = symmetrize(&(phi * p * phi.transpose() + q));
    for i in 0..15 {
        if p_new[(i, i)] <= 0.0 {
            return Err(FilterError::NonPositiveDefinite(i, p_new[(i, i)]));
        }
    }
    Ok(p_new)
}

/// Generic EKF measurement update with Joseph-form covariance and a
/// Mahalanobis distance computed from the post-fit residual.
///
/// Returns the estimated error state, the updated covariance, and
/// `chi = sqrt(r^T S^-1 r)` with `r = innovation - H dx`.
pub fn measurement_update<const M: usize>(
    p: &Covariance,
    h: &SMatrix<f64, M, 15>,
    r: &SMatrix<f64, M, M>,
    innovation: &SVector<f64, M>,
) -> Result<(ErrorState, Covariance, f64), FilterError> {
    let s = h * p * h.transpose() + r;
    let chol = Cholesky::new(s).ok_or(FilterError::SingularInnovationCovariance)?;
    let k = p * h.transpose() * chol.inverse();
    let dx = k * innovation;
    let ikh = Matrix15::identity() - k * h;
    let p_new = symmetrize(&(ikh * p * ikh.transpose() + k * r * k.transpose()));
    for i in 0..15 {
        if p_new[(i, i)] <= 0.0 {
            return Err(FilterError::NonPositiveDefinite(i, p_new[(i, i)]));
        }
    }
    let post_fit = innovation - h * dx;
    let chi = post_fit.dot(&chol.solve(&post_fit)).max(0.0).sqrt();
    Ok((ErrorState(dx), p_new, chi))
}

/// Folds an estimated error state into the navigation state (closed-loop
/// correction). Bias components are *not* handled here; the caller owns the
/// persistent bias estimates.
pub fn correct_nav_state(state: &NavState, err: &ErrorState) -> Result<NavState, FilterError> {
    let d_att = err.attitude_err();
    if d_att.norm() >= 0.5 {
        return Err(FilterError::LargeAttitudeError(d_att.norm()));
    }
    let c = (Matrix3::identity() - skew(&d_att)) * state.attitude.0;
    let dp = err.position_err();
    Ok(NavState {
        attitude: Dcm(c).renormalized(),
        velocity_ned: state.velocity_ned - err.velocity_err(),
        position: GeodeticPosition {
            latitude: state.position.latitude - dp[0],
            longitude: geodesy::normalize_longitude(state.position.longitude - dp[1]),
            height: state.position.height - dp[2],
        },
        time: state.time,
    })
}

/// Applies an error delta with the opposite sign of [`correct_nav_state`]:
/// `apply_error_delta(correct_nav_state(s, e), e.0) == s` to first order.
/// Used by the smoother to move along error coordinates.
pub fn apply_error_delta(state: &NavState, delta: &Vector15) -> NavState {
    let d_att: Vector3<f64> = delta.fixed_rows::<3>(ATT).into();
    let d_vel: Vector3<f64> = delta.fixed_rows::<3>(VEL).into();
    let d_pos: Vector3<f64> = delta.fixed_rows::<3>(POS).into();
    NavState {
        attitude: Dcm((Matrix3::identity() + skew(&d_att)) * state.attitude.0).renormalized(),
        velocity_ned: state.velocity_ned + d_vel,
        position: GeodeticPosition {
            latitude: state.position.latitude + d_pos[0],
            longitude: geodesy::normalize_longitude(state.position.longitude + d_pos[1]),
            height: state.position.height + d_pos[2],
        },
        time: state.time,
    }
}

/// Initial covariance settings; all one-sigma values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialUncertainty {
    pub roll_pitch: f64,
    pub heading: f64,
    pub velocity: f64,
    /// Horizontal and vertical position, meters.
    pub position_m: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
}

impl InitialUncertainty {
    pub fn defaults(spec: &ImuNoiseSpec) -> Self {
        let deg = std::f64::consts::PI / 180.0;
        InitialUncertainty {
            roll_pitch: 0.5 * deg,
            heading: 1.0 * deg,
            velocity: 0.05,
            position_m: 0.1,
            accel_bias: spec.accel_bias_instability,
            gyro_bias: spec.gyro_bias_instability,
        }
    }

    /// Builds the full 15x15 initial covariance; the position sigmas are
    /// converted from meters to radians at the given position.
    pub fn covariance(&self, pos: &GeodeticPosition, model: &EllipsoidModel) -> Covariance {
        let (r_n, r_e) = geodesy::radii_of_curvature(pos.latitude, model);
        let lat_sigma = self.position_m / (r_n + pos.height);
        let lon_sigma = self.position_m / ((r_e + pos.height) * pos.latitude.cos());
        let mut p = Covariance::zeros();
        let diag = [
            self.roll_pitch,
            self.roll_pitch,
            self.heading,
            self.velocity,
            self.velocity,
            self.velocity,
            lat_sigma,
            lon_sigma,
            self.position_m,
            self.accel_bias,
            self.accel_bias,
            self.accel_bias,
            self.gyro_bias,
            self.gyro_bias,
            self.gyro_bias,
        ];
        for (i, s) in diag.iter().enumerate() {
            p[(i, i)] = s * s;
        }
        p
    }
}

/// Result of one filter propagation step, exposed for epoch recording.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub transition: Matrix15,
    pub predicted_covariance: Covariance,
}

/// The closed-loop error-state filter: owns the navigation state, the error
/// covariance, and the persistent IMU bias estimates.
///
/// Single-threaded by contract: one owner feeds it samples in time order.
#[derive(Debug, Clone)]
pub struct ErrorFilter {
    pub nav: NavState,
    pub covariance: Covariance,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    noise: ImuNoiseSpec,
    model: EllipsoidModel,
}

impl ErrorFilter {
    pub fn new(
        nav: NavState,
        covariance: Covariance,
        noise: ImuNoiseSpec,
        model: EllipsoidModel,
    ) -> Self {
        ErrorFilter {
            nav,
            covariance,
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            noise,
            model,
        }
    }

    pub fn model(&self) -> &EllipsoidModel {
        &self.model
    }

    pub fn noise(&self) -> &ImuNoiseSpec {
        &self.noise
    }

    /// Raw IMU sample minus the current bias estimates.
    pub fn compensate(&self, imu: &ImuSample) -> ImuSample {
        ImuSample {
            time: imu.time,
            angular_rate: imu.angular_rate - self.gyro_bias,
            specific_force: imu.specific_force - self.accel_bias,
        }
    }

    /// Mechanizes one bias-compensated IMU sample and propagates the
    /// covariance along the linearized dynamics.
    pub fn propagate(&mut self, raw: &ImuSample, dt: f64) -> Result<Propagation, FilterError> {
        let imu = self.compensate(raw);
        let att_new = mechanization::attitude_update(&self.nav, &imu.angular_rate, dt, &self.model)?;
        let f_ned = 0.5 * (self.nav.attitude.0 + att_new.0) * imu.specific_force;
        let nav_new = mechanization::mechanize(&self.nav, &imu, dt, &self.model)?;
        let f = system_matrix(&self.nav, &f_ned, &self.model, self.noise.bias_correlation_time);
        let phi = state_transition(&f, dt);
        let q = process_noise(&self.noise, dt);
        let p_new = propagate(&self.covariance, &phi, &q)?;
        self.nav = nav_new;
        self.covariance = p_new;
        Ok(Propagation {
            transition: phi,
            predicted_covariance: p_new,
        })
    }

    /// Runs a measurement update and folds the estimated errors back into
    /// the navigation state and bias estimates.
    ///
    /// Returns the applied correction and the post-fit Mahalanobis distance.
    pub fn apply_update<const M: usize>(
        &mut self,
        h: &SMatrix<f64, M, 15>,
        r: &SMatrix<f64, M, M>,
        innovation: &SVector<f64, M>,
    ) -> Result<(ErrorState, f64), FilterError> {
        let (dx, p_new, chi) = measurement_update(&self.covariance, h, r, innovation)?;
        self.nav = correct_nav_state(&self.nav, &dx)?;
        self.accel_bias += dx.accel_bias();
        self.gyro_bias += dx.gyro_bias();
        self.covariance = p_new;
        Ok((dx, chi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::Matrix1;

    fn test_state() -> NavState {
        NavState {
            attitude: geodesy::euler_to_dcm(0.02, -0.05, 1.2),
            velocity_ned: Vector3::new(0.4, 0.1, -0.02),
            position: GeodeticPosition::new(39.65_f64.to_radians(), -1.39, 300.0).unwrap(),
            time: 0.0,
        }
    }

    #[test]
    fn error_state_block_accessors() {
        let mut v = Vector15::zeros();
        for i in 0..15 {
            v[i] = i as f64;
        }
        let e = ErrorState(v);
        assert_eq!(e.attitude_err(), Vector3::new(0.0, 1.0, 2.0));
        assert_eq!(e.velocity_err(), Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(e.position_err(), Vector3::new(6.0, 7.0, 8.0));
        assert_eq!(e.accel_bias(), Vector3::new(9.0, 10.0, 11.0));
        assert_eq!(e.gyro_bias(), Vector3::new(12.0, 13.0, 14.0));
    }

    #[test]
    fn velocity_attitude_coupling_is_minus_skew_f() {
        let model = EllipsoidModel::wgs84();
        let state = test_state();
        let f_ned = Vector3::new(0.0, 0.0, -9.81);
        let f = system_matrix(&state, &f_ned, &model, 3600.0);
        let block = f.fixed_view::<3, 3>(VEL, ATT).clone_owned();
        assert_abs_diff_eq!(block, -skew(&f_ned), epsilon = 1e-15);
        // a tilt about east couples gravity into the north channel at g
        assert_relative_eq!(f[(VEL, ATT + 1)].abs(), 9.81, max_relative = 1e-12);
    }

    #[test]
    fn attitude_bias_coupling_is_attitude_matrix() {
        let model = EllipsoidModel::wgs84();
        let state = test_state();
        let f = system_matrix(&state, &Vector3::zeros(), &model, 3600.0);
        assert_abs_diff_eq!(
            f.fixed_view::<3, 3>(ATT, BG).clone_owned(),
            state.attitude.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            f.fixed_view::<3, 3>(VEL, BA).clone_owned(),
            state.attitude.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn position_block_reduces_to_velocity_integration() {
        // zero velocity on a non-rotating planet: position rows only carry
        // the curvature-scaled identity
        let model = EllipsoidModel::non_rotating(6.0e6, 9.81);
        let mut state = test_state();
        state.velocity_ned = Vector3::zeros();
        let f = system_matrix(&state, &Vector3::zeros(), &model, 0.0);
        let h = state.position.height;
        let expected = Matrix3::new(
            1.0 / (6.0e6 + h),
            0.0,
            0.0,
            0.0,
            1.0 / ((6.0e6 + h) * state.position.latitude.cos()),
            0.0,
            0.0,
            0.0,
            -1.0,
        );
        assert_abs_diff_eq!(
            f.fixed_view::<3, 3>(POS, VEL).clone_owned(),
            expected,
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(
            f.fixed_view::<3, 3>(POS, POS).clone_owned(),
            Matrix3::zeros(),
            epsilon = 1e-18
        );
    }

    #[test]
    fn transport_rate_and_curvature_blocks_match_hand_formulas() {
        // the tiniest F entries, pinned directly against their closed forms
        let model = EllipsoidModel::wgs84();
        let state = test_state();
        let f = system_matrix(&state, &Vector3::zeros(), &model, 0.0);
        let lat = state.position.latitude;
        let h = state.position.height;
        let v = state.velocity_ned;
        let (r_n, r_e) = geodesy::radii_of_curvature(lat, &model);
        // attitude-error coupling to velocity error: -d(omega_en)/dv
        assert_relative_eq!(f[(ATT, VEL + 1)], -1.0 / (r_e + h), max_relative = 1e-12);
        assert_relative_eq!(f[(ATT + 1, VEL)], 1.0 / (r_n + h), max_relative = 1e-12);
        assert_relative_eq!(
            f[(ATT + 2, VEL + 1)],
            lat.tan() / (r_e + h),
            max_relative = 1e-12
        );
        // position self-coupling: longitude rate depends on latitude
        // through 1/cos(L) and the transverse-radius variation
        let dr_e = r_e * model.eccentricity_sq * lat.sin() * lat.cos()
            / (1.0 - model.eccentricity_sq * lat.sin() * lat.sin());
        let dlon_dlat = v[1] * lat.sin() / ((r_e + h) * lat.cos() * lat.cos())
            - v[1] * dr_e / ((r_e + h).powi(2) * lat.cos());
        assert_relative_eq!(f[(POS + 1, POS)], dlon_dlat, max_relative = 1e-12);
        // latitude rate depends on height
        assert_relative_eq!(
            f[(POS, POS + 2)],
            -v[0] / (r_n + h).powi(2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn state_transition_identity_and_exponential() {
        assert_eq!(
            state_transition(&Matrix15::zeros(), 0.5),
            Matrix15::identity()
        );

        let model = EllipsoidModel::wgs84();
        let state = test_state();
        let f = system_matrix(&state, &Vector3::new(0.1, 0.0, -9.8), &model, 3600.0);
        // first-order truncation error is F^2 dt^2 / 2; the gravity/bias
        // chains in F^2 are O(10), so the comparison needs a small dt
        let dt = 2e-4;
        let phi = state_transition(&f, dt);
        // matrix exponential via scaling and squaring
        let mut expm = Matrix15::identity() + f * (dt / 1024.0);
        for _ in 0..10 {
            expm = expm * expm;
        }
        assert!((phi - expm).norm() < 1e-6);
        // composition: Phi(dt) ~ Phi(dt/2)^2 within O(dt^2)
        let dt = 0.01;
        let phi = state_transition(&f, dt);
        let half = state_transition(&f, dt / 2.0);
        assert!((phi - half * half).norm() <= f.norm() * f.norm() * dt * dt);
    }

    #[test]
    fn process_noise_scaling() {
        assert_eq!(process_noise(&ImuNoiseSpec::zero(), 0.01), Matrix15::zeros());

        let spec = ImuNoiseSpec::tactical_grade();
        let q1 = process_noise(&spec, 0.01);
        let q2 = process_noise(&spec, 0.02);
        assert_abs_diff_eq!(q2, q1 * 2.0, epsilon = 1e-30);
        // position block stays zero
        for i in POS..POS + 3 {
            assert_eq!(q1[(i, i)], 0.0);
        }
    }

    #[test]
    fn tactical_grade_unit_conversion() {
        let spec = ImuNoiseSpec::tactical_grade();
        // 0.1 deg/sqrt(hr) -> rad/sqrt(s)
        assert_relative_eq!(spec.gyro_arw, 2.9089e-5, max_relative = 1e-4);
        // 0.008 m/s/sqrt(hr) -> m/s/sqrt(s)
        assert_relative_eq!(spec.accel_vrw, 1.3333e-4, max_relative = 1e-4);
        // 1.6 deg/hr -> rad/s
        assert_relative_eq!(spec.gyro_bias_instability, 7.757e-6, max_relative = 1e-3);
        // 3.2 ug -> m/s^2
        assert_relative_eq!(spec.accel_bias_instability, 3.138e-5, max_relative = 1e-3);
    }

    #[test]
    fn propagate_identity_cases() {
        let p = Covariance::identity() * 0.5;
        let out = propagate(&p, &Matrix15::identity(), &Matrix15::zeros()).unwrap();
        assert_abs_diff_eq!(out, p, epsilon = 1e-15);

        let q = Matrix15::identity() * 0.1;
        let out = propagate(&p, &Matrix15::identity(), &q).unwrap();
        assert_abs_diff_eq!(out, p + q, epsilon = 1e-15);
        assert!(out.trace() >= p.trace());
    }

    #[test]
    fn measurement_update_scalar_kalman() {
        // P = 1, H = 1, R = 1, z = 1 -> dx = 0.5, P+ = 0.5
        let mut p = Covariance::zeros();
        p[(0, 0)] = 1.0;
        for i in 1..15 {
            p[(i, i)] = 1e-12;
        }
        let mut h = SMatrix::<f64, 1, 15>::zeros();
        h[(0, 0)] = 1.0;
        let r = Matrix1::new(1.0);
        let z = SVector::<f64, 1>::new(1.0);
        let (dx, p_new, chi) = measurement_update(&p, &h, &r, &z).unwrap();
        assert_relative_eq!(dx.0[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(p_new[(0, 0)], 0.5, max_relative = 1e-12);
        // post-fit residual 0.5, S = 2 -> chi = 0.5 / sqrt(2)
        assert_relative_eq!(chi, 0.5 / 2.0_f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn measurement_update_zero_innovation() {
        let p = Covariance::identity();
        let mut h = SMatrix::<f64, 3, 15>::zeros();
        for i in 0..3 {
            h[(i, VEL + i)] = -1.0;
        }
        let r = Matrix3::identity() * 0.01;
        let z = Vector3::zeros();
        let (dx, p_new, chi) = measurement_update(&p, &h, &r, &z).unwrap();
        assert_eq!(dx.0, Vector15::zeros());
        assert_eq!(chi, 0.0);
        assert!(p_new.trace() <= p.trace());
    }

    #[test]
    fn joseph_update_with_huge_r_is_identity() {
        let model = EllipsoidModel::wgs84();
        let spec = ImuNoiseSpec::tactical_grade();
        let p0 = InitialUncertainty::defaults(&spec).covariance(&test_state().position, &model);
        let mut h = SMatrix::<f64, 3, 15>::zeros();
        for i in 0..3 {
            h[(i, VEL + i)] = -1.0;
        }
        let r = Matrix3::identity() * 1e12;
        let z = Vector3::new(0.3, -0.1, 0.2);
        let (_, p_new, _) = measurement_update(&p0, &h, &r, &z).unwrap();
        assert!((p_new - p0).norm() / p0.norm() < 1e-6);
    }

    #[test]
    fn singular_innovation_detected() {
        let p = Covariance::zeros();
        let h = SMatrix::<f64, 2, 15>::zeros();
        let r = SMatrix::<f64, 2, 2>::zeros();
        let z = SVector::<f64, 2>::zeros();
        assert!(matches!(
            measurement_update(&p, &h, &r, &z),
            Err(FilterError::SingularInnovationCovariance)
        ));
    }

    #[test]
    fn correct_nav_state_conventions() {
        let state = test_state();
        assert_eq!(
            correct_nav_state(&state, &ErrorState::zero()).unwrap(),
            state
        );

        let mut e = Vector15::zeros();
        e[POS + 2] = -2.0;
        let corrected = correct_nav_state(&state, &ErrorState(e)).unwrap();
        assert_relative_eq!(corrected.position.height, 302.0, max_relative = 1e-12);

        let mut e = Vector15::zeros();
        e[ATT] = 0.6;
        assert!(matches!(
            correct_nav_state(&state, &ErrorState(e)),
            Err(FilterError::LargeAttitudeError(_))
        ));
    }

    #[test]
    fn apply_error_delta_inverts_correction() {
        let state = test_state();
        let mut e = Vector15::zeros();
        e[ATT] = 1e-3;
        e[ATT + 2] = -2e-3;
        e[VEL] = 0.01;
        e[POS + 1] = 1e-7;
        e[POS + 2] = 0.2;
        let corrected = correct_nav_state(&state, &ErrorState(e)).unwrap();
        let back = apply_error_delta(&corrected, &e);
        assert!((back.attitude.0 - state.attitude.0).norm() < 1e-6);
        assert_abs_diff_eq!(back.velocity_ned, state.velocity_ned, epsilon = 1e-12);
        assert_abs_diff_eq!(back.position.height, state.position.height, epsilon = 1e-12);
    }

    #[test]
    fn correction_shrinks_innovation() {
        // ZUPT-style geometry: a velocity pseudo-measurement applied through
        // the filter must reduce the same innovation when recomputed
        let model = EllipsoidModel::wgs84();
        let spec = ImuNoiseSpec::tactical_grade();
        let mut state = test_state();
        state.velocity_ned = Vector3::new(0.08, -0.03, 0.02);
        let p0 = InitialUncertainty::defaults(&spec).covariance(&state.position, &model);
        let mut filter = ErrorFilter::new(state, p0, spec, model);

        let mut h = SMatrix::<f64, 3, 15>::zeros();
        for i in 0..3 {
            h[(i, VEL + i)] = -1.0;
        }
        let r = Matrix3::identity() * 1e-4;
        let before = -filter.nav.velocity_ned;
        filter.apply_update(&h, &r, &before).unwrap();
        let after = -filter.nav.velocity_ned;
        assert!(after.norm() < before.norm());
    }
}
