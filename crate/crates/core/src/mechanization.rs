//! Strapdown INS state propagation in the local NED frame.
//!
//! Each IMU sample advances the navigation state through three first-order
//! updates: attitude from the gyro (with Earth-rate and transport-rate
//! compensation), velocity from the specific force (with gravity and
//! Coriolis terms), and position from the trapezoid of old/new velocity.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geodesy::{
    self, Dcm, EllipsoidModel, GeodeticPosition, radii_of_curvature, skew,
};

/// Longest IMU interval the first-order updates are trusted over, seconds.
pub const MAX_DT: f64 = 0.1;
/// Latitude band (rad) outside which the longitude update denominator
/// `cos L` is considered degenerate.
pub const POLAR_LATITUDE_LIMIT: f64 = 89.9 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum MechanizationError {
    #[error("dt = {0} s outside (0, {MAX_DT}]")]
    InvalidDt(f64),
    #[error("latitude {0} rad too close to a pole for the longitude update")]
    PolarSingularity(f64),
}

/// Total navigation state: body->NED attitude, NED velocity, geodetic
/// position, and the time it is valid at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub attitude: Dcm,
    pub velocity_ned: Vector3<f64>,
    pub position: GeodeticPosition,
    pub time: f64,
}

impl NavState {
    /// Stationary state with the given attitude and position at t = 0.
    pub fn at_rest(attitude: Dcm, position: GeodeticPosition) -> Self {
        NavState {
            attitude,
            velocity_ned: Vector3::zeros(),
            position,
            time: 0.0,
        }
    }
}

/// One IMU sample: body angular rate (rad/s) and specific force (m/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time: f64,
    pub angular_rate: Vector3<f64>,
    pub specific_force: Vector3<f64>,
}

fn check_dt_bounded(dt: f64) -> Result<(), MechanizationError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(MechanizationError::InvalidDt(dt));
    }
    Ok(())
}

fn check_dt_positive(dt: f64) -> Result<(), MechanizationError> {
    // NaN must fail too
    if dt > 0.0 {
        Ok(())
    } else {
        Err(MechanizationError::InvalidDt(dt))
    }
}

/// First-order attitude update from one gyro sample, re-orthonormalized.
///
/// `C+ = C- (I + skew(w_ib) dt) - (skew(w_ie) + skew(w_en)) C- dt`
pub fn attitude_update(
    state: &NavState,
    angular_rate: &Vector3<f64>,
    dt: f64,
    model: &EllipsoidModel,
) -> Result<Dcm, MechanizationError> {
    check_dt_bounded(dt)?;
    let c = state.attitude.0;
    let omega_ib = skew(angular_rate);
    let omega_ie = skew(&geodesy::earth_rate_ned(state.position.latitude, model));
    let omega_en = skew(&geodesy::transport_rate(
        &state.position,
        &state.velocity_ned,
        model,
    ));
    let updated = c + c * omega_ib * dt - (omega_ie + omega_en) * c * dt;
    Ok(Dcm(updated).renormalized())
}

/// Velocity update from NED-resolved specific force.
///
/// `v+ = v- + (f_ned + g(L,h) - (skew(w_en) + 2 skew(w_ie)) v-) dt`
pub fn velocity_update(
    state: &NavState,
    f_ned: &Vector3<f64>,
    dt: f64,
    model: &EllipsoidModel,
) -> Result<Vector3<f64>, MechanizationError> {
    check_dt_positive(dt)?;
    let gravity = geodesy::gravity_ned(&state.position, model);
    let omega_ie = skew(&geodesy::earth_rate_ned(state.position.latitude, model));
    let omega_en = skew(&geodesy::transport_rate(
        &state.position,
        &state.velocity_ned,
        model,
    ));
    let coriolis: Matrix3<f64> = omega_en + omega_ie * 2.0;
    Ok(state.velocity_ned + (f_ned + gravity - coriolis * state.velocity_ned) * dt)
}

/// Trapezoidal position update from old and new velocity.
///
/// Height first, then latitude using the meridian radius at the old
/// latitude in both trapezoid terms, then longitude using the transverse
/// radius at the old latitude with old/new heights and cosines.
pub fn position_update(
    state: &NavState,
    v_new: &Vector3<f64>,
    dt: f64,
    model: &EllipsoidModel,
) -> Result<GeodeticPosition, MechanizationError> {
    check_dt_positive(dt)?;
    let pos = state.position;
    if pos.latitude.abs() > POLAR_LATITUDE_LIMIT {
        return Err(MechanizationError::PolarSingularity(pos.latitude));
    }
    let v_old = state.velocity_ned;
    let (r_n, r_e) = radii_of_curvature(pos.latitude, model);

    let h_new = pos.height - 0.5 * dt * (v_old[2] + v_new[2]);
    let lat_new = pos.latitude
        + 0.5 * dt * v_old[0] / (r_n + pos.height)
        + 0.5 * dt * v_new[0] / (r_n + h_new);
    if lat_new.abs() > POLAR_LATITUDE_LIMIT {
        return Err(MechanizationError::PolarSingularity(lat_new));
    }
    let lon_new = pos.longitude
        + 0.5 * dt * v_old[1] / ((r_e + pos.height) * pos.latitude.cos())
        + 0.5 * dt * v_new[1] / ((r_e + h_new) * lat_new.cos());

    Ok(GeodeticPosition {
        latitude: lat_new,
        longitude: geodesy::normalize_longitude(lon_new),
        height: h_new,
    })
}

/// Full mechanization step: attitude, then velocity with the specific force
/// resolved through the mid-interval attitude `(C- + C+) / 2`, then position.
pub fn mechanize(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    model: &EllipsoidModel,
) -> Result<NavState, MechanizationError> {
    let attitude_new = attitude_update(state, &imu.angular_rate, dt, model)?;
    let f_ned = 0.5 * (state.attitude.0 + attitude_new.0) * imu.specific_force;
    let v_new = velocity_update(state, &f_ned, dt, model)?;
    let pos_new = position_update(state, &v_new, dt, model)?;
    Ok(NavState {
        attitude: attitude_new,
        velocity_ned: v_new,
        position: pos_new,
        time: state.time + dt,
    })
}
