//! Reference-ellipsoid geometry, gravity, and frame utilities.
//!
//! Everything here is a pure function of its arguments: radii of curvature,
//! normal gravity, Earth-rate and transport-rate vectors resolved in the
//! local NED frame, and conversions between Euler angles and direction
//! cosine matrices. The planet is configurable so that degenerate models
//! (sphere, non-rotating, near-flat) can serve as analytic oracles in tests;
//! the default is WGS-84 Earth.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// WGS-84 semi-major axis, meters.
pub const WGS84_SEMI_MAJOR_AXIS: f64 = 6_378_137.0;
/// WGS-84 first eccentricity squared.
pub const WGS84_ECCENTRICITY_SQ: f64 = 0.00669437999014;
/// Earth rotation rate, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292115e-5;
/// WGS-84 normal gravity at the equator, m/s^2.
pub const WGS84_EQUATORIAL_GRAVITY: f64 = 9.7803253359;
/// WGS-84 Somigliana constant (dimensionless).
pub const WGS84_SOMIGLIANA_K: f64 = 0.00193185265241;
/// Free-air gravity gradient near the Earth's surface, (m/s^2)/m.
pub const FREE_AIR_GRADIENT: f64 = 3.086e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeodesyError {
    /// Pitch is too close to +-90 deg to recover roll and yaw from a DCM.
    #[error("gimbal lock: |C31| = {0} leaves roll/yaw underdetermined")]
    GimbalLock(f64),
    /// Positions handed to `ned_delta` are too far apart for the small-angle
    /// flat-earth expansion.
    #[error("positions separated by more than 1 degree ({0} rad)")]
    RangeExceeded(f64),
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    InvalidLatitude(f64),
}

/// How normal gravity varies with height above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeightCorrection {
    /// g(h) = g0 - gradient * h. Standard for terrestrial navigation.
    LinearFreeAir { gradient: f64 },
    /// g(h) = g0 * (R / (R + h))^2 with R the semi-major axis. Exact for a
    /// spherically symmetric planet.
    InverseSquare,
}

/// Somigliana-style normal gravity description.
///
/// g0(L) = equatorial * (1 + k sin^2 L) / sqrt(1 - e^2 sin^2 L), followed by
/// the configured height correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityParams {
    pub equatorial: f64,
    pub somigliana_k: f64,
    pub height: HeightCorrection,
}

/// Planetary reference ellipsoid plus rotation and gravity parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidModel {
    /// Semi-major axis `a`, meters.
    pub semi_major_axis: f64,
    /// First eccentricity squared `e^2`.
    pub eccentricity_sq: f64,
    /// Planet rotation rate, rad/s.
    pub rotation_rate: f64,
    pub gravity: GravityParams,
}

impl EllipsoidModel {
    /// WGS-84 Earth with Somigliana normal gravity and linear free-air
    /// correction.
    pub fn wgs84() -> Self {
        EllipsoidModel {
            semi_major_axis: WGS84_SEMI_MAJOR_AXIS,
            eccentricity_sq: WGS84_ECCENTRICITY_SQ,
            rotation_rate: EARTH_ROTATION_RATE,
            gravity: GravityParams {
                equatorial: WGS84_EQUATORIAL_GRAVITY,
                somigliana_k: WGS84_SOMIGLIANA_K,
                height: HeightCorrection::LinearFreeAir {
                    gradient: FREE_AIR_GRADIENT,
                },
            },
        }
    }

    /// Mars (IAU 2015 ellipsoid, sidereal rotation, inverse-square gravity).
    pub fn mars() -> Self {
        EllipsoidModel {
            semi_major_axis: 3_396_190.0,
            eccentricity_sq: 0.011_764_5,
            rotation_rate: 7.088218e-5,
            gravity: GravityParams {
                equatorial: 3.727,
                somigliana_k: 0.0,
                height: HeightCorrection::InverseSquare,
            },
        }
    }

    /// Rotating sphere with constant surface gravity `g0` and inverse-square
    /// height dependence.
    pub fn spherical(radius: f64, g0: f64, rotation_rate: f64) -> Self {
        EllipsoidModel {
            semi_major_axis: radius,
            eccentricity_sq: 0.0,
            rotation_rate,
            gravity: GravityParams {
                equatorial: g0,
                somigliana_k: 0.0,
                height: HeightCorrection::InverseSquare,
            },
        }
    }

    /// Non-rotating sphere; useful as an oracle where Coriolis and Earth-rate
    /// terms must vanish.
    pub fn non_rotating(radius: f64, g0: f64) -> Self {
        Self::spherical(radius, g0, 0.0)
    }

    /// Non-rotating sphere so large that curvature and transport-rate terms
    /// are negligible; pure-kinematics oracle.
    pub fn flat(g0: f64) -> Self {
        Self::spherical(1.0e12, g0, 0.0)
    }
}

/// Geodetic position: latitude/longitude in radians, height in meters above
/// the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticPosition {
    /// Builds a position, normalizing longitude into (-pi, pi].
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self, GeodesyError> {
        if !latitude.is_finite() || latitude.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(GeodesyError::InvalidLatitude(latitude));
        }
        Ok(GeodeticPosition {
            latitude,
            longitude: normalize_longitude(longitude),
            height,
        })
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_longitude(lon: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut wrapped = lon.rem_euclid(two_pi);
    if wrapped > std::f64::consts::PI {
        wrapped -= two_pi;
    }
    wrapped
}

/// Smallest signed difference `a - b` of two angles, in (-pi, pi].
pub fn angle_difference(a: f64, b: f64) -> f64 {
    normalize_longitude(a - b)
}

/// Direction cosine matrix (body -> NED unless stated otherwise).
///
/// The wrapper exists to carry the orthonormality contract: after every
/// [`Dcm::renormalized`] call, `||C^T C - I||_F < 1e-9` and `det C ~ +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(pub Matrix3<f64>);

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Matrix3::identity())
    }

    /// Frobenius norm of `C^T C - I`; zero for a perfectly orthonormal matrix.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Symmetric orthonormalization `C <- C (3I - C^T C) / 2`, applied a
    /// fixed two times. Each pass squares the orthonormality error, so the
    /// worst first-order attitude step (error ~1e-3) lands below 1e-11.
    /// The iteration count is fixed rather than adaptive to keep the map
    /// smooth; an early-exit tolerance makes the result a discontinuous
    /// function of its input, which poisons finite-difference consumers.
    pub fn renormalized(&self) -> Dcm {
        let mut c = self.0;
        for _ in 0..2 {
            c = c * (Matrix3::identity() * 3.0 - c.transpose() * c) * 0.5;
        }
        Dcm(c)
    }

    /// NED -> body rotation (the transpose).
    pub fn transpose(&self) -> Matrix3<f64> {
        self.0.transpose()
    }
}

/// Skew-symmetric (cross-product) matrix of a 3-vector: `skew(v) * w = v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v[2], v[1], //
        v[2], 0.0, -v[0], //
        -v[1], v[0], 0.0,
    )
}

/// Inverse of [`skew`] for an exactly antisymmetric matrix.
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Meridian and transverse radii of curvature at a latitude.
///
/// R_N = a (1 - e^2) / (1 - e^2 sin^2 L)^(3/2) governs north-south motion;
/// R_E = a / (1 - e^2 sin^2 L)^(1/2) governs east-west motion.
pub fn radii_of_curvature(lat: f64, model: &EllipsoidModel) -> (f64, f64) {
    let e2 = model.eccentricity_sq;
    let sin_lat_sq = lat.sin() * lat.sin();
    let denom = 1.0 - e2 * sin_lat_sq;
    let r_n = model.semi_major_axis * (1.0 - e2) / denom.powf(1.5);
    let r_e = model.semi_major_axis / denom.sqrt();
    (r_n, r_e)
}

/// Normal-gravity magnitude at a latitude/height (positive down).
pub fn gravity_magnitude(lat: f64, height: f64, model: &EllipsoidModel) -> f64 {
    let g = &model.gravity;
    let sin_lat_sq = lat.sin() * lat.sin();
    let g0 = g.equatorial * (1.0 + g.somigliana_k * sin_lat_sq)
        / (1.0 - model.eccentricity_sq * sin_lat_sq).sqrt();
    match g.height {
        HeightCorrection::LinearFreeAir { gradient } => g0 - gradient * height,
        HeightCorrection::InverseSquare => {
            let r = model.semi_major_axis;
            g0 * (r / (r + height)).powi(2)
        }
    }
}

/// Gravity vector resolved in NED. North and east components are zero by
/// model choice (no deflection of the vertical).
pub fn gravity_ned(pos: &GeodeticPosition, model: &EllipsoidModel) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, gravity_magnitude(pos.latitude, pos.height, model))
}

/// Planet rotation vector resolved in NED: `omega_ie * [cos L, 0, -sin L]`.
pub fn earth_rate_ned(lat: f64, model: &EllipsoidModel) -> Vector3<f64> {
    Vector3::new(
        model.rotation_rate * lat.cos(),
        0.0,
        -model.rotation_rate * lat.sin(),
    )
}

/// Transport rate: rotation of the local-level frame relative to the planet
/// caused by vehicle motion over the curved surface.
pub fn transport_rate(
    pos: &GeodeticPosition,
    v_ned: &Vector3<f64>,
    model: &EllipsoidModel,
) -> Vector3<f64> {
    let (r_n, r_e) = radii_of_curvature(pos.latitude, model);
    Vector3::new(
        v_ned[1] / (r_e + pos.height),
        -v_ned[0] / (r_n + pos.height),
        -v_ned[1] * pos.latitude.tan() / (r_e + pos.height),
    )
}

/// Body -> NED DCM from ZYX (yaw-pitch-roll) Euler angles.
pub fn euler_to_dcm(roll: f64, pitch: f64, yaw: f64) -> Dcm {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Dcm(Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ))
}

/// (roll, pitch, yaw) from a body -> NED DCM; errors near pitch = +-90 deg.
pub fn dcm_to_euler(c: &Dcm) -> Result<(f64, f64, f64), GeodesyError> {
    let c31 = c.0[(2, 0)];
    if c31.abs() >= 1.0 - 1e-9 {
        return Err(GeodesyError::GimbalLock(c31));
    }
    let pitch = (-c31).asin();
    let roll = c.0[(2, 1)].atan2(c.0[(2, 2)]);
    let yaw = c.0[(1, 0)].atan2(c.0[(0, 0)]);
    Ok((roll, pitch, yaw))
}

/// North/east/up displacement in meters of `other` relative to `reference`,
/// using the small-angle expansion with radii evaluated at the reference.
///
/// Valid only for separations below one degree; beyond that the expansion is
/// refused rather than silently degraded.
pub fn ned_delta(
    reference: &GeodeticPosition,
    other: &GeodeticPosition,
    model: &EllipsoidModel,
) -> Result<Vector3<f64>, GeodesyError> {
    let dlat = other.latitude - reference.latitude;
    let dlon = angle_difference(other.longitude, reference.longitude);
    let one_degree = 1.0_f64.to_radians();
    if dlat.abs() > one_degree || dlon.abs() > one_degree {
        return Err(GeodesyError::RangeExceeded(dlat.abs().max(dlon.abs())));
    }
    let (r_n, r_e) = radii_of_curvature(reference.latitude, model);
    Ok(Vector3::new(
        dlat * (r_n + reference.height),
        dlon * (r_e + reference.height) * reference.latitude.cos(),
        other.height - reference.height,
    ))
}
