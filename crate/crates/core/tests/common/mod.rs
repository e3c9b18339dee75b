//! Shared oracles for the integration and acceptance suites.
#![allow(dead_code)] // each test target uses a different subset
//!
//! The centerpiece is a finite-difference probe of the mechanization over a
//! one-second window: it measures the sensitivity of the mechanized
//! trajectory to perturbations along every error-state direction and
//! compares it against the transition-matrix product `prod(I + F_k dt)`
//! that the filter itself uses for covariance propagation. Both sides
//! approach the continuous flow as dt shrinks, so a Richardson step over dt
//! removes the shared first-order discretization term and what remains is a
//! genuine disagreement in F. The probe only runs `mechanize`, never
//! `system_matrix`, which is what makes it an oracle.
//!
//! A one-step probe cannot do this job: over 0.01 s a perturbation moves
//! latitude by less than the f64 ulp of a mid-latitude value, so the
//! position rows drown in quantization. Over a full second everything
//! resolves by orders of magnitude.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::Rng;

use rover_nav::ekf::{self, ATT, BA, BG, POS, VEL, Matrix15, Vector15};
use rover_nav::geodesy::{self, Dcm, EllipsoidModel, GeodeticPosition, skew, unskew};
use rover_nav::mechanization::{ImuSample, NavState, mechanize};

/// Probe window length, seconds.
pub const WINDOW: f64 = 1.0;
/// Base step; the oracle also runs at half this and extrapolates.
pub const BASE_DT: f64 = 0.005;

/// Per-component probe sizes. Generous magnitudes keep the probe signals
/// far above the rounding noise the window accumulates; the fourth-order
/// stencil keeps the linearization error negligible anyway.
pub const PROBE_EPS: [f64; 15] = [
    3e-4, 3e-4, 3e-4, // attitude, rad
    1e-2, 1e-2, 1e-2, // velocity, m/s
    1e-2, 1e-2, 1e3, // latitude/longitude (rad), height (m)
    1e-2, 1e-2, 1e-2, // accel bias, m/s^2
    1e-3, 1e-3, 1e-3, // gyro bias, rad/s
];

/// Applies a signed error-state perturbation to a navigation state
/// (attitude per the filter's "estimate = (I + skew) truth" convention).
pub fn perturb_state(state: &NavState, delta: &Vector15) -> NavState {
    let d_att: Vector3<f64> = delta.fixed_rows::<3>(ATT).into();
    let d_vel: Vector3<f64> = delta.fixed_rows::<3>(VEL).into();
    let d_pos: Vector3<f64> = delta.fixed_rows::<3>(POS).into();
    NavState {
        attitude: Dcm((Matrix3::identity() + skew(&d_att)) * state.attitude.0).renormalized(),
        velocity_ned: state.velocity_ned + d_vel,
        position: GeodeticPosition {
            latitude: state.position.latitude + d_pos[0],
            longitude: state.position.longitude + d_pos[1],
            height: state.position.height + d_pos[2],
        },
        time: state.time,
    }
}

/// Error coordinates of `state` relative to `reference` (same convention).
pub fn state_error(reference: &NavState, state: &NavState) -> Vector15 {
    let mut err = Vector15::zeros();
    let m = state.attitude.0 * reference.attitude.0.transpose();
    let anti = (m - m.transpose()) * 0.5;
    err.fixed_rows_mut::<3>(ATT).copy_from(&unskew(&anti));
    err.fixed_rows_mut::<3>(VEL)
        .copy_from(&(state.velocity_ned - reference.velocity_ned));
    err[POS] = state.position.latitude - reference.position.latitude;
    err[POS + 1] = state.position.longitude - reference.position.longitude;
    err[POS + 2] = state.position.height - reference.position.height;
    err
}

fn mechanize_window(
    start: &NavState,
    imu: &ImuSample,
    bias_delta: &Vector15,
    model: &EllipsoidModel,
    dt: f64,
) -> NavState {
    let steps = (WINDOW / dt).round() as usize;
    let sample = ImuSample {
        time: 0.0,
        angular_rate: imu.angular_rate + Vector3::from(bias_delta.fixed_rows::<3>(BG)),
        specific_force: imu.specific_force + Vector3::from(bias_delta.fixed_rows::<3>(BA)),
    };
    let mut state = *start;
    for _ in 0..steps {
        state = mechanize(&state, &sample, dt, model).expect("probe stays in domain");
    }
    state
}

/// Measured window transition: column `col` of the sensitivity of the final
/// state error to an initial error (or constant sensor bias), via a
/// fourth-order central stencil.
fn fd_transition_column(
    state: &NavState,
    imu: &ImuSample,
    model: &EllipsoidModel,
    col: usize,
    dt: f64,
    nominal_end: &NavState,
) -> Vector15 {
    let eps = PROBE_EPS[col];
    let probe = |scale: f64| -> Vector15 {
        let mut delta = Vector15::zeros();
        delta[col] = scale * eps;
        let end = if col < BA {
            mechanize_window(&perturb_state(state, &delta), imu, &Vector15::zeros(), model, dt)
        } else {
            mechanize_window(state, imu, &delta, model, dt)
        };
        state_error(nominal_end, &end)
    };
    (-probe(2.0) + probe(1.0) * 8.0 - probe(-1.0) * 8.0 + probe(-2.0)) / (12.0 * eps)
}

/// Analytic window transition: the product of the filter's one-step
/// transitions `I + F_k dt` along the nominal trajectory, with the bias
/// columns held constant (no Gauss-Markov decay, matching the probe).
fn analytic_transition(
    state: &NavState,
    imu: &ImuSample,
    model: &EllipsoidModel,
    dt: f64,
) -> Matrix15 {
    let steps = (WINDOW / dt).round() as usize;
    let mut nav = *state;
    let mut phi = Matrix15::identity();
    for _ in 0..steps {
        let att_new = rover_nav::mechanization::attitude_update(&nav, &imu.angular_rate, dt, model)
            .expect("attitude step");
        let f_ned = 0.5 * (nav.attitude.0 + att_new.0) * imu.specific_force;
        let f = ekf::system_matrix(&nav, &f_ned, model, 0.0);
        phi = ekf::state_transition(&f, dt) * phi;
        nav = mechanize(&nav, imu, dt, model).expect("nominal step");
    }
    phi
}

/// Finite-difference vs analytic window transition, Richardson-extrapolated
/// over dt on both sides. Returns `(Phi_fd, Phi_analytic)`.
pub fn window_transitions(
    state: &NavState,
    imu: &ImuSample,
    model: &EllipsoidModel,
) -> (Matrix15, Matrix15) {
    window_transitions_at(state, imu, model, BASE_DT)
}

/// [`window_transitions`] with an explicit base step.
pub fn window_transitions_at(
    state: &NavState,
    imu: &ImuSample,
    model: &EllipsoidModel,
    base_dt: f64,
) -> (Matrix15, Matrix15) {
    let coarse_end = mechanize_window(state, imu, &Vector15::zeros(), model, base_dt);
    let fine_end = mechanize_window(state, imu, &Vector15::zeros(), model, base_dt / 2.0);
    let mut fd = Matrix15::identity();
    for col in 0..15 {
        let coarse = fd_transition_column(state, imu, model, col, base_dt, &coarse_end);
        let fine = fd_transition_column(state, imu, model, col, base_dt / 2.0, &fine_end);
        fd.set_column(col, &(fine * 2.0 - coarse));
    }
    let coarse = analytic_transition(state, imu, model, base_dt);
    let fine = analytic_transition(state, imu, model, base_dt / 2.0);
    (fd, fine * 2.0 - coarse)
}

/// Scale factors taking error components to comparable (meters-based) units.
pub fn error_weights(state: &NavState, model: &EllipsoidModel) -> Vector15 {
    let (r_n, r_e) = geodesy::radii_of_curvature(state.position.latitude, model);
    let mut w = Vector15::from_element(1.0);
    w[POS] = r_n + state.position.height;
    w[POS + 1] = (r_e + state.position.height) * state.position.latitude.cos();
    w
}

/// Outcome of one block comparison.
#[derive(Debug, Clone, Copy)]
pub struct BlockCheck {
    pub row: usize,
    pub col: usize,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    pub relative_error: f64,
    pub below_floor: bool,
}

/// Norm floor (normalized units) under which a transition block is treated
/// as zero and only sanity-bounded.
pub const BLOCK_FLOOR: f64 = 1e-7;
/// Absolute bound on below-floor blocks.
pub const DUST_BOUND: f64 = 1e-6;

/// Compares the navigation rows of the two window transitions block by
/// block in normalized units; the identity is removed so the comparison
/// exercises the dynamics rather than the trivial diagonal.
pub fn compare_transition_blocks(
    analytic: &Matrix15,
    fd: &Matrix15,
    weights: &Vector15,
) -> Vec<BlockCheck> {
    let normalize = |m: &Matrix15| -> Matrix15 {
        let mut out = m - Matrix15::identity();
        for i in 0..15 {
            for j in 0..15 {
                out[(i, j)] *= weights[i] / weights[j];
            }
        }
        out
    };
    let an = normalize(analytic);
    let fdn = normalize(fd);
    let mut checks = Vec::new();
    for block_row in 0..3 {
        for block_col in 0..5 {
            let a: SMatrix<f64, 3, 3> = an
                .fixed_view::<3, 3>(block_row * 3, block_col * 3)
                .into_owned();
            let b: SMatrix<f64, 3, 3> = fdn
                .fixed_view::<3, 3>(block_row * 3, block_col * 3)
                .into_owned();
            let scale = a.norm().max(b.norm());
            let below_floor = scale < BLOCK_FLOOR;
            let relative_error = if below_floor {
                b.norm()
            } else {
                (a - b).norm() / scale
            };
            checks.push(BlockCheck {
                row: block_row,
                col: block_col,
                analytic_norm: a.norm(),
                fd_norm: b.norm(),
                relative_error,
                below_floor,
            });
        }
    }
    checks
}

/// Draws a random but physically sensible rover state and IMU sample.
pub fn random_state_and_imu<R: Rng>(rng: &mut R, model: &EllipsoidModel) -> (NavState, ImuSample) {
    let lat = rng.random_range(-1.2..1.2);
    let state = NavState {
        attitude: geodesy::euler_to_dcm(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-3.1..3.1),
        ),
        velocity_ned: Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.5..0.5),
        ),
        position: GeodeticPosition::new(
            lat,
            rng.random_range(-3.1..3.1),
            rng.random_range(-100.0..1000.0),
        )
        .unwrap(),
        time: 0.0,
    };
    let gravity = geodesy::gravity_ned(&state.position, model);
    let imu = ImuSample {
        time: 0.0,
        angular_rate: Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.5..0.5),
        ),
        specific_force: state.attitude.transpose() * -gravity
            + Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
    };
    (state, imu)
}

/// Full Jacobian check for one state; returns the worst relative block
/// error and the worst sub-floor dust.
pub fn jacobian_check(state: &NavState, imu: &ImuSample, model: &EllipsoidModel) -> (f64, f64) {
    let (fd, analytic) = window_transitions(state, imu, model);
    let weights = error_weights(state, model);
    let checks = compare_transition_blocks(&analytic, &fd, &weights);
    let worst_rel = checks
        .iter()
        .filter(|c| !c.below_floor)
        .map(|c| c.relative_error)
        .fold(0.0, f64::max);
    let worst_dust = checks
        .iter()
        .filter(|c| c.below_floor)
        .map(|c| c.relative_error)
        .fold(0.0, f64::max);
    (worst_rel, worst_dust)
}
