//! Synthetic ground truth and sensor synthesis.
//!
//! The generator integrates the *same* mechanization equations the filter
//! uses, driven by smooth speed/turn-rate command profiles, and records the
//! body rates and specific forces it fed in. Mechanizing the noise-free
//! synthesized IMU therefore reproduces the truth trajectory to machine
//! precision, which is the round-trip oracle the whole test suite leans on.
//!
//! Wheel encoders are synthesized from the true wheel-point velocities with
//! configurable slip injection and pulse quantization; IMU noise follows the
//! usual ARW/VRW plus Gauss-Markov bias model, with extra accelerometer
//! vibration while the rover is moving. Everything is deterministic per
//! seed.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::aiding::{OdomSample, RoverGeometry};
use crate::ekf::ImuNoiseSpec;
use crate::geodesy::{self, EllipsoidModel, GeodeticPosition, angle_difference};
use crate::mechanization::{self, ImuSample, NavState};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("arc radius {0} m smaller than half the track width")]
    InfeasiblePath(f64),
}

/// A slip event pinned to along-path distance, so that it always lands while
/// the rover is actually driving regardless of the stop schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipEvent {
    /// Along-path start, m.
    pub start_m: f64,
    /// Along-path length, m.
    pub length_m: f64,
    /// Commanded slip ratio for the left wheel.
    pub left_ratio: f64,
    /// Commanded slip ratio for the right wheel.
    pub right_ratio: f64,
}

/// One path element. Turns are in-place (skid-steer) unless `turn_radius`
/// is set on the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Leg {
    /// Drive straight for a distance, m.
    Straight(f64),
    /// Change heading by an angle, rad (positive clockwise seen from above,
    /// NED yaw convention).
    Turn(f64),
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub legs: Vec<Leg>,
    /// Cruise speed, m/s.
    pub commanded_speed: f64,
    /// Peak turn rate for in-place turns, rad/s.
    pub turn_rate: f64,
    /// Arc radius for turns, m; 0 means turn in place.
    pub turn_radius: f64,
    /// Average driving time between stops, s; stops are scheduled every
    /// `commanded_speed * adts` meters of straight driving.
    pub adts: f64,
    /// How long each navigation stop lasts, s.
    pub stop_duration: f64,
    /// Terrain roughness scale; 0 = flat and vibration-free.
    pub roughness: f64,
    pub slip_events: Vec<SlipEvent>,
    /// IMU sample rate, Hz.
    pub imu_rate: f64,
    /// Odometry sample rate, Hz.
    pub odom_rate: f64,
    pub start: GeodeticPosition,
    pub start_yaw: f64,
    /// IMU stochastic grade used when synthesizing sensors for this
    /// scenario.
    pub imu_spec: ImuNoiseSpec,
    /// Per-side slip ratios (left, right) applied while turning in place;
    /// skid-steer wheels scrub hard against the ground during point turns.
    pub turn_scrub: (f64, f64),
    /// Seed for terrain phases (sensor synthesis uses its own seeds).
    pub seed: u64,
}

impl Scenario {
    fn base(name: &str) -> Scenario {
        Scenario {
            name: name.to_string(),
            legs: Vec::new(),
            commanded_speed: 0.4,
            turn_rate: 0.5,
            turn_radius: 0.0,
            adts: 12.0,
            stop_duration: 5.0,
            roughness: 0.0,
            slip_events: Vec::new(),
            imu_rate: 100.0,
            odom_rate: 10.0,
            start: GeodeticPosition::new(39.65_f64.to_radians(), -79.9_f64.to_radians(), 300.0)
                .unwrap(),
            start_yaw: 0.0,
            imu_spec: ImuNoiseSpec::tactical_grade(),
            turn_scrub: (0.0, 0.0),
            seed: 1,
        }
    }

    /// Stationary rover; only the initial/final stops are emitted.
    pub fn static_test(duration: f64) -> Scenario {
        let mut s = Scenario::base("static");
        s.stop_duration = duration / 2.0;
        s
    }

    /// Single straight leg with scheduled stops.
    pub fn straight(length: f64, speed: f64, adts: f64) -> Scenario {
        let mut s = Scenario::base("straight");
        s.legs = vec![Leg::Straight(length)];
        s.commanded_speed = speed;
        s.adts = adts;
        s
    }

    /// Flat L-shaped path: 20 m, 90 deg turn, 14 m at 0.4 m/s, 12 s ADTS.
    ///
    /// The drive protocol deliberately provokes slip around every stop:
    /// full-throttle spin-up right after pulling away and a braking skid on
    /// the approach, mirroring how such runs are driven in the field.
    pub fn concrete_turn() -> Scenario {
        let mut s = Scenario::base("concrete-turn");
        s.legs = vec![
            Leg::Straight(20.0),
            Leg::Turn(std::f64::consts::FRAC_PI_2),
            Leg::Straight(14.0),
        ];
        s.roughness = 0.2;
        s.imu_spec = ImuNoiseSpec::consumer_grade();
        s.turn_scrub = (0.25, 0.22);
        // stop boundaries for 0.4 m/s at 12 s ADTS over the 20 + 14 m legs;
        // pull-away spin torques the two sides unevenly, braking locks both
        let boundaries = [0.0, 4.8, 9.6, 14.4, 19.2, 24.0, 28.8, 34.0];
        for (k, s_b) in boundaries.iter().enumerate() {
            if k + 1 < boundaries.len() {
                s.slip_events.push(SlipEvent {
                    start_m: s_b + 0.05,
                    length_m: 0.5,
                    left_ratio: 0.08,
                    right_ratio: 0.06,
                });
            }
            if k > 0 {
                // braking drag is uneven across the drivetrain: the left
                // side drags while the right overruns, which reads as a
                // spurious heading rate with almost no net speed error
                s.slip_events.push(SlipEvent {
                    start_m: s_b - 1.05,
                    length_m: 1.0,
                    left_ratio: -0.07,
                    right_ratio: 0.06,
                });
            }
        }
        s
    }

    /// 151 m wandering path on rough ground, 9 s ADTS, five slip events.
    pub fn rough_terrain() -> Scenario {
        let mut s = Scenario::base("rough-terrain");
        s.legs = vec![
            Leg::Straight(25.0),
            Leg::Turn(1.0),
            Leg::Straight(30.0),
            Leg::Turn(-0.8),
            Leg::Straight(35.0),
            Leg::Turn(1.3),
            Leg::Straight(28.0),
            Leg::Turn(-1.9),
            Leg::Straight(33.0),
        ];
        s.adts = 9.0;
        s.roughness = 2.0;
        s.slip_events = vec![
            SlipEvent { start_m: 12.0, length_m: 2.5, left_ratio: 0.55, right_ratio: 0.5 },
            SlipEvent { start_m: 38.0, length_m: 2.0, left_ratio: 0.7, right_ratio: 0.7 },
            SlipEvent { start_m: 67.0, length_m: 3.0, left_ratio: 0.45, right_ratio: 0.4 },
            SlipEvent { start_m: 98.0, length_m: 2.0, left_ratio: 0.8, right_ratio: 0.75 },
            SlipEvent { start_m: 128.0, length_m: 2.5, left_ratio: 0.6, right_ratio: 0.6 },
        ];
        s
    }

    /// 87 m rectangle at 0.8 m/s, 15 s ADTS, grassy roughness.
    pub fn fast_rectangle() -> Scenario {
        let mut s = Scenario::base("fast-rectangle");
        let quarter = std::f64::consts::FRAC_PI_2;
        s.legs = vec![
            Leg::Straight(30.0),
            Leg::Turn(quarter),
            Leg::Straight(13.5),
            Leg::Turn(quarter),
            Leg::Straight(30.0),
            Leg::Turn(quarter),
            Leg::Straight(13.5),
        ];
        s.commanded_speed = 0.8;
        s.adts = 15.0;
        s.roughness = 1.0;
        s
    }

    /// 85 m rectangle at 0.2 m/s, 15 s ADTS.
    pub fn slow_rectangle() -> Scenario {
        let mut s = Scenario::base("slow-rectangle");
        let quarter = std::f64::consts::FRAC_PI_2;
        s.legs = vec![
            Leg::Straight(30.0),
            Leg::Turn(quarter),
            Leg::Straight(12.5),
            Leg::Turn(quarter),
            Leg::Straight(30.0),
            Leg::Turn(quarter),
            Leg::Straight(12.5),
        ];
        s.commanded_speed = 0.2;
        s.adts = 15.0;
        s.roughness = 1.0;
        s
    }

    /// Roughly one minute of curved driving at 0.4 m/s (no mid-path stops);
    /// exercises attitude, velocity, and position channels together.
    pub fn base_curved_60s() -> Scenario {
        let mut s = Scenario::base("curved-60s");
        s.legs = vec![
            Leg::Straight(9.0),
            Leg::Turn(std::f64::consts::FRAC_PI_2),
            Leg::Straight(9.0),
        ];
        s.adts = 1000.0;
        s
    }

    /// Looks a preset up by name.
    pub fn by_name(name: &str) -> Option<Scenario> {
        match name {
            "static" => Some(Scenario::static_test(60.0)),
            "straight" => Some(Scenario::straight(34.0, 0.4, 12.0)),
            "concrete-turn" => Some(Scenario::concrete_turn()),
            "rough-terrain" => Some(Scenario::rough_terrain()),
            "fast-rectangle" => Some(Scenario::fast_rectangle()),
            "slow-rectangle" => Some(Scenario::slow_rectangle()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "static",
            "straight",
            "concrete-turn",
            "rough-terrain",
            "fast-rectangle",
            "slow-rectangle",
        ]
    }
}

/// One epoch of ground truth, kinematically consistent with its neighbors
/// through the mechanization equations.
#[derive(Debug, Clone, Copy)]
pub struct TruthEpoch {
    pub time: f64,
    pub nav: NavState,
    /// Body angular rate the mechanization consumed over the step ending
    /// here, rad/s.
    pub body_rate: Vector3<f64>,
    /// Specific force over the same step, m/s^2.
    pub specific_force: Vector3<f64>,
    /// True wheel angular velocities (left, right), rad/s, slip included.
    pub wheel_rates: (f64, f64),
    /// Ground-truth slip ratio per wheel (left, right).
    pub true_slip: (f64, f64),
    /// 1-sigma of the extra accelerometer vibration at this epoch, m/s^2.
    pub vibration_std: f64,
    /// True when a navigation stop is commanded.
    pub stationary: bool,
}

// command profile expansion -------------------------------------------------

const ACCEL_LIMIT: f64 = 0.4; // m/s^2 mean over a ramp
const TURN_ACCEL_LIMIT: f64 = 0.5; // rad/s^2 mean over a ramp

#[derive(Debug, Clone, Copy)]
struct Command {
    speed: f64,
    yaw_rate: f64,
    stationary: bool,
}

/// Piecewise command profile; cosine ramps keep acceleration continuous so
/// the truth position is C^2 in time.
#[derive(Debug, Clone)]
enum Piece {
    Stop { duration: f64 },
    Drive { peak: f64, ramp: f64, cruise: f64 },
    Turn { peak_rate: f64, ramp: f64, cruise: f64 },
    Arc { speed: f64, yaw_rate: f64, duration: f64 },
}

impl Piece {
    fn duration(&self) -> f64 {
        match *self {
            Piece::Stop { duration } => duration,
            Piece::Drive { ramp, cruise, .. } | Piece::Turn { ramp, cruise, .. } => {
                2.0 * ramp + cruise
            }
            Piece::Arc { duration, .. } => duration,
        }
    }

    fn command_at(&self, tau: f64) -> Command {
        let ramped = |peak: f64, ramp: f64, cruise: f64, tau: f64| -> f64 {
            if tau < ramp {
                0.5 * peak * (1.0 - (std::f64::consts::PI * tau / ramp).cos())
            } else if tau < ramp + cruise {
                peak
            } else {
                let back = 2.0 * ramp + cruise - tau;
                0.5 * peak * (1.0 - (std::f64::consts::PI * back / ramp).cos())
            }
        };
        match *self {
            Piece::Stop { .. } => Command {
                speed: 0.0,
                yaw_rate: 0.0,
                stationary: true,
            },
            Piece::Drive { peak, ramp, cruise } => Command {
                speed: ramped(peak, ramp, cruise, tau).max(0.0),
                yaw_rate: 0.0,
                stationary: false,
            },
            Piece::Turn { peak_rate, ramp, cruise } => Command {
                speed: 0.0,
                yaw_rate: ramped(peak_rate.abs(), ramp, cruise, tau) * peak_rate.signum(),
                stationary: false,
            },
            Piece::Arc { speed, yaw_rate, .. } => Command {
                speed,
                yaw_rate,
                stationary: false,
            },
        }
    }
}

fn drive_piece(distance: f64, cruise_speed: f64) -> Piece {
    let mut peak = cruise_speed;
    let mut ramp = peak / ACCEL_LIMIT;
    // each cosine ramp covers peak * ramp / 2 meters
    if peak * ramp > distance {
        peak = (distance * ACCEL_LIMIT).sqrt();
        ramp = peak / ACCEL_LIMIT;
    }
    let cruise = (distance - peak * ramp) / peak;
    Piece::Drive { peak, ramp, cruise }
}

fn turn_piece(angle: f64, cruise_rate: f64) -> Piece {
    let magnitude = angle.abs();
    let mut peak = cruise_rate;
    let mut ramp = peak / TURN_ACCEL_LIMIT;
    if peak * ramp > magnitude {
        peak = (magnitude * TURN_ACCEL_LIMIT).sqrt();
        ramp = peak / TURN_ACCEL_LIMIT;
    }
    let cruise = (magnitude - peak * ramp) / peak;
    Piece::Turn {
        peak_rate: peak * angle.signum(),
        ramp,
        cruise,
    }
}

/// Expands the scenario into command pieces, splitting straight legs at the
/// stop schedule (one stop per `speed * adts` meters of straight driving).
fn plan_pieces(scn: &Scenario, geom_track: f64) -> Result<Vec<Piece>, SimError> {
    let mut pieces = vec![Piece::Stop {
        duration: scn.stop_duration,
    }];
    let stop_spacing = scn.commanded_speed * scn.adts;
    // a scheduled stop this close to the end of the path merges into the
    // terminal stop instead of firing separately
    let merge_margin = 0.25 * stop_spacing;
    let last_straight = scn
        .legs
        .iter()
        .rposition(|l| matches!(l, Leg::Straight(_)));
    let mut since_stop = 0.0;
    for (idx, leg) in scn.legs.iter().enumerate() {
        match *leg {
            Leg::Straight(mut remaining) => {
                while remaining > 0.0 {
                    let until_stop = stop_spacing - since_stop;
                    let leftover = remaining - until_stop;
                    let merge =
                        Some(idx) == last_straight && leftover < merge_margin;
                    if until_stop <= remaining && !merge {
                        pieces.push(drive_piece(until_stop, scn.commanded_speed));
                        pieces.push(Piece::Stop {
                            duration: scn.stop_duration,
                        });
                        remaining -= until_stop;
                        since_stop = 0.0;
                    } else {
                        pieces.push(drive_piece(remaining, scn.commanded_speed));
                        since_stop += remaining;
                        remaining = 0.0;
                    }
                }
            }
            Leg::Turn(angle) => {
                if scn.turn_radius > 0.0 {
                    if scn.turn_radius < geom_track / 2.0 {
                        return Err(SimError::InfeasiblePath(scn.turn_radius));
                    }
                    let yaw_rate = scn.commanded_speed / scn.turn_radius * angle.signum();
                    pieces.push(Piece::Arc {
                        speed: scn.commanded_speed,
                        yaw_rate,
                        duration: (angle / yaw_rate).abs(),
                    });
                } else {
                    pieces.push(turn_piece(angle, scn.turn_rate));
                }
            }
        }
    }
    pieces.push(Piece::Stop {
        duration: scn.stop_duration,
    });
    Ok(pieces)
}

// terrain --------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Terrain {
    /// (amplitude rad, wavelength m, phase rad) triples for pitch and roll.
    pitch: [(f64, f64, f64); 3],
    roll: [(f64, f64, f64); 3],
}

impl Terrain {
    fn from_seed(roughness: f64, seed: u64) -> Terrain {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let uniform = rand_distr::Uniform::new(0.0, 2.0 * std::f64::consts::PI).unwrap();
        let mut phases = || uniform.sample(&mut rng);
        let amp = 0.016 * roughness;
        Terrain {
            pitch: [
                (amp, 9.7, phases()),
                (0.6 * amp, 3.9, phases()),
                (0.3 * amp, 1.7, phases()),
            ],
            roll: [
                (0.8 * amp, 7.3, phases()),
                (0.5 * amp, 3.1, phases()),
                (0.25 * amp, 1.3, phases()),
            ],
        }
    }

    fn angle(waves: &[(f64, f64, f64); 3], s: f64) -> f64 {
        waves
            .iter()
            .map(|(a, l, p)| a * (2.0 * std::f64::consts::PI * s / l + p).sin())
            .sum()
    }

    fn slope(waves: &[(f64, f64, f64); 3], s: f64) -> f64 {
        waves
            .iter()
            .map(|(a, l, p)| {
                let k = 2.0 * std::f64::consts::PI / l;
                a * k * (k * s + p).cos()
            })
            .sum()
    }

    fn pitch_at(&self, s: f64) -> (f64, f64) {
        (Self::angle(&self.pitch, s), Self::slope(&self.pitch, s))
    }

    fn roll_at(&self, s: f64) -> (f64, f64) {
        (Self::angle(&self.roll, s), Self::slope(&self.roll, s))
    }
}

// truth generation ------------------------------------------------------------

/// Base 1-sigma accelerometer vibration at roughness 1 while moving, m/s^2.
pub const VIBRATION_BASE: f64 = 0.05;
/// Stationary vibration is this fraction of the moving level.
pub const VIBRATION_STATIONARY_FACTOR: f64 = 0.1;

/// Euler-rate to body-rate mapping for ZYX angles.
fn euler_rates_to_body(roll: f64, pitch: f64, rates: &Vector3<f64>) -> Vector3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let e = Matrix3::new(
        1.0, 0.0, -sp, //
        0.0, cr, sr * cp, //
        0.0, -sr, cr * cp,
    );
    e * rates
}

/// Generates the ground-truth epoch stream for a scenario at the given IMU
/// rate by integrating the mechanization under the command profile.
///
/// The model is WGS-84 Earth; `rate` should lie in [50, 500] Hz.
pub fn generate_truth(scn: &Scenario, rate: f64) -> Result<Vec<TruthEpoch>, SimError> {
    generate_truth_on(scn, rate, &EllipsoidModel::wgs84(), &RoverGeometry::skid_steer_default())
}

/// [`generate_truth`] with an explicit planet model and rover geometry.
pub fn generate_truth_on(
    scn: &Scenario,
    rate: f64,
    model: &EllipsoidModel,
    geom: &RoverGeometry,
) -> Result<Vec<TruthEpoch>, SimError> {
    debug_assert!((50.0..=500.0).contains(&rate), "IMU rate out of range");
    let dt = 1.0 / rate;
    let pieces = plan_pieces(scn, geom.track_width)?;
    let terrain = Terrain::from_seed(scn.roughness, scn.seed);

    // tracking gain pulling the integrated attitude toward the commanded one
    let k_p = 0.5;

    let mut s_along = 0.0f64;
    let (pitch0, _) = terrain.pitch_at(0.0);
    let (roll0, _) = terrain.roll_at(0.0);
    let mut yaw_cmd = scn.start_yaw;
    let mut state = NavState {
        attitude: geodesy::euler_to_dcm(roll0, pitch0, scn.start_yaw),
        velocity_ned: Vector3::zeros(),
        position: scn.start,
        time: 0.0,
    };

    let total: f64 = pieces.iter().map(|p| p.duration()).sum();
    let steps = (total / dt).ceil() as usize;
    let mut epochs = Vec::with_capacity(steps + 1);

    let initial_vibration = vibration_std(scn.roughness, true);
    epochs.push(TruthEpoch {
        time: 0.0,
        nav: state,
        body_rate: state.attitude.transpose() * geodesy::earth_rate_ned(scn.start.latitude, model),
        specific_force: state.attitude.transpose() * -geodesy::gravity_ned(&scn.start, model),
        wheel_rates: (0.0, 0.0),
        true_slip: (0.0, 0.0),
        vibration_std: initial_vibration,
        stationary: true,
    });

    let mut piece_iter = pieces.iter();
    let mut piece = piece_iter.next().unwrap();
    let mut piece_start = 0.0f64;

    for k in 0..steps {
        let t = k as f64 * dt;
        let t_next = t + dt;
        // advance to the active piece (pieces never shorter than one step)
        while t_next - piece_start > piece.duration() {
            if let Some(next) = piece_iter.next() {
                piece_start += piece.duration();
                piece = next;
            } else {
                break;
            }
        }
        let cmd = piece.command_at(t_next - piece_start);

        // commanded attitude from terrain and integrated heading
        yaw_cmd = geodesy::normalize_longitude(yaw_cmd + cmd.yaw_rate * dt);
        let (pitch_c, dpitch_ds) = terrain.pitch_at(s_along);
        let (roll_c, droll_ds) = terrain.roll_at(s_along);

        let (roll, pitch, yaw) = geodesy::dcm_to_euler(&state.attitude)
            .expect("rover attitude stays far from gimbal lock");
        let euler_rates = Vector3::new(
            droll_ds * cmd.speed + k_p * angle_difference(roll_c, roll),
            dpitch_ds * cmd.speed + k_p * angle_difference(pitch_c, pitch),
            cmd.yaw_rate + k_p * angle_difference(yaw_cmd, yaw),
        );
        let w_nb = euler_rates_to_body(roll, pitch, &euler_rates);
        let w_in_n = geodesy::earth_rate_ned(state.position.latitude, model)
            + geodesy::transport_rate(&state.position, &state.velocity_ned, model);
        let body_rate = w_nb + state.attitude.transpose() * w_in_n;

        // attitude the mechanization will produce, then the specific force
        // that makes the velocity land exactly on the commanded vector
        let att_new = mechanization::attitude_update(&state, &body_rate, dt, model)
            .expect("sim dt within mechanization bounds");
        let v_des = att_new.0.column(0) * cmd.speed;
        let gravity = geodesy::gravity_ned(&state.position, model);
        let w_en = geodesy::transport_rate(&state.position, &state.velocity_ned, model);
        let w_ie = geodesy::earth_rate_ned(state.position.latitude, model);
        let coriolis =
            (geodesy::skew(&w_en) + geodesy::skew(&w_ie) * 2.0) * state.velocity_ned;
        let f_ned = (v_des - state.velocity_ned) / dt - gravity + coriolis;
        let mid = (state.attitude.0 + att_new.0) * 0.5;
        let specific_force = mid
            .try_inverse()
            .expect("mid-interval attitude invertible")
            * f_ned;

        let imu = ImuSample {
            time: t_next,
            angular_rate: body_rate,
            specific_force,
        };
        let new_state = mechanization::mechanize(&state, &imu, dt, model)
            .expect("sim trajectory stays in mechanization domain");

        // wheel-point kinematics with slip injection by along-path distance
        let w_eb_b = body_rate - new_state.attitude.transpose() * w_in_n;
        let axle = new_state.attitude.transpose() * new_state.velocity_ned
            + w_eb_b.cross(&geom.lever_arm_body_to_rear);
        let half_track = 0.5 * geom.track_width;
        let ground_left = axle[0] + w_eb_b[2] * half_track;
        let ground_right = axle[0] - w_eb_b[2] * half_track;
        let turning_in_place = cmd.speed == 0.0 && cmd.yaw_rate != 0.0;
        let slip = if turning_in_place {
            scn.turn_scrub
        } else {
            active_slip(&scn.slip_events, s_along)
        };
        let wheel_left = ground_left / (1.0 - slip.0);
        let wheel_right = ground_right / (1.0 - slip.1);

        s_along += cmd.speed * dt;
        state = new_state;
        epochs.push(TruthEpoch {
            time: t_next,
            nav: state,
            body_rate,
            specific_force,
            wheel_rates: (
                wheel_left / geom.wheel_radius,
                wheel_right / geom.wheel_radius,
            ),
            true_slip: slip,
            vibration_std: vibration_std(scn.roughness, cmd.stationary),
            stationary: cmd.stationary,
        });
    }

    Ok(epochs)
}

fn vibration_std(roughness: f64, stationary: bool) -> f64 {
    let level = VIBRATION_BASE * roughness;
    if stationary {
        level * VIBRATION_STATIONARY_FACTOR
    } else {
        level
    }
}

fn active_slip(events: &[SlipEvent], s: f64) -> (f64, f64) {
    for e in events {
        if s >= e.start_m && s < e.start_m + e.length_m {
            return (e.left_ratio, e.right_ratio);
        }
    }
    (0.0, 0.0)
}

// sensor synthesis ------------------------------------------------------------

/// Adds ARW/VRW white noise, Gauss-Markov biases, and motion-dependent
/// vibration to the true inertial quantities. A zero [`ImuNoiseSpec`] on a
/// roughness-0 scenario yields the exact inverse of the mechanization.
pub fn synthesize_imu(truth: &[TruthEpoch], spec: &ImuNoiseSpec, seed: u64) -> Vec<ImuSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let draw = |std: f64, rng: &mut ChaCha12Rng| -> Vector3<f64> {
        if std > 0.0 {
            Vector3::new(
                normal.sample(rng) * std,
                normal.sample(rng) * std,
                normal.sample(rng) * std,
            )
        } else {
            Vector3::zeros()
        }
    };

    let mut gyro_bias = draw(spec.gyro_bias_instability, &mut rng);
    let mut accel_bias = draw(spec.accel_bias_instability, &mut rng);

    let mut out = Vec::with_capacity(truth.len().saturating_sub(1));
    for pair in truth.windows(2) {
        let dt = pair[1].time - pair[0].time;
        let epoch = &pair[1];

        // Gauss-Markov bias evolution at the sample rate
        if spec.bias_correlation_time > 0.0 {
            let rho = (-dt / spec.bias_correlation_time).exp();
            let drive = (1.0 - rho * rho).sqrt();
            gyro_bias = gyro_bias * rho + draw(spec.gyro_bias_instability * drive, &mut rng);
            accel_bias = accel_bias * rho + draw(spec.accel_bias_instability * drive, &mut rng);
        }

        let gyro_white = if spec.gyro_arw > 0.0 {
            draw(spec.gyro_arw / dt.sqrt(), &mut rng)
        } else {
            Vector3::zeros()
        };
        let accel_white = if spec.accel_vrw > 0.0 {
            draw(spec.accel_vrw / dt.sqrt(), &mut rng)
        } else {
            Vector3::zeros()
        };
        let vibration = draw(epoch.vibration_std, &mut rng);

        out.push(ImuSample {
            time: epoch.time,
            angular_rate: epoch.body_rate + gyro_bias + gyro_white,
            specific_force: epoch.specific_force + accel_bias + accel_white + vibration,
        });
    }
    out
}

/// Quantizes the true wheel rotations through pulse-counting encoders at the
/// odometry rate. The seed randomizes the encoder zero-phase only.
pub fn synthesize_odometry(
    truth: &[TruthEpoch],
    geom: &RoverGeometry,
    pulses_per_m: f64,
    odom_rate: f64,
    seed: u64,
) -> Vec<OdomSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let uniform = rand_distr::Uniform::new(0.0, 1.0).unwrap();
    let phase_left: f64 = uniform.sample(&mut rng);
    let phase_right: f64 = uniform.sample(&mut rng);

    let tick = 1.0 / odom_rate;
    let mut out = Vec::new();
    let mut dist_left = 0.0f64;
    let mut dist_right = 0.0f64;
    let mut last_pulses = (0i64, 0i64);
    let mut next_tick = tick;

    let count = |d: f64, phase: f64| -> i64 { (d * pulses_per_m + phase).floor() as i64 };

    for pair in truth.windows(2) {
        let dt = pair[1].time - pair[0].time;
        dist_left += pair[1].wheel_rates.0 * geom.wheel_radius * dt;
        dist_right += pair[1].wheel_rates.1 * geom.wheel_radius * dt;
        if pair[1].time + 1e-9 >= next_tick {
            let pulses = (count(dist_left, phase_left), count(dist_right, phase_right));
            out.push(OdomSample {
                time: next_tick,
                left_speed: (pulses.0 - last_pulses.0) as f64 / pulses_per_m / tick,
                right_speed: (pulses.1 - last_pulses.1) as f64 / pulses_per_m / tick,
            });
            last_pulses = pulses;
            next_tick += tick;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn straight_scenario_timing_matches_schedule() {
        let scn = Scenario::straight(34.0, 0.4, 12.0);
        let truth = generate_truth(&scn, 100.0).unwrap();
        // drive time: everything not commanded stationary
        let dt = 0.01;
        let drive_time: f64 = truth.iter().filter(|e| !e.stationary).count() as f64 * dt;
        assert!(
            (drive_time - 85.0).abs() < 17.0,
            "drive time {drive_time} far from 85 s"
        );
        // stops: count entries into the stationary state after the initial
        // stop (the terminal stop is one of them)
        let mut stops = 0;
        let mut prev = true;
        for e in &truth {
            if e.stationary && !prev {
                stops += 1;
            }
            prev = e.stationary;
        }
        assert_eq!(stops, 7, "expected 7 stops");
    }

    #[test]
    fn rectangle_scenario_drive_time() {
        let scn = Scenario::fast_rectangle();
        let truth = generate_truth(&scn, 100.0).unwrap();
        let drive_time: f64 = truth.iter().filter(|e| !e.stationary).count() as f64 * 0.01;
        assert!(
            (drive_time - 120.0).abs() < 24.0,
            "drive time {drive_time} far from 120 s"
        );
        let mut stops = 0;
        let mut prev = true;
        for e in &truth {
            if e.stationary && !prev {
                stops += 1;
            }
            prev = e.stationary;
        }
        assert_eq!(stops, 8, "expected 8 stops, got {stops}");
    }

    #[test]
    fn zero_length_path_is_stationary() {
        let scn = Scenario::static_test(20.0);
        let truth = generate_truth(&scn, 100.0).unwrap();
        assert!(truth.iter().all(|e| e.stationary));
        assert!(truth.iter().all(|e| e.nav.velocity_ned.norm() < 1e-12));
    }

    #[test]
    fn stationary_truth_inverts_to_earth_rate_and_gravity() {
        let model = EllipsoidModel::wgs84();
        let scn = Scenario::static_test(10.0);
        let truth = generate_truth(&scn, 100.0).unwrap();
        let e = &truth[truth.len() / 2];
        let expected_gyro =
            e.nav.attitude.transpose() * geodesy::earth_rate_ned(e.nav.position.latitude, &model);
        let expected_accel =
            e.nav.attitude.transpose() * -geodesy::gravity_ned(&e.nav.position, &model);
        assert!((e.body_rate - expected_gyro).norm() < 1e-9);
        assert!((e.specific_force - expected_accel).norm() < 1e-6);
    }

    #[test]
    fn round_trip_reproduces_truth() {
        // the module's defining test: mechanize(synthesize_imu(truth, 0))
        // must retrace the truth trajectory
        let model = EllipsoidModel::wgs84();
        let mut scn = Scenario::concrete_turn();
        scn.roughness = 0.0;
        let truth = generate_truth(&scn, 100.0).unwrap();
        let imu = synthesize_imu(&truth, &ImuNoiseSpec::zero(), 7);

        let mut state = truth[0].nav;
        for sample in &imu {
            let dt = sample.time - state.time;
            state = mechanization::mechanize(&state, sample, dt, &model).unwrap();
        }
        let last = truth.last().unwrap().nav;
        let pos_err = geodesy::ned_delta(&last.position, &state.position, &model).unwrap();
        assert!(pos_err.norm() < 1e-3, "round-trip error {}", pos_err.norm());
        assert!((state.attitude.0 - last.attitude.0).norm() < 1e-5);
        assert!((state.velocity_ned - last.velocity_ned).norm() < 1e-6);
    }

    #[test]
    fn same_seed_bit_identical() {
        let scn = Scenario::rough_terrain();
        let t1 = generate_truth(&scn, 100.0).unwrap();
        let t2 = generate_truth(&scn, 100.0).unwrap();
        assert_eq!(t1.len(), t2.len());
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.nav.position, b.nav.position);
            assert_eq!(a.body_rate, b.body_rate);
        }
        let spec = ImuNoiseSpec::tactical_grade();
        let i1 = synthesize_imu(&t1, &spec, 42);
        let i2 = synthesize_imu(&t2, &spec, 42);
        assert_eq!(i1, i2);
        let geom = RoverGeometry::skid_steer_default();
        let o1 = synthesize_odometry(&t1, &geom, 78_000.0, 10.0, 42);
        let o2 = synthesize_odometry(&t2, &geom, 78_000.0, 10.0, 42);
        assert_eq!(o1, o2);
    }

    #[test]
    fn odometry_straight_drive_quantization() {
        let scn = Scenario::straight(10.0, 0.4, 1000.0); // no mid stops
        let geom = RoverGeometry::skid_steer_default();
        let truth = generate_truth(&scn, 100.0).unwrap();
        let odom = synthesize_odometry(&truth, &geom, 78_000.0, 10.0, 3);
        // during cruise both wheels read the commanded speed up to pulse
        // quantization; ramps read less but never more
        let quantum = 10.0 / 78_000.0;
        let cruising = odom
            .iter()
            .filter(|s| {
                (s.left_speed - 0.4).abs() <= 2.0 * quantum
                    && (s.right_speed - 0.4).abs() <= 2.0 * quantum
            })
            .count();
        assert!(cruising > 50, "only {cruising} cruise samples");
        for s in &odom {
            assert!(s.left_speed <= 0.4 + 2.0 * quantum + 1e-9);
            assert!(s.right_speed <= 0.4 + 2.0 * quantum + 1e-9);
        }
        // stops produce exactly zero counts
        let stopped: Vec<_> = odom.iter().take(40).collect(); // initial 5 s stop
        assert!(stopped.iter().all(|s| s.left_speed == 0.0 && s.right_speed == 0.0));
    }

    #[test]
    fn slip_event_inflates_wheel_speed() {
        let mut scn = Scenario::straight(30.0, 0.4, 1000.0);
        scn.slip_events = vec![SlipEvent {
            start_m: 10.0,
            length_m: 5.0,
            left_ratio: 0.5,
            right_ratio: 0.5,
        }];
        let geom = RoverGeometry::skid_steer_default();
        let truth = generate_truth(&scn, 100.0).unwrap();
        let slipped: Vec<_> = truth.iter().filter(|e| e.true_slip.0 > 0.0).collect();
        assert!(!slipped.is_empty());
        for e in &slipped {
            let ground = e.nav.velocity_ned.norm();
            if ground > 0.35 {
                // wheel linear speed must be ground / (1 - i) = 2x
                let wheel = e.wheel_rates.0 * geom.wheel_radius;
                assert_relative_eq!(wheel, ground / 0.5, max_relative = 0.02);
                // recover the slip ratio from the definition
                let i = 1.0 - ground / wheel;
                assert_relative_eq!(i, 0.5, epsilon = 0.02);
            }
        }
    }

    #[test]
    fn infeasible_arc_rejected() {
        let mut scn = Scenario::concrete_turn();
        scn.turn_radius = 0.1; // less than half the 0.555 m track
        assert_eq!(
            generate_truth(&scn, 100.0).unwrap_err(),
            SimError::InfeasiblePath(0.1)
        );
    }

    #[test]
    fn truth_velocity_matches_position_derivative() {
        let model = EllipsoidModel::wgs84();
        let scn = Scenario::concrete_turn();
        let truth = generate_truth(&scn, 100.0).unwrap();
        // central-difference the positions and compare to stored velocity
        for k in (100..truth.len() - 100).step_by(237) {
            let before = &truth[k - 1];
            let after = &truth[k + 1];
            let d = geodesy::ned_delta(&before.nav.position, &after.nav.position, &model).unwrap();
            let dt = after.time - before.time;
            let v_fd = Vector3::new(d[0] / dt, d[1] / dt, -d[2] / dt);
            assert!(
                (v_fd - truth[k].nav.velocity_ned).norm() < 0.02,
                "kinematic inconsistency at epoch {k}"
            );
        }
    }
}
