//! 3-DOF vessel model: kinematics, actuator force mapping, steady wind load
//! and actuator saturation.
//!
//! State equation (earth-fixed pose `p`, body-fixed velocity `v`):
//!
//! ```text
//! p_dot = J(psi) v
//! M v_dot + D v = tau + tau_wind,   tau = TV u_tilde
//! ```
//!
//! `u_tilde` is the actuator deviation from the hover condition: rudder
//! angles relative to their hover angles and the signed square `n_B |n_B|`
//! of the bow thruster speed.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth-fixed pose `(x \[m\], y \[m\], psi \[rad\])`. Heading is kept unwrapped.
pub type Pose = Vector3<f64>;

/// Body-fixed velocity `(v1 surge \[m/s\], v2 sway \[m/s\], v3 yaw rate \[rad/s\])`.
pub type Velocity = Vector3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped -= TAU;
    }
    wrapped
}

/// Physical actuator state: port/starboard VecTwin rudder angles and bow
/// thruster speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Port rudder angle \[rad\].
    pub delta_p: f64,
    /// Starboard rudder angle \[rad\].
    pub delta_s: f64,
    /// Bow thruster speed \[1/s\].
    pub n_b: f64,
}

impl ActuatorState {
    pub fn new(delta_p: f64, delta_s: f64, n_b: f64) -> Self {
        Self {
            delta_p,
            delta_s,
            n_b,
        }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.delta_p, self.delta_s, self.n_b)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.delta_p.is_finite() && self.delta_s.is_finite() && self.n_b.is_finite()
    }
}

/// Full simulator state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShipState {
    pub pose: Pose,
    pub vel: Velocity,
    pub actuator: ActuatorState,
}

impl ShipState {
    /// Ship at rest at `pose` with the actuators in the hover condition.
    pub fn at_rest(pose: Pose, params: &ShipParams) -> Self {
        Self {
            pose,
            vel: Velocity::zeros(),
            actuator: params.hover_actuator(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.iter().all(|x| x.is_finite())
            && self.vel.iter().all(|x| x.is_finite())
            && self.actuator.is_finite()
    }
}

/// Closed interval `[min, max]`; infinite ends are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const UNBOUNDED: Interval = Interval::new(f64::NEG_INFINITY, f64::INFINITY);

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }
}

/// Regression coefficients of the dimensionless wind load model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindRegressors {
    pub xx0: f64,
    pub xx1: f64,
    pub xx3: f64,
    pub xx5: f64,
    pub yy1: f64,
    pub yy3: f64,
    pub yy5: f64,
    pub nn1: f64,
    pub nn2: f64,
    pub nn3: f64,
}

impl WindRegressors {
    pub fn zero() -> Self {
        Self {
            xx0: 0.0,
            xx1: 0.0,
            xx3: 0.0,
            xx5: 0.0,
            yy1: 0.0,
            yy3: 0.0,
            yy5: 0.0,
            nn1: 0.0,
            nn2: 0.0,
            nn3: 0.0,
        }
    }
}

/// Steady true wind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindCondition {
    /// True wind speed `U` \[m/s\].
    pub speed: f64,
    /// Earth-frame direction the wind blows FROM \[rad\], measured like heading.
    pub direction: f64,
}

impl WindCondition {
    pub fn new(speed: f64, direction: f64) -> Self {
        Self { speed, direction }
    }

    pub fn calm() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// Dimensionless wind force/moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindCoefficients {
    pub cx: f64,
    pub cy: f64,
    pub cpsi: f64,
}

/// Ship parameters as read from the configuration file (SI units, angles in
/// radians). `M` and `D` only expose their structurally nonzero entries.
///
/// The hull values in [`ShipParams::default`] are placeholders for a
/// ~3 m VecTwin model ship; they are not measured data. Actuator authority
/// is sized so the default reference filter is trackable without
/// permanent saturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipParams {
    pub m11: f64,
    pub m22: f64,
    pub m23: f64,
    pub m32: f64,
    pub m33: f64,
    pub d11: f64,
    pub d22: f64,
    pub d23: f64,
    pub d32: f64,
    pub d33: f64,
    /// Actuator-deviation to force matrix, row major.
    pub tv: [[f64; 3]; 3],
    pub delta_p_hover: f64,
    pub delta_s_hover: f64,
    /// Stern propeller speed \[1/s\]; constant, folded into `tv`.
    pub n_p: f64,
    pub lpp: f64,
    pub a_t: f64,
    pub a_l: f64,
    pub rho_a: f64,
    pub wind: WindRegressors,
    pub delta_p_range: Interval,
    pub delta_s_range: Interval,
    pub n_b_range: Interval,
    /// Rudder slew limit `Omega_delta` \[rad/s\].
    pub rudder_rate: f64,
    /// Bow thruster acceleration limit `Omega_B` \[1/s per s\].
    pub thruster_rate: f64,
}

impl Default for ShipParams {
    fn default() -> Self {
        let deg = PI / 180.0;
        Self {
            m11: 180.0,
            m22: 280.0,
            m23: 8.0,
            m32: 8.0,
            m33: 120.0,
            d11: 30.0,
            d22: 90.0,
            d23: 4.0,
            d32: 4.0,
            d33: 60.0,
            tv: [
                [120.0, -120.0, 0.0],
                [50.0, 30.0, 1.0e-2],
                [-44.0, -68.0, 1.2e-2],
            ],
            delta_p_hover: -82.5 * deg,
            delta_s_hover: 82.5 * deg,
            n_p: 60.0,
            lpp: 3.0,
            a_t: 0.12,
            a_l: 0.45,
            rho_a: 1.225,
            wind: WindRegressors {
                xx0: 0.0,
                xx1: -0.8,
                xx3: 0.05,
                xx5: -0.02,
                yy1: 0.8,
                yy3: -0.05,
                yy5: 0.02,
                nn1: 0.05,
                nn2: -0.04,
                nn3: 0.01,
            },
            delta_p_range: Interval::new(-105.0 * deg, -60.0 * deg),
            delta_s_range: Interval::new(60.0 * deg, 105.0 * deg),
            n_b_range: Interval::new(-60.0, 60.0),
            rudder_rate: 0.349,
            thruster_rate: 100.0,
        }
    }
}

impl ShipParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("ship parameters: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ship parameters always serialize")
    }

    pub fn mass_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.m11, 0.0, 0.0, //
            0.0, self.m22, self.m23, //
            0.0, self.m32, self.m33,
        )
    }

    pub fn damping_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.d11, 0.0, 0.0, //
            0.0, self.d22, self.d23, //
            0.0, self.d32, self.d33,
        )
    }

    pub fn tv_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.tv[i][j])
    }

    pub fn hover_actuator(&self) -> ActuatorState {
        ActuatorState::new(self.delta_p_hover, self.delta_s_hover, 0.0)
    }

    pub fn actuator_ranges(&self) -> [Interval; 3] {
        [self.delta_p_range, self.delta_s_range, self.n_b_range]
    }

    /// `Omega = (Omega_delta, Omega_delta, Omega_B)`.
    pub fn rate_limits(&self) -> Vector3<f64> {
        Vector3::new(self.rudder_rate, self.rudder_rate, self.thruster_rate)
    }

    /// Copy with every actuator box and rate limit removed.
    pub fn unconstrained(&self) -> Self {
        Self {
            delta_p_range: Interval::UNBOUNDED,
            delta_s_range: Interval::UNBOUNDED,
            n_b_range: Interval::UNBOUNDED,
            rudder_rate: f64::INFINITY,
            thruster_rate: f64::INFINITY,
            ..self.clone()
        }
    }
}

/// Validated ship parameters together with the derived matrices the
/// simulator and controller need every step.
#[derive(Debug, Clone)]
pub struct ShipModel {
    params: ShipParams,
    mass: Matrix3<f64>,
    damping: Matrix3<f64>,
    tv: Matrix3<f64>,
    mass_inv: Matrix3<f64>,
    /// `A = M^-1 D`
    a: Matrix3<f64>,
    /// `B = M^-1 TV`
    b: Matrix3<f64>,
}

impl ShipModel {
    pub fn new(params: ShipParams) -> Result<Self> {
        let finite = [
            params.m11,
            params.m22,
            params.m23,
            params.m32,
            params.m33,
            params.d11,
            params.d22,
            params.d23,
            params.d32,
            params.d33,
            params.delta_p_hover,
            params.delta_s_hover,
            params.n_p,
            params.lpp,
            params.a_t,
            params.a_l,
            params.rho_a,
        ]
        .iter()
        .chain(params.tv.iter().flatten())
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("ship parameters must be finite".into()));
        }
        let mass = params.mass_matrix();
        let damping = params.damping_matrix();
        let tv = params.tv_matrix();
        if mass.determinant() == 0.0 {
            return Err(Error::Config("mass matrix M is singular".into()));
        }
        let mass_inv = mass
            .try_inverse()
            .ok_or_else(|| Error::Config("mass matrix M is singular".into()))?;
        if tv.determinant() == 0.0 {
            return Err(Error::Config("actuator matrix TV is singular".into()));
        }
        for (name, range) in [
            ("delta_p_range", params.delta_p_range),
            ("delta_s_range", params.delta_s_range),
            ("n_b_range", params.n_b_range),
        ] {
            if range.min.is_nan() || range.max.is_nan() || range.min >= range.max {
                return Err(Error::Config(format!("{name} must satisfy min < max")));
            }
        }
        if !(params.rudder_rate > 0.0 && params.thruster_rate > 0.0) {
            return Err(Error::Config("rate limits must be positive".into()));
        }
        let w = &params.wind;
        if ![
            w.xx0, w.xx1, w.xx3, w.xx5, w.yy1, w.yy3, w.yy5, w.nn1, w.nn2, w.nn3,
        ]
        .iter()
        .all(|x| x.is_finite())
        {
            return Err(Error::Config("wind regressors must be finite".into()));
        }
        Ok(Self {
            a: mass_inv * damping,
            b: mass_inv * tv,
            mass,
            damping,
            tv,
            mass_inv,
            params,
        })
    }

    pub fn params(&self) -> &ShipParams {
        &self.params
    }

    pub fn mass(&self) -> &Matrix3<f64> {
        &self.mass
    }

    pub fn damping(&self) -> &Matrix3<f64> {
        &self.damping
    }

    pub fn tv(&self) -> &Matrix3<f64> {
        &self.tv
    }

    pub fn mass_inv(&self) -> &Matrix3<f64> {
        &self.mass_inv
    }

    /// `A = M^-1 D`.
    pub fn a(&self) -> &Matrix3<f64> {
        &self.a
    }

    /// `B = M^-1 TV`.
    pub fn b(&self) -> &Matrix3<f64> {
        &self.b
    }
}

/// Body-to-earth rotation `J(psi)`.
pub fn rotation_matrix(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(
        c, -s, 0.0, //
        s, c, 0.0, //
        0.0, 0.0, 1.0,
    )
}

/// Element-wise derivative `dJ/dpsi`.
pub fn rotation_derivative(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(
        -s, -c, 0.0, //
        c, -s, 0.0, //
        0.0, 0.0, 0.0,
    )
}

/// Apparent wind speed `U_A` and encounter angle `gamma_A` in `[0, 2pi)`.
///
/// The apparent wind is the true wind velocity minus the ship's ground
/// velocity, expressed in the body frame. `gamma_A` is the body-frame
/// direction the apparent wind comes from, 0 for a head wind and pi/2 for
/// wind from starboard.
pub fn relative_wind(pose: &Pose, vel: &Velocity, wind: &WindCondition) -> (f64, f64) {
    let (s, c) = pose[2].sin_cos();
    // True wind blows towards direction + pi.
    let (ws, wc) = wind.direction.sin_cos();
    let wind_earth = Vector2::new(-wind.speed * wc, -wind.speed * ws);
    let ship_earth = Vector2::new(c * vel[0] - s * vel[1], s * vel[0] + c * vel[1]);
    let rel = wind_earth - ship_earth;
    let rel_body = Vector2::new(c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]);
    let speed = rel_body.norm();
    if speed == 0.0 {
        return (0.0, 0.0);
    }
    let mut angle = (-rel_body[1]).atan2(-rel_body[0]).rem_euclid(TAU);
    if angle >= TAU {
        angle = 0.0;
    }
    (speed, angle)
}

pub fn wind_coefficients(gamma_a: f64, reg: &WindRegressors) -> WindCoefficients {
    let g = TAU - gamma_a;
    WindCoefficients {
        cx: reg.xx0 + reg.xx1 * g.cos() + reg.xx3 * (3.0 * g).cos() + reg.xx5 * (5.0 * g).cos(),
        cy: reg.yy1 * g.sin() + reg.yy3 * (3.0 * g).sin() + reg.yy5 * (5.0 * g).sin(),
        cpsi: reg.nn1 * g.sin() + reg.nn2 * (2.0 * g).sin() + reg.nn3 * (3.0 * g).sin(),
    }
}

/// Wind force and moment `tau_wind` [N, N, N m].
pub fn wind_force(speed_a: f64, gamma_a: f64, params: &ShipParams) -> Vector3<f64> {
    let coeff = wind_coefficients(gamma_a, &params.wind);
    let q = 0.5 * params.rho_a * speed_a * speed_a;
    Vector3::new(
        q * params.a_t * coeff.cx,
        q * params.a_l * coeff.cy,
        q * params.a_l * params.lpp * coeff.cpsi,
    )
}

/// Wind load on a ship at `pose` moving with `vel`.
pub fn wind_load(pose: &Pose, vel: &Velocity, wind: &WindCondition, params: &ShipParams) -> Vector3<f64> {
    let (speed_a, gamma_a) = relative_wind(pose, vel, wind);
    wind_force(speed_a, gamma_a, params)
}

/// `u_tilde = (delta_P - delta_P,h, delta_S - delta_S,h, n_B |n_B|)`.
pub fn actuator_deviation(u: &ActuatorState, params: &ShipParams) -> Vector3<f64> {
    Vector3::new(
        u.delta_p - params.delta_p_hover,
        u.delta_s - params.delta_s_hover,
        u.n_b * u.n_b.abs(),
    )
}

/// `tau = TV u_tilde`.
pub fn actuator_force(u_tilde: &Vector3<f64>, model: &ShipModel) -> Vector3<f64> {
    model.tv() * u_tilde
}

/// `v_dot = M^-1 (tau + tau_wind - D v)`.
pub fn acceleration(
    vel: &Velocity,
    tau: &Vector3<f64>,
    tau_wind: &Vector3<f64>,
    model: &ShipModel,
) -> Vector3<f64> {
    model.mass_inv() * (tau + tau_wind - model.damping() * vel)
}

/// Moves each actuator from `u` toward the command by at most `Omega_j dt`
/// and then clips into its box.
pub fn apply_actuator_limits(
    u: &ActuatorState,
    command: &ActuatorState,
    dt: f64,
    params: &ShipParams,
) -> ActuatorState {
    let current = u.to_vector();
    let target = command.to_vector();
    let rates = params.rate_limits();
    let ranges = params.actuator_ranges();
    let next = Vector3::from_fn(|j, _| {
        let max_step = rates[j] * dt;
        let delta = target[j] - current[j];
        let moved = if delta.abs() <= max_step {
            target[j]
        } else {
            current[j] + max_step.copysign(delta)
        };
        ranges[j].clamp(moved)
    });
    ActuatorState::from_vector(&next)
}

/// Derivative information evaluated during one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub pose_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub tau: Vector3<f64>,
    pub tau_wind: Vector3<f64>,
}

/// Right-hand side of the state equation for a fixed actuator state.
pub fn derivative(
    pose: &Pose,
    vel: &Velocity,
    actuator: &ActuatorState,
    wind: &WindCondition,
    model: &ShipModel,
) -> Derivative {
    let tau = actuator_force(&actuator_deviation(actuator, model.params()), model);
    let tau_wind = wind_load(pose, vel, wind, model.params());
    Derivative {
        pose_dot: rotation_matrix(pose[2]) * vel,
        v_dot: acceleration(vel, &tau, &tau_wind, model),
        tau,
        tau_wind,
    }
}

/// One explicit Euler step of length `dt`.
///
/// The actuators are first moved toward `command` under the rate and box
/// limits; forces are then evaluated at the new actuator state and the
/// current pose and velocity. `step_index` is reported on divergence.
pub fn step(
    state: &ShipState,
    command: &ActuatorState,
    wind: &WindCondition,
    dt: f64,
    model: &ShipModel,
    step_index: usize,
) -> Result<(ShipState, Derivative)> {
    let actuator = apply_actuator_limits(&state.actuator, command, dt, model.params());
    let d = derivative(&state.pose, &state.vel, &actuator, wind, model);
    let next = ShipState {
        pose: state.pose + d.pose_dot * dt,
        vel: state.vel + d.v_dot * dt,
        actuator,
    };
    if !next.is_finite() {
        return Err(Error::Divergence { step: step_index });
    }
    Ok((next, d))
}

/// Like [`step`], but integrates the dynamics with `substeps` Euler steps of
/// `dt / substeps` while the actuators stay at their limited state.
pub fn step_refined(
    state: &ShipState,
    command: &ActuatorState,
    wind: &WindCondition,
    dt: f64,
    substeps: usize,
    model: &ShipModel,
    step_index: usize,
) -> Result<ShipState> {
    let substeps = substeps.max(1);
    let actuator = apply_actuator_limits(&state.actuator, command, dt, model.params());
    let h = dt / substeps as f64;
    let mut pose = state.pose;
    let mut vel = state.vel;
    for _ in 0..substeps {
        let d = derivative(&pose, &vel, &actuator, wind, model);
        pose += d.pose_dot * h;
        vel += d.v_dot * h;
    }
    let next = ShipState {
        pose,
        vel,
        actuator,
    };
    if !next.is_finite() {
        return Err(Error::Divergence { step: step_index });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn model() -> ShipModel {
        ShipModel::new(ShipParams::default()).unwrap()
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        assert_eq!(rotation_matrix(0.0), Matrix3::identity());
        let v = rotation_matrix(PI / 2.0) * Vector3::new(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rotation_derivative_known_values() {
        let d0 = rotation_derivative(0.0);
        assert_eq!(
            d0,
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        let dpi = rotation_derivative(PI);
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(dpi, expected, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(psi in -20.0f64..20.0) {
            let j = rotation_matrix(psi);
            let err = (j * j.transpose() - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((j.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rotation_derivative_matches_central_difference(psi in -10.0f64..10.0) {
            let h = 1e-6;
            let fd = (rotation_matrix(psi + h) - rotation_matrix(psi - h)) / (2.0 * h);
            prop_assert!((fd - rotation_derivative(psi)).abs().max() < 1e-8);
        }

        #[test]
        fn limited_actuator_stays_in_box(
            dp in -105.0f64..-60.0, ds in 60.0f64..105.0, nb in -60.0f64..60.0,
            cp in -4.0f64..4.0, cs in -4.0f64..4.0, cn in -500.0f64..500.0,
            dt in 0.001f64..1.0,
        ) {
            let params = ShipParams::default();
            let deg = PI / 180.0;
            let u = ActuatorState::new(dp * deg, ds * deg, nb);
            let uc = ActuatorState::new(cp, cs, cn);
            let next = apply_actuator_limits(&u, &uc, dt, &params);
            for (j, range) in params.actuator_ranges().iter().enumerate() {
                let x = next.to_vector()[j];
                prop_assert!(range.contains(x));
                let limit = params.rate_limits()[j] * dt;
                let slack = 4.0 * f64::EPSILON * u.to_vector()[j].abs().max(limit);
                prop_assert!((x - u.to_vector()[j]).abs() <= limit + slack);
            }
        }

        #[test]
        fn wind_force_is_quadratic(speed in 0.0f64..20.0, gamma in 0.0f64..std::f64::consts::TAU) {
            let params = ShipParams::default();
            let single = wind_force(speed, gamma, &params);
            let double = wind_force(2.0 * speed, gamma, &params);
            prop_assert!((double - 4.0 * single).abs().max() <= 1e-12 * (1.0 + double.abs().max()));
        }
    }

    #[test]
    fn wrap_angle_examples() {
        assert_abs_diff_eq!(wrap_angle(350f64.to_radians()), -10f64.to_radians(), epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn relative_wind_simple_cases() {
        let pose = Pose::new(3.0, -1.0, 0.7);
        let (ua, _) = relative_wind(&pose, &Velocity::zeros(), &WindCondition::new(1.0, 2.0));
        assert_abs_diff_eq!(ua, 1.0, epsilon = 1e-15);

        let (ua, ga) = relative_wind(
            &Pose::zeros(),
            &Velocity::new(1.0, 0.0, 0.0),
            &WindCondition::calm(),
        );
        assert_abs_diff_eq!(ua, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ga, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn relative_wind_matches_direct_vector_oracle() {
        // Oracle: build 2-D vectors from polar components directly.
        let pose = Pose::new(0.0, 0.0, 0.4);
        let vel = Velocity::new(0.3, -0.2, 0.05);
        let wind = WindCondition::new(1.5, 2.2);
        let heading = pose[2];
        let ship_e = (
            vel[0] * heading.cos() - vel[1] * heading.sin(),
            vel[0] * heading.sin() + vel[1] * heading.cos(),
        );
        let to_dir = wind.direction + PI;
        let air_e = (
            wind.speed * to_dir.cos() - ship_e.0,
            wind.speed * to_dir.sin() - ship_e.1,
        );
        let mag = (air_e.0 * air_e.0 + air_e.1 * air_e.1).sqrt();
        let from_earth = (-air_e.1).atan2(-air_e.0);
        let expected_angle = (from_earth - heading).rem_euclid(TAU);

        let (ua, ga) = relative_wind(&pose, &vel, &wind);
        assert_abs_diff_eq!(ua, mag, epsilon = 1e-13);
        assert_abs_diff_eq!(ga, expected_angle, epsilon = 1e-12);
    }

    #[test]
    fn wind_wind_from_starboard_pushes_to_port() {
        let params = ShipParams::default();
        let tau = wind_load(
            &Pose::zeros(),
            &Velocity::zeros(),
            &WindCondition::new(1.0, PI / 2.0),
            &params,
        );
        assert!(tau[1] < 0.0);
        let head = wind_load(&Pose::zeros(), &Velocity::zeros(), &WindCondition::new(1.0, 0.0), &params);
        assert!(head[0] < 0.0);
    }

    #[test]
    fn wind_coefficient_special_angles() {
        let reg = ShipParams::default().wind;
        let c = wind_coefficients(TAU, &reg);
        assert_abs_diff_eq!(c.cx, reg.xx0 + reg.xx1 + reg.xx3 + reg.xx5, epsilon = 1e-14);
        assert_abs_diff_eq!(c.cy, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.cpsi, 0.0, epsilon = 1e-14);

        let c = wind_coefficients(PI, &reg);
        assert_abs_diff_eq!(c.cx, reg.xx0 - reg.xx1 - reg.xx3 - reg.xx5, epsilon = 1e-14);
        assert_abs_diff_eq!(c.cy, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.cpsi, 0.0, epsilon = 1e-14);

        let c = wind_coefficients(1.1, &WindRegressors::zero());
        assert_eq!((c.cx, c.cy, c.cpsi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn wind_force_formula() {
        let params = ShipParams::default();
        assert_eq!(wind_force(0.0, 1.0, &params), Vector3::zeros());
        let (ua, ga) = (2.5, 0.9);
        let c = wind_coefficients(ga, &params.wind);
        let q = 0.5 * 1.225 * 2.5 * 2.5;
        let expected = Vector3::new(q * 0.12 * c.cx, q * 0.45 * c.cy, q * 0.45 * 3.0 * c.cpsi);
        assert_abs_diff_eq!(wind_force(ua, ga, &params), expected, epsilon = 1e-14);
    }

    #[test]
    fn actuator_deviation_examples() {
        let params = ShipParams::default();
        assert_eq!(actuator_deviation(&params.hover_actuator(), &params), Vector3::zeros());
        let u = ActuatorState::new(params.delta_p_hover, params.delta_s_hover, 60.0);
        assert_eq!(actuator_deviation(&u, &params)[2], 3600.0);
        let u = ActuatorState::new(params.delta_p_hover, params.delta_s_hover, -60.0);
        assert_eq!(actuator_deviation(&u, &params)[2], -3600.0);
    }

    #[test]
    fn actuator_force_is_linear() {
        let model = model();
        assert_eq!(actuator_force(&Vector3::zeros(), &model), Vector3::zeros());
        let a = Vector3::new(0.1, -0.2, 300.0);
        let b = Vector3::new(-0.05, 0.3, -1200.0);
        let lhs = actuator_force(&(2.0 * a + 3.0 * b), &model);
        let rhs = 2.0 * actuator_force(&a, &model) + 3.0 * actuator_force(&b, &model);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);

        let mut p = ShipParams::default();
        p.tv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let m = ShipModel::new(p).unwrap();
        assert_eq!(actuator_force(&Vector3::new(1.0, 2.0, 3.0), &m), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn acceleration_cases() {
        let model = model();
        assert_eq!(
            acceleration(&Velocity::zeros(), &Vector3::zeros(), &Vector3::zeros(), &model),
            Vector3::zeros()
        );

        let mut p = ShipParams::default();
        (p.m11, p.m22, p.m23, p.m32, p.m33) = (1.0, 1.0, 0.0, 0.0, 1.0);
        (p.d11, p.d22, p.d23, p.d32, p.d33) = (1.0, 1.0, 0.0, 0.0, 1.0);
        let unit = ShipModel::new(p).unwrap();
        let vd = acceleration(&Velocity::new(1.0, 0.0, 0.0), &Vector3::zeros(), &Vector3::zeros(), &unit);
        assert_eq!(vd, Vector3::new(-1.0, 0.0, 0.0));

        let v = Velocity::new(0.4, -0.1, 0.03);
        let tau = Vector3::new(3.0, -1.5, 2.0);
        let tw = Vector3::new(-0.1, 0.2, 0.05);
        let vd = acceleration(&v, &tau, &tw, &model);
        let residual = model.mass() * vd + model.damping() * v - tau - tw;
        assert!(residual.abs().max() < 1e-12);
    }

    #[test]
    fn singular_mass_rejected_at_load() {
        let mut p = ShipParams::default();
        p.m11 = 0.0;
        assert!(matches!(ShipModel::new(p), Err(Error::Config(_))));
    }

    #[test]
    fn actuator_limit_examples() {
        let params = ShipParams::default();
        let deg = PI / 180.0;
        let u = ActuatorState::new(-90.0 * deg, 80.0 * deg, 10.0);
        assert_eq!(apply_actuator_limits(&u, &u, 0.1, &params), u);

        let uc = ActuatorState::new(-60.0 * deg, 80.0 * deg, 10.0);
        let next = apply_actuator_limits(&u, &uc, 0.1, &params);
        assert_abs_diff_eq!(next.delta_p - u.delta_p, 0.0349, epsilon = 1e-12);

        let uc = ActuatorState::new(-90.0 * deg, 80.0 * deg, 300.0);
        let near = ActuatorState::new(-90.0 * deg, 80.0 * deg, 55.0);
        let next = apply_actuator_limits(&near, &uc, 0.1, &params);
        assert_eq!(next.n_b, 60.0);
    }

    #[test]
    fn equilibrium_step_keeps_state() {
        let model = model();
        let state = ShipState::at_rest(Pose::new(1.0, 2.0, 0.3), model.params());
        let (next, _) = step(&state, &state.actuator, &WindCondition::calm(), 0.1, &model, 0).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn pure_yaw_rate_advances_heading() {
        // No damping on yaw and no forces: v3 stays constant.
        let mut p = ShipParams::default();
        (p.d23, p.d32, p.d33) = (0.0, 0.0, 0.0);
        let model = ShipModel::new(p).unwrap();
        let mut state = ShipState::at_rest(Pose::zeros(), model.params());
        state.vel = Velocity::new(0.0, 0.0, 0.2);
        for k in 0..50 {
            let (next, _) = step(&state, &state.actuator, &WindCondition::calm(), 0.1, &model, k).unwrap();
            assert_abs_diff_eq!(next.pose[2] - state.pose[2], 0.02, epsilon = 1e-15);
            state = next;
        }
    }

    #[test]
    fn non_finite_state_reports_step_index() {
        let model = model();
        let mut state = ShipState::at_rest(Pose::zeros(), model.params());
        state.vel[0] = f64::NAN;
        let err = step(&state, &state.actuator, &WindCondition::calm(), 0.1, &model, 17).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 17 }));
    }

    #[test]
    fn euler_refinement_converges_first_order() {
        // Open-loop run with a fixed command: difference between dt, dt/2 and
        // dt/4 trajectories shrinks by ~2x per halving.
        let model = model();
        let wind = WindCondition::new(1.0, 0.8);
        let params = model.params();
        let command = ActuatorState::new(params.delta_p_hover + 0.2, params.delta_s_hover + 0.1, 30.0);
        let run = |substeps: usize| {
            let mut s = ShipState::at_rest(Pose::zeros(), params);
            for k in 0..1200 {
                s = step_refined(&s, &command, &wind, 0.1, substeps, &model, k).unwrap();
            }
            s
        };
        let s1 = run(1);
        let s2 = run(2);
        let s4 = run(4);
        let s8 = run(8);
        let d1 = (s1.pose - s2.pose).norm();
        let d2 = (s2.pose - s4.pose).norm();
        let d3 = (s4.pose - s8.pose).norm();
        assert!(d1 > 0.0);
        let (r1, r2) = (d1 / d2, d2 / d3);
        assert!((1.6..2.4).contains(&r1), "ratio {r1}");
        assert!((1.6..2.4).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn params_roundtrip_through_toml() {
        let p = ShipParams::default();
        let text = p.to_toml_string();
        assert_eq!(ShipParams::from_toml_str(&text).unwrap(), p);
        assert!(ShipParams::from_toml_str("m11 = 1.0").is_err());
    }
}
