//! Backstepping tracking law.
//!
//! With `e1 = p - p_d`, virtual control `alpha1 = -C1 e1 + p_d_dot` and
//! `e2 = J(psi) v - alpha1`, the command `u_tilde_c` is the solution of
//!
//! ```text
//! J B u = -C2 e2 - e1 + C1^2 e1 - C1 e2 - (dJ/dpsi v3) v + J A v - J M^-1 tau_wind + p_d_ddot
//! ```
//!
//! which, for the exact model `v_dot = -A v + B u_tilde + M^-1 tau_wind`,
//! gives the error dynamics `e1_dot = -C1 e1 + e2`, `e2_dot = -C2 e2 - e1`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::reference::FilterState;
use crate::ship::{rotation_derivative, rotation_matrix, wrap_angle, ActuatorState, Pose, ShipModel, ShipParams, ShipState, Velocity};

/// The reference the controller tracks: `p_d` and its first two derivatives.
pub type ReferenceSignal = FilterState;

pub const GAIN_DIAG_MIN: f64 = 0.001;
pub const GAIN_DIAG_MAX: f64 = 10.0;
pub const GAIN_OFFDIAG_MIN: f64 = -10.0;
pub const GAIN_OFFDIAG_MAX: f64 = 10.0;

pub const GAIN_NAMES: [&str; 12] = [
    "a11", "a12", "a13", "a14", "a15", "a16", "a21", "a22", "a23", "a24", "a25", "a26",
];

/// Entries `(a11..a16, a21..a26)` of the lower-triangular factors `A1`, `A2`
/// of the gain matrices `C1 = A1 A1^T`, `C2 = A2 A2^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainParams(pub [f64; 12]);

impl GainParams {
    /// Whether entry `i` sits on the diagonal of its factor.
    pub fn is_diagonal(i: usize) -> bool {
        matches!(i % 6, 0 | 2 | 5)
    }

    pub fn bounds(i: usize) -> (f64, f64) {
        if Self::is_diagonal(i) {
            (GAIN_DIAG_MIN, GAIN_DIAG_MAX)
        } else {
            (GAIN_OFFDIAG_MIN, GAIN_OFFDIAG_MAX)
        }
    }

    pub fn check_bounds(&self) -> Result<()> {
        for (i, &value) in self.0.iter().enumerate() {
            let (lower, upper) = Self::bounds(i);
            if !(value >= lower && value <= upper) {
                return Err(Error::ParameterBounds {
                    name: GAIN_NAMES[i].to_string(),
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Lower-triangular factors `(A1, A2)`.
    pub fn factors(&self) -> (Matrix3<f64>, Matrix3<f64>) {
        let factor = |a: &[f64]| {
            Matrix3::new(
                a[0], 0.0, 0.0, //
                a[1], a[2], 0.0, //
                a[3], a[4], a[5],
            )
        };
        (factor(&self.0[..6]), factor(&self.0[6..]))
    }
}

/// Symmetric positive-definite design matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMatrices {
    pub c1: Matrix3<f64>,
    pub c2: Matrix3<f64>,
}

impl GainMatrices {
    pub fn identity() -> Self {
        Self {
            c1: Matrix3::identity(),
            c2: Matrix3::identity(),
        }
    }
}

pub fn build_gains(x: &GainParams) -> Result<GainMatrices> {
    x.check_bounds()?;
    let (a1, a2) = x.factors();
    Ok(GainMatrices {
        c1: a1 * a1.transpose(),
        c2: a2 * a2.transpose(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub alpha1: Vector3<f64>,
}

/// Pose error with the heading component wrapped into `(-pi, pi]`.
pub fn pose_error(p: &Pose, target: &Vector3<f64>) -> Vector3<f64> {
    let mut e = p - target;
    e[2] = wrap_angle(e[2]);
    e
}

pub fn tracking_errors(pose: &Pose, vel: &Velocity, reference: &ReferenceSignal, gains: &GainMatrices) -> TrackingErrors {
    let e1 = pose_error(pose, &reference.p_d);
    let alpha1 = -gains.c1 * e1 + reference.p_d_dot;
    let e2 = rotation_matrix(pose[2]) * vel - alpha1;
    TrackingErrors { e1, e2, alpha1 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOptions {
    /// Largest accepted 1-norm condition number of `J(psi) B`.
    pub condition_limit: f64,
    /// Include the `-J M^-1 tau_wind` feedforward term.
    pub wind_feedforward: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            condition_limit: 1e12,
            wind_feedforward: true,
        }
    }
}

fn norm1(m: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Deviation command `u_tilde_c` of the backstepping law.
pub fn control_law(
    state: &ShipState,
    reference: &ReferenceSignal,
    gains: &GainMatrices,
    tau_wind: &Vector3<f64>,
    model: &ShipModel,
    options: &ControllerOptions,
) -> Result<Vector3<f64>> {
    let psi = state.pose[2];
    let v = &state.vel;
    let j = rotation_matrix(psi);
    let TrackingErrors { e1, e2, .. } = tracking_errors(&state.pose, v, reference, gains);
    let (c1, c2) = (&gains.c1, &gains.c2);

    let mut rhs = -c2 * e2 - e1 + c1 * (c1 * e1) - c1 * e2 - rotation_derivative(psi) * v * v[2]
        + j * (model.a() * v)
        + reference.p_d_ddot;
    if options.wind_feedforward {
        rhs -= j * (model.mass_inv() * tau_wind);
    }

    let jb = j * model.b();
    let inv = jb.try_inverse().ok_or(Error::ControlSingularity {
        condition: f64::INFINITY,
    })?;
    let condition = norm1(&jb) * norm1(&inv);
    if condition.is_nan() || condition > options.condition_limit {
        return Err(Error::ControlSingularity { condition });
    }
    Ok(inv * rhs)
}

/// Physical command from the deviation command. No clipping: the raw value
/// is what the saturation penalties are measured on.
pub fn command_to_actuator(u_tilde_c: &Vector3<f64>, params: &ShipParams) -> ActuatorState {
    let n = u_tilde_c[2];
    ActuatorState::new(
        u_tilde_c[0] + params.delta_p_hover,
        u_tilde_c[1] + params.delta_s_hover,
        n.signum() * n.abs().sqrt(),
    )
}
