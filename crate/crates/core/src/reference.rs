//! Reference generation: waypoint schedules and the third-order reference
//! filter
//!
//! ```text
//! p_d''' + G W p_d'' + G W^2 p_d' + W^3 p_d = W^3 p_r,   G = 2 Z + I
//! ```
//!
//! with `Z = diag(zeta)` and `W = diag(omega)`. Every axis is an independent
//! scalar ODE; the polynomial factors as `(s + w)(s^2 + 2 zeta w s + w^2)`,
//! so small `zeta` gives a lightly damped reference.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ship::wrap_angle;

pub const ZETA_MIN: f64 = 0.01;
pub const ZETA_MAX: f64 = 0.1;
pub const OMEGA_MIN: f64 = 0.8;
pub const OMEGA_MAX: f64 = 2.0;

pub const FILTER_NAMES: [&str; 6] = ["zeta_x", "zeta_y", "zeta_psi", "omega_x", "omega_y", "omega_psi"];

/// Relative damping ratios and natural frequencies \[rad/s\] per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub zeta: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl FilterParams {
    pub fn new(zeta: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { zeta, omega }
    }

    pub fn uniform(zeta: f64, omega: f64) -> Self {
        Self::new(Vector3::repeat(zeta), Vector3::repeat(omega))
    }

    pub fn check_bounds(&self) -> Result<()> {
        let entries = self.zeta.iter().map(|&z| (z, ZETA_MIN, ZETA_MAX)).chain(
            self.omega.iter().map(|&w| (w, OMEGA_MIN, OMEGA_MAX)),
        );
        for (i, (value, lower, upper)) in entries.enumerate() {
            if !(value >= lower && value <= upper) {
                return Err(Error::ParameterBounds {
                    name: FILTER_NAMES[i].to_string(),
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }
}

/// Filtered reference `p_d` with its first and second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub p_d: Vector3<f64>,
    pub p_d_dot: Vector3<f64>,
    pub p_d_ddot: Vector3<f64>,
}

impl FilterState {
    /// Resting at `p`.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p_d: p,
            p_d_dot: Vector3::zeros(),
            p_d_ddot: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p_d
            .iter()
            .chain(self.p_d_dot.iter())
            .chain(self.p_d_ddot.iter())
            .all(|x| x.is_finite())
    }
}

/// Third time derivative of `p_d` given by the filter ODE.
pub fn filter_jerk(state: &FilterState, p_r: &Vector3<f64>, params: &FilterParams) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let w = params.omega[i];
        let g = 2.0 * params.zeta[i] + 1.0;
        w * w * w * (p_r[i] - state.p_d[i]) - g * w * state.p_d_ddot[i] - g * w * w * state.p_d_dot[i]
    })
}

/// One explicit Euler step of the companion-form filter.
pub fn filter_step(state: &FilterState, p_r: &Vector3<f64>, dt: f64, params: &FilterParams) -> FilterState {
    let jerk = filter_jerk(state, p_r, params);
    FilterState {
        p_d: state.p_d + state.p_d_dot * dt,
        p_d_dot: state.p_d_dot + state.p_d_ddot * dt,
        p_d_ddot: state.p_d_ddot + jerk * dt,
    }
}

/// Filter with a refinement factor: each call to [`ReferenceFilter::step`]
/// takes `substeps` Euler steps of `dt / substeps`.
///
/// Explicit Euler on the oscillatory factor is stable only for
/// `h * omega < 2 * zeta`; at `zeta = 0.01, omega = 2` that needs
/// `h < 0.01 s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFilter {
    pub params: FilterParams,
    pub substeps: usize,
}

pub const DEFAULT_FILTER_SUBSTEPS: usize = 20;

impl ReferenceFilter {
    pub fn new(params: FilterParams, substeps: usize) -> Self {
        Self {
            params,
            substeps: substeps.max(1),
        }
    }

    pub fn step(&self, state: &FilterState, p_r: &Vector3<f64>, dt: f64) -> FilterState {
        let h = dt / self.substeps as f64;
        let mut s = *state;
        for _ in 0..self.substeps {
            s = filter_step(&s, p_r, h, &self.params);
        }
        s
    }
}

/// Largest per-waypoint move in position \[m\] and heading \[rad\].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentCaps {
    pub d_pos: f64,
    pub d_psi: f64,
}

impl Default for SegmentCaps {
    fn default() -> Self {
        Self {
            d_pos: 4.0,
            d_psi: 30.0 * PI / 180.0,
        }
    }
}

/// Piecewise-constant raw reference: `(activation time \[s\], p_r)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPlan {
    pub schedule: Vec<(f64, Vector3<f64>)>,
}

/// Activation times are compared with this slack so that `k * dt` lands on
/// `j * interval` despite rounding.
const TIME_SLACK: f64 = 1e-9;

impl WaypointPlan {
    pub fn hold(p: Vector3<f64>) -> Self {
        Self {
            schedule: vec![(0.0, p)],
        }
    }

    pub fn last_activation(&self) -> f64 {
        self.schedule.last().map_or(0.0, |(t, _)| *t)
    }

    pub fn goal(&self) -> Vector3<f64> {
        self.schedule.last().map(|(_, p)| *p).unwrap_or_else(Vector3::zeros)
    }
}

/// Splits the move from `start` to `goal` into waypoints released every
/// `interval` seconds. Position advances along the straight line by at most
/// `d_pos` per waypoint and heading along the shorter arc by at most `d_psi`;
/// the last waypoint is `goal` itself.
pub fn segment_targets(start: &Vector3<f64>, goal: &Vector3<f64>, interval: f64, caps: &SegmentCaps) -> Result<WaypointPlan> {
    if !(interval > 0.0 && caps.d_pos > 0.0 && caps.d_psi > 0.0) {
        return Err(Error::InvalidArgument(
            "segmentation interval and caps must be positive".into(),
        ));
    }
    let delta_xy = Vector2::new(goal[0] - start[0], goal[1] - start[1]);
    let dist = delta_xy.norm();
    let dpsi = wrap_angle(goal[2] - start[2]);
    let count = |span: f64, cap: f64| (span / cap - 1e-9).ceil().max(0.0) as usize;
    let n = count(dist, caps.d_pos).max(count(dpsi.abs(), caps.d_psi)).max(1);

    let dir = if dist > 0.0 { delta_xy / dist } else { Vector2::zeros() };
    let mut schedule = Vec::with_capacity(n);
    for k in 1..n {
        let along = (k as f64 * caps.d_pos).min(dist);
        let turn = (k as f64 * caps.d_psi).min(dpsi.abs());
        let p = Vector3::new(
            start[0] + dir[0] * along,
            start[1] + dir[1] * along,
            start[2] + turn.copysign(dpsi),
        );
        schedule.push(((k - 1) as f64 * interval, p));
    }
    schedule.push(((n - 1) as f64 * interval, *goal));
    Ok(WaypointPlan { schedule })
}

/// `p_r` of the latest waypoint activated at or before `t`.
pub fn reference_at(plan: &WaypointPlan, t: f64) -> Vector3<f64> {
    let mut current = plan.schedule[0].1;
    for (time, p) in &plan.schedule {
        if *time <= t + TIME_SLACK {
            current = *p;
        } else {
            break;
        }
    }
    current
}

/// A sequence of corners visited one after another. The next corner is
/// released once the filtered reference has settled on the current one, or
/// after `phase_timeout`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasedPlan {
    pub corners: Vec<[f64; 3]>,
    pub interval: f64,
    pub caps: SegmentCaps,
    /// Settling tolerance on position \[m\] and on speed \[m/s\].
    pub settle_pos: f64,
    /// Settling tolerance on heading \[rad\] and on yaw rate \[rad/s\].
    pub settle_psi: f64,
    pub phase_timeout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceProgram {
    /// A single time-based waypoint schedule.
    Plan(WaypointPlan),
    /// Corners segmented and released phase by phase, starting from the
    /// initial pose.
    Phased(PhasedPlan),
}

/// Runtime state of a [`ReferenceProgram`].
#[derive(Debug, Clone)]
pub struct Scheduler<'a> {
    program: &'a ReferenceProgram,
    phase: usize,
    phase_start: f64,
    plan: WaypointPlan,
}

impl<'a> Scheduler<'a> {
    pub fn new(program: &'a ReferenceProgram, start: &Vector3<f64>) -> Result<Self> {
        let plan = match program {
            ReferenceProgram::Plan(plan) => {
                if plan.schedule.is_empty() {
                    return Err(Error::InvalidArgument("empty waypoint plan".into()));
                }
                plan.clone()
            }
            ReferenceProgram::Phased(phased) => {
                let first = phased
                    .corners
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("phased plan without corners".into()))?;
                segment_targets(start, &Vector3::from(*first), phased.interval, &phased.caps)?
            }
        };
        Ok(Self {
            program,
            phase: 0,
            phase_start: 0.0,
            plan,
        })
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    /// Raw reference at time `t`, given the filter state before it is
    /// advanced for this step.
    pub fn reference(&mut self, t: f64, filter: &FilterState) -> Result<Vector3<f64>> {
        if let ReferenceProgram::Phased(phased) = self.program {
            if self.phase + 1 < phased.corners.len() {
                let local = t - self.phase_start;
                let released = local + TIME_SLACK >= self.plan.last_activation();
                let goal = self.plan.goal();
                let settled = released && settled_on(filter, &goal, phased.settle_pos, phased.settle_psi);
                if settled || local + TIME_SLACK >= phased.phase_timeout {
                    let from = Vector3::from(phased.corners[self.phase]);
                    self.phase += 1;
                    self.phase_start = t;
                    let to = Vector3::from(phased.corners[self.phase]);
                    self.plan = segment_targets(&from, &to, phased.interval, &phased.caps)?;
                }
            }
        }
        Ok(reference_at(&self.plan, t - self.phase_start))
    }
}

fn settled_on(filter: &FilterState, goal: &Vector3<f64>, tol_pos: f64, tol_psi: f64) -> bool {
    let pos_err = Vector2::new(filter.p_d[0] - goal[0], filter.p_d[1] - goal[1]).norm();
    let speed = Vector2::new(filter.p_d_dot[0], filter.p_d_dot[1]).norm();
    pos_err <= tol_pos
        && speed <= tol_pos
        && wrap_angle(filter.p_d[2] - goal[2]).abs() <= tol_psi
        && filter.p_d_dot[2].abs() <= tol_psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equilibrium_is_fixed_point() {
        let s = FilterState::at_rest(Vector3::new(1.0, -2.0, 0.5));
        let params = FilterParams::uniform(0.05, 1.3);
        assert_eq!(filter_step(&s, &s.p_d, 0.1, &params), s);
    }

    #[test]
    fn converges_to_constant_target() {
        let filter = ReferenceFilter::new(FilterParams::uniform(0.1, 2.0), 20);
        let target = Vector3::new(3.0, -1.0, 0.4);
        let mut s = FilterState::at_rest(Vector3::zeros());
        for _ in 0..1200 {
            s = filter.step(&s, &target, 0.1);
        }
        assert!((s.p_d - target).abs().max() < 1e-3);
    }

    #[test]
    fn axes_are_decoupled() {
        let base = FilterParams::uniform(0.05, 1.0);
        let mut perturbed = base;
        perturbed.zeta[0] = 0.09;
        perturbed.omega[0] = 1.7;
        let target = Vector3::new(1.0, 2.0, 0.5);
        let (mut a, mut b) = (FilterState::at_rest(Vector3::zeros()), FilterState::at_rest(Vector3::zeros()));
        for _ in 0..500 {
            a = filter_step(&a, &target, 0.01, &base);
            b = filter_step(&b, &target, 0.01, &perturbed);
            for i in 1..3 {
                assert_eq!(a.p_d[i].to_bits(), b.p_d[i].to_bits());
                assert_eq!(a.p_d_dot[i].to_bits(), b.p_d_dot[i].to_bits());
                assert_eq!(a.p_d_ddot[i].to_bits(), b.p_d_ddot[i].to_bits());
            }
        }
        assert_ne!(a.p_d[0], b.p_d[0]);
    }

    #[test]
    fn filter_bounds() {
        assert!(FilterParams::uniform(0.05, 1.0).check_bounds().is_ok());
        assert!(FilterParams::uniform(0.2, 1.0).check_bounds().is_err());
        assert!(FilterParams::uniform(0.05, 0.5).check_bounds().is_err());
    }

    #[test]
    fn degenerate_segment() {
        let g = Vector3::new(1.0, 2.0, 0.3);
        let plan = segment_targets(&g, &g, 20.0, &SegmentCaps::default()).unwrap();
        assert_eq!(plan.schedule, vec![(0.0, g)]);
    }

    #[test]
    fn straight_segment_spacing() {
        let plan = segment_targets(&Vector3::zeros(), &Vector3::new(10.0, 0.0, 0.0), 20.0, &SegmentCaps::default()).unwrap();
        let xs: Vec<f64> = plan.schedule.iter().map(|(_, p)| p[0]).collect();
        assert_eq!(xs, vec![4.0, 8.0, 10.0]);
        let ts: Vec<f64> = plan.schedule.iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, vec![0.0, 20.0, 40.0]);
    }

    #[test]
    fn heading_segment_spacing() {
        let goal = Vector3::new(0.0, 0.0, 90f64.to_radians());
        let plan = segment_targets(&Vector3::zeros(), &goal, 20.0, &SegmentCaps::default()).unwrap();
        assert_eq!(plan.schedule.len(), 3);
        for (k, (_, p)) in plan.schedule.iter().enumerate() {
            assert_abs_diff_eq!(p[2], (30.0 * (k + 1) as f64).to_radians(), epsilon = 1e-12);
        }
    }

    #[test]
    fn segment_rejects_bad_caps() {
        let caps = SegmentCaps { d_pos: 0.0, d_psi: 1.0 };
        assert!(segment_targets(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), 20.0, &caps).is_err());
    }

    proptest! {
        #[test]
        fn segments_respect_caps(
            sx in -20.0f64..20.0, sy in -20.0f64..20.0, spsi in -4.0f64..4.0,
            gx in -20.0f64..20.0, gy in -20.0f64..20.0, gpsi in -4.0f64..4.0,
            d_pos in 0.5f64..6.0, d_psi in 0.1f64..1.0,
        ) {
            let start = Vector3::new(sx, sy, spsi);
            let goal = Vector3::new(gx, gy, gpsi);
            let caps = SegmentCaps { d_pos, d_psi };
            let plan = segment_targets(&start, &goal, 20.0, &caps).unwrap();
            let last = plan.schedule.last().unwrap().1;
            prop_assert_eq!(last, goal);
            let mut prev = start;
            for (_, p) in &plan.schedule {
                let dpos = ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
                prop_assert!(dpos <= d_pos * (1.0 + 1e-9));
                prop_assert!(wrap_angle(p[2] - prev[2]).abs() <= d_psi * (1.0 + 1e-9));
                prev = *p;
            }
        }
    }

    #[test]
    fn hold_semantics() {
        let plan = WaypointPlan {
            schedule: vec![
                (0.0, Vector3::new(1.0, 0.0, 0.0)),
                (20.0, Vector3::new(2.0, 0.0, 0.0)),
                (40.0, Vector3::new(3.0, 0.0, 0.0)),
            ],
        };
        assert_eq!(reference_at(&plan, 5.0)[0], 1.0);
        assert_eq!(reference_at(&plan, 19.99)[0], 1.0);
        assert_eq!(reference_at(&plan, 20.0)[0], 2.0);
        assert_eq!(reference_at(&plan, 200.0)[0], 3.0);
        // 200 steps of 0.1 s reach the 20 s activation.
        assert_eq!(reference_at(&plan, 200.0 * 0.1)[0], 2.0);
    }

    #[test]
    fn phased_plan_advances_after_settling() {
        let program = ReferenceProgram::Phased(PhasedPlan {
            corners: vec![[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
            interval: 20.0,
            caps: SegmentCaps::default(),
            settle_pos: 0.1,
            settle_psi: 1f64.to_radians(),
            phase_timeout: 120.0,
        });
        let mut sched = Scheduler::new(&program, &Vector3::zeros()).unwrap();
        let away = FilterState::at_rest(Vector3::zeros());
        assert_eq!(sched.reference(0.0, &away).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(sched.reference(10.0, &away).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(sched.phase(), 0);
        let there = FilterState::at_rest(Vector3::new(1.0, 0.05, 0.0));
        assert_eq!(sched.reference(10.1, &there).unwrap(), Vector3::new(1.0, 1.0, 0.0));
        assert_eq!(sched.phase(), 1);

        let mut sched = Scheduler::new(&program, &Vector3::zeros()).unwrap();
        assert_eq!(sched.reference(119.9, &away).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(sched.reference(120.0, &away).unwrap(), Vector3::new(1.0, 1.0, 0.0));
    }
}
