//! Closed-loop episodes and the penalized tuning objective
//! `J = J_e + J_uc + J_du`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{build_gains, command_to_actuator, control_law, pose_error, ControllerOptions};
use crate::error::{Error, Result};
use crate::params::TuningParams;
use crate::reference::{FilterState, ReferenceFilter, Scheduler, DEFAULT_FILTER_SUBSTEPS};
use crate::scenario::ScenarioSpec;
use crate::ship::{step, wind_load, ActuatorState, Pose, ShipModel, ShipParams, ShipState, Velocity};

/// Objective weights and divergence handling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Weight of the input-excess term.
    pub r1: f64,
    /// Weight of the rate-excess term.
    pub r2: f64,
    /// Weight of the filtered-reference error in the combined error.
    pub w_e: f64,
    /// Diagonal of the error weight matrix.
    pub error_weights: [f64; 3],
    /// Distance from the start pose beyond which an episode is aborted \[m\].
    pub divergence_radius: f64,
    /// Multiplier on the per-step charge for steps lost to divergence.
    pub divergence_factor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self::for_case(1).expect("case 1 exists")
    }
}

impl PenaltyConfig {
    /// Case 1 penalizes saturation (`r1 = r2 = 10`); case 2 does not.
    pub fn for_case(case: u8) -> Result<Self> {
        let r = match case {
            1 => 10.0,
            2 => 0.0,
            _ => return Err(Error::Config(format!("unknown case {case}; expected 1 or 2"))),
        };
        Ok(Self {
            r1: r,
            r2: r,
            w_e: 10.0,
            error_weights: [1.0, 1.0, 1.0 / (0.2 * PI).powi(2)],
            divergence_radius: 100.0,
            divergence_factor: 10.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r1 >= 0.0
            && self.r2 >= 0.0
            && self.w_e >= 0.0
            && self.error_weights.iter().all(|w| *w > 0.0 && w.is_finite())
            && self.divergence_radius > 0.0
            && self.divergence_factor >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid penalty configuration {self:?}")))
        }
    }
}

/// The three quadratic-form weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMatrices {
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub r3: Matrix3<f64>,
}

impl WeightMatrices {
    /// `R2 = (r1/3) diag(1/width^2)` over the actuator boxes and
    /// `R3 = (r2/3) diag(1/Omega^2)` over the rate limits. Unbounded boxes or
    /// rates get zero weight.
    pub fn new(cfg: &PenaltyConfig, params: &ShipParams) -> Self {
        let inv_sq = |w: f64| if w.is_finite() { 1.0 / (w * w) } else { 0.0 };
        let ranges = params.actuator_ranges();
        let rates = params.rate_limits();
        Self {
            r1: Matrix3::from_diagonal(&Vector3::from(cfg.error_weights)),
            r2: Matrix3::from_diagonal(&Vector3::from_fn(|j, _| cfg.r1 / 3.0 * inv_sq(ranges[j].width()))),
            r3: Matrix3::from_diagonal(&Vector3::from_fn(|j, _| cfg.r2 / 3.0 * inv_sq(rates[j]))),
        }
    }
}

/// Standard clamp of `s` into `[s_min, s_max]`.
pub fn clip(s: f64, s_min: f64, s_max: f64) -> Result<f64> {
    if s_min > s_max {
        return Err(Error::InvalidArgument(format!("clip bounds reversed: [{s_min}, {s_max}]")));
    }
    Ok(s.clamp(s_min, s_max))
}

/// `e = (p - p_r) + w_e (p - p_d)` with wrapped heading differences.
pub fn combined_error(p: &Pose, p_r: &Vector3<f64>, p_d: &Vector3<f64>, w_e: f64) -> Vector3<f64> {
    pose_error(p, p_r) + pose_error(p, p_d) * w_e
}

/// Amount by which each commanded actuator value lies outside its box.
pub fn input_excess(u_c: &ActuatorState, params: &ShipParams) -> Vector3<f64> {
    let c = u_c.to_vector();
    let ranges = params.actuator_ranges();
    Vector3::from_fn(|j, _| c[j] - ranges[j].clamp(c[j]))
}

/// Amount by which the commanded rate `(u_c - u)/dt` exceeds the symmetric
/// band `[-Omega_j, Omega_j]`.
pub fn rate_excess(u_c: &ActuatorState, u: &ActuatorState, dt: f64, params: &ShipParams) -> Vector3<f64> {
    let du = (u_c.to_vector() - u.to_vector()) / dt;
    let rates = params.rate_limits();
    Vector3::from_fn(|j, _| du[j] - du[j].clamp(-rates[j], rates[j]))
}

/// Numerical settings shared by training and testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub filter_substeps: usize,
    pub controller: ControllerOptions,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            filter_substeps: DEFAULT_FILTER_SUBSTEPS,
            controller: ControllerOptions::default(),
        }
    }
}

/// State and signals at the start of one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub pose: Pose,
    pub vel: Velocity,
    pub actuator: ActuatorState,
    /// Raw command, before rate and box limiting.
    pub command: ActuatorState,
    pub p_r: Vector3<f64>,
    /// Filtered reference used by the controller at this step.
    pub p_d: Vector3<f64>,
    pub u_hat: Vector3<f64>,
    pub du_hat: Vector3<f64>,
    pub e: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub j_e: f64,
    pub j_uc: f64,
    pub j_du: f64,
    pub j_total: f64,
}

impl ObjectiveBreakdown {
    fn finish(mut self) -> Self {
        self.j_total = self.j_e + self.j_uc + self.j_du;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trace: Vec<TraceRecord>,
    pub breakdown: ObjectiveBreakdown,
    /// Step at which the episode was aborted, if it diverged.
    pub diverged_at: Option<usize>,
    /// Part of `j_e` charged for steps lost to divergence.
    pub divergence_charge: f64,
    /// Step indices at which each reference phase began.
    pub phase_starts: Vec<usize>,
    pub final_state: ShipState,
}

/// Number of steps of a scenario; `duration / dt` must be integral.
pub fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && duration >= 0.0 && dt.is_finite() && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad duration {duration} / dt {dt}")));
    }
    let ratio = duration / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

/// Simulates one scenario in closed loop and accumulates the objective.
///
/// Each step: the scheduler releases the raw reference, the filter advances,
/// the controller computes the raw command from the current ship state,
/// excesses are recorded against that raw command, and the ship advances
/// with the limited actuators. Divergence (non-finite state, singular
/// control matrix, or leaving the divergence radius) ends the episode; every
/// remaining step is charged `divergence_factor` times the larger of the
/// worst per-step error seen so far and the error at the divergence radius.
pub fn run_episode(
    params: &TuningParams,
    scenario: &ScenarioSpec,
    model: &ShipModel,
    cfg: &PenaltyConfig,
    settings: &SimSettings,
) -> Result<EpisodeResult> {
    params.check_bounds()?;
    cfg.validate()?;
    let ship = model.params();
    let dt = scenario.dt;
    let steps = step_count(scenario.duration, dt)?;
    let gains = build_gains(&params.gains)?;
    let weights = WeightMatrices::new(cfg, ship);
    let filter = ReferenceFilter::new(params.filter, settings.filter_substeps);
    let mut scheduler = Scheduler::new(&scenario.program, &scenario.initial_pose)?;

    let mut state = ShipState::at_rest(scenario.initial_pose, ship);
    let mut filt = FilterState::at_rest(scenario.initial_pose);
    let mut trace = Vec::with_capacity(steps);
    let mut phase_starts = vec![0];
    let mut acc = ObjectiveBreakdown::default();
    let mut worst_error: f64 = 0.0;
    let mut diverged_at = None;

    for k in 0..steps {
        let t = k as f64 * dt;
        let p_r = scheduler.reference(t, &filt)?;
        if scheduler.phase() + 1 > phase_starts.len() {
            phase_starts.push(k);
        }
        filt = filter.step(&filt, &p_r, dt);
        let tau_wind = wind_load(&state.pose, &state.vel, &scenario.wind, ship);
        let u_tilde_c = match control_law(&state, &filt, &gains, &tau_wind, model, &settings.controller) {
            Ok(u) if u.iter().all(|x| x.is_finite()) => u,
            Ok(_) | Err(Error::ControlSingularity { .. }) => {
                diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let command = command_to_actuator(&u_tilde_c, ship);
        let e = combined_error(&state.pose, &p_r, &filt.p_d, cfg.w_e);
        let u_hat = input_excess(&command, ship);
        let du_hat = rate_excess(&command, &state.actuator, dt, ship);
        let e_cost = e.dot(&(weights.r1 * e));
        worst_error = worst_error.max(e_cost);
        acc.j_e += e_cost;
        acc.j_uc += u_hat.dot(&(weights.r2 * u_hat));
        acc.j_du += du_hat.dot(&(weights.r3 * du_hat));
        trace.push(TraceRecord {
            t,
            pose: state.pose,
            vel: state.vel,
            actuator: state.actuator,
            command,
            p_r,
            p_d: filt.p_d,
            u_hat,
            du_hat,
            e,
        });

        match step(&state, &command, &scenario.wind, dt, model, k) {
            Ok((next, _)) => state = next,
            Err(Error::Divergence { .. }) => {
                diverged_at = Some(k + 1);
                break;
            }
            Err(e) => return Err(e),
        }
        let excursion = Vector2::new(
            state.pose[0] - scenario.initial_pose[0],
            state.pose[1] - scenario.initial_pose[1],
        )
        .norm();
        if excursion > cfg.divergence_radius {
            diverged_at = Some(k + 1);
            break;
        }
    }

    let mut divergence_charge = 0.0;
    if let Some(k) = diverged_at {
        let floor = cfg.divergence_radius.powi(2) * cfg.error_weights[0];
        divergence_charge = (steps - k) as f64 * cfg.divergence_factor * worst_error.max(floor);
        acc.j_e += divergence_charge;
        log::debug!("episode `{}` diverged at step {k}", scenario.name);
    }
    Ok(EpisodeResult {
        trace,
        breakdown: acc.finish(),
        diverged_at,
        divergence_charge,
        phase_starts,
        final_state: state,
    })
}

/// Re-scores a stored trace under (possibly different) penalty weights. The
/// divergence charge, which depends on the episode length, is not included.
pub fn score_trace(trace: &[TraceRecord], cfg: &PenaltyConfig, params: &ShipParams) -> ObjectiveBreakdown {
    let w = WeightMatrices::new(cfg, params);
    let mut acc = ObjectiveBreakdown::default();
    for r in trace {
        acc.j_e += r.e.dot(&(w.r1 * r.e));
        acc.j_uc += r.u_hat.dot(&(w.r2 * r.u_hat));
        acc.j_du += r.du_hat.dot(&(w.r3 * r.du_hat));
    }
    acc.finish()
}

/// Sum of episode objectives over all scenarios for the 18-vector `x`.
/// Scenarios run in parallel; the sum is taken in scenario order.
pub fn objective(
    x: &[f64],
    scenarios: &[ScenarioSpec],
    model: &ShipModel,
    cfg: &PenaltyConfig,
    settings: &SimSettings,
) -> Result<f64> {
    Ok(objective_breakdown(x, scenarios, model, cfg, settings)?.j_total)
}

pub fn objective_breakdown(
    x: &[f64],
    scenarios: &[ScenarioSpec],
    model: &ShipModel,
    cfg: &PenaltyConfig,
    settings: &SimSettings,
) -> Result<ObjectiveBreakdown> {
    let params = TuningParams::from_slice(x)?;
    let parts = scenarios
        .par_iter()
        .map(|s| run_episode(&params, s, model, cfg, settings).map(|r| r.breakdown))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = ObjectiveBreakdown::default();
    for p in parts {
        acc.j_e += p.j_e;
        acc.j_uc += p.j_uc;
        acc.j_du += p.j_du;
    }
    Ok(acc.finish())
}

pub const TRACE_HEADER: &str = "t,x,y,psi,v1,v2,v3,delta_P,delta_S,n_B,delta_P_c,delta_S_c,n_B_c,\
uhat_1,uhat_2,uhat_3,duhat_1,duhat_2,duhat_3,e_1,e_2,e_3";

/// Writes the trace as CSV. Values use the shortest decimal that parses
/// back to the same `f64`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        let fields = [
            r.t,
            r.pose[0],
            r.pose[1],
            r.pose[2],
            r.vel[0],
            r.vel[1],
            r.vel[2],
            r.actuator.delta_p,
            r.actuator.delta_s,
            r.actuator.n_b,
            r.command.delta_p,
            r.command.delta_s,
            r.command.n_b,
            r.u_hat[0],
            r.u_hat[1],
            r.u_hat[2],
            r.du_hat[0],
            r.du_hat[1],
            r.du_hat[2],
            r.e[0],
            r.e[1],
            r.e[2],
        ];
        let line: Vec<String> = fields.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
