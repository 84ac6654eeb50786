//! Train/test/simulate orchestration and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::cmaes::{optimize, write_history_csv, CmaConfig, OptimizeResult};
use crate::controller::pose_error;
use crate::error::{Error, Result};
use crate::objective::{
    objective, objective_breakdown, run_episode, write_trace_csv, EpisodeResult, ObjectiveBreakdown, PenaltyConfig,
    SimSettings,
};
use crate::params::TuningParams;
use crate::reference::DEFAULT_FILTER_SUBSTEPS;
use crate::scenario::{
    four_corner_scenario, training_scenario, training_scenarios, FourCornerConfig, ScenarioSpec,
    TrainingScenarioConfig,
};
use crate::ship::{ShipModel, ShipParams};

/// Run configuration, read from TOML. Every section is optional.
///
/// ```toml
/// case = 1
///
/// [cma]
/// seed = 7
/// max_evaluations = 2000
///
/// [scenarios]
/// episodes = [1, 2, 3]
/// wind_directions_deg = [0.0, 180.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// 1 penalizes saturation (`r1 = r2 = 10`), 2 does not (`r1 = r2 = 0`).
    pub case: u8,
    pub ship: ShipParams,
    pub cma: CmaConfig,
    pub scenarios: TrainingScenarioConfig,
    pub test: FourCornerConfig,
    pub filter_substeps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            case: 1,
            ship: ShipParams::default(),
            cma: CmaConfig::default(),
            scenarios: TrainingScenarioConfig::default(),
            test: FourCornerConfig::default(),
            filter_substeps: DEFAULT_FILTER_SUBSTEPS,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.penalty()?;
        if cfg.filter_substeps == 0 {
            return Err(Error::Config("filter_substeps must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn penalty(&self) -> Result<PenaltyConfig> {
        PenaltyConfig::for_case(self.case)
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            filter_substeps: self.filter_substeps,
            ..SimSettings::default()
        }
    }

    pub fn model(&self) -> Result<ShipModel> {
        ShipModel::new(self.ship.clone()).map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores if `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: TuningParams,
    pub breakdown: ObjectiveBreakdown,
    pub scenario_count: usize,
    pub result: OptimizeResult,
}

/// Optimizes the 18 parameters over the configured training scenarios.
pub fn train(cfg: &TrainingConfig) -> Result<TrainOutcome> {
    let model = cfg.model()?;
    let penalty = cfg.penalty()?;
    let settings = cfg.settings();
    let scenarios = training_scenarios(&cfg.scenarios)?;
    log::info!(
        "training case {} on {} scenarios, budget {} evaluations",
        cfg.case,
        scenarios.len(),
        cfg.cma.max_evaluations
    );
    let result = optimize(
        |x| objective(x, &scenarios, &model, &penalty, &settings),
        TuningParams::bounds(),
        cfg.cma.clone(),
    )?;
    let best = TuningParams::from_slice(&result.best_x)?;
    let breakdown = objective_breakdown(&result.best_x, &scenarios, &model, &penalty, &settings)?;
    let diverged = scenarios
        .iter()
        .filter(|s| {
            run_episode(&best, s, &model, &penalty, &settings)
                .map(|r| r.diverged_at.is_some())
                .unwrap_or(true)
        })
        .count();
    if diverged > 0 {
        log::warn!("best parameters still diverge on {diverged} of {} scenarios", scenarios.len());
    }
    Ok(TrainOutcome {
        best,
        breakdown,
        scenario_count: scenarios.len(),
        result,
    })
}

/// Statistics of one evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub name: String,
    pub episode: EpisodeResult,
    /// Fraction of steps whose raw command leaves its box.
    pub input_excess_fraction: f64,
    /// Fraction of steps whose commanded rate exceeds its limit.
    pub rate_excess_fraction: f64,
    /// Fraction of steps with either kind of excess.
    pub any_excess_fraction: f64,
    /// Distance of the final position from the final goal \[m\].
    pub final_position_error: f64,
    /// Absolute heading error at the end \[rad\].
    pub final_heading_error: f64,
    /// RMS of `(|p - p_d|_xy, psi - psi_d)` per reference phase.
    pub phase_rms: Vec<(f64, f64)>,
}

impl EpisodeReport {
    pub fn new(scenario: &ScenarioSpec, episode: EpisodeResult) -> Self {
        let trace = &episode.trace;
        let n = trace.len().max(1) as f64;
        let count = |f: &dyn Fn(&crate::objective::TraceRecord) -> bool| trace.iter().filter(|r| f(r)).count() as f64 / n;
        let input = count(&|r| r.u_hat.iter().any(|x| *x != 0.0));
        let rate = count(&|r| r.du_hat.iter().any(|x| *x != 0.0));
        let any = count(&|r| r.u_hat.iter().chain(r.du_hat.iter()).any(|x| *x != 0.0));

        let goal = match &scenario.program {
            crate::reference::ReferenceProgram::Plan(p) => p.goal(),
            crate::reference::ReferenceProgram::Phased(p) => p.corners.last().copied().map(Into::into).unwrap_or(scenario.initial_pose),
        };
        let final_err = pose_error(&episode.final_state.pose, &goal);

        let mut bounds = episode.phase_starts.clone();
        bounds.push(trace.len());
        let phase_rms = bounds
            .windows(2)
            .map(|w| {
                let slice = &trace[w[0].min(trace.len())..w[1].min(trace.len())];
                let m = slice.len().max(1) as f64;
                let (mut sp, mut sh) = (0.0, 0.0);
                for r in slice {
                    let e = pose_error(&r.pose, &r.p_d);
                    sp += Vector2::new(e[0], e[1]).norm_squared();
                    sh += e[2] * e[2];
                }
                ((sp / m).sqrt(), (sh / m).sqrt())
            })
            .collect();

        Self {
            name: scenario.name.clone(),
            input_excess_fraction: input,
            rate_excess_fraction: rate,
            any_excess_fraction: any,
            final_position_error: Vector2::new(final_err[0], final_err[1]).norm(),
            final_heading_error: final_err[2].abs(),
            phase_rms,
            episode,
        }
    }

    pub fn diverged(&self) -> bool {
        self.episode.diverged_at.is_some()
    }

    pub fn summary(&self) -> String {
        let b = &self.episode.breakdown;
        let mut s = String::new();
        writeln!(s, "scenario = {}", self.name).unwrap();
        writeln!(s, "steps = {}", self.episode.trace.len()).unwrap();
        match self.episode.diverged_at {
            Some(k) => writeln!(s, "diverged_at_step = {k}").unwrap(),
            None => writeln!(s, "diverged = false").unwrap(),
        }
        writeln!(s, "J_e = {}", b.j_e).unwrap();
        writeln!(s, "J_uc = {}", b.j_uc).unwrap();
        writeln!(s, "J_du = {}", b.j_du).unwrap();
        writeln!(s, "J_total = {}", b.j_total).unwrap();
        writeln!(s, "input_excess_fraction = {}", self.input_excess_fraction).unwrap();
        writeln!(s, "rate_excess_fraction = {}", self.rate_excess_fraction).unwrap();
        writeln!(s, "any_excess_fraction = {}", self.any_excess_fraction).unwrap();
        writeln!(s, "final_position_error_m = {}", self.final_position_error).unwrap();
        writeln!(s, "final_heading_error_deg = {}", self.final_heading_error.to_degrees()).unwrap();
        for (i, (p, h)) in self.phase_rms.iter().enumerate() {
            writeln!(s, "phase{}_rms_position_m = {p}", i + 1).unwrap();
            writeln!(s, "phase{}_rms_heading_deg = {}", i + 1, h.to_degrees()).unwrap();
        }
        s
    }
}

pub fn evaluate(params: &TuningParams, scenario: &ScenarioSpec, cfg: &TrainingConfig) -> Result<EpisodeReport> {
    let model = cfg.model()?;
    let episode = run_episode(params, scenario, &model, &cfg.penalty()?, &cfg.settings())?;
    Ok(EpisodeReport::new(scenario, episode))
}

pub fn evaluate_four_corner(params: &TuningParams, cfg: &TrainingConfig) -> Result<EpisodeReport> {
    evaluate(params, &four_corner_scenario(&cfg.test), cfg)
}

/// Scenario selector of `simulate`: `four-corner`, or
/// `episode:<n>:<wind direction deg>` with the training settings.
pub fn select_scenario(selector: &str, cfg: &TrainingConfig) -> Result<ScenarioSpec> {
    if selector == "four-corner" || selector == "four_corner" {
        return Ok(four_corner_scenario(&cfg.test));
    }
    let parts: Vec<&str> = selector.split(':').collect();
    if let ["episode", n, dir] = parts.as_slice() {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("bad episode number in `{selector}`")))?;
        let dir: f64 = dir
            .parse()
            .map_err(|_| Error::Config(format!("bad wind direction in `{selector}`")))?;
        return training_scenario(n, dir, &cfg.scenarios);
    }
    Err(Error::Config(format!(
        "unknown scenario `{selector}`; expected `four-corner` or `episode:<n>:<deg>`"
    )))
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_trace(dir: &Path, report: &EpisodeReport) -> Result<PathBuf> {
    let mut buf = Vec::new();
    write_trace_csv(&report.episode.trace, &mut buf)?;
    write_file(dir, &format!("trace_{}.csv", report.name), buf)
}

/// `train`: writes `best_params.txt`, `history.csv` and `summary.txt`.
pub fn cmd_train(cfg: &TrainingConfig, out: &Path, workers: Option<usize>) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let outcome = with_workers(workers, || train(cfg))??;
    write_file(out, "best_params.txt", outcome.best.to_text())?;
    let mut history = Vec::new();
    write_history_csv(&outcome.result.history, &mut history)?;
    write_file(out, "history.csv", history)?;

    let b = &outcome.breakdown;
    let mut s = String::new();
    writeln!(s, "case = {}", cfg.case).unwrap();
    writeln!(s, "scenarios = {}", outcome.scenario_count).unwrap();
    writeln!(s, "evaluations = {}", outcome.result.evaluations).unwrap();
    writeln!(s, "generations = {}", outcome.result.history.len()).unwrap();
    writeln!(s, "stop = {:?}", outcome.result.stop).unwrap();
    writeln!(s, "restarts = {}", outcome.result.restarts).unwrap();
    writeln!(s, "best_f = {}", outcome.result.best_f).unwrap();
    writeln!(s, "J_e = {}", b.j_e).unwrap();
    writeln!(s, "J_uc = {}", b.j_uc).unwrap();
    writeln!(s, "J_du = {}", b.j_du).unwrap();
    writeln!(s, "J_total = {}", b.j_total).unwrap();
    write_file(out, "summary.txt", s)?;
    Ok(outcome)
}

/// `test`: four-corner run; writes `trace_four_corner.csv` and `summary.txt`.
pub fn cmd_test(params: &TuningParams, cfg: &TrainingConfig, out: &Path) -> Result<EpisodeReport> {
    fs::create_dir_all(out)?;
    let report = evaluate_four_corner(params, cfg)?;
    write_trace(out, &report)?;
    write_file(out, "summary.txt", report.summary())?;
    Ok(report)
}

/// `simulate`: one scenario; writes `trace_<scenario>.csv`.
pub fn cmd_simulate(params: &TuningParams, cfg: &TrainingConfig, selector: &str, out: &Path) -> Result<EpisodeReport> {
    fs::create_dir_all(out)?;
    let scenario = select_scenario(selector, cfg)?;
    let report = evaluate(params, &scenario, cfg)?;
    write_trace(out, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(TrainingConfig::from_toml_str("").unwrap(), TrainingConfig::default());
    }

    #[test]
    fn config_overrides() {
        let cfg = TrainingConfig::from_toml_str(
            "case = 2\nfilter_substeps = 10\n[cma]\nseed = 9\n[scenarios]\nepisodes = [1, 2]\npairing = \"one-per-episode\"\n",
        )
        .unwrap();
        assert_eq!(cfg.case, 2);
        assert_eq!(cfg.cma.seed, 9);
        assert_eq!(cfg.cma.max_evaluations, 30_000);
        assert_eq!(cfg.penalty().unwrap().r1, 0.0);
        assert_eq!(training_scenarios(&cfg.scenarios).unwrap().len(), 2);
    }

    #[test]
    fn config_errors() {
        assert!(TrainingConfig::from_toml_str("case = 3").is_err());
        assert!(TrainingConfig::from_toml_str("unknown = 1").is_err());
        assert!(TrainingConfig::from_toml_str("filter_substeps = 0").is_err());
        assert!(TrainingConfig::from_toml_str("[ship]\nm11 = 1.0").is_err());
    }

    #[test]
    fn selectors() {
        let cfg = TrainingConfig::default();
        assert_eq!(select_scenario("four-corner", &cfg).unwrap().name, "four_corner");
        assert_eq!(select_scenario("episode:3:90", &cfg).unwrap().name, "ep03_wind090");
        assert!(select_scenario("episode:x:90", &cfg).is_err());
        assert!(select_scenario("nope", &cfg).is_err());
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(with_workers(Some(0), || ()).is_err());
        assert_eq!(with_workers(Some(2), rayon::current_num_threads).unwrap(), 2);
    }

    #[test]
    fn simulate_replays_training_episode_exactly() {
        let cfg = TrainingConfig::default();
        let x = [
            0.8, 0.0, 0.8, 0.1, 0.0, 0.8, 1.0, 0.0, 1.0, 0.0, 0.1, 1.0, 0.05, 0.05, 0.05, 1.2, 1.2, 1.2,
        ];
        let params = TuningParams::from_slice(&x).unwrap();
        let scenario = training_scenario(11, 135.0, &cfg.scenarios).unwrap();
        let (model, penalty, settings) = (cfg.model().unwrap(), cfg.penalty().unwrap(), cfg.settings());
        let trained = objective(&x, std::slice::from_ref(&scenario), &model, &penalty, &settings).unwrap();
        let replay = evaluate(&params, &select_scenario("episode:11:135", &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(trained.to_bits(), replay.episode.breakdown.j_total.to_bits());
        assert!(trained > 0.0);
    }
}
