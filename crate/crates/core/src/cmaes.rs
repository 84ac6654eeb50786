//! CMA-ES with box constraints.
//!
//! The search runs in the unit cube `[0, 1]^n`, mapped affinely onto the
//! box, so that coordinates with very different widths (gain entries vs.
//! damping ratios) start on an equal footing. Samples are repaired by
//! clamping into the cube; the objective is evaluated at the repaired point
//! and the squared repair distance is added to the value used for ranking.
//! The distribution update uses the unrepaired samples.
//!
//! Update rules and default strategy parameters follow the standard
//! (mu/mu_w, lambda) formulation with rank-one and rank-mu covariance updates
//! and cumulative step-size adaptation.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("bounds must be nonempty and of equal length".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate box in coordinate {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Maps a point of the unit cube onto the box; the result is always
    /// inside the box, including both ends.
    pub fn from_unit(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&lo, &hi))| {
                if t >= 1.0 {
                    hi
                } else if t <= 0.0 {
                    lo
                } else {
                    (lo + t * (hi - lo)).clamp(lo, hi)
                }
            })
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    /// Population size; `4 + floor(3 ln n)` when unset.
    pub population: Option<usize>,
    /// Initial step size in unit-cube coordinates.
    pub sigma0: f64,
    pub max_evaluations: usize,
    pub seed: u64,
    /// Stop when the best value has not improved for this many generations.
    pub stagnation_generations: usize,
    pub sigma_floor: f64,
    /// Weight of the squared repair distance, relative to `max(1, |median f|)`.
    pub repair_weight: f64,
    /// Covariance condition number that triggers a restart of the
    /// distribution shape.
    pub condition_ceiling: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: 0.3,
            max_evaluations: 30_000,
            seed: 1,
            stagnation_generations: 50,
            sigma_floor: 1e-10,
            repair_weight: 1.0,
            condition_ceiling: 1e14,
        }
    }
}

pub fn default_population(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// A sampled point. `x` is what the objective sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Repaired point in the original box.
    pub x: Vec<f64>,
    /// Unrepaired sample in unit-cube coordinates.
    pub raw: DVector<f64>,
    /// `||raw - repaired||^2` in unit-cube coordinates.
    pub repair_distance_sq: f64,
}

#[derive(Debug, Clone)]
struct Strategy {
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Sampling distribution and bookkeeping of one optimizer run.
#[derive(Debug, Clone)]
pub struct CmaState {
    bounds: BoxBounds,
    config: CmaConfig,
    strategy: Strategy,
    rng: ChaCha8Rng,
    /// Mean in unit-cube coordinates.
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    /// Square roots of the eigenvalues of `covariance`.
    axis_lengths: DVector<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub best_x: Vec<f64>,
    pub best_f: f64,
    stale_generations: usize,
}

impl CmaState {
    pub fn initialize(bounds: BoxBounds, config: CmaConfig) -> Result<Self> {
        let n = bounds.dim();
        let lambda = config.population.unwrap_or_else(|| default_population(n));
        if lambda < 4 {
            return Err(Error::InvalidArgument("population must be at least 4".into()));
        }
        if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
            return Err(Error::InvalidArgument("sigma0 must be positive".into()));
        }
        let mean = DVector::from_element(n, 0.5);
        let best_x = bounds.from_unit(&mean);
        Ok(Self {
            strategy: Strategy::new(n, lambda),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            sigma: config.sigma0,
            covariance: DMatrix::identity(n, n),
            eigenvectors: DMatrix::identity(n, n),
            axis_lengths: DVector::from_element(n, 1.0),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            restarts: 0,
            best_x,
            best_f: f64::INFINITY,
            stale_generations: 0,
            mean,
            bounds,
            config,
        })
    }

    pub fn lambda(&self) -> usize {
        self.strategy.lambda
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    /// Mean mapped into the original box.
    pub fn mean_in_box(&self) -> Vec<f64> {
        self.bounds.from_unit(&self.mean)
    }

    pub fn stale_generations(&self) -> usize {
        self.stale_generations
    }

    /// Draws `lambda` samples and repairs them into the box.
    pub fn ask(&mut self) -> Vec<Candidate> {
        let n = self.bounds.dim();
        (0..self.strategy.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
                let y = &self.eigenvectors * z.component_mul(&self.axis_lengths);
                let raw = &self.mean + y * self.sigma;
                let repaired = raw.map(|t| t.clamp(0.0, 1.0));
                Candidate {
                    x: self.bounds.from_unit(&repaired),
                    repair_distance_sq: (&raw - &repaired).norm_squared(),
                    raw,
                }
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates, in the order
    /// returned by [`CmaState::ask`].
    pub fn tell(&mut self, candidates: &[Candidate], fitness: &[f64]) -> Result<()> {
        let lambda = self.strategy.lambda;
        if candidates.len() != lambda || fitness.len() != lambda {
            return Err(Error::InvalidArgument(format!(
                "expected {lambda} candidates and fitness values"
            )));
        }
        if let Some(index) = fitness.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFiniteFitness { index });
        }
        let n = self.bounds.dim();
        let nf = n as f64;
        let s = self.strategy.clone();

        let mut sorted = fitness.to_vec();
        sorted.sort_by(f64::total_cmp);
        let scale = sorted[lambda / 2].abs().max(1.0);
        let ranked: Vec<f64> = fitness
            .iter()
            .zip(candidates)
            .map(|(f, c)| f + self.config.repair_weight * scale * c.repair_distance_sq)
            .collect();
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| ranked[a].total_cmp(&ranked[b]).then(a.cmp(&b)));

        // Best-so-far on the true objective at repaired points.
        let mut improved = false;
        for (c, &f) in candidates.iter().zip(fitness) {
            if f < self.best_f {
                self.best_f = f;
                self.best_x = c.x.clone();
                improved = true;
            }
        }
        self.stale_generations = if improved { 0 } else { self.stale_generations + 1 };

        let steps: Vec<DVector<f64>> = order
            .iter()
            .take(s.weights.len())
            .map(|&i| (&candidates[i].raw - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in s.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }
        self.mean.axpy(self.sigma, &y_w, 1.0);

        // C^{-1/2} y_w
        let inv_sqrt = self.eigenvectors.transpose() * &y_w;
        let inv_sqrt = &self.eigenvectors * inv_sqrt.component_div(&self.axis_lengths);
        self.path_sigma = &self.path_sigma * (1.0 - s.c_sigma)
            + inv_sqrt * (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt();
        let norm_ps = self.path_sigma.norm();
        let gen = (self.generation + 1) as f64;
        let h_sigma = norm_ps / (1.0 - (1.0 - s.c_sigma).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (nf + 1.0)) * s.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.path_c = &self.path_c * (1.0 - s.c_c) + &y_w * (h * (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt());

        let decay = 1.0 - s.c_1 - s.c_mu + (1.0 - h) * s.c_1 * s.c_c * (2.0 - s.c_c);
        let mut cov = &self.covariance * decay;
        cov.ger(s.c_1, &self.path_c, &self.path_c, 1.0);
        for (w, y) in s.weights.iter().zip(&steps) {
            cov.ger(s.c_mu * w, y, y, 1.0);
        }
        self.covariance = (&cov + cov.transpose()) * 0.5;

        self.sigma *= ((s.c_sigma / s.d_sigma) * (norm_ps / s.chi_n - 1.0)).exp();
        self.generation += 1;
        self.evaluations += lambda;
        self.update_eigensystem();
        Ok(())
    }

    fn update_eigensystem(&mut self) {
        let eig = SymmetricEigen::new(self.covariance.clone());
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        let valid = eig.eigenvalues.iter().all(|x| x.is_finite()) && min > 0.0;
        if !valid || max / min > self.config.condition_ceiling || !self.sigma.is_finite() {
            self.restart_shape();
            return;
        }
        self.axis_lengths = eig.eigenvalues.map(f64::sqrt);
        self.eigenvectors = eig.eigenvectors;
    }

    /// Resets covariance, evolution paths and step size; keeps the mean and
    /// the best-so-far record.
    fn restart_shape(&mut self) {
        let n = self.bounds.dim();
        log::warn!(
            "covariance degenerate at generation {}; resetting distribution shape",
            self.generation
        );
        self.covariance = DMatrix::identity(n, n);
        self.eigenvectors = DMatrix::identity(n, n);
        self.axis_lengths = DVector::from_element(n, 1.0);
        self.path_sigma = DVector::zeros(n);
        self.path_c = DVector::zeros(n);
        self.sigma = self.config.sigma0;
        self.restarts += 1;
    }

    /// Smallest eigenvalue of the covariance currently used for sampling.
    pub fn min_eigenvalue(&self) -> f64 {
        self.axis_lengths.min().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Budget,
    Stagnation,
    SigmaFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best_f: f64,
    pub sigma: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord>,
    pub stop: StopReason,
    pub restarts: usize,
}

/// Ask/tell loop until the evaluation budget, stagnation or the step-size
/// floor stops it. Candidates of one generation are evaluated in parallel on
/// the current rayon pool; results do not depend on the thread count.
pub fn optimize<F>(f: F, bounds: BoxBounds, config: CmaConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let mut state = CmaState::initialize(bounds, config.clone())?;
    let mut history = Vec::new();
    let stop = loop {
        if state.evaluations + state.lambda() > config.max_evaluations {
            break StopReason::Budget;
        }
        let candidates = state.ask();
        let fitness = candidates
            .par_iter()
            .map(|c| f(&c.x))
            .collect::<Result<Vec<f64>>>()?;
        state.tell(&candidates, &fitness)?;
        history.push(GenerationRecord {
            generation: state.generation,
            evaluations: state.evaluations,
            best_f: state.best_f,
            sigma: state.sigma,
            mean: state.mean_in_box(),
        });
        if state.stale_generations() >= config.stagnation_generations {
            break StopReason::Stagnation;
        }
        if state.sigma < config.sigma_floor {
            break StopReason::SigmaFloor;
        }
    };
    Ok(OptimizeResult {
        best_x: state.best_x.clone(),
        best_f: state.best_f,
        evaluations: state.evaluations,
        history,
        stop,
        restarts: state.restarts,
    })
}

/// `generation,evaluations,best_f,sigma` CSV.
pub fn write_history_csv<W: Write>(history: &[GenerationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "generation,evaluations,best_f,sigma")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.generation, r.evaluations, r.best_f, r.sigma)?;
    }
    Ok(())
}
