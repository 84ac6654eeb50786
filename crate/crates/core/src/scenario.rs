//! Training and test scenarios.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::{segment_targets, PhasedPlan, ReferenceProgram, SegmentCaps};
use crate::ship::{Pose, WindCondition};

const DEG: f64 = PI / 180.0;

/// Target `(x \[m\], y \[m\], psi \[deg\])` of each training episode, numbered
/// from 1.
pub const TRAINING_EPISODES: [[f64; 3]; 11] = [
    [0.0, 0.0, 0.0],
    [4.0, 0.0, 0.0],
    [-4.0, 0.0, 0.0],
    [0.0, 4.0, 0.0],
    [0.0, -4.0, 0.0],
    [0.0, 0.0, 30.0],
    [0.0, 0.0, -30.0],
    [4.0, 4.0, 0.0],
    [4.0, 0.0, 30.0],
    [0.0, 4.0, 30.0],
    [4.0, 4.0, 30.0],
];

/// Corners `(x \[m\], y \[m\], psi \[deg\])` of the four-corner test, visited in
/// order from the origin.
pub const FOUR_CORNERS: [[f64; 3]; 5] = [
    [5.0, 0.0, 0.0],
    [5.0, 5.0, 0.0],
    [5.0, 5.0, 45.0],
    [5.0, 0.0, 45.0],
    [0.0, 0.0, 0.0],
];

/// One closed-loop episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub wind: WindCondition,
    /// The ship starts at rest here with hover actuators.
    pub initial_pose: Pose,
    pub program: ReferenceProgram,
}

/// How large set-point changes are split into waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSettings {
    /// Time between successive waypoints \[s\].
    pub interval: f64,
    /// Largest position step per waypoint \[m\].
    pub d_pos: f64,
    /// Largest heading step per waypoint \[deg\].
    pub d_psi_deg: f64,
}

impl Default for SegmentationSettings {
    fn default() -> Self {
        Self {
            interval: 20.0,
            d_pos: 4.0,
            d_psi_deg: 30.0,
        }
    }
}

impl SegmentationSettings {
    pub fn caps(&self) -> SegmentCaps {
        SegmentCaps {
            d_pos: self.d_pos,
            d_psi: self.d_psi_deg * DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Every episode under every wind direction.
    CrossProduct,
    /// Episode `i` (0-based within the selection) under direction
    /// `i mod len(directions)`.
    OnePerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingScenarioConfig {
    /// 1-based episode numbers.
    pub episodes: Vec<usize>,
    pub wind_directions_deg: Vec<f64>,
    pub wind_speed: f64,
    pub duration: f64,
    pub dt: f64,
    pub pairing: Pairing,
    pub segmentation: SegmentationSettings,
}

impl Default for TrainingScenarioConfig {
    fn default() -> Self {
        Self {
            episodes: (1..=TRAINING_EPISODES.len()).collect(),
            wind_directions_deg: (0..8).map(|k| 45.0 * k as f64).collect(),
            wind_speed: 1.0,
            duration: 120.0,
            dt: 0.1,
            pairing: Pairing::CrossProduct,
            segmentation: SegmentationSettings::default(),
        }
    }
}

fn episode_target(episode: usize) -> Result<Vector3<f64>> {
    let t = episode
        .checked_sub(1)
        .and_then(|i| TRAINING_EPISODES.get(i))
        .ok_or_else(|| Error::Config(format!("episode {episode} out of range 1..={}", TRAINING_EPISODES.len())))?;
    Ok(Vector3::new(t[0], t[1], t[2] * DEG))
}

/// One training episode: from rest at the origin to the episode target.
pub fn training_scenario(episode: usize, direction_deg: f64, cfg: &TrainingScenarioConfig) -> Result<ScenarioSpec> {
    if !(cfg.wind_speed >= 0.0 && cfg.wind_speed.is_finite()) {
        return Err(Error::Config(format!("wind speed {} must be nonnegative", cfg.wind_speed)));
    }
    let start = Vector3::zeros();
    let plan = segment_targets(&start, &episode_target(episode)?, cfg.segmentation.interval, &cfg.segmentation.caps())?;
    Ok(ScenarioSpec {
        name: format!("ep{episode:02}_wind{direction_deg:03}"),
        duration: cfg.duration,
        dt: cfg.dt,
        wind: WindCondition::new(cfg.wind_speed, direction_deg * DEG),
        initial_pose: start,
        program: ReferenceProgram::Plan(plan),
    })
}

/// Training set, episode-major: all directions of the first selected
/// episode, then the next episode, and so on.
pub fn training_scenarios(cfg: &TrainingScenarioConfig) -> Result<Vec<ScenarioSpec>> {
    if cfg.wind_directions_deg.is_empty() {
        return Err(Error::Config("at least one wind direction is required".into()));
    }
    let mut out = Vec::new();
    for (i, &episode) in cfg.episodes.iter().enumerate() {
        match cfg.pairing {
            Pairing::CrossProduct => {
                for &dir in &cfg.wind_directions_deg {
                    out.push(training_scenario(episode, dir, cfg)?);
                }
            }
            Pairing::OnePerEpisode => {
                let dir = cfg.wind_directions_deg[i % cfg.wind_directions_deg.len()];
                out.push(training_scenario(episode, dir, cfg)?);
            }
        }
    }
    Ok(out)
}

/// Settings of the four-corner test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourCornerConfig {
    pub wind_speed: f64,
    pub wind_direction_deg: f64,
    pub duration: f64,
    pub dt: f64,
    /// Settling tolerance on the filtered reference: position \[m\] and
    /// speed \[m/s\].
    pub settle_pos: f64,
    /// Settling tolerance on heading \[deg\] and yaw rate [deg/s].
    pub settle_psi_deg: f64,
    pub phase_timeout: f64,
    pub segmentation: SegmentationSettings,
}

impl Default for FourCornerConfig {
    fn default() -> Self {
        Self {
            wind_speed: 0.5,
            wind_direction_deg: 30.0,
            duration: 600.0,
            dt: 0.1,
            settle_pos: 0.1,
            settle_psi_deg: 1.0,
            phase_timeout: 120.0,
            segmentation: SegmentationSettings::default(),
        }
    }
}

pub fn four_corner_scenario(cfg: &FourCornerConfig) -> ScenarioSpec {
    ScenarioSpec {
        name: "four_corner".into(),
        duration: cfg.duration,
        dt: cfg.dt,
        wind: WindCondition::new(cfg.wind_speed, cfg.wind_direction_deg * DEG),
        initial_pose: Vector3::zeros(),
        program: ReferenceProgram::Phased(PhasedPlan {
            corners: FOUR_CORNERS.iter().map(|c| [c[0], c[1], c[2] * DEG]).collect(),
            interval: cfg.segmentation.interval,
            caps: cfg.segmentation.caps(),
            settle_pos: cfg.settle_pos,
            settle_psi: cfg.settle_psi_deg * DEG,
            phase_timeout: cfg.phase_timeout,
        }),
    }
}
