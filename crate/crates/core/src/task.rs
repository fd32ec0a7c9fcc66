//! Randomized obstacle/target tasks and their on-disk format.
//!
//! Tasks are planar: positions vary in x and z while y stays fixed, matching a
//! workspace box that is flat along y.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Obstacle, SafetyParams, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min_m: [f64; 3],
    pub max_m: [f64; 3],
}

impl Default for Workspace {
    /// `[0.45, 7.6] m` in x and z, y pinned at 0.
    fn default() -> Self {
        Self {
            min_m: [0.45, 0.0, 0.45],
            max_m: [7.6, 0.0, 7.6],
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min_m[i] && p[i] <= self.max_m[i])
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        Vec3::from_fn(|i, _| {
            let (lo, hi) = (self.min_m[i], self.max_m[i]);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub workspace: Workspace,
    pub start_m: [f64; 3],
    pub targets_m: Vec<[f64; 3]>,
    pub obstacles: Vec<Obstacle>,
}

const HEADER: &str = "# rcbf task spec; all lengths in meters\n";

impl TaskSpec {
    pub fn start(&self) -> Vec3 {
        Vec3::from(self.start_m)
    }

    pub fn targets(&self) -> Vec<Vec3> {
        self.targets_m.iter().copied().map(Vec3::from).collect()
    }

    /// Start and targets clear of every obstacle (`h > 0` with no delay
    /// margin) and obstacles disjoint once inflated by `r_rob + d_min`.
    pub fn validate(&self, safety: &SafetyParams) -> Result<()> {
        let pad = safety.r_rob + safety.d_min;
        let points = std::iter::once(self.start()).chain(self.targets());
        for (k, p) in points.enumerate() {
            for o in &self.obstacles {
                if o.surface_distance(&p, safety.r_rob) - safety.d_min <= 0.0 {
                    return Err(invalid(format!("point {k} lies inside an inflated obstacle")));
                }
            }
        }
        for (i, a) in self.obstacles.iter().enumerate() {
            for b in &self.obstacles[i + 1..] {
                if (a.center() - b.center()).norm() <= a.radius + b.radius + 2.0 * pad {
                    return Err(invalid("inflated obstacles overlap"));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let body = toml::to_string(self).expect("task spec serializes");
        format!("{HEADER}{body}")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGenConfig {
    pub workspace: Workspace,
    pub obstacle_count: RangeInclusive<usize>,
    pub target_count: RangeInclusive<usize>,
    pub radius_range: RangeInclusive<f64>,
    /// Free space kept between inflated obstacles (m). Must exceed twice the
    /// largest expected margin or the margin can close a passage and strand
    /// a straight-line operator in front of it.
    pub obstacle_gap: f64,
    /// Surface clearance of start and targets from every obstacle (m).
    pub point_clearance: f64,
    /// Minimum spacing between consecutive waypoints (m).
    pub waypoint_spacing: f64,
    pub max_attempts: usize,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        Self {
            workspace: Workspace::default(),
            obstacle_count: 2..=6,
            target_count: 3..=6,
            radius_range: 0.2..=0.8,
            obstacle_gap: 0.8,
            point_clearance: 0.6,
            waypoint_spacing: 1.0,
            max_attempts: 10_000,
        }
    }
}

pub fn generate_task(seed: u64, gen: &TaskGenConfig, safety: &SafetyParams) -> Result<TaskSpec> {
    if gen.obstacle_count.is_empty() || gen.target_count.is_empty() || gen.radius_range.is_empty() {
        return Err(invalid("task generation ranges must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = gen.workspace;
    let pad = safety.r_rob + safety.d_min;
    let n_obstacles = rng.random_range(gen.obstacle_count.clone());
    let n_targets = rng.random_range(gen.target_count.clone());
    let mut attempts = 0;
    let mut bump = || {
        attempts += 1;
        if attempts > gen.max_attempts {
            Err(Error::TaskGeneration { attempts: gen.max_attempts })
        } else {
            Ok(())
        }
    };

    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(n_obstacles);
    while obstacles.len() < n_obstacles {
        bump()?;
        let center = ws.sample(&mut rng);
        let radius = rng.random_range(gen.radius_range.clone());
        let clear = obstacles.iter().all(|o| {
            (o.center() - center).norm() > o.radius + radius + 2.0 * pad + gen.obstacle_gap
        });
        if clear {
            obstacles.push(Obstacle::new(center, radius)?);
        }
    }

    let mut waypoints: Vec<Vec3> = Vec::with_capacity(n_targets + 1);
    while waypoints.len() < n_targets + 1 {
        bump()?;
        let p = ws.sample(&mut rng);
        let clear = obstacles
            .iter()
            .all(|o| o.surface_distance(&p, safety.r_rob) > gen.point_clearance);
        let spaced = waypoints
            .last()
            .is_none_or(|q| (q - p).norm() >= gen.waypoint_spacing);
        if clear && spaced {
            waypoints.push(p);
        }
    }

    let as_arr = |p: &Vec3| [p.x, p.y, p.z];
    let task = TaskSpec {
        seed,
        workspace: ws,
        start_m: as_arr(&waypoints[0]),
        targets_m: waypoints[1..].iter().map(as_arr).collect(),
        obstacles,
    };
    task.validate(safety)?;
    Ok(task)
}

/// `count` tasks seeded deterministically from `seed`.
pub fn generate_tasks(seed: u64, count: usize, gen: &TaskGenConfig, safety: &SafetyParams) -> Result<Vec<TaskSpec>> {
    (0..count)
        .map(|i| generate_task(crate::harness::derive_seed(seed, &[0x7a5c, i as u64]), gen, safety))
        .collect()
}
