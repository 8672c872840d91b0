//! Headless 2D aquatic navigation environment.
//!
//! A differential-drive boat with linear drag navigates a bounded arena toward
//! randomly sampled obstacle-free targets under a sinusoidal-plus-gust wave
//! disturbance. Observations are 15 frontal lidar beams plus the target in
//! polar form; control runs at 10 Hz. (seed, action sequence) fully determines
//! a trajectory.

use crate::error::{Error, Result};
use crate::property::{LIDAR_BEAMS, OBS_DIM};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONTROL_DT: f64 = 0.1; // 10 Hz decision frequency
pub const MAX_SPEED: f64 = 3.0; // m/s

/// Forward acceleration per unit mean motor power (m/s^2) and linear drag (1/s).
/// Steady-state speed at full power is ACCEL_GAIN / DRAG = 3 m/s.
const ACCEL_GAIN: f64 = 6.0;
const DRAG: f64 = 2.0;
/// Angular acceleration per unit power differential and angular drag.
const TURN_GAIN: f64 = 8.0;
const TURN_DRAG: f64 = 4.0;
const WAVE_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Circle { x: f64, y: f64, r: f64 },
}

impl Obstacle {
    fn distance_to_point(&self, px: f64, py: f64) -> f64 {
        match *self {
            Obstacle::Rect { x, y, w, h } => {
                let dx = (x - px).max(0.0).max(px - (x + w));
                let dy = (y - py).max(0.0).max(py - (y + h));
                (dx * dx + dy * dy).sqrt()
            }
            Obstacle::Circle { x, y, r } => ((px - x).hypot(py - y) - r).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    pub width: f64,
    pub height: f64,
    pub obstacles: Vec<Obstacle>,
    /// Spawn pose: x, y, heading (radians).
    pub spawn: (f64, f64, f64),
    pub wave_amplitude: f64,
    pub gust_sigma: f64,
    pub timeout_steps: usize,
    pub lidar_range: f64,
    pub reach_radius: f64,
    pub boat_radius: f64,
    /// Action space the arena is meant for: "any", "discrete" or "continuous".
    pub action_space: String,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            width: 10.0,
            height: 10.0,
            obstacles: vec![
                Obstacle::Rect { x: 2.0, y: 6.5, w: 1.6, h: 1.6 },
                Obstacle::Circle { x: 7.2, y: 6.8, r: 0.8 },
                Obstacle::Rect { x: 5.5, y: 2.2, w: 1.6, h: 1.2 },
            ],
            spawn: (1.2, 1.2, std::f64::consts::FRAC_PI_4),
            wave_amplitude: 0.05,
            gust_sigma: 0.02,
            timeout_steps: 500,
            lidar_range: 5.0,
            reach_radius: 0.4,
            boat_radius: 0.25,
            action_space: "any".into(),
        }
    }
}

impl ArenaConfig {
    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Validation("arena bounds must be positive".into()));
        }
        if self.timeout_steps == 0 {
            return Err(Error::Validation("timeout_steps must be positive".into()));
        }
        if self.lidar_range <= 0.0 || self.reach_radius <= 0.0 || self.boat_radius <= 0.0 {
            return Err(Error::Validation("ranges and radii must be positive".into()));
        }
        if self.wave_amplitude < 0.0 || self.gust_sigma < 0.0 {
            return Err(Error::Validation("wave parameters must be nonnegative".into()));
        }
        if !matches!(self.action_space.as_str(), "any" | "discrete" | "continuous") {
            return Err(Error::Validation(format!(
                "action_space must be any, discrete or continuous, got {:?}",
                self.action_space
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ArenaConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("arena config {}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("arena config serialization: {}", e)))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous { left: f64, right: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Reached,
    Crashed,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Reached => "reached",
            Outcome::Crashed => "crashed",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub lidar: [f64; LIDAR_BEAMS],
    pub target_heading: f64,
    pub target_distance: f64,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.lidar);
        v.push(self.target_heading);
        v.push(self.target_distance);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

/// Fixed per-episode wave field: directions, frequencies and phases are drawn
/// once at reset, gusts are drawn per step.
#[derive(Debug, Clone)]
struct WaveModel {
    directions: [(f64, f64); WAVE_COMPONENTS],
    frequencies: [f64; WAVE_COMPONENTS],
    phases: [f64; WAVE_COMPONENTS],
}

impl WaveModel {
    fn sample(rng: &mut impl Rng) -> Self {
        let mut directions = [(0.0, 0.0); WAVE_COMPONENTS];
        let mut frequencies = [0.0; WAVE_COMPONENTS];
        let mut phases = [0.0; WAVE_COMPONENTS];
        for k in 0..WAVE_COMPONENTS {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            directions[k] = (a.cos(), a.sin());
            frequencies[k] = rng.gen_range(0.3..1.5);
            phases[k] = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        WaveModel { directions, frequencies, phases }
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub angular: f64,
    pub target: (f64, f64),
    pub step: usize,
    /// Current phase angle of each wave component.
    pub wave_phase: [f64; WAVE_COMPONENTS],
}

pub struct Env {
    cfg: ArenaConfig,
    state: EnvState,
    wave: WaveModel,
    rng: ChaCha8Rng,
    done: bool,
    prev_dist: f64,
}

/// Discrete action table, index 0..=6: Strong Right, Right, Weak Right, None,
/// Weak Left, Left, Strong Left. Antisymmetric: powers(i) = swap(powers(6-i)).
const DISCRETE_POWERS: [(f64, f64); 7] = [
    (1.0, 0.0),
    (0.9, 0.3),
    (0.8, 0.55),
    (0.7, 0.7),
    (0.55, 0.8),
    (0.3, 0.9),
    (0.0, 1.0),
];

/// Map a discrete action index to (left_power, right_power).
pub fn apply_discrete(index: usize) -> Result<(f64, f64)> {
    DISCRETE_POWERS
        .get(index)
        .copied()
        .ok_or_else(|| Error::Usage(format!("discrete action index {} out of range 0..=6", index)))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Distance along a ray to the nearest wall/obstacle hit, or infinity.
fn ray_distance(cfg: &ArenaConfig, ox: f64, oy: f64, angle: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut best = f64::INFINITY;
    // arena walls x=0, x=w, y=0, y=h
    for (wall, origin, dir) in [(0.0, ox, dx), (cfg.width, ox, dx), (0.0, oy, dy), (cfg.height, oy, dy)]
    {
        if dir.abs() > 1e-12 {
            let t = (wall - origin) / dir;
            if t > 0.0 {
                best = best.min(t);
            }
        }
    }
    for obs in &cfg.obstacles {
        match *obs {
            Obstacle::Rect { x, y, w, h } => {
                // slab method
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for (lo, hi, origin, dir) in [(x, x + w, ox, dx), (y, y + h, oy, dy)] {
                    if dir.abs() < 1e-12 {
                        if origin < lo || origin > hi {
                            tmin = f64::INFINITY;
                            break;
                        }
                    } else {
                        let t1 = (lo - origin) / dir;
                        let t2 = (hi - origin) / dir;
                        tmin = tmin.max(t1.min(t2));
                        tmax = tmax.min(t1.max(t2));
                    }
                }
                if tmin <= tmax && tmax > 0.0 {
                    best = best.min(tmin.max(0.0));
                }
            }
            Obstacle::Circle { x, y, r } => {
                let (cx, cy) = (x - ox, y - oy);
                let proj = cx * dx + cy * dy;
                let d2 = cx * cx + cy * cy - proj * proj;
                if d2 <= r * r {
                    let t = proj - (r * r - d2).sqrt();
                    if t > 0.0 {
                        best = best.min(t);
                    }
                }
            }
        }
    }
    best
}

/// 15 frontal beams, beam 0 at -90 degrees (the boat's left), beam 14 at +90
/// (right), normalized by max range and clamped to 1.
pub fn lidar_scan(cfg: &ArenaConfig, state: &EnvState) -> [f64; LIDAR_BEAMS] {
    let mut scan = [1.0; LIDAR_BEAMS];
    let step = std::f64::consts::PI / (LIDAR_BEAMS - 1) as f64;
    for (i, value) in scan.iter_mut().enumerate() {
        let relative = -std::f64::consts::FRAC_PI_2 + i as f64 * step;
        // -90 deg is the leftmost beam, so relative angles sweep clockwise
        let angle = state.heading - relative;
        let d = ray_distance(cfg, state.x, state.y, angle);
        *value = (d / cfg.lidar_range).min(1.0);
    }
    scan
}

impl Env {
    pub fn new(cfg: ArenaConfig) -> Result<Self> {
        cfg.validate()?;
        let state = EnvState {
            x: cfg.spawn.0,
            y: cfg.spawn.1,
            heading: cfg.spawn.2,
            speed: 0.0,
            angular: 0.0,
            target: (0.0, 0.0),
            step: 0,
            wave_phase: [0.0; WAVE_COMPONENTS],
        };
        Ok(Env {
            cfg,
            state,
            wave: WaveModel {
                directions: [(1.0, 0.0); WAVE_COMPONENTS],
                frequencies: [0.0; WAVE_COMPONENTS],
                phases: [0.0; WAVE_COMPONENTS],
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            done: true,
            prev_dist: 0.0,
        })
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn point_free(&self, x: f64, y: f64, margin: f64) -> bool {
        if x < margin || y < margin || x > self.cfg.width - margin || y > self.cfg.height - margin {
            return false;
        }
        self.cfg.obstacles.iter().all(|o| o.distance_to_point(x, y) > margin)
    }

    fn sample_target(&mut self) -> Result<(f64, f64)> {
        let margin = self.cfg.reach_radius + self.cfg.boat_radius;
        let min_from_spawn = 2.0 * self.cfg.reach_radius;
        for _ in 0..500 {
            let x = self.rng.gen_range(0.0..self.cfg.width);
            let y = self.rng.gen_range(0.0..self.cfg.height);
            if self.point_free(x, y, margin)
                && (x - self.cfg.spawn.0).hypot(y - self.cfg.spawn.1) > min_from_spawn
            {
                return Ok((x, y));
            }
        }
        Err(Error::Validation("no feasible obstacle-free target region in arena".into()))
    }

    /// Place a hand-designed target instead of sampling one (population evaluation).
    pub fn reset_with_target(&mut self, seed: u64, target: (f64, f64)) -> Result<Observation> {
        self.reset(seed)?;
        let margin = self.cfg.reach_radius + self.cfg.boat_radius;
        if !self.point_free(target.0, target.1, margin) {
            return Err(Error::Validation(format!(
                "target ({}, {}) is not obstacle-free",
                target.0, target.1
            )));
        }
        self.state.target = target;
        self.prev_dist = self.target_distance_norm();
        Ok(self.observe())
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = EnvState {
            x: self.cfg.spawn.0,
            y: self.cfg.spawn.1,
            heading: self.cfg.spawn.2,
            speed: 0.0,
            angular: 0.0,
            target: (0.0, 0.0),
            step: 0,
            wave_phase: [0.0; WAVE_COMPONENTS],
        };
        if !self.point_free(self.state.x, self.state.y, self.cfg.boat_radius) {
            return Err(Error::Validation("spawn pose collides with arena geometry".into()));
        }
        self.wave = WaveModel::sample(&mut self.rng);
        self.state.wave_phase = self.wave.phases;
        self.state.target = self.sample_target()?;
        self.done = false;
        self.prev_dist = self.target_distance_norm();
        Ok(self.observe())
    }

    fn target_distance_norm(&self) -> f64 {
        let d = (self.state.x - self.state.target.0).hypot(self.state.y - self.state.target.1);
        (d / self.cfg.diagonal()).clamp(0.0, 1.0)
    }

    pub fn observe(&self) -> Observation {
        let bearing = (self.state.target.1 - self.state.y).atan2(self.state.target.0 - self.state.x);
        let heading_err = wrap_angle(bearing - self.state.heading) / std::f64::consts::PI;
        Observation {
            lidar: lidar_scan(&self.cfg, &self.state),
            target_heading: heading_err.clamp(-1.0, 1.0),
            target_distance: self.target_distance_norm(),
        }
    }

    /// Bounded wave force (m/s drift) and torque for the current step.
    pub fn wave_disturbance(&mut self) -> ((f64, f64), f64) {
        if self.cfg.wave_amplitude == 0.0 {
            return ((0.0, 0.0), 0.0);
        }
        let t = self.state.step as f64 * CONTROL_DT;
        let mut fx = 0.0;
        let mut fy = 0.0;
        let mut torque = 0.0;
        for k in 0..WAVE_COMPONENTS {
            let phase = self.wave.frequencies[k] * t * std::f64::consts::TAU + self.wave.phases[k];
            self.state.wave_phase[k] = phase;
            let s = phase.sin() * self.cfg.wave_amplitude;
            fx += s * self.wave.directions[k].0;
            fy += s * self.wave.directions[k].1;
            torque += 0.3 * s * self.wave.directions[k].1;
        }
        if self.cfg.gust_sigma > 0.0 {
            let gust = Normal::new(0.0, self.cfg.gust_sigma).unwrap();
            fx += gust.sample(&mut self.rng);
            fy += gust.sample(&mut self.rng);
        }
        let cap = self.cfg.wave_amplitude + 3.0 * self.cfg.gust_sigma;
        ((fx.clamp(-cap, cap), fy.clamp(-cap, cap)), torque.clamp(-cap, cap))
    }

    fn collided(&self) -> bool {
        let r = self.cfg.boat_radius;
        let s = &self.state;
        if s.x < r || s.y < r || s.x > self.cfg.width - r || s.y > self.cfg.height - r {
            return true;
        }
        self.cfg.obstacles.iter().any(|o| o.distance_to_point(s.x, s.y) < r)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let (left, right) = match action {
            Action::Discrete(i) => apply_discrete(*i)?,
            Action::Continuous { left, right } => (left.clamp(0.0, 1.0), right.clamp(0.0, 1.0)),
        };
        let ((wx, wy), wt) = self.wave_disturbance();
        let dt = CONTROL_DT;
        let s = &mut self.state;
        s.speed += (ACCEL_GAIN * (left + right) / 2.0 - DRAG * s.speed) * dt;
        s.speed = s.speed.clamp(0.0, MAX_SPEED);
        s.angular += (TURN_GAIN * (right - left) - TURN_DRAG * s.angular + wt) * dt;
        s.heading = wrap_angle(s.heading + s.angular * dt);
        s.x += s.speed * s.heading.cos() * dt + wx * dt;
        s.y += s.speed * s.heading.sin() * dt + wy * dt;
        s.step += 1;

        let dist = self.target_distance_norm();
        let reached = (self.state.x - self.state.target.0).hypot(self.state.y - self.state.target.1)
            <= self.cfg.reach_radius;
        let (reward, outcome) = if reached {
            (1.0, Outcome::Reached)
        } else if self.collided() {
            (-1.0, Outcome::Crashed)
        } else if self.state.step >= self.cfg.timeout_steps {
            (0.0, Outcome::Timeout)
        } else {
            (self.prev_dist - dist, Outcome::Running)
        };
        self.prev_dist = dist;
        self.done = outcome != Outcome::Running;
        Ok(StepResult { observation: self.observe(), reward, done: self.done, outcome })
    }
}
