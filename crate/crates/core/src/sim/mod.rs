//! Two-dimensional free-surface lattice-Boltzmann pouring scenes.

mod geometry;
mod lattice;

pub use geometry::{point_in_polygon, polyline_distance, BowlShape, CupShape, Outline, Point, WALL_THICKNESS};
pub use lattice::{equilibrium, Cell, LatticeState, CONVERSION_MARGIN, E, INTERFACE_SPEED_LIMIT, MAX_SPEED, NEGATIVE_MASS_LIMIT, OPPOSITE, Q, WEIGHTS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unstable at step {step}, cell ({x}, {y}): {detail}")]
    Unstable { step: u64, x: usize, y: usize, detail: String },
    #[error("negative mass {mass} at step {step}, cell ({x}, {y})")]
    NegativeMass { step: u64, x: usize, y: usize, mass: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub const FILL_LEVELS: [f64; 3] = [0.30, 0.60, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Slow,
    Fast,
    Partial,
}

impl Trajectory {
    pub const ALL: [Trajectory; 3] = [Trajectory::Slow, Trajectory::Fast, Trajectory::Partial];
}

/// Cup tilt in radians at time `t` seconds.
///
/// slow: linear 0 to 110 degrees over 9 s, then hold. fast: the same ramp
/// over 3 s. partial: 0 to 70 degrees over 4 s, hold for 3 s, back to 0 at 10 s.
pub fn pour_trajectory(profile: Trajectory, t: f64) -> f64 {
    let t = t.max(0.0);
    let ramp = |t: f64, t0: f64, t1: f64, a0: f64, a1: f64| a0 + (a1 - a0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    let deg = match profile {
        Trajectory::Slow => ramp(t, 0.0, 9.0, 0.0, 110.0),
        Trajectory::Fast => ramp(t, 0.0, 3.0, 0.0, 110.0),
        Trajectory::Partial => {
            if t <= 7.0 {
                ramp(t, 0.0, 4.0, 0.0, 70.0)
            } else {
                ramp(t, 7.0, 10.0, 70.0, 0.0)
            }
        }
    };
    deg.to_radians()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cup_shape: CupShape,
    pub bowl_shape: BowlShape,
    pub fill_level: f64,
    pub trajectory: Trajectory,
    pub frames: usize,
    pub steps_per_frame: usize,
    /// Lattice steps between cup re-rasterizations.
    pub raster_interval: usize,
    /// Frames per simulated second; maps frame index to trajectory time.
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub tau: f64,
    pub gravity: [f64; 2],
    /// Drives a small initial velocity perturbation of the liquid.
    pub seed: u64,
}

impl SimConfig {
    pub fn new(cup_shape: CupShape, bowl_shape: BowlShape, fill_level: f64, trajectory: Trajectory) -> Self {
        Self {
            cup_shape,
            bowl_shape,
            fill_level,
            trajectory,
            frames: 60,
            steps_per_frame: 320,
            raster_interval: 40,
            fps: 4.0,
            width: 128,
            height: 96,
            tau: 0.8,
            gravity: [0.0, -5e-5],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frames < 1 {
            return bad("frames must be >= 1".into());
        }
        if !FILL_LEVELS.iter().any(|&l| (l - self.fill_level).abs() < 1e-12) {
            return bad(format!("fill_level {} not in {FILL_LEVELS:?}", self.fill_level));
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        if !(self.tau > 0.5) {
            return bad(format!("tau must be > 0.5, got {}", self.tau));
        }
        if self.width < 64 || self.height < 48 {
            return bad(format!("lattice {}x{} smaller than 64x48", self.width, self.height));
        }
        if self.steps_per_frame < 1 || self.raster_interval < 1 {
            return bad("steps_per_frame and raster_interval must be >= 1".into());
        }
        Ok(())
    }

    /// Scene layout scale relative to the 128x96 reference lattice.
    fn layout_scale(&self) -> f64 {
        (self.width as f64 / 128.0).min(self.height as f64 / 96.0)
    }

    /// Upright cup with its pour lip at x = 50 and its bottom at y = 40.
    fn cup_base(&self) -> Outline {
        let k = self.layout_scale();
        let outline = self.cup_shape.outline();
        let dx = 50.0 - outline.right_lip()[0];
        outline.map(|p| [(p[0] + dx) * k, (p[1] + 40.0) * k])
    }

    /// Cup outline in lattice coordinates at tilt `angle`.
    pub fn cup_at(&self, angle: f64) -> Outline {
        let base = self.cup_base();
        base.rotate_cw(base.right_lip(), angle)
    }

    pub fn bowl(&self) -> Outline {
        let k = self.layout_scale();
        self.bowl_shape.outline().map(|p| [66.0 * k + p[0] * k, 3.0 * k + p[1] * k])
    }

    /// Solid mask: domain border, bowl walls and the cup at `angle`.
    pub fn obstacles(&self, angle: f64) -> Vec<bool> {
        let cup = self.cup_at(angle);
        let bowl = self.bowl();
        let (w, h) = (self.width, self.height);
        (0..w * h)
            .map(|c| {
                let (x, y) = (c % w, c / w);
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                x == 0 || y == 0 || x + 1 == w || y + 1 == h || cup.is_solid(p) || bowl.is_solid(p)
            })
            .collect()
    }

    /// Initial lattice: upright cup filled bottom-up to `fill_level` of its
    /// interior cell count; the partially filled top row is interface.
    pub fn initial_state(&self) -> Result<LatticeState> {
        self.validate()?;
        let mut state = LatticeState::new(self.width, self.height, self.tau, self.gravity);
        state.set_obstacles(&self.obstacles(0.0));
        let cup = self.cup_base();
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if state.flag(x, y) != Cell::Obstacle && cup.contains([x as f64 + 0.5, y as f64 + 0.5]) {
                    rows[y].push((x, y));
                }
            }
        }
        let interior: usize = rows.iter().map(Vec::len).sum();
        let mut remaining = self.fill_level * interior as f64;
        for row in rows.iter().filter(|r| !r.is_empty()) {
            if remaining <= 0.0 {
                break;
            }
            let cap = row.len() as f64;
            if remaining >= cap {
                row.iter().for_each(|&(x, y)| state.set_fluid(x, y));
                remaining -= cap;
            } else {
                let share = remaining / cap;
                row.iter().for_each(|&(x, y)| state.set_interface(x, y, share));
                remaining = 0.0;
            }
        }
        if remaining > 1e-9 {
            return Err(SimError::InvalidConfig("cup interior too small for fill level".into()));
        }
        state.fix_topology();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for y in 0..self.height {
            for x in 0..self.width {
                if matches!(state.flag(x, y), Cell::Fluid | Cell::Interface) {
                    let u = [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4)];
                    state.set_velocity(x, y, u);
                }
            }
        }
        Ok(state)
    }
}

/// One sampled frame of a pouring simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub index: usize,
    pub time: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major fill fractions, row 0 at the bottom (y up).
    pub fill: Vec<f32>,
    pub cup: Outline,
    pub bowl: Outline,
    pub cup_angle: f64,
    pub pivot: Point,
}

impl SimFrame {
    pub fn fill_at(&self, x: usize, y: usize) -> f32 {
        self.fill[y * self.width + x]
    }

    pub fn total_fill(&self) -> f64 {
        self.fill.iter().map(|&v| v as f64).sum()
    }

    /// The same frame with all liquid removed.
    pub fn without_liquid(&self) -> SimFrame {
        SimFrame { fill: vec![0.0; self.fill.len()], ..self.clone() }
    }
}

fn snapshot(cfg: &SimConfig, state: &LatticeState, index: usize, angle: f64) -> SimFrame {
    let cup = cfg.cup_at(angle);
    SimFrame {
        index,
        time: index as f64 / cfg.fps,
        width: state.width,
        height: state.height,
        fill: state.fill_grid().into_iter().map(|v| v as f32).collect(),
        pivot: cup.right_lip(),
        cup,
        bowl: cfg.bowl(),
        cup_angle: angle,
    }
}

/// Run a full pouring simulation and sample `cfg.frames` frames.
pub fn run_simulation(cfg: &SimConfig) -> Result<Vec<SimFrame>> {
    let mut state = cfg.initial_state()?;
    let mut frames = Vec::with_capacity(cfg.frames);
    frames.push(snapshot(cfg, &state, 0, 0.0));
    for k in 1..cfg.frames {
        for s in 0..cfg.steps_per_frame {
            if s % cfg.raster_interval == 0 {
                let t = (k - 1) as f64 / cfg.fps + (s + cfg.raster_interval).min(cfg.steps_per_frame) as f64 / (cfg.fps * cfg.steps_per_frame as f64);
                state.set_obstacles(&cfg.obstacles(pour_trajectory(cfg.trajectory, t)));
            }
            state.step().map_err(|e| SimError::Frame { frame: k, source: Box::new(e) })?;
        }
        let angle = pour_trajectory(cfg.trajectory, k as f64 / cfg.fps);
        state.set_obstacles(&cfg.obstacles(angle));
        frames.push(snapshot(cfg, &state, k, angle));
    }
    Ok(frames)
}

/// Write a frame's fill grid as an 8-bit PGM, top row first.
pub fn write_fill_pgm(frame: &SimFrame, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(frame.fill.len());
    for y in (0..frame.height).rev() {
        for x in 0..frame.width {
            bytes.push((frame.fill_at(x, y).clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8);
        }
    }
    crate::pnm::write_pgm(path, frame.width, frame.height, &bytes)?;
    Ok(())
}
