//! D2Q9 BGK lattice with free-surface mass tracking.

use super::{Result, SimError};
use std::collections::VecDeque;

pub const Q: usize = 9;
pub const E: [[i32; 2]; Q] = [[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1], [1, 1], [-1, 1], [-1, -1], [1, -1]];
pub const OPPOSITE: [usize; Q] = [0, 3, 4, 1, 2, 7, 8, 5, 6];
pub const WEIGHTS: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
pub const MAX_SPEED: f64 = 0.3;
/// Interface cells are slowed to this speed; thin falling films otherwise
/// gain momentum faster than their mass can follow.
pub const INTERFACE_SPEED_LIMIT: f64 = 0.2;
/// Interface cells convert once their mass leaves [-k*rho, (1+k)*rho].
pub const CONVERSION_MARGIN: f64 = 1e-3;
/// Interface mass below this is reported as a stability failure.
pub const NEGATIVE_MASS_LIMIT: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Cell {
    Fluid = 0,
    Interface = 1,
    Gas = 2,
    Obstacle = 3,
}

impl Cell {
    fn wet(self) -> bool {
        matches!(self, Cell::Fluid | Cell::Interface)
    }
}

/// D2Q9 BGK equilibrium.
///
/// # Panics
/// If `rho <= 0` or `|u| >= MAX_SPEED`.
pub fn equilibrium(rho: f64, u: [f64; 2]) -> [f64; Q] {
    let uu = u[0] * u[0] + u[1] * u[1];
    assert!(rho > 0.0 && uu < MAX_SPEED * MAX_SPEED, "equilibrium outside its domain: rho={rho}, u={u:?}");
    eq_unchecked(rho, u)
}

fn eq_unchecked(rho: f64, u: [f64; 2]) -> [f64; Q] {
    let uu = u[0] * u[0] + u[1] * u[1];
    let mut f = [0.0; Q];
    for i in 0..Q {
        let eu = E[i][0] as f64 * u[0] + E[i][1] as f64 * u[1];
        f[i] = WEIGHTS[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * uu);
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub width: usize,
    pub height: usize,
    pub tau: f64,
    pub gravity: [f64; 2],
    pub time_step: u64,
    flags: Vec<Cell>,
    f: Vec<f64>,
    mass: Vec<f64>,
    rho: Vec<f64>,
    vel: Vec<[f64; 2]>,
    scratch: Vec<f64>,
}

impl LatticeState {
    /// A box of gas cells surrounded by a one-cell obstacle border.
    pub fn new(width: usize, height: usize, tau: f64, gravity: [f64; 2]) -> Self {
        let n = width * height;
        let mut s = Self {
            width,
            height,
            tau,
            gravity,
            time_step: 0,
            flags: vec![Cell::Gas; n],
            f: vec![0.0; n * Q],
            mass: vec![0.0; n],
            rho: vec![1.0; n],
            vel: vec![[0.0; 2]; n],
            scratch: vec![0.0; n * Q],
        };
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    s.flags[y * width + x] = Cell::Obstacle;
                }
            }
        }
        s
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    fn neighbor(&self, c: usize, i: usize) -> Option<usize> {
        let (x, y) = ((c % self.width) as i64 + E[i][0] as i64, (c / self.width) as i64 + E[i][1] as i64);
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height).then(|| y as usize * self.width + x as usize)
    }

    pub fn flags(&self) -> &[Cell] {
        &self.flags
    }

    pub fn flag(&self, x: usize, y: usize) -> Cell {
        self.flags[self.idx(x, y)]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn density(&self, x: usize, y: usize) -> f64 {
        self.rho[self.idx(x, y)]
    }

    pub fn velocity(&self, x: usize, y: usize) -> [f64; 2] {
        self.vel[self.idx(x, y)]
    }

    pub fn distributions(&self, x: usize, y: usize) -> &[f64] {
        let c = self.idx(x, y);
        &self.f[c * Q..(c + 1) * Q]
    }

    /// Total liquid mass over non-obstacle cells.
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().zip(&self.flags).filter(|(_, f)| **f != Cell::Obstacle).map(|(m, _)| m).sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        (0..self.flags.len())
            .filter(|&c| self.flags[c].wet())
            .map(|c| 0.5 * self.mass[c] * (self.vel[c][0].powi(2) + self.vel[c][1].powi(2)))
            .sum()
    }

    /// Fill fraction per cell: 1 on fluid, mass/rho on interface, 0 elsewhere.
    pub fn fill(&self, c: usize) -> f64 {
        match self.flags[c] {
            Cell::Fluid => 1.0,
            Cell::Interface => (self.mass[c] / self.rho[c]).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    pub fn fill_grid(&self) -> Vec<f64> {
        (0..self.flags.len()).map(|c| self.fill(c)).collect()
    }

    fn set_equilibrium(&mut self, c: usize, rho: f64, u: [f64; 2]) {
        self.f[c * Q..(c + 1) * Q].copy_from_slice(&eq_unchecked(rho, u));
        self.rho[c] = rho;
        self.vel[c] = u;
    }

    /// Make a cell fluid at rest with unit density and mass.
    pub fn set_fluid(&mut self, x: usize, y: usize) {
        let c = self.idx(x, y);
        self.flags[c] = Cell::Fluid;
        self.mass[c] = 1.0;
        self.set_equilibrium(c, 1.0, [0.0; 2]);
    }

    /// Make a cell an interface at rest holding `mass`.
    pub fn set_interface(&mut self, x: usize, y: usize, mass: f64) {
        let c = self.idx(x, y);
        self.flags[c] = Cell::Interface;
        self.mass[c] = mass;
        self.set_equilibrium(c, 1.0, [0.0; 2]);
    }

    pub fn set_gas(&mut self, x: usize, y: usize) {
        let c = self.idx(x, y);
        self.flags[c] = Cell::Gas;
        self.mass[c] = 0.0;
    }

    /// Set a cell's velocity, keeping its density, by resetting it to equilibrium.
    pub fn set_velocity(&mut self, x: usize, y: usize, u: [f64; 2]) {
        let c = self.idx(x, y);
        let rho = self.rho[c];
        self.set_equilibrium(c, rho, u);
    }

    pub fn set_obstacle(&mut self, x: usize, y: usize) {
        let c = self.idx(x, y);
        self.flags[c] = Cell::Obstacle;
        self.mass[c] = 0.0;
    }

    /// Convert fluid cells touching gas into interface cells.
    pub fn fix_topology(&mut self) {
        for c in 0..self.flags.len() {
            if self.flags[c] == Cell::Fluid && (0..Q).any(|i| self.neighbor(c, i).is_some_and(|n| self.flags[n] == Cell::Gas)) {
                self.flags[c] = Cell::Interface;
            }
        }
    }

    /// Cells violating the closed-interface rule (fluid next to gas).
    pub fn topology_violations(&self) -> Vec<(usize, usize)> {
        (0..self.flags.len())
            .filter(|&c| self.flags[c] == Cell::Fluid && (1..Q).any(|i| self.neighbor(c, i).is_some_and(|n| self.flags[n] == Cell::Gas)))
            .map(|c| (c % self.width, c / self.width))
            .collect()
    }

    /// Replace the obstacle layout. Liquid mass in newly solid cells moves to
    /// the nearest interface cell; newly freed cells start as gas.
    pub fn set_obstacles(&mut self, solid: &[bool]) {
        assert_eq!(solid.len(), self.flags.len(), "obstacle mask size");
        let mut displaced = Vec::new();
        let mut newly = vec![false; solid.len()];
        for c in 0..solid.len() {
            match (solid[c], self.flags[c]) {
                (true, Cell::Obstacle) | (false, Cell::Gas | Cell::Fluid | Cell::Interface) => {}
                (true, flag) => {
                    if flag.wet() && self.mass[c] != 0.0 {
                        displaced.push((c, self.mass[c]));
                    }
                    self.flags[c] = Cell::Obstacle;
                    self.mass[c] = 0.0;
                    newly[c] = true;
                }
                (false, Cell::Obstacle) => {
                    self.flags[c] = Cell::Gas;
                    self.mass[c] = 0.0;
                    self.set_equilibrium(c, 1.0, [0.0; 2]);
                }
            }
        }
        for (c, m) in displaced {
            if let Some(target) = self.nearest_free(c, &newly) {
                if self.flags[target] == Cell::Gas {
                    self.flags[target] = Cell::Interface;
                    self.set_equilibrium(target, 1.0, [0.0; 2]);
                }
                self.mass[target] += m;
            }
        }
        self.fix_topology();
    }

    /// Nearest interface cell reachable through wet or newly solidified
    /// cells; failing that, the first gas cell bordering that region, then
    /// the first fluid cell.
    fn nearest_free(&self, start: usize, newly: &[bool]) -> Option<usize> {
        let mut seen = vec![false; self.flags.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let (mut gas, mut fluid) = (None, None);
        while let Some(c) = queue.pop_front() {
            match self.flags[c] {
                Cell::Interface => return Some(c),
                Cell::Gas => {
                    gas.get_or_insert(c);
                    continue;
                }
                Cell::Fluid => {
                    fluid.get_or_insert(c);
                }
                Cell::Obstacle => {}
            }
            for i in 1..Q {
                if let Some(nb) = self.neighbor(c, i) {
                    if !seen[nb] && (self.flags[nb] != Cell::Obstacle || newly[nb]) {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        gas.or(fluid)
    }

    /// One stream / collide / convert cycle.
    pub fn step(&mut self) -> Result<()> {
        let n = self.flags.len();
        let fill: Vec<f64> = (0..n).map(|c| self.fill(c)).collect();
        let mut fnew = std::mem::take(&mut self.scratch);
        for c in 0..n {
            let flag = self.flags[c];
            if !flag.wet() {
                continue;
            }
            let mut dm = 0.0;
            let base = c * Q;
            fnew[base] = self.f[base];
            for i in 1..Q {
                let o = OPPOSITE[i];
                // Source cell for the population travelling along e_i.
                let s = self.neighbor(c, o).expect("wet cells are inside the obstacle border");
                let incoming = self.f[s * Q + i];
                let outgoing = self.f[base + o];
                fnew[base + i] = match self.flags[s] {
                    Cell::Obstacle => outgoing,
                    Cell::Gas => {
                        let eq = eq_unchecked(1.0, self.vel[c]);
                        eq[i] + eq[o] - outgoing
                    }
                    Cell::Fluid => {
                        dm += incoming - outgoing;
                        incoming
                    }
                    Cell::Interface => {
                        let share = if flag == Cell::Fluid { 1.0 } else { 0.5 * (fill[c] + fill[s]) };
                        dm += (incoming - outgoing) * share;
                        incoming
                    }
                };
            }
            self.mass[c] += dm;
        }
        std::mem::swap(&mut self.f, &mut fnew);
        self.scratch = fnew;

        let omega = 1.0 / self.tau;
        for c in 0..n {
            if !self.flags[c].wet() {
                continue;
            }
            let f = &mut self.f[c * Q..(c + 1) * Q];
            let rho: f64 = f.iter().sum();
            let mut u = [0.0; 2];
            for i in 0..Q {
                u[0] += E[i][0] as f64 * f[i];
                u[1] += E[i][1] as f64 * f[i];
            }
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(SimError::Unstable { step: self.time_step, x: c % self.width, y: c / self.width, detail: format!("density {rho}") });
            }
            u = [u[0] / rho + self.tau * self.gravity[0], u[1] / rho + self.tau * self.gravity[1]];
            let mut speed = (u[0] * u[0] + u[1] * u[1]).sqrt();
            if self.flags[c] == Cell::Interface && speed > INTERFACE_SPEED_LIMIT {
                let k = INTERFACE_SPEED_LIMIT / speed;
                u = [u[0] * k, u[1] * k];
                speed = INTERFACE_SPEED_LIMIT;
            }
            if !(speed < MAX_SPEED) {
                let detail = format!("speed {speed}, {}", self.describe(c));
                return Err(SimError::Unstable { step: self.time_step, x: c % self.width, y: c / self.width, detail });
            }
            let eq = eq_unchecked(rho, u);
            for i in 0..Q {
                f[i] += omega * (eq[i] - f[i]);
            }
            self.rho[c] = rho;
            self.vel[c] = u;
        }
        self.convert();
        self.time_step += 1;
        for c in 0..n {
            if self.flags[c] == Cell::Interface && self.mass[c] < NEGATIVE_MASS_LIMIT {
                return Err(SimError::NegativeMass { step: self.time_step, x: c % self.width, y: c / self.width, mass: self.mass[c] });
            }
        }
        Ok(())
    }

    fn describe(&self, c: usize) -> String {
        let wet = (1..Q).filter_map(|i| self.neighbor(c, i)).filter(|&n| self.flags[n].wet()).count();
        let solid = (1..Q).filter_map(|i| self.neighbor(c, i)).filter(|&n| self.flags[n] == Cell::Obstacle).count();
        format!("{:?} mass {:.4} rho {:.4}, {wet} wet and {solid} solid neighbors", self.flags[c], self.mass[c], self.rho[c])
    }

    fn convert(&mut self) {
        let n = self.flags.len();
        let mut filled = vec![false; n];
        let mut emptied = vec![false; n];
        for c in 0..n {
            if self.flags[c] != Cell::Interface {
                continue;
            }
            let rho = self.rho[c];
            if self.mass[c] > (1.0 + CONVERSION_MARGIN) * rho {
                filled[c] = true;
            } else if self.mass[c] < -CONVERSION_MARGIN * rho {
                emptied[c] = true;
            }
        }
        let filled_cells: Vec<usize> = (0..n).filter(|&c| filled[c]).collect();
        for &c in &filled_cells {
            for i in 1..Q {
                let Some(nb) = self.neighbor(c, i) else { continue };
                emptied[nb] = false;
                if self.flags[nb] == Cell::Gas {
                    let (rho, u) = self.neighbor_average(nb, &emptied);
                    self.flags[nb] = Cell::Interface;
                    self.mass[nb] = 0.0;
                    self.set_equilibrium(nb, rho, u);
                }
            }
        }
        let emptied_cells: Vec<usize> = (0..n).filter(|&c| emptied[c]).collect();
        for &c in &emptied_cells {
            for i in 1..Q {
                if let Some(nb) = self.neighbor(c, i) {
                    if self.flags[nb] == Cell::Fluid {
                        self.flags[nb] = Cell::Interface;
                    }
                }
            }
        }
        for &c in &filled_cells {
            self.flags[c] = Cell::Fluid;
        }
        for &c in &emptied_cells {
            self.flags[c] = Cell::Gas;
        }
        let mut delta = vec![0.0; n];
        for &c in &filled_cells {
            let excess = self.mass[c] - self.rho[c];
            if self.spread(c, excess, &mut delta) {
                self.mass[c] = self.rho[c];
            }
        }
        for &c in &emptied_cells {
            let excess = self.mass[c];
            if self.spread(c, excess, &mut delta) {
                self.mass[c] = 0.0;
            } else if let Some(wet) = self.nearest_wet(c) {
                delta[wet] += excess;
                self.mass[c] = 0.0;
            } else {
                self.flags[c] = Cell::Interface;
            }
        }
        for c in 0..n {
            self.mass[c] += delta[c];
        }
        self.open_droplet_paths();
        self.fix_topology();
    }

    /// An interface cell with no wet neighbor cannot exchange mass and would
    /// accelerate in place; open the gas cell it is moving toward so the
    /// droplet can travel through ordinary interface exchange.
    fn open_droplet_paths(&mut self) {
        let n = self.flags.len();
        let isolated: Vec<usize> = (0..n)
            .filter(|&c| {
                self.flags[c] == Cell::Interface
                    && (1..Q).all(|i| self.neighbor(c, i).is_none_or(|nb| !self.flags[nb].wet()))
            })
            .collect();
        for c in isolated {
            let u = self.vel[c];
            let best = (1..Q)
                .map(|i| (i, E[i][0] as f64 * u[0] + E[i][1] as f64 * u[1]))
                .fold((0, 0.0), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
            if best.0 == 0 {
                continue;
            }
            if let Some(nb) = self.neighbor(c, best.0) {
                if self.flags[nb] == Cell::Gas {
                    self.flags[nb] = Cell::Interface;
                    self.mass[nb] = 0.0;
                    let (rho, u) = (self.rho[c], self.vel[c]);
                    self.set_equilibrium(nb, rho, u);
                }
            }
        }
    }

    /// Nearest wet cell other than `start`, searching through free cells.
    fn nearest_wet(&self, start: usize) -> Option<usize> {
        let mut seen = vec![false; self.flags.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = queue.pop_front() {
            if c != start && self.flags[c].wet() {
                return Some(c);
            }
            for i in 1..Q {
                if let Some(nb) = self.neighbor(c, i) {
                    if !seen[nb] && self.flags[nb] != Cell::Obstacle {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        None
    }

    /// Share `excess` equally among interface neighbors, else fluid
    /// neighbors. Returns false when there is no recipient.
    fn spread(&self, c: usize, excess: f64, delta: &mut [f64]) -> bool {
        for target in [Cell::Interface, Cell::Fluid] {
            let recipients: Vec<usize> = (1..Q).filter_map(|i| self.neighbor(c, i)).filter(|&nb| self.flags[nb] == target).collect();
            if !recipients.is_empty() {
                let share = excess / recipients.len() as f64;
                for nb in recipients {
                    delta[nb] += share;
                }
                return true;
            }
        }
        false
    }

    fn neighbor_average(&self, c: usize, emptied: &[bool]) -> (f64, [f64; 2]) {
        let mut count = 0.0;
        let (mut rho, mut u) = (0.0, [0.0; 2]);
        for i in 1..Q {
            if let Some(nb) = self.neighbor(c, i) {
                if self.flags[nb].wet() && !emptied[nb] {
                    count += 1.0;
                    rho += self.rho[nb];
                    u[0] += self.vel[nb][0];
                    u[1] += self.vel[nb][1];
                }
            }
        }
        if count == 0.0 {
            (1.0, [0.0; 2])
        } else {
            (rho / count, [u[0] / count, u[1] / count])
        }
    }
}
