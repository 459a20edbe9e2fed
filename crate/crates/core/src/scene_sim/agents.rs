use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial walking direction of each agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadingMode {
    Uniform,
    /// Headings drawn around `direction` (radians) with std `spread`.
    Stream { direction: f64, spread: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub count: usize,
    /// Walking speed range in m/s; each agent keeps one speed.
    pub speed: (f64, f64),
    /// Heading random-walk std in rad/√s.
    pub heading_noise: f64,
    pub heading: HeadingMode,
    /// Head height range in metres.
    pub height: (f64, f64),
    /// Walking rectangle `[x0, y0, x1, y1]`.
    pub area: [f64; 4],
    /// Simulation step in seconds.
    pub tick: f64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("at least one agent is required".into()));
        }
        let [x0, y0, x1, y1] = self.area;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidArgument("walking area must have positive extent".into()));
        }
        if !(self.speed.0 >= 0.0 && self.speed.1 >= self.speed.0) {
            return Err(Error::InvalidArgument("speed range must satisfy 0 <= min <= max".into()));
        }
        if !(self.height.0 > 0.0 && self.height.1 >= self.height.0) {
            return Err(Error::InvalidArgument("agent heights must be positive".into()));
        }
        if !(self.tick > 0.0) || !(self.heading_noise >= 0.0) {
            return Err(Error::InvalidArgument("tick must be positive and heading noise non-negative".into()));
        }
        Ok(())
    }
}

/// Positions of one agent at consecutive ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub agent_id: usize,
    pub height: f64,
    pub positions: Vec<[f64; 2]>,
}

/// One agent at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

fn reflect(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if v < lo {
        ((2.0 * lo - v).min(hi), true)
    } else if v > hi {
        ((2.0 * hi - v).max(lo), true)
    } else {
        (v, false)
    }
}

/// Constant-speed walks with heading noise inside `config.area`, mirrored at
/// the walls. Deterministic for a given seed.
pub fn simulate_agents(config: &AgentConfig, seed: u64, ticks: usize) -> Result<Vec<AgentTrack>> {
    config.validate()?;
    if ticks == 0 {
        return Err(Error::InvalidArgument("ticks must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [x0, y0, x1, y1] = config.area;
    let turn = Normal::new(0.0, config.heading_noise * config.tick.sqrt()).expect("finite std");
    let mut tracks = Vec::with_capacity(config.count);
    for agent_id in 0..config.count {
        let mut x = rng.random_range(x0..=x1);
        let mut y = rng.random_range(y0..=y1);
        let speed = if config.speed.1 > config.speed.0 {
            rng.random_range(config.speed.0..=config.speed.1)
        } else {
            config.speed.0
        };
        let height = if config.height.1 > config.height.0 {
            rng.random_range(config.height.0..=config.height.1)
        } else {
            config.height.0
        };
        let mut heading = match config.heading {
            HeadingMode::Uniform => rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            HeadingMode::Stream { direction, spread } => {
                direction + Normal::new(0.0, spread.max(0.0)).expect("finite std").sample(&mut rng)
            }
        };
        let step = speed * config.tick;
        let mut positions = Vec::with_capacity(ticks);
        positions.push([x, y]);
        for _ in 1..ticks {
            heading += turn.sample(&mut rng);
            let (nx, fx) = reflect(x + step * heading.cos(), x0, x1);
            let (ny, fy) = reflect(y + step * heading.sin(), y0, y1);
            if fx {
                heading = std::f64::consts::PI - heading;
            }
            if fy {
                heading = -heading;
            }
            x = nx;
            y = ny;
            positions.push([x, y]);
        }
        tracks.push(AgentTrack {
            agent_id,
            height,
            positions,
        });
    }
    Ok(tracks)
}

/// States of all agents at tick `t`.
pub fn states_at(tracks: &[AgentTrack], t: usize) -> Vec<AgentState> {
    tracks
        .iter()
        .map(|a| {
            let p = a.positions[t.min(a.positions.len() - 1)];
            AgentState {
                x: p[0],
                y: p[1],
                height: a.height,
            }
        })
        .collect()
}
