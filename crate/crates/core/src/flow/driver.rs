//! Keyed Brownian increments with bridge refinement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEVEL_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

/// Maps the K-driving channels `W^i` and flow channels `B^j` onto underlying
/// independent Brownian motions. Two entries with the same id are the same
/// Brownian motion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub k_channels: Vec<usize>,
    pub flow_channels: Vec<usize>,
}

impl ChannelSpec {
    /// `m` K channels and `n` flow channels, all mutually independent.
    pub fn independent(m: usize, n: usize) -> Self {
        Self {
            k_channels: (0..m).collect(),
            flow_channels: (m..m + n).collect(),
        }
    }

    /// `W^i = B^i` for `i < n`.
    pub fn shared(n: usize) -> Self {
        Self {
            k_channels: (0..n).collect(),
            flow_channels: (0..n).collect(),
        }
    }

    pub fn n_underlying(&self) -> usize {
        self.k_channels
            .iter()
            .chain(&self.flow_channels)
            .map(|c| c + 1)
            .max()
            .unwrap_or(0)
    }

    /// Whether `W^i` and `B^j` are the same Brownian motion.
    pub fn identified(&self, i: usize, j: usize) -> bool {
        self.k_channels[i] == self.flow_channels[j]
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if !self.flow_channels.iter().all(|c| seen.insert(c)) {
            return Err(Error::Invalid("flow channels must be distinct".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.k_channels.iter().all(|c| seen.insert(c)) {
            return Err(Error::Invalid("K channels must be distinct".into()));
        }
        Ok(())
    }
}

/// Brownian increments for every path and underlying channel on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianDriver {
    pub seed: u64,
    pub t_final: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub level: u32,
    pub spec: ChannelSpec,
    n_channels: usize,
    increments: Vec<f64>,
}

fn channel_rng(seed: u64, level: u32, path: usize, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((level as u64).wrapping_mul(LEVEL_KEY)));
    rng.set_stream(((path as u64) << 20) | channel as u64);
    rng
}

/// Builds a driver with `T / dt` steps of `Normal(0, dt)` increments.
///
/// ```
/// use kiw_core::flow::{make_driver, ChannelSpec};
/// let a = make_driver(7, 1.0, 0.25, 3, ChannelSpec::shared(1)).unwrap();
/// let b = make_driver(7, 1.0, 0.25, 3, ChannelSpec::shared(1)).unwrap();
/// assert_eq!(a, b);
/// assert_eq!(a.n_steps, 4);
/// ```
pub fn make_driver(
    seed: u64,
    t_final: f64,
    dt: f64,
    n_paths: usize,
    spec: ChannelSpec,
) -> Result<BrownianDriver> {
    if !(t_final > 0.0 && dt > 0.0 && t_final.is_finite()) {
        return Err(Error::Grid(format!("need T > 0 and dt > 0, got T = {t_final}, dt = {dt}")));
    }
    let ratio = t_final / dt;
    let n_steps = ratio.round();
    if n_steps < 1.0 || (ratio - n_steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Grid(format!("dt = {dt} does not divide T = {t_final}")));
    }
    if n_paths == 0 {
        return Err(Error::Invalid("n_paths must be at least 1".into()));
    }
    spec.validate()?;
    let n_steps = n_steps as usize;
    let n_channels = spec.n_underlying();
    let sd = (t_final / n_steps as f64).sqrt();
    let increments: Vec<f64> = (0..n_paths * n_channels)
        .into_par_iter()
        .flat_map_iter(|pc| {
            let mut rng = channel_rng(seed, 0, pc / n_channels, pc % n_channels);
            (0..n_steps)
                .map(move |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(BrownianDriver {
        seed,
        t_final,
        n_steps,
        n_paths,
        level: 0,
        spec,
        n_channels,
        increments,
    })
}

/// Splits `dw` over two half steps of length `dt / 2` using a bridge draw `z`.
///
/// The halves sum to `dw` in real arithmetic; in floating point the rounded
/// sum reproduces `dw` whenever a representable split exists nearby, and is
/// otherwise off by one rounding.
fn bridge_split(dw: f64, dt: f64, z: f64) -> (f64, f64) {
    let first = 0.5 * dw + 0.5 * dt.sqrt() * z;
    let mut second = dw - first;
    for _ in 0..4 {
        let s = first + second;
        if s == dw {
            break;
        }
        second += dw - s;
    }
    (first, second)
}

impl BrownianDriver {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Increment of underlying channel `channel` over `[t_step, t_{step+1}]`.
    #[inline]
    pub fn increment(&self, path: usize, channel: usize, step: usize) -> f64 {
        self.increments[(path * self.n_channels + channel) * self.n_steps + step]
    }

    /// Increment of the K-driving channel `W^i`.
    pub fn k_increment(&self, path: usize, i: usize, step: usize) -> Result<f64> {
        let c = *self.spec.k_channels.get(i).ok_or(Error::Channel(i))?;
        Ok(self.increment(path, c, step))
    }

    /// Increment of the flow channel `B^j`.
    pub fn flow_increment(&self, path: usize, j: usize, step: usize) -> Result<f64> {
        let c = *self.spec.flow_channels.get(j).ok_or(Error::Channel(j))?;
        Ok(self.increment(path, c, step))
    }

    /// Path values `W_{t_0} = 0, W_{t_1}, .., W_{t_L}` of an underlying channel.
    pub fn path_values(&self, path: usize, channel: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.n_steps + 1);
        let mut acc = 0.0;
        w.push(acc);
        for s in 0..self.n_steps {
            acc += self.increment(path, channel, s);
            w.push(acc);
        }
        w
    }

    /// Same Brownian paths on the grid with half the step.
    pub fn refine(&self) -> BrownianDriver {
        let level = self.level + 1;
        let dt = self.dt();
        let fine: Vec<f64> = (0..self.n_paths * self.n_channels)
            .into_par_iter()
            .flat_map_iter(|pc| {
                let (path, channel) = (pc / self.n_channels, pc % self.n_channels);
                let mut rng = channel_rng(self.seed, level, path, channel);
                let coarse = &self.increments[pc * self.n_steps..(pc + 1) * self.n_steps];
                coarse
                    .iter()
                    .flat_map(|&dw| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let (a, b) = bridge_split(dw, dt, z);
                        [a, b]
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        BrownianDriver {
            n_steps: 2 * self.n_steps,
            level,
            increments: fine,
            spec: self.spec.clone(),
            ..*self
        }
    }

    /// Refines `times` times.
    pub fn refined(&self, times: u32) -> BrownianDriver {
        let mut d = self.clone();
        for _ in 0..times {
            d = d.refine();
        }
        d
    }
}
