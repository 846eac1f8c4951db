//! Seeded synthetic event scenarios on hourly steps starting at the epoch.
//!
//! Draw order: node coordinates (uniform in the unit square, x then y per
//! node), pattern parameters, then counts step by step and node by node.
//!
//! - `poisson_hotspots`: `max(1, N/4)` hotspot nodes drawn without
//!   replacement fire at rate 0.5 per step, the rest at 0.02.
//! - `diurnal`: node base rates uniform in `[0.05, 0.4]`, modulated by
//!   `1 + 0.8·sin(2π·t/24)`.
//! - `bursty`: each node switches from a low regime (0.05) to a high one
//!   (1.0) with probability 0.05 per step and back with probability 0.15.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const HOTSPOT_RATE: f64 = 0.5;
pub const BACKGROUND_RATE: f64 = 0.02;
const DIURNAL_AMPLITUDE: f64 = 0.8;
const BURST_HIGH: f64 = 1.0;
const BURST_LOW: f64 = 0.05;
const BURST_UP: f64 = 0.05;
const BURST_DOWN: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    PoissonHotspots,
    Diurnal,
    Bursty,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson_hotspots" => Ok(Pattern::PoissonHotspots),
            "diurnal" => Ok(Pattern::Diurnal),
            "bursty" => Ok(Pattern::Bursty),
            other => Err(Error::invalid(format!("unknown synthetic pattern '{other}'"))),
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pattern::PoissonHotspots => "poisson_hotspots",
            Pattern::Diurnal => "diurnal",
            Pattern::Bursty => "bursty",
        })
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng)
}

/// Returns the dataset and each node's long-run mean rate.
pub fn synthesize(seed: u64, nodes: usize, steps: usize, pattern: Pattern) -> Result<(Dataset, Vec<f64>)> {
    if nodes < 2 {
        return Err(Error::invalid("synthetic scenarios need at least 2 nodes"));
    }
    if steps == 0 {
        return Err(Error::invalid("synthetic scenarios need at least 1 step"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<[f64; 2]> = (0..nodes).map(|_| [rng.random(), rng.random()]).collect();
    let mut values = vec![0.0; steps * nodes];
    let mean_rates = match pattern {
        Pattern::PoissonHotspots => {
            let mut rates = vec![BACKGROUND_RATE; nodes];
            for i in sample(&mut rng, nodes, (nodes / 4).max(1)) {
                rates[i] = HOTSPOT_RATE;
            }
            for t in 0..steps {
                for i in 0..nodes {
                    values[t * nodes + i] = poisson(&mut rng, rates[i]);
                }
            }
            rates
        }
        Pattern::Diurnal => {
            let base: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.05..0.4)).collect();
            for t in 0..steps {
                let m = 1.0 + DIURNAL_AMPLITUDE * (std::f64::consts::TAU * t as f64 / 24.0).sin();
                for i in 0..nodes {
                    values[t * nodes + i] = poisson(&mut rng, base[i] * m);
                }
            }
            base
        }
        Pattern::Bursty => {
            let mut high = vec![false; nodes];
            for t in 0..steps {
                for i in 0..nodes {
                    let flip = if high[i] { BURST_DOWN } else { BURST_UP };
                    if rng.random::<f64>() < flip {
                        high[i] = !high[i];
                    }
                    let rate = if high[i] { BURST_HIGH } else { BURST_LOW };
                    values[t * nodes + i] = poisson(&mut rng, rate);
                }
            }
            let p_high = BURST_UP / (BURST_UP + BURST_DOWN);
            vec![p_high * BURST_HIGH + (1.0 - p_high) * BURST_LOW; nodes]
        }
    };
    Ok((Dataset::new(values, steps, coords, 0, 3600)?, mean_rates))
}
