//! Monte Carlo estimate of the Besov integral on level-`m` cells.
//!
//! A sample draws two cells independently from `ν_m` (uniform digit
//! strings), discarding the event that both land in the same cell, and
//! evaluates `(ū_w - ū_w')^2 / |c_w - c_w'|^{alpha+beta}` at the centroids.
//! Samples are split into a fixed number of blocks, each with its own
//! ChaCha stream, so results depend on the seed but not on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BesovEstimate, EstimateMethod, SemiNormError};
use crate::functions::GridFunction;
use crate::gasket::{Gasket, HAUSDORFF_DIM};
use crate::scalar::{pairwise_sum, Scalar};

const BLOCKS: u64 = 64;

/// Cell means and centroids of a grid function at level `m`.
#[derive(Debug, Clone)]
pub struct CellTable {
    level: u32,
    /// Sum of the three corners at scale `2^{m+1}`.
    centroid: Vec<(i64, i64)>,
    mean: Vec<f64>,
}

impl CellTable {
    pub fn new<T: Scalar>(gasket: &Gasket, u: &GridFunction<T>, m: u32) -> Result<Self, SemiNormError> {
        if m > u.level() {
            return Err(SemiNormError::LevelTooHigh { n: m, level: u.level() });
        }
        let s = m + 1;
        let (centroid, mean) = gasket
            .cells(m)
            .iter()
            .map(|c| {
                let (mut a, mut b) = (0, 0);
                for id in c {
                    let (pa, pb) = gasket.point(*id).at_scale(s);
                    a += pa;
                    b += pb;
                }
                let mean = c.iter().map(|id| u.value(*id).to_f64_lossy()).sum::<f64>() / 3.0;
                ((a, b), mean)
            })
            .unzip();
        Ok(CellTable {
            level: m,
            centroid,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `(ū_p - ū_q)^2 |c_p - c_q|^{-exponent}`
    fn integrand(&self, p: usize, q: usize, exponent: f64) -> f64 {
        let (pa, pb) = self.centroid[p];
        let (qa, qb) = self.centroid[q];
        let (da, db) = ((pa - qa) as f64, (pb - qb) as f64);
        let unit = 3.0 * ((self.level + 1) as f64).exp2();
        let dist2 = (da * da + 3.0 * db * db) / (unit * unit);
        (self.mean[p] - self.mean[q]).powi(2) * dist2.powf(-0.5 * exponent)
    }
}

/// The quantity the sampler estimates: `9^-m sum_{w != w'}` of the
/// centroid integrand. Quadratic cost; meant as a reference at small `m`.
pub fn direct_pair_integral(table: &CellTable, beta: f64) -> f64 {
    let s = HAUSDORFF_DIM + beta;
    let rows: Vec<f64> = (0..table.len())
        .into_par_iter()
        .map(|p| {
            let terms: Vec<f64> = (0..table.len())
                .filter(|&q| q != p)
                .map(|q| table.integrand(p, q, s))
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&rows) * 9f64.powi(-(table.level as i32))
}

struct Block {
    count: u64,
    mean: f64,
    m2: f64,
    discarded: u64,
}

impl Block {
    /// Chan et al. pairwise update.
    fn merge(self, other: Block) -> Block {
        let count = self.count + other.count;
        if count == 0 {
            return Block {
                discarded: self.discarded + other.discarded,
                ..self
            };
        }
        let delta = other.mean - self.mean;
        let w = other.count as f64 / count as f64;
        Block {
            count,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * w,
            discarded: self.discarded + other.discarded,
        }
    }
}

fn run_block(table: &CellTable, exponent: f64, seed: u64, block: u64, samples: u64) -> Block {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let cells = table.len();
    let (mut mean, mut m2, mut discarded) = (0.0, 0.0, 0u64);
    for k in 1..=samples {
        let (p, q) = loop {
            let p = rng.gen_range(0..cells);
            let q = rng.gen_range(0..cells);
            if p != q {
                break (p, q);
            }
            discarded += 1;
        };
        let x = table.integrand(p, q, exponent);
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
    }
    Block {
        count: samples,
        mean,
        m2,
        discarded,
    }
}

/// Monte Carlo estimate with standard error, on cells of level `m`.
pub fn besov_monte_carlo<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    beta: f64,
    m: u32,
    samples: u64,
    seed: u64,
) -> Result<BesovEstimate, SemiNormError> {
    let table = CellTable::new(gasket, u, m)?;
    monte_carlo_on(&table, beta, samples, seed)
}

/// As [`besov_monte_carlo`], reusing a prepared [`CellTable`].
pub fn monte_carlo_on(table: &CellTable, beta: f64, samples: u64, seed: u64) -> Result<BesovEstimate, SemiNormError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(SemiNormError::InvalidBeta(beta));
    }
    if samples == 0 {
        return Err(SemiNormError::NoSamples);
    }
    if table.len() < 2 {
        return Err(SemiNormError::LevelTooHigh {
            n: 1,
            level: table.level,
        });
    }
    let exponent = HAUSDORFF_DIM + beta;
    let blocks: Vec<Block> = (0..BLOCKS)
        .into_par_iter()
        .map(|b| {
            let n = samples / BLOCKS + u64::from(b < samples % BLOCKS);
            run_block(table, exponent, seed, b, n)
        })
        .collect();
    let total = blocks.into_iter().reduce(Block::merge).expect("at least one block");
    // off-diagonal cell pairs carry mass 1 - 3^-m of ν_m × ν_m
    let off_diagonal = 1.0 - 3f64.powi(-(table.level as i32));
    let variance = if total.count > 1 {
        total.m2 / (total.count - 1) as f64
    } else {
        0.0
    };
    Ok(BesovEstimate {
        beta,
        value: total.mean * off_diagonal,
        method: EstimateMethod::MonteCarlo,
        level: table.level,
        error: (variance / total.count as f64).sqrt() * off_diagonal,
        seed: Some(seed),
        samples: Some(samples),
        discarded: Some(total.discarded),
        per_level: Vec::new(),
    })
}
