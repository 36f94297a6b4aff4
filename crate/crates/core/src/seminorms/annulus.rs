//! Dyadic annulus form of the Besov integral,
//!
//! `sum_{n=N0}^{N} 2^{(alpha+beta) n} ∫∫_{|x-y| < c 2^-n} (u(x)-u(y))^2 dν dν`,
//!
//! discretized on level-`m` cells (cell means, centroid distances). The
//! inner integrals do not depend on `beta`, so one pass over cell pairs
//! serves a whole grid of exponents.
//!
//! Pairs are visited hierarchically: two level-`l` cells whose descendant
//! distances provably fall in a single annulus are summed in closed form
//! from per-cell means and centered second moments; only pairs straddling
//! an annulus boundary are refined down to level `m`, where the distance
//! test is exact integer arithmetic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integral_weight, BesovEstimate, EstimateMethod, SemiNormError};
use crate::functions::GridFunction;
use crate::gasket::Gasket;
use crate::scalar::{pairwise_sum, Scalar};

/// Work is split at this level (or `m`, if smaller).
const SPLIT_LEVEL: u32 = 3;
/// Relative margin around annulus radii inside which floating bounds are
/// not trusted and the pair is refined.
const MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnulusParams {
    /// Truncation `N`.
    pub levels: u32,
    /// First annulus index `N0`.
    pub start: u32,
    /// Radii are `2^{radius_log2} 2^-n`.
    pub radius_log2: i32,
    /// Cell level `m`; must be at least `N + 2`.
    pub quadrature_level: u32,
}

impl AnnulusParams {
    pub fn new(levels: u32, quadrature_level: u32) -> Self {
        AnnulusParams {
            levels,
            start: 0,
            radius_log2: 0,
            quadrature_level,
        }
    }

    fn validate(&self) -> Result<(), SemiNormError> {
        let (m, n) = (self.quadrature_level, self.levels);
        if m < n + 2 {
            return Err(SemiNormError::InsufficientResolution { m, truncation: n });
        }
        if self.start > n || (m as i64 + 1 + self.radius_log2 as i64) < n as i64 {
            return Err(SemiNormError::RadiusTooSmall {
                radius_log2: self.radius_log2,
                m,
                truncation: n,
            });
        }
        Ok(())
    }
}

/// Inner integrals `I_n = ∫∫_{|x-y| < c 2^-n}` for `n = N0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusProfile {
    pub params: AnnulusParams,
    pub inner: Vec<f64>,
}

impl AnnulusProfile {
    pub fn weighted_terms(&self, beta: f64) -> Vec<f64> {
        self.inner
            .iter()
            .enumerate()
            .map(|(k, i_n)| integral_weight(beta, self.params.start + k as u32) * i_n)
            .collect()
    }

    pub fn estimate(&self, beta: f64) -> BesovEstimate {
        let terms = self.weighted_terms(beta);
        BesovEstimate {
            beta,
            value: pairwise_sum(&terms),
            method: EstimateMethod::Annulus,
            level: self.params.quadrature_level,
            error: geometric_tail(&terms),
            seed: None,
            samples: None,
            discarded: None,
            per_level: terms,
        }
    }
}

/// Geometric extrapolation of the remaining terms from the last ratio.
fn geometric_tail(terms: &[f64]) -> f64 {
    match terms {
        [.., prev, last] if *prev > 0.0 => {
            let ratio = last / prev;
            if ratio < 1.0 {
                last * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        }
        [.., last] if *last == 0.0 => 0.0,
        _ => f64::INFINITY,
    }
}

/// Annulus estimate with `N0 = 0` and `c = 1`.
pub fn besov_annulus_sum<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    beta: f64,
    truncation: u32,
    quadrature_level: u32,
) -> Result<BesovEstimate, SemiNormError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(SemiNormError::InvalidBeta(beta));
    }
    let u = u.to_f64();
    let profiles = annulus_profiles(gasket, &[&u], AnnulusParams::new(truncation, quadrature_level))?;
    Ok(profiles[0].estimate(beta))
}

struct LevelTable {
    /// Sum of the three corners, integer coordinates at scale `2^{m+1}`.
    centroid: Vec<(i64, i64)>,
    /// `[function][cell]`
    mean: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
}

struct Walker<'a> {
    m: u32,
    levels: &'a [LevelTable],
    /// Squared annulus radii in the integer units of `centroid`.
    thresholds: Vec<f64>,
    exact_thresholds: Vec<i128>,
    functions: usize,
}

impl Walker<'_> {
    fn buckets(&self) -> usize {
        self.thresholds.len()
    }

    fn exact_bucket(&self, d2: i128) -> Option<usize> {
        if d2 >= self.exact_thresholds[0] {
            return None;
        }
        Some(self.exact_thresholds.iter().take_while(|t| d2 < **t).count() - 1)
    }

    /// Bucket of every distance in `[lo, hi]`, if they agree and no radius
    /// lies within the floating margin.
    fn interval_bucket(&self, lo: f64, hi: f64) -> Option<Option<usize>> {
        let (lo2, hi2) = (lo * lo, hi * hi);
        let mut inside = 0usize;
        for t in &self.thresholds {
            if hi2 < t * (1.0 - MARGIN) {
                inside += 1;
            } else if lo2 > t * (1.0 + MARGIN) {
            } else {
                return None;
            }
        }
        Some(inside.checked_sub(1))
    }

    fn radius(&self, l: u32) -> f64 {
        3f64.sqrt() * ((self.m + 1 - l) as f64).exp2()
    }

    fn add(&self, acc: &mut [f64], bucket: usize, f: usize, value: f64) {
        acc[f * self.buckets() + bucket] += value;
    }

    fn visit_self(&self, l: u32, p: usize, acc: &mut [f64]) {
        if l == self.m {
            return;
        }
        let hi = 2.0 * self.radius(l);
        if let Some(Some(k)) = self.interval_bucket(0.0, hi) {
            let count = 3f64.powi((self.m - l) as i32);
            for f in 0..self.functions {
                self.add(acc, k, f, 2.0 * count * self.levels[l as usize].m2[f][p]);
            }
            return;
        }
        let stride = 3usize.pow(l);
        let children = [p, p + stride, p + 2 * stride];
        for i in 0..3 {
            self.visit_self(l + 1, children[i], acc);
            for j in i + 1..3 {
                self.visit_pair(l + 1, children[i], children[j], acc);
            }
        }
    }

    /// Unordered pair of distinct cells; both orders are accounted for.
    fn visit_pair(&self, l: u32, p: usize, q: usize, acc: &mut [f64]) {
        let table = &self.levels[l as usize];
        let (pa, pb) = table.centroid[p];
        let (qa, qb) = table.centroid[q];
        let (da, db) = ((pa - qa) as i128, (pb - qb) as i128);
        let d2 = da * da + 3 * db * db;
        if l == self.m {
            if let Some(k) = self.exact_bucket(d2) {
                for f in 0..self.functions {
                    let diff = table.mean[f][p] - table.mean[f][q];
                    self.add(acc, k, f, 2.0 * diff * diff);
                }
            }
            return;
        }
        let d = (d2 as f64).sqrt();
        let r2 = 2.0 * self.radius(l);
        let lo = (d - r2).max(0.0);
        if lo * lo > self.thresholds[0] * (1.0 + MARGIN) {
            return;
        }
        if let Some(bucket) = self.interval_bucket(lo, d + r2) {
            if let Some(k) = bucket {
                let count = 3f64.powi((self.m - l) as i32);
                for f in 0..self.functions {
                    let diff = table.mean[f][p] - table.mean[f][q];
                    let block = count * (table.m2[f][p] + table.m2[f][q]) + count * count * diff * diff;
                    self.add(acc, k, f, 2.0 * block);
                }
            }
            return;
        }
        let stride = 3usize.pow(l);
        for i in 0..3 {
            for j in 0..3 {
                self.visit_pair(l + 1, p + i * stride, q + j * stride, acc);
            }
        }
    }
}

fn build_tables(gasket: &Gasket, functions: &[&GridFunction<f64>], m: u32) -> Vec<LevelTable> {
    let s = m + 1;
    let centroids = |l: u32| -> Vec<(i64, i64)> {
        gasket
            .cells(l)
            .iter()
            .map(|corners| {
                corners.iter().fold((0, 0), |(a, b), id| {
                    let (pa, pb) = gasket.point(*id).at_scale(s);
                    (a + pa, b + pb)
                })
            })
            .collect()
    };
    let leaf_means: Vec<Vec<f64>> = functions
        .iter()
        .map(|u| {
            gasket
                .cells(m)
                .iter()
                .map(|c| (u.value(c[0]) + u.value(c[1]) + u.value(c[2])) / 3.0)
                .collect()
        })
        .collect();
    let mut tables = vec![LevelTable {
        centroid: centroids(m),
        m2: vec![vec![0.0; leaf_means[0].len()]; functions.len()],
        mean: leaf_means,
    }];
    for l in (0..m).rev() {
        let child = tables.last().expect("leaf level present");
        let stride = 3usize.pow(l);
        let mut mean = Vec::with_capacity(functions.len());
        let mut m2 = Vec::with_capacity(functions.len());
        // children all carry 3^{m-l-1} leaves
        let count = 3f64.powi((m - l - 1) as i32);
        for f in 0..functions.len() {
            let (mut mf, mut sf) = (vec![0.0; stride], vec![0.0; stride]);
            for p in 0..stride {
                let kids = [p, p + stride, p + 2 * stride];
                let mu = kids.iter().map(|&k| child.mean[f][k]).sum::<f64>() / 3.0;
                let spread: f64 = kids.iter().map(|&k| (child.mean[f][k] - mu).powi(2)).sum();
                mf[p] = mu;
                sf[p] = kids.iter().map(|&k| child.m2[f][k]).sum::<f64>() + count * spread;
            }
            mean.push(mf);
            m2.push(sf);
        }
        tables.push(LevelTable {
            centroid: centroids(l),
            mean,
            m2,
        });
    }
    tables.reverse();
    tables
}

/// Inner annulus integrals for several functions in one pass.
pub fn annulus_profiles(
    gasket: &Gasket,
    functions: &[&GridFunction<f64>],
    params: AnnulusParams,
) -> Result<Vec<AnnulusProfile>, SemiNormError> {
    params.validate()?;
    let m = params.quadrature_level;
    for u in functions {
        if u.level() < m {
            return Err(SemiNormError::LevelTooHigh { n: m, level: u.level() });
        }
    }
    if functions.is_empty() {
        return Ok(Vec::new());
    }
    let levels = build_tables(gasket, functions, m);
    // |S_w - S_w'|^2 < 9 * 4^{m+1} c^2 4^{-n}
    let exact_thresholds: Vec<i128> = (params.start..=params.levels)
        .map(|n| 9i128 << (2 * (m as i64 + 1 + params.radius_log2 as i64 - n as i64)))
        .collect();
    let walker = Walker {
        m,
        levels: &levels,
        thresholds: exact_thresholds.iter().map(|t| *t as f64).collect(),
        exact_thresholds,
        functions: functions.len(),
    };
    let nb = walker.buckets();

    let split = SPLIT_LEVEL.min(m);
    let cells = 3usize.pow(split);
    let tasks: Vec<(usize, usize)> = (0..cells).flat_map(|p| (p..cells).map(move |q| (p, q))).collect();
    let partials: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(p, q)| {
            let mut acc = vec![0.0; functions.len() * nb];
            if p == q {
                walker.visit_self(split, p, &mut acc);
            } else {
                walker.visit_pair(split, p, q, &mut acc);
            }
            acc
        })
        .collect();

    let cell_mass_sq = 9f64.powi(-(m as i32));
    Ok((0..functions.len())
        .map(|f| {
            let buckets: Vec<f64> = (0..nb)
                .map(|k| {
                    let column: Vec<f64> = partials.iter().map(|acc| acc[f * nb + k]).collect();
                    pairwise_sum(&column) * cell_mass_sq
                })
                .collect();
            // I_n collects every bucket at or inside radius n
            let mut inner = vec![0.0; nb];
            let mut running = 0.0;
            for k in (0..nb).rev() {
                running += buckets[k];
                inner[k] = running;
            }
            AnnulusProfile { params, inner }
        })
        .collect())
}
