//! Cutoff jumping kernels built from deep cells.
//!
//! For a level-`n` cell `K_w` and a corner `p = f_w(p_j)`, the deep cell
//! `K^{(i)}_{p,n}` is `K_{w j^r}` with `r = gamma n i` repetitions of `j`; it
//! shrinks to `p`. The kernel
//!
//! `c_i(x,y) = sum_n 9^-n sum_{w in W_n} sum_{p != q in V_w}
//!             1[x in K_{p,n}] 1[y in K_{q,n}] / (ν(K_{p,n}) ν(K_{q,n}))`
//!
//! concentrates on corner pairs of the cells, so `∫∫ c_i (u(x)-u(y))^2 /
//! |x-y|^{alpha+beta}` tends to `sum_n 2^{(beta-alpha)n} b_n`. The truncated
//! kernel `C_i` stops at `n = Phi(i)` and `a_i = delta_i C_i + (1 - delta_i)`.
//!
//! Deep cells are far below any enumerable level (`r` reaches several
//! thousand), so they are handled structurally: corners are
//! `p + 2^{-(n+r)} (p_k - p_j)` and values come from refining the harmonic
//! spline along the repeated digit.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{harmonic_child, GridFunction};
use crate::gasket::{
    cell_vertices, locate, DyadicPoint, Gasket, GeometryError, GeometryLimits, Word, HAUSDORFF_DIM, MAX_WORD_LEN,
    WALK_DIM,
};
use crate::scalar::pairwise_sum;
use crate::seminorms::{
    direct_pair_integral, discrete_weight, level_pair_sum, monte_carlo_on, CellTable, SemiNormError, CHUNK,
};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel index must be at least 1")]
    InvalidIndex,
    #[error("beta_i = {0} outside (alpha, beta*)")]
    BetaOutOfRange(f64),
    #[error("gamma = {gamma} violates the convergence requirement at i = {i}")]
    GammaInadmissible { gamma: u32, i: u32 },
    #[error("Phi = {phi} too small at i = {i}: need (5 lambda - 1) Phi >= i, i.e. Phi >= {required}")]
    PhiTooSmall { phi: u32, i: u32, required: u32 },
    #[error("delta_i = {0} outside (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("deep cell at n = {n}, i = {i} has depth {depth}, beyond the budget of {max}")]
    DepthOverflow { n: u32, i: u32, depth: u64, max: u32 },
    #[error("address of length {have} too short; the deep cell needs depth {needed}")]
    AddressTooShort { needed: u64, have: usize },
    #[error("point {0} is not a corner of the cell {1}")]
    NotACorner(DyadicPoint, Word),
    #[error("Monte Carlo budget of {0} samples per cell pair is below the minimum of 10")]
    McBudget(u64),
    #[error("function level {level} is below the explicit level budget {needed}")]
    FunctionTooCoarse { level: u32, needed: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    SemiNorm(#[from] SemiNormError),
}

/// Parameters of one kernel in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub i: u32,
    pub beta_i: f64,
    pub gamma: u32,
    pub phi: u32,
    pub delta_i: f64,
}

/// `alpha - gamma i < 0` and `alpha - ((beta - alpha)/2) gamma i < 0`.
pub fn gamma_admissible(gamma: u32, i: u32, beta: f64) -> bool {
    let gi = (gamma as f64) * (i as f64);
    HAUSDORFF_DIM - gi < 0.0 && HAUSDORFF_DIM - 0.5 * (beta - HAUSDORFF_DIM) * gi < 0.0
}

/// Smallest admissible `gamma` at index `i`.
pub fn minimal_gamma(i: u32, beta: f64) -> Result<u32, KernelError> {
    check_beta(beta)?;
    Ok((1..)
        .find(|&g| gamma_admissible(g, i, beta))
        .expect("some gamma is admissible"))
}

fn check_beta(beta: f64) -> Result<(), KernelError> {
    if beta > HAUSDORFF_DIM && beta < WALK_DIM {
        Ok(())
    } else {
        Err(KernelError::BetaOutOfRange(beta))
    }
}

/// `5 lambda - 1` with `lambda = 2^-beta`.
pub fn lambda_weight(beta: f64) -> f64 {
    5.0 * (-beta).exp2() - 1.0
}

/// Smallest `Phi` with `weight * Phi >= i`. A relative tolerance of `1e-9`
/// absorbs rounding in `weight` so exact ratios are not pushed up by one.
pub fn phi_for_weight(i: u32, weight: f64) -> u32 {
    let raw = i as f64 / weight;
    let phi = (raw * (1.0 - 1e-9)).ceil();
    phi.max(1.0) as u32
}

/// `Phi(i)` for `beta_i`; see [`schedule`] for the monotone sequence.
pub fn choose_phi(i: u32, beta_i: f64) -> Result<u32, KernelError> {
    if i == 0 {
        return Err(KernelError::InvalidIndex);
    }
    check_beta(beta_i)?;
    Ok(phi_for_weight(i, lambda_weight(beta_i)))
}

impl KernelSpec {
    /// Validated spec, including admissibility of `gamma` at `i`.
    pub fn new(i: u32, beta_i: f64, gamma: u32, phi: u32, delta_i: f64) -> Result<Self, KernelError> {
        let spec = Self::with_any_gamma(i, beta_i, gamma, phi, delta_i)?;
        if !gamma_admissible(gamma, i, beta_i) {
            return Err(KernelError::GammaInadmissible { gamma, i });
        }
        Ok(spec)
    }

    /// As [`KernelSpec::new`] but without the convergence requirement on
    /// `gamma`; the kernel is still well defined, only the limit theorem
    /// does not apply.
    pub fn with_any_gamma(i: u32, beta_i: f64, gamma: u32, phi: u32, delta_i: f64) -> Result<Self, KernelError> {
        if i == 0 {
            return Err(KernelError::InvalidIndex);
        }
        check_beta(beta_i)?;
        if gamma == 0 {
            return Err(KernelError::GammaInadmissible { gamma, i });
        }
        if !(delta_i > 0.0 && delta_i < 1.0) {
            return Err(KernelError::DeltaOutOfRange(delta_i));
        }
        let required = phi_for_weight(i, lambda_weight(beta_i));
        if phi < required {
            return Err(KernelError::PhiTooSmall { phi, i, required });
        }
        Ok(KernelSpec {
            i,
            beta_i,
            gamma,
            phi,
            delta_i,
        })
    }

    pub fn lambda(&self) -> f64 {
        (-self.beta_i).exp2()
    }

    /// `5 lambda_i - 1`
    pub fn weight(&self) -> f64 {
        lambda_weight(self.beta_i)
    }

    /// `r = gamma n i`
    pub fn repeats(&self, n: u32) -> u64 {
        self.gamma as u64 * n as u64 * self.i as u64
    }

    /// `2^{a}/(1 - 2^{a}) + 2^{b}/(1 - 2^{b})` with `a = alpha - gamma i`,
    /// `b = alpha - ((beta - alpha)/2) gamma i`; infinite when a ratio is
    /// not below 1.
    pub fn slack_profile(&self) -> f64 {
        let gi = self.gamma as f64 * self.i as f64;
        [
            HAUSDORFF_DIM - gi,
            HAUSDORFF_DIM - 0.5 * (self.beta_i - HAUSDORFF_DIM) * gi,
        ]
        .iter()
        .map(|e| {
            let t = e.exp2();
            if t < 1.0 {
                t / (1.0 - t)
            } else {
                f64::INFINITY
            }
        })
        .sum()
    }

    /// `a_i = delta_i C_i + (1 - delta_i)`
    pub fn blend(&self, c: f64) -> f64 {
        self.delta_i * c + (1.0 - self.delta_i)
    }

    /// `Phi`-truncated upper bound `sum_{n <= Phi} 2 * 9^{gamma n i}` on
    /// `C_i`: each point lies in at most two deep cells per level.
    pub fn max_kernel_bound(&self) -> f64 {
        (1..=self.phi).map(|n| 2.0 * 9f64.powf(self.repeats(n) as f64)).sum()
    }
}

/// `delta_i = 1 - 2^-i`, `beta_i = beta* - (beta* - alpha) 2^-i`, minimal
/// admissible `gamma` at `i = 1`, and `Phi(i)` made nondecreasing.
pub fn schedule(i_max: u32) -> Result<Vec<KernelSpec>, KernelError> {
    let beta = |i: u32| WALK_DIM - (WALK_DIM - HAUSDORFF_DIM) * (-(i as f64)).exp2();
    let gamma = minimal_gamma(1, beta(1))?;
    let mut specs = Vec::new();
    let mut phi = 0;
    for i in 1..=i_max {
        phi = phi.max(choose_phi(i, beta(i))?);
        specs.push(KernelSpec::new(i, beta(i), gamma, phi, 1.0 - (-(i as f64)).exp2())?);
    }
    Ok(specs)
}

/// `K_{w d^r}`: the deep cell at corner `d` of `K_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeepCell {
    pub base: Word,
    pub digit: u8,
    pub repeats: u64,
}

impl DeepCell {
    pub fn depth(&self) -> u64 {
        self.base.len() as u64 + self.repeats
    }

    /// `ν = 3^-(n+r)`, exactly.
    pub fn measure(&self) -> BigRational {
        BigRational::new(BigInt::from(1u8), BigInt::from(3u8).pow(self.depth() as u32))
    }

    /// `p = f_w(p_d)`.
    pub fn anchor(&self) -> Result<DyadicPoint, GeometryError> {
        Ok(cell_vertices(&self.base)?[self.digit as usize])
    }

    /// Full address `w d^r`, when it fits the packed word limit.
    pub fn address(&self) -> Result<Word, GeometryError> {
        if self.depth() > MAX_WORD_LEN as u64 {
            return Err(GeometryError::WordTooLong {
                len: self.depth() as usize,
                max: MAX_WORD_LEN,
            });
        }
        self.base.push_repeated(self.digit, self.repeats as usize)
    }

    /// Whether the cell of `address` (of any length) lies in this deep cell,
    /// or `None` if the address ends before that can be decided.
    fn contains_address(&self, address: &Word) -> Option<bool> {
        let n = self.base.len();
        if address.len() < n || !self.base.is_prefix_of(&address.prefix(n)) {
            return Some(false);
        }
        let end = (n as u64 + self.repeats).min(address.len() as u64) as usize;
        if (n..end).any(|k| address.digit(k) != self.digit) {
            return Some(false);
        }
        if (address.len() as u64) < self.depth() {
            None
        } else {
            Some(true)
        }
    }
}

/// Deep cell of `spec` at the corner `p` of `K_w`, with `n = |w|`, checked
/// against the default geometry depth budget.
pub fn deep_cell(w: &Word, p: &DyadicPoint, spec: &KernelSpec) -> Result<DeepCell, KernelError> {
    deep_cell_with_limits(w, p, spec, &GeometryLimits::default())
}

pub fn deep_cell_with_limits(
    w: &Word,
    p: &DyadicPoint,
    spec: &KernelSpec,
    limits: &GeometryLimits,
) -> Result<DeepCell, KernelError> {
    let corners = cell_vertices(w)?;
    let digit = corners
        .iter()
        .position(|c| c == p)
        .ok_or(KernelError::NotACorner(*p, *w))? as u8;
    let n = w.len() as u32;
    let cell = DeepCell {
        base: *w,
        digit,
        repeats: spec.repeats(n),
    };
    let max = limits.max_depth;
    if cell.depth() > max as u64 {
        return Err(KernelError::DepthOverflow {
            n,
            i: spec.i,
            depth: cell.depth(),
            max,
        });
    }
    Ok(cell)
}

/// Exact `ν(K_p) ν(K_q) * 9^-n / (ν(K_p) ν(K_q))` summed over the level-`n`
/// layer: every term of `C_i` integrates to its weight, so the layer carries
/// `9^-n * 3^n * 6`.
pub fn layer_mass(n: u32, spec: &KernelSpec) -> BigRational {
    let nine_n = BigRational::from_integer(BigInt::from(9u8).pow(n));
    let mut total = BigRational::new(0.into(), 1.into());
    for w in Word::all(n as usize) {
        for j in 0..3u8 {
            for k in (0..3u8).filter(|&k| k != j) {
                let a = DeepCell {
                    base: w,
                    digit: j,
                    repeats: spec.repeats(n),
                }
                .measure();
                let b = DeepCell {
                    base: w,
                    digit: k,
                    repeats: spec.repeats(n),
                }
                .measure();
                let weight = BigRational::from_integer(1.into()) / (nine_n.clone() * a.clone() * b.clone());
                total += a * b * weight;
            }
        }
    }
    total
}

/// `C_i(x, y)` (or the untruncated `c_i`) for points given by addresses.
/// The untruncated sum runs while deep cells fit within the shorter
/// address; the truncated one needs every decisive digit up to `Phi`.
pub fn kernel_value(x: &Word, y: &Word, spec: &KernelSpec, truncated: bool) -> Result<f64, KernelError> {
    let mut terms = BTreeSet::new();
    collect_terms(&[*x], &[*y], spec, truncated, &mut terms)?;
    Ok(sum_terms(&terms, spec))
}

/// `C_i(x, y)` for points, counting every deep cell containing them (a
/// junction point lies in two cells of the same level). Addresses are
/// taken at `depth` digits.
pub fn kernel_value_at(
    x: &DyadicPoint,
    y: &DyadicPoint,
    spec: &KernelSpec,
    truncated: bool,
    depth: usize,
) -> Result<f64, KernelError> {
    let xs = locate(x, depth)?;
    let ys = locate(y, depth)?;
    let mut terms = BTreeSet::new();
    collect_terms(&xs, &ys, spec, truncated, &mut terms)?;
    Ok(sum_terms(&terms, spec))
}

/// Matching `(n, w, j, k)`, deduplicated across addresses.
fn collect_terms(
    xs: &[Word],
    ys: &[Word],
    spec: &KernelSpec,
    truncated: bool,
    terms: &mut BTreeSet<(u32, Word, u8, u8)>,
) -> Result<(), KernelError> {
    for x in xs {
        for y in ys {
            let shortest = x.len().min(y.len());
            for n in 1usize.. {
                if truncated && n > spec.phi as usize {
                    break;
                }
                if !truncated && n as u64 + spec.repeats(n as u32) > shortest as u64 {
                    break;
                }
                if n > shortest || x.prefix(n) != y.prefix(n) {
                    break;
                }
                let w = x.prefix(n);
                if shortest <= n {
                    return Err(KernelError::AddressTooShort {
                        needed: n as u64 + 1,
                        have: shortest,
                    });
                }
                let (j, k) = (x.digit(n), y.digit(n));
                if j == k {
                    continue;
                }
                let r = spec.repeats(n as u32);
                let a = DeepCell {
                    base: w,
                    digit: j,
                    repeats: r,
                };
                let b = DeepCell {
                    base: w,
                    digit: k,
                    repeats: r,
                };
                let decided = [a.contains_address(x), b.contains_address(y)];
                if decided.contains(&Some(false)) {
                    continue;
                }
                if decided.contains(&None) {
                    return Err(KernelError::AddressTooShort {
                        needed: a.depth(),
                        have: shortest,
                    });
                }
                terms.insert((n as u32, w, j, k));
            }
        }
    }
    Ok(())
}

fn sum_terms(terms: &BTreeSet<(u32, Word, u8, u8)>, spec: &KernelSpec) -> f64 {
    // 9^-n / (3^-(n+r))^2 = 9^r
    terms.iter().map(|(n, ..)| 9f64.powf(spec.repeats(*n) as f64)).sum()
}

/// How the deep-cell pair averages are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeepCellEstimator {
    /// Sub-cell centroid rule `refinement` levels inside each deep cell.
    PairSum {
        refinement: u32,
    },
    MonteCarlo {
        samples_per_pair: u64,
        seed: u64,
    },
}

/// How the plain Besov part `Ee_beta` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlainEstimator {
    /// Exact double sum over level-`level` cells.
    PairSum {
        level: u32,
    },
    MonteCarlo {
        level: u32,
        samples: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBudget {
    /// Levels `n` with explicitly integrated deep-cell pairs; beyond this
    /// the atomic limit `2^{(beta-alpha)n} b_n` is used.
    pub explicit_levels: u32,
    pub deep: DeepCellEstimator,
    pub plain: PlainEstimator,
}

impl Default for KernelBudget {
    fn default() -> Self {
        KernelBudget {
            explicit_levels: 6,
            deep: DeepCellEstimator::PairSum { refinement: 2 },
            plain: PlainEstimator::PairSum { level: 7 },
        }
    }
}

/// The `C_i` part of the kernel integral, split into its atomic limit and
/// the deviation of the deep-cell averages from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPart {
    /// `sum_{n <= levels} 2^{(beta-alpha)n} b_n`
    pub reference: f64,
    /// `∫∫ C (u(x)-u(y))^2 / |x-y|^s`, truncated at `levels`.
    pub value: f64,
    /// `value - reference`, accumulated termwise.
    pub deviation: f64,
    /// Estimated error of `deviation`.
    pub error: f64,
    pub levels: u32,
    pub explicit_levels: u32,
    /// Levels beyond the function's grid use `b_n = b_m (3/5)^{n-m}`.
    pub spline_levels: u32,
}

/// `∫∫ C (u(x)-u(y))^2 / |x-y|^{alpha+beta}` with the kernel summed over
/// `n = 1..=levels`.
pub fn kernel_part(
    gasket: &Gasket,
    u: &GridFunction<f64>,
    spec: &KernelSpec,
    levels: u32,
    budget: &KernelBudget,
) -> Result<KernelPart, KernelError> {
    let m = u.level();
    let explicit = budget.explicit_levels.min(levels);
    if explicit > m {
        return Err(KernelError::FunctionTooCoarse {
            level: m,
            needed: explicit,
        });
    }
    if let DeepCellEstimator::MonteCarlo { samples_per_pair, .. } = budget.deep {
        if samples_per_pair < 10 {
            return Err(KernelError::McBudget(samples_per_pair));
        }
    }
    let b_m = if levels > m { level_pair_sum(gasket, u, m)? } else { 0.0 };
    let mut reference = Vec::new();
    let mut deviation = Vec::new();
    let mut error = Vec::new();
    for n in 1..=levels {
        let b_n = if n <= m {
            level_pair_sum(gasket, u, n)?
        } else {
            b_m * 0.6f64.powi((n - m) as i32)
        };
        let weight = discrete_weight(spec.beta_i, n);
        reference.push(weight * b_n);
        if n <= explicit {
            let (dev, err) = layer_deviation(gasket, u, spec, n, &budget.deep);
            deviation.push(weight * dev);
            error.push(weight * err);
        }
    }
    let reference = pairwise_sum(&reference);
    let dev = pairwise_sum(&deviation);
    Ok(KernelPart {
        reference,
        value: reference + dev,
        deviation: dev,
        error: pairwise_sum(&error),
        levels,
        explicit_levels: explicit,
        spline_levels: levels.saturating_sub(m),
    })
}

/// `sum_{w, j != k} [avg 2^{-sn} (u(x)-u(y))^2/|x-y|^s - (u(p)-u(q))^2]` at
/// level `n`, with an error estimate.
fn layer_deviation(
    gasket: &Gasket,
    u: &GridFunction<f64>,
    spec: &KernelSpec,
    n: u32,
    estimator: &DeepCellEstimator,
) -> (f64, f64) {
    let s = HAUSDORFF_DIM + spec.beta_i;
    let r = spec.repeats(n);
    let scale = (-(r as f64)).exp2();
    let results: Vec<(f64, f64)> = gasket
        .cells(n)
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let (mut devs, mut errs) = (Vec::new(), Vec::new());
            for (offset, ids) in chunk.iter().enumerate() {
                let c = ids.map(|id| *u.value(id));
                let deep: Vec<[f64; 3]> = (0..3u8).map(|j| repeat_child(&c, j, r)).collect();
                for j in 0..3usize {
                    for k in (0..3usize).filter(|&k| k != j) {
                        let atom = (c[j] - c[k]).powi(2);
                        let pair = DeepPair {
                            a: deep[j],
                            b: deep[k],
                            j,
                            k,
                            scale,
                            s,
                        };
                        let (dev, err) = match *estimator {
                            DeepCellEstimator::PairSum { refinement } => pair.pair_sum(refinement, atom),
                            DeepCellEstimator::MonteCarlo { samples_per_pair, seed } => {
                                let index = (chunk_idx * CHUNK + offset) as u64;
                                let stream = ((n as u64) << 40) | (index << 3) | (j * 3 + k) as u64;
                                pair.monte_carlo(samples_per_pair, seed, stream, atom)
                            }
                        };
                        devs.push(dev);
                        errs.push(err);
                    }
                }
            }
            (pairwise_sum(&devs), pairwise_sum(&errs))
        })
        .collect();
    let devs: Vec<f64> = results.iter().map(|r| r.0).collect();
    let errs: Vec<f64> = results.iter().map(|r| r.1).collect();
    (pairwise_sum(&devs), pairwise_sum(&errs))
}

/// Corner values after refining `r` times towards corner `d`. The
/// refinement contracts at rate `3/5`, so it stops once values are fixed.
fn repeat_child(c: &[f64; 3], d: u8, r: u64) -> [f64; 3] {
    let mut c = *c;
    for _ in 0..r {
        let next = harmonic_child(&c, d);
        if next == c {
            break;
        }
        c = next;
    }
    c
}

fn unit_corner(j: usize) -> [f64; 2] {
    [[0.0, 0.0], [1.0, 0.0], [0.5, 0.75f64.sqrt()]][j]
}

/// Two deep cells at corners `j`, `k` of one cell, in units where the cell
/// has side 1: `x = p_j + scale (ξ - p_j)`, `y = p_k + scale (η - p_k)`.
struct DeepPair {
    a: [f64; 3],
    b: [f64; 3],
    j: usize,
    k: usize,
    scale: f64,
    s: f64,
}

impl DeepPair {
    /// Sub-cells at `level`: (centroid offset from the anchor, mean value).
    fn subcells(corners: &[f64; 3], anchor: usize, level: u32) -> Vec<([f64; 2], f64)> {
        let p = unit_corner(anchor);
        Word::all(level as usize)
            .map(|v| {
                let mut values = *corners;
                let mut pts = [0, 1, 2].map(unit_corner);
                for d in v.digits() {
                    values = harmonic_child(&values, d);
                    let q = pts[d as usize];
                    pts = pts.map(|x| [(x[0] + q[0]) / 2.0, (x[1] + q[1]) / 2.0]);
                }
                let cx = pts.iter().map(|x| x[0]).sum::<f64>() / 3.0 - p[0];
                let cy = pts.iter().map(|x| x[1]).sum::<f64>() / 3.0 - p[1];
                ([cx, cy], values.iter().sum::<f64>() / 3.0)
            })
            .collect()
    }

    /// `(ux - uy)^2 / |Δ|^s - atom` where `Δ = (p_j - p_k) + scale (ξ - η)`
    /// has `|p_j - p_k| = 1`; written to avoid cancellation.
    fn deviation(&self, xi: [f64; 2], eta: [f64; 2], ux: f64, uy: f64, atom: f64) -> f64 {
        let (pj, pk) = (unit_corner(self.j), unit_corner(self.k));
        let base = [pj[0] - pk[0], pj[1] - pk[1]];
        let e = [self.scale * (xi[0] - eta[0]), self.scale * (xi[1] - eta[1])];
        // |Δ|^2 - 1
        let excess = 2.0 * (base[0] * e[0] + base[1] * e[1]) + e[0] * e[0] + e[1] * e[1];
        let inv_pow_minus_one = (-0.5 * self.s * excess.ln_1p()).exp_m1();
        let diff2 = (ux - uy).powi(2);
        (diff2 - atom) * (1.0 + inv_pow_minus_one) + atom * inv_pow_minus_one
    }

    fn average_deviation(&self, level: u32, atom: f64) -> f64 {
        let xs = Self::subcells(&self.a, self.j, level);
        let ys = Self::subcells(&self.b, self.k, level);
        let terms: Vec<f64> = xs
            .iter()
            .flat_map(|(xi, ux)| {
                ys.iter()
                    .map(move |(eta, uy)| self.deviation(*xi, *eta, *ux, *uy, atom))
            })
            .collect();
        pairwise_sum(&terms) / terms.len() as f64
    }

    /// Centroid rule at `refinement`, error from one level coarser.
    fn pair_sum(&self, refinement: u32, atom: f64) -> (f64, f64) {
        let fine = self.average_deviation(refinement, atom);
        let coarse = self.average_deviation(refinement.saturating_sub(1), atom);
        (fine, (fine - coarse).abs())
    }

    /// Uniform points at 24 digits below the deep cell.
    fn monte_carlo(&self, samples: u64, seed: u64, stream: u64, atom: f64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let draw = |corners: &[f64; 3], anchor: usize, rng: &mut ChaCha8Rng| {
            let p = unit_corner(anchor);
            let mut values = *corners;
            let mut pts = [0, 1, 2].map(unit_corner);
            for _ in 0..24 {
                let d: u8 = rng.gen_range(0..3);
                values = harmonic_child(&values, d);
                let q = pts[d as usize];
                pts = pts.map(|x| [(x[0] + q[0]) / 2.0, (x[1] + q[1]) / 2.0]);
            }
            ([pts[0][0] - p[0], pts[0][1] - p[1]], values[0])
        };
        let (mut mean, mut m2) = (0.0, 0.0);
        for t in 1..=samples {
            let (xi, ux) = draw(&self.a, self.j, &mut rng);
            let (eta, uy) = draw(&self.b, self.k, &mut rng);
            let x = self.deviation(xi, eta, ux, uy, atom);
            let delta = x - mean;
            mean += delta / t as f64;
            m2 += delta * (x - mean);
        }
        let var = if samples > 1 { m2 / (samples - 1) as f64 } else { 0.0 };
        (mean, (var / samples as f64).sqrt())
    }
}

/// Plain Besov integral `Ee_beta(u)` with its estimator metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainPart {
    pub value: f64,
    pub error: f64,
    pub level: u32,
}

pub fn plain_part(
    gasket: &Gasket,
    u: &GridFunction<f64>,
    beta: f64,
    estimator: &PlainEstimator,
) -> Result<PlainPart, KernelError> {
    Ok(match *estimator {
        PlainEstimator::PairSum { level } => {
            let table = CellTable::new(gasket, u, level)?;
            let fine = direct_pair_integral(&table, beta);
            // discretization indicator: change from one level coarser
            let coarse = if level > 1 {
                direct_pair_integral(&CellTable::new(gasket, u, level - 1)?, beta)
            } else {
                0.0
            };
            PlainPart {
                value: fine,
                error: (fine - coarse).abs(),
                level,
            }
        }
        PlainEstimator::MonteCarlo { level, samples, seed } => {
            let table = CellTable::new(gasket, u, level)?;
            let est = monte_carlo_on(&table, beta, samples, seed)?;
            PlainPart {
                value: est.value,
                error: est.error,
                level,
            }
        }
    })
}

/// `(5 lambda - 1)[delta C-part + (1 - delta) Ee_beta]` with its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEnergyReport {
    pub spec: KernelSpec,
    pub kernel: KernelPart,
    pub plain: PlainPart,
    pub weighted_energy: f64,
}

pub fn weighted_kernel_energy(
    gasket: &Gasket,
    u: &GridFunction<f64>,
    spec: &KernelSpec,
    budget: &KernelBudget,
) -> Result<KernelEnergyReport, KernelError> {
    let kernel = kernel_part(gasket, u, spec, spec.phi, budget)?;
    let plain = plain_part(gasket, u, spec.beta_i, &budget.plain)?;
    let weighted_energy = spec.weight() * (spec.delta_i * kernel.value + (1.0 - spec.delta_i) * plain.value);
    Ok(KernelEnergyReport {
        spec: *spec,
        kernel,
        plain,
        weighted_energy,
    })
}

/// Two-sided comparison of the kernel integral with `sum 2^{(beta-alpha)n} b_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub slack: f64,
    /// `slack >= 1`: the bound says nothing at this `i`.
    pub vacuous: bool,
    pub holds: bool,
}

/// `slack = c_hat * spec.slack_profile()`.
pub fn kernel_sandwich_check(part: &KernelPart, spec: &KernelSpec, c_hat: f64) -> SandwichCheck {
    let slack = c_hat * spec.slack_profile();
    let lower = (1.0 - slack) * part.reference;
    let upper = (1.0 + slack) * part.reference;
    SandwichCheck {
        lower,
        middle: part.value,
        upper,
        slack,
        vacuous: slack >= 1.0 || slack.is_nan(),
        holds: lower <= part.value && part.value <= upper,
    }
}

/// Smallest constant making the sandwich hold for these parts:
/// `max |deviation / reference| / slack_profile`.
pub fn calibrate_slack_constant<'a>(parts: impl IntoIterator<Item = (&'a KernelPart, &'a KernelSpec)>) -> f64 {
    parts
        .into_iter()
        .filter(|(p, _)| p.reference > 0.0)
        .map(|(p, s)| (p.deviation / p.reference).abs() / s.slack_profile())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::TestFunction;

    fn loose(i: u32, gamma: u32) -> KernelSpec {
        let beta = 2.0;
        KernelSpec::with_any_gamma(i, beta, gamma, choose_phi(i, beta).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn deep_cell_examples() {
        let w: Word = "0".parse().unwrap();
        let p = DyadicPoint::new(1, 1, 0);
        let c = deep_cell(&w, &p, &loose(1, 1)).unwrap();
        assert_eq!(c.address().unwrap().to_string(), "01");
        assert_eq!(c.measure(), BigRational::new(1.into(), 9.into()));
        let c2 = deep_cell(&w, &p, &loose(2, 1)).unwrap();
        assert_eq!(c2.address().unwrap().to_string(), "011");
        assert_eq!(c2.measure(), BigRational::new(1.into(), 27.into()));
        assert_eq!(c.anchor().unwrap(), p);
        assert!(matches!(
            deep_cell(&w, &DyadicPoint::new(2, 3, 0), &loose(1, 1)),
            Err(KernelError::NotACorner(..))
        ));
        let deep = KernelSpec::new(1, 1.95, 9, 4, 0.5).unwrap();
        let long: Word = "01010".parse().unwrap();
        let corner = cell_vertices(&long).unwrap()[2];
        assert!(matches!(
            deep_cell(&long, &corner, &deep),
            Err(KernelError::DepthOverflow { n: 5, i: 1, .. })
        ));
    }

    #[test]
    fn deep_cell_contains_its_anchor() {
        let spec = loose(2, 1);
        for w in Word::all(2) {
            for p in cell_vertices(&w).unwrap() {
                let c = deep_cell(&w, &p, &spec).unwrap();
                let addr = c.address().unwrap();
                assert!(cell_vertices(&addr).unwrap().contains(&p));
                let far = cell_vertices(&addr).unwrap();
                let bound = crate::gasket::SquaredDistance {
                    numerator: 1,
                    scale: c.depth() as u32,
                };
                for x in far {
                    assert!(x.squared_distance(&p).to_f64() <= bound.to_f64());
                }
            }
        }
    }

    #[test]
    fn choose_phi_examples() {
        assert_eq!(phi_for_weight(1, 0.5), 2);
        assert_eq!(phi_for_weight(10, 0.1), 100);
        let beta = (5.0f64 / 1.5).log2();
        assert_eq!(choose_phi(1, beta).unwrap(), 2);
        let beta = (5.0f64 / 1.1).log2();
        assert_eq!(choose_phi(10, beta).unwrap(), 100);
        assert!(choose_phi(1, WALK_DIM).is_err());
        assert!(choose_phi(1, 1.5).is_err());
    }

    #[test]
    fn default_schedule() {
        let specs = schedule(4).unwrap();
        assert_eq!(specs[0].gamma, 9);
        assert!(!gamma_admissible(8, 1, specs[0].beta_i));
        let phis: Vec<u32> = specs.iter().map(|s| s.phi).collect();
        assert_eq!(phis, vec![4, 15, 46, 124]);
        for s in &specs {
            assert!(s.weight() * s.phi as f64 >= s.i as f64);
        }
        let slack: Vec<f64> = specs.iter().map(|s| s.slack_profile()).collect();
        assert!(slack.windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(
            KernelSpec::new(1, 2.0, 1, 10, 0.5),
            Err(KernelError::GammaInadmissible { .. })
        ));
        assert!(matches!(
            KernelSpec::new(1, 2.0, 20, 1, 0.5),
            Err(KernelError::PhiTooSmall { .. })
        ));
        assert!(KernelSpec::new(1, 2.0, 20, 10, 1.0).is_err());
    }

    #[test]
    fn kernel_value_examples() {
        let spec = loose(1, 1);
        // x in K_{01}, y in K_{02}: the n = 1 term for p = (1/2, 0), q = (1/4, √3/4)
        let x: Word = "0111".parse().unwrap();
        let y: Word = "0222".parse().unwrap();
        let c = kernel_value(&x, &y, &spec, true).unwrap();
        assert!(c >= 9.0);
        let single = kernel_value(
            &"01".parse().unwrap(),
            &"02".parse().unwrap(),
            &KernelSpec { phi: 1, ..spec },
            true,
        )
        .unwrap();
        assert_eq!(single, 9.0);
        assert_eq!(kernel_value(&y, &x, &spec, true).unwrap(), c);
        // different first digits never share a cell below the root
        let z: Word = "1222".parse().unwrap();
        assert_eq!(kernel_value(&x, &z, &spec, true).unwrap(), 0.0);
        assert!(spec.blend(0.0) >= 1.0 - spec.delta_i);
        assert!(matches!(
            kernel_value(&"01".parse().unwrap(), &"01".parse().unwrap(), &spec, true),
            Err(KernelError::AddressTooShort { .. })
        ));
    }

    #[test]
    fn junction_points_count_both_cells() {
        let spec = KernelSpec { phi: 1, ..loose(1, 1) };
        // (1/2, 0) is corner 1 of K_0 and corner 0 of K_1
        let x = DyadicPoint::new(1, 1, 0);
        let y0 = DyadicPoint::new(2, 1, 1); // corner 2 of K_0
        let y1 = DyadicPoint::new(2, 3, 1); // corner 2 of K_1
        let c0 = kernel_value_at(&x, &y0, &spec, true, 6).unwrap();
        let c1 = kernel_value_at(&x, &y1, &spec, true, 6).unwrap();
        assert_eq!(c0, 9.0);
        assert_eq!(c1, 9.0);
    }

    #[test]
    fn kernel_bounded_by_max() {
        let spec = KernelSpec { phi: 3, ..loose(1, 1) };
        let bound = spec.max_kernel_bound();
        let mut best = 0.0f64;
        for x in Word::all(5) {
            for y in Word::all(5) {
                let c = kernel_value(&x, &y, &spec, false).unwrap();
                assert_eq!(c, kernel_value(&y, &x, &spec, false).unwrap());
                best = best.max(c);
            }
        }
        assert!(best > 0.0 && best <= bound);
        assert!(spec.blend(best) <= (1.0 - spec.delta_i) + spec.delta_i * bound);
    }

    #[test]
    fn layer_mass_bookkeeping() {
        let spec = loose(1, 1);
        for n in 1..=3 {
            let expected = BigRational::new(6.into(), BigInt::from(3u8).pow(n));
            assert_eq!(layer_mass(n, &spec), expected);
        }
    }

    #[test]
    fn averages_approach_atoms() {
        // single (w, p, q) terms at n = 1 with gamma = 9, r = 9i; with gamma = 1
        // the value and distance corrections can cancel at one i
        let u = [1.0f64, 0.0, 0.0];
        let s = HAUSDORFF_DIM + 2.0;
        for w in 0..3u8 {
            let c = harmonic_child(&u, w);
            for (j, k) in [(0usize, 1usize), (1, 2), (2, 0), (1, 0)] {
                let atom = (c[j] - c[k]).powi(2);
                if atom == 0.0 {
                    continue;
                }
                let devs: Vec<f64> = (1..=4u64)
                    .map(|i| {
                        let r = 9 * i;
                        let pair = DeepPair {
                            a: repeat_child(&c, j as u8, r),
                            b: repeat_child(&c, k as u8, r),
                            j,
                            k,
                            scale: (-(r as f64)).exp2(),
                            s,
                        };
                        (pair.pair_sum(2, atom).0 / atom).abs()
                    })
                    .collect();
                assert!(devs.windows(2).all(|d| d[1] < d[0]), "{w} {j} {k} {devs:?}");
            }
        }
    }

    #[test]
    fn constant_function_has_zero_energy() {
        let g = Gasket::new(5).unwrap();
        let c = GridFunction::constant(&g, 5, 3.0).unwrap();
        let spec = schedule(1).unwrap()[0];
        let budget = KernelBudget {
            explicit_levels: 3,
            plain: PlainEstimator::PairSum { level: 4 },
            ..Default::default()
        };
        let report = weighted_kernel_energy(&g, &c, &spec, &budget).unwrap();
        assert_eq!(report.weighted_energy, 0.0);
    }

    #[test]
    fn monte_carlo_deep_cells_agree_with_pair_sum() {
        let g = Gasket::new(3).unwrap();
        let u = TestFunction::CoordinateX {}.materialize::<f64>(&g, 3).unwrap();
        let spec = KernelSpec::with_any_gamma(1, 2.0, 1, 4, 0.5).unwrap();
        let pair = kernel_part(
            &g,
            &u,
            &spec,
            1,
            &KernelBudget {
                explicit_levels: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mc = kernel_part(
            &g,
            &u,
            &spec,
            1,
            &KernelBudget {
                explicit_levels: 1,
                deep: DeepCellEstimator::MonteCarlo {
                    samples_per_pair: 4000,
                    seed: 5,
                },
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (pair.value - mc.value).abs() < 4.0 * mc.error + pair.error,
            "{pair:?} {mc:?}"
        );
        assert!(kernel_part(
            &g,
            &u,
            &spec,
            1,
            &KernelBudget {
                explicit_levels: 1,
                deep: DeepCellEstimator::MonteCarlo {
                    samples_per_pair: 9,
                    seed: 5
                },
                ..Default::default()
            },
        )
        .is_err());
    }
}
