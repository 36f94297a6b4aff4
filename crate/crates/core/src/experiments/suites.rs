use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::table::{ResultTable, Value};
use super::{Corpus, ExperimentError};
use crate::functions::{GridFunction, TestFunction};
use crate::gasket::HAUSDORFF_DIM;
use crate::kernels::{
    calibrate_slack_constant, kernel_sandwich_check, schedule, weighted_kernel_energy, DeepCellEstimator, KernelBudget,
    KernelEnergyReport, KernelSpec, PlainEstimator,
};
use crate::scalar::Scalar;
use crate::seminorms::{
    annulus_profiles, discrete_seminorm, hoelder_ratio, interval_seminorm, level_pair_sum, local_energy_sequence,
    monte_carlo_on, renormalization, spline_energy_sequence, trace_restrict, trace_termwise, weighted_tail_sum,
    AnnulusParams, CellTable,
};
use crate::BigRational;

/// Ratios further apart than this are reported as unbounded.
const EQUIVALENCE_SPREAD: f64 = 1e3;
/// Agreement of the two estimators, in standard errors.
const MC_Z: f64 = 3.0;
/// Tolerance of the extended closed-form check.
const CLOSED_FORM_TOL: f64 = 1e-9;
/// Largest admissible relative gap to the limit at the last index.
const FINAL_GAP: f64 = 0.10;

fn exact_copy(u: &GridFunction<f64>, level: u32, corpus: &Corpus) -> GridFunction<BigRational> {
    u.restrict(&corpus.gasket, level)
        .map(|x| BigRational::from_f64_exact(*x))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

/// Annulus and Monte Carlo estimates against the discrete semi-norm,
/// cutoff robustness, and the Hölder ratio at two resolutions.
pub fn run_equivalence(config: &ExperimentConfig, corpus: &Corpus) -> Result<ResultTable, ExperimentError> {
    let g = &corpus.gasket;
    let n = config.levels.truncation;
    let m = config.levels.quadrature;
    let mut t = ResultTable::new(
        "equivalence",
        &config.hash(),
        &[
            "function",
            "beta",
            "e_beta_partial",
            "annulus",
            "annulus_tail",
            "mc",
            "mc_stderr",
            "mc_discarded",
            "ratio",
            "mc_annulus_z",
            "robust_min",
            "robust_max",
        ],
    );

    let refs: Vec<&GridFunction<f64>> = corpus.functions.iter().map(|(_, u)| u).collect();
    let base_params = AnnulusParams::new(n, m);
    let base = annulus_profiles(g, &refs, base_params)?;
    let mut variants = Vec::new();
    for &start in &config.robustness.starts {
        for &radius_log2 in &config.robustness.radius_log2 {
            let params = AnnulusParams {
                start,
                radius_log2,
                ..base_params
            };
            if params != base_params {
                variants.push(annulus_profiles(g, &refs, params)?);
            }
        }
    }
    let tables: Vec<CellTable> = corpus
        .functions
        .par_iter()
        .map(|(_, u)| CellTable::new(g, u, m))
        .collect::<Result<_, _>>()?;

    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let (mut robust_lo, mut robust_hi) = (f64::INFINITY, 0.0f64);
    let mut robust_ok = true;
    let mut flips = Vec::new();
    let mut max_z = 0.0f64;
    let mut mc_by_beta: Vec<(String, f64, f64)> = Vec::new();
    for (fi, (f, u)) in corpus.functions.iter().enumerate() {
        for (bi, &beta) in config.beta_grid.iter().enumerate() {
            let e = discrete_seminorm(g, u, beta, n)?.e_beta_partial;
            let ann = base[fi].estimate(beta);
            let seed = super::derive_seed(config.seed(), "equivalence", &[fi as u64, bi as u64]);
            let mc = monte_carlo_on(&tables[fi], beta, config.mc.samples, seed)?;
            let z = if mc.error > 0.0 {
                (mc.value - ann.value) / mc.error
            } else if mc.value == ann.value {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z.abs());
            mc_by_beta.push((f.name(), beta, mc.value));

            let base_finite = ann.value.is_finite() && ann.error.is_finite();
            let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
            for v in &variants {
                let est = v[fi].estimate(beta);
                if (est.value.is_finite() && est.error.is_finite()) != base_finite {
                    robust_ok = false;
                    flips.push(format!(
                        "{}@{beta}(start {}, c 2^{})",
                        f.name(),
                        v[fi].params.start,
                        v[fi].params.radius_log2
                    ));
                }
                if ann.value > 0.0 {
                    let r = est.value / ann.value;
                    rmin = rmin.min(r);
                    rmax = rmax.max(r);
                }
            }
            let ratio = if e > 0.0 {
                let r = ann.value / e;
                lo = lo.min(r);
                hi = hi.max(r);
                Value::num(r)
            } else {
                Value::from("skipped")
            };
            if rmax > 0.0 {
                robust_lo = robust_lo.min(rmin);
                robust_hi = robust_hi.max(rmax);
            }
            t.push(vec![
                f.name().into(),
                beta.into(),
                e.into(),
                ann.value.into(),
                ann.error.into(),
                mc.value.into(),
                mc.error.into(),
                mc.discarded.unwrap_or(0).into(),
                ratio,
                z.into(),
                if rmax > 0.0 { rmin.into() } else { "skipped".into() },
                if rmax > 0.0 { rmax.into() } else { "skipped".into() },
            ]);
        }
    }

    let spread = if hi > 0.0 { hi / lo } else { f64::NAN };
    t.summary.insert("ratio_min".into(), Value::num(lo));
    t.summary.insert("ratio_max".into(), Value::num(hi));
    t.summary.insert("ratio_spread".into(), Value::num(spread));
    t.summary
        .insert("equivalence_constant".into(), Value::num(hi.max(1.0 / lo)));
    t.summary.insert("robust_min".into(), Value::num(robust_lo));
    t.summary.insert("robust_max".into(), Value::num(robust_hi));
    t.summary.insert("mc_max_abs_z".into(), Value::num(max_z));
    t.verdict(
        "equivalence_bounded",
        spread.is_finite() && spread < EQUIVALENCE_SPREAD,
        format!("annulus / E_beta in [{lo:.6}, {hi:.6}], spread {spread:.4} (limit {EQUIVALENCE_SPREAD})"),
    );
    // The finite/infinite call reads the decay of the last two terms, which
    // near beta* is not resolved by a handful of levels; recorded only.
    t.diagnostic(
        "cutoff_robustness",
        robust_ok,
        format!(
            "{} cutoff variants; value factor in [{robust_lo:.4}, {robust_hi:.4}]; finiteness flips: [{}]",
            variants.len(),
            flips.join(", ")
        ),
    );
    // Expected to fail: the Monte Carlo estimand is the plain double integral,
    // which is equivalent to the annulus sum but not equal to it.
    t.verdict(
        "mc_agreement",
        max_z <= MC_Z,
        format!("max |mc - annulus| / stderr = {max_z:.2} (limit {MC_Z})"),
    );
    // Recorded only: no monotonicity in beta is claimed.
    if let (Some(first), Some(last)) = (config.beta_grid.first(), config.beta_grid.last()) {
        let mut all_decreasing = true;
        let decreasing: Vec<String> = corpus
            .functions
            .iter()
            .filter(|(_, u)| !u.is_constant())
            .map(|(f, _)| {
                let get = |b: f64| {
                    mc_by_beta
                        .iter()
                        .find(|(name, beta, _)| *name == f.name() && *beta == b)
                        .map(|x| x.2)
                        .unwrap_or(f64::NAN)
                };
                let dec = get(*first) > get(*last);
                all_decreasing &= dec;
                format!("{}: {dec}", f.name())
            })
            .collect();
        t.diagnostic(
            "mc_decreasing_in_beta",
            all_decreasing,
            format!("mc(beta={first}) > mc(beta={last}): {}", decreasing.join(", ")),
        );
    }

    let h = &config.hoelder;
    let mut stable = true;
    for (f, u) in corpus.functions.iter().filter(|(_, u)| !u.is_constant()) {
        for &beta in &h.betas {
            let energy = discrete_seminorm(g, u, beta, n)?.e_beta_partial;
            let coarse = hoelder_ratio(g, u, beta, energy, h.coarse_level)?;
            let fine = hoelder_ratio(g, u, beta, energy, h.fine_level)?;
            let ok = coarse.is_finite() && fine.is_finite() && (fine - coarse).abs() <= h.tolerance * coarse;
            stable &= ok;
            let key = format!("hoelder[{}][{beta}]", f.name());
            t.summary
                .insert(format!("{key}.level{}", h.coarse_level), Value::num(coarse));
            t.summary
                .insert(format!("{key}.level{}", h.fine_level), Value::num(fine));
        }
    }
    t.verdict(
        "hoelder_stable",
        stable,
        format!(
            "ratio at level {} within ±{} of level {} for every nonconstant function",
            h.fine_level, h.tolerance, h.coarse_level
        ),
    );
    Ok(t)
}

/// Exact renormalized energies, tail-completed weighted sums over the
/// lambda grid, and the spline-extended closed form.
pub fn run_monotone(config: &ExperimentConfig, corpus: &Corpus) -> Result<ResultTable, ExperimentError> {
    let g = &corpus.gasket;
    let n = config.levels.truncation;
    let big_n = config.extended_truncation as usize;
    let mut t = ResultTable::new(
        "monotone",
        &config.hash(),
        &[
            "function",
            "lambda",
            "a_1",
            "a_N",
            "partial",
            "tail",
            "completed",
            "gap",
            "extended_partial",
            "closed_form",
        ],
    );
    let mut lambdas = config.lambda_grid.clone();
    lambdas.sort_by(f64::total_cmp);

    let mut all_nondecreasing = true;
    let mut completed_monotone = true;
    let mut below_limit = true;
    let mut partial_monotone = true;
    let mut closed_ok = true;
    let mut closed_checked = 0;
    for (f, _) in &corpus.functions {
        let exact = if n >= f.min_level() {
            f.materialize::<BigRational>(g, n)?
        } else {
            exact_copy(
                &corpus.functions.iter().find(|(h, _)| h == f).expect("corpus member").1,
                n,
                corpus,
            )
        };
        let a = local_energy_sequence(g, &exact, n)?;
        let nondecreasing = a.windows(2).all(|w| w[0] <= w[1]);
        all_nondecreasing &= nondecreasing;
        let constant = a.windows(2).all(|w| w[0] == w[1]);
        let a_f: Vec<f64> = a.iter().map(Scalar::to_f64_lossy).collect();
        t.summary.insert(format!("a_n[{}]", f.name()), fmt_list(&a_f).into());
        let extended = spline_energy_sequence(&a, big_n);
        let a_last = a[a.len() - 1].clone();

        let mut prev: Option<(BigRational, BigRational)> = None;
        for &lam in &lambdas {
            let l = BigRational::from_f64_exact(lam);
            let w = weighted_tail_sum(&a, &l, n as usize)?;
            let completed = w.completed();
            below_limit &= completed <= a_last;
            if let Some((p_partial, p_completed)) = &prev {
                completed_monotone &= completed <= *p_completed;
                partial_monotone &= w.partial <= *p_partial;
            }
            let ext = weighted_tail_sum(&extended, &l, big_n)?;
            let closed = if constant {
                // (5l - 1) sum_{k<=N} (5l)^{-k} a = a (1 - (5l)^{-N})
                let r = BigRational::from_integer(5.into()) * l.clone();
                let cf = a[0].clone() * (BigRational::from_integer(1.into()) - r.powi_exact(big_n as u32).recip());
                let diff = (ext.partial.clone() - cf.clone()).to_f64_lossy().abs();
                closed_ok &= diff <= CLOSED_FORM_TOL * a[0].to_f64_lossy().abs().max(1.0);
                closed_checked += 1;
                Value::num(cf.to_f64_lossy())
            } else {
                Value::from("n/a")
            };
            t.push(vec![
                f.name().into(),
                lam.into(),
                a[0].to_f64_lossy().into(),
                a_last.to_f64_lossy().into(),
                w.partial.to_f64_lossy().into(),
                w.tail.to_f64_lossy().into(),
                completed.to_f64_lossy().into(),
                (a_last.clone() - completed.clone()).to_f64_lossy().into(),
                ext.partial.to_f64_lossy().into(),
                closed,
            ]);
            prev = Some((w.partial, completed));
        }
    }
    t.verdict(
        "energies_nondecreasing",
        all_nondecreasing,
        format!("a_n nondecreasing in exact arithmetic for n = 1..={n}"),
    );
    t.verdict(
        "completed_nonincreasing_in_lambda",
        completed_monotone,
        "partial + tail nonincreasing over the sorted lambda grid (exact)",
    );
    t.verdict(
        "completed_below_limit",
        below_limit,
        "partial + tail <= a_N for every lambda (exact)",
    );
    t.verdict(
        "extended_closed_form",
        closed_ok,
        format!("{closed_checked} constant-energy rows match a (1 - (5 lambda)^-{big_n}) within {CLOSED_FORM_TOL}"),
    );
    t.diagnostic(
        "partial_nonincreasing_in_lambda",
        partial_monotone,
        "truncated partial sums alone (no tail); recorded only",
    );
    Ok(t)
}

/// Termwise trace inequality on the bottom edge.
pub fn run_trace(config: &ExperimentConfig, corpus: &Corpus) -> Result<ResultTable, ExperimentError> {
    let g = &corpus.gasket;
    let n = config.levels.truncation;
    let mut t = ResultTable::new(
        "trace",
        &config.hash(),
        &[
            "function",
            "beta1",
            "beta2",
            "interval_seminorm",
            "e_beta_partial",
            "ratio",
            "levels_checked",
            "levels_holding",
            "levels_holding_weighted",
            "strict_at_1",
        ],
    );
    let mut all_hold = true;
    let mut weighted_hold = true;
    for (f, u) in &corpus.functions {
        let levels = trace_termwise(g, &exact_copy(u, n, corpus), n)?;
        let holding = levels.iter().filter(|l| l.holds).count() as u32;
        all_hold &= holding == n;
        let strict = levels.first().map(|l| l.interval < l.gasket);
        let v = trace_restrict(g, u);
        for &beta1 in &config.beta_grid {
            let beta2 = beta1 - HAUSDORFF_DIM + 1.0;
            let interval = interval_seminorm(&v, beta2, n)?;
            let e = discrete_seminorm(g, u, beta1, n)?.e_beta_partial;
            let weighted = levels
                .iter()
                .filter(|l| {
                    let (i, s) = l.weighted(beta1);
                    i <= s
                })
                .count() as u32;
            weighted_hold &= weighted == n;
            t.push(vec![
                f.name().into(),
                beta1.into(),
                beta2.into(),
                interval.into(),
                e.into(),
                if e > 0.0 {
                    Value::num(interval / e)
                } else {
                    "skipped".into()
                },
                n.into(),
                holding.into(),
                weighted.into(),
                strict.map(Value::from).unwrap_or_else(|| "n/a".into()),
            ]);
        }
    }
    t.verdict(
        "termwise_exact",
        all_hold,
        format!("interval pair sum <= gasket pair sum at every level 1..={n} (exact arithmetic)"),
    );
    t.diagnostic(
        "termwise_weighted",
        weighted_hold,
        "same comparison after the common float weight",
    );
    let probe = TestFunction::Harmonic {
        boundary: [0.0, 1.0, 0.0],
    }
    .materialize::<BigRational>(g, 1)?;
    let mid = trace_restrict(g, &probe);
    let two_fifths = BigRational::new(2.into(), 5.into());
    let ok = mid.values.get(1) == Some(&two_fifths);
    t.verdict(
        "trace_midpoint",
        ok,
        format!(
            "harmonic(0,1,0) at (1/2, 0) = {}",
            mid.values.get(1).map(|x| x.to_string()).unwrap_or_default()
        ),
    );
    Ok(t)
}

fn kernel_specs(config: &ExperimentConfig) -> Result<Vec<KernelSpec>, ExperimentError> {
    let specs = schedule(config.kernel.i_max)?;
    match config.kernel.gamma {
        None => Ok(specs),
        Some(gamma) => specs
            .iter()
            .map(|s| KernelSpec::new(s.i, s.beta_i, gamma, s.phi, s.delta_i).map_err(Into::into))
            .collect(),
    }
}

/// Rounds up to three significant digits.
fn round_up_3(x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return x;
    }
    let step = 10f64.powi(x.log10().floor() as i32 - 2);
    (x / step).ceil() * step
}

/// Weighted kernel energies along the schedule, the two-sided sandwich of
/// the kernel part, and convergence towards the limiting energy.
pub fn run_kernels(config: &ExperimentConfig, corpus: &Corpus) -> Result<ResultTable, ExperimentError> {
    let g = &corpus.gasket;
    let k = &config.kernel;
    let specs = kernel_specs(config)?;
    let budget = KernelBudget {
        explicit_levels: k.explicit_levels,
        deep: DeepCellEstimator::PairSum {
            refinement: k.refinement,
        },
        plain: PlainEstimator::PairSum { level: k.plain_level },
    };
    let jobs: Vec<(usize, &KernelSpec)> = (0..corpus.functions.len())
        .flat_map(|fi| specs.iter().map(move |s| (fi, s)))
        .collect();
    let reports: Vec<KernelEnergyReport> = jobs
        .par_iter()
        .map(|(fi, s)| weighted_kernel_energy(g, &corpus.functions[*fi].1, s, &budget))
        .collect::<Result<_, _>>()?;

    let (c_hat, calibrated) = match k.slack_constant {
        Some(c) => (c, false),
        None => (
            round_up_3(calibrate_slack_constant(reports.iter().map(|r| (&r.kernel, &r.spec)))),
            true,
        ),
    };

    let mut t = ResultTable::new(
        "kernels",
        &config.hash(),
        &[
            "function",
            "i",
            "beta_i",
            "gamma",
            "phi",
            "delta_i",
            "weighted_energy",
            "sandwich_lower",
            "sandwich_middle",
            "sandwich_upper",
            "slack",
            "vacuous",
            "sandwich_holds",
            "a_inf_reference",
            "rel_gap",
            "kernel_deviation",
            "kernel_error",
            "explicit_levels",
            "spline_levels",
            "plain_part",
            "plain_error",
        ],
    );
    let m = config.levels.grid;
    let mut sandwich_ok = true;
    let mut checked = 0;
    let mut gap_ok = true;
    let mut gap_detail = Vec::new();
    for (fi, (f, u)) in corpus.functions.iter().enumerate() {
        let a_inf = renormalization::<f64>(m) * level_pair_sum(g, u, m)?;
        let mut gaps = Vec::new();
        for (si, spec) in specs.iter().enumerate() {
            let r = &reports[fi * specs.len() + si];
            let s = kernel_sandwich_check(&r.kernel, spec, c_hat);
            if !s.vacuous {
                sandwich_ok &= s.holds;
                checked += 1;
            }
            let gap = (a_inf - r.weighted_energy).abs() / a_inf;
            if a_inf > 0.0 {
                gaps.push(gap);
            }
            t.push(vec![
                f.name().into(),
                spec.i.into(),
                spec.beta_i.into(),
                spec.gamma.into(),
                spec.phi.into(),
                spec.delta_i.into(),
                r.weighted_energy.into(),
                s.lower.into(),
                s.middle.into(),
                s.upper.into(),
                s.slack.into(),
                s.vacuous.into(),
                s.holds.into(),
                a_inf.into(),
                if a_inf > 0.0 { Value::num(gap) } else { "skipped".into() },
                r.kernel.deviation.into(),
                r.kernel.error.into(),
                r.kernel.explicit_levels.into(),
                r.kernel.spline_levels.into(),
                r.plain.value.into(),
                r.plain.error.into(),
            ]);
        }
        if matches!(f, TestFunction::Harmonic { .. }) && !f.is_constant() && gaps.len() >= 3 {
            let tail = &gaps[gaps.len() - 3..];
            let last = tail[2];
            let ok = tail[0] > tail[1] && tail[1] > tail[2] && last <= FINAL_GAP;
            gap_ok &= ok;
            gap_detail.push(format!("{}: {}", f.name(), fmt_list(tail)));
        }
    }
    let slack: Vec<f64> = specs.iter().map(|s| c_hat * s.slack_profile()).collect();
    let slack_decreasing = slack.windows(2).all(|w| w[1] < w[0]);
    t.summary.insert("slack_constant".into(), Value::num(c_hat));
    t.summary.insert("slack_constant_calibrated".into(), calibrated.into());
    t.summary.insert("slack".into(), fmt_list(&slack).into());
    t.verdict(
        "sandwich",
        sandwich_ok,
        format!("{checked} non-vacuous (slack < 1) rows checked with C = {c_hat:e}"),
    );
    t.verdict(
        "slack_decreasing",
        slack_decreasing,
        format!("slack by i: {}", fmt_list(&slack)),
    );
    t.verdict(
        "energy_converges",
        gap_ok && !gap_detail.is_empty(),
        format!(
            "relative gap over the last three i, final <= {FINAL_GAP}: {}",
            gap_detail.join(", ")
        ),
    );
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_up_keeps_three_digits() {
        assert_eq!(round_up_3(2.5174e-4), 2.52e-4);
        assert_eq!(round_up_3(0.0), 0.0);
        assert!(round_up_3(1.0) >= 1.0);
    }
}
