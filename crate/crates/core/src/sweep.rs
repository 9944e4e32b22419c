//! Experiment harnesses: the `(d, k)` decomposition grid, estimator
//! error histograms against the delta-method prediction, binned
//! absolute error across the full time range, and the critical-point
//! table.
//!
//! Estimator harnesses draw the residual statistic from its exact
//! sampling law `σ̂⊥² ~ σ⊥²(t)·χ²_m/m` with `m = d − k`, which is the
//! only part of an interpolant the inverter sees.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::clock::{clock_eval, clock_min, critical_point};
use crate::decomposition::{decompose, DecompositionReport};
use crate::error::{Error, Result};
use crate::estimator::{invert_clock, theory_prediction, Branch, DEFAULT_EXCLUSION_HALFWIDTH};
use crate::model::{SpikedModel, TimeInterval, TimeMode};
use crate::seed::{mix, rng_from};

/// One `(σ², t*, σ⊥²(t*))` row of the critical-point table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockRow {
    pub sigma2: f64,
    pub t_star: f64,
    pub clock_min: f64,
}

/// Critical point and clock minimum for each noise floor.
pub fn clock_table(sigma2_list: &[f64]) -> Result<Vec<ClockRow>> {
    if sigma2_list.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one noise floor".into(),
        ));
    }
    sigma2_list
        .iter()
        .map(|&s2| {
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "noise floor must be positive and finite, got {}",
                    s2
                )));
            }
            Ok(ClockRow {
                sigma2: s2,
                t_star: critical_point(s2),
                clock_min: clock_min(s2),
            })
        })
        .collect()
}

/// Histogram of `t̂ − t` with the matching delta-method prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistogram {
    /// `n_bins + 1` edges, symmetric about zero.
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<u64>,
    /// Std of `t̂ − t` over the used samples.
    pub empirical_std: f64,
    /// Aggregate delta-method std over the same time draws.
    pub theory_std: f64,
    /// Samples with a positive discriminant whose true time lies on the
    /// requested branch's identifiable side (beyond the exclusion
    /// window around `t*`).
    pub n_used: usize,
    /// Everything else: inversion failures plus out-of-branch draws.
    pub n_discarded: usize,
}

/// Minimum sample count for the estimator harnesses.
pub const MIN_HISTOGRAM_SAMPLES: usize = 1000;

/// Estimates time on `n` draws of the residual statistic and histograms
/// the errors in `n_bins` bins spanning the largest observed error
/// symmetrically.
pub fn error_histogram(
    model: &SpikedModel<f64>,
    n: usize,
    t_mode: TimeMode,
    branch: Branch,
    n_bins: usize,
    seed: u64,
) -> Result<ErrorHistogram> {
    if n < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "histogram needs n >= {}, got {}",
            MIN_HISTOGRAM_SAMPLES, n
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be positive".into()));
    }
    let m = model.d_minus_k();
    if m == 0 {
        return Err(Error::Degenerate("model has no residual subspace".into()));
    }
    let sigma2 = model.sigma2();
    let t_star = critical_point(sigma2);
    let chi2 = ChiSquared::new(m as f64).expect("positive dof");
    let mut rng = rng_from(seed);

    let mut t_draws = Vec::with_capacity(n);
    let mut errors = Vec::new();
    for _ in 0..n {
        let t = match t_mode {
            TimeMode::Fixed(t) => t,
            TimeMode::Uniform(iv) => iv.lo() + rng.gen::<f64>() * iv.width(),
        };
        t_draws.push(t);
        let stat = clock_eval(sigma2, t).0 * chi2.sample(&mut rng) / m as f64;
        let est = invert_clock(stat, sigma2, branch, None);
        let on_branch = match branch {
            Branch::Descending => t <= t_star - DEFAULT_EXCLUSION_HALFWIDTH,
            Branch::Ascending => t >= t_star + DEFAULT_EXCLUSION_HALFWIDTH,
        };
        if let (Some(t_hat), true) = (est.t_hat, on_branch) {
            errors.push(t_hat - t);
        }
    }
    let n_used = errors.len();
    if n_used < 2 {
        return Err(Error::Degenerate(
            "too few usable samples on the requested branch".into(),
        ));
    }

    let mean = errors.iter().sum::<f64>() / n_used as f64;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n_used - 1) as f64;
    let half_width = errors
        .iter()
        .fold(0.0_f64, |a, &e| a.max(e.abs()))
        .max(1e-12);
    let bin_edges: Vec<f64> = (0..=n_bins)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / n_bins as f64)
        .collect();
    let mut bin_counts = vec![0u64; n_bins];
    for &e in &errors {
        let idx = ((e + half_width) / (2.0 * half_width) * n_bins as f64) as usize;
        bin_counts[idx.min(n_bins - 1)] += 1;
    }

    let theory = theory_prediction(sigma2, m, &t_draws, DEFAULT_EXCLUSION_HALFWIDTH)?;
    Ok(ErrorHistogram {
        bin_edges,
        bin_counts,
        empirical_std: var.sqrt(),
        theory_std: theory.aggregate_std,
        n_used,
        n_discarded: n - n_used,
    })
}

/// Mean absolute error binned by true time, with the reflection
/// prediction `max(0, 2(t − t*))` averaged over the same samples.
/// Only non-empty bins appear.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMae {
    pub t_bin_centers: Vec<f64>,
    pub mae_per_bin: Vec<f64>,
    /// Samples that landed in each listed bin.
    pub bin_counts: Vec<usize>,
    pub t_star: f64,
    pub reflection_pred: Vec<f64>,
}

/// Fraction of samples pinned at exactly `t = 1`, mimicking sampler
/// schedules that oversample the data end.
pub const EXTRA_MASS_AT_ONE: f64 = 0.05;

/// Bins `|t̂ − t|` by true time over `t ~ U[0, 1]` plus the extra mass
/// at `t = 1`. Draws whose statistic falls below the clock minimum are
/// projected to `t̂ = t*` instead of discarded, so every sample
/// contributes to its bin.
pub fn binned_mae(
    model: &SpikedModel<f64>,
    n: usize,
    n_bins: usize,
    branch: Branch,
    seed: u64,
) -> Result<BinnedMae> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be positive".into()));
    }
    if n < 10 * n_bins {
        return Err(Error::InvalidParameter(format!(
            "need n >= 10·n_bins = {}, got {}",
            10 * n_bins,
            n
        )));
    }
    let m = model.d_minus_k();
    if m == 0 {
        return Err(Error::Degenerate("model has no residual subspace".into()));
    }
    let sigma2 = model.sigma2();
    let t_star = critical_point(sigma2);
    let chi2 = ChiSquared::new(m as f64).expect("positive dof");
    let mut rng = rng_from(seed);

    let n_pinned = (n as f64 * EXTRA_MASS_AT_ONE).round() as usize;
    let mut sum_err = vec![0.0_f64; n_bins];
    let mut sum_pred = vec![0.0_f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..n {
        let t = if i < n - n_pinned {
            rng.gen::<f64>()
        } else {
            1.0
        };
        let stat = clock_eval(sigma2, t).0 * chi2.sample(&mut rng) / m as f64;
        let est = invert_clock(stat, sigma2, branch, None);
        let t_hat = est.t_hat.unwrap_or(t_star);
        let idx = ((t * n_bins as f64) as usize).min(n_bins - 1);
        sum_err[idx] += (t_hat - t).abs();
        sum_pred[idx] += (2.0 * (t - t_star)).max(0.0);
        counts[idx] += 1;
    }

    let mut out = BinnedMae {
        t_bin_centers: Vec::new(),
        mae_per_bin: Vec::new(),
        bin_counts: Vec::new(),
        t_star,
        reflection_pred: Vec::new(),
    };
    for b in 0..n_bins {
        if counts[b] == 0 {
            continue;
        }
        out.t_bin_centers.push((b as f64 + 0.5) / n_bins as f64);
        out.mae_per_bin.push(sum_err[b] / counts[b] as f64);
        out.bin_counts.push(counts[b]);
        out.reflection_pred.push(sum_pred[b] / counts[b] as f64);
    }
    Ok(out)
}

/// One decomposition cell of the `(d, k)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub k: usize,
    pub term1: f64,
    pub coupling_variance: f64,
    pub total: f64,
    pub gap: f64,
    pub ratio: f64,
    pub mc_se: f64,
    pub seed: u64,
    pub n_outer: usize,
    pub grid_n: usize,
}

impl SweepRow {
    fn from_report(d: usize, k: usize, seed: u64, r: &DecompositionReport) -> Self {
        SweepRow {
            d,
            k,
            term1: r.term1,
            coupling_variance: r.coupling_variance,
            total: r.total_timeblind_variance,
            gap: r.gap,
            ratio: r.ratio,
            mc_se: r.mc_standard_error,
            seed,
            n_outer: r.mc_samples,
            grid_n: r.grid_points,
        }
    }
}

/// Decomposition grid: admissible rows sorted by `(d, k)` plus the
/// inadmissible cells that were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(d, k)` pairs with `k ≥ d`, skipped rather than computed.
    pub skipped: Vec<(usize, usize)>,
}

/// Shared per-cell parameters of a `(d, k)` sweep. Every cell uses
/// all-equal spike variances `s_total` (excess `s_total − sigma2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub s_total: f64,
    pub sigma2: f64,
    pub interval: TimeInterval<f64>,
    pub n_outer: usize,
    pub grid_n: usize,
}

/// Runs `decompose` on every admissible `(d, k)` cell. Cell seeds are
/// `mix(seed, d, k)`, so any sub-grid reproduces the full run's rows;
/// cells run concurrently and the table is sorted by `(d, k)` either
/// way.
pub fn sweep_dk(
    d_list: &[usize],
    k_list: &[usize],
    config: &SweepConfig,
    seed: u64,
) -> Result<SweepTable> {
    if d_list.is_empty() || k_list.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one d and one k value".into(),
        ));
    }
    let mut ds = d_list.to_vec();
    ds.sort_unstable();
    ds.dedup();
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &d in &ds {
        for &k in &ks {
            if k < d {
                cells.push((d, k));
            } else {
                skipped.push((d, k));
            }
        }
    }

    let rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|(d, k)| -> Result<SweepRow> {
            let model = if k == 0 {
                SpikedModel::new(d, 0, vec![], config.sigma2)?
            } else {
                SpikedModel::uniform_excess(d, k, config.s_total, config.sigma2)?
            };
            let cell_seed = mix(seed, d as u64, k as u64);
            let report = decompose(
                &model,
                config.interval,
                config.n_outer,
                config.grid_n,
                cell_seed,
            )?;
            Ok(SweepRow::from_report(d, k, cell_seed, &report))
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { rows, skipped })
}

/// Monte-Carlo estimates of `E[(Y−m)²]` and `E[Y(Y−m)²]` for
/// `Y ~ χ²_m`, drawn from the same sampler the estimator harnesses
/// use. The exact values are `2m` and `2m² + 8m`.
pub fn chi_square_moment_check(m: usize, n: usize, seed: u64) -> Result<(f64, f64)> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "need positive degrees of freedom and sample count".into(),
        ));
    }
    let chi2 = ChiSquared::new(m as f64).expect("positive dof");
    let mut rng = rng_from(seed);
    let mf = m as f64;
    let mut sum2 = 0.0;
    let mut sum3 = 0.0;
    for _ in 0..n {
        let y = chi2.sample(&mut rng);
        let c = y - mf;
        sum2 += c * c;
        sum3 += y * c * c;
    }
    Ok((sum2 / n as f64, sum3 / n as f64))
}
