//! Release gate: one test per claim the library is built around, each
//! printing a single PASS/FAIL line (visible with `--nocapture`)
//! before asserting. Tolerances are stated inline next to each check.

use flowclock::clock::critical_point;
use flowclock::decomposition::{coupling_floor_bound, coupling_variance, decompose};
use flowclock::estimator::{invert_clock, Branch};
use flowclock::linalg::Matrix;
use flowclock::model::{SpikedModel, TimeInterval, TimeMode};
use flowclock::ot::{cost_matrix, coupling_cost_stats, solve_assignment, PairingMode};
use flowclock::pca::{fit_spiked, largest_principal_angle, then_estimate, RankRule};
use flowclock::seed::rng_from;
use flowclock::sweep::{
    binned_mae, chi_square_moment_check, clock_table, error_histogram, sweep_dk, SweepConfig,
};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

fn report(num: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {:02} {}: {} ({})",
        num,
        name,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
}

#[test]
fn criterion_01_clock_table() {
    let rows = clock_table(&[0.1, 0.0064, 0.1079, 0.1182]).unwrap();
    let expected = [0.9090, 0.9937, 0.9026, 0.8943];
    let worst = rows
        .iter()
        .zip(&expected)
        .map(|(r, e)| (r.t_star - e).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 5e-4;
    report(
        1,
        "critical-point table",
        pass,
        &format!("max |t* - expected| = {:.2e}, tol 5e-4", worst),
    );
    assert!(pass);
}

#[test]
fn criterion_02_estimator_rate() {
    let dims = [20usize, 50, 100, 200, 500, 1000];
    let points: Vec<(f64, f64)> = dims
        .iter()
        .map(|&d| {
            let model = SpikedModel::new(d, 10, vec![9.9; 10], 0.1).unwrap();
            let hist = error_histogram(
                &model,
                10_000,
                TimeMode::Fixed(0.3),
                Branch::Descending,
                50,
                202,
            )
            .unwrap();
            (((d - 10) as f64).ln(), hist.empirical_std.ln())
        })
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let pass = (slope + 0.5).abs() <= 0.05;
    report(
        2,
        "estimator convergence rate",
        pass,
        &format!("log-log slope {:.4}, want -0.5 ± 0.05", slope),
    );
    assert!(pass);
}

#[test]
fn criterion_03_delta_method_match() {
    let model = SpikedModel::new(1000, 10, vec![9.9; 10], 0.1).unwrap();
    let hist = error_histogram(
        &model,
        10_000,
        TimeMode::Uniform(TimeInterval::unit()),
        Branch::Descending,
        50,
        303,
    )
    .unwrap();
    let rel = (hist.empirical_std - hist.theory_std).abs() / hist.theory_std;
    let spread_ok = rel <= 0.15 && hist.empirical_std <= hist.theory_std;

    // inversion failures alone, over fresh uniform draws
    let m = 990;
    let sigma2 = 0.1;
    let chi2 = ChiSquared::new(m as f64).unwrap();
    let mut rng = rng_from(304);
    let n = 10_000;
    let mut discarded = 0usize;
    for _ in 0..n {
        let t: f64 = rng.gen();
        let clock = (1.0 - t) * (1.0 - t) + t * t * sigma2;
        let stat = clock * chi2.sample(&mut rng) / m as f64;
        if invert_clock(stat, sigma2, Branch::Descending, None).is_discarded() {
            discarded += 1;
        }
    }
    let rate = discarded as f64 / n as f64;
    let rate_ok = rate < 0.001;

    let pass = spread_ok && rate_ok;
    report(
        3,
        "delta-method error spread",
        pass,
        &format!(
            "empirical/theory = {:.4} (within 15% and below: {}), discard rate {:.4} vs < 0.001: {}",
            hist.empirical_std / hist.theory_std,
            spread_ok,
            rate,
            rate_ok
        ),
    );
    assert!(spread_ok, "spread off: {}", rel);
    assert!(rate_ok, "discard rate {} not below 0.1%", rate);
}

#[test]
fn criterion_04_reflection_law() {
    let sigma2 = 0.1079;
    let model = SpikedModel::new(2010, 10, vec![10.0 - sigma2; 10], sigma2).unwrap();
    let t_star = critical_point(sigma2);
    let out = binned_mae(&model, 100_000, 50, Branch::Descending, 404).unwrap();
    let mut worst = 0.0f64;
    for (i, &center) in out.t_bin_centers.iter().enumerate() {
        if center - 0.01 >= t_star {
            worst = worst.max((out.mae_per_bin[i] - out.reflection_pred[i]).abs());
        }
    }
    let edge = *out.mae_per_bin.last().unwrap();
    let bins_ok = worst <= 0.01;
    let edge_ok = (edge - 0.194).abs() <= 0.01;
    let pass = bins_ok && edge_ok;
    report(
        4,
        "reflection law past the critical point",
        pass,
        &format!(
            "max bin deviation {:.4} (tol 0.01), right-edge MAE {:.4} vs 0.194 ± 0.01",
            worst, edge
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_decomposition_ordering() {
    let config = SweepConfig {
        s_total: 10.0,
        sigma2: 0.01,
        interval: TimeInterval::symmetric(0.15).unwrap(),
        n_outer: 20_000,
        grid_n: 2000,
    };
    let table = sweep_dk(
        &[64, 128, 256, 512, 1024],
        &[1, 2, 4, 8, 16, 32, 64, 128, 256, 512],
        &config,
        42,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 40);
    let mut violations = 0usize;
    for row in &table.rows {
        let ordered = row.term1 >= row.total && row.total >= row.coupling_variance;
        let gap_ok = row.gap >= -3.0 * row.mc_se;
        if !(ordered && gap_ok) {
            violations += 1;
            eprintln!(
                "cell d={} k={}: term1 {} total {} coupling {} gap {} se {}",
                row.d, row.k, row.term1, row.total, row.coupling_variance, row.gap, row.mc_se
            );
        }
    }
    let pass = violations == 0;
    report(
        5,
        "ordering chain on the (d, k) sweep",
        pass,
        &format!("{} of 40 cells violate the chain", violations),
    );
    assert!(pass);
}

#[test]
fn criterion_06_ratio_scaling() {
    let interval = TimeInterval::symmetric(0.15).unwrap();
    let dims = [128usize, 256, 512, 1024];
    let mut points = Vec::new();
    let mut gaps = Vec::new();
    for (i, &d) in dims.iter().enumerate() {
        let model = SpikedModel::uniform_excess(d, 64, 10.0, 0.01).unwrap();
        let r = decompose(&model, interval, 200_000, 2000, 606 + i as u64).unwrap();
        points.push((((d - 64) as f64).ln(), r.ratio.ln()));
        gaps.push(r.gap);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();

    let slope_ok = (slope + 1.0).abs() <= 0.25;
    let last_ok = gaps[3] < 0.5;
    let decay_ok = gaps[0] / gaps[3] > 2.0;
    let pass = slope_ok && last_ok && decay_ok;
    report(
        6,
        "time-blindness ratio scaling",
        pass,
        &format!(
            "ratio slope {:.3} (want -1 ± 0.25), gap(1024) = {:.3} (want < 0.5), gap(128)/gap(1024) = {:.2} (want > 2)",
            slope, gaps[3], gaps[0] / gaps[3]
        ),
    );
    assert!(
        pass,
        "slope {} gaps {:?} decay {}",
        slope,
        gaps,
        gaps[0] / gaps[3]
    );
}

#[test]
fn criterion_07_coupling_extensivity() {
    let interval = TimeInterval::symmetric(0.15).unwrap();
    let mut violations = 0usize;
    let mut cells = 0usize;
    for &d in &[64usize, 128, 256, 512, 1024] {
        for &k in &[1usize, 2, 4, 8, 16, 32, 64, 128, 256, 512] {
            if k >= d {
                continue;
            }
            cells += 1;
            let model = SpikedModel::uniform_excess(d, k, 10.0, 0.01).unwrap();
            let c: f64 = coupling_variance(&model, interval, 2000).unwrap();
            if c < coupling_floor_bound(&model, interval) {
                violations += 1;
            }
        }
    }

    let single = SpikedModel::new(1, 0, vec![], 1.0).unwrap();
    let c1: f64 = coupling_variance(&single, TimeInterval::unit(), 2000).unwrap();
    let half_pi_err = (c1 - std::f64::consts::FRAC_PI_2).abs();
    let quad_ok = half_pi_err <= 1e-6;

    let pass = violations == 0 && cells == 40 && quad_ok;
    report(
        7,
        "coupling variance floor",
        pass,
        &format!(
            "{} of {} cells below the floor, |unit-interval integral - pi/2| = {:.2e}",
            violations, cells, half_pi_err
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_assignment_exactness() {
    fn brute_force_min(cost: &Matrix<f64>) -> f64 {
        fn go(cols: &mut Vec<usize>, row: usize, cost: &Matrix<f64>, acc: f64, best: &mut f64) {
            if row == cols.len() {
                *best = best.min(acc);
                return;
            }
            for i in row..cols.len() {
                cols.swap(row, i);
                go(cols, row + 1, cost, acc + cost.get(row, cols[row]), best);
                cols.swap(row, i);
            }
        }
        let mut cols: Vec<usize> = (0..cost.nrows()).collect();
        let mut best = f64::INFINITY;
        go(&mut cols, 0, cost, 0.0, &mut best);
        best
    }

    let mut rng = rng_from(808);
    let mut mismatches = 0usize;
    for b in 2..=7usize {
        for _ in 0..100 {
            let mut cost = Matrix::zeros(b, b);
            for i in 0..b {
                for j in 0..b {
                    cost.set(i, j, rng.gen::<f64>() * 10.0 - 2.0);
                }
            }
            let solved = solve_assignment(&cost).unwrap().total_cost;
            let exact = brute_force_min(&cost);
            if (solved - exact).abs() > 1e-12 * (1.0 + exact.abs()) {
                mismatches += 1;
            }
        }
    }

    let mut sorted_mismatches = 0usize;
    for _ in 0..100 {
        let b = 16;
        let eps: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let xs: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let cost = cost_matrix(
            &Matrix::from_rows(&eps.iter().map(|&e| vec![e]).collect::<Vec<_>>()).unwrap(),
            &Matrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap(),
        )
        .unwrap();
        let solved = solve_assignment(&cost).unwrap().total_cost;
        let mut se: Vec<f64> = eps.clone();
        let mut sx: Vec<f64> = xs.clone();
        se.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sx.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sorted_cost: f64 = se.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum();
        if (solved - sorted_cost).abs() > 1e-12 * (1.0 + sorted_cost) {
            sorted_mismatches += 1;
        }
    }

    let pass = mismatches == 0 && sorted_mismatches == 0;
    report(
        8,
        "exact assignment solver",
        pass,
        &format!(
            "{} of 600 brute-force mismatches, {} of 100 sorted 1-d mismatches",
            mismatches, sorted_mismatches
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_ot_cost_reduction() {
    let model = SpikedModel::new(16, 4, vec![9.9; 4], 0.1).unwrap();
    let indep = coupling_cost_stats(&model, PairingMode::Independent, 64, 500, 909).unwrap();
    let ot = coupling_cost_stats(&model, PairingMode::MinibatchOt, 64, 500, 909).unwrap();
    let term_one = model.term_one();
    let calibrated = (indep.mean_pair_cost - term_one).abs() <= 3.0 * indep.std_error;
    let drop = indep.mean_pair_cost - ot.mean_pair_cost;
    let separated = drop > 3.0 * (indep.std_error + ot.std_error);
    let pass = calibrated && separated;
    report(
        9,
        "minibatch pairing cost reduction",
        pass,
        &format!(
            "independent {:.3} vs E‖x‖²+E‖ε‖² = {:.3} (se {:.3}), OT {:.3}, drop {:.3}",
            indep.mean_pair_cost, term_one, indep.std_error, ot.mean_pair_cost, drop
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_spectral_fit_round_trip() {
    let model = SpikedModel::new(128, 8, vec![5.0; 8], 0.1).unwrap();
    let batch = model
        .sample_batch(100_000, TimeMode::Fixed(1.0), 1010)
        .unwrap();
    let fitted = fit_spiked(&batch.x, RankRule::Threshold(0.95)).unwrap();

    let sigma_ok = (fitted.sigma2 / 0.1 - 1.0).abs() <= 0.05;
    let k_ok = fitted.k == 8;
    let mut planted = Matrix::zeros(128, 8);
    for i in 0..8 {
        planted.set(i, i, 1.0);
    }
    let angle = largest_principal_angle(&fitted.u_x, &planted).unwrap();
    let angle_ok = angle <= 5.0_f64.to_radians();
    let est = then_estimate(&fitted, &batch.x, 4000, 1011).unwrap();
    let mae_ok = est.mae <= 2.0 * est.theory_mae;

    let pass = sigma_ok && k_ok && angle_ok && mae_ok;
    report(
        10,
        "spectral fit round trip",
        pass,
        &format!(
            "sigma2 {:.4} (within 5%: {}), k {} (want 8: {}), angle {:.2}° (≤ 5°: {}), mae/theory {:.2} (≤ 2: {})",
            fitted.sigma2,
            sigma_ok,
            fitted.k,
            k_ok,
            angle.to_degrees(),
            angle_ok,
            est.mae / est.theory_mae,
            mae_ok
        ),
    );
    assert!(sigma_ok, "floor {}", fitted.sigma2);
    assert!(k_ok, "selected rank {} instead of 8", fitted.k);
    assert!(angle_ok, "angle {} rad", angle);
    assert!(mae_ok, "mae {} vs theory {}", est.mae, est.theory_mae);
}

#[test]
fn criterion_11_chi_square_moments() {
    let (second, third) = chi_square_moment_check(200, 1_000_000, 1111).unwrap();
    let m = 200.0;
    let e2 = 2.0 * m;
    let e3 = 2.0 * m * m + 8.0 * m;
    let r2 = (second / e2 - 1.0).abs();
    let r3 = (third / e3 - 1.0).abs();
    let pass = r2 <= 0.05 && r3 <= 0.05;
    report(
        11,
        "chi-square moment identities",
        pass,
        &format!(
            "E[(Y-m)²] = {:.1} vs {} ({:.2}% off), E[Y(Y-m)²] = {:.0} vs {} ({:.2}% off)",
            second,
            e2,
            100.0 * r2,
            third,
            e3,
            100.0 * r3
        ),
    );
    assert!(pass);
}
