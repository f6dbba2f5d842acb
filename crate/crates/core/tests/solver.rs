mod common;

use common::{least_squares, random_matrix, rng};
use mscastle::model::build_design;
use mscastle::solver::{
    fit_decomposed, soft_threshold, subproblem_gradient, subproblem_objective, LossScale,
    SubproblemTerms,
};
use mscastle::synth::{generate_structure, sample_pgnd, simulate, StructureSpec};
use mscastle::{
    filter_bank, fit, fit_multiscale, fit_single_scale, swt_decompose, SolverConfig, SolverState,
    StackLayout, TimeSeriesPanel, WaveletFamily,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn white_noise(len: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let v = sample_pgnd(2.0, len * n, seed).unwrap();
    DMatrix::from_vec(len, n, v)
}

fn small_problem(seed: u64, lags: usize) -> (mscastle::LaggedDesign, StackLayout) {
    let truth = generate_structure(&StructureSpec::new(3, lags, 0.5), seed).unwrap();
    let panel = simulate(&truth, 200, seed + 1).unwrap();
    (
        build_design(&panel.data, lags).unwrap(),
        truth.w_true.layout,
    )
}

fn assert_feasible(st: &SolverState, cfg: &SolverConfig) {
    if st.converged {
        assert!(st.h_w() <= cfg.tol_h, "h(W) = {}", st.h_w());
        assert!(st.h_z() <= cfg.tol_h, "h(Z) = {}", st.h_z());
        assert!(
            st.primal_residual() <= cfg.tol_primal,
            "{}",
            st.primal_residual()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn subproblem_gradient_matches_finite_differences(seed in any::<u64>(), lags in 0usize..3, scales in 1usize..3) {
        let n = 3;
        let layout = StackLayout::new(lags, scales, n).unwrap();
        let mut r = rng(seed);
        let panel = random_matrix(&mut r, 12, layout.width(), 1.0);
        let design = build_design(&panel, lags).unwrap();
        let (h, w_) = (layout.height(), layout.width());
        let w = random_matrix(&mut r, h, w_, 1.0);
        let z = random_matrix(&mut r, h, w_, 1.0);
        let beta = random_matrix(&mut r, h, w_, 0.5);
        let anchor = random_matrix(&mut r, h, w_, 1.0);
        let g0 = random_matrix(&mut r, w_, w_, 2.0);
        let damping = random_matrix(&mut r, w_, w_, 1.0).abs();
        let terms = SubproblemTerms {
            alpha: r.gen_range(0.0..5.0),
            g0: &g0,
            z: &z,
            beta: &beta,
            rho: r.gen_range(0.1..3.0),
            loss_weight: r.gen_range(0.05..1.0),
            damping: &damping,
            anchor: &anchor,
        };
        let g = subproblem_gradient(&w, &design, &layout, &terms);
        let step = 1e-5;
        for c in 0..w_ {
            for row in 0..h {
                if !layout.is_free(row, c) {
                    prop_assert_eq!(g[(row, c)], 0.0);
                    continue;
                }
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[(row, c)] += step;
                minus[(row, c)] -= step;
                let fd = (subproblem_objective(&plus, &design, &terms)
                    - subproblem_objective(&minus, &design, &terms))
                    / (2.0 * step);
                let a = g[(row, c)];
                prop_assert!((a - fd).abs() <= 1e-6 * fd.abs().max(1.0), "({row},{c}): {a} vs {fd}");
            }
        }
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(x in -5.0f64..5.0, delta in 0.0f64..3.0) {
        // argmin_u 1/2 (u - x)^2 + delta |u| on a grid of spacing 1e-4
        let obj = |u: f64| 0.5 * (u - x).powi(2) + delta * u.abs();
        let best = (-60_000..=60_000)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap();
        let s = soft_threshold(x, delta);
        prop_assert!((s - best).abs() <= 1e-4, "{s} vs {best}");
        prop_assert!(obj(s) <= obj(best) + 1e-12);
    }
}

#[test]
fn runs_respect_pattern_and_gamma_schedule() {
    for seed in 0..6 {
        let lags = (seed % 3) as usize;
        let (design, layout) = small_problem(seed * 10, lags);
        let cfg = SolverConfig::default().with_lambda(0.05);
        let st = fit(&design, layout, &cfg).unwrap();
        for c in 0..layout.width() {
            for r in 0..layout.height() {
                if !layout.is_free(r, c) {
                    assert_eq!(st.z.values[(r, c)], 0.0);
                    assert_eq!(st.w.values[(r, c)], 0.0);
                }
            }
        }
        assert!(!st.gamma_history.is_empty());
        assert!(st.gamma_history[0] >= cfg.gamma0);
        for pair in st.gamma_history.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(st.gamma_history.iter().all(|g| *g <= cfg.gamma_max));
        assert_eq!(st.h_history.len(), st.iterations);
        assert!(
            st.converged,
            "seed {seed} did not converge in {} iterations",
            st.iterations
        );
        assert_feasible(&st, &cfg);
    }
}

#[test]
fn gamma_is_capped() {
    let (design, layout) = small_problem(3, 0);
    let cfg = SolverConfig {
        gamma0: 1.0,
        gamma_max: 10.0,
        ..SolverConfig::default().with_lambda(0.01)
    };
    let st = fit(&design, layout, &cfg).unwrap();
    assert!(st.gamma_history.iter().all(|g| *g <= 10.0));
    assert_eq!(st.gamma, *st.gamma_history.last().unwrap());
}

#[test]
fn histories_are_bitwise_reproducible() {
    let (design, layout) = small_problem(42, 1);
    let cfg = SolverConfig::default().with_lambda(0.02);
    let a = fit(&design, layout, &cfg).unwrap();
    let b = fit(&design, layout, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.h_history), bits(&b.h_history));
    assert_eq!(bits(&a.gamma_history), bits(&b.gamma_history));
    assert_eq!(
        bits(&a.primal_residual_history),
        bits(&b.primal_residual_history)
    );
    assert_eq!(bits(&a.objective_history), bits(&b.objective_history));
    assert_eq!(bits(a.z.values.as_slice()), bits(b.z.values.as_slice()));
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn converged_runs_are_feasible_across_lambdas() {
    let (design, layout) = small_problem(7, 1);
    for lambda in [0.001, 0.01, 0.1, 1.0] {
        let cfg = SolverConfig::default().with_lambda(lambda);
        let st = fit(&design, layout, &cfg).unwrap();
        assert!(st.converged, "lambda {lambda}");
        assert_feasible(&st, &cfg);
    }
}

#[test]
fn hitting_the_iteration_cap_is_reported() {
    let (design, layout) = small_problem(7, 1);
    let cfg = SolverConfig {
        max_iter: 2,
        ..SolverConfig::default().with_lambda(0.01)
    };
    let st = fit(&design, layout, &cfg).unwrap();
    assert!(!st.converged);
    assert_eq!(st.iterations, 2);
}

#[test]
fn univariate_autoregression_matches_least_squares() {
    // With one series only lagged coefficients are free and the acyclicity term is
    // inactive, so a tiny penalty leaves ordinary least squares.
    let mut r = rng(5);
    let len = 2000;
    let mut y = vec![0.0; len];
    for t in 2..len {
        y[t] = 0.5 * y[t - 1] - 0.3 * y[t - 2] + r.gen_range(-1.0..1.0);
    }
    let panel = DMatrix::from_vec(len, 1, y);
    let design = build_design(&panel, 2).unwrap();
    let layout = StackLayout::new(2, 1, 1).unwrap();
    let cfg = SolverConfig {
        tol_primal: 1e-9,
        ..SolverConfig::default().with_lambda(1e-9)
    };
    let st = fit(&design, layout, &cfg).unwrap();
    assert!(st.converged);
    let x = design.regressors.columns(1, 2).into_owned();
    let ols = least_squares(&x, &design.target);
    assert_eq!(st.z.values[(0, 0)], 0.0);
    for k in 0..2 {
        assert!(
            (st.z.values[(k + 1, 0)] - ols[(k, 0)]).abs() < 1e-6,
            "{} vs {}",
            st.z.values[(k + 1, 0)],
            ols[(k, 0)]
        );
    }
    assert!((ols[(0, 0)] - 0.5).abs() < 0.05 && (ols[(1, 0)] + 0.3).abs() < 0.05);
}

#[test]
fn huge_penalty_gives_the_empty_graph() {
    let y = white_noise(300, 3, 1);
    let design = build_design(&y, 1).unwrap();
    let layout = StackLayout::new(1, 1, 3).unwrap();
    for scale in [LossScale::Mean, LossScale::Sum] {
        let cfg = SolverConfig {
            loss_scale: scale,
            ..SolverConfig::default().with_lambda(1e3)
        };
        let st = fit(&design, layout, &cfg).unwrap();
        assert!(st.converged);
        assert!(st.z.values.iter().all(|v| *v == 0.0));
        let weight = scale.weight(design.effective_rows);
        let want = 0.5 * weight * design.target.norm_squared();
        assert!((st.fit_loss - want).abs() <= 1e-12 * want);
        assert_eq!(st.reg_loss, 0.0);
        assert_eq!(st.loss_ratio(), 0.0);
    }
}

#[test]
fn two_series_edge_is_recovered() {
    // y2 = 0.8 y1 + e with Var(y2) > Var(y1).
    let e = white_noise(2000, 2, 9);
    let y = DMatrix::from_fn(2000, 2, |t, c| {
        let y1 = 1.5 * e[(t, 0)];
        if c == 0 {
            y1
        } else {
            0.8 * y1 + 1.2 * e[(t, 1)]
        }
    });
    let fit = fit_single_scale(
        &TimeSeriesPanel::from_matrix(y),
        0,
        &SolverConfig::default().with_lambda(0.01),
    )
    .unwrap();
    assert!(fit.state.converged);
    let w = fit.state.z.block(1, 0);
    assert!((w[(0, 1)] - 0.8).abs() < 0.05, "{w}");
    assert_eq!(w[(1, 0)], 0.0);
    assert_eq!(fit.graph.edges.len(), 1);
}

#[test]
fn single_level_multiscale_equals_single_scale_on_details() {
    let truth = generate_structure(&StructureSpec::new(4, 1, 0.6), 21).unwrap();
    let panel = simulate(&truth, 256, 22).unwrap();
    let filter = filter_bank(WaveletFamily::Daubechies4);
    let cfg = SolverConfig::default().with_lambda(0.02);
    let ms = fit_multiscale(&panel, 1, &filter, 1, &cfg).unwrap();
    let aug = swt_decompose(&panel, 1, &filter).unwrap();
    let ss = fit_single_scale(&TimeSeriesPanel::from_matrix(aug.details.clone()), 1, &cfg).unwrap();
    assert_eq!(ms.state.iterations, ss.state.iterations);
    assert!((&ms.state.z.values - &ss.state.z.values).amax() <= 1e-10);
    assert!((ms.state.objective() - ss.state.objective()).abs() <= 1e-10);
}

#[test]
fn two_scale_white_noise_gives_the_empty_graph() {
    for seed in 0..5 {
        let panel = TimeSeriesPanel::from_matrix(white_noise(1024, 3, 100 + seed));
        let aug = swt_decompose(&panel, 2, &filter_bank(WaveletFamily::Symlet8)).unwrap();
        let cfg = SolverConfig::default().with_lambda(0.1);
        let st = fit_decomposed(&aug, 0, &cfg).unwrap();
        assert!(st.converged);
        assert!(
            st.z.values.iter().all(|v| *v == 0.0),
            "seed {seed}: {}",
            st.z.values
        );
    }
}

#[test]
fn planted_coarse_scale_edge_is_found() {
    let mut spec = StructureSpec::new(3, 1, 0.5);
    spec.scales = 2;
    let mut truth = generate_structure(&spec, 1).unwrap();
    truth.w_true.values.fill(0.0);
    truth.w_true.set(2, 1, 0, 1, 0.9);
    let panel = simulate(&truth, 2048, 2).unwrap();
    let fit = fit_multiscale(
        &panel,
        2,
        &filter_bank(WaveletFamily::Symlet8),
        1,
        &SolverConfig::default().with_lambda(0.01),
    )
    .unwrap();
    assert!(fit.state.converged);
    let z = &fit.state.z;
    let planted = z.get(2, 1, 0, 1);
    let mut strongest = (0.0f64, (0, 0, 0));
    for lag in 0..=1 {
        for from in 0..3 {
            for to in 0..3 {
                let v = z.get(2, lag, from, to).abs();
                if v > strongest.0 {
                    strongest = (v, (lag, from, to));
                }
            }
        }
    }
    assert_eq!(strongest.1, (1, 0, 1), "{z:?}");
    assert!(planted > 0.5, "{planted}");
}
