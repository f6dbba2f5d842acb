mod common;

use common::{
    has_cycle, ks_statistic, least_squares, sample_kurtosis, sample_variance, NumericCdf,
};
use mscastle::synth::{
    generate_structure, grid_dataset, pgnd_density, pgnd_variance, sample_pgnd, simulate, GridSpec,
    StructureSpec,
};
use mscastle::Error;
use nalgebra::DMatrix;

/// `int_{-xmax}^{xmax} |x|^k f(x) dx` by the trapezoid rule.
fn absolute_moment(p: f64, k: i32, xmax: f64, steps: usize) -> f64 {
    let dx = xmax / steps as f64;
    let f = |x: f64| x.powi(k) * pgnd_density(p, x);
    let inner: f64 = (1..steps).map(|i| f(i as f64 * dx)).sum();
    2.0 * dx * (inner + 0.5 * (f(0.0) + f(xmax)))
}

fn support(p: f64) -> f64 {
    if p < 1.2 {
        50.0
    } else if p < 3.0 {
        12.0
    } else if p < 10.0 {
        6.0
    } else {
        2.0
    }
}

#[test]
fn variance_formula_matches_quadrature() {
    for p in [0.8, 1.0, 1.5, 2.0, 2.5, 4.0, 100.0] {
        let xmax = support(p);
        let mass = absolute_moment(p, 0, xmax, 400_000);
        assert!((mass - 1.0).abs() < 1e-6, "p {p}: mass {mass}");
        let var = absolute_moment(p, 2, xmax, 400_000);
        assert!(
            (var - pgnd_variance(p)).abs() < 1e-6 * var,
            "p {p}: {var} vs {}",
            pgnd_variance(p)
        );
    }
    assert!((pgnd_variance(2.0) - 1.0).abs() < 1e-12);
    assert!((pgnd_variance(1.0) - 2.0).abs() < 1e-12);
}

#[test]
fn normalized_draws_match_the_law() {
    for (k, p) in [1.0, 1.5, 2.0, 2.5, 100.0].into_iter().enumerate() {
        let sd = pgnd_variance(p).sqrt();
        let draws: Vec<f64> = sample_pgnd(p, 100_000, 31 + k as u64)
            .unwrap()
            .into_iter()
            .map(|x| x / sd)
            .collect();
        let v = sample_variance(&draws);
        assert!((0.95..=1.05).contains(&v), "p {p}: variance {v}");

        let cdf = NumericCdf::symmetric(|x| sd * pgnd_density(p, x * sd), support(p) / sd, 400_000);
        assert!((cdf.half_mass() - 0.5).abs() < 1e-6);
        let ks = ks_statistic(&draws, |x| cdf.cdf(x));
        assert!(ks <= 0.01, "p {p}: KS {ks}");

        let xmax = support(p);
        let want =
            absolute_moment(p, 4, xmax, 400_000) / absolute_moment(p, 2, xmax, 400_000).powi(2);
        let got = sample_kurtosis(&draws);
        let tol = if p < 1.2 { 0.4 } else { 0.05 };
        assert!((got - want).abs() < tol, "p {p}: kurtosis {got} vs {want}");
    }
}

#[test]
fn sampler_rejects_bad_arguments() {
    assert!(sample_pgnd(0.0, 10, 1).is_err());
    assert!(sample_pgnd(-1.0, 10, 1).is_err());
    assert!(sample_pgnd(f64::NAN, 10, 1).is_err());
    assert!(sample_pgnd(2.0, 0, 1).is_err());
}

fn mean_edge_counts(n: usize, sparsity: f64, draws: u64) -> (f64, f64) {
    let (mut lag0, mut lag1) = (0usize, 0usize);
    for seed in 0..draws {
        let spec = StructureSpec {
            stabilize: false,
            ..StructureSpec::new(n, 1, sparsity)
        };
        let t = generate_structure(&spec, seed).unwrap();
        lag0 += t.w_true.block(1, 0).iter().filter(|v| **v != 0.0).count();
        lag1 += t.w_true.block(1, 1).iter().filter(|v| **v != 0.0).count();
    }
    (lag0 as f64 / draws as f64, lag1 as f64 / draws as f64)
}

#[test]
fn edge_counts_follow_the_sparsity() {
    // Binomial means and 4 standard errors over the draws.
    for (n, s) in [(10usize, 0.8), (30, 0.85)] {
        let draws = 300;
        let (lag0, lag1) = mean_edge_counts(n, s, draws);
        let pairs = (n * (n - 1) / 2) as f64;
        let cells = (n * n) as f64;
        let se = |m: f64| 4.0 * (m * s * (1.0 - s) / draws as f64).sqrt();
        assert!(
            (lag0 - pairs * (1.0 - s)).abs() < se(pairs),
            "N {n}: {lag0}"
        );
        assert!(
            (lag1 - cells * (1.0 - s)).abs() < se(cells),
            "N {n}: {lag1}"
        );
    }
}

#[test]
fn structures_are_acyclic_and_in_range() {
    for seed in 0..50 {
        let mut spec = StructureSpec::new(8, 2, 0.6);
        spec.scales = 2;
        let t = generate_structure(&spec, seed).unwrap();
        for scale in 1..=2 {
            let b = t.w_true.block(scale, 0);
            assert!(!has_cycle(&b.map(|v| v != 0.0)));
            assert!((0..8).all(|i| b[(i, i)] == 0.0));
        }
        assert!(t.w_true.acyclicity_residual() == 0.0);
        for v in t.w_true.values.iter().filter(|v| **v != 0.0) {
            assert!(v.abs() <= 0.9, "{v}");
        }
        assert!(t.noise_variances.iter().all(|v| (1.0..=2.0).contains(v)));
        assert_eq!(t.noise_variances.len(), 16);
    }
}

#[test]
fn instantaneous_covariance_propagates() {
    let spec = StructureSpec::new(4, 0, 0.3);
    let truth = generate_structure(&spec, 8).unwrap();
    let len = 200_000;
    let y = simulate(&truth, len, 9).unwrap().data;
    // Row model y (I - W0) = e, so Cov(y) = A^T D A with A = (I - W0)^-1.
    let a = (DMatrix::identity(4, 4) - truth.w_true.block(1, 0))
        .try_inverse()
        .unwrap();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(truth.noise_variances.clone()));
    let want = a.transpose() * d * &a;
    let means: Vec<f64> = (0..4).map(|c| y.column(c).mean()).collect();
    let centered = DMatrix::from_fn(len, 4, |t, c| y[(t, c)] - means[c]);
    let got = centered.tr_mul(&centered) / (len as f64 - 1.0);
    for i in 0..4 {
        for j in 0..4 {
            let scale = (want[(i, i)] * want[(j, j)]).sqrt();
            assert!(
                (got[(i, j)] - want[(i, j)]).abs() < 0.02 * scale,
                "({i},{j}) {} vs {}",
                got[(i, j)],
                want[(i, j)]
            );
        }
    }
}

#[test]
fn regression_on_true_parents_recovers_weights() {
    let truth = generate_structure(&StructureSpec::new(5, 1, 0.6), 12).unwrap();
    let y = simulate(&truth, 40_000, 13).unwrap().data;
    let len = y.nrows();
    let w0 = truth.w_true.block(1, 0);
    let w1 = truth.w_true.block(1, 1);
    for target in 0..5 {
        let parents: Vec<usize> = (0..5).filter(|&i| w0[(i, target)] != 0.0).collect();
        let k = parents.len() + 5;
        let x = DMatrix::from_fn(len - 1, k, |t, c| {
            if c < parents.len() {
                y[(t + 1, parents[c])]
            } else {
                y[(t, c - parents.len())]
            }
        });
        let rhs = DMatrix::from_fn(len - 1, 1, |t, _| y[(t + 1, target)]);
        let b = least_squares(&x, &rhs);
        for (c, &p) in parents.iter().enumerate() {
            assert!(
                (b[(c, 0)] - w0[(p, target)]).abs() < 0.03,
                "W0 {p}->{target}"
            );
        }
        for i in 0..5 {
            assert!(
                (b[(parents.len() + i, 0)] - w1[(i, target)]).abs() < 0.03,
                "W1 {i}->{target}"
            );
        }
    }
}

#[test]
fn explosive_dynamics_are_reported() {
    let spec = StructureSpec {
        stabilize: false,
        ..StructureSpec::new(2, 1, 0.5)
    };
    let mut truth = generate_structure(&spec, 1).unwrap();
    truth.w_true.values.fill(0.0);
    truth.w_true.set(1, 1, 0, 0, 1.5);
    match simulate(&truth, 1000, 2) {
        Err(Error::NumericFailure { message, .. }) => {
            assert!(message.contains("diverged"), "{message}")
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn stabilized_systems_stay_bounded() {
    for seed in 0..10 {
        let spec = StructureSpec {
            weight_range: (0.8, 2.0),
            ..StructureSpec::new(6, 2, 0.3)
        };
        let truth = generate_structure(&spec, seed).unwrap();
        assert!(mscastle::synth::companion_radius(&truth.w_true, 1).unwrap() <= 0.95);
        let y = simulate(&truth, 2000, seed).unwrap();
        assert!(y.data.iter().all(|v| v.is_finite()));
    }
}

/// Fraction of the energy of `x` at frequencies in `(lo, hi]` (cycles per sample),
/// by a direct DFT.
fn band_energy_share(x: &[f64], lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let (mut inside, mut total) = (0.0, 0.0);
    for k in 0..n {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let e = re * re + im * im;
        let f = k.min(n - k) as f64 / n as f64;
        total += e;
        if f > lo && f <= hi {
            inside += e;
        }
    }
    inside / total
}

#[test]
fn multiscale_samples_live_in_their_bands() {
    let mut spec = StructureSpec::new(2, 1, 0.5);
    spec.scales = 3;
    let mut truth = generate_structure(&spec, 4).unwrap();
    // Only scale 2 is driven.
    for (c, v) in truth.noise_variances.iter_mut().enumerate() {
        if c / 2 != 1 {
            *v = 1e-300;
        }
    }
    let y = simulate(&truth, 512, 5).unwrap().data;
    for i in 0..2 {
        let col: Vec<f64> = y.column(i).iter().copied().collect();
        assert!(band_energy_share(&col, 0.125, 0.25) > 1.0 - 1e-12);
    }
}

#[test]
fn benchmark_grids_have_the_documented_shape() {
    let ss = GridSpec::single_scale_benchmark(20, 0);
    assert_eq!(ss.cells.len(), 4);
    assert_eq!(ss.dataset_count(), 80);
    let sparsities: Vec<(usize, f64)> = ss.cells.iter().map(|c| (c.series, c.sparsity)).collect();
    assert_eq!(
        sparsities,
        vec![(10, 0.8), (30, 0.85), (50, 0.9), (100, 0.95)]
    );
    assert!(ss.cells.iter().all(|c| c.len == 1000 && c.p == 2.0));

    let ng = GridSpec::non_gaussian_benchmark(20, 0);
    assert_eq!(ng.cells.len(), 45);
    assert_eq!(ng.dataset_count(), 900);
    let jobs = ng.jobs();
    assert_eq!(jobs.len(), 900);
    assert_eq!(jobs[0], (0, 0));
    assert_eq!(jobs[21], (1, 1));

    let mut seeds: Vec<u64> = jobs
        .iter()
        .flat_map(|&(c, r)| {
            let (a, b) = ng.seeds(c, r);
            [a, b]
        })
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 1800);

    assert!(GridSpec::product(&[100], &[7], &[2.0], 1, 0).is_err());
    assert!(GridSpec {
        replicates: 0,
        ..ss.clone()
    }
    .validate()
    .is_err());
}

#[test]
fn generation_is_deterministic() {
    let grid = GridSpec::product(&[200], &[10], &[1.5], 2, 77).unwrap();
    let (ta, pa) = grid_dataset(&grid, 0, 1).unwrap();
    let (tb, pb) = grid_dataset(&grid, 0, 1).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(pa.data, pb.data);
    let (_, pc) = grid_dataset(&grid, 0, 0).unwrap();
    assert_ne!(pa.data, pc.data);
    assert_eq!(
        sample_pgnd(1.5, 100, 3).unwrap(),
        sample_pgnd(1.5, 100, 3).unwrap()
    );
}
