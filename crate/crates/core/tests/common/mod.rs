//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Depth-first search for a directed cycle in the graph `i -> j` iff `adj[(i, j)]`.
pub fn has_cycle(adj: &DMatrix<bool>) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    fn visit(v: usize, adj: &DMatrix<bool>, marks: &mut [Mark]) -> bool {
        marks[v] = Mark::Open;
        for w in 0..adj.ncols() {
            if !adj[(v, w)] {
                continue;
            }
            let mark = marks[w];
            if mark == Mark::Open || (mark == Mark::New && visit(w, adj, marks)) {
                return true;
            }
        }
        marks[v] = Mark::Done;
        false
    }
    let n = adj.nrows();
    let mut marks = vec![Mark::New; n];
    (0..n).any(|v| marks[v] == Mark::New && visit(v, adj, &mut marks))
}

/// Central finite differences of `f` at `w`, one entry at a time.
pub fn central_difference(
    f: impl Fn(&DMatrix<f64>) -> f64,
    w: &DMatrix<f64>,
    step: f64,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for c in 0..w.ncols() {
        for r in 0..w.nrows() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[(r, c)] += step;
            minus[(r, c)] -= step;
            out[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
    }
    out
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best value of `c/2 |Y - Y B|^2 + lambda |B|_1` over all node orderings, with
/// `B` restricted to each ordering's strictly lower-triangular support and solved
/// per column by cyclic coordinate descent.
pub fn ordering_oracle(y: &DMatrix<f64>, lambda: f64, c: f64) -> f64 {
    let n = y.ncols();
    let g = y.transpose() * y;
    let mut best = f64::INFINITY;
    for order in permutations(n) {
        let mut obj = 0.0;
        for (pos, &j) in order.iter().enumerate() {
            let parents = &order[..pos];
            let mut b = vec![0.0; parents.len()];
            for _ in 0..10_000 {
                let mut moved: f64 = 0.0;
                for k in 0..parents.len() {
                    let pk = parents[k];
                    let mut r = g[(pk, j)];
                    for (m, &pm) in parents.iter().enumerate() {
                        if m != k {
                            r -= g[(pk, pm)] * b[m];
                        }
                    }
                    let num = c * r;
                    let denom = c * g[(pk, pk)];
                    let nb = if num > lambda {
                        (num - lambda) / denom
                    } else if num < -lambda {
                        (num + lambda) / denom
                    } else {
                        0.0
                    };
                    moved = moved.max((nb - b[k]).abs());
                    b[k] = nb;
                }
                if moved < 1e-14 {
                    break;
                }
            }
            let mut resid = y.column(j).into_owned();
            for (m, &pm) in parents.iter().enumerate() {
                resid -= y.column(pm) * b[m];
            }
            obj += 0.5 * c * resid.norm_squared() + lambda * b.iter().map(|v| v.abs()).sum::<f64>();
        }
        best = best.min(obj);
    }
    best
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// CDF of a symmetric density on `[0, xmax]`, tabulated by the trapezoid rule
/// on `steps` intervals and interpolated linearly.
pub struct NumericCdf {
    xmax: f64,
    dx: f64,
    half: Vec<f64>,
}

impl NumericCdf {
    pub fn symmetric(density: impl Fn(f64) -> f64, xmax: f64, steps: usize) -> Self {
        let dx = xmax / steps as f64;
        let mut half = Vec::with_capacity(steps + 1);
        let mut acc = 0.0;
        let mut prev = density(0.0);
        half.push(0.0);
        for k in 1..=steps {
            let cur = density(k as f64 * dx);
            acc += 0.5 * (prev + cur) * dx;
            half.push(acc);
            prev = cur;
        }
        Self { xmax, dx, half }
    }

    /// Mass of `[0, xmax]`; should be close to 1/2.
    pub fn half_mass(&self) -> f64 {
        *self.half.last().unwrap()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let a = x.abs().min(self.xmax);
        let pos = a / self.dx;
        let k = (pos.floor() as usize).min(self.half.len() - 2);
        let frac = pos - k as f64;
        let area = self.half[k] + frac * (self.half[k + 1] - self.half[k]);
        if x >= 0.0 {
            0.5 + area
        } else {
            0.5 - area
        }
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn sample_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

/// Least squares `argmin |y - X b|` through the normal equations.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = x.transpose() * x;
    gram.cholesky()
        .expect("full column rank")
        .solve(&(x.transpose() * y))
}
