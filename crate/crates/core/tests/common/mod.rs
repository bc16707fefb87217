//! Test-only oracles, written independently of the library code paths they
//! check.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use omerf::data::GroupedOrdinalDataset;

/// Gauss-Hermite nodes and weights (weight function exp(-x^2)) by
/// Golub-Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct-formula category probability.
pub fn naive_prob(theta: &[f64], y: u32, lambda: f64) -> f64 {
    let c = theta.len() as u32 + 1;
    let upper = if y == c { 1.0 } else { logistic(theta[y as usize - 1] - lambda) };
    let lower = if y == 1 { 0.0 } else { logistic(theta[y as usize - 2] - lambda) };
    upper - lower
}

/// Log integrand for group `rows`: log p(y | b) + log N(b; 0, sigma2), intercept only.
fn log_integrand(theta: &[f64], sigma2: f64, data: &GroupedOrdinalDataset, offset: &[f64], rows: &[usize], b: f64) -> f64 {
    let mut s = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * b * b / sigma2;
    for &r in rows {
        s += naive_prob(theta, data.y()[r], offset[r] + b).ln();
    }
    s
}

/// Marginal log-likelihood of a random-intercept model by adaptive
/// Gauss-Hermite quadrature with `n_nodes` nodes per group.
pub fn quadrature_marginal_loglik(
    theta: &[f64],
    sigma2: f64,
    data: &GroupedOrdinalDataset,
    offset: &[f64],
    n_nodes: usize,
) -> f64 {
    let (nodes, weights) = gauss_hermite(n_nodes);
    let mut total = 0.0;
    for rows in data.group_rows() {
        let h = |b: f64| log_integrand(theta, sigma2, data, offset, rows, b);
        // mode by golden-section search on a bracket wide enough for the prior
        let sd = sigma2.sqrt();
        let (mut lo, mut hi) = (-10.0 * sd - 10.0, 10.0 * sd + 10.0);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - gr * (hi - lo);
            let b = lo + gr * (hi - lo);
            if h(a) > h(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let mode = 0.5 * (lo + hi);
        let eps = 1e-4 * sd.max(1e-3);
        let curv = -(h(mode + eps) - 2.0 * h(mode) + h(mode - eps)) / (eps * eps);
        let scale = 1.0 / curv.max(1e-300).sqrt();
        let terms: Vec<f64> = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| {
                let b = mode + std::f64::consts::SQRT_2 * scale * x;
                w.ln() + h(b) + x * x
            })
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        total += (std::f64::consts::SQRT_2 * scale).ln() + lse;
    }
    total
}

/// Plain Nelder-Mead minimizer.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] += step;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() < 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = (0..n).map(|k| best[k] + 0.5 * (simplex[i][k] - best[k])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap();
    (simplex[best].clone(), vals[best])
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Tiny random-intercept fixture: I = 2 groups of `n_i` rows, C = 3, labels
/// drawn from a sd-1 random-intercept model with a random offset. Redrawn
/// until all three categories appear.
pub fn tiny_fixture(seed: u64, n_i: usize) -> (GroupedOrdinalDataset, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let j = 2 * n_i;
        let b: [f64; 2] = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let offset: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
        let group: Vec<usize> = (0..j).map(|r| r / n_i).collect();
        let y: Vec<u32> = (0..j)
            .map(|r| {
                let lambda = offset[r] + b[group[r]];
                let u: f64 = rng.random();
                let g1 = logistic(-0.8 - lambda);
                let g2 = logistic(0.8 - lambda);
                if u < g1 {
                    1
                } else if u < g2 {
                    2
                } else {
                    3
                }
            })
            .collect();
        let mut seen = [false; 3];
        for v in &y {
            seen[*v as usize - 1] = true;
        }
        if !seen.iter().all(|s| *s) {
            continue;
        }
        let data = GroupedOrdinalDataset::new(
            DMatrix::zeros(j, 0),
            DMatrix::from_element(j, 1, 1.0),
            group,
            y,
            3,
            vec![],
            vec!["(Intercept)".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        return (data, offset);
    }
}

/// Linear-design data (`3 + 7 X1 - 5 X2 + X2 X3` plus a random intercept of
/// variance `sigma2`) with features `(X1, X2, X2 X3)`.
pub fn linear_dataset(seed: u64, sigma2: f64, n_groups: usize, n_per_group: usize) -> GroupedOrdinalDataset {
    let mut spec = omerf::sim::DgpSpec::table(9, seed).unwrap();
    spec.sigma2_1 = sigma2;
    spec.n_groups = n_groups;
    spec.n_per_group = n_per_group;
    let sim = omerf::sim::generate(&spec).unwrap();
    let d = sim.data;
    let x = DMatrix::from_fn(d.n_rows(), 3, |r, c| match c {
        0 => d.x()[(r, 0)],
        1 => d.x()[(r, 1)],
        _ => d.x()[(r, 1)] * d.x()[(r, 2)],
    });
    d.with_x(x, vec!["x1".into(), "x2".into(), "x2:x3".into()]).unwrap()
}

/// Central-difference derivative.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Root of a monotone function on `[lo, hi]` by bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Every label vector of length `n` over 1..=c, in lexicographic order.
pub fn all_labelings(n: usize, c: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=c).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Reduced fraction as f64; equal rationals give identical floats.
pub fn ratio(num: i128, den: i128) -> f64 {
    let g = gcd(num, den).max(1);
    let s = if den < 0 { -1 } else { 1 };
    (s * num / g) as f64 / (s * den / g) as f64
}

/// ARI from the four pair counts (both same, same in a only, same in b
/// only, both different), found by visiting every pair.
pub fn ari_pair_oracle(a: &[u32], b: &[u32]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1,
                (true, false) => sd += 1,
                (false, true) => ds += 1,
                (false, false) => dd += 1,
            }
        }
    }
    let num = 2 * (ss * dd - sd * ds);
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0 { 1.0 } else { ratio(num, den) }
}

/// Kappa from p_o and p_e held as fractions over n and n^2.
pub fn kappa_oracle(truth: &[u32], pred: &[u32], c: u32) -> (f64, bool) {
    let n = truth.len() as i128;
    let mut po = 0i128;
    let mut pe = 0i128;
    for k in 1..=c {
        let r = truth.iter().filter(|&&t| t == k).count() as i128;
        let q = pred.iter().filter(|&&p| p == k).count() as i128;
        pe += r * q;
    }
    for (t, p) in truth.iter().zip(pred) {
        if t == p {
            po += 1;
        }
    }
    // p_o = po / n, p_e = pe / n^2
    let one_minus_pe = n * n - pe;
    if one_minus_pe == 0 {
        return (0.0, true);
    }
    (ratio(po * n - pe, one_minus_pe), false)
}

/// Gradient-check configuration: random dataset with P = 2 features,
/// random intercept and slope on x1.
pub fn random_config(rng: &mut rand_chacha::ChaCha8Rng) -> (omerf::link::ThresholdVector, Vec<f64>, DMatrix<f64>, GroupedOrdinalDataset, Vec<f64>) {
    use rand::Rng;
    let c = rng.random_range(2..=5u32);
    let n_groups = rng.random_range(1..=4usize);
    let j = rng.random_range(3..=12usize).max(n_groups);
    let x = DMatrix::from_fn(j, 2, |_, _| rng.random_range(-2.0..2.0));
    let z = DMatrix::from_fn(j, 2, |r, k| if k == 0 { 1.0 } else { x[(r, 0)] });
    let group: Vec<usize> = (0..j).map(|r| r % n_groups).collect();
    let y: Vec<u32> = (0..j).map(|_| rng.random_range(1..=c)).collect();
    let mut t: Vec<f64> = (0..c - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
    t.sort_by(f64::total_cmp);
    for k in 1..t.len() {
        if t[k] - t[k - 1] < 0.05 {
            t[k] = t[k - 1] + 0.05;
        }
    }
    let theta = omerf::link::ThresholdVector::new(t).unwrap();
    let beta = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    let b = DMatrix::from_fn(n_groups, 2, |_, _| rng.random_range(-1.0..1.0));
    let offset: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = GroupedOrdinalDataset::new(
        x,
        z,
        group,
        y,
        c,
        vec!["a".into(), "b".into()],
        vec!["(Intercept)".into(), "a".into()],
        (0..n_groups).map(|i| format!("g{i}")).collect(),
    )
    .unwrap();
    (theta, beta, b, data, offset)
}

pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1.0)
}
