//! Brute-force checks on finite state spaces and goodness-of-fit utilities.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Exp1};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{RestoreError, Result};
use crate::model::{regen_rate_discrete, DiscreteModel};

/// The Restore generator `L^μ = Q + diag(κ)(1μᵀ − I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGenerator {
    pub l_mu: DMatrix<f64>,
}

pub fn full_generator(model: &DiscreteModel) -> Result<FullGenerator> {
    let n = model.n_states();
    let kappa: Vec<f64> = (0..n).map(|i| regen_rate_discrete(model, i)).collect::<Result<_>>()?;
    Ok(FullGenerator {
        l_mu: generator_with_rates(model, &kappa),
    })
}

/// `L^μ` for an arbitrary rate vector, e.g. a deliberately wrong one.
pub fn generator_with_rates(model: &DiscreteModel, kappa: &[f64]) -> DMatrix<f64> {
    let n = model.n_states();
    let mu = model.mu();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        model.q(i, j) + kappa[i] * (mu[j] - delta)
    })
}

/// `‖π L^μ‖_∞`.
pub fn check_invariance(model: &DiscreteModel) -> Result<f64> {
    let gen = full_generator(model)?;
    Ok(invariance_residual(model.pi(), &gen))
}

pub fn invariance_residual(pi: &[f64], gen: &FullGenerator) -> f64 {
    let row = DVector::from_column_slice(pi).transpose() * &gen.l_mu;
    row.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Unique probability vector `v` with `v L^μ = 0`.
pub fn stationary_vector(gen: &FullGenerator) -> Result<Vec<f64>> {
    let n = gen.l_mu.nrows();
    let lt = gen.l_mu.transpose();
    let sv = lt.clone().svd(false, false).singular_values;
    let scale = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
    let nullity = sv.iter().filter(|s| **s <= 1e-10 * scale).count();
    if nullity > 1 {
        return Err(RestoreError::Rank { nullity });
    }
    // Lᵀ v = 0 stacked on 1ᵀ v = 1, solved in the least-squares sense.
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&lt);
    a.row_mut(n).fill(1.0);
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let v = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|_| RestoreError::Rank { nullity })?;
    Ok(v.iter().copied().collect())
}

/// Random valid model: `Q` off-diagonals `Exp(1)`, `π, μ ∼ Dirichlet(1)`,
/// and `C` 0.1 above the smallest value keeping `κ ≥ 0`.
pub fn random_model(n: usize, rng: &mut dyn RngCore) -> DiscreteModel {
    let mut q = vec![vec![0.0; n]; n];
    for (i, row) in q.iter_mut().enumerate() {
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = Exp1.sample(rng);
                sum += *v;
            }
        }
        row[i] = -sum;
    }
    let dirichlet = |rng: &mut dyn RngCore| {
        let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let pi = dirichlet(rng);
    let mut mu = dirichlet(rng);
    // Renormalise so the sum is 1 to the last bit the validator can see.
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= s);
    let c_min = (0..n)
        .map(|x| {
            let inflow: f64 = (0..n).map(|y| pi[y] * q[y][x]).sum();
            (-inflow / mu[x]).max(0.0)
        })
        .fold(0.0, f64::max);
    DiscreteModel::new(q, pi, mu, c_min + 0.1).expect("generated model is valid")
}

/// Kolmogorov distribution tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_tail((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous cdf.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(RestoreError::InsufficientData("KS test needs at least one sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// `(D, p)` of the one-sample KS test, asymptotic p-value.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let d = ks_statistic(samples, cdf)?;
    Ok((d, ks_pvalue(d, samples.len() as f64)))
}

/// `(D, p)` of the two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(RestoreError::InsufficientData("KS test needs non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok((d, ks_pvalue(d, na * nb / (na + nb))))
}

/// Pearson χ² on counts against expected counts; bins with expectation
/// below 5 are pooled with their neighbours first.
pub fn chi2_counts(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(RestoreError::InsufficientData("chi-square needs matching non-empty bins".into()));
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    if pooled.len() < 2 {
        return Err(RestoreError::InsufficientData("fewer than two bins after pooling".into()));
    }
    let stat: f64 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (pooled.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    Ok((stat, p))
}

/// Bins samples on `edges` and compares with `probs` (one per bin); any
/// remaining probability mass forms a single bin for out-of-range samples.
pub fn chi2_statistic(samples: &[f64], edges: &[f64], probs: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(RestoreError::InsufficientData("chi-square needs samples".into()));
    }
    if edges.len() != probs.len() + 1 {
        return Err(RestoreError::Config("need one more edge than bin probabilities".into()));
    }
    let k = probs.len();
    let mut counts = vec![0.0; k + 1];
    for x in samples {
        match bin_index(edges, *x) {
            Some(i) => counts[i] += 1.0,
            None => counts[k] += 1.0,
        }
    }
    let n = samples.len() as f64;
    let mut expected: Vec<f64> = probs.iter().map(|p| p * n).collect();
    let rest = (1.0 - probs.iter().sum::<f64>()).max(0.0) * n;
    expected.push(rest);
    if rest < 1e-12 && counts[k] == 0.0 {
        counts.pop();
        expected.pop();
    }
    chi2_counts(&counts, &expected)
}

/// Index of the half-open bin `[edges[i], edges[i+1])` containing `x`.
pub fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    if !(x >= edges[0] && x < edges[edges.len() - 1]) {
        return None;
    }
    match edges.binary_search_by(|e| e.total_cmp(&x)) {
        Ok(i) => Some(i.min(edges.len() - 2)),
        Err(i) => Some(i - 1),
    }
}
