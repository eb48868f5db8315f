//! Shared test support: independent numerical minimizers used as oracles
//! against the closed-form solvers, plus small statistics helpers.
//!
//! The primary oracle is projected gradient descent in the diagonal metric
//! of the objective (vanilla Euclidean steps are hopeless here because the
//! curvature of `a^2/p` spans many orders of magnitude across the box), with
//! an Armijo backtracking safeguard. A scalar water-level bisection provides
//! a second, purely algebraic route.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Objective `sum a_i^2 / p_i`.
pub fn objective(a: &[f64], p: &[f64]) -> f64 {
    a.iter().zip(p).map(|(&ai, &pi)| ai * ai / pi).sum()
}

/// Projection onto `{ sum q = k, lo <= q <= 1 }` in the diagonal metric
/// `h`: minimizes `sum h_i (q_i - y_i)^2 / 2` via bisection on the dual
/// variable.
pub fn project_box_simplex(y: &[f64], h: &[f64], k: f64, lo: f64) -> Vec<f64> {
    let eval = |tau: f64| -> f64 {
        y.iter()
            .zip(h)
            .map(|(&yi, &hi)| (yi - tau / hi).clamp(lo, 1.0))
            .sum()
    };
    let mut tau_lo = f64::INFINITY;
    let mut tau_hi = f64::NEG_INFINITY;
    for (&yi, &hi) in y.iter().zip(h) {
        tau_lo = tau_lo.min((yi - 1.0) * hi);
        tau_hi = tau_hi.max((yi - lo) * hi);
    }
    // sum is non-increasing in tau: tau_lo puts everyone at the cap,
    // tau_hi at the floor.
    debug_assert!(eval(tau_lo) >= k - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (tau_lo + tau_hi);
        if eval(mid) >= k {
            tau_lo = mid;
        } else {
            tau_hi = mid;
        }
    }
    let tau = 0.5 * (tau_lo + tau_hi);
    let mut q: Vec<f64> = y
        .iter()
        .zip(h)
        .map(|(&yi, &hi)| (yi - tau / hi).clamp(lo, 1.0))
        .collect();
    // Polish the tiny residual budget error on the free coordinates.
    let sum: f64 = q.iter().sum();
    let free: Vec<usize> = (0..q.len())
        .filter(|&i| q[i] > lo + 1e-12 && q[i] < 1.0 - 1e-12)
        .collect();
    if !free.is_empty() {
        let adjust = (k - sum) / free.len() as f64;
        for i in free {
            q[i] = (q[i] + adjust).clamp(lo, 1.0);
        }
    }
    q
}

/// Projected gradient descent with diagonal scaling and Armijo
/// backtracking for `min sum a_i^2/p_i` over `{sum p = k, lo <= p <= 1}`.
pub fn pgd_oracle(a: &[f64], k: f64, lo: f64) -> Vec<f64> {
    let n = a.len();
    let lo = lo.max(1e-9);
    let uniform = vec![(k / n as f64).clamp(lo, 1.0); n];
    let mut p = project_box_simplex(&uniform, &vec![1.0; n], k, lo);
    let mut f_cur = objective(a, &p);
    for _ in 0..200 {
        let h: Vec<f64> = a
            .iter()
            .zip(&p)
            .map(|(&ai, &pi)| (2.0 * ai * ai / (pi * pi * pi)).max(1e-12))
            .collect();
        let y: Vec<f64> = a
            .iter()
            .zip(&p)
            .map(|(&ai, &pi)| {
                let grad = -ai * ai / (pi * pi);
                pi - grad / (2.0 * ai * ai / (pi * pi * pi)).max(1e-12)
            })
            .collect();
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let target: Vec<f64> = p
                .iter()
                .zip(&y)
                .map(|(&pi, &yi)| pi + alpha * (yi - pi))
                .collect();
            let cand = project_box_simplex(&target, &h, k, lo);
            let f_new = objective(a, &cand);
            if f_new < f_cur {
                p = cand;
                f_cur = f_new;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    p
}

/// Scalar water-level route: `p_i = clamp(a_i / sqrt(tau), lo, 1)` with the
/// level found by bisection on the budget.
pub fn water_level_oracle(a: &[f64], k: f64, lo: f64) -> Vec<f64> {
    let eval = |tau: f64| -> f64 {
        a.iter()
            .map(|&ai| (ai / tau.sqrt()).clamp(lo, 1.0))
            .sum()
    };
    let amax = a.iter().cloned().fold(0.0, f64::max);
    let mut t_lo = (amax / 1.0).powi(2) * 1e-12; // everyone capped
    let mut t_hi = (amax * a.len() as f64 / k.max(1e-9)).powi(2) + 1.0;
    while eval(t_hi) > k {
        t_hi *= 4.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if eval(mid) >= k {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    let tau = 0.5 * (t_lo + t_hi);
    a.iter().map(|&ai| (ai / tau.sqrt()).clamp(lo, 1.0)).collect()
}

/// A random solver instance: positive feedback, integer budget.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, f64) {
    let n = rng.random_range(2..=max_n);
    let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 1.95 + 0.05).collect();
    let k = rng.random_range(1..=n) as f64;
    (a, k)
}

/// A random feasible point of `{sum q = k, lo <= q <= 1}`.
pub fn random_feasible(rng: &mut ChaCha8Rng, n: usize, k: f64, lo: f64) -> Vec<f64> {
    let x: Vec<f64> = (0..n)
        .map(|_| lo + rng.random::<f64>() * (1.0 - lo))
        .collect();
    project_box_simplex(&x, &vec![1.0; n], k, lo.max(1e-9))
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
