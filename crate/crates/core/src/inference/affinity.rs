//! Pairwise affinity posteriors q(δ_ij) under the ε bound.

use super::{EStepConfig, MIN_STEP};
use crate::error::{JnetError, Result};
use crate::model::{logistic, softplus, AffinityPosterior, HyperParams, PosteriorState};
use crate::scalar::{dot, Real};

#[derive(Debug, Clone, Copy)]
pub struct PairContext<T> {
    pub edge: bool,
    /// `μ^(u_i)ᵀ μ^(u_j)`
    pub prior_mean: T,
    pub xi: T,
}

/// The δ-dependent part of the bound with ε at its optimum:
/// `eμ − log(1 + exp(μ + σ²/2)) − (μ² + σ² − 2μc)/(2ξ²) + log σ`.
pub fn affinity_objective<T: Real>(ctx: &PairContext<T>, mean: T, log_sd: T) -> T {
    let half = T::lit(0.5);
    let var = (log_sd + log_sd).exp();
    let e = if ctx.edge { T::one() } else { T::zero() };
    e * mean - softplus(mean + half * var)
        - (mean * mean + var - T::lit(2.0) * mean * ctx.prior_mean) / (T::lit(2.0) * ctx.xi * ctx.xi)
        + log_sd
}

/// Gradients with respect to `μ` and `σ` at the posterior's stored ε.
pub fn affinity_gradient<T: Real>(ctx: &PairContext<T>, post: &AffinityPosterior<T>) -> (T, T) {
    let sd = post.sd();
    let ratio = (post.log_mean_exp() - post.epsilon.ln()).exp();
    let e = if ctx.edge { T::one() } else { T::zero() };
    let inv_xi2 = (ctx.xi * ctx.xi).recip();
    let g_mean = e - ratio - inv_xi2 * (post.mean - ctx.prior_mean);
    let g_sd = -sd * ratio - sd * inv_xi2 + sd.recip();
    (g_mean, g_sd)
}

/// Preconditioned gradient ascent on `(μ, log σ)` with backtracking.
pub fn optimize_affinity<T: Real>(
    ctx: &PairContext<T>,
    post: &mut AffinityPosterior<T>,
    config: &EStepConfig<T>,
) -> std::result::Result<usize, String> {
    let inv_xi2 = (ctx.xi * ctx.xi).recip();
    let mut iters = 0;
    for _ in 0..config.inner_steps {
        post.refresh_epsilon();
        let f0 = affinity_objective(ctx, post.mean, post.log_sd);
        let (g_mean, g_sd) = affinity_gradient(ctx, post);
        let sd = post.sd();
        let g_lsd = sd * g_sd;
        if !g_mean.is_finite() || !g_lsd.is_finite() {
            return Err("non-finite gradient".into());
        }
        if g_mean.abs().max(g_lsd.abs()) < config.tolerance {
            break;
        }
        iters += 1;
        let p = logistic(post.log_mean_exp());
        let var = sd * sd;
        let h_mean = p * (T::one() - p) + inv_xi2;
        let h_lsd = (T::lit(2.0) * var * (p + inv_xi2) + var * var * p * (T::one() - p)).max(T::lit(0.5));
        let (d_mean, d_lsd) = (g_mean / h_mean, g_lsd / h_lsd);
        let mut step = config.step_size;
        let mut accepted = false;
        while step > T::lit(MIN_STEP) {
            let (m, l) = (post.mean + step * d_mean, post.log_sd + step * d_lsd);
            let f1 = affinity_objective(ctx, m, l);
            if f1.is_finite() && f1 >= f0 {
                post.mean = m;
                post.log_sd = l;
                accepted = true;
                break;
            }
            step = step * config.backtrack;
        }
        if !accepted {
            break;
        }
    }
    post.refresh_epsilon();
    Ok(iters)
}

/// Updates q(δ_ij) for the pair at position `t` of the state's pair set.
pub fn update_affinity<T: Real>(
    state: &PosteriorState<T>,
    hyper: &HyperParams<T>,
    config: &EStepConfig<T>,
    t: usize,
) -> Result<AffinityPosterior<T>> {
    let term = &state.pairs.terms[t];
    let ctx = PairContext {
        edge: term.edge,
        prior_mean: dot(&state.users[term.i].mean, &state.users[term.j].mean),
        xi: hyper.xi,
    };
    let mut post = term.post;
    optimize_affinity(&ctx, &mut post, config)
        .map_err(|msg| JnetError::NonFinite(format!("pair ({}, {}): {msg}", term.i, term.j)))?;
    Ok(post)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> EStepConfig<f64> {
        EStepConfig { inner_steps: 1000, tolerance: 1e-12, ..EStepConfig::default() }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn stationary_mean_matches_bisection_root() {
        // σ frozen small: 1 = ε⁻¹ exp(μ) + ξ⁻²(μ − c), ε = 1 + exp(μ)
        let (xi, c) = (2.0, -0.3);
        let ctx = PairContext { edge: true, prior_mean: c, xi };
        let mut post = AffinityPosterior::new(0.0, 1e-6);
        let frozen = post.log_sd;
        for _ in 0..200 {
            post.refresh_epsilon();
            let (g, _) = affinity_gradient(&ctx, &post);
            let p = logistic(post.log_mean_exp());
            post.mean += g / (p * (1.0 - p) + 1.0 / (xi * xi));
            post.log_sd = frozen;
        }
        let root = bisect(|m| 1.0 - logistic(m) - (m - c) / (xi * xi), -20.0, 20.0);
        assert!((post.mean - root).abs() < 1e-8, "{} vs {root}", post.mean);

        // the full optimizer agrees when σ is also small at the optimum
        let ctx = PairContext { edge: true, prior_mean: c, xi: 0.05 };
        let mut post = AffinityPosterior::new(0.0, 0.05);
        optimize_affinity(&ctx, &mut post, &tight()).unwrap();
        let root = bisect(|m| 1.0 - logistic(m + 0.5 * post.sd().powi(2)) - (m - c) / (0.05 * 0.05), -5.0, 5.0);
        assert!((post.mean - root).abs() < 1e-8);
    }

    #[test]
    fn gradients_match_central_differences() {
        let pts: [(f64, f64, bool, f64, f64); 3] = [(0.3, 0.4, true, 0.1, 1.3), (-1.2, 1.1, false, 0.5, 0.7), (2.5, 0.05, true, -1.0, 3.0)];
        for &(mean, sd, edge, c, xi) in &pts {
            let ctx = PairContext { edge, prior_mean: c, xi };
            let post = AffinityPosterior::new(mean, sd);
            let (gm, gs) = affinity_gradient(&ctx, &post);
            let h = 1e-6;
            let fd_m = (affinity_objective(&ctx, mean + h, sd.ln()) - affinity_objective(&ctx, mean - h, sd.ln())) / (2.0 * h);
            let fd_s = (affinity_objective(&ctx, mean, (sd + h).ln()) - affinity_objective(&ctx, mean, (sd - h).ln())) / (2.0 * h);
            assert!((fd_m - gm).abs() < 1e-6 * gm.abs().max(1.0));
            assert!((fd_s - gs).abs() < 1e-6 * gs.abs().max(1.0));
        }
    }

    #[test]
    fn edge_pulls_mean_up() {
        let mut on = AffinityPosterior::new(0.0, 1.0);
        let mut off = on;
        optimize_affinity(&PairContext { edge: true, prior_mean: 0.0, xi: 1.0 }, &mut on, &tight()).unwrap();
        optimize_affinity(&PairContext { edge: false, prior_mean: 0.0, xi: 1.0 }, &mut off, &tight()).unwrap();
        assert!(on.mean > off.mean);
        assert_eq!(on.epsilon, 1.0 + on.log_mean_exp().exp());
    }
}
