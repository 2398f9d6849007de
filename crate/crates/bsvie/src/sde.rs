//! Euler–Maruyama simulation of the forward SDE
//! `dX = b(t,X) dt + σ(t,X) dW`, and the empirical increment bound
//! `E|X(s) - X(t)|² ≤ K₀ |s - t|` every downstream check consumes.
//!
//! Brownian increments come from a counter-based generator keyed on
//! (seed, path, step, component), so any subset of paths reproduces exactly
//! regardless of how many paths a run asks for.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::math::normal_draw;
use crate::model::SdeModel;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Flip the sign of every Brownian increment; with b = 0 this mirrors the
    /// ensemble about x0.
    pub antithetic: bool,
}

/// Simulated forward paths with their driving increments.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n: usize,
    pub d: usize,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// States, path-major: `[path][knot][n]`.
    pub x: Vec<f64>,
    /// Brownian increments, path-major: `[path][step][d]`.
    pub dw: Vec<f64>,
}

impl PathEnsemble {
    #[inline]
    pub fn state(&self, path: usize, knot: usize) -> &[f64] {
        let j = self.grid.len();
        let base = (path * j + knot) * self.n;
        &self.x[base..base + self.n]
    }

    /// Scalar state (n = 1).
    #[inline]
    pub fn state1(&self, path: usize, knot: usize) -> f64 {
        self.x[(path * self.grid.len() + knot) * self.n]
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.grid.steps() + step) * self.d;
        &self.dw[base..base + self.d]
    }

    /// Scalar increment (d = 1).
    #[inline]
    pub fn increment1(&self, path: usize, step: usize) -> f64 {
        self.dw[(path * self.grid.steps() + step) * self.d]
    }

    /// Checks the per-step increment variance against Δt (5 standard errors
    /// of the sample variance) and that every state is finite.
    pub fn validate(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { path: 0, step: 0 });
        }
        let p = self.n_paths as f64;
        for step in 0..self.grid.steps() {
            let dt = self.grid.knots()[step + 1] - self.grid.knots()[step];
            for c in 0..self.d {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for path in 0..self.n_paths {
                    let w = self.increment(path, step)[c];
                    sum += w;
                    sumsq += w * w;
                }
                let mean = sum / p;
                let var = sumsq / p - mean * mean;
                let se = dt * (2.0 / (p - 1.0)).sqrt();
                if (var - dt).abs() > 5.0 * se {
                    return Err(Error::InvalidInput(format!(
                        "increment variance {var:.3e} at step {step} is {:.1} SE from dt {dt:.3e}",
                        (var - dt).abs() / se
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Runs the Euler–Maruyama recursion
/// `X_{j+1} = X_j + b(r_j, X_j) Δt + σ(r_j, X_j) ΔW_j`.
pub fn simulate(
    model: &SdeModel,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_with(model, x0, grid, n_paths, seed, SimOptions::default())
}

pub fn simulate_with(
    model: &SdeModel,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathEnsemble> {
    let n = model.n;
    let d = model.d;
    if x0.len() != n {
        return Err(Error::InvalidInput(format!(
            "x0 has {} entries, model has n = {n}",
            x0.len()
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    let j = grid.len();
    let steps = grid.steps();
    let mut x = vec![0.0; n_paths * j * n];
    let mut dw = vec![0.0; n_paths * steps * d];
    let knots = grid.knots();
    let sign = if opts.antithetic { -1.0 } else { 1.0 };

    let fail = x
        .par_chunks_mut(j * n)
        .zip(dw.par_chunks_mut(steps.max(1) * d))
        .enumerate()
        .map(|(path, (xp, wp))| {
            xp[..n].copy_from_slice(x0);
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * d];
            for step in 0..steps {
                let t = knots[step];
                let dt = knots[step + 1] - t;
                let sqdt = dt.sqrt();
                for c in 0..d {
                    wp[step * d + c] =
                        sign * sqdt * normal_draw(seed, path as u64, step as u64, c as u64);
                }
                let (head, tail) = xp.split_at_mut((step + 1) * n);
                let cur = &head[step * n..];
                let next = &mut tail[..n];
                model.coeffs.drift(t, cur, &mut b);
                model.coeffs.diffusion(t, cur, &mut s);
                for i in 0..n {
                    let mut acc = cur[i] + b[i] * dt;
                    for c in 0..d {
                        acc += s[i * d + c] * wp[step * d + c];
                    }
                    next[i] = acc;
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Some((path, step));
                }
            }
            None
        })
        .find_map_first(|blowup| blowup);

    if let Some((path, step)) = fail {
        return Err(Error::NonFiniteState { path, step });
    }

    Ok(PathEnsemble {
        grid: grid.clone(),
        n,
        d,
        n_paths,
        x0: x0.to_vec(),
        seed,
        x,
        dw,
    })
}

/// Empirical K₀: the max over knot pairs of `Ê|X(s) - X(t)|² / |s - t|`.
pub fn increment_bound(ens: &PathEnsemble) -> f64 {
    let j = ens.grid.len();
    assert!(j >= 2, "increment bound needs at least two knots");
    let n = ens.n;
    let p = ens.n_paths;
    // knot-major copy for cache-friendly pair sweeps
    let mut km = vec![0.0; j * p * n];
    for path in 0..p {
        for knot in 0..j {
            let src = ens.state(path, knot);
            km[(knot * p + path) * n..(knot * p + path) * n + n].copy_from_slice(src);
        }
    }
    let knots = ens.grid.knots();
    let mut k0: f64 = 0.0;
    for a in 0..j {
        for b in (a + 1)..j {
            let dt = knots[b] - knots[a];
            let mut acc = 0.0;
            let ra = &km[a * p * n..(a + 1) * p * n];
            let rb = &km[b * p * n..(b + 1) * p * n];
            for (u, v) in ra.iter().zip(rb) {
                let e = u - v;
                acc += e * e;
            }
            k0 = k0.max(acc / (p as f64) / dt);
        }
    }
    k0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::Const;
    use crate::model::SdeModel;
    use std::sync::Arc;

    fn grid50() -> TimeGrid {
        TimeGrid::uniform(0.0, 1.0, 50).unwrap()
    }

    #[test]
    fn degenerate_noise_keeps_state_constant() {
        let model = SdeModel::scalar(Arc::new(Const(0.0)), Arc::new(Const(0.0)), 0.0, 0.0, 0.0);
        let ens = simulate(&model, &[1.5], &grid50(), 8, 7).unwrap();
        for path in 0..8 {
            for knot in 0..ens.grid.len() {
                assert_eq!(ens.state1(path, knot), 1.5);
            }
        }
    }

    #[test]
    fn constant_drift_reaches_x0_plus_mu_t() {
        let mu = 0.7;
        let model = SdeModel::scalar(Arc::new(Const(mu)), Arc::new(Const(0.0)), 0.0, 0.0, 1.0);
        let ens = simulate(&model, &[0.25], &grid50(), 3, 7).unwrap();
        for path in 0..3 {
            let xt = ens.state1(path, ens.grid.len() - 1);
            assert!((xt - (0.25 + mu)).abs() < 1e-13, "X(T) = {xt}");
        }
    }

    #[test]
    fn brownian_moments() {
        // b = 0, σ = 1, 1e5 paths: mean within 4·sqrt(T/P), var within 3% of T.
        let model = SdeModel::brownian();
        let p = 100_000usize;
        let ens = simulate(&model, &[0.0], &grid50(), p, 20240915).unwrap();
        let last = ens.grid.len() - 1;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for path in 0..p {
            let v = ens.state1(path, last);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / p as f64;
        let var = sumsq / p as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (p as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
        ens.validate().unwrap();
    }

    #[test]
    fn increment_bound_brownian_is_one() {
        let model = SdeModel::brownian();
        let ens = simulate(&model, &[0.0], &grid50(), 100_000, 11).unwrap();
        let k0 = increment_bound(&ens);
        assert!((k0 - 1.0).abs() < 0.1, "K0 = {k0}");
    }

    #[test]
    fn increment_bound_scales_with_sigma_squared() {
        let model = SdeModel::scalar(Arc::new(Const(0.0)), Arc::new(Const(2.0)), 0.0, 2.0, 2.0);
        let ens = simulate(&model, &[0.0], &grid50(), 100_000, 12).unwrap();
        let k0 = increment_bound(&ens);
        assert!((k0 - 4.0).abs() < 0.4, "K0 = {k0}");
    }

    #[test]
    fn increment_bound_deterministic_drift() {
        let mu = 1.3f64;
        let model = SdeModel::scalar(Arc::new(Const(mu)), Arc::new(Const(0.0)), 0.0, 0.0, 2.0);
        let ens = simulate(&model, &[0.0], &grid50(), 16, 5).unwrap();
        // |X(s)-X(t)|² = μ²|s-t|², so the ratio is at most μ²·T
        let k0 = increment_bound(&ens);
        assert!(k0 <= mu * mu * 1.0 + 1e-12, "K0 = {k0}");
    }

    #[test]
    fn bit_reproducible_and_subset_stable() {
        let model = SdeModel::brownian();
        let a = simulate(&model, &[0.0], &grid50(), 40, 99).unwrap();
        let b = simulate(&model, &[0.0], &grid50(), 40, 99).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dw, b.dw);
        // the first 10 paths of a 40-path run equal a 10-path run
        let c = simulate(&model, &[0.0], &grid50(), 10, 99).unwrap();
        let j = a.grid.len();
        assert_eq!(&a.x[..10 * j], &c.x[..]);
    }

    #[test]
    fn antithetic_mirrors_driftless_paths() {
        let model = SdeModel::brownian();
        let x0 = 0.4;
        let a = simulate(&model, &[x0], &grid50(), 6, 31).unwrap();
        let b = simulate_with(
            &model,
            &[x0],
            &grid50(),
            6,
            31,
            SimOptions { antithetic: true },
        )
        .unwrap();
        for path in 0..6 {
            for knot in 0..a.grid.len() {
                let u = a.state1(path, knot) - x0;
                let v = b.state1(path, knot) - x0;
                assert!((u + v).abs() < 1e-12);
            }
        }
    }
}
