//! Evaluation of the solution pair along simulated paths,
//!
//! ```text
//! Y(s)   = Θ(s,s,X(s),X(s)),
//! Z(t,s) = Θ_x(t,s,X(t),X(s)) σ(s,X(s)),    t ≤ s,
//! Z(t,s) = Γ_x(t,s,X(s)) σ(s,X(s)),         s < t,
//! ```
//!
//! and the quadrature verifiers: the integral-equation residual
//!
//! ```text
//! R(t) = Y(t) - ψ(t,X(t),X(T)) - Σ_{r_j ≥ t} g(t,r_j,…) Δt + Σ_{r_j ≥ t} Z(t,r_j) ΔW_j
//! ```
//!
//! and the martingale-constraint residual
//!
//! ```text
//! M(t) = Y(t) - Ê[Y(t)] - Σ_{r_j < t} Z(t,r_j) ΔW_j.
//! ```
//!
//! Stochastic sums are left-endpoint (Itô) Riemann sums on the simulation
//! grid; trapezoid sums would bias them. Ê denotes the plug-in ensemble
//! mean; its O(n_paths^{-1/2}) contribution is reported separately from the
//! centered spread so exactly-representable problems do not masquerade as
//! discretization error.

use crate::coeff::GenPoint;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{SdeModel, TypeIIProblem, TypeIProblem};
use crate::pde_type1::ThetaField;
use crate::pde_type2::{GammaField, MildSolution};
use crate::sde::PathEnsemble;

/// Fraction of excluded paths above which a run fails validation.
pub const EXCLUSION_LIMIT: f64 = 1e-3;

/// (Y, Z) sampled along an ensemble. Z rows live on the knots in `t_set`
/// (ensemble-knot indices); the upper block holds `Z(t, r_j)` for steps
/// `j ≥ t`, the lower block (with-transpose solutions) `Z(t, r_j)` for
/// `j < t`.
#[derive(Debug, Clone)]
pub struct SolutionPair {
    pub grid: TimeGrid,
    pub m: usize,
    pub n_paths: usize,
    /// `[path][knot][m]`
    pub y: Vec<f64>,
    pub t_set: Vec<usize>,
    /// `[path][t_local][j ≥ t][m]`, row lengths `steps - t`.
    pub z_upper: Option<Vec<f64>>,
    /// `[path][t_local][j < t][m]`, row lengths `t`.
    pub z_lower: Option<Vec<f64>>,
    pub excluded: Vec<bool>,
    pub provenance: String,
}

impl SolutionPair {
    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Errors when more than [`EXCLUSION_LIMIT`] of the paths left the grid.
    pub fn check_exclusions(&self) -> Result<()> {
        let excluded = self.excluded_count();
        if (excluded as f64) > EXCLUSION_LIMIT * self.n_paths as f64 {
            return Err(Error::PathOutsideDomain {
                excluded,
                total: self.n_paths,
                limit: EXCLUSION_LIMIT,
            });
        }
        Ok(())
    }

    fn upper_path_stride(&self) -> usize {
        self.t_set
            .iter()
            .map(|&t| self.grid.steps() - t)
            .sum::<usize>()
            * self.m
    }

    fn upper_offset(&self, t_local: usize) -> usize {
        self.t_set[..t_local]
            .iter()
            .map(|&t| self.grid.steps() - t)
            .sum::<usize>()
            * self.m
    }

    /// Z(t, r_j) from the upper block; `j` is the step index (≥ t-knot).
    pub fn z_up(&self, path: usize, t_local: usize, j: usize, c: usize) -> f64 {
        let z = self.z_upper.as_ref().expect("upper block present");
        let base = path * self.upper_path_stride() + self.upper_offset(t_local);
        z[base + (j - self.t_set[t_local]) * self.m + c]
    }

    fn lower_path_stride(&self) -> usize {
        self.t_set.iter().sum::<usize>() * self.m
    }

    fn lower_offset(&self, t_local: usize) -> usize {
        self.t_set[..t_local].iter().sum::<usize>() * self.m
    }

    /// Z(t, r_j) from the lower block; `j < t`.
    pub fn z_lo(&self, path: usize, t_local: usize, j: usize, c: usize) -> Result<f64> {
        let z = self.z_lower.as_ref().ok_or(Error::MissingLowerTriangle)?;
        let base = path * self.lower_path_stride() + self.lower_offset(t_local);
        Ok(z[base + j * self.m + c])
    }

    pub fn y_at(&self, path: usize, knot: usize, c: usize) -> f64 {
        self.y[(path * self.grid.len() + knot) * self.m + c]
    }
}

fn map_ens_to_field(field_time: &TimeGrid, ens: &PathEnsemble) -> Result<Vec<usize>> {
    ens.grid
        .knots()
        .iter()
        .map(|&t| {
            field_time.index_of(t).ok_or_else(|| {
                Error::GridMismatch(format!("ensemble knot {t} not on the solver grid"))
            })
        })
        .collect()
}

fn exclusion_flags(ens: &PathEnsemble, lo: f64, hi: f64) -> Vec<bool> {
    (0..ens.n_paths)
        .map(|p| {
            (0..ens.grid.len()).any(|j| {
                let x = ens.state1(p, j);
                x < lo || x > hi
            })
        })
        .collect()
}

/// Evaluates a without-transpose field along paths. Z rows appear for every
/// stored t-knot of the field that is also an ensemble knot.
pub fn evaluate_type1(
    theta: &ThetaField,
    model: &SdeModel,
    ens: &PathEnsemble,
) -> Result<SolutionPair> {
    let (_, sigma) = model.scalar_parts()?;
    let m = theta.m;
    let f_idx = map_ens_to_field(&theta.grid.time, ens)?;
    let nk = ens.grid.len();
    let steps = ens.grid.steps();
    let excluded = exclusion_flags(ens, theta.grid.space.lo, theta.grid.space.hi());

    // Y at every knot from the diagonal
    let mut y = vec![0.0; ens.n_paths * nk * m];
    for p in 0..ens.n_paths {
        for j in 0..nk {
            let x = ens.state1(p, j);
            for c in 0..m {
                y[(p * nk + j) * m + c] = theta.diag_value(f_idx[j], x, c);
            }
        }
    }

    // t-set: stored field knots that are ensemble knots
    let stored = theta.stored_t();
    let mut t_set = Vec::new();
    for (ens_j, &fj) in f_idx.iter().enumerate() {
        if ens_j < steps && stored.contains(&fj) {
            t_set.push(ens_j);
        }
    }
    let pair_stub = SolutionPair {
        grid: ens.grid.clone(),
        m,
        n_paths: ens.n_paths,
        y,
        t_set: t_set.clone(),
        z_upper: None,
        z_lower: None,
        excluded,
        provenance: format!("type1 field ({:?})", theta.backend),
    };
    let stride = pair_stub.upper_path_stride();
    let mut z_upper = vec![0.0; ens.n_paths * stride];
    for p in 0..ens.n_paths {
        if pair_stub.excluded[p] {
            continue;
        }
        let mut base = p * stride;
        for &ti in &t_set {
            let xi = ens.state1(p, ti);
            for j in ti..steps {
                let xs = ens.state1(p, j);
                let sg = sigma.at(ens.grid.knots()[j], xs);
                for c in 0..m {
                    z_upper[base + c] = theta.dx(f_idx[ti], f_idx[j], xi, xs, c)? * sg;
                }
                base += m;
            }
        }
    }
    Ok(SolutionPair {
        z_upper: Some(z_upper),
        ..pair_stub
    })
}

/// Evaluates a with-transpose pair: upper block as the without-transpose
/// case, lower block from the sub-diagonal extension field.
pub fn evaluate_type2(
    sol: &MildSolution,
    model: &SdeModel,
    ens: &PathEnsemble,
) -> Result<SolutionPair> {
    let (_, sigma) = model.scalar_parts()?;
    let mut pair = evaluate_type1(&sol.theta, model, ens)?;
    let m = pair.m;
    let f_idx = map_ens_to_field(&sol.gamma.grid.time, ens)?;
    let stride = pair.lower_path_stride();
    let mut z_lower = vec![0.0; ens.n_paths * stride];
    for p in 0..ens.n_paths {
        if pair.excluded[p] {
            continue;
        }
        let mut base = p * stride;
        for &ti in &pair.t_set {
            for j in 0..ti {
                let xs = ens.state1(p, j);
                let sg = sigma.at(ens.grid.knots()[j], xs);
                for c in 0..m {
                    z_lower[base + c] = sol.gamma.dx(f_idx[ti], f_idx[j], xs, c) * sg;
                }
                base += m;
            }
        }
    }
    pair.z_lower = Some(z_lower);
    pair.provenance = "type2 mild solution".into();
    Ok(pair)
}

/// Pair for the continuous-function probe: Y(t) = Λ(t, X(t)) with the lower
/// Z block from the backward extension of Λ. Upper block absent.
pub fn evaluate_lambda_probe(
    lambda: &dyn Fn(f64, f64) -> f64,
    gamma: &GammaField,
    model: &SdeModel,
    ens: &PathEnsemble,
) -> Result<SolutionPair> {
    let (_, sigma) = model.scalar_parts()?;
    let m = gamma.m;
    if m != 1 {
        return Err(Error::InvalidInput("probe expects m = 1".into()));
    }
    let f_idx = map_ens_to_field(&gamma.grid.time, ens)?;
    let nk = ens.grid.len();
    let excluded = exclusion_flags(ens, gamma.grid.space.lo, gamma.grid.space.hi());
    let mut y = vec![0.0; ens.n_paths * nk];
    for p in 0..ens.n_paths {
        for j in 0..nk {
            y[p * nk + j] = lambda(ens.grid.knots()[j], ens.state1(p, j));
        }
    }
    let t_set: Vec<usize> = (1..nk).collect();
    let stub = SolutionPair {
        grid: ens.grid.clone(),
        m,
        n_paths: ens.n_paths,
        y,
        t_set: t_set.clone(),
        z_upper: None,
        z_lower: None,
        excluded,
        provenance: "lambda probe".into(),
    };
    let stride = stub.lower_path_stride();
    let mut z_lower = vec![0.0; ens.n_paths * stride];
    for p in 0..ens.n_paths {
        if stub.excluded[p] {
            continue;
        }
        let mut base = p * stride;
        for &ti in &t_set {
            for j in 0..ti {
                let xs = ens.state1(p, j);
                let sg = sigma.at(ens.grid.knots()[j], xs);
                z_lower[base] = gamma.dx(f_idx[ti], f_idx[j], xs, 0) * sg;
                base += 1;
            }
        }
    }
    Ok(SolutionPair {
        z_lower: Some(z_lower),
        ..stub
    })
}

// ---------------------------------------------------------------------------
// Residual statistics
// ---------------------------------------------------------------------------

/// Per-knot and aggregate residual magnitudes. `rms_total` averages squared
/// residuals over paths and knots; `rms_centered` removes the per-knot
/// ensemble mean first (the mean is the plug-in bias reported separately).
#[derive(Debug, Clone)]
pub struct ResidualStats {
    pub t_set: Vec<usize>,
    pub rms_total: f64,
    pub rms_centered: f64,
    pub rms_bias: f64,
    pub per_knot_rms: Vec<f64>,
    pub per_knot_bias: Vec<f64>,
    pub included_paths: usize,
    pub excluded_paths: usize,
}

fn stats_from_residuals(
    t_set: &[usize],
    residuals: &[f64], // [path][t_local]
    included: &[usize],
    n_t: usize,
) -> ResidualStats {
    let n_inc = included.len();
    let mut per_knot_rms = vec![0.0; n_t];
    let mut per_knot_bias = vec![0.0; n_t];
    let mut total = 0.0;
    let mut centered = 0.0;
    for tl in 0..n_t {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for (row, _) in included.iter().enumerate() {
            let r = residuals[row * n_t + tl];
            sum += r;
            sumsq += r * r;
        }
        let mean = sum / n_inc as f64;
        let msq = sumsq / n_inc as f64;
        per_knot_rms[tl] = msq.sqrt();
        per_knot_bias[tl] = mean.abs();
        total += msq;
        centered += (msq - mean * mean).max(0.0);
    }
    ResidualStats {
        t_set: t_set.to_vec(),
        rms_total: (total / n_t as f64).sqrt(),
        rms_centered: (centered / n_t as f64).sqrt(),
        rms_bias: (per_knot_bias.iter().map(|b| b * b).sum::<f64>() / n_t as f64).sqrt(),
        per_knot_rms,
        per_knot_bias,
        included_paths: n_inc,
        excluded_paths: 0,
    }
}

/// Integral-equation residual for a without-transpose problem.
pub fn bsvie_residual_type1(
    p: &TypeIProblem,
    pair: &SolutionPair,
    ens: &PathEnsemble,
) -> Result<ResidualStats> {
    bsvie_residual_impl(
        &|pt, out| p.g.at(pt, out),
        p.psi.as_ref(),
        p.m,
        None,
        pair,
        ens,
    )
}

/// Integral-equation residual for a with-transpose problem; the transposed
/// argument `Z(r_j, t)` comes from the extension field.
pub fn bsvie_residual_type2(
    p: &TypeIIProblem,
    gamma: &GammaField,
    pair: &SolutionPair,
    ens: &PathEnsemble,
) -> Result<ResidualStats> {
    let (_, sigma) = p.model.scalar_parts()?;
    let f_idx = map_ens_to_field(&gamma.grid.time, ens)?;
    Ok(bsvie_residual_impl(
        &|pt, out| p.g.at(pt, out),
        p.psi.as_ref(),
        p.m,
        Some(&|path: usize, t_idx: usize, j: usize, t: f64, xt: f64, out: &mut [f64]| {
            // Z(r_j, t) = Γ_x(r_j, t, X(t)) σ(t, X(t)),   r_j ≥ t
            let _ = path;
            let sg = sigma.at(t, xt);
            for (c, o) in out.iter_mut().enumerate() {
                *o = gamma.dx(f_idx[j], f_idx[t_idx], xt, c) * sg;
            }
        }),
        pair,
        ens,
    )?)
}

type ZetaFn<'a> = &'a dyn Fn(usize, usize, usize, f64, f64, &mut [f64]);

fn bsvie_residual_impl(
    g: &dyn Fn(&GenPoint, &mut [f64]),
    psi: &dyn crate::coeff::FreeTerm,
    m: usize,
    zeta: Option<ZetaFn<'_>>,
    pair: &SolutionPair,
    ens: &PathEnsemble,
) -> Result<ResidualStats> {
    if pair.z_upper.is_none() {
        return Err(Error::GridMismatch("pair has no upper Z block".into()));
    }
    let knots = ens.grid.knots();
    let steps = ens.grid.steps();
    let nk = ens.grid.len();
    let n_t = pair.t_set.len();
    let included: Vec<usize> = (0..ens.n_paths).filter(|&p| !pair.excluded[p]).collect();
    let mut residuals = vec![0.0; included.len() * n_t];
    let mut gval = vec![0.0; m];
    let mut zrow = vec![0.0; m];
    let mut zeta_row = vec![0.0; m];
    let mut psival = vec![0.0; m];
    for (row, &p) in included.iter().enumerate() {
        let x_t_end = ens.state1(p, nk - 1);
        for (tl, &ti) in pair.t_set.iter().enumerate() {
            let t = knots[ti];
            let xt = ens.state1(p, ti);
            psi.at(t, xt, x_t_end, &mut psival);
            let mut acc = vec![0.0; m];
            for c in 0..m {
                acc[c] = pair.y_at(p, ti, c) - psival[c];
            }
            for j in ti..steps {
                let dt = knots[j + 1] - knots[j];
                let xs = ens.state1(p, j);
                for c in 0..m {
                    zrow[c] = pair.z_up(p, tl, j, c);
                }
                if let Some(zf) = zeta {
                    zf(p, ti, j, t, xt, &mut zeta_row);
                }
                let yrow: Vec<f64> = (0..m).map(|c| pair.y_at(p, j, c)).collect();
                let pt = GenPoint {
                    t,
                    s: knots[j],
                    xi: xt,
                    x: xs,
                    y: &yrow,
                    z: &zrow,
                    zeta: if zeta.is_some() { &zeta_row } else { &[] },
                };
                g(&pt, &mut gval);
                let dw = ens.increment1(p, j);
                for c in 0..m {
                    // R = Y - ψ - Σ g Δt + Σ Z ΔW
                    acc[c] += -gval[c] * dt + zrow[c] * dw;
                }
            }
            // componentwise euclidean residual
            residuals[row * n_t + tl] = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        }
    }
    let mut stats = stats_from_residuals(&pair.t_set, &residuals, &included, n_t);
    stats.excluded_paths = ens.n_paths - included.len();
    Ok(stats)
}

/// Martingale-constraint residual
/// `M(t) = Y(t) - Ê[Y(t)] - Σ_{r_j < t} Z(t, r_j) ΔW_j`; needs the lower
/// Z block.
pub fn msolution_residual(pair: &SolutionPair, ens: &PathEnsemble) -> Result<ResidualStats> {
    if pair.z_lower.is_none() {
        return Err(Error::MissingLowerTriangle);
    }
    let m = pair.m;
    let nk = ens.grid.len();
    let n_t = pair.t_set.len();
    let included: Vec<usize> = (0..ens.n_paths).filter(|&p| !pair.excluded[p]).collect();
    // plug-in ensemble means per knot
    let mut means = vec![0.0; nk * m];
    for &p in &included {
        for j in 0..nk {
            for c in 0..m {
                means[j * m + c] += pair.y_at(p, j, c);
            }
        }
    }
    for v in means.iter_mut() {
        *v /= included.len() as f64;
    }
    let mut residuals = vec![0.0; included.len() * n_t];
    for (row, &p) in included.iter().enumerate() {
        for (tl, &ti) in pair.t_set.iter().enumerate() {
            let mut acc = vec![0.0; m];
            for c in 0..m {
                acc[c] = pair.y_at(p, ti, c) - means[ti * m + c];
            }
            for j in 0..ti {
                let dw = ens.increment1(p, j);
                for c in 0..m {
                    acc[c] -= pair.z_lo(p, tl, j, c)? * dw;
                }
            }
            residuals[row * n_t + tl] = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        }
    }
    let mut stats = stats_from_residuals(&pair.t_set, &residuals, &included, n_t);
    stats.excluded_paths = ens.n_paths - included.len();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TriangleGrid;
    use crate::model::catalog_entry;
    use crate::pde_type1::solve_type1_fd;
    use crate::pde_type2::{solve_type2, Type2Options};
    use crate::sde::simulate;

    fn setup(ns: usize, nx: usize, n_paths: usize, seed: u64) -> (TriangleGrid, PathEnsemble) {
        let grid = TriangleGrid::uniform(1.0, ns, 8.0, nx).unwrap();
        let model = crate::model::SdeModel::brownian();
        let ens = simulate(&model, &[0.0], &grid.time, n_paths, seed).unwrap();
        (grid, ens)
    }

    #[test]
    fn martingale_field_reproduces_paths() {
        // ψ = x, g = 0: Y(s) = X(s), Z ≡ 1
        let e = catalog_entry("heat-terminal-x").unwrap();
        let p = e.problem.type1().unwrap();
        let (grid, ens) = setup(20, 161, 64, 9);
        let f = solve_type1_fd(p, &grid).unwrap();
        let pair = evaluate_type1(&f, &p.model, &ens).unwrap();
        pair.check_exclusions().unwrap();
        for path in 0..ens.n_paths {
            if pair.excluded[path] {
                continue;
            }
            for j in 0..ens.grid.len() {
                assert!((pair.y_at(path, j, 0) - ens.state1(path, j)).abs() < 1e-9);
            }
            for (tl, &ti) in pair.t_set.iter().enumerate() {
                for j in ti..ens.grid.steps() {
                    assert!((pair.z_up(path, tl, j, 0) - 1.0).abs() < 1e-8);
                }
            }
        }
        // R(t) telescopes to zero for this exactly-representable pair
        let st = bsvie_residual_type1(p, &pair, &ens).unwrap();
        assert!(st.rms_total < 1e-8, "rms {}", st.rms_total);
    }

    #[test]
    fn x_independent_field_gives_flat_y_and_zero_z() {
        let e = catalog_entry("diagonal-exponential").unwrap();
        let p = e.problem.type1().unwrap();
        let (grid, ens) = setup(40, 41, 16, 3);
        let f = solve_type1_fd(p, &grid).unwrap();
        let pair = evaluate_type1(&f, &p.model, &ens).unwrap();
        for path in 0..ens.n_paths {
            for j in 0..ens.grid.len() {
                let s = ens.grid.knots()[j];
                let want = (1.0 - s).exp();
                assert!((pair.y_at(path, j, 0) - want).abs() < 1e-3);
            }
            for (tl, &ti) in pair.t_set.iter().enumerate() {
                for j in ti..ens.grid.steps() {
                    assert!(pair.z_up(path, tl, j, 0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_noise_residual_identically_zero() {
        // σ = 0 paths: X ≡ x0, g = 0, ψ = x: R(t) = x0 - x0 = 0 exactly
        let e = catalog_entry("heat-terminal-x").unwrap();
        let mut p = e.problem.type1().unwrap().clone();
        p.model = crate::model::SdeModel::scalar(
            std::sync::Arc::new(crate::coeff::Const(0.0)),
            std::sync::Arc::new(crate::coeff::Const(0.0)),
            0.0,
            0.0,
            0.0,
        );
        let grid = TriangleGrid::uniform(1.0, 10, 4.0, 21).unwrap();
        let ens = simulate(&p.model, &[0.7], &grid.time, 4, 5).unwrap();
        let f = solve_type1_fd(&p, &grid).unwrap();
        let pair = evaluate_type1(&f, &p.model, &ens).unwrap();
        let st = bsvie_residual_type1(&p, &pair, &ens).unwrap();
        assert!(st.rms_total < 1e-14, "rms {}", st.rms_total);
        // σ = 0 forces Z ≡ 0 regardless of the field
        for (tl, &ti) in pair.t_set.iter().enumerate() {
            for j in ti..ens.grid.steps() {
                assert_eq!(pair.z_up(0, tl, j, 0), 0.0);
            }
        }
    }

    #[test]
    fn corrupted_y_is_detected() {
        let e = catalog_entry("heat-terminal-x").unwrap();
        let p = e.problem.type1().unwrap();
        let (grid, ens) = setup(20, 161, 128, 11);
        let f = solve_type1_fd(p, &grid).unwrap();
        let mut pair = evaluate_type1(&f, &p.model, &ens).unwrap();
        let eps = 0.05;
        for v in pair.y.iter_mut() {
            *v += eps;
        }
        // Y enters R directly and through the terminal: R = eps exactly here
        let st = bsvie_residual_type1(p, &pair, &ens).unwrap();
        assert!(
            st.rms_total > eps * 0.9,
            "detector missed the fault: {}",
            st.rms_total
        );
    }

    #[test]
    fn unit_zeta_pair_and_residuals() {
        let e = catalog_entry("type2-unit-zeta").unwrap();
        let p = e.problem.type2().unwrap();
        let (grid, ens) = setup(25, 161, 256, 17);
        let sol = solve_type2(p, &grid, &Type2Options::default()).unwrap();
        let pair = evaluate_type2(&sol, &p.model, &ens).unwrap();
        // Y(t) = X(t) + (1 - t), both Z blocks ≡ 1
        for path in (0..ens.n_paths).step_by(37) {
            if pair.excluded[path] {
                continue;
            }
            for j in 0..ens.grid.len() {
                let want = ens.state1(path, j) + (1.0 - ens.grid.knots()[j]);
                assert!((pair.y_at(path, j, 0) - want).abs() < 1e-3);
            }
            for (tl, &ti) in pair.t_set.iter().enumerate() {
                for j in ti..ens.grid.steps() {
                    assert!((pair.z_up(path, tl, j, 0) - 1.0).abs() < 1e-6);
                }
                for j in 0..ti {
                    assert!((pair.z_lo(path, tl, j, 0).unwrap() - 1.0).abs() < 1e-6);
                }
            }
        }
        let st = bsvie_residual_type2(p, &sol.gamma, &pair, &ens).unwrap();
        assert!(st.rms_total < 1e-5, "bsvie rms {}", st.rms_total);
        // the martingale constraint telescopes exactly; what is left is the
        // plug-in mean, which the centered statistic removes
        let ms = msolution_residual(&pair, &ens).unwrap();
        assert!(ms.rms_centered < 1e-7, "centered {}", ms.rms_centered);
        assert!(ms.rms_bias < 0.1);
    }

    #[test]
    fn decoupled_type2_upper_matches_type1_bitwise() {
        let e = catalog_entry("sine-terminal").unwrap();
        let t1 = e.problem.type1().unwrap();
        let p2 = crate::model::TypeIIProblem {
            model: t1.model.clone(),
            m: 1,
            psi: t1.psi.clone(),
            g: t1.g.clone(),
            lipschitz: t1.lipschitz,
            horizon: t1.horizon,
        };
        let (grid, ens) = setup(16, 81, 32, 23);
        let sol = solve_type2(&p2, &grid, &Type2Options::default()).unwrap();
        let pair2 = evaluate_type2(&sol, &p2.model, &ens).unwrap();
        let f1 = solve_type1_fd(t1, &grid).unwrap();
        let pair1 = evaluate_type1(&f1, &t1.model, &ens).unwrap();
        assert_eq!(pair1.y, pair2.y);
        assert_eq!(pair1.z_upper, pair2.z_upper);
    }

    #[test]
    fn lambda_square_probe() {
        // Λ = x², b = 0, σ = 1: Γ_x = 2x, so Z_lower(t,s) = 2 X(s)
        let (grid, ens) = setup(25, 161, 512, 29);
        let u = crate::grid::GridFn2::from_fn(grid.time.clone(), grid.space.clone(), |_t, x| x * x);
        let model = crate::model::SdeModel::brownian();
        let (b, s) = model.scalar_parts().unwrap();
        let gamma = crate::pde_type2::gamma_from_diagonal(
            &u,
            b.as_ref(),
            s.as_ref(),
            &grid,
            crate::pde_type2::GammaBackend::FiniteDifference,
        )
        .unwrap();
        let pair = evaluate_lambda_probe(&|_t, x| x * x, &gamma, &model, &ens).unwrap();
        for path in (0..ens.n_paths).step_by(61) {
            if pair.excluded[path] {
                continue;
            }
            for (tl, &ti) in pair.t_set.iter().enumerate() {
                for j in 0..ti {
                    let want = 2.0 * ens.state1(path, j);
                    let got = pair.z_lo(path, tl, j, 0).unwrap();
                    assert!((got - want).abs() < 1e-3, "Z_lower {got} want {want}");
                }
            }
        }
        // M(t) = X² - Ê X² - Σ 2X ΔW: the Itô-sum error scales like √Δt
        let st = msolution_residual(&pair, &ens).unwrap();
        assert!(st.rms_centered > 1e-4, "probe should see Itô error");
        assert!(st.rms_centered < 0.5);
    }

    #[test]
    fn deterministic_paths_zero_m_residual() {
        let model = crate::model::SdeModel::scalar(
            std::sync::Arc::new(crate::coeff::Const(0.0)),
            std::sync::Arc::new(crate::coeff::Const(0.0)),
            0.0,
            0.0,
            0.0,
        );
        let grid = TriangleGrid::uniform(1.0, 10, 4.0, 21).unwrap();
        let ens = simulate(&model, &[0.5], &grid.time, 8, 3).unwrap();
        let u = crate::grid::GridFn2::from_fn(grid.time.clone(), grid.space.clone(), |_t, x| x * x);
        let (b, s) = model.scalar_parts().unwrap();
        let gamma = crate::pde_type2::gamma_from_diagonal(
            &u,
            b.as_ref(),
            s.as_ref(),
            &grid,
            crate::pde_type2::GammaBackend::FiniteDifference,
        )
        .unwrap();
        let pair = evaluate_lambda_probe(&|_t, x| x * x, &gamma, &model, &ens).unwrap();
        let st = msolution_residual(&pair, &ens).unwrap();
        assert_eq!(st.rms_total, 0.0);
    }
}
