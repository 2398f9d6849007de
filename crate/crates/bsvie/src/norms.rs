//! Discrete parabolic Hölder seminorms
//!
//! ```text
//! ⟨φ⟩_s^{α/2} = sup_{s≠s'} |φ(s,x)-φ(s',x)| / |s-s'|^{α/2}
//! ⟨φ⟩_x^{α}  = sup_{0<|x-x'|≤1} |φ(s,x)-φ(s,x')| / |x-x'|^{α}
//! |φ|^{α}    = |φ|^{0} + ⟨φ⟩_s^{α/2} + ⟨φ⟩_x^{α}
//! |φ|^{1+α}  = |φ|^{1} + ⟨φ_x⟩^{α} + ⟨φ⟩_s^{(1+α)/2}
//! |φ|^{2+α}  = |φ|^{2} + ⟨φ_s⟩^{α} + ⟨φ_xx⟩^{α} + ⟨φ_x⟩_s^{(1+α)/2}
//! ```
//!
//! computed as maxima of difference quotients over grid pairs (the space
//! pairs restricted to |x-x'| ≤ 1 as in the continuum definition), plus the
//! window-scaling probe for the short-time estimates of the linear theory.
//!
//! Grid quotients underestimate continuum seminorms and are spacing-
//! sensitive for merely-Lipschitz data, so every report carries the minimum
//! pair distance it used.

use crate::coeff::{Const, ScalarCoeff};
use crate::error::{Error, Result};
use crate::grid::{GridFn2, SpaceGrid, TimeGrid};
use crate::math::loglog_slope;
use crate::pde_type1::ThetaField;
use crate::stepper::{d_x, solve_linear_parabolic};

/// Discrete Hölder data of a scalar grid function on `[S,T] × x-grid`.
#[derive(Debug, Clone)]
pub struct HolderReport {
    pub alpha: f64,
    pub window: (f64, f64),
    /// |φ|^{0}
    pub sup: f64,
    /// |φ_x|^{0}
    pub sup_dx: f64,
    /// |φ_s|^{0}
    pub sup_ds: f64,
    /// |φ_xx|^{0}
    pub sup_dxx: f64,
    /// ⟨φ⟩_s^{α/2}
    pub time_seminorm: f64,
    /// ⟨φ⟩_x^{α}
    pub space_seminorm: f64,
    /// ⟨φ_x⟩^{α}
    pub grad_seminorm: f64,
    /// ⟨φ⟩_s^{(1+α)/2}
    pub time_seminorm_1: f64,
    /// ⟨φ_s⟩^{α}
    pub ds_seminorm: f64,
    /// ⟨φ_xx⟩^{α}
    pub dxx_seminorm: f64,
    /// ⟨φ_x⟩_s^{(1+α)/2}
    pub grad_time_seminorm_1: f64,
    /// Smallest pair distance entering the space quotients.
    pub min_pair_distance: f64,
}

impl HolderReport {
    /// |φ|^{α} = |φ|^{0} + ⟨φ⟩^{α}
    pub fn norm_alpha(&self) -> f64 {
        self.sup + self.time_seminorm + self.space_seminorm
    }
    /// |φ|^{1} = |φ|^{0} + |φ_x|^{0}
    pub fn norm_1(&self) -> f64 {
        self.sup + self.sup_dx
    }
    /// |φ|^{1+α} = |φ|^{1} + ⟨φ_x⟩^{α} + ⟨φ⟩_s^{(1+α)/2}
    pub fn norm_1_alpha(&self) -> f64 {
        self.norm_1() + self.grad_seminorm + self.time_seminorm_1
    }
    /// |φ|^{2} = |φ|^{1} + |φ_s|^{0} + |φ_xx|^{0}
    pub fn norm_2(&self) -> f64 {
        self.norm_1() + self.sup_ds + self.sup_dxx
    }
    /// |φ|^{2+α} = |φ|^{2} + ⟨φ_s⟩^{α} + ⟨φ_xx⟩^{α} + ⟨φ_x⟩_s^{(1+α)/2}
    pub fn norm_2_alpha(&self) -> f64 {
        self.norm_2() + self.ds_seminorm + self.dxx_seminorm + self.grad_time_seminorm_1
    }
}

/// sup over time rows of the space-pair quotient with exponent `a`, pairs
/// restricted to |x-x'| ≤ 1.
fn space_quotient(rows: &[&[f64]], space: &SpaceGrid, a: f64) -> f64 {
    let n = space.n;
    let max_span = ((1.0 / space.h).floor() as usize).max(1);
    // quotient denominators shared per offset
    let denoms: Vec<f64> = (1..=max_span.min(n - 1))
        .map(|d| (d as f64 * space.h).powf(a))
        .collect();
    let mut q: f64 = 0.0;
    for row in rows {
        for (di, denom) in denoms.iter().enumerate() {
            let d = di + 1;
            if d as f64 * space.h > 1.0 + 1e-12 {
                break;
            }
            for l in 0..n - d {
                q = q.max((row[l] - row[l + d]).abs() / denom);
            }
        }
    }
    q
}

/// sup over x of the time-pair quotient with exponent `b`.
fn time_quotient(rows: &[&[f64]], times: &[f64], b: f64) -> f64 {
    let nk = rows.len();
    let mut q: f64 = 0.0;
    for i in 0..nk {
        for j in i + 1..nk {
            let denom = (times[j] - times[i]).abs().powf(b);
            if denom == 0.0 {
                continue;
            }
            let inv = 1.0 / denom;
            for (u, v) in rows[i].iter().zip(rows[j]) {
                q = q.max((u - v).abs() * inv);
            }
        }
    }
    q
}

fn sup_abs(rows: &[&[f64]]) -> f64 {
    rows.iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// Full discrete Hölder report of component `comp` of `phi` on the window
/// `[s_lo, s_hi]`.
pub fn holder_report(
    phi: &GridFn2,
    comp: usize,
    alpha: f64,
    s_lo: f64,
    s_hi: f64,
) -> Result<HolderReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadExponent(alpha));
    }
    let knots = phi.time.knots();
    let in_window: Vec<usize> = (0..knots.len())
        .filter(|&j| knots[j] >= s_lo - 1e-12 && knots[j] <= s_hi + 1e-12)
        .collect();
    if in_window.len() < 2 {
        return Err(Error::WindowOutsideGrid { lo: s_lo, hi: s_hi });
    }
    let n = phi.space.n;
    let m = phi.m;
    // scalar rows of the component, plus central-difference derivative rows
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(in_window.len());
    for &j in &in_window {
        let row = phi.row(j);
        vals.push((0..n).map(|l| row[l * m + comp]).collect());
    }
    let times: Vec<f64> = in_window.iter().map(|&j| knots[j]).collect();
    let mut dx_rows: Vec<Vec<f64>> = Vec::with_capacity(vals.len());
    let mut dxx_rows: Vec<Vec<f64>> = Vec::with_capacity(vals.len());
    for v in &vals {
        let mut d1 = vec![0.0; n];
        d_x(v, 1, phi.space.h, &mut d1);
        let mut d2 = vec![0.0; n];
        let h2 = phi.space.h * phi.space.h;
        for l in 1..n - 1 {
            d2[l] = (v[l + 1] - 2.0 * v[l] + v[l - 1]) / h2;
        }
        d2[0] = 0.0; // extrapolation ghost: zero curvature at the ends
        d2[n - 1] = 0.0;
        dx_rows.push(d1);
        dxx_rows.push(d2);
    }
    // time derivative by central differences (one-sided at window ends)
    let nk = vals.len();
    let mut ds_rows: Vec<Vec<f64>> = vec![vec![0.0; n]; nk];
    for j in 0..nk {
        let (ja, jb) = if j == 0 {
            (0, 1)
        } else if j == nk - 1 {
            (nk - 2, nk - 1)
        } else {
            (j - 1, j + 1)
        };
        let dt = times[jb] - times[ja];
        for l in 0..n {
            ds_rows[j][l] = (vals[jb][l] - vals[ja][l]) / dt;
        }
    }

    fn r(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }
    let vr = r(&vals);
    let dxr = r(&dx_rows);
    let dxxr = r(&dxx_rows);
    let dsr = r(&ds_rows);

    Ok(HolderReport {
        alpha,
        window: (times[0], *times.last().unwrap()),
        sup: sup_abs(&vr),
        sup_dx: sup_abs(&dxr),
        sup_ds: sup_abs(&dsr),
        sup_dxx: sup_abs(&dxxr),
        time_seminorm: time_quotient(&vr, &times, alpha / 2.0),
        space_seminorm: space_quotient(&vr, &phi.space, alpha),
        grad_seminorm: time_quotient(&dxr, &times, alpha / 2.0)
            + space_quotient(&dxr, &phi.space, alpha),
        time_seminorm_1: time_quotient(&vr, &times, (1.0 + alpha) / 2.0),
        ds_seminorm: time_quotient(&dsr, &times, alpha / 2.0)
            + space_quotient(&dsr, &phi.space, alpha),
        dxx_seminorm: time_quotient(&dxxr, &times, alpha / 2.0)
            + space_quotient(&dxxr, &phi.space, alpha),
        grad_time_seminorm_1: time_quotient(&dxr, &times, (1.0 + alpha) / 2.0),
        min_pair_distance: phi.space.h,
    })
}

/// |φ|^{1+α} of a scalar [s][x] tensor (helper shared with the fixed-point
/// machinery, which measures its window iterates in this norm).
pub fn norm_1alpha_rows(values: &[f64], times: &[f64], space: &SpaceGrid, alpha: f64) -> f64 {
    let n = space.n;
    let nk = times.len();
    debug_assert_eq!(values.len(), n * nk);
    let rows: Vec<&[f64]> = (0..nk).map(|j| &values[j * n..(j + 1) * n]).collect();
    let mut dx_rows: Vec<Vec<f64>> = Vec::with_capacity(nk);
    for r in &rows {
        let mut d1 = vec![0.0; n];
        d_x(r, 1, space.h, &mut d1);
        dx_rows.push(d1);
    }
    let dxr: Vec<&[f64]> = dx_rows.iter().map(|x| x.as_slice()).collect();
    sup_abs(&rows)
        + sup_abs(&dxr)
        + time_quotient(&dxr, times, alpha / 2.0)
        + space_quotient(&dxr, space, alpha)
        + time_quotient(&rows, times, (1.0 + alpha) / 2.0)
}

// ---------------------------------------------------------------------------
// The field norm of the fixed-point space
// ---------------------------------------------------------------------------

/// Value and component breakdown of the window norm
/// `‖θ‖ = sup_{t,ξ} ( |θ(t,·,ξ,·)|^{1+α} + |θ_t|⁰ + |θ_ξ|⁰ + |θ_xt|⁰ + |θ_xξ|⁰ )`
/// over `s ∈ [t ∨ S, T]`.
#[derive(Debug, Clone)]
pub struct XNormValue {
    pub value: f64,
    pub sup_1alpha: f64,
    pub sup_t: f64,
    pub sup_xi: f64,
    pub sup_xt: f64,
    pub sup_xxi: f64,
}

/// Discrete ‖θ‖ over the stored blocks of a field (needs at least two stored
/// t-knots for the t-derivatives).
pub fn xnorm(field: &ThetaField, s_lo: f64) -> Result<XNormValue> {
    let grid = &field.grid;
    let knots = grid.time.knots();
    if s_lo < knots[0] - 1e-12 || s_lo > *knots.last().unwrap() {
        return Err(Error::WindowOutsideGrid {
            lo: s_lo,
            hi: *knots.last().unwrap(),
        });
    }
    let nx = grid.space.n;
    let m = field.m;
    let alpha = grid.alpha;
    let stored = field.stored_t();
    if stored.len() < 2 {
        return Err(Error::GridMismatch(
            "field norm needs at least two stored t-knots".into(),
        ));
    }

    let mut sup_1alpha = 0.0f64;
    let mut sup_t = 0.0f64;
    let mut sup_xi = 0.0f64;
    let mut sup_xt = 0.0f64;
    let mut sup_xxi = 0.0f64;

    let mut slice_vals = Vec::new();
    let mut slice_times = Vec::new();
    for (bi, blk) in field.blocks.iter().enumerate() {
        let t_idx = blk.t_idx;
        for k in 0..nx {
            for c in 0..m {
                // rows with s >= max(t, s_lo)
                slice_vals.clear();
                slice_times.clear();
                for (sl, &s_idx) in blk.s_indices.iter().enumerate() {
                    if knots[s_idx] < s_lo.max(knots[t_idx]) - 1e-12 {
                        continue;
                    }
                    slice_times.push(knots[s_idx]);
                    for l in 0..nx {
                        slice_vals.push(blk.values[((sl * nx + k) * nx + l) * m + c]);
                    }
                }
                if slice_times.len() < 2 {
                    continue;
                }
                sup_1alpha = sup_1alpha.max(norm_1alpha_rows(
                    &slice_vals,
                    &slice_times,
                    &grid.space,
                    alpha,
                ));
            }
        }
        // finite differences across t (neighbouring stored block) and ξ
        let neighbor = if bi + 1 < field.blocks.len() {
            Some(&field.blocks[bi + 1])
        } else {
            None
        };
        for (sl, &s_idx) in blk.s_indices.iter().enumerate() {
            if knots[s_idx] < s_lo - 1e-12 {
                continue;
            }
            for k in 0..nx {
                for l in 0..nx {
                    for c in 0..m {
                        let at = |kk: usize, ll: usize| {
                            blk.values[((sl * nx + kk) * nx + ll) * m + c]
                        };
                        if k + 1 < nx {
                            let dxi =
                                (at(k + 1, l) - at(k, l)).abs() / grid.space.h;
                            sup_xi = sup_xi.max(dxi);
                            if l + 1 < nx {
                                let dxxi = ((at(k + 1, l + 1) - at(k + 1, l))
                                    - (at(k, l + 1) - at(k, l)))
                                .abs()
                                    / (grid.space.h * grid.space.h);
                                sup_xxi = sup_xxi.max(dxxi);
                            }
                        }
                        if let Some(nb) = neighbor {
                            if knots[s_idx] >= knots[nb.t_idx] {
                                if let Some(sl2) = nb.s_local(s_idx) {
                                    let dt = knots[nb.t_idx] - knots[blk.t_idx];
                                    let at2 = |kk: usize, ll: usize| {
                                        nb.values[((sl2 * nx + kk) * nx + ll) * m + c]
                                    };
                                    let dth = (at2(k, l) - at(k, l)).abs() / dt;
                                    sup_t = sup_t.max(dth);
                                    if l + 1 < nx {
                                        let dxt = ((at2(k, l + 1) - at2(k, l))
                                            - (at(k, l + 1) - at(k, l)))
                                        .abs()
                                            / (grid.space.h * dt);
                                        sup_xt = sup_xt.max(dxt);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(XNormValue {
        value: sup_1alpha + sup_t + sup_xi + sup_xt + sup_xxi,
        sup_1alpha,
        sup_t,
        sup_xi,
        sup_xt,
        sup_xxi,
    })
}

// ---------------------------------------------------------------------------
// Window-scaling probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub window: f64,
    pub sup: f64,
    pub sup_dx: f64,
    pub norm_1_alpha: f64,
}

/// Measured short-time scaling of the solution map: for each window length w
/// solve `ṽ_s + a ṽ_xx + b ṽ_x + f = 0`, `ṽ(T) = 0`, on `[T-w, T]` and record
/// the norms; slopes are the log-log fits against w.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub slope_sup: f64,
    pub slope_dx: f64,
    pub slope_1_alpha: f64,
}

pub fn window_scaling_probe(
    b: f64,
    sigma: f64,
    f: &dyn ScalarCoeff,
    windows: &[f64],
    horizon: f64,
    steps_per_window: usize,
    space: &SpaceGrid,
    alpha: f64,
) -> Result<ScalingTable> {
    let mut rows = Vec::new();
    for &w in windows {
        if !(w > 0.0 && w <= horizon) {
            return Err(Error::WindowOutsideGrid {
                lo: horizon - w,
                hi: horizon,
            });
        }
        let time = TimeGrid::uniform(horizon - w, horizon, steps_per_window)?;
        let terminal = vec![0.0; space.n];
        let v = solve_linear_parabolic(&Const(b), &Const(sigma), f, &terminal, &time, space)?;
        let rep = holder_report(&v, 0, alpha, horizon - w, horizon)?;
        rows.push(ScalingRow {
            window: w,
            sup: rep.sup,
            sup_dx: rep.sup_dx,
            norm_1_alpha: rep.norm_1_alpha(),
        });
    }
    let ws: Vec<f64> = rows.iter().map(|r| r.window).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup).collect();
    let dx: Vec<f64> = rows.iter().map(|r| r.sup_dx).collect();
    let na: Vec<f64> = rows.iter().map(|r| r.norm_1_alpha).collect();
    Ok(ScalingTable {
        slope_sup: loglog_slope(&ws, &sup),
        slope_dx: loglog_slope(&ws, &dx),
        slope_1_alpha: loglog_slope(&ws, &na),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpaceGrid, TimeGrid};

    fn grid_fn(f: impl Fn(f64, f64) -> f64) -> GridFn2 {
        let time = TimeGrid::uniform(0.0, 1.0, 40).unwrap();
        let space = SpaceGrid::symmetric(2.0, 81).unwrap();
        GridFn2::from_fn(time, space, f)
    }

    #[test]
    fn constant_function_has_zero_seminorms() {
        let phi = grid_fn(|_s, _x| 3.5);
        let r = holder_report(&phi, 0, 0.5, 0.0, 1.0).unwrap();
        assert_eq!(r.sup, 3.5);
        assert_eq!(r.time_seminorm, 0.0);
        assert_eq!(r.space_seminorm, 0.0);
        assert_eq!(r.norm_alpha(), 3.5);
    }

    #[test]
    fn linear_function_space_quotient_grid_dependence() {
        // φ = x: the quotient d^{1-α} grows with the pair distance, so the
        // sup sits at the largest admissible distance (the |x-x'| ≤ 1 cap,
        // snapped to the grid); the report records the spacing it used since
        // Lipschitz data has grid-dependent quotients.
        let phi = grid_fn(|_s, x| x);
        let h = phi.space.h;
        let r = holder_report(&phi, 0, 0.5, 0.0, 1.0).unwrap();
        let reachable = (1.0f64 / h).floor() * h;
        assert!(
            (r.space_seminorm - reachable.powf(0.5)).abs() < 1e-12,
            "quotient {} vs cap value {}",
            r.space_seminorm,
            reachable.powf(0.5)
        );
        assert_eq!(r.min_pair_distance, h);
        // nearest-neighbour pairs alone would give h^{1-α}, strictly smaller
        assert!(h.powf(0.5) < r.space_seminorm);
    }

    #[test]
    fn sqrt_time_profile_has_finite_quarter_seminorm() {
        // φ = sqrt(s): ⟨φ⟩_s^{1/4} finite with α = 1/2, attained near s = 0
        let phi = grid_fn(|s, _x| s.sqrt());
        let r = holder_report(&phi, 0, 0.5, 0.0, 1.0).unwrap();
        // (√s - √s')/(s-s')^{1/4} ≤ (s-s')^{1/4} ≤ 1 with equality at the
        // pair (1, 0): the sup is exactly 1
        assert!((r.time_seminorm - 1.0).abs() < 1e-12, "{}", r.time_seminorm);
        assert!(r.time_seminorm.is_finite());
    }

    #[test]
    fn composite_identity() {
        let phi = grid_fn(|s, x| (x + 0.3 * s).sin());
        let r = holder_report(&phi, 0, 0.5, 0.0, 1.0).unwrap();
        let lhs = r.norm_1_alpha();
        let rhs = r.norm_1() + r.grad_seminorm + r.time_seminorm_1;
        assert_eq!(lhs, rhs);
        let lhs2 = r.norm_2_alpha();
        let rhs2 = r.norm_2() + r.ds_seminorm + r.dxx_seminorm + r.grad_time_seminorm_1;
        assert_eq!(lhs2, rhs2);
    }

    #[test]
    fn window_monotone() {
        let phi = grid_fn(|s, x| (x * s).cos() + s * s);
        let small = holder_report(&phi, 0, 0.5, 0.5, 1.0).unwrap();
        let large = holder_report(&phi, 0, 0.5, 0.0, 1.0).unwrap();
        assert!(large.norm_2_alpha() >= small.norm_2_alpha());
        assert!(large.sup >= small.sup);
    }

    #[test]
    fn bad_exponent_and_window() {
        let phi = grid_fn(|_s, _x| 0.0);
        assert!(matches!(
            holder_report(&phi, 0, 1.5, 0.0, 1.0),
            Err(Error::BadExponent(_))
        ));
        assert!(matches!(
            holder_report(&phi, 0, 0.5, 2.0, 3.0),
            Err(Error::WindowOutsideGrid { .. })
        ));
    }

    #[test]
    fn probe_constant_source_exact_slope_one() {
        // f ≡ 1, b = 0, a = 1/2: ṽ = T - s, |ṽ|⁰ = w, slope exactly 1
        let space = SpaceGrid::symmetric(6.0, 61).unwrap();
        let t = window_scaling_probe(0.0, 1.0, &Const(1.0), &[0.5, 0.25, 0.125], 1.0, 32, &space, 0.5)
            .unwrap();
        assert!((t.slope_sup - 1.0).abs() < 1e-9, "slope {}", t.slope_sup);
        for row in &t.rows {
            assert!((row.sup - row.window).abs() < 1e-10);
            // x-independent source: gradient stays 0 ≤ K w^{(1+α)/2}
            assert!(row.sup_dx.abs() < 1e-12);
        }
    }
}
