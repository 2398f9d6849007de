//! One backward step of the semi-implicit scheme for
//! `v_s + a(s,x) v_xx + b(s,x) v_x + g = 0`, shared by every field solver.
//!
//! Marching from `s_old` down to `s_new = s_old - dt`:
//!
//! * predictor (backward Euler, source lagged at `s_old`):
//!   `(I - dt L_new) v* = v_old + dt g_old`
//! * corrector (Crank–Nicolson with trapezoidal source):
//!   `(I - dt/2 L_new) v = v_old + dt/2 L_old v_old + dt/2 (g_old + g*)`
//!
//! where `g*` re-evaluates the source at `s_new` with predicted data. The
//! implicit matrices depend only on the level, so they are factored once and
//! reused by every slice. Spatial boundary: second-derivative-zero
//! (linear extrapolation) at both ends.

use std::sync::Arc;

use crate::coeff::{Generator, ScalarCoeff};
use crate::error::Result;
use crate::grid::{GridFn2, SpaceGrid, TimeGrid};
use crate::tridiag::FactoredBcTridiag;

/// Central x-derivative with the extrapolation ghost at the ends,
/// point-major with m components.
pub fn d_x(v: &[f64], m: usize, h: f64, out: &mut [f64]) {
    let n = v.len() / m;
    let inv2h = 0.5 / h;
    let invh = 1.0 / h;
    if m == 1 {
        out[0] = (v[1] - v[0]) * invh;
        out[n - 1] = (v[n - 1] - v[n - 2]) * invh;
        let (src, dst) = (&v[..n], &mut out[..n]);
        for i in 1..n - 1 {
            dst[i] = (src[i + 1] - src[i - 1]) * inv2h;
        }
        return;
    }
    for c in 0..m {
        out[c] = (v[m + c] - v[c]) * invh;
        out[(n - 1) * m + c] = (v[(n - 1) * m + c] - v[(n - 2) * m + c]) * invh;
    }
    for i in 1..n - 1 {
        for c in 0..m {
            out[i * m + c] = (v[(i + 1) * m + c] - v[(i - 1) * m + c]) * inv2h;
        }
    }
}

/// `L v = a v_xx + b v_x` with the extrapolation ghost at the ends.
pub fn apply_l(a: &[f64], b: &[f64], h: f64, v: &[f64], m: usize, out: &mut [f64]) {
    let n = a.len();
    let invh2 = 1.0 / (h * h);
    let inv2h = 0.5 / h;
    let invh = 1.0 / h;
    if m == 1 {
        let (a, b, v, out) = (&a[..n], &b[..n], &v[..n], &mut out[..n]);
        out[0] = b[0] * (v[1] - v[0]) * invh;
        out[n - 1] = b[n - 1] * (v[n - 1] - v[n - 2]) * invh;
        for i in 1..n - 1 {
            let (vm, v0, vp) = (v[i - 1], v[i], v[i + 1]);
            out[i] = a[i] * invh2 * (vm - 2.0 * v0 + vp) + b[i] * inv2h * (vp - vm);
        }
        return;
    }
    for c in 0..m {
        // ghost nodes make v_xx vanish at the ends
        out[c] = b[0] * (v[m + c] - v[c]) * invh;
        out[(n - 1) * m + c] = b[n - 1] * (v[(n - 1) * m + c] - v[(n - 2) * m + c]) * invh;
    }
    for i in 1..n - 1 {
        let ai = a[i] * invh2;
        let bi = b[i] * inv2h;
        for c in 0..m {
            let vm = v[(i - 1) * m + c];
            let v0 = v[i * m + c];
            let vp = v[(i + 1) * m + c];
            out[i * m + c] = ai * (vm - 2.0 * v0 + vp) + bi * (vp - vm);
        }
    }
}

/// Everything one backward level needs, shared across slices.
pub struct StepContext {
    pub space: SpaceGrid,
    pub s_old: f64,
    pub s_new: f64,
    pub dt: f64,
    /// diffusion coefficient a = σ²/2 at the two levels
    pub a_old: Vec<f64>,
    pub a_new: Vec<f64>,
    pub b_old: Vec<f64>,
    pub b_new: Vec<f64>,
    pub sigma_old: Vec<f64>,
    pub sigma_new: Vec<f64>,
    fac_pred: FactoredBcTridiag,
    fac_corr: FactoredBcTridiag,
}

fn build_matrix(
    a: &[f64],
    b: &[f64],
    h: f64,
    theta_dt: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let invh2 = 1.0 / (h * h);
    let inv2h = 0.5 / h;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let ai = a[i] * invh2;
        let bi = b[i] * inv2h;
        lower[i] = -theta_dt * (ai - bi);
        diag[i] = 1.0 + theta_dt * 2.0 * ai;
        upper[i] = -theta_dt * (ai + bi);
    }
    (lower, diag, upper)
}

impl StepContext {
    pub fn new(
        b: &dyn ScalarCoeff,
        sigma: &dyn ScalarCoeff,
        space: &SpaceGrid,
        s_old: f64,
        s_new: f64,
    ) -> Result<Self> {
        let n = space.n;
        let dt = s_old - s_new;
        let xs = space.points();
        let mut b_old = vec![0.0; n];
        let mut b_new = vec![0.0; n];
        let mut sigma_old = vec![0.0; n];
        let mut sigma_new = vec![0.0; n];
        b.fill(s_old, &xs, &mut b_old);
        b.fill(s_new, &xs, &mut b_new);
        sigma.fill(s_old, &xs, &mut sigma_old);
        sigma.fill(s_new, &xs, &mut sigma_new);
        let a_old: Vec<f64> = sigma_old.iter().map(|s| 0.5 * s * s).collect();
        let a_new: Vec<f64> = sigma_new.iter().map(|s| 0.5 * s * s).collect();
        let (lo, di, up) = build_matrix(&a_new, &b_new, space.h, dt);
        let fac_pred = FactoredBcTridiag::factor(&lo, &di, &up)?;
        let (lo, di, up) = build_matrix(&a_new, &b_new, space.h, 0.5 * dt);
        let fac_corr = FactoredBcTridiag::factor(&lo, &di, &up)?;
        Ok(Self {
            space: space.clone(),
            s_old,
            s_new,
            dt,
            a_old,
            a_new,
            b_old,
            b_new,
            sigma_old,
            sigma_new,
            fac_pred,
            fac_corr,
        })
    }

    /// Backward-Euler predictor; `v_pred` receives the solution.
    pub fn predict(&self, v_old: &[f64], g_old: &[f64], m: usize, v_pred: &mut [f64], work: &mut [f64]) {
        let dt = self.dt;
        for (o, (v, g)) in v_pred.iter_mut().zip(v_old.iter().zip(g_old)) {
            *o = v + dt * g;
        }
        for c in 0..m {
            self.fac_pred.solve_strided(v_pred, m, c, work);
        }
    }

    /// Trapezoidal corrector; `v` receives the new level.
    /// `l_old_v` must hold `L_old v_old` (from [`apply_l`]).
    pub fn correct(
        &self,
        v_old: &[f64],
        l_old_v: &[f64],
        g_old: &[f64],
        g_new: &[f64],
        m: usize,
        v: &mut [f64],
        work: &mut [f64],
    ) {
        let half_dt = 0.5 * self.dt;
        for i in 0..v.len() {
            v[i] = v_old[i] + half_dt * (l_old_v[i] + g_old[i] + g_new[i]);
        }
        for c in 0..m {
            self.fac_corr.solve_strided(v, m, c, work);
        }
    }
}

// ---------------------------------------------------------------------------
// One-parameter backward solvers built on the stepper
// ---------------------------------------------------------------------------

/// Solves `v_s + a v_xx + b v_x + f(s,x) = 0`, `v(T,·) = terminal`, on the
/// given knots; returns v on the full (s, x) grid (m = 1).
pub fn solve_linear_parabolic(
    b: &dyn ScalarCoeff,
    sigma: &dyn ScalarCoeff,
    f: &dyn ScalarCoeff,
    terminal: &[f64],
    time: &TimeGrid,
    space: &SpaceGrid,
) -> Result<GridFn2> {
    let n = space.n;
    let nk = time.len();
    let mut out = GridFn2::zeros(time.clone(), space.clone(), 1);
    out.row_mut(nk - 1).copy_from_slice(terminal);
    let xs = space.points();
    let mut g_old = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut work = vec![0.0; n - 2];
    for j in (0..nk - 1).rev() {
        let s_old = time.knots()[j + 1];
        let s_new = time.knots()[j];
        let ctx = StepContext::new(b, sigma, space, s_old, s_new)?;
        f.fill(s_old, &xs, &mut g_old);
        f.fill(s_new, &xs, &mut g_new);
        let (head, tail) = out.values.split_at_mut((j + 1) * n);
        let v_new = &mut head[j * n..];
        let v_old = &tail[..n];
        apply_l(&ctx.a_old, &ctx.b_old, space.h, v_old, 1, &mut lv);
        // the linear source needs no predictor
        let _ = &mut pred;
        ctx.correct(v_old, &lv, &g_old, &g_new, 1, v_new, &mut work);
    }
    Ok(out)
}

/// Solves the one-parameter semilinear backward equation
/// `v_s + a v_xx + b v_x + ĝ(s, x, v, v_x σ) = 0`, `v(T,·) = terminal`
/// (terminal point-major with m components). The generator is called with
/// `t = s` and `ξ = x` so data that ignores those slots behaves identically
/// to a field slice.
pub fn solve_semilinear_parabolic(
    b: &dyn ScalarCoeff,
    sigma: &dyn ScalarCoeff,
    g: &dyn Generator,
    terminal: &[f64],
    time: &TimeGrid,
    space: &SpaceGrid,
) -> Result<GridFn2> {
    let m = g.m();
    let n = space.n;
    let nk = time.len();
    let mut out = GridFn2::zeros(time.clone(), space.clone(), m);
    out.row_mut(nk - 1).copy_from_slice(terminal);
    let xs = space.points();
    let mut g_old = vec![0.0; n * m];
    let mut g_new = vec![0.0; n * m];
    let mut z = vec![0.0; n * m];
    let mut lv = vec![0.0; n * m];
    let mut pred = vec![0.0; n * m];
    let mut work = vec![0.0; n - 2];
    for j in (0..nk - 1).rev() {
        let s_old = time.knots()[j + 1];
        let s_new = time.knots()[j];
        let ctx = StepContext::new(b, sigma, space, s_old, s_new)?;
        let (head, tail) = out.values.split_at_mut((j + 1) * n * m);
        let v_new = &mut head[j * n * m..];
        let v_old = &tail[..n * m];

        d_x(v_old, m, space.h, &mut z);
        scale_by_sigma(&mut z, &ctx.sigma_old, m);
        fill_local(g, s_old, &xs, v_old, &z, &mut g_old);

        ctx.predict(v_old, &g_old, m, &mut pred, &mut work);

        d_x(&pred, m, space.h, &mut z);
        scale_by_sigma(&mut z, &ctx.sigma_new, m);
        fill_local(g, s_new, &xs, &pred, &z, &mut g_new);

        apply_l(&ctx.a_old, &ctx.b_old, space.h, v_old, m, &mut lv);
        ctx.correct(v_old, &lv, &g_old, &g_new, m, v_new, &mut work);
    }
    Ok(out)
}

fn fill_local(g: &dyn Generator, s: f64, xs: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
    // pointwise y: the equation is local, ξ := x and t := s
    let m = g.m();
    for (l, &x) in xs.iter().enumerate() {
        let p = crate::coeff::GenPoint {
            t: s,
            s,
            xi: x,
            x,
            y: &y[l * m..(l + 1) * m],
            z: &z[l * m..(l + 1) * m],
            zeta: &[],
        };
        g.at(&p, &mut out[l * m..(l + 1) * m]);
    }
}

pub(crate) fn scale_by_sigma(z: &mut [f64], sigma: &[f64], m: usize) {
    for (i, zi) in z.iter_mut().enumerate() {
        *zi *= sigma[i / m];
    }
}

/// Weak solve helper used in tests: terminal sampled from a closure.
pub fn terminal_line(space: &SpaceGrid, m: usize, f: impl Fn(f64, &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; space.n * m];
    for l in 0..space.n {
        f(space.point(l), &mut out[l * m..(l + 1) * m]);
    }
    out
}

/// Shared reference to a scalar coefficient from a plain closure.
pub fn coeff_fn(f: impl Fn(f64, f64) -> f64 + Sync + Send + 'static) -> Arc<dyn ScalarCoeff> {
    Arc::new(f)
}
