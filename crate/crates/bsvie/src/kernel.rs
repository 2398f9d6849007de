//! Gaussian fundamental-solution machinery for the constant-coefficient
//! operator `∂_s + a ∂_xx + b ∂_x` (n = 1):
//!
//! ```text
//! G(s, x; τ, η) = (4πa(τ-s))^{-1/2} exp( -(η - x - b(τ-s))² / (4a(τ-s)) )
//! ```
//!
//! Space convolutions integrate the piecewise-linear interpolant of the grid
//! data against the Gaussian exactly (closed form in Φ and φ, with constant
//! extension beyond the truncation), so the spatial quadrature error is the
//! interpolation error alone. Time integration substitutes `τ = s + u²` to
//! keep second order near the short-time end.

use crate::error::{Error, Result};
use crate::grid::{GridFn2, SpaceGrid};
use crate::math::{norm_cdf, norm_pdf};

/// Constant-coefficient kernel data. `a = σ²/2`.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub a: f64,
    pub b: f64,
    /// Truncation radius of the spatial grid.
    pub radius: f64,
    /// Quadrature spacing of the spatial grid.
    pub h: f64,
    /// Largest exponential decay rate for which the kernel bounds held on
    /// the last fitting sweep; diagnostic only.
    pub lambda: Option<f64>,
}

impl KernelParams {
    pub fn new(a: f64, b: f64, radius: f64, h: f64, horizon: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidInput("kernel needs a > 0".into()));
        }
        if radius / (a * horizon).sqrt() < 6.0 {
            return Err(Error::InvalidInput(format!(
                "truncation too small: R/sqrt(aT) = {:.2} < 6",
                radius / (a * horizon).sqrt()
            )));
        }
        Ok(Self {
            a,
            b,
            radius,
            h,
            lambda: None,
        })
    }

    fn mean_var(&self, s: f64, x: f64, tau: f64) -> (f64, f64) {
        let delta = tau - s;
        (x + self.b * delta, 2.0 * self.a * delta)
    }
}

/// Transition density value; requires s < τ.
pub fn gaussian_kernel(s: f64, x: f64, tau: f64, eta: f64, p: &KernelParams) -> Result<f64> {
    if s >= tau {
        return Err(Error::DegenerateInterval { s, tau });
    }
    let (mu, v) = p.mean_var(s, x, tau);
    Ok(norm_pdf((eta - mu) / v.sqrt()) / v.sqrt())
}

/// Analytic first spatial derivative G_x.
pub fn gaussian_kernel_dx(s: f64, x: f64, tau: f64, eta: f64, p: &KernelParams) -> Result<f64> {
    let g = gaussian_kernel(s, x, tau, eta, p)?;
    let (mu, v) = p.mean_var(s, x, tau);
    Ok(g * (eta - mu) / v)
}

/// Analytic second spatial derivative G_xx.
pub fn gaussian_kernel_dxx(s: f64, x: f64, tau: f64, eta: f64, p: &KernelParams) -> Result<f64> {
    let g = gaussian_kernel(s, x, tau, eta, p)?;
    let (mu, v) = p.mean_var(s, x, tau);
    let u = eta - mu;
    Ok(g * (u * u / (v * v) - 1.0 / v))
}

/// Analytic time derivative G_s.
pub fn gaussian_kernel_ds(s: f64, x: f64, tau: f64, eta: f64, p: &KernelParams) -> Result<f64> {
    let g = gaussian_kernel(s, x, tau, eta, p)?;
    let (mu, v) = p.mean_var(s, x, tau);
    let u = eta - mu;
    Ok(g * (p.a / v - u * p.b / v - p.a * u * u / (v * v)))
}

// ---------------------------------------------------------------------------
// Exact piecewise-linear Gaussian convolution
// ---------------------------------------------------------------------------

/// `∫ N(η; mu, v) f̂(η) dη` where `f̂` is the piecewise-linear interpolant of
/// `f` on `grid` (m components per node), linearly extended beyond the ends
/// (the same convention as the finite-difference boundary row, so affine
/// data passes through exactly). Writes the m results into `out`.
pub fn gaussian_convolve(mu: f64, v: f64, grid: &SpaceGrid, f: &[f64], m: usize, out: &mut [f64]) {
    debug_assert_eq!(f.len(), grid.n * m);
    out[..m].fill(0.0);
    if v <= 0.0 {
        // delta limit: point evaluation of the interpolant
        let (i, w) = grid.locate(mu);
        for c in 0..m {
            out[c] = (1.0 - w) * f[i * m + c] + w * f[(i + 1) * m + c];
        }
        return;
    }
    let sd = v.sqrt();
    let n = grid.n;
    let inv_h = 1.0 / grid.h;
    // z, Φ, φ at nodes
    let mut z_prev = (grid.point(0) - mu) / sd;
    let mut cdf_prev = norm_cdf(z_prev);
    let mut pdf_prev = norm_pdf(z_prev);
    // left tail, linear extension: ∫_{-∞}^{η₀} N (f₀ + s₀(η-η₀)) dη
    let t_left = (mu - grid.point(0)) * cdf_prev - sd * pdf_prev;
    for c in 0..m {
        let slope = (f[m + c] - f[c]) * inv_h;
        out[c] += f[c] * cdf_prev + slope * t_left;
    }
    for k in 0..n - 1 {
        let eta_k = grid.point(k);
        let z = (grid.point(k + 1) - mu) / sd;
        let cdf = norm_cdf(z);
        let pdf = norm_pdf(z);
        let i0 = cdf - cdf_prev;
        // ∫ η N = μ I0 + sd (φ_k - φ_{k+1})
        let i1 = mu * i0 + sd * (pdf_prev - pdf);
        let lin = i1 - eta_k * i0;
        for c in 0..m {
            let fk = f[k * m + c];
            let slope = (f[(k + 1) * m + c] - fk) * inv_h;
            out[c] += fk * i0 + slope * lin;
        }
        z_prev = z;
        cdf_prev = cdf;
        pdf_prev = pdf;
    }
    let _ = z_prev;
    // right tail, linear extension
    let t_right = (mu - grid.point(n - 1)) * (1.0 - cdf_prev) + sd * pdf_prev;
    for c in 0..m {
        let slope = (f[(n - 1) * m + c] - f[(n - 2) * m + c]) * inv_h;
        out[c] += f[(n - 1) * m + c] * (1.0 - cdf_prev) + slope * t_right;
    }
}

/// Node weights of the same functional: `w` such that
/// `Σ_k w[k] f[k] = gaussian_convolve(mu, v, grid, f)` for every `f`.
pub fn convolve_weights(mu: f64, v: f64, grid: &SpaceGrid, w: &mut [f64]) {
    let n = grid.n;
    debug_assert_eq!(w.len(), n);
    w.fill(0.0);
    if v <= 0.0 {
        let (i, t) = grid.locate(mu);
        w[i] = 1.0 - t;
        w[i + 1] = t;
        return;
    }
    let sd = v.sqrt();
    let inv_h = 1.0 / grid.h;
    let mut cdf_prev = norm_cdf((grid.point(0) - mu) / sd);
    let mut pdf_prev = norm_pdf((grid.point(0) - mu) / sd);
    // left tail with linear extension
    let t_left = ((mu - grid.point(0)) * cdf_prev - sd * pdf_prev) * inv_h;
    w[0] += cdf_prev - t_left;
    w[1] += t_left;
    for k in 0..n - 1 {
        let eta_k = grid.point(k);
        let z = (grid.point(k + 1) - mu) / sd;
        let cdf = norm_cdf(z);
        let pdf = norm_pdf(z);
        let i0 = cdf - cdf_prev;
        let i1 = mu * i0 + sd * (pdf_prev - pdf);
        let bq = (i1 - eta_k * i0) * inv_h;
        w[k] += i0 - bq;
        w[k + 1] += bq;
        cdf_prev = cdf;
        pdf_prev = pdf;
    }
    // right tail with linear extension
    let t_right = ((mu - grid.point(n - 1)) * (1.0 - cdf_prev) + sd * pdf_prev) * inv_h;
    w[n - 1] += (1.0 - cdf_prev) + t_right;
    w[n - 2] -= t_right;
}

/// Derivative of [`gaussian_convolve`] with respect to the center `mu`
/// (equals `∫ G_x f̂ dη` when `mu = x + bΔ`).
pub fn gaussian_convolve_dmu(
    mu: f64,
    v: f64,
    grid: &SpaceGrid,
    f: &[f64],
    m: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(f.len(), grid.n * m);
    out[..m].fill(0.0);
    if v <= 0.0 {
        let (i, _) = grid.locate(mu);
        for c in 0..m {
            out[c] = (f[(i + 1) * m + c] - f[i * m + c]) / grid.h;
        }
        return;
    }
    let sd = v.sqrt();
    let n = grid.n;
    let inv_h = 1.0 / grid.h;
    let mut z_prev = (grid.point(0) - mu) / sd;
    let mut cdf_prev = norm_cdf(z_prev);
    let mut pdf_prev = norm_pdf(z_prev);
    // d/dμ of the linearly extended left tail: -f₀ φ₀/sd + s₀ Φ₀
    for c in 0..m {
        let slope = (f[m + c] - f[c]) * inv_h;
        out[c] += -f[c] * pdf_prev / sd + slope * cdf_prev;
    }
    for k in 0..n - 1 {
        let eta_k = grid.point(k);
        let z = (grid.point(k + 1) - mu) / sd;
        let cdf = norm_cdf(z);
        let pdf = norm_pdf(z);
        let i0 = cdf - cdf_prev;
        let di0 = (pdf_prev - pdf) / sd;
        // I1 = μ I0 + sd (φ_k − φ_{k+1});  dφ(z)/dμ = z φ(z) / sd
        let di1 = i0 + mu * di0 + (z_prev * pdf_prev - z * pdf);
        let dlin = di1 - eta_k * di0;
        for c in 0..m {
            let fk = f[k * m + c];
            let slope = (f[(k + 1) * m + c] - fk) * inv_h;
            out[c] += fk * di0 + slope * dlin;
        }
        z_prev = z;
        cdf_prev = cdf;
        pdf_prev = pdf;
    }
    for c in 0..m {
        let slope = (f[(n - 1) * m + c] - f[(n - 2) * m + c]) * inv_h;
        out[c] += f[(n - 1) * m + c] * pdf_prev / sd + slope * (1.0 - cdf_prev);
    }
}

// ---------------------------------------------------------------------------
// Space-time kernel application
// ---------------------------------------------------------------------------

/// `∫_s^T ∫ G(s, x; τ, η) f(τ, η) dη dτ` for `f` sampled on a grid. The τ
/// integral runs in the substituted variable `u = √(τ-s)` (uniform grid,
/// trapezoid) with `f` interpolated linearly between its time knots.
pub fn kernel_apply(f: &GridFn2, s: f64, x: f64, p: &KernelParams) -> Result<f64> {
    if f.m != 1 {
        return Err(Error::GridMismatch("kernel_apply expects m = 1 data".into()));
    }
    let t_end = f.time.last();
    if s >= t_end {
        return Err(Error::DegenerateInterval { s, tau: t_end });
    }
    if s < f.time.first() - 1e-12 {
        return Err(Error::GridMismatch(format!(
            "s = {s} below the data range start {}",
            f.time.first()
        )));
    }
    let u_max = (t_end - s).sqrt();
    // at least 4 u-nodes per time knot in range, minimum 64
    let knots_in_range = f
        .time
        .knots()
        .iter()
        .filter(|&&t| t > s && t <= t_end)
        .count()
        .max(1);
    let n_u = (4 * knots_in_range).max(64);
    let du = u_max / n_u as f64;
    let mut acc = 0.0;
    let mut row = vec![0.0; f.space.n];
    let mut conv = [0.0];
    for q in 0..=n_u {
        let u = q as f64 * du;
        let weight = if q == 0 || q == n_u { 0.5 } else { 1.0 };
        if q == 0 {
            continue; // integrand 2u·h(s+u²) vanishes at u = 0
        }
        let tau = (s + u * u).min(t_end);
        // interpolate f in time onto `row`
        interp_time_row(f, tau, &mut row);
        let (mu, v) = p.mean_var(s, x, tau);
        gaussian_convolve(mu, v, &f.space, &row, 1, &mut conv);
        acc += weight * 2.0 * u * conv[0] * du;
    }
    Ok(acc)
}

fn interp_time_row(f: &GridFn2, tau: f64, row: &mut [f64]) {
    let knots = f.time.knots();
    let j = match knots.iter().rposition(|&t| t <= tau + 1e-15) {
        Some(j) => j.min(knots.len() - 2),
        None => 0,
    };
    let w = ((tau - knots[j]) / (knots[j + 1] - knots[j])).clamp(0.0, 1.0);
    let a = f.row(j);
    let b = f.row(j + 1);
    for (r, (u, v)) in row.iter_mut().zip(a.iter().zip(b)) {
        *r = (1.0 - w) * u + w * v;
    }
}

// ---------------------------------------------------------------------------
// Kernel bound fitting
// ---------------------------------------------------------------------------

/// Fitted constants K for the three decay bounds at a given λ:
/// `|G| ≤ K Δ^{-1/2} e^{-λ d²/Δ}`, `|G_x| ≤ K Δ^{-1} e^{-λ d²/Δ}`,
/// `|G_s| + |G_xx| ≤ K Δ^{-3/2} e^{-λ d²/Δ}`.
#[derive(Debug, Clone, Copy)]
pub struct BoundFit {
    pub lambda: f64,
    pub k_value: f64,
    pub k_gradient: f64,
    pub k_second: f64,
}

impl BoundFit {
    pub fn k_max(&self) -> f64 {
        self.k_value.max(self.k_gradient).max(self.k_second)
    }
}

/// Measures the smallest constants K on a sweep over time separations and
/// offsets for a fixed λ.
pub fn fit_bound_constants(p: &KernelParams, horizon: f64, lambda: f64) -> Result<BoundFit> {
    let deltas: Vec<f64> = (1..=40).map(|i| horizon * i as f64 / 40.0).collect();
    let offsets: Vec<f64> = (0..=60).map(|i| p.radius * i as f64 / 60.0).collect();
    let mut kv: f64 = 0.0;
    let mut kg: f64 = 0.0;
    let mut ks: f64 = 0.0;
    for &delta in &deltas {
        for &d in &offsets {
            let (s, x, tau) = (0.0, 0.0, delta);
            let eta = d;
            let decay = (-lambda * d * d / delta).exp();
            if decay < 1e-300 {
                continue;
            }
            let g = gaussian_kernel(s, x, tau, eta, p)?;
            let gx = gaussian_kernel_dx(s, x, tau, eta, p)?.abs();
            let gs = gaussian_kernel_ds(s, x, tau, eta, p)?.abs();
            let gxx = gaussian_kernel_dxx(s, x, tau, eta, p)?.abs();
            kv = kv.max(g * delta.sqrt() / decay);
            kg = kg.max(gx * delta / decay);
            ks = ks.max((gs + gxx) * delta.powf(1.5) / decay);
        }
    }
    Ok(BoundFit {
        lambda,
        k_value: kv,
        k_gradient: kg,
        k_second: ks,
    })
}

/// Largest λ on a scan for which the fitted constants stay below
/// `cap_factor` times their λ→0 values. The decay rate is capped by
/// 1/(4a) where the Gaussian itself lives.
pub fn fit_lambda(p: &KernelParams, horizon: f64, cap_factor: f64) -> Result<BoundFit> {
    let base = fit_bound_constants(p, horizon, 1e-6)?;
    let cap = cap_factor * base.k_max();
    let lam_max = 1.0 / (4.0 * p.a);
    let mut best = base;
    for i in 1..100 {
        let lam = lam_max * i as f64 / 100.0;
        let fit = fit_bound_constants(p, horizon, lam)?;
        if fit.k_max() <= cap {
            best = fit;
        } else {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn params(a: f64, b: f64) -> KernelParams {
        KernelParams::new(a, b, 8.0, 0.02, 1.0).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        // a = 1/2, b = 0, τ-s = 1, η = x: (2π)^{-1/2}
        let p = params(0.5, 0.0);
        let g = gaussian_kernel(0.0, 0.3, 1.0, 0.3, &p).unwrap();
        assert!((g - 0.3989422804014327).abs() < 1e-15, "peak {g}");
    }

    #[test]
    fn degenerate_interval_rejected() {
        let p = params(0.5, 0.0);
        assert!(matches!(
            gaussian_kernel(1.0, 0.0, 1.0, 0.0, &p),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn trapezoid_normalization() {
        // plain trapezoid over [x-R, x+R] integrates the density to 1
        for (a, b, delta) in [(0.5, 0.0, 1.0), (0.8, 0.4, 0.5), (0.3, -0.2, 0.25)] {
            let p = params(a, b);
            let x = 0.1;
            let n = 1601usize;
            let h = 2.0 * p.radius / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let eta = x - p.radius + i as f64 * h;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                acc += w * gaussian_kernel(0.0, x, delta, eta, &p).unwrap() * h;
            }
            assert!((acc - 1.0).abs() < 1e-6, "mass {acc} for a={a}, b={b}");
        }
    }

    #[test]
    fn exact_pl_convolution_matches_moments() {
        let grid = SpaceGrid::symmetric(8.0, 801).unwrap();
        let pts = grid.points();
        let (mu, v) = (0.4, 0.6);
        // f = 1 -> 1 (constant extension makes this exact)
        let ones = vec![1.0; grid.n];
        let mut out = [0.0];
        gaussian_convolve(mu, v, &grid, &ones, 1, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12);
        // f = η -> μ exactly (linear tails)
        let lin: Vec<f64> = pts.clone();
        gaussian_convolve(mu, v, &grid, &lin, 1, &mut out);
        assert!((out[0] - mu).abs() < 1e-12, "mean {}", out[0]);
        // derivative of the linear field is 1
        gaussian_convolve_dmu(mu, v, &grid, &lin, 1, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12, "slope {}", out[0]);
        // weights reproduce the functional
        let mut wts = vec![0.0; grid.n];
        convolve_weights(mu, v, &grid, &mut wts);
        let by_w: f64 = wts.iter().zip(&lin).map(|(w, f)| w * f).sum();
        assert!((by_w - mu).abs() < 1e-12);
    }

    #[test]
    fn kernel_apply_examples() {
        // frozen oracles on s = 0.25, T = 1, x = 0.4, a = 1/2, b = 0:
        //   f ≡ 1  -> T - s                        = 0.75
        //   f = η  -> x (T - s)                    = 0.3
        //   f = η² -> x²(T-s) + (T-s)²/2           = 0.40125
        let p = params(0.5, 0.0);
        let time = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let space = SpaceGrid::symmetric(8.0, 801).unwrap();
        let (s, x) = (0.25, 0.4);

        let f1 = GridFn2::from_fn(time.clone(), space.clone(), |_t, _e| 1.0);
        assert!((kernel_apply(&f1, s, x, &p).unwrap() - 0.75).abs() < 1e-4);

        let fe = GridFn2::from_fn(time.clone(), space.clone(), |_t, e| e);
        assert!((kernel_apply(&fe, s, x, &p).unwrap() - 0.3).abs() < 1e-4);

        let fe2 = GridFn2::from_fn(time.clone(), space.clone(), |_t, e| e * e);
        let got = kernel_apply(&fe2, s, x, &p).unwrap();
        assert!((got - 0.40125).abs() < 1e-4, "second moment {got}");

        // degenerate interval and mismatched data are rejected
        assert!(matches!(
            kernel_apply(&fe2, 1.0, x, &p),
            Err(Error::DegenerateInterval { .. })
        ));
        let f_multi = GridFn2::zeros(time, space, 2);
        assert!(matches!(
            kernel_apply(&f_multi, s, x, &p),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn chapman_kolmogorov() {
        // ∫ G(s,x;r,u) G(r,u;τ,η) du = G(s,x;τ,η) within 1e-5
        let p = params(0.5, 0.3);
        let grid = SpaceGrid::symmetric(8.0, 3201).unwrap();
        let (s, r, tau) = (0.0, 0.4, 1.0);
        for &x in &[-1.0, 0.3, 2.0] {
            for &eta in &[-0.5, 0.8, 1.7] {
                let inner: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&u| gaussian_kernel(r, u, tau, eta, &p).unwrap())
                    .collect();
                let (mu, v) = (x + p.b * (r - s), 2.0 * p.a * (r - s));
                let mut out = [0.0];
                gaussian_convolve(mu, v, &grid, &inner, 1, &mut out);
                let want = gaussian_kernel(s, x, tau, eta, &p).unwrap();
                assert!(
                    (out[0] - want).abs() < 1e-5,
                    "CK defect {} at x={x}, eta={eta}",
                    (out[0] - want).abs()
                );
            }
        }
    }

    #[test]
    fn heat_equation_residual_by_central_differences() {
        let p = params(0.5, 0.2);
        let (x, tau, eta) = (0.1, 0.9, 0.7);
        let hs = 1e-4;
        let hx = 1e-4;
        for &s in &[0.1, 0.4, 0.7] {
            let g = |ss: f64, xx: f64| gaussian_kernel(ss, xx, tau, eta, &p).unwrap();
            let gs = (g(s + hs, x) - g(s - hs, x)) / (2.0 * hs);
            let gx = (g(s, x + hx) - g(s, x - hx)) / (2.0 * hx);
            let gxx = (g(s, x + hx) - 2.0 * g(s, x) + g(s, x - hx)) / (hx * hx);
            let resid = gs + p.a * gxx + p.b * gx;
            assert!(resid.abs() < 1e-5, "residual {resid} at s={s}");
            // and the analytic derivatives agree with the differences
            assert!((gaussian_kernel_ds(s, x, tau, eta, &p).unwrap() - gs).abs() < 1e-5);
            assert!((gaussian_kernel_dx(s, x, tau, eta, &p).unwrap() - gx).abs() < 1e-5);
            assert!((gaussian_kernel_dxx(s, x, tau, eta, &p).unwrap() - gxx).abs() < 1e-4);
        }
    }

    #[test]
    fn bounds_hold_at_lambda_one_eighth() {
        // a = 1/2, b = 0: the bounds hold with λ = 1/8 and moderate K
        let p = params(0.5, 0.0);
        let fit = fit_bound_constants(&p, 1.0, 0.125).unwrap();
        assert!(fit.k_max().is_finite());
        assert!(fit.k_value < 1.0, "K value {}", fit.k_value);
        assert!(fit.k_gradient < 2.0, "K grad {}", fit.k_gradient);
        assert!(fit.k_second < 4.0, "K second {}", fit.k_second);
        // the scan finds a λ at least that large
        let best = fit_lambda(&p, 1.0, 50.0).unwrap();
        assert!(best.lambda >= 0.125, "fitted lambda {}", best.lambda);
        assert!(best.lambda <= 0.5 + 1e-12);
    }
}
