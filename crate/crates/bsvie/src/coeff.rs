//! Coefficient traits for the forward SDE and the integral-equation data
//! (free term ψ and generator g), plus the built-in primitives the config
//! layer composes.
//!
//! Grid solvers run with scalar state (n = 1) and scalar noise (d = 1) but
//! vector values (m ≥ 1); value arrays are point-major with the m components
//! contiguous. All evaluations happen through vectorized "line" calls so the
//! dynamic dispatch amortizes over a spatial grid line.

/// Scalar coefficient of (s, x), used for drift and diffusion in the n = 1
/// solvers.
pub trait ScalarCoeff: Sync + Send {
    fn at(&self, s: f64, x: f64) -> f64;

    /// Writes the coefficient along an x-line.
    fn fill(&self, s: f64, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.at(s, x);
        }
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync + Send> ScalarCoeff for F {
    fn at(&self, s: f64, x: f64) -> f64 {
        self(s, x)
    }
}

/// Constant coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Const(pub f64);

impl ScalarCoeff for Const {
    fn at(&self, _s: f64, _x: f64) -> f64 {
        self.0
    }
    fn fill(&self, _s: f64, _xs: &[f64], out: &mut [f64]) {
        out.fill(self.0);
    }
}

/// `a0 + ax·x + as·s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a0: f64,
    pub ax: f64,
    pub a_s: f64,
}

impl ScalarCoeff for Affine {
    fn at(&self, s: f64, x: f64) -> f64 {
        self.a0 + self.ax * x + self.a_s * s
    }
}

/// `offset + amp·sin(freq·x + phase)`; bounded with Lipschitz constant
/// `|amp·freq|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinBounded {
    pub offset: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl ScalarCoeff for SinBounded {
    fn at(&self, _s: f64, x: f64) -> f64 {
        self.offset + self.amp * (self.freq * x + self.phase).sin()
    }
}

// ---------------------------------------------------------------------------
// Forward SDE coefficients (general n, d — simulation and validation only)
// ---------------------------------------------------------------------------

pub trait SdeCoeffs: Sync + Send {
    /// Drift b(t, x) into `out` (length n).
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Diffusion σ(t, x) into `out`, row-major n×d.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// n = d = 1 coefficients from two scalar functions.
pub struct ScalarSde {
    pub b: std::sync::Arc<dyn ScalarCoeff>,
    pub sigma: std::sync::Arc<dyn ScalarCoeff>,
}

impl SdeCoeffs for ScalarSde {
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.b.at(t, x[0]);
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma.at(t, x[0]);
    }
}

// ---------------------------------------------------------------------------
// Free term ψ(t, ξ, x) ∈ R^m
// ---------------------------------------------------------------------------

pub trait FreeTerm: Sync + Send {
    fn m(&self) -> usize;
    fn at(&self, t: f64, xi: f64, x: f64, out: &mut [f64]);

    /// ψ along an x-line, point-major.
    fn fill_line(&self, t: f64, xi: f64, xs: &[f64], out: &mut [f64]) {
        let m = self.m();
        for (l, &x) in xs.iter().enumerate() {
            self.at(t, xi, x, &mut out[l * m..(l + 1) * m]);
        }
    }
}

/// Free term from a closure `(t, ξ, x, out)`.
pub struct FnFree<F> {
    pub m: usize,
    pub f: F,
}

impl<F: Fn(f64, f64, f64, &mut [f64]) + Sync + Send> FreeTerm for FnFree<F> {
    fn m(&self) -> usize {
        self.m
    }
    fn at(&self, t: f64, xi: f64, x: f64, out: &mut [f64]) {
        (self.f)(t, xi, x, out)
    }
}

// ---------------------------------------------------------------------------
// Generator g(t, s, ξ, x, y, z[, ζ]) ∈ R^m
// ---------------------------------------------------------------------------

/// One evaluation point of the generator. `y`, `z`, `zeta` hold m components
/// each; `zeta` is empty for without-transpose problems.
pub struct GenPoint<'a> {
    pub t: f64,
    pub s: f64,
    pub xi: f64,
    pub x: f64,
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub zeta: &'a [f64],
}

pub trait Generator: Sync + Send {
    fn m(&self) -> usize;

    /// Whether g reads the transposed argument Z(s,t).
    fn uses_zeta(&self) -> bool {
        false
    }

    /// Whether g reads the diagonal slot y; marching skips the diagonal
    /// predictor when it provably cannot.
    fn depends_on_y(&self) -> bool {
        true
    }

    /// Whether g reads the gradient slot z; marching skips the per-slice
    /// predictor when it provably cannot.
    fn depends_on_z(&self) -> bool {
        true
    }

    fn at(&self, p: &GenPoint, out: &mut [f64]);

    /// g along an x-line; `ys`, `zs`, `zetas`, `out` are point-major with m
    /// components per point.
    fn fill_line(
        &self,
        t: f64,
        s: f64,
        xi: f64,
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        zetas: Option<&[f64]>,
        out: &mut [f64],
    ) {
        let m = self.m();
        for (l, &x) in xs.iter().enumerate() {
            let p = GenPoint {
                t,
                s,
                xi,
                x,
                y: &ys[l * m..(l + 1) * m],
                z: &zs[l * m..(l + 1) * m],
                zeta: zetas.map_or(&[][..], |zz| &zz[l * m..(l + 1) * m]),
            };
            self.at(&p, &mut out[l * m..(l + 1) * m]);
        }
    }
}

/// g ≡ 0.
pub struct ZeroGen {
    pub m: usize,
}

impl Generator for ZeroGen {
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
    fn m(&self) -> usize {
        self.m
    }
    fn at(&self, _p: &GenPoint, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn fill_line(
        &self,
        _t: f64,
        _s: f64,
        _xi: f64,
        _xs: &[f64],
        _ys: &[f64],
        _zs: &[f64],
        _zetas: Option<&[f64]>,
        out: &mut [f64],
    ) {
        out.fill(0.0);
    }
}

/// Componentwise constant generator.
pub struct ConstGen {
    pub values: Vec<f64>,
}

impl Generator for ConstGen {
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
    fn m(&self) -> usize {
        self.values.len()
    }
    fn at(&self, _p: &GenPoint, out: &mut [f64]) {
        out.copy_from_slice(&self.values);
    }
}

/// `g = scale · y`, componentwise.
pub struct LinearYGen {
    pub m: usize,
    pub scale: f64,
}

impl Generator for LinearYGen {
    fn depends_on_z(&self) -> bool {
        false
    }
    fn m(&self) -> usize {
        self.m
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        for (o, &y) in out.iter_mut().zip(p.y) {
            *o = self.scale * y;
        }
    }
    fn fill_line(
        &self,
        _t: f64,
        _s: f64,
        _xi: f64,
        _xs: &[f64],
        ys: &[f64],
        _zs: &[f64],
        _zetas: Option<&[f64]>,
        out: &mut [f64],
    ) {
        for (o, &y) in out.iter_mut().zip(ys) {
            *o = self.scale * y;
        }
    }
}

/// `g = t` in every component (the outer time enters as a parameter).
pub struct TimeTGen {
    pub m: usize,
}

impl Generator for TimeTGen {
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
    fn m(&self) -> usize {
        self.m
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        out.fill(p.t);
    }
    fn fill_line(
        &self,
        t: f64,
        _s: f64,
        _xi: f64,
        _xs: &[f64],
        _ys: &[f64],
        _zs: &[f64],
        _zetas: Option<&[f64]>,
        out: &mut [f64],
    ) {
        out.fill(t);
    }
}

/// `g = scale · ζ`, componentwise (with-transpose coupling).
pub struct LinearZetaGen {
    pub m: usize,
    pub scale: f64,
}

impl Generator for LinearZetaGen {
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
    fn m(&self) -> usize {
        self.m
    }
    fn uses_zeta(&self) -> bool {
        true
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        for (o, &z) in out.iter_mut().zip(p.zeta) {
            *o = self.scale * z;
        }
    }
}

/// Overrides the dependency flags of an inner generator (for closures whose
/// slot usage the type system cannot see).
pub struct WithDeps<G> {
    pub inner: G,
    pub y: bool,
    pub z: bool,
}

impl<G: Generator> Generator for WithDeps<G> {
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn uses_zeta(&self) -> bool {
        self.inner.uses_zeta()
    }
    fn depends_on_y(&self) -> bool {
        self.y
    }
    fn depends_on_z(&self) -> bool {
        self.z
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        self.inner.at(p, out)
    }
    fn fill_line(
        &self,
        t: f64,
        s: f64,
        xi: f64,
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        zetas: Option<&[f64]>,
        out: &mut [f64],
    ) {
        self.inner.fill_line(t, s, xi, xs, ys, zs, zetas, out)
    }
}

/// Generator from a closure.
pub struct FnGen<F> {
    pub m: usize,
    pub zeta: bool,
    pub f: F,
}

impl<F: Fn(&GenPoint, &mut [f64]) + Sync + Send> Generator for FnGen<F> {
    fn m(&self) -> usize {
        self.m
    }
    fn uses_zeta(&self) -> bool {
        self.zeta
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        (self.f)(p, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fill_matches_pointwise() {
        let g = LinearYGen { m: 2, scale: 0.5 };
        let xs = [0.0, 1.0, 2.0];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let zs = [0.0; 6];
        let mut out = [0.0; 6];
        g.fill_line(0.1, 0.2, 0.3, &xs, &ys, &zs, None, &mut out);
        assert_eq!(out, [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn closure_coeff_works() {
        let c = |s: f64, x: f64| s + 2.0 * x;
        assert_eq!(c.at(1.0, 2.0), 5.0);
        let mut out = [0.0; 3];
        c.fill(1.0, &[0.0, 1.0, 2.0], &mut out);
        assert_eq!(out, [1.0, 3.0, 5.0]);
    }
}
