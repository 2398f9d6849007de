//! Scalar special functions, the counter-based normal generator, and small
//! fitting helpers used by the verification suites.

/// Error function, rational Chebyshev approximation (Cody 1969), ~1 ulp.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        // erf(x) = x * P(x^2)/Q(x^2)
        const A: [f64; 5] = [
            3.16112374387056560e0,
            1.13864154151050156e2,
            3.77485237685302021e2,
            3.20937758913846947e3,
            1.85777706184603153e-1,
        ];
        const B: [f64; 4] = [
            2.36012909523441209e1,
            2.44024637934444173e2,
            1.28261652607737228e3,
            2.84423683343917062e3,
        ];
        let z = y * y;
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        x * (num + A[3]) / (den + B[3])
    } else {
        let e = erfc_positive(y);
        if x >= 0.0 {
            1.0 - e
        } else {
            e - 1.0
        }
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < -0.46875 {
        2.0 - erfc_positive(-x)
    } else if x <= 0.46875 {
        1.0 - erf(x)
    } else {
        erfc_positive(x)
    }
}

// erfc(y) for y > 0.46875.
fn erfc_positive(y: f64) -> f64 {
    let r = if y <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else {
        if y >= 26.6 {
            return 0.0;
        }
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let r = z * (num + P[4]) / (den + Q[4]);
        (0.564_189_583_547_756_3 - r) / y
    };
    // exp(-y^2) split to keep precision for large y
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * core::f64::consts::FRAC_1_SQRT_2)
}

// ---------------------------------------------------------------------------
// Counter-based random numbers
// ---------------------------------------------------------------------------

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless hash of (seed, ids) to a u64; each id passes through a full
/// avalanche stage, so nearby counters decorrelate.
#[inline]
pub fn counter_u64(seed: u64, ids: [u64; 3]) -> u64 {
    let mut h = mix64(seed ^ GAMMA);
    for (i, v) in ids.iter().enumerate() {
        h = mix64(h ^ v.wrapping_add(GAMMA.wrapping_mul(i as u64 + 1)));
    }
    h
}

#[inline]
fn unit_open(x: u64) -> f64 {
    // (0, 1]
    (((x >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw keyed on (seed, path, step, component). Independent
/// of how many paths or steps a run asks for, so ensemble subsets reproduce.
#[inline]
pub fn normal_draw(seed: u64, path: u64, step: u64, component: u64) -> f64 {
    let u1 = unit_open(counter_u64(seed, [path, step, 2 * component]));
    let u2 = unit_open(counter_u64(seed, [path, step, 2 * component + 1]));
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

/// Uniform (0,1] draw keyed like [`normal_draw`].
#[inline]
pub fn uniform_draw(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    unit_open(counter_u64(seed, [a, b, c]))
}

// ---------------------------------------------------------------------------
// Low-discrepancy sampling (additive golden-ratio recurrence)
// ---------------------------------------------------------------------------

/// Fills `point` (one coordinate per dimension) with the k-th element of the
/// R2-style sequence on [0,1)^dim.
pub fn r2_point(k: usize, point: &mut [f64]) {
    let dim = point.len();
    // positive root of x^(d+1) = x + 1
    let mut phi = 1.5_f64;
    for _ in 0..32 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let mut alpha = 1.0;
    for p in point.iter_mut() {
        alpha /= phi;
        *p = (0.5 + alpha * (k as f64 + 1.0)).fract();
    }
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

/// Least-squares slope of log(y) against log(x). Pairs with a nonpositive
/// entry are skipped; returns NaN when fewer than two remain.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Observed convergence order from two errors under grid halving.
pub fn halving_order(err_coarse: f64, err_fine: f64) -> f64 {
    (err_coarse / err_fine).ln() / core::f64::consts::LN_2
}

/// Locate `x` on the uniform grid `lo + i*h`, returning the left index and
/// the interpolation weight, both clamped to the grid.
#[inline]
pub fn locate_uniform(lo: f64, h: f64, n: usize, x: f64) -> (usize, f64) {
    let r = (x - lo) / h;
    if r <= 0.0 {
        return (0, 0.0);
    }
    let i = r.floor() as usize;
    if i >= n - 1 {
        return (n - 2, 1.0);
    }
    (i, r - i as f64)
}
