//! Spec-level invariants that cut across modules: catalog closed forms
//! satisfy their equations at second order under central-difference
//! substitution, the assembled cascade diagonal converges to the limit
//! field's diagonal at first order in the mesh, and the truncation radius
//! leaves the inner half-domain untouched.

use std::sync::Arc;

use bsvie::cascade::{build_cascade, Partition};
use bsvie::grid::TriangleGrid;
use bsvie::math::halving_order;
use bsvie::model::{catalog, catalog_entry, ClosedTheta, Problem};
use bsvie::norms::xnorm;
use bsvie::pde_type1::{pde_residual, solve_type1_fd, Backend, StoredBlock, ThetaField};

/// Samples a closed form onto a synthetic full-storage field.
fn synthetic_field(cf: &ClosedTheta, grid: &TriangleGrid) -> ThetaField {
    let nk = grid.time.len();
    let nx = grid.space.n;
    let knots = grid.time.knots();
    let mut blocks = Vec::new();
    for t_idx in 0..nk {
        let s_indices: Vec<usize> = (t_idx..nk).collect();
        let mut values = vec![0.0; s_indices.len() * nx * nx];
        for (sl, &s_idx) in s_indices.iter().enumerate() {
            for k in 0..nx {
                for l in 0..nx {
                    values[(sl * nx + k) * nx + l] = cf(
                        knots[t_idx],
                        knots[s_idx],
                        grid.space.point(k),
                        grid.space.point(l),
                    );
                }
            }
        }
        blocks.push(StoredBlock::from_values(t_idx, s_indices, nx, 1, values).unwrap());
    }
    let mut diag = vec![0.0; nk * nx];
    for s_idx in 0..nk {
        for l in 0..nx {
            let x = grid.space.point(l);
            diag[s_idx * nx + l] = cf(knots[s_idx], knots[s_idx], x, x);
        }
    }
    ThetaField {
        grid: grid.clone(),
        m: 1,
        blocks,
        diag,
        scheme_tol: 0.0,
        backend: Backend::FiniteDifference,
    }
}

#[test]
fn catalog_closed_forms_satisfy_their_equations_at_second_order() {
    for entry in catalog() {
        let Some(cf) = entry.closed_form_theta.clone() else {
            continue;
        };
        let Problem::WithoutTranspose(p) = &entry.problem else {
            continue; // the coupled system's residual is checked in pde_type2
        };
        let mut residuals = Vec::new();
        for (steps, points) in [(16usize, 41usize), (32, 81)] {
            let grid = TriangleGrid::uniform(entry.horizon(), steps, 6.0, points).unwrap();
            let field = synthetic_field(&cf, &grid);
            let rep = pde_residual(&field, p).unwrap();
            residuals.push(rep.max_abs);
        }
        if residuals[0] < 1e-11 {
            // polynomial-exact forms: central differences are already exact
            assert!(residuals[1] < 1e-10, "{}: {residuals:?}", entry.name);
            continue;
        }
        let order = halving_order(residuals[0], residuals[1]);
        assert!(
            order >= 1.8,
            "{}: residual order {order} from {residuals:?}",
            entry.name
        );
    }
}

#[test]
fn assembled_cascade_diagonal_converges_to_the_limit_diagonal() {
    let e = catalog_entry("cascade-bench").unwrap();
    let p = e.problem.type1().unwrap();
    let grid = TriangleGrid::uniform(1.0, 64, 6.0, 41).unwrap();
    let limit = solve_type1_fd(p, &grid).unwrap();
    let nx = grid.space.n;
    let dt = 1.0 / 64.0;
    let mut meshes = Vec::new();
    let mut errors = Vec::new();
    for n in [4usize, 8, 16] {
        let pi = Partition::uniform(&grid.time, n).unwrap();
        let c = build_cascade(p, &pi, &grid).unwrap();
        // discrete L² distance of the diagonals over the inner half-domain
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for s_idx in 0..grid.time.len() {
            for l in nx / 4..3 * nx / 4 {
                let d = c.diag[s_idx * nx + l] - limit.diag[s_idx * nx + l];
                acc += d * d * dt * grid.space.h;
                cnt += 1;
            }
        }
        let _ = cnt;
        meshes.push(pi.mesh());
        errors.push(acc.sqrt());
    }
    // error ≤ K‖Π‖ with a finite fitted K: the per-mesh ratios stay bounded
    let ks: Vec<f64> = errors.iter().zip(&meshes).map(|(e, m)| e / m).collect();
    let kmax = ks.iter().cloned().fold(0.0f64, f64::max);
    assert!(kmax.is_finite() && kmax < 10.0, "fitted K values {ks:?}");
    // and the error genuinely decreases with the mesh
    assert!(errors[2] < errors[0], "{errors:?}");
}

#[test]
fn truncation_radius_doubling_decays_into_the_interior() {
    // The extrapolation row is an O(1) model error at ±R whose influence
    // decays inward like the heat kernel ~ erfc(d/√(4aT)). Doubling R
    // measures it directly: at distance ≥ 4.5 (a = 1/2, T = 1) the
    // influence is below 1e-6; on the half-domain it stays ≲ 1e-4, far
    // under every tolerance the suites use at these radii.
    let e = catalog_entry("sine-terminal").unwrap();
    let p = e.problem.type1().unwrap();
    let coarse = TriangleGrid::uniform(1.0, 32, 6.0, 121).unwrap();
    let wide = TriangleGrid::uniform(1.0, 32, 12.0, 241).unwrap();
    let f1 = solve_type1_fd(p, &coarse).unwrap();
    let f2 = solve_type1_fd(p, &wide).unwrap();
    let mut worst_deep = 0.0f64; // |x| ≤ R - 4.5
    let mut worst_half = 0.0f64; // |x| ≤ R/2
    for s_idx in 0..coarse.time.len() {
        for l in 0..coarse.space.n {
            let x = coarse.space.point(l);
            // identical spacing: the wide grid contains the coarse nodes
            let wl = ((x - wide.space.lo) / wide.space.h).round() as usize;
            let d =
                (f1.diag[s_idx * coarse.space.n + l] - f2.diag[s_idx * wide.space.n + wl]).abs();
            if x.abs() <= 1.5 {
                worst_deep = worst_deep.max(d);
            }
            if x.abs() <= 3.0 {
                worst_half = worst_half.max(d);
            }
        }
    }
    assert!(worst_deep < 1e-6, "deep-interior influence {worst_deep}");
    assert!(worst_half < 1e-3, "half-domain influence {worst_half}");
}


#[test]
fn field_norm_properties() {
    let grid = TriangleGrid::uniform(1.0, 10, 2.0, 21).unwrap();
    let zero: ClosedTheta = Arc::new(|_t, _s, _xi, _x| 0.0);
    let f0 = synthetic_field(&zero, &grid);
    assert_eq!(xnorm(&f0, 0.0).unwrap().value, 0.0);

    let smooth: ClosedTheta =
        Arc::new(|t, s, xi, x| (x + 0.5 * xi).sin() * (1.0 - s) + 0.2 * t);
    let other: ClosedTheta =
        Arc::new(|t, s, xi, x| (0.7 * x - xi + t).cos() * (0.3 + 0.1 * s));
    let fa = synthetic_field(&smooth, &grid);
    let fb = synthetic_field(&other, &grid);
    let na = xnorm(&fa, 0.0).unwrap().value;
    let nb = xnorm(&fb, 0.0).unwrap().value;
    assert!(na > 0.0 && nb > 0.0);

    // homogeneity over sampled scalars
    for c in [-3.0, 0.25, 7.5] {
        let mut scaled = fa.clone();
        for blk in &mut scaled.blocks {
            for v in &mut blk.values {
                *v *= c;
            }
        }
        for v in &mut scaled.diag {
            *v *= c;
        }
        let ns = xnorm(&scaled, 0.0).unwrap().value;
        assert!(
            (ns - c.abs() * na).abs() < 1e-10 * (1.0 + na),
            "‖{c}θ‖ = {ns} vs |c|‖θ‖ = {}",
            c.abs() * na
        );
    }

    // triangle inequality on random smooth pairs
    for seed in 0..5u64 {
        let a = 0.3 + 0.2 * seed as f64;
        let pair_a: ClosedTheta =
            Arc::new(move |t, s, xi, x| (a * x + xi - s).sin() + 0.1 * t * x);
        let pair_b: ClosedTheta =
            Arc::new(move |t, s, xi, x| (x - a * xi).cos() * s + 0.05 * t);
        let fa = synthetic_field(&pair_a, &grid);
        let fb = synthetic_field(&pair_b, &grid);
        let mut fsum = fa.clone();
        for (blk, blk_b) in fsum.blocks.iter_mut().zip(&fb.blocks) {
            for (v, w) in blk.values.iter_mut().zip(&blk_b.values) {
                *v += w;
            }
        }
        for (v, w) in fsum.diag.iter_mut().zip(&fb.diag) {
            *v += w;
        }
        let lhs = xnorm(&fsum, 0.0).unwrap().value;
        let rhs = xnorm(&fa, 0.0).unwrap().value + xnorm(&fb, 0.0).unwrap().value;
        assert!(lhs <= rhs + 1e-10, "triangle: {lhs} > {rhs}");
    }

    // window monotonicity: extending the window cannot shrink the norm
    let wide = xnorm(&fa, 0.0).unwrap().value;
    let narrow = xnorm(&fa, 0.5).unwrap().value;
    assert!(wide >= narrow - 1e-12);
}
