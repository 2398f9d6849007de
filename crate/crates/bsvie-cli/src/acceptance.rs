//! The acceptance suite: one runner per criterion, each returning a
//! pass/fail outcome with its measured numbers. The CLI prints one line per
//! criterion; the integration test asserts every outcome.
//!
//! Scales follow the stated defaults (fields on 200 s-steps × 401 spatial
//! points at radius 8 for the oracle suite, 10⁴ paths for the path-based
//! verifiers); `quick` shrinks everything for smoke runs.
//!
//! Exactly-representable problems need care in the rate checks: their Itô
//! sums telescope, leaving residuals at machine level (or a deterministic
//! first-order Riemann remainder for the x-independent exponential), so the
//! √Δt window is gated on problems where the stochastic-integral error
//! genuinely dominates and the degenerate cases are reported as such.

use std::time::Instant;

use bsvie::cascade::cascade_sweep;
use bsvie::grid::{GridFn2, StoreSelect, TimeGrid, TriangleGrid};
use bsvie::kernel::{fit_bound_constants, fit_lambda, gaussian_kernel, KernelParams};
use bsvie::math::loglog_slope;
use bsvie::model::{catalog_entry, ClosedGamma, ClosedTheta, Problem};
use bsvie::pde_type1::{
    solve_type1_fd_with, LevelView, MarchObserver, NoObserver, ThetaField, Type1Options,
};
use bsvie::pde_type2::{
    gamma_from_diagonal, solve_type2, GammaBackend, MildSolution, Type2Options,
};
use bsvie::picard::{backend_agreement, contraction_probe, solve_type1_picard, PicardOptions};
use bsvie::repr::{
    bsvie_residual_type1, bsvie_residual_type2, evaluate_lambda_probe, evaluate_type1,
    evaluate_type2, msolution_residual, SolutionPair,
};
use bsvie::sde::{simulate, PathEnsemble};
use bsvie::stepper::{solve_semilinear_parabolic, terminal_line};

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub seconds: f64,
    pub details: Vec<String>,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {} [{}] … {} ({:.1} s)",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds
        )
    }
}

pub fn run_all(quick: bool) -> Vec<CriterionOutcome> {
    (1..=8).map(|id| run_criterion(id, quick)).collect()
}

pub fn run_criterion(id: usize, quick: bool) -> CriterionOutcome {
    let t0 = Instant::now();
    let (name, result): (&'static str, Result<(bool, Vec<String>), String>) = match id {
        1 => ("closed-form oracle suite", c1_oracles(quick)),
        2 => ("reduction to a single backward equation", c2_reduction(quick)),
        3 => ("partition-cascade rates", c3_cascade(quick)),
        4 => ("integral-equation residual rates", c4_representation(quick)),
        5 => ("martingale-constraint rates", c5_mconstraint(quick)),
        6 => ("fundamental-solution suite", c6_kernel()),
        7 => ("fixed-point machinery", c7_picard(quick)),
        8 => ("window-scaling estimates", c8_window_scaling()),
        other => panic!("no criterion {other}"),
    };
    let (pass, details) = match result {
        Ok(v) => v,
        Err(e) => (false, vec![format!("error: {e}")]),
    };
    CriterionOutcome {
        id,
        name,
        pass,
        seconds: t0.elapsed().as_secs_f64(),
        details,
    }
}

// ---------------------------------------------------------------------------
// criterion 1
// ---------------------------------------------------------------------------

/// Streams the max error against a closed form over all live slices,
/// sampling the (t, ξ) parameters with a small stride.
struct ClosedFormObserver {
    cf: ClosedTheta,
    stride: usize,
    max_err: f64,
    sup_cf: f64,
}

impl MarchObserver for ClosedFormObserver {
    fn on_level(&mut self, view: &LevelView<'_>) {
        let nx = view.grid.space.n;
        let knots = view.grid.time.knots();
        let s = view.s;
        for t_idx in (0..=view.s_idx).step_by(self.stride) {
            let t = knots[t_idx];
            for k in (0..nx).step_by(self.stride) {
                let xi = view.grid.space.point(k);
                let line = view.slice(t_idx, k);
                for l in 0..nx {
                    let want = (self.cf)(t, s, xi, view.grid.space.point(l));
                    self.max_err = self.max_err.max((line[l] - want).abs());
                    self.sup_cf = self.sup_cf.max(want.abs());
                }
            }
        }
    }
}

fn oracle_scale(quick: bool) -> (usize, usize) {
    if quick {
        (50, 101)
    } else {
        (200, 401)
    }
}

fn c1_oracles(quick: bool) -> Result<(bool, Vec<String>), String> {
    let (steps, points) = oracle_scale(quick);
    let mut details = Vec::new();
    let mut pass = true;
    for name in [
        "heat-terminal-x",
        "constant-g",
        "diagonal-exponential",
        "t-linear-g",
        "type2-unit-zeta",
    ] {
        let entry = catalog_entry(name).map_err(|e| e.to_string())?;
        let grid = TriangleGrid::uniform(entry.horizon(), steps, 8.0, points)
            .map_err(|e| e.to_string())?;
        let cf = entry.closed_form_theta.clone().expect("oracle closed form");
        let started = Instant::now();
        let rel = match &entry.problem {
            Problem::WithoutTranspose(p) => {
                let mut obs = ClosedFormObserver {
                    cf,
                    stride: 3,
                    max_err: 0.0,
                    sup_cf: 0.0,
                };
                let opts = Type1Options {
                    t_store: StoreSelect::None,
                    s_store: StoreSelect::None,
                };
                solve_type1_fd_with(p, &grid, &opts, &mut obs).map_err(|e| e.to_string())?;
                obs.max_err / obs.sup_cf.max(1e-300)
            }
            Problem::WithTranspose(p) => {
                let opts = Type2Options {
                    t1: Type1Options {
                        t_store: StoreSelect::Stride(16),
                        s_store: StoreSelect::Stride(8),
                    },
                    ..Default::default()
                };
                let sol = solve_type2(p, &grid, &opts).map_err(|e| e.to_string())?;
                theta_gamma_error(
                    &sol,
                    &cf,
                    entry.closed_form_gamma.as_ref().expect("gamma closed form"),
                )
            }
        };
        let secs = started.elapsed().as_secs_f64();
        let ok = rel <= 1e-3 && secs <= 120.0;
        pass &= ok;
        details.push(format!(
            "{name}: max rel error {rel:.3e} (≤ 1e-3), {secs:.1} s (≤ 120) -> {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok((pass, details))
}

fn theta_gamma_error(sol: &MildSolution, cft: &ClosedTheta, cfg: &ClosedGamma) -> f64 {
    let grid = &sol.theta.grid;
    let knots = grid.time.knots();
    let nx = grid.space.n;
    let mut err = 0.0f64;
    let mut sup = 0.0f64;
    // stored 4-d blocks
    for blk in &sol.theta.blocks {
        let t = knots[blk.t_idx];
        for &s_idx in &blk.s_indices {
            let s = knots[s_idx];
            for k in (0..nx).step_by(2) {
                let xi = grid.space.point(k);
                for l in 0..nx {
                    let x = grid.space.point(l);
                    let want = cft(t, s, xi, x);
                    let got = sol.theta.value(blk.t_idx, s_idx, xi, x, 0).unwrap();
                    err = err.max((got - want).abs());
                    sup = sup.max(want.abs());
                }
            }
        }
    }
    // diagonal at full resolution
    for (s_idx, &s) in knots.iter().enumerate() {
        for l in 0..nx {
            let x = grid.space.point(l);
            let want = cft(s, s, x, x);
            err = err.max((sol.theta.diag_row(s_idx)[l] - want).abs());
            sup = sup.max(want.abs());
        }
    }
    // sub-diagonal extension
    for t_idx in (0..knots.len()).step_by(4) {
        for s_idx in (0..=t_idx).step_by(2) {
            let row = sol.gamma.row(t_idx, s_idx);
            for l in 0..nx {
                let want = cfg(knots[t_idx], knots[s_idx], grid.space.point(l));
                err = err.max((row[l] - want).abs());
                sup = sup.max(want.abs());
            }
        }
    }
    err / sup.max(1e-300)
}

// ---------------------------------------------------------------------------
// criterion 2
// ---------------------------------------------------------------------------

/// Streams the spread of the live field across the (t, ξ) parameters.
struct SpreadObserver {
    spread: f64,
}

impl MarchObserver for SpreadObserver {
    fn on_level(&mut self, view: &LevelView<'_>) {
        let nx = view.grid.space.n;
        for l in 0..nx {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for t_idx in 0..=view.s_idx {
                for k in 0..nx {
                    let v = view.slice(t_idx, k)[l];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if hi > lo {
                self.spread = self.spread.max(hi - lo);
            }
        }
    }
}

fn c2_reduction(quick: bool) -> Result<(bool, Vec<String>), String> {
    let (steps, points) = if quick { (40, 81) } else { (100, 201) };
    let entry = catalog_entry("bsde-reduction").map_err(|e| e.to_string())?;
    let p = entry.problem.type1().unwrap();
    let grid =
        TriangleGrid::uniform(p.horizon, steps, 8.0, points).map_err(|e| e.to_string())?;
    let mut obs = SpreadObserver { spread: 0.0 };
    let opts = Type1Options {
        t_store: StoreSelect::None,
        s_store: StoreSelect::None,
    };
    let field = solve_type1_fd_with(p, &grid, &opts, &mut obs).map_err(|e| e.to_string())?;

    // standalone one-parameter backward solve of the same data
    let terminal = terminal_line(&grid.space, 1, |x, out| {
        let mut v = [0.0];
        p.psi.at(0.0, 0.0, x, &mut v);
        out[0] = v[0];
    });
    let (b, sigma) = p.model.scalar_parts().map_err(|e| e.to_string())?;
    let standalone = solve_semilinear_parabolic(
        b.as_ref(),
        sigma.as_ref(),
        p.g.as_ref(),
        &terminal,
        &grid.time,
        &grid.space,
    )
    .map_err(|e| e.to_string())?;
    let mut diag_diff = 0.0f64;
    for s_idx in 0..grid.time.len() {
        for l in 0..grid.space.n {
            diag_diff = diag_diff
                .max((field.diag_row(s_idx)[l] - standalone.at(s_idx, l, 0)).abs());
        }
    }
    let spread_ok = obs.spread <= 10.0 * field.scheme_tol;
    let diag_ok = diag_diff <= 1e-4;
    Ok((
        spread_ok && diag_ok,
        vec![
            format!(
                "(t,ξ)-spread {:.3e} ≤ 10×scheme tol {:.3e} -> {}",
                obs.spread,
                10.0 * field.scheme_tol,
                if spread_ok { "ok" } else { "FAIL" }
            ),
            format!(
                "diagonal vs one-parameter solve {:.3e} ≤ 1e-4 -> {}",
                diag_diff,
                if diag_ok { "ok" } else { "FAIL" }
            ),
        ],
    ))
}

// ---------------------------------------------------------------------------
// criterion 3
// ---------------------------------------------------------------------------

fn c3_cascade(quick: bool) -> Result<(bool, Vec<String>), String> {
    let (steps, points, paths) = if quick { (64, 61, 400) } else { (128, 121, 2000) };
    let entry = catalog_entry("cascade-bench").map_err(|e| e.to_string())?;
    let p = entry.problem.type1().unwrap();
    let grid = TriangleGrid::uniform(p.horizon, steps, 6.0, points).map_err(|e| e.to_string())?;
    let eval_stride = steps / 32;
    let opts = Type1Options {
        t_store: StoreSelect::Stride(eval_stride),
        s_store: StoreSelect::Stride(eval_stride),
    };
    let reference = solve_type1_fd_with(p, &grid, &opts, &mut NoObserver).map_err(|e| e.to_string())?;
    let ens_grid = TimeGrid::uniform(0.0, p.horizon, 32).map_err(|e| e.to_string())?;
    let ens = simulate(&p.model, &[0.0], &ens_grid, paths, 31415).map_err(|e| e.to_string())?;
    let sweep =
        cascade_sweep(p, &reference, &grid, &[4, 8, 16, 32], &ens).map_err(|e| e.to_string())?;
    let l2_ok = sweep.slope_l2 >= 1.7;
    let jump_ok = sweep.slope_jump >= 0.8;
    let mut details = vec![
        format!(
            "L² error slope {:.2} ≥ 1.7 (bound exponent 2) -> {}",
            sweep.slope_l2,
            if l2_ok { "ok" } else { "FAIL" }
        ),
        format!(
            "mean jump slope {:.2} ≥ 0.8 (bound exponent 1) -> {}",
            sweep.slope_jump,
            if jump_ok { "ok" } else { "FAIL" }
        ),
        format!("adjacent-level slope {:.2} (upper bound allows ≥ 1)", sweep.slope_adjacent),
    ];
    for r in &sweep.reports {
        details.push(format!(
            "N={:>2}: mesh {:.4}, L² {:.3e}, mean jump {:.3e}",
            r.n, r.mesh, r.l2_total, r.mean_jump
        ));
    }
    Ok((l2_ok && jump_ok, details))
}

// ---------------------------------------------------------------------------
// criteria 4 and 5
// ---------------------------------------------------------------------------

struct RateGate {
    slope: f64,
    max_rms: f64,
    fine_rms: f64,
}

impl RateGate {
    /// Residuals must vanish under refinement at the Itô rate where the
    /// stochastic-sum error dominates; machine-exact and super-convergent
    /// problems satisfy the underlying claim trivially and are labelled.
    fn verdict(&self) -> (bool, &'static str) {
        if self.max_rms < 1e-8 {
            (true, "exact (machine floor; slope exempt)")
        } else if (0.35..=0.65).contains(&self.slope) {
            (true, "Itô rate")
        } else if self.slope > 0.65 {
            (true, "super-convergent (deterministic remainder)")
        } else {
            (false, "rate too shallow")
        }
    }
}

fn path_scale(quick: bool) -> (usize, usize, Vec<usize>) {
    if quick {
        (100, 51, vec![25, 50, 100])
    } else {
        (200, 101, vec![50, 100, 200])
    }
}

fn c4_representation(quick: bool) -> Result<(bool, Vec<String>), String> {
    let (steps, points, ens_steps) = path_scale(quick);
    let n_paths = if quick { 2000 } else { 10_000 };
    let mut details = Vec::new();
    let mut pass = true;
    let mut sine_genuine = false;
    let t_stride = steps / 25;

    for name in [
        "heat-terminal-x",
        "constant-g",
        "diagonal-exponential",
        "t-linear-g",
        "sine-terminal",
        "type2-unit-zeta",
    ] {
        let entry = catalog_entry(name).map_err(|e| e.to_string())?;
        let grid = TriangleGrid::uniform(entry.horizon(), steps, 8.0, points)
            .map_err(|e| e.to_string())?;
        let opts = Type1Options {
            t_store: StoreSelect::Stride(t_stride),
            s_store: StoreSelect::All,
        };
        enum Solved {
            T1(ThetaField, bsvie::model::TypeIProblem),
            T2(MildSolution, bsvie::model::TypeIIProblem),
        }
        let solved = match &entry.problem {
            Problem::WithoutTranspose(p) => Solved::T1(
                solve_type1_fd_with(p, &grid, &opts, &mut NoObserver).map_err(|e| e.to_string())?,
                p.clone(),
            ),
            Problem::WithTranspose(p) => {
                let t2opts = Type2Options {
                    t1: opts.clone(),
                    ..Default::default()
                };
                Solved::T2(
                    solve_type2(p, &grid, &t2opts).map_err(|e| e.to_string())?,
                    p.clone(),
                )
            }
        };
        let model = match &entry.problem {
            Problem::WithoutTranspose(p) => p.model.clone(),
            Problem::WithTranspose(p) => p.model.clone(),
        };
        let mut dts = Vec::new();
        let mut rmss = Vec::new();
        for &es in &ens_steps {
            let ens_grid = TimeGrid::uniform(0.0, entry.horizon(), es).map_err(|e| e.to_string())?;
            let ens =
                simulate(&model, &[0.0], &ens_grid, n_paths, 4242).map_err(|e| e.to_string())?;
            let stats = match &solved {
                Solved::T1(field, p) => {
                    let pair = evaluate_type1(field, &model, &ens).map_err(|e| e.to_string())?;
                    pair.check_exclusions().map_err(|e| e.to_string())?;
                    bsvie_residual_type1(p, &pair, &ens).map_err(|e| e.to_string())?
                }
                Solved::T2(sol, p) => {
                    let pair = evaluate_type2(sol, &model, &ens).map_err(|e| e.to_string())?;
                    pair.check_exclusions().map_err(|e| e.to_string())?;
                    bsvie_residual_type2(p, &sol.gamma, &pair, &ens).map_err(|e| e.to_string())?
                }
            };
            dts.push(entry.horizon() / es as f64);
            rmss.push(stats.rms_total);
        }
        let gate = RateGate {
            slope: loglog_slope(&dts, &rmss),
            max_rms: rmss.iter().cloned().fold(0.0, f64::max),
            fine_rms: *rmss.last().unwrap(),
        };
        let level_ok = gate.fine_rms <= 5e-2;
        let (slope_ok, label) = gate.verdict();
        if name == "sine-terminal" && (0.35..=0.65).contains(&gate.slope) {
            sine_genuine = true;
        }
        pass &= level_ok && slope_ok;
        details.push(format!(
            "{name}: rms {} slope {:.2} [{label}], fine rms {:.2e} ≤ 5e-2 -> {}",
            rmss.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>().join("/"),
            gate.slope,
            gate.fine_rms,
            if level_ok && slope_ok { "ok" } else { "FAIL" }
        ));
    }
    if !sine_genuine {
        pass = false;
        details.push("no problem exhibited the genuine Itô rate".into());
    }
    Ok((pass, details))
}

fn c5_mconstraint(quick: bool) -> Result<(bool, Vec<String>), String> {
    let (steps, points, ens_steps) = path_scale(quick);
    let n_paths = if quick { 2000 } else { 10_000 };
    let mut details = Vec::new();
    let mut pass = true;

    // the catalog with-transpose oracle
    let entry = catalog_entry("type2-unit-zeta").map_err(|e| e.to_string())?;
    let p2 = entry.problem.type2().unwrap();
    let grid = TriangleGrid::uniform(p2.horizon, steps, 8.0, points).map_err(|e| e.to_string())?;
    let t2opts = Type2Options {
        t1: Type1Options {
            t_store: StoreSelect::Stride(steps / 25),
            s_store: StoreSelect::All,
        },
        ..Default::default()
    };
    let sol = solve_type2(p2, &grid, &t2opts).map_err(|e| e.to_string())?;

    let model = p2.model.clone();
    let run_pair =
        |make: &dyn Fn(&PathEnsemble) -> Result<SolutionPair, String>| -> Result<(f64, f64, f64), String> {
            let mut dts = Vec::new();
            let mut centered = Vec::new();
            let mut biases: Vec<f64> = Vec::new();
            for &es in &ens_steps {
                let ens_grid =
                    TimeGrid::uniform(0.0, p2.horizon, es).map_err(|e| e.to_string())?;
                let ens = simulate(&model, &[0.0], &ens_grid, n_paths, 777)
                    .map_err(|e| e.to_string())?;
                let pair = make(&ens)?;
                let stats = msolution_residual(&pair, &ens).map_err(|e| e.to_string())?;
                dts.push(p2.horizon / es as f64);
                centered.push(stats.rms_centered);
                biases.push(stats.rms_bias);
            }
            Ok((
                loglog_slope(&dts, &centered),
                centered.iter().cloned().fold(0.0, f64::max),
                biases.iter().cloned().fold(0.0, f64::max),
            ))
        };

    let (slope, max_c, bias) = run_pair(&|ens| {
        evaluate_type2(&sol, &model, ens).map_err(|e| e.to_string())
    })?;
    let gate = RateGate {
        slope,
        max_rms: max_c,
        fine_rms: max_c,
    };
    let (ok, label) = gate.verdict();
    pass &= ok;
    details.push(format!(
        "type2-unit-zeta: centered rms slope {slope:.2} [{label}], max centered {max_c:.2e}, plug-in bias {bias:.2e} -> {}",
        if ok { "ok" } else { "FAIL" }
    ));

    // Λ(t,x) = x² probe: the martingale identity with an explicit extension
    let (b, sg) = model.scalar_parts().map_err(|e| e.to_string())?;
    let u = GridFn2::from_fn(grid.time.clone(), grid.space.clone(), |_t, x| x * x);
    let gamma = gamma_from_diagonal(&u, b.as_ref(), sg.as_ref(), &grid, GammaBackend::FiniteDifference)
        .map_err(|e| e.to_string())?;
    let (slope, max_c, bias) = run_pair(&|ens| {
        evaluate_lambda_probe(&|_t, x| x * x, &gamma, &model, ens).map_err(|e| e.to_string())
    })?;
    let probe_ok = (0.35..=0.65).contains(&slope);
    pass &= probe_ok;
    details.push(format!(
        "x² probe: centered rms slope {slope:.2} ∈ [0.35, 0.65], max centered {max_c:.2e}, bias {bias:.2e} -> {}",
        if probe_ok { "ok" } else { "FAIL" }
    ));

    // the probe's sub-diagonal block is 2 X(s) within interpolation error
    let ens_grid = TimeGrid::uniform(0.0, p2.horizon, *ens_steps.last().unwrap())
        .map_err(|e| e.to_string())?;
    let ens = simulate(&model, &[0.0], &ens_grid, 256, 99).map_err(|e| e.to_string())?;
    let pair = evaluate_lambda_probe(&|_t, x| x * x, &gamma, &model, &ens)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for path in 0..ens.n_paths {
        if pair.excluded[path] {
            continue;
        }
        for (tl, &ti) in pair.t_set.iter().enumerate().step_by(5) {
            for j in 0..ti {
                let want = 2.0 * ens.state1(path, j);
                worst = worst.max((pair.z_lo(path, tl, j, 0).map_err(|e| e.to_string())? - want).abs());
            }
        }
    }
    let z_ok = worst <= 1e-3;
    pass &= z_ok;
    details.push(format!(
        "x² probe sub-diagonal block vs 2X(s): max defect {worst:.2e} ≤ 1e-3 -> {}",
        if z_ok { "ok" } else { "FAIL" }
    ));

    Ok((pass, details))
}

// ---------------------------------------------------------------------------
// criterion 6
// ---------------------------------------------------------------------------

fn c6_kernel() -> Result<(bool, Vec<String>), String> {
    let mut details = Vec::new();
    let mut pass = true;

    // normalization by plain trapezoid
    let mut worst_mass = 0.0f64;
    for (a, b, delta) in [(0.5, 0.0, 1.0), (0.8, 0.4, 0.5), (0.3, -0.2, 0.25)] {
        let p = KernelParams::new(a, b, 8.0, 0.02, 1.0).map_err(|e| e.to_string())?;
        let x = 0.1;
        let n = 1601usize;
        let h = 2.0 * p.radius / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let eta = x - p.radius + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * gaussian_kernel(0.0, x, delta, eta, &p).map_err(|e| e.to_string())? * h;
        }
        worst_mass = worst_mass.max((acc - 1.0).abs());
    }
    let mass_ok = worst_mass <= 1e-6;
    pass &= mass_ok;
    details.push(format!(
        "normalization defect {worst_mass:.2e} ≤ 1e-6 -> {}",
        if mass_ok { "ok" } else { "FAIL" }
    ));

    // Chapman–Kolmogorov through the exact-PL convolution
    let p = KernelParams::new(0.5, 0.3, 8.0, 0.005, 1.0).map_err(|e| e.to_string())?;
    let grid = bsvie::grid::SpaceGrid::symmetric(8.0, 3201).map_err(|e| e.to_string())?;
    let (s, r, tau) = (0.0, 0.4, 1.0);
    let mut worst_ck = 0.0f64;
    for &x in &[-1.0, 0.3, 2.0] {
        for &eta in &[-0.5, 0.8, 1.7] {
            let inner: Vec<f64> = grid
                .points()
                .iter()
                .map(|&u| gaussian_kernel(r, u, tau, eta, &p).unwrap())
                .collect();
            let mut out = [0.0];
            bsvie::kernel::gaussian_convolve(
                x + p.b * (r - s),
                2.0 * p.a * (r - s),
                &grid,
                &inner,
                1,
                &mut out,
            );
            let want = gaussian_kernel(s, x, tau, eta, &p).unwrap();
            worst_ck = worst_ck.max((out[0] - want).abs());
        }
    }
    let ck_ok = worst_ck <= 1e-5;
    pass &= ck_ok;
    details.push(format!(
        "Chapman–Kolmogorov defect {worst_ck:.2e} ≤ 1e-5 -> {}",
        if ck_ok { "ok" } else { "FAIL" }
    ));

    // decay bounds with fitted constants
    let p = KernelParams::new(0.5, 0.0, 8.0, 0.02, 1.0).map_err(|e| e.to_string())?;
    let at_eighth = fit_bound_constants(&p, 1.0, 0.125).map_err(|e| e.to_string())?;
    let fitted = fit_lambda(&p, 1.0, 50.0).map_err(|e| e.to_string())?;
    let bounds_ok = at_eighth.k_max().is_finite()
        && at_eighth.k_max() < 10.0
        && fitted.lambda >= 0.125;
    pass &= bounds_ok;
    details.push(format!(
        "bounds at λ=1/8: K ≤ {:.3}; fitted λ = {:.3} (K {:.3}) -> {}",
        at_eighth.k_max(),
        fitted.lambda,
        fitted.k_max(),
        if bounds_ok { "ok" } else { "FAIL" }
    ));

    Ok((pass, details))
}

// ---------------------------------------------------------------------------
// criterion 7
// ---------------------------------------------------------------------------

fn c7_picard(quick: bool) -> Result<(bool, Vec<String>), String> {
    // the agreement budget is the sum of the Heun constant and the
    // trapezoid constant, both ~ (T-s) dt² e/6: 32 steps leave 3x margin
    let (steps, points) = if quick { (24, 41) } else { (32, 49) };
    let mut details = Vec::new();
    let mut pass = true;

    // contraction ratios on converged windows
    let entry = catalog_entry("diagonal-exponential").map_err(|e| e.to_string())?;
    let p = entry.problem.type1().unwrap();
    let grid = TriangleGrid::uniform(p.horizon, steps, 6.0, points).map_err(|e| e.to_string())?;
    let (_, report) =
        solve_type1_picard(p, &grid, &PicardOptions::default()).map_err(|e| e.to_string())?;
    let worst_ratio = report
        .windows
        .iter()
        .flat_map(|w| w.ratios.iter().copied())
        .fold(0.0f64, f64::max);
    let ratio_ok = worst_ratio < 1.0;
    pass &= ratio_ok;
    details.push(format!(
        "max update ratio {worst_ratio:.3} < 1 over {} windows of {} knots -> {}",
        report.windows.len(),
        report.window_knots,
        if ratio_ok { "ok" } else { "FAIL" }
    ));

    // halving the window shrinks the probe ratio
    let full = contraction_probe(p, &grid, 0, steps, 7).map_err(|e| e.to_string())?;
    let half = contraction_probe(p, &grid, steps / 2, steps, 7).map_err(|e| e.to_string())?;
    let halve_ok = half < full;
    pass &= halve_ok;
    details.push(format!(
        "probe ratio {full:.3} -> {half:.3} when the window halves -> {}",
        if halve_ok { "ok" } else { "FAIL" }
    ));

    // cross-backend agreement on constant-coefficient problems
    for name in ["heat-terminal-x", "constant-g", "diagonal-exponential", "t-linear-g"] {
        let entry = catalog_entry(name).map_err(|e| e.to_string())?;
        let p = entry.problem.type1().unwrap();
        let grid =
            TriangleGrid::uniform(p.horizon, steps, 6.0, points).map_err(|e| e.to_string())?;
        let sup = backend_agreement(p, &grid).map_err(|e| e.to_string())?;
        let ok = sup <= 2e-3;
        pass &= ok;
        details.push(format!(
            "{name}: backends agree within {sup:.2e} ≤ 2e-3 -> {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }

    // with-transpose outer loop at ζ-Lipschitz constant 1/2
    let entry = catalog_entry("type2-contraction").map_err(|e| e.to_string())?;
    let p2 = entry.problem.type2().unwrap();
    let grid2 = TriangleGrid::uniform(p2.horizon, if quick { 20 } else { 40 }, 8.0, 81)
        .map_err(|e| e.to_string())?;
    let sol = solve_type2(p2, &grid2, &Type2Options::default()).map_err(|e| e.to_string())?;
    let outer_ok = sol.updates.len() <= 15;
    pass &= outer_ok;
    details.push(format!(
        "outer loop converged in {} sweeps (≤ 15) at L_ζ = 0.5, updates {:?} -> {}",
        sol.updates.len(),
        sol.updates.iter().map(|u| format!("{u:.1e}")).collect::<Vec<_>>(),
        if outer_ok { "ok" } else { "FAIL" }
    ));

    Ok((pass, details))
}

// ---------------------------------------------------------------------------
// criterion 8
// ---------------------------------------------------------------------------

/// Finite-window log-log fits sit slightly below the bound exponents even
/// for exact solutions (curvature of w ↦ (1-e^{-aw})/a), so the gate allows
/// a 0.05 fit margin; the pointwise bound ratios are also reported.
const SLOPE_FIT_TOL: f64 = 0.05;

fn c8_window_scaling() -> Result<(bool, Vec<String>), String> {
    use bsvie::coeff::Const;
    use bsvie::norms::window_scaling_probe;
    let space = bsvie::grid::SpaceGrid::symmetric(6.0, 121).map_err(|e| e.to_string())?;
    let windows = [0.2, 0.1, 0.05];
    let alpha = 0.5;
    let mut details = Vec::new();
    let mut pass = true;

    // f ≡ 1: |ṽ|⁰ = w exactly
    let t = window_scaling_probe(0.0, 1.0, &Const(1.0), &windows, 1.0, 64, &space, alpha)
        .map_err(|e| e.to_string())?;
    let ok = (t.slope_sup - 1.0).abs() < 1e-6;
    pass &= ok;
    details.push(format!(
        "f ≡ 1: sup slope {:.4} (exponent 1, exact) -> {}",
        t.slope_sup,
        if ok { "ok" } else { "FAIL" }
    ));

    // f = sin(x): exponents 1, (1+α)/2, α/2
    let sin_src = |_s: f64, x: f64| x.sin();
    let t = window_scaling_probe(0.0, 1.0, &sin_src, &windows, 1.0, 64, &space, alpha)
        .map_err(|e| e.to_string())?;
    let checks = [
        ("sup", t.slope_sup, 1.0),
        ("gradient sup", t.slope_dx, (1.0 + alpha) / 2.0),
        ("1+α norm", t.slope_1_alpha, alpha / 2.0),
    ];
    for (label, slope, exponent) in checks {
        let ok = slope >= exponent - SLOPE_FIT_TOL;
        pass &= ok;
        details.push(format!(
            "f = sin: {label} slope {slope:.3} ≥ {exponent} - {SLOPE_FIT_TOL} -> {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }
    // pointwise upper-bound ratios stay bounded across the windows
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = 0.0f64;
    for row in &t.rows {
        let r = row.sup / row.window;
        ratio_lo = ratio_lo.min(r);
        ratio_hi = ratio_hi.max(r);
    }
    details.push(format!(
        "f = sin: sup/w ratio in [{ratio_lo:.3}, {ratio_hi:.3}] (finite K)"
    ));

    Ok((pass, details))
}
