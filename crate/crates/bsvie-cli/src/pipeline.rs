//! Batch pipelines behind the `run` subcommand: config-driven
//! solve → evaluate → verify, the refinement sweep, and the suite runner.
//! Every CSV row carries the config hash; wall-clock times go to the
//! manifest only, so CSV bodies are byte-stable for a fixed config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;

use bsvie::cascade::cascade_sweep;
use bsvie::grid::{StoreSelect, TriangleGrid};
use bsvie::math::halving_order;
use bsvie::model::{validate_type1, validate_type2, Problem};
use bsvie::pde_type1::{solve_type1_fd_with, NoObserver, ThetaField, Type1Options};
use bsvie::pde_type2::{solve_type2, window_norm_y, GammaBackend, Type2Options};
use bsvie::picard::{solve_type1_picard, PicardOptions};
use bsvie::repr::{bsvie_residual_type1, bsvie_residual_type2, evaluate_type1, evaluate_type2, msolution_residual};
use bsvie::sde::simulate;

use crate::config::{self, BackendSpec, BuiltExperiment, ExperimentConfig};
use crate::io::{self, fmt};

/// Exit-code contract of the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    VerificationFailure,
    ConfigError,
    NumericalFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::VerificationFailure => 1,
            Outcome::ConfigError => 2,
            Outcome::NumericalFailure => 3,
        }
    }
}

fn numerical(e: &bsvie::Error) -> bool {
    matches!(
        e,
        bsvie::Error::NonFiniteCoefficient { .. }
            | bsvie::Error::NonFiniteState { .. }
            | bsvie::Error::NonFiniteField { .. }
            | bsvie::Error::TridiagonalSingular { .. }
            | bsvie::Error::NoContraction { .. }
            | bsvie::Error::MaxIterExceeded { .. }
    )
}

pub struct RunReport {
    pub outcome: Outcome,
    pub messages: Vec<String>,
}

/// Runs the acceptance suite, printing one line per criterion and writing
/// the results table.
pub fn run_suite(name: &str, out_dir: &Path) -> anyhow::Result<RunReport> {
    let quick = match name {
        "acceptance" => false,
        "acceptance-quick" => true,
        other => {
            return Ok(RunReport {
                outcome: Outcome::ConfigError,
                messages: vec![format!("unknown suite '{other}'")],
            })
        }
    };
    std::fs::create_dir_all(out_dir)?;
    let t0 = Instant::now();
    let outcomes = crate::acceptance::run_all(quick);
    let mut rows = Vec::new();
    let mut walls = BTreeMap::new();
    let mut messages = Vec::new();
    for o in &outcomes {
        println!("{}", o.line());
        for d in &o.details {
            println!("    {d}");
        }
        messages.push(format!("criterion {}: {}", o.id, if o.pass { "pass" } else { "fail" }));
        walls.insert(format!("criterion_{}", o.id), o.seconds);
        rows.push(vec![
            o.id.to_string(),
            o.name.to_string(),
            if o.pass { "pass" } else { "fail" }.to_string(),
            o.details.join("; ").replace(',', ";"),
        ]);
    }
    io::write_csv(&out_dir.join("acceptance.csv"), &["criterion", "name", "status", "details"], rows)?;
    let pass = outcomes.iter().all(|o| o.pass);
    io::write_manifest(
        &out_dir.join("manifest.json"),
        &io::Manifest {
            config_hash: format!("suite:{name}"),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: 0,
            threads: rayon::current_num_threads(),
            wall_seconds: {
                walls.insert("total".into(), t0.elapsed().as_secs_f64());
                walls
            },
            outputs: vec!["acceptance.csv".into()],
            pass,
        },
    )?;
    Ok(RunReport {
        outcome: if pass { Outcome::Pass } else { Outcome::VerificationFailure },
        messages,
    })
}

/// Refinement sweep: solves a catalog problem on doubling step counts and
/// reports the error against the closed form (or the finest level) with the
/// observed order.
pub fn run_refine(
    problem: &str,
    backend: BackendSpec,
    refine: usize,
    seed: u64,
    out_dir: &Path,
) -> anyhow::Result<RunReport> {
    std::fs::create_dir_all(out_dir)?;
    let entry = match bsvie::model::catalog_entry(problem) {
        Ok(e) => e,
        Err(e) => {
            return Ok(RunReport {
                outcome: Outcome::ConfigError,
                messages: vec![e.to_string()],
            })
        }
    };
    let cfg = ExperimentConfig {
        problem: config::ProblemSpec {
            catalog: Some(problem.to_string()),
            compose: None,
        },
        grid: config::GridSpec {
            steps: 25,
            radius: 6.0,
            points: 41,
            alpha: 0.5,
        },
        ensemble: config::EnsembleSpec {
            seed,
            ..Default::default()
        },
        run: config::RunSpec {
            backend,
            refine,
            ..Default::default()
        },
    };
    let hash = config::config_hash(&cfg)?;

    let base_steps = cfg.grid.steps;
    let mut diags: Vec<(TriangleGrid, Vec<f64>)> = Vec::new();
    for level in 0..refine.max(1) {
        let steps = base_steps << level;
        let grid = TriangleGrid::uniform(entry.horizon(), steps, cfg.grid.radius, cfg.grid.points)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let diag = match (&entry.problem, backend) {
            (Problem::WithoutTranspose(p), BackendSpec::Fd) => {
                let opts = Type1Options {
                    t_store: StoreSelect::None,
                    s_store: StoreSelect::None,
                };
                solve_type1_fd_with(p, &grid, &opts, &mut NoObserver)
                    .map_err(|e| anyhow::anyhow!("{e}"))?
                    .diag
            }
            (Problem::WithoutTranspose(p), BackendSpec::Picard | BackendSpec::Kernel) => {
                solve_type1_picard(p, &grid, &PicardOptions::default())
                    .map_err(|e| anyhow::anyhow!("{e}"))?
                    .0
                    .diag
            }
            (Problem::WithTranspose(p), _) => {
                let opts = Type2Options {
                    gamma_backend: if backend == BackendSpec::Kernel {
                        GammaBackend::Kernel
                    } else {
                        GammaBackend::FiniteDifference
                    },
                    t1: Type1Options {
                        t_store: StoreSelect::None,
                        s_store: StoreSelect::None,
                    },
                    ..Default::default()
                };
                solve_type2(p, &grid, &opts)
                    .map_err(|e| anyhow::anyhow!("{e}"))?
                    .theta
                    .diag
            }
        };
        diags.push((grid, diag));
    }

    // per-level sup error of the diagonal
    let errors: Vec<f64> = diags
        .iter()
        .map(|(grid, diag)| match &entry.closed_form_theta {
            Some(cf) => {
                let nx = grid.space.n;
                let mut err = 0.0f64;
                for (s_idx, &s) in grid.time.knots().iter().enumerate() {
                    for l in 0..nx {
                        let x = grid.space.point(l);
                        err = err.max((diag[s_idx * nx + l] - cf(s, s, x, x)).abs());
                    }
                }
                err
            }
            None => {
                let (fg, fd) = diags.last().unwrap();
                let stride = fg.time.steps() / grid.time.steps();
                let nx = grid.space.n;
                let mut err = 0.0f64;
                for s_idx in 0..grid.time.len() {
                    for l in 0..nx {
                        err = err.max(
                            (diag[s_idx * nx + l] - fd[(s_idx * stride) * nx + l]).abs(),
                        );
                    }
                }
                err
            }
        })
        .collect();

    let mut rows = Vec::new();
    for (level, ((grid, _), err)) in diags.iter().zip(&errors).enumerate() {
        let order = if level == 0 {
            String::new()
        } else {
            fmt(halving_order(errors[level - 1], *err))
        };
        rows.push(vec![
            level.to_string(),
            grid.time.steps().to_string(),
            fmt(grid.time.knots()[1] - grid.time.knots()[0]),
            fmt(*err),
            order,
            hash.clone(),
        ]);
    }
    io::write_csv(
        &out_dir.join("convergence.csv"),
        &["level", "steps", "dt", "sup_error", "order", "config_hash"],
        rows,
    )?;
    io::write_manifest(
        &out_dir.join("manifest.json"),
        &io::Manifest {
            config_hash: hash,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads: rayon::current_num_threads(),
            wall_seconds: BTreeMap::new(),
            outputs: vec!["convergence.csv".into()],
            pass: true,
        },
    )?;
    Ok(RunReport {
        outcome: Outcome::Pass,
        messages: vec![format!("{} refinement levels written", refine.max(1))],
    })
}

/// Full config-driven pipeline: validate, solve, simulate, evaluate, verify.
pub fn run_config(path: &Path, out_override: Option<PathBuf>, seed_override: Option<u64>) -> anyhow::Result<RunReport> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return Ok(RunReport {
                outcome: Outcome::ConfigError,
                messages: vec![format!("cannot read {path:?}: {e}")],
            })
        }
    };
    let cfg = match config::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            return Ok(RunReport {
                outcome: Outcome::ConfigError,
                messages: vec![format!("{e:#}")],
            })
        }
    };
    let mut built = match config::build(&cfg) {
        Ok(b) => b,
        Err(e) => {
            return Ok(RunReport {
                outcome: Outcome::ConfigError,
                messages: vec![format!("{e:#}")],
            })
        }
    };
    if let Some(seed) = seed_override {
        built.config.ensemble.seed = seed;
    }
    let out_dir = out_override.unwrap_or_else(|| PathBuf::from(format!("out-{}", built.name)));
    std::fs::create_dir_all(&out_dir).context("create output directory")?;
    match execute(&built, &out_dir) {
        Ok(report) => Ok(report),
        Err(ExecError::Numerical(msg)) => Ok(RunReport {
            outcome: Outcome::NumericalFailure,
            messages: vec![msg],
        }),
        Err(ExecError::Other(e)) => Err(e),
    }
}

enum ExecError {
    Numerical(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for ExecError {
    fn from(e: anyhow::Error) -> Self {
        ExecError::Other(e)
    }
}

fn core_err(e: bsvie::Error) -> ExecError {
    if numerical(&e) {
        ExecError::Numerical(e.to_string())
    } else {
        ExecError::Other(anyhow::anyhow!("{e}"))
    }
}

fn execute(built: &BuiltExperiment, out_dir: &Path) -> Result<RunReport, ExecError> {
    let cfg = &built.config;
    let hash = config::config_hash(cfg)?;
    let mut walls = BTreeMap::new();
    let mut outputs = Vec::new();
    let mut messages = Vec::new();
    let mut pass = true;

    // validation sweep against the declared constants
    let t0 = Instant::now();
    let vreport = match &built.problem {
        Problem::WithoutTranspose(p) => validate_type1(p, 10_000, cfg.ensemble.seed),
        Problem::WithTranspose(p) => validate_type2(p, 10_000, cfg.ensemble.seed),
    }
    .map_err(core_err)?;
    walls.insert("validate".into(), t0.elapsed().as_secs_f64());
    if !vreport.pass {
        pass = false;
        messages.extend(vreport.messages.iter().cloned());
    }
    messages.push(format!(
        "validation: max quotients model {:.3} / psi {:.3} / g {:.3}, min ellipticity {:.3}",
        vreport.max_quotient_model,
        vreport.max_quotient_psi,
        vreport.max_quotient_g,
        vreport.min_ellipticity
    ));

    // solve
    let t0 = Instant::now();
    let grid = &built.grid;
    let model = match &built.problem {
        Problem::WithoutTranspose(p) => p.model.clone(),
        Problem::WithTranspose(p) => p.model.clone(),
    };
    let store = Type1Options {
        t_store: StoreSelect::Stride((grid.time.steps() / 25).max(1)),
        s_store: StoreSelect::All,
    };
    enum SolvedKind {
        T1(ThetaField),
        T2(bsvie::pde_type2::MildSolution),
    }
    let solved = match (&built.problem, cfg.run.backend) {
        (Problem::WithoutTranspose(p), BackendSpec::Fd) => SolvedKind::T1(
            solve_type1_fd_with(p, grid, &store, &mut NoObserver).map_err(core_err)?,
        ),
        (Problem::WithoutTranspose(p), BackendSpec::Picard | BackendSpec::Kernel) => {
            let (field, report) = solve_type1_picard(p, grid, &PicardOptions::default())
                .map_err(core_err)?;
            let hash_ref = &hash;
            let rows = report.windows.iter().enumerate().flat_map(|(wi, w)| {
                w.updates.iter().enumerate().map(move |(it, u)| {
                    vec![wi.to_string(), it.to_string(), fmt(*u), hash_ref.clone()]
                }).collect::<Vec<_>>()
            });
            io::write_csv(
                &out_dir.join("iterations.csv"),
                &["window", "iteration", "update", "config_hash"],
                rows,
            )?;
            outputs.push("iterations.csv".into());
            SolvedKind::T1(field)
        }
        (Problem::WithTranspose(p), backend) => {
            let opts = Type2Options {
                gamma_backend: if backend == BackendSpec::Kernel {
                    GammaBackend::Kernel
                } else {
                    GammaBackend::FiniteDifference
                },
                tol: cfg.run.tol,
                t1: store.clone(),
                ..Default::default()
            };
            let sol = solve_type2(p, grid, &opts).map_err(core_err)?;
            let hash_ref = &hash;
            let rows = sol.updates.iter().enumerate().map(|(it, u)| {
                vec![it.to_string(), fmt(*u), hash_ref.clone()]
            });
            io::write_csv(
                &out_dir.join("iterations.csv"),
                &["iteration", "update", "config_hash"],
                rows,
            )?;
            outputs.push("iterations.csv".into());
            SolvedKind::T2(sol)
        }
    };
    walls.insert("solve".into(), t0.elapsed().as_secs_f64());

    // export the field and the diagonal
    let theta = match &solved {
        SolvedKind::T1(f) => f,
        SolvedKind::T2(s) => &s.theta,
    };
    match &solved {
        SolvedKind::T1(f) => {
            io::write_theta(&out_dir.join("field.bsve"), f, &hash)?;
            outputs.push("field.bsve".into());
        }
        SolvedKind::T2(s) => {
            io::write_mild(&out_dir.join("field.bsve"), s, &hash)?;
            outputs.push("field.bsve".into());
            let defect = s.coupling_defect();
            messages.push(format!("coupling defect {defect:.3e}"));
            if defect > 100.0 * cfg.run.tol {
                pass = false;
                messages.push("coupling defect exceeds tolerance".into());
            }
        }
    }
    {
        let nx = grid.space.n;
        let hash_ref = &hash;
        let rows = (0..grid.time.len()).flat_map(|s_idx| {
            let s = grid.time.knots()[s_idx];
            let diag = &theta.diag;
            (0..nx)
                .map(move |l| {
                    vec![
                        fmt(s),
                        fmt(grid.space.point(l)),
                        fmt(diag[s_idx * nx + l]),
                        hash_ref.clone(),
                    ]
                })
                .collect::<Vec<_>>()
        });
        io::write_csv(&out_dir.join("diagonal.csv"), &["s", "x", "u", "config_hash"], rows)?;
        outputs.push("diagonal.csv".into());
    }

    // simulate, evaluate, verify
    let t0 = Instant::now();
    let ens = simulate(
        &model,
        &[cfg.ensemble.x0],
        &grid.time,
        cfg.ensemble.n_paths,
        cfg.ensemble.seed,
    )
    .map_err(core_err)?;
    ens.validate().map_err(core_err)?;
    io::write_ensemble(&out_dir.join("ensemble.bsve"), &ens)?;
    outputs.push("ensemble.bsve".into());
    walls.insert("simulate".into(), t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let (pair, stats, mstats) = match &solved {
        SolvedKind::T1(f) => {
            let p = built.problem.type1().unwrap();
            let pair = evaluate_type1(f, &model, &ens).map_err(core_err)?;
            let stats = bsvie_residual_type1(p, &pair, &ens).map_err(core_err)?;
            (pair, stats, None)
        }
        SolvedKind::T2(s) => {
            let p = built.problem.type2().unwrap();
            let pair = evaluate_type2(s, &model, &ens).map_err(core_err)?;
            let stats = bsvie_residual_type2(p, &s.gamma, &pair, &ens).map_err(core_err)?;
            let ms = msolution_residual(&pair, &ens).map_err(core_err)?;
            (pair, stats, Some(ms))
        }
    };
    if pair.check_exclusions().is_err() {
        pass = false;
        messages.push(format!(
            "excluded paths {} of {} exceed the 0.1% budget",
            pair.excluded_count(),
            pair.n_paths
        ));
    }
    let rows = stats.t_set.iter().enumerate().map(|(tl, &ti)| {
        vec![
            fmt(ens.grid.knots()[ti]),
            fmt(stats.per_knot_rms[tl]),
            fmt(stats.per_knot_bias[tl]),
            stats.excluded_paths.to_string(),
            hash.clone(),
        ]
    });
    io::write_csv(
        &out_dir.join("residual.csv"),
        &["t", "rms", "bias", "excluded_paths", "config_hash"],
        rows,
    )?;
    outputs.push("residual.csv".into());
    messages.push(format!(
        "integral-equation residual rms {:.3e} (centered {:.3e})",
        stats.rms_total, stats.rms_centered
    ));
    if stats.rms_total > 5e-2 {
        pass = false;
        messages.push("integral-equation residual above 5e-2".into());
    }
    if let Some(ms) = &mstats {
        let rows = ms.t_set.iter().enumerate().map(|(tl, &ti)| {
            vec![
                fmt(ens.grid.knots()[ti]),
                fmt(ms.per_knot_rms[tl]),
                fmt(ms.per_knot_bias[tl]),
                hash.clone(),
            ]
        });
        io::write_csv(
            &out_dir.join("martingale_residual.csv"),
            &["t", "rms", "bias", "config_hash"],
            rows,
        )?;
        outputs.push("martingale_residual.csv".into());
        messages.push(format!(
            "martingale-constraint residual centered rms {:.3e}, bias {:.3e}",
            ms.rms_centered, ms.rms_bias
        ));
    }
    walls.insert("evaluate".into(), t0.elapsed().as_secs_f64());

    // window norm diagnostic
    if let Ok(norm) = window_norm_y(theta, 0.0, 1.5) {
        messages.push(format!("window norm (p = 1.5): {norm:.4}"));
    }

    // Hölder report of the diagonal over a few windows
    {
        let horizon = grid.time.last();
        let diag_fn = theta.diagonal();
        let mut rows = Vec::new();
        for w in [1.0, 0.5, 0.25] {
            let lo = horizon * (1.0 - w);
            if let Ok(rep) = bsvie::norms::holder_report(&diag_fn, 0, grid.alpha, lo, horizon) {
                rows.push(vec![
                    fmt(lo),
                    fmt(horizon),
                    fmt(rep.sup),
                    fmt(rep.time_seminorm),
                    fmt(rep.space_seminorm),
                    fmt(rep.norm_alpha()),
                    fmt(rep.norm_1_alpha()),
                    fmt(rep.norm_2_alpha()),
                    fmt(rep.min_pair_distance),
                    hash.clone(),
                ]);
            }
        }
        io::write_csv(
            &out_dir.join("holder.csv"),
            &[
                "window_lo",
                "window_hi",
                "sup",
                "time_seminorm",
                "space_seminorm",
                "norm_alpha",
                "norm_1_alpha",
                "norm_2_alpha",
                "min_pair_distance",
                "config_hash",
            ],
            rows,
        )?;
        outputs.push("holder.csv".into());
    }

    // optional cascade sweep
    if !cfg.run.partitions.is_empty() {
        if let Problem::WithoutTranspose(p) = &built.problem {
            let t0 = Instant::now();
            let sweep = cascade_sweep(p, theta, grid, &cfg.run.partitions, &ens)
                .map_err(core_err)?;
            let rows = sweep.reports.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    fmt(r.mesh),
                    fmt(r.l2_total),
                    fmt(r.mean_jump),
                    fmt(r.adjacent_sup_sq),
                    r.excluded_paths.to_string(),
                    hash.clone(),
                ]
            });
            io::write_csv(
                &out_dir.join("cascade.csv"),
                &["n", "mesh", "l2_error", "mean_jump", "adjacent_sup_sq", "excluded_paths", "config_hash"],
                rows,
            )?;
            outputs.push("cascade.csv".into());
            messages.push(format!(
                "cascade slopes: L² {:.2}, jump {:.2}",
                sweep.slope_l2, sweep.slope_jump
            ));
            walls.insert("cascade".into(), t0.elapsed().as_secs_f64());
        } else {
            messages.push("cascade sweep skipped (with-transpose problem)".into());
        }
    }

    io::write_manifest(
        &out_dir.join("manifest.json"),
        &io::Manifest {
            config_hash: hash,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.ensemble.seed,
            threads: rayon::current_num_threads(),
            wall_seconds: walls,
            outputs,
            pass,
        },
    )?;

    Ok(RunReport {
        outcome: if pass { Outcome::Pass } else { Outcome::VerificationFailure },
        messages,
    })
}
