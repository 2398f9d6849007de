//! The partition cascade: per-interval fields Θ^k(s,ξ,x) solved backward
//! with the coupling frozen interval by interval,
//!
//! ```text
//! Θ^k_s + ½σ²Θ^k_xx + bΘ^k_x + g(t_k, s, ξ, x, Y-slot, Θ^k_x σ) = 0,
//!   Y-slot = Θ^ℓ(s,x,x)  on  [t_ℓ, t_{ℓ+1}),  ℓ > k        (already solved)
//!   Y-slot = Θ^k(s,ξ,x)  on  [t_k, t_{k+1})                 (self-coupled)
//! Θ^k(T,ξ,x) = ψ(t_k,ξ,x),
//! ```
//!
//! the assembled piecewise field `Θ^Π(t,·) = Θ^{k(t)}`, the step processes
//! `Y^Π, Z^Π` along paths, and the error measurements against a fine
//! reference: each Θ^k is continuous in s across the internal knots while
//! Θ^Π jumps in t at the knots — the jumps are recorded, never interpolated.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, TriangleGrid};
use crate::math::loglog_slope;
use crate::model::TypeIProblem;
use crate::pde_type1::ThetaField;
use crate::repr::SolutionPair;
use crate::sde::PathEnsemble;
use crate::stepper::{apply_l, d_x, scale_by_sigma, StepContext};

/// Partition 0 = t_0 < … < t_N = T whose knots sit on the solver grid.
#[derive(Debug, Clone)]
pub struct Partition {
    /// Indices of the partition knots in the solver knot vector.
    pub knot_idx: Vec<usize>,
    pub knots: Vec<f64>,
}

impl Partition {
    /// N equal intervals; the solver grid must contain the knots.
    pub fn uniform(time: &TimeGrid, n_intervals: usize) -> Result<Self> {
        if n_intervals == 0 || time.steps() % n_intervals != 0 {
            return Err(Error::GridMismatch(format!(
                "{} solver steps not divisible into {n_intervals} intervals",
                time.steps()
            )));
        }
        let stride = time.steps() / n_intervals;
        let knot_idx: Vec<usize> = (0..=n_intervals).map(|k| k * stride).collect();
        let knots = knot_idx.iter().map(|&i| time.knots()[i]).collect();
        Ok(Self { knot_idx, knots })
    }

    pub fn n(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Interval index k with t ∈ [t_k, t_{k+1}); t = T maps to N-1.
    pub fn interval_of(&self, t: f64) -> usize {
        let n = self.n();
        for k in 0..n {
            if t < self.knots[k + 1] {
                return k;
            }
        }
        n - 1
    }

    /// Knot-floor map: the left end of the interval containing t.
    pub fn tau_floor(&self, t: f64) -> f64 {
        self.knots[self.interval_of(t)]
    }

    /// Knot-ceiling map: the right end (T on the last interval).
    pub fn tau_ceil(&self, t: f64) -> f64 {
        self.knots[self.interval_of(t) + 1]
    }
}

/// Per-interval fields plus the assembled diagonal.
#[derive(Debug, Clone)]
pub struct CascadeField {
    pub grid: TriangleGrid,
    pub partition: Partition,
    pub m: usize,
    /// field k: `[s_local][ξ][x][m]` with s_local = s_idx - knot_idx[k].
    fields: Vec<Vec<f64>>,
    /// Assembled diagonal u^Π(s,x) = Θ^Π(s,s,x,x): `[s][x][m]`.
    pub diag: Vec<f64>,
}

impl CascadeField {
    #[inline]
    fn row(&self, k: usize, s_idx: usize) -> &[f64] {
        let nx = self.grid.space.n;
        let w = nx * nx * self.m;
        let sl = s_idx - self.partition.knot_idx[k];
        &self.fields[k][sl * w..(sl + 1) * w]
    }

    /// Bilinear Θ^k(s_idx, ξ, x).
    pub fn value(&self, k: usize, s_idx: usize, xi: f64, x: f64, comp: usize) -> f64 {
        let nx = self.grid.space.n;
        let row = self.row(k, s_idx);
        let (ki, wk) = self.grid.space.locate(xi);
        let (li, wl) = self.grid.space.locate(x);
        let at = |a: usize, b: usize| row[(a * nx + b) * self.m + comp];
        (1.0 - wk) * ((1.0 - wl) * at(ki, li) + wl * at(ki, li + 1))
            + wk * ((1.0 - wl) * at(ki + 1, li) + wl * at(ki + 1, li + 1))
    }

    /// Bilinear Θ^k_x(s_idx, ξ, x).
    pub fn value_dx(&self, k: usize, s_idx: usize, xi: f64, x: f64, comp: usize) -> f64 {
        let nx = self.grid.space.n;
        let h = self.grid.space.h;
        let m = self.m;
        let row = self.row(k, s_idx);
        let node_dx = |a: usize, l: usize| -> f64 {
            let base = a * nx;
            if l == 0 {
                (row[(base + 1) * m + comp] - row[base * m + comp]) / h
            } else if l == nx - 1 {
                (row[(base + nx - 1) * m + comp] - row[(base + nx - 2) * m + comp]) / h
            } else {
                (row[(base + l + 1) * m + comp] - row[(base + l - 1) * m + comp]) / (2.0 * h)
            }
        };
        let (ki, wk) = self.grid.space.locate(xi);
        let (li, wl) = self.grid.space.locate(x);
        let d = |a: usize| (1.0 - wl) * node_dx(a, li) + wl * node_dx(a, li + 1);
        (1.0 - wk) * d(ki) + wk * d(ki + 1)
    }

    /// Continuity defect of each Θ^k across internal s-knots (exact zero:
    /// one march produces each field).
    pub fn internal_continuity_defect(&self) -> f64 {
        0.0
    }
}

/// Solves the cascade, marching all intervals together backward in s.
pub fn build_cascade(p: &TypeIProblem, pi: &Partition, grid: &TriangleGrid) -> Result<CascadeField> {
    let (b_coeff, sigma_coeff) = p.model.scalar_parts()?;
    let nk = grid.time.len();
    let nx = grid.space.n;
    let m = p.m;
    let w = nx * m;
    let row_w = nx * w;
    let n = pi.n();
    if *pi.knot_idx.last().unwrap() != nk - 1 {
        return Err(Error::GridMismatch("partition must end at the last solver knot".into()));
    }
    let knots = grid.time.knots();
    let xs = grid.space.points();

    let mut fields: Vec<Vec<f64>> = (0..n)
        .map(|k| vec![0.0; (nk - pi.knot_idx[k]) * row_w])
        .collect();
    let mut diag = vec![0.0; nk * w];

    // terminal data ψ(t_k, ·, ·)
    for (k, field) in fields.iter_mut().enumerate() {
        let t = pi.knots[k];
        let last = field.len() - row_w;
        let term = &mut field[last..];
        for ki in 0..nx {
            p.psi.fill_line(t, xs[ki], &xs, &mut term[ki * w..(ki + 1) * w]);
        }
    }
    // assembled diagonal at T comes from the last interval's field
    {
        let field = &fields[n - 1];
        let last = field.len() - row_w;
        for ki in 0..nx {
            diag[(nk - 1) * w + ki * m..(nk - 1) * w + (ki + 1) * m]
                .copy_from_slice(&field[last + (ki * nx + ki) * m..last + (ki * nx + ki) * m + m]);
        }
    }

    let mut u_old = vec![0.0; w];
    let mut u_pred = vec![0.0; w];

    for j in (0..nk - 1).rev() {
        let s_old = knots[j + 1];
        let s_new = knots[j];
        let ctx = StepContext::new(b_coeff.as_ref(), sigma_coeff.as_ref(), &grid.space, s_old, s_new)?;
        // interval containing the step [s_j, s_{j+1}]
        let ell = (0..n)
            .rev()
            .find(|&k| pi.knot_idx[k] <= j)
            .expect("partition starts at 0");

        // the coupling diagonal of field ℓ at the old level
        {
            let field = &fields[ell];
            let sl = j + 1 - pi.knot_idx[ell];
            for ki in 0..nx {
                u_old[ki * m..(ki + 1) * m].copy_from_slice(
                    &field[sl * row_w + (ki * nx + ki) * m..sl * row_w + (ki * nx + ki) * m + m],
                );
            }
        }

        // phase A: predict field ℓ's diagonal at the new level
        if p.g.depends_on_y() {
            let field = &fields[ell];
            let sl_old = j + 1 - pi.knot_idx[ell];
            let g = p.g.as_ref();
            let t_ell = pi.knots[ell];
            u_pred
                .par_chunks_mut(m)
                .enumerate()
                .for_each(|(ki, out)| {
                    let line = &field[sl_old * row_w + ki * w..sl_old * row_w + (ki + 1) * w];
                    let mut gl = vec![0.0; w];
                    let mut z = vec![0.0; w];
                    let mut pred = vec![0.0; w];
                    let mut work = vec![0.0; nx - 2];
                    d_x(line, m, grid.space.h, &mut z);
                    scale_by_sigma(&mut z, &ctx.sigma_old, m);
                    // interval ℓ is self-coupled: the y-slot is the own line
                    g.fill_line(t_ell, s_old, xs[ki], &xs, line, &z, None, &mut gl);
                    ctx.predict(line, &gl, m, &mut pred, &mut work);
                    out.copy_from_slice(&pred[ki * m..(ki + 1) * m]);
                });
        }

        // phase B: advance every live field k ≤ ℓ
        let u_old_ref = &u_old;
        let u_pred_ref = &u_pred;
        let ctx_ref = &ctx;
        let bad: bool = fields[..=ell]
            .par_iter_mut()
            .enumerate()
            .map(|(k, field)| {
                let jk = pi.knot_idx[k];
                let sl_new = j - jk;
                let (head, tail) = field.split_at_mut((sl_new + 1) * row_w);
                let old_rows = &tail[..row_w];
                let new_rows = &mut head[sl_new * row_w..];
                let t_k = pi.knots[k];
                let self_coupled = k == ell;
                let g = p.g.as_ref();
                let y_dep = g.depends_on_y();
                let z_dep = g.depends_on_z();
                // a self-coupled slice feeds its own value into the y slot,
                // so it needs a predictor whenever y is read at all
                let need_pred = z_dep || (y_dep && self_coupled);
                let mut any_bad = false;
                let mut scr = CascadeScratch::new(w, nx);
                for ki in 0..nx {
                    let v_old = &old_rows[ki * w..(ki + 1) * w];
                    let dst = &mut new_rows[ki * w..(ki + 1) * w];
                    d_x(v_old, m, grid.space.h, &mut scr.z);
                    scale_by_sigma(&mut scr.z, &ctx_ref.sigma_old, m);
                    let y_old: &[f64] = if self_coupled { v_old } else { u_old_ref };
                    g.fill_line(t_k, s_old, xs[ki], &xs, y_old, &scr.z, None, &mut scr.g_old);
                    if need_pred {
                        ctx_ref.predict(v_old, &scr.g_old, m, &mut scr.pred, &mut scr.work);
                        d_x(&scr.pred, m, grid.space.h, &mut scr.z);
                        scale_by_sigma(&mut scr.z, &ctx_ref.sigma_new, m);
                    }
                    let y_new: &[f64] = if !y_dep {
                        y_old
                    } else if self_coupled {
                        &scr.pred
                    } else {
                        u_pred_ref
                    };
                    g.fill_line(t_k, s_new, xs[ki], &xs, y_new, &scr.z, None, &mut scr.g_new);
                    apply_l(&ctx_ref.a_old, &ctx_ref.b_old, grid.space.h, v_old, m, &mut scr.lv);
                    ctx_ref.correct(v_old, &scr.lv, &scr.g_old, &scr.g_new, m, dst, &mut scr.work);
                    any_bad |= dst.iter().any(|v| !v.is_finite());
                }
                any_bad
            })
            .reduce(|| false, |a, b| a || b);
        if bad {
            return Err(Error::NonFiniteField { level: j });
        }

        // assembled diagonal at the new level from field ℓ(s_j)
        let ell_new = (0..n).rev().find(|&k| pi.knot_idx[k] <= j).unwrap();
        let field = &fields[ell_new];
        let sl = j - pi.knot_idx[ell_new];
        for ki in 0..nx {
            diag[j * w + ki * m..j * w + (ki + 1) * m].copy_from_slice(
                &field[sl * row_w + (ki * nx + ki) * m..sl * row_w + (ki * nx + ki) * m + m],
            );
        }
    }

    Ok(CascadeField {
        grid: grid.clone(),
        partition: pi.clone(),
        m,
        fields,
        diag,
    })
}

struct CascadeScratch {
    g_old: Vec<f64>,
    g_new: Vec<f64>,
    z: Vec<f64>,
    lv: Vec<f64>,
    pred: Vec<f64>,
    work: Vec<f64>,
}

impl CascadeScratch {
    fn new(w: usize, nx: usize) -> Self {
        Self {
            g_old: vec![0.0; w],
            g_new: vec![0.0; w],
            z: vec![0.0; w],
            lv: vec![0.0; w],
            pred: vec![0.0; w],
            work: vec![0.0; nx - 2],
        }
    }
}

/// Evaluates the step processes along paths:
/// `Y^Π(s) = Θ^Π(s,s,X(τ^Π(s)),X(s))`,
/// `Z^Π(t,s) = Θ^Π_x(t,s,X(τ^Π(t)),X(s)) σ(s,X(s))`.
pub fn evaluate_cascade(
    c: &CascadeField,
    ens: &PathEnsemble,
    model: &crate::model::SdeModel,
) -> Result<SolutionPair> {
    let (_, sigma) = model.scalar_parts()?;
    let pi = &c.partition;
    let f_idx: Vec<usize> = ens
        .grid
        .knots()
        .iter()
        .map(|&t| {
            c.grid.time.index_of(t).ok_or_else(|| {
                Error::GridMismatch(format!("ensemble knot {t} not on the cascade grid"))
            })
        })
        .collect::<Result<_>>()?;
    let m = c.m;
    let nk = ens.grid.len();
    let steps = ens.grid.steps();
    let excluded: Vec<bool> = (0..ens.n_paths)
        .map(|p| {
            (0..nk).any(|j| {
                let x = ens.state1(p, j);
                x < c.grid.space.lo || x > c.grid.space.hi()
            })
        })
        .collect();

    let knots = ens.grid.knots();
    let mut y = vec![0.0; ens.n_paths * nk * m];
    for p in 0..ens.n_paths {
        for j in 0..nk {
            let s = knots[j];
            let k = pi.interval_of(s);
            // ξ freezes at the interval's left knot
            let xi = ens.state1(p, ens_index_of(ens, pi.tau_floor(s))?);
            let x = ens.state1(p, j);
            for comp in 0..m {
                y[(p * nk + j) * m + comp] = c.value(k, f_idx[j], xi, x, comp);
            }
        }
    }

    let t_set: Vec<usize> = (0..steps).collect();
    let stub = SolutionPair {
        grid: ens.grid.clone(),
        m,
        n_paths: ens.n_paths,
        y,
        t_set: t_set.clone(),
        z_upper: None,
        z_lower: None,
        excluded,
        provenance: format!("cascade N={}", pi.n()),
    };
    let stride: usize = t_set.iter().map(|&t| steps - t).sum::<usize>() * m;
    let mut z_upper = vec![0.0; ens.n_paths * stride];
    for p in 0..ens.n_paths {
        if stub.excluded[p] {
            continue;
        }
        let mut base = p * stride;
        for &ti in &t_set {
            let t = knots[ti];
            let k = pi.interval_of(t);
            let xi = ens.state1(p, ens_index_of(ens, pi.tau_floor(t))?);
            for j in ti..steps {
                let xsj = ens.state1(p, j);
                let sg = sigma.at(knots[j], xsj);
                for comp in 0..m {
                    z_upper[base + comp] = c.value_dx(k, f_idx[j], xi, xsj, comp) * sg;
                }
                base += m;
            }
        }
    }
    Ok(SolutionPair {
        z_upper: Some(z_upper),
        ..stub
    })
}

fn ens_index_of(ens: &PathEnsemble, t: f64) -> Result<usize> {
    ens.grid
        .index_of(t)
        .ok_or_else(|| Error::GridMismatch(format!("partition knot {t} not on the ensemble grid")))
}

/// Pathwise jump statistics of Y^Π at the internal partition knots:
/// `Y^Π(t_k) - Y^Π(t_k-0) = Θ^k(t_k,X(t_k),X(t_k)) - Θ^{k-1}(t_k,X(t_{k-1}),X(t_k))`.
pub fn jump_statistics(c: &CascadeField, ens: &PathEnsemble) -> Result<f64> {
    let pi = &c.partition;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 1..pi.n() {
        let s_idx = c.grid.time.index_of(pi.knots[k]).unwrap();
        let e_k = ens_index_of(ens, pi.knots[k])?;
        let e_prev = ens_index_of(ens, pi.knots[k - 1])?;
        for p in 0..ens.n_paths {
            let x = ens.state1(p, e_k);
            if x < c.grid.space.lo || x > c.grid.space.hi() {
                continue;
            }
            let right = c.value(k, s_idx, x, x, 0);
            let left = c.value(k - 1, s_idx, ens.state1(p, e_prev), x, 0);
            sum += (right - left).abs();
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Discrete L² distances between the cascade pair and a reference pair on
/// the reference's t-set, plus jump and adjacent-level statistics.
#[derive(Debug, Clone)]
pub struct CascadeErrorReport {
    pub n: usize,
    pub mesh: f64,
    /// Ê ∫ |Y^Π - Y|² dt
    pub l2_y: f64,
    /// Ê ∫∫ |Z^Π - Z|² ds dt
    pub l2_z: f64,
    pub l2_total: f64,
    pub mean_jump: f64,
    /// mean over k of Ê sup_{s ∈ [t_{k+1},T]} |Ȳ^{k+1}(s) - Ȳ^k(s)|²
    pub adjacent_sup_sq: f64,
    pub excluded_paths: usize,
}

pub fn cascade_error(
    c: &CascadeField,
    reference: &ThetaField,
    pi: &Partition,
    ens: &PathEnsemble,
    model: &crate::model::SdeModel,
) -> Result<CascadeErrorReport> {
    let ref_pair = crate::repr::evaluate_type1(reference, model, ens)?;
    let cas_pair = evaluate_cascade(c, ens, model)?;
    let knots = ens.grid.knots();
    let nk = ens.grid.len();
    let steps = ens.grid.steps();
    let m = c.m;
    let included: Vec<usize> = (0..ens.n_paths)
        .filter(|&p| !ref_pair.excluded[p] && !cas_pair.excluded[p])
        .collect();
    let n_inc = included.len().max(1) as f64;

    // Y part over every knot (left quadrature)
    let mut l2_y = 0.0;
    for &p in &included {
        for j in 0..steps {
            let dt = knots[j + 1] - knots[j];
            for comp in 0..m {
                let d = cas_pair.y_at(p, j, comp) - ref_pair.y_at(p, j, comp);
                l2_y += d * d * dt;
            }
        }
    }
    l2_y /= n_inc;

    // Z part over the reference t-set
    let mut l2_z = 0.0;
    for &p in &included {
        for (rl, &ti) in ref_pair.t_set.iter().enumerate() {
            let dt_outer = if ti + 1 < nk {
                knots[ti + 1] - knots[ti]
            } else {
                0.0
            };
            let cl = cas_pair
                .t_set
                .iter()
                .position(|&v| v == ti)
                .ok_or_else(|| Error::GridMismatch("cascade pair missing a t-knot".into()))?;
            for j in ti..steps {
                let ds = knots[j + 1] - knots[j];
                for comp in 0..m {
                    let d = cas_pair.z_up(p, cl, j, comp) - ref_pair.z_up(p, rl, j, comp);
                    l2_z += d * d * ds * dt_outer;
                }
            }
        }
    }
    l2_z /= n_inc;

    // adjacent-level differences sup over s of |Θ^{k+1}(s,X(t_{k+1}),X(s)) - Θ^k(s,X(t_k),X(s))|²
    let mut adj = 0.0;
    for k in 0..pi.n() - 1 {
        let mut acc = 0.0;
        let ek1 = ens_index_of(ens, pi.knots[k + 1])?;
        let ek = ens_index_of(ens, pi.knots[k])?;
        for &p in &included {
            let xi1 = ens.state1(p, ek1);
            let xi0 = ens.state1(p, ek);
            let mut sup = 0.0f64;
            for j in 0..nk {
                if knots[j] < pi.knots[k + 1] {
                    continue;
                }
                let s_idx = c.grid.time.index_of(knots[j]).unwrap();
                let x = ens.state1(p, j);
                for comp in 0..m {
                    let d = c.value(k + 1, s_idx, xi1, x, comp) - c.value(k, s_idx, xi0, x, comp);
                    sup = sup.max(d * d);
                }
            }
            acc += sup;
        }
        adj += acc / n_inc;
    }
    adj /= (pi.n() - 1).max(1) as f64;

    Ok(CascadeErrorReport {
        n: pi.n(),
        mesh: pi.mesh(),
        l2_y,
        l2_z,
        l2_total: l2_y + l2_z,
        mean_jump: jump_statistics(c, ens)?,
        adjacent_sup_sq: adj,
        excluded_paths: ens.n_paths - included.len(),
    })
}

/// Convergence sweep over partition sizes; returns the per-N reports and
/// the fitted slopes (L² error and mean jump vs mesh).
pub struct CascadeSweep {
    pub reports: Vec<CascadeErrorReport>,
    pub slope_l2: f64,
    pub slope_jump: f64,
    pub slope_adjacent: f64,
}

pub fn cascade_sweep(
    p: &TypeIProblem,
    reference: &ThetaField,
    grid: &TriangleGrid,
    partitions: &[usize],
    ens: &PathEnsemble,
) -> Result<CascadeSweep> {
    let mut reports = Vec::new();
    for &n in partitions {
        let pi = Partition::uniform(&grid.time, n)?;
        let c = build_cascade(p, &pi, grid)?;
        reports.push(cascade_error(&c, reference, &pi, ens, &p.model)?);
    }
    let meshes: Vec<f64> = reports.iter().map(|r| r.mesh).collect();
    let l2: Vec<f64> = reports.iter().map(|r| r.l2_total).collect();
    let jumps: Vec<f64> = reports.iter().map(|r| r.mean_jump).collect();
    let adj: Vec<f64> = reports.iter().map(|r| r.adjacent_sup_sq).collect();
    Ok(CascadeSweep {
        slope_l2: loglog_slope(&meshes, &l2),
        slope_jump: loglog_slope(&meshes, &jumps),
        slope_adjacent: loglog_slope(&meshes, &adj),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{FnGen, GenPoint};
    use crate::grid::StoreSelect;
    use crate::model::catalog_entry;
    use crate::pde_type1::{solve_type1_fd_with, Type1Options};
    use crate::sde::simulate;
    use crate::stepper::{solve_semilinear_parabolic, terminal_line};

    #[test]
    fn partition_maps() {
        let time = TimeGrid::uniform(0.0, 1.0, 32).unwrap();
        let pi = Partition::uniform(&time, 8).unwrap();
        assert_eq!(pi.n(), 8);
        assert!((pi.mesh() - 0.125).abs() < 1e-15);
        for &t in &[0.0, 0.06, 0.125, 0.3, 0.99, 1.0] {
            let lo = pi.tau_floor(t);
            let hi = pi.tau_ceil(t);
            assert!(t - lo >= -1e-15 && t - lo <= pi.mesh() + 1e-15);
            assert!(hi - t >= -1e-15 && hi - t <= pi.mesh() + 1e-15);
        }
        assert_eq!(pi.tau_floor(1.0), 0.875); // T belongs to the last interval
        assert_eq!(pi.tau_ceil(1.0), 1.0);
        assert!(Partition::uniform(&time, 5).is_err());
    }

    #[test]
    fn uncoupled_source_ignores_partition() {
        // g ≡ 0: every Θ^k is the heat image of ψ(t_k,·,·)
        let e = catalog_entry("sine-terminal").unwrap();
        let p = e.problem.type1().unwrap();
        let grid = TriangleGrid::uniform(1.0, 16, 6.0, 41).unwrap();
        let c4 = build_cascade(p, &Partition::uniform(&grid.time, 4).unwrap(), &grid).unwrap();
        let c8 = build_cascade(p, &Partition::uniform(&grid.time, 8).unwrap(), &grid).unwrap();
        // ψ is t-independent here, so the assembled diagonals agree exactly
        for (a, b) in c4.diag.iter().zip(&c8.diag) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_interval_equals_frozen_t_solve() {
        // N = 1 collapses to the self-coupled solve with t frozen at 0
        let e = catalog_entry("cascade-bench").unwrap();
        let p = e.problem.type1().unwrap();
        let grid = TriangleGrid::uniform(1.0, 16, 6.0, 31).unwrap();
        let pi = Partition::uniform(&grid.time, 1).unwrap();
        let c = build_cascade(p, &pi, &grid).unwrap();

        let g0 = FnGen {
            m: 1,
            zeta: false,
            f: {
                let inner = p.g.clone();
                move |q: &GenPoint, out: &mut [f64]| {
                    let frozen = GenPoint { t: 0.0, ..*q };
                    inner.at(&frozen, out)
                }
            },
        };
        // the cascade field at ξ is the 1-parameter semilinear solution with
        // terminal ψ(0,ξ,·); compare at a few ξ nodes
        for ki in [5usize, 15, 25] {
            let xi = grid.space.point(ki);
            let mut term = terminal_line(&grid.space, 1, |x, out| {
                let mut v = [0.0];
                p.psi.at(0.0, xi, x, &mut v);
                out[0] = v[0];
            });
            // the semilinear reference uses ξ := x internally; our generator
            // here ignores ξ so the comparison is exact
            let v = solve_semilinear_parabolic(
                &crate::coeff::Const(0.0),
                &crate::coeff::Const(1.0),
                &g0,
                &term,
                &grid.time,
                &grid.space,
            )
            .unwrap();
            term.clear();
            for s_idx in 0..grid.time.len() {
                for l in 4..grid.space.n - 4 {
                    let got = c.value(0, s_idx, xi, grid.space.point(l), 0);
                    let want = v.at(s_idx, l, 0);
                    assert!(
                        (got - want).abs() < 1e-9,
                        "mismatch {got} vs {want} at s={s_idx}, l={l}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_field_zero_error() {
        // compare a cascade against a reference from the same construction:
        // identical fields give zero L² error
        let e = catalog_entry("heat-terminal-x").unwrap();
        let p = e.problem.type1().unwrap();
        let grid = TriangleGrid::uniform(1.0, 16, 8.0, 81).unwrap();
        let pi = Partition::uniform(&grid.time, 4).unwrap();
        let c = build_cascade(p, &pi, &grid).unwrap();
        let reference = crate::pde_type1::solve_type1_fd(p, &grid).unwrap();
        let ens = simulate(&p.model, &[0.0], &grid.time, 64, 41).unwrap();
        let rep = cascade_error(&c, &reference, &pi, &ens, &p.model).unwrap();
        // ψ and g are t-independent: the cascade equals the limit field
        assert!(rep.l2_total < 1e-16, "l2 {}", rep.l2_total);
        assert!(rep.mean_jump < 1e-12);
    }

    #[test]
    fn bench_problem_rates() {
        // nonlinear, t-dependent data: L² slope ≈ 2, jump slope ≈ 1
        let e = catalog_entry("cascade-bench").unwrap();
        let p = e.problem.type1().unwrap();
        let grid = TriangleGrid::uniform(1.0, 64, 6.0, 61).unwrap();
        let opts = Type1Options {
            t_store: StoreSelect::Stride(4),
            s_store: StoreSelect::Stride(4),
            ..Default::default()
        };
        let reference =
            solve_type1_fd_with(p, &grid, &opts, &mut crate::pde_type1::NoObserver).unwrap();
        let ens_grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let ens = simulate(&p.model, &[0.0], &ens_grid, 400, 99).unwrap();
        let sweep = cascade_sweep(p, &reference, &grid, &[4, 8, 16], &ens).unwrap();
        assert!(
            sweep.slope_l2 > 1.7,
            "L² slope {} (reports {:?})",
            sweep.slope_l2,
            sweep
                .reports
                .iter()
                .map(|r| r.l2_total)
                .collect::<Vec<_>>()
        );
        assert!(sweep.slope_jump > 0.8, "jump slope {}", sweep.slope_jump);
    }
}
