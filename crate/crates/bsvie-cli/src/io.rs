//! File formats: a binary columnar container with a JSON header for
//! ensembles and solved fields, deterministic CSV emission, and the run
//! manifest. CSV bodies are byte-stable across runs; wall-clock times live
//! only in the manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use bsvie::grid::{SpaceGrid, TimeGrid, TriangleGrid};
use bsvie::pde_type1::{Backend, StoredBlock, ThetaField};
use bsvie::pde_type2::{GammaField, MildSolution};
use bsvie::sde::PathEnsemble;

const MAGIC: &[u8; 4] = b"BSVE";
const VERSION: u32 = 1;

fn write_container(path: &Path, header: &impl Serialize, payload: &[&[f64]]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("create {path:?}"))?);
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for block in payload {
        w.write_all(&(block.len() as u64).to_le_bytes())?;
        for v in *block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_container<H: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<(H, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{path:?} is not a columnar container");
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != VERSION {
        bail!("unsupported container version");
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let hlen = u64::from_le_bytes(u64buf) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header = serde_json::from_slice(&hbuf)?;
    let mut blocks = Vec::new();
    loop {
        match r.read_exact(&mut u64buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut data = vec![0.0f64; len];
        let mut fbuf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut fbuf)?;
            *v = f64::from_le_bytes(fbuf);
        }
        blocks.push(data);
    }
    Ok((header, blocks))
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    kind: String,
    n: usize,
    d: usize,
    n_paths: usize,
    seed: u64,
    x0: Vec<f64>,
    knots: Vec<f64>,
}

pub fn write_ensemble(path: &Path, ens: &PathEnsemble) -> anyhow::Result<()> {
    let header = EnsembleHeader {
        kind: "ensemble".into(),
        n: ens.n,
        d: ens.d,
        n_paths: ens.n_paths,
        seed: ens.seed,
        x0: ens.x0.clone(),
        knots: ens.grid.knots().to_vec(),
    };
    write_container(path, &header, &[&ens.x, &ens.dw])
}

pub fn read_ensemble(path: &Path) -> anyhow::Result<PathEnsemble> {
    let (h, mut blocks): (EnsembleHeader, _) = read_container(path)?;
    if h.kind != "ensemble" || blocks.len() != 2 {
        bail!("{path:?} does not hold an ensemble");
    }
    let dw = blocks.pop().unwrap();
    let x = blocks.pop().unwrap();
    let grid = TimeGrid::new(h.knots).map_err(|e| anyhow::anyhow!("{e}"))?;
    if x.len() != h.n_paths * grid.len() * h.n || dw.len() != h.n_paths * grid.steps() * h.d {
        bail!("ensemble payload size mismatch");
    }
    Ok(PathEnsemble {
        grid,
        n: h.n,
        d: h.d,
        n_paths: h.n_paths,
        x0: h.x0,
        seed: h.seed,
        x,
        dw,
    })
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    kind: String,
    m: usize,
    knots: Vec<f64>,
    space_lo: f64,
    space_h: f64,
    space_n: usize,
    alpha: f64,
    scheme_tol: f64,
    backend: String,
    problem_hash: String,
    blocks: Vec<(usize, Vec<usize>)>,
    has_gamma: bool,
}

fn theta_header(theta: &ThetaField, problem_hash: &str, has_gamma: bool) -> FieldHeader {
    FieldHeader {
        kind: "theta".into(),
        m: theta.m,
        knots: theta.grid.time.knots().to_vec(),
        space_lo: theta.grid.space.lo,
        space_h: theta.grid.space.h,
        space_n: theta.grid.space.n,
        alpha: theta.grid.alpha,
        scheme_tol: theta.scheme_tol,
        backend: match theta.backend {
            Backend::FiniteDifference => "fd".into(),
            Backend::Picard => "picard".into(),
        },
        problem_hash: problem_hash.to_string(),
        blocks: theta
            .blocks
            .iter()
            .map(|b| (b.t_idx, b.s_indices.clone()))
            .collect(),
        has_gamma,
    }
}

pub fn write_theta(path: &Path, theta: &ThetaField, problem_hash: &str) -> anyhow::Result<()> {
    let header = theta_header(theta, problem_hash, false);
    let mut payload: Vec<&[f64]> = vec![&theta.diag];
    for b in &theta.blocks {
        payload.push(&b.values);
    }
    write_container(path, &header, &payload)
}

pub fn write_mild(path: &Path, sol: &MildSolution, problem_hash: &str) -> anyhow::Result<()> {
    let header = theta_header(&sol.theta, problem_hash, true);
    let mut payload: Vec<&[f64]> = vec![&sol.theta.diag];
    for b in &sol.theta.blocks {
        payload.push(&b.values);
    }
    payload.push(sol.gamma.raw_values());
    write_container(path, &header, &payload)
}

fn rebuild_grid(h: &FieldHeader) -> anyhow::Result<TriangleGrid> {
    let time = TimeGrid::new(h.knots.clone()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let space = SpaceGrid {
        lo: h.space_lo,
        h: h.space_h,
        n: h.space_n,
    };
    let mut grid = TriangleGrid::new(time, space);
    grid.alpha = h.alpha;
    Ok(grid)
}

pub fn read_theta(path: &Path) -> anyhow::Result<(ThetaField, String)> {
    let (h, blocks): (FieldHeader, _) = read_container(path)?;
    if h.kind != "theta" {
        bail!("{path:?} does not hold a field");
    }
    let grid = rebuild_grid(&h)?;
    let mut it = blocks.into_iter();
    let diag = it.next().context("missing diagonal payload")?;
    let mut stored = Vec::new();
    for (t_idx, s_indices) in &h.blocks {
        let values = it.next().context("missing block payload")?;
        stored.push(
            StoredBlock::from_values(*t_idx, s_indices.clone(), h.space_n, h.m, values)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        );
    }
    let theta = ThetaField {
        grid,
        m: h.m,
        blocks: stored,
        diag,
        scheme_tol: h.scheme_tol,
        backend: if h.backend == "picard" {
            Backend::Picard
        } else {
            Backend::FiniteDifference
        },
    };
    Ok((theta, h.problem_hash))
}

pub fn read_mild(path: &Path) -> anyhow::Result<(MildSolution, String)> {
    let (h, mut blocks): (FieldHeader, _) = read_container(path)?;
    if h.kind != "theta" || !h.has_gamma {
        bail!("{path:?} does not hold a coupled solution");
    }
    let gamma_values = blocks.pop().context("missing gamma payload")?;
    let grid = rebuild_grid(&h)?;
    let mut it = blocks.into_iter();
    let diag = it.next().context("missing diagonal payload")?;
    let mut stored = Vec::new();
    for (t_idx, s_indices) in &h.blocks {
        let values = it.next().context("missing block payload")?;
        stored.push(
            StoredBlock::from_values(*t_idx, s_indices.clone(), h.space_n, h.m, values)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        );
    }
    let gamma =
        GammaField::from_raw(&grid, h.m, gamma_values).map_err(|e| anyhow::anyhow!("{e}"))?;
    let theta = ThetaField {
        grid,
        m: h.m,
        blocks: stored,
        diag,
        scheme_tol: h.scheme_tol,
        backend: Backend::FiniteDifference,
    };
    Ok((
        MildSolution {
            theta,
            gamma,
            updates: Vec::new(),
        },
        h.problem_hash,
    ))
}

// ---------------------------------------------------------------------------
// CSV and manifest
// ---------------------------------------------------------------------------

/// Shortest-round-trip float formatting shared by every CSV column.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("create {path:?}"))?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_seconds: std::collections::BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub pass: bool,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(serde_json::to_string_pretty(manifest)?.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}
