//! Declarative experiment configuration: a TOML file selects a catalog
//! entry or composes a problem from bounded coefficient primitives, fixes
//! the grids, the ensemble, and the pipeline knobs. Parsing a config,
//! building the problem, and re-emitting yields the identical document for
//! canonical inputs.

use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use bsvie::coeff::{Affine, Const, FreeTerm, GenPoint, Generator, ScalarCoeff, SinBounded};
use bsvie::grid::TriangleGrid;
use bsvie::model::{catalog_entry, Problem, SdeModel, TypeIIProblem, TypeIProblem};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    pub horizon: f64,
    pub lipschitz: f64,
    pub model: ModelSpec,
    pub psi: Vec<TermSpec>,
    pub g: Vec<TermSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub b: CoeffSpec,
    pub sigma: CoeffSpec,
    pub lipschitz: f64,
    pub ellipticity: f64,
    pub bound: f64,
}

/// Built-in scalar coefficient primitives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffSpec {
    Const { value: f64 },
    Affine { a0: f64, ax: f64, a_s: f64 },
    SinBounded { offset: f64, amp: f64, freq: f64, phase: f64 },
}

impl CoeffSpec {
    pub fn build(&self) -> Arc<dyn ScalarCoeff> {
        match *self {
            CoeffSpec::Const { value } => Arc::new(Const(value)),
            CoeffSpec::Affine { a0, ax, a_s } => Arc::new(Affine { a0, ax, a_s }),
            CoeffSpec::SinBounded {
                offset,
                amp,
                freq,
                phase,
            } => Arc::new(SinBounded {
                offset,
                amp,
                freq,
                phase,
            }),
        }
    }
}

/// One additive term of a composed free term or generator: a shape applied
/// to a single argument slot.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TermSpec {
    pub slot: Slot,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Slot {
    T,
    S,
    Xi,
    X,
    Y,
    Z,
    Zeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Const { value: f64 },
    Linear { gain: f64 },
    Sin { amp: f64, freq: f64, phase: f64 },
    Cos { amp: f64, freq: f64, phase: f64 },
    Tanh { gain: f64, amp: f64 },
}

impl Shape {
    fn eval(&self, v: f64) -> f64 {
        match *self {
            Shape::Const { value } => value,
            Shape::Linear { gain } => gain * v,
            Shape::Sin { amp, freq, phase } => amp * (freq * v + phase).sin(),
            Shape::Cos { amp, freq, phase } => amp * (freq * v + phase).cos(),
            Shape::Tanh { gain, amp } => amp * (gain * v).tanh(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub steps: usize,
    pub radius: f64,
    pub points: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub seed: u64,
    pub x0: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            seed: 42,
            x0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BackendSpec {
    Fd,
    Picard,
    Kernel,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub backend: BackendSpec,
    pub refine: usize,
    #[serde(default)]
    pub partitions: Vec<usize>,
    pub tol: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            backend: BackendSpec::Fd,
            refine: 1,
            partitions: Vec::new(),
            tol: 1e-6,
        }
    }
}

// ---------------------------------------------------------------------------
// Composed coefficients implementing the core traits
// ---------------------------------------------------------------------------

pub struct TermFree {
    terms: Vec<TermSpec>,
}

impl FreeTerm for TermFree {
    fn m(&self) -> usize {
        1
    }
    fn at(&self, t: f64, xi: f64, x: f64, out: &mut [f64]) {
        let mut acc = 0.0;
        for term in &self.terms {
            let v = match term.slot {
                Slot::T => t,
                Slot::Xi => xi,
                Slot::X => x,
                _ => unreachable!("validated at build"),
            };
            acc += term.shape.eval(v);
        }
        out[0] = acc;
    }
}

pub struct TermGen {
    terms: Vec<TermSpec>,
    zeta: bool,
    y_dep: bool,
    z_dep: bool,
}

impl Generator for TermGen {
    fn m(&self) -> usize {
        1
    }
    fn uses_zeta(&self) -> bool {
        self.zeta
    }
    fn depends_on_y(&self) -> bool {
        self.y_dep
    }
    fn depends_on_z(&self) -> bool {
        self.z_dep
    }
    fn at(&self, p: &GenPoint, out: &mut [f64]) {
        let mut acc = 0.0;
        for term in &self.terms {
            let v = match term.slot {
                Slot::T => p.t,
                Slot::S => p.s,
                Slot::Xi => p.xi,
                Slot::X => p.x,
                Slot::Y => p.y[0],
                Slot::Z => p.z[0],
                Slot::Zeta => p.zeta[0],
            };
            acc += term.shape.eval(v);
        }
        out[0] = acc;
    }
}

// ---------------------------------------------------------------------------
// Building and round-tripping
// ---------------------------------------------------------------------------

pub struct BuiltExperiment {
    pub config: ExperimentConfig,
    pub name: String,
    pub problem: Problem,
    pub grid: TriangleGrid,
    pub closed_form_theta: Option<bsvie::model::ClosedTheta>,
    pub closed_form_gamma: Option<bsvie::model::ClosedGamma>,
}

pub fn parse(text: &str) -> anyhow::Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).context("config parse failed")?;
    Ok(cfg)
}

/// Canonical emission; for canonical inputs `emit(parse(x)) == x` holds
/// byte-for-byte.
pub fn emit(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    Ok(toml::to_string(cfg)?)
}

pub fn build(cfg: &ExperimentConfig) -> anyhow::Result<BuiltExperiment> {
    let (name, problem, cft, cfg_gamma) = match (&cfg.problem.catalog, &cfg.problem.compose) {
        (Some(name), None) => {
            let entry = catalog_entry(name).map_err(|e| anyhow::anyhow!("{e}"))?;
            (
                entry.name.to_string(),
                entry.problem,
                entry.closed_form_theta,
                entry.closed_form_gamma,
            )
        }
        (None, Some(compose)) => {
            let problem = build_composed(compose)?;
            ("composed".to_string(), problem, None, None)
        }
        (Some(_), Some(_)) => bail!("config error: set either problem.catalog or problem.compose, not both"),
        (None, None) => bail!("config error: missing problem.catalog or problem.compose"),
    };
    let horizon = problem.horizon();
    let mut grid = TriangleGrid::uniform(horizon, cfg.grid.steps, cfg.grid.radius, cfg.grid.points)
        .map_err(|e| anyhow::anyhow!("config error: {e}"))?;
    grid.alpha = cfg.grid.alpha;
    Ok(BuiltExperiment {
        config: cfg.clone(),
        name,
        problem,
        grid,
        closed_form_theta: cft,
        closed_form_gamma: cfg_gamma,
    })
}

fn build_composed(spec: &ComposeSpec) -> anyhow::Result<Problem> {
    for term in &spec.psi {
        if !matches!(term.slot, Slot::T | Slot::Xi | Slot::X) {
            bail!("config error: psi terms may only use slots t, xi, x");
        }
    }
    let uses_zeta = spec.g.iter().any(|t| t.slot == Slot::Zeta);
    let y_dep = spec.g.iter().any(|t| t.slot == Slot::Y);
    let z_dep = spec.g.iter().any(|t| t.slot == Slot::Z);
    let model = SdeModel::scalar(
        spec.model.b.build(),
        spec.model.sigma.build(),
        spec.model.lipschitz,
        spec.model.ellipticity,
        spec.model.bound,
    );
    let psi: Arc<dyn FreeTerm> = Arc::new(TermFree {
        terms: spec.psi.clone(),
    });
    let g: Arc<dyn Generator> = Arc::new(TermGen {
        terms: spec.g.clone(),
        zeta: uses_zeta,
        y_dep,
        z_dep,
    });
    Ok(if uses_zeta {
        Problem::WithTranspose(TypeIIProblem {
            model,
            m: 1,
            psi,
            g,
            lipschitz: spec.lipschitz,
            horizon: spec.horizon,
        })
    } else {
        Problem::WithoutTranspose(TypeIProblem {
            model,
            m: 1,
            psi,
            g,
            lipschitz: spec.lipschitz,
            horizon: spec.horizon,
        })
    })
}

/// Hex digest of the canonical config text; stamped on every output row.
pub fn config_hash(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    use sha2::{Digest, Sha256};
    let text = emit(cfg)?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    Ok(out.iter().take(8).map(|b| format!("{b:02x}")).collect())
}
