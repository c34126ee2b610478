//! Configuration-driven experiments: each tag wires the compute modules
//! into one reproducible run whose metrics are written as CSV and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checks::{jump_moment_check, lipschitz_u_check, representation_check, REPRESENTATION_PATHS};
use crate::error::{Error, Result};
use crate::fit::fit_power_envelope;
use crate::forward::{
    check_moments, path_distance, simulate, simulate_with_noise, Noise, PathBundle, TimeGrid, MOMENT_MIN_PATHS,
};
use crate::levy::{DensityShape, Interval, LevyMeasure, TruncatedMeasure};
use crate::oracle::binomial_american_put;
use crate::pide::{self, check_cfl, GridSolution, NonlocalStencil, SpatialGrid, MAX_OUT_OF_WINDOW};
use crate::problem::{catalog, probe_growth, probe_lipschitz, DriverMode, JumpSize, Payoff, ProblemSpec};
use crate::rbsde::{solve_penalized, solve_reflected, BackwardSolution};
use crate::regression::BasisFamily;

/// Time levels kept in the grid CSV.
pub const GRID_CSV_LEVELS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tag {
    ValidateProblem,
    Simulate,
    SolvePide,
    SolveRbsde,
    Compare,
    ConvergeTruncation,
    Regularity,
    Moments,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::ValidateProblem,
        Tag::Simulate,
        Tag::SolvePide,
        Tag::SolveRbsde,
        Tag::Compare,
        Tag::ConvergeTruncation,
        Tag::Regularity,
        Tag::Moments,
    ];

    /// File-name stem, e.g. `solve_pide`.
    pub fn stem(self) -> &'static str {
        match self {
            Tag::ValidateProblem => "validate_problem",
            Tag::Simulate => "simulate",
            Tag::SolvePide => "solve_pide",
            Tag::SolveRbsde => "solve_rbsde",
            Tag::Compare => "compare",
            Tag::ConvergeTruncation => "converge_truncation",
            Tag::Regularity => "regularity",
            Tag::Moments => "moments",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Replaces the catalog instance's Lévy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum MeasureConfig {
    Zero,
    /// `[mark, weight]` pairs.
    Atomic {
        atoms: Vec<[f64; 2]>,
    },
    Density {
        shape: DensityShape,
        support: Vec<[f64; 2]>,
    },
    /// `c|e|^{−1−α}` on `[−1, 1] \ {0}` (or `(0, 1]`).
    Stable {
        c: f64,
        alpha: f64,
        #[serde(default = "yes")]
        symmetric: bool,
    },
}

impl MeasureConfig {
    pub fn build(&self) -> Result<LevyMeasure> {
        match self {
            MeasureConfig::Zero => Ok(LevyMeasure::zero()),
            MeasureConfig::Atomic { atoms } => {
                LevyMeasure::atomic(&atoms.iter().map(|a| (a[0], a[1])).collect::<Vec<_>>())
            }
            MeasureConfig::Density { shape, support } => LevyMeasure::density(
                shape.clone(),
                &support.iter().map(|s| Interval::new(s[0], s[1])).collect::<Vec<_>>(),
            ),
            MeasureConfig::Stable { c, alpha, symmetric } => LevyMeasure::stable_like(*c, *alpha, *symmetric),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Starting point; a single value is broadcast to every coordinate.
    pub x0: Vec<f64>,
    pub basis: BasisFamily,
    /// Truncation level `k` (cutoff `1/k`).
    pub k: u32,
    /// Penalty ladder; empty means reflected only.
    pub n_penalty: Vec<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 50,
            x0: vec![1.0],
            basis: BasisFamily::default(),
            k: 1,
            n_penalty: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub n_steps: usize,
    /// Truncation level for the oracle; defaults to `mc.k`.
    pub k: Option<u32>,
    /// Also solve with `Δt` and `Δx` halved and report the residual ratio.
    pub refine: bool,
    /// Residual is taken over `t ≤ residual_t_max` when set.
    pub residual_t_max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 3.0,
            n_cells: 600,
            n_steps: 600,
            k: None,
            refine: false,
            residual_t_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Run the jump-component representation check against the oracle.
    pub representation: bool,
    pub representation_paths: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            representation: false,
            representation_paths: REPRESENTATION_PATHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    /// Starting points for moment and jump-moment ladders.
    pub x: Vec<f64>,
    /// Horizons `s − t` for the moment ladder.
    pub horizons: Vec<f64>,
    /// `(x, x′)` pairs for the Lipschitz check.
    pub pairs: Vec<[f64; 2]>,
    /// Moment order for the jump-moment fit.
    pub p: u32,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            x: vec![0.5, 1.0, 2.0, 4.0],
            horizons: vec![0.1, 0.5, 1.0],
            pairs: Vec::new(),
            p: 2,
        }
    }
}

/// Acceptance thresholds. Defaults are the documented bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Width of statistical bands in standard errors.
    pub sigmas: f64,
    /// Absolute tolerance for identities that hold by construction.
    pub exact: f64,
    /// Relative distance to the binomial reference.
    pub oracle_rel: f64,
    /// Relative distance between the two solvers.
    pub compare_rel: f64,
    pub residual_ratio_min: f64,
    pub residual_ratio_max: f64,
    pub truncation_gap: f64,
    pub representation: f64,
    pub penalty_rel: f64,
    pub moment_stability: f64,
    pub doob: f64,
    pub rho_max: f64,
    /// Known Lipschitz constant of `u0` in `x`, if any.
    pub lipschitz_bound: Option<f64>,
    pub binomial_steps: usize,
    pub probe_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sigmas: 3.0,
            exact: 1e-12,
            oracle_rel: 0.02,
            compare_rel: 0.02,
            residual_ratio_min: 0.35,
            residual_ratio_max: 0.65,
            truncation_gap: 1e-3,
            representation: 0.1,
            penalty_rel: 0.01,
            moment_stability: 2.0,
            doob: 4.0,
            rho_max: 2.5,
            lipschitz_bound: None,
            binomial_steps: 2000,
            probe_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Tag,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    /// Truncation ladder for `CONVERGE_TRUNCATION`.
    #[serde(default)]
    pub truncation: Vec<u32>,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output directory; not part of the hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Worker cap; not part of the hash.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    ///
    /// Defaults are filled in and keys are sorted, so formatting, key order
    /// and spelling out a default never change the hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes").to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    /// Checked against an independent reference.
    #[serde(rename = "ORACLE")]
    Oracle,
    /// Checked against the method itself (refinement, ladders, fits).
    #[serde(rename = "SELF")]
    SelfConsistency,
    /// An identity that holds by construction.
    #[serde(rename = "EXACT")]
    Exact,
}

impl Provenance {
    fn label(self) -> &'static str {
        match self {
            Provenance::Oracle => "ORACLE",
            Provenance::SelfConsistency => "SELF",
            Provenance::Exact => "EXACT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Ge => ">=",
        }
    }

    fn holds(self, value: f64, tolerance: f64) -> bool {
        match self {
            Relation::Le => value <= tolerance,
            Relation::Lt => value < tolerance,
            Relation::Ge => value >= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub component: Option<usize>,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub provenance: Provenance,
    pub pass: bool,
}

impl Metric {
    pub fn new(
        name: impl Into<String>,
        component: Option<usize>,
        value: f64,
        relation: Relation,
        tolerance: f64,
        provenance: Provenance,
    ) -> Self {
        Self {
            name: name.into(),
            component,
            value,
            tolerance,
            relation,
            provenance,
            pass: relation.holds(value, tolerance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: Tag,
    pub config_hash: String,
    pub version: String,
    pub problem: String,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    /// Reported quantities without a pass/fail reading.
    pub values: BTreeMap<String, Value>,
}

impl ResultRecord {
    pub fn pass(&self) -> bool {
        self.metrics.iter().all(|m| m.pass)
    }

    pub fn metric(&self, name: &str, component: Option<usize>) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name && m.component == component)
    }

    /// One row per metric: `metric,component,value,tolerance,relation,provenance,pass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,component,value,tolerance,relation,provenance,pass\n");
        for m in &self.metrics {
            let c = m.component.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                m.name,
                c,
                m.value,
                m.tolerance,
                m.relation.symbol(),
                m.provenance.label(),
                m.pass
            );
        }
        s
    }
}

/// A supplementary table written as `<tag>_<hash>_<name>.csv`.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub csv: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub record: ResultRecord,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub dump_paths: bool,
}

/// Everything derived from the config before any long computation.
struct Prepared {
    spec: ProblemSpec,
    x0: Vec<f64>,
    measure: TruncatedMeasure,
    oracle_measure: TruncatedMeasure,
    time: TimeGrid,
    space: Option<(SpatialGrid, TimeGrid)>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn needs_grid(tag: Tag) -> bool {
    matches!(
        tag,
        Tag::SolvePide | Tag::Compare | Tag::ConvergeTruncation | Tag::Regularity
    )
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let lift = |e: Error| match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    };
    let mut spec = catalog(&cfg.problem.name, &cfg.problem.params).map_err(lift)?;
    if let Some(m) = &cfg.measure {
        spec = spec.with_levy(m.build().map_err(lift)?);
    }
    let dim = spec.k();
    let x0 = match cfg.mc.x0.len() {
        1 => vec![cfg.mc.x0[0]; dim],
        n if n == dim => cfg.mc.x0.clone(),
        n => return config_err(format!("mc.x0 has {n} entries, problem has dimension {dim}")),
    };
    if cfg.mc.n_paths < 2 {
        return config_err("mc.n_paths must be at least 2");
    }
    let measure = spec.levy.truncate(cfg.mc.k).map_err(lift)?;
    let oracle_measure = spec.levy.truncate(cfg.grid.k.unwrap_or(cfg.mc.k)).map_err(lift)?;
    let time = TimeGrid::new(0.0, spec.horizon, cfg.mc.n_steps).map_err(lift)?;

    let mut space = None;
    if needs_grid(cfg.experiment) && dim == 1 {
        let g = SpatialGrid::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n_cells).map_err(lift)?;
        let tg = TimeGrid::new(0.0, spec.horizon, cfg.grid.n_steps).map_err(lift)?;
        // stencil and explicit-step cap are checked for the finest measure used
        let finest = match cfg.experiment {
            Tag::ConvergeTruncation => cfg.truncation.iter().copied().max().unwrap_or(cfg.mc.k),
            _ => cfg.grid.k.unwrap_or(cfg.mc.k),
        };
        let fm = spec.levy.truncate(finest).map_err(lift)?;
        let stencil = NonlocalStencil::build(&spec, &fm, &g, 0.0).map_err(lift)?;
        check_cfl(&spec, &stencil, &g, &tg)?;
        if !g.contains(x0[0]) {
            return config_err(format!("x0 = {} lies outside the grid window", x0[0]));
        }
        space = Some((g, tg));
    } else if needs_grid(cfg.experiment) && cfg.experiment != Tag::Regularity {
        return config_err(format!("{:?} needs a one-dimensional problem", cfg.experiment));
    }

    match cfg.experiment {
        Tag::ConvergeTruncation => {
            let t = &cfg.truncation;
            if t.len() < 3 || t.windows(2).any(|w| w[0] >= w[1]) {
                return config_err("truncation ladder needs at least 3 strictly increasing entries");
            }
        }
        Tag::Moments => {
            if cfg.ladder.x.is_empty() || cfg.ladder.horizons.is_empty() {
                return config_err("moment ladder needs x and horizons");
            }
            if cfg.ladder.horizons.iter().any(|h| !(*h > 0.0)) {
                return config_err("ladder horizons must be positive");
            }
            if cfg.mc.n_paths < MOMENT_MIN_PATHS {
                return config_err(format!("moment cells need at least {MOMENT_MIN_PATHS} paths"));
            }
        }
        Tag::Regularity => {
            if cfg.ladder.x.is_empty() && cfg.ladder.pairs.is_empty() {
                return config_err("regularity needs ladder.x or ladder.pairs");
            }
            if cfg.ladder.p == 0 || !cfg.ladder.p.is_multiple_of(2) {
                return config_err("ladder.p must be a positive even integer");
            }
        }
        Tag::SolveRbsde if cfg.mc.n_penalty.iter().any(|n| !(*n >= 0.0 && n.is_finite())) => {
            return config_err("penalties must be finite and non-negative");
        }
        _ => {}
    }
    Ok(Prepared {
        spec,
        x0,
        measure,
        oracle_measure,
        time,
        space,
    })
}

/// Validates a config without running it.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    prepare(cfg).map(|_| ())
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Outcome> {
    let prep = prepare(cfg)?;
    let mut ctx = Context {
        cfg,
        prep: &prep,
        metrics: Vec::new(),
        values: BTreeMap::new(),
        artifacts: Vec::new(),
        opts,
    };
    match cfg.experiment {
        Tag::ValidateProblem => run_validate(&mut ctx)?,
        Tag::Simulate => run_simulate(&mut ctx)?,
        Tag::SolvePide => run_solve_pide(&mut ctx)?,
        Tag::SolveRbsde => run_solve_rbsde(&mut ctx)?,
        Tag::Compare => run_compare(&mut ctx)?,
        Tag::ConvergeTruncation => run_converge_truncation(&mut ctx)?,
        Tag::Regularity => run_regularity(&mut ctx)?,
        Tag::Moments => run_moments(&mut ctx)?,
    }
    let record = ResultRecord {
        experiment: cfg.experiment,
        config_hash: cfg.hash(),
        version: version(),
        problem: prep.spec.name.clone(),
        seed: cfg.seed,
        metrics: ctx.metrics,
        values: ctx.values,
    };
    Ok(Outcome {
        record,
        artifacts: ctx.artifacts,
    })
}

pub fn version() -> String {
    format!("ipde-core-v{}", env!("CARGO_PKG_VERSION"))
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    prep: &'a Prepared,
    metrics: Vec<Metric>,
    values: BTreeMap<String, Value>,
    artifacts: Vec<Artifact>,
    opts: RunOptions,
}

impl Context<'_> {
    fn metric(
        &mut self,
        name: impl Into<String>,
        i: Option<usize>,
        value: f64,
        rel: Relation,
        tol: f64,
        prov: Provenance,
    ) {
        self.metrics.push(Metric::new(name, i, value, rel, tol, prov));
    }

    fn value(&mut self, key: &str, v: impl Serialize) -> Result<()> {
        self.values.insert(key.to_string(), serde_json::to_value(v)?);
        Ok(())
    }

    fn tol(&self) -> &Tolerances {
        &self.cfg.tolerances
    }

    fn space(&self) -> Result<(SpatialGrid, TimeGrid)> {
        self.prep
            .space
            .ok_or_else(|| Error::Config("this experiment needs a one-dimensional grid".into()))
    }

    fn simulate(&self, x0: &[f64], seed: u64) -> Result<PathBundle> {
        let p = self.prep;
        simulate(&p.spec, &p.measure, &p.time, x0, self.cfg.mc.n_paths, seed)
    }
}

/// Binomial reference for the put instance, when applicable.
fn put_reference(spec: &ProblemSpec, x0: f64, steps: usize) -> Result<Option<f64>> {
    if spec.name != "AMERICAN_PUT_STYLE" || spec.terminal_shift != 0.0 {
        return Ok(None);
    }
    let Payoff::Put { strike } = spec.obstacle else {
        return Ok(None);
    };
    binomial_american_put(x0, strike, spec.drift.a, spec.diffusion.vol, spec.horizon, steps).map(Some)
}

fn run_validate(ctx: &mut Context) -> Result<()> {
    let spec = &ctx.prep.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let samples = ctx.tol().probe_samples;
    let lip = probe_lipschitz(spec, samples, &mut rng)?;
    let growth = probe_growth(spec, samples, &mut rng)?;
    for r in lip.records.iter().chain(&growth.records) {
        let bound = r.bound * (1.0 + 1e-9);
        let value = if r.max_ratio.is_finite() {
            r.max_ratio
        } else {
            f64::INFINITY
        };
        ctx.metric(
            &r.assumption,
            None,
            value,
            Relation::Le,
            bound,
            Provenance::SelfConsistency,
        );
    }
    ctx.value("lipschitz", &lip)?;
    ctx.value("growth", &growth)?;
    let levy = &spec.levy;
    ctx.value(
        "measure",
        json!({
            "kind": levy.kind(),
            "total_mass": levy.total_mass(),
            "small_jump_moment": levy.small_jump_moment(),
            "cutoff": ctx.prep.measure.cutoff(),
            "truncated_mass": ctx.prep.measure.total_mass(),
            "quadrature_nodes": ctx.prep.measure.nodes().len(),
        }),
    )?;
    Ok(())
}

fn run_simulate(ctx: &mut Context) -> Result<()> {
    let bundle = ctx.simulate(&ctx.prep.x0, ctx.cfg.seed)?;
    let n = bundle.grid.n_steps;
    let dim = bundle.dim;
    let mut max_abs: f64 = 0.0;
    let mut means = vec![0.0; dim];
    let mut jumps = 0usize;
    for p in 0..bundle.n_paths {
        for step in 0..=n {
            for v in bundle.state(p, step) {
                max_abs = max_abs.max(v.abs());
            }
            if step < n {
                jumps += bundle.n_jumps(p, step);
            }
        }
        for (c, v) in bundle.state(p, n).iter().enumerate() {
            means[c] += v / bundle.n_paths as f64;
        }
    }
    let ses: Vec<f64> = (0..dim)
        .map(|c| {
            let v: Vec<f64> = (0..bundle.n_paths).map(|p| bundle.state(p, n)[c]).collect();
            crate::rbsde::std_error(&v)
        })
        .collect();
    ctx.metric(
        "max_abs_state",
        None,
        max_abs,
        Relation::Le,
        crate::forward::EXPLOSION_LIMIT,
        Provenance::Exact,
    );
    ctx.value("mean_terminal", &means)?;
    ctx.value("stderr_terminal", &ses)?;
    ctx.value("jumps_per_path", jumps as f64 / bundle.n_paths as f64)?;
    ctx.value("cutoff", bundle.cutoff)?;
    if ctx.opts.dump_paths {
        let mut csv = Vec::new();
        bundle.write_csv(&mut csv)?;
        ctx.artifacts.push(Artifact {
            name: "paths".into(),
            csv,
        });
    }
    Ok(())
}

/// Solves on the configured grid and records the structural metrics.
fn grid_solve(ctx: &mut Context, measure: &TruncatedMeasure) -> Result<GridSolution> {
    let (g, tg) = ctx.space()?;
    let spec = &ctx.prep.spec;
    let sol = pide::solve(spec, measure, &g, &tg)?;
    let exact = ctx.tol().exact;
    let mut terminal: f64 = 0.0;
    let mut dominance = f64::INFINITY;
    for i in 0..sol.m {
        for j in 0..g.len() {
            terminal = terminal.max((sol.value(i, tg.n_steps, j) - spec.g(i, &[g.x(j)])).abs());
            for n in 0..=tg.n_steps {
                dominance = dominance.min(sol.value(i, n, j) - spec.ell(tg.t(n), &[g.x(j)]));
            }
        }
    }
    ctx.metric(
        "terminal_condition",
        None,
        terminal,
        Relation::Le,
        exact,
        Provenance::Exact,
    );
    ctx.metric(
        "obstacle_dominance",
        None,
        dominance,
        Relation::Ge,
        0.0,
        Provenance::Exact,
    );
    ctx.metric(
        "out_of_window_fraction",
        None,
        sol.stencil.out_of_window_fraction,
        Relation::Le,
        MAX_OUT_OF_WINDOW,
        Provenance::Exact,
    );
    ctx.value("stencil", &sol.stencil)?;
    ctx.value("cfl", &sol.cfl)?;
    Ok(sol)
}

fn residual(ctx: &Context, sol: &GridSolution, measure: &TruncatedMeasure) -> Result<pide::ResidualReport> {
    let t_max = ctx.cfg.grid.residual_t_max.unwrap_or(sol.time.horizon);
    pide::viscosity_residual_until(sol, &ctx.prep.spec, measure, t_max)
}

fn run_solve_pide(ctx: &mut Context) -> Result<()> {
    let measure = ctx.prep.oracle_measure.clone();
    let sol = grid_solve(ctx, &measure)?;
    let x0 = ctx.prep.x0[0];
    let u = sol.evaluate(sol.time.t0, x0)?;
    ctx.value("u0", &u)?;
    let res = residual(ctx, &sol, &measure)?;
    let full = pide::viscosity_residual(&sol, &ctx.prep.spec, &measure)?;
    ctx.value("residual", &res)?;
    ctx.value("residual_full_interior", &full)?;
    if ctx.cfg.grid.refine {
        let (g, tg) = ctx.space()?;
        let g2 = SpatialGrid::new(g.x_min, g.x_max, 2 * g.n_cells)?;
        let tg2 = TimeGrid::new(tg.t0, tg.horizon, 2 * tg.n_steps)?;
        let fine = pide::solve(&ctx.prep.spec, &measure, &g2, &tg2)?;
        let res2 = residual(ctx, &fine, &measure)?;
        let ratio = if res.sup > 0.0 { res2.sup / res.sup } else { 0.0 };
        let (lo, hi) = (ctx.tol().residual_ratio_min, ctx.tol().residual_ratio_max);
        if res.sup > 0.0 {
            ctx.metric(
                "residual_halving_ratio",
                None,
                ratio,
                Relation::Ge,
                lo,
                Provenance::SelfConsistency,
            );
            ctx.metric(
                "residual_halving_ratio",
                None,
                ratio,
                Relation::Le,
                hi,
                Provenance::SelfConsistency,
            );
        } else {
            ctx.metric(
                "residual_sup_refined",
                None,
                res2.sup,
                Relation::Le,
                ctx.tol().exact,
                Provenance::Exact,
            );
        }
        ctx.value("residual_refined", &res2)?;
        ctx.value(
            "residual_refined_full_interior",
            pide::viscosity_residual(&fine, &ctx.prep.spec, &measure)?,
        )?;
    }
    if let Some(reference) = put_reference(&ctx.prep.spec, x0, ctx.tol().binomial_steps)? {
        let rel = (u[0] - reference).abs() / reference;
        ctx.metric(
            "grid_vs_binomial_rel",
            Some(0),
            rel,
            Relation::Le,
            ctx.tol().oracle_rel,
            Provenance::Oracle,
        );
        ctx.value("binomial", reference)?;
    }
    let mut csv = Vec::new();
    sol.write_csv(&mut csv, Some(&res), GRID_CSV_LEVELS)?;
    ctx.artifacts.push(Artifact {
        name: "grid".into(),
        csv,
    });
    Ok(())
}

fn mc_structural(ctx: &mut Context, sol: &BackwardSolution, label: &str) {
    let exact = ctx.tol().exact;
    ctx.metric(
        format!("{label}skorokhod"),
        None,
        sol.max_skorokhod(),
        Relation::Le,
        exact,
        Provenance::Exact,
    );
    ctx.metric(
        format!("{label}obstacle_gap"),
        None,
        sol.min_obstacle_gap(),
        Relation::Ge,
        0.0,
        Provenance::Exact,
    );
}

fn run_solve_rbsde(ctx: &mut Context) -> Result<()> {
    let bundle = ctx.simulate(&ctx.prep.x0, ctx.cfg.seed)?;
    let p = ctx.prep;
    let basis = ctx.cfg.mc.basis;
    let sol = solve_reflected(&p.spec, &bundle, &p.measure, &basis)?;
    mc_structural(ctx, &sol, "");
    ctx.value("reflected", sol.summary())?;
    if let Some(reference) = put_reference(&p.spec, p.x0[0], ctx.tol().binomial_steps)? {
        let rel = (sol.u0[0] - reference).abs() / reference;
        ctx.metric(
            "mc_vs_binomial_rel",
            Some(0),
            rel,
            Relation::Le,
            ctx.tol().oracle_rel,
            Provenance::Oracle,
        );
        ctx.value("binomial", reference)?;
    }
    if !ctx.cfg.mc.n_penalty.is_empty() {
        let mut ladder = Vec::new();
        for &n in &ctx.cfg.mc.n_penalty {
            let s = solve_penalized(&p.spec, &bundle, &p.measure, &basis, n)?;
            ladder.push((n, s.summary()));
        }
        for i in 0..p.spec.m() {
            let drop = ladder
                .windows(2)
                .map(|w| w[0].1.u0[i] - w[1].1.u0[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if ladder.len() > 1 {
                ctx.metric(
                    "penalty_monotone_drop",
                    Some(i),
                    drop,
                    Relation::Le,
                    0.0,
                    Provenance::SelfConsistency,
                );
            }
            let last = &ladder.last().expect("non-empty").1;
            let rel = (last.u0[i] - sol.u0[i]).abs() / sol.u0[i].abs().max(f64::MIN_POSITIVE);
            ctx.metric(
                "penalty_vs_reflected_rel",
                Some(i),
                rel,
                Relation::Le,
                ctx.tol().penalty_rel,
                Provenance::SelfConsistency,
            );
        }
        ctx.value(
            "penalized",
            ladder
                .iter()
                .map(|(n, s)| json!({ "n_penalty": n, "summary": s }))
                .collect::<Vec<_>>(),
        )?;
    }
    if ctx.opts.dump_paths {
        let mut csv = String::from("path,step,i,y,dk,q,obstacle\n");
        for path in 0..sol.n_paths {
            for n in 0..=sol.n_steps {
                for i in 0..sol.m {
                    let (dk, q) = if n < sol.n_steps {
                        (sol.dk(n, path, i), sol.q(n, path, i))
                    } else {
                        (0.0, 0.0)
                    };
                    let _ = writeln!(
                        csv,
                        "{path},{n},{i},{},{dk},{q},{}",
                        sol.y(n, path, i),
                        sol.obstacle(n, path)
                    );
                }
            }
        }
        ctx.artifacts.push(Artifact {
            name: "steps".into(),
            csv: csv.into_bytes(),
        });
    }
    Ok(())
}

fn run_compare(ctx: &mut Context) -> Result<()> {
    let p = ctx.prep;
    let bundle = ctx.simulate(&p.x0, ctx.cfg.seed)?;
    let mc = solve_reflected(&p.spec, &bundle, &p.measure, &ctx.cfg.mc.basis)?;
    mc_structural(ctx, &mc, "mc_");
    let oracle_measure = p.oracle_measure.clone();
    let grid = grid_solve(ctx, &oracle_measure)?;
    let ug = grid.evaluate(grid.time.t0, p.x0[0])?;
    let tol = ctx.tol().clone();
    for (i, &ugi) in ug.iter().enumerate() {
        let gap = (mc.u0[i] - ugi).abs();
        let band = tol.sigmas * mc.stderr[i] + tol.compare_rel * ugi.abs();
        ctx.metric("abs_gap", Some(i), gap, Relation::Le, band, Provenance::SelfConsistency);
        let rel = if ugi != 0.0 { gap / ugi.abs() } else { gap };
        ctx.metric(
            "relative_gap",
            Some(i),
            rel,
            Relation::Le,
            tol.compare_rel,
            Provenance::SelfConsistency,
        );
    }
    if let Some(reference) = put_reference(&p.spec, p.x0[0], tol.binomial_steps)? {
        let rel_mc = (mc.u0[0] - reference).abs() / reference;
        let rel_grid = (ug[0] - reference).abs() / reference;
        ctx.metric(
            "mc_vs_binomial_rel",
            Some(0),
            rel_mc,
            Relation::Le,
            tol.oracle_rel,
            Provenance::Oracle,
        );
        ctx.metric(
            "grid_vs_binomial_rel",
            Some(0),
            rel_grid,
            Relation::Le,
            tol.oracle_rel,
            Provenance::Oracle,
        );
        ctx.value("binomial", reference)?;
    }
    if ctx.cfg.compare.representation {
        for i in 0..p.spec.m() {
            let r = representation_check(
                &mc,
                &grid,
                &bundle,
                &p.spec,
                &p.measure,
                i,
                ctx.cfg.compare.representation_paths,
            )?;
            ctx.metric(
                "representation_rel_l2",
                Some(i),
                r.relative_l2,
                Relation::Le,
                tol.representation,
                Provenance::Oracle,
            );
            ctx.value(&format!("representation_{i}"), &r)?;
        }
    }
    if p.spec.driver_mode == DriverMode::NonlocalNorm {
        let gap = zero_jump_mode_gap(ctx)?;
        ctx.metric("zero_jump_mode_gap", None, gap, Relation::Le, 0.0, Provenance::Exact);
    }
    ctx.value("mc", mc.summary())?;
    ctx.value("grid_u0", &ug)?;
    Ok(())
}

/// With `β ≡ 0` the jump component vanishes, so both driver modes must
/// produce identical numbers from both solvers.
fn zero_jump_mode_gap(ctx: &Context) -> Result<f64> {
    let p = ctx.prep;
    let mut norm = p.spec.clone();
    norm.jump_size = JumpSize::Zero;
    let mut linear = norm.clone();
    linear.driver_mode = DriverMode::NonlocalLinear;
    let n_paths = ctx.cfg.mc.n_paths.min(10_000);
    let bundle = simulate(&norm, &p.measure, &p.time, &p.x0, n_paths, ctx.cfg.seed)?;
    let a = solve_reflected(&norm, &bundle, &p.measure, &ctx.cfg.mc.basis)?;
    let b = solve_reflected(&linear, &bundle, &p.measure, &ctx.cfg.mc.basis)?;
    let mut gap: f64 = 0.0;
    for n in 0..=a.n_steps {
        for path in 0..a.n_paths {
            for i in 0..a.m {
                gap = gap.max((a.y(n, path, i) - b.y(n, path, i)).abs());
            }
        }
    }
    if let Some((g, tg)) = p.space {
        // a short grid run suffices for an exact identity
        let tg = TimeGrid::new(tg.t0, tg.horizon, tg.n_steps.clamp(1, 100))?;
        let ga = pide::solve(&norm, &p.oracle_measure, &g, &tg)?;
        let gb = pide::solve(&linear, &p.oracle_measure, &g, &tg)?;
        for i in 0..ga.m {
            for (u, v) in ga.slice(i, 0).iter().zip(gb.slice(i, 0)) {
                gap = gap.max((u - v).abs());
            }
        }
    }
    Ok(gap)
}

fn run_converge_truncation(ctx: &mut Context) -> Result<()> {
    let p = ctx.prep;
    let (g, _) = ctx.space()?;
    let ladder = ctx.cfg.truncation.clone();
    let k_max = *ladder.last().expect("validated");
    let finest = p.spec.levy.truncate(k_max)?;
    let noise = Arc::new(Noise::generate(
        &finest,
        &p.time,
        p.spec.dims.brownian,
        ctx.cfg.mc.n_paths,
        ctx.cfg.seed,
    )?);
    let x0 = p.x0[0];
    let (lo, hi) = (g.len() / 4, 3 * g.len() / 4);

    let mut bundles = Vec::with_capacity(ladder.len());
    let mut mcs = Vec::with_capacity(ladder.len());
    let mut grids = Vec::with_capacity(ladder.len());
    for &k in &ladder {
        let m = p.spec.levy.truncate(k)?;
        let b = simulate_with_noise(&p.spec, &m, &p.time, &p.x0, noise.clone())?;
        mcs.push(solve_reflected(&p.spec, &b, &m, &ctx.cfg.mc.basis)?);
        bundles.push(b);
        let (gg, tg) = ctx.space()?;
        grids.push(pide::solve(&p.spec, &m, &gg, &tg)?);
    }
    let tol = ctx.tol().clone();
    let last = ladder.len() - 1;
    let mut rows = String::from("k,oracle_u0,mc_u0,mc_stderr,oracle_sup_diff_next,path_distance_next\n");
    for i in 0..p.spec.m() {
        let sup_diffs: Vec<f64> = (0..last)
            .map(|j| {
                let (a, b) = (grids[j].slice(i, 0), grids[j + 1].slice(i, 0));
                (lo..=hi).map(|x| (a[x] - b[x]).abs()).fold(0.0, f64::max)
            })
            .collect();
        let rise = sup_diffs
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        ctx.metric(
            "oracle_diff_increase",
            Some(i),
            rise,
            Relation::Lt,
            0.0,
            Provenance::SelfConsistency,
        );
        ctx.metric(
            "oracle_final_gap",
            Some(i),
            sup_diffs[last - 1],
            Relation::Le,
            tol.truncation_gap,
            Provenance::SelfConsistency,
        );
        let u_or: Vec<f64> = grids
            .iter()
            .map(|s| s.evaluate(0.0, x0).map(|v| v[i]))
            .collect::<Result<_>>()?;
        for j in 0..last {
            let d_mc = mcs[j].u0[i] - mcs[last].u0[i];
            let d_or = u_or[j] - u_or[last];
            let band = tol.sigmas * mcs[j].paired_stderr(&mcs[last], i) + tol.exact;
            ctx.metric(
                format!("mc_vs_oracle_difference_k{}", ladder[j]),
                Some(i),
                (d_mc - d_or).abs(),
                Relation::Le,
                band,
                Provenance::SelfConsistency,
            );
        }
        ctx.value(&format!("oracle_sup_diffs_{i}"), &sup_diffs)?;
        if i == 0 {
            for j in 0..=last {
                let (sd, pd) = if j < last {
                    (sup_diffs[j], path_distance(&bundles[j], &bundles[j + 1])?)
                } else {
                    (0.0, 0.0)
                };
                let _ = writeln!(
                    rows,
                    "{},{},{},{},{},{}",
                    ladder[j], u_or[j], mcs[j].u0[0], mcs[j].stderr[0], sd, pd
                );
            }
        }
    }
    let distances: Vec<f64> = (0..last)
        .map(|j| path_distance(&bundles[j], &bundles[j + 1]))
        .collect::<Result<_>>()?;
    ctx.value("path_distances", &distances)?;
    ctx.value("mc_u0", mcs.iter().map(|s| s.u0.clone()).collect::<Vec<_>>())?;
    ctx.artifacts.push(Artifact {
        name: "ladder".into(),
        csv: rows.into_bytes(),
    });
    Ok(())
}

fn run_regularity(ctx: &mut Context) -> Result<()> {
    let p = ctx.prep;
    let tol = ctx.tol().clone();
    let basis = ctx.cfg.mc.basis;
    if !ctx.cfg.ladder.pairs.is_empty() {
        if p.spec.k() != 1 {
            return config_err("Lipschitz pairs need a one-dimensional problem");
        }
        let pairs: Vec<(f64, f64)> = ctx.cfg.ladder.pairs.iter().map(|q| (q[0], q[1])).collect();
        for i in 0..p.spec.m() {
            let rep = lipschitz_u_check(
                &p.spec,
                &p.measure,
                &p.time,
                &pairs,
                ctx.cfg.mc.n_paths,
                ctx.cfg.seed,
                &basis,
                i,
            )?;
            for q in &rep.pairs {
                let name = format!("lipschitz_quotient_{}_{}", q.x, q.x2);
                match tol.lipschitz_bound {
                    Some(b) => ctx.metric(name, Some(i), q.quotient, Relation::Le, b + q.band, Provenance::Oracle),
                    None => ctx.metric(
                        name,
                        Some(i),
                        q.quotient,
                        Relation::Le,
                        f64::MAX,
                        Provenance::SelfConsistency,
                    ),
                }
            }
            ctx.value(&format!("lipschitz_{i}"), &rep)?;
        }
    }
    if !ctx.cfg.ladder.x.is_empty() {
        let sols: Vec<(f64, BackwardSolution)> = ctx
            .cfg
            .ladder
            .x
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let b = ctx.simulate(&vec![x; p.spec.k()], ctx.cfg.seed.wrapping_add(j as u64))?;
                Ok((x, solve_reflected(&p.spec, &b, &p.measure, &basis)?))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<(f64, &BackwardSolution)> = sols.iter().map(|(x, s)| (*x, s)).collect();
        for i in 0..p.spec.m() {
            let rep = jump_moment_check(&refs, ctx.cfg.ladder.p, i)?;
            ctx.metric(
                "jump_moment_rho",
                Some(i),
                rep.rho_hat,
                Relation::Le,
                tol.rho_max,
                Provenance::SelfConsistency,
            );
            ctx.metric(
                "jump_moment_c_finite",
                Some(i),
                rep.c_hat,
                Relation::Le,
                f64::MAX,
                Provenance::SelfConsistency,
            );
            ctx.metric(
                "jump_moment_worst_ratio",
                Some(i),
                rep.worst_ratio,
                Relation::Le,
                1.0 + tol.exact,
                Provenance::SelfConsistency,
            );
            ctx.value(&format!("jump_moments_{i}"), &rep)?;
        }
    }
    if p.space.is_some() {
        let m = p.oracle_measure.clone();
        let grid = grid_solve(ctx, &m)?;
        let xs = grid.grid.nodes();
        let mut rows = String::from("x,i,b\n");
        for i in 0..p.spec.m() {
            let b = pide::nonlocal_b_profile(&grid, &p.spec, &m, i, 0)?;
            let non_finite = b.iter().filter(|v| !v.is_finite()).count();
            ctx.metric(
                "b_non_finite",
                Some(i),
                non_finite as f64,
                Relation::Le,
                0.0,
                Provenance::Exact,
            );
            let pts: Vec<(f64, f64)> = xs.iter().zip(&b).map(|(x, v)| (x.abs(), v.abs())).collect();
            let fit = fit_power_envelope(&pts, 0.0, |r, j| 1.0 + pts[j].0.powf(r));
            let worst = pts
                .iter()
                .map(|&(x, v)| {
                    let env = fit.c * (1.0 + x.powf(fit.p));
                    if env > 0.0 {
                        v / env
                    } else if v == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            ctx.metric(
                "b_envelope_ratio",
                Some(i),
                worst,
                Relation::Le,
                1.0 + tol.exact,
                Provenance::SelfConsistency,
            );
            ctx.value(&format!("b_envelope_{i}"), fit)?;
            for (x, v) in xs.iter().zip(&b) {
                let _ = writeln!(rows, "{x},{i},{v}");
            }
        }
        ctx.artifacts.push(Artifact {
            name: "b_profile".into(),
            csv: rows.into_bytes(),
        });
    }
    Ok(())
}

fn run_moments(ctx: &mut Context) -> Result<()> {
    let p = ctx.prep;
    let mut bundles = Vec::new();
    let mut j = 0u64;
    for &h in &ctx.cfg.ladder.horizons {
        let tg = TimeGrid::new(0.0, h, ctx.cfg.mc.n_steps)?;
        for &x in &ctx.cfg.ladder.x {
            let x0 = vec![x; p.spec.k()];
            bundles.push(simulate(
                &p.spec,
                &p.measure,
                &tg,
                &x0,
                ctx.cfg.mc.n_paths,
                ctx.cfg.seed.wrapping_add(j),
            )?);
            j += 1;
        }
    }
    let report = check_moments(&bundles.iter().collect::<Vec<_>>())?;
    let tol = ctx.tol().clone();
    let fit2 = report.fit(2).expect("p = 2 is always fitted");
    ctx.metric(
        "m2_horizon_stability",
        None,
        fit2.horizon_stability,
        Relation::Le,
        tol.moment_stability,
        Provenance::SelfConsistency,
    );
    let sigma_only = p.spec.jump_size.is_zero() && p.spec.drift.mu == 0.0 && p.spec.drift.a == 0.0;
    if sigma_only {
        let doob = fit2.cells.iter().map(|c| c.doob_ratio).fold(0.0, f64::max);
        ctx.metric("doob_ratio", None, doob, Relation::Le, tol.doob, Provenance::Oracle);
        if p.spec.diffusion.vol == 0.0 {
            let s2 = p.spec.diffusion.s.powi(2) * p.spec.k() as f64;
            ctx.metric(
                "m2_sigma_only",
                None,
                fit2.m_hat,
                Relation::Le,
                tol.doob * s2,
                Provenance::Oracle,
            );
        }
    }
    ctx.value("moments", &report)?;
    Ok(())
}

/// Fails unless `dir` exists (or can be created) and accepts files.
pub fn check_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".ipde_write_probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

/// Writes `<tag>_<hash>.{csv,json}`, the artifacts, and a `.timing`
/// sidecar holding the wall-clock seconds. Returns the result-file paths.
pub fn emit(outcome: &Outcome, dir: &Path, wall_clock: Option<f64>) -> Result<Vec<PathBuf>> {
    let r = &outcome.record;
    let stem = format!("{}_{}", r.experiment.stem(), r.config_hash);
    let mut written = Vec::new();
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, r.to_csv())?;
    written.push(csv);
    let js = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(r)?;
    text.push('\n');
    std::fs::write(&js, text)?;
    written.push(js);
    for a in &outcome.artifacts {
        let path = dir.join(format!("{stem}_{}.csv", a.name));
        std::fs::write(&path, &a.csv)?;
        written.push(path);
    }
    if let Some(secs) = wall_clock {
        std::fs::write(
            dir.join(format!("{stem}.timing")),
            format!("{{\"wall_clock_seconds\": {secs}}}\n"),
        )?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("experiment = \"SIMULATE\"\nbogus = 1\n[problem]\nname = \"CONSTANT\"\n");
        assert!(matches!(e, Err(Error::Config(_))));
        let e =
            ExperimentConfig::from_toml("experiment = \"SIMULATE\"\n[problem]\nname = \"CONSTANT\"\n[mc]\npaths = 3\n");
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_layout_defaults_and_output_fields() {
        let a = cfg("experiment = \"SIMULATE\"\nseed = 4\n[problem]\nname = \"CONSTANT\"\n");
        let b = cfg("seed = 4\nexperiment = \"SIMULATE\"\nout = \"/tmp/x\"\nthreads = 3\n\n[problem]\nname=\"CONSTANT\"\nparams = {}\n[mc]\nn_paths = 10000\n");
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = cfg("experiment = \"SIMULATE\"\nseed = 5\n[problem]\nname = \"CONSTANT\"\n");
        assert_ne!(a.hash(), c.hash());
        let d = cfg("experiment = \"SIMULATE\"\nseed = 4\n[problem]\nname = \"CONSTANT\"\nparams = { c = 2.0 }\n");
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn grid_validation_happens_before_running() {
        let c = cfg("experiment = \"SOLVE_PIDE\"\n[problem]\nname = \"INFINITE_ACTIVITY_PUT\"\n[mc]\nk = 128\n[grid]\nn_steps = 5\n");
        assert!(matches!(validate(&c), Err(Error::Config(_))));
        let c = cfg("experiment = \"CONVERGE_TRUNCATION\"\ntruncation = [4, 2, 8]\n[problem]\nname = \"CONSTANT\"\n[grid]\nx_min = -1.0\nx_max = 3.0\n");
        assert!(matches!(validate(&c), Err(Error::Config(_))));
    }

    #[test]
    fn constant_compare_has_zero_gap() {
        let c = cfg("experiment = \"COMPARE\"\n[problem]\nname = \"CONSTANT\"\n[mc]\nn_paths = 200\nn_steps = 5\n[grid]\nx_min = -1.0\nx_max = 3.0\nn_cells = 40\nn_steps = 10\n");
        let out = run(&c, RunOptions::default()).unwrap();
        assert_eq!(out.record.metric("abs_gap", Some(0)).unwrap().value, 0.0);
        assert!(out.record.pass());
    }

    #[test]
    fn empty_metric_list_writes_header_only() {
        let r = ResultRecord {
            experiment: Tag::Simulate,
            config_hash: "0".repeat(16),
            version: version(),
            problem: "CONSTANT".into(),
            seed: 0,
            metrics: vec![],
            values: BTreeMap::new(),
        };
        assert_eq!(
            r.to_csv(),
            "metric,component,value,tolerance,relation,provenance,pass\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let out = Outcome {
            record: r,
            artifacts: vec![],
        };
        let files = emit(&out, dir.path(), Some(1.0)).unwrap();
        assert_eq!(files.len(), 2);
        assert!(dir.path().join(format!("simulate_{}.timing", "0".repeat(16))).exists());
    }
}
