//! End-to-end acceptance run. Prints one `[PASS]` / `[FAIL]` line per
//! criterion and exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ipde_core::experiments::{self, ExperimentConfig, Outcome, ResultRecord, RunOptions};
use ipde_core::levy::LevyMeasure;
use ipde_core::par;
use ipde_core::pide::{NonlocalStencil, SpatialGrid};
use ipde_core::problem::{catalog, JumpSize, JumpWeight};

const PUT_RUNTIME: Duration = Duration::from_secs(120);
const TRUNCATION_RUNTIME: Duration = Duration::from_secs(600);
const STENCIL_TOL: f64 = 1e-10;

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let path = config_dir().join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Runs each named config once and remembers the outcome and its wall clock.
#[derive(Default)]
struct Runs {
    done: HashMap<String, (Outcome, Duration)>,
}

impl Runs {
    fn get(&mut self, name: &str) -> Result<&(Outcome, Duration), String> {
        if !self.done.contains_key(name) {
            let cfg = load(name);
            let start = Instant::now();
            let out = experiments::run(&cfg, RunOptions::default()).map_err(|e| format!("{name}: {e}"))?;
            self.done.insert(name.to_string(), (out, start.elapsed()));
        }
        Ok(&self.done[name])
    }

    fn record(&mut self, name: &str) -> Result<ResultRecord, String> {
        Ok(self.get(name)?.0.record.clone())
    }
}

/// Every metric whose name starts with `prefix` must pass; at least one must exist.
fn require(r: &ResultRecord, prefix: &str, notes: &mut Vec<String>) -> bool {
    let hits: Vec<_> = r.metrics.iter().filter(|m| m.name.starts_with(prefix)).collect();
    if hits.is_empty() {
        notes.push(format!("{prefix}: missing"));
        return false;
    }
    let mut ok = true;
    for m in hits {
        if !m.pass {
            notes.push(format!(
                "{}{} = {:.3e} vs {:.3e}",
                m.name,
                m.component.map(|c| format!("[{c}]")).unwrap_or_default(),
                m.value,
                m.tolerance
            ));
            ok = false;
        }
    }
    ok
}

fn value_of(r: &ResultRecord, name: &str, component: Option<usize>) -> f64 {
    r.metric(name, component).map(|m| m.value).unwrap_or(f64::NAN)
}

type Verdict = Result<(bool, String), String>;
type Criterion = (u32, &'static str, Box<dyn FnOnce(&mut Runs) -> Verdict>);

fn two_solver_agreement(runs: &mut Runs) -> Verdict {
    let (out, wall) = runs.get("put_compare")?;
    let r = &out.record;
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["mc_vs_binomial_rel", "grid_vs_binomial_rel", "relative_gap", "abs_gap"] {
        ok &= require(r, name, &mut notes);
    }
    if *wall > PUT_RUNTIME {
        ok = false;
        notes.push(format!("runtime {:.1}s", wall.as_secs_f64()));
    }
    Ok((
        ok,
        format!(
            "mc {:.2e}, grid {:.2e}, gap {:.2e} rel; {:.1}s {}",
            value_of(r, "mc_vs_binomial_rel", Some(0)),
            value_of(r, "grid_vs_binomial_rel", Some(0)),
            value_of(r, "relative_gap", Some(0)),
            wall.as_secs_f64(),
            notes.join("; ")
        ),
    ))
}

fn truncation_convergence(runs: &mut Runs) -> Verdict {
    let (out, wall) = runs.get("ia_truncation")?;
    let r = &out.record;
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["oracle_diff_increase", "oracle_final_gap", "mc_vs_oracle_difference_k"] {
        ok &= require(r, name, &mut notes);
    }
    if *wall > TRUNCATION_RUNTIME {
        ok = false;
        notes.push(format!("runtime {:.1}s", wall.as_secs_f64()));
    }
    Ok((
        ok,
        format!(
            "final gap {:.2e}; {:.1}s {}",
            value_of(r, "oracle_final_gap", Some(0)),
            wall.as_secs_f64(),
            notes.join("; ")
        ),
    ))
}

fn jump_representation(runs: &mut Runs) -> Verdict {
    let ia = runs.record("ia_representation")?;
    let put = runs.record("put_compare")?;
    let mut notes = Vec::new();
    let mut ok = require(&ia, "representation_rel_l2", &mut notes);
    let zero = value_of(&put, "representation_rel_l2", Some(0));
    if zero != 0.0 {
        ok = false;
        notes.push(format!("β ≡ 0 error {zero:e}"));
    }
    Ok((
        ok,
        format!(
            "rel L2 {:.3e}, β ≡ 0 gives {zero:e} {}",
            value_of(&ia, "representation_rel_l2", Some(0)),
            notes.join("; ")
        ),
    ))
}

fn skorokhod_and_obstacle(runs: &mut Runs) -> Verdict {
    let rbsde = runs.record("put_rbsde")?;
    let pide = runs.record("put_pide")?;
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["skorokhod", "obstacle_gap"] {
        ok &= require(&rbsde, name, &mut notes);
    }
    ok &= require(&pide, "residual_halving_ratio", &mut notes);
    Ok((
        ok,
        format!(
            "Σ(Y−ℓ)ΔK {:.1e}, min(Y−ℓ) {:.1e}, residual ratio {:.3} {}",
            value_of(&rbsde, "skorokhod", None),
            value_of(&rbsde, "obstacle_gap", None),
            value_of(&pide, "residual_halving_ratio", None),
            notes.join("; ")
        ),
    ))
}

fn operator_identities() -> Verdict {
    let mut worst = 0.0f64;

    // the catalog's infinite-activity put on its usual window
    let s = catalog("INFINITE_ACTIVITY_PUT", &Default::default()).map_err(|e| e.to_string())?;
    let m = s.levy.truncate(16).map_err(|e| e.to_string())?;
    let g = SpatialGrid::new(0.0, 3.0, 600).map_err(|e| e.to_string())?;
    let st = NonlocalStencil::build(&s, &m, &g, 0.0).map_err(|e| e.to_string())?;
    let ones = vec![1.0; g.len()];
    let lin: Vec<f64> = g.nodes().iter().map(|x| 0.7 * x - 0.3).collect();
    for j in 0..g.len() {
        worst = worst.max(st.apply_k(&ones, j).abs()).max(st.apply_b(&ones, j, 0).abs());
        // every jump from x ≤ 2 lands inside [0, 3]
        if g.x(j) <= 2.0 {
            worst = worst.max(st.apply_k(&lin, j).abs());
        }
    }

    // additive jumps under a symmetric measure, odd integrand for B
    let mut s = catalog(
        "LINEAR_DRIFT",
        &[("a".to_string(), 0.0), ("mu".to_string(), 0.0), ("s".to_string(), 0.0)].into(),
    )
    .map_err(|e| e.to_string())?;
    s.jump_size = JumpSize::Additive { scale: 1.0 };
    s.jump_weights = vec![JumpWeight::Absolute { c: 1.0 }];
    let s = s.with_levy(LevyMeasure::stable_like(0.2, 0.5, true).map_err(|e| e.to_string())?);
    let m = s.levy.truncate(8).map_err(|e| e.to_string())?;
    let g = SpatialGrid::new(-4.0, 4.0, 160).map_err(|e| e.to_string())?;
    let st = NonlocalStencil::build(&s, &m, &g, 0.0).map_err(|e| e.to_string())?;
    let id = g.nodes();
    let mut odd = 0.0f64;
    for j in 20..140 {
        odd = odd.max(st.apply_b(&id, j, 0).abs());
        worst = worst.max(st.apply_k(&id, j).abs());
    }
    Ok((
        worst <= STENCIL_TOL && odd <= STENCIL_TOL,
        format!("constants/linears {worst:.1e}, odd B {odd:.1e}"),
    ))
}

fn moment_estimates(runs: &mut Runs) -> Verdict {
    let merton = runs.record("merton_moments")?;
    let bm = runs.record("brownian_moments")?;
    let mut notes = Vec::new();
    let mut ok = require(&merton, "m2_horizon_stability", &mut notes);
    ok &= require(&bm, "doob_ratio", &mut notes);
    ok &= require(&bm, "m2_sigma_only", &mut notes);
    Ok((
        ok,
        format!(
            "stability {:.3}, Doob ratio {:.3} {}",
            value_of(&merton, "m2_horizon_stability", None),
            value_of(&bm, "doob_ratio", None),
            notes.join("; ")
        ),
    ))
}

fn regularity_suite(runs: &mut Runs) -> Verdict {
    let put = runs.record("put_regularity")?;
    let ia = runs.record("ia_regularity")?;
    let mut notes = Vec::new();
    let mut ok = require(&put, "lipschitz_quotient_", &mut notes);
    for name in ["jump_moment_", "b_non_finite", "b_envelope_ratio"] {
        ok &= require(&ia, name, &mut notes);
    }
    let max_q = put
        .metrics
        .iter()
        .filter(|m| m.name.starts_with("lipschitz_quotient_"))
        .map(|m| m.value)
        .fold(0.0, f64::max);
    Ok((
        ok,
        format!(
            "max quotient {max_q:.3}, ρ̂ {:.2} {}",
            value_of(&ia, "jump_moment_rho", Some(0)),
            notes.join("; ")
        ),
    ))
}

fn penalization(runs: &mut Runs) -> Verdict {
    let r = runs.record("put_rbsde")?;
    let mut notes = Vec::new();
    let mut ok = require(&r, "penalty_monotone_drop", &mut notes);
    ok &= require(&r, "penalty_vs_reflected_rel", &mut notes);
    Ok((
        ok,
        format!(
            "gap at largest n {:.2e} {}",
            value_of(&r, "penalty_vs_reflected_rel", Some(0)),
            notes.join("; ")
        ),
    ))
}

fn norm_driver(runs: &mut Runs) -> Verdict {
    let r = runs.record("norm_compare")?;
    let mut notes = Vec::new();
    let mut ok = require(&r, "relative_gap", &mut notes);
    ok &= require(&r, "abs_gap", &mut notes);
    ok &= require(&r, "zero_jump_mode_gap", &mut notes);
    Ok((
        ok,
        format!(
            "gap {:.2e} rel, ζ ≡ 0 mode gap {:e} {}",
            value_of(&r, "relative_gap", Some(0)),
            value_of(&r, "zero_jump_mode_gap", None),
            notes.join("; ")
        ),
    ))
}

fn files_of(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        v.push((name, std::fs::read(&p).map_err(|e| e.to_string())?));
    }
    v.sort();
    Ok(v)
}

fn emit_run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = experiments::run(cfg, opts).map_err(|e| e.to_string())?;
    experiments::emit(&out, dir.path(), None).map_err(|e| e.to_string())?;
    files_of(dir.path())
}

fn determinism() -> Verdict {
    let cases = [
        ("put_compare", false),
        ("put_pide", false),
        ("merton_simulate", true),
        ("ia_regularity", false),
    ];
    let mut compared = 0;
    for (name, dump_paths) in cases {
        let cfg = load(name);
        let opts = RunOptions { dump_paths };
        let reference = emit_run(&cfg, opts)?;
        for threads in [1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| e.to_string())?;
            let again = pool.install(|| emit_run(&cfg, opts))?;
            if again != reference {
                return Ok((false, format!("{name} differs at {threads} threads")));
            }
            compared += 1;
        }
        par::set_sequential(true);
        let seq = emit_run(&cfg, opts);
        par::set_sequential(false);
        if seq? != reference {
            return Ok((false, format!("{name} differs on the sequential path")));
        }
        compared += 1;
    }
    Ok((true, format!("{compared} reruns byte-identical")))
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let criteria: Vec<Criterion> = vec![
        (1, "two-solver agreement on the put", Box::new(two_solver_agreement)),
        (2, "truncation convergence", Box::new(truncation_convergence)),
        (3, "jump-component representation", Box::new(jump_representation)),
        (4, "Skorokhod condition and obstacle", Box::new(skorokhod_and_obstacle)),
        (
            5,
            "nonlocal operator identities",
            Box::new(|_: &mut Runs| operator_identities()),
        ),
        (6, "moment estimates", Box::new(moment_estimates)),
        (7, "regularity suite", Box::new(regularity_suite)),
        (8, "penalization consistency", Box::new(penalization)),
        (9, "norm driver", Box::new(norm_driver)),
        (
            10,
            "determinism across thread counts",
            Box::new(|_: &mut Runs| determinism()),
        ),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        let (pass, detail) = match check(&mut runs) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {title}: {}",
            if pass { "PASS" } else { "FAIL" },
            detail.trim_end()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
