//! Cross-checks between the Monte Carlo solution, the grid oracle, and the
//! regularity properties expected of the value function.

use serde::Serialize;

use crate::error::{argument, Result};
use crate::fit::{fit_power_envelope, PowerFit};
use crate::forward::{simulate_coupled, PathBundle, TimeGrid};
use crate::levy::TruncatedMeasure;
use crate::pide::GridSolution;
use crate::problem::ProblemSpec;
use crate::rbsde::{solve_reflected, BackwardSolution};
use crate::regression::BasisFamily;

/// Default cap on the number of paths visited by [`representation_check`].
pub const REPRESENTATION_PATHS: usize = 2000;

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport {
    /// `‖Û − U_oracle‖ / ‖U_oracle‖` in `L²(dt ⊗ dP ⊗ dλ_k)`.
    pub relative_l2: f64,
    pub absolute_l2: f64,
    pub oracle_l2: f64,
    pub samples: usize,
    pub excluded_fraction: f64,
}

/// Compares the regression jump component `Ûₙ(Xₙ, e)` with the oracle's
/// increment `u(tₙ, Xₙ + β) − u(tₙ, Xₙ)` on a path subsample, for
/// component `i`.
pub fn representation_check(
    sol: &BackwardSolution,
    oracle: &GridSolution,
    bundle: &PathBundle,
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    i: usize,
    max_paths: usize,
) -> Result<RepresentationReport> {
    if spec.k() != 1 {
        return argument("representation check needs a one-dimensional state");
    }
    if i >= sol.m || i >= oracle.m {
        return argument(format!("component {i} out of range"));
    }
    if sol.n_paths != bundle.n_paths || sol.n_steps != bundle.grid.n_steps {
        return argument("solution and bundle disagree on paths or steps");
    }
    let nodes = if spec.jump_size.is_zero() {
        &[][..]
    } else {
        measure.nodes()
    };
    let weights = measure.weights();
    let stride = bundle.n_paths.div_ceil(max_paths.max(1)).max(1);
    let (mut num, mut den) = (0.0, 0.0);
    let (mut samples, mut excluded) = (0usize, 0usize);
    for n in 0..sol.n_steps {
        let t = bundle.grid.t(n);
        let fit = &sol.value_fits[n][i];
        for p in (0..bundle.n_paths).step_by(stride) {
            let x = bundle.x(p, n);
            let base = oracle.evaluate(t, x).ok().map(|v| v[i]);
            let ux = fit.eval1(x);
            for (q, &e) in nodes.iter().enumerate() {
                let y = x + spec.jump_size.beta(x, e);
                let target = match (base, oracle.evaluate(t, y)) {
                    (Some(b), Ok(v)) => v[i] - b,
                    _ => {
                        excluded += 1;
                        continue;
                    }
                };
                let est = fit.eval1(y) - ux;
                num += weights[q] * (est - target).powi(2);
                den += weights[q] * target * target;
                samples += 1;
            }
        }
    }
    let total = samples + excluded;
    let scale = if samples == 0 { 0.0 } else { sol.dt / samples as f64 };
    Ok(RepresentationReport {
        relative_l2: if den > 0.0 {
            (num / den).sqrt()
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        },
        absolute_l2: (num * scale).sqrt(),
        oracle_l2: (den * scale).sqrt(),
        samples,
        excluded_fraction: if total == 0 {
            0.0
        } else {
            excluded as f64 / total as f64
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentPoint {
    pub x: f64,
    pub moment: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpMomentReport {
    pub p: u32,
    pub c_hat: f64,
    pub rho_hat: f64,
    pub points: Vec<MomentPoint>,
    /// `max moment / bound`; at most 1 by construction of `Ĉ`.
    pub worst_ratio: f64,
}

/// `E[(Σₙ Δt·‖Ûₙ‖²_{L²(λ_k)})^{p/2}]` at each starting point, with a fitted
/// `C(1 + |x|^ρ)` envelope.
pub fn jump_moment_check(solutions: &[(f64, &BackwardSolution)], p: u32, i: usize) -> Result<JumpMomentReport> {
    if p == 0 || !p.is_multiple_of(2) {
        return argument(format!("moment order must be a positive even integer, got {p}"));
    }
    let raw: Vec<(f64, f64)> = solutions
        .iter()
        .map(|&(x, sol)| {
            let mean = (0..sol.n_paths)
                .map(|path| sol.jump_energy(path, i).powf(p as f64 / 2.0))
                .sum::<f64>()
                / sol.n_paths as f64;
            (x, mean)
        })
        .collect();
    let pts: Vec<(f64, f64)> = raw.iter().map(|&(x, v)| (x.abs(), v)).collect();
    let fit = fit_power_envelope(&pts, 0.0, |r, k| 1.0 + pts[k].0.powf(r));
    let points: Vec<MomentPoint> = raw
        .iter()
        .map(|&(x, v)| MomentPoint {
            x,
            moment: v,
            bound: fit.c * (1.0 + x.abs().powf(fit.p)),
        })
        .collect();
    let worst_ratio = points
        .iter()
        .map(|q| if q.bound > 0.0 { q.moment / q.bound } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(JumpMomentReport {
        p,
        c_hat: fit.c,
        rho_hat: fit.p,
        points,
        worst_ratio,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzPair {
    pub x: f64,
    pub x2: f64,
    pub u: f64,
    pub u2: f64,
    /// `|u0(x) − u0(x′)| / |x − x′|`.
    pub quotient: f64,
    /// `3·stderr` of the paired difference, divided by `|x − x′|`.
    pub band: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub pairs: Vec<LipschitzPair>,
    pub fit: PowerFit,
    pub max_quotient: f64,
}

/// Solves on coupled bundles for each `(x, x′)` and fits
/// `|Δu0| ≤ C(1 + |x|ᵖ + |x′|ᵖ)|Δx|`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_u_check(
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    grid: &TimeGrid,
    pairs: &[(f64, f64)],
    n_paths: usize,
    seed: u64,
    basis: &BasisFamily,
    i: usize,
) -> Result<LipschitzReport> {
    if spec.k() != 1 {
        return argument("Lipschitz check needs a one-dimensional state");
    }
    let mut out = Vec::with_capacity(pairs.len());
    for &(x, x2) in pairs {
        let (u, u2, band) = if x == x2 {
            (0.0, 0.0, 0.0)
        } else {
            let (a, b) = simulate_coupled(spec, measure, grid, &[x], &[x2], n_paths, seed)?;
            let sa = solve_reflected(spec, &a, measure, basis)?;
            let sb = solve_reflected(spec, &b, measure, basis)?;
            (sa.u0[i], sb.u0[i], 3.0 * sa.paired_stderr(&sb, i))
        };
        let dx = (x - x2).abs();
        out.push(LipschitzPair {
            x,
            x2,
            u,
            u2,
            quotient: if dx > 0.0 { (u - u2).abs() / dx } else { 0.0 },
            band: if dx > 0.0 { band / dx } else { 0.0 },
        });
    }
    let pts: Vec<(f64, f64)> = out.iter().map(|q| (q.x.abs().max(q.x2.abs()), q.quotient)).collect();
    let fit = fit_power_envelope(&pts, 0.0, |r, k| 1.0 + out[k].x.abs().powf(r) + out[k].x2.abs().powf(r));
    let max_quotient = out.iter().map(|q| q.quotient).fold(0.0, f64::max);
    Ok(LipschitzReport {
        pairs: out,
        fit,
        max_quotient,
    })
}
