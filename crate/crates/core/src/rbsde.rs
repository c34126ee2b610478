//! Backward regression Monte Carlo for the reflected BSDE with jumps.
//!
//! At each step the continuation value is the regression of the realized
//! pathwise value on the current state. The jump component is read off the
//! fitted value function through `Û(x, e) = û(x + β(x, e)) − û(x)`, the
//! driver is applied explicitly, and the result is projected onto the
//! obstacle (or pushed toward it by a penalty).

use serde::Serialize;

use crate::error::{argument, Error, Result};
use crate::forward::PathBundle;
use crate::levy::TruncatedMeasure;
use crate::par;
use crate::problem::{DriverMode, ProblemSpec};
use crate::regression::{BasisFamily, Design, Fitted};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    /// Projection `Y = max(ỹ, ℓ)`.
    Reflected,
    /// Penalty `n·(ℓ − Y)⁺` in the driver, treated implicitly.
    Penalized { n_penalty: f64 },
}

impl Scheme {
    /// Fraction of the obstacle gap closed in one step.
    fn pull(&self, dt: f64) -> f64 {
        match *self {
            Scheme::Reflected => 1.0,
            Scheme::Penalized { n_penalty } => dt * n_penalty / (1.0 + dt * n_penalty),
        }
    }
}

/// Per-step, per-path estimates of `(Y, Z, q, ΔK)`.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub scheme: Scheme,
    pub basis: BasisFamily,
    pub n_steps: usize,
    pub n_paths: usize,
    pub m: usize,
    pub brownian_dim: usize,
    pub dt: f64,
    /// `u(t0, x) = Y₀` per component.
    pub u0: Vec<f64>,
    /// Standard error of `u0` per component.
    pub stderr: Vec<f64>,
    y: Vec<f64>,
    dk: Vec<f64>,
    z: Vec<f64>,
    q: Vec<f64>,
    obstacle: Vec<f64>,
    /// All-path continuation fits `ĉₙⁱ`, indexed `[n][i]`.
    pub continuation: Vec<Vec<Fitted>>,
    /// Value fits `ûₙ₊₁ⁱ` on `Xₙ₊₁`, indexed `[n][i]`; these define `Ûₙ`.
    pub value_fits: Vec<Vec<Fitted>>,
    /// Gram condition number of the all-path design per step.
    pub conditions: Vec<f64>,
    /// Realized values `S₁ⁱ` per path (for paired standard errors).
    s1: Vec<f64>,
    /// `Σₙ Δt·‖Ûₙⁱ(Xₙ, ·)‖²_{L²(λ_k)}` per path and component.
    jump_energy: Vec<f64>,
}

impl BackwardSolution {
    fn idx(&self, n: usize, p: usize, i: usize) -> usize {
        (n * self.n_paths + p) * self.m + i
    }

    /// `Yₙⁱ` on `path`.
    pub fn y(&self, n: usize, path: usize, i: usize) -> f64 {
        self.y[self.idx(n, path, i)]
    }

    /// `ΔKₙⁱ` on `path` (zero at the terminal step).
    pub fn dk(&self, n: usize, path: usize, i: usize) -> f64 {
        if n == self.n_steps {
            0.0
        } else {
            self.dk[self.idx(n, path, i)]
        }
    }

    /// Nonlocal driver argument `qₙⁱ`.
    pub fn q(&self, n: usize, path: usize, i: usize) -> f64 {
        self.q[self.idx(n, path, i)]
    }

    /// `Zₙⁱ` component `c`.
    pub fn z(&self, n: usize, path: usize, i: usize, c: usize) -> f64 {
        self.z[self.idx(n, path, i) * self.brownian_dim + c]
    }

    /// `ℓ(tₙ, Xₙ)` on `path`.
    pub fn obstacle(&self, n: usize, path: usize) -> f64 {
        self.obstacle[n * self.n_paths + path]
    }

    pub fn s1(&self, path: usize, i: usize) -> f64 {
        self.s1[path * self.m + i]
    }

    pub fn jump_energy(&self, path: usize, i: usize) -> f64 {
        self.jump_energy[path * self.m + i]
    }

    /// `Σₙ (Yₙⁱ − ℓ)·ΔKₙⁱ` along one path.
    pub fn skorokhod_sum(&self, path: usize, i: usize) -> f64 {
        (0..=self.n_steps)
            .map(|n| (self.y(n, path, i) - self.obstacle(n, path)) * self.dk(n, path, i))
            .sum()
    }

    /// `max_p |Σₙ (Y − ℓ)ΔK|` over paths and components.
    pub fn max_skorokhod(&self) -> f64 {
        (0..self.n_paths)
            .flat_map(|p| (0..self.m).map(move |i| (p, i)))
            .map(|(p, i)| self.skorokhod_sum(p, i).abs())
            .fold(0.0, f64::max)
    }

    /// `minₙ,ₚ,ᵢ (Yₙⁱ − ℓ(tₙ, Xₙ))`.
    pub fn min_obstacle_gap(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for n in 0..=self.n_steps {
            for p in 0..self.n_paths {
                for i in 0..self.m {
                    worst = worst.min(self.y(n, p, i) - self.obstacle(n, p));
                }
            }
        }
        worst
    }

    /// Mean total `K_T − K_0` per component.
    pub fn mean_k_total(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let mut acc = 0.0;
                for p in 0..self.n_paths {
                    for n in 0..self.n_steps {
                        acc += self.dk(n, p, i);
                    }
                }
                acc / self.n_paths as f64
            })
            .collect()
    }

    /// Standard error of `u0(self) − u0(other)` from paired realized values.
    pub fn paired_stderr(&self, other: &BackwardSolution, i: usize) -> f64 {
        let n = self.n_paths.min(other.n_paths);
        let d: Vec<f64> = (0..n).map(|p| self.s1(p, i) - other.s1(p, i)).collect();
        std_error(&d)
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            scheme: self.scheme,
            basis: self.basis,
            n_steps: self.n_steps,
            n_paths: self.n_paths,
            u0: self.u0.clone(),
            stderr: self.stderr.clone(),
            mean_k_total: self.mean_k_total(),
            max_skorokhod: self.max_skorokhod(),
            min_obstacle_gap: self.min_obstacle_gap(),
            max_condition: self.conditions.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// JSON-friendly digest of a [`BackwardSolution`].
#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub scheme: Scheme,
    pub basis: BasisFamily,
    pub n_steps: usize,
    pub n_paths: usize,
    pub u0: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_k_total: Vec<f64>,
    pub max_skorokhod: f64,
    pub min_obstacle_gap: f64,
    pub max_condition: f64,
}

pub(crate) fn std_error(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

pub fn solve_reflected(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    measure: &TruncatedMeasure,
    basis: &BasisFamily,
) -> Result<BackwardSolution> {
    solve(spec, bundle, measure, basis, Scheme::Reflected)
}

pub fn solve_penalized(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    measure: &TruncatedMeasure,
    basis: &BasisFamily,
    n_penalty: f64,
) -> Result<BackwardSolution> {
    if !(n_penalty >= 0.0 && n_penalty.is_finite()) {
        return argument(format!("penalty must be finite and non-negative, got {n_penalty}"));
    }
    solve(spec, bundle, measure, basis, Scheme::Penalized { n_penalty })
}

/// Paths strictly inside the exercise-relevant region are regressed
/// separately when there are enough of them.
fn restricted_sample(obstacle: &[f64], basis_size: usize) -> Option<Vec<usize>> {
    let floor = obstacle.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + floor.abs());
    let idx: Vec<usize> = (0..obstacle.len()).filter(|&p| obstacle[p] > floor + tol).collect();
    let min = (10 * basis_size).max(obstacle.len() / 100);
    (idx.len() >= min && idx.len() < obstacle.len()).then_some(idx)
}

fn gather_states(bundle: &PathBundle, n: usize, paths: Option<&[usize]>) -> Vec<f64> {
    match paths {
        None => (0..bundle.n_paths)
            .flat_map(|p| bundle.state(p, n).iter().copied())
            .collect(),
        Some(ps) => ps.iter().flat_map(|&p| bundle.state(p, n).iter().copied()).collect(),
    }
}

pub fn solve(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    measure: &TruncatedMeasure,
    basis: &BasisFamily,
    scheme: Scheme,
) -> Result<BackwardSolution> {
    let m = spec.m();
    let d = spec.dims.brownian;
    let dim = spec.k();
    if bundle.m != m || bundle.dim != dim {
        return argument("bundle was simulated for a different problem");
    }
    if (bundle.cutoff - measure.cutoff()).abs() > 1e-12 * measure.cutoff() {
        return argument(format!(
            "bundle simulated at cutoff {} but solver given cutoff {}",
            bundle.cutoff,
            measure.cutoff()
        ));
    }
    let grid = bundle.grid;
    let n_steps = grid.n_steps;
    let n_paths = bundle.n_paths;
    let dt = grid.dt();
    let pull = scheme.pull(dt);

    let use_jumps = !spec.jump_size.is_zero() && !measure.nodes().is_empty();
    let nodes = measure.nodes().to_vec();
    let weights = measure.weights().to_vec();
    let gamma: Vec<Vec<f64>> = (0..m)
        .map(|i| nodes.iter().map(|&e| spec.jump_weights[i].eval(e)).collect())
        .collect();

    let slot = |n: usize, p: usize, i: usize| (n * n_paths + p) * m + i;
    let mut y = vec![0.0; (n_steps + 1) * n_paths * m];
    let mut dk = vec![0.0; n_steps * n_paths * m];
    let mut z = vec![0.0; n_steps * n_paths * m * d];
    let mut q = vec![0.0; n_steps * n_paths * m];
    let mut obstacle = vec![0.0; (n_steps + 1) * n_paths];
    let mut jump_energy = vec![0.0; n_paths * m];
    let mut continuation = vec![Vec::new(); n_steps];
    let mut value_fits = vec![Vec::new(); n_steps];
    let mut conditions = vec![0.0; n_steps];

    // realized pathwise values S, one column per component
    let mut s: Vec<Vec<f64>> = vec![vec![0.0; n_paths]; m];
    let t_end = grid.t(n_steps);
    for p in 0..n_paths {
        let x = bundle.state(p, n_steps);
        obstacle[n_steps * n_paths + p] = spec.ell(t_end, x);
        for i in 0..m {
            let g = spec.g(i, x);
            y[slot(n_steps, p, i)] = g;
            s[i][p] = g;
        }
    }
    let mut design_next = if use_jumps {
        Some(Design::new(
            basis,
            &gather_states(bundle, n_steps, None),
            dim,
            &format!("step {n_steps}"),
        )?)
    } else {
        None
    };

    let width = 5 * m + m * d;
    let mut s1 = vec![0.0; n_paths * m];
    for n in (0..n_steps).rev() {
        let t = grid.t(n);
        let xs = gather_states(bundle, n, None);
        let design = Design::new(basis, &xs, dim, &format!("step {n}"))?;
        conditions[n] = design.condition();
        let ell: Vec<f64> = (0..n_paths).map(|p| spec.ell(t, bundle.state(p, n))).collect();

        let mut c_vals = Vec::with_capacity(m);
        let mut c_fits = Vec::with_capacity(m);
        for si in s.iter() {
            let fit = design.fit(si)?;
            c_vals.push(design.predict(&fit));
            c_fits.push(fit);
        }
        // paths outside a restricted fit keep their realized value
        let mut eligible = vec![true; n_paths];
        if let Some(itm) = restricted_sample(&ell, design.basis_size()) {
            let sub = gather_states(bundle, n, Some(&itm));
            if let Ok(rd) = Design::new(basis, &sub, dim, &format!("step {n} restricted")) {
                eligible.iter_mut().for_each(|e| *e = false);
                for &p in &itm {
                    eligible[p] = true;
                }
                for (i, si) in s.iter().enumerate() {
                    let target: Vec<f64> = itm.iter().map(|&p| si[p]).collect();
                    let fit = rd.fit(&target)?;
                    let pred = rd.predict(&fit);
                    for (k, &p) in itm.iter().enumerate() {
                        c_vals[i][p] = pred[k];
                    }
                }
            }
        }

        // Z: regression of (S − ĉ)·ΔB/Δt
        let mut z_vals = vec![vec![vec![0.0; n_paths]; d]; m];
        for i in 0..m {
            let resid: Vec<f64> = (0..n_paths).map(|p| s[i][p] - c_vals[i][p]).collect();
            for (c, zv) in z_vals[i].iter_mut().enumerate() {
                let target: Vec<f64> = (0..n_paths).map(|p| resid[p] * bundle.db(p, n)[c] / dt).collect();
                let fit = design.fit(&target)?;
                *zv = design.predict(&fit);
            }
        }

        // û_{n+1} on X_{n+1}
        let u_fits: Vec<Fitted> = match &design_next {
            Some(dn) => (0..m)
                .map(|i| {
                    let yi: Vec<f64> = (0..n_paths).map(|p| y[slot(n + 1, p, i)]).collect();
                    dn.fit(&yi)
                })
                .collect::<Result<_>>()?,
            None => (0..m).map(|_| Fitted::constant(0.0)).collect(),
        };

        // per-path update: [Y, ΔK, q, S, energy] per component, then Z
        let mut rows = vec![0.0; n_paths * width];
        let fail = std::sync::Mutex::new(None::<Error>);
        par::for_each_item_mut(&mut rows, width, |p, row| {
            let x = bundle.state(p, n);
            let yhat: Vec<f64> = (0..m).map(|j| c_vals[j][p]).collect();
            let mut xe = x.to_vec();
            for i in 0..m {
                let mut qi = 0.0;
                let mut energy = 0.0;
                if use_jumps {
                    let ux = u_fits[i].eval(x);
                    let mut lin = 0.0;
                    for (k, &e) in nodes.iter().enumerate() {
                        for (c, v) in xe.iter_mut().enumerate() {
                            *v = x[c] + spec.jump_size.beta(x[c], e);
                        }
                        let u = u_fits[i].eval(&xe) - ux;
                        lin += weights[k] * gamma[i][k] * u;
                        energy += weights[k] * u * u;
                    }
                    qi = match spec.driver_mode {
                        DriverMode::NonlocalLinear => lin,
                        DriverMode::NonlocalNorm => energy.sqrt(),
                    };
                }
                let zi: Vec<f64> = (0..d).map(|c| z_vals[i][c][p]).collect();
                let h = spec.h(i, t, x, &yhat, &zi, qi);
                if !h.is_finite() {
                    let mut f = fail.lock().unwrap();
                    if f.is_none() {
                        *f = Some(Error::Evaluation(format!(
                            "driver is {h} at step {n}, component {i}, path {p}"
                        )));
                    }
                }
                let tilde = c_vals[i][p] + dt * h;
                let l = ell[p];
                let cont = s[i][p] + dt * h;
                let (yi, dki, si) = if l <= tilde {
                    (tilde, 0.0, cont)
                } else if pull == 1.0 {
                    (l, l - tilde, if eligible[p] { l } else { cont })
                } else {
                    let push = pull * (l - tilde);
                    let si = if eligible[p] { cont + pull * (l - cont) } else { cont };
                    (tilde + push, push, si)
                };
                row[5 * i] = yi;
                row[5 * i + 1] = dki;
                row[5 * i + 2] = qi;
                row[5 * i + 3] = si;
                row[5 * i + 4] = dt * energy;
                for c in 0..d {
                    row[5 * m + i * d + c] = zi[c];
                }
            }
        });
        if let Some(e) = fail.into_inner().unwrap() {
            return Err(e);
        }

        if n == 0 {
            for p in 0..n_paths {
                for i in 0..m {
                    s1[p * m + i] = s[i][p];
                }
            }
        }
        for p in 0..n_paths {
            let row = &rows[p * width..(p + 1) * width];
            obstacle[n * n_paths + p] = ell[p];
            for i in 0..m {
                y[slot(n, p, i)] = row[5 * i];
                dk[slot(n, p, i)] = row[5 * i + 1];
                q[slot(n, p, i)] = row[5 * i + 2];
                s[i][p] = row[5 * i + 3];
                jump_energy[p * m + i] += row[5 * i + 4];
                for c in 0..d {
                    z[slot(n, p, i) * d + c] = row[5 * m + i * d + c];
                }
            }
        }
        continuation[n] = c_fits;
        value_fits[n] = u_fits;
        if use_jumps {
            design_next = Some(design);
        }
    }

    let u0: Vec<f64> = (0..m).map(|i| y[slot(0, 0, i)]).collect();
    let stderr: Vec<f64> = (0..m)
        .map(|i| std_error(&(0..n_paths).map(|p| s1[p * m + i]).collect::<Vec<_>>()))
        .collect();
    Ok(BackwardSolution {
        scheme,
        basis: *basis,
        n_steps,
        n_paths,
        m,
        brownian_dim: d,
        dt,
        u0,
        stderr,
        y,
        dk,
        z,
        q,
        obstacle,
        continuation,
        value_fits,
        conditions,
        s1,
        jump_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate, TimeGrid};
    use crate::problem::catalog;
    use std::collections::BTreeMap;

    fn spec(name: &str, kv: &[(&str, f64)]) -> ProblemSpec {
        let p = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
        catalog(name, &p).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        let s = spec("CONSTANT", &[("c", 2.5)]);
        let m = s.levy.truncate(4).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let b = simulate(&s, &m, &g, &[0.3], 500, 1).unwrap();
        for scheme in [Scheme::Reflected, Scheme::Penalized { n_penalty: 50.0 }] {
            let sol = solve(&s, &b, &m, &BasisFamily::default(), scheme).unwrap();
            assert_eq!(sol.u0, vec![2.5]);
            for n in 0..=10 {
                for p in 0..500 {
                    assert_eq!(sol.y(n, p, 0), 2.5);
                    assert_eq!(sol.dk(n, p, 0), 0.0);
                    assert_eq!(sol.q(n.min(9), p, 0), 0.0);
                    if n < 10 {
                        assert_eq!(sol.z(n, p, 0, 0), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn reflected_invariants_on_put() {
        let s = spec("AMERICAN_PUT_STYLE", &[]);
        let m = s.levy.truncate(1).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let b = simulate(&s, &m, &g, &[1.0], 4000, 7).unwrap();
        let sol = solve_reflected(&s, &b, &m, &BasisFamily::default()).unwrap();
        assert!(sol.min_obstacle_gap() >= 0.0);
        assert_eq!(sol.max_skorokhod(), 0.0);
        for p in 0..100 {
            assert_eq!(sol.y(20, p, 0), s.g(0, b.state(p, 20)));
        }
        assert!(sol.u0[0] > 0.05 && sol.u0[0] < 0.07, "{}", sol.u0[0]);
    }

    #[test]
    fn mismatched_cutoff_is_rejected() {
        let s = spec("INFINITE_ACTIVITY_PUT", &[]);
        let g = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let b = simulate(&s, &s.levy.truncate(8).unwrap(), &g, &[1.0], 100, 1).unwrap();
        assert!(solve_reflected(&s, &b, &s.levy.truncate(16).unwrap(), &BasisFamily::default()).is_err());
    }
}
