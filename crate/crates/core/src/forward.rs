//! Euler simulation of the forward jump-diffusion under a truncated jump
//! measure, with counter-based random substreams and shared-noise coupling.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{argument, Error, Result};
use crate::levy::TruncatedMeasure;
use crate::par;
use crate::problem::ProblemSpec;

/// States beyond this magnitude abort the simulation.
pub const EXPLOSION_LIMIT: f64 = 1e8;

/// Words of keystream reserved per time step in a path's substream.
const STEP_WORDS_LOG2: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite() && t0 < horizon) {
            return argument(format!("time grid needs t0 < T, got [{t0}, {horizon}]"));
        }
        if n_steps == 0 {
            return argument("time grid needs at least one step");
        }
        Ok(Self { t0, horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.n_steps as f64
    }

    /// `tₙ = t0 + n·Δt`.
    pub fn t(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.horizon
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.t(n)).collect()
    }
}

/// The random inputs of a simulation: Brownian increments and jump marks
/// per `(path, step)`, drawn at some cutoff and reusable at coarser ones.
#[derive(Debug, Clone)]
pub struct Noise {
    pub n_paths: usize,
    pub n_steps: usize,
    pub brownian_dim: usize,
    pub seed: u64,
    /// Marks below this magnitude were never drawn.
    pub cutoff: f64,
    db: Vec<f64>,
    offsets: Vec<usize>,
    marks: Vec<f64>,
}

impl Noise {
    /// Draws noise for `n_paths` paths on `grid` under `measure`.
    ///
    /// Each `(path, step)` reads its own ChaCha substream (stream = path,
    /// word position = step·2²⁴), so the result does not depend on how
    /// paths are scheduled.
    pub fn generate(
        measure: &TruncatedMeasure,
        grid: &TimeGrid,
        brownian_dim: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_paths == 0 {
            return argument("need at least one path");
        }
        let n_steps = grid.n_steps;
        let dt = grid.dt();
        let sqrt_dt = dt.sqrt();
        let per_path: Vec<Result<(Vec<f64>, Vec<u32>, Vec<f64>)>> = par::map_range(n_paths, |p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut db = Vec::with_capacity(n_steps * brownian_dim);
            let mut counts = Vec::with_capacity(n_steps);
            let mut marks = Vec::new();
            for n in 0..n_steps {
                rng.set_word_pos((n as u128) << STEP_WORDS_LOG2);
                for _ in 0..brownian_dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    db.push(sqrt_dt * z);
                }
                let c = measure.sample_jumps_into(dt, &mut rng, &mut marks)?;
                counts.push(c as u32);
            }
            Ok((db, counts, marks))
        });
        let mut db = Vec::with_capacity(n_paths * n_steps * brownian_dim);
        let mut offsets = Vec::with_capacity(n_paths * n_steps + 1);
        let mut marks = Vec::new();
        offsets.push(0);
        for r in per_path {
            let (d, c, m) = r?;
            db.extend_from_slice(&d);
            let mut acc = marks.len();
            for count in c {
                acc += count as usize;
                offsets.push(acc);
            }
            marks.extend_from_slice(&m);
        }
        Ok(Self {
            n_paths,
            n_steps,
            brownian_dim,
            seed,
            cutoff: measure.cutoff(),
            db,
            offsets,
            marks,
        })
    }

    pub fn db(&self, path: usize, step: usize) -> &[f64] {
        let i = (path * self.n_steps + step) * self.brownian_dim;
        &self.db[i..i + self.brownian_dim]
    }

    /// All marks drawn in `(t_step, t_{step+1}]` for `path`.
    pub fn marks(&self, path: usize, step: usize) -> &[f64] {
        let i = path * self.n_steps + step;
        &self.marks[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn total_marks(&self) -> usize {
        self.marks.len()
    }
}

/// Simulated forward paths with their noise and martingale increments.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// State dimension.
    pub dim: usize,
    /// Number of components `m` (one martingale increment per component).
    pub m: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Marks with `|e| < cutoff` are ignored by this bundle.
    pub cutoff: f64,
    pub noise: Arc<Noise>,
    states: Vec<f64>,
    martingale: Vec<f64>,
}

impl PathBundle {
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let i = (path * (self.grid.n_steps + 1) + step) * self.dim;
        &self.states[i..i + self.dim]
    }

    /// First coordinate of `X[step][path]`.
    pub fn x(&self, path: usize, step: usize) -> f64 {
        self.states[(path * (self.grid.n_steps + 1) + step) * self.dim]
    }

    /// `Xₙ` for every path (first coordinate).
    pub fn column(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.x(p, step)).collect()
    }

    pub fn db(&self, path: usize, step: usize) -> &[f64] {
        self.noise.db(path, step)
    }

    /// Jump marks applied to `path` over `(t_step, t_{step+1}]`.
    pub fn marks(&self, path: usize, step: usize) -> impl Iterator<Item = f64> + '_ {
        let cutoff = self.cutoff;
        self.noise
            .marks(path, step)
            .iter()
            .copied()
            .filter(move |e| e.abs() >= cutoff)
    }

    pub fn n_jumps(&self, path: usize, step: usize) -> usize {
        self.marks(path, step).count()
    }

    /// `Mⁱ` increment: `Σ_jumps γⁱ(e) − Δt·∫γⁱ dλ_k`.
    pub fn martingale(&self, path: usize, step: usize, i: usize) -> f64 {
        self.martingale[(path * self.grid.n_steps + step) * self.m + i]
    }

    /// Writes `path, step, t, x1..xk, n_jumps` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path,step,t")?;
        for c in 0..self.dim {
            write!(w, ",x{}", c + 1)?;
        }
        writeln!(w, ",n_jumps")?;
        for p in 0..self.n_paths {
            for n in 0..=self.grid.n_steps {
                write!(w, "{p},{n},{}", self.grid.t(n))?;
                for v in self.state(p, n) {
                    write!(w, ",{v}")?;
                }
                let jumps = if n == 0 { 0 } else { self.n_jumps(p, n - 1) };
                writeln!(w, ",{jumps}")?;
            }
        }
        Ok(())
    }
}

/// Simulates `n_paths` Euler paths from `x` under `measure`.
pub fn simulate(
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    grid: &TimeGrid,
    x: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let noise = Noise::generate(measure, grid, spec.dims.brownian, n_paths, seed)?;
    simulate_with_noise(spec, measure, grid, x, Arc::new(noise))
}

/// Two bundles from `x` and `x2` driven by identical noise.
pub fn simulate_coupled(
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    grid: &TimeGrid,
    x: &[f64],
    x2: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<(PathBundle, PathBundle)> {
    let noise = Arc::new(Noise::generate(measure, grid, spec.dims.brownian, n_paths, seed)?);
    let a = simulate_with_noise(spec, measure, grid, x, noise.clone())?;
    let b = simulate_with_noise(spec, measure, grid, x2, noise)?;
    Ok((a, b))
}

/// Simulates on pre-drawn noise. The noise may have been drawn at a finer
/// cutoff than `measure`; marks below `measure`'s cutoff are then dropped,
/// which realizes `1_{|e| ≥ 1/k}·μ` on a common probability space.
pub fn simulate_with_noise(
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    grid: &TimeGrid,
    x: &[f64],
    noise: Arc<Noise>,
) -> Result<PathBundle> {
    let dim = spec.k();
    let m = spec.m();
    if x.len() != dim {
        return argument(format!("initial point has dimension {}, expected {dim}", x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return argument("initial point must be finite");
    }
    if noise.n_steps != grid.n_steps || noise.brownian_dim != spec.dims.brownian {
        return argument("noise does not match the time grid or Brownian dimension");
    }
    if noise.cutoff > measure.cutoff() * (1.0 + 1e-12) {
        return argument(format!(
            "noise drawn at cutoff {} cannot drive a simulation at finer cutoff {}",
            noise.cutoff,
            measure.cutoff()
        ));
    }
    let n_steps = grid.n_steps;
    let dt = grid.dt();
    let cutoff = measure.cutoff();
    let js = spec.jump_size;
    let psi_int = if js.is_zero() {
        0.0
    } else {
        measure.compensator_drift(|e| js.profile(e))?
    };
    let gamma_int = (0..m)
        .map(|i| measure.compensator_drift(|e| spec.jump_weights[i].eval(e)))
        .collect::<Result<Vec<f64>>>()?;

    let width = (n_steps + 1) * dim;
    let mut states = vec![0.0; noise.n_paths * width];
    let errors: Vec<Option<Error>> = (0..noise.n_paths).map(|_| None).collect();
    let errors = std::sync::Mutex::new(errors);
    par::for_each_item_mut(&mut states, width, |p, row| {
        row[..dim].copy_from_slice(x);
        for n in 0..n_steps {
            let db = noise.db(p, n);
            let marks: Vec<f64> = noise
                .marks(p, n)
                .iter()
                .copied()
                .filter(|e| e.abs() >= cutoff)
                .collect();
            let (cur, next) = row[n * dim..(n + 2) * dim].split_at_mut(dim);
            for c in 0..dim {
                let xc = cur[c];
                let mut v = xc + spec.drift.eval(xc) * dt + spec.diffusion.eval(xc) * db[c % db.len()];
                if !js.is_zero() {
                    let amp = js.amplitude(xc);
                    let jumps: f64 = marks.iter().map(|&e| js.profile(e)).sum();
                    v += amp * (jumps - dt * psi_int);
                }
                next[c] = v;
            }
            let mag = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if !(mag <= EXPLOSION_LIMIT) {
                errors.lock().unwrap()[p] = Some(Error::Explosion {
                    step: n + 1,
                    path: p,
                    magnitude: mag,
                });
                for v in next.iter_mut() {
                    *v = f64::NAN;
                }
                return;
            }
        }
    });
    if let Some(e) = errors.into_inner().unwrap().into_iter().flatten().next() {
        return Err(e);
    }

    let mut martingale = vec![0.0; noise.n_paths * n_steps * m];
    if gamma_int.iter().any(|&g| g != 0.0) || noise.total_marks() > 0 {
        par::for_each_item_mut(&mut martingale, n_steps * m, |p, row| {
            for n in 0..n_steps {
                for i in 0..m {
                    let jumps: f64 = noise
                        .marks(p, n)
                        .iter()
                        .filter(|e| e.abs() >= cutoff)
                        .map(|&e| spec.jump_weights[i].eval(e))
                        .sum();
                    row[n * m + i] = jumps - dt * gamma_int[i];
                }
            }
        });
    }

    Ok(PathBundle {
        grid: *grid,
        n_paths: noise.n_paths,
        dim,
        m,
        x0: x.to_vec(),
        seed: noise.seed,
        cutoff,
        noise,
        states,
        martingale,
    })
}

/// `E[sup_n |Xⁿ − Yⁿ|²]` between two bundles on the same grid.
pub fn path_distance(a: &PathBundle, b: &PathBundle) -> Result<f64> {
    if a.n_paths != b.n_paths || a.grid != b.grid || a.dim != b.dim {
        return argument("bundles are not comparable");
    }
    let total = par::sum(a.n_paths, |p| {
        (0..=a.grid.n_steps)
            .map(|n| dist2(a.state(p, n), b.state(p, n)))
            .fold(0.0, f64::max)
    });
    Ok(total / a.n_paths as f64)
}

fn dist2(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Minimum paths per cell accepted by [`check_moments`].
pub const MOMENT_MIN_PATHS: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct MomentCell {
    pub horizon: f64,
    pub x: f64,
    pub observed: f64,
    pub ratio: f64,
    /// `E[|X_s − x|ᵖ]`.
    pub terminal: f64,
    /// `observed / terminal`; at most `(p/(p−1))ᵖ` for a martingale.
    pub doob_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentFit {
    pub p: u32,
    pub cells: Vec<MomentCell>,
    /// Smallest `M̂_p` dominating every cell.
    pub m_hat: f64,
    pub min_ratio: f64,
    /// `max ratio / min ratio` over the ladder.
    pub stability: f64,
    /// Largest `max ratio / min ratio` across horizons at a fixed `x`.
    pub horizon_stability: f64,
    pub worst_cell: usize,
    /// All observed moments vanish; any `M̂_p` fits.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub fits: Vec<MomentFit>,
}

impl MomentReport {
    pub fn fit(&self, p: u32) -> Option<&MomentFit> {
        self.fits.iter().find(|f| f.p == p)
    }
}

/// `E[sup_{r ≤ s} |X_r − x|ᵖ] / ((s − t)(1 + |x|ᵖ))` over a ladder of
/// bundles, each simulated from its own `(s, x)`.
pub fn check_moments(bundles: &[&PathBundle]) -> Result<MomentReport> {
    if bundles.is_empty() {
        return argument("moment ladder is empty");
    }
    if let Some(b) = bundles.iter().find(|b| b.n_paths < MOMENT_MIN_PATHS) {
        return argument(format!(
            "moment cells need at least {MOMENT_MIN_PATHS} paths, got {}",
            b.n_paths
        ));
    }
    let mut fits = Vec::new();
    for p in [2u32, 4] {
        let mut cells = Vec::with_capacity(bundles.len());
        for b in bundles {
            let x0 = b.x0.clone();
            let sup = par::sum(b.n_paths, |path| {
                (0..=b.grid.n_steps)
                    .map(|n| dist2(b.state(path, n), &x0))
                    .fold(0.0, f64::max)
                    .powf(p as f64 / 2.0)
            }) / b.n_paths as f64;
            let last = b.grid.n_steps;
            let terminal =
                par::sum(b.n_paths, |path| dist2(b.state(path, last), &x0).powf(p as f64 / 2.0)) / b.n_paths as f64;
            let span = b.grid.horizon - b.grid.t0;
            let xnorm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
            cells.push(MomentCell {
                horizon: span,
                x: xnorm,
                observed: sup,
                ratio: sup / (span * (1.0 + xnorm.powi(p as i32))),
                terminal,
                doob_ratio: if terminal > 0.0 { sup / terminal } else { 1.0 },
            });
        }
        let (worst_cell, m_hat) = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.ratio))
            .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
        let min_ratio = cells.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
        let degenerate = cells.iter().all(|c| c.observed == 0.0);
        let stability = if degenerate { 1.0 } else { m_hat / min_ratio };
        let mut horizon_stability: f64 = 1.0;
        if !degenerate {
            for c in &cells {
                let same: Vec<f64> = cells.iter().filter(|d| d.x == c.x).map(|d| d.ratio).collect();
                let hi = same.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = same.iter().cloned().fold(f64::INFINITY, f64::min);
                horizon_stability = horizon_stability.max(hi / lo);
            }
        }
        fits.push(MomentFit {
            p,
            cells,
            m_hat,
            min_ratio,
            stability,
            horizon_stability,
            worst_cell,
            degenerate,
        });
    }
    Ok(MomentReport { fits })
}
