//! Coefficient sets for the obstacle problem, a closed catalog of concrete
//! instances, and numerical probes of the standing Lipschitz and growth
//! assumptions.
//!
//! Every state coordinate evolves under the same scalar coefficient
//! functions (diagonal diffusion, one Brownian motion per coordinate), and
//! payoffs act on the coordinate sum. With one state dimension this is the
//! general scalar case.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::fit::{fit_power_envelope, PowerFit};
use crate::levy::{DensityShape, Interval, LevyMeasure};

/// Value used for an obstacle that never binds.
pub const DEAD_OBSTACLE: f64 = -1e9;

pub const CATALOG: [&str; 7] = [
    "CONSTANT",
    "LINEAR_DRIFT",
    "MERTON_STYLE",
    "AMERICAN_PUT_STYLE",
    "COUPLED_SYSTEM_M2",
    "INFINITE_ACTIVITY_PUT",
    "NORM_DRIVER_PUT",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// State dimension.
    pub state: usize,
    /// Brownian dimension.
    pub brownian: usize,
    /// Number of coupled components.
    pub system: usize,
}

/// `b(t, x) = mu + a·x` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Drift {
    pub mu: f64,
    pub a: f64,
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        self.mu + self.a * x
    }

    pub fn lipschitz(&self) -> f64 {
        self.a.abs()
    }
}

/// `σ(t, x) = s + vol·x` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diffusion {
    pub s: f64,
    pub vol: f64,
}

impl Diffusion {
    pub fn eval(&self, x: f64) -> f64 {
        self.s + self.vol * x
    }

    pub fn lipschitz(&self) -> f64 {
        self.vol.abs()
    }

    pub fn is_zero(&self) -> bool {
        self.s == 0.0 && self.vol == 0.0
    }
}

/// Jump size `β(t, x, e) = amplitude(x)·profile(e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JumpSize {
    Zero,
    /// `scale·e`
    Additive {
        scale: f64,
    },
    /// `scale·x·(1 ∧ |e|)`
    Proportional {
        scale: f64,
    },
    /// `clamp(x, −cap, cap)·(exp(θe) − 1)`
    Exponential {
        theta: f64,
        cap: f64,
    },
}

impl JumpSize {
    pub fn amplitude(&self, x: f64) -> f64 {
        match *self {
            JumpSize::Zero => 0.0,
            JumpSize::Additive { scale } => scale,
            JumpSize::Proportional { scale } => scale * x,
            JumpSize::Exponential { cap, .. } => x.clamp(-cap, cap),
        }
    }

    pub fn profile(&self, e: f64) -> f64 {
        match *self {
            JumpSize::Zero => 0.0,
            JumpSize::Additive { .. } => e,
            JumpSize::Proportional { .. } => e.abs().min(1.0),
            JumpSize::Exponential { theta, .. } => (theta * e).exp_m1(),
        }
    }

    pub fn beta(&self, x: f64, e: f64) -> f64 {
        self.amplitude(x) * self.profile(e)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, JumpSize::Zero)
    }

    /// Lipschitz constant of the amplitude.
    fn amplitude_lipschitz(&self) -> f64 {
        match *self {
            JumpSize::Zero | JumpSize::Additive { .. } => 0.0,
            JumpSize::Proportional { scale } => scale.abs(),
            JumpSize::Exponential { .. } => 1.0,
        }
    }

    /// Bound on `|amplitude(x)| / (1 + |x|)`.
    fn amplitude_growth(&self) -> f64 {
        match *self {
            JumpSize::Zero => 0.0,
            JumpSize::Additive { scale } | JumpSize::Proportional { scale } => scale.abs(),
            JumpSize::Exponential { .. } => 1.0,
        }
    }

    /// `sup |profile(e)| / (1 ∧ |e|)` over `|e| ≤ max_mark`.
    fn profile_bound(&self, max_mark: f64) -> f64 {
        let m = max_mark.max(1.0);
        match *self {
            JumpSize::Zero => 0.0,
            JumpSize::Additive { .. } => m,
            JumpSize::Proportional { .. } => 1.0,
            JumpSize::Exponential { theta, .. } => (theta.abs() * m).exp_m1(),
        }
    }
}

/// Jump weight `γ(t, x, e)`; independent of `(t, x)` in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JumpWeight {
    Zero,
    /// `c·(1 ∧ |e|)`
    Absolute {
        c: f64,
    },
    /// `c·(1 ∧ |e|)·sign(e)`
    Signed {
        c: f64,
    },
    /// `c·e`
    Mark {
        c: f64,
    },
}

impl JumpWeight {
    pub fn eval(&self, e: f64) -> f64 {
        match *self {
            JumpWeight::Zero => 0.0,
            JumpWeight::Absolute { c } => c * e.abs().min(1.0),
            JumpWeight::Signed { c } => c * e.abs().min(1.0) * e.signum(),
            JumpWeight::Mark { c } => c * e,
        }
    }

    fn bound(&self, max_mark: f64) -> f64 {
        match *self {
            JumpWeight::Zero => 0.0,
            JumpWeight::Absolute { c } | JumpWeight::Signed { c } => c.abs(),
            JumpWeight::Mark { c } => c.abs() * max_mark.max(1.0),
        }
    }
}

/// How the nonlocal driver argument `q` is formed from the jump component `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DriverMode {
    /// `q = ∫ γ ζ dλ`
    NonlocalLinear,
    /// `q = ‖ζ‖_{L²(λ)}`
    NonlocalNorm,
}

impl DriverMode {
    /// Forms `q` from the discretized jump component: `zeta[j]` at node `j`
    /// with weight `weights[j]` and jump weight `gamma[j]`.
    pub fn aggregate(&self, weights: &[f64], gamma: &[f64], zeta: &[f64]) -> f64 {
        match self {
            DriverMode::NonlocalLinear => weights.iter().zip(gamma).zip(zeta).map(|((w, g), z)| w * g * z).sum(),
            DriverMode::NonlocalNorm => weights.iter().zip(zeta).map(|(w, z)| w * z * z).sum::<f64>().sqrt(),
        }
    }
}

/// `hⁱ(t, x, y, z, q) = −rate·yᵢ + coupling·Σ_{j≠i}(yⱼ − yᵢ) + z_coef·Σz
/// + q_coef·q + q_sin·sin(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Driver {
    pub rate: f64,
    pub coupling: f64,
    pub z_coef: f64,
    pub q_coef: f64,
    pub q_sin: f64,
}

impl Driver {
    pub const ZERO: Driver = Driver {
        rate: 0.0,
        coupling: 0.0,
        z_coef: 0.0,
        q_coef: 0.0,
        q_sin: 0.0,
    };

    pub fn eval(&self, i: usize, y: &[f64], z: &[f64], q: f64) -> f64 {
        let yi = y[i];
        let mut v = -self.rate * yi;
        if self.coupling != 0.0 {
            let spread: f64 = y
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &yj)| yj - yi)
                .sum();
            v += self.coupling * spread;
        }
        if self.z_coef != 0.0 {
            v += self.z_coef * z.iter().sum::<f64>();
        }
        v + self.q_coef * q + self.q_sin * q.sin()
    }

    /// Lipschitz constant in `y` (sup norm) for a system of size `m`.
    pub fn lipschitz_y(&self, m: usize) -> f64 {
        self.rate.abs() + 2.0 * self.coupling.abs() * (m as f64 - 1.0)
    }

    /// Lipschitz constant in `z` (ℓ¹ norm).
    pub fn lipschitz_z(&self) -> f64 {
        self.z_coef.abs()
    }

    pub fn lipschitz_q(&self) -> f64 {
        self.q_coef.abs() + self.q_sin.abs()
    }

    /// True when `h` is non-monotone in `q`.
    pub fn is_q_monotone(&self) -> bool {
        self.q_sin == 0.0 || self.q_coef.abs() >= self.q_sin.abs()
    }
}

/// Terminal payoffs and obstacles, as functions of the coordinate sum `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payoff {
    Constant {
        c: f64,
    },
    /// `a·s + b`
    Affine {
        a: f64,
        b: f64,
    },
    /// `(strike − s)⁺`
    Put {
        strike: f64,
    },
    /// `s²`
    Square,
}

impl Payoff {
    pub fn eval_sum(&self, s: f64) -> f64 {
        match *self {
            Payoff::Constant { c } => c,
            Payoff::Affine { a, b } => a * s + b,
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::Square => s * s,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_sum(x.iter().sum())
    }

    pub fn is_dead(&self) -> bool {
        matches!(*self, Payoff::Constant { c } if c <= DEAD_OBSTACLE)
    }

    /// Declared `(C, p)` with `|φ(s)| ≤ C(1 + |s|ᵖ)`.
    fn growth(&self) -> (f64, f64) {
        match *self {
            Payoff::Constant { c } => (c.abs(), 0.0),
            Payoff::Affine { a, b } => (a.abs().max(b.abs()), 1.0),
            Payoff::Put { strike } => (strike.abs().max(1.0), 1.0),
            Payoff::Square => (1.0, 2.0),
        }
    }

    /// Declared `(C, p)` with `|φ(s) − φ(s')| ≤ C(1 + |s|ᵖ + |s'|ᵖ)|s − s'|`.
    fn local_lipschitz(&self) -> (f64, f64) {
        match *self {
            Payoff::Constant { .. } => (0.0, 0.0),
            Payoff::Affine { a, .. } => (a.abs(), 0.0),
            Payoff::Put { .. } => (1.0, 0.0),
            Payoff::Square => (1.0, 1.0),
        }
    }
}

/// A fully specified obstacle problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dims: Dims,
    pub horizon: f64,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub jump_size: JumpSize,
    /// `γⁱ`, one per component.
    pub jump_weights: Vec<JumpWeight>,
    pub driver: Driver,
    pub driver_mode: DriverMode,
    /// `gⁱ`, one per component.
    pub terminal: Vec<Payoff>,
    /// Added to every `gⁱ`; used by comparison experiments.
    pub terminal_shift: f64,
    pub obstacle: Payoff,
    pub levy: LevyMeasure,
    /// Which assumptions hold exactly for this instance.
    pub notes: String,
}

impl ProblemSpec {
    pub fn m(&self) -> usize {
        self.dims.system
    }

    pub fn k(&self) -> usize {
        self.dims.state
    }

    /// `gⁱ(x)`.
    pub fn g(&self, i: usize, x: &[f64]) -> f64 {
        self.terminal[i].eval(x) + self.terminal_shift
    }

    /// `ℓ(t, x)`.
    pub fn ell(&self, _t: f64, x: &[f64]) -> f64 {
        self.obstacle.eval(x)
    }

    pub fn b(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&xi| self.drift.eval(xi)).collect()
    }

    /// Diagonal of `σ(t, x)`.
    pub fn sigma(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&xi| self.diffusion.eval(xi)).collect()
    }

    pub fn beta(&self, _t: f64, x: &[f64], e: f64) -> Vec<f64> {
        x.iter().map(|&xi| self.jump_size.beta(xi, e)).collect()
    }

    pub fn gamma(&self, i: usize, _t: f64, _x: &[f64], e: f64) -> f64 {
        self.jump_weights[i].eval(e)
    }

    /// `hⁱ(t, x, y, z, q)`.
    pub fn h(&self, i: usize, _t: f64, _x: &[f64], y: &[f64], z: &[f64], q: f64) -> f64 {
        self.driver.eval(i, y, z, q)
    }

    /// `f⁽ⁱ⁾(t, x, y, z, ζ)` with `ζ` given on the nodes of a quadrature rule.
    #[allow(clippy::too_many_arguments)]
    pub fn f(
        &self,
        i: usize,
        t: f64,
        x: &[f64],
        y: &[f64],
        z: &[f64],
        nodes: &[f64],
        weights: &[f64],
        zeta: &[f64],
    ) -> f64 {
        let gamma: Vec<f64> = nodes.iter().map(|&e| self.gamma(i, t, x, e)).collect();
        let q = self.driver_mode.aggregate(weights, &gamma, zeta);
        self.h(i, t, x, y, z, q)
    }

    /// Replace the jump measure (experiment-level override).
    pub fn with_levy(mut self, levy: LevyMeasure) -> Self {
        self.levy = levy;
        self
    }

    pub fn with_terminal_shift(mut self, delta: f64) -> Self {
        self.terminal_shift += delta;
        self
    }

    fn scalar(&self, s: f64) -> Vec<f64> {
        let k = self.k() as f64;
        vec![s / k; self.k()]
    }

    /// Largest violation of `gⁱ(x) ≥ ℓ(T, x)` over a ladder of coordinate sums
    /// in `[−10³, 10³]`; zero when consistent.
    pub fn terminal_gap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for s in probe_ladder() {
            let x = self.scalar(s);
            let l = self.ell(self.horizon, &x);
            for i in 0..self.m() {
                worst = worst.max(l - self.g(i, &x));
            }
        }
        worst
    }
}

/// Symmetric log ladder `±10^{−2..3}` plus zero.
fn probe_ladder() -> Vec<f64> {
    let mut v = vec![0.0];
    for j in 0..=50 {
        let m = 10f64.powf(-2.0 + 5.0 * j as f64 / 50.0);
        v.push(m);
        v.push(-m);
    }
    v
}

fn param_map(
    name: &str,
    defaults: &[(&'static str, f64)],
    params: &BTreeMap<String, f64>,
) -> Result<BTreeMap<&'static str, f64>> {
    let mut out: BTreeMap<&'static str, f64> = defaults.iter().copied().collect();
    for (k, v) in params {
        match defaults.iter().find(|(d, _)| d == k) {
            Some((d, _)) => {
                if !v.is_finite() {
                    return argument(format!("{name}: parameter {k} must be finite"));
                }
                out.insert(d, *v);
            }
            None => {
                let valid: Vec<&str> = defaults.iter().map(|(d, _)| *d).collect();
                return argument(format!(
                    "{name}: unknown parameter {k}; valid parameters are {}",
                    valid.join(", ")
                ));
            }
        }
    }
    Ok(out)
}

fn positive(name: &str, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        argument(format!("{name}: parameter {key} must be positive, got {v}"))
    }
}

fn scalar_dims(m: usize) -> Dims {
    Dims {
        state: 1,
        brownian: 1,
        system: m,
    }
}

/// Build a catalog instance by name with parameter overrides.
pub fn catalog(name: &str, params: &BTreeMap<String, f64>) -> Result<ProblemSpec> {
    let spec = match name {
        "CONSTANT" => {
            let p = param_map(name, &[("c", 1.0), ("T", 1.0)], params)?;
            ProblemSpec {
                name: name.into(),
                dims: scalar_dims(1),
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: 0.0, a: 0.0 },
                diffusion: Diffusion { s: 0.0, vol: 0.0 },
                jump_size: JumpSize::Zero,
                jump_weights: vec![JumpWeight::Zero],
                driver: Driver::ZERO,
                driver_mode: DriverMode::NonlocalLinear,
                terminal: vec![Payoff::Constant { c: p["c"] }],
                terminal_shift: 0.0,
                obstacle: Payoff::Constant { c: p["c"] - 1.0 },
                levy: LevyMeasure::zero(),
                notes: "all assumptions hold with zero constants".into(),
            }
        }
        "LINEAR_DRIFT" => {
            let p = param_map(
                name,
                &[("a", 0.1), ("mu", 0.0), ("s", 0.2), ("dim", 1.0), ("T", 1.0)],
                params,
            )?;
            let dim = p["dim"];
            if !((1.0..=4.0).contains(&dim) && dim.fract() == 0.0) {
                return argument(format!("{name}: dim must be an integer in 1..=4, got {dim}"));
            }
            let dim = dim as usize;
            ProblemSpec {
                name: name.into(),
                dims: Dims {
                    state: dim,
                    brownian: dim,
                    system: 1,
                },
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: p["mu"], a: p["a"] },
                diffusion: Diffusion { s: p["s"], vol: 0.0 },
                jump_size: JumpSize::Zero,
                jump_weights: vec![JumpWeight::Zero],
                driver: Driver::ZERO,
                driver_mode: DriverMode::NonlocalLinear,
                terminal: vec![Payoff::Affine { a: 1.0, b: 0.0 }],
                terminal_shift: 0.0,
                obstacle: Payoff::Constant { c: DEAD_OBSTACLE },
                levy: LevyMeasure::zero(),
                notes: "b, σ affine (Lipschitz, linear growth); no jumps; g linear; obstacle inactive".into(),
            }
        }
        "MERTON_STYLE" => {
            let p = param_map(
                name,
                &[
                    ("mu", 0.05),
                    ("vol", 0.2),
                    ("intensity", 1.0),
                    ("mean", -0.1),
                    ("sd", 0.2),
                    ("theta", 1.0),
                    ("cap", 1e3),
                    ("T", 1.0),
                ],
                params,
            )?;
            let levy = LevyMeasure::density(
                DensityShape::Gaussian {
                    c: positive(name, "intensity", p["intensity"])?,
                    mean: p["mean"],
                    sd: positive(name, "sd", p["sd"])?,
                },
                &[Interval::new(-1.0, 0.0), Interval::new(0.0, 1.0)],
            )?;
            ProblemSpec {
                name: name.into(),
                dims: scalar_dims(1),
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: p["mu"], a: 0.0 },
                diffusion: Diffusion { s: 0.0, vol: p["vol"] },
                jump_size: JumpSize::Exponential {
                    theta: p["theta"],
                    cap: positive(name, "cap", p["cap"])?,
                },
                jump_weights: vec![JumpWeight::Zero],
                driver: Driver::ZERO,
                driver_mode: DriverMode::NonlocalLinear,
                terminal: vec![Payoff::Affine { a: 1.0, b: 0.0 }],
                terminal_shift: 0.0,
                obstacle: Payoff::Constant { c: DEAD_OBSTACLE },
                levy,
                notes:
                    "finite Gaussian mark density on [−1,1]\\{0}; β bounded by cap·(e^θ−1)(1∧|e|); obstacle inactive"
                        .into(),
            }
        }
        "AMERICAN_PUT_STYLE" => {
            let p = param_map(name, &[("r", 0.05), ("vol", 0.2), ("strike", 1.0), ("T", 1.0)], params)?;
            let put = Payoff::Put { strike: p["strike"] };
            ProblemSpec {
                name: name.into(),
                dims: scalar_dims(1),
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: 0.0, a: p["r"] },
                diffusion: Diffusion { s: 0.0, vol: p["vol"] },
                jump_size: JumpSize::Zero,
                jump_weights: vec![JumpWeight::Zero],
                driver: Driver {
                    rate: p["r"],
                    ..Driver::ZERO
                },
                driver_mode: DriverMode::NonlocalLinear,
                terminal: vec![put],
                terminal_shift: 0.0,
                obstacle: put,
                levy: LevyMeasure::zero(),
                notes: "classic American put; no jumps; g = ℓ Lipschitz with p = 0".into(),
            }
        }
        "COUPLED_SYSTEM_M2" => {
            let p = param_map(
                name,
                &[
                    ("r", 0.05),
                    ("vol", 0.2),
                    ("strike1", 1.0),
                    ("strike2", 1.1),
                    ("obstacle_strike", 0.9),
                    ("coupling", 0.5),
                    ("intensity", 1.0),
                    ("theta", 0.5),
                    ("cap", 10.0),
                    ("gamma_c", 1.0),
                    ("q_coef", 0.1),
                    ("T", 1.0),
                ],
                params,
            )?;
            let levy = LevyMeasure::density(
                DensityShape::Uniform {
                    c: positive(name, "intensity", p["intensity"])?,
                },
                &[Interval::new(-0.5, -0.05), Interval::new(0.05, 0.5)],
            )?;
            ProblemSpec {
                name: name.into(),
                dims: scalar_dims(2),
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: 0.0, a: p["r"] },
                diffusion: Diffusion { s: 0.0, vol: p["vol"] },
                jump_size: JumpSize::Exponential {
                    theta: p["theta"],
                    cap: positive(name, "cap", p["cap"])?,
                },
                jump_weights: vec![JumpWeight::Signed { c: p["gamma_c"] }; 2],
                driver: Driver {
                    rate: p["r"],
                    coupling: p["coupling"],
                    q_coef: p["q_coef"],
                    ..Driver::ZERO
                },
                driver_mode: DriverMode::NonlocalLinear,
                terminal: vec![
                    Payoff::Put { strike: p["strike1"] },
                    Payoff::Put { strike: p["strike2"] },
                ],
                terminal_shift: 0.0,
                obstacle: Payoff::Put {
                    strike: p["obstacle_strike"],
                },
                levy,
                notes: "two components coupled through y; sign-changing γ; finite uniform marks".into(),
            }
        }
        "INFINITE_ACTIVITY_PUT" | "NORM_DRIVER_PUT" => {
            let norm = name == "NORM_DRIVER_PUT";
            let p = param_map(
                name,
                &[
                    ("r", 0.05),
                    ("vol", 0.2),
                    ("strike", 1.0),
                    ("c", 0.1),
                    ("alpha", 0.5),
                    ("theta", 0.3),
                    ("cap", 10.0),
                    ("gamma_c", 1.0),
                    ("q_coef", if norm { 0.5 } else { 0.0 }),
                    ("q_sin", if norm { 0.0 } else { 0.1 }),
                    ("T", 1.0),
                ],
                params,
            )?;
            let levy = LevyMeasure::stable_like(positive(name, "c", p["c"])?, p["alpha"], true)?;
            let put = Payoff::Put { strike: p["strike"] };
            ProblemSpec {
                name: name.into(),
                dims: scalar_dims(1),
                horizon: positive(name, "T", p["T"])?,
                drift: Drift { mu: 0.0, a: p["r"] },
                diffusion: Diffusion { s: 0.0, vol: p["vol"] },
                jump_size: JumpSize::Exponential {
                    theta: p["theta"],
                    cap: positive(name, "cap", p["cap"])?,
                },
                jump_weights: vec![JumpWeight::Absolute { c: p["gamma_c"] }],
                driver: Driver {
                    rate: p["r"],
                    q_coef: p["q_coef"],
                    q_sin: p["q_sin"],
                    ..Driver::ZERO
                },
                driver_mode: if norm {
                    DriverMode::NonlocalNorm
                } else {
                    DriverMode::NonlocalLinear
                },
                terminal: vec![put],
                terminal_shift: 0.0,
                obstacle: put,
                levy,
                notes: if norm {
                    "λ(E) = ∞ (c|e|^(−1−α) on [−1,1]\\{0}); driver reads ‖ζ‖_{L²(λ)}".into()
                } else {
                    "λ(E) = ∞ (c|e|^(−1−α) on [−1,1]\\{0}); h non-monotone in q via sin(q)".into()
                },
            }
        }
        _ => {
            return argument(format!(
                "unknown problem {name}; valid names are {}",
                CATALOG.join(", ")
            ))
        }
    };
    let gap = spec.terminal_gap();
    if gap > 0.0 {
        return argument(format!("{name}: terminal payoff falls below the obstacle by {gap:e}"));
    }
    Ok(spec)
}

/// One probed assumption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionRecord {
    pub assumption: String,
    pub probe_count: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub fitted_c: Option<f64>,
    pub fitted_p: Option<f64>,
    pub pass: bool,
}

impl AssumptionRecord {
    fn new(assumption: &str, probe_count: usize, max_ratio: f64, bound: f64, fit: Option<PowerFit>) -> Self {
        let fit_ok = fit.is_none_or(|f| f.c.is_finite() && f.p.is_finite());
        Self {
            assumption: assumption.into(),
            probe_count,
            max_ratio,
            bound,
            fitted_c: fit.map(|f| f.c),
            fitted_p: fit.map(|f| f.p),
            pass: fit_ok && max_ratio.is_finite() && max_ratio <= bound * (1.0 + 1e-9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub problem: String,
    pub records: Vec<AssumptionRecord>,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn get(&self, assumption: &str) -> Option<&AssumptionRecord> {
        self.records.iter().find(|r| r.assumption == assumption)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const PROBE_RADIUS: f64 = 10.0;

/// Random Lipschitz quotients of the coefficients.
pub fn probe_lipschitz<R: Rng + ?Sized>(spec: &ProblemSpec, samples: usize, rng: &mut R) -> Result<AssumptionReport> {
    if samples < 2 {
        return argument("probe_lipschitz needs at least 2 samples");
    }
    let m = spec.m();
    let max_mark = spec.levy.max_mark().max(1.0);
    let draw_x = |rng: &mut R| rng.random_range(-PROBE_RADIUS..PROBE_RADIUS);
    let draw_e = |rng: &mut R| {
        let mag = rng.random_range(1e-3..=max_mark);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    };

    let mut q_b = 0.0f64;
    let mut q_sigma = 0.0f64;
    let mut q_beta = 0.0f64;
    let mut g_beta = 0.0f64;
    let mut g_gamma = 0.0f64;
    let mut q_hy = 0.0f64;
    let mut q_hz = 0.0f64;
    let mut q_hq = 0.0f64;
    let mut terminal_pts = vec![Vec::new(); m];
    let mut obstacle_pts = Vec::new();

    for _ in 0..samples {
        let (x, x2) = (draw_x(rng), draw_x(rng));
        let dx = (x - x2).abs();
        if dx == 0.0 {
            continue;
        }
        let e = draw_e(rng);
        let w = e.abs().min(1.0);
        q_b = q_b.max((spec.drift.eval(x) - spec.drift.eval(x2)).abs() / dx);
        q_sigma = q_sigma.max((spec.diffusion.eval(x) - spec.diffusion.eval(x2)).abs() / dx);
        let db = spec.jump_size.beta(x, e) - spec.jump_size.beta(x2, e);
        q_beta = q_beta.max(db.abs() / (dx * w));
        g_beta = g_beta.max(spec.jump_size.beta(x, e).abs() / ((1.0 + x.abs()) * w));
        for i in 0..m {
            g_gamma = g_gamma.max(spec.jump_weights[i].eval(e).abs() / w);
        }

        // payoff quotients against the (C, p) envelope
        let scale = x.abs().max(x2.abs());
        for (i, pts) in terminal_pts.iter_mut().enumerate() {
            let v = (spec.terminal[i].eval_sum(x) - spec.terminal[i].eval_sum(x2)).abs() / dx;
            pts.push((scale, v, x, x2));
        }
        let v = (spec.obstacle.eval_sum(x) - spec.obstacle.eval_sum(x2)).abs() / dx;
        obstacle_pts.push((scale, v, x, x2));

        // driver quotients in one argument at a time
        let y: Vec<f64> = (0..m).map(|_| draw_x(rng)).collect();
        let y2: Vec<f64> = (0..m).map(|_| draw_x(rng)).collect();
        let z: Vec<f64> = (0..spec.dims.brownian).map(|_| draw_x(rng)).collect();
        let z2: Vec<f64> = (0..spec.dims.brownian).map(|_| draw_x(rng)).collect();
        let (q, q2) = (draw_x(rng), draw_x(rng));
        let dy = y.iter().zip(&y2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dz: f64 = z.iter().zip(&z2).map(|(a, b)| (a - b).abs()).sum();
        let dq = (q - q2).abs();
        for i in 0..m {
            let h = |y: &[f64], z: &[f64], q: f64| spec.h(i, 0.0, &[x], y, z, q);
            if dy > 0.0 {
                q_hy = q_hy.max((h(&y, &z, q) - h(&y2, &z, q)).abs() / dy);
            }
            if dz > 0.0 {
                q_hz = q_hz.max((h(&y, &z, q) - h(&y, &z2, q)).abs() / dz);
            }
            if dq > 0.0 {
                q_hq = q_hq.max((h(&y, &z, q) - h(&y, &z, q2)).abs() / dq);
            }
        }
    }

    let n = samples;
    let js = &spec.jump_size;
    let gamma_bound = spec.jump_weights.iter().map(|g| g.bound(max_mark)).fold(0.0, f64::max);
    let mut records = vec![
        AssumptionRecord::new("b-lipschitz", n, q_b, spec.drift.lipschitz(), None),
        AssumptionRecord::new("sigma-lipschitz", n, q_sigma, spec.diffusion.lipschitz(), None),
        AssumptionRecord::new(
            "beta-lipschitz",
            n,
            q_beta,
            js.amplitude_lipschitz() * js.profile_bound(max_mark),
            None,
        ),
        AssumptionRecord::new(
            "beta-growth",
            n,
            g_beta,
            js.amplitude_growth() * js.profile_bound(max_mark),
            None,
        ),
        AssumptionRecord::new("gamma-bound", n, g_gamma, gamma_bound, None),
        AssumptionRecord::new("h-lipschitz-y", n, q_hy, spec.driver.lipschitz_y(m), None),
        AssumptionRecord::new("h-lipschitz-z", n, q_hz, spec.driver.lipschitz_z(), None),
        AssumptionRecord::new("h-lipschitz-q", n, q_hq, spec.driver.lipschitz_q(), None),
    ];
    for (i, pts) in terminal_pts.iter().enumerate() {
        records.push(local_lipschitz_record(
            &format!("g{}-local-lipschitz", i + 1),
            &spec.terminal[i],
            pts,
        ));
    }
    records.push(local_lipschitz_record(
        "ell-local-lipschitz",
        &spec.obstacle,
        &obstacle_pts,
    ));
    Ok(AssumptionReport {
        problem: spec.name.clone(),
        records,
    })
}

fn local_lipschitz_record(id: &str, payoff: &Payoff, pts: &[(f64, f64, f64, f64)]) -> AssumptionRecord {
    let (c, p) = payoff.local_lipschitz();
    let envelope = |p: f64, x: f64, x2: f64| 1.0 + x.abs().powf(p) + x2.abs().powf(p);
    let max_ratio = pts
        .iter()
        .map(|&(_, v, x, x2)| v / envelope(p, x, x2))
        .fold(0.0, f64::max);
    let fit = fit_power_envelope(
        &pts.iter().map(|&(s, v, _, _)| (s, v)).collect::<Vec<_>>(),
        1.0,
        |p, i| envelope(p, pts[i].2, pts[i].3),
    );
    AssumptionRecord::new(id, pts.len(), max_ratio, c, Some(fit))
}

/// Polynomial growth of `gⁱ`, `ℓ` and `hⁱ(·, ·, 0, 0, 0)` on a log ladder of
/// `|x|` up to 10³ (both signs).
pub fn probe_growth<R: Rng + ?Sized>(spec: &ProblemSpec, samples: usize, rng: &mut R) -> Result<AssumptionReport> {
    if samples < 2 {
        return argument("probe_growth needs at least 2 samples");
    }
    let mut ladder = probe_ladder();
    for _ in 0..samples {
        let mag = 10f64.powf(rng.random_range(-2.0..3.0));
        ladder.push(if rng.random::<bool>() { mag } else { -mag });
    }
    let t = rng.random_range(0.0..=spec.horizon);
    let m = spec.m();
    let zeros_y = vec![0.0; m];
    let zeros_z = vec![0.0; spec.dims.brownian];

    let mut functions: Vec<(String, Box<dyn Fn(&[f64]) -> f64 + '_>, (f64, f64))> = Vec::new();
    for i in 0..m {
        let (c, p) = spec.terminal[i].growth();
        functions.push((
            format!("g{}", i + 1),
            Box::new(move |x: &[f64]| spec.g(i, x)),
            (c + spec.terminal_shift.abs(), p),
        ));
    }
    functions.push((
        "ell".into(),
        Box::new(|x: &[f64]| spec.ell(t, x)),
        spec.obstacle.growth(),
    ));
    for i in 0..m {
        let (y, z) = (zeros_y.clone(), zeros_z.clone());
        functions.push((
            format!("h{}-at-zero", i + 1),
            Box::new(move |x: &[f64]| spec.h(i, t, x, &y, &z, 0.0)),
            (0.0, 0.0),
        ));
    }

    let mut records = Vec::new();
    for (id, f, (c_decl, p_decl)) in &functions {
        let mut pts = Vec::with_capacity(ladder.len());
        for &s in &ladder {
            let x = spec.scalar(s);
            let v = f(&x);
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("{id} is {v} at x = {s}")));
            }
            pts.push((s.abs(), v.abs()));
        }
        let max_ratio = pts
            .iter()
            .map(|&(s, v)| v / (1.0 + s.powf(*p_decl)))
            .fold(0.0, f64::max);
        let fit = fit_power_envelope(&pts, 1.0, |p, i| 1.0 + pts[i].0.powf(p));
        records.push(AssumptionRecord::new(
            &format!("{id}-growth"),
            pts.len(),
            max_ratio,
            *c_decl,
            Some(fit),
        ));
    }
    Ok(AssumptionReport {
        problem: spec.name.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(name: &str, kv: &[(&str, f64)]) -> ProblemSpec {
        let p = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        catalog(name, &p).unwrap()
    }

    #[test]
    fn unknown_names_are_listed() {
        let err = catalog("HESTON", &BTreeMap::new()).unwrap_err().to_string();
        assert!(err.contains("AMERICAN_PUT_STYLE") && err.contains("CONSTANT"));
        let mut p = BTreeMap::new();
        p.insert("kappa".to_string(), 1.0);
        assert!(catalog("CONSTANT", &p).is_err());
    }

    #[test]
    fn terminal_consistency_enforced() {
        let mut p = BTreeMap::new();
        p.insert("obstacle_strike".to_string(), 1.5);
        assert!(catalog("COUPLED_SYSTEM_M2", &p).is_err());
        for name in CATALOG {
            assert_eq!(build(name, &[]).terminal_gap(), 0.0, "{name}");
        }
    }

    #[test]
    fn constant_instance() {
        let s = build("CONSTANT", &[("c", 3.0)]);
        assert_eq!(s.g(0, &[7.0]), 3.0);
        assert_eq!(s.ell(0.0, &[7.0]), 2.0);
        assert!(s.jump_size.is_zero());
    }

    #[test]
    fn lipschitz_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = build("LINEAR_DRIFT", &[("a", 0.1)]);
        let r = probe_lipschitz(&s, 500, &mut rng).unwrap();
        assert!((r.get("b-lipschitz").unwrap().max_ratio - 0.1).abs() < 1e-12);

        let s = build("AMERICAN_PUT_STYLE", &[]);
        let r = probe_lipschitz(&s, 500, &mut rng).unwrap();
        assert!((r.get("h-lipschitz-y").unwrap().max_ratio - 0.05).abs() < 1e-12);
        assert_eq!(r.get("h-lipschitz-z").unwrap().max_ratio, 0.0);
        assert_eq!(r.get("h-lipschitz-q").unwrap().max_ratio, 0.0);

        let mut s = build("COUPLED_SYSTEM_M2", &[]);
        s.jump_size = JumpSize::Proportional { scale: 0.3 };
        let r = probe_lipschitz(&s, 500, &mut rng).unwrap();
        assert!((r.get("beta-lipschitz").unwrap().max_ratio - 0.3).abs() < 1e-12);
    }

    #[test]
    fn growth_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = build("CONSTANT", &[]);
        s.terminal = vec![Payoff::Square];
        let r = probe_growth(&s, 50, &mut rng).unwrap();
        let p = r.get("g1-growth").unwrap().fitted_p.unwrap();
        assert!((p - 2.0).abs() <= 0.1, "{p}");
        assert!(r.get("ell-growth").unwrap().fitted_p.unwrap().abs() <= 0.1);
        let s = build("AMERICAN_PUT_STYLE", &[]);
        let r = probe_growth(&s, 50, &mut rng).unwrap();
        assert!(r.get("g1-growth").unwrap().fitted_p.unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_jump_component_gives_plain_h() {
        for name in ["INFINITE_ACTIVITY_PUT", "NORM_DRIVER_PUT", "COUPLED_SYSTEM_M2"] {
            let s = build(name, &[]);
            let t = s.levy.truncate(8).unwrap();
            let zeta = vec![0.0; t.nodes().len()];
            let y = vec![0.4; s.m()];
            for i in 0..s.m() {
                let f = s.f(i, 0.1, &[1.0], &y, &[0.2], t.nodes(), t.weights(), &zeta);
                assert_eq!(f, s.h(i, 0.1, &[1.0], &y, &[0.2], 0.0));
            }
        }
    }

    #[test]
    fn one_instance_is_non_monotone_in_q() {
        assert!(!build("INFINITE_ACTIVITY_PUT", &[]).driver.is_q_monotone());
        assert!(build("COUPLED_SYSTEM_M2", &[])
            .jump_weights
            .iter()
            .any(|g| matches!(g, JumpWeight::Signed { .. })));
    }
}
