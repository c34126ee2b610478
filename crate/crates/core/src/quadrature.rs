//! Fixed-order Gauss–Legendre panels with geometric refinement toward the
//! origin, used to discretize integrals against a jump measure.

use serde::Serialize;

/// Order of the Gauss–Legendre rule on every panel.
pub const GL_ORDER: usize = 8;

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Ratio between consecutive panel endpoints when refining toward the origin.
pub const REFINEMENT_RATIO: f64 = 2.0;

/// Nodes and weights of the 8-point rule mapped onto `[a, b]`.
pub fn gl8_panel(a: f64, b: f64) -> [(f64, f64); GL_ORDER] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); GL_ORDER];
    for (i, (&x, &w)) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()).enumerate() {
        out[2 * i] = (mid - half * x, half * w);
        out[2 * i + 1] = (mid + half * x, half * w);
    }
    out
}

/// `∫_a^b f` with a single 8-point panel.
pub fn gl8<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    gl8_panel(a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

/// Panels covering `[a, b]` (with `0 < a < b`) whose endpoints shrink
/// geometrically from `b` toward `a`.
pub fn geometric_panels(a: f64, b: f64) -> Vec<(f64, f64)> {
    debug_assert!(a > 0.0 && b > a);
    let mut panels = Vec::new();
    let mut hi = b;
    loop {
        let lo = hi / REFINEMENT_RATIO;
        if lo <= a * (1.0 + 1e-12) {
            panels.push((a, hi));
            break;
        }
        panels.push((lo, hi));
        hi = lo;
    }
    panels
}

/// A discrete rule `Σ wⱼ φ(eⱼ)` standing in for `∫ φ dλ`.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scheme: &'static str,
}

impl QuadratureRule {
    pub fn empty(scheme: &'static str) -> Self {
        Self {
            nodes: Vec::new(),
            weights: Vec::new(),
            scheme,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&e, &w)| w * f(e)).sum()
    }
}
