//! Lévy measures on the scalar mark space `ℝ \ {0}`: atoms, finite
//! densities and infinite-activity densities, together with their
//! truncation to `{|e| ≥ 1/k}`, quadrature and jump sampling.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::quadrature::{geometric_panels, gl8, gl8_panel, QuadratureRule};

/// Points in the tabulated CDF used for inverse-transform sampling.
pub const CDF_TABLE_POINTS: usize = 4096;

/// Dyadic shells examined near the origin when classifying a density.
const ORIGIN_SHELLS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeasureKind {
    FiniteAtomic,
    FiniteDensity,
    InfiniteDensity,
}

/// Parametric density shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum DensityShape {
    /// `c·|e|^(−1−α)`; infinite activity when the support reaches 0 and α ≥ 0.
    Power { c: f64, alpha: f64 },
    /// `c` on the support.
    Uniform { c: f64 },
    /// `c` times the normal density with the given mean and standard deviation.
    Gaussian { c: f64, mean: f64, sd: f64 },
}

impl DensityShape {
    pub fn eval(&self, e: f64) -> f64 {
        match *self {
            DensityShape::Power { c, alpha } => c * e.abs().powf(-1.0 - alpha),
            DensityShape::Uniform { c } => c,
            DensityShape::Gaussian { c, mean, sd } => {
                let z = (e - mean) / sd;
                c * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityShape::Power { c, alpha } => c > 0.0 && alpha.is_finite(),
            DensityShape::Uniform { c } => c > 0.0,
            DensityShape::Gaussian { c, mean, sd } => c > 0.0 && mean.is_finite() && sd > 0.0,
        };
        if ok && self.eval(0.5).is_finite() {
            Ok(())
        } else {
            argument(format!("invalid density parameters {self:?}"))
        }
    }
}

/// A closed interval of marks on one side of the origin. An endpoint at 0 is
/// understood as open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// The interval in `|e|` coordinates and its sign.
    fn magnitude(&self) -> (f64, f64, f64) {
        if self.lo >= 0.0 {
            (self.lo, self.hi, 1.0)
        } else {
            (-self.hi, -self.lo, -1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub mark: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Atoms(Vec<Atom>),
    Density {
        shape: DensityShape,
        support: Vec<Interval>,
    },
}

/// A σ-finite jump measure `λ` with `∫(1 ∧ e²) λ(de) < ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyMeasure {
    repr: Repr,
    kind: MeasureKind,
    mass: f64,
    small_jump_moment: f64,
}

impl LevyMeasure {
    /// The null measure (no jumps).
    pub fn zero() -> Self {
        Self {
            repr: Repr::Atoms(Vec::new()),
            kind: MeasureKind::FiniteAtomic,
            mass: 0.0,
            small_jump_moment: 0.0,
        }
    }

    /// Finitely many atoms `(mark, weight)`.
    pub fn atomic(atoms: &[(f64, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(atoms.len());
        for &(mark, weight) in atoms {
            if !(mark.is_finite() && mark != 0.0) {
                return argument(format!("atom mark must be finite and non-zero, got {mark}"));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return argument(format!("atom weight must be positive, got {weight}"));
            }
            out.push(Atom { mark, weight });
        }
        out.sort_by(|a, b| a.mark.total_cmp(&b.mark));
        let mass = out.iter().map(|a| a.weight).sum();
        let small_jump_moment = out.iter().map(|a| a.weight * a.mark.powi(2).min(1.0)).sum();
        Ok(Self {
            repr: Repr::Atoms(out),
            kind: MeasureKind::FiniteAtomic,
            mass,
            small_jump_moment,
        })
    }

    /// A density on a union of intervals, each lying on one side of the origin.
    ///
    /// Fails unless `∫(1 ∧ e²) λ(de)` is numerically finite. The kind (finite
    /// or infinite activity) is determined from the behaviour of the density
    /// near the origin.
    pub fn density(shape: DensityShape, support: &[Interval]) -> Result<Self> {
        shape.validate()?;
        if support.is_empty() {
            return argument("density support must contain at least one interval");
        }
        let mut support = support.to_vec();
        support.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for iv in &support {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi) {
                return argument(format!("bad support interval [{}, {}]", iv.lo, iv.hi));
            }
            if iv.lo < 0.0 && iv.hi > 0.0 {
                return argument(format!(
                    "support interval [{}, {}] straddles the origin; split it",
                    iv.lo, iv.hi
                ));
            }
        }
        for w in support.windows(2) {
            if w[1].lo < w[0].hi {
                return argument("support intervals overlap");
            }
        }

        let mut mass = 0.0;
        let mut moment = 0.0;
        let mut infinite = false;
        for iv in &support {
            let (a, b, sign) = iv.magnitude();
            let f = |m: f64| shape.eval(sign * m);
            if a > 0.0 {
                for (lo, hi) in geometric_panels(a, b) {
                    mass += gl8(lo, hi, f);
                    moment += gl8(lo, hi, |m| f(m) * (m * m).min(1.0));
                }
                continue;
            }
            // Interval reaching the origin: dyadic shells toward 0.
            let mut shell_mass = Vec::with_capacity(ORIGIN_SHELLS);
            let mut shell_moment = Vec::with_capacity(ORIGIN_SHELLS);
            let mut hi = b;
            for _ in 0..ORIGIN_SHELLS {
                let lo = hi * 0.5;
                shell_mass.push(gl8(lo, hi, f));
                shell_moment.push(gl8(lo, hi, |m| f(m) * (m * m).min(1.0)));
                hi = lo;
            }
            let tail_ratio = |v: &[f64]| {
                let n = v.len();
                if v[n - 2] <= 0.0 {
                    0.0
                } else {
                    v[n - 1] / v[n - 2]
                }
            };
            let r_moment = tail_ratio(&shell_moment);
            if !(r_moment < 1.0 - 1e-6) || shell_moment.iter().any(|v| !v.is_finite()) {
                return argument(format!(
                    "∫(1∧e²)λ(de) diverges near the origin for {shape:?} (shell ratio {r_moment:.6})"
                ));
            }
            moment += shell_moment.iter().sum::<f64>() + shell_moment[ORIGIN_SHELLS - 1] * r_moment / (1.0 - r_moment);
            let r_mass = tail_ratio(&shell_mass);
            if r_mass >= 1.0 - 1e-9 {
                infinite = true;
            } else {
                mass += shell_mass.iter().sum::<f64>() + shell_mass[ORIGIN_SHELLS - 1] * r_mass / (1.0 - r_mass);
            }
        }
        if !moment.is_finite() {
            return argument("∫(1∧e²)λ(de) is not finite");
        }
        let (kind, mass) = if infinite {
            (MeasureKind::InfiniteDensity, f64::INFINITY)
        } else {
            (MeasureKind::FiniteDensity, mass)
        };
        Ok(Self {
            repr: Repr::Density { shape, support },
            kind,
            mass,
            small_jump_moment: moment,
        })
    }

    /// `c·|e|^(−1−α)` on `(0, 1]`, or on `[−1, 0) ∪ (0, 1]` when symmetric.
    pub fn stable_like(c: f64, alpha: f64, symmetric: bool) -> Result<Self> {
        let mut support = vec![Interval::new(0.0, 1.0)];
        if symmetric {
            support.insert(0, Interval::new(-1.0, 0.0));
        }
        Self::density(DensityShape::Power { c, alpha }, &support)
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    /// `λ(E)`; infinite for infinite-activity densities.
    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    /// `∫(1 ∧ e²) λ(de)`.
    pub fn small_jump_moment(&self) -> f64 {
        self.small_jump_moment
    }

    /// Largest `|e|` in the support (0 for the null measure).
    pub fn max_mark(&self) -> f64 {
        match &self.repr {
            Repr::Atoms(a) => a.iter().map(|a| a.mark.abs()).fold(0.0, f64::max),
            Repr::Density { support, .. } => support
                .iter()
                .map(|iv| iv.lo.abs().max(iv.hi.abs()))
                .fold(0.0, f64::max),
        }
    }

    /// Smallest `|e|` carrying mass (0 for densities that reach the origin).
    pub fn min_mark(&self) -> f64 {
        match &self.repr {
            Repr::Atoms(a) => a.iter().map(|a| a.mark.abs()).fold(f64::INFINITY, f64::min),
            Repr::Density { support, .. } => support.iter().map(|iv| iv.magnitude().0).fold(f64::INFINITY, f64::min),
        }
    }

    /// `λ({|e| ≥ eps})`.
    pub fn mass_above(&self, eps: f64) -> Result<f64> {
        Ok(self.restrict(eps)?.total_mass)
    }

    /// Restriction to `{|e| ≥ 1/k}`.
    pub fn truncate(&self, k: u32) -> Result<TruncatedMeasure> {
        if k == 0 {
            return argument("truncation index k must be at least 1");
        }
        let mut t = self.restrict(1.0 / k as f64)?;
        t.k = k;
        Ok(t)
    }

    fn restrict(&self, eps: f64) -> Result<TruncatedMeasure> {
        if !(eps > 0.0 && eps.is_finite()) {
            return argument(format!("cutoff must be positive, got {eps}"));
        }
        let (rule, sampler) = match &self.repr {
            Repr::Atoms(atoms) => {
                let kept: Vec<Atom> = atoms.iter().copied().filter(|a| a.mark.abs() >= eps).collect();
                let rule = QuadratureRule {
                    nodes: kept.iter().map(|a| a.mark).collect(),
                    weights: kept.iter().map(|a| a.weight).collect(),
                    scheme: "atoms",
                };
                let mut acc = 0.0;
                let cumulative = kept
                    .iter()
                    .map(|a| {
                        acc += a.weight;
                        acc
                    })
                    .collect();
                (
                    rule,
                    MarkSampler::Atoms {
                        marks: kept.iter().map(|a| a.mark).collect(),
                        cumulative,
                    },
                )
            }
            Repr::Density { shape, support } => {
                let clipped = clip_support(support, eps);
                let mut rule = QuadratureRule::empty("gauss-legendre-8/geometric-2");
                for &(a, b, sign) in &clipped {
                    for (lo, hi) in geometric_panels(a, b) {
                        for (m, w) in gl8_panel(lo, hi) {
                            let e = sign * m;
                            rule.nodes.push(e);
                            rule.weights.push(w * shape.eval(e));
                        }
                    }
                }
                let sampler = if clipped.is_empty() {
                    MarkSampler::Empty
                } else {
                    tabulate_cdf(shape, &clipped)
                };
                (rule, sampler)
            }
        };
        let total_mass = rule.total_weight();
        let sampler = if total_mass > 0.0 { sampler } else { MarkSampler::Empty };
        Ok(TruncatedMeasure {
            base: self.clone(),
            k: 0,
            cutoff: eps,
            total_mass,
            rule,
            sampler,
        })
    }
}

/// Support pieces intersected with `{|e| ≥ eps}` as `(|e|_lo, |e|_hi, sign)`,
/// ordered by increasing signed mark.
fn clip_support(support: &[Interval], eps: f64) -> Vec<(f64, f64, f64)> {
    support
        .iter()
        .filter_map(|iv| {
            let (a, b, sign) = iv.magnitude();
            let a = a.max(eps);
            (b > a).then_some((a, b, sign))
        })
        .collect()
}

fn tabulate_cdf(shape: &DensityShape, pieces: &[(f64, f64, f64)]) -> MarkSampler {
    let per_piece = (CDF_TABLE_POINTS / pieces.len()).max(2);
    let mut marks = Vec::with_capacity(CDF_TABLE_POINTS);
    let mut cdf = Vec::with_capacity(CDF_TABLE_POINTS);
    let mut acc = 0.0;
    for &(a, b, sign) in pieces {
        // grid in |e|, geometric when the piece spans more than a factor 2
        let geometric = b / a > 2.0;
        let at = |i: usize| {
            let s = i as f64 / (per_piece - 1) as f64;
            if geometric {
                a * (b / a).powf(s)
            } else {
                a + (b - a) * s
            }
        };
        let mut pts: Vec<f64> = (0..per_piece).map(at).collect();
        pts[per_piece - 1] = b;
        if sign < 0.0 {
            pts.reverse();
        }
        let signed: Vec<f64> = pts.iter().map(|m| sign * m).collect();
        marks.push(signed[0]);
        cdf.push(acc);
        for w in signed.windows(2) {
            acc += gl8(w[0], w[1], |e| shape.eval(e));
            marks.push(w[1]);
            cdf.push(acc);
        }
    }
    for c in &mut cdf {
        *c /= acc;
    }
    MarkSampler::Table { marks, cdf }
}

#[derive(Debug, Clone)]
enum MarkSampler {
    Empty,
    Atoms { marks: Vec<f64>, cumulative: Vec<f64> },
    Table { marks: Vec<f64>, cdf: Vec<f64> },
}

impl MarkSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            MarkSampler::Empty => unreachable!("no marks to sample"),
            MarkSampler::Atoms { marks, cumulative } => {
                let target = u * cumulative[cumulative.len() - 1];
                let idx = cumulative.partition_point(|&c| c <= target);
                marks[idx.min(marks.len() - 1)]
            }
            MarkSampler::Table { marks, cdf } => {
                let hi = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1);
                let lo = hi - 1;
                let span = cdf[hi] - cdf[lo];
                let frac = if span > 0.0 { (u - cdf[lo]) / span } else { 0.0 };
                marks[lo] + frac * (marks[hi] - marks[lo])
            }
        }
    }
}

/// `λ_k`: the restriction of a Lévy measure to `{|e| ≥ cutoff}`.
#[derive(Debug, Clone)]
pub struct TruncatedMeasure {
    base: LevyMeasure,
    k: u32,
    cutoff: f64,
    total_mass: f64,
    rule: QuadratureRule,
    sampler: MarkSampler,
}

impl TruncatedMeasure {
    pub fn base(&self) -> &LevyMeasure {
        &self.base
    }

    /// Truncation index `k` (cutoff `1/k`).
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `λ({|e| ≥ 1/k})`, always finite.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    /// `Σ wⱼ φ(eⱼ)` over the quadrature rule of `λ_k`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, phi: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&e, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let v = phi(e);
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("integrand is {v} at mark e = {e}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// The `dt·∫φ dλ_k` rate subtracted by compensated jump integrals.
    pub fn compensator_drift<F: Fn(f64) -> f64>(&self, phi: F) -> Result<f64> {
        self.integrate(phi)
    }

    /// Marks of the jumps of a Poisson random measure with intensity
    /// `dt·λ_k` over one time slice.
    pub fn sample_jumps<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.sample_jumps_into(dt, rng, &mut out)?;
        Ok(out)
    }

    /// As [`sample_jumps`](Self::sample_jumps), appending to `out`.
    /// Returns the number of marks appended.
    pub fn sample_jumps_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut Vec<f64>) -> Result<usize> {
        if !(dt > 0.0 && dt.is_finite()) {
            return argument(format!("time slice must be positive, got {dt}"));
        }
        if self.total_mass <= 0.0 {
            return Ok(0);
        }
        let poisson =
            Poisson::new(self.total_mass * dt).map_err(|e| Error::Argument(format!("poisson intensity: {e}")))?;
        let n = poisson.sample(rng) as usize;
        for _ in 0..n {
            out.push(self.sampler.draw(rng));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_sided() -> LevyMeasure {
        LevyMeasure::stable_like(1.0, 0.5, false).unwrap()
    }

    #[test]
    fn classification() {
        assert_eq!(one_sided().kind(), MeasureKind::InfiniteDensity);
        assert!(one_sided().total_mass().is_infinite());
        let f = LevyMeasure::density(DensityShape::Uniform { c: 2.0 }, &[Interval::new(0.0, 0.5)]).unwrap();
        assert_eq!(f.kind(), MeasureKind::FiniteDensity);
        assert!((f.total_mass() - 1.0).abs() < 1e-12);
        // α = 0 diverges logarithmically: still infinite activity
        let log = LevyMeasure::stable_like(1.0, 0.0, false).unwrap();
        assert_eq!(log.kind(), MeasureKind::InfiniteDensity);
        // α < 0 has finite mass
        let fin = LevyMeasure::stable_like(1.0, -0.5, false).unwrap();
        assert_eq!(fin.kind(), MeasureKind::FiniteDensity);
        assert!((fin.total_mass() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_levy_density() {
        assert!(LevyMeasure::stable_like(1.0, 2.0, false).is_err());
        assert!(LevyMeasure::stable_like(1.0, 2.5, true).is_err());
        assert!(LevyMeasure::density(DensityShape::Uniform { c: 1.0 }, &[Interval::new(-1.0, 1.0)]).is_err());
        assert!(LevyMeasure::atomic(&[(0.0, 1.0)]).is_err());
        assert!(LevyMeasure::atomic(&[(1.0, -1.0)]).is_err());
    }

    #[test]
    fn mass_above_examples() {
        let m = one_sided();
        let v = m.mass_above(0.5).unwrap();
        assert!((v - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-10, "{v}");
        let atoms = LevyMeasure::atomic(&[(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        assert_eq!(atoms.mass_above(0.5).unwrap(), 1.0);
        assert_eq!(m.mass_above(2.0).unwrap(), 0.0);
        assert_eq!(atoms.mass_above(1.5).unwrap(), 0.0);
        assert!(m.mass_above(0.0).is_err());
        assert!(m.mass_above(-1.0).is_err());
    }

    #[test]
    fn truncate_examples() {
        let atoms = LevyMeasure::atomic(&[(0.3, 1.0), (-0.7, 2.0)]).unwrap();
        let t = atoms.truncate(10).unwrap();
        assert_eq!(t.nodes(), &[-0.7, 0.3]);
        assert_eq!(t.total_mass(), atoms.total_mass());
        let t = one_sided().truncate(4).unwrap();
        assert!((t.total_mass() - 2.0).abs() < 1e-10);
        assert_eq!(t.k(), 4);
        assert_eq!(one_sided().truncate(1).unwrap().total_mass(), 0.0);
        assert!(one_sided().truncate(0).is_err());
    }

    #[test]
    fn integrate_examples() {
        let t = one_sided().truncate(4).unwrap();
        assert_eq!(t.integrate(|_| 0.0).unwrap(), 0.0);
        let v = t.integrate(|e| e * e).unwrap();
        assert!((v - (2.0 / 3.0) * (1.0 - 0.125)).abs() < 1e-12, "{v}");
        let sym = LevyMeasure::stable_like(1.0, 0.5, true).unwrap().truncate(64).unwrap();
        assert!(sym.integrate(|e| e).unwrap().abs() < 1e-10);
        let err = t.integrate(|e| 1.0 / (e - e)).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn compensator_examples() {
        let atoms = LevyMeasure::atomic(&[(1.0, 2.0), (-1.0, 1.0)])
            .unwrap()
            .truncate(2)
            .unwrap();
        assert_eq!(atoms.compensator_drift(|e| e).unwrap(), 1.0);
        assert_eq!(atoms.compensator_drift(|_| 0.0).unwrap(), 0.0);
        let sym = LevyMeasure::stable_like(0.3, 1.2, true).unwrap().truncate(32).unwrap();
        assert!(sym.compensator_drift(|e| e.powi(3)).unwrap().abs() < 1e-10);
    }

    #[test]
    fn empty_measure_never_jumps() {
        let t = one_sided().truncate(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(t.sample_jumps(10.0, &mut rng).unwrap().is_empty());
        }
        assert!(LevyMeasure::zero()
            .truncate(3)
            .unwrap()
            .sample_jumps(1.0, &mut rng)
            .unwrap()
            .is_empty());
        assert!(t.sample_jumps(0.0, &mut rng).is_err());
    }

    #[test]
    fn table_marks_stay_in_support() {
        let t = LevyMeasure::stable_like(1.0, 0.5, true).unwrap().truncate(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            for e in t.sample_jumps(1.0, &mut rng).unwrap() {
                assert!(e.abs() >= 1.0 / 16.0 - 1e-15 && e.abs() <= 1.0 + 1e-15, "{e}");
            }
        }
    }
}
