//! Yield functions `Y(z, x)` on standard-form states and a sampling checker
//! for the properties the optimality results rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_closed, Error, Result};

/// Violation tolerance for every contract check.
pub const CONTRACT_TOL: f64 = 1e-9;

/// A yield evaluated on the standard form `(z, x)` with `z, x >= 0` and
/// `z^2 + x^2 <= 1`.
pub trait YieldFunction: Send + Sync {
    fn eval(&self, z: f64, x: f64) -> f64;
    fn name(&self) -> String;
}

impl<Y: YieldFunction + ?Sized> YieldFunction for &Y {
    fn eval(&self, z: f64, x: f64) -> f64 {
        (**self).eval(z, x)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<Y: YieldFunction + ?Sized> YieldFunction for Box<Y> {
    fn eval(&self, z: f64, x: f64) -> f64 {
        (**self).eval(z, x)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Binary entropy in bits, with `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_closed("p", p, 0.0, 1.0)?;
    Ok(entropy_term(p) + entropy_term(1.0 - p))
}

fn entropy_term(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Distillable entanglement of the standard-form state.
pub fn ed_eval(z: f64, x: f64) -> Result<f64> {
    check_closed("z", z, 0.0, 1.0)?;
    check_closed("x", x, 0.0, 1.0)?;
    let r2 = z * z + x * x;
    if r2 > 1.0 + 1e-12 {
        return Err(Error::param("z^2+x^2", r2, "exceeds 1"));
    }
    Ok(ed_unchecked(z, x))
}

fn ed_unchecked(z: f64, x: f64) -> f64 {
    let r = (z * z + x * x).sqrt().min(1.0);
    let h = |p: f64| entropy_term(p) + entropy_term(1.0 - p);
    (h((1.0 + x) / 2.0) - h((1.0 + r) / 2.0)).max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillableEntanglement;

impl YieldFunction for DistillableEntanglement {
    fn eval(&self, z: f64, x: f64) -> f64 {
        ed_unchecked(z.clamp(0.0, 1.0), x.clamp(0.0, 1.0))
    }
    fn name(&self) -> String {
        "ed".into()
    }
}

/// Convex profile `g` with `g(0) = 0`, used for yields that only see the
/// singlet fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexProfile {
    Linear(f64),
    Power(f64),
    /// Piecewise-linear through the origin: segment `i` starts at
    /// `breakpoints[i]` (with `breakpoints[0] == 0`) and has slope `slopes[i]`.
    PiecewiseLinear {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
    },
}

impl ConvexProfile {
    pub fn linear(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::param("c", c, "linear coefficient must be >= 0"));
        }
        Ok(Self::Linear(c))
    }

    pub fn power(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::NonConvexSpec(format!("power {k} < 1")));
        }
        Ok(Self::Power(k))
    }

    pub fn piecewise_linear(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != slopes.len() {
            return Err(Error::NonConvexSpec(
                "need one slope per breakpoint".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::NonConvexSpec("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonConvexSpec(
                "breakpoints must increase".into(),
            ));
        }
        if slopes.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::NonConvexSpec("slopes must be >= 0".into()));
        }
        if let Some(w) = slopes.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::NonConvexSpec(format!(
                "slope decreases from {} to {}",
                w[0], w[1]
            )));
        }
        Ok(Self::PiecewiseLinear {
            breakpoints,
            slopes,
        })
    }

    pub fn apply(&self, z: f64) -> f64 {
        match self {
            ConvexProfile::Linear(c) => c * z,
            ConvexProfile::Power(k) => z.powf(*k),
            ConvexProfile::PiecewiseLinear {
                breakpoints,
                slopes,
            } => {
                let mut acc = 0.0;
                for (i, (&start, &slope)) in breakpoints.iter().zip(slopes).enumerate() {
                    if z <= start {
                        break;
                    }
                    let end = breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY);
                    acc += slope * (z.min(end) - start);
                }
                acc
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            ConvexProfile::Linear(c) => format!("linear:{c}"),
            ConvexProfile::Power(k) => format!("power:{k}"),
            ConvexProfile::PiecewiseLinear {
                breakpoints,
                slopes,
            } => {
                let parts: Vec<String> = breakpoints
                    .iter()
                    .zip(slopes)
                    .map(|(b, s)| format!("{b}:{s}"))
                    .collect();
                format!("pwl:{}", parts.join(","))
            }
        }
    }
}

/// `g(z)`, ignoring `x`.
pub fn sf_eval(g: &ConvexProfile, z: f64) -> Result<f64> {
    check_closed("z", z, 0.0, 1.0)?;
    Ok(g.apply(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingletFractionYield(pub ConvexProfile);

impl YieldFunction for SingletFractionYield {
    fn eval(&self, z: f64, _x: f64) -> f64 {
        self.0.apply(z)
    }
    fn name(&self) -> String {
        self.0.label()
    }
}

/// Wraps an arbitrary closure as a yield.
pub struct FnYield<F> {
    name: String,
    f: F,
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> FnYield<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> YieldFunction for FnYield<F> {
    fn eval(&self, z: f64, x: f64) -> f64 {
        (self.f)(z, x)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractCheck {
    SeparableZero,
    MonotoneZ,
    MonotoneX,
    JointConvexity,
    KeyInequality,
}

/// Sample points reproducing one violation. For convexity `points` holds the
/// two segment endpoints; for the key inequality it holds `(v, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub check: ContractCheck,
    pub points: Vec<(f64, f64)>,
    pub violation: f64,
}

impl Witness {
    /// Recomputes the violation amount from the stored points.
    pub fn recompute<Y: YieldFunction + ?Sized>(&self, y: &Y) -> f64 {
        match self.check {
            ContractCheck::SeparableZero => y.eval(0.0, self.points[0].1).abs(),
            ContractCheck::MonotoneZ | ContractCheck::MonotoneX => {
                let (lo, hi) = (self.points[0], self.points[1]);
                y.eval(lo.0, lo.1) - y.eval(hi.0, hi.1)
            }
            ContractCheck::JointConvexity => midpoint_gap(y, self.points[0], self.points[1]),
            ContractCheck::KeyInequality => {
                let (v, z) = self.points[0];
                key_gap(y, v, z)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub name: String,
    pub separable_zero_ok: bool,
    pub monotone_z_ok: bool,
    pub monotone_x_ok: bool,
    pub joint_convex_ok: bool,
    pub key_inequality_ok: bool,
    pub worst_violation: f64,
    /// Worst witness per failing check, in check order.
    pub witnesses: Vec<Witness>,
}

impl ContractReport {
    pub fn all_ok(&self) -> bool {
        self.separable_zero_ok
            && self.monotone_z_ok
            && self.monotone_x_ok
            && self.joint_convex_ok
            && self.key_inequality_ok
    }

    pub fn witness(&self, check: ContractCheck) -> Option<&Witness> {
        self.witnesses.iter().find(|w| w.check == check)
    }
}

fn midpoint_gap<Y: YieldFunction + ?Sized>(y: &Y, a: (f64, f64), b: (f64, f64)) -> f64 {
    let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    y.eval(mid.0, mid.1) - (y.eval(a.0, a.1) + y.eval(b.0, b.1)) / 2.0
}

fn key_gap<Y: YieldFunction + ?Sized>(y: &Y, v: f64, z: f64) -> f64 {
    let x = (1.0 - z * z).max(0.0).sqrt();
    y.eval(v * z, x) - z * y.eval(v, 0.0)
}

/// Tracks the worst violation of one check.
#[derive(Default)]
struct Tracker {
    worst: Option<Witness>,
}

impl Tracker {
    fn offer(&mut self, check: ContractCheck, violation: f64, points: impl FnOnce() -> Vec<(f64, f64)>) {
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v <= 0.0 {
            return;
        }
        if self.worst.as_ref().map_or(true, |w| v > w.violation) {
            self.worst = Some(Witness {
                check,
                points: points(),
                violation: v,
            });
        }
    }

    fn ok(&self) -> bool {
        self.worst.as_ref().map_or(true, |w| w.violation <= CONTRACT_TOL)
    }
}

fn uniform_quarter_disc(rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let z: f64 = rng.gen();
        let x: f64 = rng.gen();
        if z * z + x * x <= 1.0 {
            return (z, x);
        }
    }
}

pub fn verify_yield_contract<Y: YieldFunction + ?Sized>(
    y: &Y,
    grid_n: usize,
    segment_samples: usize,
    seed: u64,
) -> Result<ContractReport> {
    if grid_n < 8 {
        return Err(Error::param("grid_n", grid_n as f64, "must be >= 8"));
    }
    if segment_samples < 100 {
        return Err(Error::param(
            "segment_samples",
            segment_samples as f64,
            "must be >= 100",
        ));
    }
    let step = 1.0 / (grid_n - 1) as f64;
    let coord = |i: usize| (i as f64 * step).min(1.0);
    let inside = |z: f64, x: f64| z * z + x * x <= 1.0 + 1e-15;

    let mut sep = Tracker::default();
    for j in 0..grid_n {
        let x = coord(j);
        sep.offer(ContractCheck::SeparableZero, y.eval(0.0, x).abs(), || {
            vec![(0.0, x)]
        });
    }

    let mut mono_z = Tracker::default();
    let mut mono_x = Tracker::default();
    for i in 0..grid_n {
        for j in 0..grid_n {
            let (z, x) = (coord(i), coord(j));
            if !inside(z, x) {
                continue;
            }
            let here = y.eval(z, x);
            if i + 1 < grid_n && inside(coord(i + 1), x) {
                let next = (coord(i + 1), x);
                mono_z.offer(ContractCheck::MonotoneZ, here - y.eval(next.0, next.1), || {
                    vec![(z, x), next]
                });
            }
            if j + 1 < grid_n && inside(z, coord(j + 1)) {
                let next = (z, coord(j + 1));
                mono_x.offer(ContractCheck::MonotoneX, here - y.eval(next.0, next.1), || {
                    vec![(z, x), next]
                });
            }
        }
    }

    let mut convex = Tracker::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..segment_samples {
        let a = uniform_quarter_disc(&mut rng);
        let b = uniform_quarter_disc(&mut rng);
        convex.offer(ContractCheck::JointConvexity, midpoint_gap(y, a, b), || {
            vec![a, b]
        });
    }
    // Grid-aligned segments probe each coordinate direction separately.
    for i in 0..grid_n {
        for j in 0..grid_n {
            let a = (coord(i), coord(j));
            if !inside(a.0, a.1) {
                continue;
            }
            for (di, dj) in [(2, 0), (0, 2), (2, 2)] {
                if i + di >= grid_n || j + dj >= grid_n {
                    continue;
                }
                let b = (coord(i + di), coord(j + dj));
                if inside(b.0, b.1) {
                    convex.offer(ContractCheck::JointConvexity, midpoint_gap(y, a, b), || {
                        vec![a, b]
                    });
                }
            }
        }
    }

    let mut key = Tracker::default();
    for i in 0..grid_n {
        for j in 0..grid_n {
            let (v, z) = (coord(i), coord(j));
            key.offer(ContractCheck::KeyInequality, key_gap(y, v, z), || vec![(v, z)]);
        }
    }

    let trackers = [&sep, &mono_z, &mono_x, &convex, &key];
    let worst_violation = trackers
        .iter()
        .filter_map(|t| t.worst.as_ref().map(|w| w.violation))
        .fold(0.0, f64::max);
    let witnesses = trackers
        .iter()
        .filter(|t| !t.ok())
        .filter_map(|t| t.worst.clone())
        .collect();
    Ok(ContractReport {
        name: y.name(),
        separable_zero_ok: sep.ok(),
        monotone_z_ok: mono_z.ok(),
        monotone_x_ok: mono_x.ok(),
        joint_convex_ok: convex.ok(),
        key_inequality_ok: key.ok(),
        worst_violation,
        witnesses,
    })
}
