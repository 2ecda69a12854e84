//! Closed-form objectives and optima for the point-to-point and three-party
//! protocols, and the tabulated curves comparing them with channel
//! capacities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_open, Error, Result};
use crate::yields::{DistillableEntanglement, YieldFunction};

pub const GRID_POINTS: usize = 2048;
pub const GOLDEN_TOL: f64 = 1e-10;
/// Evaluations clamp `u` into `[U_EPS, 1 - U_EPS]`.
pub const U_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    PointToPoint { t: f64 },
    ThreeParty { ta: f64, tb: f64 },
}

impl ChannelSpec {
    pub fn point_to_point(t: f64) -> Result<Self> {
        check_open("T", t, 0.0, 1.0)?;
        Ok(Self::PointToPoint { t })
    }

    pub fn three_party(ta: f64, tb: f64) -> Result<Self> {
        check_open("Ta", ta, 0.0, 1.0)?;
        check_open("Tb", tb, 0.0, 1.0)?;
        Ok(Self::ThreeParty { ta, tb })
    }

    /// Middle station with both arms at `sqrt(t)`, `t` end to end.
    pub fn three_party_symmetric(t: f64) -> Result<Self> {
        check_open("T", t, 0.0, 1.0)?;
        let arm = t.sqrt();
        Self::three_party(arm, arm)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ChannelSpec::PointToPoint { t } => check_open("T", t, 0.0, 1.0),
            ChannelSpec::ThreeParty { ta, tb } => {
                check_open("Ta", ta, 0.0, 1.0)?;
                check_open("Tb", tb, 0.0, 1.0)
            }
        }
    }
}

/// Exponent `gamma` in `F = (1 + u^gamma) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LossExponent(f64);

impl LossExponent {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("gamma", gamma, "must be > 0"));
        }
        Ok(Self(gamma))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

pub fn loss_exponent(c: &ChannelSpec) -> Result<LossExponent> {
    c.validate()?;
    let arm = |t: f64| (1.0 - t) / t;
    LossExponent::new(match *c {
        ChannelSpec::PointToPoint { t } => arm(t),
        ChannelSpec::ThreeParty { ta, tb } => arm(ta) + arm(tb),
    })
}

fn objective_at<Y: YieldFunction + ?Sized>(y: &Y, gamma: f64, u: f64) -> f64 {
    let u = u.clamp(U_EPS, 1.0 - U_EPS);
    y.eval(u.powf(gamma), 0.0) * (1.0 - u)
}

/// `Y(u^gamma, 0) (1 - u)`.
pub fn objective<Y: YieldFunction + ?Sized>(y: &Y, g: LossExponent, u: f64) -> Result<f64> {
    check_open("u", u, 0.0, 1.0)?;
    Ok(objective_at(y, g.0, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub u_star: f64,
    pub value: f64,
    pub evaluations: usize,
    pub bracket: (f64, f64),
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
///
/// Returns `(argmax, max, evaluations)`. Stops once the bracket is narrower
/// than `tol`.
pub(crate) fn golden_section_max(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while hi - lo > tol {
        // Ties move towards smaller u.
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
        evals += 1;
    }
    let mid = (lo + hi) / 2.0;
    let fm = f(mid);
    evals += 1;
    [(c, fc), (mid, fm), (d, fd)]
        .into_iter()
        .fold((mid, fm, evals), |best, (u, v)| {
            if v > best.1 || (v == best.1 && u < best.0) {
                (u, v, evals)
            } else {
                best
            }
        })
}

/// Maximizes `Y(u^gamma, 0)(1 - u)` over `u` in `(0, 1)`.
pub fn optimum<Y: YieldFunction + ?Sized>(y: &Y, g: LossExponent) -> OptimizationResult {
    optimum_with_grid(y, g, GRID_POINTS)
}

pub fn optimum_with_grid<Y: YieldFunction + ?Sized>(
    y: &Y,
    g: LossExponent,
    grid: usize,
) -> OptimizationResult {
    let gamma = g.0;
    let f = |u: f64| objective_at(y, gamma, u);
    let node = |i: usize| (i as f64 / (grid + 1) as f64).clamp(U_EPS, 1.0 - U_EPS);

    let mut best_i = 1;
    let mut best_v = f(node(1));
    for i in 2..=grid {
        let v = f(node(i));
        if v > best_v {
            best_i = i;
            best_v = v;
        }
    }
    let bracket = (node(best_i - 1), node(best_i + 1));
    let (u_gs, v_gs, evals) = golden_section_max(f, bracket.0, bracket.1, GOLDEN_TOL);
    let (u_star, value) = if v_gs > best_v || (v_gs == best_v && u_gs < node(best_i)) {
        (u_gs, v_gs)
    } else {
        (node(best_i), best_v)
    };
    OptimizationResult {
        u_star,
        value,
        evaluations: grid + evals,
        bracket,
    }
}

/// Fidelity and success probability of the optimal protocol at overlap `u`.
pub fn rnpm_point(u: f64, g: LossExponent) -> Result<(f64, f64)> {
    check_open("u", u, 0.0, 1.0)?;
    Ok(((1.0 + u.powf(g.0)) / 2.0, 1.0 - u))
}

/// Success probability of the optimal protocol tuned to fidelity `f_target`.
pub fn success_at_fidelity(f_target: f64, g: LossExponent) -> Result<f64> {
    check_open("F", f_target, 0.5, 1.0)?;
    let u = (2.0 * f_target - 1.0).powf(1.0 / g.0);
    Ok(1.0 - u)
}

/// Optimal distillable-entanglement yield per channel use.
pub fn ed_max(c: &ChannelSpec) -> Result<f64> {
    Ok(optimum(&DistillableEntanglement, loss_exponent(c)?).value)
}

/// Two-way quantum/private capacity in bits per channel use. For a
/// three-party network both arms must share the same transmittance.
pub fn capacity(c: &ChannelSpec) -> Result<f64> {
    c.validate()?;
    match *c {
        ChannelSpec::PointToPoint { t } => Ok(-(1.0 - t).log2()),
        ChannelSpec::ThreeParty { ta, tb } => {
            if (ta - tb).abs() > 1e-12 {
                return Err(Error::param("Tb", tb, "capacity needs Ta == Tb"));
            }
            Ok(-(1.0 - ta).log2())
        }
    }
}

/// `|<alpha e^{i theta/2} | alpha e^{-i theta/2}>|^T`.
pub fn overlap_from_pulse(alpha: f64, theta: f64, t: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param("alpha", alpha, "must be >= 0"));
    }
    if !theta.is_finite() {
        return Err(Error::param("theta", theta, "must be finite"));
    }
    if !(t.is_finite() && t > 0.0 && t <= 1.0) {
        return Err(Error::param("T", t, "must be in (0, 1]"));
    }
    Ok((-t * alpha * alpha * (1.0 - theta.cos())).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig3,
    Fig6,
}

impl std::str::FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fig3" => Ok(Figure::Fig3),
            "fig6" => Ok(Figure::Fig6),
            other => Err(format!("unknown figure `{other}`")),
        }
    }
}

pub const CURVE_CAPACITY: &str = "a_capacity";
pub const CURVE_ED_MAX: &str = "b_ed_max";
pub const CURVE_PS_994: &str = "c_ps_f0.994";
pub const CURVE_PS_998: &str = "d_ps_f0.998";
pub const CURVE_DIRECT: &str = "e_direct_capacity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub curve: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn value(&self, curve: &str, t: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.curve == curve && r.t == t)
            .map(|r| r.value)
    }

    pub fn curve(&self, curve: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.curve == curve)
            .map(|r| (r.t, r.value))
            .collect()
    }
}

/// `n` log-spaced points in `[min, max]`.
pub fn log_grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        max
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub fn default_t_grid() -> Vec<f64> {
    log_grid(0.01, 0.99, 200)
}

fn rows_at(which: Figure, t: f64) -> Result<Vec<CurveRow>> {
    let channel = match which {
        Figure::Fig3 => ChannelSpec::point_to_point(t)?,
        Figure::Fig6 => ChannelSpec::three_party_symmetric(t)?,
    };
    let g = loss_exponent(&channel)?;
    let mut rows = vec![
        (CURVE_CAPACITY, capacity(&channel)?),
        (CURVE_ED_MAX, ed_max(&channel)?),
        (CURVE_PS_994, success_at_fidelity(0.994, g)?),
        (CURVE_PS_998, success_at_fidelity(0.998, g)?),
    ];
    if which == Figure::Fig6 {
        rows.push((CURVE_DIRECT, capacity(&ChannelSpec::point_to_point(t)?)?));
    }
    Ok(rows
        .into_iter()
        .map(|(curve, value)| CurveRow {
            t,
            curve: curve.to_string(),
            value,
        })
        .collect())
}

fn assemble(mut rows: Vec<CurveRow>) -> CurveTable {
    rows.sort_by(|a, b| a.curve.cmp(&b.curve).then(a.t.total_cmp(&b.t)));
    CurveTable { rows }
}

pub fn figure_curves(which: Figure, t_grid: &[f64]) -> Result<CurveTable> {
    let mut rows = Vec::with_capacity(t_grid.len() * 5);
    for &t in t_grid {
        rows.extend(rows_at(which, t)?);
    }
    Ok(assemble(rows))
}

/// Same table as [`figure_curves`], with grid points spread over `jobs`
/// worker threads. The output does not depend on `jobs`.
pub fn figure_curves_parallel(which: Figure, t_grid: &[f64], jobs: usize) -> Result<CurveTable> {
    if jobs <= 1 {
        return figure_curves(which, t_grid);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Subsystem(e.to_string()))?;
    let per_point: Vec<Result<Vec<CurveRow>>> =
        pool.install(|| t_grid.par_iter().map(|&t| rows_at(which, t)).collect());
    let mut rows = Vec::with_capacity(t_grid.len() * 5);
    for r in per_point {
        rows.extend(r?);
    }
    Ok(assemble(rows))
}
