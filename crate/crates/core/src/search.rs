//! Random-restart search over separable point-to-point protocols, used as
//! an independent check of the analytic yield bound.
//!
//! A protocol is described by the prior `q0` and, for each success outcome,
//! the magnitudes `m^j` (acting on qubit A) and `n^j` (acting on the
//! received mode, in the dual basis). Only magnitudes matter for the
//! outcome statistics and for feasibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_open, Error, Result};
use crate::yields::YieldFunction;

/// Slack on the feasibility products and on the bound certificate.
pub const FEAS_TOL: f64 = 1e-12;
pub const BOUND_TOL: f64 = 1e-9;

const Q_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableOutcome {
    pub m0: f64,
    pub m1: f64,
    pub n0: f64,
    pub n1: f64,
    /// Which of the two success families the outcome belongs to. It relabels
    /// the output by `X⊗X` and does not change any statistic.
    pub flip: bool,
}

impl SeparableOutcome {
    pub fn new(m0: f64, m1: f64, n0: f64, n1: f64) -> Self {
        Self {
            m0,
            m1,
            n0,
            n1,
            flip: false,
        }
    }

    fn valid(&self) -> bool {
        [self.m0, self.m1, self.n0, self.n1]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableProtocol {
    pub q0: f64,
    pub outcomes: Vec<SeparableOutcome>,
    /// Received overlap `s = |<u1|u0>|`.
    pub s: f64,
    /// Environment overlap `v = |<v1|v0>|`.
    pub v: f64,
}

/// `(p, z', x)` of one outcome.
pub fn outcome_stats(q0: f64, o: &SeparableOutcome) -> Result<(f64, f64, f64)> {
    check_open("q0", q0, 0.0, 1.0)?;
    if !o.valid() {
        return Err(Error::param("magnitude", f64::NAN, "must be finite and >= 0"));
    }
    let (a, b) = (o.m0 * o.n0, o.m1 * o.n1);
    let p = q0 * a * a + (1.0 - q0) * b * b;
    if !(p > 0.0) {
        return Err(Error::DegenerateOutcome);
    }
    let z_prime = (2.0 * (q0 * (1.0 - q0)).sqrt() * a * b / p).min(1.0);
    Ok((p, z_prime, (1.0 - z_prime * z_prime).max(0.0).sqrt()))
}

/// `(sum_k (m^i_k n^0_k)^2, sum_k (m^i_k n^1_k)^2)` for `i = 0, 1`.
fn constraint_sums(outcomes: &[SeparableOutcome]) -> [(f64, f64); 2] {
    outcomes.iter().fold([(0.0, 0.0); 2], |acc, o| {
        let sq = |m: f64, n: f64| (m * n) * (m * n);
        [
            (acc[0].0 + sq(o.m0, o.n0), acc[0].1 + sq(o.m0, o.n1)),
            (acc[1].0 + sq(o.m1, o.n0), acc[1].1 + sq(o.m1, o.n1)),
        ]
    })
}

fn feasible_sums(sums: &[(f64, f64); 2], s: f64) -> bool {
    sums.iter().all(|&(a, b)| {
        a <= 1.0 + FEAS_TOL
            && b <= 1.0 + FEAS_TOL
            && (1.0 - a).max(0.0).sqrt() * (1.0 - b).max(0.0).sqrt() >= s - FEAS_TOL
    })
}

/// Completeness condition for the measurement on the received mode, in
/// product form for each qubit branch.
pub fn feasible(proto: &SeparableProtocol) -> bool {
    proto.outcomes.iter().all(SeparableOutcome::valid)
        && feasible_sums(&constraint_sums(&proto.outcomes), proto.s)
}

fn validate(proto: &SeparableProtocol) -> Result<()> {
    check_open("q0", proto.q0, 0.0, 1.0)?;
    check_open("s", proto.s, 0.0, 1.0)?;
    if !(proto.v > 0.0 && proto.v <= 1.0) {
        return Err(Error::param("v", proto.v, "must be in (0, 1]"));
    }
    Ok(())
}

/// `sum_k p_k Y(v z'_k, sqrt(1 - z'_k^2))`.
pub fn protocol_yield<Y: YieldFunction + ?Sized>(proto: &SeparableProtocol, y: &Y) -> Result<f64> {
    validate(proto)?;
    if !feasible(proto) {
        return Err(Error::InfeasibleProtocol);
    }
    proto.outcomes.iter().try_fold(0.0, |acc, o| {
        let (p, zp, x) = outcome_stats(proto.q0, o)?;
        Ok(acc + p * y.eval(proto.v * zp, x))
    })
}

/// `sum_k p_k z'_k`.
pub fn coherence_sum(proto: &SeparableProtocol) -> Result<f64> {
    proto.outcomes.iter().try_fold(0.0, |acc, o| {
        let (p, zp, _) = outcome_stats(proto.q0, o)?;
        Ok(acc + p * zp)
    })
}

/// Largest `w` such that scaling every `n` by `sqrt(w)` stays feasible.
/// Each branch gives `(1 - wA)(1 - wB) = s^2`; the smaller root applies.
fn boundary_scale(sums: &[(f64, f64); 2], s: f64) -> f64 {
    let c = 1.0 - s * s;
    sums.iter()
        .map(|&(a, b)| {
            if a + b == 0.0 {
                f64::INFINITY
            } else if a * b == 0.0 {
                c / (a + b)
            } else {
                let disc = ((a - b) * (a - b) + 4.0 * a * b * s * s).sqrt();
                // Smaller root 2c / (a + b + disc), written without cancellation.
                2.0 * c / (a + b + disc)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Rescales all `n` magnitudes so the protocol sits on the feasibility
/// boundary. Yields are linear in that scale, so optima live there.
pub fn project_to_boundary(outcomes: &mut [SeparableOutcome], s: f64) {
    let w = boundary_scale(&constraint_sums(outcomes), s);
    if !w.is_finite() {
        return;
    }
    let t = w.sqrt();
    for o in outcomes.iter_mut() {
        o.n0 *= t;
        o.n1 *= t;
    }
}

/// Global cap on coordinate steps: `initial * decay^(iteration / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 0.25,
            decay: 0.5,
            every: 400,
        }
    }
}

impl StepSchedule {
    pub fn cap(&self, iteration: usize) -> f64 {
        self.initial * self.decay.powi((iteration / self.every.max(1)) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub outcomes: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            outcomes: 4,
            restarts: 64,
            iterations: 2000,
            seed: 0,
            schedule: StepSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub best_protocol: SeparableProtocol,
    pub best_yield: f64,
    pub bound: f64,
    pub gap: f64,
    /// Best yield of each restart, in restart order.
    pub restart_yields: Vec<f64>,
    pub evaluations: u64,
    /// Largest `sum_k p_k z'_k - (1 - s)` over every evaluated protocol.
    pub max_chain_excess: f64,
}

struct Evaluator<'a, Y: ?Sized> {
    y: &'a Y,
    s: f64,
    v: f64,
    evaluations: u64,
    max_chain_excess: f64,
}

impl<Y: YieldFunction + ?Sized> Evaluator<'_, Y> {
    /// Projects `x` onto the boundary in place and returns its yield.
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        let q0 = x[0];
        let mut outs = unpack(x);
        project_to_boundary(&mut outs, self.s);
        pack_n(&outs, x);
        self.evaluations += 1;
        let (mut total, mut chain) = (0.0, 0.0);
        for o in &outs {
            let Ok((p, zp, xx)) = outcome_stats(q0, o) else {
                continue;
            };
            chain += p * zp;
            total += p * self.y.eval(self.v * zp, xx);
        }
        self.max_chain_excess = self.max_chain_excess.max(chain - (1.0 - self.s));
        total
    }
}

fn unpack(x: &[f64]) -> Vec<SeparableOutcome> {
    x[1..]
        .chunks_exact(4)
        .map(|c| SeparableOutcome::new(c[0], c[1], c[2], c[3]))
        .collect()
}

fn pack_n(outs: &[SeparableOutcome], x: &mut [f64]) {
    for (k, o) in outs.iter().enumerate() {
        x[1 + 4 * k + 2] = o.n0;
        x[1 + 4 * k + 3] = o.n1;
    }
}

fn clamp_coord(i: usize, v: f64) -> f64 {
    if i == 0 {
        v.clamp(Q_MARGIN, 1.0 - Q_MARGIN)
    } else if (i - 1) % 4 < 2 {
        v.clamp(0.0, 1.0)
    } else {
        v.max(0.0)
    }
}

struct RestartOutcome {
    x: Vec<f64>,
    value: f64,
    evaluations: u64,
    max_chain_excess: f64,
}

fn run_restart<Y: YieldFunction + ?Sized>(y: &Y, s: f64, v: f64, cfg: &SearchConfig, index: usize) -> RestartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let mut ev = Evaluator {
        y,
        s,
        v,
        evaluations: 0,
        max_chain_excess: f64::NEG_INFINITY,
    };
    let dim = 1 + 4 * cfg.outcomes;
    let mut x: Vec<f64> = (0..dim)
        .map(|i| clamp_coord(i, rng.gen_range(0.0..1.0)))
        .collect();
    let mut best = ev.eval(&mut x);
    let mut steps = vec![cfg.schedule.initial; dim];
    let mut trial = x.clone();

    let mut base = x.clone();
    for it in 0..cfg.iterations {
        let cap = cfg.schedule.cap(it);
        base.copy_from_slice(&x);
        let before = best;
        for i in 0..dim {
            steps[i] = steps[i].min(cap).max(1e-15);
            let first = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut improved = false;
            for dir in [first, -first] {
                trial.copy_from_slice(&x);
                trial[i] = clamp_coord(i, x[i] + dir * steps[i]);
                let val = ev.eval(&mut trial);
                if val > best {
                    best = val;
                    x.copy_from_slice(&trial);
                    improved = true;
                    break;
                }
            }
            steps[i] *= if improved { 1.5 } else { 0.5 };
        }
        // Pattern move: keep extrapolating along the sweep's net displacement.
        if best > before {
            let mut stride = 1.0;
            loop {
                for i in 0..dim {
                    trial[i] = clamp_coord(i, x[i] + stride * (x[i] - base[i]));
                }
                let val = ev.eval(&mut trial);
                if val <= best {
                    break;
                }
                best = val;
                x.copy_from_slice(&trial);
                stride *= 2.0;
            }
        }
    }
    RestartOutcome {
        x,
        value: best,
        evaluations: ev.evaluations,
        max_chain_excess: ev.max_chain_excess,
    }
}

/// Searches separable protocols for the largest average yield and checks
/// it against `Y(v, 0)(1 - s)`.
pub fn search<Y: YieldFunction + ?Sized>(y: &Y, s: f64, v: f64, cfg: &SearchConfig) -> Result<SearchResult> {
    check_open("s", s, 0.0, 1.0)?;
    check_open("v", v, 0.0, 1.0)?;
    if cfg.outcomes == 0 || cfg.restarts == 0 {
        return Err(Error::param("outcomes/restarts", 0.0, "must be >= 1"));
    }
    if !(cfg.schedule.initial > 0.0 && cfg.schedule.decay > 0.0 && cfg.schedule.decay <= 1.0) {
        return Err(Error::param("schedule", cfg.schedule.decay, "needs initial > 0 and decay in (0, 1]"));
    }
    let runs: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(y, s, v, cfg, r))
        .collect();

    let mut best_idx = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.value > runs[best_idx].value {
            best_idx = i;
        }
    }
    let best = &runs[best_idx];
    let bound = y.eval(v, 0.0) * (1.0 - s);
    let best_protocol = SeparableProtocol {
        q0: best.x[0],
        outcomes: unpack(&best.x),
        s,
        v,
    };
    if best.value > bound + BOUND_TOL {
        return Err(Error::BoundViolated {
            found: best.value,
            bound,
        });
    }
    Ok(SearchResult {
        best_protocol,
        best_yield: best.value,
        bound,
        gap: bound - best.value,
        restart_yields: runs.iter().map(|r| r.value).collect(),
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        max_chain_excess: runs
            .iter()
            .map(|r| r.max_chain_excess)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// The single-outcome protocol that attains the bound.
pub fn saturating_protocol(s: f64, v: f64) -> SeparableProtocol {
    let n = (1.0 - s).sqrt();
    SeparableProtocol {
        q0: 0.5,
        outcomes: vec![SeparableOutcome::new(1.0, 1.0, n, n)],
        s,
        v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{loss_exponent, optimum, ChannelSpec};
    use crate::yields::{ConvexProfile, DistillableEntanglement, SingletFractionYield};
    use proptest::prelude::{prop_assert, proptest};

    fn linear() -> SingletFractionYield {
        SingletFractionYield(ConvexProfile::linear(1.0).unwrap())
    }

    fn random_protocol(rng: &mut ChaCha8Rng, k: usize) -> SeparableProtocol {
        let s = rng.gen_range(0.01..0.99);
        let mut outcomes: Vec<SeparableOutcome> = (0..k)
            .map(|_| {
                SeparableOutcome::new(
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        // Anywhere between the origin and the boundary.
        project_to_boundary(&mut outcomes, s);
        let shrink = rng.gen_range(0.0..=1.0f64).sqrt();
        for o in &mut outcomes {
            o.n0 *= shrink;
            o.n1 *= shrink;
        }
        SeparableProtocol {
            q0: rng.gen_range(0.01..0.99),
            outcomes,
            s,
            v: rng.gen_range(0.01..=1.0),
        }
    }

    #[test]
    fn outcome_stats_examples() {
        let h = 0.5f64.sqrt();
        let (p, zp, x) = outcome_stats(0.5, &SeparableOutcome::new(1.0, 1.0, h, h)).unwrap();
        assert!((p - 0.5).abs() < 1e-15 && (zp - 1.0).abs() < 1e-15 && x == 0.0);
        let (p, zp, _) = outcome_stats(0.3, &SeparableOutcome::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        assert!((zp - 0.916515138991168).abs() <= 1e-9);
        assert!(matches!(
            outcome_stats(0.5, &SeparableOutcome::new(0.0, 0.0, 1.0, 1.0)),
            Err(Error::DegenerateOutcome)
        ));
        assert!(outcome_stats(0.0, &SeparableOutcome::new(1.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let h = 0.5f64.sqrt();
        let mut p = SeparableProtocol {
            q0: 0.5,
            outcomes: vec![SeparableOutcome::new(1.0, 1.0, h, h)],
            s: 0.5,
            v: 0.5,
        };
        assert!(feasible(&p));
        p.s = 0.6;
        assert!(!feasible(&p));
        p.outcomes.clear();
        assert!(feasible(&p));
    }

    #[test]
    fn yield_examples() {
        let p = saturating_protocol(0.5, 0.5);
        let y = linear();
        assert!((protocol_yield(&p, &y).unwrap() - 0.25).abs() < 1e-15);
        assert!((protocol_yield(&p, &y).unwrap() - y.eval(0.5, 0.0) * 0.5).abs() < 1e-15);

        // Two copies, each carrying half the probability, give the same total.
        let half = SeparableOutcome::new(1.0, 1.0, 0.5, 0.5);
        let split = SeparableProtocol {
            outcomes: vec![half, half],
            ..saturating_protocol(0.5, 0.5)
        };
        assert!((protocol_yield(&split, &y).unwrap() - 0.25).abs() < 1e-15);

        let mut bad = saturating_protocol(0.5, 0.5);
        bad.s = 0.7;
        assert!(matches!(protocol_yield(&bad, &y), Err(Error::InfeasibleProtocol)));
    }

    #[test]
    fn saturating_protocol_is_tight() {
        for s in [0.05, 0.3, 0.5, 0.9] {
            let p = saturating_protocol(s, 0.7);
            assert!(feasible(&p));
            let sums = constraint_sums(&p.outcomes);
            for (a, b) in sums {
                assert!(((1.0 - a).sqrt() * (1.0 - b).sqrt() - s).abs() < 1e-12);
            }
            assert!((coherence_sum(&p).unwrap() - (1.0 - s)).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_projection_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let mut p = random_protocol(&mut rng, 3);
            project_to_boundary(&mut p.outcomes, p.s);
            assert!(feasible(&p));
            let sums = constraint_sums(&p.outcomes);
            let tight = sums
                .iter()
                .map(|&(a, b)| (1.0 - a).max(0.0).sqrt() * (1.0 - b).max(0.0).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((tight - p.s).abs() < 1e-9, "{tight} vs {}", p.s);
        }
    }

    #[test]
    fn chain_and_bound_on_random_protocols() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ed = DistillableEntanglement;
        for _ in 0..5000 {
            let k = 1 + rng.gen_range(0..5);
            let p = random_protocol(&mut rng, k);
            assert!(feasible(&p));
            let chain = coherence_sum(&p).unwrap_or(0.0);
            assert!(chain <= 1.0 - p.s + 1e-9);
            for o in &p.outcomes {
                let lhs = (o.m0 * o.n0 * o.m1 * o.n1).abs();
                let rhs = 0.25 * [o.m0 * o.n0, o.m0 * o.n1, o.m1 * o.n0, o.m1 * o.n1]
                    .iter()
                    .map(|t| t * t)
                    .sum::<f64>();
                assert!(lhs <= rhs + 1e-15);
            }
            if p.outcomes.iter().all(|o| outcome_stats(p.q0, o).is_ok()) {
                let bound = ed.eval(p.v, 0.0) * (1.0 - p.s);
                assert!(protocol_yield(&p, &ed).unwrap() <= bound + 1e-9);
            }
        }
    }

    fn quick(seed: u64) -> SearchConfig {
        SearchConfig {
            restarts: 8,
            iterations: 600,
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn search_linear_reaches_optimum() {
        let r = search(&linear(), 0.5, 0.5, &SearchConfig::default()).unwrap();
        assert!((r.best_yield - 0.25).abs() <= 1e-6, "{}", r.best_yield);
        assert!(r.gap <= 1e-6 && r.gap >= -1e-9);
        assert!(r.max_chain_excess <= 1e-9);
    }

    #[test]
    fn search_ed_matches_analytic_optimum() {
        let t = 0.5;
        let g = loss_exponent(&ChannelSpec::point_to_point(t).unwrap()).unwrap();
        let ed = DistillableEntanglement;
        let opt = optimum(&ed, g);
        let s = opt.u_star;
        let v = s.powf((1.0 - t) / t);
        let r = search(&ed, s, v, &quick(5)).unwrap();
        assert!((r.best_yield - opt.value).abs() <= 1e-3, "{} vs {}", r.best_yield, opt.value);
        assert!(r.best_yield <= r.bound + 1e-9);
    }

    #[test]
    fn search_is_deterministic_and_zero_iterations_ok() {
        let y = DistillableEntanglement;
        let a = search(&y, 0.4, 0.6, &quick(17)).unwrap();
        let b = search(&y, 0.4, 0.6, &quick(17)).unwrap();
        assert_eq!(a, b);
        let c = search(&y, 0.4, 0.6, &SearchConfig { iterations: 0, ..quick(17) }).unwrap();
        assert!(c.best_yield <= c.bound + 1e-9);
        assert!(search(&y, 0.0, 0.5, &quick(1)).is_err());
    }

    #[test]
    fn search_reports_violation_for_inconsistent_yield() {
        // Rewarding x breaks the contract, and the search notices.
        let y = crate::yields::FnYield::new("z+x", |z: f64, x: f64| z + x);
        let r = search(&y, 0.5, 0.25, &quick(3));
        assert!(matches!(r, Err(Error::BoundViolated { .. })), "{r:?}");
    }

    proptest! {
        #[test]
        fn projection_preserves_coherence_ratio(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_protocol(&mut rng, 2);
            let mut q = p.clone();
            project_to_boundary(&mut q.outcomes, q.s);
            for (a, b) in p.outcomes.iter().zip(&q.outcomes) {
                if let (Ok(x), Ok(y)) = (outcome_stats(p.q0, a), outcome_stats(q.q0, b)) {
                    prop_assert!((x.1 - y.1).abs() < 1e-9);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn chain_and_bound_hold(seed in 0u64..100_000, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_protocol(&mut rng, k);
            prop_assert!(feasible(&p));
            if let Ok(sum) = coherence_sum(&p) {
                prop_assert!(sum <= 1.0 - p.s + 1e-9);
                let bound_ed = DistillableEntanglement.eval(p.v, 0.0) * (1.0 - p.s);
                prop_assert!(protocol_yield(&p, &DistillableEntanglement).unwrap() <= bound_ed + 1e-9);
                let bound_lin = linear().eval(p.v, 0.0) * (1.0 - p.s);
                prop_assert!(protocol_yield(&p, &linear()).unwrap() <= bound_lin + 1e-9);
            }
        }

        #[test]
        fn am_gm_step(m0 in 0.0f64..1.0, m1 in 0.0f64..1.0, n0 in 0.0f64..1.0, n1 in 0.0f64..1.0) {
            let lhs = (m0 * n0 * m1 * n1).abs();
            let rhs = [m0 * n0, m0 * n1, m1 * n0, m1 * n1].iter().map(|t| t * t).sum::<f64>() / 4.0;
            prop_assert!(lhs <= rhs + 1e-15);
        }
    }
}
