//! End-to-end simulation of the point-to-point and three-party protocols.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use num_complex::Complex64;
use serde::Serialize;

use super::measure::{build_claire_measurement, build_p2p_measurement, MeasurementSet, OutcomeOp};
use super::{apply_loss, coherent, conditional_rotation, FockVector, JointState, SparseMap, Subsystem};
use crate::error::{check_open, Error, Result};
use crate::state::{
    classify, phase_flip_channel, singlet_fraction, to_standard_form, SingleErrorState,
    TwoQubitDensityMatrix,
};
use crate::yields::YieldFunction;

/// Tolerance for the `|01>,|10>` mass of a measured output.
const CLASSIFY_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Parameters of one qubit-pulse arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmParams {
    pub q0: f64,
    /// Qubit phases `(Theta_0, Theta_1)`.
    pub phases: (f64, f64),
    pub alpha: f64,
    pub theta: f64,
    pub t: f64,
    pub dim: usize,
}

impl ArmParams {
    /// Balanced arm (`q0 = 1/2`, zero phases).
    pub fn balanced(alpha: f64, theta: f64, t: f64, dim: usize) -> Self {
        Self {
            q0: 0.5,
            phases: (0.0, 0.0),
            alpha,
            theta,
            t,
            dim,
        }
    }

    /// Balanced arm with `theta = pi` whose received overlap equals `u`.
    pub fn for_overlap(u: f64, t: f64, dim: usize) -> Result<Self> {
        check_open("u", u, 0.0, 1.0)?;
        check_open("T", t, 0.0, 1.0)?;
        let alpha = (-u.ln() / (2.0 * t)).sqrt();
        Ok(Self::balanced(alpha, std::f64::consts::PI, t, dim))
    }

    pub fn with_dim(self, dim: usize) -> Self {
        Self { dim, ..self }
    }

    fn validate(&self) -> Result<()> {
        check_open("q0", self.q0, 0.0, 1.0)?;
        check_open("T", self.t, 0.0, 1.0)?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", self.alpha, "must be >= 0"));
        }
        for (name, v) in [("theta", self.theta), ("Theta0", self.phases.0), ("Theta1", self.phases.1)] {
            if !v.is_finite() {
                return Err(Error::param(name, v, "must be finite"));
            }
        }
        if self.dim == 0 {
            return Err(Error::param("dim", 0.0, "must be > 0"));
        }
        Ok(())
    }

    fn weights(&self) -> [Complex64; 2] {
        [
            Complex64::from_polar(self.q0.sqrt(), self.phases.0),
            Complex64::from_polar((1.0 - self.q0).sqrt(), self.phases.1),
        ]
    }

    fn branch(&self, scale: f64, j: usize) -> Result<FockVector> {
        let sign = if j == 0 { 1.0 } else { -1.0 };
        coherent(
            Complex64::from_polar(scale * self.alpha, sign * self.theta / 2.0),
            self.dim,
        )
    }

    /// Received branches `u_j = |sqrt(T) alpha_j>`.
    pub fn received(&self) -> Result<(FockVector, FockVector)> {
        self.validate()?;
        let s = self.t.sqrt();
        Ok((self.branch(s, 0)?, self.branch(s, 1)?))
    }

    /// Environment branches `v_j = |sqrt(1-T) alpha_j>`.
    pub fn environment(&self) -> Result<(FockVector, FockVector)> {
        self.validate()?;
        let s = (1.0 - self.t).sqrt();
        Ok((self.branch(s, 0)?, self.branch(s, 1)?))
    }
}

/// `<u1|u0>` for the received branches.
pub fn received_overlap(p: &ArmParams) -> Result<Complex64> {
    let (u0, u1) = p.received()?;
    Ok(u1.inner(&u0))
}

fn environment_overlap(p: &ArmParams) -> Result<Complex64> {
    let (v0, v1) = p.environment()?;
    Ok(v1.inner(&v0))
}

fn build_arm(p: &ArmParams, qubit: &str, mode: &str, env: &str) -> Result<JointState> {
    p.validate()?;
    let w = p.weights();
    let st = JointState::product(vec![
        (Subsystem::new(qubit, 2), DVector::from_vec(w.to_vec())),
        (
            Subsystem::new(mode, p.dim),
            coherent(Complex64::new(p.alpha, 0.0), p.dim)?.amplitudes,
        ),
    ])?;
    let v = conditional_rotation(p.theta, p.dim)?;
    let st = st.apply(
        &[qubit, mode],
        &SparseMap::from_dense(&v.matrix),
        vec![Subsystem::new(qubit, 2), Subsystem::new(mode, p.dim)],
    )?;
    apply_loss(&st, mode, env, p.t)
}

/// `sum_j sqrt(q_j) e^{i Theta_j} |j>_A |u_j>_b |v_j>_E`.
pub fn build_p2p_state(p: &ArmParams) -> Result<JointState> {
    build_arm(p, "A", "b", "E")
}

/// Environment-free state `sum_j sqrt(q_j) e^{i Theta_j + i(-1)^j phi} |j>|u_j>`
/// on qubit ⊗ mode (qubit leading), with `2 phi = arg <v1|v0>`.
fn primed_state(p: &ArmParams) -> Result<DVector<Complex64>> {
    let phi = environment_overlap(p)?.arg() / 2.0;
    let (u0, u1) = p.received()?;
    let w = p.weights();
    let mut out = DVector::zeros(2 * p.dim);
    out.rows_mut(0, p.dim)
        .copy_from(&(&u0.amplitudes * (w[0] * Complex64::from_polar(1.0, phi))));
    out.rows_mut(p.dim, p.dim)
        .copy_from(&(&u1.amplitudes * (w[1] * Complex64::from_polar(1.0, -phi))));
    Ok(out)
}

/// `(1+v)/2 rho + (1-v)/2 Z rho Z` with `Z` on the leading qubit of `rho`.
fn dephase_leading(rho: &DMatrix<Complex64>, v: f64) -> DMatrix<Complex64> {
    let half = rho.nrows() / 2;
    DMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| {
        let same = (i < half) == (j < half);
        if same {
            rho[(i, j)]
        } else {
            rho[(i, j)] * v
        }
    })
}

fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let d = a - b;
    0.5 * d.symmetric_eigenvalues().iter().map(|e| e.abs()).sum::<f64>()
}

/// Trace distance between `Tr_E |psi><psi|` and the dephased environment-free
/// state `Lambda_v(|psi'><psi'|)`, `v = |<v1|v0>|`.
pub fn dephasing_equivalence_check(p: &ArmParams) -> Result<f64> {
    let reduced = build_p2p_state(p)?.partial_trace(&["A", "b"])?.density();
    let v = environment_overlap(p)?.norm();
    let psi = primed_state(p)?;
    let model = dephase_leading(&(&psi * psi.adjoint()), v);
    Ok(trace_distance(&reduced, &model))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    pub label: String,
    pub p: f64,
    pub state: SingleErrorState,
    /// Coherence before the environment dephases qubit A.
    pub z_prime: f64,
    pub z: f64,
    pub x: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub outcomes: Vec<OutcomeReport>,
    pub success_probability: f64,
    /// Probability-weighted singlet fraction over the success outcomes.
    pub fidelity: f64,
    /// Received overlap `u` (largest over arms).
    pub overlap: f64,
    /// Product of the environment overlaps `|<v1|v0>|`.
    pub dephasing: f64,
    /// `1 - u` and `(1 + prod_arm v)/2`, the balanced-prior predictions.
    pub expected_success: f64,
    pub expected_fidelity: f64,
    pub delta_success: f64,
    pub delta_fidelity: f64,
    pub completeness: f64,
}

impl SimulationReport {
    fn assemble(outcomes: Vec<OutcomeReport>, overlap: f64, dephasing: f64, completeness: f64) -> Self {
        let ps: f64 = outcomes.iter().map(|o| o.p).sum();
        let fidelity = if ps > 0.0 {
            outcomes.iter().map(|o| o.p * o.fidelity).sum::<f64>() / ps
        } else {
            0.0
        };
        let expected_success = 1.0 - overlap;
        let expected_fidelity = (1.0 + dephasing) / 2.0;
        Self {
            outcomes,
            success_probability: ps,
            fidelity,
            overlap,
            dephasing,
            expected_success,
            expected_fidelity,
            delta_success: ps - expected_success,
            delta_fidelity: fidelity - expected_fidelity,
            completeness,
        }
    }

    /// `sum_k p_k Y(z_k, x_k)`.
    pub fn average_yield<Y: YieldFunction + ?Sized>(&self, y: &Y) -> f64 {
        self.outcomes.iter().map(|o| o.p * y.eval(o.z, o.x)).sum()
    }
}

fn normalize4(rho: &Matrix4<Complex64>) -> Option<(f64, Matrix4<Complex64>)> {
    let p = rho.trace().re;
    if p <= 0.0 {
        return None;
    }
    let m = rho / Complex64::from(p);
    Some((p, (m + m.adjoint()) * Complex64::from(0.5)))
}

fn classify_output(rho: &Matrix4<Complex64>) -> Result<(f64, SingleErrorState, f64, f64)> {
    let (p, m) = normalize4(rho).ok_or(Error::DegenerateOutcome)?;
    let state = classify(&TwoQubitDensityMatrix::new(m)?, CLASSIFY_TOL)?;
    let (sf, _) = to_standard_form(&state)?;
    Ok((p, state, sf.z, sf.x))
}

fn z_prime_of(rho: &Matrix4<Complex64>) -> Result<f64> {
    let (_, m) = normalize4(rho).ok_or(Error::DegenerateOutcome)?;
    let state = classify(&TwoQubitDensityMatrix::new(m)?, CLASSIFY_TOL)?;
    Ok(to_standard_form(&state)?.0.z)
}

fn to_matrix4(m: &DMatrix<Complex64>) -> Matrix4<Complex64> {
    Matrix4::from_iterator(m.iter().cloned())
}

fn flip_b(rho: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let perm = [1, 0, 3, 2];
    Matrix4::from_fn(|i, j| rho[(perm[i], perm[j])])
}

/// Where to apply an extra phase flip on qubit A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DephaseStage {
    None,
    BeforeMeasurement(f64),
    AfterMeasurement(f64),
}

pub fn simulate_p2p(p: &ArmParams) -> Result<SimulationReport> {
    simulate_p2p_with(p, DephaseStage::None)
}

/// Unnormalized `rho_AB` after applying `n` to mode b and tracing E.
fn measured_p2p(st: &JointState, n: &SparseMap) -> Result<Matrix4<Complex64>> {
    let out = st.apply(&["b"], n, vec![Subsystem::new("B", 2)])?;
    Ok(to_matrix4(&out.partial_trace(&["A", "B"])?.density()))
}

fn z_on_leading(st: &JointState) -> Result<JointState> {
    let z = DMatrix::from_diagonal(&DVector::from_vec(vec![
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
    ]));
    st.apply(&["A"], &SparseMap::from_dense(&z), vec![Subsystem::new("A", 2)])
}

pub fn simulate_p2p_with(p: &ArmParams, stage: DephaseStage) -> Result<SimulationReport> {
    let st = build_p2p_state(p)?;
    let (u0, u1) = p.received()?;
    let m: MeasurementSet = build_p2p_measurement(&u0, &u1)?;
    let v = environment_overlap(p)?.norm();
    let primed = primed_state(p)?;

    let mut outcomes = Vec::with_capacity(m.outcomes.len());
    for o in &m.outcomes {
        let OutcomeOp::ModeToQubit(n) = &o.op else {
            unreachable!("point-to-point outcomes act on one mode")
        };
        let sparse = SparseMap::from_dense(n);
        let rho = match stage {
            DephaseStage::None => measured_p2p(&st, &sparse)?,
            DephaseStage::BeforeMeasurement(w) => {
                let a = measured_p2p(&st, &sparse)?;
                let b = measured_p2p(&z_on_leading(&st)?, &sparse)?;
                a * Complex64::from((1.0 + w) / 2.0) + b * Complex64::from((1.0 - w) / 2.0)
            }
            DephaseStage::AfterMeasurement(w) => {
                phase_flip_channel(&measured_p2p(&st, &sparse)?, w)
            }
        };
        let (prob, state, z, x) = classify_output(&rho)?;

        // Same outcome on the environment-free state.
        let mut ket = DVector::zeros(4);
        for a in 0..2 {
            let branch = n * primed.rows(a * p.dim, p.dim);
            ket[2 * a] = branch[0];
            ket[2 * a + 1] = branch[1];
        }
        let z_prime = z_prime_of(&to_matrix4(&(&ket * ket.adjoint())))?;

        outcomes.push(OutcomeReport {
            label: o.label.clone(),
            p: prob,
            state,
            z_prime,
            z,
            x,
            fidelity: singlet_fraction(&crate::state::StandardFormState { z, x }),
        });
    }
    let u = u1.inner(&u0).norm();
    Ok(SimulationReport::assemble(outcomes, u, v, m.completeness_max_eigenvalue()))
}

/// The two arms of the three-party protocol, kept as separate factors.
#[derive(Debug, Clone)]
pub struct ThreePartyState {
    /// Qubit `A`, mode `ca`, environment `Ea`.
    pub arm_a: JointState,
    /// Qubit `B`, mode `cb`, environment `Eb`.
    pub arm_b: JointState,
}

impl ThreePartyState {
    pub fn weight(&self) -> f64 {
        self.arm_a.weight() * self.arm_b.weight()
    }
}

pub fn build_three_party_state(pa: &ArmParams, pb: &ArmParams) -> Result<ThreePartyState> {
    Ok(ThreePartyState {
        arm_a: build_arm(pa, "A", "ca", "Ea")?,
        arm_b: build_arm(pb, "B", "cb", "Eb")?,
    })
}

/// `G[i][i'] = Tr_E (W_i W_i'^dag)` where `W_i = <d_i|_mode (arm)`, a 2x2 block
/// on the arm qubit.
fn arm_blocks(arm: &JointState, mode: &str, d: (&FockVector, &FockVector)) -> Result<[[Matrix2<Complex64>; 2]; 2]> {
    let env = arm.labels()[2].to_string();
    let reduced: Vec<DMatrix<Complex64>> = [d.0, d.1]
        .iter()
        .map(|dv| {
            let row = DMatrix::from_fn(1, dv.dim(), |_, m| dv.amplitudes[m].conj());
            let w = arm.apply(&[mode], &SparseMap::from_dense(&row), vec![])?;
            // Reshape to (qubit, env) matrix.
            let env_dim = w.dim_of(&env)?;
            let amps = w.amplitudes().expect("pure");
            Ok(DMatrix::from_fn(2, env_dim, |q, e| amps[q * env_dim + e]))
        })
        .collect::<Result<_>>()?;
    let block = |i: usize, k: usize| {
        let g = &reduced[i] * reduced[k].adjoint();
        Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)])
    };
    Ok([[block(0, 0), block(0, 1)], [block(1, 0), block(1, 1)]])
}

fn primed_blocks(p: &ArmParams, d: (&FockVector, &FockVector)) -> Result<[[Matrix2<Complex64>; 2]; 2]> {
    let psi = primed_state(p)?;
    let w: Vec<nalgebra::Vector2<Complex64>> = [d.0, d.1]
        .iter()
        .map(|dv| {
            nalgebra::Vector2::new(
                dv.amplitudes.dotc(&psi.rows(0, p.dim).into_owned()),
                dv.amplitudes.dotc(&psi.rows(p.dim, p.dim).into_owned()),
            )
        })
        .collect();
    let block = |i: usize, k: usize| w[i] * w[k].adjoint();
    Ok([[block(0, 0), block(0, 1)], [block(1, 0), block(1, 1)]])
}

/// `sum c_ij conj(c_i'j') Ga[i][i'] ⊗ Gb[j][j']`, qubit A leading.
fn functional_output(
    c: &nalgebra::Vector4<Complex64>,
    ga: &[[Matrix2<Complex64>; 2]; 2],
    gb: &[[Matrix2<Complex64>; 2]; 2],
) -> Matrix4<Complex64> {
    let mut rho = Matrix4::from_element(ZERO);
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let w = c[2 * i + j] * c[2 * k + l].conj();
                    if w == ZERO {
                        continue;
                    }
                    let blk = ga[i][k].kronecker(&gb[j][l]);
                    rho += Matrix4::from_iterator(blk.iter().cloned()) * w;
                }
            }
        }
    }
    rho
}

pub fn simulate_three_party(pa: &ArmParams, pb: &ArmParams) -> Result<SimulationReport> {
    let st = build_three_party_state(pa, pb)?;
    let (u0a, u1a) = pa.received()?;
    let (u0b, u1b) = pb.received()?;
    let m = build_claire_measurement(&u0a, &u1a, &u0b, &u1b)?;
    let (da, db) = (&m.duals[0], &m.duals[1]);
    let ga = arm_blocks(&st.arm_a, "ca", (&da.0, &da.1))?;
    let gb = arm_blocks(&st.arm_b, "cb", (&db.0, &db.1))?;
    let ga_p = primed_blocks(pa, (&da.0, &da.1))?;
    let gb_p = primed_blocks(pb, (&db.0, &db.1))?;

    let mut outcomes = Vec::with_capacity(m.outcomes.len());
    for o in &m.outcomes {
        let OutcomeOp::PairFunctional(c) = &o.op else {
            unreachable!("three-party outcomes act on both modes")
        };
        let fix = |r: Matrix4<Complex64>| if o.flip_b { flip_b(&r) } else { r };
        let rho = fix(functional_output(c, &ga, &gb));
        let (prob, state, z, x) = classify_output(&rho)?;
        let z_prime = z_prime_of(&fix(functional_output(c, &ga_p, &gb_p)))?;
        outcomes.push(OutcomeReport {
            label: o.label.clone(),
            p: prob,
            state,
            z_prime,
            z,
            x,
            fidelity: (1.0 + z) / 2.0,
        });
    }
    let v = environment_overlap(pa)?.norm() * environment_overlap(pb)?.norm();
    let u = m.overlaps[0].max(m.overlaps[1]);
    Ok(SimulationReport::assemble(outcomes, u, v, m.completeness_max_eigenvalue()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{objective, optimum, overlap_from_pulse, ChannelSpec, loss_exponent};
    use crate::yields::{ConvexProfile, DistillableEntanglement, SingletFractionYield};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn p2p_state_examples() {
        let p = ArmParams {
            q0: 0.5,
            phases: (0.0, 0.7),
            alpha: 0.0,
            theta: 1.0,
            t: 0.5,
            dim: 8,
        };
        let st = build_p2p_state(&p).unwrap();
        let amps = st.amplitudes().unwrap();
        let s = 0.5f64.sqrt();
        // Only |0>|0>|0> and |1>|0>|0> are populated.
        assert!((amps[0] - Complex64::new(s, 0.0)).norm() < 1e-15);
        assert!((amps[64] - Complex64::from_polar(s, 0.7)).norm() < 1e-15);
        assert!(close(amps.norm_squared(), 1.0, 1e-15));

        let p = ArmParams::balanced(1.3, 2.0, 0.6, 40);
        let st = build_p2p_state(&p).unwrap();
        assert!(close(st.weight(), 1.0, 1e-10));
        assert_eq!(st.labels(), vec!["A", "b", "E"]);
        let u = received_overlap(&p).unwrap().norm();
        assert!(close(u, overlap_from_pulse(1.3, 2.0, 0.6).unwrap(), 1e-10));
        // Overlap of the b-mode branches read off the joint state.
        let rho = st.partial_trace(&["A", "b"]).unwrap().density();
        let d = p.dim;
        let v = environment_overlap(&p).unwrap().norm();
        let cross: Complex64 = (0..d).map(|n| rho[(n, d + n)]).sum();
        assert!(close(cross.norm(), 0.5 * u * v, 1e-10));
        assert!(build_p2p_state(&ArmParams { q0: 1.0, ..p }).is_err());
    }

    #[test]
    fn dephasing_examples() {
        let p = ArmParams::balanced(1.0, PI / 2.0, 0.5, 40);
        assert!(dephasing_equivalence_check(&p).unwrap() <= 1e-9);
        let p0 = ArmParams::balanced(0.0, PI / 2.0, 0.5, 12);
        assert_eq!(dephasing_equivalence_check(&p0).unwrap(), 0.0);
        let p1 = ArmParams::balanced(1.0, 1.0, 1.0 - 1e-9, 40);
        assert!(dephasing_equivalence_check(&p1).unwrap() <= 1e-9);
        assert!(close(environment_overlap(&p1).unwrap().norm(), 1.0, 1e-8));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let p = ArmParams {
                q0: rng.gen_range(0.1..0.9),
                phases: (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                alpha: rng.gen_range(0.1..2.5),
                theta: rng.gen_range(0.1..3.1),
                t: rng.gen_range(0.05..0.95),
                dim: 48,
            };
            assert!(dephasing_equivalence_check(&p).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn p2p_examples() {
        for (u, t, ps, f) in [(0.5, 0.5, 0.5, 0.75), (0.25, 0.5, 0.75, 0.625)] {
            let p = ArmParams::for_overlap(u, t, 48).unwrap();
            let r = simulate_p2p(&p).unwrap();
            assert!(close(r.success_probability, ps, 1e-8), "{r:?}");
            assert!(close(r.fidelity, f, 1e-8));
            assert!(r.delta_success.abs() <= 1e-8 && r.delta_fidelity.abs() <= 1e-8);
        }
        let p = ArmParams {
            q0: 0.3,
            ..ArmParams::for_overlap(0.5, 0.5, 48).unwrap()
        };
        let r = simulate_p2p(&p).unwrap();
        assert!(close(r.success_probability, 0.5, 1e-8));
        let zp = r.outcomes[0].z_prime;
        assert!(close(zp, 2.0 * 0.21f64.sqrt(), 1e-8));
        assert!(zp < 1.0);
    }

    #[test]
    fn report_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..8 {
            let p = ArmParams {
                q0: rng.gen_range(0.1..0.9),
                phases: (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                alpha: rng.gen_range(0.3..2.0),
                theta: rng.gen_range(0.3..3.1),
                t: rng.gen_range(0.1..0.9),
                dim: 40,
            };
            let r = simulate_p2p(&p).unwrap();
            assert!(r.success_probability <= 1.0 + 1e-9);
            assert!(r.completeness <= 1.0 + 1e-9);
            for o in &r.outcomes {
                assert!(close(o.z, r.dephasing * o.z_prime, 1e-8));
                assert!(close(o.x, (1.0 - o.z_prime * o.z_prime).max(0.0).sqrt(), 1e-8));
            }
        }
    }

    #[test]
    fn phase_flip_commutes_with_measurement() {
        let p = ArmParams {
            q0: 0.4,
            phases: (0.3, -1.1),
            alpha: 1.2,
            theta: 1.7,
            t: 0.35,
            dim: 40,
        };
        for w in [0.0, 0.3, 0.9] {
            let a = simulate_p2p_with(&p, DephaseStage::BeforeMeasurement(w)).unwrap();
            let b = simulate_p2p_with(&p, DephaseStage::AfterMeasurement(w)).unwrap();
            for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
                assert!(close(x.p, y.p, 1e-10));
                assert!(close(x.z, y.z, 1e-10));
                assert!(close(x.x, y.x, 1e-10));
                assert!(close(x.state.zeta, y.state.zeta, 1e-10));
                assert!(close(x.state.upsilon, y.state.upsilon, 1e-10));
            }
            assert!(close(a.fidelity, b.fidelity, 1e-10));
        }
    }

    #[test]
    fn three_party_state_examples() {
        let p0 = ArmParams::balanced(0.0, 1.0, 0.5, 6);
        let st = build_three_party_state(&p0, &p0).unwrap();
        assert!(close(st.weight(), 1.0, 1e-15));
        let rho = st.arm_a.partial_trace(&["ca", "Ea"]).unwrap().density();
        assert!(close(rho[(0, 0)].re, 1.0, 1e-15));

        let pa = ArmParams::balanced(1.1, 2.0, 0.4, 40);
        let pb = ArmParams::balanced(0.7, 1.2, 0.8, 40);
        let st = build_three_party_state(&pa, &pb).unwrap();
        assert!(close(st.weight(), 1.0, 1e-10));
        for p in [pa, pb] {
            let u = received_overlap(&p).unwrap().norm();
            assert!(close(u, overlap_from_pulse(p.alpha, p.theta, p.t).unwrap(), 1e-10));
        }
    }

    #[test]
    fn three_party_examples() {
        for (u, ps, f) in [(0.5, 0.5, 0.625), (0.25, 0.75, 0.53125)] {
            let p = ArmParams::for_overlap(u, 0.5, 48).unwrap();
            let r = simulate_three_party(&p, &p).unwrap();
            assert!(close(r.success_probability, ps, 1e-8), "{r:?}");
            assert!(close(r.fidelity, f, 1e-8));
            for o in &r.outcomes {
                assert!(close(o.z_prime, 1.0, 1e-8));
            }
            let s = u;
            let plus = (1.0 - s).powi(2) / 4.0;
            let minus = (1.0 - s * s) / 4.0;
            let got: Vec<f64> = r.outcomes.iter().map(|o| o.p).collect();
            for (g, e) in got.iter().zip([plus, minus, plus, minus]) {
                assert!(close(*g, e, 1e-8), "{got:?}");
            }
        }
    }

    #[test]
    fn three_party_unequal_arms_classify() {
        let pa = ArmParams {
            q0: 0.4,
            phases: (0.2, 0.9),
            alpha: 1.0,
            theta: 2.0,
            t: 0.3,
            dim: 40,
        };
        let pb = ArmParams::balanced(1.4, 1.3, 0.7, 40);
        let r = simulate_three_party(&pa, &pb).unwrap();
        assert!(r.success_probability <= 1.0 + 1e-9);
        assert!(close(r.completeness, 1.0, 1e-9));
        for o in &r.outcomes {
            assert!(close(o.z, r.dephasing * o.z_prime, 1e-8));
        }
    }

    #[test]
    fn simulated_yield_below_bound_and_saturates() {
        let ed = DistillableEntanglement;
        let lin = SingletFractionYield(ConvexProfile::linear(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..6 {
            let t = rng.gen_range(0.2..0.8);
            let u = rng.gen_range(0.1..0.9);
            let q0 = rng.gen_range(0.2..0.8);
            let p = ArmParams {
                q0,
                ..ArmParams::for_overlap(u, t, 48).unwrap()
            };
            let g = loss_exponent(&ChannelSpec::point_to_point(t).unwrap()).unwrap();
            let r = simulate_p2p(&p).unwrap();
            for y in [&ed as &dyn YieldFunction, &lin] {
                let bound = objective(y, g, u).unwrap();
                assert!(r.average_yield(y) <= bound + 1e-8);
                let best = optimum(y, g);
                assert!(r.average_yield(y) <= best.value + 1e-8);
            }
            let balanced = simulate_p2p(&ArmParams { q0: 0.5, ..p }).unwrap();
            assert!(close(balanced.average_yield(&ed), objective(&ed, g, u).unwrap(), 1e-8));
        }
    }

    #[test]
    fn truncation_stable() {
        let p = ArmParams::for_overlap(0.3, 0.4, 48).unwrap();
        let a = simulate_p2p(&p).unwrap();
        let b = simulate_p2p(&p.with_dim(96)).unwrap();
        assert!(close(a.outcomes[0].p, b.outcomes[0].p, 1e-9));
        assert!(close(a.fidelity, b.fidelity, 1e-9));
        let a = simulate_three_party(&p, &p).unwrap();
        let b = simulate_three_party(&p.with_dim(96), &p.with_dim(96)).unwrap();
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert!(close(x.p, y.p, 1e-9));
        }
        assert!(close(a.fidelity, b.fidelity, 1e-9));
    }

    #[test]
    fn simulate_rejects_identical_branches() {
        let p = ArmParams::balanced(0.0, 1.0, 0.5, 10);
        assert!(matches!(simulate_p2p(&p), Err(Error::IllConditioned { .. })));
    }
}
