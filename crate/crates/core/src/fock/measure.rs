//! Dual-basis measurements that discriminate the received coherent states.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use super::FockVector;
use crate::bounds::golden_section_max;
use crate::error::{Error, Result};

/// Overlaps above this are rejected by [`dual_pair`].
pub const MAX_OVERLAP: f64 = 1.0 - 1e-6;

const SCALE_TOL: f64 = 1e-13;

/// Vectors `(d0, d1)` in `span{u0, u1}` with `<d_i|u_j> = delta_ij`.
pub fn dual_pair(u0: &FockVector, u1: &FockVector) -> Result<(FockVector, FockVector)> {
    if u0.dim() != u1.dim() {
        return Err(Error::Subsystem(format!(
            "dual_pair: dims {} and {} differ",
            u0.dim(),
            u1.dim()
        )));
    }
    let (n0, n1) = (u0.norm_sq().sqrt(), u1.norm_sq().sqrt());
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::IllConditioned { overlap: 1.0 });
    }
    let overlap = u1.inner(u0).norm() / (n0 * n1);
    if !(overlap <= MAX_OVERLAP) {
        return Err(Error::IllConditioned { overlap });
    }
    let g = Matrix2::new(u0.inner(u0), u0.inner(u1), u1.inner(u0), u1.inner(u1));
    let ginv = g
        .try_inverse()
        .ok_or(Error::IllConditioned { overlap })?;
    // d_i = sum_k conj(G^-1)_{ik} u_k
    let dual = |i: usize| FockVector {
        amplitudes: &u0.amplitudes * ginv[(i, 0)].conj() + &u1.amplitudes * ginv[(i, 1)].conj(),
    };
    Ok((dual(0), dual(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeOp {
    /// Maps one mode onto a qubit; `2 x dim`, row `i` is `<row_i|`.
    ModeToQubit(DMatrix<Complex64>),
    /// Scalar functional `sum_ij c[2i+j] <d^a_i| ⊗ <d^b_j|` on two modes.
    PairFunctional(Vector4<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub op: OutcomeOp,
    /// Apply X to qubit B after this outcome.
    pub flip_b: bool,
}

/// Successful outcomes of a measurement. Everything else is lumped into a
/// single failure element `sqrt(1 - sum_k E_k)`, whose output is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub outcomes: Vec<Outcome>,
    /// Dual pairs per measured mode.
    pub duals: Vec<(FockVector, FockVector)>,
    /// `|<u1|u0>|` per measured mode.
    pub overlaps: Vec<f64>,
    /// Per-outcome squared scales.
    pub scales: Vec<f64>,
    completeness: f64,
}

impl MeasurementSet {
    /// Largest eigenvalue of `sum_k E_k`; at most 1 for a valid measurement.
    pub fn completeness_max_eigenvalue(&self) -> f64 {
        self.completeness
    }

    pub fn failure_label(&self) -> &'static str {
        "fail"
    }

    /// Full `dim x dim` operator `N^dag N` of a single-mode outcome.
    pub fn effect(&self, k: usize) -> Option<DMatrix<Complex64>> {
        match &self.outcomes.get(k)?.op {
            OutcomeOp::ModeToQubit(n) => Some(n.adjoint() * n),
            OutcomeOp::PairFunctional(_) => None,
        }
    }
}

fn dual_gram(d0: &FockVector, d1: &FockVector) -> Matrix2<Complex64> {
    Matrix2::new(d0.inner(d0), d0.inner(d1), d1.inner(d0), d1.inner(d1))
}

/// Single success outcome `N = sqrt(1-s)(|0><d0| + |1><d1|)`.
pub fn build_p2p_measurement(u0: &FockVector, u1: &FockVector) -> Result<MeasurementSet> {
    let (d0, d1) = dual_pair(u0, u1)?;
    let s = u1.inner(u0).norm();
    let scale = (1.0 - s).sqrt();
    let dim = u0.dim();
    let n = DMatrix::from_fn(2, dim, |i, m| {
        let d = if i == 0 { &d0 } else { &d1 };
        d.amplitudes[m].conj() * scale
    });
    // Non-zero spectrum of N^dag N equals that of N N^dag = (1-s) Gram(duals).
    let completeness = (dual_gram(&d0, &d1) * Complex64::from(1.0 - s))
        .symmetric_eigenvalues()
        .max();
    Ok(MeasurementSet {
        outcomes: vec![Outcome {
            label: "N".into(),
            op: OutcomeOp::ModeToQubit(n),
            flip_b: false,
        }],
        duals: vec![(d0, d1)],
        overlaps: vec![s],
        scales: vec![1.0 - s],
        completeness,
    })
}

/// Index pattern of Claire's four functionals: `(i0 j0, i1 j1, sign)`.
const PATTERNS: [((usize, usize), (usize, usize), f64, bool); 4] = [
    ((0, 0), (1, 1), 1.0, false),
    ((0, 0), (1, 1), -1.0, false),
    ((0, 1), (1, 0), 1.0, true),
    ((0, 1), (1, 0), -1.0, true),
];

fn sigma(i: usize) -> f64 {
    if i == 0 {
        1.0
    } else {
        -1.0
    }
}

fn unit_functionals(phi_a: f64, phi_b: f64) -> [Vector4<Complex64>; 4] {
    PATTERNS.map(|((i0, j0), (i1, j1), sign, _)| {
        let mut c = Vector4::zeros();
        c[2 * i0 + j0] = Complex64::from_polar(1.0, sigma(i0) * phi_a + sigma(j0) * phi_b);
        c[2 * i1 + j1] = Complex64::from_polar(sign, sigma(i1) * phi_a + sigma(j1) * phi_b);
        c
    })
}

/// Largest eigenvalue of `sum_k w_k |O_k><O_k|` restricted to the span of
/// the dual product vectors, whose Gram matrix has Cholesky factor `l`.
fn functional_max_eigenvalue(
    l: &Matrix4<Complex64>,
    units: &[Vector4<Complex64>; 4],
    weights: &[f64; 4],
) -> f64 {
    let mut c = Matrix4::zeros();
    for (o, &w) in units.iter().zip(weights) {
        let ket = o.conjugate();
        c += ket * ket.adjoint() * Complex64::from(w);
    }
    (l.adjoint() * c * l).symmetric_eigenvalues().max()
}

/// Claire's four functionals on the two received modes
/// (`<d00| ± <d11|` and `<d01| ± <d10|`, rephased so both arm overlaps are
/// real). The `+` pair shares one squared scale and the `-` pair another.
/// Both are fixed by maximising the total scale subject to the largest
/// completeness eigenvalue being 1.
pub fn build_claire_measurement(
    u0a: &FockVector,
    u1a: &FockVector,
    u0b: &FockVector,
    u1b: &FockVector,
) -> Result<MeasurementSet> {
    let (d0a, d1a) = dual_pair(u0a, u1a)?;
    let (d0b, d1b) = dual_pair(u0b, u1b)?;
    let (oa, ob) = (u1a.inner(u0a), u1b.inner(u0b));
    let units = unit_functionals(oa.arg() / 2.0, ob.arg() / 2.0);
    let gram = dual_gram(&d0a, &d1a).kronecker(&dual_gram(&d0b, &d1b));
    let gram = Matrix4::from_iterator(gram.iter().cloned());
    let l = gram
        .cholesky()
        .ok_or(Error::IllConditioned {
            overlap: oa.norm().max(ob.norm()),
        })?
        .l();

    let weights = |psi: f64| {
        let (p, m) = (psi.cos().powi(2), psi.sin().powi(2));
        [p, m, p, m]
    };
    let total = |psi: f64| 1.0 / functional_max_eigenvalue(&l, &units, &weights(psi));
    let (psi, _, _) = golden_section_max(total, 0.0, std::f64::consts::FRAC_PI_2, SCALE_TOL);
    let w = weights(psi);
    let t = 1.0 / functional_max_eigenvalue(&l, &units, &w);
    let scales: Vec<f64> = w.iter().map(|x| x * t).collect();

    let outcomes = PATTERNS
        .iter()
        .zip(&units)
        .zip(&scales)
        .enumerate()
        .map(|(k, ((pat, unit), &sc))| Outcome {
            label: format!("O{}", k + 1),
            op: OutcomeOp::PairFunctional(unit * Complex64::from(sc.sqrt())),
            flip_b: pat.3,
        })
        .collect();
    let completeness = functional_max_eigenvalue(&l, &units, &[scales[0], scales[1], scales[2], scales[3]]);
    Ok(MeasurementSet {
        outcomes,
        duals: vec![(d0a, d1a), (d0b, d1b)],
        overlaps: vec![oa.norm(), ob.norm()],
        scales,
        completeness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::coherent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn basis(dim: usize, k: usize) -> FockVector {
        let mut v = FockVector::vacuum(dim);
        v.amplitudes[0] = c(0.0);
        v.amplitudes[k] = c(1.0);
        v
    }

    /// Unit vectors with real overlap `s`.
    fn pair(s: f64) -> (FockVector, FockVector) {
        let u0 = basis(3, 0);
        let u1 = FockVector::from_amplitudes(vec![c(s), c((1.0 - s * s).sqrt()), c(0.0)]);
        (u0, u1)
    }

    fn coherent_pair(a: f64, th: f64, dim: usize) -> (FockVector, FockVector) {
        (
            coherent(Complex64::from_polar(a, th / 2.0), dim).unwrap(),
            coherent(Complex64::from_polar(a, -th / 2.0), dim).unwrap(),
        )
    }

    #[test]
    fn dual_pair_examples() {
        let (e0, e1) = (basis(3, 0), basis(3, 1));
        let (d0, d1) = dual_pair(&e0, &e1).unwrap();
        assert_eq!((d0, d1), (e0, e1));

        let (u0, u1) = pair(0.5);
        let (d0, _) = dual_pair(&u0, &u1).unwrap();
        let expect = (&u0.amplitudes - &u1.amplitudes * c(0.5)) / c(0.75);
        assert!((d0.amplitudes - expect).camax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, th) = (rng.gen_range(0.2..2.5), rng.gen_range(0.1..3.1));
            let (u0, u1) = coherent_pair(a, th, 48);
            let (d0, d1) = dual_pair(&u0, &u1).unwrap();
            assert!(d0.inner(&u1).norm() <= 1e-10);
            assert!(d1.inner(&u0).norm() <= 1e-10);
            assert!((d0.inner(&u0) - c(1.0)).norm() <= 1e-10);
            assert!((d1.inner(&u1) - c(1.0)).norm() <= 1e-10);
        }
    }

    #[test]
    fn dual_pair_guard() {
        let (u0, u1) = pair(1.0 - 1e-8);
        assert!(matches!(dual_pair(&u0, &u1), Err(Error::IllConditioned { .. })));
        let v = FockVector::vacuum(4);
        assert!(dual_pair(&v, &v).is_err());
    }

    #[test]
    fn p2p_measurement_examples() {
        let (e0, e1) = (basis(3, 0), basis(3, 1));
        let m = build_p2p_measurement(&e0, &e1).unwrap();
        let OutcomeOp::ModeToQubit(n) = &m.outcomes[0].op else { panic!() };
        let expect = DMatrix::from_row_slice(2, 3, &[c(1.0), c(0.0), c(0.0), c(0.0), c(1.0), c(0.0)]);
        assert_eq!(n, &expect);
        assert!((m.completeness_max_eigenvalue() - 1.0).abs() < 1e-12);

        let (u0, u1) = pair(0.5);
        let m = build_p2p_measurement(&u0, &u1).unwrap();
        assert!((m.completeness_max_eigenvalue() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn p2p_effect_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (a, th) = (rng.gen_range(0.3..2.0), rng.gen_range(0.2..3.0));
            let (u0, u1) = coherent_pair(a, th, 40);
            let s = u1.inner(&u0).norm();
            let m = build_p2p_measurement(&u0, &u1).unwrap();
            let mut eig: Vec<f64> = m.effect(0).unwrap().symmetric_eigenvalues().iter().cloned().collect();
            eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
            assert!((eig[0] - 1.0).abs() <= 1e-9);
            assert!((eig[1] - (1.0 - s) / (1.0 + s)).abs() <= 1e-9);
            assert!(eig[2..].iter().all(|e| e.abs() <= 1e-9));
        }
    }

    #[test]
    fn claire_scales_match_closed_forms() {
        for s in [0.5, 0.1, 0.3, 0.75, 0.9] {
            let (u0, u1) = pair(s);
            let m = build_claire_measurement(&u0, &u1, &u0, &u1).unwrap();
            let plus = (1.0 - s).powi(2) / 2.0;
            let minus = (1.0 - s * s) / 2.0;
            for (k, expect) in [plus, minus, plus, minus].iter().enumerate() {
                assert!((m.scales[k] - expect).abs() <= 1e-9, "s={s} k={k}");
            }
            assert!((m.completeness_max_eigenvalue() - 1.0).abs() <= 1e-9);
            let total = m.scales[0] + m.scales[1];
            assert!((total - (1.0 - s)).abs() <= 1e-9);
        }
        let (u0, u1) = pair(0.5);
        let m = build_claire_measurement(&u0, &u1, &u0, &u1).unwrap();
        assert!((m.scales[0] - 0.125).abs() <= 1e-9);
        assert!((m.scales[1] - 0.375).abs() <= 1e-9);
    }

    #[test]
    fn claire_orthogonal_limit() {
        let (e0, e1) = (basis(2, 0), basis(2, 1));
        let m = build_claire_measurement(&e0, &e1, &e0, &e1).unwrap();
        for sc in &m.scales {
            assert!((sc - 0.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn claire_completeness_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (a, b) = (rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0));
            let (th_a, th_b) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
            let (u0a, u1a) = coherent_pair(a, th_a, 40);
            let (u0b, u1b) = coherent_pair(b, th_b, 40);
            let m = build_claire_measurement(&u0a, &u1a, &u0b, &u1b).unwrap();
            assert!((m.completeness_max_eigenvalue() - 1.0).abs() <= 1e-9);
            // Unequal overlaps: the best total is set by the worse arm.
            let s_max = m.overlaps[0].max(m.overlaps[1]);
            let total: f64 = m.scales[0] + m.scales[1];
            assert!((total - (1.0 - s_max)).abs() <= 1e-8, "{total} vs {}", 1.0 - s_max);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn measurements_are_complete(
            a in 0.3f64..2.0,
            b in 0.3f64..2.0,
            th_a in 0.3f64..3.0,
            th_b in 0.3f64..3.0,
        ) {
            let (u0a, u1a) = coherent_pair(a, th_a, 40);
            let (u0b, u1b) = coherent_pair(b, th_b, 40);
            let p2p = build_p2p_measurement(&u0a, &u1a).unwrap();
            prop_assert!(p2p.completeness_max_eigenvalue() <= 1.0 + 1e-9);
            let m = build_claire_measurement(&u0a, &u1a, &u0b, &u1b).unwrap();
            prop_assert!(m.completeness_max_eigenvalue() <= 1.0 + 1e-9);
        }
    }
}
