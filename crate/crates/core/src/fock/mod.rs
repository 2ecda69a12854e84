//! Truncated Fock-space model of the coherent-state protocols.
//!
//! Modes are truncated at a finite photon number. The phase rotation and the
//! pure-loss beamsplitter both conserve (or split) photon number, so they act
//! exactly on the truncated space; the only approximation is the Poisson tail
//! of the input coherent state, which [`coherent`] bounds explicitly.

mod joint;
mod measure;
mod sim;

pub use joint::{JointState, SparseMap, Subsystem};
pub use measure::{
    build_claire_measurement, build_p2p_measurement, dual_pair, MeasurementSet, Outcome,
    OutcomeOp,
};
pub use sim::{
    build_p2p_state, build_three_party_state, dephasing_equivalence_check, received_overlap,
    simulate_p2p, simulate_p2p_with, simulate_three_party, ArmParams, DephaseStage,
    OutcomeReport, SimulationReport, ThreePartyState,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest Poisson tail mass accepted for a truncated coherent state.
pub const TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub amplitudes: DVector<Complex64>,
}

impl FockVector {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        Self {
            amplitudes: DVector::from_vec(amplitudes),
        }
    }

    pub fn vacuum(dim: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[0] = Complex64::new(1.0, 0.0);
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// `1 - sum |a_n|^2`; the weight lost to truncation for a normalized state.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.norm_sq()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            amplitudes: &self.amplitudes * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub matrix: DMatrix<Complex64>,
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// `|| M^dag M - 1 ||_max` over all columns.
    pub fn isometry_defect(&self) -> f64 {
        let g = self.matrix.adjoint() * &self.matrix;
        let n = g.nrows();
        (g - DMatrix::<Complex64>::identity(n, n)).camax()
    }

    /// Isometry defect restricted to the first `occupied` basis states.
    pub fn isometry_defect_on(&self, occupied: usize) -> f64 {
        let cols = self.matrix.columns(0, occupied);
        let g = cols.adjoint() * cols;
        (g - DMatrix::<Complex64>::identity(occupied, occupied)).camax()
    }
}

/// Truncation used when the caller does not pick one.
pub fn default_dim(alpha_abs: f64) -> usize {
    (alpha_abs * alpha_abs + 10.0 * alpha_abs + 20.0).ceil() as usize
}

fn coherent_unchecked(alpha: Complex64, dim: usize) -> FockVector {
    let mut amps = Vec::with_capacity(dim);
    let mut a = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            a = a * alpha / (n as f64).sqrt();
        }
        amps.push(a);
    }
    FockVector::from_amplitudes(amps)
}

/// Coherent state `|alpha>` truncated to `dim` levels.
///
/// Fails if the discarded Poisson tail exceeds [`TAIL_TOL`].
pub fn coherent(alpha: Complex64, dim: usize) -> Result<FockVector> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(Error::param("alpha", alpha.norm(), "must be finite"));
    }
    if dim == 0 {
        return Err(Error::TruncationTooSmall {
            dim,
            alpha: alpha.norm(),
            tail: 1.0,
        });
    }
    let v = coherent_unchecked(alpha, dim);
    let tail = v.tail_mass();
    if tail > TAIL_TOL {
        return Err(Error::TruncationTooSmall {
            dim,
            alpha: alpha.norm(),
            tail,
        });
    }
    Ok(v)
}

/// `exp(i phi n)` on a single mode.
pub fn phase_rotation(phi: f64, dim: usize) -> FockOperator {
    let diag = DVector::from_fn(dim, |n, _| Complex64::from_polar(1.0, phi * n as f64));
    FockOperator {
        matrix: DMatrix::from_diagonal(&diag),
    }
}

/// `|0><0| ⊗ R(theta/2) + |1><1| ⊗ R(-theta/2)` on qubit ⊗ mode, with the
/// qubit as the leading index.
pub fn conditional_rotation(theta: f64, dim: usize) -> Result<FockOperator> {
    if !theta.is_finite() {
        return Err(Error::param("theta", theta, "must be finite"));
    }
    if dim == 0 {
        return Err(Error::param("dim", 0.0, "must be > 0"));
    }
    let diag = DVector::from_fn(2 * dim, |idx, _| {
        let (j, n) = (idx / dim, idx % dim);
        let sign = if j == 0 { 1.0 } else { -1.0 };
        Complex64::from_polar(1.0, sign * theta / 2.0 * n as f64)
    });
    Ok(FockOperator {
        matrix: DMatrix::from_diagonal(&diag),
    })
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// Beamsplitter with a vacuum ancilla, as a sparse map from one mode to
/// (transmitted, environment):
/// `|n> -> sum_k sqrt(C(n,k)) sqrt(T)^k sqrt(1-T)^(n-k) |k>|n-k>`.
pub(crate) fn loss_map(t: f64, dim: usize) -> SparseMap {
    let lf = ln_factorials(dim);
    let (lt, lr) = (0.5 * t.ln(), 0.5 * (1.0 - t).ln());
    let columns = (0..dim)
        .map(|n| {
            (0..=n)
                .map(|k| {
                    let ln_amp = 0.5 * (lf[n] - lf[k] - lf[n - k]) + k as f64 * lt + (n - k) as f64 * lr;
                    (k * dim + (n - k), Complex64::new(ln_amp.exp(), 0.0))
                })
                .collect()
        })
        .collect();
    SparseMap::new(dim * dim, columns)
}

/// Dense form of the loss isometry (`dim^2 x dim`).
pub fn loss_isometry(t: f64, dim: usize) -> Result<FockOperator> {
    crate::error::check_open("T", t, 0.0, 1.0)?;
    Ok(FockOperator {
        matrix: loss_map(t, dim).to_dense(),
    })
}

/// Applies the pure-loss channel to mode `label`, which is replaced by the
/// transmitted mode `label` followed by an environment mode `env_label`.
pub fn apply_loss(state: &JointState, label: &str, env_label: &str, t: f64) -> Result<JointState> {
    crate::error::check_open("T", t, 0.0, 1.0)?;
    let dim = state.dim_of(label)?;
    let map = loss_map(t, dim);
    state.apply(
        &[label],
        &map,
        vec![Subsystem::new(label, dim), Subsystem::new(env_label, dim)],
    )
}
