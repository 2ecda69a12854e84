//! Two-qubit states supported on span{|Phi+>, |Phi->}.
//!
//! A general state of this family is described by three real numbers
//! `(zeta, chi, upsilon)`. In the computational basis `|00>,|01>,|10>,|11>`
//! its density matrix is
//!
//! ```text
//! <00|rho|00> = (1 + chi) / 2
//! <11|rho|11> = (1 - chi) / 2
//! <00|rho|11> = (zeta + i upsilon) / 2
//! ```
//!
//! with every entry touching `|01>` or `|10>` equal to zero. A local unitary
//! brings any such state to the standard form `(z, x) = (sqrt(zeta^2 +
//! upsilon^2), |chi|)`, which has a real non-negative coherence and
//! `<00|rho|00> >= <11|rho|11>`.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_closed, Error, Result};

/// Tolerance for structural checks (Hermiticity, trace, norm constraint).
pub const STRUCT_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as "non-negative".
pub const PSD_TOL: f64 = -1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleErrorState {
    pub zeta: f64,
    pub chi: f64,
    pub upsilon: f64,
}

impl SingleErrorState {
    pub fn new(zeta: f64, chi: f64, upsilon: f64) -> Result<Self> {
        Self::with_slack(zeta, chi, upsilon, STRUCT_TOL)
    }

    /// Like [`SingleErrorState::new`], but accepts norm overshoot up to
    /// `slack` and projects it back onto the unit ball.
    pub(crate) fn with_slack(zeta: f64, chi: f64, upsilon: f64, slack: f64) -> Result<Self> {
        let norm_sq = zeta * zeta + chi * chi + upsilon * upsilon;
        if !norm_sq.is_finite() || norm_sq > 1.0 + slack {
            return Err(Error::InvalidState { norm_sq });
        }
        if norm_sq > 1.0 {
            let r = norm_sq.sqrt();
            return Ok(Self {
                zeta: zeta / r,
                chi: chi / r,
                upsilon: upsilon / r,
            });
        }
        Ok(Self { zeta, chi, upsilon })
    }

    pub fn norm_sq(&self) -> f64 {
        self.zeta * self.zeta + self.chi * self.chi + self.upsilon * self.upsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardFormState {
    /// Coherence between `|00>` and `|11>`; `z = 2F - 1`.
    pub z: f64,
    /// Population asymmetry between `|00>` and `|11>`.
    pub x: f64,
}

impl StandardFormState {
    pub fn new(z: f64, x: f64) -> Result<Self> {
        check_closed("z", z, 0.0, 1.0)?;
        check_closed("x", x, 0.0, 1.0)?;
        let norm_sq = z * z + x * x;
        if norm_sq > 1.0 + STRUCT_TOL {
            return Err(Error::InvalidState { norm_sq });
        }
        if norm_sq > 1.0 {
            let r = norm_sq.sqrt();
            return Ok(Self { z: z / r, x: x / r });
        }
        Ok(Self { z, x })
    }

    pub fn as_general(&self) -> SingleErrorState {
        SingleErrorState {
            zeta: self.z,
            chi: self.x,
            upsilon: 0.0,
        }
    }
}

/// Local unitary that maps a general state to its standard form.
///
/// The unitary is `(X⊗X)^xx_flip · (exp(-i θ Z/2) ⊗ 1) · (Z⊗1)^z_flip`,
/// applied right to left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCorrection {
    pub z_rotation_angle: f64,
    pub xx_flip: bool,
    pub z_flip: bool,
}

impl LocalCorrection {
    pub fn identity() -> Self {
        Self {
            z_rotation_angle: 0.0,
            xx_flip: false,
            z_flip: false,
        }
    }

    pub fn unitary(&self) -> Matrix4<Complex64> {
        let half = self.z_rotation_angle / 2.0;
        let rot = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            Complex64::from_polar(1.0, -half),
            Complex64::from_polar(1.0, -half),
            Complex64::from_polar(1.0, half),
            Complex64::from_polar(1.0, half),
        ));
        let mut u = rot;
        if self.z_flip {
            u *= z_on_a();
        }
        if self.xx_flip {
            u = x_on_both() * u;
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitDensityMatrix {
    entries: Matrix4<Complex64>,
}

impl TwoQubitDensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(entries: Matrix4<Complex64>) -> Result<Self> {
        let herm_err = (entries - entries.adjoint()).norm();
        if herm_err > STRUCT_TOL {
            return Err(Error::Subsystem(format!(
                "density matrix not Hermitian (deviation {herm_err:e})"
            )));
        }
        let tr = entries.trace();
        if (tr.re - 1.0).abs() > STRUCT_TOL || tr.im.abs() > STRUCT_TOL {
            return Err(Error::Subsystem(format!("density matrix trace {tr}")));
        }
        let min_eig = entries
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < PSD_TOL {
            return Err(Error::Subsystem(format!(
                "density matrix not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { entries })
    }

    pub(crate) fn new_unchecked(entries: Matrix4<Complex64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &Matrix4<Complex64> {
        &self.entries
    }

    pub fn conjugate_by(&self, u: &Matrix4<Complex64>) -> Self {
        Self {
            entries: u * self.entries * u.adjoint(),
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.entries - other.entries).norm()
    }
}

pub fn z_on_a() -> Matrix4<Complex64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, -ONE, -ONE))
}

pub fn x_on_both() -> Matrix4<Complex64> {
    let mut m = Matrix4::from_element(ZERO);
    m[(0, 3)] = ONE;
    m[(1, 2)] = ONE;
    m[(2, 1)] = ONE;
    m[(3, 0)] = ONE;
    m
}

pub fn density_of(s: &SingleErrorState) -> TwoQubitDensityMatrix {
    let mut m = Matrix4::from_element(ZERO);
    m[(0, 0)] = Complex64::new((1.0 + s.chi) / 2.0, 0.0);
    m[(3, 3)] = Complex64::new((1.0 - s.chi) / 2.0, 0.0);
    let c = Complex64::new(s.zeta / 2.0, s.upsilon / 2.0);
    m[(0, 3)] = c;
    m[(3, 0)] = c.conj();
    TwoQubitDensityMatrix::new_unchecked(m)
}

pub fn to_standard_form(s: &SingleErrorState) -> Result<(StandardFormState, LocalCorrection)> {
    let s = SingleErrorState::new(s.zeta, s.chi, s.upsilon)?;
    // Z on A negates the coherence; afterwards |angle| <= pi/2.
    let z_flip = s.zeta < 0.0;
    let (re, im) = if z_flip {
        (-s.zeta, -s.upsilon)
    } else {
        (s.zeta, s.upsilon)
    };
    let z_rotation_angle = if re == 0.0 && im == 0.0 {
        0.0
    } else {
        im.atan2(re)
    };
    let xx_flip = s.chi < 0.0;
    let z = (s.zeta * s.zeta + s.upsilon * s.upsilon).sqrt();
    let standard = StandardFormState::new(z.min(1.0), s.chi.abs())?;
    Ok((
        standard,
        LocalCorrection {
            z_rotation_angle,
            xx_flip,
            z_flip,
        },
    ))
}

pub fn classify(rho: &TwoQubitDensityMatrix, tol: f64) -> Result<SingleErrorState> {
    let m = rho.entries();
    let mass = m[(1, 1)].re + m[(2, 2)].re;
    if mass > tol {
        return Err(Error::NotSingleErrorType { mass });
    }
    let coherence = m[(0, 3)];
    SingleErrorState::with_slack(
        2.0 * coherence.re,
        m[(0, 0)].re - m[(3, 3)].re,
        2.0 * coherence.im,
        tol.max(STRUCT_TOL),
    )
}

pub fn singlet_fraction(s: &StandardFormState) -> f64 {
    (1.0 + s.z) / 2.0
}

pub fn apply_phase_flip(s: &StandardFormState, v: f64) -> Result<StandardFormState> {
    check_closed("v", v, 0.0, 1.0)?;
    Ok(StandardFormState { z: v * s.z, x: s.x })
}

pub fn apply_xx_mix(s: &StandardFormState, v: f64) -> Result<StandardFormState> {
    check_closed("v", v, 0.0, 1.0)?;
    Ok(StandardFormState { z: s.z, x: v * s.x })
}

pub fn mix(terms: &[(f64, SingleErrorState)]) -> Result<SingleErrorState> {
    if terms.is_empty() {
        return Err(Error::InvalidWeights("empty mixture".into()));
    }
    if let Some((w, _)) = terms.iter().find(|(w, _)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidWeights(format!("negative weight {w}")));
    }
    let total: f64 = terms.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > STRUCT_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {total}")));
    }
    let (zeta, chi, upsilon) = terms.iter().fold((0.0, 0.0, 0.0), |acc, (w, s)| {
        (acc.0 + w * s.zeta, acc.1 + w * s.chi, acc.2 + w * s.upsilon)
    });
    SingleErrorState::new(zeta, chi, upsilon)
}

/// `(1+v)/2 rho + (1-v)/2 Z_A rho Z_A` on an explicit density matrix.
pub fn phase_flip_channel(rho: &Matrix4<Complex64>, v: f64) -> Matrix4<Complex64> {
    let z = z_on_a();
    rho * Complex64::from((1.0 + v) / 2.0) + (z * rho * z) * Complex64::from((1.0 - v) / 2.0)
}

/// `(1+v)/2 rho + (1-v)/2 (X⊗X) rho (X⊗X)` on an explicit density matrix.
pub fn xx_channel(rho: &Matrix4<Complex64>, v: f64) -> Matrix4<Complex64> {
    let x = x_on_both();
    rho * Complex64::from((1.0 + v) / 2.0) + (x * rho * x) * Complex64::from((1.0 - v) / 2.0)
}
