//! Ground-truth verdicts, independent of the passivity machinery.
//!
//! Two cross-checks live here. The *eigenvalue oracle* linearizes the exact
//! closed loop — devices in feedback with the unsymmetrized network coupling
//! Jacobian — and reads stability off the spectrum. The *frequency-domain
//! verifier* confirms a claimed device passivity matrix by checking
//! positive-realness of the transformed transfer function
//! `H(jω) = jω G(jω) (I − S G(jω))⁻¹` on a frequency grid, where `G` is the
//! device's input→output transfer and `S` the claimed matrix.
//!
//! Both routes are deliberately separate code paths from the criteria
//! module: the criteria certify via symmetrized closed forms, the oracle
//! recomputes from first principles.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::case::{BusId, PowerSystemCase};
use crate::devices::{linearize_device, LinearDevice, Odpm};
use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue real parts within this band of zero count as marginal rather
/// than stable or unstable.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

/// Positive-realness slack for the frequency-domain verifier.
pub const PR_TOLERANCE: f64 = 1e-8;

/// Linearized closed loop `ẋ = A_cl x` of all devices in feedback with the
/// network coupling.
#[derive(Clone, Debug)]
pub struct ClosedLoopModel {
    pub a_cl: DMatrix<f64>,
    /// Each bus's slice of the stacked state vector.
    pub state_map: BTreeMap<BusId, Range<usize>>,
}

/// Assemble `A_cl = A_dev − B_dev · G′_net · C_dev` from the devices of an
/// all-dynamic (reduced) case and the exact, unsymmetrized network coupling
/// Jacobian in interleaved ordering.
///
/// The minus sign implements the interconnection `u_dev = −y_net`: every
/// device receives the negated network coupling of all device outputs.
pub fn assemble_closed_loop(
    case: &PowerSystemCase,
    idpm_raw: &DMatrix<f64>,
) -> Result<ClosedLoopModel> {
    let n_dev = case.devices.len();
    if case.devices.len() != case.buses.len() {
        return Err(Error::Validation(format!(
            "closed-loop assembly needs an all-dynamic case; {} of {} buses have devices",
            n_dev,
            case.buses.len()
        )));
    }
    if idpm_raw.nrows() != 2 * n_dev || !idpm_raw.is_square() {
        return Err(Error::Dimension(format!(
            "coupling matrix is {}×{}, expected {}×{}",
            idpm_raw.nrows(),
            idpm_raw.ncols(),
            2 * n_dev,
            2 * n_dev
        )));
    }

    let n_total: usize = case.devices.values().map(|d| d.state_dim()).sum();
    let mut a_dev = DMatrix::zeros(n_total, n_total);
    let mut b_dev = DMatrix::zeros(n_total, 2 * n_dev);
    let mut c_dev = DMatrix::zeros(2 * n_dev, n_total);
    let mut state_map = BTreeMap::new();

    let mut row = 0usize;
    for (k, (bus, spec)) in case.devices.iter().enumerate() {
        let lin = linearize_device(spec, spec.setpoints());
        let n = spec.state_dim();
        a_dev.view_mut((row, row), (n, n)).copy_from(&lin.a);
        b_dev.view_mut((row, 2 * k), (n, 2)).copy_from(&lin.b);
        c_dev.view_mut((2 * k, row), (2, n)).copy_from(&lin.c);
        state_map.insert(*bus, row..row + n);
        row += n;
    }

    let a_cl = &a_dev - &b_dev * idpm_raw * &c_dev;
    Ok(ClosedLoopModel { a_cl, state_map })
}

/// Eigenvalues of a closed loop, sorted by real part descending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Real part of the rightmost eigenvalue.
    pub max_real: f64,
}

/// Ground-truth verdict from the closed-loop spectrum.
///
/// Stable iff every real part is below `−tol`, unstable iff one exceeds
/// `+tol`; in between the verdict is marginal (neither certified nor
/// unstable). The verdict margin is `−max_real`, positive when stable.
pub fn eigen_verdict(
    model: &ClosedLoopModel,
    tol: f64,
) -> Result<(Spectrum, crate::criteria::StabilityVerdict)> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("oracle tolerance must be positive, got {tol}")));
    }
    let eigenvalues = linalg::complex_eigenvalues_sorted(&model.a_cl)?;
    let max_real = eigenvalues
        .first()
        .map(|z| z.re)
        .ok_or_else(|| Error::Eigen("empty closed-loop model".into()))?;
    let spectrum = Spectrum { eigenvalues, max_real };
    let verdict = crate::criteria::StabilityVerdict {
        criterion: crate::criteria::Criterion::EigenOracle,
        certified: max_real < -tol,
        unstable: max_real > tol,
        margin: -max_real,
        details: Vec::new(),
    };
    Ok((spectrum, verdict))
}

/// Result of the frequency-domain passivity verification.
#[derive(Clone, Debug)]
pub struct FrequencyCheck {
    /// True iff `λ_min(H + H*) ≥ −PR_TOLERANCE` at every grid point.
    pub holds: bool,
    /// Grid frequency with the smallest eigenvalue.
    pub worst_freq: f64,
    /// That smallest eigenvalue.
    pub worst_eig: f64,
}

/// Default verification grid: 400 log-spaced points in `[1e−3, 1e3]` rad/s,
/// two decades around the device time constants.
pub fn default_frequency_grid() -> Vec<f64> {
    let (lo, hi, n) = (1e-3f64, 1e3f64, 400usize);
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|k| lo * (step * k as f64).exp()).collect()
}

/// Verify a claimed 2×2 passivity matrix against the device linearization:
/// checks positive-realness of `H(jω) = jω G(jω)(I − S G(jω))⁻¹` over the
/// grid, where `G(jω) = C (jωI − A)⁻¹ B`.
pub fn verify_odp_frequency(
    dev: &LinearDevice,
    odpm: &Odpm,
    freq_grid: &[f64],
) -> Result<FrequencyCheck> {
    let n = dev.a.nrows();
    if dev.c.nrows() != 2 || dev.b.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "frequency verification expects a 2-input/2-output device, got {}×{}",
            dev.c.nrows(),
            dev.b.ncols()
        )));
    }
    if freq_grid.is_empty() {
        return Err(Error::Validation("empty frequency grid".into()));
    }
    let to_c = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let (a, b, c) = (to_c(&dev.a), to_c(&dev.b), to_c(&dev.c));
    let s = DMatrix::from_fn(2, 2, |i, j| Complex64::new(odpm.matrix[i][j], 0.0));

    let mut worst_eig = f64::INFINITY;
    let mut worst_freq = freq_grid[0];
    for &omega in freq_grid {
        let jw = Complex64::new(0.0, omega);
        let resolvent = DMatrix::from_diagonal_element(n, n, jw) - &a;
        let x = resolvent.lu().solve(&b).ok_or_else(|| {
            Error::Singular(format!("jωI − A singular at ω = {omega:.6e} rad/s"))
        })?;
        let g = &c * x;
        let loop_mat = DMatrix::identity(2, 2) - &s * &g;
        let loop_inv = loop_mat.try_inverse().ok_or_else(|| {
            Error::Singular(format!("I − S·G(jω) singular at ω = {omega:.6e} rad/s"))
        })?;
        let h = (&g * loop_inv) * jw;
        // H + H* is 2×2 hermitian; closed-form smallest eigenvalue.
        let d0 = 2.0 * h[(0, 0)].re;
        let d1 = 2.0 * h[(1, 1)].re;
        let off = h[(0, 1)] + h[(1, 0)].conj();
        let lambda = linalg::herm2_min_eigenvalue(d0, d1, off);
        if lambda < worst_eig {
            worst_eig = lambda;
            worst_freq = omega;
        }
    }
    Ok(FrequencyCheck { holds: worst_eig >= -PR_TOLERANCE, worst_freq, worst_eig })
}
