//! Dynamic device models attached to grid buses.
//!
//! Three models are supported, each exposing the bus angle and a voltage
//! magnitude as outputs and accepting the pair `u = (-P, -Q/V)` as input:
//!
//! - **SG** — third-order synchronous generator (angle, speed deviation,
//!   q-axis internal voltage) with frequency and field-voltage control loops.
//!   The internal voltage doubles as the output voltage: the model has no
//!   separate terminal-voltage state.
//! - **CD** — conventional droop-controlled inverter (angle, voltage).
//! - **QD** — quadratic droop-controlled inverter (angle, voltage), whose
//!   voltage loop regulates `V(V - u*)` instead of the linear deviation.
//!
//! All three carry optional cross-loop gains (`K_wv`, `K_vtheta`,
//! `K_vomega`) that couple the angle and voltage channels. The module
//! provides, per model: the ODE right-hand side, the steady-state/reference
//! back-solve, the exact linearization about a setpoint, and the closed-form
//! 2×2 output-passivity matrix with its validity conditions.

use nalgebra::{DMatrix, Matrix2};
use serde::Serialize;

use crate::case::{DeviceSpec, DroopParams, Setpoints, SgParams};
use crate::error::{Error, Result};
pub use crate::linalg::symmetric_part;

/// Lower bound on the SG internal voltage. The network interface divides
/// reactive power by this voltage, so trajectories reaching the floor abort
/// with a domain error instead of continuing with meaningless values.
pub const E_QP_FLOOR: f64 = 1e-6;

/// Default gap between an SG diagonal passivity index and its strict upper
/// bound. The closed forms require strict inequalities, so the defaults sit
/// this far inside the admissible region.
pub const SIGMA_MARGIN: f64 = 1e-6;

/// Dynamic state of one device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeviceState {
    /// Synchronous generator: angle, speed deviation, internal voltage.
    Sg { theta: f64, omega: f64, e_qp: f64 },
    /// Droop inverter (conventional or quadratic): angle, voltage.
    Droop { theta: f64, v: f64 },
}

impl DeviceState {
    pub fn dim(&self) -> usize {
        match self {
            DeviceState::Sg { .. } => 3,
            DeviceState::Droop { .. } => 2,
        }
    }

    /// Copy the state into a flat slice (layout: SG `[theta, omega, e_qp]`,
    /// droop `[theta, v]`).
    pub fn write_to(&self, out: &mut [f64]) {
        match *self {
            DeviceState::Sg { theta, omega, e_qp } => {
                out[0] = theta;
                out[1] = omega;
                out[2] = e_qp;
            }
            DeviceState::Droop { theta, v } => {
                out[0] = theta;
                out[1] = v;
            }
        }
    }

    /// Read a state back from the flat layout used by `write_to`.
    pub fn from_slice(spec: &DeviceSpec, x: &[f64]) -> DeviceState {
        match spec {
            DeviceSpec::Sg { .. } => DeviceState::Sg { theta: x[0], omega: x[1], e_qp: x[2] },
            DeviceSpec::Cd { .. } | DeviceSpec::Qd { .. } => {
                DeviceState::Droop { theta: x[0], v: x[1] }
            }
        }
    }
}

/// Constant reference inputs that hold a device at its setpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeviceRefs {
    /// SG: mechanical power order and field voltage.
    Sg { p_g: f64, e_f: f64 },
    /// CD regulates deviations only; no standing reference beyond setpoints.
    Cd,
    /// QD: voltage-loop reference `u* = D2 Q*/V* + V*`.
    Qd { u: f64 },
}

/// Evaluate the device ODE: writes `dx/dt` into `dx`.
///
/// `x` and `dx` use the flat state layout of [`DeviceState::write_to`];
/// `u = (-P, -Q/V)` is the network coupling input. Starred quantities come
/// from the spec's setpoints and from `refs`.
pub fn device_rhs(
    spec: &DeviceSpec,
    x: &[f64],
    u: [f64; 2],
    refs: &DeviceRefs,
    dx: &mut [f64],
) -> Result<()> {
    let sp = spec.setpoints();
    match (spec, refs) {
        (DeviceSpec::Sg { params: p, .. }, DeviceRefs::Sg { p_g, e_f }) => {
            let (theta, omega, e) = (x[0], x[1], x[2]);
            if e <= E_QP_FLOOR {
                return Err(Error::Domain(format!(
                    "SG internal voltage {e} at or below floor {E_QP_FLOOR}"
                )));
            }
            dx[0] = omega;
            dx[1] = (-(p.d + p.k_p) * omega + u[0] - p.k_i * (theta - sp.theta)
                - p.k_wv * (e - sp.v)
                + p_g)
                / p.m;
            dx[2] = (-e + (p.x_d - p.x_dp) * u[1]
                - p.k_e * (e - sp.v)
                - p.k_vtheta * (theta - sp.theta)
                - p.k_vomega * omega
                + e_f)
                / p.t_d;
        }
        (DeviceSpec::Cd { params: p, .. }, DeviceRefs::Cd) => {
            let (theta, v) = (x[0], x[1]);
            let (pow, q) = (-u[0], -u[1] * v);
            let dtheta =
                (-(theta - sp.theta) - p.d1 * (pow - sp.p) - p.k_wv * (v - sp.v)) / p.tau1;
            dx[0] = dtheta;
            dx[1] = (-(v - sp.v) - p.d2 * (q - sp.q)
                - p.k_vtheta * (theta - sp.theta)
                - p.k_vomega * dtheta)
                / p.tau2;
        }
        (DeviceSpec::Qd { params: p, .. }, DeviceRefs::Qd { u: u_star }) => {
            let (theta, v) = (x[0], x[1]);
            let (pow, q) = (-u[0], -u[1] * v);
            let dtheta =
                (-(theta - sp.theta) - p.d1 * (pow - sp.p) - p.k_wv * (v - sp.v)) / p.tau1;
            dx[0] = dtheta;
            dx[1] = (-v * (v - u_star) - p.d2 * q
                - p.k_vtheta * (theta - sp.theta)
                - p.k_vomega * dtheta)
                / p.tau2;
        }
        _ => {
            return Err(Error::Validation(
                "device refs do not match device kind".into(),
            ))
        }
    }
    Ok(())
}

/// Device outputs `(theta, V)` for a flat state slice.
pub fn device_output(spec: &DeviceSpec, x: &[f64]) -> [f64; 2] {
    match spec {
        DeviceSpec::Sg { .. } => [x[0], x[2]],
        DeviceSpec::Cd { .. } | DeviceSpec::Qd { .. } => [x[0], x[1]],
    }
}

/// Back-solve the steady state and the constant references that hold the
/// device at its setpoints under the input `u* = (-P*, -Q*/V*)`.
pub fn device_steady_state(spec: &DeviceSpec) -> (DeviceState, DeviceRefs) {
    let sp = spec.setpoints();
    match spec {
        DeviceSpec::Sg { params: p, .. } => (
            DeviceState::Sg { theta: sp.theta, omega: 0.0, e_qp: sp.v },
            DeviceRefs::Sg {
                p_g: sp.p,
                e_f: sp.v + (p.x_d - p.x_dp) * sp.q / sp.v,
            },
        ),
        DeviceSpec::Cd { .. } => {
            (DeviceState::Droop { theta: sp.theta, v: sp.v }, DeviceRefs::Cd)
        }
        DeviceSpec::Qd { params: p, .. } => (
            DeviceState::Droop { theta: sp.theta, v: sp.v },
            DeviceRefs::Qd { u: p.d2 * sp.q / sp.v + sp.v },
        ),
    }
}

/// Exact linearization `ẋ = A x̂ + B û`, `ŷ = C x̂` about a setpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDevice {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Linearize a device about the operating setpoints `eq`.
///
/// The input coordinates are the deviations of `u = (-P, -Q/V)`; the droop
/// reactive power `Q = -u₂ V` is bilinear, so its `V`-sensitivity
/// (`∂Q/∂V = Q*/V*`) folds into the state matrix.
pub fn linearize_device(spec: &DeviceSpec, eq: &Setpoints) -> LinearDevice {
    match spec {
        DeviceSpec::Sg { params: p, .. } => {
            let a = DMatrix::from_row_slice(
                3,
                3,
                &[
                    0.0,
                    1.0,
                    0.0,
                    -p.k_i / p.m,
                    -(p.d + p.k_p) / p.m,
                    -p.k_wv / p.m,
                    -p.k_vtheta / p.t_d,
                    -p.k_vomega / p.t_d,
                    -(1.0 + p.k_e) / p.t_d,
                ],
            );
            let b = DMatrix::from_row_slice(
                3,
                2,
                &[0.0, 0.0, 1.0 / p.m, 0.0, 0.0, (p.x_d - p.x_dp) / p.t_d],
            );
            let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
            LinearDevice { a, b, c }
        }
        DeviceSpec::Cd { params: p, .. } | DeviceSpec::Qd { params: p, .. } => {
            // Voltage-loop self term: conventional droop regulates the linear
            // deviation, quadratic droop the product V(V - u*); both pick up
            // the Q = -u₂V bilinearity through ∂Q/∂V = Q*/V*.
            let self_term = match spec {
                DeviceSpec::Cd { .. } => -(1.0 + p.d2 * eq.q / eq.v),
                _ => -eq.v,
            };
            let a = DMatrix::from_row_slice(
                2,
                2,
                &[
                    -1.0 / p.tau1,
                    -p.k_wv / p.tau1,
                    (-p.k_vtheta + p.k_vomega / p.tau1) / p.tau2,
                    (self_term + p.k_vomega * p.k_wv / p.tau1) / p.tau2,
                ],
            );
            let b = DMatrix::from_row_slice(
                2,
                2,
                &[
                    p.d1 / p.tau1,
                    0.0,
                    -p.k_vomega * p.d1 / (p.tau1 * p.tau2),
                    p.d2 * eq.v / p.tau2,
                ],
            );
            LinearDevice { a, b, c: DMatrix::identity(2, 2) }
        }
    }
}

/// Closed-form 2×2 output-passivity matrix of one device.
///
/// The matrix is exact and generally nonsymmetric; `valid` reports whether
/// the parameter conditions under which the closed form certifies passivity
/// hold, with the failed conditions listed verbatim in
/// `violated_conditions`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Odpm {
    pub matrix: [[f64; 2]; 2],
    /// Angle-channel diagonal index.
    pub sigma1: f64,
    /// Voltage-channel diagonal index.
    pub sigma2: f64,
    pub valid: bool,
    pub violated_conditions: Vec<String>,
}

impl Odpm {
    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.matrix[0][0],
            self.matrix[0][1],
            self.matrix[1][0],
            self.matrix[1][1],
        )
    }

    /// Smallest eigenvalue of the symmetric part — the scalar passivity
    /// index this matrix implies.
    pub fn min_symmetric_eigenvalue(&self) -> f64 {
        let off = 0.5 * (self.matrix[0][1] + self.matrix[1][0]);
        crate::linalg::sym2_min_eigenvalue(self.matrix[0][0], self.matrix[1][1], off)
    }

    fn check(conditions: Vec<(&str, bool)>) -> (bool, Vec<String>) {
        let violated: Vec<String> = conditions
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(name, _)| name.to_string())
            .collect();
        (violated.is_empty(), violated)
    }
}

/// Passivity matrix of the SG model for chosen diagonal indices.
///
/// `[[sigma1, K_wv], [K_vtheta/(x_d - x_dp), sigma2]]`, valid while both
/// indices stay strictly below their channel bounds and the damping/reactance
/// conditions hold.
pub fn odpm_sg(p: &SgParams, sigma1: f64, sigma2: f64) -> Odpm {
    let xd_gap = p.x_d - p.x_dp;
    let damping = p.d + p.k_p;
    let kvo_arg = p.t_d * damping * xd_gap;
    let kvo_bound = 2.0 * kvo_arg.max(0.0).sqrt();
    let (valid, violated) = Odpm::check(vec![
        ("sigma1 < K_I", sigma1 < p.k_i),
        ("sigma2 < (K_E + 1)/(x_d - x_dp)", xd_gap > 0.0 && sigma2 < (p.k_e + 1.0) / xd_gap),
        ("K_p + D > 0", damping > 0.0),
        ("x_d > x_dp", xd_gap > 0.0),
        (
            "K_vomega < 2*sqrt(T_d*(K_p + D)*(x_d - x_dp))",
            kvo_arg > 0.0 && p.k_vomega < kvo_bound,
        ),
    ]);
    Odpm {
        matrix: [[sigma1, p.k_wv], [p.k_vtheta / xd_gap, sigma2]],
        sigma1,
        sigma2,
        valid,
        violated_conditions: violated,
    }
}

/// Passivity matrix of the conventional droop model at `(Q*, V*)`.
///
/// `[[1/D1, K_wv/D1], [K_vtheta/(D2 V*), (D2 Q* + V*)/(D2 V*²)]]`.
pub fn odpm_cd(p: &DroopParams, q_star: f64, v_star: f64) -> Odpm {
    let matrix = [
        [1.0 / p.d1, p.k_wv / p.d1],
        [
            p.k_vtheta / (p.d2 * v_star),
            (p.d2 * q_star + v_star) / (p.d2 * v_star * v_star),
        ],
    ];
    let (valid, violated) = droop_conditions(p, v_star);
    Odpm {
        matrix,
        sigma1: matrix[0][0],
        sigma2: matrix[1][1],
        valid,
        violated_conditions: violated,
    }
}

/// Passivity matrix of the quadratic droop model at `V*`.
///
/// `[[1/D1, K_wv/D1], [K_vtheta/(D2 V*), 1/D2]]`.
pub fn odpm_qd(p: &DroopParams, v_star: f64) -> Odpm {
    let matrix = [
        [1.0 / p.d1, p.k_wv / p.d1],
        [p.k_vtheta / (p.d2 * v_star), 1.0 / p.d2],
    ];
    let (valid, violated) = droop_conditions(p, v_star);
    Odpm {
        matrix,
        sigma1: matrix[0][0],
        sigma2: matrix[1][1],
        valid,
        violated_conditions: violated,
    }
}

fn droop_conditions(p: &DroopParams, v_star: f64) -> (bool, Vec<String>) {
    let kvo_arg = p.tau1 * p.tau2 * v_star * p.d2 / p.d1;
    Odpm::check(vec![
        ("tau1 > 0", p.tau1 > 0.0),
        ("tau2 > 0", p.tau2 > 0.0),
        ("D1 > 0", p.d1 > 0.0),
        ("D2 > 0", p.d2 > 0.0),
        ("V_star > 0", v_star > 0.0),
        (
            "K_vomega <= 2*sqrt(tau1*tau2*V_star*D2/D1)",
            kvo_arg > 0.0 && p.k_vomega <= 2.0 * kvo_arg.sqrt(),
        ),
    ])
}

/// Passivity matrix for any device at the operating setpoints `eq`.
///
/// SG diagonal indices default to their strict bounds minus
/// [`SIGMA_MARGIN`]; `sigma1`/`sigma2` on the spec override the defaults.
pub fn device_odpm(spec: &DeviceSpec, eq: &Setpoints) -> Odpm {
    match spec {
        DeviceSpec::Sg { params: p, .. } => {
            let sigma1 = p.sigma1.unwrap_or(p.k_i - SIGMA_MARGIN);
            let sigma2 = p
                .sigma2
                .unwrap_or((p.k_e + 1.0) / (p.x_d - p.x_dp) - SIGMA_MARGIN);
            odpm_sg(p, sigma1, sigma2)
        }
        DeviceSpec::Cd { params: p, .. } => odpm_cd(p, eq.q, eq.v),
        DeviceSpec::Qd { params: p, .. } => odpm_qd(p, eq.v),
    }
}
