//! Nonlinear time-domain simulation of the interconnected system.
//!
//! The devices' ordinary differential equations are coupled through the
//! algebraic power-flow map: at every stage evaluation the bus injections
//! `(P, Q)` are recomputed from the current angles and voltages, and each
//! device is driven by `u = (−P, −Q/V)`. Ground faults switch the admittance
//! matrix for the duration of the fault window. Trajectories carry the full
//! state, the per-bus outputs, and the network term of an energy candidate,
//! so stability verdicts can be cross-checked against actual trajectories.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::case::{BusId, DeviceSpec, PowerSystemCase};
use crate::criteria::assemble_sdev;
use crate::devices::{
    device_odpm, device_output, device_rhs, device_steady_state, DeviceRefs, DeviceState,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{build_admittance, build_idpm_from, power_injections, AdmittanceMatrix};

/// Absolute tolerance of the adaptive integrator.
pub const ATOL: f64 = 1e-9;
/// Relative tolerance of the adaptive integrator.
pub const RTOL: f64 = 1e-7;
/// Fault-on duration used when a ground fault specifies no clearing time.
pub const DEFAULT_FAULT_DURATION: f64 = 0.1;

/// What pushes the system away from its equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Disturbance {
    /// Instantaneous offset of one device state channel at `t = 0`.
    StatePerturbation {
        bus: BusId,
        /// 0-based index into the device's state vector.
        channel: usize,
        magnitude: f64,
    },
    /// Shunt conductance `1/r_fault` added at `bus` while the fault is on.
    GroundFault {
        bus: BusId,
        /// Fault resistance in per-unit; must be positive.
        r_fault: f64,
        /// Fault inception time, seconds.
        t_on: f64,
        /// Fault clearing time; defaults to `t_on + 0.1 s` when omitted.
        #[serde(default)]
        t_off: Option<f64>,
    },
}

impl Disturbance {
    /// Fault window `(t_on, t_off)` with the default duration applied;
    /// `None` for non-fault disturbances.
    pub fn fault_window(&self) -> Option<(f64, f64)> {
        match self {
            Disturbance::GroundFault { t_on, t_off, .. } => {
                Some((*t_on, t_off.unwrap_or(t_on + DEFAULT_FAULT_DURATION)))
            }
            Disturbance::StatePerturbation { .. } => None,
        }
    }
}

/// One simulation experiment: horizon, step cap, and an optional disturbance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Simulation horizon, seconds.
    pub t_end: f64,
    /// Upper bound on the adaptive step, seconds.
    pub dt_max: f64,
    /// Disturbance, if any; `None` leaves the system at its equilibrium.
    #[serde(default)]
    pub disturbance: Option<Disturbance>,
}

/// Per-bus algebraic outputs at one time sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutputSample {
    /// Voltage angle, radians.
    pub theta: f64,
    /// Voltage magnitude, per-unit.
    pub v: f64,
    /// Active-power injection, per-unit.
    pub p: f64,
    /// Reactive-power injection, per-unit.
    pub q: f64,
}

/// Result of one simulation run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Strictly increasing sample times, starting at `0`.
    pub times: Vec<f64>,
    /// Full stacked state at each sample (device states in ascending bus
    /// order).
    pub states: Vec<DVector<f64>>,
    /// Per-sample, per-device outputs, ascending bus order.
    pub outputs: Vec<Vec<OutputSample>>,
    /// Per-sample network energy term `½ ŷᵀ(S̄_net + S̄_dev) ŷ` in deviation
    /// outputs `ŷ = y − y*`.
    pub v_net_trace: Vec<f64>,
    /// Whether the fault was on during the segment that produced each
    /// sample. Samples at the switching instants belong to the segment they
    /// close.
    pub fault_active: Vec<bool>,
    /// Equilibrium state stack the run was centered on.
    pub x_star: DVector<f64>,
    /// Equilibrium outputs, interleaved `(θ₁, V₁, θ₂, V₂, …)`.
    pub y_star: DVector<f64>,
    /// Position of each bus's states inside the stacked vector.
    pub state_map: BTreeMap<BusId, Range<usize>>,
}

impl Trajectory {
    /// Largest infinity-norm deviation from the equilibrium over all samples.
    pub fn max_deviation(&self) -> f64 {
        self.states
            .iter()
            .map(|x| (x - &self.x_star).amax())
            .fold(0.0, f64::max)
    }
}

/// Equilibrium of the interconnected system: per-device steady states plus
/// the network operating point they share.
#[derive(Clone, Debug)]
pub struct SystemEquilibrium {
    /// Per-device steady states, ascending bus order.
    pub device_states: Vec<DeviceState>,
    /// Matching constant references (field voltage, droop targets, …).
    pub device_refs: Vec<DeviceRefs>,
    /// Bus voltage angles, radians.
    pub theta: DVector<f64>,
    /// Bus voltage magnitudes, per-unit.
    pub v: DVector<f64>,
}

impl SystemEquilibrium {
    /// Reads the equilibrium off a fully dynamic case whose device setpoints
    /// agree with the network injections at the bus setpoints (the shape the
    /// preparation pipeline produces).
    pub fn from_case(case: &PowerSystemCase) -> Result<Self> {
        ensure_all_dynamic(case)?;
        let n = case.buses.len();
        let mut device_states = Vec::with_capacity(n);
        let mut device_refs = Vec::with_capacity(n);
        for spec in case.devices.values() {
            let (state, refs) = device_steady_state(spec);
            device_states.push(state);
            device_refs.push(refs);
        }
        let theta = DVector::from_fn(n, |i, _| case.buses[i].theta_setpoint);
        let v = DVector::from_fn(n, |i, _| case.buses[i].v_setpoint);
        Ok(SystemEquilibrium { device_states, device_refs, theta, v })
    }

    /// Stacks the device states into one vector, ascending bus order.
    pub fn stacked_state(&self) -> DVector<f64> {
        let dim: usize = self.device_states.iter().map(DeviceState::dim).sum();
        let mut x = DVector::zeros(dim);
        let mut offset = 0;
        for state in &self.device_states {
            let d = state.dim();
            state.write_to(&mut x.as_mut_slice()[offset..offset + d]);
            offset += d;
        }
        x
    }
}

fn ensure_all_dynamic(case: &PowerSystemCase) -> Result<()> {
    let n = case.buses.len();
    if case.devices.len() != n {
        return Err(Error::Validation(format!(
            "simulation requires every bus to carry a device; case has {n} buses and {} devices \
             (reduce the network first)",
            case.devices.len()
        )));
    }
    Ok(())
}

/// Returns a copy of `y` with the shunt conductance `1/r_fault` added on the
/// diagonal at the faulted bus; every other entry is untouched. The input is
/// not modified, so clearing the fault means returning to the original
/// matrix — bit-exact by construction.
pub fn apply_fault(y: &AdmittanceMatrix, bus: BusId, r_fault: f64) -> Result<AdmittanceMatrix> {
    if !(r_fault > 0.0) {
        return Err(Error::Validation(format!(
            "fault resistance must be positive, got {r_fault}"
        )));
    }
    let n = y.n();
    if bus == 0 || bus > n {
        return Err(Error::Validation(format!("fault bus {bus} outside 1..={n}")));
    }
    let mut faulted = y.clone();
    faulted.g[(bus - 1, bus - 1)] += 1.0 / r_fault;
    Ok(faulted)
}

/// Dormand–Prince 5(4) tableau: nodes, stage coefficients, 5th-order weights
/// and the embedded 4th-order weights. The last stage row equals the 5th-order
/// weights, so the final stage derivative is reused as the first stage of the
/// next step.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `x' = f(t, x)` from `t0` to `t1` with an adaptive embedded
/// Runge–Kutta 5(4) pair, calling `record` after every accepted step (the
/// caller records the initial point). Domain errors raised by `f` reject the
/// step; if the step size underflows while they persist, the last one is
/// reported with the time reached.
fn integrate_segment<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    x0: DVector<f64>,
    dt_max: f64,
    mut record: S,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> Result<()>,
    S: FnMut(f64, &DVector<f64>),
{
    let n = x0.len();
    let mut t = t0;
    let mut x = x0;
    let mut k: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(n)).collect();
    f(t, &x, &mut k[0]).map_err(|e| at_time(e, t))?;

    let mut stage = DVector::zeros(n);
    let mut x_new = DVector::zeros(n);
    let mut h = (t1 - t0).min(dt_max).min(1e-3);
    let mut last_domain: Option<String> = None;

    while t < t1 {
        h = h.min(dt_max).min(t1 - t);
        if h < 1e-14 * t.abs().max(1.0) {
            let message = last_domain
                .take()
                .unwrap_or_else(|| "step size underflow (stiff blow-up)".into());
            return Err(Error::Integration { time: t, message });
        }

        let mut rejected_by_domain = false;
        for s in 1..7 {
            stage.copy_from(&x);
            for (j, kj) in k.iter().enumerate().take(s) {
                stage.axpy(DP_A[s - 1][j] * h, kj, 1.0);
            }
            if s == 6 {
                x_new.copy_from(&stage);
            }
            match f(t + DP_C[s] * h, &stage, &mut k[s]) {
                Ok(()) => {}
                Err(Error::Domain(msg)) => {
                    last_domain = Some(msg);
                    rejected_by_domain = true;
                    break;
                }
                Err(other) => return Err(at_time(other, t)),
            }
        }

        let err = if rejected_by_domain {
            f64::INFINITY
        } else {
            let mut acc = 0.0;
            for i in 0..n {
                let e: f64 = (0..7).map(|s| (DP_B5[s] - DP_B4[s]) * k[s][i]).sum::<f64>() * h;
                let scale = ATOL + RTOL * x[i].abs().max(x_new[i].abs());
                acc += (e / scale).powi(2);
            }
            (acc / n as f64).sqrt()
        };

        if err.is_finite() && err <= 1.0 {
            t += h;
            x.copy_from(&x_new);
            k.swap(0, 6);
            record(t, &x);
            last_domain = None;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else if err.is_finite() {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 0.9);
        } else {
            h *= 0.2;
        }
    }
    Ok(x)
}

fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::Domain(message) => Error::Integration { time: t, message },
        other => other,
    }
}

/// Angles and voltages read off the stacked state, ascending bus order.
fn outputs_of_state(
    specs: &[&DeviceSpec],
    ranges: &[Range<usize>],
    x: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = specs.len();
    let mut theta = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let out = device_output(specs[i], &x.as_slice()[ranges[i].clone()]);
        theta[i] = out[0];
        v[i] = out[1];
    }
    (theta, v)
}

/// Simulates the interconnected system around `equilibrium` under the given
/// scenario, building the admittance matrix from the case lines. All buses
/// must carry devices (run the preparation pipeline first).
pub fn simulate(
    case: &PowerSystemCase,
    equilibrium: &SystemEquilibrium,
    scenario: &Scenario,
) -> Result<Trajectory> {
    let y = build_admittance(case)?;
    simulate_on(case, &y, equilibrium, scenario)
}

/// Like [`simulate`], but over an explicit admittance matrix — the form a
/// Kron-reduced network takes, where folded loads put conductance on the
/// diagonal that no line list can express. During a fault window the matrix
/// is swapped for the faulted copy and restored — bit-exact — afterwards.
pub fn simulate_on(
    case: &PowerSystemCase,
    y: &AdmittanceMatrix,
    equilibrium: &SystemEquilibrium,
    scenario: &Scenario,
) -> Result<Trajectory> {
    ensure_all_dynamic(case)?;
    let n = case.buses.len();
    if y.n() != n {
        return Err(Error::Dimension(format!(
            "admittance matrix is {}×{} but the case has {n} buses",
            y.n(),
            y.n()
        )));
    }
    if !(scenario.t_end > 0.0) || !scenario.t_end.is_finite() {
        return Err(Error::Validation(format!(
            "simulation horizon must be positive and finite, got {}",
            scenario.t_end
        )));
    }
    if !(scenario.dt_max > 0.0) || !scenario.dt_max.is_finite() {
        return Err(Error::Validation(format!(
            "dt_max must be positive and finite, got {}",
            scenario.dt_max
        )));
    }
    if equilibrium.device_states.len() != n
        || equilibrium.theta.len() != n
        || equilibrium.v.len() != n
    {
        return Err(Error::Dimension(format!(
            "equilibrium covers {} devices but the case has {n} buses",
            equilibrium.device_states.len()
        )));
    }

    let mut state_map: BTreeMap<BusId, Range<usize>> = BTreeMap::new();
    let mut offset = 0usize;
    for (bus, spec) in &case.devices {
        let d = spec.state_dim();
        state_map.insert(*bus, offset..offset + d);
        offset += d;
    }
    let specs: Vec<&DeviceSpec> = case.devices.values().collect();
    let bus_ids: Vec<BusId> = case.devices.keys().copied().collect();
    let ranges: Vec<Range<usize>> = bus_ids.iter().map(|b| state_map[b].clone()).collect();

    // Energy weighting for the network term of the candidate: symmetric parts
    // of the device and network passivity matrices at the equilibrium.
    let odpms: Vec<_> =
        case.devices.values().map(|spec| device_odpm(spec, spec.setpoints())).collect();
    let s_dev = assemble_sdev(&odpms);
    let idpm = build_idpm_from(y, &equilibrium.theta, &equilibrium.v)?;
    let s_bar = &idpm.sym + linalg::symmetric_part(&s_dev)?;

    let x_star = equilibrium.stacked_state();
    let y_star = DVector::from_fn(2 * n, |i, _| {
        if i % 2 == 0 { equilibrium.theta[i / 2] } else { equilibrium.v[i / 2] }
    });

    // Initial state and fault segments.
    let mut x0 = x_star.clone();
    let mut segments: Vec<(f64, f64, AdmittanceMatrix, bool)> = Vec::new();
    match &scenario.disturbance {
        Some(Disturbance::StatePerturbation { bus, channel, magnitude }) => {
            let range = state_map.get(bus).ok_or_else(|| {
                Error::Validation(format!("state perturbation targets unknown bus {bus}"))
            })?;
            if *channel >= range.len() {
                return Err(Error::Validation(format!(
                    "bus {bus} has {} state channels, perturbation targets channel {channel}",
                    range.len()
                )));
            }
            if !magnitude.is_finite() {
                return Err(Error::Validation(format!(
                    "perturbation magnitude must be finite, got {magnitude}"
                )));
            }
            x0[range.start + channel] += magnitude;
            segments.push((0.0, scenario.t_end, y.clone(), false));
        }
        Some(d @ Disturbance::GroundFault { bus, r_fault, .. }) => {
            let (t_on, t_off) = d.fault_window().expect("ground fault has a window");
            if !(0.0 < t_on && t_on < t_off && t_off < scenario.t_end) {
                return Err(Error::Validation(format!(
                    "fault window must satisfy 0 < t_on < t_off < t_end, \
                     got t_on = {t_on}, t_off = {t_off}, t_end = {}",
                    scenario.t_end
                )));
            }
            let faulted = apply_fault(y, *bus, *r_fault)?;
            segments.push((0.0, t_on, y.clone(), false));
            segments.push((t_on, t_off, faulted, true));
            segments.push((t_off, scenario.t_end, y.clone(), false));
        }
        None => segments.push((0.0, scenario.t_end, y.clone(), false)),
    }

    let rhs = |y_active: &AdmittanceMatrix,
               x: &DVector<f64>,
               dx: &mut DVector<f64>|
     -> Result<()> {
        let (theta, v) = outputs_of_state(&specs, &ranges, x);
        let (p, q) = power_injections(y_active, &theta, &v);
        for i in 0..specs.len() {
            let u = [-p[i], -q[i] / v[i]];
            device_rhs(
                specs[i],
                &x.as_slice()[ranges[i].clone()],
                u,
                &equilibrium.device_refs[i],
                &mut dx.as_mut_slice()[ranges[i].clone()],
            )
            .map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("bus {}: {msg}", bus_ids[i])),
                other => other,
            })?;
        }
        Ok(())
    };

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut outputs = Vec::new();
    let mut v_net_trace = Vec::new();
    let mut fault_active = Vec::new();

    {
        let mut record = |t: f64, x: &DVector<f64>, y_active: &AdmittanceMatrix, on: bool| {
            let (theta, v) = outputs_of_state(&specs, &ranges, x);
            let (p, q) = power_injections(y_active, &theta, &v);
            let sample: Vec<OutputSample> = (0..n)
                .map(|i| OutputSample { theta: theta[i], v: v[i], p: p[i], q: q[i] })
                .collect();
            let y_hat = DVector::from_fn(2 * n, |i, _| {
                (if i % 2 == 0 { theta[i / 2] } else { v[i / 2] }) - y_star[i]
            });
            v_net_trace.push(0.5 * (&s_bar * &y_hat).dot(&y_hat));
            times.push(t);
            states.push(x.clone());
            outputs.push(sample);
            fault_active.push(on);
        };

        record(0.0, &x0, &segments[0].2, segments[0].3);
        let mut x = x0;
        for (t0, t1, y_seg, on) in &segments {
            x = integrate_segment(
                |_t, xs, dx| rhs(y_seg, xs, dx),
                *t0,
                *t1,
                x,
                scenario.dt_max,
                |t, xs| record(t, xs, y_seg, *on),
            )?;
        }
    }

    Ok(Trajectory {
        times,
        states,
        outputs,
        v_net_trace,
        fault_active,
        x_star,
        y_star,
        state_map,
    })
}

/// Per-device quadratic weights for the stored-energy surrogates: identity
/// scaled by each device's time constants — `diag(1, M, T_d)` for a
/// synchronous generator, `diag(τ₁, τ₂)` for a droop device.
pub fn default_surrogate_weights(case: &PowerSystemCase) -> Vec<DMatrix<f64>> {
    case.devices
        .values()
        .map(|spec| match spec {
            DeviceSpec::Sg { params, .. } => {
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, params.m, params.t_d]))
            }
            DeviceSpec::Cd { params, .. } | DeviceSpec::Qd { params, .. } => {
                DMatrix::from_diagonal(&DVector::from_vec(vec![params.tau1, params.tau2]))
            }
        })
        .collect()
}

/// Time series of the energy candidate along a trajectory.
#[derive(Clone, Debug)]
pub struct SurrogateTrace {
    /// Candidate value at each trajectory sample.
    pub values: Vec<f64>,
    /// Largest forward difference `values[k+1] − values[k]`; `0` for a
    /// single-sample trace.
    pub max_forward_difference: f64,
    /// Whether every forward difference stays at or below the slack.
    pub non_increasing: bool,
}

/// Evaluates the candidate `Σᵢ ½ x̂ᵢᵀ Pᵢ x̂ᵢ + ½ ŷᵀ(S̄_net + S̄_dev) ŷ` along a
/// trajectory, in deviation coordinates around the trajectory's equilibrium.
/// The device storages `Pᵢ` are quadratic surrogates (the interconnection
/// theory guarantees suitable storages exist without publishing them), so a
/// violation of monotonicity indicts the surrogate, not the verdict; the
/// result reports the largest forward difference alongside the flag.
pub fn lyapunov_surrogate_trace(
    traj: &Trajectory,
    s_dev: &DMatrix<f64>,
    s_net: &DMatrix<f64>,
    device_weights: &[DMatrix<f64>],
    slack: f64,
) -> Result<SurrogateTrace> {
    let dim = traj.x_star.len();
    let covered: usize = device_weights.iter().map(DMatrix::nrows).sum();
    if covered != dim || device_weights.iter().any(|w| w.nrows() != w.ncols()) {
        return Err(Error::Dimension(format!(
            "surrogate weights cover {covered} states but the trajectory has {dim}"
        )));
    }
    for w in device_weights {
        let sym = linalg::symmetric_part(w)?;
        if linalg::min_symmetric_eigenvalue(&sym)? <= 0.0 {
            return Err(Error::Validation(
                "surrogate storage weights must be positive definite".into(),
            ));
        }
    }
    let n2 = traj.y_star.len();
    if s_dev.nrows() != n2 || s_dev.ncols() != n2 || s_net.nrows() != n2 || s_net.ncols() != n2 {
        return Err(Error::Dimension(format!(
            "passivity matrices must be {n2}×{n2} to match the trajectory outputs"
        )));
    }
    let s_bar = linalg::symmetric_part(s_net)? + linalg::symmetric_part(s_dev)?;

    let mut values = Vec::with_capacity(traj.times.len());
    for (k, x) in traj.states.iter().enumerate() {
        let x_hat = x - &traj.x_star;
        let mut acc = 0.0;
        let mut off = 0usize;
        for w in device_weights {
            let d = w.nrows();
            let xs = x_hat.rows(off, d).clone_owned();
            acc += 0.5 * (w * &xs).dot(&xs);
            off += d;
        }
        let y_hat = DVector::from_fn(n2, |i, _| {
            let sample = &traj.outputs[k][i / 2];
            (if i % 2 == 0 { sample.theta } else { sample.v }) - traj.y_star[i]
        });
        acc += 0.5 * (&s_bar * &y_hat).dot(&y_hat);
        values.push(acc);
    }

    let max_forward_difference = if values.len() < 2 {
        0.0
    } else {
        values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    };
    let non_increasing = max_forward_difference <= slack;
    Ok(SurrogateTrace { values, max_forward_difference, non_increasing })
}

/// Fixed-point decimal rendering with the given number of significant digits,
/// used by the CSV writers.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Renders a trajectory as CSV: `time`, then `theta_<id>, V_<id>, P_<id>,
/// Q_<id>` per bus (ascending bus id), and the supplied energy surrogate as
/// the final `v_surrogate` column. Values use fixed-point decimals with 12
/// significant digits.
pub fn trajectory_csv(traj: &Trajectory, surrogate: &[f64]) -> Result<String> {
    if surrogate.len() != traj.times.len() {
        return Err(Error::Dimension(format!(
            "surrogate series has {} samples, trajectory has {}",
            surrogate.len(),
            traj.times.len()
        )));
    }
    let bus_ids: Vec<BusId> = traj.state_map.keys().copied().collect();
    let mut header = String::from("time");
    for id in &bus_ids {
        header.push_str(&format!(",theta_{id},V_{id},P_{id},Q_{id}"));
    }
    header.push_str(",v_surrogate");

    let mut out = header;
    out.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = format_significant(*t, 12);
        for sample in &traj.outputs[k] {
            for value in [sample.theta, sample.v, sample.p, sample.q] {
                row.push(',');
                row.push_str(&format_significant(value, 12));
            }
        }
        row.push(',');
        row.push_str(&format_significant(surrogate[k], 12));
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}
