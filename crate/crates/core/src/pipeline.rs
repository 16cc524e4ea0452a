//! End-to-end orchestration: power flow, network reduction, passivity
//! matrices, criteria, and the parameter studies built on top of them.
//!
//! [`prepare_operating_point`] turns a raw case into a reduced, all-dynamic
//! network with an exact equilibrium: it solves the power flow, converts
//! loads into constant admittances at the solved voltages, eliminates the
//! passive buses, and then re-reads every device setpoint from the reduced
//! network so that device fixed points and network injections agree to
//! machine precision. Everything downstream — analysis, sweeps, boundary
//! searches, simulation — starts from that operating point.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::case::{
    ensure_valid, BusId, BusKind, BusRecord, DeviceSpec, PowerSystemCase, Setpoints,
};
use crate::criteria::{
    assemble_sdev, fully_distributed_check, semi_distributed_check, DeviceReport,
    StabilityVerdict,
};
use crate::devices::{device_odpm, Odpm, SIGMA_MARGIN};
use crate::error::{Error, Result};
use crate::network::{
    build_admittance, build_idpm_from, kron_reduce, power_injections, solve_power_flow_opts,
    AdmittanceMatrix, Idpm, PowerFlowOptions, PowerFlowSolution,
};
use crate::oracle::{assemble_closed_loop, eigen_verdict, Spectrum, EIGEN_TOLERANCE};
use crate::sim::SystemEquilibrium;

/// A prepared operating point: the solved full network plus the reduced,
/// all-dynamic model every criterion operates on.
#[derive(Clone, Debug)]
pub struct OperatingPoint {
    /// Power-flow solution over the full (unreduced) network.
    pub solution: PowerFlowSolution,
    /// Reduced case: dynamic buses only, renumbered `1..=N`, zero loads
    /// (folded into the admittance), setpoints equal to the reduced
    /// network's injections at the solved voltages. Its `lines` list is
    /// empty — the reduced network lives in [`OperatingPoint::admittance`].
    pub reduced: PowerSystemCase,
    /// Reduced admittance matrix with all loads folded in as constant
    /// admittances at the solved voltages.
    pub admittance: AdmittanceMatrix,
    /// Reduced bus position (0-based) → original bus id.
    pub bus_map: Vec<BusId>,
    /// Per-device passivity matrices at the reduced equilibrium, ascending
    /// bus order.
    pub odpms: Vec<Odpm>,
    /// Network-side passivity matrix at the reduced equilibrium.
    pub idpm: Idpm,
}

impl OperatingPoint {
    /// Scalar passivity index of every device, ascending bus order.
    pub fn device_indices(&self) -> Vec<f64> {
        self.odpms.iter().map(Odpm::min_symmetric_eigenvalue).collect()
    }

    /// Buses whose passivity-matrix validity conditions are violated, with
    /// the failed conditions.
    pub fn invalid_devices(&self) -> Vec<(BusId, Vec<String>)> {
        self.bus_map
            .iter()
            .zip(&self.odpms)
            .filter(|(_, o)| !o.valid)
            .map(|(bus, o)| (*bus, o.violated_conditions.clone()))
            .collect()
    }

    /// The reduced system's equilibrium, ready for simulation.
    pub fn equilibrium(&self) -> Result<SystemEquilibrium> {
        SystemEquilibrium::from_case(&self.reduced)
    }
}

/// Validate, solve the power flow, and reduce to the dynamic buses. See the
/// module docs for the exact steps.
pub fn prepare_operating_point(case: &PowerSystemCase) -> Result<OperatingPoint> {
    prepare_operating_point_opts(case, &PowerFlowOptions::default())
}

/// [`prepare_operating_point`] with explicit power-flow options (warm starts
/// across load scales, looser tolerances, …).
pub fn prepare_operating_point_opts(
    case: &PowerSystemCase,
    opts: &PowerFlowOptions,
) -> Result<OperatingPoint> {
    ensure_valid(case)?;
    let y_full = build_admittance(case)?;
    let solution = solve_power_flow_opts(case, &y_full, opts)?;

    // Loads become constant admittances at the solved voltages: a load
    // drawing P + jQ at voltage magnitude V is the shunt (P − jQ)/V².
    let eliminate: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.bus_kind == BusKind::Passive)
        .map(|b| b.id - 1)
        .collect();
    let shunts: Vec<Complex64> = eliminate
        .iter()
        .map(|&i| {
            let bus = &case.buses[i];
            let v2 = solution.v[i] * solution.v[i];
            Complex64::new(bus.p_load / v2, -bus.q_load / v2)
        })
        .collect();
    let (mut y_red, retained) = kron_reduce(&y_full, &eliminate, &shunts)?;
    for (k, &orig) in retained.iter().enumerate() {
        let bus = &case.buses[orig];
        if bus.p_load != 0.0 || bus.q_load != 0.0 {
            let v2 = solution.v[orig] * solution.v[orig];
            y_red.g[(k, k)] += bus.p_load / v2;
            y_red.b[(k, k)] -= bus.q_load / v2;
        }
    }

    // Re-read the equilibrium from the reduced network so device fixed
    // points and network injections agree to machine precision rather than
    // to the power-flow tolerance.
    let n_red = retained.len();
    let theta_red = DVector::from_fn(n_red, |k, _| solution.theta[retained[k]]);
    let v_red = DVector::from_fn(n_red, |k, _| solution.v[retained[k]]);
    let (p_red, q_red) = power_injections(&y_red, &theta_red, &v_red);

    let mut reduced = PowerSystemCase {
        base_mva: case.base_mva,
        buses: Vec::with_capacity(n_red),
        lines: Vec::new(),
        devices: Default::default(),
    };
    let mut bus_map = Vec::with_capacity(n_red);
    for (k, &orig) in retained.iter().enumerate() {
        let old_id = case.buses[orig].id;
        bus_map.push(old_id);
        reduced.buses.push(BusRecord {
            id: k + 1,
            bus_kind: BusKind::Dynamic,
            v_setpoint: v_red[k],
            theta_setpoint: theta_red[k],
            p_load: 0.0,
            q_load: 0.0,
        });
        let mut spec = case
            .devices
            .get(&old_id)
            .ok_or_else(|| {
                Error::Validation(format!("dynamic bus {old_id} has no device"))
            })?
            .clone();
        *spec.setpoints_mut() =
            Setpoints { p: p_red[k], q: q_red[k], theta: theta_red[k], v: v_red[k] };
        reduced.devices.insert(k + 1, spec);
    }

    let odpms: Vec<Odpm> =
        reduced.devices.values().map(|s| device_odpm(s, s.setpoints())).collect();
    let idpm = build_idpm_from(&y_red, &theta_red, &v_red)?;
    Ok(OperatingPoint { solution, reduced, admittance: y_red, bus_map, odpms, idpm })
}

/// Full analysis of one case: both criteria plus the eigenvalue oracle.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub operating_point: OperatingPoint,
    /// Per-device matrices and scalar indices, ascending bus order
    /// (original bus ids).
    pub device_reports: Vec<DeviceReport>,
    pub semi: StabilityVerdict,
    pub fully: StabilityVerdict,
    pub eigen: StabilityVerdict,
    /// Closed-loop eigenvalues behind the oracle verdict.
    pub spectrum: Spectrum,
}

/// Run the whole chain: power flow → reduction → passivity matrices → both
/// criteria → eigenvalue oracle.
pub fn analyze_case(case: &PowerSystemCase) -> Result<Analysis> {
    let op = prepare_operating_point(case)?;
    let semi = semi_distributed_check(&assemble_sdev(&op.odpms), &op.idpm)?;
    let fully = fully_distributed_check(&op.device_indices(), op.idpm.sigma_net)?;
    let model = assemble_closed_loop(&op.reduced, &op.idpm.matrix)?;
    let (spectrum, eigen) = eigen_verdict(&model, EIGEN_TOLERANCE)?;
    let device_reports = op
        .bus_map
        .iter()
        .zip(op.reduced.devices.values())
        .zip(&op.odpms)
        .map(|((bus, spec), odpm)| DeviceReport {
            bus_id: *bus,
            kind: spec.kind_label().to_string(),
            odpm: odpm.clone(),
            scalar_index: odpm.min_symmetric_eigenvalue(),
        })
        .collect();
    Ok(Analysis { operating_point: op, device_reports, semi, fully, eigen, spectrum })
}

const SG_PARAM_KEYS: [&str; 13] = [
    "M", "D", "T_d", "x_d", "x_dp", "K_I", "K_p", "K_E", "K_wv", "K_vtheta", "K_vomega",
    "sigma1", "sigma2",
];
const DROOP_PARAM_KEYS: [&str; 7] =
    ["tau1", "tau2", "D1", "D2", "K_wv", "K_vtheta", "K_vomega"];
const SETPOINT_KEYS: [&str; 4] = ["P", "Q", "theta", "V"];

/// Returns a copy of the case with one numeric device field replaced. Paths
/// use dotted syntax `devices.<bus>.<field>`; a bare `<field>` is looked up
/// among the device's parameters first, then its setpoints, and the explicit
/// forms `devices.<bus>.params.<field>` / `devices.<bus>.setpoints.<field>`
/// are accepted too.
pub fn apply_parameter(
    case: &PowerSystemCase,
    path: &str,
    value: f64,
) -> Result<PowerSystemCase> {
    let segments: Vec<&str> = path.split('.').collect();
    let bad_path = |why: &str| {
        Error::Validation(format!(
            "parameter path {path:?} {why}; expected devices.<bus>.<field>"
        ))
    };
    if segments.len() < 3 || segments.len() > 4 || segments[0] != "devices" {
        return Err(bad_path("is malformed"));
    }
    let bus: BusId = segments[1]
        .parse()
        .map_err(|_| bad_path("has a non-numeric bus id"))?;
    let spec = case
        .devices
        .get(&bus)
        .ok_or_else(|| Error::Validation(format!("no device at bus {bus} for path {path:?}")))?;

    let param_keys: &[&str] = match spec {
        DeviceSpec::Sg { .. } => &SG_PARAM_KEYS,
        DeviceSpec::Cd { .. } | DeviceSpec::Qd { .. } => &DROOP_PARAM_KEYS,
    };
    let (section, field) = match segments.len() {
        3 => {
            let field = segments[2];
            if param_keys.contains(&field) {
                ("params", field)
            } else if SETPOINT_KEYS.contains(&field) {
                ("setpoints", field)
            } else {
                return Err(Error::Validation(format!(
                    "device at bus {bus} ({}) has no field {field:?}",
                    spec.kind_label()
                )));
            }
        }
        _ => {
            let (section, field) = (segments[2], segments[3]);
            let known = match section {
                "params" => param_keys.contains(&field),
                "setpoints" => SETPOINT_KEYS.contains(&field),
                _ => return Err(bad_path("names an unknown section")),
            };
            if !known {
                return Err(Error::Validation(format!(
                    "device at bus {bus} ({}) has no {section} field {field:?}",
                    spec.kind_label()
                )));
            }
            (section, field)
        }
    };

    let mut doc = serde_json::to_value(spec)
        .map_err(|e| Error::Validation(format!("device at bus {bus} not serializable: {e}")))?;
    doc[section][field] = serde_json::json!(value);
    let new_spec: DeviceSpec = serde_json::from_value(doc)
        .map_err(|e| Error::Validation(format!("cannot set {path} = {value}: {e}")))?;

    let mut out = case.clone();
    out.devices.insert(bus, new_spec);
    Ok(out)
}

/// Returns a copy of the case with the total load scaled by `s`: bus loads
/// and device active/reactive setpoints all scale together, so generation
/// tracks the scaled demand (the slack still absorbs the loss mismatch).
pub fn scale_case(case: &PowerSystemCase, s: f64) -> Result<PowerSystemCase> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Validation(format!(
            "load scale must be positive and finite, got {s}"
        )));
    }
    let mut scaled = case.clone();
    for bus in &mut scaled.buses {
        bus.p_load *= s;
        bus.q_load *= s;
    }
    for spec in scaled.devices.values_mut() {
        let sp = spec.setpoints_mut();
        sp.p *= s;
        sp.q *= s;
    }
    Ok(scaled)
}

/// One axis of a 2-D parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    /// Dotted parameter path, e.g. `devices.1.sigma1`.
    pub path: String,
    pub start: f64,
    pub stop: f64,
    /// Number of grid points along this axis; at least 2.
    pub steps: usize,
}

impl SweepAxis {
    /// The evenly spaced axis values, endpoints included.
    pub fn values(&self) -> Vec<f64> {
        let steps = self.steps.max(2);
        (0..steps)
            .map(|k| self.start + (self.stop - self.start) * k as f64 / (steps - 1) as f64)
            .collect()
    }
}

/// Which verdicts a sweep evaluates; skipped ones stay empty in the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerdictSet {
    pub eigen: bool,
    pub semi: bool,
    pub fully: bool,
}

impl Default for VerdictSet {
    fn default() -> Self {
        VerdictSet { eigen: true, semi: true, fully: true }
    }
}

/// A 2-D stability-region sweep over two device parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    pub verdicts: VerdictSet,
}

impl SweepSpec {
    /// Checks step counts and resolves both paths against the case.
    pub fn validate(&self, case: &PowerSystemCase) -> Result<()> {
        for axis in [&self.axis1, &self.axis2] {
            if axis.steps < 2 {
                return Err(Error::Validation(format!(
                    "axis {:?} needs at least 2 steps, got {}",
                    axis.path, axis.steps
                )));
            }
            if !axis.start.is_finite() || !axis.stop.is_finite() {
                return Err(Error::Validation(format!(
                    "axis {:?} has a non-finite range",
                    axis.path
                )));
            }
            apply_parameter(case, &axis.path, axis.start)?;
        }
        Ok(())
    }

    /// Row-major grid of `(p1, p2)` points: axis1 varies slowest.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let a1 = self.axis1.values();
        let a2 = self.axis2.values();
        let mut out = Vec::with_capacity(a1.len() * a2.len());
        for p1 in &a1 {
            for p2 in &a2 {
                out.push((*p1, *p2));
            }
        }
        out
    }
}

/// Verdict code: stable / certified.
pub const CODE_CERTIFIED: i8 = 1;
/// Verdict code: not certified (criteria) or marginal (oracle).
pub const CODE_NOT_CERTIFIED: i8 = 0;
/// Verdict code: the oracle found an eigenvalue in the right half plane.
pub const CODE_UNSTABLE: i8 = -1;
/// Verdict code: the point could not be evaluated.
pub const CODE_ERROR: i8 = 9;

/// One evaluated grid point. Skipped verdicts are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub p1: f64,
    pub p2: f64,
    pub eigen: Option<i8>,
    pub semi: Option<i8>,
    pub fully: Option<i8>,
}

/// Evaluates one grid point: applies both parameters, reruns the pipeline,
/// and encodes the verdicts. Pipeline failures yield [`CODE_ERROR`] on every
/// requested verdict instead of aborting the sweep. A certificate whose
/// validity conditions fail at the point is reported *not certified* — the
/// criteria's preconditions are part of the certificate.
pub fn evaluate_sweep_point(
    case: &PowerSystemCase,
    spec: &SweepSpec,
    p1: f64,
    p2: f64,
) -> SweepPoint {
    let want = spec.verdicts;
    let evaluated = (|| -> Result<(Option<i8>, Option<i8>, Option<i8>)> {
        let case = apply_parameter(case, &spec.axis1.path, p1)?;
        let case = apply_parameter(&case, &spec.axis2.path, p2)?;
        let op = prepare_operating_point(&case)?;
        let all_valid = op.odpms.iter().all(|o| o.valid);
        let semi = if want.semi {
            let v = semi_distributed_check(&assemble_sdev(&op.odpms), &op.idpm)?;
            Some(if all_valid && v.certified { CODE_CERTIFIED } else { CODE_NOT_CERTIFIED })
        } else {
            None
        };
        let fully = if want.fully {
            let v = fully_distributed_check(&op.device_indices(), op.idpm.sigma_net)?;
            Some(if all_valid && v.certified { CODE_CERTIFIED } else { CODE_NOT_CERTIFIED })
        } else {
            None
        };
        let eigen = if want.eigen {
            let model = assemble_closed_loop(&op.reduced, &op.idpm.matrix)?;
            let (_, v) = eigen_verdict(&model, EIGEN_TOLERANCE)?;
            Some(if v.certified {
                CODE_CERTIFIED
            } else if v.unstable {
                CODE_UNSTABLE
            } else {
                CODE_NOT_CERTIFIED
            })
        } else {
            None
        };
        Ok((eigen, semi, fully))
    })();
    match evaluated {
        Ok((eigen, semi, fully)) => SweepPoint { p1, p2, eigen, semi, fully },
        Err(_) => SweepPoint {
            p1,
            p2,
            eigen: want.eigen.then_some(CODE_ERROR),
            semi: want.semi.then_some(CODE_ERROR),
            fully: want.fully.then_some(CODE_ERROR),
        },
    }
}

/// Load-scaling boundary comparison: range of the scale `s` and the number
/// of evenly spaced samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    pub s_min: f64,
    pub s_max: f64,
    pub samples: usize,
}

/// Outcome at one load scale: the minimal uniform diagonal passivity level
/// that certifies the semi-distributed criterion and the minimal level the
/// eigenvalue oracle accepts as stable. `error` records a power-flow or
/// bracket failure for this scale, in which case the levels are `None`.
#[derive(Clone, Debug)]
pub struct BoundaryRow {
    pub scale: f64,
    pub level_semi: Option<f64>,
    pub level_eigen: Option<f64>,
    pub error: Option<String>,
}

/// Bisection tolerance on the level axis.
pub const LEVEL_TOLERANCE: f64 = 1e-4;
/// Maximum bisection iterations per level search.
pub const LEVEL_MAX_ITERATIONS: usize = 40;
/// Largest level the bracket search will try before giving up.
const LEVEL_BRACKET_CAP: f64 = 1e4;

/// Rewrites every device to realize a uniform diagonal passivity level `ℓ`:
/// each passivity matrix becomes `diag(ℓ − ε, ℓ − ε)` with zero cross terms,
/// by solving the closed-form diagonal entries for the gains. Setpoints are
/// untouched, so the operating point survives. Fails when the level is not
/// realizable at a device's operating point.
pub fn with_uniform_level(reduced: &PowerSystemCase, level: f64) -> Result<PowerSystemCase> {
    if !(level > 0.0) {
        return Err(Error::Validation(format!("level must be positive, got {level}")));
    }
    let mut out = reduced.clone();
    for (bus, spec) in out.devices.iter_mut() {
        match spec {
            DeviceSpec::Sg { params, .. } => {
                params.k_i = level;
                params.k_e = level * (params.x_d - params.x_dp) - 1.0;
                params.sigma1 = Some(level - SIGMA_MARGIN);
                params.sigma2 = Some(level - SIGMA_MARGIN);
                params.k_wv = 0.0;
                params.k_vtheta = 0.0;
            }
            DeviceSpec::Cd { params, setpoints } => {
                let denom = level * setpoints.v * setpoints.v - setpoints.q;
                if denom <= 0.0 {
                    return Err(Error::Domain(format!(
                        "bus {bus}: level {level} is below the reactive operating point \
                         Q*/V*² = {:.6}",
                        setpoints.q / (setpoints.v * setpoints.v)
                    )));
                }
                params.d1 = 1.0 / level;
                params.d2 = setpoints.v / denom;
                params.k_wv = 0.0;
                params.k_vtheta = 0.0;
                params.k_vomega = 0.0;
            }
            DeviceSpec::Qd { params, .. } => {
                params.d1 = 1.0 / level;
                params.d2 = 1.0 / level;
                params.k_wv = 0.0;
                params.k_vtheta = 0.0;
                params.k_vomega = 0.0;
            }
        }
    }
    Ok(out)
}

/// Minimal level (within [`LEVEL_TOLERANCE`]) at which `certifies` holds,
/// found by doubling up to a bracket and bisecting. `certifies(level)`
/// failures below the bracket are treated as "not certified".
fn bisect_level(certifies: impl Fn(f64) -> bool) -> Result<f64> {
    let mut lo = 1e-3;
    if certifies(lo) {
        return Ok(lo);
    }
    let mut hi = 1.0;
    while !certifies(hi) {
        hi *= 2.0;
        if hi > LEVEL_BRACKET_CAP {
            return Err(Error::Validation(format!(
                "no level up to {LEVEL_BRACKET_CAP} certifies; bracket search failed"
            )));
        }
    }
    lo = lo.max(hi / 2.0).min(hi - LEVEL_TOLERANCE).max(1e-3);
    if certifies(lo) {
        lo = 1e-3;
    }
    for _ in 0..LEVEL_MAX_ITERATIONS {
        if hi - lo <= LEVEL_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if certifies(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// For each load scale, finds the minimal uniform diagonal passivity level
/// certifying the semi-distributed criterion and the minimal level the
/// eigenvalue oracle declares stable. The power flow is solved once per
/// scale (warm-started from the previous scale); the level searches reuse
/// the operating point, since the realized gains do not move it.
pub fn boundary_sweep(case: &PowerSystemCase, spec: &BoundarySpec) -> Result<Vec<BoundaryRow>> {
    if !(spec.s_min > 0.0) {
        return Err(Error::Validation(format!(
            "load scale range must start above 0, got {}",
            spec.s_min
        )));
    }
    if spec.s_max < spec.s_min {
        return Err(Error::Validation(format!(
            "load scale range is inverted: [{}, {}]",
            spec.s_min, spec.s_max
        )));
    }
    if spec.samples == 0 {
        return Err(Error::Validation("boundary sweep needs at least one sample".into()));
    }

    let mut rows = Vec::with_capacity(spec.samples);
    let mut warm: Option<(DVector<f64>, DVector<f64>)> = None;
    for k in 0..spec.samples {
        let s = if spec.samples == 1 {
            spec.s_min
        } else {
            spec.s_min + (spec.s_max - spec.s_min) * k as f64 / (spec.samples - 1) as f64
        };
        let scaled = scale_case(case, s)?;
        let opts = PowerFlowOptions { warm_start: warm.clone(), ..Default::default() };
        let op = match prepare_operating_point_opts(&scaled, &opts) {
            Ok(op) => op,
            Err(e) => {
                rows.push(BoundaryRow {
                    scale: s,
                    level_semi: None,
                    level_eigen: None,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        warm = Some((op.solution.theta.clone(), op.solution.v.clone()));

        let semi_at = |level: f64| -> bool {
            let Ok(leveled) = with_uniform_level(&op.reduced, level) else { return false };
            let odpms: Vec<Odpm> =
                leveled.devices.values().map(|d| device_odpm(d, d.setpoints())).collect();
            if odpms.iter().any(|o| !o.valid) {
                return false;
            }
            semi_distributed_check(&assemble_sdev(&odpms), &op.idpm)
                .map(|v| v.certified)
                .unwrap_or(false)
        };
        let eigen_at = |level: f64| -> bool {
            let Ok(leveled) = with_uniform_level(&op.reduced, level) else { return false };
            assemble_closed_loop(&leveled, &op.idpm.matrix)
                .and_then(|m| eigen_verdict(&m, EIGEN_TOLERANCE))
                .map(|(_, v)| v.certified)
                .unwrap_or(false)
        };

        let (level_semi, level_eigen, error) =
            match (bisect_level(semi_at), bisect_level(eigen_at)) {
                (Ok(ls), Ok(le)) => (Some(ls), Some(le), None),
                (ls, le) => {
                    let msg = [ls.err(), le.err()]
                        .into_iter()
                        .flatten()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join("; ");
                    (None, None, Some(msg))
                }
            };
        rows.push(BoundaryRow { scale: s, level_semi, level_eigen, error });
    }
    Ok(rows)
}
