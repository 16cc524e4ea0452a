//! Case model: the static description of a grid study case.
//!
//! A [`PowerSystemCase`] bundles buses, lines, and the dynamic devices
//! attached to a subset of buses. Cases come from the native JSON format
//! ([`native`]) or from a MATPOWER-style text file plus a device-assignment
//! file ([`matpower`]); both loaders normalize to the same in-memory types,
//! with all angles in radians and all powers in per-unit on `base_mva`.

pub mod matpower;
pub mod native;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based bus identifier. After loading, ids are unique and contiguous
/// (`1..=n`), and `buses` is sorted by id, so `id - 1` indexes every
/// bus-ordered matrix and vector in the crate.
pub type BusId = usize;

/// Whether a bus hosts a dynamic device or is a passive interconnection/load
/// bus (eliminated by Kron reduction before any stability analysis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Dynamic,
    Passive,
}

/// One bus of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: BusId,
    pub bus_kind: BusKind,
    /// Nominal voltage magnitude, per-unit. Used as the slack-bus voltage and
    /// as a fallback initial guess; positive.
    #[serde(rename = "V_setpoint")]
    pub v_setpoint: f64,
    /// Nominal voltage angle, radians.
    #[serde(rename = "theta_setpoint", default)]
    pub theta_setpoint: f64,
    /// Constant-power load drawn at the bus, per-unit.
    #[serde(rename = "P_load", default)]
    pub p_load: f64,
    #[serde(rename = "Q_load", default)]
    pub q_load: f64,
}

/// One branch of the network, a series impedance `r + jx` with total line
/// charging susceptance `b_shunt` split evenly between the two terminals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

/// Device power/voltage setpoints: the operating point the device regulates
/// toward. `p`/`q` are per-unit injections into the network, `theta` is in
/// radians, `v` is per-unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "theta")]
    pub theta: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

/// Synchronous-generator parameters (third-order flux-decay model with
/// frequency- and voltage-loop controls).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    /// Inertia constant.
    #[serde(rename = "M")]
    pub m: f64,
    /// Damping coefficient.
    #[serde(rename = "D")]
    pub d: f64,
    /// Transient open-circuit time constant of the voltage dynamics.
    #[serde(rename = "T_d")]
    pub t_d: f64,
    /// Synchronous reactance.
    #[serde(rename = "x_d")]
    pub x_d: f64,
    /// Transient reactance; must be below `x_d`.
    #[serde(rename = "x_dp")]
    pub x_dp: f64,
    /// Integral gain of the frequency self-loop.
    #[serde(rename = "K_I")]
    pub k_i: f64,
    /// Proportional gain of the frequency self-loop.
    #[serde(rename = "K_p", default)]
    pub k_p: f64,
    /// Proportional gain of the voltage self-loop.
    #[serde(rename = "K_E", default)]
    pub k_e: f64,
    /// Cross gain: internal-voltage deviation into the power command.
    #[serde(rename = "K_wv", default)]
    pub k_wv: f64,
    /// Cross gain: angle deviation into the field voltage.
    #[serde(rename = "K_vtheta", default)]
    pub k_vtheta: f64,
    /// Cross gain: frequency deviation into the field voltage.
    #[serde(rename = "K_vomega", default)]
    pub k_vomega: f64,
    /// Optional override for the angle-channel diagonal passivity index;
    /// defaults to `K_I` minus a small margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    /// Optional override for the voltage-channel diagonal passivity index;
    /// defaults to `(K_E + 1)/(x_d - x_dp)` minus a small margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

/// Droop-controlled inverter parameters, shared by the conventional-droop
/// and quadratic-droop models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    /// Angle-loop time constant.
    pub tau1: f64,
    /// Voltage-loop time constant.
    pub tau2: f64,
    /// Active-power droop coefficient.
    #[serde(rename = "D1")]
    pub d1: f64,
    /// Reactive-power droop coefficient.
    #[serde(rename = "D2")]
    pub d2: f64,
    /// Cross gain: voltage deviation into the angle loop.
    #[serde(rename = "K_wv", default)]
    pub k_wv: f64,
    /// Cross gain: angle deviation into the voltage loop.
    #[serde(rename = "K_vtheta", default)]
    pub k_vtheta: f64,
    /// Cross gain: angle rate into the voltage loop.
    #[serde(rename = "K_vomega", default)]
    pub k_vomega: f64,
}

/// A dynamic device attached to one bus. The tag names the model:
/// `SG` synchronous generator, `CD` conventional droop, `QD` quadratic droop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "device_kind")]
pub enum DeviceSpec {
    #[serde(rename = "SG")]
    Sg { params: SgParams, setpoints: Setpoints },
    #[serde(rename = "CD")]
    Cd { params: DroopParams, setpoints: Setpoints },
    #[serde(rename = "QD")]
    Qd { params: DroopParams, setpoints: Setpoints },
}

impl DeviceSpec {
    pub fn kind_label(&self) -> &'static str {
        match self {
            DeviceSpec::Sg { .. } => "SG",
            DeviceSpec::Cd { .. } => "CD",
            DeviceSpec::Qd { .. } => "QD",
        }
    }

    pub fn setpoints(&self) -> &Setpoints {
        match self {
            DeviceSpec::Sg { setpoints, .. }
            | DeviceSpec::Cd { setpoints, .. }
            | DeviceSpec::Qd { setpoints, .. } => setpoints,
        }
    }

    pub fn setpoints_mut(&mut self) -> &mut Setpoints {
        match self {
            DeviceSpec::Sg { setpoints, .. }
            | DeviceSpec::Cd { setpoints, .. }
            | DeviceSpec::Qd { setpoints, .. } => setpoints,
        }
    }

    /// Number of dynamic states: 3 for SG, 2 for the droop models.
    pub fn state_dim(&self) -> usize {
        match self {
            DeviceSpec::Sg { .. } => 3,
            DeviceSpec::Cd { .. } | DeviceSpec::Qd { .. } => 2,
        }
    }
}

/// A full study case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSystemCase {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    /// Device specs keyed by the bus they sit on.
    pub devices: BTreeMap<BusId, DeviceSpec>,
}

impl PowerSystemCase {
    /// Ids of the dynamic buses, ascending.
    pub fn dynamic_bus_ids(&self) -> Vec<BusId> {
        self.buses
            .iter()
            .filter(|b| b.bus_kind == BusKind::Dynamic)
            .map(|b| b.id)
            .collect()
    }

    pub fn bus(&self, id: BusId) -> Option<&BusRecord> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Sort buses by id. Loaders call this so that `id - 1` is the matrix
    /// index everywhere downstream.
    pub fn normalize_order(&mut self) {
        self.buses.sort_by_key(|b| b.id);
    }
}

/// Supported on-disk case formats.
#[derive(Clone, Debug)]
pub enum CaseFormat {
    /// The native JSON schema (see [`native`]).
    Native,
    /// MATPOWER-style `.m` case text plus a JSON device-assignment file.
    Matpower { device_assignment: std::path::PathBuf },
}

/// Severity of a validation finding. `Error`-level findings block loading;
/// `Warning`-level findings (currently: device parameters outside the
/// closed-form passivity-matrix preconditions) do not, because the same
/// conditions are re-checked and reported when the matrix is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, message: message.into() }
    }
    fn warning(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, message: message.into() }
    }
}

/// Structural validation. Returns an empty list iff the case satisfies every
/// type invariant and the line graph is connected.
pub fn validate_case(case: &PowerSystemCase) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = case.buses.len();

    if case.base_mva <= 0.0 {
        out.push(Diagnostic::error("base_mva must be positive"));
    }
    if n == 0 {
        out.push(Diagnostic::error("case has no buses"));
        return out;
    }

    // Unique, contiguous, sorted ids.
    let mut ids: Vec<BusId> = case.buses.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    for w in ids.windows(2) {
        if w[0] == w[1] {
            out.push(Diagnostic::error(format!("duplicate bus id {}", w[0])));
        }
    }
    if ids.first() != Some(&1) || ids.last() != Some(&n) {
        out.push(Diagnostic::error(format!(
            "bus ids must be contiguous 1..={n}, got range {:?}..{:?}",
            ids.first(),
            ids.last()
        )));
    }

    let id_known = |id: BusId| id >= 1 && id <= n && ids.binary_search(&id).is_ok();

    for b in &case.buses {
        if !(b.v_setpoint > 0.0) {
            out.push(Diagnostic::error(format!(
                "bus {}: V_setpoint must be positive, got {}",
                b.id, b.v_setpoint
            )));
        }
        if !b.v_setpoint.is_finite()
            || !b.theta_setpoint.is_finite()
            || !b.p_load.is_finite()
            || !b.q_load.is_finite()
        {
            out.push(Diagnostic::error(format!("bus {}: non-finite field", b.id)));
        }
        match b.bus_kind {
            BusKind::Dynamic => {
                if !case.devices.contains_key(&b.id) {
                    out.push(Diagnostic::error(format!(
                        "dynamic bus {} has no device spec",
                        b.id
                    )));
                }
            }
            BusKind::Passive => {
                if case.devices.contains_key(&b.id) {
                    out.push(Diagnostic::error(format!(
                        "passive bus {} carries a device spec",
                        b.id
                    )));
                }
            }
        }
    }

    if case.dynamic_bus_ids().is_empty() {
        out.push(Diagnostic::error("case has no dynamic bus"));
    }
    for id in case.devices.keys() {
        if !id_known(*id) {
            out.push(Diagnostic::error(format!("device references unknown bus {id}")));
        }
    }

    for (k, l) in case.lines.iter().enumerate() {
        if l.from_bus == l.to_bus {
            out.push(Diagnostic::error(format!(
                "line {k}: from_bus equals to_bus ({})",
                l.from_bus
            )));
        }
        if !id_known(l.from_bus) || !id_known(l.to_bus) {
            out.push(Diagnostic::error(format!(
                "line {k}: references unknown bus ({} - {})",
                l.from_bus, l.to_bus
            )));
        }
        if l.r == 0.0 && l.x == 0.0 {
            out.push(Diagnostic::error(format!(
                "line {k} ({} - {}): zero impedance",
                l.from_bus, l.to_bus
            )));
        }
        if !l.r.is_finite() || !l.x.is_finite() || !l.b_shunt.is_finite() {
            out.push(Diagnostic::error(format!("line {k}: non-finite field")));
        }
    }

    // Connectivity over the line graph (union-find).
    if n > 0 && ids.first() == Some(&1) && ids.last() == Some(&n) {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for l in &case.lines {
            if id_known(l.from_bus) && id_known(l.to_bus) {
                let (a, b) = (find(&mut parent, l.from_bus - 1), find(&mut parent, l.to_bus - 1));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let root = find(&mut parent, 0);
        if (0..n).any(|i| find(&mut parent, i) != root) {
            out.push(Diagnostic::error("line graph is not connected"));
        }
    }

    // Device parameter findings. Violations of the closed-form passivity
    // matrix preconditions load fine but are flagged here, and again (as
    // `valid = false`) when the matrix itself is constructed.
    for (id, spec) in &case.devices {
        let sp = spec.setpoints();
        if !(sp.v > 0.0) {
            out.push(Diagnostic::error(format!(
                "device at bus {id}: setpoint V must be positive, got {}",
                sp.v
            )));
        }
        if ![sp.p, sp.q, sp.theta, sp.v].iter().all(|x| x.is_finite()) {
            out.push(Diagnostic::error(format!("device at bus {id}: non-finite setpoint")));
        }
        match spec {
            DeviceSpec::Sg { params: p, .. } => {
                for (name, v) in [("M", p.m), ("D", p.d), ("T_d", p.t_d)] {
                    if !(v > 0.0) {
                        out.push(Diagnostic::warning(format!(
                            "SG at bus {id}: {name} must be positive for the closed-form passivity matrix, got {v}"
                        )));
                    }
                }
                if !(p.x_d > p.x_dp) {
                    out.push(Diagnostic::warning(format!(
                        "SG at bus {id}: x_d must exceed x_dp for the closed-form passivity matrix"
                    )));
                }
            }
            DeviceSpec::Cd { params: p, .. } | DeviceSpec::Qd { params: p, .. } => {
                for (name, v) in [("tau1", p.tau1), ("tau2", p.tau2), ("D1", p.d1), ("D2", p.d2)] {
                    if !(v > 0.0) {
                        out.push(Diagnostic::warning(format!(
                            "{} at bus {id}: {name} must be positive for the closed-form passivity matrix, got {v}",
                            spec.kind_label()
                        )));
                    }
                }
            }
        }
    }

    out
}

/// Fail on any `Error`-severity validation finding, joining the messages.
pub fn ensure_valid(case: &PowerSystemCase) -> Result<()> {
    let blocking: Vec<String> = validate_case(case)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message)
        .collect();
    if blocking.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(blocking.join("; ")))
    }
}

/// Load and validate a case file. Fails on parse errors and on any
/// `Error`-severity validation finding.
pub fn load_case(path: &Path, format: &CaseFormat) -> Result<PowerSystemCase> {
    let case = match format {
        CaseFormat::Native => native::load(path)?,
        CaseFormat::Matpower { device_assignment } => matpower::load(path, device_assignment)?,
    };
    ensure_valid(&case)?;
    Ok(case)
}
