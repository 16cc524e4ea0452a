//! Distributed stability criteria on passivity matrices.
//!
//! Two sufficient tests certify small-signal stability of the device/network
//! interconnection, trading precision for communication cost:
//!
//! - **Semi-distributed** — devices report their full 2×2 passivity
//!   matrices; the center checks that the symmetric part of
//!   `S_net + S_dev` is positive definite.
//! - **Fully distributed** — the center broadcasts the scalar network index
//!   `σ_net = λ_min(sym(S_net))`; each device checks
//!   `λ_min(sym(S_dev,i)) + σ_net > 0` locally and reports one bit.
//!
//! The fully distributed test is never less conservative: by Weyl's
//! inequality `λ_min(A + B) ≥ λ_min(A) + λ_min(B)`, its success implies the
//! semi-distributed test's success. Neither test can assert instability —
//! "not certified" leaves the question to the eigenvalue oracle.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::case::BusId;
use crate::devices::Odpm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::Idpm;

/// Margin below which a point is reported as *not certified* even if the
/// computed eigenvalue is positive: the criteria are sufficient-only, so
/// numerically marginal cases fall on the conservative side.
pub const PD_TOLERANCE: f64 = 1e-9;

/// Which test produced a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    SemiDistributed,
    FullyDistributed,
    EigenOracle,
}

/// Per-device line item inside a verdict, ordered like the inputs.
#[derive(Clone, Debug, Serialize)]
pub struct DeviceContribution {
    /// 0-based position in the device ordering of the check.
    pub device: usize,
    /// λ_min of the device's symmetric passivity matrix.
    pub scalar_index: f64,
    /// `scalar_index + sigma_net` — the device-local margin.
    pub local_margin: f64,
    pub passes: bool,
}

/// Outcome of one criterion or of the eigenvalue oracle.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityVerdict {
    pub criterion: Criterion,
    /// Stability established by this test.
    pub certified: bool,
    /// Instability established. Passivity criteria always leave this
    /// `false`; only the eigenvalue oracle can set it.
    pub unstable: bool,
    /// λ_min of the tested matrix, or the scalar-sum slack.
    pub margin: f64,
    /// Per-device contributions where the test has them (fully distributed).
    pub details: Vec<DeviceContribution>,
}

/// Stack 2×2 device passivity matrices block-diagonally, in the given
/// order, matching the interleaved `(θ₁, V₁, θ₂, V₂, …)` network ordering.
pub fn assemble_sdev(odpms: &[Odpm]) -> DMatrix<f64> {
    let n = odpms.len();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for (k, odpm) in odpms.iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                s[(2 * k + i, 2 * k + j)] = odpm.matrix[i][j];
            }
        }
    }
    s
}

/// Semi-distributed test: `margin = λ_min(sym(S_net) + sym(S_dev))`,
/// certified iff the margin clears [`PD_TOLERANCE`].
pub fn semi_distributed_check(s_dev: &DMatrix<f64>, s_net: &Idpm) -> Result<StabilityVerdict> {
    if s_dev.nrows() != s_net.sym.nrows() || !s_dev.is_square() {
        return Err(Error::Dimension(format!(
            "device matrix is {}×{}, network matrix is {}×{}",
            s_dev.nrows(),
            s_dev.ncols(),
            s_net.sym.nrows(),
            s_net.sym.ncols()
        )));
    }
    let sym_sum = &s_net.sym + linalg::symmetric_part(s_dev)?;
    let margin = linalg::min_symmetric_eigenvalue(&sym_sum)?;
    Ok(StabilityVerdict {
        criterion: Criterion::SemiDistributed,
        certified: margin > PD_TOLERANCE,
        unstable: false,
        margin,
        details: Vec::new(),
    })
}

/// Fully distributed test: `margin = min_i(device_indices) + sigma_net`,
/// certified iff the margin clears [`PD_TOLERANCE`]. Every device's local
/// result is recorded in `details`.
pub fn fully_distributed_check(
    device_indices: &[f64],
    sigma_net: f64,
) -> Result<StabilityVerdict> {
    if device_indices.is_empty() {
        return Err(Error::Validation(
            "fully distributed check needs at least one device index".into(),
        ));
    }
    let details: Vec<DeviceContribution> = device_indices
        .iter()
        .enumerate()
        .map(|(device, &scalar_index)| {
            let local_margin = scalar_index + sigma_net;
            DeviceContribution {
                device,
                scalar_index,
                local_margin,
                passes: local_margin > PD_TOLERANCE,
            }
        })
        .collect();
    let margin = details
        .iter()
        .map(|d| d.local_margin)
        .fold(f64::INFINITY, f64::min);
    Ok(StabilityVerdict {
        criterion: Criterion::FullyDistributed,
        certified: details.iter().all(|d| d.passes),
        unstable: false,
        margin,
        details,
    })
}

/// Scalar passivity index of a matrix: λ_min of its symmetric part.
pub fn scalar_index(m: &DMatrix<f64>) -> Result<f64> {
    linalg::min_symmetric_eigenvalue(&linalg::symmetric_part(m)?)
}

/// Per-device entry of an assessment.
#[derive(Clone, Debug, Serialize)]
pub struct DeviceReport {
    pub bus_id: BusId,
    pub kind: String,
    pub odpm: Odpm,
    /// λ_min of the symmetric part of `odpm.matrix`.
    pub scalar_index: f64,
}

/// Assessment flavor: which criterion the center runs and, with it, what
/// data crosses the device/center boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentMode {
    Semi,
    Fully,
}

/// What the center knows about the network side.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum NetworkIndex {
    /// Fully distributed mode broadcasts only this scalar.
    Scalar(f64),
    /// Semi-distributed mode keeps the full symmetric matrix (row-major).
    Matrix(Vec<Vec<f64>>),
}

/// One simulated exchange between a device and the center. The log records
/// exactly the data that crossed the boundary, in deterministic (bus id)
/// order.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Message {
    /// Semi mode, device → center: the full 2×2 passivity matrix.
    OdpmReport { from_bus: BusId, matrix: [[f64; 2]; 2] },
    /// Fully mode, center → devices: the scalar network index.
    NetworkIndexBroadcast { sigma_net: f64 },
    /// Fully mode, device → center: the one-bit local verdict.
    LocalVerdictReport { from_bus: BusId, passes: bool },
}

/// Outcome of the two-level assessment workflow.
#[derive(Clone, Debug, Serialize)]
pub struct AssessmentReport {
    pub mode: AssessmentMode,
    pub device_reports: Vec<DeviceReport>,
    pub network_index: NetworkIndex,
    pub verdict: StabilityVerdict,
    pub message_log: Vec<Message>,
}

/// Run the two-level assessment workflow on a case: prepare the operating
/// point, exchange exactly the data the chosen mode allows across the
/// device/center boundary, and evaluate the matching criterion.
///
/// - **Semi**: every device sends its 2×2 passivity matrix to the center
///   (one [`Message::OdpmReport`] per device, ascending bus order); the
///   center assembles the block-diagonal sum with the network matrix and
///   checks positive definiteness.
/// - **Fully**: the center broadcasts the scalar network index (one
///   [`Message::NetworkIndexBroadcast`]); each device answers with a one-bit
///   verdict ([`Message::LocalVerdictReport`], ascending bus order).
///
/// Devices whose passivity-matrix validity conditions fail make the
/// certificate meaningless, so they are an error here (unlike in sweeps,
/// where an invalid point is simply not certified): the message carries the
/// offending buses and conditions.
pub fn run_two_level_assessment(
    case: &crate::case::PowerSystemCase,
    mode: AssessmentMode,
) -> Result<AssessmentReport> {
    let op = crate::pipeline::prepare_operating_point(case)?;
    let invalid = op.invalid_devices();
    if !invalid.is_empty() {
        let listing = invalid
            .iter()
            .map(|(bus, conds)| format!("bus {bus}: {}", conds.join(", ")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Validation(format!(
            "passivity-matrix validity conditions fail — {listing}"
        )));
    }

    let device_reports: Vec<DeviceReport> = op
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

    let (network_index, verdict, message_log) = match mode {
        AssessmentMode::Semi => {
            let message_log: Vec<Message> = op
                .bus_map
                .iter()
                .zip(&op.odpms)
                .map(|(bus, odpm)| Message::OdpmReport { from_bus: *bus, matrix: odpm.matrix })
                .collect();
            let verdict = semi_distributed_check(&assemble_sdev(&op.odpms), &op.idpm)?;
            let rows = op
                .idpm
                .sym
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            (NetworkIndex::Matrix(rows), verdict, message_log)
        }
        AssessmentMode::Fully => {
            let sigma_net = op.idpm.sigma_net;
            let verdict = fully_distributed_check(&op.device_indices(), sigma_net)?;
            let mut message_log =
                vec![Message::NetworkIndexBroadcast { sigma_net }];
            message_log.extend(op.bus_map.iter().zip(&verdict.details).map(
                |(bus, detail)| Message::LocalVerdictReport {
                    from_bus: *bus,
                    passes: detail.passes,
                },
            ));
            (NetworkIndex::Scalar(sigma_net), verdict, message_log)
        }
    };

    Ok(AssessmentReport { mode, device_reports, network_index, verdict, message_log })
}
