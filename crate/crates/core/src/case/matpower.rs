//! MATPOWER-style case ingestion.
//!
//! Reads the plain-text matrix blocks `mpc.baseMVA`, `mpc.bus`, `mpc.branch`,
//! and `mpc.gen` with their standard column ordering, plus a separate JSON
//! *device-assignment* file mapping bus ids to [`DeviceSpec`]s. Only the data
//! needed to build the admittance matrix and the load/injection picture is
//! ingested; everything else (rates, limits, OPF columns) is ignored.
//!
//! Conventions applied while loading:
//!
//! - All MW/MVAr quantities are divided by `baseMVA`; `VA` converts from
//!   degrees to radians. Branch `r`, `x`, `b` and bus `VM` are already
//!   per-unit and pass through.
//! - Buses are renumbered to contiguous ids `1..=n` in ascending order of
//!   their original ids (identity for already-contiguous files); branch
//!   endpoints, generator buses, and device-assignment keys are remapped
//!   with them.
//! - A bus is *dynamic* iff it appears in the device assignment; the
//!   MATPOWER bus-type column is ignored. In-service generators at an
//!   assigned bus override that device's `P*`/`Q*` setpoints (summed over
//!   the bus's generators) and, via `VG`, the bus voltage setpoint.
//!   Generators at unassigned buses are folded in as negative load.
//! - Bus shunts `GS`/`BS` are folded into the load columns at nominal
//!   voltage (`P += GS`, `Q -= BS`, per-unit).
//! - Out-of-service branches and generators are dropped. Transformer tap
//!   ratios and phase shifts are not modeled; those columns are ignored.
//! - Device setpoint angles and voltages are synced to the bus `VA`/`VM`
//!   (or `VG`) values so the file is self-consistent; the analysis pipeline
//!   re-derives exact setpoints from its own power-flow solution anyway.

use std::collections::BTreeMap;
use std::path::Path;

use super::{BusId, BusKind, BusRecord, DeviceSpec, LineRecord, PowerSystemCase};
use crate::error::{Error, Result};

/// Load a MATPOWER-style case plus its device-assignment file.
pub fn load(case_path: &Path, devices_path: &Path) -> Result<PowerSystemCase> {
    let case_text = read(case_path)?;
    let devices_text = read(devices_path)?;
    parse_str(&case_text, &devices_text)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse MATPOWER case text and device-assignment JSON into a case.
pub fn parse_str(case_text: &str, devices_text: &str) -> Result<PowerSystemCase> {
    let text = strip_comments(case_text);
    let base_mva = extract_scalar(&text, "baseMVA")?;
    if !(base_mva > 0.0) {
        return Err(Error::Parse {
            location: "mpc.baseMVA".into(),
            message: format!("base MVA must be positive, got {base_mva}"),
        });
    }
    let bus_rows = extract_matrix(&text, "bus")?;
    let branch_rows = extract_matrix(&text, "branch")?;
    // mpc.gen is optional: a case may specify all injections through loads.
    let gen_rows = match extract_matrix(&text, "gen") {
        Ok(rows) => rows,
        Err(Error::Parse { message, .. }) if message.contains("block not found") => Vec::new(),
        Err(e) => return Err(e),
    };

    let assignment: BTreeMap<BusId, DeviceSpec> =
        serde_json::from_str(devices_text).map_err(|e| Error::Parse {
            location: format!("device assignment, line {}", e.line()),
            message: e.to_string(),
        })?;

    // Renumber original bus ids to contiguous 1..=n in ascending order.
    let mut original_ids: Vec<i64> = Vec::with_capacity(bus_rows.len());
    for (i, row) in bus_rows.iter().enumerate() {
        require_cols(row, 9, "bus", i)?;
        original_ids.push(row[0] as i64);
    }
    let mut sorted = original_ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != original_ids.len() {
        return Err(Error::Parse {
            location: "mpc.bus".into(),
            message: "duplicate bus id in bus matrix".into(),
        });
    }
    let renumber: BTreeMap<i64, BusId> =
        sorted.iter().enumerate().map(|(i, &id)| (id, (i + 1) as BusId)).collect();
    let remap = |orig: f64, what: &str, row: usize| -> Result<BusId> {
        renumber.get(&(orig as i64)).copied().ok_or_else(|| Error::Parse {
            location: format!("mpc.{what} row {}", row + 1),
            message: format!("references unknown bus id {orig}"),
        })
    };

    let mut remapped_assignment: BTreeMap<BusId, DeviceSpec> = BTreeMap::new();
    for (orig, spec) in assignment {
        let new_id = *renumber.get(&(orig as i64)).ok_or_else(|| Error::Parse {
            location: "device assignment".into(),
            message: format!("assigns a device to unknown bus id {orig}"),
        })?;
        remapped_assignment.insert(new_id, spec);
    }

    let mut buses: Vec<BusRecord> = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        let id = renumber[&(row[0] as i64)];
        let (pd, qd, gs, bs, vm, va_deg) = (row[2], row[3], row[4], row[5], row[7], row[8]);
        buses.push(BusRecord {
            id,
            bus_kind: if remapped_assignment.contains_key(&id) {
                BusKind::Dynamic
            } else {
                BusKind::Passive
            },
            v_setpoint: vm,
            theta_setpoint: va_deg.to_radians(),
            // Shunts become loads at nominal voltage: GS consumes MW, BS injects MVAr.
            p_load: (pd + gs) / base_mva,
            q_load: (qd - bs) / base_mva,
        });
    }
    buses.sort_by_key(|b| b.id);

    let mut lines: Vec<LineRecord> = Vec::with_capacity(branch_rows.len());
    for (i, row) in branch_rows.iter().enumerate() {
        require_cols(row, 5, "branch", i)?;
        let status = if row.len() > 10 { row[10] } else { 1.0 };
        if status == 0.0 {
            continue;
        }
        lines.push(LineRecord {
            from_bus: remap(row[0], "branch", i)?,
            to_bus: remap(row[1], "branch", i)?,
            r: row[2],
            x: row[3],
            b_shunt: row[4],
        });
    }

    // Accumulate in-service generator injections per bus.
    struct GenTotal {
        p: f64,
        q: f64,
        vg: Option<f64>,
    }
    let mut gen_totals: BTreeMap<BusId, GenTotal> = BTreeMap::new();
    for (i, row) in gen_rows.iter().enumerate() {
        require_cols(row, 6, "gen", i)?;
        let status = if row.len() > 7 { row[7] } else { 1.0 };
        if status <= 0.0 {
            continue;
        }
        let id = remap(row[0], "gen", i)?;
        let entry = gen_totals.entry(id).or_insert(GenTotal { p: 0.0, q: 0.0, vg: None });
        entry.p += row[1] / base_mva;
        entry.q += row[2] / base_mva;
        if entry.vg.is_none() && row[5] > 0.0 {
            entry.vg = Some(row[5]);
        }
    }

    for (id, total) in &gen_totals {
        let bus = &mut buses[*id - 1];
        if let Some(vg) = total.vg {
            bus.v_setpoint = vg;
        }
        if !remapped_assignment.contains_key(id) {
            // No device here: the generator acts as fixed negative load.
            bus.p_load -= total.p;
            bus.q_load -= total.q;
        }
    }

    // Sync device setpoints to the network data.
    for (id, spec) in &mut remapped_assignment {
        let bus = &buses[*id - 1];
        let sp = spec.setpoints_mut();
        sp.theta = bus.theta_setpoint;
        sp.v = bus.v_setpoint;
        if let Some(total) = gen_totals.get(id) {
            sp.p = total.p;
            sp.q = total.q;
        }
    }

    let mut case = PowerSystemCase { base_mva, buses, lines, devices: remapped_assignment };
    case.normalize_order();
    Ok(case)
}

fn require_cols(row: &[f64], need: usize, what: &str, idx: usize) -> Result<()> {
    if row.len() < need {
        return Err(Error::Parse {
            location: format!("mpc.{what} row {}", idx + 1),
            message: format!("expected at least {need} columns, found {}", row.len()),
        });
    }
    Ok(())
}

/// Drop `%` comments (MATLAB style) from every line.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let body = match line.find('%') {
            Some(pos) => &line[..pos],
            None => line,
        };
        out.push_str(body);
        out.push('\n');
    }
    out
}

/// Extract a scalar assignment `mpc.<name> = <value>;`.
fn extract_scalar(text: &str, name: &str) -> Result<f64> {
    let needle = format!("mpc.{name}");
    let start = text.find(&needle).ok_or_else(|| Error::Parse {
        location: needle.clone(),
        message: "block not found".into(),
    })?;
    let rest = &text[start + needle.len()..];
    let eq = rest.find('=').ok_or_else(|| Error::Parse {
        location: needle.clone(),
        message: "missing '=' after name".into(),
    })?;
    let value_text = rest[eq + 1..]
        .split(|c| c == ';' || c == '\n')
        .next()
        .unwrap_or("")
        .trim();
    value_text.parse::<f64>().map_err(|_| Error::Parse {
        location: needle,
        message: format!("expected a number, found {value_text:?}"),
    })
}

/// Extract a matrix block `mpc.<name> = [ rows... ];` as rows of floats.
///
/// Rows are separated by `;` or newlines; entries by whitespace or commas.
fn extract_matrix(text: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    let needle = format!("mpc.{name}");
    let mut search_from = 0usize;
    // Guard against e.g. "mpc.bus" matching inside "mpc.bus_name".
    let start = loop {
        let rel = text[search_from..].find(&needle).ok_or_else(|| Error::Parse {
            location: needle.clone(),
            message: "block not found".into(),
        })?;
        let pos = search_from + rel;
        let after = text[pos + needle.len()..].trim_start();
        if after.starts_with('=') {
            break pos;
        }
        search_from = pos + needle.len();
    };
    let rest = &text[start..];
    let open = rest.find('[').ok_or_else(|| Error::Parse {
        location: needle.clone(),
        message: "missing '[' after name".into(),
    })?;
    let close = rest[open..].find(']').ok_or_else(|| Error::Parse {
        location: needle.clone(),
        message: "missing closing ']'".into(),
    })? + open;
    let body = &rest[open + 1..close];

    let mut rows = Vec::new();
    for (i, raw_row) in body.split(|c| c == ';' || c == '\n').enumerate() {
        let raw_row = raw_row.trim();
        if raw_row.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in raw_row.split(|c: char| c.is_whitespace() || c == ',') {
            if tok.is_empty() {
                continue;
            }
            row.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                location: format!("mpc.{name} row {}", i + 1),
                message: format!("expected a number, found {tok:?}"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { location: needle, message: "matrix block is empty".into() });
    }
    Ok(rows)
}
