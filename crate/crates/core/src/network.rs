//! Static network model: admittance assembly, power-flow evaluation and
//! Newton solution, Kron reduction of passive buses, analytic Jacobians of
//! the coupling map, and assembly of the network's input-passivity matrix.
//!
//! The coupling map in question sends bus angles and voltages to the pair
//! `(P, Q/V)` — the quantities the devices exchange with the grid. Its
//! Jacobian, evaluated at an operating point and conjugated into the
//! interleaved per-bus ordering `(θ₁, V₁, θ₂, V₂, …)`, is the
//! network-side passivity matrix [`Idpm`]; its symmetric part's smallest
//! eigenvalue `sigma_net` is the network's passivity shortfall that the
//! devices must jointly cover.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::case::PowerSystemCase;
use crate::error::{Error, Result};
use crate::linalg;

/// Conductance entries at or below this magnitude count as zero when
/// deciding whether an operating point is lossless.
pub const LOSSLESS_G_TOL: f64 = 1e-12;

/// Bus admittance matrix split into real conductance `g` and susceptance `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        AdmittanceMatrix { g: DMatrix::zeros(n, n), b: DMatrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| {
            Complex64::new(self.g[(i, j)], self.b[(i, j)])
        })
    }

    pub fn from_complex(y: &DMatrix<Complex64>) -> Self {
        AdmittanceMatrix {
            g: y.map(|z| z.re),
            b: y.map(|z| z.im),
        }
    }

    /// Largest conductance magnitude; zero for lossless networks.
    pub fn max_conductance(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_lossless(&self) -> bool {
        self.max_conductance() <= LOSSLESS_G_TOL
    }
}

/// Assemble the bus admittance matrix from line data. Each line contributes
/// its series admittance `1/(r + jx)` and half of `b_shunt` at both ends.
pub fn build_admittance(case: &PowerSystemCase) -> Result<AdmittanceMatrix> {
    let n = case.buses.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for line in &case.lines {
        let z = Complex64::new(line.r, line.x);
        if z.norm_sqr() == 0.0 {
            return Err(Error::Validation(format!(
                "line {} - {} has zero impedance",
                line.from_bus, line.to_bus
            )));
        }
        let series = z.inv();
        let shunt = Complex64::new(0.0, line.b_shunt / 2.0);
        let (f, t) = (line.from_bus - 1, line.to_bus - 1);
        y[(f, f)] += series + shunt;
        y[(t, t)] += series + shunt;
        y[(f, t)] -= series;
        y[(t, f)] -= series;
    }
    Ok(AdmittanceMatrix::from_complex(&y))
}

/// Net complex power injected at every bus for the given angles/voltages:
///
/// `P_i = V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)`
/// `Q_i = V_i Σ_j V_j (G_ij sin θ_ij − B_ij cos θ_ij)`
pub fn power_injections(
    y: &AdmittanceMatrix,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = y.n();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let tij = theta[i] - theta[j];
            let (s, c) = tij.sin_cos();
            pi += v[j] * (g * c + b * s);
            qi += v[j] * (g * s - b * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Converged power-flow state.
#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    /// Net injections evaluated at the solution.
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    /// Mismatch evaluations performed (1 for an immediately-converged start).
    pub iterations: usize,
    /// Final mismatch ∞-norm.
    pub residual: f64,
}

/// Knobs for [`solve_power_flow_opts`]; the defaults match
/// [`solve_power_flow`].
#[derive(Clone, Debug)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start from a previous solution's `(theta, v)` instead of flat.
    pub warm_start: Option<(DVector<f64>, DVector<f64>)>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { tolerance: 1e-8, max_iterations: 50, warm_start: None }
    }
}

/// Scheduled net injection at every bus: device setpoint minus local load
/// (passive buses schedule the negated load alone).
fn scheduled_injections(case: &PowerSystemCase) -> (DVector<f64>, DVector<f64>) {
    let n = case.buses.len();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for bus in &case.buses {
        let i = bus.id - 1;
        p[i] = -bus.p_load;
        q[i] = -bus.q_load;
        if let Some(spec) = case.devices.get(&bus.id) {
            let sp = spec.setpoints();
            p[i] += sp.p;
            q[i] += sp.q;
        }
    }
    (p, q)
}

/// Newton power flow with default options: flat start, tolerance `1e-8`,
/// at most 50 iterations.
///
/// Every bus is treated as a PQ bus except the first dynamic bus, which
/// anchors the angle reference and voltage (slack); its injections are
/// outcomes, not constraints.
pub fn solve_power_flow(
    case: &PowerSystemCase,
    y: &AdmittanceMatrix,
) -> Result<PowerFlowSolution> {
    solve_power_flow_opts(case, y, &PowerFlowOptions::default())
}

/// Newton power flow with explicit options.
pub fn solve_power_flow_opts(
    case: &PowerSystemCase,
    y: &AdmittanceMatrix,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = case.buses.len();
    let slack = *case
        .dynamic_bus_ids()
        .first()
        .ok_or_else(|| Error::Validation("case has no dynamic bus".into()))?
        - 1;
    let (p_sched, q_sched) = scheduled_injections(case);

    let (mut theta, mut v) = match &opts.warm_start {
        Some((t0, v0)) => {
            if t0.len() != n || v0.len() != n {
                return Err(Error::Dimension(format!(
                    "warm start has {} buses, case has {n}",
                    t0.len()
                )));
            }
            (t0.clone(), v0.clone())
        }
        None => (DVector::zeros(n), DVector::from_element(n, 1.0)),
    };
    let slack_bus = case.bus(slack + 1).expect("slack bus exists");
    theta[slack] = slack_bus.theta_setpoint;
    v[slack] = slack_bus.v_setpoint;

    // Unknowns: theta and V at every non-slack bus.
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = free.len();

    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let (p, q) = power_injections(y, &theta, &v);
        let mut mismatch = DVector::zeros(2 * m);
        for (k, &i) in free.iter().enumerate() {
            mismatch[k] = p_sched[i] - p[i];
            mismatch[m + k] = q_sched[i] - q[i];
        }
        residual = mismatch.iter().fold(0.0f64, |r, x| r.max(x.abs()));
        if residual < opts.tolerance {
            return Ok(PowerFlowSolution { theta, v, p, q, iterations: it, residual });
        }

        // Standard Newton blocks: ∂(P,Q)/∂(θ,V) at the free buses.
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in free.iter().enumerate() {
            for (cidx, &j) in free.iter().enumerate() {
                let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
                if i == j {
                    jac[(r, cidx)] = -q[i] - b * v[i] * v[i];
                    jac[(r, m + cidx)] = p[i] / v[i] + g * v[i];
                    jac[(m + r, cidx)] = p[i] - g * v[i] * v[i];
                    jac[(m + r, m + cidx)] = q[i] / v[i] - b * v[i];
                } else {
                    let tij = theta[i] - theta[j];
                    let (s, c) = tij.sin_cos();
                    jac[(r, cidx)] = v[i] * v[j] * (g * s - b * c);
                    jac[(r, m + cidx)] = v[i] * (g * c + b * s);
                    jac[(m + r, cidx)] = -v[i] * v[j] * (g * c + b * s);
                    jac[(m + r, m + cidx)] = v[i] * (g * s - b * c);
                }
            }
        }

        let step = match jac.lu().solve(&mismatch) {
            Some(s) => s,
            None => return Err(Error::PowerFlowDiverged { iterations: it, residual }),
        };
        if !step.iter().all(|x| x.is_finite()) {
            return Err(Error::PowerFlowDiverged { iterations: it, residual });
        }
        for (k, &i) in free.iter().enumerate() {
            theta[i] += step[k];
            v[i] += step[m + k];
            if v[i] <= 0.0 {
                return Err(Error::PowerFlowDiverged { iterations: it, residual });
            }
        }
    }
    Err(Error::PowerFlowDiverged { iterations: opts.max_iterations, residual })
}

/// Kron reduction: eliminate the buses listed in `eliminate` (0-based matrix
/// indices) after shunting each with the matching constant admittance from
/// `loads`. Returns the reduced admittance over the retained buses and the
/// retained buses' original indices, ascending.
///
/// Writing the partition `Y = [[Y₁₁, Y₁₂], [Y₂₁, Y₂₂]]` with the eliminated
/// block second, the result is the Schur complement
/// `Y₁₁ − Y₁₂ (Y₂₂ + diag(loads))⁻¹ Y₂₁`, which preserves the retained-bus
/// injections for any retained voltage profile (eliminated buses settle at
/// their implied voltages).
pub fn kron_reduce(
    y: &AdmittanceMatrix,
    eliminate: &[usize],
    loads: &[Complex64],
) -> Result<(AdmittanceMatrix, Vec<usize>)> {
    if eliminate.len() != loads.len() {
        return Err(Error::Dimension(format!(
            "{} buses to eliminate but {} load admittances",
            eliminate.len(),
            loads.len()
        )));
    }
    let n = y.n();
    let mut elim = eliminate.to_vec();
    elim.sort_unstable();
    elim.dedup();
    if elim.len() != eliminate.len() {
        return Err(Error::Validation("duplicate bus in elimination set".into()));
    }
    if let Some(&bad) = elim.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("eliminated index {bad} out of range 0..{n}")));
    }
    let retained: Vec<usize> = (0..n).filter(|i| !elim.contains(i)).collect();
    if elim.is_empty() {
        return Ok((y.clone(), retained));
    }

    let yc = y.to_complex();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| yc[(rows[i], cols[j])])
    };
    let y11 = pick(&retained, &retained);
    let y12 = pick(&retained, &elim);
    let y21 = pick(&elim, &retained);
    let mut y22 = pick(&elim, &elim);
    // `loads` is ordered like `eliminate`; apply at the sorted positions.
    for (k, &orig) in eliminate.iter().enumerate() {
        let pos = elim.binary_search(&orig).expect("eliminated index present");
        y22[(pos, pos)] += loads[k];
    }

    let interior = y22.lu().solve(&y21).ok_or_else(|| {
        Error::Singular("interior block of the Kron reduction is singular".into())
    })?;
    let y_red = y11 - y12 * interior;
    Ok((AdmittanceMatrix::from_complex(&y_red), retained))
}

/// Jacobian blocks of `(P, Q/V)` with respect to `(θ, V)` for a lossless
/// network: returns `(A, D, C)` with `∂P/∂θ = A`, `∂P/∂V = D`,
/// `∂(Q/V)/∂θ = Dᵀ`, `∂(Q/V)/∂V = C`. The stacked matrix
/// `[[A, D], [Dᵀ, C]]` is symmetric.
pub fn jacobian_lossless(
    y: &AdmittanceMatrix,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !y.is_lossless() {
        return Err(Error::Validation(format!(
            "lossless Jacobian requested but max |G| = {:.3e}",
            y.max_conductance()
        )));
    }
    let n = y.n();
    let mut a = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let (mut a_ii, mut d_ii) = (0.0, 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let b = y.b[(i, j)];
            let (s, co) = (theta[i] - theta[j]).sin_cos();
            a[(i, j)] = -v[i] * v[j] * b * co;
            d[(i, j)] = v[i] * b * s;
            c[(i, j)] = -b * co;
            a_ii += v[i] * v[j] * b * co;
            d_ii += v[j] * b * s;
        }
        a[(i, i)] = a_ii;
        d[(i, i)] = d_ii;
        c[(i, i)] = -y.b[(i, i)];
    }
    Ok((a, d, c))
}

/// Jacobian blocks of `(P, Q/V)` with respect to `(θ, V)` for a general
/// (lossy) network: returns `(A′, D′, E′, C′)` with `∂P/∂θ = A′`,
/// `∂P/∂V = D′`, `∂(Q/V)/∂θ = E′`, `∂(Q/V)/∂V = C′`. With zero
/// conductance these reduce to the lossless blocks and `E′ = D′ᵀ`.
pub fn jacobian_lossy(
    y: &AdmittanceMatrix,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = y.n();
    let mut a = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let (mut a_ii, mut d_ii, mut e_ii) = (0.0, 0.0, 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            let (s, co) = (theta[i] - theta[j]).sin_cos();
            a[(i, j)] = v[i] * v[j] * (-b * co + g * s);
            d[(i, j)] = v[i] * (b * s + g * co);
            e[(i, j)] = -v[j] * (b * s + g * co);
            c[(i, j)] = -b * co + g * s;
            a_ii += v[i] * v[j] * (b * co - g * s);
            d_ii += v[j] * (b * s + g * co);
            e_ii += v[j] * (b * s + g * co);
        }
        a[(i, i)] = a_ii;
        d[(i, i)] = 2.0 * y.g[(i, i)] * v[i] + d_ii;
        e[(i, i)] = e_ii;
        c[(i, i)] = -y.b[(i, i)];
    }
    (a, d, e, c)
}

/// Permutation taking the block ordering `(θ₁..θ_N, V₁..V_N)` to the
/// interleaved ordering `(θ₁, V₁, θ₂, V₂, …)`; orthogonal.
pub fn permutation_matrix(n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..n {
        p[(2 * c, c)] = 1.0;
        p[(2 * c + 1, n + c)] = 1.0;
    }
    p
}

/// The network-side passivity matrix at an operating point.
#[derive(Clone, Debug)]
pub struct Idpm {
    /// `2N×2N` coupling Jacobian in interleaved `(θ₁, V₁, …)` ordering.
    pub matrix: DMatrix<f64>,
    /// Symmetric part of `matrix`.
    pub sym: DMatrix<f64>,
    /// Smallest eigenvalue of `sym` — the network passivity index.
    pub sigma_net: f64,
    /// Whether the lossless block formulas were used.
    pub lossless: bool,
}

/// Assemble the [`Idpm`] directly from an admittance matrix and an operating
/// point (angles and voltages over the same buses).
pub fn build_idpm_from(
    y: &AdmittanceMatrix,
    theta: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<Idpm> {
    let n = y.n();
    if theta.len() != n || v.len() != n {
        return Err(Error::Dimension(format!(
            "admittance is {n}×{n} but operating point has {} angles / {} voltages",
            theta.len(),
            v.len()
        )));
    }
    let lossless = y.is_lossless();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    let put = |dst: &mut DMatrix<f64>, ri: usize, ci: usize, m: &DMatrix<f64>| {
        dst.view_mut((ri * n, ci * n), (n, n)).copy_from(m);
    };
    if lossless {
        let (a, d, c) = jacobian_lossless(y, theta, v)?;
        put(&mut block, 0, 0, &a);
        put(&mut block, 0, 1, &d);
        put(&mut block, 1, 0, &d.transpose());
        put(&mut block, 1, 1, &c);
    } else {
        let (a, d, e, c) = jacobian_lossy(y, theta, v);
        put(&mut block, 0, 0, &a);
        put(&mut block, 0, 1, &d);
        put(&mut block, 1, 0, &e);
        put(&mut block, 1, 1, &c);
    }
    let perm = permutation_matrix(n);
    let matrix = &perm * block * perm.transpose();
    let sym = linalg::symmetric_part(&matrix)?;
    let sigma_net = linalg::min_symmetric_eigenvalue(&sym)?;
    Ok(Idpm { matrix, sym, sigma_net, lossless })
}

/// Assemble the [`Idpm`] of a case at a solved operating point.
pub fn build_idpm(case: &PowerSystemCase, solution: &PowerFlowSolution) -> Result<Idpm> {
    let y = build_admittance(case)?;
    build_idpm_from(&y, &solution.theta, &solution.v)
}
