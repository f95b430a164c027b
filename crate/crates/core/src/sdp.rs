//! Small dense semidefinite programs in inequality form:
//!
//! ```text
//! minimize    cᵀz
//! subject to  F_b0 + Σ_j z_j F_bj ⪰ 0   for every block b
//!             g_k0 + Σ_j z_j g_kj ≥ 0   for every linear row k
//!             l_j ≤ z_j ≤ u_j
//! ```
//!
//! Solved with an infeasible-start primal-dual path-following method (HKM
//! search direction, Mehrotra predictor-corrector). When the main run fails
//! to converge, a phase-I problem `min t s.t. F(z) + tI ⪰ 0` decides between
//! infeasibility and numerical trouble. Every `Optimal` answer is re-checked
//! by an eigenvalue evaluation of the blocks at the returned point.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Worst block eigenvalue accepted for an `Optimal` status.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Slack allowed on interval bounds.
pub const BOUND_TOL: f64 = 1e-9;
/// Maximum asymmetry of constraint matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

const MAX_ITERATIONS: usize = 120;
/// Dual residuals stall around this level on ill-conditioned blocks; primal
/// feasibility is verified separately, so the dual test is not tightened further.
const DUAL_FEASIBILITY_FLOOR: f64 = 1e-7;
const DIVERGENCE_LIMIT: f64 = 1e13;
/// Lower bound on `t` in phase I; keeps the auxiliary problem bounded.
const PHASE_ONE_FLOOR: f64 = 1.0;

/// `F_0 + Σ z_j F_j ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    /// Block of dimension `n` over `p` variables, all coefficients zero.
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            constant: DMatrix::zeros(n, n),
            coeffs: vec![DMatrix::zeros(n, n); p],
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (f, &zj) in self.coeffs.iter().zip(z) {
            if zj != 0.0 {
                m += f * zj;
            }
        }
        m
    }
}

/// `constant + coeffsᵀ z ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl LinearConstraint {
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Closed interval; infinite endpoints mean "unbounded on that side".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const FREE: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn at_most(upper: f64) -> Self {
        Self::new(f64::NEG_INFINITY, upper)
    }

    pub fn at_least(lower: f64) -> Self {
        Self::new(lower, f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub linear: Vec<LinearConstraint>,
    pub bounds: Vec<Interval>,
}

impl SdpProblem {
    /// Empty problem over `p` free variables with zero objective.
    pub fn new(p: usize) -> Self {
        Self {
            objective: vec![0.0; p],
            blocks: Vec::new(),
            linear: Vec::new(),
            bounds: vec![Interval::FREE; p],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.num_vars();
        if self.bounds.len() != p {
            return Err(Error::Dimension(format!(
                "{} bounds for {p} variables",
                self.bounds.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("objective must be finite".into()));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let n = block.dim();
            if block.constant.ncols() != n || block.coeffs.len() != p {
                return Err(Error::Dimension(format!(
                    "block {b}: expected square constant and {p} coefficient matrices"
                )));
            }
            for (j, f) in std::iter::once(&block.constant).chain(&block.coeffs).enumerate() {
                if f.nrows() != n || f.ncols() != n {
                    return Err(Error::Dimension(format!("block {b} matrix {j} is not {n}x{n}")));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("block {b} matrix {j} is not finite")));
                }
                let asym = (f - f.transpose()).amax();
                if asym > SYMMETRY_TOL * f.amax().max(1.0) {
                    return Err(Error::Domain(format!(
                        "block {b} matrix {j} is not symmetric (asymmetry {asym:e})"
                    )));
                }
            }
        }
        for (k, row) in self.linear.iter().enumerate() {
            if row.coeffs.len() != p {
                return Err(Error::Dimension(format!("linear row {k} has wrong length")));
            }
            if !row.constant.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("linear row {k} is not finite")));
            }
        }
        for (j, iv) in self.bounds.iter().enumerate() {
            if iv.lower.is_nan() || iv.upper.is_nan() || iv.lower > iv.upper {
                return Err(Error::Domain(format!(
                    "bound on variable {j} is empty: [{}, {}]",
                    iv.lower, iv.upper
                )));
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue over all blocks and smallest linear-row slack at `z`.
    pub fn min_residual(&self, z: &[f64]) -> f64 {
        let mut worst = f64::INFINITY;
        for block in &self.blocks {
            worst = worst.min(min_eigenvalue(&block.evaluate(z)));
        }
        for row in &self.linear {
            worst = worst.min(row.evaluate(z));
        }
        worst
    }

    fn bounds_satisfied(&self, z: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(z)
            .all(|(iv, &v)| v >= iv.lower - BOUND_TOL && v <= iv.upper + BOUND_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub z: Vec<f64>,
    pub objective: f64,
    /// Worst block eigenvalue (or linear slack) at `z`.
    pub min_eig_residual: f64,
    pub iterations: usize,
    /// Phase-I optimum `t*` when infeasibility was examined: the least uniform
    /// shift that makes every constraint hold.
    pub infeasibility_certificate: Option<f64>,
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `problem` to relative accuracy `tol`.
pub fn solve(problem: &SdpProblem, tol: f64) -> Result<SdpSolution> {
    if !(1e-10..=1e-4).contains(&tol) {
        return Err(Error::Domain(format!("tol must lie in [1e-10, 1e-4], got {tol:e}")));
    }
    problem.validate()?;
    let std = StandardForm::from_problem(problem);
    let first = std.run(tol, None);
    let mut iterations = first.iterations;
    if first.converged {
        if let Some(sol) = accept(problem, &first.z, iterations) {
            return Ok(sol);
        }
    }

    // Decide between infeasibility and numerical difficulty.
    let phase_one = StandardForm::phase_one(problem);
    let p1 = phase_one.run(tol, None);
    iterations += p1.iterations;
    let t_star = *p1.z.last().unwrap_or(&f64::INFINITY);
    let z_p1: Vec<f64> = p1.z[..problem.num_vars()].to_vec();
    let shift = -problem.min_residual(&clamp_to_bounds(problem, &z_p1));
    let certified = if p1.converged {
        t_star.min(p1.dual_bound.max(t_star - tol))
    } else {
        p1.dual_bound
    };
    if certified > FEASIBILITY_TOL && shift > FEASIBILITY_TOL {
        return Ok(SdpSolution {
            status: SdpStatus::Infeasible,
            objective: dot(&problem.objective, &z_p1),
            z: z_p1,
            min_eig_residual: -shift,
            iterations,
            infeasibility_certificate: Some(certified),
        });
    }
    if shift < 0.0 {
        // Strictly feasible point found: restart the main problem from it.
        let retry = std.run(tol, Some(&z_p1));
        iterations += retry.iterations;
        if retry.converged {
            if let Some(mut sol) = accept(problem, &retry.z, iterations) {
                sol.infeasibility_certificate = Some(t_star);
                return Ok(sol);
            }
        }
    }
    let z = clamp_to_bounds(problem, &first.z);
    Ok(SdpSolution {
        status: SdpStatus::NumericalTrouble,
        objective: dot(&problem.objective, &z),
        min_eig_residual: problem.min_residual(&z),
        z,
        iterations,
        infeasibility_certificate: Some(t_star),
    })
}

fn accept(problem: &SdpProblem, z: &[f64], iterations: usize) -> Option<SdpSolution> {
    let z = clamp_to_bounds(problem, z);
    let residual = problem.min_residual(&z);
    if residual >= -FEASIBILITY_TOL && problem.bounds_satisfied(&z) {
        Some(SdpSolution {
            status: SdpStatus::Optimal,
            objective: dot(&problem.objective, &z),
            z,
            min_eig_residual: residual,
            iterations,
            infeasibility_certificate: None,
        })
    } else {
        None
    }
}

fn clamp_to_bounds(problem: &SdpProblem, z: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(&problem.bounds)
        .map(|(&v, iv)| v.clamp(iv.lower, iv.upper))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Internal representation with bounds folded into linear rows.
struct StandardForm {
    c: DVector<f64>,
    blocks: Vec<LmiBlock>,
    /// Rows `g0 + G z ≥ 0`.
    g: DMatrix<f64>,
    g0: DVector<f64>,
}

struct RunOutcome {
    z: Vec<f64>,
    converged: bool,
    iterations: usize,
    /// Largest dual objective seen, corrected for the dual residual; a lower
    /// bound on the optimal value by weak duality.
    dual_bound: f64,
}

/// Trace of `A·B` for symmetric `A`.
fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest step `α` with `S + α ΔS ⪰ 0` (infinite when `ΔS ⪰ 0`).
fn max_step_psd(s_chol: &Cholesky<f64, nalgebra::Dyn>, ds: &DMatrix<f64>) -> f64 {
    let l = s_chol.l();
    let linv_ds = match l.solve_lower_triangular(ds) {
        Some(m) => m,
        None => return 0.0,
    };
    let inner = match l.solve_lower_triangular(&linv_ds.transpose()) {
        Some(m) => m,
        None => return 0.0,
    };
    let lam = min_eigenvalue(&inner);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn max_step_vec(s: &DVector<f64>, ds: &DVector<f64>) -> f64 {
    s.iter()
        .zip(ds.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

impl StandardForm {
    fn from_problem(problem: &SdpProblem) -> Self {
        let p = problem.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = problem
            .linear
            .iter()
            .map(|r| (r.coeffs.clone(), r.constant))
            .collect();
        for (j, iv) in problem.bounds.iter().enumerate() {
            if iv.lower.is_finite() {
                let mut a = vec![0.0; p];
                a[j] = 1.0;
                rows.push((a, -iv.lower));
            }
            if iv.upper.is_finite() {
                let mut a = vec![0.0; p];
                a[j] = -1.0;
                rows.push((a, iv.upper));
            }
        }
        let mut g = DMatrix::zeros(rows.len(), p);
        let mut g0 = DVector::zeros(rows.len());
        for (k, (a, b)) in rows.iter().enumerate() {
            for j in 0..p {
                g[(k, j)] = a[j];
            }
            g0[k] = *b;
        }
        Self {
            c: DVector::from_column_slice(&problem.objective),
            blocks: problem.blocks.clone(),
            g,
            g0,
        }
    }

    /// `min t  s.t.  F_b(z) + t I ⪰ 0,  row_k(z) + t ≥ 0,  t ≥ −PHASE_ONE_FLOOR`.
    fn phase_one(problem: &SdpProblem) -> Self {
        let base = Self::from_problem(problem);
        let p = problem.num_vars();
        let mut c = DVector::zeros(p + 1);
        c[p] = 1.0;
        let blocks = base
            .blocks
            .iter()
            .map(|b| {
                let mut coeffs = b.coeffs.clone();
                coeffs.push(DMatrix::identity(b.dim(), b.dim()));
                LmiBlock {
                    constant: b.constant.clone(),
                    coeffs,
                }
            })
            .collect();
        let rows = base.g.nrows();
        let mut g = DMatrix::zeros(rows + 1, p + 1);
        g.view_mut((0, 0), (rows, p)).copy_from(&base.g);
        for k in 0..rows {
            g[(k, p)] = 1.0;
        }
        g[(rows, p)] = 1.0;
        let mut g0 = DVector::zeros(rows + 1);
        g0.rows_mut(0, rows).copy_from(&base.g0);
        g0[rows] = PHASE_ONE_FLOOR;
        Self { c, blocks, g, g0 }
    }

    fn num_vars(&self) -> usize {
        self.c.len()
    }

    fn block_value(&self, b: usize, z: &DVector<f64>) -> DMatrix<f64> {
        self.blocks[b].evaluate(z.as_slice())
    }

    fn run(&self, tol: f64, start: Option<&[f64]>) -> RunOutcome {
        let p = self.num_vars();
        let nb = self.blocks.len();
        let lp = self.g.nrows();
        let dims: Vec<usize> = self.blocks.iter().map(|b| b.dim()).collect();
        let nu = (dims.iter().sum::<usize>() + lp) as f64;
        if nu == 0.0 {
            return RunOutcome {
                z: vec![0.0; p],
                converged: false,
                iterations: 0,
                dual_bound: f64::NEG_INFINITY,
            };
        }

        let c_norm = self.c.norm();
        let f0_norm = self
            .blocks
            .iter()
            .map(|b| b.constant.norm_squared())
            .sum::<f64>()
            .sqrt()
            .max(self.g0.norm());

        // Starting point.
        let mut z = match start {
            Some(s) => DVector::from_column_slice(s),
            None => DVector::zeros(p),
        };
        let mut s_blocks = Vec::with_capacity(nb);
        let mut x_blocks = Vec::with_capacity(nb);
        for (b, block) in self.blocks.iter().enumerate() {
            let n = dims[b];
            let nf = (n as f64).sqrt();
            let coeff_max = block.coeffs.iter().map(|f| f.norm()).fold(0.0, f64::max);
            let eta = 10f64.max(nf).max(block.constant.norm()).max(coeff_max);
            let xi = block
                .coeffs
                .iter()
                .zip(self.c.iter())
                .map(|(f, cj)| n as f64 * (1.0 + cj.abs()) / (1.0 + f.norm()))
                .fold(10f64.max(nf), f64::max);
            let s0 = match start {
                Some(_) => {
                    let v = self.block_value(b, &z);
                    if min_eigenvalue(&v) > 0.0 {
                        v
                    } else {
                        DMatrix::identity(n, n) * eta
                    }
                }
                None => DMatrix::identity(n, n) * eta,
            };
            s_blocks.push(s0);
            x_blocks.push(DMatrix::identity(n, n) * xi);
        }
        let mut s_lp = DVector::from_element(lp, 10.0);
        let mut x_lp = DVector::from_element(lp, 10.0);
        if start.is_some() {
            let v = &self.g * &z + &self.g0;
            for k in 0..lp {
                if v[k] > 0.0 {
                    s_lp[k] = v[k];
                }
            }
        }
        for k in 0..lp {
            let row_norm = self.g.row(k).norm();
            s_lp[k] = s_lp[k].max(1.0).max(self.g0[k].abs().min(1e3));
            x_lp[k] = 10f64.max((1.0 + self.c.amax()) / (1.0 + row_norm));
        }

        let mut dual_bound = f64::NEG_INFINITY;
        let mut iterations = 0;
        for it in 0..MAX_ITERATIONS {
            iterations = it + 1;
            // Residuals.
            let mut rp = -self.c.clone();
            for (b, block) in self.blocks.iter().enumerate() {
                for j in 0..p {
                    rp[j] += trace_product(&block.coeffs[j], &x_blocks[b]);
                }
            }
            rp += self.g.transpose() * &x_lp;
            let rd: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| &s_blocks[b] - self.block_value(b, &z))
                .collect();
            let rd_lp = &s_lp - (&self.g * &z + &self.g0);

            let gap: f64 = (0..nb)
                .map(|b| trace_product(&x_blocks[b], &s_blocks[b]))
                .sum::<f64>()
                + x_lp.dot(&s_lp);
            let mu = gap / nu;
            let pobj = self.c.dot(&z);
            let dobj = -(0..nb)
                .map(|b| trace_product(&self.blocks[b].constant, &x_blocks[b]))
                .sum::<f64>()
                - self.g0.dot(&x_lp);
            let rel_gap = gap / (1.0 + pobj.abs() + dobj.abs());
            let pinf = (rd.iter().map(|m| m.norm_squared()).sum::<f64>() + rd_lp.norm_squared())
                .sqrt()
                / (1.0 + f0_norm);
            let dinf = rp.norm() / (1.0 + c_norm);
            let corrected = dobj - rp.norm() * z.norm();
            if corrected.is_finite() {
                dual_bound = dual_bound.max(corrected);
            }
            log::trace!(
                "it {it} pobj {pobj:.6e} dobj {dobj:.6e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}"
            );
            if rel_gap < tol && pinf < tol && dinf < tol.max(DUAL_FEASIBILITY_FLOOR) {
                return RunOutcome {
                    z: z.iter().copied().collect(),
                    converged: true,
                    iterations: it,
                    dual_bound,
                };
            }
            if !gap.is_finite()
                || z.amax() > DIVERGENCE_LIMIT
                || x_blocks.iter().any(|x| x.amax() > DIVERGENCE_LIMIT)
                || x_lp.amax() > DIVERGENCE_LIMIT
            {
                break;
            }

            // Factorizations.
            let mut s_chols = Vec::with_capacity(nb);
            let mut s_invs = Vec::with_capacity(nb);
            let mut x_chols = Vec::with_capacity(nb);
            let mut ok = true;
            for b in 0..nb {
                match (
                    Cholesky::new(sym(&s_blocks[b])),
                    Cholesky::new(sym(&x_blocks[b])),
                ) {
                    (Some(sc), Some(xc)) => {
                        s_invs.push(sym(&sc.inverse()));
                        s_chols.push(sc);
                        x_chols.push(xc);
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || s_lp.iter().any(|v| *v <= 0.0) || x_lp.iter().any(|v| *v <= 0.0) {
                break;
            }

            // Schur complement M_ij = Σ_b tr(F_i X F_j S⁻¹) + Σ_k g_ki (x_k/s_k) g_kj.
            let mut m = DMatrix::zeros(p, p);
            let mut xfs: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(nb);
            for b in 0..nb {
                let block = &self.blocks[b];
                let prods: Vec<DMatrix<f64>> = block
                    .coeffs
                    .iter()
                    .map(|f| {
                        if f.amax() == 0.0 {
                            DMatrix::zeros(dims[b], dims[b])
                        } else {
                            &x_blocks[b] * f * &s_invs[b]
                        }
                    })
                    .collect();
                for i in 0..p {
                    if block.coeffs[i].amax() == 0.0 {
                        continue;
                    }
                    for j in i..p {
                        let v = trace_product(&block.coeffs[i], &prods[j]);
                        m[(i, j)] += v;
                        if i != j {
                            m[(j, i)] += v;
                        }
                    }
                }
                xfs.push(prods);
            }
            let ratio = x_lp.component_div(&s_lp);
            let mut g_scaled = self.g.clone();
            for k in 0..lp {
                g_scaled.row_mut(k).scale_mut(ratio[k]);
            }
            m += self.g.transpose() * &g_scaled;
            let m = sym(&m);
            let diag_max = m.diagonal().amax().max(1e-300);
            let m_chol = match Cholesky::new(m.clone()) {
                Some(c) => c,
                None => {
                    let reg = &m + DMatrix::identity(p, p) * (diag_max * 1e-14);
                    match Cholesky::new(reg) {
                        Some(c) => c,
                        None => break,
                    }
                }
            };

            // Solve for one direction given the complementarity targets.
            let direction = |targets: &[DMatrix<f64>], targets_lp: &DVector<f64>| {
                // targets: σμS⁻¹ − X − corrector terms (without the ΔS part)
                let mut rhs = rp.clone();
                for b in 0..nb {
                    let xrs = &x_blocks[b] * &rd[b] * &s_invs[b];
                    let cb = &targets[b] + xrs;
                    for j in 0..p {
                        rhs[j] += trace_product(&self.blocks[b].coeffs[j], &cb);
                    }
                }
                let lp_term = targets_lp + x_lp.component_mul(&rd_lp).component_div(&s_lp);
                rhs += self.g.transpose() * lp_term;
                let mut dz = m_chol.solve(&rhs);
                for _ in 0..2 {
                    let r = &rhs - &m * &dz;
                    dz += m_chol.solve(&r);
                }
                let ds: Vec<DMatrix<f64>> = (0..nb)
                    .map(|b| {
                        let mut d = -&rd[b];
                        for j in 0..p {
                            if dz[j] != 0.0 {
                                d += &self.blocks[b].coeffs[j] * dz[j];
                            }
                        }
                        d
                    })
                    .collect();
                let dx: Vec<DMatrix<f64>> = (0..nb)
                    .map(|b| sym(&(&targets[b] - &x_blocks[b] * &ds[b] * &s_invs[b])))
                    .collect();
                let ds_lp = -&rd_lp + &self.g * &dz;
                let dx_lp = targets_lp - x_lp.component_mul(&ds_lp).component_div(&s_lp);
                (dz, ds, dx, ds_lp, dx_lp)
            };
            let _ = &xfs;

            let step_lengths = |ds: &[DMatrix<f64>], dx: &[DMatrix<f64>], ds_lp: &DVector<f64>, dx_lp: &DVector<f64>| {
                let mut ap = max_step_vec(&s_lp, ds_lp);
                let mut ad = max_step_vec(&x_lp, dx_lp);
                for b in 0..nb {
                    ap = ap.min(max_step_psd(&s_chols[b], &ds[b]));
                    ad = ad.min(max_step_psd(&x_chols[b], &dx[b]));
                }
                (ap, ad)
            };

            // Predictor.
            let aff_targets: Vec<DMatrix<f64>> = (0..nb).map(|b| -&x_blocks[b]).collect();
            let aff_lp = -&x_lp;
            let (_, ds_a, dx_a, ds_lp_a, dx_lp_a) = direction(&aff_targets, &aff_lp);
            let (ap_a, ad_a) = step_lengths(&ds_a, &dx_a, &ds_lp_a, &dx_lp_a);
            let ap_a = ap_a.min(1.0);
            let ad_a = ad_a.min(1.0);
            let mut gap_aff = 0.0;
            for b in 0..nb {
                gap_aff += trace_product(
                    &(&x_blocks[b] + &dx_a[b] * ad_a),
                    &(&s_blocks[b] + &ds_a[b] * ap_a),
                );
            }
            gap_aff += (&x_lp + &dx_lp_a * ad_a).dot(&(&s_lp + &ds_lp_a * ap_a));
            let sigma = (gap_aff / gap).max(0.0).powi(3).min(1.0);
            let sigma = if pinf > 1e3 * tol || dinf > 1e3 * tol {
                sigma.max(0.1 * (1.0 - ap_a.min(ad_a)))
            } else {
                sigma
            };

            // Corrector.
            let targets: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| {
                    &s_invs[b] * (sigma * mu) - &x_blocks[b]
                        - sym(&(&dx_a[b] * &ds_a[b] * &s_invs[b]))
                })
                .collect();
            let targets_lp = DVector::from_iterator(
                lp,
                (0..lp).map(|k| {
                    (sigma * mu - dx_lp_a[k] * ds_lp_a[k]) / s_lp[k] - x_lp[k]
                }),
            );
            let (dz, ds, dx, ds_lp, dx_lp) = direction(&targets, &targets_lp);
            let (ap, ad) = step_lengths(&ds, &dx, &ds_lp, &dx_lp);
            let gamma = 0.9 + 0.09 * ap_a.min(ad_a);
            let ap = (gamma * ap).min(1.0);
            let ad = (gamma * ad).min(1.0);
            if !(ap.is_finite() && ad.is_finite()) || (ap < 1e-12 && ad < 1e-12) {
                break;
            }

            z += &dz * ap;
            for b in 0..nb {
                s_blocks[b] = sym(&(&s_blocks[b] + &ds[b] * ap));
                x_blocks[b] = sym(&(&x_blocks[b] + &dx[b] * ad));
            }
            s_lp += &ds_lp * ap;
            x_lp += &dx_lp * ad;
            if ap >= 1.0 - 1e-12 {
                // Primal residual is now zero up to rounding; resynchronize S with F(z).
                for (b, s_b) in s_blocks.iter_mut().enumerate() {
                    let v = sym(&self.block_value(b, &z));
                    if Cholesky::new(v.clone()).is_some() {
                        *s_b = v;
                    }
                }
                let v = &self.g * &z + &self.g0;
                if v.iter().all(|x| *x > 0.0) {
                    s_lp = v;
                }
            }
        }
        RunOutcome {
            z: z.iter().copied().collect(),
            converged: false,
            iterations,
            dual_bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_lyapunov(a: f64, scale: f64) -> SdpProblem {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.blocks.push(LmiBlock {
            constant: DMatrix::zeros(2, 2),
            coeffs: vec![DMatrix::from_row_slice(2, 2, &[a, 0.5, 0.5, 1.0]) * scale],
        });
        p.bounds[0] = Interval::new(1.0, 10.0);
        p
    }

    #[test]
    fn one_by_one_block() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.blocks.push(LmiBlock {
            constant: DMatrix::zeros(1, 1),
            coeffs: vec![DMatrix::identity(1, 1)],
        });
        p.bounds[0] = Interval::at_most(10.0);
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.z[0].abs() < 1e-7, "{:?}", sol);
    }

    #[test]
    fn trace_above_identity() {
        // Y = [[y1, y2], [y2, y3]] ⪰ I, minimize y1 + y3.
        let mut p = SdpProblem::new(3);
        p.objective = vec![1.0, 0.0, 1.0];
        p.blocks.push(LmiBlock {
            constant: -DMatrix::identity(2, 2),
            coeffs: vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            ],
        });
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-7);
        assert!((sol.z[0] - 1.0).abs() < 1e-6 && sol.z[1].abs() < 1e-6 && (sol.z[2] - 1.0).abs() < 1e-6);
    }

    // Block [[a y, y/2], [y/2, y]] ⪰ 0 with y > 0 holds iff a·y² ≥ y²/4, i.e. a ≥ 1/4.
    #[test]
    fn scalar_lyapunov_feasibility() {
        let infeasible = solve(&scalar_lyapunov(0.2, 1.0), 1e-9).unwrap();
        assert_eq!(infeasible.status, SdpStatus::Infeasible);
        assert!(infeasible.infeasibility_certificate.unwrap() > FEASIBILITY_TOL);

        let boundary = solve(&scalar_lyapunov(0.25, 1.0), 1e-9).unwrap();
        assert_eq!(boundary.status, SdpStatus::Optimal);
        assert!((boundary.z[0] - 1.0).abs() < 1e-6);

        let feasible = solve(&scalar_lyapunov(0.3, 1.0), 1e-9).unwrap();
        assert_eq!(feasible.status, SdpStatus::Optimal);
        assert!((feasible.z[0] - 1.0).abs() < 1e-7);
        assert!(feasible.min_eig_residual > 0.0);
    }

    #[test]
    fn feasibility_status_is_scale_invariant() {
        for a in [0.2, 0.25, 0.3] {
            let s1 = solve(&scalar_lyapunov(a, 1.0), 1e-9).unwrap().status;
            let s10 = solve(&scalar_lyapunov(a, 10.0), 1e-9).unwrap().status;
            assert_eq!(s1, s10, "a={a}");
        }
    }

    #[test]
    fn linear_rows_and_bounds() {
        // minimize −z1 − z2 s.t. z1 + z2 ≤ 1.5, 0 ≤ z ≤ 1
        let mut p = SdpProblem::new(2);
        p.objective = vec![-1.0, -2.0];
        p.linear.push(LinearConstraint {
            coeffs: vec![-1.0, -1.0],
            constant: 1.5,
        });
        p.bounds = vec![Interval::new(0.0, 1.0); 2];
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.z[0] - 0.5).abs() < 1e-6 && (sol.z[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_malformed_problems() {
        let mut p = scalar_lyapunov(0.3, 1.0);
        p.blocks[0].coeffs[0][(0, 1)] = 0.7;
        assert!(matches!(solve(&p, 1e-9), Err(Error::Domain(_))));
        let mut p = scalar_lyapunov(0.3, 1.0);
        p.bounds[0] = Interval::new(2.0, 1.0);
        assert!(matches!(solve(&p, 1e-9), Err(Error::Domain(_))));
        let p = scalar_lyapunov(0.3, 1.0);
        assert!(matches!(solve(&p, 1e-3), Err(Error::Domain(_))));
        let mut p = scalar_lyapunov(0.3, 1.0);
        p.blocks[0].coeffs.push(DMatrix::zeros(2, 2));
        assert!(matches!(solve(&p, 1e-9), Err(Error::Dimension(_))));
    }

    #[test]
    fn infeasible_linear_system() {
        // z ≥ 2 and z ≤ 1
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.linear.push(LinearConstraint { coeffs: vec![1.0], constant: -2.0 });
        p.linear.push(LinearConstraint { coeffs: vec![-1.0], constant: 1.0 });
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!((sol.infeasibility_certificate.unwrap() - 0.5).abs() < 1e-6);
    }
}
