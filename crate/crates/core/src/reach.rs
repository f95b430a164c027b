//! Outer ellipsoidal approximations of attack reachable sets.
//!
//! For `x(k+1) = Ad x(k) + Bd δ(k)` with `|δ_j| ≤ W_j`, a matrix `P ≻ 0` and
//! multipliers `a, a_1..a_q` satisfying
//!
//! ```text
//! [[aP, AdᵀP, 0], [PAd, P, PBd], [0, BdᵀP, W_a]] ⪰ 0,   W_a = diag(a_j / W_j²)
//! ```
//!
//! give `V(k+1) ≤ a V(k) + Σ a_j` for `V = xᵀPx`, so the set
//! `xᵀPx ≤ Σa_j / (1 − a)` contains every state reachable from the origin.
//! The congruence `diag(Y, Y, I)` with `Y = P⁻¹` makes the inequality linear in
//! `(Y, a_j, Bd)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{self, DiscreteSystem};
use crate::realize::DecoupledSystem;
use crate::sdp::{self, Interval, LinearConstraint, LmiBlock, SdpProblem, SdpStatus};

/// Interiority margin on `Y` and on the multipliers.
pub const EPSILON: f64 = 1e-6;
/// Default relative accuracy of each SDP solve.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Allowed deviation of `P·Y` from the identity.
pub const INVERSE_TOL: f64 = 1e-8;

/// Per-channel peak bounds `|δ_j| ≤ W_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AttackBounds(Vec<f64>);

impl AttackBounds {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Domain("attack bounds need at least one channel".into()));
        }
        if let Some((j, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!(
                "attack bound W_{} must be positive and finite, got {v}",
                j + 1
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(channels: usize, w: f64) -> Result<Self> {
        Self::new(vec![w; channels])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * c).collect())
    }

    /// `diag(a_j / W_j²)`.
    pub fn weight_matrix(&self, a_vec: &[f64]) -> Result<DMatrix<f64>> {
        if a_vec.len() != self.channels() {
            return Err(Error::Dimension(format!(
                "{} multipliers for {} channels",
                a_vec.len(),
                self.channels()
            )));
        }
        Ok(DMatrix::from_diagonal(&DVector::from_iterator(
            a_vec.len(),
            a_vec.iter().zip(&self.0).map(|(a, w)| a / (w * w)),
        )))
    }
}

impl TryFrom<Vec<f64>> for AttackBounds {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<AttackBounds> for Vec<f64> {
    fn from(b: AttackBounds) -> Self {
        b.0
    }
}

/// Row-major (de)serialization of dense matrices as nested arrays.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(to_rows(m))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidResult {
    #[serde(with = "matrix_rows")]
    pub y: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub p: DMatrix<f64>,
    pub a: f64,
    pub a_vec: Vec<f64>,
    /// `(N − a)/(1 − a)` with `N` the channel count.
    pub bound_paper: f64,
    /// `(Σ a_j)/(1 − a)`; the level that provably contains the reachable set.
    pub bound_lyap: f64,
    pub trace: f64,
    pub volume_paper: f64,
    pub volume_lyap: f64,
}

impl EllipsoidResult {
    fn from_solution(y: DMatrix<f64>, a: f64, a_vec: Vec<f64>) -> Result<Self> {
        let n = y.nrows();
        let chol = Cholesky::new(y.clone())
            .ok_or_else(|| Error::Numerical("shape matrix Y is not positive definite".into()))?;
        let p = chol.inverse();
        let p = (&p + p.transpose()) * 0.5;
        let defect = (&p * &y - DMatrix::identity(n, n)).amax();
        if defect > INVERSE_TOL {
            return Err(Error::Numerical(format!("P·Y deviates from I by {defect:e}")));
        }
        let channels = a_vec.len() as f64;
        let bound_paper = (channels - a) / (1.0 - a);
        let bound_lyap = a_vec.iter().sum::<f64>() / (1.0 - a);
        Ok(Self {
            trace: y.trace(),
            volume_paper: ellipsoid_volume(&y, bound_paper)?,
            volume_lyap: ellipsoid_volume(&y, bound_lyap)?,
            y,
            p,
            a,
            a_vec,
            bound_paper,
            bound_lyap,
        })
    }

    /// Sum of squared semi-axes of `{x : xᵀPx ≤ bound_lyap}`.
    pub fn spread(&self) -> f64 {
        self.trace * self.bound_lyap
    }
}

/// Rule used to pick one point of the `a` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSelection {
    /// Minimize `trace(Y)·bound_lyap`.
    #[default]
    TraceTimesBound,
    /// Minimize `trace(Y)` alone.
    Trace,
}

impl GridSelection {
    pub fn score(self, e: &EllipsoidResult) -> f64 {
        match self {
            GridSelection::TraceTimesBound => e.spread(),
            GridSelection::Trace => e.trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub a: f64,
    pub status: SdpStatus,
    pub trace: Option<f64>,
    pub score: Option<f64>,
}

/// Outcome of a grid search: the selected ellipsoid and every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub ellipsoid: EllipsoidResult,
    pub curve: Vec<CurvePoint>,
    /// Ellipsoid at every feasible grid point, in grid order.
    #[serde(skip)]
    pub feasible: Vec<EllipsoidResult>,
}

/// `points` values of `a` with `1 − a` log-spaced in `[gap_lo, gap_hi]`,
/// returned in ascending order of `a`.
pub fn log_grid(points: usize, gap_lo: f64, gap_hi: f64) -> Result<Vec<f64>> {
    if points == 0 || !(0.0 < gap_lo && gap_lo <= gap_hi && gap_hi < 1.0) {
        return Err(Error::Domain(format!(
            "a-grid needs points > 0 and 0 < gap_lo <= gap_hi < 1, got {points}, [{gap_lo}, {gap_hi}]"
        )));
    }
    if points == 1 {
        return Ok(vec![1.0 - gap_lo]);
    }
    let (l0, l1) = (gap_lo.log10(), gap_hi.log10());
    let mut grid: Vec<f64> = (0..points)
        .map(|i| 1.0 - 10f64.powf(l1 + (l0 - l1) * i as f64 / (points - 1) as f64))
        .collect();
    grid.sort_by(f64::total_cmp);
    Ok(grid)
}

/// Default grid: 50 points, `1 − a` from `1e−4` to `0.98`.
pub fn default_a_grid() -> Vec<f64> {
    log_grid(50, 1e-4, 0.98).expect("static grid parameters are valid")
}

/// Sorted, de-duplicated copy of a grid after checking every point lies in (0, 1).
pub fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Domain("a-grid is empty".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Domain(format!("a-grid values must lie in (0, 1), got {a}")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Index pairs `(i, j)`, `i ≤ j`, of the upper triangle in row order.
pub fn sym_basis(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

pub fn sym_from_vec(n: usize, z: &[f64]) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, n);
    for (&(i, j), &v) in sym_basis(n).iter().zip(z) {
        y[(i, j)] = v;
        y[(j, i)] = v;
    }
    y
}

fn unit_sym(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn check_pre(ad: &DMatrix<f64>, bd: &DMatrix<f64>, w: &AttackBounds, a: f64) -> Result<()> {
    let n = ad.nrows();
    if ad.ncols() != n || bd.nrows() != n || bd.ncols() != w.channels() {
        return Err(Error::Dimension(format!(
            "Ad {}x{}, Bd {}x{}, {} attack channels",
            ad.nrows(),
            ad.ncols(),
            bd.nrows(),
            bd.ncols(),
            w.channels()
        )));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a must lie in (0, 1), got {a}")));
    }
    if !lti::is_schur(ad)? {
        return Err(Error::Stability("Ad is not Schur".into()));
    }
    Ok(())
}

fn check_multipliers(a_vec: &[f64], a: f64) -> Result<()> {
    if a_vec.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::Domain("multipliers a_j must lie in (0, 1)".into()));
    }
    if a_vec.iter().sum::<f64>() < a {
        return Err(Error::Domain("multipliers must satisfy Σa_j ≥ a".into()));
    }
    Ok(())
}

/// The lifted Lyapunov block for a given `P`.
pub fn lmi_p_matrix(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    w: &AttackBounds,
    a: f64,
    a_vec: &[f64],
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = ad.nrows();
    let q = w.channels();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::Dimension(format!("P must be {n}x{n}")));
    }
    let wa = w.weight_matrix(a_vec)?;
    let mut m = DMatrix::zeros(2 * n + q, 2 * n + q);
    let pad = p * ad;
    let pbd = p * bd;
    m.view_mut((0, 0), (n, n)).copy_from(&(p * a));
    m.view_mut((0, n), (n, n)).copy_from(&pad.transpose());
    m.view_mut((n, 0), (n, n)).copy_from(&pad);
    m.view_mut((n, n), (n, n)).copy_from(p);
    m.view_mut((n, 2 * n), (n, q)).copy_from(&pbd);
    m.view_mut((2 * n, n), (q, n)).copy_from(&pbd.transpose());
    m.view_mut((2 * n, 2 * n), (q, q)).copy_from(&wa);
    Ok(m)
}

/// P-form inequality over the `n(n+1)/2` entries of `P` with fixed multipliers.
/// The objective is left at zero; `P ⪰ εI` is included.
pub fn assemble_lmi_p(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    w: &AttackBounds,
    a: f64,
    a_vec: &[f64],
) -> Result<SdpProblem> {
    check_pre(ad, bd, w, a)?;
    check_multipliers(a_vec, a)?;
    let n = ad.nrows();
    let basis = sym_basis(n);
    let mut problem = SdpProblem::new(basis.len());
    let zero = DMatrix::zeros(n, n);
    let constant = lmi_p_matrix(ad, bd, w, a, a_vec, &zero)?;
    let coeffs = basis
        .iter()
        .map(|&(i, j)| {
            let e = unit_sym(n, i, j);
            // The map P ↦ block is affine with the W_a part constant.
            lmi_p_matrix(ad, bd, w, a, a_vec, &e).map(|m| m - &constant)
        })
        .collect::<Result<Vec<_>>>()?;
    problem.blocks.push(LmiBlock { constant, coeffs });
    problem.blocks.push(floor_block(n, basis.len(), 0));
    Ok(problem)
}

/// `Y − εI ⪰ 0` over variables starting at `offset`.
fn floor_block(n: usize, p: usize, offset: usize) -> LmiBlock {
    let mut block = LmiBlock::zeros(n, p);
    block.constant = -DMatrix::identity(n, n) * EPSILON;
    for (k, &(i, j)) in sym_basis(n).iter().enumerate() {
        block.coeffs[offset + k] = unit_sym(n, i, j);
    }
    block
}

/// Layout of the Y-form decision vector inside a larger problem.
#[derive(Debug, Clone, Copy)]
pub(crate) struct YLayout {
    pub n: usize,
    pub q: usize,
    pub total: usize,
    pub y_offset: usize,
    pub a_offset: usize,
}

/// Y-form problem with `Bd` entering the main block only through the constant
/// part, left at zero here. Callers add `Bd` (fixed or affine).
pub(crate) fn y_form_skeleton(
    ad: &DMatrix<f64>,
    w: &AttackBounds,
    a: f64,
    layout: YLayout,
) -> SdpProblem {
    let YLayout {
        n,
        q,
        total,
        y_offset,
        a_offset,
    } = layout;
    let dim = 2 * n + q;
    let mut problem = SdpProblem::new(total);
    let mut main = LmiBlock::zeros(dim, total);
    for (k, &(i, j)) in sym_basis(n).iter().enumerate() {
        let e = unit_sym(n, i, j);
        let f = &mut main.coeffs[y_offset + k];
        f.view_mut((0, 0), (n, n)).copy_from(&(&e * a));
        let ead = &e * ad.transpose();
        f.view_mut((0, n), (n, n)).copy_from(&ead);
        f.view_mut((n, 0), (n, n)).copy_from(&ead.transpose());
        f.view_mut((n, n), (n, n)).copy_from(&e);
        if i == j {
            problem.objective[y_offset + k] = 1.0;
        }
    }
    for (j, wj) in w.values().iter().enumerate() {
        main.coeffs[a_offset + j][(2 * n + j, 2 * n + j)] = 1.0 / (wj * wj);
        problem.bounds[a_offset + j] = Interval::new(EPSILON, 1.0 - EPSILON);
    }
    problem.blocks.push(main);
    problem.blocks.push(floor_block(n, total, y_offset));
    let mut sum = LinearConstraint {
        coeffs: vec![0.0; total],
        constant: -a,
    };
    for j in 0..q {
        sum.coeffs[a_offset + j] = 1.0;
    }
    problem.linear.push(sum);
    problem
}

/// Places `Bd` in the off-diagonal position of a Y-form main block.
pub(crate) fn set_bd(block: &mut DMatrix<f64>, n: usize, bd: &DMatrix<f64>, scale: f64) {
    let q = bd.ncols();
    block.view_mut((n, 2 * n), (n, q)).copy_from(&(bd * scale));
    block.view_mut((2 * n, n), (q, n)).copy_from(&(bd.transpose() * scale));
}

/// Y-form problem over `(Y, a_vec)` for fixed `Bd`: minimize `trace(Y)`.
pub fn assemble_lmi_y(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    w: &AttackBounds,
    a: f64,
) -> Result<SdpProblem> {
    check_pre(ad, bd, w, a)?;
    let n = ad.nrows();
    let q = w.channels();
    let ny = n * (n + 1) / 2;
    let layout = YLayout {
        n,
        q,
        total: ny + q,
        y_offset: 0,
        a_offset: ny,
    };
    let mut problem = y_form_skeleton(ad, w, a, layout);
    set_bd(&mut problem.blocks[0].constant, n, bd, 1.0);
    Ok(problem)
}

/// Reads `(Y, a_vec)` out of a solved decision vector.
pub(crate) fn ellipsoid_from_z(z: &[f64], a: f64, layout: YLayout) -> Result<EllipsoidResult> {
    let ny = layout.n * (layout.n + 1) / 2;
    let y = sym_from_vec(layout.n, &z[layout.y_offset..layout.y_offset + ny]);
    let a_vec = z[layout.a_offset..layout.a_offset + layout.q].to_vec();
    EllipsoidResult::from_solution(y, a, a_vec)
}

/// Solves the Y-form at one value of `a`. Returns the solver status and the
/// ellipsoid when the status is `Optimal`.
pub fn solve_at(
    sys: &DiscreteSystem,
    w: &AttackBounds,
    a: f64,
    tol: f64,
) -> Result<(SdpStatus, Option<EllipsoidResult>)> {
    let problem = assemble_lmi_y(&sys.ad, &sys.bd, w, a)?;
    let sol = sdp::solve(&problem, tol)?;
    if sol.status != SdpStatus::Optimal {
        return Ok((sol.status, None));
    }
    let n = sys.state_dim();
    let layout = YLayout {
        n,
        q: w.channels(),
        total: problem.num_vars(),
        y_offset: 0,
        a_offset: n * (n + 1) / 2,
    };
    match ellipsoid_from_z(&sol.z, a, layout) {
        Ok(e) => Ok((SdpStatus::Optimal, Some(e))),
        Err(Error::Numerical(_)) => Ok((SdpStatus::NumericalTrouble, None)),
        Err(e) => Err(e),
    }
}

/// Per-point outcome: solver status plus the ellipsoid and any extra payload.
pub(crate) type PointResult<T> = (SdpStatus, Option<(EllipsoidResult, T)>);

/// Runs `solve_point` over a normalized grid in parallel and selects one point.
pub(crate) fn grid_search<T, F>(
    grid: &[f64],
    selection: GridSelection,
    solve_point: F,
) -> Result<(GridResult, T, Vec<T>)>
where
    T: Clone + Send,
    F: Fn(f64) -> Result<PointResult<T>> + Sync,
{
    let grid = normalize_grid(grid)?;
    let results: Vec<PointResult<T>> = grid
        .par_iter()
        .map(|&a| solve_point(a))
        .collect::<Result<_>>()?;
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, (&a, (status, point))) in grid.iter().zip(&results).enumerate() {
        let score = point.as_ref().map(|(e, _)| selection.score(e));
        curve.push(CurvePoint {
            a,
            status: *status,
            trace: point.as_ref().map(|(e, _)| e.trace),
            score,
        });
        if let Some(s) = score {
            // Strict comparison: on ties the smallest a wins.
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((k, s));
            }
        }
    }
    let (k, _) = best.ok_or_else(|| {
        Error::AllInfeasible(format!("no feasible point on a {}-point a-grid", grid.len()))
    })?;
    let (ellipsoid, payload) = results[k].1.clone().expect("selected point is feasible");
    let (feasible, payloads) = results.into_iter().filter_map(|(_, p)| p).unzip();
    Ok((
        GridResult {
            ellipsoid,
            curve,
            feasible,
        },
        payload,
        payloads,
    ))
}

/// Grid search for a discrete system with fixed `Bd`.
pub fn solve_discrete(
    sys: &DiscreteSystem,
    w: &AttackBounds,
    a_grid: &[f64],
    selection: GridSelection,
    tol: f64,
) -> Result<GridResult> {
    if !lti::is_schur(&sys.ad)? {
        return Err(Error::Stability("Ad is not Schur".into()));
    }
    grid_search(a_grid, selection, |a| {
        solve_at(sys, w, a, tol).map(|(status, e)| (status, e.map(|e| (e, ()))))
    })
    .map(|(r, (), _)| r)
}

/// Discretizes the decoupled system at `ts` and runs the grid search.
pub fn solve_fixed_realization(
    dec: &DecoupledSystem,
    w: &AttackBounds,
    ts: f64,
    a_grid: &[f64],
    selection: GridSelection,
    tol: f64,
) -> Result<GridResult> {
    if !lti::is_hurwitz(&dec.ai)? {
        return Err(Error::Stability("decoupled dynamics are not Hurwitz".into()));
    }
    let sys = lti::discretize(&dec.ai, &dec.bdelta, ts)?;
    solve_discrete(&sys, w, a_grid, selection, tol)
}

/// Volume of `{x : xᵀY⁻¹x ≤ bound}`.
pub fn ellipsoid_volume(y: &DMatrix<f64>, bound: f64) -> Result<f64> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::Dimension("Y must be square".into()));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Domain(format!("bound must be positive, got {bound}")));
    }
    let chol = Cholesky::new(y.clone())
        .ok_or_else(|| Error::Domain("Y must be positive definite".into()))?;
    let sqrt_det = chol.l().diagonal().product();
    Ok(unit_ball_volume(n) * bound.powf(n as f64 / 2.0) * sqrt_det)
}

fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Attack strategies cycled through by [`mc_attack_sup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackStrategy {
    Uniform,
    Switching,
    ConstantExtreme,
    Greedy,
}

impl AttackStrategy {
    pub const ALL: [AttackStrategy; 4] = [
        AttackStrategy::Uniform,
        AttackStrategy::Switching,
        AttackStrategy::ConstantExtreme,
        AttackStrategy::Greedy,
    ];
}

/// Largest observed `xᵀPx / bound` over `n_runs` attacked rollouts from the
/// origin. Run `r` uses strategy `r mod 4` and RNG stream `r`.
pub fn mc_attack_sup(
    sys: &DiscreteSystem,
    w: &[f64],
    p: &DMatrix<f64>,
    bound: f64,
    n_runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let n = sys.state_dim();
    let q = sys.input_dim();
    if w.len() != q || p.nrows() != n || p.ncols() != n {
        return Err(Error::Dimension(format!(
            "system has {n} states and {q} inputs; got {} bounds and a {}x{} P",
            w.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("attack bounds must be finite and nonnegative".into()));
    }
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::Domain("bound must be positive".into()));
    }
    // Greedy direction: sign of Bdᵀ P Ad x.
    let g = sys.bd.transpose() * p * &sys.ad;
    let sup = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let strategy = AttackStrategy::ALL[run % 4];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            attacked_rollout(sys, &g, w, p, horizon, strategy, &mut rng)
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup / bound)
}

fn attacked_rollout(
    sys: &DiscreteSystem,
    g: &DMatrix<f64>,
    w: &[f64],
    p: &DMatrix<f64>,
    horizon: usize,
    strategy: AttackStrategy,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = sys.state_dim();
    let q = sys.input_dim();
    let mut x = DVector::<f64>::zeros(n);
    let mut next = DVector::<f64>::zeros(n);
    let mut delta = DVector::<f64>::zeros(q);
    let mut signs: Vec<f64> = (0..q).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let switch_prob = rng.random_range(0.001..0.2);
    let mut sup = 0.0f64;
    for _ in 0..horizon {
        match strategy {
            AttackStrategy::Uniform => {
                for j in 0..q {
                    delta[j] = w[j] * rng.random_range(-1.0..=1.0);
                }
            }
            AttackStrategy::Switching => {
                for j in 0..q {
                    if rng.random_bool(switch_prob) {
                        signs[j] = -signs[j];
                    }
                    delta[j] = w[j] * signs[j];
                }
            }
            AttackStrategy::ConstantExtreme => {
                for j in 0..q {
                    delta[j] = w[j] * signs[j];
                }
            }
            AttackStrategy::Greedy => {
                let dir = g * &x;
                for j in 0..q {
                    delta[j] = if dir[j] < 0.0 { -w[j] } else { w[j] };
                }
            }
        }
        next.gemv(1.0, &sys.ad, &x, 0.0);
        next.gemv(1.0, &sys.bd, &delta, 1.0);
        std::mem::swap(&mut x, &mut next);
        sup = sup.max(x.dot(&(p * &x)));
    }
    sup
}
