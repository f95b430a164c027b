//! Joint optimization of the ellipsoid shape and the realization parameters.
//!
//! With `α = 1` the decoupled attack matrix is affine in the five free entries
//! of `β`, so the discrete `Bd(β) = Γ (B_0 + Σ β_j D_j)` enters the Y-form
//! inequality linearly and one SDP per grid value of `a` optimizes over
//! `(Y, β, a_1..a_6)` together.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{self, ZohOperator};
use crate::model::{PlatoonParams, DECOUPLED_INDICES};
use crate::reach::{
    self, ellipsoid_from_z, grid_search, matrix_rows, set_bd, y_form_skeleton, AttackBounds,
    CurvePoint, EllipsoidResult, GridResult, GridSelection, YLayout,
};
use crate::realize::{PlatoonModel, Realization, CHANNELS, FREE_BETA};
use crate::sdp::{self, SdpProblem, SdpStatus};

/// Residual allowed when checking that the attack matrix is affine in `β`.
pub const AFFINITY_TOL: f64 = 1e-12;

const STATES: usize = 4;
const Y_VARS: usize = STATES * (STATES + 1) / 2;
const BETA_OFFSET: usize = Y_VARS;
const A_OFFSET: usize = Y_VARS + FREE_BETA;
/// Decision vector length: `Y`, free `β`, multipliers.
pub const NUM_VARS: usize = A_OFFSET + CHANNELS;

const LAYOUT: YLayout = YLayout {
    n: STATES,
    q: CHANNELS,
    total: NUM_VARS,
    y_offset: 0,
    a_offset: A_OFFSET,
};

/// Continuous decoupled attack matrix as `base + Σ β_j directions[j]` (α = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineAttack {
    pub base: DMatrix<f64>,
    pub directions: Vec<DMatrix<f64>>,
}

impl AffineAttack {
    pub fn from_model(model: &PlatoonModel) -> Result<Self> {
        let decoupled = |beta: [f64; FREE_BETA]| -> Result<DMatrix<f64>> {
            let real = Realization::new(1.0, beta)?;
            Ok(model.attack_matrix(&real)?.select_rows(&DECOUPLED_INDICES))
        };
        let base = decoupled([0.0; FREE_BETA])?;
        let directions = (0..FREE_BETA)
            .map(|j| {
                let mut e = [0.0; FREE_BETA];
                e[j] = 1.0;
                decoupled(e).map(|m| m - &base)
            })
            .collect::<Result<Vec<_>>>()?;
        let affine = Self { base, directions };

        let probe = [0.37, -1.3, 0.81, 2.2, -0.45];
        let exact = decoupled(probe)?;
        let residual = (&exact - affine.evaluate(&probe)).amax();
        let scale = exact.amax().max(1.0);
        if residual > AFFINITY_TOL * scale {
            return Err(Error::Structural(format!(
                "attack matrix is not affine in beta: residual {residual:e}"
            )));
        }
        Ok(affine)
    }

    pub fn evaluate(&self, beta: &[f64; FREE_BETA]) -> DMatrix<f64> {
        let mut m = self.base.clone();
        for (d, b) in self.directions.iter().zip(beta) {
            m += d * *b;
        }
        m
    }
}

/// Y-form problem at fixed `a` over `z = (Y, β_1..β_5, a_1..a_6)`.
pub fn assemble_synthesis(
    affine: &AffineAttack,
    zoh: &ZohOperator,
    w: &AttackBounds,
    a: f64,
) -> Result<SdpProblem> {
    if zoh.ad.nrows() != STATES || affine.base.nrows() != STATES || w.channels() != CHANNELS {
        return Err(Error::Dimension(format!(
            "synthesis expects a {STATES}-state system with {CHANNELS} channels"
        )));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a must lie in (0, 1), got {a}")));
    }
    if !lti::is_schur(&zoh.ad)? {
        return Err(Error::Stability("Ad is not Schur".into()));
    }
    let mut problem = y_form_skeleton(&zoh.ad, w, a, LAYOUT);
    let main = &mut problem.blocks[0];
    set_bd(&mut main.constant, STATES, &zoh.input_matrix(&affine.base)?, 1.0);
    for (j, d) in affine.directions.iter().enumerate() {
        set_bd(&mut main.coeffs[BETA_OFFSET + j], STATES, &zoh.input_matrix(d)?, 1.0);
    }
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub beta_opt: [f64; CHANNELS],
    #[serde(with = "matrix_rows")]
    pub y_opt: DMatrix<f64>,
    pub a_opt: f64,
    pub a_vec_opt: Vec<f64>,
    pub trace_opt: f64,
    pub ellipsoid: EllipsoidResult,
    pub selection: GridSelection,
    pub curve: Vec<CurvePoint>,
    /// Ellipsoid at every feasible grid point.
    #[serde(skip)]
    pub feasible: Vec<EllipsoidResult>,
    /// Optimal `β` at each feasible grid point, aligned with `feasible`.
    #[serde(skip)]
    pub feasible_beta: Vec<[f64; CHANNELS]>,
    pub comparisons: BTreeMap<String, GridResult>,
}

impl SynthesisResult {
    pub fn realization(&self) -> Realization {
        Realization::from_row(1.0, self.beta_opt).expect("beta_opt has a zero last entry")
    }
}

/// Settings shared by synthesis and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub a_grid: Vec<f64>,
    pub selection: GridSelection,
    pub tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            a_grid: reach::default_a_grid(),
            selection: GridSelection::default(),
            tol: reach::DEFAULT_TOL,
        }
    }
}

/// Optimal realization over the grid, with the base and alternative
/// controllers evaluated on the same grid for comparison.
pub fn optimize_realization(
    params: &PlatoonParams,
    w: &AttackBounds,
    opts: &SearchOptions,
) -> Result<SynthesisResult> {
    let model = PlatoonModel::new(params)?;
    let affine = AffineAttack::from_model(&model)?;
    let ai = model.decoupled(&Realization::base())?.ai;
    let zoh = ZohOperator::new(&ai, params.ts)?;

    let (grid, beta, feasible_beta) = grid_search(&opts.a_grid, opts.selection, |a| {
        let problem = assemble_synthesis(&affine, &zoh, w, a)?;
        let sol = sdp::solve(&problem, opts.tol)?;
        if sol.status != SdpStatus::Optimal {
            return Ok((sol.status, None));
        }
        match ellipsoid_from_z(&sol.z, a, LAYOUT) {
            Ok(e) => {
                let mut beta = [0.0; CHANNELS];
                beta[..FREE_BETA].copy_from_slice(&sol.z[BETA_OFFSET..BETA_OFFSET + FREE_BETA]);
                Ok((SdpStatus::Optimal, Some((e, beta))))
            }
            Err(Error::Numerical(_)) => Ok((SdpStatus::NumericalTrouble, None)),
            Err(e) => Err(e),
        }
    })?;

    let mut comparisons = BTreeMap::new();
    for (name, real) in [
        ("C", Realization::base()),
        ("Chat", Realization::chat(params)?),
    ] {
        comparisons.insert(name.to_string(), evaluate_with_model(&model, &real, w, opts)?);
    }
    let e = grid.ellipsoid;
    Ok(SynthesisResult {
        beta_opt: beta,
        y_opt: e.y.clone(),
        a_opt: e.a,
        a_vec_opt: e.a_vec.clone(),
        trace_opt: e.trace,
        ellipsoid: e,
        selection: opts.selection,
        curve: grid.curve,
        feasible: grid.feasible,
        feasible_beta,
        comparisons,
    })
}

/// Reachable-set approximation of one fixed realization.
pub fn evaluate_realization(
    real: &Realization,
    params: &PlatoonParams,
    w: &AttackBounds,
    opts: &SearchOptions,
) -> Result<GridResult> {
    let model = PlatoonModel::new(params)?;
    evaluate_with_model(&model, real, w, opts)
}

fn evaluate_with_model(
    model: &PlatoonModel,
    real: &Realization,
    w: &AttackBounds,
    opts: &SearchOptions,
) -> Result<GridResult> {
    let dec = model.decoupled(real)?;
    reach::solve_fixed_realization(&dec, w, model.params.ts, &opts.a_grid, opts.selection, opts.tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (PlatoonModel, AffineAttack, ZohOperator) {
        let params = PlatoonParams::default();
        let model = PlatoonModel::new(&params).unwrap();
        let affine = AffineAttack::from_model(&model).unwrap();
        let ai = model.decoupled(&Realization::base()).unwrap().ai;
        let zoh = ZohOperator::new(&ai, params.ts).unwrap();
        (model, affine, zoh)
    }

    #[test]
    fn variable_count() {
        let (_, affine, zoh) = setup();
        let w = AttackBounds::uniform(6, 1.0).unwrap();
        let p = assemble_synthesis(&affine, &zoh, &w, 0.999).unwrap();
        assert_eq!(p.num_vars(), 21);
        assert_eq!(p.blocks[0].dim(), 14);
    }

    #[test]
    fn zero_beta_slice_is_base_realization() {
        let (model, affine, zoh) = setup();
        let w = AttackBounds::uniform(6, 1.0).unwrap();
        let a = 0.995;
        let synth = assemble_synthesis(&affine, &zoh, &w, a).unwrap();
        let dec = model.decoupled(&Realization::base()).unwrap();
        let bd = zoh.input_matrix(&dec.bdelta).unwrap();
        let fixed = reach::assemble_lmi_y(&zoh.ad, &bd, &w, a).unwrap();
        // Same point in both parametrizations.
        let y: Vec<f64> = (0..10).map(|k| 0.1 + 0.01 * k as f64).collect();
        let a_vec = [0.9, 0.8, 0.7, 0.95, 0.6, 0.5];
        let mut z_synth = y.clone();
        z_synth.extend([0.0; 5]);
        z_synth.extend(a_vec);
        let mut z_fixed = y;
        z_fixed.extend(a_vec);
        let diff = synth.blocks[0].evaluate(&z_synth) - fixed.blocks[0].evaluate(&z_fixed);
        assert!(diff.amax() < 1e-15);
    }

    #[test]
    fn directions_match_finite_differences() {
        let (model, affine, zoh) = setup();
        for j in 0..FREE_BETA {
            for step in [1e-3, 1.0, 7.5] {
                let mut beta = [0.0; FREE_BETA];
                beta[j] = step;
                let real = Realization::new(1.0, beta).unwrap();
                let shifted = model.attack_matrix(&real).unwrap().select_rows(&DECOUPLED_INDICES);
                let fd = (shifted - &affine.base) / step;
                assert!((fd - &affine.directions[j]).amax() < 1e-10);
            }
            // Only the Bd slot depends on beta.
            let w = AttackBounds::uniform(6, 1.0).unwrap();
            let p = assemble_synthesis(&affine, &zoh, &w, 0.99).unwrap();
            let f = &p.blocks[0].coeffs[BETA_OFFSET + j];
            assert_eq!(f.view((0, 0), (8, 8)).amax(), 0.0);
            assert_eq!(f.view((8, 8), (6, 6)).amax(), 0.0);
        }
    }

    #[test]
    fn small_grid_synthesis_dominates_fixed_realizations() {
        let params = PlatoonParams::default();
        let w = AttackBounds::uniform(6, 1.0).unwrap();
        let opts = SearchOptions {
            a_grid: vec![0.995, 0.999],
            ..SearchOptions::default()
        };
        let res = optimize_realization(&params, &w, &opts).unwrap();
        assert_eq!(res.beta_opt[5], 0.0);
        assert_eq!(res.trace_opt, res.y_opt.trace());
        assert!(opts.a_grid.contains(&res.a_opt));
        for cmp in res.comparisons.values() {
            for (mine, theirs) in res.curve.iter().zip(&cmp.curve) {
                assert_eq!(mine.a, theirs.a);
                if let (Some(t0), Some(t1)) = (mine.trace, theirs.trace) {
                    assert!(t0 <= t1 + 1e-6, "{t0} vs {t1} at a={}", mine.a);
                }
            }
        }
        // Fixing beta at the optimum reproduces the joint optimum.
        let again = evaluate_realization(
            &res.realization(),
            &params,
            &w,
            &SearchOptions {
                a_grid: vec![res.a_opt],
                ..opts.clone()
            },
        )
        .unwrap();
        assert!((again.ellipsoid.trace - res.trace_opt).abs() < 1e-6);
    }

    #[test]
    fn alpha_scaling_does_not_change_evaluation() {
        let params = PlatoonParams::default();
        let w = AttackBounds::uniform(6, 1.0).unwrap();
        let opts = SearchOptions {
            a_grid: vec![0.998],
            ..SearchOptions::default()
        };
        let beta = [0.1, -0.2, 0.05, 0.3, -0.04];
        let r1 = Realization::new(1.0, beta).unwrap();
        let r2 = Realization::new(2.0, beta.map(|b| 2.0 * b)).unwrap();
        let e1 = evaluate_realization(&r1, &params, &w, &opts).unwrap();
        let e2 = evaluate_realization(&r2, &params, &w, &opts).unwrap();
        assert!((e1.ellipsoid.trace - e2.ellipsoid.trace).abs() < 1e-9);
    }
}
