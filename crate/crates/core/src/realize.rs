//! Controller realizations obtained by the state change `ρ̄ = α ρ + β y`.
//!
//! Every realization produces the same `u` when the sensors are clean. Under
//! false-data injection the closed loop, written back in `[x; ρ]` coordinates,
//! differs only through the attack matrix `ℬ_δ`, which depends on `β / α`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, ClosedLoop, PlantMatrices, PlatoonParams, SensorMap, DECOUPLED_INDICES,
};

/// Tolerance for identities that hold algebraically.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for entries that vanish by construction.
pub const STRUCTURAL_ZERO_TOL: f64 = 1e-14;

/// Number of sensor channels.
pub const CHANNELS: usize = 6;
/// Entries of `β` that may be chosen freely; the sixth is pinned to zero.
pub const FREE_BETA: usize = 5;

/// One member `(α, β)` of the realization class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RealizationRepr", into = "RealizationRepr")]
pub struct Realization {
    alpha: f64,
    beta: [f64; CHANNELS],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealizationRepr {
    alpha: f64,
    beta: [f64; FREE_BETA],
}

impl TryFrom<RealizationRepr> for Realization {
    type Error = Error;

    fn try_from(r: RealizationRepr) -> Result<Self> {
        Realization::new(r.alpha, r.beta)
    }
}

impl From<Realization> for RealizationRepr {
    fn from(r: Realization) -> Self {
        RealizationRepr {
            alpha: r.alpha,
            beta: r.free_beta(),
        }
    }
}

impl Realization {
    pub fn new(alpha: f64, free_beta: [f64; FREE_BETA]) -> Result<Self> {
        let mut beta = [0.0; CHANNELS];
        beta[..FREE_BETA].copy_from_slice(&free_beta);
        Self::from_row(alpha, beta)
    }

    /// Builds from a full 6-entry row; the last entry must be exactly zero.
    pub fn from_row(alpha: f64, beta: [f64; CHANNELS]) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be finite and nonzero, got {alpha}")));
        }
        if beta[CHANNELS - 1] != 0.0 {
            return Err(Error::Domain(format!(
                "beta[6] must be zero (u_prev cannot enter the transformation), got {}",
                beta[CHANNELS - 1]
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta must be finite".into()));
        }
        Ok(Self { alpha, beta })
    }

    /// The base controller: `α = 1, β = 0`.
    pub fn base() -> Self {
        Self {
            alpha: 1.0,
            beta: [0.0; CHANNELS],
        }
    }

    /// The alternative controller with coefficients `α = −τ/h`,
    /// `β = [0, 0, 1 − τ/h, 0, τ/h, 0]`.
    pub fn chat(params: &PlatoonParams) -> Result<Self> {
        let (h, tau) = (params.h, params.tau);
        if !(h > 0.0 && tau > 0.0) {
            return Err(Error::Domain(format!("need h > 0 and tau > 0, got h={h}, tau={tau}")));
        }
        Self::new(-tau / h, [0.0, 0.0, 1.0 - tau / h, 0.0, tau / h])
    }

    /// The realization whose coefficients describe the inverse map
    /// `ρ = α ρ̄ + β y`, i.e. `(1/α, −β/α)`.
    ///
    /// Applied to [`Realization::chat`] this yields the controller whose
    /// output is `−(τ/h) ρ̂ + (1 − τ/h) a + (τ/h) a_prev` with pole `−1/τ`.
    pub fn inverted(&self) -> Self {
        let mut beta = [0.0; CHANNELS];
        for (b, src) in beta.iter_mut().zip(self.beta.iter()) {
            *b = -src / self.alpha;
        }
        Self {
            alpha: 1.0 / self.alpha,
            beta,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64; CHANNELS] {
        &self.beta
    }

    pub fn free_beta(&self) -> [f64; FREE_BETA] {
        let mut out = [0.0; FREE_BETA];
        out.copy_from_slice(&self.beta[..FREE_BETA]);
        out
    }

    /// `β / α` with `α` normalized to one; this alone determines `ℬ_δ`.
    pub fn normalized(&self) -> Self {
        let mut beta = self.beta;
        beta.iter_mut().for_each(|b| *b /= self.alpha);
        Self { alpha: 1.0, beta }
    }

    pub fn beta_row(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, CHANNELS, &self.beta)
    }

    /// Coordinate change `[x; ρ̄] = T [x; ρ]` with `T = [[I, 0], [βC, α]]`.
    pub fn transformation(&self, sensor: &SensorMap) -> DMatrix<f64> {
        let mut t = DMatrix::identity(6, 6);
        let bc = self.beta_row() * &sensor.c;
        t.view_mut((5, 0), (1, 5)).copy_from(&bc);
        t[(5, 5)] = self.alpha;
        t
    }
}

/// Controller `ρ̄̇ = a_c ρ̄ + b_c y`, `u = c_c ρ̄ + d_c y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedController {
    pub a_c: f64,
    pub b_c: [f64; CHANNELS],
    pub c_c: f64,
    pub d_c: [f64; CHANNELS],
}

/// The decoupled attacked subsystem on `(e, ė, z, ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledSystem {
    pub ai: DMatrix<f64>,
    /// Inputs `[v_prev, a_prev, u_prev]`.
    pub bprev: DMatrix<f64>,
    pub bdelta: DMatrix<f64>,
}

/// All realization-independent matrices of one follower.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonModel {
    pub params: PlatoonParams,
    pub plant: PlantMatrices,
    pub sensor: SensorMap,
    pub closed_loop: ClosedLoop,
}

impl PlatoonModel {
    /// Builds the model and requires the (e, ė, z, ρ) block to be Hurwitz.
    pub fn new(params: &PlatoonParams) -> Result<Self> {
        let plant = model::build_plant(params)?;
        let sensor = model::build_sensor_map(params)?;
        let closed_loop = model::build_closed_loop(&plant, params)?;
        Ok(Self {
            params: *params,
            plant,
            sensor,
            closed_loop,
        })
    }

    /// Builds the model without enforcing closed-loop stability.
    pub fn new_unchecked(params: &PlatoonParams) -> Result<Self> {
        let plant = model::build_plant(params)?;
        let sensor = model::build_sensor_map(params)?;
        let closed_loop = model::assemble_closed_loop(&plant, params)?;
        Ok(Self {
            params: *params,
            plant,
            sensor,
            closed_loop,
        })
    }

    pub fn attack_matrix(&self, real: &Realization) -> Result<DMatrix<f64>> {
        attack_matrix(&self.plant, &self.sensor, &self.params, real)
    }

    pub fn realized_controller(&self, real: &Realization) -> Result<RealizedController> {
        realized_controller(&self.plant, &self.sensor, &self.params, real)
    }

    pub fn decoupled(&self, real: &Realization) -> Result<DecoupledSystem> {
        let bdelta = self.attack_matrix(real)?;
        decouple(&self.closed_loop, &bdelta, &self.closed_loop.bu)
    }
}

/// `[K 1/h]` as a 1×6 row.
fn feedback_row(plant: &PlantMatrices, params: &PlatoonParams) -> DMatrix<f64> {
    let mut row = DMatrix::zeros(1, 6);
    row.view_mut((0, 0), (1, 5)).copy_from(&plant.k);
    row[(0, 5)] = 1.0 / params.h;
    row
}

/// `[A B2]` as a 5×6 block.
fn a_b2(plant: &PlantMatrices) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(5, 6);
    m.view_mut((0, 0), (5, 5)).copy_from(&plant.a);
    m.view_mut((0, 5), (5, 1)).copy_from(&plant.b2);
    m
}

fn row_to_array(m: &DMatrix<f64>) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    for (o, v) in out.iter_mut().zip(m.iter()) {
        *o = *v;
    }
    out
}

/// Attack input matrix `ℬ_δ` of the closed loop in `[x; ρ]` coordinates.
///
/// Top 5×6 block: `−(1/α) B1 β`. Bottom row:
/// `([K 1/h] + (1/α) β C [A B2]) [C D]⁻¹ + β / (h α)`.
pub fn attack_matrix(
    plant: &PlantMatrices,
    sensor: &SensorMap,
    params: &PlatoonParams,
    real: &Realization,
) -> Result<DMatrix<f64>> {
    let alpha = real.alpha;
    if alpha == 0.0 {
        return Err(Error::Domain("alpha must be nonzero".into()));
    }
    let beta = real.beta_row();
    let mut out = DMatrix::zeros(6, CHANNELS);
    let top = &plant.b1 * &beta * (-1.0 / alpha);
    out.view_mut((0, 0), (5, CHANNELS)).copy_from(&top);
    let inner = feedback_row(plant, params) + &beta * &sensor.c * a_b2(plant) / alpha;
    let bottom = inner * &sensor.cd_inv + &beta / (params.h * alpha);
    out.view_mut((5, 0), (1, CHANNELS)).copy_from(&bottom);
    Ok(out)
}

pub fn realized_controller(
    plant: &PlantMatrices,
    sensor: &SensorMap,
    params: &PlatoonParams,
    real: &Realization,
) -> Result<RealizedController> {
    let alpha = real.alpha;
    if alpha == 0.0 {
        return Err(Error::Domain("alpha must be nonzero".into()));
    }
    let h = params.h;
    let beta = real.beta_row();
    let beta_c_b1 = (&beta * &sensor.c * &plant.b1)[(0, 0)];
    let a_c = beta_c_b1 / alpha - 1.0 / h;
    let lead = feedback_row(plant, params) * alpha + &beta * &sensor.c * a_b2(plant);
    let b_c = lead * &sensor.cd_inv + &beta / h - &beta * (beta_c_b1 / alpha);
    let d_c = &beta * (-1.0 / alpha);
    Ok(RealizedController {
        a_c,
        b_c: row_to_array(&b_c),
        c_c: 1.0 / alpha,
        d_c: row_to_array(&d_c),
    })
}

/// Closed loop in realized coordinates `[x; ρ̄]`: returns `(Ā, B̄_u, B̄_δ)`.
pub fn realized_closed_loop(
    model: &PlatoonModel,
    real: &Realization,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let ctrl = model.realized_controller(real)?;
    let plant = &model.plant;
    let sensor = &model.sensor;
    let b_c = DMatrix::from_row_slice(1, CHANNELS, &ctrl.b_c);
    let d_c = DMatrix::from_row_slice(1, CHANNELS, &ctrl.d_c);
    let mut abar = DMatrix::zeros(6, 6);
    abar.view_mut((0, 0), (5, 5))
        .copy_from(&(&plant.a + &plant.b1 * &d_c * &sensor.c));
    abar.view_mut((0, 5), (5, 1))
        .copy_from(&(&plant.b1 * ctrl.c_c));
    abar.view_mut((5, 0), (1, 5)).copy_from(&(&b_c * &sensor.c));
    abar[(5, 5)] = ctrl.a_c;
    let mut bu = DMatrix::zeros(6, 1);
    bu.view_mut((0, 0), (5, 1))
        .copy_from(&(&plant.b2 + &plant.b1 * &d_c * &sensor.d));
    bu[(5, 0)] = (&b_c * &sensor.d)[(0, 0)];
    let mut bdelta = DMatrix::zeros(6, CHANNELS);
    bdelta.view_mut((0, 0), (5, CHANNELS)).copy_from(&(&plant.b1 * &d_c));
    bdelta.view_mut((5, 0), (1, CHANNELS)).copy_from(&b_c);
    Ok((abar, bu, bdelta))
}

/// Restricts the attacked closed loop to `(e, ė, z, ρ)`.
pub fn decouple(
    closed_loop: &ClosedLoop,
    bdelta_full: &DMatrix<f64>,
    bu: &DMatrix<f64>,
) -> Result<DecoupledSystem> {
    if bdelta_full.nrows() != 6 || bu.nrows() != 6 || bu.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "expected 6-row attack matrix and 6x1 B_u, got {}x{} and {}x{}",
            bdelta_full.nrows(),
            bdelta_full.ncols(),
            bu.nrows(),
            bu.ncols()
        )));
    }
    for row in [3, 4] {
        let worst = bdelta_full.row(row).amax();
        if worst > STRUCTURAL_ZERO_TOL {
            return Err(Error::Structural(format!(
                "attack matrix row {} must vanish, max |entry| = {worst:e}",
                row + 1
            )));
        }
    }
    let ai = closed_loop
        .acal
        .select_rows(&DECOUPLED_INDICES)
        .select_columns(&DECOUPLED_INDICES);
    let mut bprev = DMatrix::zeros(4, 3);
    for (i, &r) in DECOUPLED_INDICES.iter().enumerate() {
        bprev[(i, 0)] = closed_loop.acal[(r, 3)];
        bprev[(i, 1)] = closed_loop.acal[(r, 4)];
        bprev[(i, 2)] = bu[(r, 0)];
    }
    let bdelta = bdelta_full.select_rows(&DECOUPLED_INDICES);
    if !crate::lti::is_hurwitz(&ai)? {
        return Err(Error::Stability(
            "decoupled (e, ė, z, ρ) dynamics are not Hurwitz".into(),
        ));
    }
    Ok(DecoupledSystem { ai, bprev, bdelta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(h: f64, tau: f64, kp: f64, kd: f64) -> PlatoonParams {
        PlatoonParams {
            h,
            tau,
            kp,
            kd,
            ..PlatoonParams::default()
        }
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let d = (a - b).amax();
        assert!(d <= tol, "max diff {d:e}\n{a}\n{b}");
    }

    #[test]
    fn named_realizations() {
        let c = Realization::base();
        assert_eq!(c.alpha(), 1.0);
        assert_eq!(c.beta(), &[0.0; 6]);
        let chat = Realization::chat(&params(1.0, 0.1, 0.2, 0.7)).unwrap();
        assert!((chat.alpha() + 0.1).abs() < 1e-15);
        let expect = [0.0, 0.0, 0.9, 0.0, 0.1, 0.0];
        for (b, e) in chat.beta().iter().zip(expect) {
            assert!((b - e).abs() < 1e-15);
        }
        let equal = Realization::chat(&params(0.7, 0.7, 0.2, 0.7)).unwrap();
        assert_eq!(equal.alpha(), -1.0);
        assert_eq!(equal.beta(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn invalid_realizations() {
        assert!(Realization::new(0.0, [0.0; 5]).is_err());
        assert!(Realization::from_row(1.0, [0.0, 0.0, 0.0, 0.0, 0.0, 1e-300]).is_err());
        assert!(Realization::new(f64::NAN, [0.0; 5]).is_err());
    }

    #[test]
    fn realization_serializes_five_free_entries() {
        let r = Realization::new(2.0, [1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"alpha":2.0,"beta":[1.0,2.0,3.0,4.0,5.0]}"#);
        let back: Realization = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<Realization>(r#"{"alpha":0.0,"beta":[0,0,0,0,0]}"#).is_err());
    }

    #[test]
    fn base_attack_matrix() {
        let p = params(1.0, 0.1, 0.2, 0.7);
        let model = PlatoonModel::new(&p).unwrap();
        let b = model.attack_matrix(&Realization::base()).unwrap();
        assert!(b.rows(0, 5).amax() == 0.0);
        let expect = [0.2, -0.2, -0.7, 0.7, 0.0, 1.0];
        for (j, e) in expect.iter().enumerate() {
            assert!((b[(5, j)] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gain_attack_matrix() {
        // Gains of zero are outside the validated domain, so assemble by hand.
        for h in [0.5, 2.0] {
            let p = params(h, 0.1, 0.2, 0.7);
            let mut plant = model::build_plant(&p).unwrap();
            plant.k.fill(0.0);
            let sensor = model::build_sensor_map(&p).unwrap();
            let b = attack_matrix(&plant, &sensor, &p, &Realization::base()).unwrap();
            let ctrl = realized_controller(&plant, &sensor, &p, &Realization::base()).unwrap();
            for j in 0..5 {
                assert!(b[(5, j)].abs() < 1e-15);
                assert!(ctrl.b_c[j].abs() < 1e-15);
            }
            assert!((b[(5, 5)] - 1.0 / h).abs() < 1e-15);
            assert!((ctrl.b_c[5] - 1.0 / h).abs() < 1e-15);
        }
    }

    #[test]
    fn attack_matrix_depends_on_ratio_only() {
        let p = params(1.3, 0.2, 0.4, 0.9);
        let model = PlatoonModel::new(&p).unwrap();
        let beta0 = [0.3, -0.5, 0.2, 1.1, -0.7];
        let r1 = Realization::new(1.0, beta0).unwrap();
        let r2 = Realization::new(2.0, beta0.map(|b| 2.0 * b)).unwrap();
        assert_close(
            &model.attack_matrix(&r1).unwrap(),
            &model.attack_matrix(&r2).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn base_controller_through_sensors() {
        let p = params(1.0, 0.1, 0.2, 0.7);
        let model = PlatoonModel::new(&p).unwrap();
        let c = model.realized_controller(&Realization::base()).unwrap();
        assert!((c.a_c + 1.0).abs() < 1e-15);
        assert_eq!(c.c_c, 1.0);
        assert!(c.d_c.iter().all(|v| *v == 0.0));
        let expect = [0.2, -0.2, -0.7, 0.7, 0.0, 1.0];
        for (b, e) in c.b_c.iter().zip(expect) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_invariants() {
        let p = params(0.8, 0.25, 0.3, 0.8);
        let model = PlatoonModel::new(&p).unwrap();
        let r = Realization::new(-1.7, [0.4, 0.1, -0.3, 0.6, 0.2]).unwrap();
        let c = model.realized_controller(&r).unwrap();
        assert!((c.c_c - 1.0 / r.alpha()).abs() < 1e-15);
        for j in 0..6 {
            assert!((c.d_c[j] + r.beta()[j] / r.alpha()).abs() < 1e-15);
        }
        let bcb1 = (r.beta_row() * &model.sensor.c * &model.plant.b1)[(0, 0)];
        assert!((c.a_c - (bcb1 / r.alpha() - 1.0 / p.h)).abs() < 1e-15);
    }

    #[test]
    fn inverted_chat_matches_direct_alternative_form() {
        let p = params(1.0, 0.1, 0.2, 0.7);
        let (h, tau) = (p.h, p.tau);
        let model = PlatoonModel::new(&p).unwrap();
        let lef = Realization::chat(&p).unwrap().inverted();
        assert!((lef.alpha() + h / tau).abs() < 1e-12);
        let c = model.realized_controller(&lef).unwrap();
        // û = −(τ/h) ρ̂ + (1 − τ/h) a + (τ/h) a_prev, ρ̂̇ = −ρ̂/τ − (kp e + kd ė)/τ
        assert!((c.c_c + tau / h).abs() < 1e-12);
        assert!((c.d_c[2] - (1.0 - tau / h)).abs() < 1e-12);
        assert!((c.d_c[4] - tau / h).abs() < 1e-12);
        assert!((c.a_c + 1.0 / tau).abs() < 1e-12);
        // b_c y must equal −(kp e + kd ė)/τ; map through [C D]⁻¹
        let b_c = DMatrix::from_row_slice(1, 6, &c.b_c) * model.sensor.stacked();
        let expect = [-p.kp / tau, -p.kd / tau, 0.0, 0.0, 0.0, 0.0];
        for j in 0..6 {
            assert!((b_c[(0, j)] - expect[j]).abs() < 1e-10, "{j}: {}", b_c[(0, j)]);
        }
    }

    #[test]
    fn realized_loop_transforms_back() {
        let p = params(1.0, 0.1, 0.2, 0.7);
        let model = PlatoonModel::new(&p).unwrap();
        for r in [
            Realization::base(),
            Realization::chat(&p).unwrap(),
            Realization::new(2.5, [0.3, -1.0, 0.4, 0.2, -0.6]).unwrap(),
        ] {
            let (abar, bbar_u, bbar_d) = realized_closed_loop(&model, &r).unwrap();
            let t = r.transformation(&model.sensor);
            let tinv = t.clone().try_inverse().unwrap();
            assert_close(&(&tinv * &abar * &t), &model.closed_loop.acal, 1e-12);
            assert_close(&(&tinv * &bbar_u), &model.closed_loop.bu, 1e-12);
            assert_close(&(&tinv * &bbar_d), &model.attack_matrix(&r).unwrap(), 1e-10);
        }
    }

    #[test]
    fn decoupled_blocks() {
        let p = params(1.0, 0.1, 0.2, 0.7);
        let model = PlatoonModel::new(&p).unwrap();
        let dec = model.decoupled(&Realization::base()).unwrap();
        let row0: Vec<f64> = dec.ai.row(0).iter().copied().collect();
        assert_eq!(row0, vec![0.0, 1.0, 0.0, 0.0]);
        let row3: Vec<f64> = dec.ai.row(3).iter().copied().collect();
        assert!((row3[0] - 0.2).abs() < 1e-15 && (row3[1] - 0.7).abs() < 1e-15);
        assert_eq!((row3[2], row3[3]), (0.0, -1.0));
        #[rustfmt::skip]
        let bprev = DMatrix::from_row_slice(4, 3, &[
            0.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0 / p.h,
        ]);
        assert_eq!(dec.bprev, bprev);
        assert!(dec.bdelta.rows(0, 3).amax() == 0.0);
        let expect = [p.kp / p.h, -p.kp, -p.kd, p.kd / p.h, 0.0, 1.0 / p.h];
        for (j, want) in expect.iter().enumerate() {
            assert!((dec.bdelta[(3, j)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn decouple_rejects_lead_rows() {
        let p = PlatoonParams::default();
        let model = PlatoonModel::new(&p).unwrap();
        let mut b = model.attack_matrix(&Realization::base()).unwrap();
        b[(4, 2)] = 1e-9;
        assert!(matches!(
            decouple(&model.closed_loop, &b, &model.closed_loop.bu),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn decoupled_dynamics_independent_of_realization() {
        let p = PlatoonParams::default();
        let model = PlatoonModel::new(&p).unwrap();
        let a = model.decoupled(&Realization::base()).unwrap();
        let b = model.decoupled(&Realization::chat(&p).unwrap()).unwrap();
        assert_eq!(a.ai, b.ai);
        assert_eq!(a.bprev, b.bprev);
        assert!(b.bprev.column(0).iter().all(|v| *v == 0.0));
    }
}
