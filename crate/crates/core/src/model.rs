//! Continuous-time platoon model around one follower.
//!
//! State ordering used throughout the crate:
//! `x = [e, ė, z, v_prev, a_prev]` with `z = v_prev − v`, augmented with the
//! controller state `ρ` as `[x; ρ]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti;

/// Residual allowed on `[C D]·[C D]⁻¹ = I`.
pub const SENSOR_INVERSE_TOL: f64 = 1e-12;

/// Physical and control constants of a homogeneous platoon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatoonParams {
    /// Time gap [s].
    pub h: f64,
    /// Driveline time constant [s].
    pub tau: f64,
    /// Standstill distance [m].
    pub r: f64,
    /// Proportional gain [1/s²].
    pub kp: f64,
    /// Derivative gain [1/s].
    pub kd: f64,
    /// Sampling interval [s].
    pub ts: f64,
    /// Number of vehicles including the leader.
    pub m: usize,
}

impl Default for PlatoonParams {
    fn default() -> Self {
        Self {
            h: 1.0,
            tau: 0.1,
            r: 2.0,
            kp: 0.2,
            kd: 0.7,
            ts: 0.01,
            m: 3,
        }
    }
}

impl PlatoonParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("tau", self.tau),
            ("kp", self.kp),
            ("kd", self.kd),
            ("ts", self.ts),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Domain(format!("{name} must be > 0, got {value}")));
            }
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::Domain(format!("r must be >= 0, got {}", self.r)));
        }
        if self.m < 2 {
            return Err(Error::Domain(format!("m must be >= 2, got {}", self.m)));
        }
        Ok(())
    }
}

/// Follower dynamics `ẋ = A x + B1 u + B2 u_prev` and the base feedback row `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrices {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// Sensor map `y = C x + D u_prev` and the inverse of the stacked `[C D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMap {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub cd_inv: DMatrix<f64>,
}

impl SensorMap {
    /// `[C D]` as one 6×6 matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut cd = DMatrix::zeros(6, 6);
        cd.view_mut((0, 0), (6, 5)).copy_from(&self.c);
        cd.view_mut((0, 5), (6, 1)).copy_from(&self.d);
        cd
    }
}

/// Base closed loop `[ẋ; ρ̇] = 𝒜 [x; ρ] + ℬ_u u_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub acal: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    /// Largest real part among eigenvalues of the (e, ė, z, ρ) block.
    pub spectral_abscissa: f64,
}

impl ClosedLoop {
    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa < -lti::STABILITY_MARGIN
    }
}

/// Indices of `(e, ė, z, ρ)` inside the augmented state.
pub const DECOUPLED_INDICES: [usize; 4] = [0, 1, 2, 5];

pub fn build_plant(params: &PlatoonParams) -> Result<PlantMatrices> {
    params.validate()?;
    let PlatoonParams { h, tau, kp, kd, .. } = *params;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(5, 5, &[
        0.0, 1.0,             0.0,             0.0, 0.0,
        0.0, 1.0 / h - 1.0 / tau, 1.0 / tau - 1.0 / h, 0.0, 1.0,
        0.0, 1.0 / h,         -1.0 / h,        0.0, 1.0,
        0.0, 0.0,             0.0,             0.0, 1.0,
        0.0, 0.0,             0.0,             0.0, -1.0 / tau,
    ]);
    let b1 = DMatrix::from_column_slice(5, 1, &[0.0, -h / tau, 0.0, 0.0, 0.0]);
    let b2 = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 0.0, 0.0, 1.0 / tau]);
    let k = DMatrix::from_row_slice(1, 5, &[kp / h, kd / h, 0.0, 0.0, 0.0]);
    Ok(PlantMatrices { a, b1, b2, k })
}

pub fn build_sensor_map(params: &PlatoonParams) -> Result<SensorMap> {
    let h = params.h;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("h must be > 0, got {h}")));
    }
    // y = [d − r, v, a, v_prev − v, a_prev, u_prev]
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(6, 5, &[
        1.0, 0.0,      -h,       h,   0.0,
        0.0, 0.0,      -1.0,     1.0, 0.0,
        0.0, -1.0 / h, 1.0 / h,  0.0, 0.0,
        0.0, 0.0,      1.0,      0.0, 0.0,
        0.0, 0.0,      0.0,      0.0, 1.0,
        0.0, 0.0,      0.0,      0.0, 0.0,
    ]);
    let d = DMatrix::from_column_slice(6, 1, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let mut map = SensorMap {
        c,
        d,
        cd_inv: DMatrix::zeros(6, 6),
    };
    let cd = map.stacked();
    let inv = cd
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("[C D] is singular".into()))?;
    let residual = (&cd * &inv - DMatrix::<f64>::identity(6, 6)).amax();
    if residual.is_nan() || residual > SENSOR_INVERSE_TOL {
        return Err(Error::Numerical(format!(
            "[C D] inverse residual {residual:e} exceeds {SENSOR_INVERSE_TOL:e}"
        )));
    }
    map.cd_inv = inv;
    Ok(map)
}

/// Assembles `𝒜` and `ℬ_u` and records the spectral abscissa of the
/// (e, ė, z, ρ) block without enforcing stability.
pub fn assemble_closed_loop(plant: &PlantMatrices, params: &PlatoonParams) -> Result<ClosedLoop> {
    let h = params.h;
    let mut acal = DMatrix::zeros(6, 6);
    acal.view_mut((0, 0), (5, 5)).copy_from(&plant.a);
    acal.view_mut((0, 5), (5, 1)).copy_from(&plant.b1);
    acal.view_mut((5, 0), (1, 5)).copy_from(&plant.k);
    acal[(5, 5)] = -1.0 / h;
    let mut bu = DMatrix::zeros(6, 1);
    bu.view_mut((0, 0), (5, 1)).copy_from(&plant.b2);
    bu[(5, 0)] = 1.0 / h;
    let block = acal.select_rows(&DECOUPLED_INDICES).select_columns(&DECOUPLED_INDICES);
    let spectral_abscissa = lti::spectral_abscissa(&block)?;
    Ok(ClosedLoop {
        acal,
        bu,
        spectral_abscissa,
    })
}

/// Closed loop with the Hurwitz requirement enforced on the (e, ė, z, ρ) block.
pub fn build_closed_loop(plant: &PlantMatrices, params: &PlatoonParams) -> Result<ClosedLoop> {
    let cl = assemble_closed_loop(plant, params)?;
    if !cl.is_stable() {
        return Err(Error::Stability(format!(
            "closed loop (e, ė, z, ρ) block has spectral abscissa {:.3e} >= 0; gains kp={}, kd={} do not stabilize",
            cl.spectral_abscissa, params.kp, params.kd
        )));
    }
    Ok(cl)
}
