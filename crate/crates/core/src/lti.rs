//! Matrix exponential, exact zero-order-hold discretization, stability tests
//! and discrete-time rollout for small dense LTI systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Margin applied to Schur and Hurwitz tests.
pub const STABILITY_MARGIN: f64 = 1e-9;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-m Padé approximant is accurate to unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Low-degree Padé numerator/denominator pieces `(U, V)` with `exp(A) ≈ (V-U)⁻¹(V+U)`.
fn pade_low(a: &DMatrix<f64>, coeffs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut odd = DMatrix::<f64>::identity(n, n) * coeffs[1];
    let mut even = DMatrix::<f64>::identity(n, n) * coeffs[0];
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in (2..coeffs.len()).step_by(2) {
        power = &power * &a2;
        even += &power * coeffs[k];
        if k + 1 < coeffs.len() {
            odd += &power * coeffs[k + 1];
        }
    }
    (a * odd, even)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with a Padé kernel of degree 3..13.
pub fn mat_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(m, "matrix")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("mat_exp: non-finite input".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(m);
    let mut squarings = 0u32;
    let (u, v) = if norm <= THETA3 {
        pade_low(m, &PADE3)
    } else if norm <= THETA5 {
        pade_low(m, &PADE5)
    } else if norm <= THETA7 {
        pade_low(m, &PADE7)
    } else if norm <= THETA9 {
        pade_low(m, &PADE9)
    } else {
        if norm > THETA13 {
            squarings = (norm / THETA13).log2().ceil().max(0.0) as u32;
        }
        let scaled = m / 2f64.powi(squarings as i32);
        pade13(&scaled)
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let lu = denom.lu();
    let mut result = lu
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("mat_exp: singular Padé denominator".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("mat_exp: overflow".into()));
    }
    Ok(result)
}

/// `exp(A·Ts)` together with `Γ = ∫₀^Ts exp(A s) ds`, so that the ZOH input
/// matrix for any `B` is `Γ·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZohOperator {
    pub ad: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub ts: f64,
}

impl ZohOperator {
    pub fn new(a: &DMatrix<f64>, ts: f64) -> Result<Self> {
        let n = check_square(a, "A")?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::Domain(format!("sampling interval must be > 0, got {ts}")));
        }
        let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
        aug.view_mut((0, n), (n, n))
            .copy_from(&(DMatrix::<f64>::identity(n, n) * ts));
        let e = mat_exp(&aug)?;
        Ok(Self {
            ad: e.view((0, 0), (n, n)).into_owned(),
            gamma: e.view((0, n), (n, n)).into_owned(),
            ts,
        })
    }

    pub fn input_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.gamma.ncols() {
            return Err(Error::Dimension(format!(
                "B has {} rows, state dimension is {}",
                b.nrows(),
                self.gamma.ncols()
            )));
        }
        Ok(&self.gamma * b)
    }

    pub fn with_input(&self, b: &DMatrix<f64>) -> Result<DiscreteSystem> {
        Ok(DiscreteSystem {
            ad: self.ad.clone(),
            bd: self.input_matrix(b)?,
            gamma: self.gamma.clone(),
            ts: self.ts,
        })
    }
}

/// Exactly discretized system `x(k+1) = Ad x(k) + Bd u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub ts: f64,
}

impl DiscreteSystem {
    pub fn state_dim(&self) -> usize {
        self.ad.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.bd.ncols()
    }
}

/// Zero-order-hold discretization of `ẋ = A x + B u` at interval `ts`.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> Result<DiscreteSystem> {
    ZohOperator::new(a, ts)?.with_input(b)
}

fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    check_square(m, "matrix")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigenvalues of non-finite matrix".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_schur(ad: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_radius(ad)? < 1.0 - STABILITY_MARGIN)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_abscissa(a)? < -STABILITY_MARGIN)
}

/// States `x(0..=K)` of the discrete system driven by `inputs[0..K]`.
pub fn rollout(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if x0.len() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != sys.input_dim() {
            return Err(Error::Dimension(format!(
                "input {k} has length {}, expected {}",
                u.len(),
                sys.input_dim()
            )));
        }
        let next = &sys.ad * &states[k] + &sys.bd * u;
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn exp_of_diagonal() {
        let e = mat_exp(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).unwrap();
        assert!((e[(0, 0)] - std::f64::consts::E).abs() < 1e-14);
        assert!((e[(1, 1)] - 1.0 / std::f64::consts::E).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(mat_exp(&m), Err(Error::Numerical(_))));
        let big = DMatrix::from_element(2, 2, 1e6);
        assert!(matches!(mat_exp(&big), Err(Error::Numerical(_))));
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matches!(
            mat_exp(&DMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn discretize_integrator_pair() {
        let sys = discretize(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 0.5).unwrap();
        assert!(max_abs_diff(&sys.ad, &DMatrix::identity(2, 2)) < 1e-15);
        assert!(max_abs_diff(&sys.bd, &(DMatrix::identity(2, 2) * 0.5)) < 1e-15);
    }

    #[test]
    fn discretize_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let sys = discretize(&a, &b, 1.0).unwrap();
        let ad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(max_abs_diff(&sys.ad, &ad) < 1e-12);
        assert!((sys.bd[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((sys.bd[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discretize_scalar_decay() {
        let sys = discretize(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 1.0),
            2f64.ln(),
        )
        .unwrap();
        assert!((sys.ad[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((sys.bd[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn discretize_rejects_bad_ts() {
        let a = DMatrix::zeros(1, 1);
        assert!(matches!(
            discretize(&a, &a, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            discretize(&a, &DMatrix::zeros(2, 1), 0.1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn input_matrix_is_gamma_times_b() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, -1.0, 4.0, 0.5]);
        let sys = discretize(&a, &b, 0.3).unwrap();
        assert_eq!(sys.bd, &sys.gamma * &b);
    }

    #[test]
    fn schur_and_hurwitz_boundaries() {
        assert!(is_schur(&(DMatrix::identity(3, 3) * 0.5)).unwrap());
        assert!(!is_schur(&DMatrix::identity(3, 3)).unwrap());
        assert!(is_hurwitz(&(DMatrix::identity(2, 2) * -0.1)).unwrap());
        assert!(!is_hurwitz(&DMatrix::zeros(2, 2)).unwrap());
        // rotation: eigenvalues ±i have zero real part
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!is_hurwitz(&rot).unwrap());
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_geometric_sum() {
        let sys = DiscreteSystem {
            ad: DMatrix::from_element(1, 1, 0.5),
            bd: DMatrix::from_element(1, 1, 1.0),
            gamma: DMatrix::from_element(1, 1, 1.0),
            ts: 1.0,
        };
        let inputs = vec![DVector::from_element(1, 1.0); 3];
        let xs = rollout(&sys, &DVector::zeros(1), &inputs).unwrap();
        let got: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        assert_eq!(got, vec![0.0, 1.0, 1.5, 1.75]);
    }

    #[test]
    fn rollout_identity_is_constant() {
        let sys = DiscreteSystem {
            ad: DMatrix::identity(2, 2),
            bd: DMatrix::zeros(2, 1),
            gamma: DMatrix::identity(2, 2),
            ts: 1.0,
        };
        let x0 = DVector::from_vec(vec![3.0, -1.0]);
        let xs = rollout(&sys, &x0, &vec![DVector::from_element(1, 7.0); 5]).unwrap();
        assert!(xs.iter().all(|x| *x == x0));
        assert!(matches!(
            rollout(&sys, &x0, &[DVector::zeros(2)]),
            Err(Error::Dimension(_))
        ));
    }
}
