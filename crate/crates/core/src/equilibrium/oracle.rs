//! Closed-form value for liabilities without a cross term, where the common
//! and idiosyncratic parts decouple into Gaussian quadratic-exponential
//! moments under the Ornstein-Uhlenbeck transition law.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, psd_sqrt, symmetrized};
use crate::model::{ModelParams, TerminalLiability};
use crate::scalar::Real;

/// `log 𝔼[exp(½⟨Ax,x⟩ + ⟨b,x⟩ + c)]` for `x ~ N(mean, cov)`.
///
/// Errors when `I − cov^{1/2} A cov^{1/2}` is not positive definite, where
/// the moment is infinite.
pub fn gaussian_log_moment<T: Real>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    c: T,
    mean: &DVector<T>,
    cov: &DMatrix<T>,
    t: T,
) -> Result<T> {
    let n = mean.len();
    let half = T::lit(0.5);
    let root = psd_sqrt(cov);
    let inner = symmetrized(DMatrix::identity(n, n) - &root * a * &root);
    if !is_positive_definite(&inner) {
        return Err(Error::NonIntegrable {
            t: t.as_f64(),
            detail: "quadratic exponent exceeds the Gaussian tail".into(),
        });
    }
    let m = DMatrix::identity(n, n) - cov * a;
    let lu = m.lu();
    let det = lu.determinant();
    let g = a * mean + b;
    let solved = lu.solve(&(cov * &g)).ok_or(Error::Singular { what: "I - cov A", t: t.as_f64() })?;
    Ok(c + half * (a * mean).dot(mean) + b.dot(mean) + half * g.dot(&solved) - half * det.ln())
}

/// `(1/γ) log 𝔼[exp(γ q(x_T)) | x_t = x]` for an OU factor with reversion
/// `k`, level `level` and diffusion `vol`.
#[allow(clippy::too_many_arguments)]
fn ou_certainty_equivalent<T: Real>(
    gamma: T,
    k: T,
    level: &DVector<T>,
    vol: &DMatrix<T>,
    horizon: T,
    a: &DMatrix<T>,
    b: &DVector<T>,
    c: T,
    x: &DVector<T>,
    t: T,
) -> Result<T> {
    let tau = horizon - t;
    let e = (-k * tau).exp();
    let mean = x * e + level * (T::one() - e);
    let spread = (T::one() - (-T::lit(2.0) * k * tau).exp()) / (T::lit(2.0) * k);
    let cov = symmetrized(vol * vol.transpose() * spread);
    Ok(gaussian_log_moment(&(a * gamma), &(b * gamma), c * gamma, &mean, &cov, t)? / gamma)
}

fn require_separable<T: Real>(term: &TerminalLiability<T>) -> Result<()> {
    if term.a10.iter().any(|&x| x != T::zero()) {
        return Err(Error::Validation("separable value requires a10F = 0".into()));
    }
    Ok(())
}

/// Common part of the value, including the constant `C^F`.
pub fn separable_y0_oracle<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    x0: &DVector<T>,
    t: T,
) -> Result<T> {
    require_separable(term)?;
    ou_certainty_equivalent(
        params.gamma,
        params.k0,
        &params.m0,
        &params.sigma0,
        params.horizon,
        &term.a00,
        &term.b0,
        term.c,
        x0,
        t,
    )
}

/// Idiosyncratic part of the value, without the constant.
pub fn separable_idiosyncratic_oracle<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    xi: &DVector<T>,
    t: T,
) -> Result<T> {
    require_separable(term)?;
    ou_certainty_equivalent(
        params.gamma,
        params.k,
        &params.m,
        &params.sigma,
        params.horizon,
        &term.a11,
        &term.b1,
        T::zero(),
        xi,
        t,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::yz_at;
    use crate::model::TimeGrid;
    use crate::riccati::solve_system;
    use crate::scenario::reference_scenario;
    use rand::{Rng, SeedableRng};

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn terminal_time_returns_liability() {
        let s = reference_scenario();
        let mut f = s.liability.clone();
        f.a10[(0, 0)] = 0.0;
        let y0 = separable_y0_oracle(&s.params, &f, &v1(0.4), 1.0).unwrap();
        let yi = separable_idiosyncratic_oracle(&s.params, &f, &v1(-0.3), 1.0).unwrap();
        let exact = f.evaluate(&v1(0.4), &v1(-0.3));
        assert!((y0 + yi - exact).abs() < 1e-14);
    }

    #[test]
    fn linear_case_is_lognormal_moment() {
        let s = reference_scenario();
        let mut f = s.liability.clone();
        f.a10[(0, 0)] = 0.0;
        f.a00[(0, 0)] = 0.0;
        let (g, k, t) = (1.5, 0.05, 0.3);
        let tau: f64 = 1.0 - t;
        let mean = 0.4 * (-k * tau).exp() - 0.5 * (1.0 - (-k * tau).exp());
        let var = 0.09 * (1.0 - (-2.0 * k * tau).exp()) / (2.0 * k);
        // γ-scaled: ⟨b,mean⟩ + γ/2 Var b² + c
        let expected = -1.3 * mean + 0.5 * g * var * 1.69 + 1.2;
        let y0 = separable_y0_oracle(&s.params, &f, &v1(0.4), t).unwrap();
        assert!((y0 - expected).abs() < 1e-14);
    }

    #[test]
    fn non_integrable_is_reported() {
        let s = reference_scenario();
        let mut f = s.liability.clone();
        f.a10[(0, 0)] = 0.0;
        f.a00[(0, 0)] = 100.0;
        let r = separable_y0_oracle(&s.params, &f, &v1(0.0), 0.0);
        assert!(matches!(r, Err(Error::NonIntegrable { .. })));
        f.a00[(0, 0)] = 0.7;
        f.a10[(0, 0)] = 0.1;
        assert!(separable_y0_oracle(&s.params, &f, &v1(0.0), 0.0).is_err());
    }

    #[test]
    fn matches_coefficient_pipeline() {
        let mut s = reference_scenario();
        s.liability.a10[(0, 0)] = 0.0;
        let grid = TimeGrid::new(10_000, 1.0).unwrap();
        let sol = solve_system(&s.params, &s.liability, &s.population, &grid).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.random_range(0..=10_000);
            let (x0, xi) = (v1(rng.random_range(-2.0..2.0)), v1(rng.random_range(-2.0..2.0)));
            let y = yz_at(&sol, &x0, &xi, k).unwrap().y;
            let t = grid.t(k);
            let o = separable_y0_oracle(&s.params, &s.liability, &x0, t).unwrap()
                + separable_idiosyncratic_oracle(&s.params, &s.liability, &xi, t).unwrap();
            assert!((y - o).abs() < 1e-6, "t = {t}: {y} vs {o}");
        }
    }
}
