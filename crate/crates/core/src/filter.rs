//! Innovation-form filter for the risk premium, its variance equation and a
//! discrete-time Kalman recursion used as an independent check.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::ThetaCoefficients;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, repair_psd, symmetrized};
use crate::model::{GridPoint, TimeGrid};
use crate::scalar::Real;
use crate::scenario::DEFAULT_BLOWUP_BOUND;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T: Real> {
    pub t_index: usize,
    pub theta_hat: DVector<T>,
    pub varrho: DMatrix<T>,
}

fn check_increments<T: Real, V>(grid: &TimeGrid<T>, obs: &[V]) -> Result<()> {
    if obs.len() != grid.n_steps() {
        return Err(Error::Dimension(format!(
            "{} observation increments for {} steps",
            obs.len(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// Euler recursion
/// `θ̂ₖ₊₁ = θ̂ₖ + (αₖθ̂ₖ + βₖ)Δt + (ζₖ + ϱₖ)(ΔW̃⁰ₖ − θ̂ₖΔt)` from `θ̂₀ = m`.
pub fn run_filter<T: Real>(coeffs: &ThetaCoefficients<T>, obs: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
    let grid = &coeffs.grid;
    check_increments(grid, obs)?;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.n_nodes());
    let mut th = coeffs.m.clone();
    for (k, dy) in obs.iter().enumerate() {
        if dy.len() != th.len() {
            return Err(Error::Dimension("observation increment length".into()));
        }
        let innovation = dy - &th * dt;
        let next = &th + (&coeffs.alpha[k] * &th + &coeffs.beta[k]) * dt + &coeffs.diffusion_hat[k] * innovation;
        out.push(th);
        th = next;
    }
    out.push(th);
    Ok(out)
}

/// Forward RK4 for `ϱ̇ = ηηᵀ + αϱ + ϱαᵀ − ζϱ − ϱζ − ϱ²` from `ϱ₀ = v`.
/// `inputs` returns `(α, ζ, η)` at nodes and step midpoints.
pub fn variance_path<T, F>(grid: &TimeGrid<T>, v: &DMatrix<T>, inputs: F) -> Result<Vec<DMatrix<T>>>
where
    T: Real,
    F: Fn(GridPoint) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>),
{
    let rate = |r: &DMatrix<T>, p: GridPoint| {
        let (a, z, e) = inputs(p);
        crate::equilibrium::variance_rate(r, &a, &z, &e)
    };
    let check = |r: &DMatrix<T>, k: usize| -> Result<()> {
        let norm = max_abs(r).as_f64();
        if r.iter().all(|x| x.is_finite_value()) && norm <= DEFAULT_BLOWUP_BOUND {
            Ok(())
        } else {
            Err(Error::BlowUp { what: "filter variance", t: grid.t(k).as_f64(), norm, bound: DEFAULT_BLOWUP_BOUND })
        }
    };
    let h = grid.dt();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(grid.n_nodes());
    let mut r = symmetrized(v.clone());
    for k in 0..grid.n_steps() {
        let k1 = rate(&r, GridPoint::Node(k));
        let k2 = rate(&symmetrized(&r + &k1 * (h * half)), GridPoint::Mid(k));
        let k3 = rate(&symmetrized(&r + &k2 * (h * half)), GridPoint::Mid(k));
        let k4 = rate(&symmetrized(&r + &k3 * h), GridPoint::Node(k + 1));
        let next = symmetrized(&r + (k1 + k2 * two + k3 * two + k4) * (h / T::lit(6.0)));
        check(&next, k + 1)?;
        out.push(r);
        r = next;
    }
    out.push(r);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KalmanOutput<T: Real> {
    pub theta_hat: Vec<DVector<T>>,
    pub variance: Vec<DMatrix<T>>,
    /// Steps at which the variance needed eigenvalue clamping.
    pub repairs: usize,
}

/// One-step predictor of the Euler state-space model
/// `θₖ₊₁ = (I + αₖΔt)θₖ + βₖΔt + ζₖΔW⁰ₖ + ηₖΔB⁰ₖ`, `ΔW̃⁰ₖ = θₖΔt + ΔW⁰ₖ`,
/// where state and observation noise share `ΔW⁰`.
pub fn discrete_kalman_oracle<T: Real>(
    coeffs: &ThetaCoefficients<T>,
    obs: &[DVector<T>],
) -> Result<KalmanOutput<T>> {
    let grid = &coeffs.grid;
    check_increments(grid, obs)?;
    let dt = grid.dt();
    let d0 = coeffs.m.len();
    let eye = DMatrix::<T>::identity(d0, d0);
    let mut th = coeffs.m.clone();
    let mut p = symmetrized(coeffs.v.clone());
    let mut theta_hat = Vec::with_capacity(grid.n_nodes());
    let mut variance = Vec::with_capacity(grid.n_nodes());
    let mut repairs = 0;
    for (k, dy) in obs.iter().enumerate() {
        let f = &eye + &coeffs.alpha[k] * dt;
        let (zeta, eta) = (&coeffs.zeta[k], &coeffs.eta[k]);
        let s = &p * (dt * dt) + &eye * dt;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { what: "innovation covariance", t: grid.t(k).as_f64() })?;
        let cross = (&f * &p + zeta) * dt;
        let gain = &cross * &s_inv;
        let next_th = &f * &th + &coeffs.beta[k] * dt + &gain * (dy - &th * dt);
        let q = (zeta * zeta.transpose() + eta * eta.transpose()) * dt;
        let next_p = &f * &p * f.transpose() + q - &gain * &s * gain.transpose();
        let (next_p, fixed) = repair_psd(&next_p);
        repairs += usize::from(fixed);
        theta_hat.push(th);
        variance.push(p);
        th = next_th;
        p = next_p;
    }
    theta_hat.push(th);
    variance.push(p);
    Ok(KalmanOutput { theta_hat, variance, repairs })
}

/// Filter state at node `k`.
pub fn state_at<T: Real>(theta_hat: &[DVector<T>], varrho: &[DMatrix<T>], k: usize) -> FilterState<T> {
    FilterState { t_index: k, theta_hat: theta_hat[k].clone(), varrho: varrho[k].clone() }
}
