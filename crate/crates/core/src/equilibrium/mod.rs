//! Quadratic-form BSDE solution, the equilibrium risk premium, optimal
//! strategies and the drift/diffusion data of the risk-premium filter.

mod coefficients;
mod oracle;

pub use coefficients::{build_theta_coefficients, ThetaCoefficients};
pub(crate) use coefficients::variance_rate;
pub use oracle::{gaussian_log_moment, separable_idiosyncratic_oracle, separable_y0_oracle};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, is_exactly_symmetric};
use crate::model::{Dims, VolSchedule};
use crate::riccati::RiccatiSolution;
use crate::scalar::Real;

/// Loading `η_t` of the unobserved noise `B⁰` in the risk-premium dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaSchedule<T: Real> {
    /// `η_t = (t − start)⁺ · loading`
    Ramp { start: T, loading: DMatrix<T> },
    Constant(DMatrix<T>),
}

impl<T: Real> EtaSchedule<T> {
    pub fn at(&self, t: T) -> DMatrix<T> {
        match self {
            EtaSchedule::Ramp { start, loading } => loading * (t - *start).max(T::zero()),
            EtaSchedule::Constant(m) => m.clone(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            EtaSchedule::Ramp { loading, .. } => loading.ncols(),
            EtaSchedule::Constant(m) => m.ncols(),
        }
    }

    fn matrix(&self) -> &DMatrix<T> {
        match self {
            EtaSchedule::Ramp { loading, .. } => loading,
            EtaSchedule::Constant(m) => m,
        }
    }

    pub fn cast<U: Real>(&self) -> EtaSchedule<U> {
        let cm = |m: &DMatrix<T>| m.map(|x| U::lit(x.as_f64()));
        match self {
            EtaSchedule::Ramp { start, loading } => {
                EtaSchedule::Ramp { start: U::lit(start.as_f64()), loading: cm(loading) }
            }
            EtaSchedule::Constant(m) => EtaSchedule::Constant(cm(m)),
        }
    }
}

/// Gaussian prior of the initial risk premium: `Var(θ₀) = v` and the noise
/// loading `η`. The prior mean is an equilibrium output.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPrior<T: Real> {
    pub v: DMatrix<T>,
    pub eta: EtaSchedule<T>,
}

impl<T: Real> ThetaPrior<T> {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        let d0 = dims.d0;
        if self.v.shape() != (d0, d0) {
            return Err(Error::Validation(format!("v must be {d0}x{d0}")));
        }
        if !self.v.iter().all(|x| x.is_finite_value()) {
            return Err(Error::Validation("v has non-finite entries".into()));
        }
        if !is_exactly_symmetric(&self.v) {
            return Err(Error::Validation("v not symmetric".into()));
        }
        if linalg::min_eigenvalue(&self.v) < -T::EPS.sqrt() * (T::one() + linalg::max_abs(&self.v)) {
            return Err(Error::Validation("v must be positive semidefinite".into()));
        }
        let eta = self.eta.matrix();
        if eta.nrows() != d0 || eta.ncols() == 0 {
            return Err(Error::Validation(format!("eta must have {d0} rows")));
        }
        if let EtaSchedule::Ramp { start, .. } = &self.eta {
            if !start.is_finite_value() {
                return Err(Error::Validation("eta start must be finite".into()));
            }
        }
        if !eta.iter().all(|x| x.is_finite_value()) {
            return Err(Error::Validation("eta has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ThetaPrior<U> {
        ThetaPrior { v: self.v.map(|x| U::lit(x.as_f64())), eta: self.eta.cast() }
    }
}

/// Value and martingale integrands of one agent's BSDE at node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueState<T: Real> {
    pub y: T,
    /// Integrand against the common innovation (components of a row vector).
    pub z0: DVector<T>,
    /// Integrand against the agent's own noise.
    pub zi: DVector<T>,
}

fn check_state<T: Real>(sol: &RiccatiSolution<T>, x0: &DVector<T>, xi: &DVector<T>, k: usize) -> Result<()> {
    let d = sol.dims();
    if x0.len() != d.d0 || xi.len() != d.d {
        return Err(Error::Dimension(format!(
            "state ({}, {}) does not match dims ({}, {})",
            x0.len(),
            xi.len(),
            d.d0,
            d.d
        )));
    }
    if k > sol.grid.n_steps() {
        return Err(Error::Dimension(format!("node {k} outside grid")));
    }
    Ok(())
}

pub fn yz_at<T: Real>(
    sol: &RiccatiSolution<T>,
    x0: &DVector<T>,
    xi: &DVector<T>,
    k: usize,
) -> Result<ValueState<T>> {
    check_state(sol, x0, xi, k)?;
    let half = T::lit(0.5);
    let (a00, a11, a10) = (&sol.a00[k], &sol.a11[k], &sol.a10[k]);
    let (b0, b1) = (&sol.b0[k], &sol.b1[k]);
    let a00x = a00 * x0;
    let a11x = a11 * xi;
    let a10x0 = a10 * x0;
    let y = half * a00x.dot(x0) + half * a11x.dot(xi) + a10x0.dot(xi) + b0.dot(x0) + b1.dot(xi) + sol.c[k];
    let z0 = sol.system.sigma0.tr_mul(&(a00x + a10.tr_mul(xi) + b0));
    let zi = sol.system.sigma.tr_mul(&(a10x0 + a11x + b1));
    Ok(ValueState { y, z0, zi })
}

/// `𝔼[Z⁰ | common information]`: the common integrand with the agent's factor
/// replaced by its population mean.
pub fn conditional_z0<T: Real>(sol: &RiccatiSolution<T>, x0: &DVector<T>, k: usize) -> DVector<T> {
    let inner = &sol.a00[k] * x0 + sol.a10[k].tr_mul(&sol.mu1[k]) + &sol.b0[k];
    sol.system.sigma0.tr_mul(&inner)
}

/// `θ̂ = −γΣ₀ᵀ(A₀₀x⁰ + A₁₀ᵀμ¹ + B₀)` at node `k`.
pub fn theta_hat_at<T: Real>(sol: &RiccatiSolution<T>, x0: &DVector<T>, k: usize) -> DVector<T> {
    conditional_z0(sol, x0, k) * (-sol.system.gamma)
}

pub fn equilibrium_theta_hat<T: Real>(
    sol: &RiccatiSolution<T>,
    x0_path: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    if x0_path.len() != sol.grid.n_nodes() {
        return Err(Error::Dimension(format!(
            "path has {} nodes, grid has {}",
            x0_path.len(),
            sol.grid.n_nodes()
        )));
    }
    Ok(x0_path.iter().enumerate().map(|(k, x)| theta_hat_at(sol, x, k)).collect())
}

/// Optimal position: `p* = Z⁰ + θ̂ᵀ/γ` in return units and the share vector
/// `π* = (σᵀ)⁻¹p*ᵀ`.
pub fn optimal_strategy<T: Real>(
    sol: &RiccatiSolution<T>,
    x0: &DVector<T>,
    xi: &DVector<T>,
    vol: &VolSchedule<T>,
    k: usize,
) -> Result<(DVector<T>, DVector<T>)> {
    let vs = yz_at(sol, x0, xi, k)?;
    let p = vs.z0 + theta_hat_at(sol, x0, k) / sol.system.gamma;
    let t = sol.grid.t(k);
    let pi = vol_transpose_solve(vol, t, &p)?;
    Ok((p, pi))
}

/// `Σ₀ᵀA₁₀ᵀ(xⁱ − μ¹)`: the position after `x⁰` and `B₀` cancel.
pub fn reduced_position<T: Real>(sol: &RiccatiSolution<T>, xi: &DVector<T>, k: usize) -> DVector<T> {
    let dev = xi - &sol.mu1[k];
    sol.system.sigma0.tr_mul(&sol.a10[k].tr_mul(&dev))
}

/// `(σ_tᵀ)⁻¹Σ₀ᵀA₁₀ᵀ(xⁱ − μ¹)`
pub fn reduced_strategy<T: Real>(
    sol: &RiccatiSolution<T>,
    xi: &DVector<T>,
    vol: &VolSchedule<T>,
    k: usize,
) -> Result<DVector<T>> {
    vol_transpose_solve(vol, sol.grid.t(k), &reduced_position(sol, xi, k))
}

fn vol_transpose_solve<T: Real>(vol: &VolSchedule<T>, t: T, p: &DVector<T>) -> Result<DVector<T>> {
    let st = vol.at(t).transpose();
    st.lu().solve(p).ok_or(Error::Singular { what: "vol", t: t.as_f64() })
}

/// Driver of the single-agent quadratic BSDE for a given risk premium:
/// `−Z⁰θ̂ − |θ̂|²/(2γ) + γ/2|Zⁱ|²`.
pub fn single_agent_driver<T: Real>(gamma: T, z0: &DVector<T>, zi: &DVector<T>, theta_hat: &DVector<T>) -> T {
    let half = T::lit(0.5);
    -z0.dot(theta_hat) - theta_hat.norm_squared() / (T::lit(2.0) * gamma) + half * gamma * zi.norm_squared()
}

/// Mean-field driver: `γZ⁰𝔼[Z⁰]ᵀ − γ/2|𝔼[Z⁰]|² + γ/2|Zⁱ|²`.
pub fn mean_field_driver<T: Real>(gamma: T, z0: &DVector<T>, z0_mean: &DVector<T>, zi: &DVector<T>) -> T {
    let half = T::lit(0.5);
    gamma * z0.dot(z0_mean) - half * gamma * z0_mean.norm_squared() + half * gamma * zi.norm_squared()
}
