use nalgebra::{DMatrix, DVector};

use super::{theta_hat_at, ThetaPrior};
use crate::error::{Error, Result};
use crate::linalg::{inverse, max_abs, min_eigenvalue, symmetrize, symmetrized};
use crate::model::{GridPoint, ModelParams, TimeGrid};
use crate::riccati::RiccatiSolution;
use crate::scalar::Real;
use crate::scenario::DEFAULT_BLOWUP_BOUND;

/// Drift and diffusion data of the risk premium,
/// `dθ = (αθ + β)dt + ζdW⁰ + ηdB⁰`, together with the filter variance `ϱ`.
#[derive(Debug, Clone)]
pub struct ThetaCoefficients<T: Real> {
    pub grid: TimeGrid<T>,
    /// Prior mean `𝔼[θ₀]`.
    pub m: DVector<T>,
    /// Prior variance `Var(θ₀)`.
    pub v: DMatrix<T>,
    pub alpha: Vec<DMatrix<T>>,
    /// `α` at step midpoints.
    pub alpha_mid: Vec<DMatrix<T>>,
    pub beta: Vec<DVector<T>>,
    pub zeta: Vec<DMatrix<T>>,
    pub zeta_rate: Vec<DMatrix<T>>,
    pub eta: Vec<DMatrix<T>>,
    pub eta_mid: Vec<DMatrix<T>>,
    pub varrho: Vec<DMatrix<T>>,
    pub diffusion_hat: Vec<DMatrix<T>>,
    /// `−γΣ₀ᵀA₀₀Σ₀` at the nodes.
    pub filter_diffusion: Vec<DMatrix<T>>,
    /// Nodes at which `ϱ` has a negative eigenvalue beyond round-off.
    pub psd_violations: usize,
}

impl<T: Real> ThetaCoefficients<T> {
    /// `(α, ζ, η)` at a grid point; midpoint `ζ` by cubic Hermite interpolation.
    pub fn filter_inputs(&self, p: GridPoint) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        match p {
            GridPoint::Node(k) => (self.alpha[k].clone(), self.zeta[k].clone(), self.eta[k].clone()),
            GridPoint::Mid(k) => {
                let h = self.grid.t(k + 1) - self.grid.t(k);
                let z = (&self.zeta[k] + &self.zeta[k + 1]) * T::lit(0.5)
                    + (&self.zeta_rate[k] - &self.zeta_rate[k + 1]) * (h / T::lit(8.0));
                (self.alpha_mid[k].clone(), symmetrized(z), self.eta_mid[k].clone())
            }
        }
    }

    /// Max over nodes of `|ζ + ϱ − (−γΣ₀ᵀA₀₀Σ₀)|`.
    pub fn decomposition_gap(&self) -> T {
        self.diffusion_hat
            .iter()
            .zip(&self.filter_diffusion)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Central-difference defect of
    /// `ϱ̇ = ηηᵀ + αϱ + ϱαᵀ − ζϱ − ϱζ − ϱ²` over interior nodes.
    pub fn varrho_residual(&self) -> T {
        let n = self.grid.n_steps();
        let mut worst = T::zero();
        for k in 1..n {
            let h2 = self.grid.t(k + 1) - self.grid.t(k - 1);
            let fd = (&self.varrho[k + 1] - &self.varrho[k - 1]) / h2;
            let rhs = variance_rate(&self.varrho[k], &self.alpha[k], &self.zeta[k], &self.eta[k]);
            worst = worst.max(max_abs(&(fd - rhs)));
        }
        worst
    }
}

/// Right-hand side of the filter variance equation.
pub(crate) fn variance_rate<T: Real>(
    varrho: &DMatrix<T>,
    alpha: &DMatrix<T>,
    zeta: &DMatrix<T>,
    eta: &DMatrix<T>,
) -> DMatrix<T> {
    let zr = zeta * varrho;
    eta * eta.transpose() + alpha * varrho + varrho * alpha.transpose() - &zr - zr.transpose()
        - varrho * varrho
}

fn zeta_rate<T: Real>(zeta: &DMatrix<T>, alpha: &DMatrix<T>, eta: &DMatrix<T>, cross: &DMatrix<T>) -> DMatrix<T> {
    let az = alpha * zeta;
    -(zeta * zeta) + &az + az.transpose() - eta * eta.transpose() - cross
}

/// Builds `m, α, β, ζ, ϱ` from a coefficient solution. `ζ` is integrated
/// forward by RK4 on the solution's grid.
pub fn build_theta_coefficients<T: Real>(
    sol: &RiccatiSolution<T>,
    params: &ModelParams<T>,
    prior: &ThetaPrior<T>,
) -> Result<ThetaCoefficients<T>> {
    let grid = sol.grid;
    let n = grid.n_steps();
    let d0 = params.dims.d0;
    let sys = &sol.system;
    let g = params.gamma;
    let sigma0 = &params.sigma0;
    let sigma0_t_inv = inverse(&sigma0.transpose(), "sigma0", T::zero())?;
    let eye = DMatrix::<T>::identity(d0, d0);

    let alpha_from = |a00: &DMatrix<T>, da00: &DMatrix<T>, t: T| -> Result<DMatrix<T>> {
        let a00_inv = inverse(a00, "A00", t)?;
        Ok(sigma0.transpose() * da00 * a00_inv * &sigma0_t_inv - &eye * params.k0)
    };
    // γ²Σ₀ᵀA₁₀ᵀSA₁₀Σ₀
    let cross_from = |a10: &DMatrix<T>| -> DMatrix<T> {
        let l = a10 * sigma0;
        symmetrized(l.transpose() * &sys.s * l * (g * g))
    };

    let mut alpha = Vec::with_capacity(n + 1);
    let mut beta = Vec::with_capacity(n + 1);
    let mut eta = Vec::with_capacity(n + 1);
    let mut cross = Vec::with_capacity(n + 1);
    let mut target = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = grid.t(k);
        let a = alpha_from(&sol.a00[k], &sol.da00[k], t)?;
        let (mu, mu_dot) = (&sol.mu1[k], &sol.mu1_dot[k]);
        let level = sol.a10[k].tr_mul(mu) + &sol.b0[k];
        let rate = &sol.a00[k] * &params.m0 * params.k0
            + sol.da10[k].tr_mul(mu)
            + sol.a10[k].tr_mul(mu_dot)
            + &sol.db0[k];
        beta.push(&a * sigma0.tr_mul(&level) * g - sigma0.tr_mul(&rate) * g);
        alpha.push(a);
        eta.push(prior.eta.at(t));
        cross.push(cross_from(&sol.a10[k]));
        target.push(symmetrized(sigma0.transpose() * &sol.a00[k] * sigma0 * (-g)));
    }

    let mut alpha_mid = Vec::with_capacity(n);
    let mut eta_mid = Vec::with_capacity(n);
    let mut cross_mid = Vec::with_capacity(n);
    for k in 0..n {
        let t = grid.time_of(GridPoint::Mid(k));
        let (a00, a10) = sol.a00_a10_at(GridPoint::Mid(k));
        let da00 = sys.a00_rate(&a00, &a10);
        alpha_mid.push(alpha_from(&a00, &da00, t)?);
        eta_mid.push(prior.eta.at(t));
        cross_mid.push(cross_from(&a10));
    }

    let bound = DEFAULT_BLOWUP_BOUND;
    let check = |z: &DMatrix<T>, t: T| -> Result<()> {
        let norm = max_abs(z).as_f64();
        if z.iter().all(|x| x.is_finite_value()) && norm <= bound {
            Ok(())
        } else {
            Err(Error::BlowUp { what: "zeta", t: t.as_f64(), norm, bound })
        }
    };
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    let mut zeta = Vec::with_capacity(n + 1);
    let mut rates = Vec::with_capacity(n + 1);
    let mut z = symmetrized(&target[0] - &prior.v);
    check(&z, grid.t(0))?;
    for k in 0..n {
        let h = grid.dt();
        let tm = grid.time_of(GridPoint::Mid(k));
        let f_mid = |y: &DMatrix<T>| zeta_rate(y, &alpha_mid[k], &eta_mid[k], &cross_mid[k]);
        let k1 = zeta_rate(&z, &alpha[k], &eta[k], &cross[k]);
        let y2 = symmetrized(&z + &k1 * (h * half));
        check(&y2, tm)?;
        let k2 = f_mid(&y2);
        let y3 = symmetrized(&z + &k2 * (h * half));
        check(&y3, tm)?;
        let k3 = f_mid(&y3);
        let y4 = symmetrized(&z + &k3 * h);
        check(&y4, grid.t(k + 1))?;
        let k4 = zeta_rate(&y4, &alpha[k + 1], &eta[k + 1], &cross[k + 1]);
        let mut next = &z + (k1.clone() + k2 * two + k3 * two + k4) * (h * sixth);
        symmetrize(&mut next);
        check(&next, grid.t(k + 1))?;
        zeta.push(z);
        rates.push(k1);
        z = next;
    }
    rates.push(zeta_rate(&z, &alpha[n], &eta[n], &cross[n]));
    zeta.push(z);

    let mut varrho = Vec::with_capacity(n + 1);
    let mut diffusion_hat = Vec::with_capacity(n + 1);
    let mut psd_violations = 0;
    for k in 0..=n {
        let r = if k == 0 { prior.v.clone() } else { &target[k] - &zeta[k] };
        let floor = T::lit(1e3) * T::EPS * (T::one() + max_abs(&r));
        if min_eigenvalue(&r) < -floor {
            psd_violations += 1;
        }
        diffusion_hat.push(&zeta[k] + &r);
        varrho.push(r);
    }
    if psd_violations > 0 {
        log::warn!("filter variance not positive semidefinite at {psd_violations} nodes");
    }

    Ok(ThetaCoefficients {
        grid,
        m: theta_hat_at(sol, &params.x0_init, 0),
        v: prior.v.clone(),
        alpha,
        alpha_mid,
        beta,
        zeta,
        zeta_rate: rates,
        eta,
        eta_mid,
        varrho,
        diffusion_hat,
        filter_diffusion: target,
        psd_violations,
    })
}
