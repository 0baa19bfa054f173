//! The terminal-value coefficient system of the quadratic value function,
//! integrated backward by fixed-step classical Runge-Kutta.
//!
//! With `S₀ = Σ₀Σ₀ᵀ`, `S = ΣΣᵀ` and the factor mean `μ¹_t`:
//!
//! ```text
//! Ȧ₀₀ = −γA₀₀S₀A₀₀ − γA₁₀ᵀSA₁₀ + 2K₀A₀₀
//! Ȧ₁₁ = −γA₁₁SA₁₁ + 2KA₁₁
//! Ȧ₁₀ = −γA₁₀S₀A₀₀ − γA₁₁SA₁₀ + (K₀+K)A₁₀
//! Ḃ₀  = (−γA₀₀S₀ + K₀)B₀ − γA₁₀ᵀSB₁ − K₀A₀₀m₀ − KA₁₀ᵀm
//! Ḃ₁  = (−γA₁₁S + K)B₁ − γ(A₁₀S₀A₁₀ᵀμ¹ + A₁₀S₀B₀) − KA₁₁m − K₀A₁₀m₀
//! Ċ   = −γ/2|Σ₀ᵀB₀|² − γ/2|ΣᵀB₁|² − K₀⟨B₀,m₀⟩ − K⟨B₁,m⟩
//!       + γ/2⟨A₁₀S₀A₁₀ᵀμ¹,μ¹⟩ − ½tr(A₀₀S₀) − ½tr(A₁₁S)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_abs_vec, symmetrize, trace_product};
use crate::model::{AgentPopulation, Dims, GridPoint, ModelParams, TerminalLiability, TimeGrid};
use crate::scalar::Real;
use crate::scenario::DEFAULT_BLOWUP_BOUND;

/// One value of the six coefficient unknowns (or of their time derivatives).
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiState<T: Real> {
    pub a00: DMatrix<T>,
    pub a11: DMatrix<T>,
    pub a10: DMatrix<T>,
    pub b0: DVector<T>,
    pub b1: DVector<T>,
    pub c: T,
}

impl<T: Real> RiccatiState<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self::from_terminal(&TerminalLiability::zeros(dims))
    }

    pub fn from_terminal(f: &TerminalLiability<T>) -> Self {
        Self {
            a00: f.a00.clone(),
            a11: f.a11.clone(),
            a10: f.a10.clone(),
            b0: f.b0.clone(),
            b1: f.b1.clone(),
            c: f.c,
        }
    }

    /// `self + h·rate`
    pub fn advanced(&self, h: T, rate: &Self) -> Self {
        Self {
            a00: &self.a00 + &rate.a00 * h,
            a11: &self.a11 + &rate.a11 * h,
            a10: &self.a10 + &rate.a10 * h,
            b0: &self.b0 + &rate.b0 * h,
            b1: &self.b1 + &rate.b1 * h,
            c: self.c + rate.c * h,
        }
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.a00);
        symmetrize(&mut self.a11);
    }

    /// Max-entry norm over all six components.
    pub fn max_norm(&self) -> T {
        max_abs(&self.a00)
            .max(max_abs(&self.a11))
            .max(max_abs(&self.a10))
            .max(max_abs_vec(&self.b0))
            .max(max_abs_vec(&self.b1))
            .max(self.c.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a00.iter().all(|x| x.is_finite_value())
            && self.a11.iter().all(|x| x.is_finite_value())
            && self.a10.iter().all(|x| x.is_finite_value())
            && self.b0.iter().all(|x| x.is_finite_value())
            && self.b1.iter().all(|x| x.is_finite_value())
            && self.c.is_finite_value()
    }

    pub fn max_diff(&self, other: &Self) -> T {
        self.advanced(-T::one(), other).max_norm()
    }

    /// Cubic Hermite value at the midpoint of a step of length `h` from
    /// nodal values and derivatives. Exact to fourth order.
    pub fn hermite_mid(a: &Self, da: &Self, b: &Self, db: &Self, h: T) -> Self {
        let half = T::lit(0.5);
        let w = h / T::lit(8.0);
        let avg = a.advanced(T::one(), b);
        let slope = da.advanced(-T::one(), db);
        let mut s = Self {
            a00: avg.a00 * half,
            a11: avg.a11 * half,
            a10: avg.a10 * half,
            b0: avg.b0 * half,
            b1: avg.b1 * half,
            c: avg.c * half,
        };
        s = s.advanced(w, &slope);
        s
    }
}

/// Closed-form mean of the idiosyncratic factor,
/// `μ¹_t = 𝔼[x¹₀]e^{−Kt} + m(1 − e^{−Kt})`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMean<T: Real> {
    pub initial: DVector<T>,
    pub long_run: DVector<T>,
    pub k: T,
}

impl<T: Real> FactorMean<T> {
    pub fn new(params: &ModelParams<T>, pop: &AgentPopulation<T>) -> Self {
        Self { initial: pop.x0_mean.clone(), long_run: params.m.clone(), k: params.k }
    }

    pub fn at(&self, t: T) -> DVector<T> {
        let e = (-self.k * t).exp();
        &self.initial * e + &self.long_run * (T::one() - e)
    }

    /// `μ̇¹_t = −K(μ¹_t − m)`
    pub fn rate(&self, t: T) -> DVector<T> {
        (self.at(t) - &self.long_run) * (-self.k)
    }
}

/// Factor mean and its derivative at every node.
pub fn factor_mean_path<T: Real>(
    params: &ModelParams<T>,
    pop: &AgentPopulation<T>,
    grid: &TimeGrid<T>,
) -> (Vec<DVector<T>>, Vec<DVector<T>>) {
    let mean = FactorMean::new(params, pop);
    grid.times().into_iter().map(|t| (mean.at(t), mean.rate(t))).unzip()
}

/// Right-hand side of the coefficient system.
#[derive(Debug, Clone)]
pub struct RiccatiSystem<T: Real> {
    pub gamma: T,
    pub k0: T,
    pub k: T,
    pub m0: DVector<T>,
    pub m: DVector<T>,
    /// `Σ₀Σ₀ᵀ`
    pub s0: DMatrix<T>,
    /// `ΣΣᵀ`
    pub s: DMatrix<T>,
    pub sigma0: DMatrix<T>,
    pub sigma: DMatrix<T>,
    pub mean: FactorMean<T>,
}

impl<T: Real> RiccatiSystem<T> {
    pub fn new(params: &ModelParams<T>, pop: &AgentPopulation<T>) -> Self {
        Self {
            gamma: params.gamma,
            k0: params.k0,
            k: params.k,
            m0: params.m0.clone(),
            m: params.m.clone(),
            s0: &params.sigma0 * params.sigma0.transpose(),
            s: &params.sigma * params.sigma.transpose(),
            sigma0: params.sigma0.clone(),
            sigma: params.sigma.clone(),
            mean: FactorMean::new(params, pop),
        }
    }

    /// `Ȧ₀₀` alone; it depends only on `(A₀₀, A₁₀)`.
    pub fn a00_rate(&self, a00: &DMatrix<T>, a10: &DMatrix<T>) -> DMatrix<T> {
        let g = self.gamma;
        let two = T::lit(2.0);
        (a00 * &self.s0 * a00) * (-g) - (a10.transpose() * &self.s * a10) * g + a00 * (two * self.k0)
    }

    pub fn rhs(&self, t: T, y: &RiccatiState<T>) -> RiccatiState<T> {
        let g = self.gamma;
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let (k0, k) = (self.k0, self.k);
        let mu = self.mean.at(t);

        let a10t = y.a10.transpose();
        let s0_a00 = &self.s0 * &y.a00;
        let s_a10 = &self.s * &y.a10;
        let a10_s0 = &y.a10 * &self.s0;

        let a00 = (&y.a00 * &s0_a00) * (-g) - (&a10t * &s_a10) * g + &y.a00 * (two * k0);
        let a11 = (&y.a11 * &self.s * &y.a11) * (-g) + &y.a11 * (two * k);
        let a10 = (&a10_s0 * &y.a00) * (-g) - (&y.a11 * &s_a10) * g + &y.a10 * (k0 + k);

        let b0 = (&y.a00 * &self.s0 * &y.b0) * (-g) + &y.b0 * k0
            - (&a10t * &self.s * &y.b1) * g
            - (&y.a00 * &self.m0) * k0
            - (&a10t * &self.m) * k;

        let hedge = &a10_s0 * (&a10t * &mu);
        let b1 = (&y.a11 * &self.s * &y.b1) * (-g) + &y.b1 * k
            - (&hedge + &a10_s0 * &y.b0) * g
            - (&y.a11 * &self.m) * k
            - (&y.a10 * &self.m0) * k0;

        let s0t_b0 = self.sigma0.transpose() * &y.b0;
        let st_b1 = self.sigma.transpose() * &y.b1;
        let c = -half * g * s0t_b0.norm_squared() - half * g * st_b1.norm_squared()
            - k0 * y.b0.dot(&self.m0)
            - k * y.b1.dot(&self.m)
            + half * g * hedge.dot(&mu)
            - half * trace_product(&y.a00, &self.s0)
            - half * trace_product(&y.a11, &self.s);

        RiccatiState { a00, a11, a10, b0, b1, c }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Abort when any intermediate max-entry norm exceeds this bound.
    pub blowup_bound: f64,
    /// Re-symmetrise `A₀₀` and `A₁₁` after every stage.
    pub symmetrize: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { blowup_bound: DEFAULT_BLOWUP_BOUND, symmetrize: true }
    }
}

/// Grid-sampled coefficient paths.
#[derive(Debug, Clone)]
pub struct RiccatiSolution<T: Real> {
    pub grid: TimeGrid<T>,
    pub a00: Vec<DMatrix<T>>,
    pub a11: Vec<DMatrix<T>>,
    pub a10: Vec<DMatrix<T>>,
    pub b0: Vec<DVector<T>>,
    pub b1: Vec<DVector<T>>,
    pub c: Vec<T>,
    pub mu1: Vec<DVector<T>>,
    pub mu1_dot: Vec<DVector<T>>,
    /// Right-hand-side values of `Ȧ₀₀`, `Ȧ₁₀`, `Ḃ₀` at the nodes.
    pub da00: Vec<DMatrix<T>>,
    pub da10: Vec<DMatrix<T>>,
    pub db0: Vec<DVector<T>>,
    pub system: RiccatiSystem<T>,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn state(&self, k: usize) -> RiccatiState<T> {
        RiccatiState {
            a00: self.a00[k].clone(),
            a11: self.a11[k].clone(),
            a10: self.a10[k].clone(),
            b0: self.b0[k].clone(),
            b1: self.b1[k].clone(),
            c: self.c[k],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { d0: self.a00[0].nrows(), d: self.a11[0].nrows(), k_noise: 0 }
    }

    /// `(A₀₀, A₁₀)` at a grid point; midpoints use cubic Hermite
    /// interpolation with the stored derivatives.
    pub fn a00_a10_at(&self, p: GridPoint) -> (DMatrix<T>, DMatrix<T>) {
        match p {
            GridPoint::Node(k) => (self.a00[k].clone(), self.a10[k].clone()),
            GridPoint::Mid(k) => {
                let h = self.grid.t(k + 1) - self.grid.t(k);
                let w = h / T::lit(8.0);
                let half = T::lit(0.5);
                let a00 = (&self.a00[k] + &self.a00[k + 1]) * half
                    + (&self.da00[k] - &self.da00[k + 1]) * w;
                let a10 = (&self.a10[k] + &self.a10[k + 1]) * half
                    + (&self.da10[k] - &self.da10[k + 1]) * w;
                let mut a00 = a00;
                symmetrize(&mut a00);
                (a00, a10)
            }
        }
    }

    /// Largest `‖A − Aᵀ‖` over nodes for `A₀₀` and `A₁₁`.
    pub fn max_asymmetry(&self) -> T {
        self.a00
            .iter()
            .chain(self.a11.iter())
            .map(|m| max_abs(&(m - m.transpose())))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

fn check<T: Real>(y: &RiccatiState<T>, t: T, bound: f64) -> Result<()> {
    let norm = y.max_norm().as_f64();
    if !y.is_finite() || !(norm <= bound) {
        return Err(Error::BlowUp { what: "coefficient system", t: t.as_f64(), norm, bound });
    }
    Ok(())
}

fn check_dims<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
) -> Result<()> {
    let Dims { d0, d, .. } = params.dims;
    let ok = term.a00.shape() == (d0, d0)
        && term.a11.shape() == (d, d)
        && term.a10.shape() == (d, d0)
        && term.b0.len() == d0
        && term.b1.len() == d
        && pop.x0_mean.len() == d
        && params.sigma0.shape() == (d0, d0)
        && params.sigma.shape() == (d, d);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!("records disagree with dims d0 = {d0}, d = {d}")))
    }
}

pub fn solve_system<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    grid: &TimeGrid<T>,
) -> Result<RiccatiSolution<T>> {
    solve_system_with(params, term, pop, grid, SolveOptions::default())
}

/// Backward RK4 from `T` to `0`.
pub fn solve_system_with<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    grid: &TimeGrid<T>,
    opts: SolveOptions,
) -> Result<RiccatiSolution<T>> {
    check_dims(params, term, pop)?;
    let sys = RiccatiSystem::new(params, pop);
    let n = grid.n_steps();
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    let stage = |mut y: RiccatiState<T>, t: T| -> Result<RiccatiState<T>> {
        if opts.symmetrize {
            y.symmetrize();
        }
        check(&y, t, opts.blowup_bound)?;
        Ok(y)
    };

    // Backward order: index n first.
    let mut states = Vec::with_capacity(n + 1);
    let mut rates = Vec::with_capacity(n + 1);
    let mut y = RiccatiState::from_terminal(term);
    check(&y, grid.t(n), opts.blowup_bound)?;
    for k in (0..n).rev() {
        let t1 = grid.t(k + 1);
        let tm = grid.time_of(GridPoint::Mid(k));
        let t0 = grid.t(k);
        let h = t0 - t1;
        let k1 = sys.rhs(t1, &y);
        let y2 = stage(y.advanced(h * half, &k1), tm)?;
        let k2 = sys.rhs(tm, &y2);
        let y3 = stage(y.advanced(h * half, &k2), tm)?;
        let k3 = sys.rhs(tm, &y3);
        let y4 = stage(y.advanced(h, &k3), t0)?;
        let k4 = sys.rhs(t0, &y4);
        let incr = k1.advanced(two, &k2).advanced(two, &k3).advanced(T::one(), &k4);
        let next = stage(y.advanced(h * sixth, &incr), t0)?;
        states.push(y);
        rates.push(k1);
        y = next;
    }
    rates.push(sys.rhs(grid.t(0), &y));
    states.push(y);
    states.reverse();
    rates.reverse();

    let (mu1, mu1_dot) = factor_mean_path(params, pop, grid);
    let mut sol = RiccatiSolution {
        grid: *grid,
        a00: Vec::with_capacity(n + 1),
        a11: Vec::with_capacity(n + 1),
        a10: Vec::with_capacity(n + 1),
        b0: Vec::with_capacity(n + 1),
        b1: Vec::with_capacity(n + 1),
        c: Vec::with_capacity(n + 1),
        mu1,
        mu1_dot,
        da00: Vec::with_capacity(n + 1),
        da10: Vec::with_capacity(n + 1),
        db0: Vec::with_capacity(n + 1),
        system: sys,
    };
    for (s, r) in states.into_iter().zip(rates) {
        sol.a00.push(s.a00);
        sol.a11.push(s.a11);
        sol.a10.push(s.a10);
        sol.b0.push(s.b0);
        sol.b1.push(s.b1);
        sol.c.push(s.c);
        sol.da00.push(r.a00);
        sol.da10.push(r.a10);
        sol.db0.push(r.b0);
    }
    Ok(sol)
}

/// Closed form of the decoupled scalar `A₁₁` equation. With `u = 1/A₁₁`,
/// `u̇ = −2Ku + γΣ²`, so
/// `A₁₁(t) = [(1/A^F₁₁ − γΣ²/(2K))e^{−2K(t−T)} + γΣ²/(2K)]⁻¹`.
pub fn scalar_a11_oracle<T: Real>(gamma: T, sigma: T, k: T, a11_f: T, horizon: T, t: T) -> Result<T> {
    if a11_f == T::zero() {
        return Ok(T::zero());
    }
    let c = gamma * sigma * sigma / (T::lit(2.0) * k);
    let u_t = (T::one() / a11_f - c) * (-T::lit(2.0) * k * (t - horizon)).exp() + c;
    let u_term = T::one() / a11_f;
    // u is monotone in time; it vanishes on [t, T] iff the endpoint signs differ.
    if u_t * u_term <= T::zero() || !u_t.is_finite_value() {
        return Err(Error::BlowUp {
            what: "scalar A11 closed form",
            t: t.as_f64(),
            norm: f64::INFINITY,
            bound: DEFAULT_BLOWUP_BOUND,
        });
    }
    Ok(T::one() / u_t)
}

/// Max over interior nodes and all six equations of the defect between the
/// central difference and the right-hand side.
pub fn residual<T: Real>(sol: &RiccatiSolution<T>) -> T {
    let n = sol.grid.n_steps();
    if n < 2 {
        return T::zero();
    }
    let mut worst = T::zero();
    for k in 1..n {
        let h2 = sol.grid.t(k + 1) - sol.grid.t(k - 1);
        let fd = sol.state(k + 1).advanced(-T::one(), &sol.state(k - 1));
        let rhs = sol.system.rhs(sol.grid.t(k), &sol.state(k));
        let scaled = RiccatiState {
            a00: fd.a00 / h2,
            a11: fd.a11 / h2,
            a10: fd.a10 / h2,
            b0: fd.b0 / h2,
            b1: fd.b1 / h2,
            c: fd.c / h2,
        };
        worst = worst.max(scaled.max_diff(&rhs));
    }
    worst
}

/// Max-entry distance between two solutions, compared at the nodes of the
/// coarser one. The finer step count must be a multiple of the coarser.
pub fn max_node_gap<T: Real>(coarse: &RiccatiSolution<T>, fine: &RiccatiSolution<T>) -> Result<T> {
    let (nc, nf) = (coarse.grid.n_steps(), fine.grid.n_steps());
    if nf % nc != 0 {
        return Err(Error::Dimension(format!("{nf} steps is not a refinement of {nc}")));
    }
    let r = nf / nc;
    Ok((0..=nc)
        .map(|k| coarse.state(k).max_diff(&fine.state(k * r)))
        .fold(T::zero(), |a, b| a.max(b)))
}

/// `‖sol(n) − sol(2n)‖∞ / ‖sol(2n) − sol(4n)‖∞`; about 16 for a fourth-order
/// scheme in its asymptotic range.
pub fn richardson_ratio<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    n: usize,
) -> Result<T> {
    let solve = |m: usize| solve_system(params, term, pop, &TimeGrid::new(m, params.horizon)?);
    let (s1, s2, s4) = (solve(n)?, solve(2 * n)?, solve(4 * n)?);
    Ok(max_node_gap(&s1, &s2)? / max_node_gap(&s2, &s4)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::reference_scenario;

    fn reference() -> (ModelParams<f64>, TerminalLiability<f64>, AgentPopulation<f64>) {
        let s = reference_scenario();
        (s.params, s.liability, s.population)
    }

    #[test]
    fn factor_mean_values() {
        let (p, _, pop) = reference();
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let (mu, mu_dot) = factor_mean_path(&p, &pop, &grid);
        assert_eq!(mu[0][0], -0.7);
        // −0.7e^{−0.05} − 0.5(1 − e^{−0.05})
        let e = (-0.05f64).exp();
        assert!((mu[4][0] - (-0.7 * e - 0.5 * (1.0 - e))).abs() < 1e-15);
        assert!((mu[4][0] + 0.690246).abs() < 1e-6);
        assert!((mu_dot[0][0] - (-0.05 * (-0.7 + 0.5))).abs() < 1e-15);

        let mut fixed = pop.clone();
        fixed.x0_mean[0] = -0.5;
        let (mu, _) = factor_mean_path(&p, &fixed, &grid);
        assert!(mu.iter().all(|v| (v[0] + 0.5).abs() < 1e-15));
    }

    #[test]
    fn oracle_values() {
        assert_eq!(scalar_a11_oracle(1.5, 0.3, 0.05, 0.2, 1.0, 1.0).unwrap(), 0.2);
        // u(0) = (5 − 1.35)e^{0.1} + 1.35
        let u0 = (5.0 - 1.35) * 0.1f64.exp() + 1.35;
        let a0 = scalar_a11_oracle(1.5, 0.3, 0.05, 0.2, 1.0, 0.0).unwrap();
        assert!((a0 - 1.0 / u0).abs() < 1e-15);
        assert!((a0 - 0.185740).abs() < 1e-6);
        assert_eq!(scalar_a11_oracle(1.5, 0.3, 0.05, 0.0, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn oracle_reports_blowup() {
        // Large positive terminal value explodes backward: 1/A^F < γΣ²/(2K)(1 − e^{2KT}).
        let r = scalar_a11_oracle(1.5, 3.0, 0.05, 50.0, 1.0, 0.0);
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn terminal_node_is_bitwise_terminal_data() {
        let (p, f, pop) = reference();
        let sol = solve_system(&p, &f, &pop, &TimeGrid::new(100, 1.0).unwrap()).unwrap();
        let last = sol.state(100);
        assert_eq!(last, RiccatiState::from_terminal(&f));
    }

    #[test]
    fn zero_data_is_fixed_point() {
        let (mut p, _, mut pop) = reference();
        p.m0[0] = 0.0;
        p.m[0] = 0.0;
        pop.x0_mean[0] = 0.0;
        let f = TerminalLiability::zeros(p.dims);
        let sol = solve_system(&p, &f, &pop, &TimeGrid::new(50, 1.0).unwrap()).unwrap();
        assert!((0..=50).all(|k| sol.state(k).max_norm() == 0.0));
        assert_eq!(residual(&sol), 0.0);
    }

    #[test]
    fn decoupled_a11_matches_oracle() {
        let (p, f, pop) = reference();
        let sol = solve_system(&p, &f, &pop, &TimeGrid::new(10_000, 1.0).unwrap()).unwrap();
        for k in (0..=10_000).step_by(500) {
            let t = sol.grid.t(k);
            let exact = scalar_a11_oracle(1.5, 0.3, 0.05, 0.2, 1.0, t).unwrap();
            assert!((sol.a11[k][(0, 0)] - exact).abs() < 1e-8, "t = {t}");
        }
        assert!((sol.a11[0][(0, 0)] - 0.185740).abs() < 1e-6);
    }

    #[test]
    fn zero_coupling_keeps_cross_terms_zero() {
        let (p, mut f, pop) = reference();
        f.a10[(0, 0)] = 0.0;
        f.b0[0] = 0.0;
        f.b1[0] = 0.0;
        let mut p = p;
        p.m0[0] = 0.0;
        p.m[0] = 0.0;
        let sol = solve_system(&p, &f, &pop, &TimeGrid::new(200, 1.0).unwrap()).unwrap();
        assert!(sol.a10.iter().all(|m| m[(0, 0)] == 0.0));
        assert!(sol.b0.iter().all(|v| v[0] == 0.0));
        assert!(sol.b1.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn blowup_is_reported() {
        let (mut p, mut f, pop) = reference();
        p.sigma = DMatrix::from_element(1, 1, 3.0);
        f.a11 = DMatrix::from_element(1, 1, 50.0);
        let r = solve_system(&p, &f, &pop, &TimeGrid::new(1000, 1.0).unwrap());
        assert!(matches!(r, Err(Error::BlowUp { .. })), "{r:?}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (p, mut f, pop) = reference();
        f.b1 = DVector::zeros(2);
        let r = solve_system(&p, &f, &pop, &TimeGrid::new(10, 1.0).unwrap());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn residual_detects_perturbed_node() {
        let (p, f, pop) = reference();
        let n = 1000;
        let mut sol = solve_system(&p, &f, &pop, &TimeGrid::new(n, 1.0).unwrap()).unwrap();
        assert!(residual(&sol) < 1e-6);
        sol.c[400] += 1e-3;
        assert!(residual(&sol) >= 1e-3 * n as f64 / 2.0 * (1.0 - 1e-9));
    }

    #[test]
    fn single_precision_instantiation() {
        let (p, f, pop) = reference();
        let (p, f, pop) = (p.cast::<f32>(), f.cast::<f32>(), pop.cast::<f32>());
        let sol = solve_system(&p, &f, &pop, &TimeGrid::new(500, 1.0f32).unwrap()).unwrap();
        let exact = scalar_a11_oracle(1.5f64, 0.3, 0.05, 0.2, 1.0, 0.0).unwrap();
        assert!((sol.a11[0][(0, 0)] as f64 - exact).abs() < 1e-5);
    }

    fn two_by_two() -> (ModelParams<f64>, TerminalLiability<f64>, AgentPopulation<f64>) {
        let (mut p, mut f, mut pop) = reference();
        let m = |r: &[f64]| DMatrix::from_row_slice(2, 2, r);
        p.dims = Dims { d0: 2, d: 2, k_noise: 1 };
        p.m0 = DVector::from_column_slice(&[-0.5, 0.2]);
        p.m = DVector::from_column_slice(&[-0.5, 0.1]);
        p.sigma0 = m(&[0.3, 0.05, 0.0, 0.25]);
        p.sigma = m(&[0.3, 0.0, 0.1, 0.2]);
        p.x0_init = DVector::zeros(2);
        p.s0 = DVector::from_element(2, 1.0);
        p.vol = crate::model::VolSchedule::Constant(m(&[0.2, 0.0, 0.05, 0.25]));
        f.a00 = m(&[0.7, 0.1, 0.1, 0.5]);
        f.a11 = m(&[0.2, 0.05, 0.05, 0.3]);
        f.a10 = m(&[0.3, -0.1, 0.2, 0.1]);
        f.b0 = DVector::from_column_slice(&[-1.3, 0.4]);
        f.b1 = DVector::from_column_slice(&[-0.7, 0.2]);
        pop.x0_mean = DVector::from_column_slice(&[-0.7, 0.3]);
        pop.x0_cov = m(&[0.5, 0.1, 0.1, 0.4]);
        (p, f, pop)
    }

    #[test]
    fn matrix_case_symmetry_and_residual() {
        let (p, f, pop) = two_by_two();
        p.validate().unwrap();
        f.validate(p.dims).unwrap();
        let grid = TimeGrid::new(2000, 1.0).unwrap();
        let sol = solve_system(&p, &f, &pop, &grid).unwrap();
        assert_eq!(sol.max_asymmetry(), 0.0);
        assert!(residual(&sol) < 1e-5);

        let raw = solve_system_with(
            &p,
            &f,
            &pop,
            &grid,
            SolveOptions { symmetrize: false, ..Default::default() },
        )
        .unwrap();
        assert!(raw.max_asymmetry() <= 1e-10);
    }

    #[test]
    fn matrix_case_richardson() {
        let (p, f, pop) = two_by_two();
        let r = richardson_ratio(&p, &f, &pop, 10).unwrap();
        assert!((r - 16.0).abs() < 0.3 * 16.0, "ratio {r}");
    }
}
