//! Monte Carlo engine: one common market path, the agent population on top
//! of it, clearing statistics and Monte Carlo checks of the equilibrium.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::{conditional_z0, mean_field_driver, theta_hat_at, yz_at, ThetaCoefficients};
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::model::{AgentPopulation, ModelParams, TerminalLiability, TimeGrid, VolSchedule};
use crate::riccati::RiccatiSolution;
use crate::rng::{substream, AGENT, MARKET, OPTIMALITY_AGENT};
use crate::scalar::Real;

/// Agents are simulated in blocks of this size; partial sums are combined in
/// block order so results do not depend on the thread count.
pub const BLOCK: usize = 64;

const BSDE_AGENT: &str = "bsde-agent";

#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath<T: Real> {
    pub grid: TimeGrid<T>,
    pub seed: u64,
    pub path_index: u64,
    pub dw0: Vec<DVector<T>>,
    pub db0: Vec<DVector<T>>,
    pub x0_path: Vec<DVector<T>>,
    /// True risk premium.
    pub theta_path: Vec<DVector<T>>,
    pub theta_hat_path: Vec<DVector<T>>,
    /// Innovation increments `ΔŴ⁰ = ΔW⁰ + (θ − θ̂)Δt`.
    pub dw0_hat: Vec<DVector<T>>,
    pub s_path: Vec<DVector<T>>,
}

impl<T: Real> MarketPath<T> {
    /// Observed increments `ΔW̃⁰ = ΔW⁰ + θΔt`.
    pub fn observations(&self) -> Vec<DVector<T>> {
        let dt = self.grid.dt();
        self.dw0.iter().zip(&self.theta_path).map(|(w, th)| w + th * dt).collect()
    }

    /// Max gap between the observation path accumulated from the innovation
    /// and from the true premium.
    pub fn innovation_gap(&self) -> T {
        let dt = self.grid.dt();
        let d0 = self.theta_path[0].len();
        let (mut a, mut b) = (DVector::<T>::zeros(d0), DVector::<T>::zeros(d0));
        let mut worst = T::zero();
        for k in 0..self.grid.n_steps() {
            a += &self.dw0_hat[k] + &self.theta_hat_path[k] * dt;
            b += &self.dw0[k] + &self.theta_path[k] * dt;
            worst = worst.max((&a - &b).amax());
        }
        worst
    }
}

fn normals<T: Real>(rng: &mut ChaCha8Rng, n: usize, scale: T) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::standard_normal(rng) * scale)
}

fn check_alignment<T: Real>(coeffs: &ThetaCoefficients<T>, sol: &RiccatiSolution<T>) -> Result<()> {
    if coeffs.grid != sol.grid {
        return Err(Error::Dimension("coefficients and solution on different grids".into()));
    }
    Ok(())
}

/// Simulates the common factor, the true risk premium, the equilibrium
/// estimate and the stock prices along one path.
pub fn simulate_common<T: Real>(
    params: &ModelParams<T>,
    coeffs: &ThetaCoefficients<T>,
    sol: &RiccatiSolution<T>,
    seed: u64,
    path_index: u64,
) -> Result<MarketPath<T>> {
    check_alignment(coeffs, sol)?;
    let grid = sol.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let d0 = params.dims.d0;
    let kn = coeffs.eta[0].ncols();
    let half = T::lit(0.5);
    let mut rng = substream(seed, MARKET, path_index);

    let mut theta = &coeffs.m + psd_sqrt(&coeffs.v) * normals(&mut rng, d0, T::one());
    let mut x0 = params.x0_init.clone();
    let mut s = params.s0.clone();

    let mut path = MarketPath {
        grid,
        seed,
        path_index,
        dw0: Vec::with_capacity(n),
        db0: Vec::with_capacity(n),
        x0_path: Vec::with_capacity(n + 1),
        theta_path: Vec::with_capacity(n + 1),
        theta_hat_path: Vec::with_capacity(n + 1),
        dw0_hat: Vec::with_capacity(n),
        s_path: Vec::with_capacity(n + 1),
    };
    for k in 0..n {
        let dw = normals(&mut rng, d0, sqrt_dt);
        let db = normals(&mut rng, kn, sqrt_dt);
        let th_hat = theta_hat_at(sol, &x0, k);
        let dw_hat = &dw + (&theta - &th_hat) * dt;
        let vol = params.vol.at(grid.t(k));
        let var_half = (&vol * vol.transpose()).diagonal() * half;
        let log_ret = (&vol * &th_hat - var_half) * dt + &vol * &dw_hat;
        let next_s = s.component_mul(&log_ret.map(|x| x.exp()));
        let next_x0 = &x0 - (&x0 - &params.m0) * (params.k0 * dt) + &params.sigma0 * &dw_hat;
        let next_theta = &theta
            + (&coeffs.alpha[k] * &theta + &coeffs.beta[k]) * dt
            + &coeffs.zeta[k] * &dw
            + &coeffs.eta[k] * &db;
        path.x0_path.push(x0);
        path.theta_path.push(theta);
        path.theta_hat_path.push(th_hat);
        path.s_path.push(s);
        path.dw0.push(dw);
        path.db0.push(db);
        path.dw0_hat.push(dw_hat);
        x0 = next_x0;
        theta = next_theta;
        s = next_s;
    }
    path.theta_hat_path.push(theta_hat_at(sol, &x0, n));
    path.x0_path.push(x0);
    path.theta_path.push(theta);
    path.s_path.push(s);
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory<T: Real> {
    pub x_path: Vec<DVector<T>>,
    pub dw: Vec<DVector<T>>,
    /// Share vector `π*` at each node.
    pub strategy_path: Vec<DVector<T>>,
    pub wealth_path: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPath<T: Real> {
    pub agent_id: usize,
    /// Initial wealth.
    pub xi: T,
    pub x_terminal: DVector<T>,
    pub terminal_wealth: T,
    pub liability: T,
    pub terminal_net: T,
    pub utility: T,
    pub certainty_equivalent: T,
    pub trajectory: Option<AgentTrajectory<T>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentOptions {
    /// Agent `2q + 1` mirrors the draws of agent `2q`.
    pub antithetic: bool,
    /// Keep full trajectories for agents with id below this count.
    pub keep_paths: usize,
}

#[derive(Debug, Clone)]
pub struct AgentEnsemble<T: Real> {
    pub agents: Vec<AgentPath<T>>,
    /// `N⁻¹Σᵢπⁱ*` at each node.
    pub mean_strategy: Vec<DVector<T>>,
}

/// Node data shared by every agent on a given market path.
struct AgentKernel<'a, T: Real> {
    n: usize,
    d: usize,
    d0: usize,
    sqrt_dt: T,
    decay: T,
    gamma: T,
    sigma: &'a DMatrix<T>,
    x0_chol: DMatrix<T>,
    xi_mean: T,
    xi_sd: T,
    mu: &'a [DVector<T>],
    /// `(σₖᵀ)⁻¹Σ₀ᵀA₁₀ₖᵀ`
    share: Vec<DMatrix<T>>,
    /// `A₁₀ₖΣ₀(θ̂ₖΔt + ΔŴ⁰ₖ)`: wealth gain per unit of factor deviation.
    gain: Vec<DVector<T>>,
    liability: &'a TerminalLiability<T>,
    x0_terminal: &'a DVector<T>,
}

impl<'a, T: Real> AgentKernel<'a, T> {
    fn new(
        params: &'a ModelParams<T>,
        term: &'a TerminalLiability<T>,
        pop: &AgentPopulation<T>,
        sol: &'a RiccatiSolution<T>,
        market: &'a MarketPath<T>,
        vol: &VolSchedule<T>,
    ) -> Result<Self> {
        let grid = sol.grid;
        if market.grid != grid {
            return Err(Error::Dimension("market path and solution on different grids".into()));
        }
        let n = grid.n_steps();
        let dt = grid.dt();
        let mut share = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = grid.t(k);
            let position = params.sigma0.transpose() * sol.a10[k].transpose();
            let lu = vol.at(t).transpose().lu();
            share.push(lu.solve(&position).ok_or(Error::Singular { what: "vol", t: t.as_f64() })?);
        }
        let returns: Vec<_> =
            (0..n).map(|k| &market.theta_hat_path[k] * dt + &market.dw0_hat[k]).collect();
        let gain = (0..n).map(|k| &sol.a10[k] * (&params.sigma0 * &returns[k])).collect();
        let x0_chol = pop
            .x0_cov
            .clone()
            .cholesky()
            .ok_or(Error::Singular { what: "x0_cov", t: 0.0 })?
            .l();
        Ok(Self {
            n,
            d: params.dims.d,
            d0: params.dims.d0,
            sqrt_dt: dt.sqrt(),
            decay: T::one() - params.k * dt,
            gamma: params.gamma,
            sigma: &params.sigma,
            x0_chol,
            xi_mean: pop.xi_mean,
            xi_sd: pop.xi_var.sqrt(),
            mu: &sol.mu1,
            share,
            gain,
            liability: term,
            x0_terminal: &market.x0_path[n],
        })
    }

    /// Runs one agent, writing its share vector at every node into `strategy`.
    fn run(&self, agent_id: usize, rng: &mut ChaCha8Rng, mirror: bool, keep: bool, strategy: &mut [T]) -> AgentPath<T> {
        let sign = if mirror { -T::one() } else { T::one() };
        let xi = self.xi_mean + self.xi_sd * T::standard_normal(rng) * sign;
        let z = normals(rng, self.d, sign);
        let mut y = &self.x0_chol * z;
        let mut dw = DVector::<T>::zeros(self.d);
        let mut pi = DVector::<T>::zeros(self.d0);
        let mut wealth = xi;
        let mut traj = keep.then(|| AgentTrajectory {
            x_path: Vec::with_capacity(self.n + 1),
            dw: Vec::with_capacity(self.n),
            strategy_path: Vec::with_capacity(self.n + 1),
            wealth_path: Vec::with_capacity(self.n + 1),
        });
        for k in 0..=self.n {
            pi.gemv(T::one(), &self.share[k], &y, T::zero());
            strategy[k * self.d0..(k + 1) * self.d0].copy_from_slice(pi.as_slice());
            if let Some(tr) = traj.as_mut() {
                tr.x_path.push(&self.mu[k] + &y);
                tr.strategy_path.push(pi.clone());
                tr.wealth_path.push(wealth);
            }
            if k == self.n {
                break;
            }
            wealth += self.gain[k].dot(&y);
            for w in dw.iter_mut() {
                *w = T::standard_normal(rng) * self.sqrt_dt * sign;
            }
            y.gemv(T::one(), self.sigma, &dw, self.decay);
            if let Some(tr) = traj.as_mut() {
                tr.dw.push(dw.clone());
            }
        }
        let x_terminal = &self.mu[self.n] + &y;
        let liability = self.liability.evaluate(self.x0_terminal, &x_terminal);
        let net = wealth - liability;
        let utility = -(-self.gamma * net).exp();
        AgentPath {
            agent_id,
            xi,
            x_terminal,
            terminal_wealth: wealth,
            liability,
            terminal_net: net,
            utility,
            certainty_equivalent: -(-utility).ln() / self.gamma,
            trajectory: traj,
        }
    }
}

fn agent_stream(seed: u64, id: usize, antithetic: bool) -> (ChaCha8Rng, bool) {
    if antithetic {
        (substream(seed, AGENT, (id / 2) as u64), id % 2 == 1)
    } else {
        (substream(seed, AGENT, id as u64), false)
    }
}

/// Simulates `pop.n_agents` agents on one market path. Agent `i` draws its
/// initial wealth, initial factor and noise from substream `i` (or from the
/// stream of its pair in antithetic mode).
pub fn simulate_agents<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    sol: &RiccatiSolution<T>,
    market: &MarketPath<T>,
    vol: &VolSchedule<T>,
    seed: u64,
    opts: AgentOptions,
) -> Result<AgentEnsemble<T>> {
    let n_agents = pop.n_agents;
    if n_agents == 0 {
        return Err(Error::Validation("n_agents must be positive".into()));
    }
    let kernel = AgentKernel::new(params, term, pop, sol, market, vol)?;
    let width = (kernel.n + 1) * kernel.d0;
    let n_blocks = n_agents.div_ceil(BLOCK);
    let blocks: Vec<(Vec<AgentPath<T>>, Vec<T>)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut sum = vec![T::zero(); width];
            let mut first = vec![T::zero(); width];
            let mut second = vec![T::zero(); width];
            let mut agents = Vec::with_capacity(BLOCK);
            let end = ((b + 1) * BLOCK).min(n_agents);
            let mut id = b * BLOCK;
            while id < end {
                let (mut rng, mirror) = agent_stream(seed, id, opts.antithetic);
                agents.push(kernel.run(id, &mut rng, mirror, id < opts.keep_paths, &mut first));
                if id + 1 < end {
                    let (mut rng, mirror) = agent_stream(seed, id + 1, opts.antithetic);
                    let keep = id + 1 < opts.keep_paths;
                    agents.push(kernel.run(id + 1, &mut rng, mirror, keep, &mut second));
                    for ((s, a), c) in sum.iter_mut().zip(&first).zip(&second) {
                        *s += *a + *c;
                    }
                } else {
                    for (s, a) in sum.iter_mut().zip(&first) {
                        *s += *a;
                    }
                }
                id += 2;
            }
            (agents, sum)
        })
        .collect();

    let mut total = vec![T::zero(); width];
    let mut agents = Vec::with_capacity(n_agents);
    for (a, s) in blocks {
        for (t, x) in total.iter_mut().zip(&s) {
            *t += *x;
        }
        agents.extend(a);
    }
    let scale = T::from_count(n_agents);
    let mean_strategy = total
        .chunks_exact(kernel.d0)
        .map(|c| DVector::from_column_slice(c) / scale)
        .collect();
    Ok(AgentEnsemble { agents, mean_strategy })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearingReport {
    pub n_agents: usize,
    /// Sup over nodes of the largest component of the mean share vector.
    pub sup_abs_mean: f64,
    /// Root mean square over nodes of the same.
    pub l2_mean: f64,
}

pub fn clearing_report<T: Real>(ensemble: &AgentEnsemble<T>) -> Result<ClearingReport> {
    if ensemble.agents.is_empty() || ensemble.mean_strategy.is_empty() {
        return Err(Error::Validation("empty agent collection".into()));
    }
    let norms: Vec<f64> = ensemble.mean_strategy.iter().map(|m| m.amax().as_f64()).collect();
    let sup = norms.iter().copied().fold(0.0, f64::max);
    let l2 = (norms.iter().map(|x| x * x).sum::<f64>() / norms.len() as f64).sqrt();
    Ok(ClearingReport { n_agents: ensemble.agents.len(), sup_abs_mean: sup, l2_mean: l2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub n_agents: usize,
    pub replication: usize,
    pub seed: u64,
    pub report: ClearingReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingScaling {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log l2_mean` against `log N`.
    pub slope: f64,
}

/// Ordinary least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Clearing statistics for each population size over `replications`
/// independent seeds.
#[allow(clippy::too_many_arguments)]
pub fn clearing_scaling<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    sol: &RiccatiSolution<T>,
    coeffs: &ThetaCoefficients<T>,
    sizes: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ClearingScaling> {
    let mut rows = Vec::with_capacity(sizes.len() * replications);
    for (i, &n_agents) in sizes.iter().enumerate() {
        let sized = AgentPopulation { n_agents, ..pop.clone() };
        for r in 0..replications {
            let s = seed.wrapping_add((i * replications + r) as u64);
            let market = simulate_common(params, coeffs, sol, s, 0)?;
            let ens = simulate_agents(params, term, &sized, sol, &market, &params.vol, s, AgentOptions::default())?;
            rows.push(ScalingRow { n_agents, replication: r, seed: s, report: clearing_report(&ens)? });
        }
    }
    let points: Vec<_> = rows.iter().map(|r| (r.n_agents as f64, r.report.l2_mean)).collect();
    Ok(ClearingScaling { slope: log_log_slope(&points), rows })
}

/// Bounded modification of the optimal share vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    /// `π* + ε·1`
    Shift(f64),
    /// `c·π*`
    Scale(f64),
    /// Responds to the factor deviation from this many steps earlier.
    Lagged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationResult {
    pub perturbation: Perturbation,
    pub mean_utility: f64,
    pub utility_se: f64,
    /// Mean of `U(p*) − U(p)` over common paths.
    pub advantage: f64,
    pub advantage_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub n_paths: usize,
    pub mean_utility: f64,
    pub utility_se: f64,
    pub results: Vec<PerturbationResult>,
}

impl OptimalityReport {
    pub fn result(&self, p: Perturbation) -> Option<&PerturbationResult> {
        self.results.iter().find(|r| r.perturbation == p)
    }

    /// `½[loss(+ε) + loss(−ε)]` for a shift; the first-order terms cancel.
    pub fn symmetric_shift_loss(&self, eps: f64) -> Option<f64> {
        let a = self.result(Perturbation::Shift(eps))?.advantage;
        let b = self.result(Perturbation::Shift(-eps))?.advantage;
        Some(0.5 * (a + b))
    }

    /// Whether `p*` beats every perturbation up to `k` standard errors.
    pub fn optimal_within(&self, k: f64) -> bool {
        self.results.iter().all(|r| r.advantage >= -k * r.advantage_se)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One agent's factor deviation path and noise, drawn from `rng`.
fn draw_agent<T: Real>(
    rng: &mut ChaCha8Rng,
    params: &ModelParams<T>,
    pop: &AgentPopulation<T>,
    grid: &TimeGrid<T>,
) -> Result<(T, Vec<DVector<T>>, Vec<DVector<T>>)> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let chol = pop.x0_cov.clone().cholesky().ok_or(Error::Singular { what: "x0_cov", t: 0.0 })?.l();
    let xi = pop.xi_mean + pop.xi_var.sqrt() * T::standard_normal(rng);
    let mut y = chol * normals(rng, params.dims.d, T::one());
    let decay = T::one() - params.k * dt;
    let mut dev = Vec::with_capacity(n + 1);
    let mut dw = Vec::with_capacity(n);
    for _ in 0..n {
        let w = normals(rng, params.dims.d, sqrt_dt);
        let next = &y * decay + &params.sigma * &w;
        dev.push(y);
        dw.push(w);
        y = next;
    }
    dev.push(y);
    Ok((xi, dev, dw))
}

/// Expected utility of `p*` against perturbed strategies over `n_paths`
/// independent (market, agent) paths, each strategy evaluated on the same
/// draws.
#[allow(clippy::too_many_arguments)]
pub fn mc_optimality_check<T: Real>(
    params: &ModelParams<T>,
    term: &TerminalLiability<T>,
    pop: &AgentPopulation<T>,
    sol: &RiccatiSolution<T>,
    coeffs: &ThetaCoefficients<T>,
    perturbations: &[Perturbation],
    n_paths: usize,
    seed: u64,
) -> Result<OptimalityReport> {
    if n_paths == 0 {
        return Err(Error::Validation("n_paths must be positive".into()));
    }
    let grid = sol.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let d0 = params.dims.d0;
    let mut share = Vec::with_capacity(n + 1);
    let mut vol_t = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = grid.t(k);
        let st = params.vol.at(t).transpose();
        let position = params.sigma0.transpose() * sol.a10[k].transpose();
        share.push(st.clone().lu().solve(&position).ok_or(Error::Singular { what: "vol", t: t.as_f64() })?);
        vol_t.push(st);
    }
    let ones = DVector::<T>::from_element(d0, T::one());

    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let market = simulate_common(params, coeffs, sol, seed, j as u64)?;
            let mut rng = substream(seed, OPTIMALITY_AGENT, j as u64);
            let (xi, dev, _) = draw_agent(&mut rng, params, pop, &grid)?;
            let x_terminal = &sol.mu1[n] + &dev[n];
            let liability = term.evaluate(&market.x0_path[n], &x_terminal);
            let utility = |p: Perturbation| -> f64 {
                let mut w = xi;
                for k in 0..n {
                    let pi = match p {
                        Perturbation::None => &share[k] * &dev[k],
                        Perturbation::Shift(e) => &share[k] * &dev[k] + &ones * T::lit(e),
                        Perturbation::Scale(c) => &share[k] * &dev[k] * T::lit(c),
                        Perturbation::Lagged(l) => &share[k] * &dev[k.saturating_sub(l)],
                    };
                    let ret = &market.theta_hat_path[k] * dt + &market.dw0_hat[k];
                    w += (&vol_t[k] * pi).dot(&ret);
                }
                (-(-params.gamma * (w - liability)).exp()).as_f64()
            };
            let base = utility(Perturbation::None);
            let mut out = Vec::with_capacity(perturbations.len() + 1);
            out.push(base);
            out.extend(perturbations.iter().map(|&p| utility(p)));
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let base: Vec<f64> = per_path.iter().map(|u| u[0]).collect();
    let (mean_utility, utility_se) = mean_se(&base);
    let results = perturbations
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let us: Vec<f64> = per_path.iter().map(|u| u[i + 1]).collect();
            let adv: Vec<f64> = per_path.iter().map(|u| u[0] - u[i + 1]).collect();
            let (mu, se) = mean_se(&us);
            let (a, a_se) = mean_se(&adv);
            PerturbationResult { perturbation: p, mean_utility: mu, utility_se: se, advantage: a, advantage_se: a_se }
        })
        .collect();
    Ok(OptimalityReport { n_paths, mean_utility, utility_se, results })
}

/// Pathwise defect of the mean-field BSDE along simulated factor paths,
/// `Y₀ − Y_T − Σf Δt + ΣZ⁰ΔŴ⁰ + ΣZⁱΔWⁱ`, one value per path.
pub fn bsde_residuals<T: Real>(
    params: &ModelParams<T>,
    pop: &AgentPopulation<T>,
    sol: &RiccatiSolution<T>,
    coeffs: &ThetaCoefficients<T>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let grid = sol.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let g = params.gamma;
    (0..n_paths)
        .into_par_iter()
        .map(|j| -> Result<T> {
            let market = simulate_common(params, coeffs, sol, seed, j as u64)?;
            let mut rng = substream(seed, BSDE_AGENT, j as u64);
            let (_, dev, dw) = draw_agent(&mut rng, params, pop, &grid)?;
            let mut res = T::zero();
            let mut y0 = T::zero();
            for k in 0..=n {
                let x0 = &market.x0_path[k];
                let xi = &sol.mu1[k] + &dev[k];
                let vs = yz_at(sol, x0, &xi, k)?;
                if k == 0 {
                    y0 = vs.y;
                }
                if k == n {
                    res += y0 - vs.y;
                    break;
                }
                let mean = conditional_z0(sol, x0, k);
                res += -mean_field_driver(g, &vs.z0, &mean, &vs.zi) * dt
                    + vs.z0.dot(&market.dw0_hat[k])
                    + vs.zi.dot(&dw[k]);
            }
            Ok(res)
        })
        .collect()
}

pub fn root_mean_square<T: Real>(xs: &[T]) -> f64 {
    (xs.iter().map(|x| x.as_f64().powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
