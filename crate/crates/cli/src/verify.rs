//! Invariant checks behind the `verify` subcommand.

use mfeq_core::equilibrium::{
    build_theta_coefficients, conditional_z0, mean_field_driver, reduced_position, separable_idiosyncratic_oracle,
    separable_y0_oracle, single_agent_driver, theta_hat_at, yz_at,
};
use mfeq_core::filter::run_filter;
use mfeq_core::linalg::max_abs;
use mfeq_core::model::validate_clearing_condition;
use mfeq_core::riccati::{max_node_gap, residual, scalar_a11_oracle, RiccatiState};
use mfeq_core::scenario::Scenario;
use mfeq_core::simulate::{bsde_residuals, mc_optimality_check, root_mean_square, simulate_common, Perturbation};
use mfeq_core::{Result, RiccatiSolution};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};

use crate::solve_on;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

fn at_most(name: &'static str, value: f64, bound: f64) -> Check {
    Check { name, value, threshold: format!("<= {bound:e}"), pass: value <= bound }
}

fn within(name: &'static str, value: f64, target: f64, rel: f64) -> Check {
    Check {
        name,
        value,
        threshold: format!("{target} +/- {}%", rel * 100.0),
        pass: (value - target).abs() <= rel * target,
    }
}

pub fn format_report(checks: &[Check]) -> String {
    let mut s = String::from("name\tvalue\tthreshold\tresult\n");
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        s.push_str(&format!("{}\t{:e}\t{}\t{}\n", c.name, c.value, c.threshold, verdict));
    }
    s
}

fn state_samples(s: &Scenario, sol: &RiccatiSolution, count: usize, seed: u64) -> Vec<(usize, DVector<f64>, DVector<f64>)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (d0, d) = (s.params.dims.d0, s.params.dims.d);
    (0..count)
        .map(|_| {
            let k = rng.random_range(0..=sol.grid.n_steps());
            let x0 = DVector::from_fn(d0, |_, _| rng.random_range(-2.0..2.0));
            let xi = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            (k, x0, xi)
        })
        .collect()
}

/// Runs every check; errors only on failures that prevent a check from
/// being evaluated at all.
pub fn run_checks(s: &Scenario) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let p = &s.params;
    let n_ode = s.run.n_steps_ode;
    let sol = solve_on(s, n_ode)?;

    let term = RiccatiState::from_terminal(&s.liability);
    out.push(at_most("riccati_terminal_gap", sol.state(n_ode).max_diff(&term), 0.0));
    out.push(at_most("riccati_asymmetry", sol.max_asymmetry(), 0.0));
    out.push(at_most("riccati_residual", residual(&sol), 1e-6));

    let coarse: Vec<_> = [10, 20, 40].iter().map(|&n| solve_on(s, n)).collect::<Result<_>>()?;
    let ratio = max_node_gap(&coarse[0], &coarse[1])? / max_node_gap(&coarse[1], &coarse[2])?;
    out.push(within("riccati_richardson_ratio", ratio, 16.0, 0.3));

    if p.dims.d == 1 {
        let exact = scalar_a11_oracle(p.gamma, p.sigma[(0, 0)], p.k, s.liability.a11[(0, 0)], p.horizon, 0.0)?;
        out.push(at_most("a11_scalar_oracle_gap", (sol.a11[0][(0, 0)] - exact).abs(), 1e-8));
    }

    let mut separable = s.clone();
    separable.liability.a10.fill(0.0);
    let sep = solve_on(&separable, n_ode)?;
    let mut gap = 0.0f64;
    for (k, x0, xi) in state_samples(s, &sep, 100, s.run.seed) {
        let t = sep.grid.t(k);
        let y = yz_at(&sep, &x0, &xi, k)?.y;
        let o = separable_y0_oracle(p, &separable.liability, &x0, t)
            .and_then(|a| Ok(a + separable_idiosyncratic_oracle(p, &separable.liability, &xi, t)?));
        gap = gap.max(o.map(|o| (y - o).abs()).unwrap_or(f64::INFINITY));
    }
    out.push(at_most("separable_oracle_gap", gap, 1e-6));

    let clears = validate_clearing_condition(&s.population, p.gamma, &sol.a11[0])?;
    out.push(Check {
        name: "integrability_condition",
        value: if clears { 1.0 } else { 0.0 },
        threshold: "== 1".into(),
        pass: clears,
    });

    let coeffs = build_theta_coefficients(&sol, p, &s.prior)?;
    out.push(at_most("varrho_residual", coeffs.varrho_residual(), 1e-5));
    out.push(at_most("varrho_initial_gap", max_abs(&(&coeffs.varrho[0] - &s.prior.v)), 0.0));
    let scale = coeffs.filter_diffusion.iter().map(max_abs).fold(0.0, f64::max);
    out.push(at_most("diffusion_decomposition_gap", coeffs.decomposition_gap(), 4.0 * f64::EPSILON * scale.max(1.0)));

    let (mut drivers, mut positions, mut conditional) = (0.0f64, 0.0f64, 0.0f64);
    for (k, x0, xi) in state_samples(s, &sol, 200, s.run.seed.wrapping_add(1)) {
        let vs = yz_at(&sol, &x0, &xi, k)?;
        let th = theta_hat_at(&sol, &x0, k);
        let mean = conditional_z0(&sol, &x0, k);
        let a = single_agent_driver(p.gamma, &vs.z0, &vs.zi, &th);
        let b = mean_field_driver(p.gamma, &vs.z0, &mean, &vs.zi);
        drivers = drivers.max((a - b).abs() / (1.0 + a.abs()));
        let pos = &vs.z0 + &th / p.gamma;
        positions = positions.max((pos - reduced_position(&sol, &xi, k)).amax());
        conditional = conditional.max((th + mean * p.gamma).amax());
    }
    out.push(at_most("driver_equivalence_gap", drivers, 1e-12));
    out.push(at_most("strategy_equivalence_gap", positions, 1e-12));
    out.push(at_most("theta_hat_conditional_gap", conditional, 0.0));

    let n_sim = s.run.n_steps_sim;
    let sim = solve_on(s, n_sim)?;
    let sim_coeffs = build_theta_coefficients(&sim, p, &s.prior)?;
    let dt = sim.grid.dt();
    let (mut innovation, mut filter_sq) = (0.0f64, 0.0f64);
    let paths = 10;
    for j in 0..paths {
        let m = simulate_common(p, &sim_coeffs, &sim, s.run.seed, j)?;
        innovation = innovation.max(m.innovation_gap());
        let f = run_filter(&sim_coeffs, &m.observations())?;
        filter_sq += f.iter().zip(&m.theta_hat_path).map(|(a, b)| (a - b).norm_squared() * dt).sum::<f64>();
    }
    out.push(at_most("innovation_identity_gap", innovation, 1e-12));
    out.push(at_most("filter_l2_gap", (filter_sq / paths as f64).sqrt(), 1e-2));
    let floor = stock_floor(s, &sim, &sim_coeffs)?;
    out.push(Check { name: "stock_min_price", value: floor, threshold: "> 0".into(), pass: floor > 0.0 });

    let coarse_n = (n_sim / 16).max(2);
    let rms = |n: usize| -> Result<f64> {
        let sol = solve_on(s, n)?;
        let c = build_theta_coefficients(&sol, p, &s.prior)?;
        Ok(root_mean_square(&bsde_residuals(p, &s.population, &sol, &c, 200, s.run.seed)?))
    };
    out.push(within("bsde_order_ratio", rms(coarse_n)? / rms(4 * coarse_n)?, 2.0, 0.3));

    let opt_n = n_sim.min(200);
    let opt_sol = solve_on(s, opt_n)?;
    let opt_coeffs = build_theta_coefficients(&opt_sol, p, &s.prior)?;
    let perturbations =
        [Perturbation::None, Perturbation::Shift(0.5), Perturbation::Shift(-0.5), Perturbation::Scale(2.0)];
    let rep = mc_optimality_check(
        p,
        &s.liability,
        &s.population,
        &opt_sol,
        &opt_coeffs,
        &perturbations,
        2000,
        s.run.seed,
    )?;
    let worst = rep
        .results
        .iter()
        .filter(|r| r.advantage_se > 0.0)
        .map(|r| r.advantage / r.advantage_se)
        .fold(f64::INFINITY, f64::min);
    out.push(Check {
        name: "optimality_min_zscore",
        value: worst,
        threshold: ">= -2".into(),
        pass: worst >= -2.0,
    });
    Ok(out)
}

fn stock_floor(s: &Scenario, sol: &RiccatiSolution, coeffs: &mfeq_core::ThetaCoefficients) -> Result<f64> {
    let m = simulate_common(&s.params, coeffs, sol, s.run.seed, 0)?;
    Ok(m.s_path.iter().map(|x| x.min()).fold(f64::INFINITY, f64::min))
}
