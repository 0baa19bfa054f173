//! End-to-end checks of the market and agent simulation against the
//! population law and the filter.

use mfeq_core::equilibrium::build_theta_coefficients;
use mfeq_core::model::TimeGrid;
use mfeq_core::riccati::{scalar_a11_oracle, solve_system};
use mfeq_core::scenario::reference_scenario;
use mfeq_core::simulate::{simulate_agents, simulate_common, AgentOptions};

#[test]
fn estimate_is_unbiased_under_the_prior() {
    let s = reference_scenario();
    let n = 500;
    let grid = TimeGrid::new(n, 1.0).unwrap();
    let sol = solve_system(&s.params, &s.liability, &s.population, &grid).unwrap();
    let c = build_theta_coefficients(&sol, &s.params, &s.prior).unwrap();
    let paths = 10_000;
    let checkpoints = [0, 125, 250, 375, 500];
    let mut sum = [0.0; 5];
    let mut sq = [0.0; 5];
    for j in 0..paths {
        let m = simulate_common(&s.params, &c, &sol, 21, j).unwrap();
        for (i, &k) in checkpoints.iter().enumerate() {
            let e = m.theta_path[k][0] - m.theta_hat_path[k][0];
            sum[i] += e;
            sq[i] += e * e;
        }
    }
    let p = paths as f64;
    for i in 0..5 {
        let mean = sum[i] / p;
        let se = ((sq[i] / p - mean * mean) / p).sqrt();
        assert!(mean.abs() <= 3.0 * se, "checkpoint {i}: mean {mean}, se {se}");
    }
}

#[test]
fn initial_wealth_matches_population_law() {
    let s = reference_scenario();
    let grid = TimeGrid::new(50, 1.0).unwrap();
    let sol = solve_system(&s.params, &s.liability, &s.population, &grid).unwrap();
    let c = build_theta_coefficients(&sol, &s.params, &s.prior).unwrap();
    let m = simulate_common(&s.params, &c, &sol, 7, 0).unwrap();
    let ens =
        simulate_agents(&s.params, &s.liability, &s.population, &sol, &m, &s.params.vol, 7, AgentOptions::default())
            .unwrap();
    assert_eq!(ens.agents.len(), 5000);
    let mean = ens.agents.iter().map(|a| a.xi).sum::<f64>() / 5000.0;
    assert!((mean - 2.0).abs() <= 3.0 * (0.3f64 / 5000.0).sqrt(), "{mean}");
}

#[test]
fn single_precision_pipeline_runs() {
    let s = reference_scenario();
    let (p, f, pop, prior) =
        (s.params.cast::<f32>(), s.liability.cast::<f32>(), s.population.cast::<f32>(), s.prior.cast::<f32>());
    let grid = TimeGrid::new(200, 1.0f32).unwrap();
    let sol = solve_system(&p, &f, &pop, &grid).unwrap();
    let exact = scalar_a11_oracle(1.5f64, 0.3, 0.05, 0.2, 1.0, 0.0).unwrap();
    assert!((f64::from(sol.a11[0][(0, 0)]) - exact).abs() < 1e-5);
    let c = build_theta_coefficients(&sol, &p, &prior).unwrap();
    let m = simulate_common(&p, &c, &sol, 1, 0).unwrap();
    let small = mfeq_core::model::AgentPopulation { n_agents: 100, ..pop };
    let ens = simulate_agents(&p, &f, &small, &sol, &m, &p.vol, 1, AgentOptions::default()).unwrap();
    assert!(ens.agents.iter().all(|a| a.terminal_wealth.is_finite()));
    assert!(m.s_path.iter().all(|x| x[0] > 0.0));
}
