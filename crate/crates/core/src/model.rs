//! Domain records: market and agent constants, terminal liabilities, the
//! agent population law and the time grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Asset, idiosyncratic-factor and `B⁰` noise dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d0: usize,
    pub d: usize,
    pub k_noise: usize,
}

/// Uniform grid `t_k = k·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    n_steps: usize,
    horizon: T,
}

/// A node `t_k` or the midpoint of `[t_k, t_{k+1}]`. Runge-Kutta stages only
/// ever need coefficients at these two kinds of points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPoint {
    Node(usize),
    Mid(usize),
}

impl<T: Real> TimeGrid<T> {
    pub fn new(n_steps: usize, horizon: T) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Validation("n_steps must be positive".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite_value() {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_count(self.n_steps)
    }

    /// Node time; the last node is exactly the horizon.
    pub fn t(&self, k: usize) -> T {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.horizon
        } else {
            T::from_count(k) * self.horizon / T::from_count(self.n_steps)
        }
    }

    pub fn time_of(&self, p: GridPoint) -> T {
        match p {
            GridPoint::Node(k) => self.t(k),
            GridPoint::Mid(k) => (self.t(k) + self.t(k + 1)) * T::lit(0.5),
        }
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.n_steps).map(|k| self.t(k)).collect()
    }
}

/// Stock volatility `σ_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum VolSchedule<T: Real> {
    Constant(DMatrix<T>),
    /// Piecewise-linear in time, held constant outside the table.
    Table { times: Vec<T>, values: Vec<DMatrix<T>> },
}

impl<T: Real> VolSchedule<T> {
    pub fn at(&self, t: T) -> DMatrix<T> {
        match self {
            VolSchedule::Constant(m) => m.clone(),
            VolSchedule::Table { times, values } => {
                if t <= times[0] {
                    return values[0].clone();
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last].clone();
                }
                let j = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[j]) / (times[j + 1] - times[j]);
                &values[j] * (T::one() - w) + &values[j + 1] * w
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VolSchedule::Constant(m) => m.nrows(),
            VolSchedule::Table { values, .. } => values[0].nrows(),
        }
    }

    /// Times at which invertibility and the eigenvalue bounds are checked:
    /// the knots plus 16 subdivisions of every segment.
    fn check_times(&self, horizon: T) -> Vec<T> {
        match self {
            VolSchedule::Constant(_) => vec![T::zero(), horizon],
            VolSchedule::Table { times, .. } => {
                let mut out = vec![T::zero(), horizon];
                for w in times.windows(2) {
                    for s in 0..=16 {
                        out.push(w[0] + (w[1] - w[0]) * T::from_count(s) / T::lit(16.0));
                    }
                }
                out
            }
        }
    }

    fn validate(&self, d0: usize, horizon: T, bounds: Option<(T, T)>) -> Result<()> {
        if let VolSchedule::Table { times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(Error::Validation(
                    "vol table needs matching, non-empty times and values".into(),
                ));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Validation("vol table times must be strictly increasing".into()));
            }
        }
        for t in self.check_times(horizon) {
            let s = self.at(t);
            if s.nrows() != d0 || s.ncols() != d0 {
                return Err(Error::Validation(format!("vol must be {d0}x{d0}")));
            }
            if s.clone().try_inverse().is_none() {
                return Err(Error::Validation(format!("vol not invertible at t = {t}")));
            }
            if let Some((lo, hi)) = bounds {
                let ss = &s * s.transpose();
                let eig = nalgebra::SymmetricEigen::new(ss);
                let min = eig.eigenvalues.min();
                let max = eig.eigenvalues.max();
                if min < lo || max > hi {
                    return Err(Error::Validation(format!(
                        "vol eigenvalues of σσᵀ outside [{lo}, {hi}] at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> VolSchedule<U>
    where
        T: Real,
    {
        match self {
            VolSchedule::Constant(m) => VolSchedule::Constant(m.map(|x| U::lit(x.as_f64()))),
            VolSchedule::Table { times, values } => VolSchedule::Table {
                times: times.iter().map(|x| U::lit(x.as_f64())).collect(),
                values: values.iter().map(|m| m.map(|x| U::lit(x.as_f64()))).collect(),
            },
        }
    }
}

/// Market and agent constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    /// Absolute risk aversion γ.
    pub gamma: T,
    /// Common-factor mean-reversion speed K₀.
    pub k0: T,
    /// Idiosyncratic mean-reversion speed K.
    pub k: T,
    pub m0: DVector<T>,
    pub m: DVector<T>,
    pub sigma0: DMatrix<T>,
    pub sigma: DMatrix<T>,
    pub vol: VolSchedule<T>,
    /// Optional `(λ̲, λ̄)` bounds on the spectrum of `σ_tσ_tᵀ`.
    pub vol_bounds: Option<(T, T)>,
    /// Deterministic initial common factor `x⁰₀`.
    pub x0_init: DVector<T>,
    /// Initial stock prices.
    pub s0: DVector<T>,
    pub horizon: T,
    pub dims: Dims,
}

fn positive<T: Real>(x: T, name: &str) -> Result<()> {
    if x > T::zero() && x.is_finite_value() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive")))
    }
}

fn finite_matrix<T: Real>(m: &DMatrix<T>, name: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite_value()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} has non-finite entries")))
    }
}

fn check_shape<T: Real>(m: &DMatrix<T>, r: usize, c: usize, name: &str) -> Result<()> {
    if m.nrows() != r || m.ncols() != c {
        return Err(Error::Validation(format!(
            "{name} must be {r}x{c}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    finite_matrix(m, name)
}

fn check_len<T: Real>(v: &DVector<T>, n: usize, name: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Validation(format!("{name} must have length {n}, got {}", v.len())));
    }
    if v.iter().all(|x| x.is_finite_value()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} has non-finite entries")))
    }
}

impl<T: Real> ModelParams<T> {
    pub fn validate(&self) -> Result<()> {
        let Dims { d0, d, k_noise } = self.dims;
        if d0 == 0 || d == 0 || k_noise == 0 {
            return Err(Error::Validation("dimensions must be positive".into()));
        }
        positive(self.gamma, "gamma")?;
        positive(self.k0, "k0")?;
        positive(self.k, "k")?;
        positive(self.horizon, "horizon")?;
        check_len(&self.m0, d0, "m0")?;
        check_len(&self.m, d, "m")?;
        check_len(&self.x0_init, d0, "x0_init")?;
        check_len(&self.s0, d0, "s0")?;
        if self.s0.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::Validation("s0 must be positive".into()));
        }
        check_shape(&self.sigma0, d0, d0, "sigma0")?;
        check_shape(&self.sigma, d, d, "sigma")?;
        if let Some((lo, hi)) = self.vol_bounds {
            if !(lo > T::zero() && hi >= lo) {
                return Err(Error::Validation("vol bounds must satisfy 0 < lo <= hi".into()));
            }
        }
        self.vol.validate(d0, self.horizon, self.vol_bounds)
    }

    /// `Σ₀` must be invertible whenever the filter coefficients are built.
    pub fn require_invertible_sigma0(&self) -> Result<DMatrix<T>> {
        self.sigma0
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Validation("sigma0 must be invertible".into()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let cv = |v: &DVector<T>| v.map(|x| U::lit(x.as_f64()));
        let cm = |m: &DMatrix<T>| m.map(|x| U::lit(x.as_f64()));
        ModelParams {
            gamma: U::lit(self.gamma.as_f64()),
            k0: U::lit(self.k0.as_f64()),
            k: U::lit(self.k.as_f64()),
            m0: cv(&self.m0),
            m: cv(&self.m),
            sigma0: cm(&self.sigma0),
            sigma: cm(&self.sigma),
            vol: self.vol.cast(),
            vol_bounds: self.vol_bounds.map(|(a, b)| (U::lit(a.as_f64()), U::lit(b.as_f64()))),
            x0_init: cv(&self.x0_init),
            s0: cv(&self.s0),
            horizon: U::lit(self.horizon.as_f64()),
            dims: self.dims,
        }
    }
}

/// Quadratic terminal liability
/// `F = ½⟨A₀₀x⁰,x⁰⟩ + ½⟨A₁₁xⁱ,xⁱ⟩ + ⟨A₁₀x⁰,xⁱ⟩ + ⟨B₀,x⁰⟩ + ⟨B₁,xⁱ⟩ + C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalLiability<T: Real> {
    pub a00: DMatrix<T>,
    pub a11: DMatrix<T>,
    pub a10: DMatrix<T>,
    pub b0: DVector<T>,
    pub b1: DVector<T>,
    pub c: T,
}

impl<T: Real> TerminalLiability<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            a00: DMatrix::zeros(dims.d0, dims.d0),
            a11: DMatrix::zeros(dims.d, dims.d),
            a10: DMatrix::zeros(dims.d, dims.d0),
            b0: DVector::zeros(dims.d0),
            b1: DVector::zeros(dims.d),
            c: T::zero(),
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        check_shape(&self.a00, dims.d0, dims.d0, "a00F")?;
        check_shape(&self.a11, dims.d, dims.d, "a11F")?;
        check_shape(&self.a10, dims.d, dims.d0, "a10F")?;
        check_len(&self.b0, dims.d0, "b0F")?;
        check_len(&self.b1, dims.d, "b1F")?;
        if !self.c.is_finite_value() {
            return Err(Error::Validation("cF must be finite".into()));
        }
        if !linalg::is_exactly_symmetric(&self.a00) {
            return Err(Error::Validation("a00F not symmetric".into()));
        }
        if !linalg::is_exactly_symmetric(&self.a11) {
            return Err(Error::Validation("a11F not symmetric".into()));
        }
        Ok(())
    }

    /// Liability value at the terminal factor states.
    pub fn evaluate(&self, x0: &DVector<T>, xi: &DVector<T>) -> T {
        let half = T::lit(0.5);
        half * x0.dot(&(&self.a00 * x0))
            + half * xi.dot(&(&self.a11 * xi))
            + xi.dot(&(&self.a10 * x0))
            + self.b0.dot(x0)
            + self.b1.dot(xi)
            + self.c
    }

    pub fn cast<U: Real>(&self) -> TerminalLiability<U> {
        let cm = |m: &DMatrix<T>| m.map(|x| U::lit(x.as_f64()));
        TerminalLiability {
            a00: cm(&self.a00),
            a11: cm(&self.a11),
            a10: cm(&self.a10),
            b0: self.b0.map(|x| U::lit(x.as_f64())),
            b1: self.b1.map(|x| U::lit(x.as_f64())),
            c: U::lit(self.c.as_f64()),
        }
    }
}

/// Law of the agents' private data: `ξⁱ ~ N(xi_mean, xi_var)` independent of
/// `xⁱ₀ ~ N(x0_mean, x0_cov)`, i.i.d. across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation<T: Real> {
    pub n_agents: usize,
    pub xi_mean: T,
    pub xi_var: T,
    pub x0_mean: DVector<T>,
    pub x0_cov: DMatrix<T>,
}

impl<T: Real> AgentPopulation<T> {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Validation("n_agents must be positive".into()));
        }
        if !self.xi_mean.is_finite_value() {
            return Err(Error::Validation("xi_mean must be finite".into()));
        }
        if !(self.xi_var >= T::zero()) || !self.xi_var.is_finite_value() {
            return Err(Error::Validation("xi_var must be nonnegative".into()));
        }
        check_len(&self.x0_mean, dims.d, "x0_mean")?;
        check_shape(&self.x0_cov, dims.d, dims.d, "x0_cov")?;
        if !linalg::is_exactly_symmetric(&self.x0_cov) {
            return Err(Error::Validation("x0_cov not symmetric".into()));
        }
        if !linalg::is_positive_definite(&self.x0_cov) {
            return Err(Error::Validation("x0_cov must be positive definite".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> AgentPopulation<U> {
        AgentPopulation {
            n_agents: self.n_agents,
            xi_mean: U::lit(self.xi_mean.as_f64()),
            xi_var: U::lit(self.xi_var.as_f64()),
            x0_mean: self.x0_mean.map(|x| U::lit(x.as_f64())),
            x0_cov: self.x0_cov.map(|x| U::lit(x.as_f64())),
        }
    }
}

/// Integrability condition for the optimal strategy: `Var(x¹₀)⁻¹ − γA₁₁(0)`
/// must be positive definite.
pub fn validate_clearing_condition<T: Real>(
    pop: &AgentPopulation<T>,
    gamma: T,
    a11_at_0: &DMatrix<T>,
) -> Result<bool> {
    let cov = linalg::symmetrized(pop.x0_cov.clone());
    let inv = cov
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::Singular { what: "x0_cov", t: 0.0 })?;
    if a11_at_0.shape() != inv.shape() {
        return Err(Error::Dimension(format!(
            "A11(0) is {:?}, covariance is {:?}",
            a11_at_0.shape(),
            inv.shape()
        )));
    }
    let m = inv - a11_at_0 * gamma;
    Ok(linalg::is_positive_definite(&m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(var: f64) -> AgentPopulation<f64> {
        AgentPopulation {
            n_agents: 10,
            xi_mean: 2.0,
            xi_var: 0.3,
            x0_mean: DVector::from_element(1, -0.7),
            x0_cov: DMatrix::from_element(1, 1, var),
        }
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = TimeGrid::new(3, 0.7f64).unwrap();
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(3), 0.7);
        assert_eq!(g.n_nodes(), 4);
        assert!((g.time_of(GridPoint::Mid(0)) - 0.7 / 6.0).abs() < 1e-15);
        assert!(TimeGrid::new(0, 1.0f64).is_err());
    }

    #[test]
    fn clearing_condition_scalar_cases() {
        // 1/0.5 − 1.5·0.1857 = 1.721 > 0
        let a = DMatrix::from_element(1, 1, 0.1857);
        assert!(validate_clearing_condition(&pop(0.5), 1.5, &a).unwrap());
        let zero = DMatrix::zeros(1, 1);
        assert!(validate_clearing_condition(&pop(0.5), 1.5, &zero).unwrap());
        // 2 − 3 < 0
        let big = DMatrix::from_element(1, 1, 2.0);
        assert!(!validate_clearing_condition(&pop(0.5), 1.5, &big).unwrap());
    }

    #[test]
    fn clearing_condition_singular_covariance() {
        let mut p = pop(0.5);
        p.x0_cov = DMatrix::zeros(1, 1);
        assert!(matches!(
            validate_clearing_condition(&p, 1.5, &DMatrix::zeros(1, 1)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn clearing_condition_matrix_case() {
        let mut p = pop(0.5);
        p.x0_mean = DVector::zeros(2);
        p.x0_cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        assert!(validate_clearing_condition(&p, 1.5, &a).unwrap());
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.1]);
        assert!(!validate_clearing_condition(&p, 1.5, &a).unwrap());
    }

    #[test]
    fn vol_table_interpolates() {
        let v = VolSchedule::Table {
            times: vec![0.0, 1.0],
            values: vec![DMatrix::from_element(1, 1, 0.2), DMatrix::from_element(1, 1, 0.4)],
        };
        assert!((v.at(0.25f64)[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(v.at(2.0)[(0, 0)], 0.4);
        assert!(v.validate(1, 1.0, Some((0.01, 1.0))).is_ok());
        assert!(v.validate(1, 1.0, Some((0.05, 1.0))).is_err());
    }

    #[test]
    fn liability_rejects_asymmetric_a11() {
        let dims = Dims { d0: 1, d: 2, k_noise: 1 };
        let mut f = TerminalLiability::<f64>::zeros(dims);
        f.a11 = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.2]);
        let err = f.validate(dims).unwrap_err().to_string();
        assert!(err.contains("a11F not symmetric"), "{err}");
    }

    #[test]
    fn liability_evaluates_quadratic_form() {
        let dims = Dims { d0: 1, d: 1, k_noise: 1 };
        let f = TerminalLiability {
            a00: DMatrix::from_element(1, 1, 0.7),
            a11: DMatrix::from_element(1, 1, 0.2),
            a10: DMatrix::from_element(1, 1, 0.3),
            b0: DVector::from_element(1, -1.3),
            b1: DVector::from_element(1, -0.7),
            c: 1.2,
        };
        f.validate(dims).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let xi = DVector::from_element(1, 2.0);
        let expect: f64 = 0.35 + 0.1 * 4.0 + 0.3 * 2.0 - 1.3 - 1.4 + 1.2;
        assert!((f.evaluate(&x0, &xi) - expect).abs() < 1e-14);
    }
}
