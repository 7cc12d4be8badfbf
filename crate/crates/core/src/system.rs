//! Nonlinear systems with a constant input matrix:
//!
//! ```text
//! x' = f(x) + B u,    y = h(x)
//! ```
//!
//! The drift `f` and output map `h` are arbitrary (fallible) closures. Their
//! Jacobians either come from the caller or are approximated by central
//! differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Map from a state vector to a vector (drift or output).
pub type VectorMap<T> = Arc<dyn Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync>;
/// Map from a state vector to a matrix (Jacobian).
pub type MatrixMap<T> = Arc<dyn Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

/// Default relative central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Clone)]
pub struct SystemModel<T: Real> {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    f: VectorMap<T>,
    b: DMatrix<T>,
    h: VectorMap<T>,
    jac_f: Option<MatrixMap<T>>,
    jac_h: Option<MatrixMap<T>>,
    jacobian_mode: JacobianMode,
    fd_step: T,
}

impl<T: Real> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .field("jacobian_mode", &self.jacobian_mode)
            .finish_non_exhaustive()
    }
}

impl<T: Real> SystemModel<T> {
    /// Creates a model whose Jacobians are approximated by central differences.
    /// The input dimension is taken from the column count of `b`.
    pub fn new<F, H>(name: impl Into<String>, b: DMatrix<T>, p: usize, f: F, h: H) -> Result<Self>
    where
        F: Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
        H: Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        let n = b.nrows();
        if n == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("input matrix B has non-finite entries".into()));
        }
        Ok(Self {
            name: name.into(),
            n,
            m: b.ncols(),
            p,
            f: Arc::new(f),
            b,
            h: Arc::new(h),
            jac_f: None,
            jac_h: None,
            jacobian_mode: JacobianMode::FiniteDifference,
            fd_step: T::lit(DEFAULT_FD_STEP),
        })
    }

    /// Attaches exact Jacobians and switches to analytic mode.
    pub fn with_jacobians<JF, JH>(mut self, jac_f: JF, jac_h: JH) -> Self
    where
        JF: Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
        JH: Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    {
        self.jac_f = Some(Arc::new(jac_f));
        self.jac_h = Some(Arc::new(jac_h));
        self.jacobian_mode = JacobianMode::Analytic;
        self
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Result<Self> {
        if mode == JacobianMode::Analytic && (self.jac_f.is_none() || self.jac_h.is_none()) {
            return Err(Error::Config(format!(
                "model '{}' has no analytic Jacobians",
                self.name
            )));
        }
        self.jacobian_mode = mode;
        Ok(self)
    }

    pub fn with_fd_step(mut self, step: T) -> Result<Self> {
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::Config("fd_step must be positive and finite".into()));
        }
        self.fd_step = step;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    pub fn fd_step(&self) -> T {
        self.fd_step
    }

    fn check_state(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "state has length {}, model '{}' expects {}",
                x.len(),
                self.name,
                self.n
            )));
        }
        Ok(())
    }

    /// Drift term `f(x)` (without `B u`).
    pub fn eval_f(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.check_state(x)?;
        let fx = (self.f)(x)?;
        if fx.len() != self.n {
            return Err(Error::Dimension(format!(
                "f returned length {}, expected {}",
                fx.len(),
                self.n
            )));
        }
        check_finite("f(x)", fx.iter())?;
        Ok(fx)
    }

    pub fn eval_h(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.check_state(x)?;
        let hx = (self.h)(x)?;
        if hx.len() != self.p {
            return Err(Error::Dimension(format!(
                "h returned length {}, expected {}",
                hx.len(),
                self.p
            )));
        }
        check_finite("h(x)", hx.iter())?;
        Ok(hx)
    }

    /// `f(x) + B u`.
    pub fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let mut dx = self.eval_f(x)?;
        if self.m > 0 {
            dx.gemv(T::one(), &self.b, u, T::one());
        }
        Ok(dx)
    }

    /// `∂f/∂x` at `x`.
    pub fn jac_f(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.check_state(x)?;
        let jac = match (self.jacobian_mode, &self.jac_f) {
            (JacobianMode::Analytic, Some(jac)) => jac(x)?,
            _ => self.central_difference(x, self.n, |v| self.eval_f(v))?,
        };
        if jac.shape() != (self.n, self.n) {
            return Err(Error::Dimension(format!(
                "jac_f has shape {:?}, expected ({n}, {n})",
                jac.shape(),
                n = self.n
            )));
        }
        check_finite("jac_f(x)", jac.iter())?;
        Ok(jac)
    }

    /// `∂h/∂x` at `x`.
    pub fn jac_h(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.check_state(x)?;
        let jac = match (self.jacobian_mode, &self.jac_h) {
            (JacobianMode::Analytic, Some(jac)) => jac(x)?,
            _ => self.central_difference(x, self.p, |v| self.eval_h(v))?,
        };
        if jac.shape() != (self.p, self.n) {
            return Err(Error::Dimension(format!(
                "jac_h has shape {:?}, expected ({}, {})",
                jac.shape(),
                self.p,
                self.n
            )));
        }
        check_finite("jac_h(x)", jac.iter())?;
        Ok(jac)
    }

    // Step per coordinate is fd_step * (1 + |x_j|).
    fn central_difference<F>(&self, x: &DVector<T>, rows: usize, map: F) -> Result<DMatrix<T>>
    where
        F: Fn(&DVector<T>) -> Result<DVector<T>>,
    {
        let two = T::lit(2.0);
        let mut jac = DMatrix::zeros(rows, self.n);
        let mut probe = x.clone();
        for j in 0..self.n {
            let xj = x[j];
            let step = self.fd_step * (T::one() + xj.abs());
            probe[j] = xj + step;
            let plus = map(&probe)?;
            probe[j] = xj - step;
            let minus = map(&probe)?;
            probe[j] = xj;
            let width = two * step;
            for i in 0..rows {
                jac[(i, j)] = (plus[i] - minus[i]) / width;
            }
        }
        Ok(jac)
    }
}

pub(crate) fn check_finite<'a, T: Real>(
    what: &'static str,
    values: impl Iterator<Item = &'a T>,
) -> Result<()> {
    for (index, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what, index });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin::{lti, rl_network};

    #[test]
    fn rl_drift_at_origin_is_zero() {
        let sys = rl_network::<f64>(3).unwrap();
        let fx = sys.eval_f(&DVector::zeros(3)).unwrap();
        assert_eq!(fx, DVector::zeros(3));
    }

    #[test]
    fn rl_drift_at_first_unit_vector() {
        let sys = rl_network::<f64>(3).unwrap();
        let fx = sys.eval_f(&DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!((fx[0] + 17.0 / 6.0).abs() < 1e-15);
        assert_eq!(fx[1], 1.0);
        assert_eq!(fx[2], 0.0);
    }

    #[test]
    fn lti_drift_is_linear() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let sys = lti(a.clone(), DMatrix::from_element(2, 1, 1.0), DMatrix::identity(1, 2)).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(sys.eval_f(&x).unwrap(), &a * &x);
    }

    #[test]
    fn rl_jacobian_is_tridiagonal() {
        let sys = rl_network::<f64>(5).unwrap();
        let j0 = sys.jac_f(&DVector::zeros(5)).unwrap();
        let j1 = sys.jac_f(&DVector::from_element(5, 1.0)).unwrap();
        for i in 0..5usize {
            for k in 0..5 {
                let expect0 = match i.abs_diff(k) {
                    0 => -2.0,
                    1 => 1.0,
                    _ => 0.0,
                };
                assert_eq!(j0[(i, k)], expect0);
                let expect1 = if i == k { -4.0 } else { expect0 };
                assert_eq!(j1[(i, k)], expect1);
            }
        }
    }

    #[test]
    fn output_jacobian_of_rl_is_first_unit_row() {
        let sys = rl_network::<f64>(4).unwrap();
        let jh = sys.jac_h(&DVector::from_vec(vec![0.3, 1.0, -2.0, 0.1])).unwrap();
        assert_eq!(jh, DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn finite_difference_output_jacobian() {
        let sys = SystemModel::<f64>::new(
            "quad",
            DMatrix::zeros(2, 1),
            2,
            |x| Ok(-x.clone()),
            |x| Ok(DVector::from_vec(vec![x[0] * x[0], x[1]])),
        )
        .unwrap();
        let jh = sys.jac_h(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[6.0, 0.0, 0.0, 1.0]);
        assert!((jh - expect).amax() < 1e-8);
    }

    #[test]
    fn lti_output_jacobian_is_c() {
        let c = DMatrix::from_row_slice(1, 2, &[0.5, -1.5]);
        let sys = lti(DMatrix::identity(2, 2) * -1.0, DMatrix::zeros(2, 1), c.clone()).unwrap();
        assert_eq!(sys.jac_h(&DVector::from_vec(vec![9.0, 1.0])).unwrap(), c);
    }

    #[test]
    fn finite_difference_agrees_with_analytic() {
        let analytic = rl_network::<f64>(6).unwrap();
        let step = 1e-4;
        let fd = analytic
            .clone()
            .with_jacobian_mode(JacobianMode::FiniteDifference)
            .unwrap()
            .with_fd_step(step)
            .unwrap();
        let x = DVector::from_vec(vec![0.4, -0.9, 1.3, 0.0, -0.2, 0.7]);
        let gap = (analytic.jac_f(&x).unwrap() - fd.jac_f(&x).unwrap()).amax();
        // central-difference truncation bound
        let scale = (1.0f64 + 1.3).powi(2);
        assert!(gap <= 10.0 * step * step * scale, "gap {gap}");
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let analytic = rl_network::<f64>(4).unwrap();
        let x = DVector::from_vec(vec![0.8, -0.5, 1.1, 0.3]);
        let exact = analytic.jac_f(&x).unwrap();
        let gap = |step: f64| {
            let fd = analytic
                .clone()
                .with_jacobian_mode(JacobianMode::FiniteDifference)
                .unwrap()
                .with_fd_step(step)
                .unwrap();
            (fd.jac_f(&x).unwrap() - &exact).amax()
        };
        let ratio = gap(2e-2) / gap(1e-2);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn evaluation_is_pure() {
        let sys = rl_network::<f64>(8)
            .unwrap()
            .with_jacobian_mode(JacobianMode::FiniteDifference)
            .unwrap();
        let x = DVector::from_fn(8, |i, _| (i as f64 * 0.37).sin());
        assert_eq!(sys.eval_f(&x).unwrap(), sys.eval_f(&x).unwrap());
        assert_eq!(sys.jac_f(&x).unwrap(), sys.jac_f(&x).unwrap());
    }

    #[test]
    fn non_finite_drift_reports_index() {
        let sys = SystemModel::<f64>::new(
            "bad",
            DMatrix::zeros(3, 0),
            1,
            |x| Ok(DVector::from_vec(vec![x[0], f64::NAN, 0.0])),
            |x| Ok(DVector::from_element(1, x[0])),
        )
        .unwrap();
        match sys.eval_f(&DVector::zeros(3)) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn analytic_mode_requires_jacobians() {
        let sys = SystemModel::<f64>::new(
            "plain",
            DMatrix::zeros(1, 1),
            1,
            |x| Ok(-x.clone()),
            |x| Ok(x.clone()),
        )
        .unwrap();
        assert!(sys.with_jacobian_mode(JacobianMode::Analytic).is_err());
    }

    #[test]
    fn wrong_state_length_is_rejected() {
        let sys = rl_network::<f64>(3).unwrap();
        assert!(matches!(
            sys.eval_f(&DVector::zeros(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let sys = rl_network::<f32>(3).unwrap();
        let fx = sys.eval_f(&DVector::from_vec(vec![1.0f32, 0.0, 0.0])).unwrap();
        assert!((fx[0] + 17.0 / 6.0).abs() < 1e-6);
    }
}
