//! Built-in model families.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::system::SystemModel;

/// Ladder of `n` inductors with nonlinear resistors, driven at the first node:
///
/// ```text
/// x_i' = x_{i-1} - 2 x_i + x_{i+1} - (x_i^2/2 + x_i^3/3),   y = x_1
/// ```
///
/// with the boundary neighbours dropped and `B = e_1`.
pub fn rl_network<T: Real>(n: usize) -> Result<SystemModel<T>> {
    if n < 2 {
        return Err(Error::Config(format!("rl_network needs n >= 2, got {n}")));
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(0, 0)] = T::one();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    // Operation order matches `rl_network_expressions` so both evaluate bitwise-equal.
    let f = move |x: &DVector<T>| {
        Ok(DVector::from_fn(n, |i, _| {
            let linear = if i == 0 {
                -two * x[0] + x[1]
            } else if i + 1 == n {
                x[i - 1] - two * x[i]
            } else {
                x[i - 1] - two * x[i] + x[i + 1]
            };
            linear - (x[i].powi(2) / two + x[i].powi(3) / three)
        }))
    };
    let h = |x: &DVector<T>| Ok(DVector::from_element(1, x[0]));
    let jac_f = move |x: &DVector<T>| {
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            jac[(i, i)] = -two - x[i] - x[i] * x[i];
            if i > 0 {
                jac[(i, i - 1)] = T::one();
            }
            if i + 1 < n {
                jac[(i, i + 1)] = T::one();
            }
        }
        Ok(jac)
    };
    let jac_h = move |_: &DVector<T>| {
        let mut jac = DMatrix::zeros(1, n);
        jac[(0, 0)] = T::one();
        Ok(jac)
    };
    Ok(SystemModel::new(format!("rl_network({n})"), b, 1, f, h)?.with_jacobians(jac_f, jac_h))
}

/// Drift strings for the RL ladder in the expression grammar.
pub fn rl_network_expressions(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| {
            let linear = if i == 1 {
                "-2*x1 + x2".to_string()
            } else if i == n {
                format!("x{} - 2*x{i}", i - 1)
            } else {
                format!("x{} - 2*x{i} + x{}", i - 1, i + 1)
            };
            format!("{linear} - (x{i}^2/2 + x{i}^3/3)")
        })
        .collect()
}

/// Linear time-invariant system `x' = A x + B u`, `y = C x`.
pub fn lti<T: Real>(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<SystemModel<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "lti expects A n×n, B n×m, C p×n; got A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let p = c.nrows();
    let (fa, fc, ja, jc) = (a.clone(), c.clone(), a, c);
    Ok(SystemModel::new(
        format!("lti({n})"),
        b,
        p,
        move |x| Ok(&fa * x),
        move |x| Ok(&fc * x),
    )?
    .with_jacobians(move |_| Ok(ja.clone()), move |_| Ok(jc.clone())))
}

/// Potential `V(x) = ½ xᵀ Q x + Σ q_i x_i⁴ / 4` with symmetric `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticPotential<T: Real> {
    pub quadratic: DMatrix<T>,
    pub quartic: DVector<T>,
}

impl<T: Real> QuarticPotential<T> {
    pub fn value(&self, x: &DVector<T>) -> T {
        let half = T::lit(0.5);
        let quarter = T::lit(0.25);
        half * x.dot(&(&self.quadratic * x))
            + x.iter()
                .zip(self.quartic.iter())
                .fold(T::zero(), |acc, (&xi, &qi)| acc + qi * xi.powi(4) * quarter)
    }

    pub fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        let mut g = &self.quadratic * x;
        for i in 0..x.len() {
            g[i] += self.quartic[i] * x[i].powi(3);
        }
        g
    }

    pub fn hessian(&self, x: &DVector<T>) -> DMatrix<T> {
        let three = T::lit(3.0);
        let mut hess = self.quadratic.clone();
        for i in 0..x.len() {
            hess[(i, i)] += three * self.quartic[i] * x[i] * x[i];
        }
        hess
    }
}

/// Gradient system `f = S⁻¹ ∇V`, `B = S⁻¹ c`, `y = cᵀ x`, variationally
/// symmetric with respect to the constant `S = diag(s_diag)`.
pub fn gradient_family<T: Real>(
    s_diag: DVector<T>,
    potential: QuarticPotential<T>,
    c: DVector<T>,
) -> Result<SystemModel<T>> {
    let n = s_diag.len();
    if potential.quadratic.shape() != (n, n) || potential.quartic.len() != n || c.len() != n {
        return Err(Error::Dimension(
            "gradient_family: S, V and c must share the state dimension".into(),
        ));
    }
    if s_diag.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Config("gradient_family: S must be positive diagonal".into()));
    }
    let q = &potential.quadratic;
    if (q - q.transpose()).amax() > T::zero() {
        return Err(Error::Config("gradient_family: quadratic part must be symmetric".into()));
    }
    let s_inv = s_diag.map(|s| T::one() / s);
    let b = DMatrix::from_fn(n, 1, |i, _| s_inv[i] * c[i]);
    let (pot_f, pot_j) = (potential.clone(), potential);
    let (inv_f, inv_j) = (s_inv.clone(), s_inv);
    let (c_h, c_j) = (c.clone(), c);
    Ok(SystemModel::new(
        format!("gradient_family({n})"),
        b,
        1,
        move |x| Ok(pot_f.gradient(x).component_mul(&inv_f)),
        move |x| Ok(DVector::from_element(1, c_h.dot(x))),
    )?
    .with_jacobians(
        move |x| {
            let mut jac = pot_j.hessian(x);
            for (i, mut row) in jac.row_iter_mut().enumerate() {
                row *= inv_j[i];
            }
            Ok(jac)
        },
        move |_| Ok(DMatrix::from_row_slice(1, n, c_j.as_slice())),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::expression_system;

    #[test]
    fn rl_jacobian_at_origin() {
        let sys = rl_network::<f64>(4).unwrap();
        let j = sys.jac_f(&DVector::zeros(4)).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0,
            ],
        );
        assert_eq!(j, expect);
        assert_eq!(sys.b().column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rl_builtin_matches_expressions_bitwise_at_minus_ones() {
        let n = 5;
        let builtin = rl_network::<f64>(n).unwrap();
        let parsed = expression_system::<f64>(
            "rl-expr",
            &rl_network_expressions(n),
            &["x1".to_string()],
            builtin.b().clone(),
        )
        .unwrap();
        let x = DVector::from_element(n, -1.0);
        let fb = builtin.eval_f(&x).unwrap();
        let fp = parsed.eval_f(&x).unwrap();
        for i in 0..n {
            assert_eq!(fb[i].to_bits(), fp[i].to_bits());
        }
        // Interior rows: linear part vanishes, nonlinearity contributes -(1/2 - 1/3).
        assert!((fb[2] + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_family_identity_quadratic_is_linear() {
        let n = 3;
        let sys = gradient_family(
            DVector::from_element(n, 1.0),
            QuarticPotential {
                quadratic: DMatrix::identity(n, n) * -2.0,
                quartic: DVector::zeros(n),
            },
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert_eq!(sys.eval_f(&x).unwrap(), &x * -2.0);
        assert_eq!(sys.eval_h(&x).unwrap()[0], 0.5);
        assert_eq!(sys.b(), &DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
    }

    #[test]
    fn gradient_family_input_matrix_is_scaled() {
        let sys = gradient_family(
            DVector::from_vec(vec![1.0, 2.0, 4.0]),
            QuarticPotential {
                quadratic: DMatrix::identity(3, 3) * -2.0,
                quartic: DVector::from_element(3, -1.0),
            },
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(sys.b(), &DMatrix::from_column_slice(3, 1, &[1.0, 0.5, 0.25]));
    }

    #[test]
    fn gradient_matches_potential_differences() {
        let potential = QuarticPotential {
            quadratic: DMatrix::from_row_slice(3, 3, &[-2.0, 0.3, 0.0, 0.3, -2.0, 0.1, 0.0, 0.1, -2.0]),
            quartic: DVector::from_element(3, -1.0),
        };
        let s = DVector::from_vec(vec![1.0f64, 2.0, 3.0]);
        let sys = gradient_family(s.clone(), potential.clone(), DVector::from_vec(vec![1.0, 0.0, 0.0]))
            .unwrap();
        let x = DVector::from_vec(vec![0.4, -0.3, 0.9]);
        let h = 1e-5;
        let fx = sys.eval_f(&x).unwrap();
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let dv = (potential.value(&xp) - potential.value(&xm)) / (2.0 * h);
            assert!((dv / s[i] - fx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_tiny_ladder() {
        assert!(rl_network::<f64>(1).is_err());
    }
}
