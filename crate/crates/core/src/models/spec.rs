//! JSON model configuration.
//!
//! Two shapes are accepted:
//!
//! ```json
//! {"name": "duffing", "n": 2, "m": 1, "p": 1,
//!  "B": [[0], [1]], "f": ["x2", "-x1 - x1^3"], "h": ["x1"]}
//! ```
//!
//! ```json
//! {"builtin": "rl_network", "n": 100}
//! ```
//!
//! Built-ins are `rl_network`, `lti` (with `A`, `B`, `C`) and
//! `gradient_family` (with `s_diag`, `quadratic`, `quartic`, `c`).

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::builtin::{gradient_family, lti, rl_network, QuarticPotential};
use crate::models::expr::{parse, parse_signal, Expr};
use crate::scalar::Real;
use crate::system::SystemModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Builtin(BuiltinSpec),
    Expression(ExpressionSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum BuiltinSpec {
    RlNetwork {
        n: usize,
    },
    Lti {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
    },
    GradientFamily {
        s_diag: Vec<f64>,
        quadratic: Vec<Vec<f64>>,
        quartic: Vec<f64>,
        c: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub f: Vec<String>,
    pub h: Vec<String>,
    /// Optional default input signals, one expression of `t` per channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<String>>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Accepts `rl:<n>` shorthand or a path to a JSON file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if let Some(n) = arg.strip_prefix("rl:") {
            let n = n
                .parse()
                .map_err(|_| Error::Config(format!("bad rl_network size in '{arg}'")))?;
            return Ok(ModelSpec::Builtin(BuiltinSpec::RlNetwork { n }));
        }
        Self::load(arg)
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::Builtin(BuiltinSpec::RlNetwork { n }) => format!("rl_network({n})"),
            ModelSpec::Builtin(BuiltinSpec::Lti { a, .. }) => format!("lti({})", a.len()),
            ModelSpec::Builtin(BuiltinSpec::GradientFamily { s_diag, .. }) => {
                format!("gradient_family({})", s_diag.len())
            }
            ModelSpec::Expression(e) => e.name.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModelSpec::Expression(e) = self {
            if e.f.len() != e.n || e.h.len() != e.p {
                return Err(Error::Config(format!(
                    "model '{}': expected {} drift and {} output expressions, got {} and {}",
                    e.name,
                    e.n,
                    e.p,
                    e.f.len(),
                    e.h.len()
                )));
            }
            check_shape(&e.b, e.n, e.m, "B")?;
            for text in e.f.iter().chain(&e.h) {
                let expr = parse(text)?;
                if expr.max_state_index() > e.n {
                    return Err(Error::Config(format!(
                        "model '{}': '{text}' references x{} but n = {}",
                        e.name,
                        expr.max_state_index(),
                        e.n
                    )));
                }
            }
            if let Some(inputs) = &e.inputs {
                if inputs.len() != e.m {
                    return Err(Error::Config(format!(
                        "model '{}': {} input signals for m = {}",
                        e.name,
                        inputs.len(),
                        e.m
                    )));
                }
                for text in inputs {
                    parse_signal(text)?;
                }
            }
        }
        Ok(())
    }

    pub fn build<T: Real>(&self) -> Result<SystemModel<T>> {
        self.validate()?;
        match self {
            ModelSpec::Builtin(BuiltinSpec::RlNetwork { n }) => rl_network(*n),
            ModelSpec::Builtin(BuiltinSpec::Lti { a, b, c }) => {
                let n = a.len();
                check_shape(a, n, n, "A")?;
                let m = b.first().map_or(0, Vec::len);
                check_shape(b, n, m, "B")?;
                check_shape(c, c.len(), n, "C")?;
                lti(to_matrix(a, n, n), to_matrix(b, n, m), to_matrix(c, c.len(), n))
            }
            ModelSpec::Builtin(BuiltinSpec::GradientFamily {
                s_diag,
                quadratic,
                quartic,
                c,
            }) => {
                let n = s_diag.len();
                check_shape(quadratic, n, n, "quadratic")?;
                gradient_family(
                    to_vector(s_diag),
                    QuarticPotential {
                        quadratic: to_matrix(quadratic, n, n),
                        quartic: to_vector(quartic),
                    },
                    to_vector(c),
                )
            }
            ModelSpec::Expression(e) => Ok(expression_system(
                &e.name,
                &e.f,
                &e.h,
                to_matrix(&e.b, e.n, e.m),
            )?),
        }
    }

    /// Default input signal strings declared by an expression model.
    pub fn default_inputs(&self) -> Option<&[String]> {
        match self {
            ModelSpec::Expression(e) => e.inputs.as_deref(),
            _ => None,
        }
    }
}

fn check_shape(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<()> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "matrix {what} must be {nrows}×{ncols}"
        )));
    }
    Ok(())
}

fn to_matrix<T: Real>(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> DMatrix<T> {
    DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j]))
}

fn to_vector<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| T::lit(x)))
}

/// Builds a model from expression strings. Jacobians use central differences.
pub fn expression_system<T: Real>(
    name: &str,
    f: &[String],
    h: &[String],
    b: DMatrix<T>,
) -> Result<SystemModel<T>> {
    let n = b.nrows();
    if f.len() != n {
        return Err(Error::Dimension(format!(
            "{} drift expressions for a state of dimension {n}",
            f.len()
        )));
    }
    let parse_all = |texts: &[String]| -> Result<Arc<Vec<Expr>>> {
        let exprs = texts.iter().map(|t| parse(t)).collect::<Result<Vec<_>, _>>()?;
        if let Some(bad) = exprs.iter().find(|e| e.max_state_index() > n) {
            return Err(Error::Config(format!(
                "expression references x{} but n = {n}",
                bad.max_state_index()
            )));
        }
        Ok(Arc::new(exprs))
    };
    let f_exprs = parse_all(f)?;
    let h_exprs = parse_all(h)?;
    let p = h_exprs.len();
    let eval_all = |exprs: &[Expr], x: &DVector<T>| -> Result<DVector<T>> {
        let values = exprs
            .iter()
            .map(|e| e.eval(x.as_slice(), T::zero()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    };
    SystemModel::new(
        name,
        b,
        p,
        move |x| eval_all(&f_exprs, x),
        move |x| eval_all(&h_exprs, x),
    )
}
