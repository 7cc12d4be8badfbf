//! Fixed-step simulation of the nonlinear system and of its variational
//! (linearized, time-varying) dynamics along a stored base trajectory.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::expr::{parse_signal, Expr};
use crate::scalar::Real;
use crate::system::SystemModel;

/// Any state entry above this magnitude aborts a run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected euler or rk4)"
            ))),
        }
    }
}

/// Uniform grid `t_k = t0 + k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T: Real> {
    t0: T,
    tf: T,
    dt: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, tf: T, dt: T) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite() && dt.is_finite()) {
            return Err(Error::Grid("t0, tf and dt must be finite".into()));
        }
        if !(tf > t0) {
            return Err(Error::Grid(format!("tf ({tf}) must exceed t0 ({t0})")));
        }
        if !(dt > T::zero()) {
            return Err(Error::Grid(format!("dt ({dt}) must be positive")));
        }
        let span = tf - t0;
        let steps = (span / dt).round();
        let tol = span * Self::rel_tol();
        if steps < T::one() || (steps * dt - span).abs() > tol {
            return Err(Error::Grid(format!(
                "dt = {dt} does not divide tf - t0 = {span} (t0 = {t0}, tf = {tf})"
            )));
        }
        let steps = steps.as_f64() as usize;
        Ok(Self { t0, tf, dt, steps })
    }

    fn rel_tol() -> T {
        T::lit(1e-9).max(T::default_epsilon() * T::lit(4.0))
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tf(&self) -> T {
        self.tf
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + T::of_usize(k) * self.dt
    }

    /// Index of the grid point equal to `t` (within rounding).
    pub fn index_of(&self, t: T) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        let tol = (self.tf - self.t0) * Self::rel_tol();
        if k < T::zero() || k > T::of_usize(self.steps) {
            return Err(Error::Grid(format!(
                "t = {t} lies outside [{}, {}]",
                self.t0, self.tf
            )));
        }
        let k = k.as_f64() as usize;
        if (self.time(k) - t).abs() > tol {
            return Err(Error::Grid(format!("t = {t} is not a grid point")));
        }
        Ok(k)
    }

    /// Grid indices of an interval `[t1, t2]`.
    pub fn interval_indices(&self, interval: (T, T)) -> Result<(usize, usize)> {
        let k1 = self.index_of(interval.0)?;
        let k2 = self.index_of(interval.1)?;
        if k2 < k1 {
            return Err(Error::Grid(format!(
                "interval end {} precedes start {}",
                interval.1, interval.0
            )));
        }
        Ok((k1, k2))
    }
}

/// Input signal evaluable at every grid point.
#[derive(Debug, Clone)]
pub enum InputSignal<T: Real> {
    Zero { m: usize },
    /// One expression of `t` per channel.
    Expressions(Vec<Expr>),
    /// Zero-order hold of samples taken at `t0 + k·dt`; row `k` holds `u(t_k)`.
    Sampled { t0: T, dt: T, samples: DMatrix<T> },
}

impl<T: Real> InputSignal<T> {
    /// `zero`, or one expression of `t` per channel separated by `;`.
    pub fn parse(text: &str, m: usize) -> Result<Self> {
        let text = text.trim();
        if text == "zero" || text == "0" {
            return Ok(InputSignal::Zero { m });
        }
        let exprs = text
            .split(';')
            .map(|s| parse_signal(s.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        if exprs.len() != m {
            return Err(Error::Config(format!(
                "input has {} channels, model expects {m}",
                exprs.len()
            )));
        }
        Ok(InputSignal::Expressions(exprs))
    }

    pub fn constant(values: &[f64]) -> Self {
        InputSignal::Expressions(values.iter().map(|&v| constant_expr(v)).collect())
    }

    pub fn m(&self) -> usize {
        match self {
            InputSignal::Zero { m } => *m,
            InputSignal::Expressions(e) => e.len(),
            InputSignal::Sampled { samples, .. } => samples.ncols(),
        }
    }

    pub fn eval(&self, t: T) -> Result<DVector<T>> {
        match self {
            InputSignal::Zero { m } => Ok(DVector::zeros(*m)),
            InputSignal::Expressions(exprs) => {
                let values = exprs
                    .iter()
                    .map(|e| e.eval::<T>(&[], t))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(values))
            }
            InputSignal::Sampled { t0, dt, samples } => {
                let pos = (t - *t0) / *dt + T::lit(1e-9);
                let k = if pos <= T::zero() {
                    0
                } else {
                    (pos.floor().as_f64() as usize).min(samples.nrows().saturating_sub(1))
                };
                Ok(samples.row(k).transpose())
            }
        }
    }

    fn check_grid(&self, grid: &TimeGrid<T>) -> Result<()> {
        if let InputSignal::Sampled { t0, dt, samples } = self {
            let tol = grid.dt() * T::lit(1e-9);
            if (*t0 - grid.t0()).abs() > tol || (*dt - grid.dt()).abs() > tol {
                return Err(Error::Config(
                    "sampled input must share the simulation grid".into(),
                ));
            }
            if samples.nrows() < grid.len() {
                return Err(Error::Config(format!(
                    "sampled input has {} rows, grid needs {}",
                    samples.nrows(),
                    grid.len()
                )));
            }
        }
        Ok(())
    }
}

fn constant_expr(v: f64) -> Expr {
    if v < 0.0 {
        Expr::Neg(Box::new(Expr::Num(-v)))
    } else {
        Expr::Num(v)
    }
}

/// Extra input held constant over one step, used for finite-width impulses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pulse<T: Real> {
    pub step: usize,
    pub channel: usize,
    pub height: T,
}

/// States, inputs and outputs of the nonlinear system on a grid.
///
/// Sub-trajectories (used for Gramians on subintervals) start at grid index
/// `offset`; everything returned by [`integrate`] has `offset == 0`.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    model_id: String,
    grid: TimeGrid<T>,
    scheme: Scheme,
    input: InputSignal<T>,
    offset: usize,
    states: Vec<DVector<T>>,
    inputs: Vec<DVector<T>>,
    outputs: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Assembles a trajectory from stored samples, checking dimensions and
    /// finiteness. The input signal is reconstructed as a sampled hold.
    pub fn from_samples(
        model_id: impl Into<String>,
        grid: TimeGrid<T>,
        scheme: Scheme,
        states: Vec<DVector<T>>,
        inputs: Vec<DVector<T>>,
        outputs: Vec<DVector<T>>,
    ) -> Result<Self> {
        let len = grid.len();
        if states.len() != len || inputs.len() != len || outputs.len() != len {
            return Err(Error::Dimension(format!(
                "trajectory needs {len} samples per series"
            )));
        }
        for series in [&states, &inputs, &outputs] {
            let width = series[0].len();
            if series.iter().any(|v| v.len() != width) {
                return Err(Error::Dimension("ragged trajectory samples".into()));
            }
            for v in series.iter() {
                crate::system::check_finite("trajectory", v.iter())?;
            }
        }
        let m = inputs[0].len();
        let samples = DMatrix::from_fn(len, m, |k, j| inputs[k][j]);
        Ok(Self {
            model_id: model_id.into(),
            grid,
            scheme,
            input: InputSignal::Sampled {
                t0: grid.t0(),
                dt: grid.dt(),
                samples,
            },
            offset: 0,
            states,
            inputs,
            outputs,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn input(&self) -> &InputSignal<T> {
        &self.input
    }

    /// Grid index of the first stored sample.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Last grid index covered.
    pub fn last_index(&self) -> usize {
        self.offset + self.states.len() - 1
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<T>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[DVector<T>] {
        &self.outputs
    }

    /// State at absolute grid index `k`.
    pub fn state_at(&self, k: usize) -> &DVector<T> {
        &self.states[k - self.offset]
    }

    pub fn output_at(&self, k: usize) -> &DVector<T> {
        &self.outputs[k - self.offset]
    }

    pub fn times(&self) -> Vec<T> {
        (self.offset..=self.last_index())
            .map(|k| self.grid.time(k))
            .collect()
    }

    fn covers(&self, k1: usize, k2: usize) -> Result<()> {
        if k1 < self.offset || k2 > self.last_index() {
            return Err(Error::Grid(format!(
                "indices {k1}..={k2} not covered by trajectory ({}..={})",
                self.offset,
                self.last_index()
            )));
        }
        Ok(())
    }
}

/// Linearized response `δx` with output `δy = ∂h/∂x(X[k]) δx`.
#[derive(Debug, Clone)]
pub struct VariationalTrajectory<T: Real> {
    pub base_id: String,
    /// Grid index of `dx[0]`.
    pub offset: usize,
    pub dx: Vec<DVector<T>>,
    pub dy: Vec<DVector<T>>,
}

/// `Phi[k] ≈ ∂φ_{t_k - t_start}/∂x`, with `Phi[0] = I`.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix<T: Real> {
    pub base_id: String,
    pub offset: usize,
    pub phi: Vec<DMatrix<T>>,
}

fn diverged<T: Real>(grid: &TimeGrid<T>, step: usize) -> Error {
    Error::Divergence {
        step,
        t: grid.time(step).as_f64(),
    }
}

fn check_bounded<'a, T: Real>(
    values: impl IntoIterator<Item = &'a T>,
    grid: &TimeGrid<T>,
    step: usize,
) -> Result<()> {
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    for v in values {
        if !v.is_finite() || v.abs() > limit {
            return Err(diverged(grid, step));
        }
    }
    Ok(())
}

// Non-finite drift values inside a step mean the state has blown up.
fn stage<T: Real>(
    sys: &SystemModel<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    grid: &TimeGrid<T>,
    step: usize,
) -> Result<DVector<T>> {
    sys.vector_field(x, u).map_err(|e| match e {
        Error::NonFinite { .. } => diverged(grid, step),
        other => other,
    })
}

/// Runs the one-step map from grid index `k_start` (state `x_start`) to `k_end`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate_states<T: Real>(
    sys: &SystemModel<T>,
    grid: &TimeGrid<T>,
    k_start: usize,
    k_end: usize,
    x_start: DVector<T>,
    u: &InputSignal<T>,
    scheme: Scheme,
    pulse: Option<Pulse<T>>,
) -> Result<Vec<DVector<T>>> {
    let dt = grid.dt();
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    let input = |t: T, k: usize| -> Result<DVector<T>> {
        let mut v = u.eval(t)?;
        if let Some(p) = pulse.filter(|p| p.step == k) {
            v[p.channel] += p.height;
        }
        Ok(v)
    };

    check_bounded(x_start.iter(), grid, k_start)?;
    let mut states = Vec::with_capacity(k_end - k_start + 1);
    states.push(x_start);
    for k in k_start..k_end {
        let x = states.last().expect("non-empty");
        let t = grid.time(k);
        let next = match scheme {
            Scheme::Euler => {
                let k1 = stage(sys, x, &input(t, k)?, grid, k + 1)?;
                x + k1 * dt
            }
            Scheme::Rk4 => {
                let u_mid = input(t + half * dt, k)?;
                let k1 = stage(sys, x, &input(t, k)?, grid, k + 1)?;
                let k2 = stage(sys, &(x + &k1 * (half * dt)), &u_mid, grid, k + 1)?;
                let k3 = stage(sys, &(x + &k2 * (half * dt)), &u_mid, grid, k + 1)?;
                let u_end = match pulse.filter(|p| p.step == k) {
                    // the pulse is held over the whole step
                    Some(p) => {
                        let mut v = u.eval(t + dt)?;
                        v[p.channel] += p.height;
                        v
                    }
                    None => u.eval(t + dt)?,
                };
                let k4 = stage(sys, &(x + &k3 * dt), &u_end, grid, k + 1)?;
                x + (k1 + (k2 + k3) * two + k4) * (dt * sixth)
            }
        };
        check_bounded(next.iter(), grid, k + 1)?;
        states.push(next);
    }
    Ok(states)
}

/// Simulates `x' = f(x) + B u(t)` from `x0` over `grid`.
pub fn integrate<T: Real>(
    sys: &SystemModel<T>,
    x0: &DVector<T>,
    u: &InputSignal<T>,
    grid: &TimeGrid<T>,
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    integrate_segment(sys, x0.clone(), u, grid, 0, grid.steps(), scheme, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_segment<T: Real>(
    sys: &SystemModel<T>,
    x_start: DVector<T>,
    u: &InputSignal<T>,
    grid: &TimeGrid<T>,
    k_start: usize,
    k_end: usize,
    scheme: Scheme,
    pulse: Option<Pulse<T>>,
) -> Result<Trajectory<T>> {
    if x_start.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model expects {}",
            x_start.len(),
            sys.n()
        )));
    }
    if u.m() != sys.m() {
        return Err(Error::Dimension(format!(
            "input has {} channels, model expects {}",
            u.m(),
            sys.m()
        )));
    }
    u.check_grid(grid)?;
    let states = propagate_states(sys, grid, k_start, k_end, x_start, u, scheme, pulse)?;
    let inputs = (k_start..=k_end)
        .map(|k| u.eval(grid.time(k)))
        .collect::<Result<Vec<_>>>()?;
    let outputs = states
        .iter()
        .map(|x| sys.eval_h(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        model_id: sys.name().to_string(),
        grid: *grid,
        scheme,
        input: u.clone(),
        offset: k_start,
        states,
        inputs,
        outputs,
    })
}

/// Propagates the matrix ODE `M' = A(t) M + F(t)` along `base` from grid
/// index `k1` (where `M = init`) to `k2`, with `A(t_k) = jac(X[k])`.
///
/// RK4 evaluates `A` at the half step on the linear interpolation of
/// neighbouring base states.
pub(crate) fn propagate_linear<T: Real>(
    jac: &dyn Fn(&DVector<T>) -> Result<DMatrix<T>>,
    base: &Trajectory<T>,
    k1: usize,
    k2: usize,
    init: DMatrix<T>,
    forcing: Option<&dyn Fn(usize, T) -> Result<DMatrix<T>>>,
    scheme: Scheme,
) -> Result<Vec<DMatrix<T>>> {
    base.covers(k1, k2)?;
    let grid = base.grid();
    let dt = grid.dt();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let sixth = T::one() / T::lit(6.0);
    // forcing receives the step index so a pulse can be held over one step
    let add_forcing = |mut v: DMatrix<T>, k: usize, t: T| -> Result<DMatrix<T>> {
        if let Some(force) = forcing {
            v += force(k, t)?;
        }
        Ok(v)
    };

    check_bounded(init.iter(), grid, k1)?;
    let mut out = Vec::with_capacity(k2 - k1 + 1);
    out.push(init);
    let mut a_here = jac(base.state_at(k1))?;
    for k in k1..k2 {
        let m = out.last().expect("non-empty");
        let t = grid.time(k);
        let next = match scheme {
            Scheme::Euler => {
                let d1 = add_forcing(&a_here * m, k, t)?;
                let next = m + d1 * dt;
                if k + 1 < k2 {
                    a_here = jac(base.state_at(k + 1))?;
                }
                next
            }
            Scheme::Rk4 => {
                let mid_state = (base.state_at(k) + base.state_at(k + 1)) * half;
                let a_mid = jac(&mid_state)?;
                let a_next = jac(base.state_at(k + 1))?;
                let t_mid = t + half * dt;
                let d1 = add_forcing(&a_here * m, k, t)?;
                let d2 = add_forcing(&a_mid * (m + &d1 * (half * dt)), k, t_mid)?;
                let d3 = add_forcing(&a_mid * (m + &d2 * (half * dt)), k, t_mid)?;
                let d4 = add_forcing(&a_next * (m + &d3 * dt), k, t + dt)?;
                a_here = a_next;
                m + (d1 + (d2 + d3) * two + d4) * (dt * sixth)
            }
        };
        check_bounded(next.iter(), grid, k + 1)?;
        out.push(next);
    }
    Ok(out)
}

/// Linearized response to an initial perturbation `dx0` and input `du`:
/// `δx' = ∂f/∂x(X(t)) δx + B δu(t)`.
pub fn integrate_variational<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    dx0: &DVector<T>,
    du: &InputSignal<T>,
    scheme: Scheme,
) -> Result<VariationalTrajectory<T>> {
    if dx0.len() != sys.n() || du.m() != sys.m() {
        return Err(Error::Dimension(
            "variational initial state or input has the wrong dimension".into(),
        ));
    }
    du.check_grid(base.grid())?;
    let b = sys.b();
    let forcing = |_k: usize, t: T| -> Result<DMatrix<T>> {
        let v = du.eval(t)?;
        Ok(b * DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    };
    let jac = |x: &DVector<T>| sys.jac_f(x);
    let zero_input = matches!(du, InputSignal::Zero { .. });
    let cols = propagate_linear(
        &jac,
        base,
        base.offset(),
        base.last_index(),
        DMatrix::from_column_slice(dx0.len(), 1, dx0.as_slice()),
        if zero_input { None } else { Some(&forcing) },
        scheme,
    )?;
    variational_from_columns(sys, base, base.offset(), cols)
}

pub(crate) fn variational_from_columns<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    k1: usize,
    cols: Vec<DMatrix<T>>,
) -> Result<VariationalTrajectory<T>> {
    let mut dx = Vec::with_capacity(cols.len());
    let mut dy = Vec::with_capacity(cols.len());
    for (j, col) in cols.into_iter().enumerate() {
        let v = col.column(0).into_owned();
        dy.push(sys.jac_h(base.state_at(k1 + j))? * &v);
        dx.push(v);
    }
    Ok(VariationalTrajectory {
        base_id: base.model_id().to_string(),
        offset: k1,
        dx,
        dy,
    })
}

/// Transition matrix of the variational system along `base`:
/// `Φ' = ∂f/∂x(X(t)) Φ`, `Φ(t_start) = I`.
pub fn fundamental_matrix<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    scheme: Scheme,
) -> Result<FundamentalMatrix<T>> {
    let jac = |x: &DVector<T>| sys.jac_f(x);
    let phi = propagate_linear(
        &jac,
        base,
        base.offset(),
        base.last_index(),
        DMatrix::identity(sys.n(), sys.n()),
        None,
        scheme,
    )?;
    Ok(FundamentalMatrix {
        base_id: base.model_id().to_string(),
        offset: base.offset(),
        phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin::{lti, rl_network};
    use proptest::prelude::*;

    fn decay() -> SystemModel<f64> {
        lti(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn sine_input() -> InputSignal<f64> {
        InputSignal::parse("sin(t)+sin(3*t)", 1).unwrap()
    }

    #[test]
    fn grid_rejects_non_dividing_step() {
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 1.0, -0.1).is_err());
        let grid = TimeGrid::new(0.0, 100.0, 0.01).unwrap();
        assert_eq!(grid.steps(), 10_000);
        assert_eq!(grid.index_of(20.0).unwrap(), 2000);
        assert!(grid.index_of(20.005).is_err());
        assert!(grid.index_of(100.5).is_err());
    }

    #[test]
    fn euler_single_step() {
        let grid = TimeGrid::new(0.0, 0.1, 0.1).unwrap();
        let traj = integrate(
            &decay(),
            &DVector::from_element(1, 1.0),
            &InputSignal::Zero { m: 1 },
            &grid,
            Scheme::Euler,
        )
        .unwrap();
        assert!((traj.states()[1][0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rk4_single_step_matches_quartic_taylor() {
        let grid = TimeGrid::new(0.0, 0.1, 0.1).unwrap();
        let traj = integrate(
            &decay(),
            &DVector::from_element(1, 1.0),
            &InputSignal::Zero { m: 1 },
            &grid,
            Scheme::Rk4,
        )
        .unwrap();
        let h = 0.1f64;
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((taylor - 0.9048375).abs() < 1e-12);
        assert!((traj.states()[1][0] - taylor).abs() < 1e-15);
    }

    #[test]
    fn outputs_and_inputs_are_sampled_on_the_grid() {
        let sys = rl_network::<f64>(4).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.05).unwrap();
        let traj = integrate(&sys, &DVector::zeros(4), &sine_input(), &grid, Scheme::Rk4).unwrap();
        assert_eq!(traj.states().len(), grid.len());
        assert_eq!(traj.states()[0], DVector::zeros(4));
        for k in 0..grid.len() {
            assert_eq!(traj.outputs()[k][0], traj.states()[k][0]);
            let t = grid.time(k);
            assert_eq!(traj.inputs()[k][0], t.sin() + (3.0 * t).sin());
        }
    }

    #[test]
    fn blow_up_is_reported_as_divergence() {
        let sys = SystemModel::<f64>::new(
            "riccati",
            DMatrix::zeros(1, 1),
            1,
            |x| Ok(x.map(|v| v * v)),
            |x| Ok(x.clone()),
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 0.01).unwrap();
        let err = integrate(
            &sys,
            &DVector::from_element(1, 1.0),
            &InputSignal::Zero { m: 1 },
            &grid,
            Scheme::Rk4,
        )
        .unwrap_err();
        match err {
            Error::Divergence { step, t } => {
                assert!(step > 90 && step < 200, "step {step}");
                assert!(t > 0.9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_variation_stays_zero() {
        let sys = rl_network::<f64>(5).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 0.01).unwrap();
        let base = integrate(&sys, &DVector::zeros(5), &sine_input(), &grid, Scheme::Rk4).unwrap();
        let var = integrate_variational(
            &sys,
            &base,
            &DVector::zeros(5),
            &InputSignal::Zero { m: 1 },
            Scheme::Rk4,
        )
        .unwrap();
        assert!(var.dx.iter().all(|v| v.amax() == 0.0));
        assert!(var.dy.iter().all(|v| v.amax() == 0.0));
    }

    fn stable_lti() -> (DMatrix<f64>, SystemModel<f64>) {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, -0.3, -0.8, 0.2, 0.1, 0.0, -1.5]);
        let sys = lti(
            a.clone(),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]),
        )
        .unwrap();
        (a, sys)
    }

    #[test]
    fn lti_variation_is_matrix_exponential() {
        let (a, sys) = stable_lti();
        let grid = TimeGrid::new(0.0, 3.0, 0.01).unwrap();
        let base = integrate(&sys, &DVector::zeros(3), &sine_input_m(1), &grid, Scheme::Rk4).unwrap();
        let v = DVector::from_vec(vec![0.2, -1.0, 0.5]);
        let var =
            integrate_variational(&sys, &base, &v, &InputSignal::Zero { m: 1 }, Scheme::Rk4).unwrap();
        for k in [0, 50, 150, 300] {
            let expect = (&a * grid.time(k)).exp() * &v;
            assert!((&var.dx[k] - expect).amax() < 1e-9);
        }
    }

    fn sine_input_m(m: usize) -> InputSignal<f64> {
        InputSignal::parse(&vec!["sin(t)"; m].join(";"), m).unwrap()
    }

    #[test]
    fn fundamental_matrix_starts_at_identity_and_matches_expm() {
        let (a, sys) = stable_lti();
        let grid = TimeGrid::new(0.0, 2.0, 0.01).unwrap();
        let base = integrate(&sys, &DVector::zeros(3), &sine_input_m(1), &grid, Scheme::Rk4).unwrap();
        let fm = fundamental_matrix(&sys, &base, Scheme::Rk4).unwrap();
        assert_eq!(fm.phi[0], DMatrix::identity(3, 3));
        for k in [10, 100, 200] {
            let expect = (&a * grid.time(k)).exp();
            assert!((&fm.phi[k] - expect).amax() < 1e-9);
        }
    }

    #[test]
    fn fundamental_columns_equal_single_variations() {
        let sys = rl_network::<f64>(6).unwrap();
        let grid = TimeGrid::new(0.0, 3.0, 0.01).unwrap();
        let base = integrate(&sys, &DVector::zeros(6), &sine_input(), &grid, Scheme::Rk4).unwrap();
        let fm = fundamental_matrix(&sys, &base, Scheme::Rk4).unwrap();
        for j in 0..6 {
            let mut e = DVector::zeros(6);
            e[j] = 1.0;
            let var =
                integrate_variational(&sys, &base, &e, &InputSignal::Zero { m: 1 }, Scheme::Rk4)
                    .unwrap();
            for (k, phi) in fm.phi.iter().enumerate() {
                assert!((phi.column(j) - &var.dx[k]).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn variation_matches_flow_difference() {
        let n = 10;
        let sys = rl_network::<f64>(n).unwrap();
        let grid = TimeGrid::new(0.0, 5.0, 0.01).unwrap();
        let x0 = DVector::zeros(n);
        let base = integrate(&sys, &x0, &sine_input(), &grid, Scheme::Rk4).unwrap();
        let mut e1 = DVector::zeros(n);
        e1[0] = 1.0;
        let var =
            integrate_variational(&sys, &base, &e1, &InputSignal::Zero { m: 1 }, Scheme::Rk4).unwrap();
        let eps = 1e-5;
        let pert = integrate(&sys, &(&x0 + &e1 * eps), &sine_input(), &grid, Scheme::Rk4).unwrap();
        let err = (0..grid.len())
            .map(|k| ((&pert.states()[k] - &base.states()[k]) / eps - &var.dx[k]).amax())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "err {err}");
    }

    fn final_error(scheme: Scheme, dt: f64) -> f64 {
        let sys = rl_network::<f64>(4).unwrap();
        let x0 = DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]);
        let reference = {
            let grid = TimeGrid::new(0.0, 2.0, 1e-4).unwrap();
            integrate(&sys, &x0, &sine_input(), &grid, Scheme::Rk4)
                .unwrap()
                .states()
                .last()
                .unwrap()
                .clone()
        };
        let grid = TimeGrid::new(0.0, 2.0, dt).unwrap();
        let traj = integrate(&sys, &x0, &sine_input(), &grid, scheme).unwrap();
        (traj.states().last().unwrap() - reference).amax()
    }

    #[test]
    fn scheme_orders() {
        let euler = final_error(Scheme::Euler, 0.01) / final_error(Scheme::Euler, 0.005);
        assert!((1.7..=2.3).contains(&euler), "euler ratio {euler}");
        let rk4 = final_error(Scheme::Rk4, 0.1) / final_error(Scheme::Rk4, 0.05);
        assert!((12.0..=20.0).contains(&rk4), "rk4 ratio {rk4}");
    }

    #[test]
    fn sampled_input_holds_between_points() {
        let samples = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let u = InputSignal::Sampled {
            t0: 0.0,
            dt: 0.5,
            samples,
        };
        assert_eq!(u.eval(0.0).unwrap()[0], 1.0);
        assert_eq!(u.eval(0.49).unwrap()[0], 1.0);
        assert_eq!(u.eval(0.5).unwrap()[0], 2.0);
        assert_eq!(u.eval(5.0).unwrap()[0], 3.0);
    }

    #[test]
    fn input_parse_checks_channel_count() {
        assert!(InputSignal::<f64>::parse("sin(t); cos(t)", 1).is_err());
        assert_eq!(InputSignal::<f64>::parse("sin(t); cos(t)", 2).unwrap().m(), 2);
        assert!(InputSignal::<f64>::parse("x1", 1).is_err());
        let c = InputSignal::<f64>::constant(&[-2.0, 1.5]);
        assert_eq!(c.eval(3.0).unwrap(), DVector::from_vec(vec![-2.0, 1.5]));
    }

    #[test]
    fn single_precision_simulation() {
        let sys = rl_network::<f32>(5).unwrap();
        let grid = TimeGrid::new(0.0f32, 10.0, 0.01).unwrap();
        let u = InputSignal::parse("sin(t)+sin(3*t)", 1).unwrap();
        let traj = integrate(&sys, &DVector::zeros(5), &u, &grid, Scheme::Rk4).unwrap();
        let reference = integrate(
            &rl_network::<f64>(5).unwrap(),
            &DVector::zeros(5),
            &sine_input(),
            &TimeGrid::new(0.0, 10.0, 0.01).unwrap(),
            Scheme::Rk4,
        )
        .unwrap();
        let gap = (traj.states().last().unwrap()[0] as f64 - reference.states().last().unwrap()[0]).abs();
        assert!(gap < 1e-4, "gap {gap}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn variational_propagation_is_linear(
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
            v in proptest::collection::vec(-1.0f64..1.0, 4),
            w in proptest::collection::vec(-1.0f64..1.0, 4),
            scheme in prop_oneof![Just(Scheme::Euler), Just(Scheme::Rk4)],
        ) {
            let sys = rl_network::<f64>(4).unwrap();
            let grid = TimeGrid::new(0.0, 1.0, 0.02).unwrap();
            let base = integrate(&sys, &DVector::zeros(4), &sine_input(), &grid, scheme).unwrap();
            let v = DVector::from_vec(v);
            let w = DVector::from_vec(w);
            let du = InputSignal::parse("cos(2*t)", 1).unwrap();
            let du2 = InputSignal::parse("t^2 - 1", 1).unwrap();
            let combo = InputSignal::parse(
                &format!("({alpha:?})*cos(2*t) + ({beta:?})*(t^2 - 1)"), 1).unwrap();
            let r1 = integrate_variational(&sys, &base, &v, &du, scheme).unwrap();
            let r2 = integrate_variational(&sys, &base, &w, &du2, scheme).unwrap();
            let rc = integrate_variational(&sys, &base, &(&v * alpha + &w * beta), &combo, scheme).unwrap();
            for k in 0..grid.len() {
                let lin = &r1.dx[k] * alpha + &r2.dx[k] * beta;
                prop_assert!((&rc.dx[k] - lin).amax() < 1e-12);
            }
        }
    }
}
