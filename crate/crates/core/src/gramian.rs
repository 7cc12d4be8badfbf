//! Differential reachability and observability Gramians along a fixed
//! trajectory of `x' = f(x) + B u`, `y = h(x)`:
//!
//! ```text
//! W_R = ∫ Φ(t,t1) B Bᵀ Φ(t,t1)ᵀ dt           (impulse responses Φ B_i)
//! W_O = ∫ Φ(t,t1)ᵀ Hᵀ(t) H(t) Φ(t,t1) dt     (initial-state output responses)
//! ```
//!
//! where `Φ` is the transition matrix of the variational system and
//! `H(t) = ∂h/∂x` along the trajectory. Two routes are provided: exact
//! propagation of the variational system, and finite-difference quotients of
//! perturbed nonlinear simulations (n + m + 1 runs for both Gramians).
//!
//! An impulse through the constant `B` is realized as a jump of the initial
//! state (`δx(t1⁺) = B_i`, or `x0 + s·B_i` for the trajectory-only route);
//! a finite pulse of height `1/dt` over one step is available for comparison.
//! Integrals use the composite trapezoid rule on the simulation grid.

use std::borrow::Cow;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, sym_eigenvalues_desc};
use crate::scalar::Real;
use crate::sim::{
    integrate, integrate_segment, propagate_linear, variational_from_columns, InputSignal, Pulse,
    Scheme, TimeGrid, Trajectory, VariationalTrajectory,
};
use crate::system::SystemModel;

/// Default finite-difference perturbation size.
pub const DEFAULT_PERTURBATION: f64 = 0.01;
/// Default relative eigenvalue threshold for positive-definiteness verdicts.
pub const DEFAULT_PD_THRESHOLD: f64 = 1e-9;
/// Allowed negative eigenvalue relative to the largest one.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianKind {
    Reachability,
    Observability,
    DualReachability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianMethod {
    ExactVariational,
    FrechetApprox,
    LtiAnalytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpulseRealization {
    /// Exact: the impulse becomes an initial-state jump through `B`.
    #[default]
    StateJump,
    /// Diagnostic: a pulse of height `1/dt` held for one step.
    FinitePulse,
}

#[derive(Debug, Clone, Copy)]
pub struct GramianOptions<T: Real> {
    /// Perturbation size of the trajectory-only route.
    pub s: T,
    pub impulse: ImpulseRealization,
    /// Run independent simulations on the rayon pool. Results are identical
    /// either way: responses are collected in order and summed sequentially.
    pub parallel: bool,
}

impl<T: Real> Default for GramianOptions<T> {
    fn default() -> Self {
        Self {
            s: T::lit(DEFAULT_PERTURBATION),
            impulse: ImpulseRealization::StateJump,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gramian<T: Real> {
    pub w: DMatrix<T>,
    pub kind: GramianKind,
    pub interval: (T, T),
    pub method: GramianMethod,
    pub base_id: String,
    pub quadrature: Quadrature,
}

impl<T: Real> Gramian<T> {
    /// Symmetrizes `w` and checks it is positive semidefinite up to
    /// `PSD_TOLERANCE · λ_max`.
    pub fn assemble(
        w: DMatrix<T>,
        kind: GramianKind,
        interval: (T, T),
        method: GramianMethod,
        base_id: impl Into<String>,
    ) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension("gramian must be square".into()));
        }
        crate::system::check_finite("gramian", w.iter())?;
        let w = (&w + w.transpose()) * T::lit(0.5);
        let eig = sym_eigenvalues_desc(&w);
        if let (Some(&max), Some(&min)) = (eig.iter().next(), eig.iter().last()) {
            if min < -T::lit(PSD_TOLERANCE) * max.max(T::zero()) {
                return Err(Error::NotPsd {
                    lambda_min: min.as_f64(),
                    lambda_max: max.as_f64(),
                });
            }
        }
        Ok(Self {
            w,
            kind,
            interval,
            method,
            base_id: base_id.into(),
            quadrature: Quadrature::Trapezoid,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> DVector<T> {
        sym_eigenvalues_desc(&self.w)
    }
}

/// Trapezoid sum `dt · Σ_j c_j F_j F_jᵀ` with end weights `1/2`.
pub(crate) fn trapezoid_outer<T: Real>(n: usize, factors: &[DMatrix<T>], dt: T) -> DMatrix<T> {
    let mut w = DMatrix::zeros(n, n);
    if factors.len() < 2 {
        return w;
    }
    let last = factors.len() - 1;
    let half = T::lit(0.5);
    for (j, f) in factors.iter().enumerate() {
        let weight = if j == 0 || j == last { half * dt } else { dt };
        w.gemm(weight, f, &f.transpose(), T::one());
    }
    w
}

fn map_maybe_parallel<T, R, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn interval_of<T: Real>(base: &Trajectory<T>, interval: (T, T)) -> Result<(usize, usize)> {
    let (k1, k2) = base.grid().interval_indices(interval)?;
    if k1 < base.offset() || k2 > base.last_index() {
        return Err(Error::Grid(format!(
            "interval [{}, {}] is not covered by the base trajectory",
            interval.0, interval.1
        )));
    }
    Ok((k1, k2))
}

/// Impulse responses `Φ(t_k, t1) B` (n×m per grid point).
fn exact_impulse_factors<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    k1: usize,
    k2: usize,
    impulse: ImpulseRealization,
) -> Result<Vec<DMatrix<T>>> {
    let jac = |x: &DVector<T>| sys.jac_f(x);
    match impulse {
        ImpulseRealization::StateJump => {
            propagate_linear(&jac, base, k1, k2, sys.b().clone(), None, base.scheme())
        }
        ImpulseRealization::FinitePulse => {
            let scaled = sys.b() / base.grid().dt();
            let zero = DMatrix::zeros(sys.n(), sys.m());
            let pulse = |k: usize, _t: T| -> Result<DMatrix<T>> {
                Ok(if k == k1 { scaled.clone() } else { zero.clone() })
            };
            propagate_linear(&jac, base, k1, k2, zero.clone(), Some(&pulse), base.scheme())
        }
    }
}

fn transition_matrices<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    k1: usize,
    k2: usize,
) -> Result<Vec<DMatrix<T>>> {
    let jac = |x: &DVector<T>| sys.jac_f(x);
    propagate_linear(
        &jac,
        base,
        k1,
        k2,
        DMatrix::identity(sys.n(), sys.n()),
        None,
        base.scheme(),
    )
}

/// `(H Φ)ᵀ` per grid point (n×p), the transposed initial-state output responses.
fn observability_factors<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    k1: usize,
    phi: &[DMatrix<T>],
) -> Result<Vec<DMatrix<T>>> {
    phi.iter()
        .enumerate()
        .map(|(j, phi)| Ok((sys.jac_h(base.state_at(k1 + j))? * phi).transpose()))
        .collect()
}

fn check_method(method: GramianMethod) -> Result<()> {
    if method == GramianMethod::LtiAnalytic {
        return Err(Error::Config(
            "lti_analytic Gramians come from lti_gramian_oracle, not from a trajectory".into(),
        ));
    }
    Ok(())
}

/// Differential reachability Gramian of `base` over `interval`.
pub fn reachability_gramian<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    interval: (T, T),
    method: GramianMethod,
    opts: &GramianOptions<T>,
) -> Result<Gramian<T>> {
    check_method(method)?;
    let (k1, k2) = interval_of(base, interval)?;
    match method {
        GramianMethod::FrechetApprox => {
            FrechetProbe::with_base(sys, base, interval, opts)?.reachability_gramian()
        }
        _ => {
            let factors = exact_impulse_factors(sys, base, k1, k2, opts.impulse)?;
            let w = trapezoid_outer(sys.n(), &factors, base.grid().dt());
            Gramian::assemble(w, GramianKind::Reachability, interval, method, base.model_id())
        }
    }
}

/// Differential observability Gramian of `base` over `interval`.
pub fn observability_gramian<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    interval: (T, T),
    method: GramianMethod,
    opts: &GramianOptions<T>,
) -> Result<Gramian<T>> {
    check_method(method)?;
    let (k1, k2) = interval_of(base, interval)?;
    match method {
        GramianMethod::FrechetApprox => {
            FrechetProbe::with_base(sys, base, interval, opts)?.observability_gramian()
        }
        _ => {
            let phi = transition_matrices(sys, base, k1, k2)?;
            let factors = observability_factors(sys, base, k1, &phi)?;
            let w = trapezoid_outer(sys.n(), &factors, base.grid().dt());
            Gramian::assemble(w, GramianKind::Observability, interval, method, base.model_id())
        }
    }
}

#[derive(Debug, Clone)]
pub struct GramianPair<T: Real> {
    pub reachability: Gramian<T>,
    pub observability: Gramian<T>,
    /// Nonlinear simulations used, counting the base trajectory itself.
    pub simulations: usize,
}

/// Both Gramians. The exact route propagates `Φ` once and reads the impulse
/// responses off it; the trajectory-only route needs `n + m + 1` simulations.
pub fn gramian_pair<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    interval: (T, T),
    method: GramianMethod,
    opts: &GramianOptions<T>,
) -> Result<GramianPair<T>> {
    check_method(method)?;
    let (k1, k2) = interval_of(base, interval)?;
    if method == GramianMethod::FrechetApprox {
        let probe = FrechetProbe::with_base(sys, base, interval, opts)?;
        let reachability = probe.reachability_gramian()?;
        let observability = probe.observability_gramian()?;
        return Ok(GramianPair {
            reachability,
            observability,
            simulations: probe.simulations(),
        });
    }
    let phi = transition_matrices(sys, base, k1, k2)?;
    let dt = base.grid().dt();
    let reach_factors = match opts.impulse {
        ImpulseRealization::StateJump => phi.iter().map(|p| p * sys.b()).collect::<Vec<_>>(),
        ImpulseRealization::FinitePulse => {
            exact_impulse_factors(sys, base, k1, k2, opts.impulse)?
        }
    };
    let obs_factors = observability_factors(sys, base, k1, &phi)?;
    Ok(GramianPair {
        reachability: Gramian::assemble(
            trapezoid_outer(sys.n(), &reach_factors, dt),
            GramianKind::Reachability,
            interval,
            method,
            base.model_id(),
        )?,
        observability: Gramian::assemble(
            trapezoid_outer(sys.n(), &obs_factors, dt),
            GramianKind::Observability,
            interval,
            method,
            base.model_id(),
        )?,
        simulations: 1,
    })
}

/// Output deviation samples `(h(x²(t)) − h(x¹(t)))/s`.
#[derive(Debug, Clone)]
pub struct OutputDeviation<T: Real> {
    pub offset: usize,
    pub dy: Vec<DVector<T>>,
}

/// Trajectory-only approximation of variational responses.
///
/// Holds the reference run `x¹` and counts every nonlinear simulation,
/// including `x¹`.
pub struct FrechetProbe<'a, T: Real> {
    sys: &'a SystemModel<T>,
    base: Cow<'a, Trajectory<T>>,
    k1: usize,
    k2: usize,
    s: T,
    impulse: ImpulseRealization,
    parallel: bool,
    simulations: AtomicUsize,
}

impl<'a, T: Real> FrechetProbe<'a, T> {
    /// Simulates the reference trajectory `x¹` from `x0` under `u` itself.
    pub fn run(
        sys: &'a SystemModel<T>,
        x0: &DVector<T>,
        u: &InputSignal<T>,
        grid: &TimeGrid<T>,
        scheme: Scheme,
        opts: &GramianOptions<T>,
    ) -> Result<Self> {
        check_perturbation(opts.s)?;
        let base = integrate(sys, x0, u, grid, scheme)?;
        Ok(Self {
            sys,
            k1: 0,
            k2: grid.steps(),
            base: Cow::Owned(base),
            s: opts.s,
            impulse: opts.impulse,
            parallel: opts.parallel,
            simulations: AtomicUsize::new(1),
        })
    }

    /// Uses an existing run as `x¹`; it counts as one simulation.
    pub fn with_base(
        sys: &'a SystemModel<T>,
        base: &'a Trajectory<T>,
        interval: (T, T),
        opts: &GramianOptions<T>,
    ) -> Result<Self> {
        check_perturbation(opts.s)?;
        let (k1, k2) = interval_of(base, interval)?;
        Ok(Self {
            sys,
            base: Cow::Borrowed(base),
            k1,
            k2,
            s: opts.s,
            impulse: opts.impulse,
            parallel: opts.parallel,
            simulations: AtomicUsize::new(1),
        })
    }

    pub fn simulations(&self) -> usize {
        self.simulations.load(Ordering::SeqCst)
    }

    pub fn base(&self) -> &Trajectory<T> {
        &self.base
    }

    pub fn interval(&self) -> (T, T) {
        let grid = self.base.grid();
        (grid.time(self.k1), grid.time(self.k2))
    }

    fn perturbed(&self, x_start: DVector<T>, pulse: Option<Pulse<T>>) -> Result<Trajectory<T>> {
        self.simulations.fetch_add(1, Ordering::SeqCst);
        integrate_segment(
            self.sys,
            x_start,
            self.base.input(),
            self.base.grid(),
            self.k1,
            self.k2,
            self.base.scheme(),
            pulse,
        )
    }

    /// Approximate impulse response for input channel `i` (0-based):
    /// `(x²(t) − x¹(t))/s` with `x²(t1) = x¹(t1) + s·B_i`.
    pub fn impulse_response(&self, i: usize) -> Result<VariationalTrajectory<T>> {
        if i >= self.sys.m() {
            return Err(Error::Config(format!(
                "input channel {i} out of range (m = {})",
                self.sys.m()
            )));
        }
        let x1 = self.base.state_at(self.k1).clone();
        let x2 = match self.impulse {
            ImpulseRealization::StateJump => {
                let start = &x1 + self.sys.b().column(i) * self.s;
                self.perturbed(start, None)?
            }
            ImpulseRealization::FinitePulse => {
                let pulse = Pulse {
                    step: self.k1,
                    channel: i,
                    height: self.s / self.base.grid().dt(),
                };
                self.perturbed(x1, Some(pulse))?
            }
        };
        Ok(self.quotient(&x2))
    }

    /// Approximate output response to the initial perturbation `e_i` (0-based).
    pub fn initial_state_response(&self, i: usize) -> Result<OutputDeviation<T>> {
        if i >= self.sys.n() {
            return Err(Error::Config(format!(
                "state index {i} out of range (n = {})",
                self.sys.n()
            )));
        }
        let mut start = self.base.state_at(self.k1).clone();
        start[i] += self.s;
        let x2 = self.perturbed(start, None)?;
        let q = self.quotient(&x2);
        Ok(OutputDeviation {
            offset: q.offset,
            dy: q.dy,
        })
    }

    fn quotient(&self, x2: &Trajectory<T>) -> VariationalTrajectory<T> {
        let inv = T::one() / self.s;
        let (dx, dy) = (self.k1..=self.k2)
            .map(|k| {
                (
                    (x2.state_at(k) - self.base.state_at(k)) * inv,
                    (x2.output_at(k) - self.base.output_at(k)) * inv,
                )
            })
            .unzip();
        VariationalTrajectory {
            base_id: self.base.model_id().to_string(),
            offset: self.k1,
            dx,
            dy,
        }
    }

    pub fn reachability_gramian(&self) -> Result<Gramian<T>> {
        let n = self.sys.n();
        let responses = map_maybe_parallel(
            (0..self.sys.m()).collect(),
            self.parallel,
            |i| self.impulse_response(i),
        )
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let factors: Vec<DMatrix<T>> = (0..=self.k2 - self.k1)
            .map(|j| DMatrix::from_fn(n, responses.len(), |r, c| responses[c].dx[j][r]))
            .collect();
        Gramian::assemble(
            trapezoid_outer(n, &factors, self.base.grid().dt()),
            GramianKind::Reachability,
            self.interval(),
            GramianMethod::FrechetApprox,
            self.base.model_id(),
        )
    }

    pub fn observability_gramian(&self) -> Result<Gramian<T>> {
        let n = self.sys.n();
        let responses = map_maybe_parallel((0..n).collect(), self.parallel, |i| {
            self.initial_state_response(i)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        // row i of each factor is δy_{Is,i}(t_k)ᵀ
        let factors: Vec<DMatrix<T>> = (0..=self.k2 - self.k1)
            .map(|j| DMatrix::from_fn(n, self.sys.p(), |r, c| responses[r].dy[j][c]))
            .collect();
        Gramian::assemble(
            trapezoid_outer(n, &factors, self.base.grid().dt()),
            GramianKind::Observability,
            self.interval(),
            GramianMethod::FrechetApprox,
            self.base.model_id(),
        )
    }
}

fn check_perturbation<T: Real>(s: T) -> Result<()> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::Config(format!("perturbation s must be positive, got {s}")));
    }
    Ok(())
}

/// Approximate impulse response of input channel `i` (0-based) along the run
/// from `x0` under `u`. Costs two simulations.
pub fn frechet_impulse_response<T: Real>(
    sys: &SystemModel<T>,
    x0: &DVector<T>,
    u: &InputSignal<T>,
    grid: &TimeGrid<T>,
    scheme: Scheme,
    i: usize,
    s: T,
) -> Result<VariationalTrajectory<T>> {
    let opts = GramianOptions {
        s,
        ..Default::default()
    };
    FrechetProbe::run(sys, x0, u, grid, scheme, &opts)?.impulse_response(i)
}

/// Approximate output response to the initial perturbation `e_i` (0-based).
pub fn frechet_initial_state_response<T: Real>(
    sys: &SystemModel<T>,
    x0: &DVector<T>,
    u: &InputSignal<T>,
    grid: &TimeGrid<T>,
    scheme: Scheme,
    i: usize,
    s: T,
) -> Result<OutputDeviation<T>> {
    let opts = GramianOptions {
        s,
        ..Default::default()
    };
    FrechetProbe::run(sys, x0, u, grid, scheme, &opts)?.initial_state_response(i)
}

/// Finite-horizon Gramians of `(A, B, C)` over an interval of the given
/// length, by RK4 on the coupled system
/// `Φ' = AΦ, W_c' = Φ B Bᵀ Φᵀ, W_o' = Φᵀ Cᵀ C Φ` with a fine internal step.
pub fn lti_gramian_oracle<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    interval: (T, T),
) -> Result<(Gramian<T>, Gramian<T>)> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension("lti_gramian_oracle: inconsistent A, B, C".into()));
    }
    let span = interval.1 - interval.0;
    if span < T::zero() {
        return Err(Error::Grid("interval end precedes start".into()));
    }
    let bb = b * b.transpose();
    let cc = c.transpose() * c;
    let mut wc = DMatrix::zeros(n, n);
    let mut wo = DMatrix::zeros(n, n);
    if span > T::zero() {
        let norm = a.norm().max(T::one());
        let steps = ((span * norm / T::lit(2e-3)).ceil().as_f64() as usize).max(1000);
        let h = span / T::of_usize(steps);
        let half = T::lit(0.5);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        let integrands = |phi: &DMatrix<T>| (phi * &bb * phi.transpose(), phi.transpose() * &cc * phi);
        let mut phi = DMatrix::identity(n, n);
        for _ in 0..steps {
            let p1 = a * &phi;
            let (c1, o1) = integrands(&phi);
            let phi2 = &phi + &p1 * (half * h);
            let p2 = a * &phi2;
            let (c2, o2) = integrands(&phi2);
            let phi3 = &phi + &p2 * (half * h);
            let p3 = a * &phi3;
            let (c3, o3) = integrands(&phi3);
            let phi4 = &phi + &p3 * h;
            let p4 = a * &phi4;
            let (c4, o4) = integrands(&phi4);
            wc += (c1 + (c2 + c3) * two + c4) * sixth;
            wo += (o1 + (o2 + o3) * two + o4) * sixth;
            phi += (p1 + (p2 + p3) * two + p4) * sixth;
        }
    }
    Ok((
        Gramian::assemble(
            wc,
            GramianKind::Reachability,
            interval,
            GramianMethod::LtiAnalytic,
            "lti_oracle",
        )?,
        Gramian::assemble(
            wo,
            GramianKind::Observability,
            interval,
            GramianMethod::LtiAnalytic,
            "lti_oracle",
        )?,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct PdEntry {
    pub t1: f64,
    pub t2: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdReport {
    pub kind: GramianKind,
    pub threshold: f64,
    pub entries: Vec<PdEntry>,
    /// True iff every probed subinterval is positive definite.
    pub verdict: bool,
}

/// Exact-route Gramian with no validity check, for probing.
fn raw_gramian<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    kind: GramianKind,
    k1: usize,
    k2: usize,
) -> Result<DMatrix<T>> {
    let dt = base.grid().dt();
    let factors = match kind {
        GramianKind::Reachability => {
            exact_impulse_factors(sys, base, k1, k2, ImpulseRealization::StateJump)?
        }
        GramianKind::Observability => {
            let phi = transition_matrices(sys, base, k1, k2)?;
            observability_factors(sys, base, k1, &phi)?
        }
        GramianKind::DualReachability => {
            return Err(Error::Config(
                "probes support reachability and observability only".into(),
            ))
        }
    };
    let w = trapezoid_outer(sys.n(), &factors, dt);
    Ok((&w + w.transpose()) * T::lit(0.5))
}

/// Positive-definiteness probe on a dyadic sweep: level `j` splits the base
/// interval into `2^j` equal pieces, for `j = 0..=⌈log2 count⌉`.
pub fn pd_probe<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    kind: GramianKind,
    subinterval_count: usize,
    threshold: T,
) -> Result<PdReport> {
    if subinterval_count == 0 {
        return Err(Error::Config("subinterval_count must be at least 1".into()));
    }
    let levels = subinterval_count.next_power_of_two().trailing_zeros() as usize;
    let (start, end) = (base.offset(), base.last_index());
    let span = end - start;
    let mut pieces = Vec::new();
    for level in 0..=levels {
        let parts = 1usize << level;
        for j in 0..parts {
            let a = start + (span * j + parts / 2) / parts;
            let b = start + (span * (j + 1) + parts / 2) / parts;
            if b > a && !pieces.contains(&(a, b)) {
                pieces.push((a, b));
            }
        }
    }
    let grid = base.grid();
    let entries = pieces
        .into_par_iter()
        .map(|(a, b)| {
            let w = raw_gramian(sys, base, kind, a, b)?;
            let eig = sym_eigenvalues_desc(&w);
            let lambda_max = eig[0];
            let lambda_min = eig[eig.len() - 1];
            Ok(PdEntry {
                t1: grid.time(a).as_f64(),
                t2: grid.time(b).as_f64(),
                lambda_min: lambda_min.as_f64(),
                lambda_max: lambda_max.as_f64(),
                positive: lambda_max > T::zero() && lambda_min > threshold * lambda_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PdReport {
        kind,
        threshold: threshold.as_f64(),
        verdict: entries.iter().all(|e| e.positive),
        entries,
    })
}

#[derive(Debug, Clone)]
pub struct NullspaceReport<T: Real> {
    /// Orthonormal columns spanning the shared near-null space.
    pub basis: DMatrix<T>,
    /// Eigenvalues of the summed Gramian, descending.
    pub eigenvalues: DVector<T>,
}

/// Directions annihilated by the Gramians of every probing input: the
/// eigenvectors of `Σ_i W_i` with eigenvalue `≤ threshold · λ_max`.
#[allow(clippy::too_many_arguments)]
pub fn common_nullspace_probe<T: Real>(
    sys: &SystemModel<T>,
    x0: &DVector<T>,
    inputs: &[InputSignal<T>],
    grid: &TimeGrid<T>,
    kind: GramianKind,
    scheme: Scheme,
    threshold: T,
) -> Result<NullspaceReport<T>> {
    if inputs.is_empty() {
        return Err(Error::Config("at least one probing input is required".into()));
    }
    let n = sys.n();
    let mut total = DMatrix::zeros(n, n);
    for u in inputs {
        let base = integrate(sys, x0, u, grid, scheme)?;
        total += raw_gramian(sys, &base, kind, 0, grid.steps())?;
    }
    let (values, vectors) = sym_eigen_desc(&total);
    let cutoff = threshold * values[0].max(T::zero());
    let null: Vec<usize> = (0..n).filter(|&i| values[i] <= cutoff).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| vectors[(r, null[c])]);
    Ok(NullspaceReport {
        basis,
        eigenvalues: values,
    })
}

/// Exact-route impulse response for channel `i` from interval start, as a
/// variational trajectory.
pub fn exact_impulse_response<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    interval: (T, T),
    i: usize,
) -> Result<VariationalTrajectory<T>> {
    let (k1, k2) = interval_of(base, interval)?;
    if i >= sys.m() {
        return Err(Error::Config(format!("input channel {i} out of range")));
    }
    let jac = |x: &DVector<T>| sys.jac_f(x);
    let init = DMatrix::from_column_slice(sys.n(), 1, sys.b().column(i).as_slice());
    let cols = propagate_linear(&jac, base, k1, k2, init, None, base.scheme())?;
    variational_from_columns(sys, base, k1, cols)
}
