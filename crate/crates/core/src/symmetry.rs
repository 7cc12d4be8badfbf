//! Variational symmetry with respect to a constant matrix `S`:
//!
//! ```text
//! S ∂f/∂x(x) = ∂f/∂x(x)ᵀ S,    S B = ∂h/∂x(x)ᵀ
//! ```
//!
//! When both hold, `S Φ S⁻¹` is the transition matrix of the dual variational
//! system `δz' = (∂f/∂x)ᵀ δz + (∂h/∂x)ᵀ δu`, `δy = Bᵀ δz`, and its
//! reachability Gramian is a congruence of the primal one.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gramian::{
    reachability_gramian, trapezoid_outer, Gramian, GramianKind, GramianMethod, GramianOptions,
};
use crate::linalg::condition_number;
use crate::scalar::Real;
use crate::sim::{propagate_linear, Trajectory, VariationalTrajectory};
use crate::system::SystemModel;

/// Default relative tolerance of the certificate.
pub const DEFAULT_SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Upper bound on trajectory snapshots used as default samples.
pub const MAX_DEFAULT_SAMPLES: usize = 100;

#[derive(Debug, Clone)]
pub struct SymmetryCertificate<T: Real> {
    pub s: DMatrix<T>,
    pub sample_states: Vec<DVector<T>>,
    /// `max ‖S J − Jᵀ S‖_F` over the samples.
    pub res_dyn: f64,
    /// `max ‖S B − J_hᵀ‖_F` over the samples (infinite when `m ≠ p`).
    pub res_out: f64,
    pub verdict: bool,
    pub cond_s: f64,
    pub tau: f64,
}

/// Base-trajectory snapshots, evenly subsampled to at most
/// `MAX_DEFAULT_SAMPLES`, plus the origin.
pub fn default_samples<T: Real>(base: &Trajectory<T>) -> Vec<DVector<T>> {
    let states = base.states();
    let count = states.len().min(MAX_DEFAULT_SAMPLES);
    let mut out: Vec<DVector<T>> = if count <= 1 {
        states.to_vec()
    } else {
        (0..count)
            .map(|j| states[j * (states.len() - 1) / (count - 1)].clone())
            .collect()
    };
    out.push(DVector::zeros(states[0].len()));
    out
}

pub fn check_variational_symmetry<T: Real>(
    sys: &SystemModel<T>,
    s: &DMatrix<T>,
    samples: &[DVector<T>],
    tau: T,
) -> Result<SymmetryCertificate<T>> {
    let n = sys.n();
    if s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "S is {:?}, model has n = {n}",
            s.shape()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("at least one sample state is required".into()));
    }
    let cond = condition_number(s);
    if !cond.is_finite() || cond > T::one() / T::default_epsilon() {
        return Err(Error::Singular(format!("S has condition number {cond:e}")));
    }
    let sb = s * sys.b();
    let mut res_dyn = T::zero();
    let mut res_out = T::zero();
    let mut verdict = true;
    for x in samples {
        let jf = sys.jac_f(x)?;
        let jh = sys.jac_h(x)?;
        let dyn_i = (s * &jf - jf.transpose() * s).norm();
        let out_i = if sb.shape() == (n, jh.nrows()) {
            (&sb - jh.transpose()).norm()
        } else {
            T::one() / T::zero()
        };
        let bound = tau * (T::one() + jf.norm());
        verdict &= dyn_i <= bound && out_i <= bound;
        res_dyn = res_dyn.max(dyn_i);
        res_out = res_out.max(out_i);
    }
    Ok(SymmetryCertificate {
        s: s.clone(),
        sample_states: samples.to_vec(),
        res_dyn: res_dyn.as_f64(),
        res_out: res_out.as_f64(),
        verdict,
        cond_s: cond.as_f64(),
        tau: tau.as_f64(),
    })
}

fn require_certified<T: Real>(cert: &SymmetryCertificate<T>) -> Result<()> {
    if !cert.verdict {
        return Err(Error::NotSymmetric {
            res_dyn: cert.res_dyn,
            res_out: cert.res_out,
        });
    }
    Ok(())
}

/// Dual impulse responses `Ψ(t, t1) J_hᵀ(X(t1))` (n×p per grid point).
fn dual_factors<T: Real>(
    sys: &SystemModel<T>,
    base: &Trajectory<T>,
    k1: usize,
    k2: usize,
) -> Result<Vec<DMatrix<T>>> {
    let jac_t = |x: &DVector<T>| Ok(sys.jac_f(x)?.transpose());
    let init = sys.jac_h(base.state_at(k1))?.transpose();
    propagate_linear(&jac_t, base, k1, k2, init, None, base.scheme())
}

/// Impulse response of the dual variational system for output channel `i`
/// (0-based), started at the beginning of `base` with the jump
/// `δz(t1⁺) = J_h(X(t1))ᵀ e_i`. `dy` holds `Bᵀ δz`.
pub fn dual_variational_response<T: Real>(
    sys: &SystemModel<T>,
    cert: &SymmetryCertificate<T>,
    base: &Trajectory<T>,
    i: usize,
) -> Result<VariationalTrajectory<T>> {
    require_certified(cert)?;
    if i >= sys.p() {
        return Err(Error::Config(format!(
            "output channel {i} out of range (p = {})",
            sys.p()
        )));
    }
    let (k1, k2) = (base.offset(), base.last_index());
    let factors = dual_factors(sys, base, k1, k2)?;
    let bt = sys.b().transpose();
    let dx: Vec<DVector<T>> = factors.iter().map(|f| f.column(i).into_owned()).collect();
    let dy = dx.iter().map(|v| &bt * v).collect();
    Ok(VariationalTrajectory {
        base_id: base.model_id().to_string(),
        offset: k1,
        dx,
        dy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CongruenceConvention {
    /// `W* = Sᵀ W_R S`
    TransposeLeft,
    /// `W* = S W_R Sᵀ`
    TransposeRight,
    Both,
    Neither,
}

#[derive(Debug, Clone)]
pub struct DualGramianReport<T: Real> {
    pub dual: Gramian<T>,
    pub reachability: Gramian<T>,
    /// `Sᵀ W_R S`
    pub st_w_s: DMatrix<T>,
    /// `S W_R Sᵀ`
    pub s_w_st: DMatrix<T>,
    /// `‖W* − Sᵀ W_R S‖_F / ‖W*‖_F`
    pub mismatch_st_w_s: f64,
    /// `‖W* − S W_R Sᵀ‖_F / ‖W*‖_F`
    pub mismatch_s_w_st: f64,
    /// Which congruence agrees with `W*` to `tolerance`.
    pub matched: CongruenceConvention,
    pub tolerance: f64,
}

/// Relative tolerance for declaring a congruence convention matched.
pub const CONGRUENCE_TOLERANCE: f64 = 1e-6;

/// Reachability Gramian of the dual variational system, simulated directly,
/// alongside both congruence forms of the primal reachability Gramian.
pub fn dual_reachability_gramian<T: Real>(
    sys: &SystemModel<T>,
    cert: &SymmetryCertificate<T>,
    base: &Trajectory<T>,
    interval: (T, T),
) -> Result<DualGramianReport<T>> {
    require_certified(cert)?;
    let (k1, k2) = base.grid().interval_indices(interval)?;
    let factors = dual_factors(sys, base, k1, k2)?;
    let dual = Gramian::assemble(
        trapezoid_outer(sys.n(), &factors, base.grid().dt()),
        GramianKind::DualReachability,
        interval,
        GramianMethod::ExactVariational,
        base.model_id(),
    )?;
    let reachability = reachability_gramian(
        sys,
        base,
        interval,
        GramianMethod::ExactVariational,
        &GramianOptions::default(),
    )?;
    let s = &cert.s;
    let st_w_s = s.transpose() * &reachability.w * s;
    let s_w_st = s * &reachability.w * s.transpose();
    let scale = dual.w.norm();
    let rel = |m: &DMatrix<T>| {
        let diff = (&dual.w - m).norm();
        if scale > T::zero() {
            (diff / scale).as_f64()
        } else if diff > T::zero() {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let mismatch_st_w_s = rel(&st_w_s);
    let mismatch_s_w_st = rel(&s_w_st);
    let matched = match (
        mismatch_st_w_s <= CONGRUENCE_TOLERANCE,
        mismatch_s_w_st <= CONGRUENCE_TOLERANCE,
    ) {
        (true, true) => CongruenceConvention::Both,
        (true, false) => CongruenceConvention::TransposeLeft,
        (false, true) => CongruenceConvention::TransposeRight,
        (false, false) => CongruenceConvention::Neither,
    };
    Ok(DualGramianReport {
        dual,
        reachability,
        st_w_s,
        s_w_st,
        mismatch_st_w_s,
        mismatch_s_w_st,
        matched,
        tolerance: CONGRUENCE_TOLERANCE,
    })
}
