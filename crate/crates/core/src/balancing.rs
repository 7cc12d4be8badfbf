//! Balancing transforms and truncated reduced-order models.
//!
//! The square-root algorithm factors `W_R = L_R L_Rᵀ`, `W_O = L_O L_Oᵀ`
//! through clamped symmetric eigendecompositions, takes the SVD
//! `L_Oᵀ L_R = U Σ Vᵀ` and sets
//!
//! ```text
//! T = Σ^{-1/2} Uᵀ L_Oᵀ,    T⁻¹ = L_R V Σ^{-1/2}
//! ```
//!
//! so that `T W_R Tᵀ = T⁻ᵀ W_O T⁻¹ = Σ`. Reduced models are Galerkin
//! projections onto the first `k` transformed coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::Gramian;
use crate::linalg::{svd_desc, sym_eigen_desc};
use crate::scalar::Real;
use crate::sim::{integrate, InputSignal, Scheme, TimeGrid, Trajectory};
use crate::system::SystemModel;

/// Eigenvalues below `CLAMP_THRESHOLD · λ_max` are raised to that floor
/// before taking square roots.
pub const CLAMP_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancingResiduals {
    /// `‖T W_R Tᵀ − diag σ‖_F`
    pub reachability: f64,
    /// `‖T⁻ᵀ W_O T⁻¹ − diag σ‖_F`
    pub observability: f64,
}

#[derive(Debug, Clone)]
pub struct BalancingResult<T: Real> {
    pub t: DMatrix<T>,
    pub tinv: DMatrix<T>,
    /// Descending, positive.
    pub sigma: DVector<T>,
    pub residuals: BalancingResiduals,
    /// Number of `σ_i` that are not artefacts of the eigenvalue clamp.
    pub effective_rank: usize,
}

/// Clamped square-root factor `W = L Lᵀ` and the numerical rank of `W`.
fn sqrt_factor<T: Real>(w: &DMatrix<T>) -> (DMatrix<T>, usize) {
    let (values, vectors) = sym_eigen_desc(w);
    let floor = T::lit(CLAMP_THRESHOLD) * values[0].max(T::zero());
    let rank = values.iter().filter(|&&v| v > floor).count();
    // a zero matrix still gets a usable (if meaningless) factor
    let floor = if floor > T::zero() { floor } else { T::lit(f64::MIN_POSITIVE) };
    let mut l = vectors;
    for (j, &v) in values.iter().enumerate() {
        let scale = v.max(floor).sqrt();
        l.column_mut(j).scale_mut(scale);
    }
    (l, rank)
}

/// Square-root balancing of a reachability/observability pair.
///
/// Rank-deficient inputs are not an error: the result carries
/// `effective_rank`, and [`truncate`] refuses orders above it.
pub fn balance<T: Real>(wr: &Gramian<T>, wo: &Gramian<T>) -> Result<BalancingResult<T>> {
    balance_matrices(&wr.w, &wo.w)
}

pub fn balance_matrices<T: Real>(wr: &DMatrix<T>, wo: &DMatrix<T>) -> Result<BalancingResult<T>> {
    let n = wr.nrows();
    if !wr.is_square() || wo.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "gramians must be square and equal in size, got {:?} and {:?}",
            wr.shape(),
            wo.shape()
        )));
    }
    let (l_r, rank_r) = sqrt_factor(wr);
    let (l_o, rank_o) = sqrt_factor(wo);
    let (u, sigma, v) = svd_desc(&(l_o.transpose() * &l_r));
    if !(sigma[0] > T::zero()) {
        return Err(Error::Singular("both gramians vanish".into()));
    }
    let inv_sqrt = sigma.map(|s| T::one() / s.sqrt());
    let mut t = u.transpose() * l_o.transpose();
    let mut tinv = l_r * v;
    for i in 0..n {
        t.row_mut(i).scale_mut(inv_sqrt[i]);
        tinv.column_mut(i).scale_mut(inv_sqrt[i]);
    }
    let floor = T::lit(CLAMP_THRESHOLD) * sigma[0];
    let effective_rank = sigma
        .iter()
        .take(rank_r.min(rank_o))
        .filter(|&&s| s > floor)
        .count();
    let residuals = balancing_residuals(&t, &tinv, &sigma, wr, wo);
    Ok(BalancingResult {
        t,
        tinv,
        sigma,
        residuals,
        effective_rank,
    })
}

/// Deviation of both congruence transforms from `diag σ`.
pub fn balancing_residuals<T: Real>(
    t: &DMatrix<T>,
    tinv: &DMatrix<T>,
    sigma: &DVector<T>,
    wr: &DMatrix<T>,
    wo: &DMatrix<T>,
) -> BalancingResiduals {
    let d = DMatrix::from_diagonal(sigma);
    BalancingResiduals {
        reachability: (t * wr * t.transpose() - &d).norm().as_f64(),
        observability: (tinv.transpose() * wo * tinv - &d).norm().as_f64(),
    }
}

/// Orthonormal eigenbasis of a single Gramian.
#[derive(Debug, Clone)]
pub struct EigenBasis<T: Real> {
    /// Columns are eigenvectors, largest-magnitude entry positive.
    pub basis: DMatrix<T>,
    /// Descending.
    pub eigenvalues: DVector<T>,
}

pub fn eigen_truncate_basis<T: Real>(w: &Gramian<T>) -> EigenBasis<T> {
    let (eigenvalues, basis) = sym_eigen_desc(&w.w);
    EigenBasis { basis, eigenvalues }
}

/// Coordinate change `z = T x` used for truncation.
#[derive(Debug, Clone)]
pub struct Projection<T: Real> {
    pub t: DMatrix<T>,
    pub tinv: DMatrix<T>,
    /// Largest admissible truncation order.
    pub max_order: usize,
}

impl<T: Real> From<&BalancingResult<T>> for Projection<T> {
    fn from(b: &BalancingResult<T>) -> Self {
        Self {
            t: b.t.clone(),
            tinv: b.tinv.clone(),
            max_order: b.effective_rank,
        }
    }
}

impl<T: Real> From<&EigenBasis<T>> for Projection<T> {
    /// `T = Vᵀ`, `T⁻¹ = V`; every order is admissible since `V` is orthonormal.
    fn from(e: &EigenBasis<T>) -> Self {
        Self {
            t: e.basis.transpose(),
            tinv: e.basis.clone(),
            max_order: e.basis.ncols(),
        }
    }
}

/// Galerkin reduction `z' = P T f(T⁻¹ E z) + P T B u`, `y = h(T⁻¹ E z)`.
#[derive(Debug, Clone)]
pub struct ReducedModel<T: Real> {
    pub parent: SystemModel<T>,
    pub t: DMatrix<T>,
    pub tinv: DMatrix<T>,
    pub k: usize,
    /// The reduced system on `z ∈ ℝᵏ`, usable with the simulation engine.
    pub model: SystemModel<T>,
}

pub fn truncate<T: Real>(
    sys: &SystemModel<T>,
    projection: &Projection<T>,
    k: usize,
) -> Result<ReducedModel<T>> {
    let n = sys.n();
    if projection.t.shape() != (n, n) || projection.tinv.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "projection is {:?}, model has n = {n}",
            projection.t.shape()
        )));
    }
    if k == 0 || k > projection.max_order {
        return Err(Error::Rank {
            k,
            rank: projection.max_order,
        });
    }
    // P T and T⁻¹ E
    let pt = projection.t.rows(0, k).into_owned();
    let te = projection.tinv.columns(0, k).into_owned();
    let b_r = &pt * sys.b();

    let (parent_f, pt_f, te_f) = (sys.clone(), pt.clone(), te.clone());
    let (parent_h, te_h) = (sys.clone(), te.clone());
    let (parent_jf, pt_jf, te_jf) = (sys.clone(), pt.clone(), te.clone());
    let (parent_jh, te_jh) = (sys.clone(), te.clone());
    let model = SystemModel::new(
        format!("{}-reduced-{k}", sys.name()),
        b_r,
        sys.p(),
        move |z| Ok(&pt_f * parent_f.eval_f(&(&te_f * z))?),
        move |z| parent_h.eval_h(&(&te_h * z)),
    )?
    .with_jacobians(
        move |z| Ok(&pt_jf * parent_jf.jac_f(&(&te_jf * z))? * &te_jf),
        move |z| Ok(parent_jh.jac_h(&(&te_jh * z))? * &te_jh),
    );
    Ok(ReducedModel {
        parent: sys.clone(),
        t: projection.t.clone(),
        tinv: projection.tinv.clone(),
        k,
        model,
    })
}

impl<T: Real> ReducedModel<T> {
    /// `z0 = P T x0`.
    pub fn project_state(&self, x: &DVector<T>) -> DVector<T> {
        self.t.rows(0, self.k) * x
    }

    /// `x ≈ T⁻¹ E z`.
    pub fn lift_state(&self, z: &DVector<T>) -> DVector<T> {
        self.tinv.columns(0, self.k) * z
    }

    /// Simulates the reduced model from the projection of the full state `x0`.
    pub fn simulate(
        &self,
        x0: &DVector<T>,
        u: &InputSignal<T>,
        grid: &TimeGrid<T>,
        scheme: Scheme,
    ) -> Result<Trajectory<T>> {
        integrate(&self.model, &self.project_state(x0), u, grid, scheme)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelError {
    pub rel_l2: f64,
    pub max_abs: f64,
    pub argmax_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub step: usize,
    pub t: f64,
}

/// Output error of a reduced model against the full one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖y − y_r‖₂ / ‖y‖₂` over all grid samples and channels.
    pub rel_l2: f64,
    pub max_abs: f64,
    pub argmax_t: f64,
    pub per_channel: Vec<ChannelError>,
    /// Set when `‖y‖₂ = 0`; a `0/0` ratio is then reported as 0.
    pub degenerate: bool,
    /// Set when the reduced simulation blew up; the error fields are infinite.
    pub diverged: Option<DivergenceInfo>,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        (num / den, false)
    } else if num > 0.0 {
        (f64::INFINITY, true)
    } else {
        (0.0, true)
    }
}

/// Error metrics for two output series sampled at the same times.
pub fn compare_output_series<T: Real>(
    times: &[T],
    y: &[DVector<T>],
    y_r: &[DVector<T>],
) -> Result<ErrorReport> {
    if y.len() != times.len() || y_r.len() != times.len() {
        return Err(Error::Dimension(format!(
            "output series have {} and {} samples for {} times",
            y.len(),
            y_r.len(),
            times.len()
        )));
    }
    let p = y.first().map_or(0, DVector::len);
    if y.iter().chain(y_r).any(|v| v.len() != p) {
        return Err(Error::Dimension("output series disagree in channel count".into()));
    }
    let mut num = vec![0.0f64; p];
    let mut den = vec![0.0f64; p];
    let mut max = vec![(0.0f64, times.first().map_or(0.0, |t| t.as_f64())); p];
    for (k, t) in times.iter().enumerate() {
        for c in 0..p {
            let a = y[k][c].as_f64();
            let e = (a - y_r[k][c].as_f64()).abs();
            num[c] += e * e;
            den[c] += a * a;
            if e > max[c].0 {
                max[c] = (e, t.as_f64());
            }
        }
    }
    let per_channel = (0..p)
        .map(|c| ChannelError {
            rel_l2: ratio(num[c].sqrt(), den[c].sqrt()).0,
            max_abs: max[c].0,
            argmax_t: max[c].1,
        })
        .collect();
    let (rel_l2, degenerate) = ratio(num.iter().sum::<f64>().sqrt(), den.iter().sum::<f64>().sqrt());
    let (max_abs, argmax_t) = max
        .iter()
        .copied()
        .fold((0.0, max.first().map_or(0.0, |m| m.1)), |a, b| if b.0 > a.0 { b } else { a });
    Ok(ErrorReport {
        rel_l2,
        max_abs,
        argmax_t,
        per_channel,
        degenerate,
        diverged: None,
    })
}

/// Simulates `reduced` on the grid and input of `full` and compares outputs.
/// Divergence of the reduced run is reported in the result.
pub fn compare_outputs<T: Real>(full: &Trajectory<T>, reduced: &ReducedModel<T>) -> Result<ErrorReport> {
    let grid = full.grid();
    let sub = TimeGrid::new(grid.time(full.offset()), grid.time(full.last_index()), grid.dt())?;
    match reduced.simulate(full.state_at(full.offset()), full.input(), &sub, full.scheme()) {
        Ok(r) => compare_output_series(&full.times(), full.outputs(), r.outputs()),
        Err(Error::Divergence { step, t }) => Ok(ErrorReport {
            rel_l2: f64::INFINITY,
            max_abs: f64::INFINITY,
            argmax_t: t,
            per_channel: Vec::new(),
            degenerate: false,
            diverged: Some(DivergenceInfo { step, t }),
        }),
        Err(e) => Err(e),
    }
}
