//! Unambiguous-retrodiction value: the semidefinite program
//!
//! maximize Σ_x p(x)  subject to  p(x) ≥ 0,  Σ_x p(x)|η_x⟩⟨η_x| ≼ 1/d,
//!
//! solved by a primal-dual interior-point method.
//!
//! By default the constraint is written in the real span of the hatted
//! vectors (dimension `k(d−1)+1`). The safe vectors are hermitian, so in an
//! orthonormal real basis of that span `|η_x⟩⟨η_x|` is the real symmetric
//! `c_x c_xᵀ`; on the orthogonal complement the constraint matrix is zero and
//! the slack is `1/d`. [`Formulation::FullSpace`] poses the same program on the
//! whole doubled space instead (complex operators realified to `2d² × 2d²`),
//! which is slower and serves as a cross-check.
//!
//! The dual program is
//!
//! minimize tr(Y)/d  subject to  tr(Y A_x) ≥ 1,  Y ≽ 0.
//!
//! Each iteration takes a Mehrotra predictor-corrector step along the HKM
//! direction; the Newton systems live in the symmetric matrices on the span
//! (size `m = r(r+1)/2`, independent of the number `d^k` of weights). Every
//! iterate is projected onto feasible primal and dual points (the weights
//! scaled down, `Y` scaled up), so the reported value is attained and the
//! reported gap bounds the distance to the optimum from above.

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::bases::{rank_of_span, transition_tensor, BasisSet, SOLVER_RANK_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{outcome_count, solve_model_lp, JointDistribution, JointDistributionDoc, DEFAULT_VARIABLE_CAP};
use crate::strategy::{hatted, SafeVectorSolver};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Constraint restricted to the span of the hatted vectors.
    Restricted,
    /// Constraint on the whole doubled space.
    FullSpace,
}

#[derive(Clone, Debug)]
pub struct SdpOptions {
    pub cap: usize,
    pub gap_tol: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    pub formulation: Formulation,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_VARIABLE_CAP,
            gap_tol: 1e-6,
            max_iterations: 200,
            step_fraction: 0.98,
            formulation: Formulation::Restricted,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpResult {
    /// Σ_x p(x) of the returned (strictly feasible) weights.
    pub value: f64,
    pub weights: JointDistribution,
    /// Dual objective minus `value`; an upper bound on the suboptimality.
    pub gap: f64,
    /// Interior-point iterations taken.
    pub iterations: usize,
    pub converged: bool,
    /// Smallest eigenvalue of the slack `1/d − Σ_x p(x)|η_x⟩⟨η_x|`.
    pub min_slack: f64,
}

impl SdpResult {
    pub fn to_json(&self) -> Result<String> {
        let doc = SdpResultDoc {
            distribution: JointDistributionDoc::from(&self.weights),
            value: self.value,
            gap: self.gap,
            iterations: self.iterations,
            converged: self.converged,
        };
        Ok(serde_json::to_string(&doc)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdpResultDoc {
    #[serde(flatten)]
    pub distribution: JointDistributionDoc,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `max Σ p` s.t. `Σ_x p_x A_x + Z = scale·1`, `p ≥ 0`, `Z ≽ 0`, with
/// `A_x = Σ_s c_{x,s} c_{x,s}ᵀ`; dual `min scale·tr(Y)` s.t.
/// `tr(Y A_x) − 1 = s_x ≥ 0`, `Y ≽ 0`.
struct ConicProblem {
    dim: usize,
    scale: f64,
    /// `svec(A_x)` columns
    svecs: DMatrix<f64>,
    /// `svec(1)`
    ident: DVector<f64>,
}

struct ConicOutcome {
    p: Vec<f64>,
    value: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
    min_slack: f64,
}

struct Iterate {
    p: DVector<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
}

struct Direction {
    p: DVector<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    ymat: DMatrix<f64>,
    s: DVector<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α ≤ 1` keeping `x + α·dx ≥ 0`.
fn max_step_vec(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter().zip(dx.iter()).filter(|(_, d)| **d < 0.0).map(|(v, d)| -v / d).fold(1.0, f64::min)
}

/// Largest `α ≤ 1` keeping `x + α·dx ≽ 0`, for `x ≻ 0`.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(left) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(both) = l.solve_lower_triangular(&left.transpose()) else {
        return 0.0;
    };
    let lmin = sym(&both).symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        1.0
    } else {
        (-1.0 / lmin).min(1.0)
    }
}

impl ConicProblem {
    fn new(dim: usize, terms: usize, scale: f64, frames: DMatrix<f64>) -> Self {
        let n = frames.ncols() / terms;
        let m = linalg::svec_dim(dim);
        let mut svecs = DMatrix::zeros(m, n);
        for x in 0..n {
            let mut col = vec![0.0; m];
            for s in 0..terms {
                linalg::svec_add_outer(frames.column(x * terms + s).as_slice(), &mut col);
            }
            svecs.set_column(x, &DVector::from_vec(col));
        }
        let ident = linalg::svec(&DMatrix::identity(dim, dim));
        Self { dim, scale, svecs, ident }
    }

    fn load(&self, p: &DVector<f64>) -> DMatrix<f64> {
        linalg::smat((&self.svecs * p).as_slice(), self.dim)
    }

    /// `K_ab = tr(E_a Z E_b W)` over the orthonormal basis `E_a` behind `svec`.
    fn skron(&self, z: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let m = self.ident.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        // entry (i, j) of Z E_(k,l) W
        let zew = |i: usize, j: usize, k: usize, l: usize| {
            if k == l {
                z[(i, k)] * w[(k, j)]
            } else {
                (z[(i, k)] * w[(l, j)] + z[(i, l)] * w[(k, j)]) * r2
            }
        };
        let k = DMatrix::from_fn(m, m, |a, b| {
            let (i, j) = pairs[a];
            let (k, l) = pairs[b];
            if i == j {
                zew(i, i, k, l)
            } else {
                (zew(i, j, k, l) + zew(j, i, k, l)) * r2
            }
        });
        sym(&k)
    }

    /// Feasible primal and dual points derived from `it` and the resulting
    /// value and duality gap.
    fn certify(&self, it: &Iterate) -> Option<(Vec<f64>, f64, f64)> {
        let ymat = linalg::smat(it.y.as_slice(), self.dim);
        ymat.clone().cholesky()?;
        let lowest = self.svecs.tr_mul(&it.y).min();
        if !(lowest > 0.0) {
            return None;
        }
        let dual = self.scale * ymat.trace() / lowest.min(1.0);
        let p = it.p.map(|v| v.max(0.0));
        let lmax = self.load(&p).symmetric_eigenvalues().max();
        let t = if lmax > self.scale { self.scale / lmax } else { 1.0 };
        let p: Vec<f64> = p.iter().map(|v| v * t).collect();
        let value: f64 = p.iter().sum();
        Some((p, value, dual - value))
    }

    fn start(&self) -> Option<Iterate> {
        let n = self.svecs.ncols();
        let min_trace = self.svecs.tr_mul(&self.ident).min();
        if !(min_trace > 0.0) {
            return None;
        }
        let y = &self.ident * (2.0 / min_trace);
        let s = self.svecs.tr_mul(&y).add_scalar(-1.0);
        let total = self.load(&DVector::from_element(n, 1.0)).symmetric_eigenvalues().max();
        let p = DVector::from_element(n, self.scale / (2.0 * total));
        let z = DMatrix::identity(self.dim, self.dim) * self.scale - self.load(&p);
        Some(Iterate { p, z, y, s })
    }

    /// HKM search direction with centring target `sigma_mu` and optional
    /// second-order correction from a predictor direction.
    fn direction(
        &self,
        it: &Iterate,
        w: &DMatrix<f64>,
        schur: &Cholesky<f64, Dyn>,
        sigma_mu: f64,
        corr: Option<&Direction>,
    ) -> Direction {
        let r_p = &self.ident * self.scale - &self.svecs * &it.p - linalg::svec(&it.z);
        let r_d = self.svecs.tr_mul(&it.y).add_scalar(-1.0) - &it.s;
        let dscale = it.p.component_div(&it.s);
        let mut lp_target = it.s.map(|v| sigma_mu / v) - &it.p - dscale.component_mul(&r_d);
        let mut sdp_target = w * sigma_mu - &it.z;
        if let Some(c) = corr {
            lp_target -= c.p.component_mul(&c.s).component_div(&it.s);
            sdp_target -= sym(&(&c.z * &c.ymat * w));
        }
        let rhs = &self.svecs * &lp_target + linalg::svec(&sdp_target) - r_p;
        let dy = schur.solve(&rhs);
        let dymat = linalg::smat(dy.as_slice(), self.dim);
        let ds = self.svecs.tr_mul(&dy) + &r_d;
        let dp = lp_target + dscale.component_mul(&r_d) - dscale.component_mul(&ds);
        let dz = sdp_target - sym(&(&it.z * &dymat * w));
        Direction { p: dp, z: dz, y: dy, ymat: dymat, s: ds }
    }

    fn solve(&self, opts: &SdpOptions) -> Result<ConicOutcome> {
        let n = self.svecs.ncols();
        let mut it = self.start().ok_or_else(|| Error::Numerical("a constraint matrix vanishes".into()))?;
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        let mut iterations = 0;
        let barrier_dim = (n + self.dim) as f64;
        while iterations < opts.max_iterations {
            if let Some(cert) = self.certify(&it) {
                if best.as_ref().is_none_or(|b| cert.2 < b.2) {
                    best = Some(cert);
                }
            }
            if best.as_ref().is_some_and(|b| b.2 < opts.gap_tol) {
                break;
            }
            let ymat = linalg::smat(it.y.as_slice(), self.dim);
            let Some(ychol) = ymat.clone().cholesky() else {
                debug!("sdp: dual iterate left the cone");
                break;
            };
            let w = ychol.inverse();
            let mu = (it.p.dot(&it.s) + it.z.dot(&ymat)) / barrier_dim;
            let dscale = it.p.component_div(&it.s);
            let mut schur = self.skron(&it.z, &w);
            let mut weighted = self.svecs.clone();
            for (x, mut col) in weighted.column_iter_mut().enumerate() {
                col *= dscale[x];
            }
            schur.gemm(1.0, &weighted, &self.svecs.transpose(), 1.0);
            let Some(schur) = regularized_cholesky(schur) else {
                debug!("sdp: Schur complement is singular at mu = {mu:.1e}");
                break;
            };
            let aff = self.direction(&it, &w, &schur, 0.0, None);
            let ap = max_step_vec(&it.p, &aff.p).min(max_step_psd(&it.z, &aff.z));
            let ad = max_step_vec(&it.s, &aff.s).min(max_step_psd(&ymat, &aff.ymat));
            let mu_aff = ((&it.p + &aff.p * ap).dot(&(&it.s + &aff.s * ad))
                + (&it.z + &aff.z * ap).dot(&(&ymat + &aff.ymat * ad)))
                / barrier_dim;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let dir = self.direction(&it, &w, &schur, sigma * mu, Some(&aff));
            let ap = (opts.step_fraction * max_step_vec(&it.p, &dir.p).min(max_step_psd(&it.z, &dir.z))).min(1.0);
            let ad = (opts.step_fraction * max_step_vec(&it.s, &dir.s).min(max_step_psd(&ymat, &dir.ymat))).min(1.0);
            iterations += 1;
            if ap < 1e-12 && ad < 1e-12 {
                debug!("sdp: step lengths vanished at mu = {mu:.1e}");
                break;
            }
            it.p += &dir.p * ap;
            it.z = sym(&(&it.z + &dir.z * ap));
            it.y += &dir.y * ad;
            it.s += &dir.s * ad;
        }
        if let Some(cert) = self.certify(&it) {
            if best.as_ref().is_none_or(|b| cert.2 < b.2) {
                best = Some(cert);
            }
        }
        let (p, value, gap) = best.ok_or_else(|| Error::Numerical("no feasible iterate found".into()))?;
        let converged = gap < opts.gap_tol;
        let min_slack =
            (DMatrix::identity(self.dim, self.dim) * self.scale - self.load(&DVector::from_column_slice(&p)))
                .symmetric_eigenvalues()
                .min();
        Ok(ConicOutcome { p, value, gap, iterations, converged, min_slack })
    }
}

/// Cholesky factor, adding a growing diagonal shift if rounding has made the
/// matrix indefinite.
fn regularized_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let top = m.diagonal().max();
    let mut shift = 1e-15 * top;
    while shift < 1e-6 * top {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

fn build_problem(bs: &BasisSet, opts: &SdpOptions) -> Result<ConicProblem> {
    let d = bs.dim();
    let k = bs.count();
    let n = outcome_count(d, k, opts.cap)?;
    let cls = rank_of_span(bs, SOLVER_RANK_TOL);
    let hv = hatted(bs);
    let solver = SafeVectorSolver::new(&hv, &cls)?;
    let scale = 1.0 / d as f64;
    Ok(match opts.formulation {
        Formulation::Restricted => {
            let r = solver.span_dim();
            let mut frames = DMatrix::zeros(r, n);
            for x in 0..n {
                frames.set_column(x, &solver.span_coords(x));
            }
            ConicProblem::new(r, 1, scale, frames)
        }
        Formulation::FullSpace => {
            let dd = d * d;
            let mut frames = DMatrix::zeros(2 * dd, 2 * n);
            for x in 0..n {
                let h = linalg::herm_from_coords(&solver.herm_coords(&solver.span_coords(x)), d);
                let eta = linalg::vec_row_major(&h);
                for a in 0..dd {
                    frames[(a, 2 * x)] = eta[a].re;
                    frames[(dd + a, 2 * x)] = eta[a].im;
                    frames[(a, 2 * x + 1)] = -eta[a].im;
                    frames[(dd + a, 2 * x + 1)] = eta[a].re;
                }
            }
            ConicProblem::new(2 * dd, 2, scale, frames)
        }
    })
}

pub fn unambiguous_value(bs: &BasisSet) -> Result<SdpResult> {
    unambiguous_value_with(bs, &SdpOptions::default())
}

pub fn unambiguous_value_with(bs: &BasisSet, opts: &SdpOptions) -> Result<SdpResult> {
    let problem = build_problem(bs, opts)?;
    let out = problem.solve(opts)?;
    if !out.converged {
        debug!("sdp: not converged after {} iterations, gap {:.3e}", out.iterations, out.gap);
    }
    let weights = JointDistribution::from_dense(bs.dim(), bs.count(), &out.p)?;
    Ok(SdpResult {
        value: out.value,
        weights,
        gap: out.gap,
        iterations: out.iterations,
        converged: out.converged,
        min_slack: out.min_slack,
    })
}

/// Whether the LP and the SDP agree on the existence of a classical model
/// (SDP value within `1e-5` of one) for a tomographically complete set.
pub fn check_sdp_lp_consistency(bs: &BasisSet) -> Result<bool> {
    let cls = rank_of_span(bs, SOLVER_RANK_TOL);
    if !cls.is_complete() {
        return Err(Error::Precondition(format!("basis set is not tomographically complete (rank {})", cls.rank)));
    }
    let lp = solve_model_lp(&transition_tensor(bs))?;
    let sdp = unambiguous_value(bs)?;
    Ok(lp.is_feasible() == (sdp.value >= 1.0 - 1e-5))
}
