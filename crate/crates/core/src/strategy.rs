//! Alice's strategy: safe vectors, POVM assembly from a classical model,
//! verification of the zero pattern, and the converse extraction of a
//! classical model from a strategy.
//!
//! Vectors of the doubled space `C^d ⊗ C^d` are row-major vectorised `d×d`
//! matrices. The hatted vector of `Φ_b^i` is `vec(|Φ_b^i⟩⟨Φ_b^i|)` and
//! `Ω = vec(1)`. Linear systems are solved in the real `d²`-dimensional space
//! of hermitian matrices (see [`crate::linalg`]), so every safe vector is
//! hermitian by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bases::{rank_of_span, transition_tensor, BasisSet, BasisSetDoc, SpanClassification, SOLVER_RANK_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{digit, outcome_count, GuessFunction, JointDistribution, DEFAULT_VARIABLE_CAP};
use crate::C64;

/// Residual allowed in the safe-vector equations.
pub const SAFE_VECTOR_TOL: f64 = 1e-8;
/// `‖Σ_x F_x − 1‖` allowed for a constructed strategy.
pub const COMPLETENESS_TOL: f64 = 1e-9;
/// Smallest eigenvalue allowed for a POVM element.
pub const POSITIVITY_TOL: f64 = 1e-10;

/// The hatted vectors `Φ̂_b^i = Φ_b^i ⊗ conj(Φ_b^i)` and `Ω`.
#[derive(Clone, Debug)]
pub struct HattedVectors {
    d: usize,
    k: usize,
    vectors: Vec<DVector<C64>>,
    omega: DVector<C64>,
    /// real hermitian coordinates, one column per `(b, i)`
    coords: DMatrix<f64>,
}

impl HattedVectors {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.k
    }

    pub fn vector(&self, b: usize, i: usize) -> &DVector<C64> {
        &self.vectors[b * self.d + i]
    }

    pub fn omega(&self) -> &DVector<C64> {
        &self.omega
    }

    /// Real coordinates of `|Φ_b^i⟩⟨Φ_b^i|`, columns ordered `b·d + i`.
    pub fn real_coords(&self) -> &DMatrix<f64> {
        &self.coords
    }
}

pub fn hatted(bs: &BasisSet) -> HattedVectors {
    let d = bs.dim();
    let k = bs.count();
    let mut vectors = Vec::with_capacity(k * d);
    let mut coords = DMatrix::zeros(d * d, k * d);
    for b in 0..k {
        for i in 0..d {
            let phi = bs.vector(b, i);
            let proj = phi * phi.adjoint();
            vectors.push(linalg::vec_row_major(&proj));
            coords.set_column(b * d + i, &linalg::projector_coords(phi));
        }
    }
    let omega = linalg::vec_row_major(&DMatrix::identity(d, d));
    HattedVectors { d, k, vectors, omega, coords }
}

/// Solution `η_x` of `⟨Φ̂_b^i|η⟩ = δ_{i,x(b)}` inside the real span of the
/// hatted vectors.
#[derive(Clone, Debug)]
pub struct SafeVector {
    pub x: GuessFunction,
    pub eta: DVector<C64>,
    /// Coordinates in the orthonormal basis of the span used by the solver.
    pub span_coords: DVector<f64>,
}

impl SafeVector {
    /// `η_x` reshaped to a `d×d` (hermitian) matrix.
    pub fn matrix(&self) -> DMatrix<C64> {
        let d = (self.eta.len() as f64).sqrt().round() as usize;
        linalg::unvec_row_major(&self.eta, d)
    }
}

/// Pre-factored safe-vector system for a non-degenerate basis set.
///
/// Uses the first `d−1` equations of every basis plus `⟨Ω|η⟩ = 1`; these
/// `k(d−1)+1` equations are square and non-singular exactly when the set is
/// non-degenerate.
#[derive(Clone, Debug)]
pub struct SafeVectorSolver {
    d: usize,
    k: usize,
    /// orthonormal basis of the real span, `d² × r`
    span: DMatrix<f64>,
    /// `(Vᵀ Q)`: equations of every `(b,i)` in span coordinates, `kd × r`
    overlaps: DMatrix<f64>,
    /// inverse of the reduced system, `r × r`
    inverse: DMatrix<f64>,
}

impl SafeVectorSolver {
    pub fn new(hv: &HattedVectors, cls: &SpanClassification) -> Result<Self> {
        let d = hv.d;
        let k = hv.k;
        let r = k * (d - 1) + 1;
        if !cls.is_non_degenerate() {
            return Err(Error::Degenerate { rank: cls.rank, expected: r });
        }
        let svd = hv.coords.clone().svd(true, false);
        let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD without left vectors".into()))?;
        let sv = &svd.singular_values;
        let mut keep: Vec<usize> = (0..sv.len()).collect();
        keep.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        keep.truncate(r);
        if keep.len() < r || !(sv[keep[r - 1]] > 1e-12 * sv[keep[0]]) {
            return Err(Error::Degenerate { rank: keep.len().min(r - 1), expected: r });
        }
        let span = DMatrix::from_fn(d * d, r, |row, col| u[(row, keep[col])]);
        let overlaps = hv.coords.transpose() * &span;
        let omega = linalg::herm_coords(&DMatrix::identity(d, d));
        let mut eqs = DMatrix::zeros(r, r);
        let mut row = 0;
        for b in 0..k {
            for i in 0..d - 1 {
                eqs.set_row(row, &overlaps.row(b * d + i));
                row += 1;
            }
        }
        eqs.set_row(row, &(omega.transpose() * &span));
        let esv = eqs.singular_values();
        let emax = esv.max();
        let emin = esv.min();
        if !(emin > 1e-12 * emax) {
            return Err(Error::Numerical(format!("safe-vector system is singular (σ_min/σ_max = {:.2e})", emin / emax)));
        }
        // LU rather than the SVD pseudo-inverse: the latter loses ~1e-9 when
        // singular values are highly repeated, as they are for MUBs.
        let inverse = eqs
            .full_piv_lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("safe-vector system is singular".into()))?;
        Ok(Self { d, k, span, overlaps, inverse })
    }

    pub fn span_dim(&self) -> usize {
        self.span.ncols()
    }

    /// Span coordinates of `η_x` for an encoded guessing function, without
    /// residual checks.
    pub fn span_coords(&self, index: usize) -> DVector<f64> {
        let d = self.d;
        let r = self.span_dim();
        let mut c = self.inverse.column(r - 1).into_owned();
        for b in 0..self.k {
            let i = digit(index, b, d);
            if i < d - 1 {
                c += self.inverse.column(b * (d - 1) + i);
            }
        }
        c
    }

    /// Max violation of `⟨Φ̂_b^i|η⟩ = δ_{i,x(b)}` over all `(b,i)`.
    pub fn residual(&self, index: usize, coords: &DVector<f64>) -> f64 {
        let vals = &self.overlaps * coords;
        let mut worst = 0.0f64;
        for b in 0..self.k {
            let xb = digit(index, b, self.d);
            for i in 0..self.d {
                let target = if i == xb { 1.0 } else { 0.0 };
                worst = worst.max((vals[b * self.d + i] - target).abs());
            }
        }
        worst
    }

    /// Real hermitian coordinates of `η` from span coordinates.
    pub fn herm_coords(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.span * coords
    }

    /// `η_x`, or `None` when the system has no solution to [`SAFE_VECTOR_TOL`].
    pub fn solve(&self, x: &GuessFunction) -> Option<SafeVector> {
        let index = x.encode();
        let coords = self.span_coords(index);
        if !(self.residual(index, &coords) < SAFE_VECTOR_TOL) {
            return None;
        }
        let h = linalg::herm_from_coords(&self.herm_coords(&coords), self.d);
        Some(SafeVector { x: x.clone(), eta: linalg::vec_row_major(&h), span_coords: coords })
    }
}

/// One-shot safe vector for `x`. Errors on degenerate sets; `None` if the
/// system turns out singular.
pub fn solve_safe_vector(hv: &HattedVectors, cls: &SpanClassification, x: &GuessFunction) -> Result<Option<SafeVector>> {
    let solver = SafeVectorSolver::new(hv, cls)?;
    Ok(solver.solve(x))
}

/// A POVM element `F = weight·|η⟩⟨η| + dense`.
#[derive(Clone, Debug, PartialEq)]
pub struct PovmElement {
    pub index: usize,
    pub weight: f64,
    pub eta: Option<DVector<C64>>,
    pub dense: Option<DMatrix<C64>>,
}

impl PovmElement {
    pub fn rank_one(index: usize, weight: f64, eta: DVector<C64>) -> Self {
        Self { index, weight, eta: Some(eta), dense: None }
    }

    pub fn dense(index: usize, m: DMatrix<C64>) -> Self {
        Self { index, weight: 0.0, eta: None, dense: Some(m) }
    }

    /// `⟨v|F|v⟩`.
    pub fn expectation(&self, v: &DVector<C64>) -> f64 {
        let mut val = 0.0;
        if let Some(eta) = &self.eta {
            val += self.weight * eta.dotc(v).norm_sqr();
        }
        if let Some(m) = &self.dense {
            val += v.dotc(&(m * v)).re;
        }
        val
    }

    /// `⟨u|F|v⟩`.
    pub fn matrix_element(&self, u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        let mut val = C64::new(0.0, 0.0);
        if let Some(eta) = &self.eta {
            val += u.dotc(eta) * eta.dotc(v) * self.weight;
        }
        if let Some(m) = &self.dense {
            val += u.dotc(&(m * v));
        }
        val
    }

    pub fn matrix(&self, n: usize) -> DMatrix<C64> {
        let mut m = self.dense.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
        if let Some(eta) = &self.eta {
            m += eta * eta.adjoint() * C64::new(self.weight, 0.0);
        }
        m
    }

    pub fn min_eigenvalue(&self, n: usize) -> f64 {
        match (&self.eta, &self.dense) {
            (Some(eta), None) if n > 1 => (self.weight * eta.norm_squared()).min(0.0),
            _ => linalg::min_eigenvalue(&self.matrix(n)),
        }
    }
}

/// Initial operator `S` (state `Ψ = (1⊗S)Ω`) and POVM on the doubled space.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    d: usize,
    k: usize,
    s: DMatrix<C64>,
    povm: Vec<PovmElement>,
}

impl Strategy {
    /// Assembles a strategy; elements must have distinct indices `< d^k`.
    pub fn new(d: usize, k: usize, s: DMatrix<C64>, mut povm: Vec<PovmElement>) -> Result<Self> {
        let n = outcome_count(d, k, usize::MAX)?;
        if s.shape() != (d, d) {
            return Err(Error::Shape(format!("S is {:?}, expected {d}x{d}", s.shape())));
        }
        povm.sort_by_key(|e| e.index);
        for w in povm.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::InvalidInput(format!("duplicate POVM index {}", w[0].index)));
            }
        }
        for e in &povm {
            if e.index >= n {
                return Err(Error::IndexOutOfRange(format!("POVM index {} >= {n}", e.index)));
            }
            let dims_ok = e.eta.as_ref().is_none_or(|v| v.len() == d * d)
                && e.dense.as_ref().is_none_or(|m| m.shape() == (d * d, d * d));
            if !dims_ok {
                return Err(Error::Shape(format!("POVM element {} has wrong size", e.index)));
            }
        }
        Ok(Self { d, k, s, povm })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.k
    }

    pub fn s(&self) -> &DMatrix<C64> {
        &self.s
    }

    pub fn povm(&self) -> &[PovmElement] {
        &self.povm
    }

    /// Indices of the outcomes carrying a safe-vector term.
    pub fn support(&self) -> Vec<usize> {
        self.povm.iter().filter(|e| e.eta.is_some() && e.weight > 0.0).map(|e| e.index).collect()
    }

    /// `(1⊗S)|v⟩` for a vectorised `d×d` operator `v`, i.e. `vec(A Sᵀ)`.
    pub fn apply_s(&self, v: &DVector<C64>) -> DVector<C64> {
        let a = linalg::unvec_row_major(v, self.d);
        linalg::vec_row_major(&(a * self.s.transpose()))
    }

    /// The initial state `Ψ = (1⊗S)Ω`.
    pub fn initial_state(&self) -> DVector<C64> {
        linalg::vec_row_major(&self.s.transpose())
    }

    /// `tr(S*S)`.
    pub fn state_norm(&self) -> f64 {
        self.s.norm_squared()
    }

    /// `Σ_x F_x`.
    pub fn povm_sum(&self) -> DMatrix<C64> {
        let n = self.d * self.d;
        let mut total = DMatrix::zeros(n, n);
        for e in &self.povm {
            if let Some(eta) = &e.eta {
                total.ger(C64::new(e.weight, 0.0), eta, &eta.conjugate(), C64::new(1.0, 0.0));
            }
            if let Some(m) = &e.dense {
                total += m;
            }
        }
        total
    }

    /// Max-abs entry of `Σ_x F_x − 1`.
    pub fn completeness_residual(&self) -> f64 {
        let n = self.d * self.d;
        (self.povm_sum() - DMatrix::<C64>::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.d * self.d;
        self.povm.iter().map(|e| e.min_eigenvalue(n)).fold(f64::INFINITY, f64::min)
    }

    fn check_invariants(&self, completeness_tol: f64, positivity_tol: f64) -> Result<()> {
        let norm = self.state_norm();
        if (norm - 1.0).abs() > 1e-12_f64.max(completeness_tol.min(1e-8)) {
            return Err(Error::InvalidInput(format!("tr(S*S) = {norm} violates normalisation")));
        }
        let c = self.completeness_residual();
        if c > completeness_tol {
            return Err(Error::InvalidInput(format!("POVM completeness violated: |ΣF − 1| = {c:.3e}")));
        }
        let e = self.min_eigenvalue();
        if e < -positivity_tol {
            return Err(Error::InvalidInput(format!("POVM positivity violated: smallest eigenvalue {e:.3e}")));
        }
        Ok(())
    }

    /// Serialises the strategy, optionally embedding the basis set it was
    /// built for. Refuses to emit a strategy that breaks its invariants.
    pub fn to_json(&self, bases: Option<&BasisSet>) -> Result<String> {
        self.check_invariants(COMPLETENESS_TOL, POSITIVITY_TOL)?;
        Ok(serde_json::to_string(&StrategyDoc::new(self, bases))?)
    }

    /// Reads a strategy and the embedded basis set, if any.
    pub fn from_json(s: &str) -> Result<(Self, Option<BasisSet>)> {
        let doc: StrategyDoc = serde_json::from_str(s)?;
        doc.into_parts()
    }
}

/// Packed lower triangle (row-major, `j ≤ i`) of a hermitian matrix.
fn pack_lower(m: &DMatrix<C64>) -> Vec<[f64; 2]> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

fn unpack_lower(v: &[[f64; 2]], n: usize) -> Result<DMatrix<C64>> {
    if v.len() != n * (n + 1) / 2 {
        return Err(Error::InvalidInput(format!("packed matrix has {} entries, expected {}", v.len(), n * (n + 1) / 2)));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut pos = 0;
    for i in 0..n {
        for j in 0..=i {
            let z = C64::new(v[pos][0], v[pos][1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            pos += 1;
        }
    }
    Ok(m)
}

/// Wire format of a [`Strategy`]: `s` row-major as `[re, im]` pairs, POVM
/// elements as `[index, packed lower triangle]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategyDoc {
    pub d: usize,
    pub k: usize,
    pub s: Vec<Vec<[f64; 2]>>,
    pub povm: Vec<(usize, Vec<[f64; 2]>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<BasisSetDoc>,
}

impl StrategyDoc {
    fn new(st: &Strategy, bases: Option<&BasisSet>) -> Self {
        let n = st.d * st.d;
        Self {
            d: st.d,
            k: st.k,
            s: (0..st.d).map(|i| (0..st.d).map(|j| [st.s[(i, j)].re, st.s[(i, j)].im]).collect()).collect(),
            povm: st.povm.iter().map(|e| (e.index, pack_lower(&e.matrix(n)))).collect(),
            bases: bases.map(BasisSetDoc::from),
        }
    }

    fn into_parts(self) -> Result<(Strategy, Option<BasisSet>)> {
        let d = self.d;
        if d < 2 || self.k < 1 {
            return Err(Error::InvalidInput(format!("d = {d}, k = {} out of range", self.k)));
        }
        if self.s.len() != d || self.s.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!("S must be {d}x{d}")));
        }
        let s = DMatrix::from_fn(d, d, |i, j| C64::new(self.s[i][j][0], self.s[i][j][1]));
        let povm = self
            .povm
            .iter()
            .map(|(index, packed)| Ok(PovmElement::dense(*index, unpack_lower(packed, d * d)?)))
            .collect::<Result<Vec<_>>>()?;
        let st = Strategy::new(d, self.k, s, povm).map_err(|e| Error::InvalidInput(e.to_string()))?;
        st.check_invariants(1e-8, 1e-8)?;
        let bases = self.bases.map(BasisSet::try_from).transpose()?;
        if let Some(bs) = &bases {
            if bs.dim() != d || bs.count() != self.k {
                return Err(Error::InvalidInput("embedded bases disagree with the strategy shape".into()));
            }
        }
        Ok((st, bases))
    }
}

/// Builds Alice's strategy from a classical model: `S = 1/√d`,
/// `F_x = d·p(x)|η_x⟩⟨η_x|`, with the remainder `1 − Σ_x d p(x)|η_x⟩⟨η_x|`
/// (the projection onto the complement of the span, zero for complete sets)
/// added to the lowest-index supported outcome.
pub fn build_strategy(bs: &BasisSet, jd: &JointDistribution) -> Result<Strategy> {
    let d = bs.dim();
    let k = bs.count();
    if jd.dim() != d || jd.count() != k {
        return Err(Error::Precondition("model shape differs from the basis set".into()));
    }
    let total = jd.total();
    if (total - 1.0).abs() > 1e-7 {
        return Err(Error::Precondition(format!("model total weight {total} is not 1")));
    }
    let resid = jd.marginal_residual(&transition_tensor(bs))?;
    if resid > 1e-7 {
        return Err(Error::Precondition(format!("model marginals miss the transition probabilities by {resid:.3e}")));
    }
    let cls = rank_of_span(bs, SOLVER_RANK_TOL);
    let hv = hatted(bs);
    let solver = SafeVectorSolver::new(&hv, &cls)?;

    let n = d * d;
    let df = d as f64;
    let mut povm = Vec::with_capacity(jd.support_len());
    let mut sum = DMatrix::<C64>::zeros(n, n);
    for (index, p) in jd.iter() {
        let x = GuessFunction::decode(index, d, k)?;
        let sv = solver
            .solve(&x)
            .ok_or_else(|| Error::Numerical(format!("no safe vector for guess {index} on a non-degenerate set")))?;
        let weight = df * p;
        sum.ger(C64::new(weight, 0.0), &sv.eta, &sv.eta.conjugate(), C64::new(1.0, 0.0));
        povm.push(PovmElement::rank_one(index, weight, sv.eta));
    }
    if povm.is_empty() {
        return Err(Error::Precondition("model has empty support".into()));
    }

    let mut rest = DMatrix::<C64>::identity(n, n) - sum;
    rest = (&rest + rest.adjoint()) * C64::new(0.5, 0.0);
    let eig = rest.clone().symmetric_eigen();
    let most_negative = eig.eigenvalues.iter().cloned().fold(0.0, f64::min);
    if most_negative < -COMPLETENESS_TOL {
        return Err(Error::Precondition(format!(
            "model is not consistent with a POVM: remainder has eigenvalue {most_negative:.3e}"
        )));
    }
    if most_negative < 0.0 {
        let clipped = eig.eigenvalues.map(|l| C64::new(l.max(0.0), 0.0));
        rest = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.adjoint();
    }
    povm[0].dense = Some(rest);

    let s = DMatrix::<C64>::identity(d, d) * C64::new(1.0 / df.sqrt(), 0.0);
    Strategy::new(d, k, s, povm)
}

/// Diagnostics of the basic equation for a strategy.
#[derive(Clone, Debug)]
pub struct VerificationReport {
    /// Largest `⟨Φ̂_b^i|(1⊗S)*F_x(1⊗S)|Φ̂_b^i⟩` with `i ≠ x(b)`.
    pub max_offdiag: f64,
    /// Diagonal values `λ` keyed by `(b, x)`; the outcome is `i = x(b)`.
    pub lambda: BTreeMap<(usize, usize), f64>,
    /// `max_b |Σ_x λ_(b,x) − 1|`.
    pub sum_check: f64,
    pub min_eig: f64,
    /// Max-abs entry of `Σ_x F_x − 1`.
    pub completeness: f64,
}

impl VerificationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_offdiag < tol
    }
}

pub fn verify_strategy(bs: &BasisSet, st: &Strategy) -> Result<VerificationReport> {
    let d = bs.dim();
    let k = bs.count();
    if st.dim() != d || st.count() != k {
        return Err(Error::Shape("strategy shape differs from the basis set".into()));
    }
    let hv = hatted(bs);
    let w: Vec<DVector<C64>> =
        (0..k).flat_map(|b| (0..d).map(move |i| (b, i))).map(|(b, i)| st.apply_s(hv.vector(b, i))).collect();
    let mut max_offdiag = 0.0f64;
    let mut lambda = BTreeMap::new();
    let mut sums = vec![0.0; k];
    for e in st.povm() {
        for b in 0..k {
            let xb = digit(e.index, b, d);
            for i in 0..d {
                let val = e.expectation(&w[b * d + i]);
                if i == xb {
                    lambda.insert((b, e.index), val);
                    sums[b] += val;
                } else {
                    max_offdiag = max_offdiag.max(val);
                }
            }
        }
    }
    let sum_check = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    Ok(VerificationReport {
        max_offdiag,
        lambda,
        sum_check,
        min_eig: st.min_eigenvalue(),
        completeness: st.completeness_residual(),
    })
}

/// Reads the classical model off a strategy for a tomographically complete
/// set: `p(x) ∝ ⟨Ψ|F_x|Ψ⟩` with `Ψ = (1⊗S)Ω`.
pub fn extract_classical_model(bs: &BasisSet, st: &Strategy) -> Result<JointDistribution> {
    let cls = rank_of_span(bs, SOLVER_RANK_TOL);
    if !cls.is_complete() {
        return Err(Error::Precondition(format!("basis set is not tomographically complete (rank {})", cls.rank)));
    }
    let report = verify_strategy(bs, st)?;
    if !(report.max_offdiag < 1e-8) {
        return Err(Error::Precondition(format!("strategy is not safe: off-diagonal {:.3e}", report.max_offdiag)));
    }
    outcome_count(bs.dim(), bs.count(), DEFAULT_VARIABLE_CAP)?;
    let psi = st.initial_state();
    let norm = st.state_norm();
    let raw: Vec<(usize, f64)> = st.povm().iter().map(|e| (e.index, e.expectation(&psi) / norm)).collect();
    let total: f64 = raw.iter().map(|(_, p)| p.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("strategy assigns no weight to the initial state".into()));
    }
    let mut jd = JointDistribution::new(bs.dim(), bs.count());
    for (index, p) in raw {
        jd.set(index, p.max(0.0) / total);
    }
    Ok(jd)
}

/// The reduced density operator `S*S` of the initial state.
pub fn reduced_state(st: &Strategy) -> DMatrix<C64> {
    st.s.adjoint() * &st.s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{haar_random_basis_set, mub_basis_set, pauli_bases, DEFAULT_RANK_TOL};
    use crate::model::solve_model_lp;

    fn closed_form_mub_eta(hv: &HattedVectors, x: &GuessFunction) -> DVector<C64> {
        let k = hv.count();
        let d = hv.dim();
        let mut eta = hv.omega() * C64::new(-((k - 1) as f64) / d as f64, 0.0);
        for b in 0..k {
            eta += hv.vector(b, x.answer(b));
        }
        eta
    }

    #[test]
    fn hatted_vector_identities() {
        let bs = haar_random_basis_set(3, 3, 1).unwrap();
        let hv = hatted(&bs);
        for b in 0..3 {
            let s: DVector<C64> = (0..3).map(|i| hv.vector(b, i)).fold(DVector::zeros(9), |a, v| a + v);
            assert!((s - hv.omega()).norm() < 1e-12);
            for i in 0..3 {
                assert!((hv.omega().dotc(hv.vector(b, i)) - C64::new(1.0, 0.0)).norm() < 1e-12);
                for c in 0..3 {
                    for j in 0..3 {
                        let hat = hv.vector(b, i).dotc(hv.vector(c, j));
                        let direct = bs.vector(b, i).dotc(&bs.vector(c, j)).norm_sqr();
                        assert!((hat - C64::new(direct, 0.0)).norm() < 1e-12);
                    }
                }
            }
        }
        let pv = hatted(&pauli_bases());
        assert!((pv.vector(0, 0).dotc(pv.vector(1, 0)).re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mub_safe_vectors_match_closed_form() {
        let bs = mub_basis_set(3, 4).unwrap();
        let hv = hatted(&bs);
        let cls = rank_of_span(&bs, DEFAULT_RANK_TOL);
        let solver = SafeVectorSolver::new(&hv, &cls).unwrap();
        for index in 0..81 {
            let x = GuessFunction::decode(index, 3, 4).unwrap();
            let sv = solver.solve(&x).unwrap();
            assert!((sv.eta.clone() - closed_form_mub_eta(&hv, &x)).camax() < 1e-10);
        }
    }

    #[test]
    fn pauli_safe_vector_is_hermitian_and_normalised() {
        let bs = pauli_bases();
        let hv = hatted(&bs);
        let cls = rank_of_span(&bs, DEFAULT_RANK_TOL);
        let x = GuessFunction::new(2, vec![0, 0, 0]).unwrap();
        let sv = solve_safe_vector(&hv, &cls, &x).unwrap().unwrap();
        let m = sv.matrix();
        assert!((&m - m.adjoint()).camax() < 1e-12);
        assert!((hv.omega().dotc(&sv.eta) - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn degenerate_sets_are_refused() {
        let bs = pauli_bases().select(&[0, 1, 0]).unwrap();
        let hv = hatted(&bs);
        let cls = rank_of_span(&bs, DEFAULT_RANK_TOL);
        let x = GuessFunction::new(2, vec![0, 0, 0]).unwrap();
        assert!(matches!(solve_safe_vector(&hv, &cls, &x), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn haar_non_degenerate_sets_have_all_safe_vectors() {
        let bs = haar_random_basis_set(3, 4, 77).unwrap();
        let hv = hatted(&bs);
        let cls = rank_of_span(&bs, DEFAULT_RANK_TOL);
        let solver = SafeVectorSolver::new(&hv, &cls).unwrap();
        for index in 0..81 {
            let x = GuessFunction::decode(index, 3, 4).unwrap();
            let sv = solver.solve(&x).expect("safe vector");
            let m = sv.matrix();
            assert!((&m - m.adjoint()).camax() < 1e-8);
            assert!((hv.omega().dotc(&sv.eta) - C64::new(1.0, 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn pauli_strategy() {
        let bs = pauli_bases();
        let lp = solve_model_lp(&transition_tensor(&bs)).unwrap();
        let product = JointDistribution::uniform(2, 3, 100).unwrap();
        for jd in [&lp.jd, &product] {
            let st = build_strategy(&bs, jd).unwrap();
            let rep = verify_strategy(&bs, &st).unwrap();
            assert!(rep.max_offdiag < 1e-10);
            assert!(rep.sum_check < 1e-9);
            assert!(rep.completeness < 1e-10);
            assert!(rep.min_eig > -POSITIVITY_TOL);
            let back = extract_classical_model(&bs, &st).unwrap();
            for b in 0..3 {
                for c in (b + 1)..3 {
                    let m = back.marginal(b, c).unwrap();
                    assert!(m.iter().all(|&v| (v - 0.25).abs() < 1e-9));
                }
            }
        }
        let st = build_strategy(&bs, &product).unwrap();
        assert_eq!(st.support().len(), 8);
        let rho = reduced_state(&st);
        assert!((rho - DMatrix::<C64>::identity(2, 2) * C64::new(0.5, 0.0)).camax() < 1e-12);
    }

    #[test]
    fn mub3_strategy_from_uniform_model() {
        let bs = mub_basis_set(3, 4).unwrap();
        let jd = JointDistribution::uniform(3, 4, 100).unwrap();
        let st = build_strategy(&bs, &jd).unwrap();
        assert_eq!(st.support().len(), 81);
        let rep = verify_strategy(&bs, &st).unwrap();
        assert!(rep.min_eig > -POSITIVITY_TOL);
        assert!(rep.completeness < COMPLETENESS_TOL);
        // complete set: remainder vanishes
        let rest = st.povm()[0].dense.as_ref().unwrap();
        assert!(rest.camax() < 1e-9);
    }

    #[test]
    fn incomplete_set_gets_complement_projector() {
        let bs = mub_basis_set(3, 2).unwrap();
        let jd = JointDistribution::uniform(3, 2, 100).unwrap();
        let st = build_strategy(&bs, &jd).unwrap();
        let rep = verify_strategy(&bs, &st).unwrap();
        assert!(rep.max_offdiag < 1e-10);
        assert!(rep.completeness < COMPLETENESS_TOL);
        let rest = st.povm()[0].dense.as_ref().unwrap();
        // projector of rank 9 − (2·2+1) = 4
        assert!((rest * rest - rest).camax() < 1e-9);
        assert!((rest.trace().re - 4.0).abs() < 1e-9);
        // invisible from the maximally entangled state
        let psi = st.initial_state();
        assert!(psi.dotc(&(rest * &psi)).norm() < 1e-12);
    }

    #[test]
    fn fault_injection_is_detected() {
        let bs = pauli_bases();
        let jd = JointDistribution::uniform(2, 3, 100).unwrap();
        let mut st = build_strategy(&bs, &jd).unwrap();
        let hv = hatted(&bs);
        // x = (1,0,0): x(0) = 1 ≠ 0
        let target = st.povm.iter_mut().find(|e| e.index == 1).unwrap();
        let bump = hv.vector(0, 0) * hv.vector(0, 0).adjoint() * C64::new(1e-3, 0.0);
        target.dense = Some(target.dense.take().map_or(bump.clone(), |m| m + &bump));
        let rep = verify_strategy(&bs, &st).unwrap();
        // ⟨Φ̂|(1⊗S)* bump (1⊗S)|Φ̂⟩ = 1e-3 · |⟨Φ̂|Φ̂⟩|² / d
        assert!((rep.max_offdiag - 1e-3 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn build_rejects_inconsistent_models() {
        let bs = haar_random_basis_set(2, 3, 4).unwrap();
        let jd = JointDistribution::uniform(2, 3, 100).unwrap();
        assert!(matches!(build_strategy(&bs, &jd), Err(Error::Precondition(_))));
        let bs = pauli_bases();
        let mut half = JointDistribution::new(2, 3);
        half.set(0, 0.5);
        assert!(matches!(build_strategy(&bs, &half), Err(Error::Precondition(_))));
    }

    #[test]
    fn product_state_reduced_state() {
        let mut s = DMatrix::<C64>::zeros(3, 3);
        s[(0, 0)] = C64::new(1.0, 0.0);
        let st = Strategy::new(3, 1, s, vec![]).unwrap();
        let rho = reduced_state(&st);
        assert!((&rho * &rho - &rho).camax() < 1e-15);
        assert!((rho.trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let bs = pauli_bases();
        let st = build_strategy(&bs, &JointDistribution::uniform(2, 3, 100).unwrap()).unwrap();
        let s = st.to_json(Some(&bs)).unwrap();
        let (back, bases) = Strategy::from_json(&s).unwrap();
        assert_eq!(bases.unwrap(), bs);
        let rep = verify_strategy(&bs, &back).unwrap();
        assert!(rep.max_offdiag < 1e-10);
        for (a, b) in st.povm().iter().zip(back.povm()) {
            assert!((a.matrix(4) - b.matrix(4)).camax() < 1e-15);
        }
        // a broken strategy is not written
        let mut broken = st.clone();
        broken.povm.pop();
        assert!(broken.to_json(None).is_err());
    }
}
