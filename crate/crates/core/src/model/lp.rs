//! Classical-model linear program.
//!
//! maximize Σ_x p(x)  subject to  Σ_x p(x) δ_{i,x(b)} δ_{j,x(c)} ≤ p_bc(i,j)
//! for all b<c, i, j, and 0 ≤ p(x) ≤ min_{b<c} p_bc(x(b),x(c)).
//!
//! Solved with a revised primal simplex over bounded variables. The slack
//! basis is feasible from the start, so no phase one is needed. Pricing is
//! Dantzig's rule; after a run of non-improving pivots the solver switches to
//! Bland's rule until the objective moves again.

use log::debug;
use nalgebra::DMatrix;

use super::{digit, outcome_count, JointDistribution, DEFAULT_VARIABLE_CAP};
use crate::bases::TransitionTensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LpOptions {
    /// Maximum number of structural variables `d^k`.
    pub cap: usize,
    /// Optimum at or above `1 − feasibility_tol` counts as a classical model.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_VARIABLE_CAP, feasibility_tol: 1e-7, max_iterations: 1_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Feasible,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub jd: JointDistribution,
    /// Optimal Σ_x p(x).
    pub value: f64,
    pub iterations: usize,
    /// Max-norm distance of the pair marginals of `jd` from the tensor.
    pub marginal_residual: f64,
}

impl LpSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Feasible
    }
}

pub fn solve_model_lp(t: &TransitionTensor) -> Result<LpSolution> {
    solve_model_lp_with(t, &LpOptions::default())
}

pub fn solve_model_lp_with(t: &TransitionTensor, opts: &LpOptions) -> Result<LpSolution> {
    let d = t.dim();
    let k = t.count();
    let n = outcome_count(d, k, opts.cap)?;
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|b| ((b + 1)..k).map(move |c| (b, c))).collect();
    let d2 = d * d;
    let m = pairs.len() * d2;

    let mut rhs = vec![0.0; m];
    for (q, &(b, c)) in pairs.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                rhs[q * d2 + i * d + j] = t.get(b, c, i, j).max(0.0);
            }
        }
    }

    let nnz = pairs.len();
    let mut rows = Vec::with_capacity(n * nnz);
    let mut upper = vec![f64::INFINITY; n];
    let mut digits = vec![0usize; k];
    for x in 0..n {
        for (b, slot) in digits.iter_mut().enumerate() {
            *slot = digit(x, b, d);
        }
        for (q, &(b, c)) in pairs.iter().enumerate() {
            let r = q * d2 + digits[b] * d + digits[c];
            rows.push(r as u32);
            upper[x] = upper[x].min(rhs[r]);
        }
    }

    let jd;
    let value;
    let iterations;
    if m == 0 {
        // single basis: every constraint is vacuous, p is bounded only by Σp ≤ 1
        let dense = vec![1.0 / n as f64; n];
        jd = JointDistribution::from_dense(d, k, &dense)?;
        value = 1.0;
        iterations = 0;
    } else {
        let lp = SparseLp { m, n, nnz, rows, rhs, upper, cost: vec![1.0; n] };
        let sol = BoundedSimplex::new(&lp).solve(opts.max_iterations)?;
        value = sol.x.iter().sum::<f64>();
        iterations = sol.iterations;
        jd = JointDistribution::from_dense(d, k, &sol.x)?;
    }
    let feasible = value >= 1.0 - opts.feasibility_tol;
    let marginal_residual = jd.marginal_residual(t)?;
    debug!("model LP d={d} k={k}: value {value:.12}, {iterations} iterations, residual {marginal_residual:.2e}");
    Ok(LpSolution {
        status: if feasible { LpStatus::Feasible } else { LpStatus::Infeasible },
        jd,
        value,
        iterations,
        marginal_residual,
    })
}

/// `max cᵀx` s.t. `Ax ≤ rhs`, `0 ≤ x ≤ upper`, with `rhs ≥ 0` and every
/// column of `A` holding exactly `nnz` unit entries at `rows[j·nnz..]`.
struct SparseLp {
    m: usize,
    n: usize,
    nnz: usize,
    rows: Vec<u32>,
    rhs: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
}

impl SparseLp {
    fn column(&self, j: usize) -> &[u32] {
        &self.rows[j * self.nnz..(j + 1) * self.nnz]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct SimplexSolution {
    x: Vec<f64>,
    iterations: usize,
}

const COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const STALL_LIMIT: usize = 30;

struct BoundedSimplex<'a> {
    lp: &'a SparseLp,
    /// variable basic in each row; indices ≥ n are slacks
    basis: Vec<usize>,
    state: Vec<VarState>,
    x_basic: Vec<f64>,
    /// dense basis inverse, column-major
    binv: DMatrix<f64>,
}

impl<'a> BoundedSimplex<'a> {
    fn new(lp: &'a SparseLp) -> Self {
        let mut state = vec![VarState::AtLower; lp.n + lp.m];
        let basis: Vec<usize> = (0..lp.m).map(|r| lp.n + r).collect();
        for (r, &v) in basis.iter().enumerate() {
            state[v] = VarState::Basic(r);
        }
        Self { lp, basis, state, x_basic: lp.rhs.clone(), binv: DMatrix::identity(lp.m, lp.m) }
    }

    fn cost(&self, v: usize) -> f64 {
        if v < self.lp.n {
            self.lp.cost[v]
        } else {
            0.0
        }
    }

    fn upper(&self, v: usize) -> f64 {
        if v < self.lp.n {
            self.lp.upper[v]
        } else {
            f64::INFINITY
        }
    }

    /// `B⁻¹ a_v`
    fn ftran(&self, v: usize) -> Vec<f64> {
        let m = self.lp.m;
        let mut out = vec![0.0; m];
        let mut add = |row: usize| {
            let col = self.binv.column(row);
            for (o, &b) in out.iter_mut().zip(col.iter()) {
                *o += b;
            }
        };
        if v < self.lp.n {
            for &r in self.lp.column(v) {
                add(r as usize);
            }
        } else {
            add(v - self.lp.n);
        }
        out
    }

    fn duals(&self) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&v| self.cost(v)).collect();
        (0..self.lp.m).map(|c| self.binv.column(c).iter().zip(&cb).map(|(a, b)| a * b).sum()).collect()
    }

    fn reduced_cost(&self, v: usize, y: &[f64]) -> f64 {
        if v < self.lp.n {
            self.lp.cost[v] - self.lp.column(v).iter().map(|&r| y[r as usize]).sum::<f64>()
        } else {
            -y[v - self.lp.n]
        }
    }

    fn objective(&self) -> f64 {
        let mut obj: f64 = self.basis.iter().zip(&self.x_basic).map(|(&v, &x)| self.cost(v) * x).sum();
        for j in 0..self.lp.n {
            if self.state[j] == VarState::AtUpper {
                obj += self.lp.cost[j] * self.lp.upper[j];
            }
        }
        obj
    }

    /// Rebuilds `B⁻¹` from scratch and recomputes the basic values.
    fn refactor(&mut self) -> Result<()> {
        let m = self.lp.m;
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (r, &v) in self.basis.iter().enumerate() {
            if v < self.lp.n {
                for &row in self.lp.column(v) {
                    b[(row as usize, r)] += 1.0;
                }
            } else {
                b[(v - self.lp.n, r)] = 1.0;
            }
        }
        self.binv = b.try_inverse().ok_or_else(|| Error::Numerical("singular simplex basis".into()))?;
        let mut resid = self.lp.rhs.clone();
        for j in 0..self.lp.n {
            if self.state[j] == VarState::AtUpper {
                for &r in self.lp.column(j) {
                    resid[r as usize] -= self.lp.upper[j];
                }
            }
        }
        self.x_basic = (0..m).map(|r| (0..m).map(|c| self.binv[(r, c)] * resid[c]).sum()).collect();
        Ok(())
    }

    fn choose_entering(&self, y: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for v in 0..self.lp.n + self.lp.m {
            let dj = match self.state[v] {
                VarState::Basic(_) => continue,
                VarState::AtLower => {
                    if self.upper(v) <= 0.0 {
                        continue;
                    }
                    let dj = self.reduced_cost(v, y);
                    if dj <= COST_TOL {
                        continue;
                    }
                    dj
                }
                VarState::AtUpper => {
                    let dj = self.reduced_cost(v, y);
                    if dj >= -COST_TOL {
                        continue;
                    }
                    dj
                }
            };
            if bland {
                return Some((v, dj));
            }
            if best.is_none_or(|(_, b)| dj.abs() > b.abs()) {
                best = Some((v, dj));
            }
        }
        best
    }

    fn solve(mut self, max_iterations: usize) -> Result<SimplexSolution> {
        let mut iterations = 0;
        let mut since_refactor = 0;
        let mut stalled = 0;
        let mut bland = false;
        let mut last_obj = self.objective();
        loop {
            if iterations >= max_iterations {
                return Err(Error::Numerical(format!("simplex did not terminate in {max_iterations} iterations")));
            }
            let y = self.duals();
            let Some((enter, dj)) = self.choose_entering(&y, bland) else {
                break;
            };
            iterations += 1;
            let dir = if dj > 0.0 { 1.0 } else { -1.0 };
            let alpha = self.ftran(enter);

            // ratio test; basic values move by −θ·dir·α
            let mut theta = self.upper(enter);
            let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper)
            let mut leave_pivot = 0.0f64;
            for (r, &a) in alpha.iter().enumerate() {
                let step = dir * a;
                let (limit, to_upper) = if step > PIVOT_TOL {
                    ((self.x_basic[r].max(0.0)) / step, false)
                } else if step < -PIVOT_TOL {
                    let ub = self.upper(self.basis[r]);
                    if !ub.is_finite() {
                        continue;
                    }
                    (((ub - self.x_basic[r]).max(0.0)) / -step, true)
                } else {
                    continue;
                };
                let better = if limit < theta - 1e-14 {
                    true
                } else if limit <= theta + 1e-14 && leave.is_some() {
                    if bland {
                        self.basis[r] < self.basis[leave.unwrap().0]
                    } else {
                        a.abs() > leave_pivot
                    }
                } else {
                    false
                };
                if better {
                    theta = limit;
                    leave = Some((r, to_upper));
                    leave_pivot = a.abs();
                }
            }
            if !theta.is_finite() {
                return Err(Error::Numerical("unbounded ray in model LP".into()));
            }

            for (xb, &a) in self.x_basic.iter_mut().zip(&alpha) {
                *xb -= theta * dir * a;
            }
            match leave {
                None => {
                    // entering variable runs to its opposite bound
                    self.state[enter] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    self.state[out] = if to_upper { VarState::AtUpper } else { VarState::AtLower };
                    let entering_value = if dir > 0.0 { theta } else { self.upper(enter) - theta };
                    self.basis[r] = enter;
                    self.state[enter] = VarState::Basic(r);
                    self.x_basic[r] = entering_value;
                    self.pivot(r, &alpha);
                    since_refactor += 1;
                    if since_refactor >= REFACTOR_EVERY {
                        self.refactor()?;
                        since_refactor = 0;
                    }
                }
            }

            let obj = self.objective();
            if obj > last_obj + 1e-13 {
                stalled = 0;
                bland = false;
            } else {
                stalled += 1;
                if stalled >= STALL_LIMIT && !bland {
                    debug!("simplex stalled at objective {obj:.12}; switching to Bland's rule");
                    bland = true;
                }
            }
            last_obj = last_obj.max(obj);
        }
        self.refactor()?;

        let mut x = vec![0.0; self.lp.n];
        for j in 0..self.lp.n {
            x[j] = match self.state[j] {
                VarState::Basic(r) => self.x_basic[r],
                VarState::AtLower => 0.0,
                VarState::AtUpper => self.lp.upper[j],
            }
            .max(0.0);
        }
        Ok(SimplexSolution { x, iterations })
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.lp.m;
        let pr = alpha[r];
        for c in 0..m {
            let mut col = self.binv.column_mut(c);
            let v = col[r] / pr;
            if v == 0.0 {
                continue;
            }
            for i in 0..m {
                if i == r {
                    col[i] = v;
                } else {
                    col[i] -= alpha[i] * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{bloch_basis, mub_basis_set, pauli_bases, transition_tensor, BasisSet};
    use crate::model::{bell_membership, bell_triple_of};

    #[test]
    fn mub_tensor_is_feasible() {
        let t = transition_tensor(&mub_basis_set(3, 4).unwrap());
        let sol = solve_model_lp(&t).unwrap();
        assert!(sol.is_feasible());
        assert!((sol.value - 1.0).abs() < 1e-9);
        assert!(sol.marginal_residual < 1e-7);
        // the uniform distribution is also a certificate
        let u = JointDistribution::uniform(3, 4, 100).unwrap();
        assert!(u.marginal_residual(&t).unwrap() < 1e-12);
    }

    #[test]
    fn pauli_tensor_is_feasible() {
        let sol = solve_model_lp(&transition_tensor(&pauli_bases())).unwrap();
        assert!(sol.is_feasible());
        assert!(sol.marginal_residual < 1e-7);
        assert!(sol.jd.iter().all(|(_, w)| w >= 0.0));
    }

    /// Bloch vectors with pairwise dot product `c`, i.e. q = (1+c)/4.
    fn symmetric_triple(q: f64) -> BasisSet {
        let c = 4.0 * q - 1.0;
        // unit vectors with equal pairwise dot c: rotate e_x, e_y, e_z towards (1,1,1)
        let a = ((1.0 + 2.0 * c) / 3.0).sqrt();
        let b = ((1.0 - c) * 2.0 / 3.0).sqrt();
        let s = [1.0 / 3f64.sqrt(); 3];
        let perp = |i: usize| {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let dot = s[i];
            let v = [e[0] - dot * s[0], e[1] - dot * s[1], e[2] - dot * s[2]];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / norm, v[1] / norm, v[2] / norm]
        };
        let us = (0..3)
            .map(|i| {
                let p = perp(i);
                bloch_basis([a * s[0] + b * p[0], a * s[1] + b * p[1], a * s[2] + b * p[2]])
            })
            .collect();
        BasisSet::from_unitaries(us, 1e-12).unwrap()
    }

    #[test]
    fn outside_tetrahedron_is_infeasible() {
        // equal pairwise angles need q ≥ 1/8; the facet is crossed below 1/6
        let bs = symmetric_triple(0.13);
        let tr = bell_triple_of(&bs).unwrap();
        assert!((tr.q_ab - 0.13).abs() < 1e-12 && (tr.q_bc - 0.13).abs() < 1e-12);
        let sol = solve_model_lp(&transition_tensor(&bs)).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!(sol.value < 1.0 - 1e-3);
        assert!(!bell_membership(&tr));
        let inside = symmetric_triple(0.2);
        assert!(solve_model_lp(&transition_tensor(&inside)).unwrap().is_feasible());
    }

    #[test]
    fn single_basis_is_trivially_feasible() {
        let bs = pauli_bases().select(&[1]).unwrap();
        let sol = solve_model_lp(&transition_tensor(&bs)).unwrap();
        assert!(sol.is_feasible());
    }

    #[test]
    fn cap_exceeded() {
        let bs = mub_basis_set(3, 4).unwrap();
        let opts = LpOptions { cap: 50, ..Default::default() };
        assert!(matches!(solve_model_lp_with(&transition_tensor(&bs), &opts), Err(Error::VariableCap { .. })));
    }

    #[test]
    fn certificates_are_sound_on_random_sets() {
        for seed in 0..200 {
            let bs = crate::bases::haar_random_basis_set(3, 4, seed).unwrap();
            let t = transition_tensor(&bs);
            let sol = solve_model_lp(&t).unwrap();
            assert!(sol.value <= 1.0 + 1e-9);
            if sol.is_feasible() {
                assert!(sol.marginal_residual <= 1e-7);
            }
            // every returned point satisfies the inequalities
            for b in 0..4 {
                for c in (b + 1)..4 {
                    let m = sol.jd.marginal(b, c).unwrap();
                    assert!((m - t.pair(b, c)).max() <= 1e-9);
                }
            }
        }
    }
}
