//! Iterative proportional fitting of a joint distribution to prescribed pair
//! marginals.
//!
//! Starts from the uniform distribution and cycles over the pairs `b<c`,
//! rescaling `p(x)` so that the `(b,c)` marginal matches `p_bc` exactly. If a
//! full sweep makes the worst residual larger, the sweep is damped by
//! averaging with the previous iterate.

use log::info;

use super::{digit, outcome_count, JointDistribution, DEFAULT_VARIABLE_CAP};
use crate::bases::TransitionTensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct FitResult {
    pub jd: JointDistribution,
    /// Max-norm pair-marginal residual of `jd`.
    pub residual: f64,
    pub sweeps: usize,
    /// Sweeps that had to be damped.
    pub damped: usize,
    /// Residual after each sweep, starting with the initial one.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn converged(&self, tol: f64) -> bool {
        self.residual <= tol
    }
}

struct PairCells {
    d2: usize,
    /// cell of each guessing function for each pair, pair-major
    cells: Vec<u16>,
    targets: Vec<f64>,
    n: usize,
}

impl PairCells {
    fn new(t: &TransitionTensor, n: usize) -> Self {
        let d = t.dim();
        let k = t.count();
        let d2 = d * d;
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|b| ((b + 1)..k).map(move |c| (b, c))).collect();
        let mut cells = Vec::with_capacity(pairs.len() * n);
        let mut targets = Vec::with_capacity(pairs.len() * d2);
        for &(b, c) in &pairs {
            cells.extend((0..n).map(|x| (digit(x, b, d) * d + digit(x, c, d)) as u16));
            for i in 0..d {
                for j in 0..d {
                    targets.push(t.get(b, c, i, j));
                }
            }
        }
        Self { d2, cells, targets, n }
    }

    fn pair_count(&self) -> usize {
        self.targets.len() / self.d2
    }

    fn cells(&self, q: usize) -> &[u16] {
        &self.cells[q * self.n..(q + 1) * self.n]
    }

    fn marginal(&self, q: usize, p: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.d2];
        for (&cell, &w) in self.cells(q).iter().zip(p) {
            m[cell as usize] += w;
        }
        m
    }

    fn residual(&self, p: &[f64]) -> f64 {
        (0..self.pair_count())
            .map(|q| {
                let m = self.marginal(q, p);
                let target = &self.targets[q * self.d2..(q + 1) * self.d2];
                m.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn rescale(&self, q: usize, p: &mut [f64]) {
        let m = self.marginal(q, p);
        let target = &self.targets[q * self.d2..(q + 1) * self.d2];
        let ratio: Vec<f64> = m.iter().zip(target).map(|(&m, &t)| if m > 0.0 { t / m } else { 0.0 }).collect();
        for (&cell, w) in self.cells(q).iter().zip(p.iter_mut()) {
            let r = ratio[cell as usize];
            // cells with zero current mass stay untouched
            if m[cell as usize] > 0.0 {
                *w *= r;
            }
        }
    }
}

pub fn iterative_fit(t: &TransitionTensor, max_sweeps: usize, tol: f64) -> Result<FitResult> {
    let d = t.dim();
    let k = t.count();
    let n = outcome_count(d, k, DEFAULT_VARIABLE_CAP)?;
    let cells = PairCells::new(t, n);
    let mut p = vec![1.0 / n as f64; n];
    let mut residual = cells.residual(&p);
    let mut history = vec![residual];
    let mut sweeps = 0;
    let mut damped = 0;
    while residual > tol && sweeps < max_sweeps {
        let previous = p.clone();
        for q in 0..cells.pair_count() {
            cells.rescale(q, &mut p);
        }
        sweeps += 1;
        let mut next = cells.residual(&p);
        if next > residual {
            for (w, old) in p.iter_mut().zip(&previous) {
                *w = 0.5 * (*w + old);
            }
            next = cells.residual(&p);
            damped += 1;
            info!("iterative fit: sweep {sweeps} raised the residual; damped to {next:.3e}");
        }
        residual = next;
        history.push(residual);
    }
    let jd = JointDistribution::from_dense(d, k, &p)?;
    Ok(FitResult { jd, residual, sweeps, damped, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{haar_random_basis_set, mub_basis_set, pauli_bases, transition_tensor};

    #[test]
    fn mub_is_a_fixed_point() {
        let t = transition_tensor(&mub_basis_set(3, 4).unwrap());
        let fit = iterative_fit(&t, 1, 1e-8).unwrap();
        assert!(fit.residual < 1e-8);
        assert!(fit.sweeps <= 1);
    }

    #[test]
    fn pauli_converges_to_product() {
        let t = transition_tensor(&pauli_bases());
        let fit = iterative_fit(&t, 100, 1e-10).unwrap();
        assert!(fit.residual < 1e-8);
        for (_, w) in fit.jd.iter() {
            assert!((w - 0.125).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_non_increasing_on_feasible_inputs() {
        let mut tested = 0;
        for seed in 0..60 {
            let bs = haar_random_basis_set(2, 3, seed).unwrap();
            let t = transition_tensor(&bs);
            let lp = crate::model::solve_model_lp(&t).unwrap();
            if !lp.is_feasible() {
                continue;
            }
            tested += 1;
            let fit = iterative_fit(&t, 2000, 1e-9).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
        assert!(tested > 5);
    }
}
