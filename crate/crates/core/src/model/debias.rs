//! Gradient search that pushes a basis set towards mutual unbiasedness.
//!
//! Objective: `F = Σ_{a<b} Σ_{i,j} p_ab(i,j)²`, bounded below by
//! `k(k−1)/2 · 1/d²` with equality iff all pairs are unbiased. Each step
//! rotates every basis along a geodesic of the unitary group,
//! `U_b ← exp(−η A_b) U_b`, where `A_b` is the anti-hermitian projection of
//! the Euclidean gradient; `η` comes from a halving Armijo line search.

use log::debug;
use nalgebra::DMatrix;

use crate::bases::BasisSet;
use crate::error::Result;
use crate::linalg;
use crate::C64;

const ARMIJO: f64 = 1e-4;
const REORTHONORMALIZE_EVERY: usize = 50;

#[derive(Clone, Debug)]
pub struct DebiasResult {
    pub basis_set: BasisSet,
    pub objective: f64,
    pub initial_objective: f64,
    pub gradient_norm: f64,
    pub steps: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// `(k(k−1)/2)/d²`.
pub fn debias_lower_bound(d: usize, k: usize) -> f64 {
    (k * (k - 1) / 2) as f64 / (d * d) as f64
}

fn objective_of(us: &[DMatrix<C64>]) -> f64 {
    let d = us[0].nrows() as f64;
    let mut f = 0.0;
    for a in 0..us.len() {
        for b in (a + 1)..us.len() {
            let w = us[a].adjoint() * &us[b];
            f += w.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>();
        }
    }
    f / (d * d)
}

pub fn debias_objective(bs: &BasisSet) -> f64 {
    objective_of(bs.unitaries())
}

/// Euclidean gradient `∂F/∂U_b` for the real inner product `Re tr(G*X)`.
fn gradient_of(us: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> {
    let d = us[0].nrows();
    let scale = C64::new(4.0 / (d * d) as f64, 0.0);
    let mut grads = vec![DMatrix::<C64>::zeros(d, d); us.len()];
    for a in 0..us.len() {
        for b in 0..us.len() {
            if a == b {
                continue;
            }
            let w = us[a].adjoint() * &us[b];
            let e = w.map(|z| z * z.norm_sqr());
            grads[b] += &us[a] * e * scale;
        }
    }
    grads
}

pub fn debias_gradient(bs: &BasisSet) -> Vec<DMatrix<C64>> {
    gradient_of(bs.unitaries())
}

/// Left-invariant anti-hermitian directions `A_b = (G_b U_b* − U_b G_b*)/2`.
fn directions(us: &[DMatrix<C64>], grads: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> {
    us.iter()
        .zip(grads)
        .map(|(u, g)| (g * u.adjoint() - u * g.adjoint()) * C64::new(0.5, 0.0))
        .collect()
}

fn step(us: &[DMatrix<C64>], dirs: &[DMatrix<C64>], eta: f64) -> Vec<DMatrix<C64>> {
    // exp(−ηA) with A = −iH  ⇒  exp(iηH), H = iA hermitian
    us.iter()
        .zip(dirs)
        .map(|(u, a)| {
            let h = a * C64::new(0.0, eta);
            linalg::expi_hermitian(&h) * u
        })
        .collect()
}

/// Descends `F` from `bs`. Stops when the gradient norm or the relative
/// decrease of an accepted step falls below `tol`, or after `max_steps`.
pub fn debias(bs: &BasisSet, max_steps: usize, tol: f64) -> Result<DebiasResult> {
    let mut us: Vec<DMatrix<C64>> = bs.unitaries().to_vec();
    let mut f = objective_of(&us);
    let initial_objective = f;
    let mut history = vec![f];
    let mut eta = 1.0;
    let mut steps = 0;
    let mut converged = false;
    let mut gradient_norm;
    loop {
        let dirs = directions(&us, &gradient_of(&us));
        let sq: f64 = dirs.iter().map(|a| a.norm_squared()).sum();
        gradient_norm = sq.sqrt();
        if gradient_norm < tol {
            converged = true;
            break;
        }
        if steps >= max_steps {
            break;
        }
        let mut trial_eta = eta * 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = step(&us, &dirs, trial_eta);
            let fc = objective_of(&cand);
            if fc <= f - ARMIJO * trial_eta * sq {
                accepted = Some((cand, fc));
                break;
            }
            trial_eta *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            debug!("debias: line search failed at step {steps}, F = {f:.6e}");
            converged = true;
            break;
        };
        steps += 1;
        eta = trial_eta;
        us = cand;
        if steps % REORTHONORMALIZE_EVERY == 0 {
            us = us.into_iter().map(linalg::orthonormalize).collect();
        }
        let rel = (f - fc) / f.abs().max(f64::MIN_POSITIVE);
        f = objective_of(&us);
        history.push(f);
        if rel < tol {
            converged = true;
            break;
        }
    }
    let us = us.into_iter().map(linalg::orthonormalize).collect();
    let basis_set = BasisSet::from_unitaries(us, 1e-10)?;
    let objective = debias_objective(&basis_set);
    Ok(DebiasResult { basis_set, objective, initial_objective, gradient_norm, steps, converged, history })
}
