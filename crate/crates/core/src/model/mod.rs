//! Classical joint models for the transition probabilities of a basis set.
//!
//! A classical model is a probability distribution on the guessing functions
//! `x: {0..k} → {0..d}` whose pair marginals reproduce `p_bc(i,j)`.

mod bell;
mod debias;
mod fit;
mod lp;

pub use bell::{bell_membership, bell_triple_of, BellTriple};
pub use debias::{debias, debias_gradient, debias_objective, debias_lower_bound, DebiasResult};
pub use fit::{iterative_fit, FitResult};
pub use lp::{solve_model_lp, solve_model_lp_with, LpOptions, LpSolution, LpStatus};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bases::TransitionTensor;
use crate::error::{Error, Result};

/// Largest number of guessing functions a solver will enumerate by default.
pub const DEFAULT_VARIABLE_CAP: usize = 1_000_000;

/// Number of guessing functions `d^k`, refusing anything above `cap`.
pub fn outcome_count(d: usize, k: usize, cap: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..k {
        n = n.checked_mul(d).filter(|&n| n <= cap).ok_or(Error::VariableCap {
            needed: (d as f64).powi(k as i32).min(usize::MAX as f64) as usize,
            cap,
        })?;
    }
    Ok(n)
}

/// Digit `b` of an encoded guessing function, i.e. the answer `x(b)`.
#[inline]
pub fn digit(index: usize, b: usize, d: usize) -> usize {
    (index / d.pow(b as u32)) % d
}

/// A guessing function `x`, mapping each basis to the outcome Alice names.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GuessFunction {
    d: usize,
    values: Vec<usize>,
}

impl GuessFunction {
    pub fn new(d: usize, values: Vec<usize>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v >= d) {
            return Err(Error::IndexOutOfRange(format!("outcome {v} for d = {d}")));
        }
        Ok(Self { d, values })
    }

    /// Decodes `index = Σ_b x(b)·d^b`.
    pub fn decode(index: usize, d: usize, k: usize) -> Result<Self> {
        let n = outcome_count(d, k, usize::MAX)?;
        if index >= n {
            return Err(Error::IndexOutOfRange(format!("guess index {index} >= {n}")));
        }
        Ok(Self { d, values: (0..k).map(|b| digit(index, b, d)).collect() })
    }

    pub fn encode(&self) -> usize {
        self.values.iter().rev().fold(0, |acc, &v| acc * self.d + v)
    }

    /// The answer for basis `b`.
    pub fn answer(&self, b: usize) -> usize {
        self.values[b]
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }
}

/// Weights below this are treated as zero when storing or emitting.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// A (sub)probability assignment on guessing functions, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    d: usize,
    k: usize,
    weights: BTreeMap<usize, f64>,
}

impl JointDistribution {
    pub fn new(d: usize, k: usize) -> Self {
        Self { d, k, weights: BTreeMap::new() }
    }

    /// From a dense vector indexed by encoded guessing function. Entries at or
    /// below [`WEIGHT_FLOOR`] are dropped; negative noise is clipped.
    pub fn from_dense(d: usize, k: usize, dense: &[f64]) -> Result<Self> {
        let n = outcome_count(d, k, usize::MAX)?;
        if dense.len() != n {
            return Err(Error::Shape(format!("{} weights for {n} guessing functions", dense.len())));
        }
        let weights = dense.iter().enumerate().filter(|(_, &w)| w > WEIGHT_FLOOR).map(|(i, &w)| (i, w)).collect();
        Ok(Self { d, k, weights })
    }

    /// Independent uniform answers: `p(x) = d^(−k)`.
    pub fn uniform(d: usize, k: usize, cap: usize) -> Result<Self> {
        let n = outcome_count(d, k, cap)?;
        let w = 1.0 / n as f64;
        Ok(Self { d, k, weights: (0..n).map(|i| (i, w)).collect() })
    }

    pub fn point_mass(x: &GuessFunction) -> Self {
        let mut jd = Self::new(x.d, x.values.len());
        jd.weights.insert(x.encode(), 1.0);
        jd
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.k
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights.get(&index).copied().unwrap_or(0.0)
    }

    /// Sets a weight; values at or below zero remove the entry.
    pub fn set(&mut self, index: usize, w: f64) {
        if w > 0.0 {
            self.weights.insert(index, w);
        } else {
            self.weights.remove(&index);
        }
    }

    /// Nonzero weights in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&i, &w)| (i, w))
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Pair marginal `Σ_x p(x) δ_{i,x(b)} δ_{j,x(c)}`.
    pub fn marginal(&self, b: usize, c: usize) -> Result<DMatrix<f64>> {
        if b >= self.k || c >= self.k {
            return Err(Error::IndexOutOfRange(format!("pair ({b},{c}) with k = {}", self.k)));
        }
        let mut m = DMatrix::zeros(self.d, self.d);
        for (&x, &w) in &self.weights {
            m[(digit(x, b, self.d), digit(x, c, self.d))] += w;
        }
        Ok(m)
    }

    /// Max-norm distance of the pair marginals (`b<c`) from `t`.
    pub fn marginal_residual(&self, t: &TransitionTensor) -> Result<f64> {
        if t.dim() != self.d || t.count() != self.k {
            return Err(Error::Shape("distribution and tensor disagree on d or k".into()));
        }
        let mut worst = 0.0f64;
        for b in 0..self.k {
            for c in (b + 1)..self.k {
                let m = self.marginal(b, c)?;
                worst = worst.max((m - t.pair(b, c)).abs().max());
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&JointDistributionDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<JointDistributionDoc>(s)?.try_into()
    }
}

/// Wire format: weights as `[index, p]` pairs sorted by index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointDistributionDoc {
    pub d: usize,
    pub k: usize,
    pub weights: Vec<(usize, f64)>,
}

impl From<&JointDistribution> for JointDistributionDoc {
    fn from(jd: &JointDistribution) -> Self {
        Self { d: jd.d, k: jd.k, weights: jd.iter().filter(|&(_, w)| w >= WEIGHT_FLOOR).collect() }
    }
}

impl TryFrom<JointDistributionDoc> for JointDistribution {
    type Error = Error;

    fn try_from(doc: JointDistributionDoc) -> Result<Self> {
        if doc.d < 2 || doc.k < 1 {
            return Err(Error::InvalidInput(format!("d = {}, k = {} out of range", doc.d, doc.k)));
        }
        let n = outcome_count(doc.d, doc.k, usize::MAX)?;
        let mut jd = JointDistribution::new(doc.d, doc.k);
        for (i, w) in doc.weights {
            if i >= n {
                return Err(Error::InvalidInput(format!("guess index {i} >= {n}")));
            }
            if !(w >= -1e-12) {
                return Err(Error::InvalidInput(format!("weight {w} at index {i} is negative")));
            }
            jd.set(i, w);
        }
        if jd.total() > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!("total weight {} exceeds 1", jd.total())));
        }
        Ok(jd)
    }
}
