//! Qubit case: three dichotomic variables and Bell's tetrahedron.

use serde::{Deserialize, Serialize};

use crate::bases::{transition_tensor, BasisSet};
use crate::error::{Error, Result};

/// The pair values `p_ab(1,1)`, `p_bc(1,1)`, `p_ca(1,1)` of three qubit bases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellTriple {
    pub q_ab: f64,
    pub q_bc: f64,
    pub q_ca: f64,
}

impl BellTriple {
    pub fn new(q_ab: f64, q_bc: f64, q_ca: f64) -> Result<Self> {
        for q in [q_ab, q_bc, q_ca] {
            if !(-1e-12..=0.5 + 1e-12).contains(&q) {
                return Err(Error::InvalidInput(format!("pair value {q} outside [0, 1/2]")));
            }
        }
        Ok(Self { q_ab, q_bc, q_ca })
    }

    /// Correlators `C = 4q − 1` of the ±1-valued variables.
    pub fn correlators(&self) -> [f64; 3] {
        [4.0 * self.q_ab - 1.0, 4.0 * self.q_bc - 1.0, 4.0 * self.q_ca - 1.0]
    }

    /// The four facet values `1 ± C_ab ± C_bc ± C_ca` (even number of minus
    /// signs); the triple is classical iff all are non-negative.
    pub fn facets(&self) -> [f64; 4] {
        let [a, b, c] = self.correlators();
        [1.0 + a + b + c, 1.0 + a - b - c, 1.0 - a + b - c, 1.0 - a - b + c]
    }

    /// Signed distance-like margin: the smallest facet value.
    pub fn margin(&self) -> f64 {
        self.facets().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Whether a joint distribution of three uniform bits has these pair values.
pub fn bell_membership(tr: &BellTriple) -> bool {
    tr.margin() >= -1e-12
}

/// `(p_12(1,1), p_23(1,1), p_31(1,1))` of a `d = 2`, `k = 3` set.
pub fn bell_triple_of(bs: &BasisSet) -> Result<BellTriple> {
    if bs.dim() != 2 || bs.count() != 3 {
        return Err(Error::Shape(format!("need d = 2, k = 3; got d = {}, k = {}", bs.dim(), bs.count())));
    }
    let t = transition_tensor(bs);
    Ok(BellTriple { q_ab: t.get(0, 1, 0, 0), q_bc: t.get(1, 2, 0, 0), q_ca: t.get(2, 0, 0, 0) })
}
