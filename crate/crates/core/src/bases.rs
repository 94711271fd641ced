//! Collections of orthonormal bases: construction, sampling, classification
//! and transition probabilities.

use nalgebra::{DMatrix, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Orthonormality tolerance for generated sets.
pub const ORTHONORMAL_TOL: f64 = 1e-12;
/// Orthonormality tolerance applied when reading sets from files.
pub const READ_TOL: f64 = 1e-8;
/// Default relative singular-value cutoff for [`rank_of_span`].
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Gram-matrix cutoff used by the safe-vector and SDP solvers. It equals a
/// `1e-7` relative cutoff on the hatted vectors themselves, which is still far
/// above rounding noise but keeps ill-conditioned random sets solvable.
pub const SOLVER_RANK_TOL: f64 = 1e-14;

/// `k` orthonormal bases of `C^d`. Basis `b` is stored as a unitary whose
/// columns are the basis vectors `Φ_b^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    d: usize,
    unitaries: Vec<DMatrix<C64>>,
}

impl BasisSet {
    /// Builds a set from unitaries (columns are the basis vectors), checking
    /// orthonormality to `tol`.
    pub fn from_unitaries(unitaries: Vec<DMatrix<C64>>, tol: f64) -> Result<Self> {
        if unitaries.is_empty() {
            return Err(Error::InvalidCount(0));
        }
        let d = unitaries[0].nrows();
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        for (b, u) in unitaries.iter().enumerate() {
            if u.nrows() != d || u.ncols() != d {
                return Err(Error::Shape(format!("basis {b} is {}x{}, expected {d}x{d}", u.nrows(), u.ncols())));
            }
            let deviation = linalg::orthonormality_deviation(u);
            if !(deviation <= tol) {
                return Err(Error::NotOrthonormal { basis: b, deviation });
            }
        }
        Ok(Self { d, unitaries })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.unitaries.len()
    }

    /// The unitary of basis `b`.
    pub fn unitary(&self, b: usize) -> &DMatrix<C64> {
        &self.unitaries[b]
    }

    pub fn unitaries(&self) -> &[DMatrix<C64>] {
        &self.unitaries
    }

    /// Basis vector `Φ_b^i`.
    pub fn vector(&self, b: usize, i: usize) -> DVectorView<'_, C64> {
        self.unitaries[b].column(i)
    }

    /// Applies `u` to every basis vector.
    pub fn rotated(&self, u: &DMatrix<C64>) -> Result<Self> {
        let unitaries = self.unitaries.iter().map(|m| u * m).collect();
        Self::from_unitaries(unitaries, 1e-10)
    }

    /// A new set made of the bases listed in `which` (repeats allowed).
    pub fn select(&self, which: &[usize]) -> Result<Self> {
        let mut unitaries = Vec::with_capacity(which.len());
        for &b in which {
            let u = self
                .unitaries
                .get(b)
                .ok_or_else(|| Error::IndexOutOfRange(format!("basis {b} of {}", self.count())))?;
            unitaries.push(u.clone());
        }
        Self::from_unitaries(unitaries, f64::INFINITY)
    }

    /// `⟨Φ_b^i|Φ_c^j⟩` for all `i,j`.
    pub fn overlaps(&self, b: usize, c: usize) -> DMatrix<C64> {
        self.unitaries[b].adjoint() * &self.unitaries[c]
    }

    /// Largest orthonormality deviation over the bases.
    pub fn orthonormality_deviation(&self) -> f64 {
        self.unitaries.iter().map(linalg::orthonormality_deviation).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BasisSetDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: BasisSetDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// Wire format of a [`BasisSet`]: `bases[b][i]` is vector `i` of basis `b`
/// given as `d` pairs `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSetDoc {
    pub d: usize,
    pub k: usize,
    pub bases: Vec<Vec<Vec<[f64; 2]>>>,
}

impl From<&BasisSet> for BasisSetDoc {
    fn from(bs: &BasisSet) -> Self {
        let bases = bs
            .unitaries
            .iter()
            .map(|u| (0..bs.d).map(|i| u.column(i).iter().map(|z| [z.re, z.im]).collect()).collect())
            .collect();
        Self { d: bs.d, k: bs.count(), bases }
    }
}

impl TryFrom<BasisSetDoc> for BasisSet {
    type Error = Error;

    fn try_from(doc: BasisSetDoc) -> Result<Self> {
        let BasisSetDoc { d, k, bases } = doc;
        if d < 2 {
            return Err(Error::InvalidInput(format!("d = {d} violates d >= 2")));
        }
        if k < 1 || bases.len() != k {
            return Err(Error::InvalidInput(format!("k = {k} but {} bases given", bases.len())));
        }
        let mut unitaries = Vec::with_capacity(k);
        for (b, basis) in bases.iter().enumerate() {
            if basis.len() != d || basis.iter().any(|v| v.len() != d) {
                return Err(Error::InvalidInput(format!("basis {b} must hold {d} vectors of {d} components")));
            }
            unitaries.push(DMatrix::from_fn(d, d, |row, col| C64::new(basis[col][row][0], basis[col][row][1])));
        }
        BasisSet::from_unitaries(unitaries, READ_TOL).map_err(|e| match e {
            Error::NotOrthonormal { basis, deviation } => Error::InvalidInput(format!(
                "orthonormality violated in basis {basis}: deviation {deviation:.3e} exceeds {READ_TOL:e}"
            )),
            other => other,
        })
    }
}

fn check_shape(d: usize, k: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if k < 1 {
        return Err(Error::InvalidCount(k));
    }
    Ok(())
}

/// `k` independent Haar-random bases of `C^d`, deterministic in `seed`.
pub fn haar_random_basis_set(d: usize, k: usize, seed: u64) -> Result<BasisSet> {
    check_shape(d, k)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let unitaries = (0..k).map(|_| linalg::haar_unitary(d, &mut rng)).collect();
    BasisSet::from_unitaries(unitaries, ORTHONORMAL_TOL)
}

/// Eigenbases of `σ_z`, `σ_x`, `σ_y`, in that order, each listing the +1
/// eigenvector first.
pub fn pauli_bases() -> BasisSet {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = |x: f64| C64::new(x, 0.0);
    let z = DMatrix::from_row_slice(2, 2, &[r(1.0), r(0.0), r(0.0), r(1.0)]);
    let x = DMatrix::from_row_slice(2, 2, &[r(s), r(s), r(s), r(-s)]);
    let y = DMatrix::from_row_slice(2, 2, &[r(s), r(s), C64::new(0.0, s), C64::new(0.0, -s)]);
    BasisSet::from_unitaries(vec![z, x, y], ORTHONORMAL_TOL).expect("Pauli eigenbases are orthonormal")
}

/// Qubit basis whose first vector has Bloch vector `n` (normalised); the
/// second vector points to `-n`.
pub fn bloch_basis(n: [f64; 3]) -> DMatrix<C64> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let (x, y, z) = (n[0] / len, n[1] / len, n[2] / len);
    let theta = z.clamp(-1.0, 1.0).acos();
    let phi = y.atan2(x);
    let up = [C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phi)];
    let down = [-up[1].conj(), up[0].conj()];
    DMatrix::from_row_slice(2, 2, &[up[0], down[0], up[1], down[1]])
}

pub fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|p| p * p <= n).all(|p| !n.is_multiple_of(p))
}

/// The first `k` bases of the standard mutually unbiased family for prime
/// `d`: the computational basis followed by the bases with components
/// `ω^(a·m² + i·m)/√d`, `a = 0..d`. For `d = 2` this is [`pauli_bases`].
pub fn mub_basis_set(d: usize, k: usize) -> Result<BasisSet> {
    if !is_prime(d) {
        return Err(Error::NotPrime(d));
    }
    if k < 1 || k > d + 1 {
        return Err(Error::InvalidCount(k));
    }
    if d == 2 {
        return pauli_bases().select(&(0..k).collect::<Vec<_>>());
    }
    let norm = 1.0 / (d as f64).sqrt();
    let mut unitaries = vec![DMatrix::identity(d, d)];
    for a in 0..d {
        // column i, row m
        let u = DMatrix::from_fn(d, d, |m, i| {
            let phase = ((a * m * m + i * m) % d) as f64 * 2.0 * PI / d as f64;
            C64::from_polar(norm, phase)
        });
        unitaries.push(u);
    }
    unitaries.truncate(k);
    BasisSet::from_unitaries(unitaries, ORTHONORMAL_TOL)
}

/// Pairwise joint probabilities `p[b][c][i][j] = |⟨Φ_b^i|Φ_c^j⟩|²/d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTensor {
    d: usize,
    k: usize,
    p: Vec<f64>,
}

impl TransitionTensor {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> f64 {
        let d = self.d;
        self.p[((b * self.k + c) * d + i) * d + j]
    }

    /// The `d×d` joint distribution of the pair `(b, c)`.
    pub fn pair(&self, b: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.get(b, c, i, j))
    }

    /// Builds a tensor from explicit pair tables `pairs[b][c]`.
    pub fn from_pairs(d: usize, pairs: &[Vec<DMatrix<f64>>]) -> Result<Self> {
        let k = pairs.len();
        let mut p = vec![0.0; k * k * d * d];
        for b in 0..k {
            if pairs[b].len() != k {
                return Err(Error::Shape(format!("row {b} of pair tables has {} entries", pairs[b].len())));
            }
            for c in 0..k {
                let m = &pairs[b][c];
                if m.shape() != (d, d) {
                    return Err(Error::Shape(format!("pair ({b},{c}) table is {:?}", m.shape())));
                }
                for i in 0..d {
                    for j in 0..d {
                        p[((b * k + c) * d + i) * d + j] = m[(i, j)];
                    }
                }
            }
        }
        Ok(Self { d, k, p })
    }
}

pub fn transition_tensor(bs: &BasisSet) -> TransitionTensor {
    let d = bs.dim();
    let k = bs.count();
    let mut p = vec![0.0; k * k * d * d];
    let inv_d = 1.0 / d as f64;
    for b in 0..k {
        for c in 0..k {
            let w = bs.overlaps(b, c);
            for i in 0..d {
                for j in 0..d {
                    p[((b * k + c) * d + i) * d + j] = w[(i, j)].norm_sqr() * inv_d;
                }
            }
        }
    }
    TransitionTensor { d, k, p }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanLabel {
    Degenerate,
    NonDegenerate,
    TomographicallyComplete,
}

impl std::fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpanLabel::Degenerate => "degenerate",
            SpanLabel::NonDegenerate => "non-degenerate",
            SpanLabel::TomographicallyComplete => "tomographically-complete",
        })
    }
}

/// Dimension of the real span of the basis projectors and its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanClassification {
    pub rank: usize,
    pub label: SpanLabel,
    pub d: usize,
    pub k: usize,
}

impl SpanClassification {
    pub fn expected_rank(&self) -> usize {
        self.k * (self.d - 1) + 1
    }

    /// `rank = k(d−1)+1`; true also when the stronger label was reported.
    pub fn is_non_degenerate(&self) -> bool {
        self.rank == self.expected_rank()
    }

    pub fn is_complete(&self) -> bool {
        self.rank == self.d * self.d
    }
}

/// Numerical rank of the Gram matrix `M_{bi,cj} = |⟨Φ_b^i|Φ_c^j⟩|²`.
pub fn rank_of_span(bs: &BasisSet, tol: f64) -> SpanClassification {
    let d = bs.dim();
    let k = bs.count();
    let n = k * d;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for b in 0..k {
        for c in 0..k {
            let w = bs.overlaps(b, c);
            for i in 0..d {
                for j in 0..d {
                    gram[(b * d + i, c * d + j)] = w[(i, j)].norm_sqr();
                }
            }
        }
    }
    let sv = gram.singular_values();
    let rank = linalg::numerical_rank(&sv, tol);
    let label = if rank == d * d {
        SpanLabel::TomographicallyComplete
    } else if rank == k * (d - 1) + 1 {
        SpanLabel::NonDegenerate
    } else {
        SpanLabel::Degenerate
    };
    SpanClassification { rank, label, d, k }
}

/// Max deviation of the transition probabilities from the unbiased values
/// `δ_bc δ_ij/d + (1−δ_bc)/d²`.
pub fn unbiasedness_check(bs: &BasisSet) -> f64 {
    let t = transition_tensor(bs);
    let d = bs.dim();
    let k = bs.count();
    let df = d as f64;
    let mut dev = 0.0f64;
    for b in 0..k {
        for c in 0..k {
            for i in 0..d {
                for j in 0..d {
                    let target = if b == c {
                        if i == j {
                            1.0 / df
                        } else {
                            0.0
                        }
                    } else {
                        1.0 / (df * df)
                    };
                    dev = dev.max((t.get(b, c, i, j) - target).abs());
                }
            }
        }
    }
    dev
}
