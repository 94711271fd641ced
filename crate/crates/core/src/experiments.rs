//! Monte Carlo harness: game simulation, the Haar table rows, the qubit
//! one-third law and the Bell-triple samples.
//!
//! Every sample `j` of a run with seed `s` draws from its own generator seeded
//! with [`derive_seed`]`(s, j)`, and results are aggregated in sample order,
//! so reports do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bases::{haar_random_basis_set, transition_tensor, BasisSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{bell_membership, bell_triple_of, debias, digit, iterative_fit, solve_model_lp, BellTriple};
use crate::sdp::unambiguous_value;
use crate::strategy::Strategy;
use crate::C64;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

/// Per-sample seed: splitmix64 over the run seed and the sample index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(seed) ^ index)
}

/// Wilson score interval at 95% for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {jobs} workers: {e}")))
}

fn run_samples<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    thread_pool(jobs)?.install(|| (0..n).into_par_iter().map(f).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub basis: usize,
    /// The king's outcome `i`.
    pub king: usize,
    /// Alice's measurement outcome, an encoded guessing function.
    pub guess: usize,
    /// Her answer `x(b)`.
    pub answer: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameTranscript {
    pub rounds: usize,
    pub failures: usize,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl GameTranscript {
    pub fn failure_rate(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.failures as f64 / self.rounds as f64
        }
    }
}

/// Sampling distribution over the POVM elements, as cumulative weights.
fn outcome_cdf(st: &Strategy, psi: &DVector<C64>) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut cdf = Vec::with_capacity(st.povm().len());
    for e in st.povm() {
        let mut w = e.expectation(psi);
        if w < -1e-12 {
            return Err(Error::Numerical(format!("negative outcome probability {w:.3e} for guess {}", e.index)));
        }
        w = w.max(0.0);
        acc += w;
        cdf.push(acc);
    }
    if (acc - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("outcome probabilities sum to {acc}, strategy is not a POVM")));
    }
    Ok(cdf)
}

fn sample_cdf<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Plays `rounds` rounds of the game: the king picks a basis uniformly and
/// measures the first system, Alice measures her POVM on the collapsed state
/// and answers `x(b)`.
pub fn run_game(bs: &BasisSet, st: &Strategy, rounds: usize, seed: u64) -> Result<GameTranscript> {
    let d = bs.dim();
    let k = bs.count();
    if st.dim() != d || st.count() != k {
        return Err(Error::Shape("strategy shape differs from the basis set".into()));
    }
    if st.povm().is_empty() {
        return Err(Error::InvalidInput("strategy has no POVM elements".into()));
    }
    let st_t = st.s().transpose();
    let norm = st.state_norm();
    let mut king_cdf = Vec::with_capacity(k);
    let mut alice_cdf = Vec::with_capacity(k * d);
    for b in 0..k {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(d);
        for i in 0..d {
            let phi = bs.vector(b, i);
            let collapsed = linalg::vec_row_major(&(phi * phi.adjoint() * &st_t));
            let prob = collapsed.norm_squared() / norm;
            acc += prob;
            cdf.push(acc);
            if prob > 0.0 {
                alice_cdf.push(Some(outcome_cdf(st, &(collapsed.unscale((prob * norm).sqrt())))?));
            } else {
                alice_cdf.push(None);
            }
        }
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("king's outcome probabilities sum to {acc}")));
        }
        king_cdf.push(cdf);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(rounds);
    let mut failures = 0;
    for _ in 0..rounds {
        let basis = rng.random_range(0..k);
        let king = sample_cdf(&king_cdf[basis], &mut rng);
        let cdf = alice_cdf[basis * d + king]
            .as_ref()
            .ok_or_else(|| Error::Numerical("sampled a zero-probability outcome".into()))?;
        let guess = st.povm()[sample_cdf(cdf, &mut rng)].index;
        let answer = digit(guess, basis, d);
        if answer != king {
            failures += 1;
        }
        records.push(RoundRecord { basis, king, guess, answer });
    }
    Ok(GameTranscript { rounds, failures, seed, records })
}

/// One row of the Haar table: `k = d + 1` random bases per sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub d: usize,
    pub k: usize,
    pub samples: usize,
    /// Samples whose linear program found a classical model.
    pub feasible: usize,
    pub p_s: f64,
    pub p_s_lo: f64,
    pub p_s_hi: f64,
    pub e_s: f64,
    pub e_s_stderr: f64,
    pub seed: u64,
    pub seconds: f64,
    pub max_sdp_gap: f64,
    pub unconverged_sdp: usize,
    /// Largest marginal residual among the feasible certificates.
    pub max_lp_residual: f64,
}

pub const TABLE_CSV_HEADER: &str = "d,k,N,p_s,p_s_lo,p_s_hi,e_s,e_s_stderr,seed,seconds";

impl ExperimentReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3}",
            self.d,
            self.k,
            self.samples,
            self.p_s,
            self.p_s_lo,
            self.p_s_hi,
            self.e_s,
            self.e_s_stderr,
            self.seed,
            self.seconds
        )
    }
}

struct TableSample {
    feasible: bool,
    lp_residual: f64,
    value: f64,
    gap: f64,
    converged: bool,
}

pub fn estimate_table_row(d: usize, samples: usize, seed: u64, jobs: usize) -> Result<ExperimentReport> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let k = d + 1;
    let start = Instant::now();
    let results = run_samples(samples, jobs, |j| {
        let bs = haar_random_basis_set(d, k, derive_seed(seed, j as u64))?;
        let lp = solve_model_lp(&transition_tensor(&bs))?;
        let sdp = unambiguous_value(&bs)?;
        Ok(TableSample {
            feasible: lp.is_feasible(),
            lp_residual: if lp.is_feasible() { lp.marginal_residual } else { 0.0 },
            value: sdp.value,
            gap: sdp.gap,
            converged: sdp.converged,
        })
    })?;
    let feasible = results.iter().filter(|r| r.feasible).count();
    let n = samples.max(1) as f64;
    let e_s = results.iter().map(|r| r.value).sum::<f64>() / n;
    let var = if samples > 1 {
        results.iter().map(|r| (r.value - e_s).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let (p_s_lo, p_s_hi) = wilson_interval(feasible, samples);
    Ok(ExperimentReport {
        d,
        k,
        samples,
        feasible,
        p_s: feasible as f64 / n,
        p_s_lo,
        p_s_hi,
        e_s,
        e_s_stderr: (var / n).sqrt(),
        seed,
        seconds: start.elapsed().as_secs_f64(),
        max_sdp_gap: results.iter().map(|r| r.gap).fold(0.0, f64::max),
        unconverged_sdp: results.iter().filter(|r| !r.converged).count(),
        max_lp_residual: results.iter().map(|r| r.lp_residual).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, Default)]
pub struct QubitOptions {
    /// Use the same random basis three times.
    pub identical: bool,
    /// Also solve the linear program on every sample and count disagreements
    /// with the tetrahedron test away from its boundary.
    pub check_lp: bool,
    pub jobs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QubitReport {
    pub samples: usize,
    pub classical: usize,
    pub fraction: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    /// Disagreements with the linear program (only with `check_lp`).
    pub lp_disagreements: Option<usize>,
    /// Samples within `1e-7` of a facet, excluded from the comparison.
    pub boundary_samples: Option<usize>,
}

fn qubit_sample(seed: u64, j: usize, identical: bool) -> Result<BasisSet> {
    let bs = haar_random_basis_set(2, 3, derive_seed(seed, j as u64))?;
    if identical {
        bs.select(&[0, 0, 0])
    } else {
        Ok(bs)
    }
}

/// Fraction of Haar-random qubit triples that admit a classical model.
pub fn qubit_third(samples: usize, seed: u64) -> Result<QubitReport> {
    qubit_third_with(samples, seed, &QubitOptions::default())
}

pub fn qubit_third_with(samples: usize, seed: u64, opts: &QubitOptions) -> Result<QubitReport> {
    let results = run_samples(samples, opts.jobs, |j| {
        let bs = qubit_sample(seed, j, opts.identical)?;
        let tr = bell_triple_of(&bs)?;
        let member = bell_membership(&tr);
        let lp = if opts.check_lp {
            let near = tr.margin().abs() <= 1e-7;
            let feasible = solve_model_lp(&transition_tensor(&bs))?.is_feasible();
            Some((near, feasible != member))
        } else {
            None
        };
        Ok((member, lp))
    })?;
    let classical = results.iter().filter(|r| r.0).count();
    let (lo, hi) = wilson_interval(classical, samples);
    let (lp_disagreements, boundary_samples) = if opts.check_lp {
        let near = results.iter().filter(|r| r.1.is_some_and(|(n, _)| n)).count();
        let bad = results.iter().filter(|r| r.1.is_some_and(|(n, dis)| !n && dis)).count();
        (Some(bad), Some(near))
    } else {
        (None, None)
    };
    Ok(QubitReport {
        samples,
        classical,
        fraction: classical as f64 / samples.max(1) as f64,
        lo,
        hi,
        seed,
        lp_disagreements,
        boundary_samples,
    })
}

/// Sampled Bell triples with their membership flag.
pub fn fig1_samples(samples: usize, seed: u64, jobs: usize) -> Result<Vec<(BellTriple, bool)>> {
    run_samples(samples, jobs, |j| {
        let tr = bell_triple_of(&qubit_sample(seed, j, false)?)?;
        Ok((tr, bell_membership(&tr)))
    })
}

pub const FIG1_CSV_HEADER: &str = "q_ab,q_bc,q_ca,classical";

pub fn fig1_csv(samples: &[(BellTriple, bool)]) -> String {
    let mut out = String::from(FIG1_CSV_HEADER);
    out.push('\n');
    for (tr, classical) in samples {
        let _ = writeln!(out, "{:.9},{:.9},{:.9},{}", tr.q_ab, tr.q_bc, tr.q_ca, u8::from(*classical));
    }
    out
}

/// One random start of the debias-then-fit workflow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DebiasFitRun {
    pub seed: u64,
    pub initial_objective: f64,
    pub objective: f64,
    /// `objective − (k(k−1)/2)/d²`.
    pub excess: f64,
    pub steps: usize,
    pub monotone: bool,
    pub fit_residual: Option<f64>,
}

/// Debiases `samples` Haar sets with `k = d + 1` and, if `fit_sweeps > 0`,
/// fits a joint distribution to the resulting pair marginals.
pub fn debias_then_fit(
    d: usize,
    samples: usize,
    seed: u64,
    max_steps: usize,
    fit_sweeps: usize,
    jobs: usize,
) -> Result<Vec<DebiasFitRun>> {
    let k = d + 1;
    let bound = crate::model::debias_lower_bound(d, k);
    run_samples(samples, jobs, |j| {
        let s = derive_seed(seed, j as u64);
        let bs = haar_random_basis_set(d, k, s)?;
        let res = debias(&bs, max_steps, 1e-12)?;
        let monotone = res.history.windows(2).all(|w| w[1] <= w[0]);
        let fit_residual = if fit_sweeps > 0 {
            Some(iterative_fit(&transition_tensor(&res.basis_set), fit_sweeps, 1e-6)?.residual)
        } else {
            None
        };
        Ok(DebiasFitRun {
            seed: s,
            initial_objective: res.initial_objective,
            objective: res.objective,
            excess: res.objective - bound,
            steps: res.steps,
            monotone,
            fit_residual,
        })
    })
}
