//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs as part of `cargo test`; failures are reported but only turn into a
//! non-zero exit status when `MEANKING_ACCEPTANCE_STRICT` is set.

use std::process::ExitCode;
use std::time::Instant;

use meanking::bases::{
    haar_random_basis_set, mub_basis_set, rank_of_span, transition_tensor, DEFAULT_RANK_TOL,
};
use meanking::experiments::{debias_then_fit, derive_seed, estimate_table_row, qubit_third, run_game, ExperimentReport};
use meanking::model::{bell_membership, solve_model_lp, BellTriple, GuessFunction};
use meanking::sdp::check_sdp_lp_consistency;
use meanking::strategy::{build_strategy, extract_classical_model, hatted, reduced_state, SafeVectorSolver};
use meanking::{BasisSet, Result, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
}

/// Solver statistics gathered along the way for the hygiene criterion.
#[derive(Default)]
struct Hygiene {
    max_sdp_gap: f64,
    unconverged_sdp: usize,
    sdp_instances: usize,
    max_lp_residual: f64,
    lp_certificates: usize,
}

impl Hygiene {
    fn lp(&mut self, residual: f64) {
        self.max_lp_residual = self.max_lp_residual.max(residual);
        self.lp_certificates += 1;
    }

    fn table(&mut self, rep: &ExperimentReport) {
        self.max_sdp_gap = self.max_sdp_gap.max(rep.max_sdp_gap);
        self.unconverged_sdp += rep.unconverged_sdp;
        self.sdp_instances += rep.samples;
        self.max_lp_residual = self.max_lp_residual.max(rep.max_lp_residual);
        self.lp_certificates += rep.feasible;
    }
}

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

fn table_row(d: usize, n: usize, hy: &mut Hygiene) -> Result<ExperimentReport> {
    let rep = estimate_table_row(d, n, SEED, 1)?;
    hy.table(&rep);
    Ok(rep)
}

fn table_detail(rep: &ExperimentReport) -> String {
    format!(
        "N={} feasible={} p_S={:.4} [{:.4}, {:.4}] E_S={:.4}±{:.4} ({:.0}s)",
        rep.samples, rep.feasible, rep.p_s, rep.p_s_lo, rep.p_s_hi, rep.e_s, rep.e_s_stderr, rep.seconds
    )
}

fn criterion_1(hy: &mut Hygiene) -> Result<(bool, String)> {
    let rep = table_row(2, 10_000, hy)?;
    let pass = within(rep.p_s, 0.3334, 0.015) && within(rep.e_s, 0.6666, 0.01);
    Ok((pass, table_detail(&rep)))
}

fn criterion_2(hy: &mut Hygiene) -> Result<(bool, String)> {
    let rep = table_row(3, 10_000, hy)?;
    let pass = (0.0004..=0.0030).contains(&rep.p_s) && within(rep.e_s, 0.398, 0.01);
    Ok((pass, table_detail(&rep)))
}

fn criterion_3(hy: &mut Hygiene) -> Result<(bool, String)> {
    let rep = table_row(4, 200, hy)?;
    let pass = rep.feasible == 0 && within(rep.e_s, 0.34, 0.03);
    Ok((pass, table_detail(&rep)))
}

fn criterion_4() -> Result<(bool, String)> {
    let rep = qubit_third(100_000, SEED)?;
    let pass = within(rep.fraction, 1.0 / 3.0, 0.006);
    Ok((pass, format!("{} of {} classical, fraction {:.5}", rep.classical, rep.samples, rep.fraction)))
}

/// `Σ_b Φ̂_b^{x(b)} − ((k−1)/d)Ω`.
fn closed_form_eta(bs: &BasisSet, x: &GuessFunction) -> nalgebra::DVector<C64> {
    let hv = hatted(bs);
    let (d, k) = (bs.dim(), bs.count());
    let mut eta = hv.omega() * C64::new(-((k - 1) as f64) / d as f64, 0.0);
    for b in 0..k {
        eta += hv.vector(b, x.answer(b));
    }
    eta
}

fn criterion_5(hy: &mut Hygiene) -> Result<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [2, 3, 5] {
        let k = d + 1;
        let bs = mub_basis_set(d, k)?;
        let lp = solve_model_lp(&transition_tensor(&bs))?;
        hy.lp(lp.marginal_residual);
        let st = build_strategy(&bs, &lp.jd)?;
        let tr = run_game(&bs, &st, 10_000, derive_seed(SEED, d as u64))?;
        let completeness = st.completeness_residual();
        let solver = SafeVectorSolver::new(&hatted(&bs), &rank_of_span(&bs, DEFAULT_RANK_TOL))?;
        let mut eta_err = 0.0f64;
        for index in 0..d.pow(k as u32) {
            let x = GuessFunction::decode(index, d, k)?;
            let eta = solver.solve(&x).map(|sv| sv.eta);
            eta_err = match eta {
                Some(eta) => eta_err.max((eta - closed_form_eta(&bs, &x)).camax()),
                None => f64::INFINITY,
            };
        }
        pass &= tr.failures == 0 && completeness < 1e-9 && eta_err < 1e-8;
        parts.push(format!("d={d}: failures {} completeness {completeness:.1e} eta {eta_err:.1e}", tr.failures));
    }
    Ok((pass, parts.join("; ")))
}

/// Collects `want` LP-feasible, tomographically complete Haar sets and checks
/// the model survives the trip through a strategy.
fn round_trip(d: usize, want: usize, hy: &mut Hygiene) -> Result<(bool, String)> {
    let mut found = 0;
    let mut tried = 0u64;
    let mut marg_err = 0.0f64;
    let mut state_err = 0.0f64;
    let ident = DMatrix::<C64>::identity(d, d) / C64::new(d as f64, 0.0);
    while found < want && tried < 200_000 {
        let bs = haar_random_basis_set(d, d + 1, derive_seed(SEED + 600, tried))?;
        tried += 1;
        if !rank_of_span(&bs, DEFAULT_RANK_TOL).is_complete() {
            continue;
        }
        let t = transition_tensor(&bs);
        let lp = solve_model_lp(&t)?;
        if !lp.is_feasible() {
            continue;
        }
        hy.lp(lp.marginal_residual);
        found += 1;
        let st = build_strategy(&bs, &lp.jd)?;
        let back = extract_classical_model(&bs, &st)?;
        marg_err = marg_err.max(back.marginal_residual(&t)?);
        state_err = state_err.max((reduced_state(&st) - &ident).camax());
    }
    let pass = found == want && marg_err < 1e-6 && state_err < 1e-6;
    Ok((pass, format!("d={d}: {found} instances from {tried} samples, marginals {marg_err:.1e}, state {state_err:.1e}")))
}

fn criterion_6(hy: &mut Hygiene) -> Result<(bool, String)> {
    let (a, da) = round_trip(2, 100, hy)?;
    let (b, db) = round_trip(3, 20, hy)?;
    Ok((a && b, format!("{da}; {db}")))
}

/// Three uniform bits with `P(a = b = 1) = q_ab` etc. are parametrised by
/// the triple correlator `T`; each atom gives a bound on `T`. Returns the
/// width of the feasible `T` interval (negative when empty).
fn eight_atom_slack(q: [f64; 3]) -> f64 {
    let c = q.map(|v| 4.0 * v - 1.0);
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for atom in 0..8 {
        let s: Vec<f64> = (0..3).map(|a| if atom >> a & 1 == 1 { -1.0 } else { 1.0 }).collect();
        // 8·p = 1 + s_a s_b C_ab + s_b s_c C_bc + s_c s_a C_ca + s_a s_b s_c T ≥ 0
        let e = 1.0 + s[0] * s[1] * c[0] + s[1] * s[2] * c[1] + s[2] * s[0] * c[2];
        if s[0] * s[1] * s[2] > 0.0 {
            lower = lower.max(-e);
        } else {
            upper = upper.min(e);
        }
    }
    upper - lower
}

fn criterion_7() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut disagreements = 0;
    let mut band = 0;
    for _ in 0..10_000 {
        let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..=0.5));
        let slack = eight_atom_slack(q);
        if slack.abs() <= 1e-7 {
            band += 1;
            continue;
        }
        if bell_membership(&BellTriple::new(q[0], q[1], q[2])?) != (slack > 0.0) {
            disagreements += 1;
        }
    }
    let mut consistent = 0;
    for j in 0..1000 {
        let bs = haar_random_basis_set(2, 3, derive_seed(SEED + 700, j))?;
        if check_sdp_lp_consistency(&bs)? {
            consistent += 1;
        }
    }
    let pass = disagreements == 0 && consistent == 1000;
    Ok((
        pass,
        format!("bell: {disagreements} disagreements ({band} in band); sdp/lp consistent on {consistent}/1000"),
    ))
}

fn criterion_8(hy: &Hygiene) -> Result<(bool, String)> {
    let runs = debias_then_fit(6, 20, SEED, 20_000, 0, 1)?;
    let monotone = runs.iter().all(|r| r.monotone);
    let close = runs.iter().filter(|r| r.excess <= 1e-3).count();
    let best = runs.iter().map(|r| r.excess).fold(f64::INFINITY, f64::min);
    let sdp_ok = hy.unconverged_sdp == 0 && hy.max_sdp_gap < 1e-6;
    let lp_ok = hy.max_lp_residual < 1e-7;
    let pass = sdp_ok && lp_ok && monotone && 2 * close >= runs.len();
    Ok((
        pass,
        format!(
            "sdp gap {:.2e} over {} instances ({} unconverged); lp residual {:.1e} over {} certificates; \
             debias monotone={monotone}, within 1e-3 on {close}/{} (best excess {best:.2e})",
            hy.max_sdp_gap,
            hy.sdp_instances,
            hy.unconverged_sdp,
            hy.max_lp_residual,
            hy.lp_certificates,
            runs.len()
        ),
    ))
}

fn record(lines: &mut Vec<Line>, id: usize, res: Result<(bool, String)>, start: Instant) {
    let (pass, detail) = match res {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let line = Line { id, pass, detail: format!("{detail} [{:.1}s]", start.elapsed().as_secs_f64()) };
    println!("{} criterion {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.id, line.detail);
    lines.push(line);
}

fn main() -> ExitCode {
    let mut hy = Hygiene::default();
    let mut lines = Vec::new();
    let t = Instant::now();
    record(&mut lines, 1, criterion_1(&mut hy), t);
    let t = Instant::now();
    record(&mut lines, 2, criterion_2(&mut hy), t);
    let t = Instant::now();
    record(&mut lines, 3, criterion_3(&mut hy), t);
    let t = Instant::now();
    record(&mut lines, 4, criterion_4(), t);
    let t = Instant::now();
    record(&mut lines, 5, criterion_5(&mut hy), t);
    let t = Instant::now();
    record(&mut lines, 6, criterion_6(&mut hy), t);
    let t = Instant::now();
    record(&mut lines, 7, criterion_7(), t);
    let t = Instant::now();
    record(&mut lines, 8, criterion_8(&hy), t);

    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| l.id.to_string()).collect();
    println!("acceptance: {} of {} criteria pass", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var_os("MEANKING_ACCEPTANCE_STRICT").is_some() {
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}
