//! Subcommand implementations. Each returns the primary output and whether a
//! demanded result was found.

use std::fs;

use log::info;
use meanking::bases::{
    haar_random_basis_set, mub_basis_set, pauli_bases, rank_of_span, transition_tensor, unbiasedness_check,
    BasisSetDoc, DEFAULT_RANK_TOL,
};
use meanking::experiments::{
    estimate_table_row, fig1_csv, fig1_samples, qubit_third_with, run_game, QubitOptions, TABLE_CSV_HEADER,
};
use meanking::model::{
    debias, debias_lower_bound, iterative_fit, solve_model_lp_with, JointDistributionDoc, LpOptions,
};
use meanking::sdp::{unambiguous_value_with, SdpOptions};
use meanking::strategy::{build_strategy, verify_strategy};
use meanking::{BasisSet, Error, Result, Strategy};
use serde_json::json;

use crate::config::{Format, RunConfig, UsageError};

pub struct Output {
    pub text: String,
    /// A demanded result (model, strategy) does not exist.
    pub none: bool,
}

impl Output {
    fn found(text: String) -> Self {
        Self { text, none: false }
    }
}

pub enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CmdResult = std::result::Result<Output, Failure>;

fn read_input(cfg: &RunConfig) -> Result<Option<String>> {
    cfg.input.as_ref().map(fs::read_to_string).transpose().map_err(Error::from)
}

fn dim_and_count(cfg: &RunConfig) -> (usize, usize) {
    let d = cfg.dim.unwrap_or(2);
    (d, cfg.bases.unwrap_or(d + 1))
}

/// Basis set from `--in`, `--pauli`, `--mub`, or Haar-random by default.
pub fn load_bases(cfg: &RunConfig) -> std::result::Result<BasisSet, Failure> {
    if let Some(text) = read_input(cfg)? {
        return Ok(BasisSet::from_json(&text)?);
    }
    if cfg.pauli {
        if cfg.dim.is_some_and(|d| d != 2) {
            return Err(Failure::Usage("--pauli implies --dim 2".into()));
        }
        let bs = pauli_bases();
        return Ok(match cfg.bases {
            Some(k) if k > 3 => return Err(Failure::Usage("there are only 3 Pauli bases".into())),
            Some(k) => bs.select(&(0..k).collect::<Vec<_>>())?,
            None => bs,
        });
    }
    let (d, k) = dim_and_count(cfg);
    if cfg.mub {
        return Ok(mub_basis_set(d, k)?);
    }
    Ok(haar_random_basis_set(d, k, cfg.seed)?)
}

pub fn sample(cfg: &RunConfig) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    Ok(Output::found(load_bases(cfg)?.to_json()?))
}

pub fn classify(cfg: &RunConfig) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    let bs = load_bases(cfg)?;
    let cls = rank_of_span(&bs, cfg.tol.unwrap_or(DEFAULT_RANK_TOL));
    let out = json!({
        "d": cls.d,
        "k": cls.k,
        "rank": cls.rank,
        "expected_rank": cls.expected_rank(),
        "label": cls.label,
        "unbiasedness_deviation": unbiasedness_check(&bs),
    });
    Ok(Output::found(out.to_string()))
}

pub fn model(cfg: &RunConfig, fit: bool, max_sweeps: usize) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    let bs = load_bases(cfg)?;
    let t = transition_tensor(&bs);
    if fit {
        let tol = cfg.tol.unwrap_or(1e-9);
        let res = iterative_fit(&t, max_sweeps, tol)?;
        let found = res.converged(tol);
        let out = json!({
            "method": "fit",
            "found": found,
            "residual": res.residual,
            "sweeps": res.sweeps,
            "damped": res.damped,
            "distribution": JointDistributionDoc::from(&res.jd),
        });
        return Ok(Output { text: out.to_string(), none: !found });
    }
    let mut opts = LpOptions::default();
    if let Some(tol) = cfg.tol {
        opts.feasibility_tol = tol;
    }
    let lp = solve_model_lp_with(&t, &opts)?;
    let out = json!({
        "method": "lp",
        "found": lp.is_feasible(),
        "value": lp.value,
        "iterations": lp.iterations,
        "marginal_residual": lp.marginal_residual,
        "distribution": JointDistributionDoc::from(&lp.jd),
    });
    Ok(Output { text: out.to_string(), none: !lp.is_feasible() })
}

/// Builds and verifies a strategy, or `None` if no classical model exists.
fn strategy_for(bs: &BasisSet) -> Result<Option<Strategy>> {
    let lp = solve_model_lp_with(&transition_tensor(bs), &LpOptions::default())?;
    if !lp.is_feasible() {
        info!("no classical model: LP optimum {:.9}", lp.value);
        return Ok(None);
    }
    let st = build_strategy(bs, &lp.jd)?;
    let rep = verify_strategy(bs, &st)?;
    if !(rep.max_offdiag < 1e-8) {
        return Err(Error::Numerical(format!("constructed strategy is not safe: off-diagonal {:.3e}", rep.max_offdiag)));
    }
    Ok(Some(st))
}

pub fn strategy(cfg: &RunConfig) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    let bs = load_bases(cfg)?;
    match strategy_for(&bs)? {
        Some(st) => Ok(Output::found(st.to_json(Some(&bs))?)),
        None => {
            eprintln!("no safe strategy exists for this basis set");
            Ok(Output { text: String::new(), none: true })
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    let (bs, st) = match read_input(cfg)? {
        Some(text) => match Strategy::from_json(&text)? {
            (st, Some(bs)) => (bs, st),
            (_, None) => return Err(Failure::Usage("strategy file does not embed its basis set".into())),
        },
        None => {
            let bs = load_bases(cfg)?;
            match strategy_for(&bs)? {
                Some(st) => (bs, st),
                None => {
                    eprintln!("no safe strategy exists for this basis set");
                    return Ok(Output { text: String::new(), none: true });
                }
            }
        }
    };
    let rounds = cfg.rounds.unwrap_or(10_000);
    let tr = run_game(&bs, &st, rounds, cfg.seed)?;
    let out = json!({
        "d": bs.dim(),
        "k": bs.count(),
        "rounds": tr.rounds,
        "failures": tr.failures,
        "failure_rate": tr.failure_rate(),
        "seed": tr.seed,
    });
    Ok(Output::found(out.to_string()))
}

pub fn value(cfg: &RunConfig) -> std::result::Result<(Output, bool), Failure> {
    cfg.format_or(Format::Json, false)?;
    let bs = load_bases(cfg)?;
    let mut opts = SdpOptions::default();
    if let Some(tol) = cfg.tol {
        opts.gap_tol = tol;
    }
    let res = unambiguous_value_with(&bs, &opts)?;
    Ok((Output::found(res.to_json()?), res.converged))
}

pub fn table(cfg: &RunConfig) -> CmdResult {
    let format = cfg.format_or(Format::Csv, true)?;
    let d = cfg.dim.ok_or_else(|| Failure::Usage("table needs --dim".into()))?;
    if cfg.bases.is_some_and(|k| k != d + 1) {
        return Err(Failure::Usage("table rows always use k = d + 1 bases".into()));
    }
    let rep = estimate_table_row(d, cfg.samples.unwrap_or(1000), cfg.seed, cfg.jobs)?;
    let text = match format {
        Format::Csv => format!("{TABLE_CSV_HEADER}\n{}", rep.csv_row()),
        Format::Json => serde_json::to_string(&rep)?,
    };
    Ok(Output::found(text))
}

pub fn bell(cfg: &RunConfig, fig1: bool, check_lp: bool) -> CmdResult {
    let samples = cfg.samples.unwrap_or(100_000);
    if fig1 {
        let format = cfg.format_or(Format::Csv, true)?;
        let triples = fig1_samples(samples, cfg.seed, cfg.jobs)?;
        let text = match format {
            Format::Csv => fig1_csv(&triples).trim_end().to_string(),
            Format::Json => serde_json::to_string(
                &triples
                    .iter()
                    .map(|(t, c)| json!({"q_ab": t.q_ab, "q_bc": t.q_bc, "q_ca": t.q_ca, "classical": c}))
                    .collect::<Vec<_>>(),
            )?,
        };
        return Ok(Output::found(text));
    }
    let format = cfg.format_or(Format::Json, true)?;
    let opts = QubitOptions { identical: false, check_lp, jobs: cfg.jobs };
    let rep = qubit_third_with(samples, cfg.seed, &opts)?;
    let text = match format {
        Format::Json => serde_json::to_string(&rep)?,
        Format::Csv => format!(
            "samples,classical,fraction,lo,hi,seed\n{},{},{:.6},{:.6},{:.6},{}",
            rep.samples, rep.classical, rep.fraction, rep.lo, rep.hi, rep.seed
        ),
    };
    Ok(Output::found(text))
}

pub fn debias_cmd(cfg: &RunConfig, max_steps: usize) -> CmdResult {
    cfg.format_or(Format::Json, false)?;
    let bs = load_bases(cfg)?;
    let res = debias(&bs, max_steps, cfg.tol.unwrap_or(1e-12))?;
    let bound = debias_lower_bound(bs.dim(), bs.count());
    let out = json!({
        "initial_objective": res.initial_objective,
        "objective": res.objective,
        "lower_bound": bound,
        "excess": res.objective - bound,
        "steps": res.steps,
        "converged": res.converged,
        "gradient_norm": res.gradient_norm,
        "bases": BasisSetDoc::from(&res.basis_set),
    });
    Ok(Output::found(out.to_string()))
}
