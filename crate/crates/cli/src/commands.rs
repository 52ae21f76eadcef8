//! Flag resolution and the subcommand drivers.
//!
//! Every value can come from a flag or from the matching section of the
//! `--config` file; flags win. Each driver resolves its inputs, runs
//! the library, and writes one report whose `#` preamble restates the
//! resolved configuration, so a saved report is reproducible from its
//! own header.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};

use spillover::confound::{self, BiasError, Exposure};
use spillover::data::{self, DataError};
use spillover::estimands::{self, EstimandError};
use spillover::infectiousness::{self, SensitivityError, SensitivityKind, SensitivitySpec};
use spillover::report::{self, fmt_sig, num_cell, opt_cell, Report};
use spillover::selection::{
    sensitivity_sweep, BootstrapSpec, DeltaPair, DirectDelta, SelectionError, SpillDelta,
};
use spillover::sim::{
    simulate_confounded, simulate_households, simulate_selection, simulate_trial,
    true_trial_effects, MeanCoefs, OutcomeRule, SimError, TrialDesign, TrialGroup,
};
use spillover::{
    BiasSpecGeneral, ConfoundedWorld, EffectEstimate, HouseholdWorld, SelectionModel,
    SelectionParams, SelectionWorld, TrialWorld,
};
use thiserror::Error;

use crate::config::{self, DeltaFamily};
use crate::{
    Cli, Command, ConfoundBiasArgs, EffectsArgs, GeeArgs, InfectiousnessArgs, SimulateArgs,
    SimulateCommand,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or data. Exit 2.
    #[error("{0}")]
    Invalid(String),
    /// The estimation itself failed on valid input. Exit 3.
    #[error("{0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<EstimandError> for CliError {
    fn from(e: EstimandError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        CliError::Estimation(e.to_string())
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        CliError::Estimation(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Globals after merging flags over the config file.
struct Resolved {
    out: String,
    digits: usize,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(path) => config::load_run_file(path)?,
        None => config::RunFile::default(),
    };
    let digits = cli
        .global
        .precision
        .or(file.precision)
        .unwrap_or(report::DEFAULT_DIGITS);
    if !(1..=17).contains(&digits) {
        return Err(invalid(format!("--precision {digits} is outside 1..=17")));
    }
    let g = Resolved {
        out: cli.global.out.or(file.out).unwrap_or_else(|| "-".into()),
        digits,
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
    };
    match cli.command {
        Command::Effects(args) => effects(args, file.effects, &g),
        Command::Infectiousness(args) => infectiousness(args, file.infectiousness, &g),
        Command::ConfoundBias(args) => confound_bias(args, file.confound_bias, &g),
        Command::Gee(args) => gee(args, file.gee, &g),
        Command::Simulate(cmd) => simulate(cmd, file.simulate, &g),
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| invalid(format!("missing --{flag}: pass the flag or set it in the config file")))
}

fn open_input(path: &str) -> Result<Box<dyn Read>, CliError> {
    if path == "-" {
        Ok(Box::new(io::stdin()))
    } else {
        let f = File::open(path).map_err(|e| invalid(format!("cannot open {path:?}: {e}")))?;
        Ok(Box::new(f))
    }
}

fn write_output(
    path: &str,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut w: Box<dyn Write> = if path == "-" {
        Box::new(BufWriter::new(io::stdout()))
    } else {
        let f = File::create(path).map_err(|e| invalid(format!("cannot create {path:?}: {e}")))?;
        Box::new(BufWriter::new(f))
    };
    body(&mut *w)
        .and_then(|()| w.flush())
        .map_err(|e| invalid(format!("writing {path:?}: {e}")))
}

fn write_report(rep: &Report, path: &str) -> Result<(), CliError> {
    write_output(path, |out| rep.write_to(&mut &mut *out))
}

fn fmt_interval((lo, hi): (f64, f64), digits: usize) -> String {
    format!("[{}, {}]", fmt_sig(lo, digits), fmt_sig(hi, digits))
}

fn join_cells(xs: &[f64], digits: usize) -> String {
    xs.iter()
        .map(|&x| fmt_sig(x, digits))
        .collect::<Vec<_>>()
        .join(",")
}

/// `#`-line preamble for the simulate subcommands, whose bodies are data
/// CSVs rather than [`Report`] tables. The CSV readers skip `#` lines,
/// so simulated files round-trip through the estimation subcommands.
struct Notes(Vec<(String, String)>);

impl Notes {
    fn new() -> Self {
        Notes(Vec::new())
    }

    fn add(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.0.push((key.into(), value.to_string()));
    }

    fn write(&self, w: &mut dyn Write) -> io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "# {k} = {v}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// effects

fn effects(args: EffectsArgs, file: config::EffectsSection, g: &Resolved) -> Result<(), CliError> {
    let data_path = require(args.data.or(file.data), "data")?;
    let phi = require(args.phi.or(file.phi), "phi")?;
    let psi = require(args.psi.or(file.psi), "psi")?;
    let per_1000 = args.per_1000 || file.per_1000.unwrap_or(false);
    let level = args.level.or(file.level);
    if let Some(l) = level {
        if !(l > 0.0 && l < 1.0) {
            return Err(invalid(format!("--level {l} is not inside (0, 1)")));
        }
    }

    let table = data::parse_group_summary(open_input(&data_path)?)?;
    let dec = estimands::decomposition::<f64>(&table, &phi, &psi)?;
    let attach = |e: &EffectEstimate| match level {
        Some(l) => e.clone().with_wald_ci(l),
        None => e.clone(),
    };
    let estimates = [
        attach(&dec.direct_phi),
        attach(&dec.direct_psi),
        attach(&dec.indirect),
        attach(&dec.total),
        attach(&dec.overall),
    ];

    let d = g.digits;
    let scale = if per_1000 { 1000.0 } else { 1.0 };
    let mut rep = report::effects_report(&estimates, per_1000, d);
    rep.note("command", "effects");
    rep.note("data", &data_path);
    rep.note("phi", &phi);
    rep.note("psi", &psi);
    rep.note("per_1000", per_1000);
    if let Some(l) = level {
        rep.note("ci_level", fmt_sig(l, d));
    }
    rep.note("coverage_phi", num_cell(dec.coverage_phi, d));
    rep.note("coverage_psi", num_cell(dec.coverage_psi, d));
    rep.note("residual_total", num_cell(dec.residual_total * scale, d));
    rep.note("residual_overall", num_cell(dec.residual_overall * scale, d));
    for e in &estimates {
        if let Some(w) = &e.warning {
            rep.note("warning", format!("{}: {w}", e.contrast));
        }
    }
    write_report(&rep, &g.out)
}

// ---------------------------------------------------------------------------
// infectiousness

fn infectiousness(
    args: InfectiousnessArgs,
    file: config::InfectSection,
    g: &Resolved,
) -> Result<(), CliError> {
    let data_path = require(args.data.or(file.data), "data")?;
    let theta = args.theta.or(file.theta);
    let gamma = args.gamma.or(file.gamma);
    let beta = args.beta.or(file.beta);
    let bounds = args.bounds || file.bounds.unwrap_or(false);
    let ci = match args.ci.or(file.ci) {
        Some(s) => Some(config::parse_interval("--ci", &s)?),
        None => None,
    };

    let records = data::parse_households(open_input(&data_path)?)?;
    let study = data::summarize_households::<f64>(&records)?;

    let mut specs: Vec<SensitivitySpec<f64>> = Vec::new();
    for (kind, grid) in [
        (SensitivityKind::Theta, &theta),
        (SensitivityKind::Gamma, &gamma),
        (SensitivityKind::Beta, &beta),
    ] {
        if let Some(s) = grid {
            specs.push(SensitivitySpec {
                kind,
                grid: config::parse_grid(&format!("--{}", kind.name()), s)?,
            });
        }
    }
    if specs.is_empty() && !bounds {
        // Nothing requested: report the crude contrast, which is the
        // theta = 0 row.
        specs.push(SensitivitySpec {
            kind: SensitivityKind::Theta,
            grid: vec![0.0],
        });
    }
    let mut rows = Vec::new();
    for spec in &specs {
        rows.extend(infectiousness::sweep(&study, spec)?);
    }

    let d = g.digits;
    let mut rep = report::sweep_report(&rows, d);
    rep.note("command", "infectiousness");
    rep.note("data", &data_path);
    rep.note("n_households", study.n_records);
    rep.note("p1", num_cell(study.p1, d));
    rep.note("p0", num_cell(study.p0, d));
    rep.note("attack1", num_cell(study.attack1, d));
    rep.note("attack0", num_cell(study.attack0, d));
    if let Ok((pi_d, pi_p)) = infectiousness::stratum_shares(&study) {
        rep.note("pi_d", num_cell(pi_d, d));
        rep.note("pi_p", num_cell(pi_p, d));
    }
    for (name, grid) in [("theta_grid", &theta), ("gamma_grid", &gamma), ("beta_grid", &beta)] {
        if let Some(s) = grid {
            rep.note(name, s);
        }
    }

    if bounds {
        let b = infectiousness::monotonicity_bounds(&study)?;
        for (tag, ep) in [("bound_low", b.lower), ("bound_high", b.upper)] {
            let e = &ep.effect;
            rep.push(vec![
                tag.into(),
                num_cell(ep.gamma, d),
                num_cell(e.p_v, d),
                num_cell(e.p_u, d),
                num_cell(e.risk_difference(), d),
                opt_cell(e.risk_ratio(), d),
                opt_cell(e.odds_ratio(), d),
                opt_cell(e.efficacy(), d),
                "true".into(),
            ]);
        }
    }

    // Interval shifting is exact only in the theta parameterization, so
    // shifted intervals ride along as notes instead of columns.
    if let Some(interval) = ci {
        rep.note("rd_ci_crude", fmt_interval(interval, d));
        for row in &rows {
            if row.kind == SensitivityKind::Theta && row.in_range() {
                let shifted = infectiousness::theta_shifted_ci::<f64>(interval, row.param);
                rep.note(
                    format!("rd_ci(theta={})", fmt_sig(row.param, d)),
                    fmt_interval(shifted, d),
                );
            }
        }
    }
    write_report(&rep, &g.out)
}

// ---------------------------------------------------------------------------
// confound-bias

fn confound_bias(
    args: ConfoundBiasArgs,
    file: config::ConfoundSection,
    g: &Resolved,
) -> Result<(), CliError> {
    let observed = require(args.observed.or(file.observed), "observed")?;
    let ci = match args.ci.or(file.ci) {
        Some(s) => Some(config::parse_interval("--ci", &s)?),
        None => None,
    };
    let spec_path = args.spec.or(file.spec);
    let lambda = args.lambda.or(file.lambda);
    let tau = args.tau.or(file.tau);
    let du = args.du.or(file.du);
    let dv = args.dv.or(file.dv);

    let d = g.digits;
    let mut rep = Report::new([
        "lambda",
        "tau",
        "du",
        "dv",
        "bias",
        "corrected",
        "ci_low",
        "ci_high",
    ]);
    rep.note("command", "confound-bias");
    rep.note("observed", fmt_sig(observed, d));
    if let Some(interval) = ci {
        rep.note("ci_observed", fmt_interval(interval, d));
    }

    if let Some(path) = spec_path {
        if lambda.is_some() || tau.is_some() || du.is_some() || dv.is_some() {
            return Err(invalid(
                "--spec supplies the whole bias model; drop the --lambda/--tau/--du/--dv grids",
            ));
        }
        if ci.is_some() {
            return Err(invalid(
                "interval shifting needs the additive form; a general spec corrects the point only, drop --ci",
            ));
        }
        let f = config::load_general_spec(&path)?;
        let support: Vec<(f64, f64)> = f.support.iter().map(|p| (p[0], p[1])).collect();
        let reference = (f.reference[0], f.reference[1]);
        let zg = Exposure::new(f.zg[0], f.zg[1]);
        let zg_prime = Exposure::new(f.zg_prime[0], f.zg_prime[1]);
        // load_general_spec guarantees a table for both exposure pairs
        // and full-length rows, so the closure lookups are total.
        let tables: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = f
            .exposure
            .iter()
            .map(|e| (e.z, e.g, e.mean.clone(), e.dist.clone()))
            .collect();
        let mean_support = support.clone();
        let mean_tables = tables.clone();
        let mean = move |e: Exposure<f64>, uv: (f64, f64)| -> f64 {
            let row = mean_tables
                .iter()
                .find(|t| t.0 == e.z && t.1 == e.g)
                .expect("exposure table");
            let i = mean_support
                .iter()
                .position(|&p| p == uv)
                .expect("support point");
            row.2[i]
        };
        let dist_at = move |e: Exposure<f64>| -> Vec<f64> {
            tables
                .iter()
                .find(|t| t.0 == e.z && t.1 == e.g)
                .expect("exposure table")
                .3
                .clone()
        };
        let bad_spec = |e: BiasError| invalid(format!("bias spec {path:?}: {e}"));
        let spec = BiasSpecGeneral::from_mean_fn(support, reference, mean, dist_at, f.marginal)
            .map_err(bad_spec)?;
        if !confound::shift_is_shared(&spec, zg, zg_prime) {
            rep.note(
                "warning",
                "outcome shifts differ across the two exposures; the corrected point has no sharp-null reading",
            );
        }
        let bias = confound::bias_general(&spec, zg, zg_prime).map_err(bad_spec)?;
        let est = confound::correct(observed, None, bias, false)
            .expect("no interval to shift");
        rep.note("spec", &path);
        rep.note("zg", format!("({}, {})", fmt_sig(zg.z, d), fmt_sig(zg.g, d)));
        rep.note(
            "zg_prime",
            format!("({}, {})", fmt_sig(zg_prime.z, d), fmt_sig(zg_prime.g, d)),
        );
        rep.note(
            "reference",
            format!("({}, {})", fmt_sig(reference.0, d), fmt_sig(reference.1, d)),
        );
        rep.push(vec![
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            num_cell(est.bias, d),
            num_cell(est.corrected, d),
            "NA".into(),
            "NA".into(),
        ]);
    } else {
        let grid_of = |what: &str, v: Option<String>| -> Result<Vec<f64>, CliError> {
            match v {
                Some(s) => config::parse_grid(what, &s),
                None => Ok(vec![0.0]),
            }
        };
        let lambdas = grid_of("--lambda", lambda)?;
        let taus = grid_of("--tau", tau)?;
        let dus = grid_of("--du", du)?;
        let dvs = grid_of("--dv", dv)?;
        rep.note("lambda_grid", join_cells(&lambdas, d));
        rep.note("tau_grid", join_cells(&taus, d));
        rep.note("du_grid", join_cells(&dus, d));
        rep.note("dv_grid", join_cells(&dvs, d));
        let grid = confound::cartesian_grid::<f64>(&lambdas, &taus, &dus, &dvs);
        for row in confound::sweep_bias(&grid, observed, ci) {
            let e = row.estimate;
            rep.push(vec![
                num_cell(row.spec.lambda, d),
                num_cell(row.spec.tau, d),
                num_cell(row.spec.d_u, d),
                num_cell(row.spec.d_v, d),
                num_cell(e.bias, d),
                num_cell(e.corrected, d),
                opt_cell(e.ci_corrected.map(|c| c.0), d),
                opt_cell(e.ci_corrected.map(|c| c.1), d),
            ]);
        }
    }
    write_report(&rep, &g.out)
}

// ---------------------------------------------------------------------------
// gee

fn gee(args: GeeArgs, file: config::GeeSection, g: &Resolved) -> Result<(), CliError> {
    let data_path = require(args.data.or(file.data), "data")?;
    let model_path = args.model.or(file.model);
    let spec = match &model_path {
        Some(p) => config::load_model_file(p)?,
        None => config::ModelSpec::default(),
    };
    let grid_text = args
        .gamma_grid
        .or(file.gamma_grid)
        .unwrap_or_else(|| "0,0".into());
    let pairs = config::parse_pair_grid("--gamma-grid", &grid_text)?;
    if !pairs.iter().any(|&(ld, ls)| ld == 0.0 && ls == 0.0) {
        return Err(invalid(
            "--gamma-grid must contain the 0,0 row: the sweep is anchored at the ignorability fit",
        ));
    }
    for &(ld, ls) in &pairs {
        if spec.direct == DeltaFamily::Zero && ld != 0.0 {
            return Err(invalid(format!(
                "delta.direct is \"zero\" but the grid asks for lambda_d = {ld}"
            )));
        }
        if spec.spill == DeltaFamily::Zero && ls != 0.0 {
            return Err(invalid(format!(
                "delta.spill is \"zero\" but the grid asks for lambda_s = {ls}"
            )));
        }
    }
    let bootstrap_n = args.bootstrap.or(file.bootstrap);
    if bootstrap_n == Some(0) {
        return Err(invalid("--bootstrap needs at least 1 replicate"));
    }

    let data = data::parse_clusters::<_, f64>(open_input(&data_path)?)?;
    let to_pair = |ld: f64, ls: f64| DeltaPair {
        direct: match spec.direct {
            DeltaFamily::Zero => DirectDelta::Zero,
            DeltaFamily::Scaled => DirectDelta::Scaled { lambda: ld },
        },
        spill: match spec.spill {
            DeltaFamily::Zero => SpillDelta::Zero,
            DeltaFamily::Scaled => SpillDelta::Scaled { lambda: ls },
        },
    };
    let grid: Vec<DeltaPair<f64>> = pairs.iter().map(|&(ld, ls)| to_pair(ld, ls)).collect();
    let model = SelectionModel::standard(data.covariate_dim(), DeltaPair::zero());
    let boot = bootstrap_n.map(|replicates| BootstrapSpec {
        replicates,
        seed: g.seed,
    });
    let rows = sensitivity_sweep(&data, &model, &grid, boot.as_ref())?;

    let d = g.digits;
    let labels = model.column_labels();
    let p_d = model.direct_terms.len();
    let p_s = model.spill_terms.len();
    let p_e = labels.len() - p_d - p_s;
    let mut param_cols: Vec<String> = Vec::new();
    param_cols.extend((1..=p_d).map(|i| format!("psi_d_{i}")));
    param_cols.extend((1..=p_s).map(|i| format!("psi_s_{i}")));
    param_cols.extend((1..=p_e).map(|i| format!("eta_{i}")));
    let mut columns = vec!["lambda_d".to_string(), "lambda_s".to_string()];
    columns.extend(param_cols.iter().cloned());
    columns.extend(param_cols.iter().map(|c| format!("se_{c}")));
    columns.push("converged".into());
    let n_params = param_cols.len();

    let mut rep = Report::new(columns);
    rep.note("command", "gee");
    rep.note("data", &data_path);
    if let Some(p) = &model_path {
        rep.note("model", p);
    }
    rep.note("model_layout", "standard");
    rep.note("delta_direct", spec.direct.name());
    rep.note("delta_spill", spec.spill.name());
    rep.note("n_clusters", data.clusters().len());
    rep.note(
        "n_individuals",
        data.clusters().iter().map(|c| c.members.len()).sum::<usize>(),
    );
    rep.note("covariate_dim", data.covariate_dim());
    rep.note("terms_psi_d", labels[..p_d].join(","));
    rep.note("terms_psi_s", labels[p_d..p_d + p_s].join(","));
    rep.note("terms_eta", labels[p_d + p_s..].join(","));
    rep.note("gamma_grid", &grid_text);
    match bootstrap_n {
        Some(n) => {
            rep.note("bootstrap_replicates", n);
            rep.note("seed", g.seed);
        }
        None => rep.note("bootstrap_replicates", 0),
    }

    for (&(ld, ls), row) in pairs.iter().zip(rows) {
        let at = format!("(lambda_d={}, lambda_s={})", fmt_sig(ld, d), fmt_sig(ls, d));
        let mut cells = vec![fmt_sig(ld, d), fmt_sig(ls, d)];
        match row.result {
            Ok(fit) => {
                for v in fit.params.flat() {
                    cells.push(num_cell(v, d));
                }
                match &fit.bootstrap {
                    Some(b) => {
                        for v in b.se.flat() {
                            cells.push(num_cell(v, d));
                        }
                        if b.used < b.replicates {
                            rep.note(
                                format!("bootstrap_used{at}"),
                                format!("{} of {}", b.used, b.replicates),
                            );
                        }
                    }
                    None => cells.extend((0..n_params).map(|_| "NA".to_string())),
                }
                cells.push("true".into());
            }
            Err(e) => {
                rep.note(format!("error{at}"), e);
                cells.extend((0..2 * n_params).map(|_| "NA".to_string()));
                cells.push("false".into());
            }
        }
        rep.push(cells);
    }
    write_report(&rep, &g.out)
}

// ---------------------------------------------------------------------------
// simulate

fn simulate(
    cmd: SimulateCommand,
    file: config::SimulateSection,
    g: &Resolved,
) -> Result<(), CliError> {
    match cmd {
        SimulateCommand::Households(args) => sim_households(args, file, g),
        SimulateCommand::Trial(args) => sim_trial(args, file, g),
        SimulateCommand::Clusters(args) => sim_clusters(args, file, g),
    }
}

fn no_ledger(ledger: Option<String>, what: &str) -> Result<(), CliError> {
    if ledger.is_some() {
        return Err(invalid(format!(
            "{what} worlds have no hidden per-row state; drop --ledger-out"
        )));
    }
    Ok(())
}

fn sim_households(
    args: SimulateArgs,
    file: config::SimulateSection,
    g: &Resolved,
) -> Result<(), CliError> {
    let world_path = require(args.world.or(file.world), "world")?;
    let n = require(args.n.or(file.n), "n")?;
    if n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    no_ledger(args.ledger_out.or(file.ledger_out), "household")?;

    let w = config::load_household_world(&world_path)?;
    let world = HouseholdWorld::new(
        (w.doomed, w.protected, w.immune),
        w.q_doomed_v,
        w.q_doomed_u,
        w.q_protected_u,
        w.q_baseline,
    )?;
    let truth = world.truth()?;
    let records = simulate_households(&world, n, g.seed);

    let d = g.digits;
    let mut notes = Notes::new();
    notes.add("command", "simulate households");
    notes.add("world", &world_path);
    notes.add("n", n);
    notes.add("seed", g.seed);
    notes.add("true_p_v", fmt_sig(truth.p_v, d));
    notes.add("true_p_u", fmt_sig(truth.p_u, d));
    notes.add("true_p1", fmt_sig(truth.p1, d));
    notes.add("true_p0", fmt_sig(truth.p0, d));
    notes.add("true_attack1", fmt_sig(truth.attack1, d));
    notes.add("true_attack0", fmt_sig(truth.attack0, d));
    notes.add("true_pi_d", fmt_sig(truth.pi_d, d));
    notes.add("true_pi_p", fmt_sig(truth.pi_p, d));
    notes.add("true_theta", fmt_sig(truth.theta, d));
    notes.add("true_gamma", fmt_sig(truth.gamma, d));
    notes.add("true_beta", fmt_sig(truth.beta, d));
    write_output(&g.out, |out| {
        notes.write(out)?;
        data::write_households(&records, out)
    })
}

fn sim_trial(
    args: SimulateArgs,
    file: config::SimulateSection,
    g: &Resolved,
) -> Result<(), CliError> {
    let world_path = require(args.world.or(file.world), "world")?;
    no_ledger(args.ledger_out.or(file.ledger_out), "trial")?;

    let w = config::load_trial_world(&world_path)?;
    let n_groups = args.n.or(file.n).unwrap_or(w.groups);
    if n_groups == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let step = |below: usize| move |c: usize| if c < below { 1.0 } else { 0.0 };
    let rules: Vec<OutcomeRule<f64>> = (0..w.size)
        .map(|j| OutcomeRule::Table {
            when_treated: (0..w.size)
                .map(step(w.cut_treated[j % w.cut_treated.len()]))
                .collect(),
            when_control: (0..w.size)
                .map(step(w.cut_control[j % w.cut_control.len()]))
                .collect(),
        })
        .collect();
    let world = TrialWorld::new(vec![TrialGroup { rules }; n_groups])?;
    let design = TrialDesign {
        phi: config::parse_allocation("design.phi", &w.design.phi)?,
        psi: config::parse_allocation("design.psi", &w.design.psi)?,
        phi_label: w.design.phi_label.clone(),
        psi_label: w.design.psi_label.clone(),
        n_psi: w.design.n_psi,
    };
    let truth = true_trial_effects(&world, &design.phi, &design.psi)?;
    let table = simulate_trial(&world, &design, g.seed)?;

    let d = g.digits;
    let mut notes = Notes::new();
    notes.add("command", "simulate trial");
    notes.add("world", &world_path);
    notes.add("groups", n_groups);
    notes.add("size", w.size);
    notes.add("phi", format!("{} ({})", w.design.phi, w.design.phi_label));
    notes.add("psi", format!("{} ({})", w.design.psi, w.design.psi_label));
    notes.add("n_psi", w.design.n_psi);
    notes.add("seed", g.seed);
    for (tag, t) in [
        ("conditional", &truth.conditional),
        ("unconditional", &truth.unconditional),
    ] {
        notes.add(format!("true_direct_phi_{tag}"), fmt_sig(t.direct_phi, d));
        notes.add(format!("true_direct_psi_{tag}"), fmt_sig(t.direct_psi, d));
        notes.add(format!("true_indirect_{tag}"), fmt_sig(t.indirect, d));
        notes.add(format!("true_total_{tag}"), fmt_sig(t.total, d));
        notes.add(format!("true_overall_{tag}"), fmt_sig(t.overall, d));
    }
    write_output(&g.out, |out| {
        notes.write(out)?;
        data::write_group_summary(&table, out)
    })
}

fn sim_clusters(
    args: SimulateArgs,
    file: config::SimulateSection,
    g: &Resolved,
) -> Result<(), CliError> {
    let world_path = require(args.world.or(file.world), "world")?;
    let n = require(args.n.or(file.n), "n")?;
    if n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let ledger_out = args.ledger_out.or(file.ledger_out);

    let w = config::load_cluster_world(&world_path)?;
    let d = g.digits;
    let mut notes = Notes::new();
    notes.add("command", "simulate clusters");
    notes.add("world", &world_path);
    notes.add("variant", &w.variant);
    notes.add("n", n);
    notes.add("size", w.size);
    notes.add("seed", g.seed);

    match w.variant.as_str() {
        "planted" => {
            no_ledger(ledger_out, "planted cluster")?;
            let p = w.planted.expect("checked by load_cluster_world");
            let world = SelectionWorld {
                cluster_size: w.size,
                covariate_prob: w.covariate_prob,
                alpha: (p.alpha[0], p.alpha[1]),
                params: SelectionParams {
                    psi_d: p.psi_d.clone(),
                    psi_s: p.psi_s.clone(),
                    eta: p.eta.clone(),
                },
                delta: DeltaPair {
                    direct: DirectDelta::Scaled { lambda: p.lambda_d },
                    spill: SpillDelta::Scaled { lambda: p.lambda_s },
                },
                noise_sd: w.noise_sd,
            };
            let records = simulate_selection(&world, n, g.seed)?;
            notes.add("alpha", join_cells(&p.alpha, d));
            notes.add("psi_d", join_cells(&p.psi_d, d));
            notes.add("psi_s", join_cells(&p.psi_s, d));
            notes.add("eta", join_cells(&p.eta, d));
            notes.add("lambda_d", fmt_sig(p.lambda_d, d));
            notes.add("lambda_s", fmt_sig(p.lambda_s, d));
            write_output(&g.out, |out| {
                notes.write(out)?;
                data::write_clusters(&records, out)
            })
        }
        "confounded" => {
            let c = w.confounded.expect("checked by load_cluster_world");
            let world = ConfoundedWorld {
                cluster_size: w.size,
                covariate_prob: w.covariate_prob,
                u_given_l: [c.u_given_l0.clone(), c.u_given_l1.clone()],
                treat: (c.treat[0], c.treat[1], c.treat[2]),
                mean: MeanCoefs {
                    base: c.mean.base,
                    z: c.mean.z,
                    zg: c.mean.zg,
                    g: c.mean.g,
                    l: c.mean.l,
                    h: c.mean.h,
                    u: c.mean.u,
                    v: c.mean.v,
                },
                noise_sd: w.noise_sd,
            };
            let (records, ledger) = simulate_confounded(&world, n, g.seed)?;
            notes.add("u_levels", c.u_given_l0.len());
            notes.add("u_given_l0", join_cells(&c.u_given_l0, d));
            notes.add("u_given_l1", join_cells(&c.u_given_l1, d));
            notes.add("treat", join_cells(&c.treat, d));
            notes.add(
                "ledger",
                ledger_out.as_deref().unwrap_or("not written"),
            );
            write_output(&g.out, |out| {
                notes.write(out)?;
                data::write_clusters(&records, out)
            })?;
            if let Some(path) = ledger_out {
                let mut ledger_notes = Notes::new();
                ledger_notes.add("command", "simulate clusters (hidden-state ledger)");
                ledger_notes.add("world", &world_path);
                ledger_notes.add("n", n);
                ledger_notes.add("seed", g.seed);
                write_output(&path, |out| {
                    ledger_notes.write(out)?;
                    writeln!(out, "cluster_id,individual_id,u,v")?;
                    for r in &ledger {
                        writeln!(out, "{},{},{},{}", r.cluster_id, r.individual_id, r.u, r.v)?;
                    }
                    Ok(())
                })?;
            }
            Ok(())
        }
        other => Err(invalid(format!(
            "world file {world_path:?}: variant {other:?} is not \"planted\" or \"confounded\""
        ))),
    }
}
