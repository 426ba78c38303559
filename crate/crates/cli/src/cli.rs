use std::io::Write;
use std::path::{Path, PathBuf};

use adboin12::scenario::ScenarioBank;
use adboin12::simulator::{
    compare_designs, oc_csv_row, replicate_log_rows, Case, MonteCarlo, OperatingChars, DESIGN_AD,
    DESIGN_BASE, OC_CSV_HEADER, REPLICATE_LOG_HEADER,
};
use adboin12::tables::{self, TableSet};
use adboin12::{DesignParams, OutcomeCounts2x2, TrialState};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{read_file, write_file, CliError, Result};
use crate::report;
use crate::service::{self, Service};

#[derive(Debug, Parser)]
#[command(name = "adboin12", version, about = "AD-BOIN12 dose-finding tables, simulation and trial conduct")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the safety boundary, desirability-score and cohort-expansion tables.
    Tables(TablesArgs),
    /// Operating characteristics of one design over a scenario bank.
    Simulate(SimArgs),
    /// AD-BOIN12 against fixed-cohort BOIN12 on common random numbers.
    Compare(SimArgs),
    /// Write a fresh trial state file.
    Init(InitArgs),
    /// Record one cohort's outcomes in a state file and decide what follows.
    Record(RecordArgs),
    /// Print the current recommendation for a state file.
    Decide(DecideArgs),
    /// Run the local decision service (binds 127.0.0.1, no authentication).
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Design {
    /// Adaptive cohort size.
    Ad,
    /// Fixed cohort size.
    Base,
}

/// Design parameters: an optional JSON file, then individual overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct DesignArgs {
    /// JSON file with design parameters (missing fields take their defaults).
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Target toxicity probability [default: 0.35].
    #[arg(long = "phiT", visible_alias = "phi-t")]
    pub phi_t: Option<f64>,
    /// Minimum acceptable efficacy probability [default: 0.25].
    #[arg(long = "psiE", visible_alias = "psi-e")]
    pub psi_e: Option<f64>,
    /// Maximum sample size [default: 36].
    #[arg(long = "max-n")]
    pub max_n: Option<u32>,
    /// Number of dose levels [default: 5].
    #[arg(long)]
    pub doses: Option<usize>,
}

impl DesignArgs {
    fn base(&self) -> Result<DesignParams> {
        match &self.params {
            Some(path) => serde_json::from_str(&read_file(path)?).map_err(|e| {
                CliError::Usage(format!("{}: invalid design parameters: {e}", path.display()))
            }),
            None => Ok(DesignParams::default()),
        }
    }

    fn apply(&self, mut p: DesignParams) -> DesignParams {
        if let Some(v) = self.phi_t {
            p.phi_t = v;
        }
        if let Some(v) = self.psi_e {
            p.psi_e = v;
        }
        if let Some(v) = self.max_n {
            p.max_n = v;
            p.per_dose_stop_n = p.per_dose_stop_n.min(v);
        }
        if let Some(v) = self.doses {
            p.num_doses = v;
        }
        p
    }

    pub fn resolve(&self) -> Result<DesignParams> {
        let p = self.apply(self.base()?);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TablesArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Expansion threshold; repeat for several tables [default: the design's theta].
    #[arg(long)]
    pub theta: Vec<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Directory to write the tables into instead of standard output.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Scenario bank JSON file [default: the bundled 16-scenario bank].
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Simulation case: A/B toggle the 12-patient stopping rule, C/D use a 30-day efficacy window.
    #[arg(long)]
    pub case: Option<Case>,
    /// Expansion threshold.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Which design to simulate (`simulate` only).
    #[arg(long, value_enum, default_value = "ad")]
    pub design_kind: Design,
    #[arg(long, default_value_t = 2000)]
    pub replicates: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Output file instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write the per-replicate log (CSV) to this file.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Expansion threshold.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Disable the per-dose stopping rule.
    #[arg(long)]
    pub no_stop_rule: bool,
    #[arg(long, value_name = "FILE")]
    pub state: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RecordArgs {
    #[arg(long, value_name = "FILE")]
    pub state: PathBuf,
    /// Dose level, one-based.
    #[arg(long)]
    pub dose: usize,
    /// Patients with efficacy and no toxicity.
    #[arg(short = 'a', long = "eff-notox")]
    pub a: u32,
    /// Patients with efficacy and toxicity.
    #[arg(short = 'b', long = "eff-tox")]
    pub b: u32,
    /// Patients with neither efficacy nor toxicity.
    #[arg(short = 'c', long = "noeff-notox")]
    pub c: u32,
    /// Patients with toxicity and no efficacy.
    #[arg(short = 'd', long = "noeff-tox")]
    pub d: u32,
}

#[derive(Debug, Clone, Args)]
pub struct DecideArgs {
    #[arg(long, value_name = "FILE")]
    pub state: PathBuf,
    /// Print the decision as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Write-ahead audit file; replayed on start if it exists.
    #[arg(long, value_name = "FILE", default_value = "adboin12-audit.jsonl")]
    pub audit: PathBuf,
    #[arg(long, default_value_t = 8712)]
    pub port: u16,
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn cmd_tables(args: &TablesArgs, out: &mut dyn Write) -> Result<()> {
    let params = args.design.resolve()?;
    let thetas = if args.theta.is_empty() {
        vec![params.theta]
    } else {
        args.theta.clone()
    };
    let set = TableSet::generate(&params, &thetas)?;

    let (ext, safety, rds, expansion): (&str, String, String, Vec<String>) = match args.format {
        Format::Csv => (
            "csv",
            tables::safety_csv(&set.safety),
            tables::rds_csv(&set.rds),
            set.expansion.iter().map(|t| tables::expansion_csv(&t.rows)).collect(),
        ),
        Format::Markdown => (
            "md",
            tables::safety_markdown(&set.safety),
            tables::rds_markdown(&set.rds),
            set.expansion.iter().map(|t| tables::expansion_markdown(&t.rows)).collect(),
        ),
        Format::Json => {
            let text = serde_json::to_string_pretty(&set).expect("tables serialize") + "\n";
            return match &args.out {
                Some(dir) => {
                    create_dir(dir)?;
                    write_file(&dir.join("tables.json"), &text)
                }
                None => emit(out, None, &text),
            };
        }
    };

    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(format!("safety.{ext}")), &safety)?;
            write_file(&dir.join(format!("rds.{ext}")), &rds)?;
            for (t, text) in set.expansion.iter().zip(&expansion) {
                write_file(&dir.join(format!("expansion_{}.{ext}", t.theta)), text)?;
            }
            Ok(())
        }
        None => {
            let mut text = format!("# safety\n{safety}\n# rds\n{rds}");
            for (t, body) in set.expansion.iter().zip(&expansion) {
                text.push_str(&format!("\n# expansion theta={}\n{body}", t.theta));
            }
            emit(out, None, &text)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn sim_setup(args: &SimArgs) -> Result<(DesignParams, ScenarioBank, MonteCarlo)> {
    let mut params = args.design.base()?;
    if let Some(case) = args.case {
        let c = case.params();
        params.stop_rule_enabled = c.stop_rule_enabled;
        params.eff_window_days = c.eff_window_days;
    }
    if let Some(t) = args.theta {
        params.theta = t;
    }
    let bank = match &args.scenario {
        Some(path) => ScenarioBank::from_json(&read_file(path)?)?,
        None => ScenarioBank::builtin(),
    };
    let mut params = args.design.apply(params);
    // A bank whose scenarios agree on the number of doses sets it, unless given.
    if args.design.doses.is_none() {
        if let Some(first) = bank.scenarios.first() {
            if bank.scenarios.iter().all(|s| s.num_doses() == first.num_doses()) {
                params.num_doses = first.num_doses();
                params.start_dose = params.start_dose.min(params.num_doses.saturating_sub(1));
            }
        }
    }
    params.validate()?;
    bank.validate(&params)?;
    if bank.scenarios.is_empty() {
        return Err(CliError::Usage("scenario bank is empty".into()));
    }
    let mut mc = MonteCarlo::new(args.replicates, args.seed);
    if let Some(t) = args.threads {
        mc = mc.with_threads(t);
    }
    Ok((params, bank, mc))
}

fn cmd_simulate(args: &SimArgs, out: &mut dyn Write) -> Result<()> {
    let (params, bank, mc) = sim_setup(args)?;
    let (params, label) = match args.design_kind {
        Design::Ad => (params, DESIGN_AD),
        Design::Base => (params.without_expansion(), DESIGN_BASE),
    };
    let mut rows = Vec::new();
    let mut log = String::from(REPLICATE_LOG_HEADER);
    for (i, s) in bank.scenarios.iter().enumerate() {
        let results = mc.replicates(s, &params, i as u32)?;
        let oc = OperatingChars::aggregate(&results, s.resolve_obd(&params), &s.toxic_doses(&params));
        if args.log.is_some() {
            log.push_str(&replicate_log_rows(&s.name, label, &results));
        }
        rows.push((s.name.clone(), oc));
    }
    let text = match args.format {
        Format::Json => {
            let body: Vec<_> = rows
                .iter()
                .map(|(name, oc)| json!({ "scenario": name, "design": label, "oc": oc }))
                .collect();
            serde_json::to_string_pretty(&json!({
                "seed": args.seed,
                "replicates": args.replicates,
                "params": params,
                "results": body,
            }))
            .expect("results serialize")
                + "\n"
        }
        _ => {
            let mut text = String::from(OC_CSV_HEADER);
            for (name, oc) in &rows {
                text.push_str(&oc_csv_row(name, label, oc, args.seed));
            }
            text
        }
    };
    if let Some(path) = &args.log {
        write_file(path, &log)?;
    }
    emit(out, args.out.as_deref(), &text)
}

fn cmd_compare(args: &SimArgs, out: &mut dyn Write) -> Result<()> {
    let (params, bank, mc) = sim_setup(args)?;
    let cmp = compare_designs(&bank, &params, &params.without_expansion(), &mc)?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n",
        _ => cmp.to_csv(),
    };
    if let Some(path) = &args.log {
        write_file(path, &cmp.replicate_log_csv())?;
    }
    emit(out, args.out.as_deref(), &text)
}

fn load_state(path: &Path) -> Result<TrialState> {
    Ok(TrialState::from_json(&read_file(path)?)?)
}

fn cmd_init(args: &InitArgs, out: &mut dyn Write) -> Result<()> {
    let mut params = args.design.resolve()?;
    if let Some(t) = args.theta {
        params.theta = t;
    }
    if args.no_stop_rule {
        params.stop_rule_enabled = false;
    }
    let state = TrialState::new(params)?;
    write_file(&args.state, &state.to_json())?;
    emit(out, None, &report::render(&state)?)
}

fn cmd_record(args: &RecordArgs, out: &mut dyn Write) -> Result<()> {
    let mut state = load_state(&args.state)?;
    let dose = args
        .dose
        .checked_sub(1)
        .ok_or_else(|| CliError::Usage("--dose is one-based".into()))?;
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_millis() as u64);
    state.submit_cohort(dose, OutcomeCounts2x2::new(args.a, args.b, args.c, args.d), ts)?;
    let text = report::render(&state)?;
    write_file(&args.state, &state.to_json())?;
    emit(out, None, &text)
}

fn cmd_decide(args: &DecideArgs, out: &mut dyn Write) -> Result<()> {
    let state = load_state(&args.state)?;
    let text = if args.json {
        let d = state.recommendation()?;
        serde_json::to_string_pretty(&json!({
            "schema_version": adboin12::engine::SCHEMA_VERSION,
            "summary": d.to_string(),
            "decision": d,
        }))
        .expect("decision serializes")
            + "\n"
    } else {
        report::render(&state)?
    };
    emit(out, None, &text)
}

/// Run a subcommand, writing its primary output to `out`. Output is produced
/// only after the command has fully succeeded.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Tables(a) => cmd_tables(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Init(a) => cmd_init(a, out),
        Command::Record(a) => cmd_record(a, out),
        Command::Decide(a) => cmd_decide(a, out),
        Command::Serve(a) => {
            let svc = Service::open(a.design.resolve()?, &a.audit)?;
            service::serve(svc, a.port)
        }
    }
}
