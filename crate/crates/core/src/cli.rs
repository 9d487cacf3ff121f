//! Config ingestion, experiment dispatch and artifact emission for the `mflq` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{self, Tolerances};
use crate::error::{MflqError, Result};
use crate::linalg::Vector;
use crate::model::{self, ProblemData, ProblemSpec};
use crate::riccati;
use crate::simulate::SimulationConfig;
use crate::static_opt::{self, StaticReport};

pub const SCHEMA: u32 = 1;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_MAX_SIZE: usize = 6;
pub const DEFAULT_MONOTONE_HORIZONS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_OUT: &str = "mflq-out";
pub const RAW_FILE: &str = "optimal_paths.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Are,
    Static,
    RiccatiProfile,
    Turnpike,
    ValueConvergence,
    LemmaSuite,
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "mflq",
    version,
    about = "Mean-field LQ control: Riccati solvers and turnpike experiments"
)]
pub struct Cli {
    pub command: Command,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Worker threads; artifacts do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Stream raw optimal paths to a binary file (turnpike only).
    #[arg(long)]
    pub raw: bool,
}

/// Optional run settings read from the config document.
#[derive(Debug, Clone, Default, Deserialize)]
struct Settings {
    #[serde(rename = "T")]
    T: Option<f64>,
    horizons: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    dt: Option<f64>,
    n_paths: Option<usize>,
    seed: Option<u64>,
    coupled: Option<bool>,
    steps_per_unit: Option<usize>,
    trials: Option<usize>,
    max_size: Option<usize>,
    out: Option<PathBuf>,
}

/// Overrides supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub problem: Option<ProblemData>,
    pub T: Option<f64>,
    pub horizons: Option<Vec<f64>>,
    pub x0: Option<Vector>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub coupled: bool,
    pub steps_per_unit: usize,
    pub trials: usize,
    pub max_size: usize,
    pub out: PathBuf,
}

/// Canonical form hashed into the config digest. The output path and thread count are excluded.
#[derive(Serialize)]
struct Canonical<'a> {
    command: Command,
    problem: Option<ProblemSpec>,
    T: Option<f64>,
    horizons: &'a Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    coupled: bool,
    steps_per_unit: usize,
    trials: usize,
    max_size: usize,
}

impl ExperimentConfig {
    /// Hex SHA-256 of the canonical effective configuration.
    pub fn digest(&self) -> String {
        let c = Canonical {
            command: self.command,
            problem: self.problem.as_ref().map(ProblemSpec::from),
            T: self.T,
            horizons: &self.horizons,
            x0: self.x0.as_ref().map(|v| v.iter().copied().collect()),
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            coupled: self.coupled,
            steps_per_unit: self.steps_per_unit,
            trials: self.trials,
            max_size: self.max_size,
        };
        let bytes = serde_json::to_vec(&c).expect("canonical config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn simulation(&self, T: f64) -> SimulationConfig {
        SimulationConfig {
            T,
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            coupled: self.coupled,
        }
    }

    fn problem(&self) -> Result<&ProblemData> {
        self.problem
            .as_ref()
            .ok_or_else(|| MflqError::Config("$.problem is required for this command".into()))
    }

    fn horizon(&self) -> Result<f64> {
        let T = self
            .T
            .ok_or_else(|| MflqError::Config("$.T is required for this command".into()))?;
        if !(T > 0.0 && T.is_finite()) {
            return Err(MflqError::Config(format!("$.T must be positive, got {T}")));
        }
        Ok(T)
    }

    fn initial_state(&self) -> Result<&Vector> {
        self.x0
            .as_ref()
            .ok_or_else(|| MflqError::Config("$.x0 is required for this command".into()))
    }

    fn horizons(&self) -> Result<&[f64]> {
        let h = self
            .horizons
            .as_deref()
            .ok_or_else(|| MflqError::Config("$.horizons is required for this command".into()))?;
        if h.is_empty() {
            return Err(MflqError::Config("$.horizons must not be empty".into()));
        }
        if let Some(i) = h.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(MflqError::Config(format!("$.horizons[{i}] must be positive")));
        }
        Ok(h)
    }
}

/// Reads and validates a config file for `command`.
pub fn load_config(path: &Path, command: Command, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| MflqError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, command, overrides)
}

/// As [`load_config`], from the document text.
pub fn parse_config(text: &str, command: Command, overrides: &Overrides) -> Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| MflqError::Parse(e.to_string()))?;
    if !doc.is_object() {
        return Err(MflqError::Parse("config must be a JSON object".into()));
    }
    let problem = match doc.get("problem") {
        Some(v) => Some(parse_problem(v, "$.problem")?),
        None if doc.get("n").is_some() => Some(parse_problem(&doc, "$")?),
        None => None,
    };
    if let Some(p) = &problem {
        if !p.is_trivial() {
            model::require_a1(p)?;
        }
    }
    let s: Settings = serde_json::from_value(doc).map_err(|e| MflqError::Parse(format!("$: {e}")))?;
    let x0 = match s.x0 {
        None => None,
        Some(v) => {
            if let Some(p) = &problem {
                if v.len() != p.dims.n {
                    return Err(MflqError::shape(
                        "$.x0",
                        format!("expected {} entries, got {}", p.dims.n, v.len()),
                    ));
                }
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(MflqError::shape(format!("$.x0[{i}]"), "non-finite entry"));
            }
            Some(Vector::from_vec(v))
        }
    };
    let cfg = ExperimentConfig {
        command,
        problem,
        T: overrides.horizon.or(s.T),
        horizons: s.horizons,
        x0,
        dt: overrides.dt.or(s.dt).unwrap_or(DEFAULT_DT),
        n_paths: overrides.paths.or(s.n_paths).unwrap_or(DEFAULT_PATHS),
        seed: overrides.seed.or(s.seed).unwrap_or(DEFAULT_SEED),
        coupled: s.coupled.unwrap_or(true),
        steps_per_unit: s.steps_per_unit.unwrap_or(DEFAULT_STEPS_PER_UNIT),
        trials: s.trials.unwrap_or(DEFAULT_TRIALS),
        max_size: s.max_size.unwrap_or(DEFAULT_MAX_SIZE),
        out: overrides
            .out
            .clone()
            .or(s.out)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    };
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(MflqError::Config(format!("$.dt must be positive, got {}", cfg.dt)));
    }
    if cfg.n_paths == 0 {
        return Err(MflqError::Config("$.n_paths must be at least 1".into()));
    }
    if cfg.steps_per_unit == 0 {
        return Err(MflqError::Config("$.steps_per_unit must be at least 1".into()));
    }
    check_required(&cfg)?;
    Ok(cfg)
}

fn parse_problem(v: &Value, prefix: &str) -> Result<ProblemData> {
    let spec: ProblemSpec =
        serde_json::from_value(v.clone()).map_err(|e| MflqError::Parse(format!("{prefix}: {e}")))?;
    spec.to_problem(prefix)
}

fn check_required(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.command {
        Command::LemmaSuite => Ok(()),
        Command::Are | Command::Static => cfg.problem().map(|_| ()),
        Command::RiccatiProfile => {
            cfg.problem()?;
            cfg.horizon().map(|_| ())
        }
        Command::Turnpike => {
            cfg.problem()?;
            cfg.initial_state()?;
            cfg.simulation(cfg.horizon()?).steps().map(|_| ())
        }
        Command::ValueConvergence => {
            cfg.problem()?;
            cfg.initial_state()?;
            for &T in cfg.horizons()? {
                cfg.simulation(T).steps()?;
            }
            Ok(())
        }
    }
}

/// JSON artifact wrapper.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    schema: u32,
    command: Command,
    config_digest: &'a str,
    tolerances: Tolerances,
    result: T,
}

/// What a run produced: paths written and the text for standard output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<PathBuf>,
    pub stdout: String,
}

struct Writer<'a> {
    cfg: &'a ExperimentConfig,
    digest: String,
    out: RunOutput,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out).map_err(|e| MflqError::Io(format!("{}: {e}", cfg.out.display())))?;
        Ok(Writer {
            cfg,
            digest: cfg.digest(),
            out: RunOutput::default(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.cfg.out.join(name);
        fs::write(&path, body).map_err(|e| MflqError::Io(format!("{}: {e}", path.display())))?;
        self.out.artifacts.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, result: T) -> Result<String> {
        let doc = Artifact {
            schema: SCHEMA,
            command: self.cfg.command,
            config_digest: &self.digest,
            tolerances: analysis::tolerances(),
            result,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| MflqError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)?;
        Ok(text)
    }

    fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let tol = serde_json::to_string(&analysis::tolerances()).map_err(|e| MflqError::Io(e.to_string()))?;
        let text = format!(
            "# mflq schema={SCHEMA} config_digest={} tolerances={tol}\n{body}",
            self.digest
        );
        self.write(name, &text)
    }
}

#[derive(Serialize)]
struct ProfileResult {
    T: f64,
    steps: usize,
    fit_P: Option<analysis::DecayFit>,
    fit_Pi: Option<analysis::DecayFit>,
    monotonicity: riccati::MonotonicityReport,
}

#[derive(Serialize)]
struct ValueResult {
    rows: Vec<analysis::ValueRow>,
    verdict: analysis::ValueVerdict,
}

fn invariant(name: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(MflqError::Acceptance(name.to_string()))
    }
}

/// Dispatches to the named pipeline and writes its artifacts.
///
/// Invariant failures are returned as [`MflqError::Acceptance`] after the artifacts are on disk.
pub fn run(cfg: &ExperimentConfig, raw: bool) -> Result<RunOutput> {
    let mut w = Writer::new(cfg)?;
    match cfg.command {
        Command::Are => {
            let problem = cfg.problem()?;
            let are = riccati::solve_are(problem)?;
            let text = w.json("are.json", analysis::AreReport::from(&are))?;
            w.out.stdout = text;
            invariant("ARE residual P", are.residual_P <= riccati::RESIDUAL_TOL)?;
            invariant("ARE residual Pi", are.residual_Pi <= riccati::RESIDUAL_TOL)?;
        }
        Command::Static => {
            let problem = cfg.problem()?;
            let are = riccati::solve_are(problem)?;
            let stat = static_opt::solve_static(problem, &are.P)?;
            let kkt = static_opt::kkt_residual(problem, &are.P, &stat);
            w.json("static.json", StaticReport::from(&stat))?;
            w.out.stdout =
                serde_json::to_string(&StaticReport::from(&stat)).map_err(|e| MflqError::Io(e.to_string()))? + "\n";
            invariant("KKT residual", kkt.max() <= analysis::KKT_TOL)?;
        }
        Command::RiccatiProfile => {
            let problem = cfg.problem()?;
            let T = cfg.horizon()?;
            let steps = riccati::steps_for(T, cfg.steps_per_unit);
            let are = riccati::solve_are(problem)?;
            let path = riccati::integrate_finite_horizon(problem, T, steps)?;
            let profile = riccati::convergence_profile(&path, &are);
            let horizons = cfg
                .horizons
                .clone()
                .unwrap_or_else(|| DEFAULT_MONOTONE_HORIZONS.to_vec());
            let mono = riccati::horizon_monotonicity_check(problem, &horizons, cfg.steps_per_unit)?;
            w.csv("riccati_profile.csv", &riccati::profile_csv(&profile))?;
            w.csv("monotonicity.csv", &riccati::monotonicity_csv(&mono))?;
            let xs: Vec<f64> = profile.iter().map(|r| T - r.t).collect();
            let fit = |ys: Vec<f64>| analysis::fit_exponential(&xs, &ys, (0.2 * T, T)).ok();
            let monotone = mono.monotone;
            let text = w.json(
                "riccati_profile.json",
                ProfileResult {
                    T,
                    steps,
                    fit_P: fit(profile.iter().map(|r| r.err_P).collect()),
                    fit_Pi: fit(profile.iter().map(|r| r.err_Pi).collect()),
                    monotonicity: mono,
                },
            )?;
            w.out.stdout = text;
            invariant("horizon monotonicity of Pi_T(0)", monotone)?;
        }
        Command::Turnpike => {
            let problem = cfg.problem()?;
            let sim = cfg.simulation(cfg.horizon()?);
            let x0 = cfg.initial_state()?;
            let run = if raw {
                let path = cfg.out.join(RAW_FILE);
                let file = fs::File::create(&path).map_err(|e| MflqError::Io(format!("{}: {e}", path.display())))?;
                let mut sink = BufWriter::new(file);
                let run = analysis::turnpike_report_with_raw(problem, x0, &sim, &mut sink)?;
                sink.flush()?;
                w.out.artifacts.push(path);
                run
            } else {
                analysis::turnpike_report(problem, x0, &sim)?
            };
            w.csv("riccati_profile.csv", &riccati::profile_csv(&run.profile))?;
            if let Some(outcome) = &run.outcome {
                w.csv("optimal_stats.csv", &outcome.optimal.to_csv())?;
                w.csv("turnpike_stats.csv", &outcome.turnpike.to_csv())?;
            }
            let text = w.json("turnpike.json", &run.report)?;
            w.out.stdout = text;
            if let Some(c) = run.report.failed_invariants().first() {
                return Err(MflqError::Acceptance(format!(
                    "{} = {:e} (tolerance {:e})",
                    c.name, c.value, c.tolerance
                )));
            }
        }
        Command::ValueConvergence => {
            let problem = cfg.problem()?;
            let x0 = cfg.initial_state()?;
            let base = cfg.simulation(1.0);
            let rows = analysis::value_convergence(problem, x0, cfg.horizons()?, &base)?;
            w.csv("value_convergence.csv", &analysis::value_csv(&rows))?;
            let verdict = analysis::value_verdict(&rows);
            w.out.stdout = w.json("value_convergence.json", ValueResult { rows, verdict })?;
        }
        Command::LemmaSuite => {
            let rep = analysis::lemma_suite(cfg.trials, cfg.seed, cfg.max_size)?;
            w.json("lemma_suite.json", rep)?;
            w.out.stdout = format!(
                "matrix_contraction_check: {}/{} passed\nblock_psd_check: {}/{} passed\n",
                rep.contraction.passed, rep.contraction.trials, rep.block_psd.passed, rep.block_psd.trials
            );
            invariant(
                "matrix_contraction_check",
                rep.contraction.passed == rep.contraction.trials,
            )?;
            invariant("block_psd_check", rep.block_psd.passed == rep.block_psd.trials)?;
        }
    }
    Ok(w.out)
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            0
        }
        Err(e) => {
            eprintln!("mflq: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<RunOutput> {
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        paths: cli.paths,
        dt: cli.dt,
        horizon: cli.horizon,
    };
    let cfg = load_config(&cli.config, cli.command, &overrides)?;
    match cli.threads {
        None => run(&cfg, cli.raw),
        Some(0) => Err(MflqError::Config("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| MflqError::Config(e.to_string()))?
            .install(|| run(&cfg, cli.raw)),
    }
}
