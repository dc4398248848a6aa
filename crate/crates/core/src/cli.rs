//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agents::{AgentError, Planner, PlannerOptions, TraceSink};
use crate::backends::server::serve_mock;
use crate::backends::{BackendError, MockService};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::dataset::{self, DatasetError};
use crate::metrics::encoder::EncoderKind;
use crate::metrics::{self, MetricError};
use crate::render::{load_run, run_pipeline, RenderError};
use crate::schema::{parse_plan, parse_spec, validate_plan, SchemaError, StoryPlan, ValidationOptions, ValidationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "storyreel", version, about = "Plan, render and measure long-form story videos")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML config file (falls back to $INFSTORY_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Base URL for remote seats.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Treat chapter and location count ranges as errors.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Muxer command template with {frames}, {fps} and {output}.
    #[arg(long, global = true)]
    mux: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the planning agents on a story spec.
    Plan {
        spec: PathBuf,
        /// Where to write the plan (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Directory for per-attempt agent traces.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Check a plan file against every constraint.
    Validate {
        plan: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Render a plan into a run directory.
    Render {
        plan: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Transition dataset factory.
    Dataset {
        #[command(subcommand)]
        stage: DatasetStage,
        /// Fraction of the per-flavor variation batches to generate.
        #[arg(long, global = true)]
        scale: Option<f64>,
        /// Manifest size (defaults to the number of passing clips).
        #[arg(long, global = true)]
        rows: Option<usize>,
        #[arg(long, global = true)]
        run_id: Option<String>,
    },
    /// Consistency report for a finished run.
    Metrics {
        run: PathBuf,
        #[arg(long, default_value = "mean_color_grid")]
        encoder: String,
    },
    /// Serve the mock seats over HTTP.
    MockServe {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum DatasetStage {
    /// Scenario agents, prompts and clips.
    Gen,
    /// Count endpoint figures and record verdicts.
    Filter,
    /// Balanced training manifest.
    Manifest,
    /// Stats report (runs nothing new).
    Stats,
    /// Every stage in order.
    All,
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INVALID, message: message.into() }
    }

    fn backend(e: &BackendError) -> Self {
        Failure { code: EXIT_BACKEND, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        match &e {
            AgentError::Backend { .. } => Failure { code: EXIT_BACKEND, message: e.to_string() },
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<RenderError> for Failure {
    fn from(e: RenderError) -> Self {
        match &e {
            RenderError::Backend(b) => Failure::backend(b),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Backend(b) => Failure::backend(&b),
            DatasetError::Agent(a) => a.into(),
            other => Failure::invalid(other.to_string()),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Run(r) => r.into(),
            other => Failure::invalid(other.to_string()),
        }
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn schema_failure(errors: &[SchemaError]) -> Failure {
    Failure::invalid(ValidationReport::from_schema_errors(errors).render().trim_end().to_string())
}

fn load_plan(path: &Path) -> Result<StoryPlan, Failure> {
    parse_plan(&read_input(path)?).map_err(|e| schema_failure(&e))
}

fn config(global: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(b) = global.backend {
        cfg.backend = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Remote => BackendKind::Remote,
        };
    }
    if let Some(e) = &global.endpoint {
        cfg.endpoint = e.clone();
    }
    cfg.strict |= global.strict;
    if let Some(out) = &global.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = jobs.max(1);
    }
    if let Some(mux) = &global.mux {
        cfg.mux = Some(mux.clone());
    }
    cfg.check()?;
    Ok(cfg)
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => crate::util::write_if_changed(p, text.as_bytes())
            .map_err(|e| Failure::invalid(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(|e| Failure::invalid(e.to_string())),
    }
}

fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let cfg = config(&cli.global)?;
    match cli.command {
        Command::Plan { spec, output, traces } => {
            let spec = parse_spec(&read_input(&spec)?).map_err(|e| schema_failure(&e))?;
            let sink = traces.map(TraceSink::directory).unwrap_or_default();
            let options = PlannerOptions { seed: cfg.seed, strict: cfg.strict, max_attempts: 3, jobs: cfg.jobs };
            let plan = Planner::new(&cfg.backends(), sink, options).plan_story(&spec)?;
            write_output(output.as_deref(), &plan.to_json(), out)
        }
        Command::Validate { plan, json } => {
            let plan = load_plan(&plan)?;
            let report = validate_plan(&plan, &ValidationOptions { strict: cfg.strict });
            let text = if json {
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
            } else {
                report.render()
            };
            let _ = out.write_all(text.as_bytes());
            if report.is_valid() {
                Ok(())
            } else {
                Err(Failure::invalid(format!("{} constraint violation(s)", report.errors.len())))
            }
        }
        Command::Render { plan, run_id } => {
            let plan = load_plan(&plan)?;
            let cfg = RunConfig { run_id: run_id.or(cfg.run_id.clone()), ..cfg };
            if cfg.backend == BackendKind::Mock {
                let (need, reach) = cfg.transition_reach();
                if reach < need {
                    let _ = writeln!(
                        err,
                        "warning: mock transitions need {need} px but s_max x (frames_per_shot - 1) gives {reach}; \
                         raise s_max or frames_per_shot"
                    );
                }
            }
            let output = run_pipeline(&plan, &cfg.backends(), &cfg)?;
            let stitched = output.manifest.stitched.as_ref().map(|s| s.sha256.clone()).unwrap_or_default();
            let _ = writeln!(out, "{}\nstitched {stitched}\nreused {}", output.run_dir.display(), output.reused);
            Ok(())
        }
        Command::Dataset { stage, scale, rows, run_id } => {
            let mut cfg = RunConfig { run_id: run_id.or(cfg.run_id.clone()), ..cfg };
            if let Some(s) = scale {
                cfg.dataset.scale = s;
            }
            if rows.is_some() {
                cfg.dataset.manifest_rows = rows;
            }
            cfg.check()?;
            let dir = dataset::corpus_dir(&cfg);
            let backends = cfg.backends();
            let stages: &[DatasetStage] = match stage {
                DatasetStage::All => &[DatasetStage::Gen, DatasetStage::Filter, DatasetStage::Manifest, DatasetStage::Stats],
                DatasetStage::Gen => &[DatasetStage::Gen],
                DatasetStage::Filter => &[DatasetStage::Filter],
                DatasetStage::Manifest => &[DatasetStage::Manifest],
                DatasetStage::Stats => &[DatasetStage::Stats],
            };
            for s in stages {
                match s {
                    DatasetStage::Gen => dataset::gen_stage(&dir, &cfg, &backends)?,
                    DatasetStage::Filter => dataset::filter_stage(&dir, &cfg, &backends)?,
                    DatasetStage::Manifest => {
                        let m = dataset::assemble_stage(&dir, &cfg)?;
                        let _ = writeln!(out, "manifest rows {}", m.rows.len());
                    }
                    DatasetStage::Stats | DatasetStage::All => {
                        let stats = dataset::stats_stage(&dir, &cfg)?;
                        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
                    }
                }
            }
            let _ = writeln!(out, "{}", dir.display());
            Ok(())
        }
        Command::Metrics { run, encoder } => {
            let kind = EncoderKind::parse(&encoder).ok_or_else(|| {
                let known: Vec<&str> = EncoderKind::ALL.iter().map(|k| k.as_str()).collect();
                Failure::usage(format!("unknown encoder \"{encoder}\" (known: {})", known.join(", ")))
            })?;
            let loaded = load_run(&run)?;
            let report = metrics::report(&loaded, kind.build().as_ref())?;
            report.write(&run)?;
            let _ = out.write_all(report.to_markdown().as_bytes());
            Ok(())
        }
        Command::MockServe { addr, threads } => {
            let service = Arc::new(MockService::new(cfg.mock_config()));
            let server = serve_mock(service, &addr, threads).map_err(|e| Failure::usage(e.to_string()))?;
            let _ = writeln!(out, "serving mock seats on {}", server.base_url());
            let _ = out.flush();
            server.join();
            Ok(())
        }
    }
}

/// Parse `args` and run the command, writing to the given streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn main() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exit(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut argv = vec!["storyreel"];
        argv.extend_from_slice(args);
        let code = run_with(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(exit(&[]).0, EXIT_USAGE);
        assert_eq!(exit(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(exit(&["validate", "/nonexistent/plan.json"]).0, EXIT_USAGE);
        assert_eq!(exit(&["--help"]).0, EXIT_OK);
    }
}
