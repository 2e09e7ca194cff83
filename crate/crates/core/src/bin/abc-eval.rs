use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use abc_core::eval::{
    emit_report, faithful_mock_responses, load_manifest, load_preferences_with, run_eval, DegradationSpec,
    ReportFormat, Scenario, DEFAULT_PARTICIPANTS,
};
use abc_core::recommend::{LiveBackend, LiveConfig, LlmBackend, MockBackend, DEFAULT_ENDPOINT, DEFAULT_MODEL};

/// Score gesture recommendations against human preference rankings under
/// clean and degraded image conditions.
#[derive(Parser, Debug)]
#[command(name = "abc-eval", version)]
struct Args {
    /// Stimulus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Preference matrix (CSV).
    #[arg(long)]
    preferences: PathBuf,
    /// `mock:FILE` for a digest-keyed mock, or `live`.
    #[arg(long, default_value = "live")]
    backend: String,
    /// Comma-separated scenario labels, or `all`.
    #[arg(long, default_value = "all")]
    scenarios: String,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: String,
    /// Cells evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, default_value_t = DEFAULT_PARTICIPANTS)]
    participants: u32,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    llm_endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    llm_model: String,
    /// Write a mock table that answers every cell with its human top-3,
    /// then exit without evaluating.
    #[arg(long)]
    emit_faithful_mock: Option<PathBuf>,
}

fn parse_scenarios(list: &str) -> Result<Vec<DegradationSpec>, String> {
    if list.trim() == "all" {
        return Ok(Scenario::ALL.iter().map(|&s| DegradationSpec::preset(s)).collect());
    }
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Scenario>().map(DegradationSpec::preset).map_err(|e| e.to_string()))
        .collect()
}

fn run(args: Args) -> Result<(), String> {
    let manifest = load_manifest(&args.manifest).map_err(|e| e.to_string())?;
    let matrix = load_preferences_with(&args.preferences, args.participants).map_err(|e| e.to_string())?;
    let scenarios = parse_scenarios(&args.scenarios)?;

    if let Some(path) = args.emit_faithful_mock {
        let table = faithful_mock_responses(&manifest, &matrix, &scenarios).map_err(|e| e.to_string())?;
        let text = serde_json::to_string_pretty(&table).map_err(|e| e.to_string())?;
        std::fs::write(&path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
        eprintln!("wrote {} mock replies to {}", table.len(), path.display());
        return Ok(());
    }

    let format: ReportFormat = args.format.parse().map_err(|e: abc_core::eval::EvalError| e.to_string())?;
    let backend: Box<dyn LlmBackend> = match args.backend.as_str() {
        "live" => {
            let config = LiveConfig { endpoint: args.llm_endpoint, model: args.llm_model, ..LiveConfig::default() };
            Box::new(LiveBackend::from_env(config).map_err(|e| e.to_string())?)
        }
        other => match other.strip_prefix("mock:") {
            Some(file) => Box::new(MockBackend::from_file(file).map_err(|e| e.to_string())?),
            None => return Err(format!("unknown backend {other:?}; use mock:FILE or live")),
        },
    };

    let report = run_eval(&manifest, &matrix, backend.as_ref(), &scenarios, args.parallel.max(1))
        .map_err(|e| e.to_string())?;
    emit_report(&report, format, &args.out).map_err(|e| e.to_string())?;

    let rate = report.top1_match_rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
    let latency = report.mean_latency_s.map_or("n/a".to_string(), |l| format!("{l:.3} s"));
    println!("top-1 match rate: {rate}  mean latency: {latency}");
    for s in &report.scenarios {
        let r = s.top1_match_rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        println!("  {:<28} {r}", s.scenario.label());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abc-eval: {e}");
            ExitCode::FAILURE
        }
    }
}
