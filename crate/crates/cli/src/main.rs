use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gshf_cli::output::{ensure_dir, JsonLines, Manifest};
use gshf_cli::suite::{run_identity_suite, SuiteSize};
use gshf_cli::{reproduce_figure, run_scenario, CliError, CliResult, FigureName, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "gshf", version, about = "KL-regularized preference learning experiments")]
struct Cli {
    /// Master seed (overrides the scenario's).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run { config: PathBuf },
    /// Regenerate figure data and a rendering.
    Figure {
        #[arg(value_enum)]
        name: FigureName,
    },
    /// Run the exact identity suite.
    Check,
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config } => {
            let summary = run_scenario(&config, &RunOptions { seed: cli.seed, out: cli.out, jobs: cli.jobs })?;
            println!(
                "wrote {} rows to {} (manifest {})",
                summary.rows,
                summary.out_dir.display(),
                &summary.manifest_hash[..12]
            );
            if summary.failures.is_empty() {
                Ok(())
            } else {
                for f in &summary.failures {
                    eprintln!("failed: {f}");
                }
                Err(CliError::Runtime(format!("{} job(s) failed; partial results kept", summary.failures.len())))
            }
        }
        Command::Figure { name } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("figures").join(name.slug()));
            let (hash, files) = reproduce_figure(name, &out, cli.seed.unwrap_or(0))?;
            for f in files {
                println!("{}", f.display());
            }
            println!("manifest {}", &hash[..12]);
            Ok(())
        }
        Command::Check => {
            let seed = cli.seed.unwrap_or(0);
            let out = cli.out.unwrap_or_else(|| PathBuf::from("check"));
            ensure_dir(&out)?;
            let mut manifest = Manifest::new("check", "identity-suite", seed, serde_json::json!({"suite": "default"}));
            manifest.files = vec!["reports.jsonl".into()];
            let hash = manifest.write(&out)?;
            let (summaries, reports) = run_identity_suite(seed, SuiteSize::default())?;
            let mut lines = JsonLines::create(&out.join("reports.jsonl"))?;
            for r in &reports {
                lines.line(&serde_json::json!({"manifest_hash": hash, "report": r}))?;
            }
            lines.finish()?;
            let mut ok = true;
            for s in &summaries {
                let verdict = if s.ok() { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {}/{} (worst margin {:.3e})", s.name, s.passed, s.total, s.worst_margin);
                ok &= s.ok();
            }
            if ok {
                Ok(())
            } else {
                Err(CliError::Validation("identity suite failed".into()))
            }
        }
        Command::Validate { config } => {
            let s = Scenario::load(&config)?;
            println!(
                "{}: {} `{}` sweep points × {} trials",
                config.display(),
                s.config.points().len(),
                s.config.algorithm.kind.name(),
                s.config.trials
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
