use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ghosthunt_core::config::Config;
use ghosthunt_core::corpus::demo_firmware;
use ghosthunt_core::pipeline::analyze_path;
use ghosthunt_core::report::{emit_report, ReportFormat};
use ghosthunt_core::userview::import_requests;

const EXIT_CLEAN: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_HIDDEN: u8 = 2;

#[derive(Parser)]
#[command(name = "ghosthunt", version, about = "Find firmware services that the web interface never exposes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a firmware directory or tar archive.
    Analyze {
        firmware: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// json, text or dot.
        #[arg(long, default_value = "json")]
        format: String,
        /// How deep the engine steps into calls off the guided path.
        #[arg(long)]
        step_depth: Option<usize>,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON array of externally captured requests to treat as user-visible.
        #[arg(long)]
        import_requests: Option<PathBuf>,
        #[arg(long)]
        max_states: Option<usize>,
    },
    /// Write the generated demo firmware tree to a directory.
    Demo { dir: PathBuf },
}

fn analyze(
    firmware: &Path,
    out: Option<&Path>,
    format: &str,
    step_depth: Option<usize>,
    config: Option<&Path>,
    imported: Option<&Path>,
    max_states: Option<usize>,
) -> Result<u8> {
    let format: ReportFormat = format.parse()?;
    let mut cfg = match config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(d) = step_depth {
        cfg.engine.step_depth = d;
    }
    if let Some(m) = max_states {
        cfg.engine.max_states = m;
    }
    let requests = match imported {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            import_requests(&text, &p.display().to_string()).with_context(|| format!("invalid request list {}", p.display()))?
        }
        None => Vec::new(),
    };
    let report = analyze_path(firmware, &cfg, &requests)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let bytes = emit_report(&report, format);
    match out {
        Some(p) => std::fs::write(p, &bytes).with_context(|| format!("cannot write {}", p.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    log::info!("{} services, {} hidden, {} unconfirmed", report.services.len(), report.hidden.len(), report.unconfirmed.len());
    Ok(if report.hidden.is_empty() { EXIT_CLEAN } else { EXIT_HIDDEN })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze { firmware, out, format, step_depth, config, import_requests, max_states } => analyze(
            &firmware,
            out.as_deref(),
            &format,
            step_depth,
            config.as_deref(),
            import_requests.as_deref(),
            max_states,
        ),
        Command::Demo { dir } => {
            demo_firmware().write_to(&dir).with_context(|| format!("cannot write {}", dir.display()))?;
            Ok(EXIT_CLEAN)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_CLEAN };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
