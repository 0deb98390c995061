use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use summar_guard_core::dsl::{self, parse_line, render_entry, Event, GraphFormat, RunOptions, Runner, Statement};
use summar_guard_core::graph::{dimension_table, Hierarchy};
use summar_guard_core::model::read_csv_path;
use summar_guard_core::property::PropagationMode;
use summar_guard_core::value::Value;

#[derive(Parser)]
#[command(name = "summar-guard", version, about = "Analytic sessions that reject incorrect aggregations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Basic,
    Sum,
    Gsum,
}

impl From<Mode> for PropagationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Basic => PropagationMode::Basic,
            Mode::Sum => PropagationMode::Summarizable,
            Mode::Gsum => PropagationMode::GSummarizable,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a session script and print its transcript.
    Run {
        script: PathBuf,
        /// Initial propagation mode; SET MODE statements still apply.
        #[arg(long, value_enum, default_value = "sum")]
        mode: Mode,
        /// Exit 0 even if an aggregation was rejected.
        #[arg(long)]
        allow_reject: bool,
        /// Line-delimited JSON events instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Interactive session on standard input.
    Repl {
        #[arg(long, value_enum, default_value = "sum")]
        mode: Mode,
    },
    /// HTTP service.
    Serve {
        #[arg(long, env = "SUMMAR_GUARD_PORT", default_value_t = 8080)]
        port: u16,
    },
    /// Print the attribute graph of a dimension.
    Graph {
        /// Dimension name (with --script) or a dimension CSV file.
        dimension: String,
        /// Script whose statements declare the dimension.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Hierarchy for a CSV file, e.g. "City < State < Country".
        /// Defaults to the column order.
        #[arg(long)]
        hierarchy: Option<String>,
        #[arg(long, conflicts_with = "json")]
        dot: bool,
        #[arg(long)]
        json: bool,
    },
}

fn base_dir(script: &Path) -> PathBuf {
    script.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn run(script: &Path, mode: Mode, allow_reject: bool, json: bool) -> ExitCode {
    let text = match std::fs::read_to_string(script) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("ERROR: {}: {e}", script.display());
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions { mode: mode.into(), allow_reject, json, base_dir: base_dir(script) };
    let (out, code) = dsl::run_script(&text, opts);
    print!("{out}");
    ExitCode::from(code as u8)
}

fn repl(mode: Mode) -> ExitCode {
    let mut runner = Runner::new(RunOptions { mode: mode.into(), ..RunOptions::default() });
    let stdin = std::io::stdin();
    let mut n = 0;
    loop {
        eprint!("sg> ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        match stdin.lock().read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        n += 1;
        let stmt = match parse_line(&line, n) {
            Ok(Some(s)) => s,
            Ok(None) => continue,
            Err(e) => {
                println!("ERROR: {e}\n");
                continue;
            }
        };
        let ev = runner.execute(&stmt).unwrap_or_else(|e| Event::Error { message: e.to_string() });
        print!("{}", render_entry(&stmt, n, &ev, false));
    }
    ExitCode::SUCCESS
}

fn graph(dimension: &str, script: Option<&Path>, hierarchy: Option<&str>, json: bool) -> Result<String, String> {
    let g = match script {
        Some(script) => {
            let text = std::fs::read_to_string(script).map_err(|e| format!("{}: {e}", script.display()))?;
            let mut runner = Runner::new(RunOptions { base_dir: base_dir(script), ..RunOptions::default() });
            for (_, stmt) in dsl::parse_script(&text).map_err(|e| e.to_string())? {
                if matches!(stmt, Statement::LoadDimension { .. } | Statement::LoadFact { .. }) {
                    runner.execute(&stmt).map_err(|e| e.to_string())?;
                }
            }
            runner.session.graph(dimension).map_err(|e| e.to_string())?
        }
        None => {
            let path = Path::new(dimension);
            let raw = read_csv_path(path).map_err(|e| e.to_string())?;
            let h = match hierarchy {
                Some(h) => {
                    let chains: Vec<Vec<String>> = h
                        .split(',')
                        .map(|c| c.split('<').map(|a| a.trim().to_string()).collect())
                        .collect();
                    Hierarchy::from_chains(&chains)
                }
                None => Hierarchy::chain(&raw.headers),
            };
            let rows = raw
                .rows
                .iter()
                .map(|r| r.iter().map(|c| Value::parse_cell(c, false)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("DIM").to_uppercase();
            dimension_table(&name, &raw.headers, rows, &h).map_err(|e| e.to_string())?.1
        }
    };
    let format = if json { GraphFormat::Json } else { GraphFormat::Dot };
    Ok(match format {
        GraphFormat::Dot => g.to_dot(),
        GraphFormat::Json => serde_json::to_string_pretty(&*g).map_err(|e| e.to_string())? + "\n",
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { script, mode, allow_reject, json } => run(&script, mode, allow_reject, json),
        Command::Repl { mode } => repl(mode),
        Command::Serve { port } => {
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            match rt.block_on(summar_guard::service::serve(port)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("ERROR: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Graph { dimension, script, hierarchy, dot: _, json } => {
            match graph(&dimension, script.as_deref(), hierarchy.as_deref(), json) {
                Ok(s) => {
                    print!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("ERROR: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
