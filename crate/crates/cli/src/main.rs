//! `polyvm` command-line entry points.

mod repl;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polyvm_core::plugin::ConversionPolicy;
use polyvm_core::vm::{VmConfig, DEFAULT_QUANTUM};
use polyvm_core::Vm;
use polyvm_service::{serve, ServerConfig};

pub const USAGE_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "polyvm", version, about = "Run and debug MiniPy and MiniRb programs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Instructions per scheduling quantum.
    #[arg(long, global = true, env = "POLYVM_BUDGET", value_name = "N")]
    budget: Option<i64>,
    /// Hand every cross-language value over as a reference.
    #[arg(long, global = true)]
    no_auto_convert: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one source file.
    Run {
        file: PathBuf,
        /// Language id; defaults to the one matching the file extension.
        #[arg(long)]
        lang: Option<String>,
    },
    /// Run a multi-language pipeline file.
    Pipeline { file: PathBuf },
    /// Serve the wire protocol and the web UI.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Directory of UI assets to serve instead of the built-in page.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Interactive read-eval-print loop.
    Repl {
        #[arg(long, default_value = "minipy")]
        lang: String,
    },
}

impl Common {
    fn vm_config(&self) -> Result<VmConfig, String> {
        let quantum = match self.budget {
            None => DEFAULT_QUANTUM,
            Some(n) if n >= 1 => n as u64,
            Some(n) => return Err(format!("invalid budget {n}; the quantum must be at least 1")),
        };
        let policy = if self.no_auto_convert { ConversionPolicy::wrap_everything() } else { ConversionPolicy::default() };
        Ok(VmConfig { quantum, policy, ..VmConfig::default() })
    }
}

fn usage(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    eprintln!("usage: polyvm [--budget N] [--no-auto-convert] <run|pipeline|serve|repl> ...");
    ExitCode::from(USAGE_ERROR)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match cli.common.vm_config() {
        Ok(c) => c,
        Err(e) => return usage(&e),
    };
    match cli.command {
        Command::Run { file, lang } => run::run_file(&file, lang.as_deref(), config),
        Command::Pipeline { file } => run::run_pipeline_file(&file, config),
        Command::Serve { port, assets } => {
            let (vm, _thread) = Vm::spawn_thread(config);
            match serve(vm, ServerConfig { port, assets }) {
                Ok(server) => {
                    println!("listening on http://{}/", server.local_addr());
                    server.join();
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Repl { lang } => repl::repl(&lang, config),
    }
}
