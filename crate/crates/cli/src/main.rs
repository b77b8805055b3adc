use std::io;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use babe::prior::GaussianPrior;
use babe::remote::serve;
use babe_cli::config::Mode;
use babe_cli::{run_restoration, CliError, PipelineConfig};
use clap::{Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "babe", version, about = "Blind audio bandwidth extension")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Restore (or degrade, in simulate mode) a WAV file.
    Restore {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-step diagnostics as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        predenoise_cmd: Option<String>,
    },
    /// Serve the analytic Gaussian prior over the denoiser protocol, on
    /// stdin/stdout or a TCP address.
    ServeGaussian {
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
        #[arg(long, default_value_t = 500.0)]
        f_knee: f64,
        #[arg(long, default_value_t = 0.07)]
        sigma_data: f64,
        /// `host:port`; stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Restore {
            input,
            output,
            config,
            mode,
            seed,
            trace,
            predenoise_cmd,
        } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            cfg.input = input.or(cfg.input);
            cfg.output = output.or(cfg.output);
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.trace = trace.or(cfg.trace);
            cfg.predenoise_cmd = predenoise_cmd.or(cfg.predenoise_cmd);
            run_restoration(&cfg).map(|_| ())
        }
        Cmd::ServeGaussian {
            length,
            sample_rate,
            f_knee,
            sigma_data,
            listen,
        } => {
            let mut prior = GaussianPrior::decaying(length, sample_rate, f_knee, sigma_data)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            match listen {
                None => serve(&mut prior, io::stdin().lock(), io::stdout().lock())?,
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
                    let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
                    println!("listening on {local}");
                    for stream in listener.incoming() {
                        let stream = stream.map_err(|e| CliError::Io(e.to_string()))?;
                        let reader = stream.try_clone().map_err(|e| CliError::Io(e.to_string()))?;
                        if let Err(e) = serve(&mut prior, reader, stream) {
                            log::warn!("session ended: {e}");
                        }
                    }
                }
            }
            Ok(())
        }
        Cmd::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(())
        }
    }
}
