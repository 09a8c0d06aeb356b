use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kbandit::kernels::Regularity;
use kbandit_cli::commands::{self, BuildArgs, DEFAULT_CERT_GRID, DEFAULT_EXPORT_GRID};
use kbandit_cli::sweep::{run_sweep, write_outputs};
use kbandit_cli::{CliError, Config};

#[derive(Parser)]
#[command(name = "kbandit", version, about = "Kernelised bandit experiments under unknown smoothness")]
struct Cli {
    /// Overrides `seed_base` of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the sweep.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs a sweep described by a config file.
    Simulate { config: PathBuf },
    /// Lower-bound instances.
    Adversary {
        #[command(subcommand)]
        cmd: AdvCmd,
    },
    /// Theory exponents for a (nu1, nu2, nu_tilde) triple.
    Exponents {
        #[arg(long)]
        nu1: Regularity,
        #[arg(long)]
        nu2: Regularity,
        #[arg(long = "nu-tilde")]
        nu_tilde: Regularity,
    },
    /// Kernel self-checks.
    Kernels {
        #[command(subcommand)]
        cmd: KernelCmd,
    },
}

#[derive(Subcommand)]
enum AdvCmd {
    /// Constructs, certifies and exports an instance.
    Build {
        #[arg(long)]
        m1: u32,
        #[arg(long)]
        m2: u32,
        #[arg(long = "L2")]
        l2: f64,
        #[arg(long)]
        rtilde: f64,
        /// `auto` or a value.
        #[arg(long = "L1", default_value = "auto")]
        l1: String,
        /// Intervals of the exported table.
        #[arg(long, default_value_t = DEFAULT_EXPORT_GRID)]
        grid: usize,
        #[arg(long = "cert-grid", default_value_t = DEFAULT_CERT_GRID)]
        cert_grid: usize,
    },
    /// Re-checks an exported instance.
    Certify {
        file: PathBuf,
        #[arg(long = "cert-grid", default_value_t = DEFAULT_CERT_GRID)]
        cert_grid: usize,
    },
}

#[derive(Subcommand)]
enum KernelCmd {
    Check,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out.clone();
    match cli.cmd {
        Cmd::Simulate { config } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = Config::parse(&text)?;
            if let Some(s) = cli.seed {
                cfg.experiment.seed_base = s;
            }
            if let Some(w) = cli.workers {
                cfg.experiment.workers = w.max(1);
            }
            if let Some(o) = out_dir {
                cfg.experiment.output_dir = o;
            }
            let out = run_sweep(&cfg)?;
            write_outputs(&out, &cfg.experiment.output_dir)?;
            for (env, algo, fit) in &out.fits {
                match fit {
                    Some(f) => println!("{env} {algo}: slope {:.4} +- {:.4}", f.slope, f.stderr),
                    None => println!("{env} {algo}: no slope (need >= 4 horizons)"),
                }
            }
            println!(
                "wrote {} rows to {}",
                out.rows.len(),
                cfg.experiment.output_dir.join("summary.csv").display()
            );
        }
        Cmd::Adversary { cmd: AdvCmd::Build { m1, m2, l2, rtilde, l1, grid, cert_grid } } => {
            let l1 = match l1.as_str() {
                "auto" => None,
                v => Some(
                    v.parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("--L1 `{v}`: {e}")))?,
                ),
            };
            if grid < 2 || cert_grid < 2 {
                return Err(CliError::Usage("grids need at least 2 intervals".into()));
            }
            let args = BuildArgs {
                m1,
                m2,
                l2,
                r_tilde: rtilde,
                l1,
                export_grid: grid,
                cert_grid,
            };
            let (path, report) = commands::adversary_build(&args, &out_dir.unwrap_or_else(|| PathBuf::from(".")))?;
            print!("{report}");
            println!("wrote {}", path.display());
        }
        Cmd::Adversary { cmd: AdvCmd::Certify { file, cert_grid } } => {
            print!("{}", commands::adversary_certify(&file, cert_grid)?);
        }
        Cmd::Exponents { nu1, nu2, nu_tilde } => print!("{}", commands::exponents(nu1, nu2, nu_tilde)?),
        Cmd::Kernels { cmd: KernelCmd::Check } => print!("{}", commands::kernels_check()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
