use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fracp_fem::assembly::{write_matrix_coo, DiscreteFunction};
use fracp_fem::experiments::{run_experiment, ExperimentConfig};
use fracp_fem::norms::{besov_seminorm_discrete, energy_norm, wsp_norm, NormFamily, NormReport};
use fracp_fem::{solve, Config, Error, Result};

#[derive(Parser)]
#[command(name = "fracp-fem", version, about = "Fractional p-Laplacian finite elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Wsp,
    Energy,
    Besov,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixKind {
    /// The `p = 2` stiffness matrix.
    Stiffness,
    /// The Jacobian at the computed solution.
    Jacobian,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and print the solver report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dump_solution: Option<PathBuf>,
        #[arg(long)]
        dump_mesh: Option<PathBuf>,
        /// Write a matrix in coordinate text format.
        #[arg(long, num_args = 1..=2, value_names = ["PATH", "KIND"])]
        dump_matrix: Option<Vec<String>>,
    },
    /// Evaluate a norm of a stored solution and print a CSV row.
    Norm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, value_enum)]
        family: Family,
        /// Besov smoothness; defaults to `s + 1/p`.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run a parameter sweep; exits with 0 iff every cell succeeded.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })
}

fn write(path: &PathBuf, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io { path: path.clone(), source: e })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { config, dump_solution, dump_mesh, dump_matrix } => {
            let cfg = Config::load(&config)?;
            let (s, _) = cfg.single_order()?;
            let ctx = cfg.single_context()?;
            let mesh = ctx.mesh();
            if let Some(path) = &dump_mesh {
                write(path, &mesh.to_text())?;
            }
            let (u, report) = solve(&ctx, &cfg.forcing(s), &cfg.solver_params()?)?;
            print!("{}", report.to_text());
            if let Some(path) = &dump_solution {
                write(path, &u.to_text(mesh))?;
            }
            if let Some(args) = &dump_matrix {
                let path = PathBuf::from(&args[0]);
                let kind = match args.get(1) {
                    None => MatrixKind::Stiffness,
                    Some(k) => MatrixKind::from_str(k, true).map_err(Error::Config)?,
                };
                match kind {
                    MatrixKind::Stiffness => write_matrix_coo(ctx.stiffness(), &path)?,
                    MatrixKind::Jacobian => write_matrix_coo(&ctx.jacobian(&u.values)?, &path)?,
                }
            }
            Ok(true)
        }
        Command::Norm { config, solution, family, sigma } => {
            let cfg = Config::load(&config)?;
            let (s, p) = cfg.single_order()?;
            let ctx = cfg.single_context()?;
            let u = DiscreteFunction::from_text(ctx.mesh(), &read(&solution)?)?;
            let report = match family {
                Family::Wsp => NormReport {
                    family: NormFamily::Wsp,
                    value: wsp_norm(&ctx, &u.values)?,
                    order: s,
                    p,
                    quotients: Vec::new(),
                    metadata: format!("dofs={}", ctx.num_dofs()),
                },
                Family::Energy => NormReport {
                    family: NormFamily::Energy,
                    value: energy_norm(&ctx, &u.values)?,
                    order: s,
                    p,
                    quotients: Vec::new(),
                    metadata: format!("kernel={}", ctx.kernel().family().name()),
                },
                Family::Besov => {
                    besov_seminorm_discrete(ctx.mesh(), &u.values, sigma.unwrap_or(s + 1.0 / p), p, None)?
                }
            };
            println!("{}", NormReport::csv_header());
            println!("{}", report.csv_row());
            Ok(true)
        }
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (results, files) = run_experiment(&cfg)?;
            for c in &results.cells {
                match &c.outcome {
                    Ok(_) => eprintln!("s={} p={} ok ({:.1} s)", c.s, c.p, c.seconds),
                    Err(e) => eprintln!("s={} p={} failed: {e}", c.s, c.p),
                }
            }
            for f in files {
                println!("{}", f.display());
            }
            Ok(results.all_succeeded())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
