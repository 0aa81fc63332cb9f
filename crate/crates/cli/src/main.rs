use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use eigenfed_cli::{emit_csv, exit, parse_config, run_experiment, write_csv};

/// Run a synthetic distributed-eigenspace experiment and write its CSV.
#[derive(Debug, Parser)]
#[command(name = "eigenfed", version)]
struct Cli {
    /// synth-pca, vary-m, intdim-sweep, fixed-rank-sweep, nongauss, bound-check or quadsense
    experiment: String,
    /// Configuration file with [experiment], [model] and [output] sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<String>,
    /// Subspace dimension (a comma-separated list for fixed-rank-sweep)
    #[arg(long)]
    r: Option<String>,
    /// Machine count (a list for vary-m)
    #[arg(long)]
    m: Option<String>,
    /// Samples per machine (a list for the n sweeps)
    #[arg(long)]
    n: Option<String>,
    /// m1(lambda_lo, lambda_hi, delta) or m2(delta, r_star)
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated estimator tags: erm, one, fix, itr, rot, nve
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long = "n-iter")]
    n_iter: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output CSV path (stdout when absent)
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "timeout-s")]
    timeout_s: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("name", Some(&self.experiment)),
            ("d", self.d.as_ref()),
            ("r", self.r.as_ref()),
            ("m", self.m.as_ref()),
            ("n", self.n.as_ref()),
            ("estimators", self.estimators.as_ref()),
            ("n_iter", self.n_iter.as_ref()),
            ("repetitions", self.reps.as_ref()),
            ("seed", self.seed.as_ref()),
            ("path", self.out.as_ref()),
            ("timeout_s", self.timeout_s.as_ref()),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG_ERROR as u8 } else { 0 });
        }
    };
    let cfg = match parse_config(cli.config.as_deref(), &cli.overrides(), cli.model.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("eigenfed: {e}");
            return ExitCode::from(exit::CONFIG_ERROR as u8);
        }
    };
    let table = match run_experiment(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("eigenfed: {e}");
            return ExitCode::from(exit::RUNTIME_FAILURE as u8);
        }
    };
    let written = match &cfg.out_path {
        Some(path) => emit_csv(&table, path),
        None => write_csv(&table, std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("eigenfed: cannot write results: {e}");
        return ExitCode::from(exit::RUNTIME_FAILURE as u8);
    }
    ExitCode::SUCCESS
}
