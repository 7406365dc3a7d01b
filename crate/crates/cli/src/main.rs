use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use pardyn::bench::{emit_csv, run_benchmark, write_csv, BenchAlgo, BenchConfig, BenchMode};

/// Time forward and inverse dynamics over link-count or group-count sweeps.
///
/// Exit status: 0 when every cell succeeds, 2 when some cells fail, 1 on a
/// configuration or output error.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Args {
    /// Sweep over chain length (link) or batch size (group).
    #[arg(long, default_value = "link")]
    mode: BenchMode,

    /// Comma-separated subset of jsiia, abia, cfa, invdyn.
    #[arg(long, value_delimiter = ',', default_value = "jsiia,abia,cfa")]
    algos: Vec<BenchAlgo>,

    /// Comma-separated link counts.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,200")]
    links: Vec<usize>,

    /// Comma-separated group sizes (group mode only).
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    groups: Vec<usize>,

    /// Timed calls per cell, after 3 untimed warm-up calls.
    #[arg(long, default_value_t = 1000)]
    repeats: usize,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    workers: Option<usize>,

    /// CSV output path; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Skip the cross-algorithm spot checks.
    #[arg(long)]
    no_spot_check: bool,
}

impl Args {
    fn into_config(self) -> BenchConfig {
        let defaults = BenchConfig::default();
        BenchConfig {
            mode: self.mode,
            algos: self.algos,
            link_counts: self.links,
            group_counts: self.groups,
            repeats: self.repeats,
            seed: self.seed,
            workers: self.workers.unwrap_or(defaults.workers),
            output_path: self.out,
            spot_check: !self.no_spot_check,
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let config = args.into_config();
    let outcome = match run_benchmark(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let written = match &config.output_path {
        Some(path) => emit_csv(&outcome.records, path).map_err(|e| e.to_string()),
        None => write_csv(&outcome.records, io::stdout().lock()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for f in &outcome.failures {
        eprintln!("cell failed: {f}");
    }
    if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
