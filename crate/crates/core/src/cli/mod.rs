//! Command-line interface: verb dispatch, flat key=value configuration, and
//! the columnar grid data format.
//!
//! Exit codes are a stable contract: 0 success, 1 usage, 2 validation,
//! 3 numerical failure.

mod commands;
mod config;
mod ingest;

pub use config::{resolve_config, RunConfig};
pub use ingest::{dataset_summary, export_dataset, ingest, ingest_str};

use crate::error::{Error, Result};

const USAGE: &str = "\
stdml -- spatiotemporal double machine learning on gridded two-period data

USAGE:
    stdml <verb> [--config FILE] [--key value ...]

VERBS:
    simulate    generate a synthetic dataset        (--seed --out [--design pixel|block]
                                                     [--nu --m --rho --gamma --missing
                                                      --tau2 --temperature --truth])
    fit         estimate treatment effects          (--seed --data [--methods ols,did,dml]
                                                     [--features x|xs|xsz --cf none|pixel|block
                                                      --k --l --re none|block --nb queen8|rook4
                                                      --trees --btrees --burn --kept --out])
    importance  first-stage split-count importance  (--seed --data [fit options] [--out])
    knot-sweep  effect vs spatial basis size        (--seed --data --l-values 0,49,100
                                                     [fit options] [--out PREFIX])
    sweep       Monte Carlo method comparison       (--seed [--design --nu --reps
                                                     --preset table1|table2 --methods ...
                                                     --serial true --out PREFIX])
    report      pretty-print a saved output         (--input FILE)

Settings may come from a --config file of key=value lines; command-line
flags override it. Every run requires a seed and embeds its resolved
configuration in the files it writes.";

fn dispatch(args: &[String]) -> Result<()> {
    let Some(verb) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Error::Usage("no verb given".into()));
    };
    if verb == "--help" || verb == "-h" || verb == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let cfg = config::resolve_config(&args[1..])?;
    match verb.as_str() {
        "simulate" => commands::cmd_simulate(&cfg),
        "fit" => commands::cmd_fit(&cfg),
        "importance" => commands::cmd_importance(&cfg),
        "knot-sweep" => commands::cmd_knot_sweep(&cfg),
        "sweep" => commands::cmd_sweep(&cfg),
        "report" => commands::cmd_report(&cfg),
        other => {
            eprintln!("{USAGE}");
            Err(Error::Usage(format!("unknown verb '{other}'")))
        }
    }
}

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
