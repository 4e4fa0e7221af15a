//! `dissipnet`: certify, decompose and verify networks from JSON files.
//!
//! Exit codes: 0 certified / ok, 2 not certified, 1 error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dissipnet::admm::{audit_messages, run_alg1, run_alg2, Algorithm, RunStatus};
use dissipnet::app::io::{read_certificates, read_network, write_json, write_network, CertificateFile};
use dissipnet::app::report::{emit_report, RunSummary};
use dissipnet::app::uav::{build_uav_network, LeaderTopology, UavParams};
use dissipnet::app::verify::verify_certificate;
use dissipnet::chordal::build_decomposition;

#[derive(Parser)]
#[command(
    name = "dissipnet",
    version,
    about = "Distributed dissipativity-based stability certification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the ADMM solvers and write certificate, trace, audit log and summary.
    Analyze {
        #[arg(long)]
        net: PathBuf,
        /// 1 = global stability projection, 2 = clique decomposition.
        #[arg(long, default_value = "2")]
        alg: Algorithm,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the file's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the file's iteration limit.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Print the chordal decomposition of the coupled stability matrix.
    Decompose {
        #[arg(long)]
        net: PathBuf,
    },
    /// Re-check a certificate file against a network.
    Verify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        /// Strictness shift; defaults to the certificate's, then the network's.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Write a built-in example network.
    Example {
        #[command(subcommand)]
        which: Example,
    },
    /// Tabulate the summaries of previous `analyze` runs.
    Report {
        /// Directory holding run directories (or a single run).
        #[arg(long)]
        runs: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Example {
    /// The UAV swarm: subgroups of one leader and two followers.
    Uav {
        #[arg(long, default_value_t = 4)]
        subgroups: usize,
        #[arg(long, default_value = "star")]
        topology: LeaderTopology,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome of a command that has a verdict.
enum Verdict {
    Ok,
    NotCertified,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::NotCertified) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Verdict> {
    match cli.command {
        Command::Analyze {
            net,
            alg,
            out,
            workers,
            max_iter,
        } => analyze(&net, alg, &out, workers, max_iter),
        Command::Decompose { net } => {
            let (net, _) = read(&net)?;
            let dec = build_decomposition(&net)?;
            println!("{}", serde_json::to_string_pretty(&dec.summary())?);
            Ok(Verdict::Ok)
        }
        Command::Verify { net, cert, epsilon } => {
            let (network, cfg) = read(&net)?;
            let certs = read_certificates(&cert, &network).with_context(|| format!("reading {}", cert.display()))?;
            let file_eps = serde_json::from_str::<CertificateFile>(&fs::read_to_string(&cert)?)?.epsilon;
            let eps = epsilon
                .or(file_eps)
                .unwrap_or_else(|| cfg.effective_epsilon(&network.h));
            let report = verify_certificate(&network, &certs, eps);
            println!("{report}");
            Ok(if report.passed {
                Verdict::Ok
            } else {
                Verdict::NotCertified
            })
        }
        Command::Example {
            which:
                Example::Uav {
                    subgroups,
                    topology,
                    out,
                },
        } => {
            let params = UavParams {
                topology,
                ..UavParams::with_subgroups(subgroups)
            };
            let net = build_uav_network(&params)?;
            write_network(&out, &net, &Default::default())?;
            println!("wrote {} UAVs to {}", net.len(), out.display());
            Ok(Verdict::Ok)
        }
        Command::Report { runs, out } => {
            let summaries = collect_summaries(&runs)?;
            let report = emit_report(&summaries)?;
            match out {
                Some(path) => {
                    report.write_csv(fs::File::create(&path)?)?;
                    print!("{}", report.summary);
                }
                None => {
                    print!("{}", report.csv_string()?);
                    eprint!("{}", report.summary);
                }
            }
            Ok(Verdict::Ok)
        }
    }
}

fn read(path: &Path) -> Result<(dissipnet::model::Network, dissipnet::model::SolverConfig)> {
    read_network(path).with_context(|| format!("reading {}", path.display()))
}

fn analyze(
    path: &Path,
    alg: Algorithm,
    out: &Path,
    workers: Option<usize>,
    max_iter: Option<usize>,
) -> Result<Verdict> {
    let (net, mut cfg) = read(path)?;
    if let Some(w) = workers {
        cfg.worker_count = w;
    }
    if let Some(k) = max_iter {
        cfg.max_iter = k;
    }
    let outcome = match alg {
        Algorithm::Alg1 => run_alg1(&net, &cfg),
        Algorithm::Alg2 => run_alg2(&net, &cfg),
    }?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(
        &out.join("certificate.json"),
        &CertificateFile::new(&outcome.certificates, outcome.lambda_max, Some(outcome.epsilon)),
    )?;
    outcome.write_trace(&out.join("trace.csv"))?;
    if let Some(log) = &outcome.audit {
        log.write_jsonl(fs::File::create(out.join("audit.jsonl"))?)?;
        let audit = audit_messages(log);
        if !audit.passed {
            eprintln!("audit FAILED: {}", audit.violations.join("; "));
        }
    }
    let summary = RunSummary::new(net.len(), &outcome);
    write_json(&out.join("summary.json"), &summary)?;

    println!(
        "{}: {} after {} iterations ({:.2} ms/iter), lambda_max(Qbar) = {}",
        alg.as_str(),
        outcome.status.as_str(),
        outcome.iterations,
        summary.avg_iter_ms,
        outcome.lambda_max.map_or("n/a".into(), |l| format!("{l:.3e}")),
    );
    match outcome.status {
        RunStatus::Certified => {
            println!("network certified L2-stable");
            Ok(Verdict::Ok)
        }
        RunStatus::MaxIter => {
            println!("not certified: no dissipativity certificate found (this does not show instability)");
            Ok(Verdict::NotCertified)
        }
        RunStatus::Error => bail!(outcome.message.unwrap_or_else(|| "solver error".into())),
    }
}

/// `summary.json` in `dir` itself or in its immediate subdirectories.
fn collect_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let load = |p: &Path| -> Result<RunSummary> {
        serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))
    };
    let own = dir.join("summary.json");
    if own.is_file() {
        return Ok(vec![load(&own)?]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("summary.json")))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no run summaries under {}", dir.display());
    }
    entries.iter().map(|p| load(p)).collect()
}
