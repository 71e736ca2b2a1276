use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sched_core::bench::{bench_bcast_ratio, bench_create_overhead, bench_overlap};
use sched_core::eventlog::write_events;
use sched_core::{BenchRecord, Event, TransportKind, WorldConfig};

/// Benchmarks for persistent user-level schedules.
#[derive(Debug, Parser)]
#[command(name = "schedbench", version)]
struct Cli {
    /// Progress threads per rank.
    #[arg(long, global = true, default_value_t = 1)]
    progress_threads: usize,

    /// Transport between ranks.
    #[arg(long, global = true, default_value = "inproc")]
    transport: TransportKind,

    /// Write every rank's event log to this file.
    #[arg(long, global = true)]
    event_log: Option<PathBuf>,

    /// Write CSV rows to this file instead of stdout.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time schedule creation: init, adds, rounds and commit.
    CreateOverhead {
        /// Operations per schedule; a comma-separated list runs each.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        ops: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
    },
    /// Compare a restarted scheduled broadcast with blocking broadcasts.
    Bcast {
        /// Rank counts; a comma-separated list runs each.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        ranks: Vec<u32>,
        /// Broadcasts per measurement; a comma-separated list runs each.
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,1000")]
        iters: Vec<usize>,
        #[arg(long, default_value_t = 1024)]
        bytes: usize,
        /// Independent repetitions per point; the median is reported.
        #[arg(long, default_value_t = 11)]
        trials: usize,
        /// Use ranks 2,4,8,16,32 regardless of --ranks.
        #[arg(long)]
        full_grid: bool,
    },
    /// Measure free time while a ring schedule progresses in the background.
    Overlap {
        #[arg(long, default_value_t = 4)]
        ranks: u32,
        #[arg(long, default_value_t = 6)]
        compute_blocks: usize,
        #[arg(long, default_value_t = 20.0)]
        block_ms: f64,
        #[arg(long, default_value_t = 3)]
        comm_seqs: usize,
        #[arg(long, default_value_t = 1024)]
        bytes: usize,
    },
}

const FULL_GRID_RANKS: [u32; 5] = [2, 4, 8, 16, 32];

struct Report {
    records: Vec<BenchRecord>,
    logs: Vec<Vec<Event>>,
}

fn run(cli: &Cli) -> Result<Report> {
    let base = WorldConfig::inproc(1)
        .with_transport(cli.transport)
        .with_progress_threads(cli.progress_threads)
        .with_event_log(cli.event_log.is_some());
    let mut report = Report {
        records: Vec::new(),
        logs: Vec::new(),
    };
    match &cli.command {
        Command::CreateOverhead { ops, reps } => {
            for &n in ops {
                let r = bench_create_overhead(&base, n, *reps).with_context(|| format!("create-overhead ops={n}"))?;
                eprintln!("create-overhead ops={n}: mean {:.4} ms, stddev {:.4} ms", r.mean_ms, r.stddev_ms);
                report.records.extend(r.records());
                report.logs.extend(r.logs);
            }
        }
        Command::Bcast {
            ranks,
            iters,
            bytes,
            trials,
            full_grid,
        } => {
            let ranks = if *full_grid { FULL_GRID_RANKS.to_vec() } else { ranks.clone() };
            for &p in &ranks {
                for &i in iters {
                    let r = bench_bcast_ratio(&base, p, i, *bytes, *trials)
                        .with_context(|| format!("bcast ranks={p} iters={i}"))?;
                    eprintln!(
                        "bcast ranks={p} iters={i}: scheduled {:.3} ms, direct {:.3} ms, ratio {:.1}%",
                        r.scheduled_ms, r.direct_ms, r.ratio_percent
                    );
                    report.records.extend(r.records());
                    report.logs.extend(r.logs);
                }
            }
        }
        Command::Overlap {
            ranks,
            compute_blocks,
            block_ms,
            comm_seqs,
            bytes,
        } => {
            if !block_ms.is_finite() || *block_ms < 0.0 {
                bail!("--block-ms must be a non-negative number");
            }
            let r = bench_overlap(&base, *ranks, *compute_blocks, *block_ms, *comm_seqs, *bytes)
                .context("overlap")?;
            eprintln!(
                "overlap ranks={ranks}: free time {:.2}%, comm alone {:.3} ms, test calls {}",
                r.free_percent, r.comm_only_ms, r.test_calls
            );
            report.records.extend(r.records());
            report.logs.extend(r.logs);
        }
    }
    Ok(report)
}

fn write_csv(records: &[BenchRecord], out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_logs(path: &Path, logs: &[Vec<Event>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, log) in logs.iter().enumerate() {
        writeln!(out, "# world {i}")?;
        write_events(&mut out, log)?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|report| {
        match &cli.csv {
            Some(path) => write_csv(&report.records, File::create(path).with_context(|| path.display().to_string())?)?,
            None => write_csv(&report.records, io::stdout().lock())?,
        }
        if let Some(path) = &cli.event_log {
            write_logs(path, &report.logs).with_context(|| path.display().to_string())?;
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("schedbench: {e:#}");
            ExitCode::FAILURE
        }
    }
}
