use bonedrill::harness::{
    aggregate, detect_offline, format_report, load_config, read_records, run_batch, write_records, TrialRecord,
};
use bonedrill::detector::write_timeline;
use bonedrill::palpation::write_trace;
use bonedrill::sensing::read_frames;
use bonedrill::workflow::{run_trial, EventLog, TrialConfig, TrialError};
use clap::{Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bonedrill", version, about = "Simulated bone-flap drilling trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print its outcome.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trial_id: u64,
        /// Write initial, palpation and exception frames here.
        #[arg(long, value_name = "DIR")]
        dump_frames: Option<PathBuf>,
        /// Newline-delimited JSON event log.
        #[arg(long, value_name = "FILE")]
        event_log: Option<PathBuf>,
        /// CSV of every palpation control step.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// CSV of the final trajectory.
        #[arg(long, value_name = "FILE")]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 360)]
        trajectory_samples: usize,
        /// Plain-text dump of the specimen state at the end of the trial.
        #[arg(long, value_name = "FILE")]
        specimen_dump: Option<PathBuf>,
    },
    /// Run independent trials and write the trial CSV.
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed_base: u64,
        /// Defaults to standard output, in which case the summary goes to stderr.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Run the deflection detector over a directory of dumped frames.
    Detect {
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Print the summary table of a trial CSV.
    Report {
        #[arg(long = "in", value_name = "CSV")]
        input: PathBuf,
    },
    /// Replay an event log through the state machine.
    Replay {
        #[arg(long, value_name = "FILE")]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    stage: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: 2,
            stage: "config",
            message: message.to_string(),
        }
    }

    fn io(path: &Path, message: impl ToString) -> Self {
        Self {
            code: 3,
            stage: "io",
            message: format!("{}: {}", path.display(), message.to_string()),
        }
    }

    fn workflow(stage: &'static str, message: impl ToString) -> Self {
        Self {
            code: 4,
            stage,
            message: message.to_string(),
        }
    }
}

impl From<TrialError> for Failure {
    fn from(e: TrialError) -> Self {
        match e {
            TrialError::Config(c) => Failure::config(c),
            TrialError::Io(io) => Failure {
                code: 3,
                stage: "io",
                message: io.to_string(),
            },
            TrialError::Detector(_) => Failure::workflow("detector", e),
            TrialError::Stall(_) => Failure::workflow("palpation", e),
            TrialError::Planner(_) => Failure::workflow("trajectory", e),
            TrialError::Fault(_) | TrialError::CycleLimit { .. } => Failure::workflow("workflow", e),
        }
    }
}

fn config(path: Option<&Path>) -> Result<TrialConfig, Failure> {
    match path {
        None => Ok(TrialConfig::default()),
        Some(p) if !p.exists() => Err(Failure::io(p, "config file not found")),
        Some(p) => load_config(p).map_err(Failure::config),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config: cfg_path,
            seed,
            trial_id,
            dump_frames,
            event_log,
            trace,
            trajectory,
            trajectory_samples,
            specimen_dump,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            let out = run_trial(&cfg, seed, trial_id, dump_frames.as_deref())?;
            if let Some(p) = &event_log {
                out.log.write_jsonl(create(p)?).map_err(|e| Failure::io(p, e))?;
            }
            if let Some(p) = &trace {
                let rows: Vec<_> = out
                    .palpations
                    .iter()
                    .flat_map(|v| v.per_point.iter())
                    .flat_map(|r| r.trace.iter().copied())
                    .collect();
                write_trace(create(p)?, &rows).map_err(|e| Failure::io(p, e))?;
            }
            if let Some(p) = &trajectory {
                out.trajectory
                    .write_csv(create(p)?, trajectory_samples.max(1))
                    .map_err(|e| Failure::io(p, e))?;
            }
            if let Some(p) = &specimen_dump {
                let mut w = create(p)?;
                w.write_all(out.specimen.debug_dump().as_bytes())
                    .and_then(|_| w.flush())
                    .map_err(|e| Failure::io(p, e))?;
            }
            let rec = TrialRecord::from_outcome(&out);
            println!(
                "trial {} seed {}: {} case {} detachable={} total={:.1}s palpation={:.1}s ({}) frames={}",
                rec.trial_id,
                rec.seed,
                out.final_state,
                rec.case,
                rec.detachable,
                rec.total_time,
                rec.palpation_time,
                bonedrill::harness::format_pct(rec.palpation_fraction),
                out.frames_dumped,
            );
            Ok(())
        }
        Command::Batch {
            config: cfg_path,
            trials,
            seed_base,
            out,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            let result = run_batch(&cfg, trials, seed_base);
            for bad in &result.invalid {
                eprintln!(
                    "trial {} (seed {}) excluded: {}",
                    bad.trial_id, bad.seed, bad.error
                );
            }
            let report = match aggregate(&result.records) {
                Ok(summary) => format_report(&result.records, &summary),
                Err(e) => return Err(Failure::workflow("batch", e)),
            };
            match &out {
                Some(p) => {
                    write_records(create(p)?, &result.records).map_err(|e| Failure::io(p, e))?;
                    print!("{report}");
                }
                None => {
                    write_records(io::stdout().lock(), &result.records)
                        .map_err(|e| Failure::io(Path::new("<stdout>"), e))?;
                    eprint!("{report}");
                }
            }
            Ok(())
        }
        Command::Detect {
            frames,
            config: cfg_path,
            out,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            if !frames.is_dir() {
                return Err(Failure::io(&frames, "frame directory not found"));
            }
            let dumped = read_frames(&frames).map_err(|e| Failure::io(&frames, e))?;
            if dumped.is_empty() {
                return Err(Failure::io(&frames, "no frames found"));
            }
            let readings = detect_offline(&cfg, &dumped).map_err(|e| match e {
                bonedrill::harness::OfflineError::Config(c) => Failure::config(c),
                other => Failure::workflow("detector", other),
            })?;
            match &out {
                Some(p) => write_timeline(create(p)?, &readings).map_err(|e| Failure::io(p, e)),
                None => write_timeline(io::stdout().lock(), &readings)
                    .map_err(|e| Failure::io(Path::new("<stdout>"), e)),
            }
        }
        Command::Report { input } => {
            let records = read_records(open(&input)?).map_err(|e| Failure::io(&input, e))?;
            let summary = aggregate(&records).map_err(|e| Failure::workflow("report", e))?;
            print!("{}", format_report(&records, &summary));
            Ok(())
        }
        Command::Replay { log, config: cfg_path } => {
            let cfg = config(cfg_path.as_deref())?;
            let events = EventLog::read_jsonl(open(&log)?).map_err(|e| Failure::io(&log, e))?;
            let states = events
                .replay(&cfg.workflow)
                .map_err(|e| Failure::workflow("replay", e))?;
            for s in &states {
                println!("{s}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("bonedrill: {} error: {}", f.stage, f.message);
            ExitCode::from(f.code)
        }
    }
}
