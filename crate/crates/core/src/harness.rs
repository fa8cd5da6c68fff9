//! Configuration files, batch runs, the trial CSV and the summary report.

use crate::detector::{capture_initial, DetachabilityReading, DetectError, Detector, DetectorConfig, Stage};
use crate::sensing::DumpedFrame;
use crate::workflow::{run_trial, TrialConfig, TrialError, TrialOutcome};
use crate::ConfigError;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Reads a TOML config. Missing keys take their defaults; unknown keys are errors.
pub fn load_config(path: &Path) -> Result<TrialConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<TrialConfig, ConfigError> {
    let cfg: TrialConfig = toml::from_str(text).map_err(|e| {
        let key = e
            .message()
            .split('`')
            .nth(1)
            .unwrap_or("config")
            .to_string();
        ConfigError::new(key, e.to_string().trim_end().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// One row of the trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub successful: bool,
    pub detachable: bool,
    pub case: u8,
    pub total_time: f64,
    pub palpation_time: f64,
    pub palpation_fraction: f64,
    pub halted: bool,
}

impl TrialRecord {
    pub fn from_outcome(o: &TrialOutcome) -> Self {
        Self {
            trial_id: o.trial_id,
            seed: o.seed,
            successful: o.successful,
            detachable: o.detachable,
            case: o.case.number(),
            total_time: o.total_s(),
            palpation_time: o.palpation_s(),
            palpation_fraction: o.palpation_fraction(),
            halted: o.halted,
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "trial_id",
    "seed",
    "successful",
    "detachable",
    "case",
    "total_s",
    "palpation_s",
    "palpation_pct",
    "halted",
];

/// Percentage with one decimal, e.g. `28.1%`.
pub fn format_pct(fraction: f64) -> String {
    format!("{:.1}%", 100.0 * fraction)
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Field { row: usize, reason: String },
}

pub fn write_records<W: std::io::Write>(out: W, records: &[TrialRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.trial_id.to_string(),
            r.seed.to_string(),
            r.successful.to_string(),
            r.detachable.to_string(),
            r.case.to_string(),
            r.total_time.to_string(),
            r.palpation_time.to_string(),
            format_pct(r.palpation_fraction),
            r.halted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<TrialRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(RecordError::Field {
            row: 0,
            reason: format!("unexpected header {}", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let n = i + 1;
        let bad = |what: &str, v: &str| RecordError::Field {
            row: n,
            reason: format!("{what}: cannot parse `{v}`"),
        };
        macro_rules! field {
            ($idx:expr, $t:ty) => {
                row[$idx].parse::<$t>().map_err(|_| bad(CSV_HEADER[$idx], &row[$idx]))?
            };
        }
        let total_time = field!(5, f64);
        let palpation_time = field!(6, f64);
        let palpation_fraction = if total_time > 0.0 {
            palpation_time / total_time
        } else {
            0.0
        };
        if format_pct(palpation_fraction) != row[7] {
            return Err(bad("palpation_pct", &row[7]));
        }
        let case = field!(4, u8);
        if !(1..=4).contains(&case) {
            return Err(bad("case", &row[4]));
        }
        out.push(TrialRecord {
            trial_id: field!(0, u64),
            seed: field!(1, u64),
            successful: field!(2, bool),
            detachable: field!(3, bool),
            case,
            total_time,
            palpation_time,
            palpation_fraction,
            halted: field!(8, bool),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_trials: usize,
    pub success_ratio: f64,
    pub detachable_ratio: f64,
    pub mean_total_time: f64,
    pub mean_palpation_time: f64,
    pub mean_palpation_fraction: f64,
    /// Trials per case, Case 1 first.
    pub case_histogram: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no valid trial records to aggregate")]
pub struct EmptyBatch;

pub fn aggregate(records: &[TrialRecord]) -> Result<BatchSummary, EmptyBatch> {
    if records.is_empty() {
        return Err(EmptyBatch);
    }
    let n = records.len() as f64;
    let mean = |f: fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let mut case_histogram = [0; 4];
    for r in records {
        case_histogram[r.case as usize - 1] += 1;
    }
    Ok(BatchSummary {
        n_trials: records.len(),
        success_ratio: records.iter().filter(|r| r.successful).count() as f64 / n,
        detachable_ratio: records.iter().filter(|r| r.detachable).count() as f64 / n,
        mean_total_time: mean(|r| r.total_time),
        mean_palpation_time: mean(|r| r.palpation_time),
        mean_palpation_fraction: mean(|r| r.palpation_fraction),
        case_histogram,
    })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Table of trials followed by the averages row and the batch ratios.
pub fn format_report(records: &[TrialRecord], summary: &BatchSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5}  {:>20}  {:>7}  {:>10}  {:>4}  {:>7}  {:>16}  {:>6}",
        "trial", "seed", "success", "detachable", "case", "total_s", "palpation_s", "halted"
    );
    for r in records {
        let _ = writeln!(
            s,
            "{:>5}  {:>20}  {:>7}  {:>10}  {:>4}  {:>7.0}  {:>16}  {:>6}",
            r.trial_id,
            r.seed,
            yes_no(r.successful),
            yes_no(r.detachable),
            r.case,
            r.total_time,
            format!("{:.0} ({})", r.palpation_time, format_pct(r.palpation_fraction)),
            yes_no(r.halted),
        );
    }
    let avg_pct = if summary.mean_total_time > 0.0 {
        summary.mean_palpation_time / summary.mean_total_time
    } else {
        0.0
    };
    let _ = writeln!(
        s,
        "{:>5}  {:>20}  {:>7}  {:>10}  {:>4}  {:>7.0}  {:>16}",
        "Avg.",
        "",
        "",
        "",
        "",
        summary.mean_total_time,
        format!("{:.0} ({})", summary.mean_palpation_time, format_pct(avg_pct)),
    );
    let n = summary.n_trials;
    let count = |ratio: f64| (ratio * n as f64).round() as usize;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "success ratio     {} ({}/{n})",
        format_pct(summary.success_ratio),
        count(summary.success_ratio)
    );
    let _ = writeln!(
        s,
        "detachable ratio  {} ({}/{n})",
        format_pct(summary.detachable_ratio),
        count(summary.detachable_ratio)
    );
    let _ = writeln!(
        s,
        "mean palpation    {} of trial time",
        format_pct(summary.mean_palpation_fraction)
    );
    let h = summary.case_histogram;
    let _ = writeln!(
        s,
        "cases             1: {}  2: {}  3: {}  4: {}",
        h[0], h[1], h[2], h[3]
    );
    s
}

/// Trial `i` (0-based) of a batch runs with seed `seed_base + i` and id `i + 1`.
pub fn batch_seed(seed_base: u64, i: u64) -> (u64, u64) {
    (i + 1, seed_base.wrapping_add(i))
}

#[derive(Debug)]
pub struct InvalidTrial {
    pub trial_id: u64,
    pub seed: u64,
    pub error: TrialError,
}

#[derive(Debug, Default)]
pub struct BatchResult {
    /// Valid trials ordered by id.
    pub records: Vec<TrialRecord>,
    pub invalid: Vec<InvalidTrial>,
}

/// Runs `trials` independent trials. With the `parallel` feature they run on the rayon pool;
/// the result does not depend on scheduling.
pub fn run_batch(cfg: &TrialConfig, trials: u64, seed_base: u64) -> BatchResult {
    let one = |i: u64| {
        let (trial_id, seed) = batch_seed(seed_base, i);
        run_trial(cfg, seed, trial_id, None)
            .map(|o| TrialRecord::from_outcome(&o))
            .map_err(|error| InvalidTrial { trial_id, seed, error })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = (0..trials).map(one).collect();

    let mut out = BatchResult::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(bad) => out.invalid.push(bad),
        }
    }
    out.records.sort_by_key(|r| r.trial_id);
    out.invalid.sort_by_key(|r| r.trial_id);
    out
}

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("no frames to process")]
    NoFrames,
    #[error("frame {index}: {source}")]
    Detect {
        index: u64,
        #[source]
        source: DetectError,
    },
}

/// Runs the detector over dumped frames. The frame tagged `initial` (else the first one)
/// becomes the reference; every other frame yields one reading.
pub fn detect_offline(cfg: &TrialConfig, frames: &[DumpedFrame]) -> Result<Vec<DetachabilityReading>, OfflineError> {
    let reference_frame = frames
        .iter()
        .find(|f| f.meta.role == "initial")
        .or_else(|| frames.first())
        .ok_or(OfflineError::NoFrames)?;
    let dcfg = DetectorConfig::for_scene(
        &cfg.detector,
        &cfg.camera,
        &cfg.specimen.path,
        cfg.specimen.bit_radius,
    )?;
    let at = |index: u64| {
        move |source| OfflineError::Detect {
            index,
            source: DetectError {
                stage: Stage::Crop,
                source,
            },
        }
    };
    let reference = capture_initial(&reference_frame.depth, dcfg.crop).map_err(at(reference_frame.index))?;
    let mut detector = Detector::new(dcfg, reference);
    frames
        .iter()
        .filter(|f| f.index != reference_frame.index)
        .map(|f| {
            detector
                .detect(&f.rgb, &f.depth)
                .map_err(|source| OfflineError::Detect { index: f.index, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, total: f64, palp: f64, case: u8) -> TrialRecord {
        TrialRecord {
            trial_id: id,
            seed: 40 + id,
            successful: case == 1 || case == 3,
            detachable: case == 1,
            case,
            total_time: total,
            palpation_time: palp,
            palpation_fraction: palp / total,
            halted: false,
        }
    }

    #[test]
    fn pct_formatting() {
        assert_eq!(format_pct(577.0 / 2052.0), "28.1%");
        assert_eq!(format_pct(11.0 / 12.0), "91.7%");
        assert_eq!(format_pct(9.0 / 12.0), "75.0%");
    }

    #[test]
    fn empty_aggregate_is_error() {
        assert_eq!(aggregate(&[]), Err(EmptyBatch));
    }

    #[test]
    fn single_record_summary_equals_record() {
        let r = rec(1, 1152.0, 300.0, 1);
        let s = aggregate(std::slice::from_ref(&r)).unwrap();
        assert_eq!(s.n_trials, 1);
        assert_eq!(s.mean_total_time, r.total_time);
        assert_eq!(s.mean_palpation_time, r.palpation_time);
        assert_eq!(s.mean_palpation_fraction, r.palpation_fraction);
        assert_eq!(s.success_ratio, 1.0);
        assert_eq!(s.case_histogram, [1, 0, 0, 0]);
    }

    #[test]
    fn mean_of_two_totals() {
        let s = aggregate(&[rec(1, 750.0, 100.0, 1), rec(2, 1152.0, 100.0, 3)]).unwrap();
        assert_eq!(s.mean_total_time, 951.0);
    }

    #[test]
    fn nine_of_twelve_detachable() {
        let records: Vec<_> = (0..12)
            .map(|i| rec(i + 1, 1000.0, 200.0, if i < 9 { 1 } else { 3 }))
            .collect();
        let s = aggregate(&records).unwrap();
        assert_eq!(format_pct(s.detachable_ratio), "75.0%");
        assert_eq!(format_pct(s.success_ratio), "100.0%");
    }

    #[test]
    fn report_shows_success_ratio() {
        let records: Vec<_> = (0..12)
            .map(|i| rec(i + 1, 1000.0, 250.0, if i == 6 { 2 } else { 1 }))
            .collect();
        let text = format_report(&records, &aggregate(&records).unwrap());
        assert!(text.contains("success ratio     91.7% (11/12)"), "{text}");
        assert!(text.contains("250 (25.0%)"));
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec(1, 2715.671875, 233.640625, 1), rec(2, 0.1 + 0.2, 0.1, 3)];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trial_id,seed,successful,detachable,case,total_s,palpation_s,palpation_pct,halted\n"));
        assert!(text.contains(",8.6%,"));
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, records);
        assert_eq!(aggregate(&back), aggregate(&records));
    }

    #[test]
    fn csv_rejects_inconsistent_pct() {
        let text = "trial_id,seed,successful,detachable,case,total_s,palpation_s,palpation_pct,halted\n1,1,true,true,1,100,10,11.0%,false\n";
        assert!(matches!(read_records(text.as_bytes()), Err(RecordError::Field { row: 1, .. })));
    }

    #[test]
    fn config_unknown_key_is_named() {
        let e = parse_config("[detector]\nthreshold = 0.1\n").unwrap_err();
        assert_eq!(e.key, "threshold");
        let e = parse_config("[detector]\nthreshold_mm = -0.1\n").unwrap_err();
        assert_eq!(e.key, "detector.threshold_mm");
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse_config("").unwrap(), TrialConfig::default());
    }

    #[test]
    fn batch_seeds() {
        assert_eq!(batch_seed(42, 0), (1, 42));
        assert_eq!(batch_seed(42, 11), (12, 53));
    }
}
