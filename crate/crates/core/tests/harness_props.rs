use bonedrill::harness::{aggregate, load_config, read_records, run_batch, write_records, TrialRecord};
use bonedrill::workflow::TrialConfig;
use proptest::prelude::*;
use std::path::Path;

fn record() -> impl Strategy<Value = TrialRecord> {
    (
        1u64..1000,
        any::<u64>(),
        1u8..=4,
        0.0f64..1e5,
        0.0f64..1.0,
        any::<bool>(),
    )
        .prop_map(|(trial_id, seed, case, total, frac, halted)| {
            let palpation_time = total * frac;
            TrialRecord {
                trial_id,
                seed,
                successful: case == 1 || case == 3,
                detachable: case <= 2,
                case,
                total_time: total,
                palpation_time,
                palpation_fraction: if total > 0.0 { palpation_time / total } else { 0.0 },
                halted,
            }
        })
}

proptest! {
    #[test]
    fn csv_round_trip_preserves_the_summary(records in prop::collection::vec(record(), 1..30)) {
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(aggregate(&back).unwrap(), aggregate(&records).unwrap());
    }

    #[test]
    fn summary_ratios_and_histogram_are_consistent(records in prop::collection::vec(record(), 1..30)) {
        let s = aggregate(&records).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.success_ratio));
        prop_assert!((0.0..=1.0).contains(&s.detachable_ratio));
        prop_assert_eq!(s.case_histogram.iter().sum::<usize>(), s.n_trials);
    }
}

#[test]
fn same_seed_base_same_csv() {
    let cfg = TrialConfig::default();
    let csv = || {
        let batch = run_batch(&cfg, 4, 42);
        assert!(batch.invalid.is_empty());
        let mut buf = Vec::new();
        write_records(&mut buf, &batch.records).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
}

#[test]
fn shipped_config_matches_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(load_config(&path).unwrap(), TrialConfig::default());
}
