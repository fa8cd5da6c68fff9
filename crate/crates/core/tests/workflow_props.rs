use bonedrill::palpation::{decided_early, flap_decision};
use bonedrill::workflow::{run_trial, Event, Phase, TrialConfig, TrialOutcome, WorkflowState};
use bonedrill::FlapState;
use proptest::prelude::*;

fn run_seeds(cfg: &TrialConfig, seeds: std::ops::Range<u64>) -> Vec<TrialOutcome> {
    let seeds: Vec<u64> = seeds.collect();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let chunk = seeds.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|&seed| run_trial(cfg, seed, seed + 1, None).unwrap()).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

#[test]
fn hundred_default_trials_hold_the_workflow_invariants() {
    let cfg = TrialConfig::default();
    let outcomes = run_seeds(&cfg, 0..100);
    let bound = cfg.workflow.max_drilling_cycles
        + (cfg.workflow.round_cap + 1) * cfg.workflow.repeat_cycles;
    for o in &outcomes {
        assert!(o.final_state.is_terminal(), "seed {}: {}", o.seed, o.final_state);
        assert!(o.drilling_cycles + o.repeat_cycles <= bound, "seed {}", o.seed);
        assert_eq!(o.observer_calls.repeat_drilling, 0, "seed {}", o.seed);
        assert_eq!(o.clock.phase_sum(), o.clock.total(), "seed {}", o.seed);
        let parts = [Phase::Drilling, Phase::Recognizing, Phase::Palpating, Phase::Repeat, Phase::Overhead]
            .iter()
            .map(|&p| o.clock.spent(p).0)
            .sum::<u64>();
        assert_eq!(parts, o.clock.total().0, "seed {}", o.seed);

        if o.final_state == WorkflowState::Done(FlapState::Detachable) {
            assert!(o.palpations.iter().any(|v| v.detachable_count >= 3), "seed {}", o.seed);
            assert!(
                o.log.records.iter().any(|r| matches!(
                    r.payload,
                    Event::Verdict { state: FlapState::Detachable, detachable_count } if detachable_count >= 3
                )),
                "seed {}",
                o.seed
            );
        }
        assert_eq!(o.log.replay(&cfg.workflow).unwrap(), o.log.states());
        assert_eq!(o.log.states().last().copied(), Some(o.final_state));
    }
}

#[test]
fn repeat_drilling_is_blind_under_observer_noise() {
    let mut cfg = TrialConfig::default();
    cfg.observer.bias = -0.1;
    cfg.workflow.round_cap = 3;
    for o in run_seeds(&cfg, 500..520) {
        assert_eq!(o.observer_calls.repeat_drilling, 0);
        assert!(o.final_state.is_terminal());
    }
}

fn verdicts() -> impl Strategy<Value = Vec<FlapState>> {
    prop::collection::vec(prop::bool::ANY, 4).prop_map(|v| {
        v.into_iter()
            .map(|d| if d { FlapState::Detachable } else { FlapState::NonDetachable })
            .collect()
    })
}

proptest! {
    #[test]
    fn flap_decision_ignores_order(v in verdicts(), rot in 0usize..4, swap in 0usize..3) {
        let mut w = v.clone();
        w.rotate_left(rot);
        w.swap(swap, swap + 1);
        prop_assert_eq!(flap_decision(&v), flap_decision(&w));
    }

    #[test]
    fn early_exit_agrees_with_full_decision(v in verdicts()) {
        for len in 1..=4 {
            if let Some(early) = decided_early(&v[..len]) {
                prop_assert_eq!(early, flap_decision(&v));
                break;
            }
        }
    }
}
