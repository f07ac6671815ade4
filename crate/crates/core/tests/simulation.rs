use std::collections::{BTreeMap, HashSet};

use csm_core::engine::{
    run_experiment, run_repetitions, ExperimentConfig, ModelSource, ScheduledEvent, TraceEvent,
};
use csm_core::metrics::count_switches;
use csm_core::model::{draw_reward_matrix, RewardModel};
use csm_core::oracle::enumerate_absorbing;
use csm_core::Error;

fn dynamic_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(6, 3, 30_000).with_seed(seed);
    cfg.dynamic = true;
    cfg.arrivals = vec![
        ScheduledEvent {
            slot: 5_000,
            user: 3,
        },
        ScheduledEvent {
            slot: 10_000,
            user: 4,
        },
    ];
    cfg.departures = vec![
        ScheduledEvent {
            slot: 15_000,
            user: 0,
        },
        ScheduledEvent {
            slot: 20_000,
            user: 3,
        },
    ];
    cfg
}

#[test]
fn identical_seeds_give_identical_traces() {
    for cfg in [
        ExperimentConfig::new(5, 4, 5_000).with_seed(8),
        dynamic_config(8),
    ] {
        let a = run_experiment(&cfg, &ModelSource::Draw).unwrap();
        let b = run_experiment(&cfg, &ModelSource::Draw).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn repetitions_match_single_runs() {
    let mut cfg = ExperimentConfig::new(4, 3, 2_000).with_seed(100);
    cfg.repetitions = 6;
    let parallel = run_repetitions(&cfg, &ModelSource::Draw, 3).unwrap();
    let serial = run_repetitions(&cfg, &ModelSource::Draw, 1).unwrap();
    assert_eq!(parallel, serial);
    for (i, trace) in parallel.iter().enumerate() {
        assert_eq!(trace.seed, 100 + i as u64);
        let single = run_experiment(&cfg.clone().with_seed(100 + i as u64), &ModelSource::Draw);
        assert_eq!(trace, &single.unwrap());
    }
}

#[test]
fn steady_data_slots_are_collision_free() {
    for seed in 0..10 {
        for cfg in [
            ExperimentConfig::new(5, 5, 8_000).with_seed(seed),
            ExperimentConfig::new(8, 3, 8_000).with_seed(seed),
            dynamic_config(seed),
        ] {
            let trace = run_experiment(&cfg, &ModelSource::Draw).unwrap();
            assert_eq!(trace.stats.unintended_collisions, 0);
            assert_eq!(trace.stats.probe_collisions, 0);
            for row in &trace.channel_history {
                let taken: Vec<usize> = row.iter().flatten().copied().collect();
                let unique: HashSet<usize> = taken.iter().copied().collect();
                assert_eq!(taken.len(), unique.len());
            }
        }
    }
}

#[test]
fn history_and_events_agree() {
    for seed in 0..5 {
        let trace = run_experiment(&dynamic_config(seed), &ModelSource::Draw).unwrap();
        assert_eq!(trace.channel_history.len(), trace.metrics.len());
        let recorded: Vec<Vec<u64>> = trace
            .metrics
            .frames
            .iter()
            .map(|f| f.switches.clone())
            .collect();
        assert_eq!(count_switches(&trace), recorded);

        let mut elections = BTreeMap::new();
        let mut moves = BTreeMap::new();
        for e in &trace.events {
            match e {
                TraceEvent::Elected { .. } => *elections.entry(e.super_frame()).or_insert(0) += 1,
                TraceEvent::Swap {
                    initiator,
                    responder,
                    ..
                } => {
                    assert_ne!(initiator, responder);
                    *moves.entry(e.super_frame()).or_insert(0) += 1;
                }
                TraceEvent::VacancyMove { .. } => *moves.entry(e.super_frame()).or_insert(0) += 1,
                _ => {}
            }
        }
        assert!(elections.values().all(|&c| c == 1));
        assert!(moves.values().all(|&c| c == 1));
        assert!(moves.keys().all(|sf| elections.contains_key(sf)));
    }
}

#[test]
fn dynamic_population_follows_schedule() {
    let cfg = dynamic_config(4);
    let trace = run_experiment(&cfg, &ModelSource::Draw).unwrap();
    let sf = cfg.super_frame_len();
    let live = |slot: u64| trace.metrics.frames[slot.div_ceil(sf) as usize + 20].live_users;
    assert_eq!(trace.metrics.frames[0].live_users, 3);
    assert_eq!(live(5_000), 4);
    assert_eq!(live(10_000), 5);
    assert_eq!(live(15_000), 4);
    assert_eq!(live(20_000), 3);
    let joins = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::Join { .. }))
        .count();
    assert_eq!(joins, 2);
}

#[test]
fn newbie_waits_when_channels_are_full() {
    let mut cfg = ExperimentConfig::new(3, 3, 3_000).with_seed(2);
    cfg.dynamic = true;
    cfg.arrivals = vec![ScheduledEvent { slot: 700, user: 3 }];
    cfg.departures = vec![ScheduledEvent {
        slot: 1_400,
        user: 1,
    }];
    let trace = run_experiment(&cfg, &ModelSource::Draw).unwrap();
    let waits = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::Wait { .. }))
        .count();
    let joined = trace
        .events
        .iter()
        .find_map(|e| match e {
            TraceEvent::Join { super_frame, .. } => Some(*super_frame),
            _ => None,
        })
        .unwrap();
    assert!(waits > 0);
    assert_eq!(joined, 1_400u64.div_ceil(cfg.super_frame_len()));
    assert_eq!(trace.stats.unintended_collisions, 0);
}

#[test]
fn stable_end_states_are_enumerated_absorbing_states() {
    let mut checked = 0;
    for seed in 0..20 {
        let model = draw_reward_matrix(4, 4, 1_000 + seed).unwrap();
        let absorbing: HashSet<_> = enumerate_absorbing(&model).unwrap().into_iter().collect();
        let cfg = ExperimentConfig::new(4, 4, 20_000).with_seed(seed);
        let trace = run_experiment(&cfg, &ModelSource::Given(model)).unwrap();
        for (i, frame) in trace.metrics.frames.iter().enumerate() {
            let config = trace.configuration_at(i).unwrap();
            assert_eq!(frame.in_smc, absorbing.contains(&config));
        }
        if trace.metrics.last().unwrap().in_smc {
            checked += 1;
        }
    }
    assert!(checked > 10, "only {checked} runs ended stable");
}

#[test]
fn mismatched_models_are_rejected() {
    let model = RewardModel::new(vec![vec![0.1, 0.2, 0.3]]).unwrap();
    let cfg = ExperimentConfig::new(4, 1, 100);
    assert!(matches!(
        run_experiment(&cfg, &ModelSource::Given(model.clone())),
        Err(Error::InvalidConfiguration(_))
    ));
    let cfg = ExperimentConfig::new(3, 2, 100);
    assert!(run_experiment(&cfg, &ModelSource::Given(model)).is_err());
}
