use std::sync::Arc;

use costenv_core::domain::{BlockType, EnvConfig, TaskName, TaskSpec, Validity};
use costenv_core::engine::{Session, SessionStatus};
use costenv_core::oracle::FollowerKind;
use costenv_core::querygen::{build_queries, PreferenceSpace, Split};
use costenv_core::toolgen::enumerate_tools;
use costenv_core::Cost;
use costenv_harness::agents::{AgentSpec, PlannerAgent};
use costenv_harness::instances::{generate, Selection};
use costenv_harness::runner::{init_message, play, run_batch};
use costenv_harness::transcript::{evaluate, replay, Transcript};
use costenv_harness::wire::WireMessage;

fn selection(task: TaskName, limit: usize) -> Selection {
    Selection {
        tasks: vec![task],
        limit: Some(limit),
        ..Selection::default()
    }
}

#[test]
fn transportation_test_split_and_tool_count() {
    let set = generate(
        &EnvConfig::default(),
        &Selection {
            tasks: vec![TaskName::Transportation],
            ..Selection::default()
        },
    )
    .unwrap();
    assert_eq!(set.instances.len(), 256);
    assert!(set.instances.iter().all(|i| i.visible_tools == 14));
    let again = generate(
        &EnvConfig::default(),
        &Selection {
            tasks: vec![TaskName::Transportation],
            ..Selection::default()
        },
    )
    .unwrap();
    assert_eq!(set.to_jsonl(), again.to_jsonl());
}

#[test]
fn greedy_agent_on_the_worked_example() {
    let task = TaskSpec::new(TaskName::Location, 4).unwrap();
    let space = Arc::new(PreferenceSpace::builtin(TaskName::Location));
    let query = build_queries(42, &space, Split::Test).swap_remove(0);
    let mut lib = enumerate_tools(task, &space.values(Split::Test));
    for t in lib.tools.iter_mut() {
        t.cost = Cost::from_cents(match t.span {
            (i, j) if i == j => 1000,
            (1, 2) => 1500,
            (2, 3) => 200,
            (3, 4) => 2500,
            (1, 3) => 2700,
            (2, 4) => 2800,
            _ => 4000,
        });
    }
    lib.costed = true;
    let config = EnvConfig {
        sequence_length: 4,
        ..EnvConfig::default()
    };
    let spans = |s: &Session| -> Vec<(u32, u32)> {
        s.trajectory()
            .ok_names()
            .iter()
            .map(|n| s.library().get(n).unwrap().span)
            .collect()
    };
    for (kind, expected, cost) in [
        (FollowerKind::Greedy, vec![(1, 2), (3, 3), (4, 4)], 3500),
        (FollowerKind::Optimal, vec![(1, 1), (2, 3), (4, 4)], 2200),
    ] {
        let mut s =
            Session::with_library(config.clone(), space.clone(), query.clone(), lib.clone())
                .unwrap();
        let init = init_message(&mut s);
        let mut steps = Vec::new();
        let err = play(&mut s, &mut PlannerAgent::new(kind), &init, &mut steps).unwrap();
        assert!(err.is_none());
        assert_eq!(spans(&s), expected);
        assert_eq!(s.trajectory().total_cost, Cost::from_cents(cost));
        assert_eq!(s.intent_hit(), Some(true));
    }
}

#[test]
fn gt_replay_scores_perfectly_and_replays() {
    let set = generate(&EnvConfig::default(), &selection(TaskName::Dining, 40)).unwrap();
    let episodes = run_batch(&set, &AgentSpec::GtReplay, 2).unwrap();
    assert!(episodes
        .iter()
        .all(|e| e.metrics.exact_match == Some(true) && e.metrics.intent_hit == Some(true)));
    let t = Transcript::new(&set, &AgentSpec::GtReplay, episodes);
    let r = evaluate(&t).unwrap();
    assert_eq!(r.metrics.emr_pct, Some(100.0));
    assert_eq!(r.metrics.aned_pct, Some(0.0));
    assert_eq!(r.metrics.cost_gap, Some(0.0));
    assert_eq!(r.metrics.itur_pct, Some(0.0));
    assert!(replay(&t).unwrap().is_clean());
}

#[test]
fn blocked_random_runs_replay_and_tampering_is_caught() {
    for block_type in BlockType::ALL_ACTIVE {
        let config = EnvConfig {
            block_type,
            block_count: 2,
            ..EnvConfig::default()
        };
        let set = generate(&config, &selection(TaskName::Shopping, 12)).unwrap();
        let episodes = run_batch(&set, &AgentSpec::Random, 3).unwrap();
        let mut t = Transcript::new(&set, &AgentSpec::Random, episodes);
        let path = tempfile::NamedTempFile::new().unwrap();
        t.write(path.path()).unwrap();
        let back = Transcript::read(path.path()).unwrap();
        assert_eq!(back, t);
        assert!(replay(&back).unwrap().is_clean(), "{block_type:?}");

        t.episodes[0].trajectory.total_cost += Cost::from_cents(1);
        assert_eq!(
            replay(&t).unwrap().mismatched,
            vec![t.episodes[0].episode_id.clone()]
        );
    }
}

#[test]
fn stall_exhausts_and_only_counts_toward_itur() {
    let mut set = generate(&EnvConfig::default(), &selection(TaskName::Location, 4)).unwrap();
    let gt = run_batch(&set, &AgentSpec::GtReplay, 1).unwrap();
    let stall = run_batch(&set, &AgentSpec::Stall, 1).unwrap();
    for e in &stall {
        assert_eq!(e.trajectory.records.len(), 20);
        assert!(e
            .trajectory
            .records
            .iter()
            .all(|r| r.validity == Validity::WrongName));
        let WireMessage::SessionEnd(end) = &e.end else {
            panic!()
        };
        assert_eq!(end.status, SessionStatus::Exhausted);
    }
    let mut mixed = gt.clone();
    mixed.extend(stall);
    set.instances.extend(set.instances.clone());
    let report = evaluate(&Transcript::new(&set, &AgentSpec::GtReplay, mixed)).unwrap();
    let d = report.metrics.denominators;
    assert_eq!((d.episodes, d.goal_reaching), (8, 4));
    assert_eq!(report.metrics.emr_pct, Some(100.0));
    assert_eq!(report.metrics.cost_gap, Some(0.0));
    let ok_calls: usize = gt.iter().map(|e| e.trajectory.records.len()).sum();
    let expected = 100.0 * 80.0 / (80 + ok_calls) as f64;
    assert!((report.metrics.itur_pct.unwrap() - expected).abs() < 1e-9);
}

#[test]
fn missing_ground_truth_is_rejected() {
    let set = generate(&EnvConfig::default(), &selection(TaskName::Attraction, 2)).unwrap();
    let mut episodes = run_batch(&set, &AgentSpec::Greedy, 1).unwrap();
    episodes[1].reference_gt.tools.clear();
    assert!(evaluate(&Transcript::new(&set, &AgentSpec::Greedy, episodes)).is_err());
}

#[test]
fn parallelism_does_not_change_output() {
    let config = EnvConfig {
        block_type: BlockType::BanTool,
        block_count: 1,
        ..EnvConfig::default()
    };
    let set = generate(
        &config,
        &Selection {
            limit: Some(60),
            ..Selection::default()
        },
    )
    .unwrap();
    let one = Transcript::new(
        &set,
        &AgentSpec::Random,
        run_batch(&set, &AgentSpec::Random, 1).unwrap(),
    );
    let eight = Transcript::new(
        &set,
        &AgentSpec::Random,
        run_batch(&set, &AgentSpec::Random, 8).unwrap(),
    );
    assert_eq!(one.to_jsonl(), eight.to_jsonl());
    assert_eq!(
        evaluate(&one).unwrap().to_jsonl(),
        evaluate(&eight).unwrap().to_jsonl()
    );
}
