use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use gamecoop::agent::{AgentSpec, SelectHeuristic};
use gamecoop::blackboard::{check_audit, SyncMode};
use gamecoop::experiment::{parse_team, run_suite, ExperimentSpec, Suite};
use gamecoop::runner::{
    oracle_reachable_set, record_points, replay_audit, run, run_traced, GenSpec, LevelSource,
    MetricsReport, OracleError, RunConfig, RunError, Termination, DEFAULT_ORACLE_CAP,
};
use gamecoop::world::{generate_basic_level, load_level, Level};

fn corpus(name: &str) -> Arc<Level> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("levels")
        .join(name);
    Arc::new(load_level(&std::fs::read_to_string(path).unwrap()).unwrap())
}

fn single(scale: u32, seed: u64, budget: u64) -> RunConfig {
    let mut c = RunConfig::new(
        LevelSource::Generated(GenSpec::basic(scale, seed)),
        vec![AgentSpec::new(SelectHeuristic::Random)],
    );
    c.global_budget = budget;
    c.seed = seed;
    c
}

fn empty_report() -> MetricsReport {
    let mut r = run(&single(1, 0, 1)).unwrap();
    r.points_timeline.clear();
    r
}

#[test]
fn scale_one_random_agent_collects_46() {
    for seed in 0..5 {
        let trace = run_traced(&single(1, seed, 10_000)).unwrap();
        let r = &trace.report;
        assert_eq!(r.termination, Termination::AllDone, "seed {seed}");
        assert_eq!(r.per_task.len(), 10);
        assert_eq!(r.final_points(), 46);
        assert!(r.unfinished.is_empty());
        check_audit(&trace.audit).unwrap();
        let replayed = replay_audit(trace.level.clone(), 1, &trace.audit).unwrap();
        assert_eq!(replayed.agent_positions(), trace.world.agent_positions());
        assert_eq!(replayed.door_states(), trace.world.door_states());
    }
}

#[test]
fn budget_of_one_tick_is_a_clean_dnf() {
    let r = run(&single(2, 0, 1)).unwrap();
    assert_eq!(r.termination, Termination::Budget);
    assert_eq!(r.total_ticks_to_all_done, None);
    assert_eq!(r.ticks_run, 1);
    assert!(r.final_points() <= 1);
    assert_eq!(
        r.to_csv().lines().last().unwrap(),
        "1,end,,,0,termination=budget;makespan=dnf"
    );
}

#[test]
fn identical_configs_give_identical_csv() {
    let mut c = RunConfig::new(
        LevelSource::Generated(GenSpec {
            distant: 2,
            ..GenSpec::basic(2, 9)
        }),
        parse_team("high:5,low:5").unwrap(),
    );
    c.seed = 9;
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.summary(), b.summary());
    assert_eq!(a, b);
}

#[test]
fn points_credit_examples() {
    let mut r = empty_report();
    record_points(&mut r, 50, 10);
    assert_eq!(r.points_timeline, vec![(50, 10)]);
    record_points(&mut r, 60, 1);
    record_points(&mut r, 60, 10);
    assert_eq!(r.points_timeline, vec![(50, 10), (60, 21)]);
    assert_eq!(r.ticks_to_points(11), Some(60));
    assert_eq!(r.ticks_to_points(22), None);
}

#[test]
fn points_are_monotone_and_sum_the_done_tasks() {
    let mut c = RunConfig::new(
        LevelSource::Generated(GenSpec {
            chained: 1,
            ..GenSpec::basic(2, 4)
        }),
        parse_team("eager*3").unwrap(),
    );
    c.seed = 4;
    c.sync_mode = SyncMode::Extended;
    let trace = run_traced(&c).unwrap();
    let r = &trace.report;
    for pair in r.points_timeline.windows(2) {
        assert!(pair[0].0 < pair[1].0 && pair[0].1 < pair[1].1);
    }
    let values: BTreeMap<&str, u32> = trace
        .level
        .doors()
        .map(|d| (trace.level.name(d), trace.level.object(d).points()))
        .collect();
    let sum: u32 = r.per_task.keys().map(|k| values[k.as_str()]).sum();
    assert_eq!(r.final_points(), sum);
    let csv = r.to_csv();
    let mut last = 0;
    for row in csv.lines().skip(1) {
        let cum: u32 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!(cum >= last);
        last = cum;
    }
    assert_eq!(last, sum);
}

#[test]
fn bad_configs_are_rejected() {
    let mut c = single(1, 0, 100);
    c.view_distance = 0;
    assert!(matches!(run(&c), Err(RunError::Config(_))));
    let mut c = single(1, 0, 100);
    c.agents.clear();
    assert!(run(&c).unwrap_err().is_config());
    let c = RunConfig::new(
        LevelSource::Generated(GenSpec {
            distant: 11,
            ..GenSpec::basic(1, 0)
        }),
        vec![AgentSpec::new(SelectHeuristic::Random)],
    );
    assert!(run(&c).unwrap_err().is_config());
}

#[test]
fn oracle_on_the_corpus() {
    let expect = [
        ("corridor.txt", vec!["d0"]),
        ("two_buttons.txt", vec!["d0", "d1"]),
        ("walled_button.txt", vec![]),
        ("chained_rooms.txt", vec!["d0", "d1"]),
        ("multi_door.txt", vec!["d0", "d1"]),
        ("overlap.txt", vec!["d0", "d1"]),
    ];
    for (name, doors) in expect {
        let level = corpus(name);
        let got: Vec<&str> = oracle_reachable_set(&level, DEFAULT_ORACLE_CAP)
            .unwrap()
            .into_iter()
            .map(|d| level.name(d))
            .collect();
        assert_eq!(got, doors, "{name}");
    }
}

#[test]
fn oracle_state_cap() {
    let level = generate_basic_level(10, 0);
    assert!(matches!(
        oracle_reachable_set(&level, DEFAULT_ORACLE_CAP),
        Err(OracleError::CapExceeded { .. })
    ));
}

#[test]
fn agents_agree_with_the_oracle_on_the_corpus() {
    for name in [
        "corridor.txt",
        "two_buttons.txt",
        "walled_button.txt",
        "chained_rooms.txt",
        "multi_door.txt",
        "overlap.txt",
        "basic_s1.txt",
        "chained_multi_s1.txt",
    ] {
        let level = corpus(name);
        let reach: Vec<String> = oracle_reachable_set(&level, DEFAULT_ORACLE_CAP)
            .unwrap()
            .into_iter()
            .map(|d| level.name(d).to_string())
            .collect();
        let mut c = RunConfig::new(
            LevelSource::Given(level),
            vec![AgentSpec::new(SelectHeuristic::Random)],
        );
        c.global_budget = 50_000;
        let r = run(&c).unwrap();
        let done: Vec<String> = r.per_task.keys().cloned().collect();
        assert_eq!(done, reach, "{name}");
    }
}

#[test]
fn suite_aggregate_is_the_mean_of_completed_runs() {
    let mut base = RunConfig::new(LevelSource::Generated(GenSpec::basic(1, 0)), vec![]);
    base.seed = 3;
    let mut spec = ExperimentSpec::new(Suite::SyncCompare, base, 2);
    spec.axis = vec!["1".into(), "10".into()];
    let result = run_suite(&spec).unwrap();
    assert_eq!(result, run_suite(&spec).unwrap());
    let planned: Vec<(String, String, usize)> = spec
        .plan()
        .unwrap()
        .into_iter()
        .map(|p| (p.axis, p.config, p.rep))
        .collect();
    let ran: Vec<(String, String, usize)> = result
        .runs
        .iter()
        .map(|r| (r.axis.clone(), r.config.clone(), r.rep))
        .collect();
    assert_eq!(ran, planned);
    for row in result.aggregate() {
        let done: Vec<f64> = result
            .records(&row.axis, &row.config)
            .filter_map(|r| r.report.total_ticks_to_all_done)
            .map(|t| t as f64)
            .collect();
        assert_eq!(row.runs, 2);
        assert_eq!(row.completed, done.len());
        if !done.is_empty() {
            let mean = done.iter().sum::<f64>() / done.len() as f64;
            assert!((row.mean_makespan - mean).abs() < 1e-9);
        }
    }
    assert!(result.table().contains("sync_every"));
}
