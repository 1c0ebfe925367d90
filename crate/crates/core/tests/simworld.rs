use coinbot::bus::Bus;
use coinbot::collect::collect_episode;
use coinbot::recorder::AlignConfig;
use coinbot::simworld::{
    expert_episode, reset, run_session, step, SessionConfig, SimError, TaskKind, TaskSpec, ViewTransform,
};
use proptest::prelude::*;

#[test]
fn session_states_replay_from_published_actions() {
    for kind in TaskKind::ALL {
        for (seed, noise) in [(0, 0.0), (11, 0.02)] {
            let task = TaskSpec::builtin(kind);
            let mut cfg = SessionConfig::new(task.clone(), seed);
            cfg.noise_sigma = noise;
            let s = run_session(cfg, &Bus::new()).unwrap();
            let mut replay = vec![reset(&task, seed)];
            for a in s.actions() {
                replay.push(step(replay.last().unwrap(), a, &task));
            }
            assert_eq!(s.states(), replay.as_slice(), "{kind:?} seed {seed}");
            let (states, actions, _) = expert_episode(&task, seed, noise);
            assert_eq!(s.states(), states.as_slice());
            assert_eq!(s.actions(), actions.as_slice());
        }
    }
}

#[test]
fn one_second_of_capture_aligns_to_ten_ticks() {
    let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::Sorting), 9);
    cfg.max_duration_ns = Some(1_000_000_000);
    let c = collect_episode(&cfg, &AlignConfig::default()).unwrap();
    let counts: Vec<usize> = ["state/follower", "cmd/leader", "obs/scene"]
        .iter()
        .map(|t| c.recording.streams[&t.parse().unwrap()].len())
        .collect();
    assert_eq!(counts, vec![60, 160, 30]);
    assert_eq!(c.episode.len(), 10);
    let align = AlignConfig::default();
    for spec in cfg.stream_specs() {
        assert!(c.episode.ticks.iter().all(|t| t.staleness_ns[&spec.topic] <= align.staleness_limit(&spec)));
    }
    assert!(c.report.all_pass());
}

#[test]
fn views_change_observations_not_dynamics() {
    let base = SessionConfig::new(TaskSpec::builtin(TaskKind::PickPlace), 4);
    let a = collect_episode(&base, &AlignConfig::default()).unwrap();
    let b = collect_episode(
        &SessionConfig { view: ViewTransform::named("B").unwrap(), ..base.clone() },
        &AlignConfig::default(),
    )
    .unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.episode.len(), b.episode.len());
    assert_ne!(a.episode.ticks[0].obs["scene"], b.episode.ticks[0].obs["scene"]);
    assert_eq!(a.episode.ticks[0].action, b.episode.ticks[0].action);
    assert_eq!(b.episode.meta.view_id, "B");
}

#[test]
fn builtin_tasks_round_trip_through_toml() {
    for kind in TaskKind::ALL {
        let spec = TaskSpec::builtin(kind);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(TaskSpec::from_toml_str(&text).unwrap(), spec, "{text}");
    }
    assert!(matches!(TaskSpec::from_toml_str("name = \"reach\"\nmax_steps = 5\nbogus = 1"), Err(SimError::InvalidTask(_))));
    assert!(TaskSpec::load("no-such-task").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stepping_is_pure_and_bounded(
        kind in 0..4usize,
        seed in any::<u64>(),
        moves in prop::collection::vec((-0.2f32..0.2, -0.2f32..0.2, any::<bool>()), 1..40),
    ) {
        let task = TaskSpec::builtin(TaskKind::ALL[kind]);
        let mut s = reset(&task, seed);
        prop_assert_eq!(&s, &reset(&task, seed));
        for (dx, dy, grip) in moves {
            let a = coinbot::simworld::Action::new([dx, dy], if grip { 1.0 } else { 0.0 });
            let next = step(&s, &a, &task);
            prop_assert_eq!(&next, &step(&s, &a, &task));
            for i in 0..2 {
                prop_assert!((0.0..=1.0).contains(&next.eef_xy[i]));
                prop_assert!((next.eef_xy[i] - s.eef_xy[i]).abs() <= coinbot::simworld::MAX_STEP + 1e-6);
            }
            prop_assert_eq!(next.steps, s.steps + 1);
            prop_assert!(next.objects.iter().filter(|o| o.held).count() <= 1);
            s = next;
        }
    }
}
