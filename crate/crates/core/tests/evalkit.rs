use coinbot::collect::collect_demos;
use coinbot::evalkit::{
    action_mse, dump_trajectories, mode_coverage, read_csv, rollout, write_csv, write_svg, CheckpointEndpoint, DumpFormat,
    EndpointSpec, EvalError, EvalReport, ExpertEndpoint, Mode, PolicyEndpoint, Query, ReplayEndpoint, RolloutConfig,
    RolloutSummary, ZeroEndpoint, CSV_HEADER,
};
use coinbot::policy::{train, ChunkConfig, DenoiserSpec, EncoderSpec, SamplerConfig, TrainConfig};
use coinbot::recorder::{AlignConfig, AlignedEpisode};
use coinbot::simworld::{SessionConfig, TaskKind, TaskSpec};
use proptest::prelude::*;

fn demos(kind: TaskKind, n: usize, seed: u64) -> Vec<AlignedEpisode> {
    let base = SessionConfig::new(TaskSpec::builtin(kind), seed);
    collect_demos(&base, n, &AlignConfig::default()).unwrap().into_iter().map(|c| c.episode).collect()
}

fn labels(eps: &[AlignedEpisode]) -> Vec<Vec<Vec<f32>>> {
    eps.iter()
        .map(|e| {
            e.ticks
                .iter()
                .map(|t| {
                    let mut row = t.action["delta_xy"].to_f32();
                    row.extend(t.action["gripper_cmd"].to_f32());
                    row
                })
                .collect()
        })
        .collect()
}

#[test]
fn expert_endpoint_solves_every_task() {
    for kind in TaskKind::ALL {
        let task = TaskSpec::builtin(kind);
        let mut ep = ExpertEndpoint::new(task.clone(), 0.0, 8);
        let r = rollout(&mut ep, &RolloutConfig::new(task, 100, 1000)).unwrap();
        assert!(r.successes() >= 99, "{kind}: {}/100", r.successes());
        assert_eq!(r.trajectories.len(), 100);
    }
}

#[test]
fn zero_policy_never_succeeds_at_pickplace() {
    let task = TaskSpec::builtin(TaskKind::PickPlace);
    let r = rollout(&mut ZeroEndpoint { t_a: 8 }, &RolloutConfig::new(task.clone(), 20, 0)).unwrap();
    assert_eq!(r.success_rate(), 0.0);
    assert_eq!(r.failure_counts().get("timeout"), Some(&20));
    assert!(r.episodes.iter().all(|e| e.steps as usize == task.max_steps));
}

#[test]
fn rollouts_are_deterministic() {
    let task = TaskSpec::builtin(TaskKind::BimodalAvoid);
    let cfg = RolloutConfig::new(task.clone(), 10, 3);
    let a = rollout(&mut ExpertEndpoint::new(task.clone(), 0.01, 4), &cfg).unwrap();
    let b = rollout(&mut ExpertEndpoint::new(task, 0.01, 4), &cfg).unwrap();
    assert_eq!(a, b);
    let report = |r| EvalReport { action_mse: None, rollout: Some(RolloutSummary::of(r, false)), mode_coverage: None, wall_time_s: 0.0 };
    let (ra, mut rb) = (report(&a), report(&b));
    rb.wall_time_s = 12.5;
    assert_eq!(ra.to_json(), rb.to_json());
    assert!(!ra.to_json().contains("wall"));
}

#[test]
fn replaying_demonstrations_reproduces_them() {
    let eps = demos(TaskKind::Reach, 5, 40);
    let mut replay = ReplayEndpoint { episodes: labels(&eps), t_a: 8 };
    let mse = action_mse(&mut replay, &eps, 0, None).unwrap();
    assert_eq!(mse.aggregate, 0.0);
    assert!(mse.per_dim.iter().all(|&d| d == 0.0));
    assert_eq!(mse.n_ticks, eps.iter().map(|e| e.len()).sum::<usize>());

    // the demos were recorded with seeds 40..45, the same ones the rollout uses
    let r = rollout(&mut replay, &RolloutConfig::new(TaskSpec::builtin(TaskKind::Reach), 5, 40)).unwrap();
    assert_eq!(r.successes(), 5);
}

struct Wrong;

impl PolicyEndpoint for Wrong {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: 1, t_a: 2, grid: false }
    }
    fn infer(&mut self, _q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        Ok(vec![vec![0.0, 0.0]; 2])
    }
}

#[test]
fn wrong_action_width_is_a_schema_mismatch() {
    let eps = demos(TaskKind::Reach, 1, 0);
    assert!(matches!(action_mse(&mut Wrong, &eps, 0, None), Err(EvalError::SchemaMismatch(_))));
    let cfg = RolloutConfig::new(TaskSpec::builtin(TaskKind::Reach), 1, 0);
    assert!(matches!(rollout(&mut Wrong, &cfg), Err(EvalError::SchemaMismatch(_))));
}

/// Works for `fail_at` episodes, then reports the endpoint gone.
struct Flaky {
    fail_at: usize,
}

impl PolicyEndpoint for Flaky {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: 1, t_a: 4, grid: false }
    }
    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        if q.episode >= self.fail_at {
            return Err(EvalError::unavailable("connection closed"));
        }
        Ok(vec![vec![0.0; 3]; 4])
    }
}

#[test]
fn endpoint_loss_returns_a_partial_rollout() {
    let cfg = RolloutConfig::new(TaskSpec::builtin(TaskKind::Reach), 6, 0);
    match rollout(&mut Flaky { fail_at: 3 }, &cfg) {
        Err(EvalError::EndpointUnavailable { partial: Some(p), .. }) => assert_eq!(p.n(), 3),
        other => panic!("expected a partial rollout, got {other:?}"),
    }
}

#[test]
fn checkpoint_overfits_one_episode() {
    let eps = demos(TaskKind::Reach, 1, 7);
    let cfg = TrainConfig {
        epochs: 1500,
        chunk: ChunkConfig { t_o: 2, t_p: 4, t_a: 2 },
        encoder: EncoderSpec { hidden: vec![64], ..EncoderSpec::default() },
        denoiser: DenoiserSpec { hidden: vec![128, 128], ..DenoiserSpec::default() },
        ..TrainConfig::default()
    };
    let (ckpt, _) = train(&eps, &cfg).unwrap();
    let norm = ckpt.normalizer.action.clone();
    let mut ep = CheckpointEndpoint::new(ckpt, SamplerConfig::default()).unwrap();
    let mse = action_mse(&mut ep, &eps, 0, Some(&norm)).unwrap();
    let agg = mse.aggregate_normalized.unwrap();
    assert!(agg < 1e-2, "normalized mse {agg}");
    let mean: f64 = mse.per_dim.iter().sum::<f64>() / 3.0;
    assert_eq!(mse.aggregate, mean);
}

#[test]
fn csv_dump_parses_back() {
    let task = TaskSpec::builtin(TaskKind::Reach);
    let r = rollout(&mut ExpertEndpoint::new(task.clone(), 0.02, 8), &RolloutConfig::new(task, 3, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out").join("trajectories.csv");
    dump_trajectories(&r.trajectories, &path, DumpFormat::Csv).unwrap();

    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let points: Vec<_> = r.trajectories.iter().flat_map(|t| t.points.iter().map(move |p| (t, p))).collect();
    assert_eq!(rows.len(), points.len());
    for (row, (t, p)) in rows.iter().zip(points) {
        assert_eq!(row[0].parse::<usize>().unwrap(), t.episode);
        assert_eq!(row[1].parse::<usize>().unwrap(), p.tick);
        assert_eq!(row[2].parse::<i64>().unwrap(), p.t_ns);
        assert_eq!(row[3].parse::<f32>().unwrap(), p.eef_xy[0]);
        assert_eq!(row[4].parse::<f32>().unwrap(), p.eef_xy[1]);
        assert_eq!(row[5].parse::<f32>().unwrap(), p.gripper);
        assert_eq!(row[6].parse::<bool>().unwrap(), t.success);
    }

    let back = read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.len(), r.trajectories.len());
    for (b, t) in back.iter().zip(&r.trajectories) {
        assert_eq!((b.episode, b.success, &b.points), (t.episode, t.success, &t.points));
    }

    let single = &r.trajectories[..1];
    let mut buf = Vec::new();
    write_csv(single, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + single[0].points.len());

    let svg_path = dir.path().join("trajectories.svg");
    dump_trajectories(&r.trajectories, &svg_path, DumpFormat::Svg).unwrap();
    let svg = std::fs::read_to_string(svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn empty_dumps_are_valid() {
    let mut csv_buf = Vec::new();
    write_csv(&[], &mut csv_buf).unwrap();
    assert_eq!(String::from_utf8(csv_buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    let mut svg = Vec::new();
    write_svg(&[], &mut svg).unwrap();
    let svg = String::from_utf8(svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(!svg.contains("<polyline"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn success_counts_concatenate_over_seed_blocks(seed in 0u64..10_000, a in 0usize..6, b in 0usize..6) {
        let task = TaskSpec::builtin(TaskKind::BimodalAvoid);
        let mut ep = ExpertEndpoint::new(task.clone(), 0.03, 8);
        let whole = rollout(&mut ep, &RolloutConfig::new(task.clone(), a + b, seed)).unwrap();
        let first = rollout(&mut ep, &RolloutConfig::new(task.clone(), a, seed)).unwrap();
        let second = rollout(&mut ep, &RolloutConfig::new(task, b, seed + a as u64)).unwrap();
        prop_assert_eq!(whole.successes(), first.successes() + second.successes());
        let seeds: Vec<u64> = whole.episodes.iter().map(|e| e.seed).collect();
        let joined: Vec<u64> = first.episodes.iter().chain(&second.episodes).map(|e| e.seed).collect();
        prop_assert_eq!(seeds, joined);
        if a + b > 0 {
            let weighted = (first.success_rate() * a as f64 + second.success_rate() * b as f64) / (a + b) as f64;
            prop_assert!((whole.success_rate() - weighted).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_fractions_sum_to_one(dxs in prop::collection::vec(prop::collection::vec(-0.05f32..0.05, 1..5), 1..40)) {
        let chunks: Vec<Vec<Vec<f32>>> = dxs.iter().map(|c| c.iter().map(|&dx| vec![dx, 0.0, 0.0]).collect()).collect();
        let cov = mode_coverage(&chunks, 4);
        let total: f64 = cov.0.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let left = chunks.iter().filter(|c| c.iter().take(4).map(|r| r[0] as f64).sum::<f64>() < -1e-6).count();
        prop_assert!((cov.fraction(Mode::Left) - left as f64 / chunks.len() as f64).abs() < 1e-12);
    }
}
