use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn coinbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coinbot")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = coinbot(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> Option<i32> {
    coinbot(args).status.code()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A few reach demos and a tiny checkpoint trained on them.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let train = root.join("train");
        ok(&["collect", "--task", "reach", "--n-demos", "10", "--operator", "kim", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--epochs", "4", "--ckpt-every", "2", "--hidden", "16", "--out", s(&train)]);
        Fixture { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

#[test]
fn collect_and_train_write_the_documented_layout() {
    let f = Fixture::new();
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("data/ep_000000/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["operator"], "kim");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("data/report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"].as_array().unwrap().len(), 10);

    let loss = std::fs::read_to_string(f.path("train/loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().enumerate().all(|(i, l)| l.starts_with(&format!("{},", i + 1))));

    let ckpts: Vec<_> = std::fs::read_dir(f.path("train/checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts.len(), 2);
    let best = std::fs::read_link(f.path("train/best.json")).unwrap();
    assert!(best.starts_with("checkpoints"));
    assert!(f.path("train").join(best).is_file());
    let train: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("train/report.json")).unwrap()).unwrap();
    // ten episodes: one held out for checkpoint selection
    assert_eq!((train["train_episodes"].as_u64(), train["heldout_episodes"].as_u64()), (Some(9), Some(1)));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let f = Fixture::new();
    let ckpt = f.path("train/checkpoint.json");
    let out = f.path("out");

    assert_eq!(code(&["collect", "--task", "juggling", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["collect", "--task", "reach", "--align-hz", "40", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["eval", "--ckpt", s(&f.path("nope.json")), "--task", "reach", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["eval", "--task", "reach", "--out", s(&out)]), Some(2));

    let bad_cfg = f.path("bad.toml");
    std::fs::write(&bad_cfg, "epochs = 3\nwarp_factor = 9\n").unwrap();
    assert_eq!(code(&["--config", s(&bad_cfg), "rollout", "--expert", "--task", "reach", "--out", s(&out)]), Some(2));

    let corrupt = f.path("corrupt.json");
    std::fs::write(&corrupt, "{\"version\": 7}").unwrap();
    assert_eq!(code(&["serve", "--ckpt", s(&corrupt), "--addr", "127.0.0.1:0"]), Some(3));
    assert_eq!(code(&["validate", "--data", s(&f.path("missing"))]), Some(3));
    assert_eq!(code(&["plot", "--input", s(&f.path("data/report.json")), "--out", s(&f.path("x.svg"))]), Some(3));

    // nothing listens on a port we just released
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let res = coinbot(&["eval", "--bridge", &addr, "--ckpt", s(&ckpt), "--task", "reach", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("COIN_BRIDGE_ADDR"));
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let cfg = f.path("run.toml");
    std::fs::write(&cfg, format!("task = \"sorting\"\nn = 3\nseed = 5\nout = {:?}\n", s(&f.path("from_file")))).unwrap();

    ok(&["--config", s(&cfg), "rollout", "--expert"]);
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("from_file/report.json")).unwrap()).unwrap();
    assert_eq!(r["rollout"]["task"], "sorting");
    assert_eq!(r["rollout"]["n"], 3);
    assert_eq!(r["rollout"]["episodes"][0]["seed"], 5);

    ok(&["--config", s(&cfg), "rollout", "--expert", "--task", "reach", "--n", "2", "--out", s(&f.path("from_flags"))]);
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("from_flags/report.json")).unwrap()).unwrap();
    assert_eq!(r["rollout"]["task"], "reach");
    assert_eq!(r["rollout"]["n"], 2);
    assert_eq!(r["rollout"]["episodes"][0]["seed"], 5);
}

#[test]
fn finetune_prints_its_lineage() {
    let f = Fixture::new();
    let sorting = f.path("sorting");
    ok(&["collect", "--task", "sorting", "--n-demos", "3", "--seed", "50", "--out", s(&sorting)]);
    let out = ok(&[
        "finetune",
        "--parent",
        s(&f.path("train/checkpoint.json")),
        "--data",
        s(&f.path("data")),
        "--data",
        s(&sorting),
        "--epochs",
        "1",
        "--out",
        s(&f.path("ft")),
    ]);
    let line = out.lines().find(|l| l.starts_with("provenance:")).unwrap();
    assert!(line.contains("[reach,sorting] <- "), "{line}");
    assert!(line.ends_with("[reach]"), "{line}");
}

#[test]
fn serve_answers_eval_and_stops_on_sigint() {
    let f = Fixture::new();
    let ckpt = f.path("train/checkpoint.json");
    let mut server = Command::new(env!("CARGO_BIN_EXE_coinbot"))
        .args(["serve", "--ckpt", s(&ckpt), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(server.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_string();

    ok(&["eval", "--bridge", &addr, "--task", "reach", "--n", "3", "--t-o", "2", "--t-p", "16", "--t-a", "8", "--out", s(&f.path("remote"))]);
    ok(&["eval", "--ckpt", s(&ckpt), "--task", "reach", "--n", "3", "--out", s(&f.path("local"))]);
    assert_eq!(
        std::fs::read(f.path("remote/report.json")).unwrap(),
        std::fs::read(f.path("local/report.json")).unwrap()
    );

    let killed = Command::new("kill").args(["-INT", &server.id().to_string()]).status().unwrap();
    assert!(killed.success());
    assert_eq!(server.wait().unwrap().code(), Some(0));
}
