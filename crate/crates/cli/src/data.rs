//! collect, validate, align, and loading recorded episodes.

use std::path::{Path, PathBuf};

use coinbot::collect::{collect_episode, CollectedEpisode};
use coinbot::recorder::{
    align, load_episode, load_recording, save_episode, validate_frequencies, AlignConfig, AlignedEpisode,
    FrequencyReport,
};
use coinbot::simworld::SessionConfig;
use serde::Serialize;

use crate::error::CliError;
use crate::write_json;

pub fn episode_dir_name(seed: u64) -> String {
    format!("ep_{seed:06}")
}

/// Episode directories under each root, or the root itself if it is one.
pub fn episode_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for root in roots {
        if root.join("meta.json").is_file() {
            out.push(root.clone());
            continue;
        }
        let entries = std::fs::read_dir(root).map_err(|e| CliError::data(format!("{}: {e}", root.display())))?;
        let mut dirs: Vec<PathBuf> =
            entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("meta.json").is_file()).collect();
        if dirs.is_empty() {
            return Err(CliError::data(format!("no episodes under {}", root.display())));
        }
        dirs.sort();
        out.extend(dirs);
    }
    if out.is_empty() {
        return Err(CliError::config("no data directories given (--data)"));
    }
    Ok(out)
}

/// All episodes under `roots`, in seed order (ties by task, view, path).
pub fn load_dataset(roots: &[PathBuf]) -> Result<Vec<AlignedEpisode>, CliError> {
    let mut eps = Vec::new();
    for dir in episode_dirs(roots)? {
        let ep = load_episode(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        eps.push((dir, ep));
    }
    eps.sort_by(|(pa, a), (pb, b)| {
        (a.meta.seed, &a.meta.task, &a.meta.view_id, pa).cmp(&(b.meta.seed, &b.meta.task, &b.meta.view_id, pb))
    });
    Ok(eps.into_iter().map(|(_, e)| e).collect())
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    dir: String,
    seed: u64,
    ticks: usize,
    pass: bool,
    report: &'a FrequencyReport,
}

fn print_report(name: &str, ticks: usize, report: &FrequencyReport) {
    let streams: Vec<String> = report
        .streams
        .iter()
        .map(|s| {
            format!(
                "{} {:.2}/{:.0} Hz std {:.2} ms {}",
                s.topic,
                s.mean_hz,
                s.nominal_hz,
                s.period_std_ns / 1e6,
                if s.pass { "ok" } else { "FAIL" }
            )
        })
        .collect();
    println!("{name} ticks={ticks} pass={} | {}", report.all_pass(), streams.join(" | "));
    for s in report.streams.iter().filter(|s| !s.pass) {
        for r in &s.reasons {
            println!("  {}: {r}", s.topic);
        }
    }
}

pub struct CollectOpts {
    pub base: SessionConfig,
    pub align: AlignConfig,
    pub n_demos: usize,
    pub jobs: usize,
    pub out: PathBuf,
}

pub fn collect(o: &CollectOpts) -> Result<(), CliError> {
    std::fs::create_dir_all(&o.out)?;
    let seeds: Vec<u64> = (0..o.n_demos as u64).map(|i| o.base.seed + i).collect();
    let run = |seed: u64| -> Result<CollectedEpisode, CliError> {
        // every session owns its bus, so parallel sessions never share topics
        let cfg = SessionConfig { seed, ..o.base.clone() };
        let c = collect_episode(&cfg, &o.align)?;
        save_episode(&o.out.join(episode_dir_name(seed)), &c.recording, &c.report, &c.episode)?;
        Ok(c)
    };
    let mut lines = Vec::with_capacity(seeds.len());
    for block in seeds.chunks(o.jobs.max(1)) {
        let results: Vec<Result<CollectedEpisode, CliError>> = std::thread::scope(|s| {
            let handles: Vec<_> = block.iter().map(|&seed| s.spawn(move || run(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("collect worker panicked")).collect()
        });
        for (seed, r) in block.iter().zip(results) {
            let c = r?;
            print_report(&episode_dir_name(*seed), c.episode.len(), &c.report);
            lines.push((*seed, c.episode.len(), c.report));
        }
    }
    let report: Vec<EpisodeLine> = lines
        .iter()
        .map(|(seed, ticks, rep)| EpisodeLine {
            dir: episode_dir_name(*seed),
            seed: *seed,
            ticks: *ticks,
            pass: rep.all_pass(),
            report: rep,
        })
        .collect();
    write_json(&o.out.join("report.json"), &serde_json::json!({ "task": o.base.task.name, "episodes": report }))
}

/// Re-run the frequency checks on stored recordings. Fails with a data
/// error if any stream is flagged.
pub fn validate(data: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut lines = Vec::new();
    for dir in episode_dirs(data)? {
        let (rec, specs) = load_recording(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let report = validate_frequencies(&rec, &specs)?;
        let ticks = load_episode(&dir).map(|e| e.len()).unwrap_or(0);
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        print_report(&name, ticks, &report);
        lines.push((name, rec.meta.seed, ticks, report));
    }
    if let Some(out) = out {
        let report: Vec<EpisodeLine> = lines
            .iter()
            .map(|(name, seed, ticks, rep)| EpisodeLine {
                dir: name.clone(),
                seed: *seed,
                ticks: *ticks,
                pass: rep.all_pass(),
                report: rep,
            })
            .collect();
        std::fs::create_dir_all(out)?;
        write_json(&out.join("report.json"), &serde_json::json!({ "episodes": report }))?;
    }
    let failed = lines.iter().filter(|l| !l.3.all_pass()).count();
    if failed > 0 {
        return Err(CliError::data(format!("{failed} of {} episodes failed frequency checks", lines.len())));
    }
    Ok(())
}

/// Re-align stored recordings at a new rate, in place or into `out`.
/// Re-align in place, or into `out` together with a `report.json`.
pub fn realign(data: &[PathBuf], cfg: &AlignConfig, out: Option<&Path>) -> Result<(), CliError> {
    let mut summary = Vec::new();
    for dir in episode_dirs(data)? {
        let (rec, specs) = load_recording(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let report = validate_frequencies(&rec, &specs)?;
        let ep = align(&rec, &specs, cfg)?;
        let name = dir.file_name().map(PathBuf::from).unwrap_or_default();
        let target = out.map_or_else(|| dir.clone(), |o| o.join(&name));
        save_episode(&target, &rec, &report, &ep)?;
        println!("{} ticks={} align_hz={}", target.display(), ep.len(), ep.align_hz);
        summary.push(serde_json::json!({ "dir": name, "seed": ep.meta.seed, "ticks": ep.len() }));
    }
    if let Some(o) = out {
        write_json(&o.join("report.json"), &serde_json::json!({ "align_hz": cfg.align_hz, "episodes": summary }))?;
    }
    Ok(())
}
