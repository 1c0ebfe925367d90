use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rollout::{TrajPoint, Trajectory};
use super::EvalError;

pub const CSV_HEADER: [&str; 7] = ["episode", "tick", "t_ns", "eef_x", "eef_y", "gripper", "success"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Csv,
    Svg,
}

impl FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(DumpFormat::Csv),
            "svg" => Ok(DumpFormat::Svg),
            other => Err(format!("unknown trajectory format {other:?}, expected csv or svg")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    episode: usize,
    tick: usize,
    t_ns: i64,
    eef_x: f32,
    eef_y: f32,
    gripper: f32,
    success: bool,
}

fn io_err(e: csv::Error) -> EvalError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => EvalError::Io(e),
        other => EvalError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// One row per trajectory point; the header is always written.
pub fn write_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER).map_err(io_err)?;
    for t in trajectories {
        for p in &t.points {
            w.serialize(Row {
                episode: t.episode,
                tick: p.tick,
                t_ns: p.t_ns,
                eef_x: p.eef_xy[0],
                eef_y: p.eef_xy[1],
                gripper: p.gripper,
                success: t.success,
            })
            .map_err(io_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a [`write_csv`] dump. Seeds are not part of the CSV and come back as 0.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<Trajectory>, EvalError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(io_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(EvalError::SchemaMismatch(format!("trajectory header {:?}, expected {CSV_HEADER:?}", header)));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for row in rd.deserialize::<Row>() {
        let row = row.map_err(|e| EvalError::SchemaMismatch(e.to_string()))?;
        let point = TrajPoint { tick: row.tick, t_ns: row.t_ns, eef_xy: [row.eef_x, row.eef_y], gripper: row.gripper };
        match out.last_mut() {
            Some(t) if t.episode == row.episode => t.points.push(point),
            _ => out.push(Trajectory { episode: row.episode, seed: 0, success: row.success, points: vec![point] }),
        }
    }
    Ok(out)
}

const SVG_SIZE: f32 = 400.0;

/// Paths in workspace coordinates, y up, green for success and red otherwise.
pub fn write_svg<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<(), EvalError> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(s, r##"<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="#ffffff" stroke="#999999"/>"##);
    for t in trajectories {
        let color = if t.success { "#2a9d3c" } else { "#c8332b" };
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", p.eef_xy[0] * SVG_SIZE, (1.0 - p.eef_xy[1]) * SVG_SIZE))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-episode="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            t.episode,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn dump_trajectories(trajectories: &[Trajectory], path: &Path, format: DumpFormat) -> Result<(), EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let f = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        DumpFormat::Csv => write_csv(trajectories, f),
        DumpFormat::Svg => write_svg(trajectories, f),
    }
}
