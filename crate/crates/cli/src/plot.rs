//! plot: render a trajectory dump or a loss curve as SVG.

use std::fmt::Write as _;
use std::path::Path;

use coinbot::evalkit::{read_csv, write_svg, CSV_HEADER};

use crate::error::CliError;

pub fn plot(input: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').collect();
    let svg = if header == CSV_HEADER {
        let traj = read_csv(text.as_bytes())?;
        let mut buf = Vec::new();
        write_svg(&traj, &mut buf)?;
        String::from_utf8(buf).expect("svg is utf-8")
    } else if header == ["epoch", "loss"] {
        loss_svg(&parse_loss(&text)?)
    } else {
        return Err(CliError::data(format!(
            "{}: expected a trajectories.csv or loss.csv header, got {header:?}",
            input.display()
        )));
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, svg)?;
    Ok(())
}

fn parse_loss(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.deserialize::<(f64, f64)>().map(|r| r.map_err(|e| CliError::data(format!("loss csv: {e}")))).collect()
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 30.0;

/// Log-scale loss curve.
fn loss_svg(points: &[(f64, f64)]) -> String {
    let ys: Vec<f64> = points.iter().map(|p| p.1.max(1e-12).log10()).collect();
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = points.len().max(2) as f64 - 1.0;
    let coords: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let x = PAD + (W - 2.0 * PAD) * i as f64 / n;
            let y = H - PAD - (H - 2.0 * PAD) * (y - lo) / span;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r##"<rect width="{W}" height="{H}" fill="#ffffff" stroke="#999999"/>"##);
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        let _ = writeln!(s, r#"<text x="{PAD}" y="20" font-size="12">loss {:.4} to {:.4} over {} epochs (log scale)</text>"#, first.1, last.1, points.len());
    }
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##, coords.join(" "));
    s.push_str("</svg>\n");
    s
}
