//! SVG figures for a finished run directory.
//!
//! Reads the three run outputs (samples.csv, metrics.csv, paths.csv) and
//! writes self-contained SVGs next to them. Everything is emitted by hand;
//! the figures only need dots, lines, and a frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 46.0;

struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn around(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut f = Frame {
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            f.xmin = f.xmin.min(x);
            f.xmax = f.xmax.max(x);
            f.ymin = f.ymin.min(y);
            f.ymax = f.ymax.max(y);
        }
        // Degenerate spans still need a nonzero box.
        if f.xmin > f.xmax {
            return Frame { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0 };
        }
        let pad_x = (f.xmax - f.xmin).max(1e-9) * 0.06;
        let pad_y = (f.ymax - f.ymin).max(1e-9) * 0.06;
        f.xmin -= pad_x;
        f.xmax += pad_x;
        f.ymin -= pad_y;
        f.ymax += pad_y;
        f
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = MARGIN + (x - self.xmin) / (self.xmax - self.xmin) * (WIDTH - 2.0 * MARGIN);
        let sy = HEIGHT - MARGIN - (y - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - 2.0 * MARGIN);
        (sx, sy)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    );
    s
}

fn svg_frame(s: &mut String, f: &Frame) {
    let _ = write!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let labels = [
        (f.xmin, f.ymin, MARGIN, HEIGHT - MARGIN + 16.0, "start"),
        (f.xmax, f.ymin, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "end"),
    ];
    for (vx, _, px, py, _) in labels {
        let _ = write!(
            s,
            "<text x=\"{px}\" y=\"{py}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{vx:.3}</text>\n"
        );
    }
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
        MARGIN - 6.0,
        HEIGHT - MARGIN + 4.0,
        f.ymin,
        MARGIN - 6.0,
        MARGIN + 4.0,
        f.ymax
    );
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_owned).collect();
        if row.is_empty() {
            return Err(Error::Config(format!(
                "{} row {}: empty record",
                path.display(),
                i + 2
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("{} has no '{name}' column", path.display())))
}

fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.parse().map_err(|_| {
        Error::Config(format!(
            "{} row {row}: cannot parse '{field}' as a number",
            path.display()
        ))
    })
}

fn samples_figure(path: &Path, out: &Path) -> Result<()> {
    let (header, rows) = read_csv(path)?;
    let c_source = column(&header, "source", path)?;
    let c_x = column(&header, "x", path)?;
    let c_y = column(&header, "y", path)?;
    let mut pts = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let x = parse_f64(&row[c_x], path, i + 2)?;
        let y = parse_f64(&row[c_y], path, i + 2)?;
        pts.push((row[c_source].clone(), x, y));
    }
    let frame = Frame::around(pts.iter().map(|(_, x, y)| (*x, *y)));
    let mut s = svg_open("data (red) vs model samples (blue)");
    svg_frame(&mut s, &frame);
    for (source, x, y) in &pts {
        let (px, py) = frame.map(*x, *y);
        let color = if source == "data" { "#d0342c" } else { "#2c6fd0" };
        let _ = write!(
            s,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.55\"/>\n"
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s)?;
    Ok(())
}

fn w2_figure(path: &Path, out: &Path) -> Result<()> {
    let (header, rows) = read_csv(path)?;
    let c_iter = column(&header, "outer_iter", path)?;
    let c_w2 = column(&header, "w2", path)?;
    let mut pts = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if row[c_w2].is_empty() {
            continue;
        }
        let it = parse_f64(&row[c_iter], path, i + 2)?;
        let w2 = parse_f64(&row[c_w2], path, i + 2)?;
        pts.push((it, w2));
    }
    if pts.is_empty() {
        return Err(Error::Config(format!(
            "{} has no evaluated w2 rows",
            path.display()
        )));
    }
    let frame = Frame::around(pts.iter().copied().chain(std::iter::once((0.0, 0.0))));
    let mut s = svg_open("matching distance over fine-tuning");
    svg_frame(&mut s, &frame);
    let poly: Vec<String> = pts
        .iter()
        .map(|(x, y)| {
            let (px, py) = frame.map(*x, *y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let _ = write!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#2c6fd0\" stroke-width=\"1.5\"/>\n",
        poly.join(" ")
    );
    for (x, y) in &pts {
        let (px, py) = frame.map(*x, *y);
        let _ = write!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"#2c6fd0\"/>\n");
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s)?;
    Ok(())
}

fn paths_figure(path: &Path, out: &Path) -> Result<()> {
    let (header, rows) = read_csv(path)?;
    let c_id = column(&header, "traj_id", path)?;
    let c_t = column(&header, "t", path)?;
    let c_x = column(&header, "x", path)?;
    let c_y = column(&header, "y", path)?;
    // traj id -> (level, point), later sorted by level descending.
    let mut chains: std::collections::BTreeMap<u64, Vec<(i64, f64, f64)>> = Default::default();
    for (i, row) in rows.iter().enumerate() {
        let id = parse_f64(&row[c_id], path, i + 2)? as u64;
        let t = parse_f64(&row[c_t], path, i + 2)? as i64;
        let x = parse_f64(&row[c_x], path, i + 2)?;
        let y = parse_f64(&row[c_y], path, i + 2)?;
        chains.entry(id).or_default().push((t, x, y));
    }
    let frame = Frame::around(
        chains
            .values()
            .flatten()
            .map(|(_, x, y)| (*x, *y)),
    );
    let t_max = chains
        .values()
        .flatten()
        .map(|(t, _, _)| *t)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut s = svg_open("sampling chains, noise (gray) to data (blue)");
    svg_frame(&mut s, &frame);
    for pts in chains.values_mut() {
        pts.sort_by_key(|(t, _, _)| -t);
        for pair in pts.windows(2) {
            let (t0, x0, y0) = pair[0];
            let (_, x1, y1) = pair[1];
            let (px0, py0) = frame.map(x0, y0);
            let (px1, py1) = frame.map(x1, y1);
            // Early transitions light gray, late ones saturated blue.
            let frac = 1.0 - (t0 as f64 / t_max);
            let rch = (190.0 - 146.0 * frac) as u8;
            let gch = (190.0 - 79.0 * frac) as u8;
            let bch = (190.0 + 18.0 * frac) as u8;
            let _ = write!(
                s,
                "<line x1=\"{px0:.2}\" y1=\"{py0:.2}\" x2=\"{px1:.2}\" y2=\"{py1:.2}\" stroke=\"rgb({rch},{gch},{bch})\" stroke-width=\"1.2\"/>\n"
            );
        }
        if let Some(&(_, x, y)) = pts.last() {
            let (px, py) = frame.map(x, y);
            let _ = write!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.4\" fill=\"#2c6fd0\"/>\n");
        }
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s)?;
    Ok(())
}

/// Render the three figures for `run_dir`. All inputs are checked up front;
/// if any are absent the error lists every missing file and nothing is
/// written. Returns the paths written.
pub fn emit_figures(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let samples = run_dir.join("samples.csv");
    let metrics = run_dir.join("metrics.csv");
    let paths = run_dir.join("paths.csv");
    let missing: Vec<PathBuf> = [&samples, &metrics, &paths]
        .into_iter()
        .filter(|p| !p.exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFigureInputs(missing));
    }
    let outs = [
        run_dir.join("fig_samples.svg"),
        run_dir.join("fig_w2.svg"),
        run_dir.join("fig_paths.svg"),
    ];
    samples_figure(&samples, &outs[0])?;
    w2_figure(&metrics, &outs[1])?;
    paths_figure(&paths, &outs[2])?;
    Ok(outs.to_vec())
}
