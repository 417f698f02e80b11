//! Plain-text curve files and SVG panels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::spec::Axis;
use crate::summary::Summary;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot on the {0} axis")]
    Empty(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One line of a panel: `(x, mean, std)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub file_stem: String,
    pub points: Vec<(f64, f64, f64)>,
}

fn tag(scheme: &str, rho: f64, lambda_db: f64, value: Option<f64>) -> (String, String) {
    let mut label = format!("{scheme}, rho={rho}, lambda={lambda_db} dB");
    let mut stem = format!("{scheme}_rho{rho}_lambda{lambda_db}");
    if let Some(v) = value {
        label.push_str(&format!(", x={v}"));
        stem.push_str(&format!("_x{v}"));
    }
    (label, stem)
}

/// Curves of a panel, in summary order.
pub fn curves(summary: &Summary, axis: Axis) -> Vec<Curve> {
    let mut out: Vec<Curve> = Vec::new();
    match axis {
        Axis::Iter => {
            for c in &summary.curves {
                let (label, file_stem) = tag(c.scheme.label(), c.rho, c.lambda_db, c.sweep_value);
                let points = c.mean.iter().zip(&c.std).enumerate().map(|(i, (m, s))| ((i + 1) as f64, *m, *s)).collect();
                out.push(Curve { label, file_stem, points });
            }
        }
        Axis::Power | Axis::Rate => {
            for r in summary.rows.iter().filter(|r| r.sweep_value.is_some()) {
                let (label, file_stem) = tag(r.scheme.label(), r.rho, r.lambda_db, None);
                let p = (r.sweep_value.unwrap_or_default(), r.mean_harvested, r.std_harvested);
                match out.iter_mut().find(|c| c.file_stem == file_stem) {
                    Some(c) => c.points.push(p),
                    None => out.push(Curve { label, file_stem, points: vec![p] }),
                }
            }
        }
    }
    out
}

pub fn curve_text(c: &Curve) -> String {
    let mut s = format!("# {}\n# x mean_w std_w\n", c.label);
    for (x, m, sd) in &c.points {
        let _ = writeln!(s, "{x:e} {m:e} {sd:e}");
    }
    s
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

/// Mean lines with one-sigma error bars.
pub fn render_svg(title: &str, x_label: &str, curves: &[Curve]) -> String {
    let (w, h) = (720.0, 460.0);
    let (left, right, top, bottom) = (90.0, 220.0, 40.0, 60.0);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1) = pts.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let y1 = pts.fold(0.0f64, |a, p| a.max(p.1 + p.2));
    let y1 = if y1 > 0.0 { y1 * 1.05 } else { 1.0 };
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - y / y1 * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, (left + w - right) / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for t in ticks(x0, x1) {
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, px(t), h - bottom, h - bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(t), h - bottom + 18.0, fmt_tick(t));
    }
    for t in ticks(0.0, y1) {
        let _ = writeln!(s, r#"<line x1="{}" y1="{1}" x2="{left}" y2="{1}" stroke="black"/>"#, left - 5.0, py(t));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.2e}</text>"#, left - 8.0, py(t) + 4.0, t);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (left + w - right) / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">total harvested power (W)</text>"#,
        (top + h - bottom) / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, m, sd) in &c.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(m));
            if sd > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    px(x),
                    py((m - sd).max(0.0)),
                    py(m + sd)
                );
            }
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, c.label.replace('&', "&amp;"));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    if (t - t.round()).abs() < 1e-9 {
        format!("{}", t.round())
    } else {
        format!("{t:.2}")
    }
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, PlotError> {
    std::fs::write(&path, text).map_err(|source| PlotError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Writes one `.dat` file per curve and one SVG panel into `dir`.
pub fn emit_plot_data(summary: &Summary, axis: Axis, dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let cs = curves(summary, axis);
    if cs.is_empty() {
        return Err(PlotError::Empty(axis.label()));
    }
    std::fs::create_dir_all(dir).map_err(|source| PlotError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for c in &cs {
        written.push(write(dir.join(format!("{}_{}.dat", axis.label(), c.file_stem)), &curve_text(c))?);
    }
    let title = match axis {
        Axis::Iter => "Convergence",
        Axis::Power => "Harvested power vs. power budget",
        Axis::Rate => "Harvested power vs. rate requirement",
    };
    written.push(write(dir.join(format!("{}.svg", axis.label())), &render_svg(title, axis.title(), &cs))?);
    Ok(written)
}
