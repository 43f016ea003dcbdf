//! CSV, JSON and SVG artifacts of an experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::ResultTable;
use super::search::Method;
use crate::error::Result;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    fn new(width: f64, height: f64) -> Self {
        Canvas {
            body: String::new(),
            width,
            height,
        }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            esc(s)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"/>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let hi = values.fold(0.0f64, f64::max);
    let hi = if hi > 0.0 { hi * 1.1 } else { 1.0 };
    (0.0, hi)
}

fn axes(c: &mut Canvas, ox: f64, oy: f64, hi: f64, title: &str, ylabel: &str) {
    c.line(ox, oy, ox + PANEL_W, oy, "black");
    c.line(ox, oy, ox, oy - PANEL_H, "black");
    for k in 0..=4 {
        let v = hi * k as f64 / 4.0;
        let y = oy - PANEL_H * k as f64 / 4.0;
        c.line(ox - 4.0, y, ox, y, "black");
        c.text(ox - 6.0, y + 4.0, "end", 10, &format!("{v:.0}"));
    }
    c.text(ox + PANEL_W / 2.0, oy - PANEL_H - 10.0, "middle", 13, title);
    c.text(ox - 36.0, oy - PANEL_H / 2.0, "middle", 11, ylabel);
}

fn legend(c: &mut Canvas, methods: &[Method], x: f64, y: f64) {
    for (i, m) in methods.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            c.body,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#,
            yy - 9.0
        );
        c.text(x + 14.0, yy, "start", 11, &m.to_string());
    }
}

fn cell_means(table: &ResultTable) -> (Vec<usize>, Vec<usize>, Vec<Method>, String) {
    let means = table.means();
    let cs: BTreeSet<usize> = means.iter().map(|m| m.categories).collect();
    let ns: BTreeSet<usize> = means.iter().map(|m| m.n_train).collect();
    let mut methods: Vec<Method> = Vec::new();
    for m in &means {
        if !methods.contains(&m.method) {
            methods.push(m.method);
        }
    }
    let metric = means.first().map(|m| m.metric.clone()).unwrap_or_default();
    (cs.into_iter().collect(), ns.into_iter().collect(), methods, metric)
}

/// Metric against the number of training objects, one panel per C and one
/// line per method.
pub fn trend_svg(table: &ResultTable) -> String {
    let (cs, ns, methods, metric) = cell_means(table);
    let panels = cs.len().max(1) as f64;
    let mut c = Canvas::new(panels * (PANEL_W + 2.0 * MARGIN) + 120.0, PANEL_H + 2.0 * MARGIN + 20.0);
    let (_, hi) = y_range(table.means().iter().filter_map(|m| m.mean));
    let nx = ns.len().max(2) as f64 - 1.0;
    for (p, &cat) in cs.iter().enumerate() {
        let ox = MARGIN + p as f64 * (PANEL_W + 2.0 * MARGIN);
        let oy = MARGIN + PANEL_H;
        axes(&mut c, ox, oy, hi, &format!("C = {cat}"), &metric);
        for (k, n) in ns.iter().enumerate() {
            let x = ox + PANEL_W * k as f64 / nx;
            c.text(x, oy + 16.0, "middle", 10, &n.to_string());
        }
        c.text(ox + PANEL_W / 2.0, oy + 32.0, "middle", 11, "training objects");
        for (i, &m) in methods.iter().enumerate() {
            let pts: Vec<String> = ns
                .iter()
                .enumerate()
                .filter_map(|(k, &n)| {
                    table
                        .mean_of(cat, n, m)
                        .map(|v| format!("{:.1},{:.1}", ox + PANEL_W * k as f64 / nx, oy - PANEL_H * v / hi))
                })
                .collect();
            let _ = writeln!(
                c.body,
                r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
    }
    let lx = c.width - 110.0;
    legend(&mut c, &methods, lx, MARGIN);
    c.finish()
}

/// Metric per method averaged over the training-object schedule, grouped by C.
pub fn methods_svg(table: &ResultTable) -> String {
    let (cs, ns, methods, metric) = cell_means(table);
    let mut c = Canvas::new(PANEL_W + 2.0 * MARGIN + 120.0, PANEL_H + 2.0 * MARGIN + 20.0);
    let avg = |cat: usize, m: Method| -> Option<f64> {
        let v: Vec<f64> = ns.iter().filter_map(|&n| table.mean_of(cat, n, m)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (_, hi) = y_range(
        cs.iter()
            .flat_map(|&cat| methods.iter().filter_map(move |&m| avg(cat, m))),
    );
    let ox = MARGIN;
    let oy = MARGIN + PANEL_H;
    axes(&mut c, ox, oy, hi, "mean over training-object counts", &metric);
    let group_w = PANEL_W / cs.len().max(1) as f64;
    let bar_w = 0.8 * group_w / methods.len().max(1) as f64;
    for (g, &cat) in cs.iter().enumerate() {
        let gx = ox + g as f64 * group_w + 0.1 * group_w;
        for (i, &m) in methods.iter().enumerate() {
            if let Some(v) = avg(cat, m) {
                let h = PANEL_H * v / hi;
                let _ = writeln!(
                    c.body,
                    r#"<rect x="{:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{}"/>"#,
                    gx + i as f64 * bar_w,
                    oy - h,
                    PALETTE[i % PALETTE.len()]
                );
            }
        }
        c.text(gx + 0.4 * group_w, oy + 16.0, "middle", 11, &format!("C = {cat}"));
    }
    let lx = c.width - 110.0;
    legend(&mut c, &methods, lx, MARGIN);
    c.finish()
}

/// Writes `results.csv`, `results.json`, `trend.svg` and `methods.svg`.
pub fn write_artifacts(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        ("results.csv", table.to_csv()?),
        ("results.json", table.to_json()?),
        ("trend.svg", trend_svg(table)),
        ("methods.svg", methods_svg(table)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}
