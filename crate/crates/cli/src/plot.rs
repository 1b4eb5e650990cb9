//! Minimal SVG line/scatter plots of CSV columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use audiopred::analysis::ols_regress;
use audiopred::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Style {
    Line,
    Scatter,
}

pub struct PlotSpec<'a> {
    pub x: Option<&'a str>,
    pub y: Option<&'a str>,
    pub group: Option<&'a str>,
    pub style: Style,
    pub title: Option<&'a str>,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { headers, rows })
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("no column `{name}` (have {})", self.headers.join(","))))
    }

    fn numeric(&self, c: usize) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.get(c).is_some_and(|v| v.parse::<f64>().is_ok()))
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Render `csv` as SVG text.
pub fn render(path: &Path, spec: &PlotSpec) -> Result<String> {
    let t = read_table(path)?;
    let numeric: Vec<usize> = (0..t.headers.len()).filter(|&c| t.numeric(c)).collect();
    let pick = |name: Option<&str>, fallback: usize| -> Result<usize> {
        match name {
            Some(n) => t.column(n),
            None => numeric
                .get(fallback)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("{}: needs two numeric columns", path.display()))),
        }
    };
    let xc = pick(spec.x, 0)?;
    let yc = pick(spec.y, 1)?;
    let gc = spec.group.map(|g| t.column(g)).transpose()?;

    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, r) in t.rows.iter().enumerate() {
        let parse = |c: usize| {
            r[c].parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("row {}: `{}` is not a number", i + 2, r[c])))
        };
        let key = gc.map(|g| r[g].clone()).unwrap_or_default();
        series.entry(key).or_default().push((parse(xc)?, parse(yc)?));
    }
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no rows to plot", path.display())));
    }
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(&mut all.iter().map(|p| p.0));
    let (y0, y1) = span(&mut all.iter().map(|p| p.1));
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if let Some(title) = spec.title {
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    }
    // axes
    let _ = writeln!(s, r#"<g class="axes" stroke="black">"#);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}"/>"#, H - M);
    let _ = writeln!(s, "</g>");
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - M + 16.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, M - 6.0, sy(yv) + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 18.0, escape(&t.headers[xc]));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&t.headers[yc])
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        match spec.style {
            Style::Line => {
                let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
            }
            Style::Scatter => {
                for &(x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
                }
            }
        }
        if !name.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                W - M + 4.0,
                M + 14.0 * i as f64,
                escape(name)
            );
        }
    }

    // overall regression line, when defined
    let (xs, ys): (Vec<f64>, Vec<f64>) = all.iter().copied().unzip();
    if let Ok(r) = ols_regress(&xs, &ys) {
        let _ = writeln!(
            s,
            r#"<line class="regression" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
            sx(x0),
            sy(r.intercept + r.slope * x0),
            sx(x1),
            sy(r.intercept + r.slope * x1)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">slope {:.4}, R² {:.3}, p {:.3e}</text>"#,
            W - M,
            M - 8.0,
            r.slope,
            r.r_squared,
            r.p_value
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
