use std::fmt::Write as _;
use std::path::Path;

use crate::{Failure, PlotArgs, PlotMode};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const COLORS: &[&str] = &["#1b1b1b", "#d1495b", "#00798c", "#edae49", "#66a182", "#8d6a9f", "#2e4057"];

/// A numeric table: header names and rows.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    parse_table(&text).map_err(|m| Failure::Usage(format!("{}: {m}", path.display())))
}

pub fn parse_table(text: &str) -> Result<Table, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return Err(format!("line 1: {e}")),
    };
    let header = if header.len() == 1 && header[0].is_empty() { Vec::new() } else { header };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format!("line {line}: {e}")
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| format!("line {line}: `{f}` is not a number")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

struct Line {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series_lines(t: &Table) -> Vec<Line> {
    (1..t.header.len())
        .map(|c| Line { label: t.header[c].clone(), points: t.rows.iter().map(|r| (r[0], r[c])).collect() })
        .collect()
}

/// Every `<name>_x` column with a matching `<name>_y` becomes one polyline.
fn overlay_lines(t: &Table) -> Vec<Line> {
    let mut out = Vec::new();
    for (i, h) in t.header.iter().enumerate() {
        let Some(name) = h.strip_suffix("_x") else { continue };
        let Some(j) = t.header.iter().position(|o| *o == format!("{name}_y")) else { continue };
        out.push(Line { label: name.to_string(), points: t.rows.iter().map(|r| (r[i], r[j])).collect() });
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn render(lines: &[Line], title: &str, equal_aspect: bool) -> String {
    let pts = lines.iter().flat_map(|l| l.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let (mut sx, mut sy) = (pw / (x1 - x0), ph / (y1 - y0));
    if equal_aspect {
        let s = sx.min(sy);
        (sx, sy) = (s, s);
    }
    let px = |x: f64| MARGIN + (x - x0) * sx;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) * sy;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r##"<g id="axes" stroke="#444" fill="none"><path d="M{bx} {MARGIN} V{by} H{}"/></g>"##,
        WIDTH - MARGIN
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#, px(v), by + 18.0, fmt_tick(v));
    }
    for v in [y0, y1] {
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, bx - 6.0, py(v) + 4.0, fmt_tick(v));
    }
    for (i, l) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = l
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if coords.len() >= 2 {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                coords.join(" "),
                escape(&l.label)
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            escape(&l.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn run(a: PlotArgs) -> Result<(), Failure> {
    let table = read_table(&a.input)?;
    if let Some(bad) = table.rows.iter().position(|r| r.len() != table.header.len()) {
        return Err(Failure::Usage(format!(
            "{}: line {}: expected {} fields",
            a.input.display(),
            bad + 2,
            table.header.len()
        )));
    }
    let overlay = match a.mode {
        PlotMode::Overlay => true,
        PlotMode::Series => false,
        PlotMode::Auto => table.header.iter().any(|h| h == "gt_x"),
    };
    let lines = if overlay { overlay_lines(&table) } else { series_lines(&table) };
    let title = a.title.unwrap_or_else(|| a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string());
    let svg = render(&lines, &title, overlay);
    std::fs::write(&a.out, svg).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {} ({} lines)", a.out.display(), lines.len());
    Ok(())
}
