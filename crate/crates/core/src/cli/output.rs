use std::fmt::Write as _;

use super::CliError;

/// 17 significant digits, exponent form, decimal point always `.`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// CSV with a fixed header; every row must match the header width.
pub(crate) struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
    width: usize,
}

impl CsvTable {
    pub(crate) fn new(header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).map_err(csv_error)?;
        Ok(Self {
            writer,
            width: header.len(),
        })
    }

    pub(crate) fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        debug_assert_eq!(fields.len(), self.width);
        self.writer.write_record(fields).map_err(csv_error)
    }

    pub(crate) fn into_bytes(self) -> Result<Vec<u8>, CliError> {
        self.writer.into_inner().map_err(|e| CliError::io(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::io(e.to_string())
}

/// One labelled curve, possibly broken into several segments (a wrapped
/// angle jumps from π to −π).
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub label: String,
    pub segments: Vec<Vec<(f64, f64)>>,
}

impl Polyline {
    /// Splits at jumps larger than `max_jump` in x.
    pub fn split_at_jumps(label: impl Into<String>, points: &[(f64, f64)], max_jump: f64) -> Self {
        let mut segments = vec![Vec::new()];
        for w in points.windows(2) {
            segments.last_mut().unwrap().push(w[0]);
            if (w[1].0 - w[0].0).abs() > max_jump {
                segments.push(Vec::new());
            }
        }
        if let Some(last) = points.last() {
            segments.last_mut().unwrap().push(*last);
        }
        segments.retain(|s| !s.is_empty());
        Self {
            label: label.into(),
            segments,
        }
    }

    pub fn single(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            segments: vec![points],
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 48.0;
const MAX_POINTS_PER_SEGMENT: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS_PER_SEGMENT {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS_PER_SEGMENT);
    let mut out: Vec<(f64, f64)> = points.iter().copied().step_by(stride).collect();
    if out.last() != points.last() {
        out.push(*points.last().unwrap());
    }
    out
}

/// Hand-rolled SVG of the polylines; axis ranges fit the data with a 5%
/// margin. Output depends only on the inputs.
pub fn render_polylines_svg(title: &str, x_label: &str, y_label: &str, lines: &[Polyline]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for &(x, y) in lines.iter().flat_map(|l| l.segments.iter().flatten()) {
        if x.is_finite() && y.is_finite() {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (-1.0, 1.0, -1.0, 1.0);
    }
    let (xmin, xmax) = with_margin(xmin, xmax);
    let (ymin, ymax) = with_margin(ymin, ymax);
    let sx = |x: f64| PAD + (x - xmin) / (xmax - xmin) * (WIDTH - 2.0 * PAD);
    let sy = |y: f64| HEIGHT - PAD - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    if xmin < 0.0 && xmax > 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{:.1}" stroke="#ccc"/>"##,
            HEIGHT - PAD,
            x = sx(0.0)
        );
    }
    if ymin < 0.0 && ymax > 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{PAD}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#ccc"/>"##,
            WIDTH - PAD,
            y = sy(0.0)
        );
    }
    let tick = |v: f64| format!("{v:.3}");
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
        HEIGHT - PAD + 14.0,
        tick(xmin)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        WIDTH - PAD,
        HEIGHT - PAD + 14.0,
        tick(xmax)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        PAD - 4.0,
        HEIGHT - PAD,
        tick(ymin)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        PAD - 4.0,
        PAD + 10.0,
        tick(ymax)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, line) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<g stroke="{color}" fill="none" stroke-width="1.5">"#);
        let _ = writeln!(s, "<title>{}</title>", escape(&line.label));
        for seg in &line.segments {
            let pts: Vec<String> = thin(seg)
                .into_iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.len() >= 2 {
                let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
            }
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - PAD - 4.0,
            PAD + 14.0 + 14.0 * i as f64,
            escape(&line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn with_margin(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.05 * span } else { 0.5_f64.max(lo.abs() * 0.05) };
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
