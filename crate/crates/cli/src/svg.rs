//! Minimal SVG line charts: one polyline per numeric column against the first.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Parses CSV text with a header row; non-numeric cells become NaN.
fn parse(csv: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = csv.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for line in lines.filter(|l| !l.is_empty()) {
        for (j, cell) in line.split(',').enumerate().take(header.len()) {
            cols[j].push(cell.trim().parse().unwrap_or(f64::NAN));
        }
    }
    (header, cols)
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-300 {
        let pad = 0.5 * lo.abs().max(1.0);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

pub fn line_chart_from_csv(csv: &str, title: &str) -> String {
    let (header, cols) = parse(csv);
    let series: Vec<usize> = (1..cols.len()).filter(|&j| cols[j].iter().any(|v| v.is_finite())).collect();
    line_chart(&header, &cols, &series, title)
}

pub fn line_chart(header: &[String], cols: &[Vec<f64>], series: &[usize], title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let xr = cols.first().and_then(|x| range(x.iter().copied()));
    let yr = range(series.iter().flat_map(|&j| cols[j].iter().copied()));
    let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) else {
        out.push_str("</svg>\n");
        return out;
    };
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (x, y, anchor, label) in [
        (MARGIN, HEIGHT - MARGIN + 18.0, "start", format!("{x0:.4}")),
        (WIDTH - MARGIN, HEIGHT - MARGIN + 18.0, "end", format!("{x1:.4}")),
        (MARGIN - 6.0, HEIGHT - MARGIN, "end", format!("{y0:.4}")),
        (MARGIN - 6.0, MARGIN + 10.0, "end", format!("{y1:.4}")),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{label}</text>"#);
    }
    if let Some(name) = header.first() {
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(name));
    }
    for (k, &j) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (&x, &y) in cols[0].iter().zip(&cols[j]) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.trim_end());
        let label = header.get(j).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN + 6.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series() {
        let svg = line_chart_from_csv("t,a,b\n0,1,2\n1,2,3\n2,3,5\n", "demo");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_table_is_still_valid() {
        let svg = line_chart_from_csv("t,a\n", "empty");
        assert!(svg.contains("</svg>") && !svg.contains("<polyline"));
    }
}
