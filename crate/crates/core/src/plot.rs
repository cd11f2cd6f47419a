//! Minimal SVG emitters: an annotated heatmap and a multi-series line chart.

use std::fmt::Write as _;

use crate::fmt::fixed;
use crate::transfer::OverlapMatrix;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Light for 0, dark blue for 1.
fn shade(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// One `<rect>` and one value `<text>` per matrix cell.
pub fn heatmap_svg(matrix: &OverlapMatrix) -> String {
    let n = matrix.labels.len();
    let cell = 60.0;
    let margin = 120.0;
    let size = margin + cell * n as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="12">"#
    );
    for (i, label) in matrix.labels.iter().enumerate() {
        let pos = margin + cell * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text class="label" x="{}" y="{pos}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            margin - 6.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text class="label" x="{pos}" y="{}" text-anchor="middle">{}</text>"#,
            margin - 8.0,
            escape(label)
        );
    }
    for (i, row) in matrix.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = margin + cell * j as f64;
            let y = margin + cell * i as f64;
            let ink = if *v > 0.55 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}"/>"#,
                shade(*v)
            );
            let _ = writeln!(
                s,
                r#"<text class="value" x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{ink}">{}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0,
                fixed(*v, 2)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with one `<polyline>` per series and a legend. The y axis
/// spans `[0, 1]`.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for tick in 0..=4 {
        let y = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            left - 6.0,
            sy(y),
            fixed(y, 2)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 10.0,
            w - right + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{ly}" dominant-baseline="middle">{}</text>"#,
            w - right + 36.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_structure() {
        let m = OverlapMatrix {
            labels: vec!["a".into(), "b<".into()],
            values: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        };
        let svg = heatmap_svg(&m);
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
        assert_eq!(svg.matches(r#"class="value""#).count(), 4);
        assert!(svg.contains(">0.30<"));
        assert!(svg.contains("b&lt;"));
        assert_eq!(shade(0.0), "#f7fbff");
        assert_eq!(shade(1.0), "#08306b");
    }

    #[test]
    fn chart_structure() {
        let series = vec![
            Series { name: "ERM".into(), points: vec![(1.0, 0.5), (2.0, 0.7)] },
            Series { name: "FTFT".into(), points: vec![(1.0, 0.6)] },
        ];
        let svg = line_chart_svg("t", "step", "acc", &series);
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
