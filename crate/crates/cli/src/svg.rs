//! Self-contained SVG line charts of `log10(gap)` against epoch.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// Gaps at or below this are drawn on the floor of the chart.
const FLOOR: f64 = 1e-16;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    /// `(epoch, gap)` pairs.
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render(title: &str, series: &[Series]) -> String {
    let logs = |s: &Series| -> Vec<(f64, f64)> {
        s.points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, g)| (x, g.max(FLOOR).log10()))
            .collect()
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(logs).collect();
    let x_max = all.iter().map(|p| p.0).fold(1.0f64, f64::max);
    let mut y_lo = all
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
        .floor();
    let mut y_hi = all
        .iter()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil();
    if !y_lo.is_finite() || !y_hi.is_finite() {
        (y_lo, y_hi) = (-1.0, 0.0);
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + x / x_max * pw;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" style="font-family:sans-serif;font-size:12px">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" style="font-size:14px;text-anchor:middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let step = ((y_hi - y_lo) / 10.0).ceil().max(1.0);
    let mut y = y_lo;
    while y <= y_hi + 1e-9 {
        let py = sy(y);
        let _ = writeln!(
            out,
            r#"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" style="stroke:#e0e0e0;stroke-width:1"/>"#,
            LEFT + pw
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" style="text-anchor:end">1e{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            y as i64
        );
        y += step;
    }
    for k in 0..=5 {
        let x = x_max * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" style="text-anchor:middle">{}</text>"#,
            sx(x),
            TOP + ph + 18.0,
            (x * 100.0).round() / 100.0
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" style="fill:none;stroke:#333333;stroke-width:1"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" style="text-anchor:middle">epoch (t / M)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" style="text-anchor:middle">MSPBE gap</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = logs(s)
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" style="fill:none;stroke:{color};stroke-width:1.6"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" style="stroke:{color};stroke-width:2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
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
        let s = vec![
            Series {
                label: "a".into(),
                points: vec![(1.0, 1.0), (2.0, 1e-3)],
            },
            Series {
                label: "b<c".into(),
                points: vec![(1.0, 0.5), (2.0, 0.0)],
            },
        ];
        let svg = render("t", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_and_nonfinite_series_still_render() {
        let s = vec![Series {
            label: "nan".into(),
            points: vec![(1.0, f64::NAN)],
        }];
        let svg = render("t", &s);
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
