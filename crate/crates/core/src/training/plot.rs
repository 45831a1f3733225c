//! Accuracy-versus-epoch curves as a standalone SVG.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One curve per `(label, accuracies)`; epoch `i + 1` maps to index `i`.
pub fn accuracy_svg(title: &str, curves: &[(String, Vec<f64>)]) -> String {
    let max_epoch = curves.iter().map(|(_, s)| s.len()).max().unwrap_or(1).max(2);
    let x = |e: usize| MARGIN + (e as f64 - 1.0) / (max_epoch as f64 - 1.0) * (WIDTH - 2.0 * MARGIN);
    let y = |a: f64| HEIGHT - MARGIN - a.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="#ddd"/><text x="{1}" y="{2}" text-anchor="end">{a:.1}</text>"##,
            y(a),
            x0 - 6.0,
            y(a) + 4.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="start">{max_epoch}</text>"#, x1 - 8.0, y0 + 16.0);
    for (i, (label, series)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(e, &a)| format!("{:.1},{:.1}", x(e + 1), y(a)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            x1 - 90.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_curve() {
        let svg = accuracy_svg("a<b", &[("base".into(), vec![0.2, 0.5, 0.9]), ("#3".into(), vec![0.1, 0.3])]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
