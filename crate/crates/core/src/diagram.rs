//! Reliability diagrams as plain SVG text.

use std::fmt::Write;

use crate::metrics::ReliabilityBin;

/// Plot geometry, in SVG user units.
pub const PLOT_ORIGIN: (f64, f64) = (60.0, 30.0);
pub const PLOT_SIZE: f64 = 400.0;
pub const DIAGONAL_STROKE: f64 = 1.5;
const WIDTH: f64 = 490.0;
const HEIGHT: f64 = 490.0;

/// Horizontal position of a confidence value.
pub fn x_of(conf: f64) -> f64 {
    PLOT_ORIGIN.0 + conf * PLOT_SIZE
}

/// Vertical position of an accuracy value.
pub fn y_of(acc: f64) -> f64 {
    PLOT_ORIGIN.1 + (1.0 - acc) * PLOT_SIZE
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders per-bin accuracy bars, the shaded gap to each bin's mean
/// confidence, and the diagonal. Output is byte-deterministic.
pub fn render_reliability_svg(bins: &[ReliabilityBin], title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        PLOT_ORIGIN.0 + PLOT_SIZE / 2.0,
        escape(title)
    );

    // grid and ticks
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (x, y) = (x_of(v), y_of(v));
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="#e0e0e0"/>"##,
            y_of(0.0),
            y_of(1.0)
        );
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#e0e0e0"/>"##,
            x_of(0.0),
            x_of(1.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">{v:.1}</text>"#,
            y_of(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{v:.1}</text>"#,
            x_of(0.0) - 6.0,
            y + 4.0
        );
    }

    for (i, b) in bins.iter().enumerate().filter(|(_, b)| b.count > 0) {
        let x = x_of(b.lo);
        let w = x_of(b.hi) - x;
        let top = y_of(b.accuracy);
        let _ = writeln!(
            s,
            r##"<rect class="bar" data-bin="{i}" data-count="{}" data-avg-conf="{:.6}" x="{x:.3}" y="{top:.3}" width="{w:.3}" height="{:.3}" fill="#4c72b0" stroke="#1f3d73" stroke-width="0.5"/>"##,
            b.count,
            b.avg_conf,
            y_of(0.0) - top
        );
        let conf_y = y_of(b.avg_conf);
        let (gy, gh) = if conf_y < top {
            (conf_y, top - conf_y)
        } else {
            (top, conf_y - top)
        };
        if gh > 0.0 {
            let _ = writeln!(
                s,
                r##"<rect class="gap" data-bin="{i}" x="{x:.3}" y="{gy:.3}" width="{w:.3}" height="{gh:.3}" fill="#dd5555" fill-opacity="0.35"/>"##
            );
        }
    }

    let _ = writeln!(
        s,
        r##"<line class="diagonal" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#333333" stroke-width="{DIAGONAL_STROKE}" stroke-dasharray="6 4"/>"##,
        x_of(0.0),
        y_of(0.0),
        x_of(1.0),
        y_of(1.0)
    );
    let _ = writeln!(
        s,
        r##"<rect class="frame" x="{:.3}" y="{:.3}" width="{PLOT_SIZE:.3}" height="{PLOT_SIZE:.3}" fill="none" stroke="#000000"/>"##,
        PLOT_ORIGIN.0, PLOT_ORIGIN.1
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">Confidence</text>"#,
        PLOT_ORIGIN.0 + PLOT_SIZE / 2.0,
        y_of(0.0) + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.3}" text-anchor="middle" transform="rotate(-90 16 {:.3})">Accuracy</text>"#,
        PLOT_ORIGIN.1 + PLOT_SIZE / 2.0,
        PLOT_ORIGIN.1 + PLOT_SIZE / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    fn calibrated_bins(m: usize) -> Vec<ReliabilityBin> {
        (0..m)
            .map(|b| {
                let mid = (b as f64 + 0.5) / m as f64;
                ReliabilityBin {
                    lo: b as f64 / m as f64,
                    hi: (b + 1) as f64 / m as f64,
                    count: 10,
                    avg_conf: mid,
                    accuracy: mid,
                }
            })
            .collect()
    }

    #[test]
    fn calibrated_bars_touch_the_diagonal() {
        let svg = render_reliability_svg(&calibrated_bins(15), "perfect");
        let bars: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains("class=\"bar\""))
            .collect();
        assert_eq!(bars.len(), 15);
        for bar in bars {
            let conf = attr(bar, "data-avg-conf");
            let diag_y = y_of(0.0) - (x_of(conf) - x_of(0.0));
            assert!((attr(bar, "y") - diag_y).abs() <= DIAGONAL_STROKE);
        }
        assert!(!svg.contains("class=\"gap\""));
    }

    #[test]
    fn gaps_are_shaded_and_output_is_stable() {
        let mut bins = calibrated_bins(10);
        bins[8].accuracy = 0.5;
        bins[2].count = 0;
        let a = render_reliability_svg(&bins, "a < b & c");
        assert_eq!(a, render_reliability_svg(&bins, "a < b & c"));
        assert_eq!(a.matches("class=\"gap\"").count(), 1);
        assert_eq!(a.matches("class=\"bar\"").count(), 9);
        assert!(a.contains("a &lt; b &amp; c"));
    }
}
