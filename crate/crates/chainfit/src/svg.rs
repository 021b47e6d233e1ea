//! Minimal SVG plots: scatter, bar chart and histogram.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
}

fn ticks(out: &mut String, (xlo, xhi): (f64, f64), (ylo, yhi): (f64, f64)) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = MARGIN + f * (W - 2.0 * MARGIN);
        let y = H - MARGIN - f * (H - 2.0 * MARGIN);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{:.3}</text>"#,
            H - MARGIN + 14.0,
            xlo + f * (xhi - xlo)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{:.3}</text>"#,
            MARGIN - 4.0,
            y + 3.0,
            ylo + f * (yhi - ylo)
        );
    }
}

/// Alpha-blended scatter plot; `color` in `[0, 1]` maps blue → red per point.
pub fn scatter(points: &[(f64, f64)], color: Option<&[f64]>, title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel);
    let xr = range(points.iter().map(|p| p.0));
    let yr = range(points.iter().map(|p| p.1));
    ticks(&mut out, xr, yr);
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * MARGIN);
        let py = H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
        let fill = match color.and_then(|c| c.get(i)) {
            Some(&t) => {
                let t = t.clamp(0.0, 1.0);
                format!("rgb({},{},{})", (255.0 * t) as u8, 60, (255.0 * (1.0 - t)) as u8)
            }
            None => "steelblue".to_string(),
        };
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{fill}" fill-opacity="0.35"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with category labels.
pub fn bars(labels: &[String], values: &[f64], title: &str, ylabel: &str) -> String {
    let mut out = String::new();
    frame(&mut out, title, "", ylabel);
    let top = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let n = values.len().max(1) as f64;
    let slot = (W - 2.0 * MARGIN) / n;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = v.max(0.0) / top * (H - 2.0 * MARGIN);
        let x = MARGIN + i as f64 * slot + 0.15 * slot;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="steelblue"/>"#,
            H - MARGIN - h,
            0.7 * slot
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            x + 0.35 * slot,
            H - MARGIN + 14.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{v:.3}</text>"#,
            x + 0.35 * slot,
            H - MARGIN - h - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram from bin counts of width `bin_width` starting at 0.
pub fn histogram(counts: &[usize], bin_width: f64, title: &str, xlabel: &str) -> String {
    let labels: Vec<String> = (0..counts.len())
        .map(|i| format!("{:.1}", i as f64 * bin_width))
        .collect();
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut svg = bars(&labels, &values, title, "count");
    let label = format!(
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    svg.insert_str(svg.len() - "</svg>\n".len(), &label);
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let s = scatter(&[(0.0, 1.0), (1.0, 2.0)], Some(&[0.0, 1.0]), "a < b", "x", "y");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a &lt; b"));
        let h = histogram(&[3, 0, 1], 0.5, "errors", "Å");
        assert_eq!(h.matches("<rect").count(), 4);
        assert!(h.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let s = scatter(&[(1.0, 1.0), (1.0, 1.0)], None, "", "", "");
        assert!(!s.contains("NaN"));
        let b = bars(&[], &[], "", "");
        assert!(!b.contains("NaN"));
    }
}
