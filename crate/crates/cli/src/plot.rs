//! Minimal SVG line charts for CED curves.

use std::fmt::Write as _;

use facemap_core::eval::CedCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step-free polyline of every curve over shared axes, with a legend
/// listing mean error and AUC.
pub fn ced_svg(series: &[(String, CedCurve)]) -> String {
    let cutoff = series.first().map_or(1.0, |(_, c)| c.cutoff);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + pw * t / cutoff;
    let sy = |f: f64| TOP + ph * (1.0 - f);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let y = sy(f);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{f:.1}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
        let t = cutoff * f;
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.2}</text>"#,
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">NME (%)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Fraction of samples</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (k, (label, c)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c
            .thresholds
            .iter()
            .zip(&c.fractions)
            .map(|(&t, &f)| format!("{:.2},{:.2}", sx(t), sy(f)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + ph - 12.0 - 18.0 * (series.len() - 1 - k) as f64;
        let lx = LEFT + pw - 230.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{} (mean {:.3}, AUC {:.3})</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(label),
            c.mean,
            c.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `threshold,<label>...` rows; all curves must share one cutoff.
pub fn ced_csv(series: &[(String, CedCurve)]) -> String {
    let mut out = String::from("threshold");
    for (label, _) in series {
        out.push(',');
        out.push_str(&label.replace([',', '\n'], " "));
    }
    out.push('\n');
    if let Some((_, first)) = series.first() {
        for (i, t) in first.thresholds.iter().enumerate() {
            let _ = write!(out, "{t}");
            for (_, c) in series {
                let _ = write!(out, ",{}", c.fractions[i]);
            }
            out.push('\n');
        }
    }
    out
}
