//! Static accuracy-curve chart.
//!
//! Layout: 760 x 480 canvas, plot area from (70, 30) to (560, 420). The x
//! axis is the fold-mean retrieved count on a log10 scale spanning whole
//! decades, ticked at 1, 2 and 5 times each power of ten; the y axis is
//! accuracy ticked every 0.1 (0.05 when the span is at most 0.3). Methods
//! whose curve is flat are drawn as dashed horizontal lines across the plot.
//! The legend sits to the right in input order. All coordinates are printed
//! with two decimals, so equal input gives byte-equal output.

use std::fmt::Write as _;

use super::report::MethodCurve;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 560.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 420.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_curves(curves: &[MethodCurve]) -> String {
    let varying: Vec<&MethodCurve> = curves.iter().filter(|c| !c.flat).collect();
    let x_source: Vec<&MethodCurve> = if varying.is_empty() { curves.iter().collect() } else { varying };
    let xs: Vec<f64> = x_source
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.mean_retrieved.max(1e-3)))
        .collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut dlo, mut dhi) = if lo.is_finite() {
        (lo.log10().floor(), hi.log10().ceil())
    } else {
        (0.0, 1.0)
    };
    if dhi <= dlo {
        dhi = dlo + 1.0;
    }
    if !dlo.is_finite() {
        dlo = 0.0;
    }
    let accs: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.accuracy)).collect();
    let amin = accs.iter().cloned().fold(1.0, f64::min);
    let amax = accs.iter().cloned().fold(0.0, f64::max);
    let ylo = ((amin * 10.0).floor() / 10.0).clamp(0.0, 0.9);
    let yhi = ((amax * 10.0).ceil() / 10.0).clamp(ylo + 0.1, 1.0);
    let ystep = if yhi - ylo <= 0.3 + 1e-9 { 0.05 } else { 0.1 };

    let px = |v: f64| LEFT + (v.max(1e-3).log10() - dlo) / (dhi - dlo) * (RIGHT - LEFT);
    let py = |a: f64| BOTTOM - (a - ylo) / (yhi - ylo) * (BOTTOM - TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let mut decade = dlo as i32;
    while decade as f64 <= dhi {
        for m in [1.0, 2.0, 5.0] {
            let v = m * 10f64.powi(decade);
            let lv = v.log10();
            if lv < dlo - 1e-9 || lv > dhi + 1e-9 {
                continue;
            }
            let x = px(v);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, BOTTOM + 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                BOTTOM + 18.0,
                if v >= 1.0 { format!("{v:.0}") } else { format!("{v}") }
            );
        }
        decade += 1;
    }
    let mut k = 0;
    loop {
        let a = ylo + k as f64 * ystep;
        if a > yhi + 1e-9 {
            break;
        }
        let y = py(a);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{a:.2}</text>"#, LEFT - 8.0, y + 4.0);
        k += 1;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">mean retrieved set size (log scale)</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">accuracy</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.flat || c.points.len() == 1 {
            let y = py(c.points[0].accuracy);
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="6 4"/>"#
            );
        } else {
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.mean_retrieved), py(p.accuracy)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &c.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    px(p.mean_retrieved),
                    py(p.accuracy)
                );
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let dash = if c.flat { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            RIGHT + 15.0,
            RIGHT + 45.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, RIGHT + 52.0, ly + 4.0, escape(&c.method));
    }
    s.push_str("</svg>\n");
    s
}
