//! Self-contained SVG figures. Output depends only on the inputs, so two
//! runs produce identical files. Data-bearing elements carry `data-*`
//! attributes with the plotted values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use relmob_core::glm::{CurvePoint, FitResult};
use relmob_core::similarity::SpearmanMatrix;

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Diverging blue–white–red, anchored at 0 over [−1, 1].
pub fn diverging_color(rho: f64) -> String {
    let t = rho.clamp(-1.0, 1.0);
    let (end, a) = if t >= 0.0 { ((178.0, 24.0, 43.0), t) } else { ((33.0, 102.0, 172.0), -t) };
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

/// Whether a cell is drawn blank: ρ ∈ [−t, t), or undefined.
pub fn is_blank(rho: Option<f64>, threshold: f64) -> bool {
    match rho {
        None => true,
        Some(r) => (-threshold..threshold).contains(&r),
    }
}

/// Lower-triangle Spearman heatmap with two-decimal labels.
pub fn heatmap_svg(m: &SpearmanMatrix, threshold: f64) -> String {
    let k = m.labels.len();
    let (cell, left, top) = (44.0, 120.0, 20.0);
    let w = left + cell * k as f64 + 20.0;
    let h = top + cell * k as f64 + 110.0;
    let mut s = header(w, h);
    for i in 1..k {
        for j in 0..i {
            let (x, y) = (left + cell * j as f64, top + cell * (i - 1) as f64);
            let rho = m.rho[i][j];
            let data = format!(
                "data-row=\"{}\" data-col=\"{}\" data-rho=\"{}\"",
                escape(&m.labels[i]),
                escape(&m.labels[j]),
                rho.map(|r| format!("{r:.6}")).unwrap_or_default()
            );
            if is_blank(rho, threshold) {
                let _ = writeln!(
                    s,
                    "<rect class=\"cell blank\" {data} x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"white\" stroke=\"#dddddd\"/>"
                );
            } else {
                let r = rho.expect("non-blank");
                let _ = writeln!(
                    s,
                    "<rect class=\"cell\" {data} x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#dddddd\"/>",
                    diverging_color(r)
                );
                let ink = if r.abs() > 0.6 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    "<text class=\"label\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" fill=\"{ink}\" {FONT}>{r:.2}</text>",
                    x + cell / 2.0,
                    y + cell / 2.0 + 4.0
                );
            }
        }
    }
    for i in 1..k {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\" {FONT}>{}</text>",
            left - 6.0,
            top + cell * (i - 1) as f64 + cell / 2.0 + 4.0,
            escape(&m.labels[i])
        );
    }
    for j in 0..k - 1 {
        let (x, y) = (left + cell * j as f64 + cell / 2.0, top + cell * (k - 1) as f64 + 8.0);
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"end\" font-size=\"11\" transform=\"rotate(-60 {x:.1} {y:.1})\" {FONT}>{}</text>",
            escape(&m.labels[j])
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One model's coefficients for the coefficient plot.
pub struct CoefSeries<'a> {
    pub label: &'a str,
    pub fit: &'a FitResult,
}

/// Dot-and-interval plot of `b ± 1.96·SE`. Predictors with |b| above
/// `display_cap` in any series are omitted and listed in a footnote.
pub fn coefficient_svg(series: &[CoefSeries<'_>], display_cap: f64) -> String {
    let mut names: Vec<&str> = Vec::new();
    for s in series {
        for p in &s.fit.predictors {
            if !names.contains(&p.as_str()) {
                names.push(p);
            }
        }
    }
    let omitted: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| series.iter().any(|s| s.fit.beta(n).is_some_and(|b| b.abs() > display_cap)))
        .collect();
    names.retain(|n| !omitted.contains(n));

    let intervals: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| {
            names.iter().filter_map(move |n| {
                let (b, se) = (s.fit.beta(n)?, s.fit.se(n)?);
                Some((b - 1.96 * se, b + 1.96 * se))
            })
        })
        .filter(|(lo, hi)| lo.is_finite() && hi.is_finite())
        .collect();
    let lo = intervals.iter().map(|i| i.0).fold(0.0f64, f64::min);
    let hi = intervals.iter().map(|i| i.1).fold(0.0f64, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);

    let (left, plot_w, row_h, top) = (130.0, 420.0, 30.0, 30.0);
    let h = top + row_h * names.len().max(1) as f64 + 70.0;
    let mut s = header(left + plot_w + 150.0, h);
    let xpos = |v: f64| left + (v - lo) / (hi - lo) * plot_w;
    let bottom = top + row_h * names.len() as f64;
    let _ = writeln!(
        s,
        "<line class=\"zero\" x1=\"{0:.2}\" y1=\"{top}\" x2=\"{0:.2}\" y2=\"{bottom:.1}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>",
        xpos(0.0)
    );
    let colors = ["#1b6ca8", "#d1495b", "#2e8b57", "#8e44ad"];
    for (r, n) in names.iter().enumerate() {
        let yc = top + row_h * r as f64 + row_h / 2.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"12\" {FONT}>{}</text>",
            left - 8.0,
            yc + 4.0,
            escape(n)
        );
        for (k, ser) in series.iter().enumerate() {
            let (Some(b), Some(se)) = (ser.fit.beta(n), ser.fit.se(n)) else { continue };
            let y = yc + (k as f64 - (series.len() as f64 - 1.0) / 2.0) * 8.0;
            let (l, u) = (b - 1.96 * se, b + 1.96 * se);
            let color = colors[k % colors.len()];
            let _ = writeln!(
                s,
                "<line class=\"ci\" data-series=\"{}\" data-predictor=\"{}\" data-lo=\"{l:.6}\" data-hi=\"{u:.6}\" x1=\"{:.2}\" y1=\"{y:.1}\" x2=\"{:.2}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                escape(ser.label),
                escape(n),
                xpos(l),
                xpos(u)
            );
            let _ = writeln!(
                s,
                "<circle class=\"coef\" data-series=\"{}\" data-predictor=\"{}\" data-beta=\"{b:.6}\" cx=\"{:.2}\" cy=\"{y:.1}\" r=\"3.5\" fill=\"{color}\"/>",
                escape(ser.label),
                escape(n),
                xpos(b)
            );
        }
    }
    for (k, ser) in series.iter().enumerate() {
        let y = top + 14.0 * k as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"12\" fill=\"{}\" {FONT}>{}</text>",
            left + plot_w + 16.0,
            colors[k % colors.len()],
            escape(ser.label)
        );
    }
    for (v, anchor) in [(lo, "start"), (0.0, "middle"), (hi, "end")] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"{anchor}\" font-size=\"11\" {FONT}>{v:.3}</text>",
            xpos(v),
            bottom + 16.0
        );
    }
    if !omitted.is_empty() {
        let _ = writeln!(
            s,
            "<text class=\"omitted\" x=\"{left}\" y=\"{:.1}\" font-size=\"11\" {FONT}>Omitted (|b| &gt; {display_cap}): {}</text>",
            bottom + 40.0,
            escape(&omitted.join(", "))
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per moderator percentile: η(x) − η(0) along the grid.
pub fn marginal_svg(points: &[CurvePoint], focal: &str, moderator: &str) -> String {
    let mut curves: BTreeMap<u64, Vec<&CurvePoint>> = BTreeMap::new();
    for p in points {
        curves.entry(p.percentile.to_bits()).or_default().push(p);
    }
    let mut curves: Vec<(f64, Vec<&CurvePoint>)> =
        curves.into_values().map(|v| (v[0].percentile, v)).collect();
    curves.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs = points.iter().map(|p| p.focal_value);
    let ys = points.iter().map(|p| p.eta);
    let (xlo, xhi) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (ylo, yhi) = (ys.clone().fold(0.0f64, f64::min), ys.fold(0.0f64, f64::max));
    let yspan = (yhi - ylo).max(1e-9);
    let xspan = (xhi - xlo).max(1e-9);
    let (left, top, pw, ph) = (70.0, 30.0, 420.0, 300.0);
    let px = |x: f64| left + (x - xlo) / xspan * pw;
    let py = |y: f64| top + ph - (y - ylo) / yspan * ph;
    let mut s = header(left + pw + 160.0, top + ph + 60.0);
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888888\"/>"
    );
    let colors = ["#1b6ca8", "#7f7f7f", "#d1495b", "#2e8b57", "#8e44ad"];
    for (k, (pct, pts)) in curves.iter().enumerate() {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.focal_value), py(p.eta))).collect();
        let slope = pts
            .iter()
            .find(|p| p.focal_value != 0.0)
            .map(|p| p.eta / p.focal_value)
            .unwrap_or(0.0);
        let color = colors[k % colors.len()];
        let _ = writeln!(
            s,
            "<polyline class=\"curve\" data-percentile=\"{pct}\" data-slope=\"{slope:.6}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{color}\" {FONT}>{} p{pct}</text>",
            left + pw + 12.0,
            top + 16.0 * (k as f64 + 1.0),
            escape(moderator)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" {FONT}>{} (SD)</text>",
        left + pw / 2.0,
        top + ph + 36.0,
        escape(focal)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\" text-anchor=\"middle\" {FONT}>log-link of predicted connection strength</text>",
        top + ph / 2.0,
        top + ph / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, svg: &str) -> relmob_core::Result<()> {
    std::fs::write(path, svg).map_err(|e| relmob_core::Error::Data(format!("writing {}: {e}", path.display())))
}
