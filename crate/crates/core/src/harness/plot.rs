//! Evaluation reward curves as a standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{MetricsRow, Phase};
use super::HarnessError;

/// One algorithm's curve: cross-seed mean eval reward against training
/// episodes elapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Seeds left out because they diverged.
    pub excluded_seeds: Vec<u64>,
}

/// Builds a curve from one metrics file's rows. Seeds with a failed row are
/// dropped; the surviving seeds must share their block structure.
pub fn curve_from_rows(label: &str, rows: &[MetricsRow]) -> Result<Curve, HarnessError> {
    let mismatch = |reason: String| HarnessError::PlotMismatch { label: label.to_string(), reason };
    let mut per_seed: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        per_seed.entry(r.seed).or_default().push(r);
    }
    let excluded_seeds: Vec<u64> =
        per_seed.iter().filter(|(_, rs)| rs.iter().any(|r| r.phase == Phase::Failed)).map(|(&s, _)| s).collect();

    // per seed: x (train episodes so far) and reward at each eval row
    let mut series: Vec<(u64, Vec<(f64, f64)>)> = Vec::new();
    for (&seed, rs) in &per_seed {
        if excluded_seeds.contains(&seed) {
            continue;
        }
        let mut sorted = rs.clone();
        sorted.sort_by_key(|r| (r.block, r.phase));
        let mut trained = 0usize;
        let mut points = Vec::new();
        for r in sorted {
            match r.phase {
                Phase::Train => trained += r.episodes,
                Phase::Eval => points.push((trained as f64, r.mean_extrinsic_reward)),
                Phase::Failed => unreachable!(),
            }
        }
        series.push((seed, points));
    }
    let Some((_, first)) = series.first() else {
        return Ok(Curve { label: label.to_string(), points: Vec::new(), excluded_seeds });
    };
    let xs: Vec<f64> = first.iter().map(|p| p.0).collect();
    for (seed, points) in &series {
        if points.iter().map(|p| p.0).ne(xs.iter().copied()) {
            return Err(mismatch(format!("seed {seed} has a different block structure")));
        }
    }
    let n = series.len() as f64;
    let points = xs
        .iter()
        .enumerate()
        .map(|(k, &x)| (x, series.iter().map(|(_, p)| p[k].1).sum::<f64>() / n))
        .collect();
    Ok(Curve { label: label.to_string(), points, excluded_seeds })
}

/// Curves plotted together must be sampled at the same training lengths.
pub fn check_aligned(curves: &[Curve]) -> Result<(), HarnessError> {
    let Some(first) = curves.iter().find(|c| !c.points.is_empty()) else {
        return Ok(());
    };
    for c in curves.iter().filter(|c| !c.points.is_empty()) {
        if c.points.iter().map(|p| p.0).ne(first.points.iter().map(|p| p.0)) {
            return Err(HarnessError::PlotMismatch {
                label: c.label.clone(),
                reason: format!("block structure differs from {}", first.label),
            });
        }
    }
    Ok(())
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders curves on a fixed `[0, 1]` reward axis.
pub fn render_svg(title: &str, curves: &[Curve]) -> String {
    let x_max = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).fold(0.0, f64::max).max(1.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + x / x_max * plot_w;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title)).unwrap();
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        writeln!(s, r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/>"##, sy(y), LEFT + plot_w).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.1}</text>"#, LEFT - 6.0, sy(y) + 4.0).unwrap();
    }
    for k in 0..=5 {
        let x = x_max * k as f64 / 5.0;
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, sx(x), TOP + plot_h + 18.0, x.round()).unwrap();
    }
    writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">training episodes</text>"#, LEFT + plot_w / 2.0, HEIGHT - 15.0).unwrap();
    writeln!(s, r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">mean eval reward</text>"#, TOP + plot_h / 2.0).unwrap();

    for (i, c) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if !pts.is_empty() {
            writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0).unwrap();
        let mut label = escape(&c.label);
        if !c.excluded_seeds.is_empty() {
            let seeds: Vec<String> = c.excluded_seeds.iter().map(u64::to_string).collect();
            label.push_str(&format!(" (diverged: {})", seeds.join(",")));
        }
        writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, lx + 26.0, ly + 4.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
