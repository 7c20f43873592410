//! Minimal static SVG bar charts for active-set sizes.

use std::fmt::Write;

pub struct Series {
    pub name: String,
    /// `(mean, standard error)` per category.
    pub values: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 48.0;
const MARGIN_B: f64 = 40.0;
const MARGIN_T: f64 = 28.0;

/// Panels laid out two per row, grouped bars with error bars.
pub fn bar_chart(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let cols = 2usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let width = PANEL_W * cols as f64;
    let height = PANEL_H * rows as f64 + 60.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    for (i, panel) in panels.iter().enumerate() {
        let ox = PANEL_W * (i % cols) as f64;
        let oy = 30.0 + PANEL_H * (i / cols) as f64;
        draw_panel(&mut out, panel, ox, oy, x_label);
    }
    // legend from the first panel
    if let Some(p) = panels.first() {
        let y = height - 14.0;
        for (k, s) in p.series.iter().enumerate() {
            let x = 20.0 + 120.0 * k as f64;
            let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, COLORS[k % COLORS.len()]);
            let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 16.0, escape(&s.name));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64, x_label: &str) {
    let plot_w = PANEL_W - MARGIN_L - 16.0;
    let plot_h = PANEL_H - MARGIN_B - MARGIN_T;
    let x0 = ox + MARGIN_L;
    let y0 = oy + MARGIN_T + plot_h;
    let top = panel
        .series
        .iter()
        .flat_map(|s| s.values.iter().map(|(m, se)| m + se.max(0.0)))
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let y_max = nice_ceiling(top);
    let scale = |v: f64| plot_h * (v / y_max).clamp(0.0, 1.0);

    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, x0 + plot_w / 2.0, oy + 16.0, escape(&panel.title));
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, x0 + plot_w);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#, y0 - plot_h);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y0 - scale(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, fmt_tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + plot_w / 2.0, y0 + 32.0, escape(x_label));

    let n_cat = panel.categories.len().max(1);
    let n_ser = panel.series.len().max(1);
    let group_w = plot_w / n_cat as f64;
    let bar_w = group_w * 0.8 / n_ser as f64;
    for (c, cat) in panel.categories.iter().enumerate() {
        let gx = x0 + group_w * c as f64 + group_w * 0.1;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, gx + group_w * 0.4, y0 + 14.0, escape(cat));
        for (k, s) in panel.series.iter().enumerate() {
            let Some(&(mean, se)) = s.values.get(c) else { continue };
            if !mean.is_finite() {
                continue;
            }
            let h = scale(mean);
            let bx = gx + bar_w * k as f64;
            let _ = writeln!(out, r#"<rect x="{bx:.2}" y="{:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{}"/>"#, y0 - h, COLORS[k % COLORS.len()]);
            if se.is_finite() && se > 0.0 {
                let cx = bx + bar_w / 2.0;
                let (lo, hi) = (y0 - scale(mean - se), y0 - scale(mean + se));
                let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="black"/>"#);
            }
        }
    }
}

fn nice_ceiling(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&c| c >= v).unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let panel = Panel {
            title: "Set 1".into(),
            categories: vec!["0".into(), "6".into()],
            series: vec![
                Series { name: "PFGMM".into(), values: vec![(5.0, 0.1), (5.2, 0.2)] },
                Series { name: "PLS".into(), values: vec![(5.5, 0.3), (f64::NAN, 0.0)] },
            ],
        };
        let svg = bar_chart("sizes", "rho", &[panel]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 1 + 3 + 2);
        assert_eq!(nice_ceiling(5.3), 10.0);
        assert_eq!(nice_ceiling(1.7), 2.0);
    }
}
