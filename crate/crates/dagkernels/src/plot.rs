//! Self-contained SVG line charts.
//!
//! Multi-series charts with optional log axes, legends, and nothing else: no
//! external assets, stylesheets or fonts, so the files are valid standalone
//! XML. Output depends only on the input series.

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub y_scale: AxisScale,
    pub width: u32,
    pub height: u32,
}

impl Default for ChartSpec {
    fn default() -> Self {
        ChartSpec {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            x_scale: AxisScale::Linear,
            y_scale: AxisScale::Linear,
            width: 720,
            height: 480,
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn transform(v: f64, scale: AxisScale) -> f64 {
    match scale {
        AxisScale::Linear => v,
        AxisScale::Log => v.max(1e-300).log10(),
    }
}

/// Render the chart as an SVG document string.
pub fn line_chart(spec: &ChartSpec, series: &[Series]) -> String {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let margin_l = 64.0;
    let margin_r = 150.0;
    let margin_t = 40.0;
    let margin_b = 48.0;
    let plot_w = w - margin_l - margin_r;
    let plot_h = h - margin_t - margin_b;

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(transform(x, spec.x_scale));
            ys.push(transform(y, spec.y_scale));
        }
    }
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let sx = |x: f64| margin_l + (transform(x, spec.x_scale) - x_min) / (x_max - x_min) * plot_w;
    let sy =
        |y: f64| margin_t + (1.0 - (transform(y, spec.y_scale) - y_min) / (y_max - y_min)) * plot_h;

    let mut out = String::new();
    out.push_str(r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    out.push('\n');
    out.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width, spec.height, spec.width, spec.height
    ));
    out.push('\n');
    out.push_str(&format!(
        r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        spec.width, spec.height
    ));
    out.push('\n');
    // frame
    out.push_str(&format!(
        r#"<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black" stroke-width="1"/>"#
    ));
    out.push('\n');
    // five ticks per axis at transformed-linear positions
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let tx = x_min + f * (x_max - x_min);
        let px = margin_l + f * plot_w;
        let label = match spec.x_scale {
            AxisScale::Linear => format_tick(tx),
            AxisScale::Log => format!("1e{}", format_tick(tx)),
        };
        out.push_str(&format!(
            r#"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="black"/>"#,
            margin_t + plot_h,
            margin_t + plot_h + 5.0
        ));
        out.push_str(&format!(
            r#"<text x="{px}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{}</text>"#,
            margin_t + plot_h + 18.0,
            escape(&label)
        ));
        out.push('\n');
        let ty = y_min + f * (y_max - y_min);
        let py = margin_t + (1.0 - f) * plot_h;
        let label = match spec.y_scale {
            AxisScale::Linear => format_tick(ty),
            AxisScale::Log => format!("1e{}", format_tick(ty)),
        };
        out.push_str(&format!(
            r#"<line x1="{}" y1="{py}" x2="{margin_l}" y2="{py}" stroke="black"/>"#,
            margin_l - 5.0
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="end">{}</text>"#,
            margin_l - 8.0,
            py + 4.0,
            escape(&label)
        ));
        out.push('\n');
    }
    // labels and title
    out.push_str(&format!(
        r#"<text x="{}" y="{}" font-family="monospace" font-size="13" text-anchor="middle">{}</text>"#,
        margin_l + plot_w / 2.0,
        h - 10.0,
        escape(&spec.x_label)
    ));
    out.push('\n');
    out.push_str(&format!(
        r#"<text x="16" y="{}" font-family="monospace" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        margin_t + plot_h / 2.0,
        margin_t + plot_h / 2.0,
        escape(&spec.y_label)
    ));
    out.push('\n');
    out.push_str(&format!(
        r#"<text x="{}" y="24" font-family="monospace" font-size="15" text-anchor="middle">{}</text>"#,
        margin_l + plot_w / 2.0,
        escape(&spec.title)
    ));
    out.push('\n');
    // series
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.len() > 1 {
            out.push_str(&format!(
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            ));
            out.push('\n');
        }
        for &(x, y) in &s.points {
            out.push_str(&format!(
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            ));
        }
        out.push('\n');
        let ly = margin_t + 16.0 * i as f64 + 8.0;
        out.push_str(&format!(
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - margin_r + 8.0,
            w - margin_r + 32.0
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11">{}</text>"#,
            w - margin_r + 38.0,
            ly + 4.0,
            escape(&s.label)
        ));
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.1e}")
    }
}

/// Minimal well-formedness check used by tests: every open tag is closed in
/// order and the document has one root element.
pub fn check_well_formed(xml: &str) -> Result<(), String> {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let mut rest = xml;
    while let Some(start) = rest.find('<') {
        rest = &rest[start + 1..];
        let end = rest.find('>').ok_or("unterminated tag")?;
        let tag = &rest[..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().ok_or("close without open")?;
            if open != name.trim() {
                return Err(format!("mismatched </{name}> after <{open}>"));
            }
            if stack.is_empty() {
                roots += 1;
            }
        } else if tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
        } else {
            let name = tag.split_whitespace().next().ok_or("empty tag")?;
            stack.push(name.to_string());
        }
    }
    if !stack.is_empty() {
        return Err(format!("unclosed tags: {stack:?}"));
    }
    if roots != 1 {
        return Err(format!("{roots} root elements"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                label: "a".into(),
                points: vec![(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)],
            },
            Series {
                label: "b<&>".into(),
                points: vec![(1.0, 0.5), (10.0, 0.2), (100.0, 0.15)],
            },
        ]
    }

    #[test]
    fn produces_well_formed_xml() {
        let spec = ChartSpec {
            title: "demo & such".into(),
            x_label: "m".into(),
            y_label: "residual".into(),
            x_scale: AxisScale::Log,
            y_scale: AxisScale::Log,
            ..ChartSpec::default()
        };
        let svg = line_chart(&spec, &demo_series());
        check_well_formed(&svg).unwrap();
        assert!(svg.contains("polyline"));
        assert!(svg.contains("b&lt;&amp;&gt;"));
    }

    #[test]
    fn deterministic_output() {
        let spec = ChartSpec::default();
        assert_eq!(
            line_chart(&spec, &demo_series()),
            line_chart(&spec, &demo_series())
        );
    }

    #[test]
    fn checker_rejects_broken_xml() {
        assert!(check_well_formed("<a><b></a></b>").is_err());
        assert!(check_well_formed("<a>").is_err());
        assert!(check_well_formed("<a/><b/>").is_err());
        assert!(check_well_formed("<a><b/></a>").is_ok());
    }
}
