//! Minimal SVG phase portraits of the cylinder `[0, 1) × [y_min, y_max]`.

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Points joined in order of `x`.
    Curve,
    /// Isolated dots.
    Dots,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub label: String,
    pub color: String,
    pub style: Style,
    /// `(x, y)`; `x` is reduced mod 1 when drawn.
    pub points: Vec<(f64, f64)>,
}

impl Layer {
    pub fn new(label: &str, color: &str, style: Style, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color: color.into(),
            style,
            points,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 40.0;

fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Vertical extent covering every finite point, padded by 5%.
pub fn y_range(layers: &[Layer]) -> (f64, f64) {
    let ys = layers.iter().flat_map(|l| l.points.iter().map(|p| p.1)).filter(|y| y.is_finite());
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-3);
    (lo - pad, hi + pad)
}

/// Maps cylinder coordinates to pixels.
pub fn to_pixel((x, y): (f64, f64), (y_min, y_max): (f64, f64)) -> (f64, f64) {
    let px = PAD + frac(x) * (WIDTH - 2.0 * PAD);
    let py = HEIGHT - PAD - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * PAD);
    (px, py)
}

pub fn render(title: &str, y_label: &str, layers: &[Layer]) -> String {
    let range = y_range(layers);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">x mod 1</text>"#, WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (y, anchor) in [(range.0, HEIGHT - PAD), (range.1, PAD + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor}" font-size="10" text-anchor="end">{y:.3}</text>"#, PAD - 4.0);
    }
    for (i, layer) in layers.iter().enumerate() {
        let _ = writeln!(s, r#"<g id="layer-{i}" stroke="{0}" fill="{0}">"#, layer.color);
        let _ = writeln!(s, "<title>{}</title>", escape(&layer.label));
        let pts: Vec<(f64, f64)> = layer.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).copied().collect();
        match layer.style {
            Style::Curve => {
                let mut sorted: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (frac(x), y)).collect();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let path: Vec<String> = sorted
                    .iter()
                    .map(|&p| {
                        let (px, py) = to_pixel(p, range);
                        format!("{px:.2},{py:.2}")
                    })
                    .collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            }
            Style::Dots => {
                for &p in &pts {
                    let (px, py) = to_pixel(p, range);
                    let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.2" stroke="none"/>"#);
                }
            }
        }
        let _ = writeln!(s, "</g>");
        let ly = PAD + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="10" fill="{}">{}</text>"#,
            WIDTH - PAD - 4.0,
            layer.color,
            escape(&layer.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
