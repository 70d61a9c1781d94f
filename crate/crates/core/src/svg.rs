//! Minimal SVG output: scatter/line plots and heatmaps with a fixed layout.

use std::fmt::Write;

use crate::field::GridField;

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Points,
    Line,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn points(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, style: Style::Points }
    }

    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, style: Style::Line }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Plot { title: title.into(), xlabel: xlabel.into(), ylabel: ylabel.into(), ..Default::default() }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn semilog_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    fn tx(&self, x: f64) -> Option<f64> {
        let v = if self.log_x { (x > 0.0).then(|| x.log10())? } else { x };
        v.is_finite().then_some(v)
    }

    fn ty(&self, y: f64) -> Option<f64> {
        let v = if self.log_y { (y > 0.0).then(|| y.log10())? } else { y };
        v.is_finite().then_some(v)
    }

    pub fn render(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|&(x, y)| Some((self.tx(x)?, self.ty(y)?)))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (px, py) = (0.05 * (x1 - x0), 0.05 * (y1 - y0));
        let (x0, x1, y0, y1) = (x0 - px, x1 + px, y0 - py, y1 + py);
        let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

        let mut o = String::new();
        let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(
            o,
            r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - ML - MR,
            H - MT - MB
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let xl = if self.log_x { format!("1e{xv:.2}") } else { format!("{xv:.3}") };
            let yl = if self.log_y { format!("1e{yv:.2}") } else { format!("{yv:.3}") };
            let _ = writeln!(o, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, sx(xv), H - MB + 18.0);
            let _ = writeln!(o, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yl}</text>"#, ML - 6.0, sy(yv) + 4.0);
        }
        let _ = writeln!(o, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(&self.xlabel));
        let _ = writeln!(
            o,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.ylabel)
        );
        for (k, s) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let mapped: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some((sx(self.tx(x)?), sy(self.ty(y)?))))
                .collect();
            match s.style {
                Style::Points => {
                    for (x, y) in &mapped {
                        let _ = writeln!(o, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{c}"/>"#);
                    }
                }
                Style::Line => {
                    let d: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                    let _ = writeln!(o, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, d.join(" "));
                }
            }
            let ly = MT + 14.0 + 16.0 * k as f64;
            let _ = writeln!(o, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, ML + 10.0, ly - 9.0);
            let _ = writeln!(o, r#"<text x="{}" y="{ly}">{}</text>"#, ML + 26.0, esc(&s.name));
        }
        o.push_str("</svg>\n");
        o
    }
}

fn colormap(t: f64) -> (u8, u8, u8) {
    // Piecewise-linear dark blue → teal → yellow.
    const STOPS: [(f64, [f64; 3]); 3] = [(0.0, [40.0, 30.0, 110.0]), (0.5, [30.0, 150.0, 140.0]), (1.0, [250.0, 230.0, 40.0])];
    let t = t.clamp(0.0, 1.0);
    let k = if t <= 0.5 { 0 } else { 1 };
    let (a, ca) = STOPS[k];
    let (b, cb) = STOPS[k + 1];
    let s = (t - a) / (b - a);
    let m = |i: usize| (ca[i] + s * (cb[i] - ca[i])).round() as u8;
    (m(0), m(1), m(2))
}

/// Row-major heatmap of `values` (`nx × ny`, `NaN` drawn gray); row 0 is
/// drawn at the bottom.
pub fn heatmap(title: &str, values: &[f64], nx: usize, ny: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let side = (H - MT - MB).min(W - ML - MR);
    let cw = side / nx.max(ny).max(1) as f64;
    let mut o = String::new();
    let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12" shape-rendering="crispEdges">"#);
    let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
    for j in 0..ny {
        for i in 0..nx {
            let v = values[j * nx + i];
            let fill = if v.is_finite() {
                let (r, g, b) = colormap((v - lo) / span);
                format!("#{r:02x}{g:02x}{b:02x}")
            } else {
                "#d0d0d0".to_string()
            };
            let _ = writeln!(
                o,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                ML + i as f64 * cw,
                MT + (ny - 1 - j) as f64 * cw,
                cw + 0.05,
                cw + 0.05
            );
        }
    }
    let _ = writeln!(
        o,
        r#"<text x="{ML}" y="{}">min {lo:.4}  max {hi:.4}</text>"#,
        MT + side + 20.0
    );
    o.push_str("</svg>\n");
    o
}

/// Values on the `(x₁, y₁)` plane through the lattice center (the other
/// coordinates fixed at their middle index); undefined nodes become NaN.
pub fn field_slice(f: &GridField) -> (Vec<f64>, usize, usize) {
    let dom = f.domain();
    let e = dom.extent();
    let mid = e / 2;
    let mut v = Vec::with_capacity(e * e);
    for j in 0..e {
        for i in 0..e {
            let m = [i, j, mid, mid];
            let idx = dom.index_of(&m[..dom.real_dim()]);
            v.push(if f.is_defined(idx) { f.value(idx) } else { f64::NAN });
        }
    }
    (v, e, e)
}

pub fn field_heatmap(title: &str, f: &GridField) -> String {
    let (v, nx, ny) = field_slice(f);
    heatmap(title, &v, nx, ny)
}
