//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Linear map from data coordinates to the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            x1 - x0,
            y1 - y0
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                r##"<line x1="{xp:.1}" y1="{y1}" x2="{xp:.1}" y2="{:.1}" stroke="#444"/><text x="{xp:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"##,
                y1 + 5.0,
                y1 + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{yp:.1}" x2="{x0}" y2="{yp:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                yp + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"##,
            (x0 + x1) / 2.0,
            H - 14.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r##"<text x="16" y="{:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {:.1})">{}</text>"##,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }
}

fn document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Maps `t ∈ [0, 1]` onto a dark-blue to yellow ramp.
pub fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 4] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Polyline through `points` with a dot at each vertex.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let frame = Frame {
        x: extent(points.iter().map(|p| p.0)),
        y: extent(points.iter().map(|p| p.1)),
    };
    let mut body = String::new();
    frame.axes(&mut body, title, xlabel, ylabel);
    let path: Vec<String> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    let _ = writeln!(
        body,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        path.join(" ")
    );
    if points.len() <= 400 {
        for p in &path {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(body, r##"<circle cx="{x}" cy="{y}" r="2" fill="#1f77b4"/>"##);
        }
    }
    document(&body)
}

/// Scatter of `(x, y, t)` with color by `t`.
pub fn scatter_colored(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, f64)]) -> String {
    let frame = Frame {
        x: extent(points.iter().map(|p| p.0)),
        y: extent(points.iter().map(|p| p.1)),
    };
    let (t0, t1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.2), h.max(p.2)));
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let mut body = String::new();
    frame.axes(&mut body, title, xlabel, ylabel);
    for &(x, y, t) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = writeln!(
            body,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.85"/>"##,
            frame.px(x),
            frame.py(y),
            ramp((t - t0) / span)
        );
    }
    document(&body)
}

/// Grid of `values` (row-major, `width` columns) with cell color by value.
pub fn heatmap(title: &str, width: usize, values: &[f64]) -> String {
    let width = width.max(1);
    let height = values.len().div_ceil(width).max(1);
    let cell = ((W - 2.0 * LEFT) / width as f64).min((H - TOP - BOTTOM) / height as f64);
    let x0 = (W - cell * width as f64) / 2.0;
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut body = String::new();
    let _ = writeln!(
        body,
        r##"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        W / 2.0,
        escape(title)
    );
    for (i, v) in values.iter().enumerate() {
        let (cx, cy) = (i % width, i / width);
        let t = if max > 0.0 { v / max } else { 0.0 };
        let _ = writeln!(
            body,
            r##"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}" stroke="#fff"><title>({cx}, {cy}): {v}</title></rect>"##,
            x0 + cx as f64 * cell,
            TOP + cy as f64 * cell,
            ramp(t)
        );
    }
    let _ = writeln!(
        body,
        r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">max {}</text>"##,
        W / 2.0,
        H - 18.0,
        tick_label(max)
    );
    document(&body)
}

/// Bars with symmetric error whiskers.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64, f64)]) -> String {
    let top = bars.iter().map(|b| b.1 + b.2.max(0.0)).fold(0.0, f64::max);
    let frame = Frame {
        x: (0.0, bars.len().max(1) as f64),
        y: (0.0, if top > 0.0 { top * 1.1 } else { 1.0 }),
    };
    let mut body = String::new();
    frame.axes(&mut body, title, "", ylabel);
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let (l, r) = (frame.px(i as f64 + 0.2), frame.px(i as f64 + 0.8));
        let (yt, yb) = (frame.py(mean.max(0.0)), frame.py(0.0));
        let c = (l + r) / 2.0;
        let _ = writeln!(
            body,
            r##"<rect x="{l:.2}" y="{yt:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
            r - l,
            yb - yt
        );
        let _ = writeln!(
            body,
            r##"<line x1="{c:.2}" y1="{:.2}" x2="{c:.2}" y2="{:.2}" stroke="#222"/>"##,
            frame.py((mean - std).max(0.0)),
            frame.py(mean + std)
        );
        let _ = writeln!(
            body,
            r##"<text x="{c:.2}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"##,
            H - BOTTOM + 32.0,
            escape(label)
        );
    }
    document(&body)
}
