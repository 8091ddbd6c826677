//! Tiny dependency-free SVG scatter/line plots for the report modes.

use std::fmt::Write as _;

pub struct SvgPlot {
    width: f64,
    height: f64,
    margin: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    title: String,
    x_label: String,
    y_label: String,
    body: String,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

impl SvgPlot {
    pub fn new(
        title: &str,
        x_label: &str,
        y_label: &str,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> SvgPlot {
        let pad = |r: (f64, f64)| {
            let span = (r.1 - r.0).abs().max(1e-9);
            (r.0 - 0.05 * span, r.1 + 0.05 * span)
        };
        SvgPlot {
            width: 640.0,
            height: 440.0,
            margin: 60.0,
            x_range: pad(x_range),
            y_range: pad(y_range),
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            body: String::new(),
        }
    }

    fn sx(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.margin + (x - lo) / (hi - lo) * (self.width - 2.0 * self.margin)
    }

    fn sy(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.height - self.margin - (y - lo) / (hi - lo) * (self.height - 2.0 * self.margin)
    }

    pub fn scatter(&mut self, points: &[(f64, f64)], color: &str, radius: f64) {
        for &(x, y) in points {
            let _ = write!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{color}" fill-opacity="0.8"/>"#,
                self.sx(x),
                self.sy(y)
            );
        }
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, dashed: bool) {
        if points.len() < 2 {
            return;
        }
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = write!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
            path.join(" ")
        );
    }

    pub fn vline(&mut self, x: f64, color: &str) {
        let _ = write!(
            self.body,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}" stroke-dasharray="3 3"/>"#,
            self.sx(x),
            self.sy(self.y_range.0),
            self.sy(self.y_range.1)
        );
    }

    pub fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = self.margin + 14.0 * i as f64;
            let x = self.width - self.margin - 150.0;
            let _ = write!(
                self.body,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{label}</text>"#,
                y - 9.0,
                x + 14.0,
                y
            );
        }
    }

    fn ticks(range: (f64, f64)) -> Vec<f64> {
        let span = range.1 - range.0;
        let raw = span / 6.0;
        let mag = 10f64.powf(raw.abs().log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 7.0)
            .unwrap_or(mag * 10.0);
        let mut t = (range.0 / step).ceil() * step;
        let mut out = Vec::new();
        while t <= range.1 + 1e-12 {
            out.push(t);
            t += step;
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}"><rect width="{w}" height="{h}" fill="white"/>"#,
            w = self.width,
            h = self.height
        );
        // axes
        let (x0, y0) = (self.margin, self.height - self.margin);
        let (x1, y1) = (self.width - self.margin, self.margin);
        let _ = write!(
            s,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
        );
        for t in Self::ticks(self.x_range) {
            let x = self.sx(t);
            let _ = write!(
                s,
                r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" font-size="10" text-anchor="middle">{t:.3}</text>"#,
                y0 + 4.0,
                y0 + 16.0
            );
        }
        for t in Self::ticks(self.y_range) {
            let y = self.sy(t);
            let _ = write!(
                s,
                r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" font-size="10" text-anchor="end">{t:.3}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 3.0
            );
        }
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
            self.width / 2.0,
            self.title
        );
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            self.width / 2.0,
            self.height - 12.0,
            self.x_label
        );
        let _ = write!(
            s,
            r#"<text x="16" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            self.height / 2.0,
            self.height / 2.0,
            self.y_label
        );
        s.push_str(&self.body);
        s.push_str("</svg>");
        s
    }
}
