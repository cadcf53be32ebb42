use std::fmt::Write as _;

pub(crate) const WIDTH: f64 = 800.0;
pub(crate) const HEIGHT: f64 = 500.0;

pub(crate) const REAL_COLOR: &str = "#1f77b4";
pub(crate) const SYNTHETIC_COLOR: &str = "#ff7f0e";
pub(crate) const POSITIVE_COLOR: &str = "#d62728";
pub(crate) const NEGATIVE_COLOR: &str = "#2c7fb8";
pub(crate) const NEUTRAL_COLOR: &str = "#7f7f7f";

/// Linear map from data values to pixels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    pub(crate) fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let magnitude = lo.abs().max(hi.abs());
        let (lo, hi) = if hi - lo > 1e-9 * magnitude.max(1.0) {
            (lo, hi)
        } else {
            let mid = (lo + hi) / 2.0;
            let pad = if magnitude < 1e-9 { 1.0 } else { magnitude * 0.1 };
            (mid - pad, mid + pad)
        };
        Scale { lo, hi, from, to }
    }

    /// Range widened by `frac` of its span on both sides.
    pub(crate) fn padded(lo: f64, hi: f64, frac: f64, from: f64, to: f64) -> Self {
        let pad = (hi - lo) * frac;
        Self::new(lo - pad, hi + pad, from, to)
    }

    pub(crate) fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    pub(crate) fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step + 1e-9).floor() as i64;
        (first..=last)
            .map(|k| if k == 0 { 0.0 } else { k as f64 * step })
            .collect()
    }
}

pub(crate) fn tick_label(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Append-only SVG document with a fixed 800x500 viewbox. Coordinates are
/// printed with two decimals so output is byte-stable.
pub(crate) struct Canvas {
    body: String,
}

impl Canvas {
    pub(crate) fn new() -> Self {
        Canvas { body: String::new() }
    }

    pub(crate) fn open_group(&mut self, class: &str, extra: &str) {
        let _ = writeln!(self.body, "<g class=\"{class}\"{extra}>");
    }

    pub(crate) fn close_group(&mut self) {
        self.body.push_str("</g>\n");
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rect(&mut self, class: &str, x0: f64, y0: f64, x1: f64, y1: f64, fill: &str, extra: &str) {
        let (x, w) = (x0.min(x1), (x1 - x0).abs());
        let (y, h) = (y0.min(y1), (y1 - y0).abs());
        let _ = writeln!(
            self.body,
            "<rect class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"{extra}/>"
        );
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            "<line class=\"{class}\" x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\"{extra}/>"
        );
    }

    pub(crate) fn polyline(&mut self, class: &str, points: &[(f64, f64)], stroke: &str, extra: &str) {
        let mut pts = String::with_capacity(points.len() * 14);
        for (k, (x, y)) in points.iter().enumerate() {
            if k > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{x:.2},{y:.2}");
        }
        let _ = writeln!(
            self.body,
            "<polyline class=\"{class}\" points=\"{pts}\" fill=\"none\" stroke=\"{stroke}\"{extra}/>"
        );
    }

    pub(crate) fn circle(&mut self, class: &str, x: f64, y: f64, r: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            "<circle class=\"{class}\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" fill=\"{fill}\"{extra}/>"
        );
    }

    pub(crate) fn text(&mut self, class: &str, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            "<text class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-size=\"{size:.0}\">{}</text>",
            escape(content)
        );
    }

    pub(crate) fn rotated_text(&mut self, class: &str, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            "<text class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"middle\" font-size=\"{size:.0}\" transform=\"rotate(-90 {x:.2} {y:.2})\">{}</text>",
            escape(content)
        );
    }

    /// Tick marks and labels along a horizontal axis at pixel row `y`.
    pub(crate) fn x_axis(&mut self, scale: &Scale, y: f64, x0: f64, x1: f64, label: &str) {
        self.line("axis", x0, y, x1, y, "#000000", "");
        for t in scale.ticks() {
            let x = scale.map(t);
            self.line("tick", x, y, x, y + 4.0, "#000000", "");
            self.text("tick-label", x, y + 16.0, "middle", 10.0, &tick_label(t));
        }
        self.text("axis-label", (x0 + x1) / 2.0, y + 34.0, "middle", 12.0, label);
    }

    /// Tick marks and labels along a vertical axis at pixel column `x`.
    pub(crate) fn y_axis(&mut self, scale: &Scale, x: f64, y0: f64, y1: f64, label: &str) {
        self.line("axis", x, y0, x, y1, "#000000", "");
        for t in scale.ticks() {
            let y = scale.map(t);
            self.line("tick", x - 4.0, y, x, y, "#000000", "");
            self.text("tick-label", x - 6.0, y + 3.5, "end", 10.0, &tick_label(t));
        }
        self.rotated_text("axis-label", x - 42.0, (y0 + y1) / 2.0, 12.0, label);
    }

    pub(crate) fn finish(self, title: &str) -> String {
        let mut out = String::with_capacity(self.body.len() + 400);
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" font-family=\"sans-serif\">"
        );
        let _ = writeln!(out, "<title>{}</title>", escape(title));
        let _ = writeln!(out, "<rect class=\"background\" x=\"0\" y=\"0\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"#ffffff\"/>");
        let _ = writeln!(out, "<text class=\"title\" x=\"{:.2}\" y=\"22.00\" text-anchor=\"middle\" font-size=\"15\">{}</text>", WIDTH / 2.0, escape(title));
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_numbers_inside_the_range() {
        let s = Scale::new(0.0, 1.0, 0.0, 100.0);
        let labels: Vec<String> = s.ticks().into_iter().map(tick_label).collect();
        assert_eq!(labels, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
        let s = Scale::new(17.0, 80.0, 0.0, 100.0);
        assert_eq!(s.ticks(), vec![20.0, 40.0, 60.0, 80.0]);
    }

    #[test]
    fn degenerate_range_is_widened() {
        let s = Scale::new(0.5, 0.5, 0.0, 100.0);
        assert!(s.map(0.5) > 0.0 && s.map(0.5) < 100.0);
        let s = Scale::new(0.5 - 1e-17, 0.5 + 1e-17, 0.0, 100.0);
        assert!((1..=12).contains(&s.ticks().len()));
        assert_eq!(Scale::new(0.0, 0.0, 0.0, 1.0).ticks(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn text_is_escaped() {
        assert_eq!(escape("a < b & \"c\""), "a &lt; b &amp; &quot;c&quot;");
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(40.0), "40");
    }
}
