//! Deterministic SVG figures for audit report sections.
//!
//! Every figure marks its data-bearing elements with a `class` attribute
//! (`bar`, `box`, `ice`, `pdp`, `flag`, `segment`, ...) and, where a number
//! is drawn, a `data-value` attribute carrying the exact value, so the
//! figures can be checked as element lists.

use super::canvas::{
    Canvas, Scale, HEIGHT, NEGATIVE_COLOR, NEUTRAL_COLOR, POSITIVE_COLOR, REAL_COLOR, SYNTHETIC_COLOR, WIDTH,
};
use crate::detector::OutputScale;
use crate::effects::{class_effects, EffectResult, GridKind, Marginals, RegionKind};
use crate::error::{Error, Result};
use crate::importance::{interaction_terms, ImportanceMethod, ImportanceReport, PfiLoss};
use crate::math::{quantile_sorted, sorted_copy};
use crate::shapley::{Engine, InteractionMatrix, ShapleyVector, ValueMode};

const LEFT: f64 = 80.0;
const RIGHT: f64 = WIDTH - 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = HEIGHT - 56.0;

fn method_title(r: &ImportanceReport) -> String {
    match (r.method, r.loss) {
        (ImportanceMethod::Pfi, Some(PfiLoss::OneMinusAccuracy)) => "PFI (1 - accuracy)".into(),
        (ImportanceMethod::Pfi, _) => "PFI (log-loss)".into(),
        (ImportanceMethod::MeanAbsShap, _) => "mean |SHAP|".into(),
        (ImportanceMethod::Interaction, _) => "mean |interaction|".into(),
    }
}

struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    lo: f64,
    hi: f64,
    outliers: Vec<f64>,
}

/// Tukey box: whiskers reach the most extreme values within 1.5 IQR.
fn box_stats(values: &[f64]) -> BoxStats {
    let s = sorted_copy(values);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let fence = 1.5 * (q3 - q1);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= q1 - fence && *v <= q3 + fence).collect();
    BoxStats {
        q1,
        median: quantile_sorted(&s, 0.5),
        q3,
        lo: inside.first().copied().unwrap_or(q1),
        hi: inside.last().copied().unwrap_or(q3),
        outliers: s.into_iter().filter(|v| *v < q1 - fence || *v > q3 + fence).collect(),
    }
}

/// Horizontal importance chart with one panel per report, features sorted by
/// decreasing mean. Entries holding two or more values also get a box with
/// whiskers over those values. Degree-2 entries are labelled `a × b`.
pub fn render_importance(panels: &[&ImportanceReport]) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::Empty("no importance section to render".into()));
    }
    if let Some(r) = panels.iter().find(|r| r.entries.is_empty()) {
        return Err(Error::Empty(format!("{} section has no entries", method_title(r))));
    }
    let mut c = Canvas::new();
    let n = panels.len() as f64;
    let gap = 24.0;
    let label_w = 110.0;
    let width = (WIDTH - 16.0 - gap * (n - 1.0)) / n;
    for (k, report) in panels.iter().enumerate() {
        let x_left = 8.0 + k as f64 * (width + gap) + label_w;
        let x_right = 8.0 + k as f64 * (width + gap) + width - 8.0;
        let ranked = report.ranked();
        let mut lo: f64 = 0.0;
        let mut hi: f64 = 0.0;
        for e in &ranked {
            lo = lo.min(e.mean);
            hi = hi.max(e.mean);
            for v in &e.values {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        let xs = Scale::padded(lo, hi, 0.04, x_left, x_right);
        let row_h = (BOTTOM - TOP) / ranked.len() as f64;
        c.open_group("panel", &format!(" data-method=\"{}\"", method_title(report)));
        c.text("panel-title", (x_left + x_right) / 2.0, TOP - 6.0, "middle", 13.0, &method_title(report));
        for (i, e) in ranked.iter().enumerate() {
            let y0 = TOP + i as f64 * row_h;
            let yc = y0 + row_h / 2.0;
            let label = e.features.join(" × ");
            c.open_group("entry", &format!(" data-feature=\"{}\"", super::canvas::escape(&label)));
            c.text("feature-label", x_left - 6.0, yc + 4.0, "end", 11.0, &label);
            c.rect(
                "bar",
                xs.map(0.0),
                y0 + row_h * 0.2,
                xs.map(e.mean),
                y0 + row_h * 0.8,
                "#9ecae1",
                &format!(" data-value=\"{}\"", e.mean),
            );
            if e.values.len() >= 2 {
                let b = box_stats(&e.values);
                let (ya, yb) = (y0 + row_h * 0.3, y0 + row_h * 0.7);
                c.line("whisker", xs.map(b.lo), yc, xs.map(b.q1), yc, "#000000", "");
                c.line("whisker", xs.map(b.q3), yc, xs.map(b.hi), yc, "#000000", "");
                c.line("whisker-cap", xs.map(b.lo), ya, xs.map(b.lo), yb, "#000000", "");
                c.line("whisker-cap", xs.map(b.hi), ya, xs.map(b.hi), yb, "#000000", "");
                c.rect("box", xs.map(b.q1), ya, xs.map(b.q3), yb, "none", " stroke=\"#000000\"");
                c.line("median", xs.map(b.median), ya, xs.map(b.median), yb, "#000000", " stroke-width=\"2\"");
                for o in b.outliers {
                    c.circle("outlier", xs.map(o), yc, 2.0, "none", " stroke=\"#000000\"");
                }
            }
            c.close_group();
        }
        c.line("zero", xs.map(0.0), TOP, xs.map(0.0), BOTTOM, NEUTRAL_COLOR, "");
        c.x_axis(&xs, BOTTOM, x_left, x_right, "importance");
        c.close_group();
    }
    let title = panels.iter().map(|r| method_title(r)).collect::<Vec<_>>().join(" and ");
    Ok(c.finish(&format!("Feature importance: {title}")))
}

fn label_color(label: u8) -> &'static str {
    if label == 1 {
        REAL_COLOR
    } else {
        SYNTHETIC_COLOR
    }
}

fn shade_band(c: &mut Canvas, ys: &Scale, delta: f64, x0: f64, x1: f64) {
    c.rect(
        "flag-band",
        x0,
        ys.map(0.5 - delta),
        x1,
        ys.map(0.5 + delta),
        "#eeeeee",
        &format!(" data-delta=\"{delta}\""),
    );
    c.line("threshold", x0, ys.map(0.5), x1, ys.map(0.5), NEUTRAL_COLOR, " stroke-dasharray=\"4 3\"");
}

fn region_extra(kind: RegionKind, from: f64, to: f64) -> String {
    let k = match kind {
        RegionKind::UnrealisticSynthetic => "unrealistic_synthetic",
        RegionKind::Underrepresented => "underrepresented",
    };
    format!(" fill-opacity=\"0.18\" data-kind=\"{k}\" data-from=\"{from}\" data-to=\"{to}\"")
}

/// ICE curves with their partial dependence. Numeric features get real and
/// synthetic histograms under the x-axis; categorical features get one box
/// group per class with a PDP marker and class-frequency bars.
pub fn render_effects(effect: &EffectResult) -> Result<String> {
    let pdp = effect
        .pdp
        .as_ref()
        .ok_or_else(|| Error::invalid("effect has no partial dependence to render"))?;
    if effect.ice.is_empty() || effect.grid.points.is_empty() {
        return Err(Error::Empty("effect has no ICE curves".into()));
    }
    if effect.grid.kind == GridKind::Categories {
        render_categorical_effect(effect)
    } else {
        render_numeric_effect(effect, pdp)
    }
}

fn render_numeric_effect(effect: &EffectResult, pdp: &[f64]) -> Result<String> {
    let grid = &effect.grid;
    let plot_bottom = BOTTOM - 80.0;
    let strip = (BOTTOM - plot_bottom - 16.0) / 2.0;
    let hist = match &effect.marginals {
        Some(Marginals::Numeric(h)) => Some(h),
        _ => None,
    };
    let mut lo = grid.points[0];
    let mut hi = grid.points[grid.points.len() - 1];
    if let Some(h) = hist {
        if let (Some(a), Some(b)) = (h.edges.first(), h.edges.last()) {
            lo = lo.min(*a);
            hi = hi.max(*b);
        }
    }
    let xs = Scale::padded(lo, hi, 0.02, LEFT, RIGHT);
    let ys = Scale::new(0.0, 1.0, plot_bottom, TOP);
    let mut c = Canvas::new();
    shade_band(&mut c, &ys, effect.delta, LEFT, RIGHT);

    let half_step = if grid.points.len() > 1 {
        (xs.map(grid.points[1]) - xs.map(grid.points[0])) / 2.0
    } else {
        6.0
    };
    for f in &effect.flags {
        let color = match f.kind {
            RegionKind::UnrealisticSynthetic => SYNTHETIC_COLOR,
            RegionKind::Underrepresented => REAL_COLOR,
        };
        c.rect(
            "flag",
            xs.map(f.from) - half_step,
            TOP,
            xs.map(f.to) + half_step,
            plot_bottom,
            color,
            &region_extra(f.kind, f.from, f.to),
        );
    }

    c.open_group("ice-curves", "");
    for &k in &effect.plot_curves {
        let curve = &effect.ice[k];
        let pts: Vec<(f64, f64)> = grid.points.iter().zip(&curve.values).map(|(x, y)| (xs.map(*x), ys.map(*y))).collect();
        c.polyline(
            "ice",
            &pts,
            label_color(curve.label),
            &format!(" stroke-opacity=\"0.25\" stroke-width=\"0.8\" data-row=\"{}\" data-label=\"{}\"", curve.row, curve.label),
        );
    }
    c.close_group();
    let pts: Vec<(f64, f64)> = grid.points.iter().zip(pdp).map(|(x, y)| (xs.map(*x), ys.map(*y))).collect();
    c.polyline("pdp", &pts, "#000000", " stroke-width=\"2.5\"");
    for (x, y) in grid.points.iter().zip(pdp) {
        c.circle("pdp-point", xs.map(*x), ys.map(*y), 2.5, "#000000", &format!(" data-x=\"{x}\" data-value=\"{y}\""));
    }

    if let Some(h) = hist {
        let top_real = plot_bottom + 8.0;
        let top_syn = top_real + strip + 4.0;
        let max_d = h
            .real_density
            .iter()
            .chain(&h.synthetic_density)
            .copied()
            .fold(0.0, f64::max);
        if max_d > 0.0 {
            for (b, w) in h.edges.windows(2).enumerate() {
                let (x0, x1) = (xs.map(w[0]), xs.map(w[1]));
                let hr = strip * h.real_density[b] / max_d;
                let hs = strip * h.synthetic_density[b] / max_d;
                c.rect("hist-real", x0, top_real + strip - hr, x1, top_real + strip, REAL_COLOR, " fill-opacity=\"0.6\"");
                c.rect("hist-synthetic", x0, top_syn, x1, top_syn + hs, SYNTHETIC_COLOR, " fill-opacity=\"0.6\"");
            }
        }
        c.text("strip-label", LEFT - 6.0, top_real + strip - 2.0, "end", 9.0, "real");
        c.text("strip-label", LEFT - 6.0, top_syn + 10.0, "end", 9.0, "synthetic");
    }
    c.y_axis(&ys, LEFT, TOP, plot_bottom, OutputScale::Probability.axis_label());
    c.x_axis(&xs, BOTTOM, LEFT, RIGHT, &grid.feature);
    Ok(c.finish(&format!("ICE and partial dependence: {}", grid.feature)))
}

fn render_categorical_effect(effect: &EffectResult) -> Result<String> {
    let classes = class_effects(effect)?;
    let k = classes.len();
    let plot_bottom = BOTTOM - 90.0;
    let freq_top = plot_bottom + 14.0;
    let freq_bottom = BOTTOM - 4.0;
    let ys = Scale::new(0.0, 1.0, plot_bottom, TOP);
    let band = (RIGHT - LEFT) / k as f64;
    let mut c = Canvas::new();
    shade_band(&mut c, &ys, effect.delta, LEFT, RIGHT);
    for f in &effect.flags {
        c.rect(
            "flag",
            LEFT + f.first as f64 * band,
            TOP,
            LEFT + (f.last + 1) as f64 * band,
            plot_bottom,
            match f.kind {
                RegionKind::UnrealisticSynthetic => SYNTHETIC_COLOR,
                RegionKind::Underrepresented => REAL_COLOR,
            },
            &region_extra(f.kind, f.from, f.to),
        );
    }
    let max_share = classes
        .iter()
        .flat_map(|e| [e.real_share, e.synthetic_share])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let fs = Scale::new(0.0, max_share, freq_bottom, freq_top);
    for (g, cls) in classes.iter().enumerate() {
        let x0 = LEFT + g as f64 * band;
        let xc = x0 + band / 2.0;
        let half = band * 0.28;
        let s = &cls.ice_summary;
        c.open_group("class-group", &format!(" data-category=\"{}\"", super::canvas::escape(&cls.category)));
        c.line("whisker", xc, ys.map(s.min), xc, ys.map(s.q1), "#000000", "");
        c.line("whisker", xc, ys.map(s.q3), xc, ys.map(s.max), "#000000", "");
        c.rect("class-box", xc - half, ys.map(s.q1), xc + half, ys.map(s.q3), "#dddddd", " stroke=\"#000000\"");
        c.line("median", xc - half, ys.map(s.median), xc + half, ys.map(s.median), "#000000", "");
        c.circle("pdp-point", xc, ys.map(cls.pdp), 3.5, "#000000", &format!(" data-value=\"{}\"", cls.pdp));
        let bw = band * 0.18;
        c.rect("freq-real", xc - bw - 1.0, fs.map(cls.real_share), xc - 1.0, fs.map(0.0), REAL_COLOR, &format!(" data-value=\"{}\"", cls.real_share));
        c.rect("freq-synthetic", xc + 1.0, fs.map(cls.synthetic_share), xc + bw + 1.0, fs.map(0.0), SYNTHETIC_COLOR, &format!(" data-value=\"{}\"", cls.synthetic_share));
        c.text("category-label", xc, BOTTOM + 14.0, "middle", 9.0, &cls.category);
        c.close_group();
    }
    c.y_axis(&ys, LEFT, TOP, plot_bottom, OutputScale::Probability.axis_label());
    c.line("axis", LEFT, freq_bottom, RIGHT, freq_bottom, "#000000", "");
    c.text("strip-label", LEFT - 6.0, freq_top + 10.0, "end", 9.0, "share");
    c.text("axis-label", (LEFT + RIGHT) / 2.0, BOTTOM + 32.0, "middle", 12.0, &effect.grid.feature);
    Ok(c.finish(&format!("Class effects: {}", effect.grid.feature)))
}

fn vector_title(v: &ShapleyVector) -> String {
    let engine = match v.engine {
        Engine::Exact => "exact",
        Engine::Kernel => "KernelSHAP",
        Engine::Tree => "TreeSHAP",
    };
    match v.mode {
        Some(ValueMode::Marginal) => format!("{engine}, marginal"),
        Some(ValueMode::Conditional) => format!("{engine}, conditional"),
        None => engine.to_string(),
    }
}

fn common_scale(scales: impl Iterator<Item = OutputScale>) -> Result<OutputScale> {
    let mut it = scales;
    let first = it.next().ok_or_else(|| Error::Empty("nothing to render".into()))?;
    if it.any(|s| s != first) {
        return Err(Error::invalid("attributions on different output scales cannot share a figure"));
    }
    Ok(first)
}

/// One force bar per attribution vector. Positive contributions stack
/// rightward from the base value, negative ones then walk back, so each bar
/// ends at `base + sum(values)`. All vectors must share one output scale.
pub fn render_force(vectors: &[ShapleyVector]) -> Result<String> {
    let scale = common_scale(vectors.iter().map(|v| v.scale))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut layouts = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut order: Vec<usize> = (0..v.values.len()).filter(|&j| v.values[j] != 0.0).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (v.values[a], v.values[b]);
            (y > 0.0).cmp(&(x > 0.0)).then(y.abs().total_cmp(&x.abs())).then(a.cmp(&b))
        });
        let mut at = v.base_value;
        let mut segs = Vec::with_capacity(order.len());
        lo = lo.min(at).min(v.prediction);
        hi = hi.max(at).max(v.prediction);
        for j in order {
            let next = at + v.values[j];
            segs.push((j, at, next));
            lo = lo.min(next);
            hi = hi.max(next);
            at = next;
        }
        layouts.push(segs);
    }
    let xs = Scale::padded(lo, hi, 0.06, LEFT, RIGHT);
    let row_h = (BOTTOM - TOP) / vectors.len() as f64;
    let mut c = Canvas::new();
    for (r, (v, segs)) in vectors.iter().zip(&layouts).enumerate() {
        let y0 = TOP + r as f64 * row_h;
        let (ya, yb) = (y0 + row_h * 0.35, y0 + row_h * 0.65);
        c.open_group("force", &format!(" data-base=\"{}\" data-prediction=\"{}\"", v.base_value, v.prediction));
        c.text("row-title", LEFT, y0 + 16.0, "start", 12.0, &vector_title(v));
        for &(j, a, b) in segs {
            let value = v.values[j];
            let color = if value > 0.0 { POSITIVE_COLOR } else { NEGATIVE_COLOR };
            c.rect(
                "segment",
                xs.map(a),
                ya,
                xs.map(b),
                yb,
                color,
                &format!(
                    " stroke=\"#ffffff\" data-feature=\"{}\" data-value=\"{value}\"",
                    super::canvas::escape(&v.features[j])
                ),
            );
            if (xs.map(b) - xs.map(a)).abs() > 40.0 {
                c.text("segment-label", (xs.map(a) + xs.map(b)) / 2.0, yb + 14.0, "middle", 9.0, &v.features[j]);
            }
        }
        c.line("base", xs.map(v.base_value), y0 + row_h * 0.2, xs.map(v.base_value), y0 + row_h * 0.8, "#000000", " stroke-dasharray=\"3 2\"");
        c.text("marker-label", xs.map(v.base_value), y0 + row_h * 0.2 - 3.0, "middle", 9.0, &format!("base {:.3}", v.base_value));
        c.line("prediction", xs.map(v.prediction), y0 + row_h * 0.2, xs.map(v.prediction), y0 + row_h * 0.8, "#000000", " stroke-width=\"2\"");
        c.text("marker-label", xs.map(v.prediction), y0 + row_h * 0.8 + 24.0, "middle", 9.0, &format!("f(x) {:.3}", v.prediction));
        c.close_group();
    }
    c.x_axis(&xs, BOTTOM, LEFT, RIGHT, scale.axis_label());
    Ok(c.finish("Force plot"))
}

/// Source of terms for a waterfall: per-feature values, or main effects plus
/// pair terms from an interaction matrix.
#[derive(Debug, Clone, Copy)]
pub enum WaterfallSource<'a> {
    Vector(&'a ShapleyVector),
    Interactions(&'a InteractionMatrix),
}

impl WaterfallSource<'_> {
    fn scale(&self) -> OutputScale {
        match self {
            WaterfallSource::Vector(v) => v.scale,
            WaterfallSource::Interactions(m) => m.scale,
        }
    }

    fn ends(&self) -> (f64, f64) {
        match self {
            WaterfallSource::Vector(v) => (v.base_value, v.prediction),
            WaterfallSource::Interactions(m) => (m.base_value, m.prediction),
        }
    }

    fn terms(&self) -> Vec<(String, f64)> {
        match self {
            WaterfallSource::Vector(v) => v.features.iter().cloned().zip(v.values.iter().copied()).collect(),
            WaterfallSource::Interactions(m) => interaction_terms(m)
                .into_iter()
                .map(|(idx, value)| {
                    let name = idx.iter().map(|&i| m.features[i].as_str()).collect::<Vec<_>>().join(" × ");
                    (name, value)
                })
                .collect(),
        }
    }
}

/// Waterfall of the `top_k` largest terms by magnitude. With
/// `rest_aggregated`, the remaining terms become one `rest` bar whose value
/// is `prediction - base - sum(top terms)`, so the bars always add up to the
/// explained difference.
pub fn render_waterfall(source: WaterfallSource<'_>, top_k: usize, rest_aggregated: bool) -> Result<String> {
    if top_k == 0 {
        return Err(Error::invalid("waterfall needs top_k >= 1"));
    }
    let scale = source.scale();
    let (base, prediction) = source.ends();
    let mut terms = source.terms();
    if terms.is_empty() {
        return Err(Error::Empty("no terms to render".into()));
    }
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| terms[b].1.abs().total_cmp(&terms[a].1.abs()).then(a.cmp(&b)));
    let omitted = order.len().saturating_sub(top_k);
    let mut bars: Vec<(String, f64, &str)> = order
        .iter()
        .take(top_k)
        .map(|&i| (std::mem::take(&mut terms[i].0), terms[i].1, "segment"))
        .collect();
    if rest_aggregated && omitted > 0 {
        let shown: f64 = bars.iter().map(|b| b.1).sum();
        bars.push((format!("rest ({omitted} terms)"), (prediction - base) - shown, "segment rest"));
    }
    let mut lo = base.min(prediction);
    let mut hi = base.max(prediction);
    let mut at = base;
    for b in &bars {
        at += b.1;
        lo = lo.min(at);
        hi = hi.max(at);
    }
    let label_w = 150.0;
    let xs = Scale::padded(lo, hi, 0.06, LEFT + label_w, RIGHT);
    let row_h = (BOTTOM - TOP - 20.0) / bars.len() as f64;
    let mut c = Canvas::new();
    let mut at = base;
    for (i, (name, value, class)) in bars.iter().enumerate() {
        let y0 = TOP + 20.0 + i as f64 * row_h;
        let next = at + value;
        let color = if *value >= 0.0 { POSITIVE_COLOR } else { NEGATIVE_COLOR };
        c.text("term-label", LEFT + label_w - 6.0, y0 + row_h / 2.0 + 4.0, "end", 10.0, name);
        c.rect(
            class,
            xs.map(at),
            y0 + row_h * 0.15,
            xs.map(next),
            y0 + row_h * 0.85,
            color,
            &format!(" data-term=\"{}\" data-value=\"{value}\"", super::canvas::escape(name)),
        );
        if i + 1 < bars.len() {
            c.line("connector", xs.map(next), y0 + row_h * 0.85, xs.map(next), y0 + row_h * 1.15, NEUTRAL_COLOR, "");
        }
        at = next;
    }
    c.line("base", xs.map(base), TOP + 14.0, xs.map(base), BOTTOM, "#000000", &format!(" stroke-dasharray=\"3 2\" data-value=\"{base}\""));
    c.text("marker-label", xs.map(base), TOP + 10.0, "middle", 10.0, &format!("base {base:.3}"));
    c.line("prediction", xs.map(prediction), TOP + 14.0, xs.map(prediction), BOTTOM, "#000000", &format!(" data-value=\"{prediction}\""));
    c.text("marker-label", xs.map(prediction), BOTTOM - 4.0, "middle", 10.0, &format!("f(x) {prediction:.3}"));
    c.x_axis(&xs, BOTTOM, LEFT + label_w, RIGHT, scale.axis_label());
    let what = match source {
        WaterfallSource::Vector(v) => vector_title(v),
        WaterfallSource::Interactions(_) => "interaction values".into(),
    };
    Ok(c.finish(&format!("Waterfall: {what}")))
}
