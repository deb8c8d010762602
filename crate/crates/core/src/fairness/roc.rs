use std::fmt::Write as _;

use super::FairnessError;

/// Piecewise-linear ROC curve through `(fpr, tpr)` knots ordered by
/// decreasing threshold. Repeated FPR values form vertical segments.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self, FairnessError> {
        let bad = |m: &str| Err(FairnessError::InvalidCurve(m.to_string()));
        if points.first() != Some(&(0.0, 0.0)) || points.last() != Some(&(1.0, 1.0)) {
            return bad("must start at (0,0) and end at (1,1)");
        }
        if points.iter().any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y)) {
            return bad("coordinates must lie in [0,1]");
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return bad("coordinates must be non-decreasing");
        }
        Ok(RocCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
    }

    /// TPR just right of `t` (the top of a vertical segment at `t`).
    fn right_limit(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|p| p.0 <= t) - 1;
        self.interpolate(k, t)
    }

    /// TPR just left of `t` (the bottom of a vertical segment at `t`).
    fn left_limit(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|p| p.0 < t);
        if self.points[k].0 == t {
            self.points[k].1
        } else {
            self.interpolate(k - 1, t)
        }
    }

    fn interpolate(&self, k: usize, t: f64) -> f64 {
        let (x0, y0) = self.points[k];
        match self.points.get(k + 1) {
            Some(&(x1, y1)) if x1 > x0 => y0 + (y1 - y0) * (t - x0) / (x1 - x0),
            _ => y0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// ROC curve of `scores` against binary `labels`. Equal scores form one
/// threshold step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve, FairnessError> {
    if scores.len() != labels.len() {
        return Err(FairnessError::LengthMismatch(scores.len(), labels.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(FairnessError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    RocCurve::from_points(points)
}

/// Absolute area between two ROC curves over FPR in [0, 1].
///
/// Both curves are linear between consecutive knots of the merged FPR
/// grid, so each grid interval is integrated exactly; an interval where
/// the curves swap order is split at the crossing.
pub fn abroca(a: &RocCurve, b: &RocCurve) -> f64 {
    let mut grid: Vec<f64> = a.points.iter().chain(&b.points).map(|p| p.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut area = 0.0;
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let d0 = a.right_limit(t0) - b.right_limit(t0);
        let d1 = a.left_limit(t1) - b.left_limit(t1);
        let width = t1 - t0;
        area += if d0 * d1 >= 0.0 {
            width * (d0.abs() + d1.abs()) / 2.0
        } else {
            // two triangles meeting at the crossing
            width * (d0 * d0 + d1 * d1) / (2.0 * (d0.abs() + d1.abs()))
        };
    }
    area
}

/// SVG figure of two ROC curves with the region between them shaded and
/// the ABROCA value in the legend.
pub fn roc_svg(title: &str, baseline: (&str, &RocCurve), comparison: (&str, &RocCurve), abroca_value: f64) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 48.0;
    let px = |(x, y): (f64, f64)| (PAD + x * SIZE, PAD + (1.0 - y) * SIZE);
    let path = |c: &RocCurve| {
        c.points.iter().map(|&p| px(p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
    };
    let mut region: Vec<String> =
        baseline.1.points.iter().map(|&p| px(p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    region.extend(comparison.1.points.iter().rev().map(|&p| px(p)).map(|(x, y)| format!("{x:.2},{y:.2}")));
    let w = SIZE + 2.0 * PAD;
    let h = SIZE + 2.0 * PAD + 24.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="28" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444"/>"##);
    for i in 0..=4 {
        let v = f64::from(i) / 4.0;
        let (x, y) = px((v, v));
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, PAD + SIZE + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, PAD - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        w / 2.0,
        PAD + SIZE + 34.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14,{:.1}) rotate(-90)" text-anchor="middle">True positive rate</text>"#,
        PAD + SIZE / 2.0
    );
    let (x0, y0) = px((0.0, 0.0));
    let (x1, y1) = px((1.0, 1.0));
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#bbb" stroke-dasharray="4 4"/>"##);
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#f2b134" fill-opacity="0.45" fill-rule="evenodd" stroke="none"/>"##,
        region.join(" ")
    );
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, path(baseline.1));
    let _ =
        writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c2362b" stroke-width="2"/>"##, path(comparison.1));
    let lx = PAD + SIZE - 170.0;
    let ly = PAD + SIZE - 62.0;
    let _ = writeln!(s, r##"<rect x="{lx}" y="{ly}" width="164" height="56" fill="white" stroke="#ccc"/>"##);
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#1f5fa8" stroke-width="2"/>"##,
        lx + 8.0,
        ly + 14.0,
        lx + 28.0,
        ly + 14.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 34.0, ly + 18.0, escape(baseline.0));
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#c2362b" stroke-width="2"/>"##,
        lx + 8.0,
        ly + 31.0,
        lx + 28.0,
        ly + 31.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 34.0, ly + 35.0, escape(comparison.0));
    let _ = writeln!(s, r#"<text x="{}" y="{}">ABROCA = {abroca_value:.5}</text>"#, lx + 8.0, ly + 51.0);
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
