//! Static SVG rendering of data points, confidence ellipses and arc splines.

use std::fmt::Write as _;

use crate::fitter::chi2_quantile_2dof;
use crate::geometry::Point2;
use crate::io::SplineFile;
use crate::models::DataPoint;

/// Confidence level of the drawn ellipses.
pub const ELLIPSE_CONFIDENCE: f64 = 0.99;

fn bounds(points: &[DataPoint], spline: Option<&SplineFile>) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut add = |p: Point2| {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    };
    points.iter().for_each(|p| add(p.pos));
    if let Some(s) = spline {
        s.arc_nodes.iter().chain(&s.middle_nodes).for_each(|a| add(Point2::new(a[0], a[1])));
    }
    if !lo.is_finite() {
        return (Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0));
    }
    (lo, hi)
}

/// Renders an SVG in world coordinates (y up). The view box covers the data
/// and nodes with a 5% margin; output bytes depend only on the inputs.
pub fn render_svg(points: &[DataPoint], spline: Option<&SplineFile>) -> String {
    let (lo, hi) = bounds(points, spline);
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-6);
    let margin = 0.05 * span;
    let (w, h) = (hi.x - lo.x + 2.0 * margin, hi.y - lo.y + 2.0 * margin);
    let stroke = span / 800.0;
    let mark = span / 300.0;
    let k = chi2_quantile_2dof(ELLIPSE_CONFIDENCE);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.6} {:.6} {:.6} {:.6}" width="800" height="{:.0}">"#,
        lo.x - margin,
        -(hi.y + margin),
        w,
        h,
        800.0 * h / w
    );
    let _ = writeln!(s, r#"<g transform="scale(1,-1)" fill="none" stroke-width="{stroke:.6}">"#);

    let _ = writeln!(s, r##"<g id="ellipses" stroke="#9ab">"##);
    for p in points {
        let (small, large, angle) = p.cov.principal_axes();
        let _ = writeln!(
            s,
            r#"<ellipse cx="{:.6}" cy="{:.6}" rx="{:.6}" ry="{:.6}" transform="rotate({:.6} {:.6} {:.6})"/>"#,
            p.pos.x,
            p.pos.y,
            (k * large).sqrt(),
            (k * small.max(0.0)).sqrt(),
            angle.to_degrees(),
            p.pos.x,
            p.pos.y
        );
    }
    s.push_str("</g>\n");

    let _ = writeln!(s, r##"<g id="points" fill="#333" stroke="none">"##);
    for p in points {
        let _ = writeln!(s, r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}"/>"#, p.pos.x, p.pos.y, mark * 0.5);
    }
    s.push_str("</g>\n");

    if let Some(sp) = spline {
        let _ = writeln!(s, r##"<g id="arcs" stroke="#c22" stroke-width="{:.6}">"##, 2.0 * stroke);
        for (i, seg) in sp.segments.iter().enumerate() {
            let a = sp.arc_nodes[i];
            let b = sp.arc_nodes[i + 1];
            match (seg.center, seg.radius, seg.start_angle, seg.sweep) {
                (Some(c), Some(r), Some(t0), Some(sw)) => {
                    // two halves, so each SVG arc spans at most π
                    let mid = Point2::new(c[0], c[1]) + Point2::from_angle(t0 + 0.5 * sw) * r;
                    let flag = if sw > 0.0 { 1 } else { 0 };
                    let _ = writeln!(
                        s,
                        r#"<path d="M {:.6} {:.6} A {r:.6} {r:.6} 0 0 {flag} {:.6} {:.6} A {r:.6} {r:.6} 0 0 {flag} {:.6} {:.6}"/>"#,
                        a[0], a[1], mid.x, mid.y, b[0], b[1]
                    );
                }
                _ => {
                    let _ = writeln!(s, r#"<path d="M {:.6} {:.6} L {:.6} {:.6}"/>"#, a[0], a[1], b[0], b[1]);
                }
            }
        }
        s.push_str("</g>\n");

        let _ = writeln!(s, r##"<g id="arc-nodes" fill="#c22" stroke="none">"##);
        for a in &sp.arc_nodes {
            let _ = writeln!(
                s,
                r#"<rect x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}"/>"#,
                a[0] - mark,
                a[1] - mark,
                2.0 * mark,
                2.0 * mark
            );
        }
        s.push_str("</g>\n");
        let _ = writeln!(s, r##"<g id="middle-nodes" stroke="#26c">"##);
        for n in &sp.middle_nodes {
            let _ = writeln!(s, r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}"/>"#, n[0], n[1], mark);
        }
        s.push_str("</g>\n");
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::{ArcSpline, ValidationReport, Verdict};
    use crate::geometry::Cov2;
    use crate::io::SplineFile;
    use crate::models::{Association, NodeVector};

    fn unit_circle_spline() -> (Vec<DataPoint>, SplineFile) {
        // upper and lower half of the unit circle
        let nodes = NodeVector::new(
            vec![Point2::new(1.0, 0.0), Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)],
            vec![Point2::new(0.0, 1.0), Point2::new(0.0, -1.0)],
        )
        .unwrap();
        let pts: Vec<DataPoint> = (0..9)
            .map(|k| DataPoint::new(k + 1, Point2::from_angle(k as f64 * std::f64::consts::PI / 4.0), Cov2::isotropic(0.01)))
            .collect();
        let assoc = Association::new(vec![0, 4, 8], 9).unwrap();
        let report = ValidationReport { threshold: 9.21, segments: vec![], verdict: Verdict::Valid };
        let mut spline = ArcSpline::new(nodes, assoc, &report);
        spline.invalid_counts = vec![0, 0];
        let file = SplineFile::from_spline(&spline, &pts, Verdict::Valid, String::new(), 0.0);
        (pts, file)
    }

    /// Endpoint-to-center conversion for circular SVG arcs (rx = ry, no
    /// rotation), followed by dense sampling.
    fn sample_svg_arc(from: Point2, r: f64, large: bool, sweep: bool, to: Point2, n: usize) -> Vec<Point2> {
        let mid = from.midpoint(to);
        let half = (to - from) * 0.5;
        let d = half.norm();
        let h = (r * r - d * d).max(0.0).sqrt();
        let normal = half.perp() * (1.0 / d);
        let sign = if large == sweep { -1.0 } else { 1.0 };
        let c = mid + normal * (sign * h);
        let t0 = (from - c).angle();
        let mut dt = (to - c).angle() - t0;
        if sweep && dt < 0.0 {
            dt += std::f64::consts::TAU;
        }
        if !sweep && dt > 0.0 {
            dt -= std::f64::consts::TAU;
        }
        (0..=n).map(|k| c + Point2::from_angle(t0 + dt * k as f64 / n as f64) * r).collect()
    }

    fn parse_paths(svg: &str) -> Vec<Vec<f64>> {
        svg.lines()
            .filter_map(|l| l.strip_prefix(r#"<path d=""#))
            .map(|l| l.trim_end_matches(r#""/>"#).split_whitespace().filter_map(|t| t.parse::<f64>().ok()).collect())
            .collect()
    }

    #[test]
    fn unit_circle_paths_follow_the_circle() {
        let (pts, file) = unit_circle_spline();
        let svg = render_svg(&pts, Some(&file));
        let paths = parse_paths(&svg);
        assert_eq!(paths.len(), 2);
        let mut worst = 0.0f64;
        for v in paths {
            // M x y A r r rot large sweep x y A r r rot large sweep x y
            let start = Point2::new(v[0], v[1]);
            let mid = Point2::new(v[7], v[8]);
            let end = Point2::new(v[14], v[15]);
            for (a, b) in [(start, mid), (mid, end)] {
                for p in sample_svg_arc(a, v[2], v[5] != 0.0, v[6] != 0.0, b, 200) {
                    worst = worst.max((p.norm() - 1.0).abs());
                }
            }
            // the upper arc must pass through (0, 1), the lower through (0, -1)
            assert!(mid.x.abs() < 1e-6 && (mid.y.abs() - 1.0).abs() < 1e-6);
        }
        assert!(worst <= 1e-3, "max deviation {worst}");
    }

    #[test]
    fn points_only_when_no_spline() {
        let (pts, _) = unit_circle_spline();
        let svg = render_svg(&pts, None);
        assert!(!svg.contains("<path"));
        assert_eq!(svg.matches("<ellipse").count(), 9);
        assert_eq!(svg.matches("<circle").count(), 9);
    }

    #[test]
    fn ellipse_axes_use_chi2_quantile() {
        let p = DataPoint::new(1, Point2::ORIGIN, Cov2::diag(4.0, 1.0));
        let svg = render_svg(&[p], None);
        let k = chi2_quantile_2dof(0.99);
        assert!(svg.contains(&format!(r#"rx="{:.6}" ry="{:.6}""#, (4.0 * k).sqrt(), k.sqrt())));
    }

    #[test]
    fn view_box_has_margin() {
        let pts =
            vec![DataPoint::new(1, Point2::new(0.0, 0.0), Cov2::IDENTITY), DataPoint::new(2, Point2::new(100.0, 50.0), Cov2::IDENTITY)];
        let svg = render_svg(&pts, None);
        assert!(svg.contains(r#"viewBox="-5.000000 -55.000000 110.000000 60.000000""#), "{}", svg.lines().next().unwrap());
    }

    #[test]
    fn output_is_deterministic() {
        let (pts, file) = unit_circle_spline();
        assert_eq!(render_svg(&pts, Some(&file)), render_svg(&pts, Some(&file)));
        assert!(render_svg(&[], None).starts_with("<svg"));
    }
}
