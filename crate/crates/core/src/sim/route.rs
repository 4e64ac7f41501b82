use serde::{Deserialize, Serialize};

use crate::num::wrap_angle;

/// Reference path as a polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub points: Vec<[f64; 2]>,
    s: Vec<f64>,
}

/// Spacing of generated route polylines, in metres.
pub const ROUTE_SPACING: f64 = 1.0;

impl Route {
    /// Needs at least two distinct points.
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        assert!(points.len() >= 2, "route needs two points");
        let mut s = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in points.windows(2) {
            acc += dist(w[0], w[1]);
            s.push(acc);
        }
        Route { points, s }
    }

    pub fn straight(length: f64) -> Self {
        let n = (length / ROUTE_SPACING).ceil() as usize;
        Route::new((0..=n).map(|i| [i as f64 * ROUTE_SPACING, 0.0]).collect())
    }

    /// Straight lead-in of `lead` metres, a quarter circle of `radius`, then
    /// straight until `length` metres of arc length.
    pub fn quarter_turn(lead: f64, radius: f64, left: bool, length: f64) -> Self {
        let sign = if left { 1.0 } else { -1.0 };
        let arc = radius * std::f64::consts::FRAC_PI_2;
        let n = (length / ROUTE_SPACING).ceil() as usize;
        let pts = (0..=n)
            .map(|i| {
                let s = i as f64 * ROUTE_SPACING;
                if s <= lead {
                    [s, 0.0]
                } else if s <= lead + arc {
                    let a = (s - lead) / radius;
                    [lead + radius * a.sin(), sign * radius * (1.0 - a.cos())]
                } else {
                    let rest = s - lead - arc;
                    [lead + radius, sign * (radius + rest)]
                }
            })
            .collect();
        Route::new(pts)
    }

    /// Straight path along +x whose lateral offset follows `offset(x)`.
    pub fn straight_with_offset(length: f64, offset: impl Fn(f64) -> f64) -> Self {
        let n = (length / ROUTE_SPACING).ceil() as usize;
        Route::new((0..=n).map(|i| {
            let x = i as f64 * ROUTE_SPACING;
            [x, offset(x)]
        }).collect())
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    fn segment(&self, s: f64) -> usize {
        match self.s.binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arc length `s`, extrapolated linearly beyond either end.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.s[i + 1] - self.s[i];
        let u = if len > 0.0 { (s - self.s[i]) / len } else { 0.0 };
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Signed curvature from the heading change over a 2 m window.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let h = ROUTE_SPACING;
        wrap_angle(self.heading_at(s + h) - self.heading_at(s - h)) / (2.0 * h)
    }

    /// Arc length of the closest point and the signed distance to it (left
    /// positive). With a hint only segments within 40 m of it are searched.
    pub fn project(&self, p: [f64; 2], hint: Option<f64>) -> (f64, f64) {
        let (lo, hi) = match hint {
            Some(h) => (self.segment(h - 40.0), self.segment(h + 40.0)),
            None => (0, self.points.len() - 2),
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in lo..=hi {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let r = [p[0] - a[0], p[1] - a[1]];
            let mut u = if len2 > 0.0 { (r[0] * d[0] + r[1] * d[1]) / len2 } else { 0.0 };
            if i > 0 {
                u = u.max(0.0);
            }
            if i + 2 < self.points.len() {
                u = u.min(1.0);
            }
            let q = [a[0] + u * d[0], a[1] + u * d[1]];
            let dd = dist(p, q);
            if dd < best.0 {
                let cross = d[0] * r[1] - d[1] * r[0];
                let lat = if cross < 0.0 { -dd } else { dd };
                best = (dd, self.s[i] + u * len2.sqrt(), lat);
            }
        }
        (best.1, best.2)
    }

    /// World point at arc length `s` shifted `lateral` metres to the left.
    pub fn offset_point(&self, s: f64, lateral: f64) -> [f64; 2] {
        let p = self.point_at(s);
        let h = self.heading_at(s);
        [p[0] - lateral * h.sin(), p[1] + lateral * h.cos()]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_route_projection() {
        let r = Route::straight(50.0);
        assert_eq!(r.length(), 50.0);
        let (s, lat) = r.project([12.3, 1.5], None);
        assert!((s - 12.3).abs() < 1e-12 && (lat - 1.5).abs() < 1e-12);
        let (s, lat) = r.project([55.0, -2.0], Some(48.0));
        assert!((s - 55.0).abs() < 1e-12 && (lat + 2.0).abs() < 1e-12);
        assert_eq!(r.point_at(-3.0), [-3.0, 0.0]);
        assert_eq!(r.curvature_at(10.0), 0.0);
    }

    #[test]
    fn quarter_turn_geometry() {
        let r = Route::quarter_turn(20.0, 20.0, true, 120.0);
        let arc = 20.0 * std::f64::consts::FRAC_PI_2;
        let end = r.point_at(20.0 + arc);
        assert!((end[0] - 40.0).abs() < 0.05 && (end[1] - 20.0).abs() < 0.05);
        assert!((r.curvature_at(35.0) - 0.05).abs() < 2e-3);
        assert!((r.heading_at(100.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        let right = Route::quarter_turn(20.0, 20.0, false, 120.0);
        assert!(right.curvature_at(35.0) < 0.0);
        let p = r.offset_point(60.0, 2.0);
        let (s, lat) = r.project(p, Some(55.0));
        assert!((s - 60.0).abs() < 0.05 && (lat - 2.0).abs() < 0.01);
    }
}
