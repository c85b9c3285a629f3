//! Oriented rectangles: separating-axis overlap tests and ray casts.

use super::VehicleState;

/// A vehicle footprint in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub cx: f64,
    pub cy: f64,
    /// Half extent along the heading.
    pub half_len: f64,
    /// Half extent across the heading.
    pub half_wid: f64,
    pub cos: f64,
    pub sin: f64,
}

impl Obb {
    pub fn from_vehicle(v: &VehicleState) -> Self {
        let (sin, cos) = v.heading.sin_cos();
        Obb {
            cx: v.x,
            cy: v.y,
            half_len: 0.5 * v.length,
            half_wid: 0.5 * v.width,
            cos,
            sin,
        }
    }

    fn bounding_radius(&self) -> f64 {
        self.half_len.hypot(self.half_wid)
    }

    /// World point to box-local coordinates.
    fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (dx, dy) = (px - self.cx, py - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (ax, ay) = (self.cos * self.half_len, self.sin * self.half_len);
        let (bx, by) = (-self.sin * self.half_wid, self.cos * self.half_wid);
        [
            (self.cx + ax + bx, self.cy + ay + by),
            (self.cx + ax - bx, self.cy + ay - by),
            (self.cx - ax - bx, self.cy - ay - by),
            (self.cx - ax + bx, self.cy - ay + by),
        ]
    }

    /// Closed containment test (boundary counts as inside).
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (lx, ly) = self.to_local(px, py);
        lx.abs() <= self.half_len && ly.abs() <= self.half_wid
    }

    fn project(&self, ax: f64, ay: f64) -> (f64, f64) {
        let c = self.cx * ax + self.cy * ay;
        let r = self.half_len * (self.cos * ax + self.sin * ay).abs() + self.half_wid * (-self.sin * ax + self.cos * ay).abs();
        (c - r, c + r)
    }

    /// Separating-axis test over the two edge normals of each box.
    /// Touching boundaries count as an intersection.
    pub fn intersects(&self, other: &Obb) -> bool {
        let dx = other.cx - self.cx;
        let dy = other.cy - self.cy;
        let reach = self.bounding_radius() + other.bounding_radius();
        if dx * dx + dy * dy > reach * reach {
            return false;
        }
        let axes = [
            (self.cos, self.sin),
            (-self.sin, self.cos),
            (other.cos, other.sin),
            (-other.sin, other.cos),
        ];
        axes.iter().all(|&(ax, ay)| {
            let (a0, a1) = self.project(ax, ay);
            let (b0, b1) = other.project(ax, ay);
            a1 >= b0 && b1 >= a0
        })
    }

    /// Distance along the unit ray `(ox, oy) + t (dx, dy)` to the box
    /// boundary, or `None` when the ray misses. An origin inside the box
    /// reports the exit distance.
    pub fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        // cheap reject against the bounding circle
        let (rx, ry) = (self.cx - ox, self.cy - oy);
        let along = rx * dx + ry * dy;
        let perp2 = rx * rx + ry * ry - along * along;
        let rad = self.bounding_radius();
        if perp2 > rad * rad || (along < -rad) {
            return None;
        }
        let (lox, loy) = self.to_local(ox, oy);
        let ldx = dx * self.cos + dy * self.sin;
        let ldy = -dx * self.sin + dy * self.cos;
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for (o, d, h) in [(lox, ldx, self.half_len), (loy, ldy, self.half_wid)] {
            if d.abs() < 1e-15 {
                if o.abs() > h {
                    return None;
                }
            } else {
                let t1 = (-h - o) / d;
                let t2 = (h - o) / d;
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_min = t_min.max(lo);
                t_max = t_max.min(hi);
            }
        }
        if t_max < 0.0 || t_min > t_max {
            return None;
        }
        Some(if t_min >= 0.0 { t_min } else { t_max })
    }
}
