//! Rotated-box BEV IoU via Sutherland-Hodgman polygon clipping, plus the
//! footprint helpers the visibility model uses.

use super::Box3D;

const EDGE_EPS: f64 = 1e-9;

/// CCW corners of the box footprint in the BEV plane.
pub fn footprint_corners(b: &Box3D) -> [(f64, f64); 4] {
    let (s, c) = b.yaw.sin_cos();
    let hl = b.length / 2.0;
    let hw = b.width / 2.0;
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    local.map(|(lx, ly)| (b.x + c * lx - s * ly, b.y + s * lx + c * ly))
}

/// Signed area by the shoelace formula (positive for CCW).
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Clip `subject` by the half-plane left of the directed edge a->b.
fn clip_edge(subject: &[(f64, f64)], a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    let inside = |p: (f64, f64)| -> bool {
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= -EDGE_EPS
    };
    let intersect = |p: (f64, f64), q: (f64, f64)| -> (f64, f64) {
        let dx = q.0 - p.0;
        let dy = q.1 - p.1;
        let ex = b.0 - a.0;
        let ey = b.1 - a.1;
        let denom = ex * dy - ey * dx;
        if denom.abs() < 1e-300 {
            return p;
        }
        let t = (ex * (a.1 - p.1) - ey * (a.0 - p.0)) / denom;
        (p.0 + t * dx, p.1 + t * dy)
    };

    let mut out = Vec::with_capacity(subject.len() + 2);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        match (inside(cur), inside(prev)) {
            (true, true) => out.push(cur),
            (true, false) => {
                out.push(intersect(prev, cur));
                out.push(cur);
            }
            (false, true) => out.push(intersect(prev, cur)),
            (false, false) => {}
        }
    }
    out
}

/// Intersection area of two box footprints.
fn intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let clip = footprint_corners(b);
    let mut poly: Vec<(f64, f64)> = footprint_corners(a).to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        poly = clip_edge(&poly, clip[i], clip[(i + 1) % 4]);
    }
    polygon_area(&poly).max(0.0)
}

/// BEV IoU of the yaw-oriented footprint rectangles; z and height ignored.
pub fn rotated_iou(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.length * a.width;
    let area_b = b.length * b.width;
    let inter = intersection_area(a, b).min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Whether a BEV point lies inside (or on) the box footprint.
pub fn point_in_footprint(px: f64, py: f64, b: &Box3D) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = px - b.x;
    let dy = py - b.y;
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.length / 2.0 && ly.abs() <= b.width / 2.0
}

/// Whether the open segment (p0, p1) passes through the box footprint.
///
/// Endpoints are excluded so a ray cast to an object's own center is not
/// blocked by its own footprint.
pub fn segment_intersects_footprint(p0: (f64, f64), p1: (f64, f64), b: &Box3D) -> bool {
    // slab test in the box's local frame
    let (s, c) = b.yaw.sin_cos();
    let to_local = |(px, py): (f64, f64)| {
        let dx = px - b.x;
        let dy = py - b.y;
        (c * dx + s * dy, -s * dx + c * dy)
    };
    let (x0, y0) = to_local(p0);
    let (x1, y1) = to_local(p1);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let mut t_enter: f64 = 0.0;
    let mut t_exit: f64 = 1.0;
    for (start, delta, half) in [(x0, dx, b.length / 2.0), (y0, dy, b.width / 2.0)] {
        if delta.abs() < 1e-12 {
            if start.abs() > half {
                return false;
            }
            continue;
        }
        let mut t0 = (-half - start) / delta;
        let mut t1 = (half - start) / delta;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return false;
        }
    }
    // require a real interior crossing, not an endpoint graze
    const T_EPS: f64 = 1e-9;
    t_enter < 1.0 - T_EPS && t_exit > T_EPS && (t_exit - t_enter) > T_EPS
}
