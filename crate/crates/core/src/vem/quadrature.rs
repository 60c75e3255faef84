//! Polygon quadrature by fan sub-triangulation from the centroid with a
//! degree-4 triangle rule (exact for the polynomial degrees needed up to
//! quadratic virtual elements).

use super::super::mesh::{polygon_area, polygon_centroid};

/// 6-point symmetric triangle rule, exact for degree 4. Barycentric points
/// and area-normalized weights.
const TRI_W1: f64 = 0.223_381_589_678_011;
const TRI_A1: f64 = 0.445_948_490_915_965;
const TRI_W2: f64 = 0.109_951_743_655_322;
const TRI_A2: f64 = 0.091_576_213_509_771;

#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub w: f64,
}

pub fn triangle_quadrature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Vec<QuadPoint> {
    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    let groups: [(f64, [f64; 3]); 6] = [
        (TRI_W1, [1.0 - 2.0 * TRI_A1, TRI_A1, TRI_A1]),
        (TRI_W1, [TRI_A1, 1.0 - 2.0 * TRI_A1, TRI_A1]),
        (TRI_W1, [TRI_A1, TRI_A1, 1.0 - 2.0 * TRI_A1]),
        (TRI_W2, [1.0 - 2.0 * TRI_A2, TRI_A2, TRI_A2]),
        (TRI_W2, [TRI_A2, 1.0 - 2.0 * TRI_A2, TRI_A2]),
        (TRI_W2, [TRI_A2, TRI_A2, 1.0 - 2.0 * TRI_A2]),
    ];
    groups
        .iter()
        .map(|&(w, bc)| QuadPoint {
            x: [
                bc[0] * a[0] + bc[1] * b[0] + bc[2] * c[0],
                bc[0] * a[1] + bc[1] * b[1] + bc[2] * c[1],
            ],
            w: w * area,
        })
        .collect()
}

pub fn polygon_quadrature(poly: &[[f64; 2]]) -> Vec<QuadPoint> {
    let c = polygon_centroid(poly);
    let n = poly.len();
    let mut pts = Vec::with_capacity(6 * n);
    for k in 0..n {
        pts.extend(triangle_quadrature(c, poly[k], poly[(k + 1) % n]));
    }
    pts
}

pub fn integrate(poly: &[[f64; 2]], f: impl Fn([f64; 2]) -> f64) -> f64 {
    polygon_quadrature(poly)
        .iter()
        .map(|q| q.w * f(q.x))
        .sum()
}

#[allow(dead_code)]
pub fn polygon_area_by_quadrature(poly: &[[f64; 2]]) -> f64 {
    let _ = polygon_area(poly);
    integrate(poly, |_| 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quartics_on_triangle() {
        // integral of x^4 over the unit right triangle is 1/30;
        // integral of x^2 y^2 is 1/180
        let pts = triangle_quadrature([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let ix4: f64 = pts.iter().map(|q| q.w * q.x[0].powi(4)).sum();
        let ix2y2: f64 = pts.iter().map(|q| q.w * q.x[0].powi(2) * q.x[1].powi(2)).sum();
        assert!((ix4 - 1.0 / 30.0).abs() < 1e-15);
        assert!((ix2y2 - 1.0 / 180.0).abs() < 1e-15);
    }

    #[test]
    fn polygon_rule_reproduces_area_and_moments() {
        let hexagon: Vec<[f64; 2]> = (0..6)
            .map(|k| {
                let ang = std::f64::consts::PI / 3.0 * k as f64 + 0.3;
                [0.4 + 0.25 * ang.cos(), 0.5 + 0.25 * ang.sin()]
            })
            .collect();
        let area = polygon_area(&hexagon);
        assert!((integrate(&hexagon, |_| 1.0) - area).abs() < 1e-14);
        // first moments match the centroid
        let c = polygon_centroid(&hexagon);
        let mx = integrate(&hexagon, |p| p[0]) / area;
        let my = integrate(&hexagon, |p| p[1]) / area;
        assert!((mx - c[0]).abs() < 1e-14);
        assert!((my - c[1]).abs() < 1e-14);
    }
}
