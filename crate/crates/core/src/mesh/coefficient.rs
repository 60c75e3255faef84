use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PolygonalMesh;

/// A painted high-coefficient region.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// Axis-aligned rectangle.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Polyline thickened to the given width.
    Channel { points: Vec<[f64; 2]>, width: f64 },
}

impl Region {
    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Rect { x0, y0, x1, y1 } => {
                p[0] >= *x0 && p[0] <= *x1 && p[1] >= *y0 && p[1] <= *y1
            }
            Region::Channel { points, width } => {
                let r = 0.5 * width;
                points
                    .windows(2)
                    .any(|seg| dist_point_segment(p, seg[0], seg[1]) <= r)
            }
        }
    }
}

fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let dx = p[0] - (a[0] + t * ab[0]);
    let dy = p[1] - (a[1] + t * ab[1]);
    (dx * dx + dy * dy).sqrt()
}

/// High-coefficient inclusion geometry; cells whose centroid falls inside any
/// region are painted. Background value is 1.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InclusionSpec {
    pub regions: Vec<Region>,
}

impl InclusionSpec {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Piecewise-constant diffusion coefficient, one value per cell, all >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn constant(n_cells: usize, value: f64) -> Self {
        CoefficientField {
            values: vec![value; n_cells],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(v >= 1.0)) {
            return Err(Error::Contract(
                "coefficient values must satisfy kappa >= 1".into(),
            ));
        }
        Ok(CoefficientField { values })
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contrast eta = max kappa / min kappa.
    pub fn contrast(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.values.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// Cells painted with a value above the background.
    pub fn painted_cells(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 1.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Paint kappa = eta on every cell whose centroid lies inside a spec region,
/// kappa = 1 elsewhere. Overlapping regions take the maximum (a no-op for the
/// single-eta model, but the rule is fixed).
pub fn paint_coefficient(
    mesh: &PolygonalMesh,
    spec: &InclusionSpec,
    eta: f64,
) -> Result<CoefficientField> {
    if !(eta >= 1.0) {
        return Err(Error::Contract(format!("eta must be >= 1, got {eta}")));
    }
    let mut values = vec![1.0f64; mesh.n_cells()];
    for c in 0..mesh.n_cells() {
        let centroid = mesh.cell_centroid(c);
        for region in &spec.regions {
            if region.contains(centroid) {
                values[c] = values[c].max(eta);
            }
        }
    }
    Ok(CoefficientField { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_triangular;

    #[test]
    fn empty_spec_is_background() {
        let mesh = build_triangular(4).unwrap();
        let f = paint_coefficient(&mesh, &InclusionSpec::default(), 1e6).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
        assert_eq!(f.contrast(), 1.0);
    }

    #[test]
    fn full_cover_has_unit_contrast() {
        let mesh = build_triangular(4).unwrap();
        let spec = InclusionSpec {
            regions: vec![Region::Rect {
                x0: -1.0,
                y0: -1.0,
                x1: 2.0,
                y1: 2.0,
            }],
        };
        let f = paint_coefficient(&mesh, &spec, 1e6).unwrap();
        assert!(f.values().iter().all(|&v| v == 1e6));
        assert_eq!(f.contrast(), 1.0);
    }

    #[test]
    fn channel_painting_is_connected() {
        // one horizontal channel of width 2h crossing the domain
        let n = 16;
        let mesh = build_triangular(n).unwrap();
        let h = 1.0 / n as f64;
        let spec = InclusionSpec {
            regions: vec![Region::Channel {
                points: vec![[0.0, 0.5 + 0.3 * h], [1.0, 0.5 + 0.3 * h]],
                width: 2.0 * h,
            }],
        };
        let f = paint_coefficient(&mesh, &spec, 1e4).unwrap();
        assert_eq!(f.contrast(), 1e4);
        let painted = f.painted_cells();
        assert!(!painted.is_empty());
        // breadth-first search over painted cell adjacency: one component
        let set: std::collections::HashSet<usize> = painted.iter().copied().collect();
        let mut seen = std::collections::HashSet::new();
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(painted[0]);
        seen.insert(painted[0]);
        while let Some(c) = queue.pop_front() {
            for &nb in mesh.cell_neighbors(c) {
                if set.contains(&nb) && seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        assert_eq!(seen.len(), painted.len(), "channel not connected");
    }

    #[test]
    fn painting_is_idempotent_and_max_rule() {
        let mesh = build_triangular(8).unwrap();
        let spec = InclusionSpec {
            regions: vec![
                Region::Rect {
                    x0: 0.2,
                    y0: 0.2,
                    x1: 0.6,
                    y1: 0.6,
                },
                Region::Rect {
                    x0: 0.4,
                    y0: 0.4,
                    x1: 0.8,
                    y1: 0.8,
                },
            ],
        };
        let f1 = paint_coefficient(&mesh, &spec, 100.0).unwrap();
        let f2 = paint_coefficient(&mesh, &spec, 100.0).unwrap();
        assert_eq!(f1, f2);
        // order independence
        let spec_rev = InclusionSpec {
            regions: spec.regions.iter().rev().cloned().collect(),
        };
        let f3 = paint_coefficient(&mesh, &spec_rev, 100.0).unwrap();
        assert_eq!(f1, f3);
    }
}
