//! Mesh JSON format, version 1:
//!
//! ```json
//! {
//!   "format": 1,
//!   "vertices": [[x, y], ...],
//!   "cells": [[i, j, k, ...], ...],
//!   "kappa": [k_e, ...],          // optional
//!   "subdomain": [id_e, ...]      // optional
//! }
//! ```
//!
//! Floating-point values round-trip bit-exactly (shortest-representation
//! encoding on write, exact parse on read).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CoefficientField, PolygonalMesh};

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    format: u32,
    vertices: Vec<[f64; 2]>,
    cells: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subdomain: Option<Vec<u64>>,
}

/// Everything a mesh document can carry.
pub struct MeshBundle {
    pub mesh: PolygonalMesh,
    pub kappa: Option<CoefficientField>,
    pub subdomain: Option<Vec<usize>>,
}

pub fn write_mesh_json(
    mesh: &PolygonalMesh,
    kappa: Option<&CoefficientField>,
    subdomain: Option<&[usize]>,
) -> String {
    let doc = MeshDoc {
        format: 1,
        vertices: mesh.vertices().to_vec(),
        cells: mesh
            .cells()
            .iter()
            .map(|c| c.iter().map(|&v| v as u64).collect())
            .collect(),
        kappa: kappa.map(|f| f.values().to_vec()),
        subdomain: subdomain.map(|s| s.iter().map(|&v| v as u64).collect()),
    };
    serde_json::to_string(&doc).expect("mesh serialization cannot fail")
}

pub fn read_mesh_json(text: &str) -> Result<MeshBundle> {
    let doc: MeshDoc = serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Error::Parse {
            offset,
            message: e.to_string(),
        }
    })?;
    if doc.format != 1 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("unsupported mesh format version {}", doc.format),
        });
    }
    let cells: Vec<Vec<usize>> = doc
        .cells
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as usize).collect())
        .collect();
    let mesh = PolygonalMesh::from_raw(doc.vertices, cells, None)?;
    let kappa = match doc.kappa {
        Some(values) => {
            if values.len() != mesh.n_cells() {
                return Err(Error::Parse {
                    offset: 0,
                    message: format!(
                        "kappa has {} entries for {} cells",
                        values.len(),
                        mesh.n_cells()
                    ),
                });
            }
            Some(CoefficientField::from_values(values)?)
        }
        None => None,
    };
    let subdomain = doc
        .subdomain
        .map(|s| s.into_iter().map(|v| v as usize).collect());
    Ok(MeshBundle {
        mesh,
        kappa,
        subdomain,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_triangular, build_voronoi, paint_coefficient, InclusionSpec, Region};

    #[test]
    fn smallest_triangular_roundtrip() {
        let mesh = build_triangular(1).unwrap();
        let text = write_mesh_json(&mesh, None, None);
        let back = read_mesh_json(&text).unwrap();
        assert_eq!(back.mesh.vertices(), mesh.vertices());
        assert_eq!(back.mesh.cells(), mesh.cells());
        assert!(back.kappa.is_none());
    }

    #[test]
    fn voronoi_roundtrip_bit_exact() {
        let mesh = build_voronoi(100, 1, 3).unwrap();
        let spec = InclusionSpec {
            regions: vec![Region::Rect {
                x0: 0.3,
                y0: 0.3,
                x1: 0.7,
                y1: 0.7,
            }],
        };
        let kappa = paint_coefficient(&mesh, &spec, 1e6).unwrap();
        let text = write_mesh_json(&mesh, Some(&kappa), None);
        let back = read_mesh_json(&text).unwrap();
        assert_eq!(back.mesh.vertices(), mesh.vertices());
        assert_eq!(back.mesh.cells(), mesh.cells());
        assert_eq!(back.kappa.unwrap().values(), kappa.values());
        // writing again reproduces the document byte for byte
        let text2 = write_mesh_json(&back.mesh, Some(&kappa), None);
        assert_eq!(text, text2);
    }

    #[test]
    fn truncated_document_reports_offset() {
        let mesh = build_triangular(1).unwrap();
        let text = write_mesh_json(&mesh, None, None);
        let truncated = &text[..text.len() / 2];
        match read_mesh_json(truncated) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }
}
