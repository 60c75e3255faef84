//! Polygonal meshes of the unit square and piecewise-constant coefficient
//! fields with high-contrast inclusions and channels.

mod builders;
mod coefficient;
mod io;

pub use builders::{
    build_hexagonal, build_quadrilateral, build_triangular, build_voronoi,
    build_voronoi_from_seeds,
};
pub use coefficient::{paint_coefficient, CoefficientField, InclusionSpec, Region};
pub use io::{read_mesh_json, write_mesh_json, MeshBundle};

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-9;

/// Mesh edge: vertex pair plus the one or two adjacent cells.
#[derive(Debug, Clone)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub cells: Vec<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.cells.len() == 1
    }

    pub fn other_cell(&self, cell: usize) -> Option<usize> {
        self.cells.iter().copied().find(|&c| c != cell)
    }
}

/// Conforming polygonal mesh of the unit square. Cells are counter-clockwise
/// vertex loops; edge and incidence tables are derived on construction.
#[derive(Debug, Clone)]
pub struct PolygonalMesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    /// per cell: edge index of side (v_k, v_{k+1})
    cell_edges: Vec<Vec<usize>>,
    vertex_cells: Vec<Vec<usize>>,
    cell_neighbors: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
    boundary_edge: Vec<bool>,
    h: f64,
    /// cells per side for structured families
    grid_n: Option<usize>,
}

impl PolygonalMesh {
    /// Build from raw vertex/cell data, deriving all topology. Fails when the
    /// data does not describe a conforming CCW mesh of the unit square.
    pub fn from_raw(
        vertices: Vec<[f64; 2]>,
        cells: Vec<Vec<usize>>,
        grid_n: Option<usize>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if cells.is_empty() {
            return Err(Error::InvalidMesh("mesh has no cells".into()));
        }
        let mut area_sum = 0.0;
        let mut h: f64 = 0.0;
        for (ci, cell) in cells.iter().enumerate() {
            if cell.len() < 3 {
                return Err(Error::InvalidMesh(format!(
                    "cell {ci} has fewer than 3 vertices"
                )));
            }
            if cell.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "cell {ci} references a missing vertex"
                )));
            }
            let poly: Vec<[f64; 2]> = cell.iter().map(|&v| vertices[v]).collect();
            let area = polygon_area(&poly);
            if area <= GEOM_TOL * GEOM_TOL {
                return Err(Error::InvalidMesh(format!(
                    "cell {ci} is degenerate or clockwise (signed area {area:e})"
                )));
            }
            area_sum += area;
            h = h.max(polygon_diameter(&poly));
        }
        if (area_sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidMesh(format!(
                "cell areas sum to {area_sum} instead of the unit-square area"
            )));
        }

        // derive unique edges
        let mut edge_of: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut cell_edges = vec![Vec::new(); cells.len()];
        for (ci, cell) in cells.iter().enumerate() {
            for k in 0..cell.len() {
                let a = cell[k];
                let b = cell[(k + 1) % cell.len()];
                if a == b {
                    return Err(Error::InvalidMesh(format!(
                        "cell {ci} has a repeated consecutive vertex"
                    )));
                }
                let key = (a.min(b), a.max(b));
                let id = *edge_of.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        a: key.0,
                        b: key.1,
                        cells: Vec::new(),
                    });
                    edges.len() - 1
                });
                edges[id].cells.push(ci);
                cell_edges[ci].push(id);
            }
        }
        for (ei, e) in edges.iter().enumerate() {
            if e.cells.len() > 2 {
                return Err(Error::InvalidMesh(format!(
                    "edge {ei} shared by {} cells",
                    e.cells.len()
                )));
            }
        }

        // boundary edges must lie on the square boundary (catches hanging nodes)
        let on_side = |p: [f64; 2], q: [f64; 2]| -> bool {
            (p[0].abs() < GEOM_TOL && q[0].abs() < GEOM_TOL)
                || ((p[0] - 1.0).abs() < GEOM_TOL && (q[0] - 1.0).abs() < GEOM_TOL)
                || (p[1].abs() < GEOM_TOL && q[1].abs() < GEOM_TOL)
                || ((p[1] - 1.0).abs() < GEOM_TOL && (q[1] - 1.0).abs() < GEOM_TOL)
        };
        let mut boundary_edge = vec![false; edges.len()];
        let mut boundary_vertex = vec![false; nv];
        for (ei, e) in edges.iter().enumerate() {
            if e.is_boundary() {
                if !on_side(vertices[e.a], vertices[e.b]) {
                    return Err(Error::InvalidMesh(format!(
                        "edge {}-{} has a single adjacent cell but is not on the domain boundary",
                        e.a, e.b
                    )));
                }
                boundary_edge[ei] = true;
                boundary_vertex[e.a] = true;
                boundary_vertex[e.b] = true;
            }
        }

        let mut vertex_cells = vec![Vec::new(); nv];
        for (ci, cell) in cells.iter().enumerate() {
            for &v in cell {
                vertex_cells[v].push(ci);
            }
        }
        let mut cell_neighbors = vec![Vec::new(); cells.len()];
        for e in &edges {
            if e.cells.len() == 2 {
                cell_neighbors[e.cells[0]].push(e.cells[1]);
                cell_neighbors[e.cells[1]].push(e.cells[0]);
            }
        }
        for nbrs in cell_neighbors.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }

        Ok(PolygonalMesh {
            vertices,
            cells,
            edges,
            cell_edges,
            vertex_cells,
            cell_neighbors,
            boundary_vertex,
            boundary_edge,
            h,
            grid_n,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c]
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell_edge_ids(&self, c: usize) -> &[usize] {
        &self.cell_edges[c]
    }

    pub fn cells_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    pub fn cell_neighbors(&self, c: usize) -> &[usize] {
        &self.cell_neighbors[c]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    /// Max cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn grid_n(&self) -> Option<usize> {
        self.grid_n
    }

    pub fn cell_polygon(&self, c: usize) -> Vec<[f64; 2]> {
        self.cells[c].iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        polygon_area(&self.cell_polygon(c))
    }

    pub fn cell_centroid(&self, c: usize) -> [f64; 2] {
        polygon_centroid(&self.cell_polygon(c))
    }

    /// V - E + F for the planar cell complex (outer face excluded); 1 for any
    /// conforming mesh of a simply connected domain.
    pub fn euler_characteristic(&self) -> isize {
        self.n_vertices() as isize - self.n_edges() as isize + self.n_cells() as isize
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_area(c)).sum()
    }
}

/// Signed area of a polygon (positive for CCW loops).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

pub fn polygon_centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let n = poly.len();
    let a = polygon_area(poly);
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let w = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * w;
        cy += (p[1] + q[1]) * w;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

pub fn polygon_diameter(poly: &[[f64; 2]]) -> f64 {
    let mut d2: f64 = 0.0;
    for i in 0..poly.len() {
        for j in (i + 1)..poly.len() {
            let dx = poly[i][0] - poly[j][0];
            let dy = poly[i][1] - poly[j][1];
            d2 = d2.max(dx * dx + dy * dy);
        }
    }
    d2.sqrt()
}
