//! Virtual element discretization of -div(kappa grad u) = f on polygonal
//! meshes, for degrees k = 1 and k = 2.

mod local;
mod quadrature;

pub use local::{build_local_element, local_load, CellDof, LocalElement, Monomials};
pub use quadrature::{integrate, polygon_quadrature, triangle_quadrature, QuadPoint};

use crate::error::{Error, Result};
use crate::linalg::{FactorizedSpd, SparseSymBuilder, SparseSymMatrix};
use crate::mesh::{CoefficientField, PolygonalMesh};

/// Global degree-of-freedom layout: vertex dofs first, then (for k = 2) one
/// dof per edge and one mean moment per cell.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub k: usize,
    n_vertices: usize,
    n_edges: usize,
    total: usize,
    dirichlet: Vec<bool>,
    interior_index: Vec<Option<usize>>,
    interior_dofs: Vec<usize>,
    positions: Vec<[f64; 2]>,
}

impl DofMap {
    pub fn new(mesh: &PolygonalMesh, k: usize) -> Result<Self> {
        if !(k == 1 || k == 2) {
            return Err(Error::Contract(format!("VEM degree must be 1 or 2, got {k}")));
        }
        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let nc = mesh.n_cells();
        let total = if k == 1 { nv } else { nv + ne + nc };
        let mut dirichlet = vec![false; total];
        let mut positions = vec![[0.0, 0.0]; total];
        for v in 0..nv {
            dirichlet[v] = mesh.is_boundary_vertex(v);
            positions[v] = mesh.vertex(v);
        }
        if k == 2 {
            for e in 0..ne {
                let edge = mesh.edge(e);
                dirichlet[nv + e] = mesh.is_boundary_edge(e);
                let a = mesh.vertex(edge.a);
                let b = mesh.vertex(edge.b);
                positions[nv + e] = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            }
            for c in 0..nc {
                positions[nv + ne + c] = mesh.cell_centroid(c);
            }
        }
        let mut interior_index = vec![None; total];
        let mut interior_dofs = Vec::new();
        for d in 0..total {
            if !dirichlet[d] {
                interior_index[d] = Some(interior_dofs.len());
                interior_dofs.push(d);
            }
        }
        Ok(DofMap {
            k,
            n_vertices: nv,
            n_edges: ne,
            total,
            dirichlet,
            interior_index,
            interior_dofs,
            positions,
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn n_interior(&self) -> usize {
        self.interior_dofs.len()
    }

    pub fn global_dof(&self, d: &CellDof) -> usize {
        match *d {
            CellDof::Vertex(v) => v,
            CellDof::Edge(e) => self.n_vertices + e,
            CellDof::Cell(c) => self.n_vertices + self.n_edges + c,
        }
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet[dof]
    }

    pub fn interior_index(&self, dof: usize) -> Option<usize> {
        self.interior_index[dof]
    }

    pub fn interior_dofs(&self) -> &[usize] {
        &self.interior_dofs
    }

    pub fn position(&self, dof: usize) -> [f64; 2] {
        self.positions[dof]
    }

    /// Cells incident to a dof (owner cell for moments, edge cells for edge
    /// dofs, vertex star otherwise).
    pub fn incident_cells<'m>(&self, mesh: &'m PolygonalMesh, dof: usize) -> Vec<usize> {
        if dof < self.n_vertices {
            mesh.cells_of_vertex(dof).to_vec()
        } else if dof < self.n_vertices + self.n_edges {
            mesh.edge(dof - self.n_vertices).cells.clone()
        } else {
            vec![dof - self.n_vertices - self.n_edges]
        }
    }
}

/// Per-cell local matrices for the whole mesh (coefficient-independent; the
/// per-cell kappa scales them at assembly time).
#[derive(Debug, Clone)]
pub struct VemCache {
    pub k: usize,
    pub elements: Vec<LocalElement>,
}

impl VemCache {
    pub fn build(mesh: &PolygonalMesh, k: usize) -> Result<Self> {
        let elements = (0..mesh.n_cells())
            .map(|c| build_local_element(mesh, c, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(VemCache { k, elements })
    }

    /// kappa-weighted energy of a full-dof vector over a set of cells.
    pub fn energy_on_cells(
        &self,
        dof_map: &DofMap,
        field: &CoefficientField,
        cells: &[usize],
        full: &[f64],
    ) -> f64 {
        let mut acc = 0.0;
        for &c in cells {
            let el = &self.elements[c];
            let nd = el.ndof;
            let local: Vec<f64> = el.dofs.iter().map(|d| full[dof_map.global_dof(d)]).collect();
            let mut cell_acc = 0.0;
            for i in 0..nd {
                let mut row = 0.0;
                for j in 0..nd {
                    row += el.stiffness[i * nd + j] * local[j];
                }
                cell_acc += local[i] * row;
            }
            acc += field.value(c) * cell_acc;
        }
        acc
    }
}

/// Assembled Galerkin system over interior dofs, with the Dirichlet lift
/// already folded into the right-hand side.
#[derive(Debug)]
pub struct GlobalSystem {
    pub a: SparseSymMatrix,
    pub b: Vec<f64>,
    pub dof_map: DofMap,
    /// Dirichlet dof values used during elimination (full-dof indexing)
    pub boundary_values: Vec<f64>,
}

impl GlobalSystem {
    /// Direct solve (envelope Cholesky); returns the interior solution.
    pub fn solve_direct(&self) -> Result<Vec<f64>> {
        if self.a.n() == 0 {
            return Ok(Vec::new());
        }
        let f = FactorizedSpd::new(&self.a)?;
        Ok(f.solve(&self.b))
    }

    /// Expand an interior vector to all dofs, inserting boundary values.
    pub fn expand(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = self.boundary_values.clone();
        for (i, &dof) in self.dof_map.interior_dofs().iter().enumerate() {
            full[dof] = interior[i];
        }
        full
    }

    /// Restrict a full-dof vector to interior dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.dof_map
            .interior_dofs()
            .iter()
            .map(|&d| full[d])
            .collect()
    }
}

/// Assemble the global system. `f` is the volume load; `dirichlet` supplies
/// boundary dof values by position (use `|_| 0.0` for the homogeneous
/// problem). Assembly is a scatter-add in deterministic cell order and the
/// boundary dofs are eliminated symmetrically.
pub fn assemble_global(
    mesh: &PolygonalMesh,
    cache: &VemCache,
    field: &CoefficientField,
    f: &dyn Fn([f64; 2]) -> f64,
    dirichlet: &dyn Fn([f64; 2]) -> f64,
) -> Result<GlobalSystem> {
    let dof_map = DofMap::new(mesh, cache.k)?;
    let n_int = dof_map.n_interior();
    let mut builder = SparseSymBuilder::new(n_int);
    let mut b = vec![0.0; n_int];
    let mut boundary_values = vec![0.0; dof_map.total()];
    for dof in 0..dof_map.total() {
        if dof_map.is_dirichlet(dof) {
            boundary_values[dof] = dirichlet(dof_map.position(dof));
        }
    }
    for (c, el) in cache.elements.iter().enumerate() {
        let kappa = field.value(c);
        let nd = el.ndof;
        let gdofs: Vec<usize> = el.dofs.iter().map(|d| dof_map.global_dof(d)).collect();
        let load = local_load(el, cache.k, f);
        for i in 0..nd {
            let gi = gdofs[i];
            match dof_map.interior_index(gi) {
                Some(ii) => {
                    b[ii] += load[i];
                    for j in 0..nd {
                        let gj = gdofs[j];
                        let kij = kappa * el.stiffness[i * nd + j];
                        match dof_map.interior_index(gj) {
                            Some(jj) => {
                                if jj >= ii {
                                    builder.add(ii, jj, kij);
                                }
                            }
                            None => {
                                b[ii] -= kij * boundary_values[gj];
                            }
                        }
                    }
                }
                None => continue,
            }
        }
    }
    Ok(GlobalSystem {
        a: builder.build(),
        b,
        dof_map,
        boundary_values,
    })
}

/// Interpolate a smooth function onto the dof vector (point values at vertex
/// and edge nodes, cell means for moment dofs).
pub fn interpolate_dofs(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    u: &dyn Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    let mut vals = vec![0.0; dof_map.total()];
    for v in 0..mesh.n_vertices() {
        vals[v] = u(mesh.vertex(v));
    }
    if dof_map.k == 2 {
        for e in 0..mesh.n_edges() {
            vals[mesh.n_vertices() + e] = u(dof_map.position(mesh.n_vertices() + e));
        }
        for c in 0..mesh.n_cells() {
            let poly = mesh.cell_polygon(c);
            vals[mesh.n_vertices() + mesh.n_edges() + c] =
                integrate(&poly, u) / mesh.cell_area(c);
        }
    }
    vals
}

/// Patch-test residual: solve with kappa = 1, Dirichlet data and load from a
/// manufactured solution, and return the max dof error against its
/// interpolant. For u in P_k this is zero up to roundoff.
pub fn patch_test_error(
    mesh: &PolygonalMesh,
    cache: &VemCache,
    u: &dyn Fn([f64; 2]) -> f64,
    f: &dyn Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let field = CoefficientField::constant(mesh.n_cells(), 1.0);
    let system = assemble_global(mesh, cache, &field, f, u)?;
    let x = system.solve_direct()?;
    let full = system.expand(&x);
    let exact = interpolate_dofs(mesh, &system.dof_map, u);
    Ok(full
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
