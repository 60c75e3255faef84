//! Per-cell virtual element matrices of degree k in {1, 2}.
//!
//! The energy projector onto P_k is computed from boundary degrees of freedom
//! (plus the cell mean for k = 2) via integration by parts. The local
//! bilinear form is the usual consistency + dof-value stabilization pair, and
//! every matrix here is for kappa = 1; the per-cell coefficient scales them
//! at assembly time.

use crate::error::{Error, Result};
use crate::mesh::{polygon_area, polygon_centroid, polygon_diameter, PolygonalMesh};

use super::quadrature::polygon_quadrature;

/// Scaled monomial basis of P_k on a cell: ((x-xc)/h)^a ((y-yc)/h)^b.
#[derive(Debug, Clone, Copy)]
pub struct Monomials {
    pub centroid: [f64; 2],
    pub diameter: f64,
    pub count: usize,
}

const EXPONENTS: [(i32, i32); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];

impl Monomials {
    pub fn new(centroid: [f64; 2], diameter: f64, k: usize) -> Self {
        Monomials {
            centroid,
            diameter,
            count: (k + 1) * (k + 2) / 2,
        }
    }

    #[inline]
    pub fn eval(&self, alpha: usize, p: [f64; 2]) -> f64 {
        let (ax, ay) = EXPONENTS[alpha];
        let x = (p[0] - self.centroid[0]) / self.diameter;
        let y = (p[1] - self.centroid[1]) / self.diameter;
        x.powi(ax) * y.powi(ay)
    }

    #[inline]
    pub fn grad(&self, alpha: usize, p: [f64; 2]) -> [f64; 2] {
        let (ax, ay) = EXPONENTS[alpha];
        let x = (p[0] - self.centroid[0]) / self.diameter;
        let y = (p[1] - self.centroid[1]) / self.diameter;
        let gx = if ax == 0 {
            0.0
        } else {
            ax as f64 * x.powi(ax - 1) * y.powi(ay) / self.diameter
        };
        let gy = if ay == 0 {
            0.0
        } else {
            ay as f64 * x.powi(ax) * y.powi(ay - 1) / self.diameter
        };
        [gx, gy]
    }

    /// Laplacian (constant for k <= 2).
    #[inline]
    pub fn laplacian(&self, alpha: usize) -> f64 {
        match EXPONENTS[alpha] {
            (2, 0) | (0, 2) => 2.0 / (self.diameter * self.diameter),
            _ => 0.0,
        }
    }
}

/// Local degree of freedom of a cell, in canonical order: vertex values,
/// edge-node values (k = 2, at the single interior Gauss-Lobatto node per
/// edge, i.e. the midpoint), then the cell mean (k = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellDof {
    Vertex(usize),
    /// mesh edge id
    Edge(usize),
    /// cell id (mean moment)
    Cell(usize),
}

/// Everything assembled per cell (for unit coefficient).
#[derive(Debug, Clone)]
pub struct LocalElement {
    pub cell: usize,
    pub dofs: Vec<CellDof>,
    /// dof positions; the moment dof carries the centroid
    pub dof_positions: Vec<[f64; 2]>,
    /// ndof x ndof consistency + stabilization, kappa = 1
    pub stiffness: Vec<f64>,
    /// ndof x ndof L2-mass surrogate, kappa = 1
    pub mass: Vec<f64>,
    /// N_k x ndof energy-projector coefficients in the scaled monomial basis
    pub projector: Vec<f64>,
    pub monomials: Monomials,
    pub area: f64,
    pub ndof: usize,
    /// cached cell quadrature rule
    pub quad_cache: Vec<super::quadrature::QuadPoint>,
}

impl LocalElement {
    /// Projection of a dof vector onto P_k: monomial coefficients.
    pub fn project(&self, local_values: &[f64]) -> Vec<f64> {
        let nk = self.monomials.count;
        let nd = self.ndof;
        (0..nk)
            .map(|a| {
                (0..nd)
                    .map(|i| self.projector[a * nd + i] * local_values[i])
                    .sum()
            })
            .collect()
    }

    /// Gradient of the projected polynomial at a point.
    pub fn projected_gradient(&self, local_values: &[f64], p: [f64; 2]) -> [f64; 2] {
        let coeffs = self.project(local_values);
        let mut g = [0.0, 0.0];
        for (a, c) in coeffs.iter().enumerate() {
            let ga = self.monomials.grad(a, p);
            g[0] += c * ga[0];
            g[1] += c * ga[1];
        }
        g
    }

    /// Mean of |grad (projection)|^2 over the cell.
    pub fn mean_projected_gradient_sq(&self, local_values: &[f64]) -> f64 {
        let coeffs = self.project(local_values);
        let mut acc = 0.0;
        for q in &self.quad_cache {
            let mut g = [0.0, 0.0];
            for (a, c) in coeffs.iter().enumerate() {
                let ga = self.monomials.grad(a, q.x);
                g[0] += c * ga[0];
                g[1] += c * ga[1];
            }
            acc += q.w * (g[0] * g[0] + g[1] * g[1]);
        }
        acc / self.area
    }
}

pub fn build_local_element(mesh: &PolygonalMesh, cell: usize, k: usize) -> Result<LocalElement> {
    if !(k == 1 || k == 2) {
        return Err(Error::Contract(format!("VEM degree must be 1 or 2, got {k}")));
    }
    let poly = mesh.cell_polygon(cell);
    let nv = poly.len();
    let area = polygon_area(&poly);
    if area < 1e-14 {
        return Err(Error::InvalidMesh(format!(
            "cell {cell} is degenerate (area {area:e})"
        )));
    }
    let centroid = polygon_centroid(&poly);
    let diameter = polygon_diameter(&poly);
    let mono = Monomials::new(centroid, diameter, k);
    let nk = mono.count;

    // local dof list
    let mut dofs: Vec<CellDof> = mesh.cell(cell).iter().map(|&v| CellDof::Vertex(v)).collect();
    let mut dof_positions: Vec<[f64; 2]> = poly.clone();
    if k == 2 {
        for (s, &eid) in mesh.cell_edge_ids(cell).iter().enumerate() {
            dofs.push(CellDof::Edge(eid));
            let a = poly[s];
            let b = poly[(s + 1) % nv];
            dof_positions.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        dofs.push(CellDof::Cell(cell));
        dof_positions.push(centroid);
    }
    let ndof = dofs.len();

    let quad = polygon_quadrature(&poly);

    // D[i][alpha] = dof_i(m_alpha)
    let mut dmat = vec![0.0; ndof * nk];
    for (i, &pos) in dof_positions.iter().enumerate() {
        let is_moment = matches!(dofs[i], CellDof::Cell(_));
        for a in 0..nk {
            dmat[i * nk + a] = if is_moment {
                quad.iter().map(|q| q.w * mono.eval(a, q.x)).sum::<f64>() / area
            } else {
                mono.eval(a, pos)
            };
        }
    }

    // B[alpha][i]
    let mut bmat = vec![0.0; nk * ndof];
    if k == 1 {
        for i in 0..nv {
            bmat[i] = 1.0 / nv as f64;
        }
    } else {
        bmat[ndof - 1] = 1.0; // P0 = cell mean = moment dof
    }
    // boundary term per side with Gauss-Lobatto weights matching the dofs
    for s in 0..nv {
        let a = poly[s];
        let b = poly[(s + 1) % nv];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        // outward normal of a CCW loop
        let normal = [(b[1] - a[1]) / len, (a[0] - b[0]) / len];
        // nodes on this side: (local dof index, position, weight)
        let mut nodes: Vec<(usize, [f64; 2], f64)> = Vec::with_capacity(3);
        if k == 1 {
            nodes.push((s, a, 0.5 * len));
            nodes.push(((s + 1) % nv, b, 0.5 * len));
        } else {
            nodes.push((s, a, len / 6.0));
            nodes.push(((s + 1) % nv, b, len / 6.0));
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            nodes.push((nv + s, mid, 4.0 * len / 6.0));
        }
        for alpha in 1..nk {
            for &(i, pos, w) in &nodes {
                let g = mono.grad(alpha, pos);
                bmat[alpha * ndof + i] += w * (g[0] * normal[0] + g[1] * normal[1]);
            }
        }
    }
    // interior term for k = 2: -int Delta m_alpha * phi_i hits the moment dof
    if k == 2 {
        for alpha in 1..nk {
            bmat[alpha * ndof + (ndof - 1)] -= mono.laplacian(alpha) * area;
        }
    }

    // G = B D
    let mut g = vec![0.0; nk * nk];
    for a in 0..nk {
        for b2 in 0..nk {
            let mut s = 0.0;
            for i in 0..ndof {
                s += bmat[a * ndof + i] * dmat[i * nk + b2];
            }
            g[a * nk + b2] = s;
        }
    }

    // projector Pi* = G^{-1} B
    let projector = solve_multi(&g, nk, &bmat, ndof)?;

    // consistency: Pi*^T Gt Pi*, with Gt = G minus its P0 row
    let mut gt = g.clone();
    for b2 in 0..nk {
        gt[b2] = 0.0;
    }
    let mut gp = vec![0.0; nk * ndof]; // Gt * Pi*
    for a in 0..nk {
        for i in 0..ndof {
            let mut s = 0.0;
            for c in 0..nk {
                s += gt[a * nk + c] * projector[c * ndof + i];
            }
            gp[a * ndof + i] = s;
        }
    }
    let mut stiffness = vec![0.0; ndof * ndof];
    for i in 0..ndof {
        for j in 0..ndof {
            let mut s = 0.0;
            for a in 0..nk {
                s += projector[a * ndof + i] * gp[a * ndof + j];
            }
            stiffness[i * ndof + j] = s;
        }
    }

    // dof-value stabilization (I - D Pi*)^T (I - D Pi*)
    let mut pi_dof = vec![0.0; ndof * ndof];
    for i in 0..ndof {
        for j in 0..ndof {
            let mut s = 0.0;
            for a in 0..nk {
                s += dmat[i * nk + a] * projector[a * ndof + j];
            }
            pi_dof[i * ndof + j] = s;
        }
    }
    let mut imp = pi_dof;
    for i in 0..ndof {
        for j in 0..ndof {
            let id = if i == j { 1.0 } else { 0.0 };
            imp[i * ndof + j] = id - imp[i * ndof + j];
        }
    }
    let mut stab = vec![0.0; ndof * ndof];
    for i in 0..ndof {
        for j in 0..ndof {
            let mut s = 0.0;
            for r in 0..ndof {
                s += imp[r * ndof + i] * imp[r * ndof + j];
            }
            stab[i * ndof + j] = s;
        }
    }
    for i in 0..ndof * ndof {
        stiffness[i] += stab[i];
    }

    // mass surrogate: Pi*^T H Pi* + |E| (I-Pi)^T(I-Pi)
    let mut hmat = vec![0.0; nk * nk];
    for a in 0..nk {
        for b2 in a..nk {
            let s: f64 = quad
                .iter()
                .map(|q| q.w * mono.eval(a, q.x) * mono.eval(b2, q.x))
                .sum();
            hmat[a * nk + b2] = s;
            hmat[b2 * nk + a] = s;
        }
    }
    let mut hp = vec![0.0; nk * ndof];
    for a in 0..nk {
        for i in 0..ndof {
            let mut s = 0.0;
            for c in 0..nk {
                s += hmat[a * nk + c] * projector[c * ndof + i];
            }
            hp[a * ndof + i] = s;
        }
    }
    let mut mass = vec![0.0; ndof * ndof];
    for i in 0..ndof {
        for j in 0..ndof {
            let mut s = 0.0;
            for a in 0..nk {
                s += projector[a * ndof + i] * hp[a * ndof + j];
            }
            mass[i * ndof + j] = s + area * stab[i * ndof + j];
        }
    }

    Ok(LocalElement {
        cell,
        dofs,
        dof_positions,
        stiffness,
        mass,
        projector,
        monomials: mono,
        area,
        ndof,
        quad_cache: quad,
    })
}

/// Load contributions for the cell: degree-1 uses the vertex-average
/// projector, degree-2 integrates f against the projected basis functions.
pub fn local_load(elem: &LocalElement, k: usize, f: &dyn Fn([f64; 2]) -> f64) -> Vec<f64> {
    let quad = &elem.quad_cache;
    if k == 1 {
        let int_f: f64 = quad.iter().map(|q| q.w * f(q.x)).sum();
        let nv = elem.ndof;
        vec![int_f / nv as f64; nv]
    } else {
        let nk = elem.monomials.count;
        let nd = elem.ndof;
        // moments of f against each monomial
        let fm: Vec<f64> = (0..nk)
            .map(|a| quad.iter().map(|q| q.w * f(q.x) * elem.monomials.eval(a, q.x)).sum())
            .collect();
        (0..nd)
            .map(|i| (0..nk).map(|a| elem.projector[a * nd + i] * fm[a]).sum())
            .collect()
    }
}

/// Gaussian elimination with partial pivoting for the small projector system
/// G X = B with B given row-major (n x m). Returns X row-major (n x m).
fn solve_multi(g: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut a = g.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return Err(Error::InvalidMesh(
                "singular projector system (degenerate cell geometry)".into(),
            ));
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            for c in 0..m {
                x.swap(col * m + c, piv * m + c);
            }
        }
        let d = a[col * n + col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            for c in 0..m {
                x[r * m + c] -= factor * x[col * m + c];
            }
        }
    }
    for r in 0..n {
        let d = a[r * n + r];
        for c in 0..m {
            x[r * m + c] /= d;
        }
    }
    Ok(x)
}
