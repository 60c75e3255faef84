//! Local generalized eigenproblems on vertex neighborhoods, contrast-driven
//! mode selection, and the spectral coarse space built from partition-of-unity
//! weighted eigenfunctions.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decomposition::{cell_dof_ids, CoarseSkeleton};
use crate::error::{Error, Result};
use crate::linalg::{
    dense_generalized_eig, dense_generalized_eig_psd, sym_eig_full, DenseSymMatrix, FactorizedSpd,
    GeneralizedEig, SparseSymBuilder, SparseSymMatrix,
};
use crate::mesh::{CoefficientField, PolygonalMesh};
use crate::pu::{OverlapPu, PuFamily};
use crate::vem::{DofMap, VemCache};

/// Weight defining the mass side of the local eigenproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// kappa-weighted mass (the default adaptive choice)
    Kappa,
    /// H^2 sum of kappa-weighted squared partition-of-unity gradients
    MultiscaleKappaTilde,
    /// cut-off energy sum over overlap/coarse partition-of-unity products
    AbstractCutoff,
}

/// A vertex neighborhood omega_i as a submesh with its retained dofs (dofs on
/// the outer Dirichlet boundary are removed).
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub omega_idx: usize,
    pub cells: Vec<usize>,
    /// sorted global dof ids retained in the local problems
    pub dofs: Vec<usize>,
    pub dof_index: HashMap<usize, usize>,
    /// true when the neighborhood does not touch the domain boundary
    pub floating: bool,
}

pub fn build_neighborhood(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    skeleton: &CoarseSkeleton,
    omega_idx: usize,
) -> Result<Neighborhood> {
    let cells = skeleton.omega_cells[omega_idx].clone();
    let mut dofs = Vec::new();
    let mut seen = HashSet::new();
    let mut floating = true;
    for &c in &cells {
        for d in cell_dof_ids(mesh, dof_map, c) {
            if !seen.insert(d) {
                continue;
            }
            if dof_map.is_dirichlet(d) {
                floating = false;
            } else {
                dofs.push(d);
            }
        }
    }
    dofs.sort_unstable();
    let dof_index = dofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    Ok(Neighborhood {
        omega_idx,
        cells,
        dofs,
        dof_index,
        floating,
    })
}

/// kappa-weighted Neumann stiffness on the neighborhood: all retained dofs,
/// no elimination beyond the outer-boundary rows/columns.
pub fn assemble_neumann(
    mesh: &PolygonalMesh,
    cache: &VemCache,
    dof_map: &DofMap,
    field: &CoefficientField,
    nbhd: &Neighborhood,
) -> Result<SparseSymMatrix> {
    if !cells_connected(mesh, &nbhd.cells) {
        return Err(Error::InvalidNeighborhood(format!(
            "neighborhood {} is not edge-connected",
            nbhd.omega_idx
        )));
    }
    let n = nbhd.dofs.len();
    let mut builder = SparseSymBuilder::new(n);
    for &c in &nbhd.cells {
        let el = &cache.elements[c];
        let nd = el.ndof;
        let kappa = field.value(c);
        let gdofs: Vec<Option<&usize>> = el
            .dofs
            .iter()
            .map(|d| nbhd.dof_index.get(&dof_map.global_dof(d)))
            .collect();
        for i in 0..nd {
            if let Some(&ii) = gdofs[i] {
                for j in 0..nd {
                    if let Some(&jj) = gdofs[j] {
                        if jj >= ii {
                            builder.add(ii, jj, kappa * el.stiffness[i * nd + j]);
                        }
                    }
                }
            }
        }
    }
    Ok(builder.build())
}

fn cells_connected(mesh: &PolygonalMesh, cells: &[usize]) -> bool {
    if cells.is_empty() {
        return false;
    }
    let set: HashSet<usize> = cells.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(cells[0]);
    seen.insert(cells[0]);
    while let Some(c) = queue.pop_front() {
        for &nb in mesh.cell_neighbors(c) {
            if set.contains(&nb) && seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    seen.len() == cells.len()
}

/// Mass-side specification for `assemble_weighted_mass`.
pub enum MassWeight<'a> {
    Kappa,
    Multiscale {
        pu: &'a PuFamily,
        h_coarse: f64,
    },
    Abstract {
        pu: &'a PuFamily,
        xi: &'a OverlapPu,
        /// kappa-weighted Neumann stiffness of the same neighborhood
        stiffness: &'a SparseSymMatrix,
    },
}

impl MassWeight<'_> {
    pub fn mode(&self) -> WeightMode {
        match self {
            MassWeight::Kappa => WeightMode::Kappa,
            MassWeight::Multiscale { .. } => WeightMode::MultiscaleKappaTilde,
            MassWeight::Abstract { .. } => WeightMode::AbstractCutoff,
        }
    }
}

/// Per-cell weights kappa_tilde = H^2 sum_j kappa |grad chi_j|^2, with the
/// gradients taken from the energy projections of the partition of unity.
pub fn multiscale_cell_weights(
    cache: &VemCache,
    dof_map: &DofMap,
    field: &CoefficientField,
    pu: &PuFamily,
    cells: &[usize],
    h_coarse: f64,
) -> Vec<f64> {
    cells
        .iter()
        .map(|&c| {
            let el = &cache.elements[c];
            let mut sum = 0.0;
            for f in &pu.functions {
                if f.support_cells.binary_search(&c).is_err() {
                    continue;
                }
                let local: Vec<f64> = el
                    .dofs
                    .iter()
                    .map(|d| f.values[dof_map.global_dof(d)])
                    .collect();
                sum += el.mean_projected_gradient_sq(&local);
            }
            h_coarse * h_coarse * field.value(c) * sum
        })
        .collect()
}

/// Assemble the weighted mass matrix of the local eigenproblem.
pub fn assemble_weighted_mass(
    mesh: &PolygonalMesh,
    cache: &VemCache,
    dof_map: &DofMap,
    field: &CoefficientField,
    nbhd: &Neighborhood,
    weight: &MassWeight,
) -> Result<SparseSymMatrix> {
    let n = nbhd.dofs.len();
    match weight {
        MassWeight::Kappa | MassWeight::Multiscale { .. } => {
            let cell_weights: Vec<f64> = match weight {
                MassWeight::Kappa => nbhd.cells.iter().map(|&c| field.value(c)).collect(),
                MassWeight::Multiscale { pu, h_coarse } => {
                    multiscale_cell_weights(cache, dof_map, field, pu, &nbhd.cells, *h_coarse)
                }
                _ => unreachable!(),
            };
            let mut builder = SparseSymBuilder::new(n);
            for (ci, &c) in nbhd.cells.iter().enumerate() {
                let w = cell_weights[ci];
                if w == 0.0 {
                    continue;
                }
                let el = &cache.elements[c];
                let nd = el.ndof;
                let gdofs: Vec<Option<&usize>> = el
                    .dofs
                    .iter()
                    .map(|d| nbhd.dof_index.get(&dof_map.global_dof(d)))
                    .collect();
                for i in 0..nd {
                    if let Some(&ii) = gdofs[i] {
                        for j in 0..nd {
                            if let Some(&jj) = gdofs[j] {
                                if jj >= ii {
                                    builder.add(ii, jj, w * el.mass[i * nd + j]);
                                }
                            }
                        }
                    }
                }
            }
            let _ = mesh;
            Ok(builder.build())
        }
        MassWeight::Abstract { pu, xi, stiffness } => {
            // m(v, w) = sum_j a(xi_j chi_i v, xi_j chi_i w) with dof-wise
            // products: entrywise, M = A o (sum_j d_j d_j^T)
            if stiffness.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: stiffness.n(),
                });
            }
            let chi = &pu.functions[nbhd.omega_idx].values;
            let cuts: Vec<Vec<f64>> = xi
                .functions
                .iter()
                .map(|f| nbhd.dofs.iter().map(|&d| f[d] * chi[d]).collect())
                .collect();
            let mut builder = SparseSymBuilder::new(n);
            for r in 0..n {
                let (cols, vals) = stiffness.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    if c < r {
                        continue;
                    }
                    let mut s = 0.0;
                    for d in &cuts {
                        s += d[r] * d[c];
                    }
                    if s != 0.0 || r == c {
                        builder.add(r, c, v * s);
                    }
                }
            }
            Ok(builder.build())
        }
    }
}

/// Solve the local generalized eigenproblem for the lowest `count` pairs.
/// The kappa weight gives an SPD mass matrix; the other weights may be
/// semidefinite and are deflated spectrally.
pub fn solve_local_eig(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    mode: WeightMode,
    count: usize,
) -> Result<GeneralizedEig> {
    let ad = a.to_dense();
    let md = m.to_dense();
    match mode {
        WeightMode::Kappa => dense_generalized_eig(&ad, &md, count),
        WeightMode::MultiscaleKappaTilde | WeightMode::AbstractCutoff => {
            dense_generalized_eig_psd(&ad, &md, count, 1e-12)
        }
    }
}

/// Eigenpairs of one neighborhood with the adaptive selection applied.
#[derive(Debug, Clone)]
pub struct EigenSelection {
    pub omega_idx: usize,
    /// ascending eigenvalues (as many as were computed)
    pub eigenvalues: Vec<f64>,
    /// matching M-orthonormal eigenvectors on the neighborhood dofs
    pub vectors: Vec<Vec<f64>>,
    /// number of leading modes kept for the coarse space
    pub selected: usize,
    pub tau: f64,
    /// true when the L_max cap cut off eigenvalues below tau
    pub capped: bool,
    pub floating: bool,
    /// dimensions removed by mass deflation
    pub deflated: usize,
}

/// Keep all modes with eigenvalue below `tau` (capped at `l_max`); floating
/// neighborhoods always keep at least the constant mode.
pub fn select_modes(
    omega_idx: usize,
    eig: GeneralizedEig,
    floating: bool,
    tau: f64,
    l_max: usize,
) -> EigenSelection {
    let below = eig.eigenvalues.iter().take_while(|&&l| l < tau).count();
    let mut selected = below.min(l_max);
    let capped = below > l_max;
    if floating {
        selected = selected.max(1.min(eig.eigenvalues.len()));
    }
    EigenSelection {
        omega_idx,
        eigenvalues: eig.eigenvalues,
        vectors: eig.vectors,
        selected,
        tau,
        capped,
        floating,
        deflated: eig.deflated,
    }
}

/// Everything the coarse level needs from one neighborhood.
pub struct NeighborhoodEig {
    pub nbhd: Neighborhood,
    pub stiffness: SparseSymMatrix,
    /// kappa-weighted mass (used for the interpolation pairing)
    pub mass: SparseSymMatrix,
    pub selection: EigenSelection,
}

/// Columns Phi_{i,l} of the coarse space: dof-wise products chi_i * psi_l,
/// zero-extended, in (i, l) lexicographic order, over interior dofs.
#[derive(Debug, Clone)]
pub struct CoarseSpace {
    /// sparse columns: (interior dof index, value)
    pub columns: Vec<Vec<(usize, f64)>>,
    /// (omega_idx, ell) per column
    pub generators: Vec<(usize, usize)>,
}

impl CoarseSpace {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Non-adaptive baseline: one column per generator, the partition of
    /// unity itself restricted to interior dofs.
    pub fn from_pu(pu: &PuFamily, dof_map: &DofMap) -> Self {
        let mut columns = Vec::new();
        let mut generators = Vec::new();
        for f in &pu.functions {
            let mut col = Vec::new();
            for (d, &v) in f.values.iter().enumerate() {
                if v != 0.0 {
                    if let Some(ii) = dof_map.interior_index(d) {
                        col.push((ii, v));
                    }
                }
            }
            if !col.is_empty() {
                columns.push(col);
                generators.push((f.generator, 0));
            }
        }
        CoarseSpace {
            columns,
            generators,
        }
    }
}

pub fn build_coarse_basis(
    bundles: &[NeighborhoodEig],
    pu: &PuFamily,
    dof_map: &DofMap,
) -> CoarseSpace {
    let mut columns = Vec::new();
    let mut generators = Vec::new();
    for b in bundles {
        let chi = &pu.functions[b.nbhd.omega_idx].values;
        for ell in 0..b.selection.selected {
            let psi = &b.selection.vectors[ell];
            let mut col = Vec::with_capacity(b.nbhd.dofs.len());
            for (loc, &d) in b.nbhd.dofs.iter().enumerate() {
                let v = chi[d] * psi[loc];
                if v != 0.0 {
                    let ii = dof_map
                        .interior_index(d)
                        .expect("neighborhood dofs exclude the Dirichlet boundary");
                    col.push((ii, v));
                }
            }
            columns.push(col);
            generators.push((b.nbhd.omega_idx, ell));
        }
    }
    CoarseSpace {
        columns,
        generators,
    }
}

/// Coarse interpolation I_0 v = sum_i I^h(chi_i (I^omega_L v)) with local
/// projections through the kappa-weighted mass pairing. Input and output are
/// interior-dof vectors; the result has zero Dirichlet trace by construction.
pub fn coarse_interpolant(
    bundles: &[NeighborhoodEig],
    pu: &PuFamily,
    dof_map: &DofMap,
    v_interior: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; v_interior.len()];
    for b in bundles {
        let chi = &pu.functions[b.nbhd.omega_idx].values;
        let v_local: Vec<f64> = b
            .nbhd
            .dofs
            .iter()
            .map(|&d| v_interior[dof_map.interior_index(d).unwrap()])
            .collect();
        let mv = b.mass.spmv(&v_local).expect("dimension match");
        let mut w = vec![0.0; v_local.len()];
        for ell in 0..b.selection.selected {
            let psi = &b.selection.vectors[ell];
            let c: f64 = psi.iter().zip(&mv).map(|(p, m)| p * m).sum();
            for (wi, pi) in w.iter_mut().zip(psi) {
                *wi += c * pi;
            }
        }
        for (loc, &d) in b.nbhd.dofs.iter().enumerate() {
            out[dof_map.interior_index(d).unwrap()] += chi[d] * w[loc];
        }
    }
    out
}

/// Local projection I^omega_L v inside one neighborhood (kappa pairing).
pub fn local_projection(bundle: &NeighborhoodEig, v_local: &[f64]) -> Vec<f64> {
    let mv = bundle.mass.spmv(v_local).expect("dimension match");
    let mut w = vec![0.0; v_local.len()];
    for ell in 0..bundle.selection.selected {
        let psi = &bundle.selection.vectors[ell];
        let c: f64 = psi.iter().zip(&mv).map(|(p, m)| p * m).sum();
        for (wi, pi) in w.iter_mut().zip(psi) {
            *wi += c * pi;
        }
    }
    w
}

/// Result of the randomized snapshot eigensolve.
#[derive(Debug, Clone)]
pub struct SnapshotEig {
    /// ascending Rayleigh-Ritz eigenvalues in the snapshot space
    pub eigenvalues: Vec<f64>,
    /// Ritz vectors on the neighborhood dofs, M-orthonormal
    pub vectors: Vec<Vec<f64>>,
    /// snapshot-space dimension after orthonormalization
    pub dim: usize,
    /// true when near-duplicate snapshots were dropped
    pub rank_collapsed: bool,
}

impl SnapshotEig {
    /// View the Ritz pairs as a generalized-eigensolve result so the usual
    /// selection and basis machinery applies.
    pub fn into_generalized(self) -> GeneralizedEig {
        GeneralizedEig {
            eigenvalues: self.eigenvalues,
            vectors: self.vectors,
            deflated: 0,
        }
    }
}

/// Randomized snapshot space: M zero-mean random forcings, Neumann solves,
/// span augmented with the constant vector, then a Rayleigh-Ritz eigensolve
/// restricted to the snapshots.
pub fn gmsfem_snapshots(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    floating: bool,
    n_snapshots: usize,
    rng_seed: u64,
) -> Result<SnapshotEig> {
    let n = a.n();
    if n == 0 {
        return Err(Error::Contract("empty neighborhood".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(n_snapshots + 1);
    snapshots.push(vec![1.0; n]);
    if n_snapshots > 0 {
        // factor once: pin one dof for the floating (singular) case
        let solver: Box<dyn Fn(&[f64]) -> Vec<f64>> = if floating {
            let keep: Vec<usize> = (1..n).collect();
            let sub = a.submatrix(&keep);
            let f = FactorizedSpd::new(&sub)?;
            Box::new(move |b: &[f64]| {
                let reduced = f.solve(&b[1..]);
                let mut full = vec![0.0; b.len()];
                full[1..].copy_from_slice(&reduced);
                full
            })
        } else {
            let f = FactorizedSpd::new(a)?;
            Box::new(move |b: &[f64]| f.solve(b))
        };
        for _ in 0..n_snapshots {
            let mut b: Vec<f64> = (0..n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            // zero-mean forcing
            let mean: f64 = b.iter().sum::<f64>() / n as f64;
            for v in b.iter_mut() {
                *v -= mean;
            }
            snapshots.push(solver(&b));
        }
    }
    // M-orthonormalize (modified Gram-Schmidt), dropping collapsed directions
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut rank_collapsed = false;
    for mut s in snapshots {
        let ms0 = m.spmv(&s)?;
        let norm0: f64 = s.iter().zip(&ms0).map(|(x, y)| x * y).sum::<f64>().sqrt();
        for q in &basis {
            let mq = m.spmv(q)?;
            let c: f64 = s.iter().zip(&mq).map(|(x, y)| x * y).sum();
            for (si, qi) in s.iter_mut().zip(q) {
                *si -= c * qi;
            }
        }
        let ms = m.spmv(&s)?;
        let norm: f64 = s.iter().zip(&ms).map(|(x, y)| x * y).sum::<f64>().sqrt();
        if !(norm > 1e-8 * norm0.max(1e-300)) {
            rank_collapsed = true;
            continue;
        }
        for si in s.iter_mut() {
            *si /= norm;
        }
        basis.push(s);
    }
    let r = basis.len();
    // reduced problem W^T A W (W^T M W = I)
    let mut reduced = vec![0.0; r * r];
    let awk: Vec<Vec<f64>> = basis.iter().map(|w| a.spmv(w).unwrap()).collect();
    for i in 0..r {
        for j in 0..r {
            reduced[i * r + j] = basis[i].iter().zip(&awk[j]).map(|(x, y)| x * y).sum();
        }
    }
    let mut rm = DenseSymMatrix::from_raw(r, reduced);
    rm.symmetrize();
    let (vals, ys) = sym_eig_full(&rm)?;
    let vectors: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| {
            let mut v = vec![0.0; n];
            for (c, w) in y.iter().zip(&basis) {
                for (vi, wi) in v.iter_mut().zip(w) {
                    *vi += c * wi;
                }
            }
            v
        })
        .collect();
    Ok(SnapshotEig {
        eigenvalues: vals,
        vectors,
        dim: r,
        rank_collapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{extract_skeleton, partition_structured};
    use crate::mesh::{build_quadrilateral, build_triangular, InclusionSpec, Region};
    use crate::pu::{build_coarse_pu, ExtensionMode};

    struct Setup {
        mesh: PolygonalMesh,
        dof_map: DofMap,
        cache: VemCache,
        skeleton: CoarseSkeleton,
        pu: PuFamily,
        h_coarse: f64,
    }

    fn setup(n: usize, m: usize, k: usize) -> Setup {
        let mesh = build_triangular(n).unwrap();
        let dof_map = DofMap::new(&mesh, k).unwrap();
        let cache = VemCache::build(&mesh, k).unwrap();
        let partition = partition_structured(&mesh, m).unwrap();
        let skeleton = extract_skeleton(&mesh, &partition).unwrap();
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Harmonic,
        )
        .unwrap();
        let h_coarse = partition.h_coarse;
        Setup {
            mesh,
            dof_map,
            cache,
            skeleton,
            pu,
            h_coarse,
        }
    }

    fn interior_nbhd(s: &Setup) -> Neighborhood {
        let idx = s
            .skeleton
            .interior_generators()
            .first()
            .copied()
            .expect("interior generator");
        build_neighborhood(&s.mesh, &s.dof_map, &s.skeleton, idx).unwrap()
    }

    fn floating_nbhd(s: &Setup) -> Neighborhood {
        for idx in s.skeleton.interior_generators() {
            let n = build_neighborhood(&s.mesh, &s.dof_map, &s.skeleton, idx).unwrap();
            if n.floating {
                return n;
            }
        }
        panic!("no floating neighborhood in this setup")
    }

    #[test]
    fn floating_neumann_annihilates_constants() {
        let s = setup(16, 4, 1);
        let nbhd = floating_nbhd(&s);
        assert!(nbhd.floating);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &field, &nbhd).unwrap();
        let ones = vec![1.0; a.n()];
        let y = a.spmv(&ones).unwrap();
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-11 * a.norm_inf(), "A*1 norm {norm:e}");
    }

    #[test]
    fn boundary_neighborhood_is_spd() {
        let s = setup(8, 2, 1);
        // a boundary generator: any non-interior skeleton vertex
        let idx = (0..s.skeleton.vertices.len())
            .find(|&i| s.skeleton.vertices[i].on_boundary)
            .unwrap();
        let nbhd = build_neighborhood(&s.mesh, &s.dof_map, &s.skeleton, idx).unwrap();
        assert!(!nbhd.floating);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &field, &nbhd).unwrap();
        let vals = crate::linalg::sym_eigenvalues(&a.to_dense()).unwrap();
        assert!(vals[0] > 1e-10, "smallest eigenvalue {:e}", vals[0]);
    }

    #[test]
    fn kappa_scaling_doubles_energy() {
        let s = setup(8, 2, 1);
        let nbhd = interior_nbhd(&s);
        let f1 = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let f2 = CoefficientField::from_values(vec![2.0; s.mesh.n_cells()]).unwrap();
        let a1 = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &f1, &nbhd).unwrap();
        let a2 = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &f2, &nbhd).unwrap();
        let v: Vec<f64> = (0..a1.n()).map(|i| (i % 7) as f64 - 3.0).collect();
        assert!((a2.quad_form(&v) - 2.0 * a1.quad_form(&v)).abs() < 1e-9 * a2.quad_form(&v).abs());
    }

    #[test]
    fn kappa_mass_matches_l2_for_linears() {
        // single unit-square cell, k=1: v linear => v^T M v = integral of v^2
        let mesh = PolygonalMesh::from_raw(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![vec![0, 1, 2, 3]],
            None,
        )
        .unwrap();
        let cache = VemCache::build(&mesh, 1).unwrap();
        let el = &cache.elements[0];
        // v = x + 2y at the corners
        let v = [0.0, 1.0, 3.0, 2.0];
        let mut q = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                q += v[i] * el.mass[i * 4 + j] * v[j];
            }
        }
        // integral of (x + 2y)^2 over the unit square = 1/3 + 4/3 + 2*2*(1/4) = 8/3
        assert!((q - 8.0 / 3.0).abs() < 1e-12, "quadratic form {q}");
    }

    #[test]
    fn multiscale_weight_of_unit_slope_hat() {
        // chi with gradient magnitude 1/H everywhere on its support gives
        // kappa_tilde = H^2 / H^2 = 1
        let mesh = build_quadrilateral(8).unwrap();
        let dof_map = DofMap::new(&mesh, 1).unwrap();
        let cache = VemCache::build(&mesh, 1).unwrap();
        let field = CoefficientField::constant(mesh.n_cells(), 1.0);
        let h_coarse = 0.5;
        // synthetic PU: single function chi = x/H on x <= H, slope 1/H
        let mut values = vec![0.0; dof_map.total()];
        for v in 0..mesh.n_vertices() {
            let p = mesh.vertex(v);
            values[v] = (p[0] / h_coarse).min(1.0);
        }
        let support: Vec<usize> = (0..mesh.n_cells())
            .filter(|&c| mesh.cell_centroid(c)[0] < h_coarse)
            .collect();
        let pu = PuFamily {
            mode: ExtensionMode::Harmonic,
            functions: vec![crate::pu::PuFunction {
                generator: 0,
                values,
                support_cells: support.clone(),
            }],
            fallback_subdomains: vec![],
        };
        let w = multiscale_cell_weights(&cache, &dof_map, &field, &pu, &support, h_coarse);
        for (i, &wi) in w.iter().enumerate() {
            assert!((wi - 1.0).abs() < 1e-11, "cell {i}: weight {wi}");
        }
    }

    #[test]
    fn abstract_mass_equals_brute_force_on_toy() {
        let s = setup(4, 2, 1);
        let nbhd = interior_nbhd(&s);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &field, &nbhd).unwrap();
        let partition = partition_structured(&s.mesh, 2).unwrap();
        let overlap = crate::decomposition::extend_overlap(&s.mesh, &partition, 1).unwrap();
        let xi = crate::pu::build_overlap_pu(&s.mesh, &s.dof_map, &overlap).unwrap();
        let m = assemble_weighted_mass(
            &s.mesh,
            &s.cache,
            &s.dof_map,
            &field,
            &nbhd,
            &MassWeight::Abstract {
                pu: &s.pu,
                xi: &xi,
                stiffness: &a,
            },
        )
        .unwrap();
        // brute force: sum_j (diag d_j) A (diag d_j) densely
        let n = nbhd.dofs.len();
        let chi = &s.pu.functions[nbhd.omega_idx].values;
        let ad = a.to_dense();
        let mut brute = vec![0.0; n * n];
        for f in &xi.functions {
            let d: Vec<f64> = nbhd.dofs.iter().map(|&g| f[g] * chi[g]).collect();
            for r in 0..n {
                for c in 0..n {
                    brute[r * n + c] += d[r] * ad.get(r, c) * d[c];
                }
            }
        }
        let md = m.to_dense();
        for r in 0..n {
            for c in 0..n {
                assert!(
                    (md.get(r, c) - brute[r * n + c]).abs() < 1e-12,
                    "({r},{c}): {} vs {}",
                    md.get(r, c),
                    brute[r * n + c]
                );
            }
        }
    }

    #[test]
    fn unit_coefficient_spectrum_poincare_regime() {
        // kappa = 1 on a floating neighborhood: lambda_1 = 0 with constant
        // eigenvector, and exactly one eigenvalue below 1 at unit scale
        let s = setup(16, 4, 1);
        let nbhd = floating_nbhd(&s);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &field, &nbhd).unwrap();
        let m = assemble_weighted_mass(
            &s.mesh,
            &s.cache,
            &s.dof_map,
            &field,
            &nbhd,
            &MassWeight::Kappa,
        )
        .unwrap();
        let eig = solve_local_eig(&a, &m, WeightMode::Kappa, 10).unwrap();
        assert!(eig.eigenvalues[0].abs() < 1e-9);
        let psi = &eig.vectors[0];
        let dev = psi
            .iter()
            .map(|v| (v - psi[0]).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-7 * psi[0].abs(), "constant mode deviation {dev:e}");
        let below: usize = eig.eigenvalues.iter().filter(|&&l| l < 1.0).count();
        assert_eq!(below, 1, "eigenvalues {:?}", &eig.eigenvalues[..4]);
        let _ = s.h_coarse;
    }

    #[test]
    fn selection_rules() {
        let fake = |vals: Vec<f64>| GeneralizedEig {
            vectors: vals.iter().map(|_| vec![0.0]).collect(),
            eigenvalues: vals,
            deflated: 0,
        };
        let s = select_modes(0, fake(vec![0.0, 0.3, 5.0, 9.0]), true, 1.0, 12);
        assert_eq!(s.selected, 2);
        assert!(!s.capped);
        // cap binds
        let s = select_modes(0, fake(vec![0.1; 20]), true, 1.0, 12);
        assert_eq!(s.selected, 12);
        assert!(s.capped);
        // empty selection allowed on non-floating neighborhoods
        let s = select_modes(0, fake(vec![2.0, 3.0]), false, 1.0, 12);
        assert_eq!(s.selected, 0);
        // floating keeps the constant mode
        let s = select_modes(0, fake(vec![2.0, 3.0]), true, 1.0, 12);
        assert_eq!(s.selected, 1);
    }

    fn bundle_for(s: &Setup, nbhd: Neighborhood, field: &CoefficientField, count: usize) -> NeighborhoodEig {
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, field, &nbhd).unwrap();
        let m = assemble_weighted_mass(
            &s.mesh,
            &s.cache,
            &s.dof_map,
            field,
            &nbhd,
            &MassWeight::Kappa,
        )
        .unwrap();
        let eig = solve_local_eig(&a, &m, WeightMode::Kappa, count).unwrap();
        let floating = nbhd.floating;
        NeighborhoodEig {
            selection: select_modes(nbhd.omega_idx, eig, floating, 1.0, 12),
            nbhd,
            stiffness: a,
            mass: m,
        }
    }

    #[test]
    fn constant_mode_column_is_proportional_to_chi() {
        let s = setup(16, 4, 1);
        let nbhd = floating_nbhd(&s);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let b = bundle_for(&s, nbhd, &field, 6);
        let space = build_coarse_basis(std::slice::from_ref(&b), &s.pu, &s.dof_map);
        assert!(space.dim() >= 1);
        let chi = &s.pu.functions[b.nbhd.omega_idx].values;
        // psi_1 is constant: column = c * chi on the neighborhood dofs
        let psi0 = b.selection.vectors[0][0];
        for &(ii, v) in &space.columns[0] {
            let d = s.dof_map.interior_dofs()[ii];
            assert!(
                (v - chi[d] * psi0).abs() < 1e-9,
                "dof {d}: {v} vs {}",
                chi[d] * psi0
            );
        }
        // support containment
        let sup: HashSet<usize> = s.pu.functions[b.nbhd.omega_idx]
            .support_cells
            .iter()
            .flat_map(|&c| cell_dof_ids(&s.mesh, &s.dof_map, c))
            .collect();
        for &(ii, _) in &space.columns[0] {
            let d = s.dof_map.interior_dofs()[ii];
            assert!(sup.contains(&d));
        }
    }

    #[test]
    fn interpolant_is_projection_on_single_cover() {
        // one floating neighborhood covering everything with chi = 1: for v
        // in the span of the selected modes, I_0 v = v
        let s = setup(8, 2, 1);
        let nbhd = interior_nbhd(&s); // 2x2 partition: omega of center = whole domain
        assert_eq!(nbhd.cells.len(), s.mesh.n_cells());
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let mut b = bundle_for(&s, nbhd, &field, 8);
        b.selection.selected = 5;
        // synthetic chi = 1 everywhere
        let pu = PuFamily {
            mode: ExtensionMode::Harmonic,
            functions: vec![crate::pu::PuFunction {
                generator: 0,
                values: vec![1.0; s.dof_map.total()],
                support_cells: (0..s.mesh.n_cells()).collect(),
            }],
            fallback_subdomains: vec![],
        };
        let mut b0 = b;
        b0.nbhd.omega_idx = 0;
        b0.selection.omega_idx = 0;
        // v = combination of modes 0..5 mapped to interior dofs
        let n_int = s.dof_map.n_interior();
        let mut v = vec![0.0; n_int];
        for (ell, w) in [(0usize, 1.0), (2, -0.6), (4, 0.25)] {
            let psi = &b0.selection.vectors[ell];
            for (loc, &d) in b0.nbhd.dofs.iter().enumerate() {
                v[s.dof_map.interior_index(d).unwrap()] += w * psi[loc];
            }
        }
        let iv = coarse_interpolant(std::slice::from_ref(&b0), &pu, &s.dof_map, &v);
        for (a, b) in v.iter().zip(&iv) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn truncation_inequality_per_neighborhood() {
        let s = setup(16, 4, 1);
        let field = CoefficientField::constant(s.mesh.n_cells(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &g in s.skeleton.interior_generators().iter().take(3) {
            let nbhd = build_neighborhood(&s.mesh, &s.dof_map, &s.skeleton, g).unwrap();
            let b = bundle_for(&s, nbhd, &field, 14);
            let l = b.selection.selected;
            if l >= b.selection.eigenvalues.len() {
                continue;
            }
            let lam_next = b.selection.eigenvalues[l];
            for _ in 0..20 {
                let v: Vec<f64> = (0..b.nbhd.dofs.len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let w = local_projection(&b, &v);
                let diff: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
                let lhs = b.mass.quad_form(&diff);
                let rhs = b.stiffness.quad_form(&v) / lam_next;
                assert!(
                    lhs <= rhs * (1.0 + 1e-10) + 1e-12,
                    "generator {g}: {lhs} > {rhs}"
                );
            }
        }
    }

    #[test]
    fn snapshot_eigenvalues_interlace_full() {
        let s = setup(16, 4, 1);
        let nbhd = floating_nbhd(&s);
        // channels through the neighborhood drive a contrast cluster
        let spec = InclusionSpec {
            regions: vec![
                Region::Rect {
                    x0: 0.1,
                    y0: 0.30,
                    x1: 0.9,
                    y1: 0.37,
                },
                Region::Rect {
                    x0: 0.1,
                    y0: 0.60,
                    x1: 0.9,
                    y1: 0.67,
                },
            ],
        };
        let field = crate::mesh::paint_coefficient(&s.mesh, &spec, 1e6).unwrap();
        let a = assemble_neumann(&s.mesh, &s.cache, &s.dof_map, &field, &nbhd).unwrap();
        let m = assemble_weighted_mass(
            &s.mesh,
            &s.cache,
            &s.dof_map,
            &field,
            &nbhd,
            &MassWeight::Kappa,
        )
        .unwrap();
        let full = solve_local_eig(&a, &m, WeightMode::Kappa, 25).unwrap();
        let snap = gmsfem_snapshots(&a, &m, nbhd.floating, 20, 99).unwrap();
        for (l, (sv, fv)) in snap
            .eigenvalues
            .iter()
            .zip(&full.eigenvalues)
            .enumerate()
        {
            assert!(
                sv >= &(fv - 1e-9 * fv.abs().max(1.0)),
                "mode {l}: snapshot {sv} < full {fv}"
            );
        }
        // below-threshold counts agree for M = 20 snapshots
        let full_below = full.eigenvalues.iter().filter(|&&v| v < 1.0).count();
        let snap_below = snap.eigenvalues.iter().filter(|&&v| v < 1.0).count();
        assert_eq!(full_below, snap_below);
        // trivial snapshot space: constants only, single zero eigenvalue
        let snap0 = gmsfem_snapshots(&a, &m, nbhd.floating, 0, 1).unwrap();
        assert_eq!(snap0.dim, 1);
        assert!(snap0.eigenvalues[0].abs() < 1e-9);
    }
}
