//! Coarse partition of unity {chi_i} on the subdomain skeleton (linear edge
//! profiles extended into subdomain interiors, discretely harmonic or by
//! polynomial least squares) and the overlap partition of unity {xi_j}
//! subordinate to the extended subdomains.

use std::collections::{HashMap, HashSet};

use crate::decomposition::{
    cell_dof_ids, CoarseSkeleton, NonOverlappingPartition, OverlappingPartition,
};
use crate::error::{Error, Result};
use crate::linalg::{FactorizedSpd, SparseSymBuilder};
use crate::mesh::PolygonalMesh;
use crate::vem::{integrate, DofMap, VemCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionMode {
    /// interior values solve the unit-coefficient Laplace problem
    Harmonic,
    /// interior values come from a boundary least-squares polynomial fit of
    /// the given degree (2 or 3)
    Polynomial(usize),
}

/// One coarse partition-of-unity function chi_i.
#[derive(Debug, Clone)]
pub struct PuFunction {
    /// skeleton vertex index of the generator y_i
    pub generator: usize,
    /// values on every dof (zero outside omega_i)
    pub values: Vec<f64>,
    /// cells of omega_i
    pub support_cells: Vec<usize>,
}

/// The family {chi_i}, one function per skeleton vertex.
#[derive(Debug, Clone)]
pub struct PuFamily {
    pub mode: ExtensionMode,
    pub functions: Vec<PuFunction>,
    /// subdomains where a rank-deficient polynomial fit fell back to the
    /// harmonic extension
    pub fallback_subdomains: Vec<usize>,
}

impl PuFamily {
    /// Pointwise sum over generators at a dof.
    pub fn sum_at(&self, dof: usize) -> f64 {
        self.functions.iter().map(|f| f.values[dof]).sum()
    }
}

/// Values of chi_i on the skeleton chains: a projected-arclength linear
/// profile between the chain endpoints, clamped to [0, 1].
///
/// The direction convention makes chi_i(y_i) = 1 and chi_i(y_j) = 0; the two
/// endpoint generators share one profile evaluation per dof, so their values
/// sum to 1 up to a final rounding.
pub fn edge_values(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    skeleton: &CoarseSkeleton,
    generator: usize,
) -> Result<HashMap<usize, f64>> {
    if generator >= skeleton.vertices.len() {
        return Err(Error::Contract(format!(
            "generator {generator} out of range"
        )));
    }
    let mut out = HashMap::new();
    for (i, v) in skeleton.vertices.iter().enumerate() {
        out.insert(v.fine_vertex, if i == generator { 1.0 } else { 0.0 });
    }
    for chain in &skeleton.edges {
        let a = chain.ends[0];
        let b = chain.ends[1];
        if a != generator && b != generator {
            // zero on chains not ending at the generator
            for &v in &chain.through {
                out.insert(v, 0.0);
            }
            if dof_map.k == 2 {
                for &e in &chain.fine_edges {
                    out.insert(mesh.n_vertices() + e, 0.0);
                }
            }
            continue;
        }
        let (own, other) = if a == generator { (a, b) } else { (b, a) };
        let ya = mesh.vertex(skeleton.vertices[own].fine_vertex);
        let yb = mesh.vertex(skeleton.vertices[other].fine_vertex);
        let dx = [ya[0] - yb[0], ya[1] - yb[1]];
        let len = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
        if len == 0.0 {
            return Err(Error::Contract(
                "skeleton edge of zero length between coincident vertices".into(),
            ));
        }
        let profile = |p: [f64; 2]| -> f64 {
            let t = ((p[0] - yb[0]) * dx[0] + (p[1] - yb[1]) * dx[1]) / (len * len);
            t.clamp(0.0, 1.0)
        };
        for &v in &chain.through {
            out.insert(v, profile(mesh.vertex(v)));
        }
        if dof_map.k == 2 {
            for &e in &chain.fine_edges {
                let d = mesh.n_vertices() + e;
                out.insert(d, profile(dof_map.position(d)));
            }
        }
    }
    Ok(out)
}

/// Build the full coarse partition of unity for a skeleton.
pub fn build_coarse_pu(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    cache: &VemCache,
    partition: &NonOverlappingPartition,
    skeleton: &CoarseSkeleton,
    mode: ExtensionMode,
) -> Result<PuFamily> {
    if let ExtensionMode::Polynomial(kp) = mode {
        if !(2..=3).contains(&kp) {
            return Err(Error::Contract(format!(
                "polynomial extension degree must be 2 or 3, got {kp}"
            )));
        }
    }
    let n_gen = skeleton.vertices.len();
    let total = dof_map.total();

    // skeleton dof values per generator, paired so endpoint profiles sum to 1
    let mut boundary_data: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n_gen];
    for (i, v) in skeleton.vertices.iter().enumerate() {
        for (j, f) in boundary_data.iter_mut().enumerate() {
            f.insert(v.fine_vertex, if i == j { 1.0 } else { 0.0 });
        }
    }
    for chain in &skeleton.edges {
        let [a, b] = chain.ends;
        let ya = mesh.vertex(skeleton.vertices[a].fine_vertex);
        let yb = mesh.vertex(skeleton.vertices[b].fine_vertex);
        let dx = [ya[0] - yb[0], ya[1] - yb[1]];
        let len2 = dx[0] * dx[0] + dx[1] * dx[1];
        if len2 == 0.0 {
            return Err(Error::Contract(
                "skeleton edge of zero length between coincident vertices".into(),
            ));
        }
        let mut assign = |dof: usize, p: [f64; 2]| {
            let t = (((p[0] - yb[0]) * dx[0] + (p[1] - yb[1]) * dx[1]) / len2).clamp(0.0, 1.0);
            boundary_data[a].insert(dof, t);
            boundary_data[b].insert(dof, 1.0 - t);
            for (g, f) in boundary_data.iter_mut().enumerate() {
                if g != a && g != b {
                    f.insert(dof, 0.0);
                }
            }
        };
        for &v in &chain.through {
            assign(v, mesh.vertex(v));
        }
        if dof_map.k == 2 {
            for &e in &chain.fine_edges {
                let d = mesh.n_vertices() + e;
                assign(d, dof_map.position(d));
            }
        }
    }

    let mut values: Vec<Vec<f64>> = vec![vec![0.0; total]; n_gen];
    for (g, data) in boundary_data.iter().enumerate() {
        for (&dof, &v) in data {
            values[g][dof] = v;
        }
    }

    // per-subdomain interior extension
    let mut fallback_subdomains = Vec::new();
    for s in 0..partition.n_parts {
        let cells = &partition.part_cells[s];
        let inside: HashSet<usize> = cells.iter().copied().collect();
        let mut interior: Vec<usize> = Vec::new();
        let mut boundary: Vec<usize> = Vec::new();
        let mut seen = HashSet::new();
        for &c in cells {
            for d in cell_dof_ids(mesh, dof_map, c) {
                if !seen.insert(d) {
                    continue;
                }
                let is_bnd = dof_map.is_dirichlet(d)
                    || dof_map
                        .incident_cells(mesh, d)
                        .iter()
                        .any(|cc| !inside.contains(cc));
                if is_bnd {
                    boundary.push(d);
                } else {
                    interior.push(d);
                }
            }
        }
        interior.sort_unstable();
        boundary.sort_unstable();
        if interior.is_empty() {
            continue;
        }
        let generators: Vec<usize> = (0..n_gen)
            .filter(|&g| skeleton.vertices[g].parts.contains(&s))
            .collect();

        let mut use_harmonic = matches!(mode, ExtensionMode::Harmonic);
        if let ExtensionMode::Polynomial(kp) = mode {
            match polynomial_extension(
                mesh, dof_map, cache, cells, &interior, &boundary, &generators, &values, kp,
            ) {
                Ok(updates) => {
                    for (g, vals) in updates {
                        for (dof, v) in vals {
                            values[g][dof] = v;
                        }
                    }
                }
                Err(_) => {
                    fallback_subdomains.push(s);
                    use_harmonic = true;
                }
            }
        }
        if use_harmonic {
            harmonic_extension(dof_map, cache, cells, &interior, &boundary, &generators, &mut values)?;
        }
    }

    let functions = (0..n_gen)
        .map(|g| PuFunction {
            generator: g,
            values: std::mem::take(&mut values[g]),
            support_cells: skeleton.omega_cells[g].clone(),
        })
        .collect();
    Ok(PuFamily {
        mode,
        functions,
        fallback_subdomains,
    })
}

/// Discrete harmonic extension: one unit-coefficient factorization per
/// subdomain, one solve per supported generator.
fn harmonic_extension(
    dof_map: &DofMap,
    cache: &VemCache,
    cells: &[usize],
    interior: &[usize],
    boundary: &[usize],
    generators: &[usize],
    values: &mut [Vec<f64>],
) -> Result<()> {
    let int_index: HashMap<usize, usize> =
        interior.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let bnd_index: HashMap<usize, usize> =
        boundary.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let ni = interior.len();
    let mut builder = SparseSymBuilder::new(ni);
    // coupling rows: interior x boundary, kept as triplets
    let mut coupling: Vec<(usize, usize, f64)> = Vec::new();
    for &c in cells {
        let el = &cache.elements[c];
        let nd = el.ndof;
        let gdofs: Vec<usize> = el.dofs.iter().map(|d| dof_map.global_dof(d)).collect();
        for i in 0..nd {
            if let Some(&ii) = int_index.get(&gdofs[i]) {
                for j in 0..nd {
                    let kij = el.stiffness[i * nd + j];
                    if let Some(&jj) = int_index.get(&gdofs[j]) {
                        if jj >= ii {
                            builder.add(ii, jj, kij);
                        }
                    } else if let Some(&bj) = bnd_index.get(&gdofs[j]) {
                        coupling.push((ii, bj, kij));
                    }
                }
            }
        }
    }
    let factor = FactorizedSpd::new(&builder.build())?;
    for &g in generators {
        let mut rhs = vec![0.0; ni];
        for &(ii, bj, kij) in &coupling {
            let gb = values[g][boundary[bj]];
            if gb != 0.0 {
                rhs[ii] -= kij * gb;
            }
        }
        let x = factor.solve(&rhs);
        for (i, &d) in interior.iter().enumerate() {
            values[g][d] = x[i];
        }
    }
    Ok(())
}

type GeneratorUpdates = Vec<(usize, Vec<(usize, f64)>)>;

/// Boundary least-squares polynomial fit of degree kp, weighted by the
/// arclength share of each boundary dof. Errors on a rank-deficient normal
/// matrix so the caller can fall back to the harmonic extension.
#[allow(clippy::too_many_arguments)]
fn polynomial_extension(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    cache: &VemCache,
    cells: &[usize],
    interior: &[usize],
    boundary: &[usize],
    generators: &[usize],
    values: &[Vec<f64>],
    kp: usize,
) -> Result<GeneratorUpdates> {
    // scaled monomial basis on the subdomain bounding box
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &c in cells {
        for &v in mesh.cell(c) {
            let p = mesh.vertex(v);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let scale = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt().max(1e-12);
    let exps: Vec<(i32, i32)> = (0..=kp as i32)
        .flat_map(|d| (0..=d).map(move |ay| (d - ay, ay)))
        .collect();
    let m = exps.len();
    let eval = |p: [f64; 2], e: (i32, i32)| -> f64 {
        ((p[0] - center[0]) / scale).powi(e.0) * ((p[1] - center[1]) / scale).powi(e.1)
    };

    // arclength weights: Gauss-Lobatto share of the incident boundary fine edges
    let inside: HashSet<usize> = cells.iter().copied().collect();
    let mut weight: HashMap<usize, f64> = HashMap::new();
    for ei in 0..mesh.n_edges() {
        let e = mesh.edge(ei);
        let touches: Vec<bool> = e.cells.iter().map(|c| inside.contains(c)).collect();
        let on_sub_boundary = if e.cells.len() == 1 {
            touches[0]
        } else {
            touches[0] != touches[1]
        };
        if !on_sub_boundary {
            continue;
        }
        let pa = mesh.vertex(e.a);
        let pb = mesh.vertex(e.b);
        let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
        if dof_map.k == 1 {
            *weight.entry(e.a).or_insert(0.0) += 0.5 * len;
            *weight.entry(e.b).or_insert(0.0) += 0.5 * len;
        } else {
            *weight.entry(e.a).or_insert(0.0) += len / 6.0;
            *weight.entry(e.b).or_insert(0.0) += len / 6.0;
            *weight.entry(mesh.n_vertices() + ei).or_insert(0.0) += 4.0 * len / 6.0;
        }
    }

    // normal matrix from weighted boundary samples
    let mut normal = vec![0.0; m * m];
    for &d in boundary {
        let w = *weight.get(&d).unwrap_or(&0.0);
        if w == 0.0 {
            continue;
        }
        let p = dof_map.position(d);
        let phi: Vec<f64> = exps.iter().map(|&e| eval(p, e)).collect();
        for i in 0..m {
            for j in 0..m {
                normal[i * m + j] += w * phi[i] * phi[j];
            }
        }
    }
    let nm = crate::linalg::DenseSymMatrix::from_raw(m, normal);
    let chol = crate::linalg::DenseCholesky::new(&nm)
        .map_err(|_| Error::Contract("rank-deficient polynomial boundary fit".into()))?;

    let mut out = Vec::new();
    for &g in generators {
        let mut rhs = vec![0.0; m];
        for &d in boundary {
            let w = *weight.get(&d).unwrap_or(&0.0);
            if w == 0.0 {
                continue;
            }
            let gb = values[g][d];
            if gb == 0.0 {
                continue;
            }
            let p = dof_map.position(d);
            for (i, &e) in exps.iter().enumerate() {
                rhs[i] += w * gb * eval(p, e);
            }
        }
        let coeff = chol.solve(&rhs);
        let poly = |p: [f64; 2]| -> f64 {
            exps.iter()
                .enumerate()
                .map(|(i, &e)| coeff[i] * eval(p, e))
                .sum()
        };
        let mut updates = Vec::with_capacity(interior.len());
        for &d in interior {
            let v = if dof_map.k == 2 && d >= mesh.n_vertices() + mesh.n_edges() {
                // moment dof: cell mean of the polynomial
                let c = d - mesh.n_vertices() - mesh.n_edges();
                integrate(&mesh.cell_polygon(c), poly) / cache.elements[c].area
            } else {
                poly(dof_map.position(d))
            };
            updates.push((d, v));
        }
        out.push((g, updates));
    }
    Ok(out)
}

/// Overlap partition of unity {xi_j}: weight 1 on D_j, linear decay across
/// the breadth-first overlap layers, normalized so the family sums to 1
/// exactly at every dof.
pub struct OverlapPu {
    /// per subdomain: values on every dof (zero outside D_j')
    pub functions: Vec<Vec<f64>>,
}

pub fn build_overlap_pu(
    mesh: &PolygonalMesh,
    dof_map: &DofMap,
    overlap: &OverlappingPartition,
) -> Result<OverlapPu> {
    let n_parts = overlap.cells_ext.len();
    let total = dof_map.total();
    let mut functions = vec![vec![0.0; total]; n_parts];
    let denom = (overlap.layers + 1) as f64;
    // covering parts per dof, ordered by part index
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); total];
    for p in 0..n_parts {
        let mut touched = HashSet::new();
        for &c in &overlap.cells_ext[p] {
            for d in cell_dof_ids(mesh, dof_map, c) {
                if touched.insert(d) {
                    owners[d].push(p);
                }
            }
        }
    }
    for d in 0..total {
        if owners[d].is_empty() {
            return Err(Error::Contract(format!(
                "dof {d} is covered by no overlapped subdomain"
            )));
        }
        let w: Vec<f64> = owners[d]
            .iter()
            .map(|&p| {
                let l = overlap
                    .dof_layer(mesh, dof_map, p, d)
                    .expect("owner without layer");
                1.0 - l as f64 / denom
            })
            .collect();
        let s: f64 = w.iter().sum();
        let mut acc = 0.0;
        for (i, &p) in owners[d].iter().enumerate() {
            let xi = if i + 1 == owners[d].len() {
                1.0 - acc // exact unit sum
            } else {
                let v = w[i] / s;
                acc += v;
                v
            };
            functions[p][d] = xi;
        }
    }
    Ok(OverlapPu { functions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{
        extend_overlap, extract_skeleton, partition_graph, partition_structured,
    };
    use crate::mesh::build_triangular;

    fn setup(
        n: usize,
        parts: Parts,
    ) -> (
        PolygonalMesh,
        DofMap,
        VemCache,
        NonOverlappingPartition,
        CoarseSkeleton,
    ) {
        let mesh = build_triangular(n).unwrap();
        let dof_map = DofMap::new(&mesh, 1).unwrap();
        let cache = VemCache::build(&mesh, 1).unwrap();
        let partition = match parts {
            Parts::Structured(m) => partition_structured(&mesh, m).unwrap(),
            Parts::Graph(np, seed) => partition_graph(&mesh, np, seed).unwrap(),
        };
        let skeleton = extract_skeleton(&mesh, &partition).unwrap();
        (mesh, dof_map, cache, partition, skeleton)
    }

    enum Parts {
        Structured(usize),
        Graph(usize, u64),
    }

    #[test]
    fn edge_profile_matches_hand_value() {
        // straight edge y_i = (0,0), y_j = (1,0): a point projecting at 0.25
        // from y_j gives chi_i = 0.75; clamping pins overshoots to 1
        let ya = [0.0, 0.0];
        let yb = [1.0, 0.0];
        let dx = [ya[0] - yb[0], ya[1] - yb[1]];
        let len2 = dx[0] * dx[0] + dx[1] * dx[1];
        let t = |p: [f64; 2]| (((p[0] - yb[0]) * dx[0] + (p[1] - yb[1]) * dx[1]) / len2).clamp(0.0, 1.0);
        assert!((t([0.25, 0.05]) - 0.75).abs() < 1e-15);
        assert_eq!(t([-0.5, 0.1]), 1.0); // beyond y_i
        assert_eq!(t([1.5, 0.1]), 0.0); // beyond y_j
    }

    #[test]
    fn endpoint_profiles_sum_to_one_on_zigzag() {
        let (mesh, dof_map, _cache, _p, skeleton) = setup(12, Parts::Graph(4, 1));
        for chain in &skeleton.edges {
            let va = edge_values(&mesh, &dof_map, &skeleton, chain.ends[0]).unwrap();
            let vb = edge_values(&mesh, &dof_map, &skeleton, chain.ends[1]).unwrap();
            for &v in &chain.through {
                let s = va[&v] + vb[&v];
                assert!((s - 1.0).abs() < 1e-12, "sum {s}");
            }
        }
    }

    #[test]
    fn harmonic_constant_data_extends_to_one() {
        let (mesh, dof_map, cache, partition, skeleton) = setup(8, Parts::Structured(2));
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Harmonic,
        )
        .unwrap();
        for d in 0..dof_map.total() {
            let s = pu.sum_at(d);
            assert!((s - 1.0).abs() < 1e-12, "dof {d}: sum {s}");
        }
    }

    #[test]
    fn harmonic_respects_maximum_principle() {
        let (mesh, dof_map, cache, partition, skeleton) = setup(12, Parts::Graph(4, 0));
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Harmonic,
        )
        .unwrap();
        for f in &pu.functions {
            for &v in &f.values {
                assert!(v >= -1e-12 && v <= 1.0 + 1e-12, "value {v}");
            }
        }
    }

    #[test]
    fn support_license_containment() {
        let (mesh, dof_map, cache, partition, skeleton) = setup(12, Parts::Graph(4, 2));
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Harmonic,
        )
        .unwrap();
        for f in &pu.functions {
            let support: HashSet<usize> = f
                .support_cells
                .iter()
                .flat_map(|&c| cell_dof_ids(&mesh, &dof_map, c))
                .collect();
            for (d, &v) in f.values.iter().enumerate() {
                if v != 0.0 {
                    assert!(support.contains(&d), "generator {} leaks at dof {d}", f.generator);
                }
            }
        }
    }

    #[test]
    fn metis_4_subdomain_case_has_10_generators_in_unit_range() {
        // 4 irregular subdomains: generators = interior junctions plus
        // boundary hits; all nodal values stay in [0, 1] for harmonic mode
        let (mesh, dof_map, cache, partition, skeleton) = setup(16, Parts::Graph(4, 5));
        let interior = skeleton.interior_generators().len();
        assert!(interior >= 1, "no interior junction");
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Harmonic,
        )
        .unwrap();
        assert_eq!(pu.functions.len(), skeleton.vertices.len());
        for f in &pu.functions {
            for &v in &f.values {
                assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn polynomial_mode_sums_to_one_but_can_overshoot() {
        let (mesh, dof_map, cache, partition, skeleton) = setup(16, Parts::Graph(4, 5));
        let pu = build_coarse_pu(
            &mesh,
            &dof_map,
            &cache,
            &partition,
            &skeleton,
            ExtensionMode::Polynomial(2),
        )
        .unwrap();
        assert!(pu.fallback_subdomains.is_empty());
        for d in 0..dof_map.total() {
            let s = pu.sum_at(d);
            assert!((s - 1.0).abs() < 1e-10, "dof {d}: sum {s}");
        }
    }

    #[test]
    fn polynomial_reproduces_polynomial_boundary_data() {
        // overwrite one generator's boundary data with an exact quadratic and
        // check the fit returns it
        let (mesh, dof_map, cache, partition, _skeleton) = setup(8, Parts::Structured(2));
        let q = |p: [f64; 2]| 0.3 + 0.5 * p[0] - 0.2 * p[1] + 0.7 * p[0] * p[1];
        let s = 0usize;
        let cells = &partition.part_cells[s];
        let inside: HashSet<usize> = cells.iter().copied().collect();
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut seen = HashSet::new();
        for &c in cells {
            for d in cell_dof_ids(&mesh, &dof_map, c) {
                if seen.insert(d) {
                    if dof_map.is_dirichlet(d)
                        || dof_map.incident_cells(&mesh, d).iter().any(|cc| !inside.contains(cc))
                    {
                        boundary.push(d);
                    } else {
                        interior.push(d);
                    }
                }
            }
        }
        interior.sort_unstable();
        boundary.sort_unstable();
        let mut vals = vec![vec![0.0; dof_map.total()]];
        for &d in &boundary {
            vals[0][d] = q(dof_map.position(d));
        }
        let updates = polynomial_extension(
            &mesh, &dof_map, &cache, cells, &interior, &boundary, &[0], &vals, 2,
        )
        .unwrap();
        for (_, list) in updates {
            for (d, v) in list {
                let want = q(dof_map.position(d));
                assert!((v - want).abs() < 1e-10, "dof {d}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn overlap_pu_properties() {
        let mesh = build_triangular(16).unwrap();
        let dof_map = DofMap::new(&mesh, 1).unwrap();
        let partition = partition_structured(&mesh, 4).unwrap();
        let overlap = extend_overlap(&mesh, &partition, 1).unwrap();
        let xi = build_overlap_pu(&mesh, &dof_map, &overlap).unwrap();
        // exact unit sums
        for d in 0..dof_map.total() {
            let s: f64 = xi.functions.iter().map(|f| f[d]).sum();
            assert_eq!(s, 1.0, "dof {d}");
        }
        // single-owner dofs carry weight 1 (deep interior of a subdomain)
        let deep = xi.functions[5]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .count();
        assert!(deep > 0);
        // support containment
        for (p, f) in xi.functions.iter().enumerate() {
            let support: HashSet<usize> = overlap.cells_ext[p]
                .iter()
                .flat_map(|&c| cell_dof_ids(&mesh, &dof_map, c))
                .collect();
            for (d, &v) in f.iter().enumerate() {
                if v != 0.0 {
                    assert!(support.contains(&d), "xi_{p} leaks at dof {d}");
                }
            }
        }
    }

    #[test]
    fn overlap_pu_symmetric_midpoint() {
        // two-subdomain split: dofs equidistant in the overlap get 0.5 each
        let mesh = build_triangular(8).unwrap();
        let dof_map = DofMap::new(&mesh, 1).unwrap();
        let partition = partition_structured(&mesh, 2).unwrap();
        let overlap = extend_overlap(&mesh, &partition, 1).unwrap();
        let xi = build_overlap_pu(&mesh, &dof_map, &overlap).unwrap();
        // the vertical interface x = 0.5 between parts 0 and 1 at y < 0.5
        let mut found = 0;
        for v in 0..mesh.n_vertices() {
            let p = mesh.vertex(v);
            if (p[0] - 0.5).abs() < 1e-12 && p[1] > 0.15 && p[1] < 0.35 {
                let a = xi.functions[0][v];
                let b = xi.functions[1][v];
                assert!((a - 0.5).abs() < 1e-12 && (b - 0.5).abs() < 1e-12, "{a} {b}");
                found += 1;
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn gradient_bound_structured_squares() {
        // harmonic-mode coarse PU on structured squares: cellwise projected
        // gradients stay within C/H with a modest constant across refinements
        for n in [8usize, 16, 32] {
            let m = 4;
            let (mesh, dof_map, cache, partition, skeleton) = setup(n, Parts::Structured(m));
            let pu = build_coarse_pu(
                &mesh, &dof_map, &cache, &partition, &skeleton, ExtensionMode::Harmonic,
            )
            .unwrap();
            let h_coarse = 1.0 / m as f64;
            let mut max_grad: f64 = 0.0;
            for f in &pu.functions {
                for &c in &f.support_cells {
                    let el = &cache.elements[c];
                    let local: Vec<f64> = el
                        .dofs
                        .iter()
                        .map(|d| f.values[dof_map.global_dof(d)])
                        .collect();
                    let g = el.mean_projected_gradient_sq(&local).sqrt();
                    max_grad = max_grad.max(g);
                }
            }
            let c_measured = max_grad * h_coarse;
            assert!(c_measured <= 4.0, "n={n}: C = {c_measured}");
        }
    }
}
