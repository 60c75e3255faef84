use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{polygon_area, polygon_centroid, PolygonalMesh};

/// Structured right-triangle mesh: n x n squares, each split along its
/// rising diagonal. 2 n^2 cells, h = sqrt(2)/n.
pub fn build_triangular(n: usize) -> Result<PolygonalMesh> {
    if n == 0 {
        return Err(Error::Contract("cells-per-side must be >= 1".into()));
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push(vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
            cells.push(vec![vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    PolygonalMesh::from_raw(vertices, cells, Some(n))
}

/// Structured quadrilateral mesh: n x n unit-square cells.
pub fn build_quadrilateral(n: usize) -> Result<PolygonalMesh> {
    if n == 0 {
        return Err(Error::Contract("cells-per-side must be >= 1".into()));
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push(vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    PolygonalMesh::from_raw(vertices, cells, Some(n))
}

/// Regular hexagonal tiling clipped to the unit square; boundary cells become
/// pentagons/quads. The lattice density is adjusted iteratively so the final
/// cell count lands within 5% of `target_cells`.
pub fn build_hexagonal(target_cells: usize) -> Result<PolygonalMesh> {
    if target_cells == 0 {
        return Err(Error::Contract("target cell count must be >= 1".into()));
    }
    // area of a regular hexagon with circumradius s is (3 sqrt(3)/2) s^2
    let mut s = (2.0 / (3.0 * 3.0f64.sqrt() * target_cells as f64)).sqrt();
    s = s.min(0.9); // keep at least one full tile for tiny targets
    let mut best: Option<PolygonalMesh> = None;
    let mut best_err = usize::MAX;
    for _ in 0..8 {
        let mesh = hex_tiling(s)?;
        let err = mesh.n_cells().abs_diff(target_cells);
        if err < best_err {
            best_err = err;
            best = Some(mesh);
        }
        if 20 * err <= target_cells {
            break;
        }
        let count = best.as_ref().unwrap().n_cells().max(1);
        s *= (count as f64 / target_cells as f64).sqrt();
    }
    let mesh = best.unwrap();
    // counts are quantized in steps of ~2 sqrt(n) (whole rows/columns), so
    // small targets get an absolute allowance on top of the 5%
    let allowed = (target_cells as f64 * 0.05).max(2.0 * (target_cells as f64).sqrt() + 4.0);
    if mesh.n_cells().abs_diff(target_cells) as f64 > allowed {
        return Err(Error::InvalidMesh(format!(
            "hexagonal tiling produced {} cells for target {}",
            mesh.n_cells(),
            target_cells
        )));
    }
    Ok(mesh)
}

fn hex_tiling(s: f64) -> Result<PolygonalMesh> {
    // flat-top hexagons: column spacing 1.5 s, row spacing sqrt(3) s, odd
    // columns shifted half a row. Generic offsets avoid clip degeneracies.
    let row_h = 3.0f64.sqrt() * s;
    let x0 = -0.271828 * s;
    let y0 = -0.314159 * row_h;
    let n_cols = ((1.0 - x0) / (1.5 * s)).ceil() as i64 + 1;
    let n_rows = ((1.0 - y0) / row_h).ceil() as i64 + 1;
    let mut welder = VertexWelder::new(1e-9);
    let mut cells = Vec::new();
    for col in 0..=n_cols {
        for row in -1..=n_rows {
            let cx = x0 + col as f64 * 1.5 * s;
            let cy = y0 + row as f64 * row_h + if col % 2 == 1 { 0.5 * row_h } else { 0.0 };
            let hexagon: Vec<[f64; 2]> = (0..6)
                .map(|k| {
                    let ang = std::f64::consts::PI / 3.0 * k as f64;
                    [cx + s * ang.cos(), cy + s * ang.sin()]
                })
                .collect();
            let clipped = clip_to_unit_square(&hexagon);
            if clipped.len() >= 3 && polygon_area(&clipped) > 1e-12 {
                let ids: Vec<usize> = clipped.iter().map(|&p| welder.insert(p)).collect();
                let mut dedup = Vec::with_capacity(ids.len());
                for id in ids {
                    if dedup.last() != Some(&id) {
                        dedup.push(id);
                    }
                }
                if dedup.first() == dedup.last() && dedup.len() > 1 {
                    dedup.pop();
                }
                if dedup.len() >= 3 {
                    cells.push(dedup);
                }
            }
        }
    }
    PolygonalMesh::from_raw(welder.vertices, cells, None)
}

/// Clipped Voronoi mesh of `seed_count` pseudo-random generators after
/// `lloyd_iterations` centroid relaxations. Deterministic for a fixed seed.
pub fn build_voronoi(
    seed_count: usize,
    lloyd_iterations: usize,
    rng_seed: u64,
) -> Result<PolygonalMesh> {
    if seed_count == 0 {
        return Err(Error::Contract("seed count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds: Vec<[f64; 2]> = (0..seed_count)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    build_voronoi_from_seeds(&seeds, lloyd_iterations)
}

/// Clipped Voronoi mesh from explicit generators.
pub fn build_voronoi_from_seeds(seeds: &[[f64; 2]], lloyd_iterations: usize) -> Result<PolygonalMesh> {
    if seeds.is_empty() {
        return Err(Error::Contract("seed count must be >= 1".into()));
    }
    let mut pts = seeds.to_vec();
    for _ in 0..lloyd_iterations {
        let cells = voronoi_cells(&pts)?;
        pts = cells.iter().map(|poly| polygon_centroid(poly)).collect();
    }
    // duplicate check after relaxation
    let mut dups = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d2 = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
            if d2 < 1e-24 {
                dups.push(i);
                dups.push(j);
            }
        }
    }
    if !dups.is_empty() {
        dups.sort_unstable();
        dups.dedup();
        return Err(Error::DuplicateSeeds(dups));
    }
    let polys = voronoi_cells(&pts)?;

    let mut welder = VertexWelder::new(1e-9);
    let mut raw_cells: Vec<Vec<usize>> = Vec::with_capacity(polys.len());
    for poly in &polys {
        let ids: Vec<usize> = poly.iter().map(|&p| welder.insert(p)).collect();
        raw_cells.push(ids);
    }
    // collapse edges much shorter than the weld tolerance allows to detect
    // consistently (near-cocircular generators)
    let collapse_tol = 1e-8;
    let mut repr: Vec<usize> = (0..welder.vertices.len()).collect();
    fn find(repr: &mut Vec<usize>, i: usize) -> usize {
        if repr[i] != i {
            let r = find(repr, repr[i]);
            repr[i] = r;
            r
        } else {
            i
        }
    }
    for cell in &raw_cells {
        for k in 0..cell.len() {
            let a = cell[k];
            let b = cell[(k + 1) % cell.len()];
            let pa = welder.vertices[a];
            let pb = welder.vertices[b];
            let d2 = (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2);
            if d2 < collapse_tol * collapse_tol {
                let (ra, rb) = (find(&mut repr, a), find(&mut repr, b));
                if ra != rb {
                    repr[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut cells = Vec::with_capacity(raw_cells.len());
    for ids in raw_cells {
        let mapped: Vec<usize> = ids.iter().map(|&v| find(&mut repr, v)).collect();
        let mut dedup = Vec::with_capacity(mapped.len());
        for id in mapped {
            if dedup.last() != Some(&id) {
                dedup.push(id);
            }
        }
        if dedup.first() == dedup.last() && dedup.len() > 1 {
            dedup.pop();
        }
        if dedup.len() < 3 {
            return Err(Error::InvalidMesh(
                "Voronoi cell collapsed during degeneracy cleanup".into(),
            ));
        }
        cells.push(dedup);
    }
    // drop unreferenced vertices, renumber densely
    let mut used = vec![false; welder.vertices.len()];
    for cell in &cells {
        for &v in cell {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; welder.vertices.len()];
    let mut vertices = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            remap[i] = vertices.len();
            vertices.push(welder.vertices[i]);
        }
    }
    for cell in cells.iter_mut() {
        for v in cell.iter_mut() {
            *v = remap[*v];
        }
    }
    PolygonalMesh::from_raw(vertices, cells, None)
}

/// Voronoi cell polygons clipped to the unit square, one per seed, by
/// half-plane cuts against nearby generators (grid-accelerated search).
fn voronoi_cells(seeds: &[[f64; 2]]) -> Result<Vec<Vec<[f64; 2]>>> {
    let n = seeds.len();
    let nb = (n as f64).sqrt().ceil() as usize;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); nb * nb];
    let bucket = |p: [f64; 2]| -> (usize, usize) {
        let bx = ((p[0].clamp(0.0, 1.0)) * nb as f64) as usize;
        let by = ((p[1].clamp(0.0, 1.0)) * nb as f64) as usize;
        (bx.min(nb - 1), by.min(nb - 1))
    };
    for (i, &p) in seeds.iter().enumerate() {
        let (bx, by) = bucket(p);
        grid[by * nb + bx].push(i);
    }
    let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let p = seeds[i];
        let mut radius = 3.0 / nb as f64;
        let poly = loop {
            // gather candidates within radius, sorted by distance
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let (bx, by) = bucket(p);
            let reach = (radius * nb as f64).ceil() as isize + 1;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let gx = bx as isize + dx;
                    let gy = by as isize + dy;
                    if gx < 0 || gy < 0 || gx >= nb as isize || gy >= nb as isize {
                        continue;
                    }
                    for &j in &grid[gy as usize * nb + gx as usize] {
                        if j != i {
                            let q = seeds[j];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                            if d2 <= radius * radius {
                                cand.push((d2, j));
                            }
                        }
                    }
                }
            }
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut poly = square.clone();
            for &(_, j) in &cand {
                poly = clip_halfplane_bisector(&poly, p, seeds[j]);
                if poly.len() < 3 {
                    break;
                }
            }
            if poly.len() < 3 {
                return Err(Error::InvalidMesh(format!(
                    "Voronoi cell of seed {i} vanished"
                )));
            }
            // safe when no unseen generator (outside radius) can cut the cell:
            // any cutter within distance 2*max_vertex_dist must be a candidate
            let max_d = poly
                .iter()
                .map(|v| ((v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            if 2.0 * max_d <= radius || radius > 3.0 {
                break poly;
            }
            radius *= 2.0;
        };
        out.push(poly);
    }
    Ok(out)
}

/// Keep the side of the bisector closer to `p` (Sutherland-Hodgman).
fn clip_halfplane_bisector(poly: &[[f64; 2]], p: [f64; 2], q: [f64; 2]) -> Vec<[f64; 2]> {
    let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    let nrm = [q[0] - p[0], q[1] - p[1]];
    let side = |x: [f64; 2]| (x[0] - mid[0]) * nrm[0] + (x[1] - mid[1]) * nrm[1];
    clip_by(poly, side)
}

fn clip_to_unit_square(poly: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = poly.to_vec();
    out = clip_by(&out, |p| -p[0]);
    out = clip_by(&out, |p| p[0] - 1.0);
    out = clip_by(&out, |p| -p[1]);
    out = clip_by(&out, |p| p[1] - 1.0);
    out
}

/// Clip polygon to {x : side(x) <= 0}.
fn clip_by(poly: &[[f64; 2]], side: impl Fn([f64; 2]) -> f64) -> Vec<[f64; 2]> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        let sa = side(a);
        let sb = side(b);
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Merges coincident vertices with a 3x3-bucket quantized lookup.
struct VertexWelder {
    tol: f64,
    map: std::collections::HashMap<(i64, i64), Vec<usize>>,
    vertices: Vec<[f64; 2]>,
}

impl VertexWelder {
    fn new(tol: f64) -> Self {
        VertexWelder {
            tol,
            map: std::collections::HashMap::new(),
            vertices: Vec::new(),
        }
    }

    fn insert(&mut self, p: [f64; 2]) -> usize {
        // snap near-boundary coordinates onto the boundary exactly
        let snap = |v: f64| {
            if v.abs() < self.tol {
                0.0
            } else if (v - 1.0).abs() < self.tol {
                1.0
            } else {
                v
            }
        };
        let p = [snap(p[0]), snap(p[1])];
        let kx = (p[0] / self.tol).round() as i64;
        let ky = (p[1] / self.tol).round() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.map.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        let q = self.vertices[id];
                        if (q[0] - p[0]).abs() <= self.tol && (q[1] - p[1]).abs() <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.vertices.len();
        self.vertices.push(p);
        self.map.entry((kx, ky)).or_default().push(id);
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_smallest() {
        let m = build_triangular(1).unwrap();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert!((m.h() - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn triangular_80_gives_12800_cells() {
        let m = build_triangular(80).unwrap();
        assert_eq!(m.n_cells(), 12800);
        assert!((m.h() - 2.0f64.sqrt() / 80.0).abs() < 1e-15);
    }

    #[test]
    fn triangular_interior_edges_have_two_neighbors() {
        let m = build_triangular(2).unwrap();
        assert_eq!(m.n_cells(), 8);
        for ei in 0..m.n_edges() {
            let e = m.edge(ei);
            match e.cells.len() {
                1 => assert!(m.is_boundary_edge(ei)),
                2 => assert!(!m.is_boundary_edge(ei)),
                k => panic!("edge with {k} cells"),
            }
        }
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn hexagonal_reaches_target_count() {
        let m = build_hexagonal(9699).unwrap();
        let c = m.n_cells();
        assert!((9214..=10184).contains(&c), "count {c}");
        assert!((m.total_area() - 1.0).abs() < 1e-10);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn hexagonal_tiny_target_still_covers_domain() {
        let m = build_hexagonal(1).unwrap();
        assert!(m.n_cells() >= 1);
        assert!((m.total_area() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hexagonal_interior_cells_have_120_degree_angles() {
        let m = build_hexagonal(400).unwrap();
        let mut checked = 0;
        for c in 0..m.n_cells() {
            let poly = m.cell_polygon(c);
            if poly.len() != 6 {
                continue;
            }
            // skip clipped hexagons that touch the boundary
            if poly
                .iter()
                .any(|p| p[0] < 1e-9 || p[0] > 1.0 - 1e-9 || p[1] < 1e-9 || p[1] > 1.0 - 1e-9)
            {
                continue;
            }
            checked += 1;
            for k in 0..6 {
                let a = poly[(k + 5) % 6];
                let b = poly[k];
                let c2 = poly[(k + 1) % 6];
                let u = [a[0] - b[0], a[1] - b[1]];
                let v = [c2[0] - b[0], c2[1] - b[1]];
                let cosang = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                let ang = cosang.clamp(-1.0, 1.0).acos();
                assert!(
                    (ang - 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-9,
                    "angle {ang}"
                );
            }
        }
        assert!(checked > 100, "only {checked} interior hexagons");
    }

    #[test]
    fn voronoi_single_seed_is_unit_square() {
        let m = build_voronoi_from_seeds(&[[0.4, 0.6]], 0).unwrap();
        assert_eq!(m.n_cells(), 1);
        assert!((m.cell_area(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn voronoi_four_symmetric_seeds() {
        let seeds = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];
        let m = build_voronoi_from_seeds(&seeds, 2).unwrap();
        assert_eq!(m.n_cells(), 4);
        for c in 0..4 {
            assert!((m.cell_area(c) - 0.25).abs() < 1e-12);
            assert_eq!(m.cell(c).len(), 4);
        }
    }

    #[test]
    fn voronoi_random_seeds_conforming() {
        let m = build_voronoi(500, 2, 7).unwrap();
        assert_eq!(m.n_cells(), 500);
        assert!((m.total_area() - 1.0).abs() < 1e-10);
        assert_eq!(m.euler_characteristic(), 1);
        // determinism
        let m2 = build_voronoi(500, 2, 7).unwrap();
        assert_eq!(m.n_vertices(), m2.n_vertices());
        assert_eq!(m.vertices(), m2.vertices());
    }

    #[test]
    fn voronoi_duplicate_seeds_rejected() {
        let seeds = [[0.5, 0.5], [0.5, 0.5], [0.2, 0.2]];
        match build_voronoi_from_seeds(&seeds, 0) {
            Err(Error::DuplicateSeeds(idx)) => assert_eq!(idx, vec![0, 1]),
            other => panic!("expected DuplicateSeeds, got {other:?}"),
        }
    }
}
