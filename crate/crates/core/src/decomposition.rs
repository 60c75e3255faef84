//! Non-overlapping subdomain partitions (structured or graph-based), their
//! layer-extended overlapping versions, and the coarse skeleton: subdomain
//! vertices, interface/boundary chains, and vertex neighborhoods.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::PolygonalMesh;
use crate::vem::DofMap;

/// Partition of the mesh cells into connected subdomains.
#[derive(Debug, Clone)]
pub struct NonOverlappingPartition {
    pub n_parts: usize,
    /// cell -> subdomain id
    pub cell_part: Vec<usize>,
    /// per subdomain: sorted cell list
    pub part_cells: Vec<Vec<usize>>,
    /// max subdomain diameter
    pub h_coarse: f64,
}

impl NonOverlappingPartition {
    fn finish(mesh: &PolygonalMesh, cell_part: Vec<usize>, n_parts: usize) -> Result<Self> {
        let mut part_cells = vec![Vec::new(); n_parts];
        for (c, &p) in cell_part.iter().enumerate() {
            if p >= n_parts {
                return Err(Error::InvalidPartition(format!(
                    "cell {c} assigned to part {p} of {n_parts}"
                )));
            }
            part_cells[p].push(c);
        }
        for (p, cells) in part_cells.iter().enumerate() {
            if cells.is_empty() {
                return Err(Error::InvalidPartition(format!("subdomain {p} is empty")));
            }
            if !cells_connected(mesh, cells) {
                return Err(Error::InvalidPartition(format!(
                    "subdomain {p} is not edge-connected"
                )));
            }
        }
        let h_coarse = part_cells
            .iter()
            .map(|cells| part_diameter(mesh, cells))
            .fold(0.0, f64::max);
        Ok(NonOverlappingPartition {
            n_parts,
            cell_part,
            part_cells,
            h_coarse,
        })
    }

    /// Subdomains adjacent (by shared fine edge) to the given one.
    pub fn neighbors(&self, mesh: &PolygonalMesh, part: usize) -> Vec<usize> {
        let mut out = std::collections::BTreeSet::new();
        for &c in &self.part_cells[part] {
            for &nb in mesh.cell_neighbors(c) {
                if self.cell_part[nb] != part {
                    out.insert(self.cell_part[nb]);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Balance factor: max part size over average part size.
    pub fn balance(&self) -> f64 {
        let avg = self.cell_part.len() as f64 / self.n_parts as f64;
        let max = self.part_cells.iter().map(|c| c.len()).max().unwrap_or(0);
        max as f64 / avg
    }
}

fn part_diameter(mesh: &PolygonalMesh, cells: &[usize]) -> f64 {
    // bounding-box diagonal, a tight proxy for the diameter
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
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
}

fn cells_connected(mesh: &PolygonalMesh, cells: &[usize]) -> bool {
    if cells.is_empty() {
        return false;
    }
    let set: HashSet<usize> = cells.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
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

/// m x m square subdomains of a structured mesh (cells binned by centroid);
/// requires m to divide the cells-per-side count.
pub fn partition_structured(mesh: &PolygonalMesh, m: usize) -> Result<NonOverlappingPartition> {
    if m == 0 {
        return Err(Error::Contract("subdomains-per-side must be >= 1".into()));
    }
    let n = mesh.grid_n().ok_or_else(|| {
        Error::InvalidPartition("structured partitioning requires a structured mesh".into())
    })?;
    if n % m != 0 {
        return Err(Error::InvalidPartition(format!(
            "{m} subdomains per side do not divide {n} cells per side"
        )));
    }
    let cell_part: Vec<usize> = (0..mesh.n_cells())
        .map(|c| {
            let cen = mesh.cell_centroid(c);
            let ix = ((cen[0] * m as f64).floor() as usize).min(m - 1);
            let iy = ((cen[1] * m as f64).floor() as usize).min(m - 1);
            iy * m + ix
        })
        .collect();
    let mut p = NonOverlappingPartition::finish(mesh, cell_part, m * m)?;
    p.h_coarse = 1.0 / m as f64;
    Ok(p)
}

/// Build a partition from an explicit cell -> subdomain map.
pub fn partition_from_cell_map(
    mesh: &PolygonalMesh,
    cell_part: Vec<usize>,
) -> Result<NonOverlappingPartition> {
    if cell_part.len() != mesh.n_cells() {
        return Err(Error::InvalidPartition(format!(
            "cell map has {} entries for {} cells",
            cell_part.len(),
            mesh.n_cells()
        )));
    }
    let n_parts = cell_part.iter().copied().max().map_or(0, |m| m + 1);
    NonOverlappingPartition::finish(mesh, cell_part, n_parts)
}

/// Multilevel graph partitioning of the cell-adjacency graph: heavy-edge
/// matching coarsening, recursive bisection, and boundary Kernighan-Lin
/// refinement, followed by a connectivity repair pass. Deterministic for a
/// fixed seed; parts are balanced within 10%.
pub fn partition_graph(
    mesh: &PolygonalMesh,
    n_parts: usize,
    rng_seed: u64,
) -> Result<NonOverlappingPartition> {
    if n_parts == 0 {
        return Err(Error::Contract("number of parts must be >= 1".into()));
    }
    if n_parts > mesh.n_cells() {
        return Err(Error::InvalidPartition(format!(
            "{n_parts} parts requested for {} cells",
            mesh.n_cells()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let graph = Graph {
        adj: (0..mesh.n_cells())
            .map(|c| {
                mesh.cell_neighbors(c)
                    .iter()
                    .map(|&nb| (nb, 1.0))
                    .collect()
            })
            .collect(),
        vwgt: vec![1.0; mesh.n_cells()],
    };
    let nodes: Vec<usize> = (0..mesh.n_cells()).collect();
    let mut cell_part = vec![0usize; mesh.n_cells()];
    recursive_bisect(&graph, &nodes, n_parts, 0, &mut cell_part, &mut rng);
    repair_connectivity(mesh, &mut cell_part, n_parts);
    rebalance(mesh, &mut cell_part, n_parts);
    NonOverlappingPartition::finish(mesh, cell_part, n_parts)
}

struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    vwgt: Vec<f64>,
}

fn recursive_bisect(
    graph: &Graph,
    nodes: &[usize],
    n_parts: usize,
    first_part: usize,
    out: &mut [usize],
    rng: &mut ChaCha8Rng,
) {
    if n_parts == 1 {
        for &v in nodes {
            out[v] = first_part;
        }
        return;
    }
    let nl = n_parts.div_ceil(2);
    let frac = nl as f64 / n_parts as f64;
    let (left, right) = multilevel_bisect(graph, nodes, frac, n_parts, rng);
    // split the part budget according to the weight actually achieved, so
    // bisection drift does not compound down the recursion
    let wl: f64 = left.iter().map(|&v| graph.vwgt[v]).sum();
    let wr: f64 = right.iter().map(|&v| graph.vwgt[v]).sum();
    let mut nl = ((wl / (wl + wr)) * n_parts as f64).round() as usize;
    nl = nl.clamp(1, n_parts - 1);
    recursive_bisect(graph, &left, nl, first_part, out, rng);
    recursive_bisect(graph, &right, n_parts - nl, first_part + nl, out, rng);
}

/// Bisect `nodes` into weight fractions (frac, 1-frac) of the induced
/// subgraph, coarsening first when the subgraph is large.
fn multilevel_bisect(
    graph: &Graph,
    nodes: &[usize],
    frac: f64,
    n_parts: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut local_of = HashMap::new();
    for (i, &v) in nodes.iter().enumerate() {
        local_of.insert(v, i);
    }
    let sub = Graph {
        adj: nodes
            .iter()
            .map(|&v| {
                graph.adj[v]
                    .iter()
                    .filter_map(|&(u, w)| local_of.get(&u).map(|&lu| (lu, w)))
                    .collect()
            })
            .collect(),
        vwgt: nodes.iter().map(|&v| graph.vwgt[v]).collect(),
    };
    let total: f64 = sub.vwgt.iter().sum();
    // keep each split within a quarter of one final part's weight
    let bal_tol = 0.25 * total / n_parts as f64;
    let side = bisect_local(&sub, frac, bal_tol, rng);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        if side[i] == 0 {
            left.push(v);
        } else {
            right.push(v);
        }
    }
    (left, right)
}

fn bisect_local(graph: &Graph, frac: f64, bal_tol: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = graph.vwgt.len();
    if n <= 96 {
        let mut side = grow_bisection(graph, frac, rng);
        kl_refine(graph, &mut side, frac, bal_tol);
        return side;
    }
    // heavy-edge matching
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut matched = vec![usize::MAX; n];
    let mut coarse_id = vec![usize::MAX; n];
    let mut nc = 0usize;
    for &v in &order {
        if matched[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &(u, w) in &graph.adj[v] {
            if matched[u] == usize::MAX && u != v {
                best = Some(match best {
                    None => (w, u),
                    Some(b) => {
                        if w > b.0 || (w == b.0 && u < b.1) {
                            (w, u)
                        } else {
                            b
                        }
                    }
                });
            }
        }
        match best {
            Some((_, u)) => {
                matched[v] = u;
                matched[u] = v;
                coarse_id[v] = nc;
                coarse_id[u] = nc;
                nc += 1;
            }
            None => {
                matched[v] = v;
                coarse_id[v] = nc;
                nc += 1;
            }
        }
    }
    if nc as f64 > 0.95 * n as f64 {
        let mut side = grow_bisection(graph, frac, rng);
        kl_refine(graph, &mut side, frac, bal_tol);
        return side;
    }
    // coarse graph
    let mut cadj_maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); nc];
    let mut cvwgt = vec![0.0; nc];
    for v in 0..n {
        cvwgt[coarse_id[v]] += graph.vwgt[v];
        for &(u, w) in &graph.adj[v] {
            let (cv, cu) = (coarse_id[v], coarse_id[u]);
            if cv != cu {
                *cadj_maps[cv].entry(cu).or_insert(0.0) += w;
            }
        }
    }
    let coarse = Graph {
        adj: cadj_maps
            .into_iter()
            .map(|m| {
                let mut v: Vec<(usize, f64)> = m.into_iter().collect();
                v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
                v
            })
            .collect(),
        vwgt: cvwgt,
    };
    let coarse_side = bisect_local(&coarse, frac, bal_tol, rng);
    let mut side: Vec<u8> = (0..n).map(|v| coarse_side[coarse_id[v]]).collect();
    kl_refine(graph, &mut side, frac, bal_tol);
    side
}

/// Seed side 0 with a BFS region of the target weight fraction; keep the best
/// of a few starts.
fn grow_bisection(graph: &Graph, frac: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = graph.vwgt.len();
    let total: f64 = graph.vwgt.iter().sum();
    let target = frac * total;
    let mut best_side = vec![1u8; n];
    let mut best_cut = f64::INFINITY;
    let tries = 4.min(n);
    for _ in 0..tries {
        let start = rng.gen_range(0..n);
        let mut side = vec![1u8; n];
        let mut weight = 0.0;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        queue.push_back(start);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            if weight + graph.vwgt[v] > target && weight > 0.0 {
                continue;
            }
            side[v] = 0;
            weight += graph.vwgt[v];
            for &(u, _) in &graph.adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        for v in 0..n {
            if weight >= target {
                break;
            }
            if side[v] == 1 {
                side[v] = 0;
                weight += graph.vwgt[v];
            }
        }
        let cut = cut_weight(graph, &side);
        if cut < best_cut {
            best_cut = cut;
            best_side = side;
        }
    }
    best_side
}

fn cut_weight(graph: &Graph, side: &[u8]) -> f64 {
    let mut cut = 0.0;
    for v in 0..side.len() {
        for &(u, w) in &graph.adj[v] {
            if u > v && side[u] != side[v] {
                cut += w;
            }
        }
    }
    cut
}

/// Boundary Kernighan-Lin sweeps: greedy single-node moves with positive gain
/// (or balance-restoring zero-gain moves), bounded pass count.
fn kl_refine(graph: &Graph, side: &mut [u8], frac: f64, bal_tol: f64) {
    let n = side.len();
    let total: f64 = graph.vwgt.iter().sum();
    let target0 = frac * total;
    let tol = bal_tol;
    let mut w0: f64 = (0..n)
        .filter(|&v| side[v] == 0)
        .map(|v| graph.vwgt[v])
        .sum();
    for _pass in 0..24 {
        let mut improved = false;
        for v in 0..n {
            let mut internal = 0.0;
            let mut external = 0.0;
            for &(u, w) in &graph.adj[v] {
                if side[u] == side[v] {
                    internal += w;
                } else {
                    external += w;
                }
            }
            if external == 0.0 {
                continue; // not a boundary node
            }
            let gain = external - internal;
            let nw = if side[v] == 0 {
                w0 - graph.vwgt[v]
            } else {
                w0 + graph.vwgt[v]
            };
            let drift_now = (w0 - target0).abs();
            let drift_after = (nw - target0).abs();
            let balance_ok = drift_after <= tol.max(drift_now);
            if (gain > 0.0 && balance_ok) || (gain >= 0.0 && drift_after < drift_now) {
                side[v] = 1 - side[v];
                w0 = nw;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    // forced balance: if still outside tolerance, move the cheapest boundary
    // nodes from the heavy side regardless of gain
    for _ in 0..n {
        let drift = w0 - target0;
        if drift.abs() <= tol {
            break;
        }
        let from: u8 = if drift > 0.0 { 0 } else { 1 };
        let mut best: Option<(f64, usize)> = None; // (cost = internal-external, node)
        for v in 0..n {
            if side[v] != from {
                continue;
            }
            let mut internal = 0.0;
            let mut external = 0.0;
            for &(u, w) in &graph.adj[v] {
                if side[u] == side[v] {
                    internal += w;
                } else {
                    external += w;
                }
            }
            if external == 0.0 {
                continue;
            }
            let cost = internal - external;
            if best.map_or(true, |(bc, bv)| cost < bc || (cost == bc && v < bv)) {
                best = Some((cost, v));
            }
        }
        match best {
            Some((_, v)) => {
                side[v] = 1 - side[v];
                w0 += if from == 0 { -graph.vwgt[v] } else { graph.vwgt[v] };
            }
            None => break,
        }
    }
}

/// Reattach stray components: every part keeps its largest component and
/// donates the rest to the adjacent part with the strongest contact.
fn repair_connectivity(mesh: &PolygonalMesh, cell_part: &mut [usize], n_parts: usize) {
    for _round in 0..16 {
        let mut changed = false;
        for p in 0..n_parts {
            let cells: Vec<usize> = (0..mesh.n_cells())
                .filter(|&c| cell_part[c] == p)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let comps = components(mesh, &cells);
            if comps.len() <= 1 {
                continue;
            }
            let largest = comps
                .iter()
                .enumerate()
                .max_by_key(|(i, c)| (c.len(), usize::MAX - i))
                .map(|(i, _)| i)
                .unwrap();
            for (i, comp) in comps.iter().enumerate() {
                if i == largest {
                    continue;
                }
                let mut contact: HashMap<usize, usize> = HashMap::new();
                for &c in comp {
                    for &nb in mesh.cell_neighbors(c) {
                        if cell_part[nb] != p {
                            *contact.entry(cell_part[nb]).or_insert(0) += 1;
                        }
                    }
                }
                let mut best: Option<(usize, usize)> = None; // (count, part)
                let mut keys: Vec<usize> = contact.keys().copied().collect();
                keys.sort_unstable();
                for q in keys {
                    let cnt = contact[&q];
                    if best.map_or(true, |(bc, bq)| cnt > bc || (cnt == bc && q < bq)) {
                        best = Some((cnt, q));
                    }
                }
                if let Some((_, q)) = best {
                    for &c in comp {
                        cell_part[c] = q;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Shave boundary cells off overweight parts (keeping them connected) until
/// the 10% balance bound holds or no safe move remains.
fn rebalance(mesh: &PolygonalMesh, cell_part: &mut [usize], n_parts: usize) {
    let avg = mesh.n_cells() as f64 / n_parts as f64;
    let cap = (1.08 * avg).floor().max(1.0) as usize;
    let mut sizes = vec![0usize; n_parts];
    for &p in cell_part.iter() {
        sizes[p] += 1;
    }
    for _round in 0..mesh.n_cells() {
        let overweight: Vec<usize> = {
            let mut v: Vec<usize> = (0..n_parts).filter(|&p| sizes[p] > cap).collect();
            v.sort_unstable_by_key(|&p| usize::MAX - sizes[p]);
            v
        };
        if overweight.is_empty() {
            break;
        }
        let mut progress = false;
        for p in overweight {
            if sizes[p] <= cap {
                continue;
            }
            let cells: Vec<usize> =
                (0..mesh.n_cells()).filter(|&c| cell_part[c] == p).collect();
            // donate to the smallest adjacent part first
            let mut candidates: Vec<(usize, usize, usize)> = Vec::new(); // (recv size, cell, recv)
            for &c in &cells {
                for &nb in mesh.cell_neighbors(c) {
                    let q = cell_part[nb];
                    if q != p && sizes[q] + 1 <= cap {
                        candidates.push((sizes[q], c, q));
                    }
                }
            }
            candidates.sort_unstable();
            candidates.dedup_by_key(|t| t.1);
            for (_, c, q) in candidates {
                if cell_part[c] != p {
                    continue;
                }
                let rest: Vec<usize> = cells
                    .iter()
                    .copied()
                    .filter(|&x| x != c && cell_part[x] == p)
                    .collect();
                if rest.is_empty() || !cells_connected(mesh, &rest) {
                    continue;
                }
                cell_part[c] = q;
                sizes[p] -= 1;
                sizes[q] += 1;
                progress = true;
                break;
            }
        }
        if !progress {
            break;
        }
    }
}

fn components(mesh: &PolygonalMesh, cells: &[usize]) -> Vec<Vec<usize>> {
    let set: HashSet<usize> = cells.iter().copied().collect();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut out = Vec::new();
    for &start in cells {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = vec![start];
        seen.insert(start);
        let mut queue = VecDeque::new();
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for &nb in mesh.cell_neighbors(c) {
                if set.contains(&nb) && seen.insert(nb) {
                    comp.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Layer-extended overlapping subdomains D_i'.
#[derive(Debug, Clone)]
pub struct OverlappingPartition {
    pub layers: usize,
    /// reported overlap width: layers * h
    pub delta: f64,
    /// per subdomain: sorted cells of D_i'
    pub cells_ext: Vec<Vec<usize>>,
    /// per subdomain: BFS layer per extended cell (0 on D_i)
    pub cell_layer: Vec<HashMap<usize, usize>>,
}

/// Extend each subdomain by breadth-first layers of surrounding cells. A
/// layer adds every cell sharing at least a vertex with the current region,
/// so one layer already encloses all dofs of the closed subdomain and the
/// local spaces cover every interior dof.
pub fn extend_overlap(
    mesh: &PolygonalMesh,
    partition: &NonOverlappingPartition,
    layers: usize,
) -> Result<OverlappingPartition> {
    if layers == 0 {
        return Err(Error::Contract("overlap layers must be >= 1".into()));
    }
    let mut cells_ext = Vec::with_capacity(partition.n_parts);
    let mut cell_layer = Vec::with_capacity(partition.n_parts);
    for p in 0..partition.n_parts {
        let mut layer: HashMap<usize, usize> = HashMap::new();
        let mut frontier: Vec<usize> = partition.part_cells[p].clone();
        for &c in &frontier {
            layer.insert(c, 0);
        }
        for l in 1..=layers {
            let mut next = Vec::new();
            for &c in &frontier {
                for &v in mesh.cell(c) {
                    for &nb in mesh.cells_of_vertex(v) {
                        if !layer.contains_key(&nb) {
                            layer.insert(nb, l);
                            next.push(nb);
                        }
                    }
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        let mut cells: Vec<usize> = layer.keys().copied().collect();
        cells.sort_unstable();
        cells_ext.push(cells);
        cell_layer.push(layer);
    }
    Ok(OverlappingPartition {
        layers,
        delta: layers as f64 * mesh.h(),
        cells_ext,
        cell_layer,
    })
}

impl OverlappingPartition {
    /// Dofs owned by the local Dirichlet problem on D_i': strictly interior to
    /// the extended subdomain (every incident cell inside) and not on the
    /// domain boundary. Full-dof indexing, sorted.
    pub fn local_dofs(&self, mesh: &PolygonalMesh, dof_map: &DofMap, part: usize) -> Vec<usize> {
        let inside: HashSet<usize> = self.cells_ext[part].iter().copied().collect();
        let mut dofs = Vec::new();
        let mut seen = HashSet::new();
        for &c in &self.cells_ext[part] {
            for d in cell_dof_ids(mesh, dof_map, c) {
                if !seen.insert(d) || dof_map.is_dirichlet(d) {
                    continue;
                }
                if dof_map
                    .incident_cells(mesh, d)
                    .iter()
                    .all(|cc| inside.contains(cc))
                {
                    dofs.push(d);
                }
            }
        }
        dofs.sort_unstable();
        dofs
    }

    /// BFS layer of a dof inside D_i' (minimum over incident cells in D_i'),
    /// or None when the dof has no incident cell there.
    pub fn dof_layer(
        &self,
        mesh: &PolygonalMesh,
        dof_map: &DofMap,
        part: usize,
        dof: usize,
    ) -> Option<usize> {
        dof_map
            .incident_cells(mesh, dof)
            .iter()
            .filter_map(|c| self.cell_layer[part].get(c).copied())
            .min()
    }
}

pub(crate) fn cell_dof_ids(mesh: &PolygonalMesh, dof_map: &DofMap, c: usize) -> Vec<usize> {
    let mut out: Vec<usize> = mesh.cell(c).to_vec();
    if dof_map.k == 2 {
        out.extend(mesh.cell_edge_ids(c).iter().map(|&e| mesh.n_vertices() + e));
        out.push(mesh.n_vertices() + mesh.n_edges() + c);
    }
    out
}

/// A subdomain vertex of the coarse skeleton.
#[derive(Debug, Clone)]
pub struct SkeletonVertex {
    pub fine_vertex: usize,
    /// subdomains whose closure contains the vertex, sorted
    pub parts: Vec<usize>,
    pub on_boundary: bool,
}

/// Chain of fine vertices between two skeleton vertices, following either an
/// interface between two subdomains or a stretch of the domain boundary.
#[derive(Debug, Clone)]
pub struct SkeletonEdge {
    /// skeleton vertex indices
    pub ends: [usize; 2],
    /// interior fine vertices ordered from ends[0] to ends[1] (exclusive)
    pub through: Vec<usize>,
    /// fine mesh edges of the chain, in walk order
    pub fine_edges: Vec<usize>,
    pub kind: ChainKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    /// interface between two subdomains
    Interface(usize, usize),
    /// domain-boundary stretch bordering one subdomain
    Boundary(usize),
}

/// Coarse skeleton of a partition: subdomain vertices y_i, ordered interface
/// and boundary chains, and the vertex neighborhoods omega_i.
#[derive(Debug, Clone)]
pub struct CoarseSkeleton {
    pub vertices: Vec<SkeletonVertex>,
    pub edges: Vec<SkeletonEdge>,
    /// per skeleton vertex: sorted cells of omega_i
    pub omega_cells: Vec<Vec<usize>>,
}

impl CoarseSkeleton {
    /// Neighborhood of a subdomain: union of omega_i over skeleton vertices
    /// on its closure.
    pub fn omega_of_part(&self, part: usize) -> Vec<usize> {
        let mut set = std::collections::BTreeSet::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.parts.contains(&part) {
                set.extend(self.omega_cells[i].iter().copied());
            }
        }
        set.into_iter().collect()
    }

    pub fn interior_generators(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&i| !self.vertices[i].on_boundary)
            .collect()
    }
}

/// Extract the coarse skeleton of a partition.
///
/// Subdomain vertices are fine vertices incident to >= 3 subdomains, to 2
/// subdomains while on the domain boundary, the four domain corners, and any
/// degenerate junction where an interface meets itself. Chains are walked
/// from vertex to vertex; a subdomain pair with a disconnected interface
/// yields multiple chains.
pub fn extract_skeleton(
    mesh: &PolygonalMesh,
    partition: &NonOverlappingPartition,
) -> Result<CoarseSkeleton> {
    let nv = mesh.n_vertices();
    let mut vertex_parts: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for v in 0..nv {
        let mut set: Vec<usize> = mesh
            .cells_of_vertex(v)
            .iter()
            .map(|&c| partition.cell_part[c])
            .collect();
        set.sort_unstable();
        set.dedup();
        vertex_parts[v] = set;
    }
    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    enum Label {
        Interface(usize, usize),
        Boundary(usize),
    }
    let mut labeled: HashMap<Label, Vec<usize>> = HashMap::new();
    for ei in 0..mesh.n_edges() {
        let e = mesh.edge(ei);
        if e.cells.len() == 2 {
            let (p, q) = (
                partition.cell_part[e.cells[0]],
                partition.cell_part[e.cells[1]],
            );
            if p != q {
                labeled
                    .entry(Label::Interface(p.min(q), p.max(q)))
                    .or_default()
                    .push(ei);
            }
        } else {
            labeled
                .entry(Label::Boundary(partition.cell_part[e.cells[0]]))
                .or_default()
                .push(ei);
        }
    }

    let is_corner = |v: usize| {
        let p = mesh.vertex(v);
        (p[0].abs() < 1e-9 || (p[0] - 1.0).abs() < 1e-9)
            && (p[1].abs() < 1e-9 || (p[1] - 1.0).abs() < 1e-9)
    };
    let mut is_skel = vec![false; nv];
    for v in 0..nv {
        let np = vertex_parts[v].len();
        if np >= 3 || (np == 2 && mesh.is_boundary_vertex(v)) || is_corner(v) {
            is_skel[v] = true;
        }
    }
    // promote degenerate junctions: vertex with more than two chain edges of
    // the same label
    for edges in labeled.values() {
        let mut deg: HashMap<usize, usize> = HashMap::new();
        for &ei in edges {
            let e = mesh.edge(ei);
            *deg.entry(e.a).or_insert(0) += 1;
            *deg.entry(e.b).or_insert(0) += 1;
        }
        for (&v, &d) in deg.iter() {
            if d > 2 {
                is_skel[v] = true;
            }
        }
    }

    let skel_vertices: Vec<usize> = (0..nv).filter(|&v| is_skel[v]).collect();
    let skel_index: HashMap<usize, usize> = skel_vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let vertices: Vec<SkeletonVertex> = skel_vertices
        .iter()
        .map(|&v| SkeletonVertex {
            fine_vertex: v,
            parts: vertex_parts[v].clone(),
            on_boundary: mesh.is_boundary_vertex(v),
        })
        .collect();

    let mut edges_out: Vec<SkeletonEdge> = Vec::new();
    let mut labels: Vec<(&Label, &Vec<usize>)> = labeled.iter().collect();
    labels.sort_by_key(|(l, _)| **l);
    for (label, chain_edges) in labels {
        let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
        for &ei in chain_edges {
            let e = mesh.edge(ei);
            incident.entry(e.a).or_default().push(ei);
            incident.entry(e.b).or_default().push(ei);
        }
        for v in incident.values_mut() {
            v.sort_unstable();
        }
        let mut visited: HashSet<usize> = HashSet::new();
        let mut starts: Vec<usize> = incident.keys().copied().filter(|v| is_skel[*v]).collect();
        starts.sort_unstable();
        for &start in &starts {
            for &first in &incident[&start] {
                if visited.contains(&first) {
                    continue;
                }
                let mut through = Vec::new();
                let mut fine_edges = Vec::new();
                let mut prev = start;
                let mut ei = first;
                loop {
                    visited.insert(ei);
                    fine_edges.push(ei);
                    let e = mesh.edge(ei);
                    let next = if e.a == prev { e.b } else { e.a };
                    if is_skel[next] {
                        edges_out.push(SkeletonEdge {
                            ends: [skel_index[&start], skel_index[&next]],
                            through,
                            fine_edges,
                            kind: match label {
                                Label::Interface(p, q) => ChainKind::Interface(*p, *q),
                                Label::Boundary(p) => ChainKind::Boundary(*p),
                            },
                        });
                        break;
                    }
                    through.push(next);
                    let next_edge = incident[&next]
                        .iter()
                        .copied()
                        .find(|&e2| e2 != ei)
                        .ok_or_else(|| {
                            Error::InvalidPartition(format!(
                                "interface chain dead-ends at fine vertex {next}"
                            ))
                        })?;
                    prev = next;
                    ei = next_edge;
                }
            }
        }
        if visited.len() != chain_edges.len() {
            return Err(Error::InvalidPartition(
                "interface forms a closed loop with no subdomain vertex".into(),
            ));
        }
    }

    let mut omega_cells = Vec::with_capacity(vertices.len());
    for sv in &vertices {
        let mut cells: Vec<usize> = sv
            .parts
            .iter()
            .flat_map(|&p| partition.part_cells[p].iter().copied())
            .collect();
        cells.sort_unstable();
        cells.dedup();
        if !cells_connected(mesh, &cells) {
            return Err(Error::InvalidNeighborhood(format!(
                "omega of fine vertex {} is not edge-connected",
                sv.fine_vertex
            )));
        }
        omega_cells.push(cells);
    }

    Ok(CoarseSkeleton {
        vertices,
        edges: edges_out,
        omega_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_hexagonal, build_triangular, build_voronoi};

    #[test]
    fn structured_single_part() {
        let mesh = build_triangular(4).unwrap();
        let p = partition_structured(&mesh, 1).unwrap();
        assert_eq!(p.n_parts, 1);
        assert_eq!(p.part_cells[0].len(), mesh.n_cells());
        assert!((p.h_coarse - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structured_5x5_on_80_grid() {
        let mesh = build_triangular(80).unwrap();
        let p = partition_structured(&mesh, 5).unwrap();
        assert_eq!(p.n_parts, 25);
        for cells in &p.part_cells {
            assert_eq!(cells.len(), (80 / 5) * (80 / 5) * 2);
        }
        assert!((p.h_coarse - 0.2).abs() < 1e-15);
    }

    #[test]
    fn structured_requires_divisibility() {
        let mesh = build_triangular(10).unwrap();
        assert!(partition_structured(&mesh, 3).is_err());
    }

    #[test]
    fn graph_partition_trivial() {
        let mesh = build_triangular(4).unwrap();
        let p = partition_graph(&mesh, 1, 0).unwrap();
        assert_eq!(p.n_parts, 1);
    }

    #[test]
    fn graph_partition_hexagonal_16_parts() {
        let mesh = build_hexagonal(2000).unwrap();
        let p = partition_graph(&mesh, 16, 0).unwrap();
        assert_eq!(p.n_parts, 16);
        assert!(p.balance() <= 1.10, "balance {}", p.balance());
        let p2 = partition_graph(&mesh, 16, 0).unwrap();
        assert_eq!(p.cell_part, p2.cell_part);
    }

    #[test]
    fn graph_partition_voronoi_100_parts() {
        let mesh = build_voronoi(12325, 2, 20).unwrap();
        let p = partition_graph(&mesh, 100, 0).unwrap();
        assert_eq!(p.n_parts, 100);
        assert!(p.balance() <= 1.10, "balance {}", p.balance());
    }

    #[test]
    fn graph_partition_too_many_parts() {
        let mesh = build_triangular(2).unwrap();
        assert!(partition_graph(&mesh, 100, 0).is_err());
    }

    fn build_quad_2x1() -> crate::mesh::PolygonalMesh {
        crate::mesh::PolygonalMesh::from_raw(
            vec![
                [0.0, 0.0],
                [0.5, 0.0],
                [1.0, 0.0],
                [1.0, 1.0],
                [0.5, 1.0],
                [0.0, 1.0],
            ],
            vec![vec![0, 1, 4, 5], vec![1, 2, 3, 4]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn overlap_saturates_tiny_mesh() {
        let mesh = build_quad_2x1();
        let p = partition_from_cell_map(&mesh, vec![0, 1]).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        assert_eq!(o.cells_ext[0], vec![0, 1]);
        assert_eq!(o.cells_ext[1], vec![0, 1]);
    }

    #[test]
    fn overlap_strict_superset_with_neighbors() {
        let mesh = build_triangular(8).unwrap();
        let p = partition_structured(&mesh, 2).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        for part in 0..p.n_parts {
            assert!(o.cells_ext[part].len() > p.part_cells[part].len());
            for &c in &p.part_cells[part] {
                assert!(o.cells_ext[part].binary_search(&c).is_ok());
            }
        }
        assert!((o.delta - mesh.h()).abs() < 1e-15);
    }

    #[test]
    fn every_dof_covered_by_some_local_space() {
        let mesh = build_triangular(8).unwrap();
        let dof_map = DofMap::new(&mesh, 1).unwrap();
        let p = partition_structured(&mesh, 4).unwrap();
        let o = extend_overlap(&mesh, &p, 1).unwrap();
        let mut covered = vec![false; dof_map.total()];
        for part in 0..p.n_parts {
            for d in o.local_dofs(&mesh, &dof_map, part) {
                covered[d] = true;
            }
        }
        for d in 0..dof_map.total() {
            if !dof_map.is_dirichlet(d) {
                assert!(covered[d], "dof {d} uncovered");
            }
        }
    }

    #[test]
    fn skeleton_2x2_structured() {
        let mesh = build_triangular(8).unwrap();
        let p = partition_structured(&mesh, 2).unwrap();
        let s = extract_skeleton(&mesh, &p).unwrap();
        let interior: Vec<_> = s.vertices.iter().filter(|v| !v.on_boundary).collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(interior[0].parts, vec![0, 1, 2, 3]);
        // 4 boundary midpoints + 4 corners
        assert_eq!(s.vertices.len() - 1, 8);
        let center_idx = s.vertices.iter().position(|v| !v.on_boundary).unwrap();
        assert_eq!(s.omega_cells[center_idx].len(), mesh.n_cells());
    }

    #[test]
    fn skeleton_single_subdomain_is_domain_boundary() {
        let mesh = build_triangular(4).unwrap();
        let p = partition_structured(&mesh, 1).unwrap();
        let s = extract_skeleton(&mesh, &p).unwrap();
        assert!(s.vertices.iter().all(|v| v.on_boundary));
        assert_eq!(s.vertices.len(), 4); // corners only
        assert!(s
            .edges
            .iter()
            .all(|e| matches!(e.kind, ChainKind::Boundary(0))));
        for oc in &s.omega_cells {
            assert_eq!(oc.len(), mesh.n_cells());
        }
    }

    #[test]
    fn skeleton_covers_all_interface_vertices_once() {
        let mesh = build_triangular(16).unwrap();
        let p = partition_graph(&mesh, 4, 3).unwrap();
        let s = extract_skeleton(&mesh, &p).unwrap();
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for e in &s.edges {
            if matches!(e.kind, ChainKind::Interface(_, _)) {
                for &v in &e.through {
                    *seen.entry(v).or_insert(0) += 1;
                }
            }
        }
        for (&v, &cnt) in &seen {
            assert_eq!(cnt, 1, "vertex {v} on {cnt} chains");
        }
        let mut covered = vec![false; mesh.n_cells()];
        for oc in &s.omega_cells {
            for &c in oc {
                covered[c] = true;
            }
        }
        assert!(covered.iter().all(|&b| b));
    }

    #[test]
    fn partition_determinism_bytes() {
        let mesh = build_voronoi(800, 1, 5).unwrap();
        let a = partition_graph(&mesh, 9, 42).unwrap();
        let b = partition_graph(&mesh, 9, 42).unwrap();
        assert_eq!(a.cell_part, b.cell_part);
    }
}
