//! Batch experiment driver: configuration, the assembled solver pipeline,
//! contrast sweeps, eigenvalue reports, and self-checks. The CLI is a thin
//! wrapper around this module; outputs are deterministic for fixed seeds.

use serde::{Deserialize, Serialize};
use sha2_shim::hash_hex;

use crate::coarse::{
    assemble_neumann, assemble_weighted_mass, build_coarse_basis, build_neighborhood,
    gmsfem_snapshots, select_modes, solve_local_eig, CoarseSpace, MassWeight, Neighborhood,
    NeighborhoodEig, WeightMode,
};
use crate::decomposition::{
    extend_overlap, extract_skeleton, partition_graph, partition_structured, CoarseSkeleton,
    NonOverlappingPartition, OverlappingPartition,
};
use crate::error::{Error, Result};
use crate::mesh::{
    build_hexagonal, build_quadrilateral, build_triangular, build_voronoi, paint_coefficient,
    CoefficientField, InclusionSpec, PolygonalMesh,
};
use crate::pu::{build_coarse_pu, build_overlap_pu, ExtensionMode, OverlapPu, PuFamily};
use crate::schwarz::{
    build_one_level, build_two_level, dense_cond_oracle, pcg, SchwarzPreconditioner,
};
use crate::vem::{assemble_global, patch_test_error, DofMap, GlobalSystem, VemCache};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MeshSpec {
    Triangular { n: usize },
    Quadrilateral { n: usize },
    Hexagonal { target_cells: usize },
    Voronoi { seeds: usize, lloyd: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    Structured { m: usize },
    Graph { n_parts: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PuMode {
    Harmonic,
    Polynomial { degree: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoarseMode {
    /// one-level method, no coarse space
    None,
    /// span of the partition of unity
    NonAdaptive,
    /// spectral space, kappa-weighted mass
    AdaptiveKappa,
    /// spectral space, multiscale kappa-tilde weight
    AdaptiveMultiscale,
    /// spectral space, abstract cut-off energy weight
    AdaptiveAbstract,
    /// spectral space restricted to a randomized snapshot space
    Gmsfem { snapshots: usize },
}

impl CoarseMode {
    pub fn label(&self) -> String {
        match self {
            CoarseMode::None => "none".into(),
            CoarseMode::NonAdaptive => "non-adaptive".into(),
            CoarseMode::AdaptiveKappa => "adaptive-kappa".into(),
            CoarseMode::AdaptiveMultiscale => "adaptive-multiscale".into(),
            CoarseMode::AdaptiveAbstract => "adaptive-abstract".into(),
            CoarseMode::Gmsfem { snapshots } => format!("gmsfem-{snapshots}"),
        }
    }
}

fn default_tau() -> f64 {
    1.0
}
fn default_l_max() -> usize {
    12
}
fn default_eigenpairs() -> usize {
    40
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    2000
}
fn default_layers() -> usize {
    2
}
fn default_degree() -> usize {
    1
}

/// Everything a batch run needs; serialized as a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mesh: MeshSpec,
    pub partition: PartitionSpec,
    #[serde(default = "default_layers")]
    pub overlap_layers: usize,
    /// virtual element degree (1 or 2)
    #[serde(default = "default_degree")]
    pub vem_degree: usize,
    pub pu_mode: PuMode,
    /// coarse-space variants to run, one result row each
    pub coarse_modes: Vec<CoarseMode>,
    #[serde(default = "default_tau")]
    pub eigen_threshold: f64,
    #[serde(default = "default_l_max")]
    pub max_modes_per_neighborhood: usize,
    #[serde(default = "default_eigenpairs")]
    pub n_eigenpairs: usize,
    /// contrast values to sweep
    pub eta_sweep: Vec<f64>,
    /// painted high-contrast geometry
    #[serde(default)]
    pub inclusions: InclusionSpec,
    #[serde(default = "default_tol")]
    pub pcg_tol: f64,
    #[serde(default = "default_max_iter")]
    pub pcg_max_iter: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// also compute the dense condition-number oracle (only for <= 2000 dofs)
    #[serde(default)]
    pub cond_oracle: bool,
    /// write measured wall time into the CSV (breaks byte-determinism)
    #[serde(default)]
    pub report_timing: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// Canonical hash of a configuration, embedded in every output file.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canon = serde_json::to_string(config).expect("config serializes");
    hash_hex(canon.as_bytes())
}

mod sha2_shim {
    use sha2::{Digest, Sha256};

    pub fn hash_hex(bytes: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(bytes);
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// The eta-independent part of a run.
pub struct Pipeline {
    pub mesh: PolygonalMesh,
    pub cache: VemCache,
    pub dof_map: DofMap,
    pub partition: NonOverlappingPartition,
    pub overlap: OverlappingPartition,
    pub skeleton: CoarseSkeleton,
    pub pu: PuFamily,
    pub xi: OverlapPu,
}

pub fn build_mesh(spec: &MeshSpec, rng_seed: u64) -> Result<PolygonalMesh> {
    match spec {
        MeshSpec::Triangular { n } => build_triangular(*n),
        MeshSpec::Quadrilateral { n } => build_quadrilateral(*n),
        MeshSpec::Hexagonal { target_cells } => build_hexagonal(*target_cells),
        MeshSpec::Voronoi { seeds, lloyd } => build_voronoi(*seeds, *lloyd, rng_seed),
    }
}

pub fn build_pipeline(config: &ExperimentConfig) -> Result<Pipeline> {
    let mesh = build_mesh(&config.mesh, config.rng_seed)?;
    let cache = VemCache::build(&mesh, config.vem_degree)?;
    let dof_map = DofMap::new(&mesh, config.vem_degree)?;
    let partition = match &config.partition {
        PartitionSpec::Structured { m } => partition_structured(&mesh, *m)?,
        PartitionSpec::Graph { n_parts } => partition_graph(&mesh, *n_parts, config.rng_seed)?,
    };
    let overlap = extend_overlap(&mesh, &partition, config.overlap_layers)?;
    let skeleton = extract_skeleton(&mesh, &partition)?;
    let mode = match config.pu_mode {
        PuMode::Harmonic => ExtensionMode::Harmonic,
        PuMode::Polynomial { degree } => ExtensionMode::Polynomial(degree),
    };
    let pu = build_coarse_pu(&mesh, &dof_map, &cache, &partition, &skeleton, mode)?;
    let xi = build_overlap_pu(&mesh, &dof_map, &overlap)?;
    Ok(Pipeline {
        mesh,
        cache,
        dof_map,
        partition,
        overlap,
        skeleton,
        pu,
        xi,
    })
}

impl Pipeline {
    pub fn assemble(&self, field: &CoefficientField) -> Result<GlobalSystem> {
        assemble_global(&self.mesh, &self.cache, field, &|_| 1.0, &|_| 0.0)
    }

    pub fn paint(&self, spec: &InclusionSpec, eta: f64) -> Result<CoefficientField> {
        paint_coefficient(&self.mesh, spec, eta)
    }
}

/// Solve all local eigenproblems for the requested weight mode.
pub fn build_neighborhood_bundles(
    pipe: &Pipeline,
    field: &CoefficientField,
    mode: WeightMode,
    tau: f64,
    l_max: usize,
    count: usize,
    snapshots: Option<(usize, u64)>,
) -> Result<Vec<NeighborhoodEig>> {
    use rayon::prelude::*;
    let indices: Vec<usize> = (0..pipe.skeleton.vertices.len()).collect();
    let bundles: Vec<Result<NeighborhoodEig>> = indices
        .par_iter()
        .map(|&omega_idx| {
            let nbhd = build_neighborhood(&pipe.mesh, &pipe.dof_map, &pipe.skeleton, omega_idx)?;
            bundle_one(pipe, field, nbhd, mode, tau, l_max, count, snapshots)
        })
        .collect();
    bundles.into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn bundle_one(
    pipe: &Pipeline,
    field: &CoefficientField,
    nbhd: Neighborhood,
    mode: WeightMode,
    tau: f64,
    l_max: usize,
    count: usize,
    snapshots: Option<(usize, u64)>,
) -> Result<NeighborhoodEig> {
    let a = assemble_neumann(&pipe.mesh, &pipe.cache, &pipe.dof_map, field, &nbhd)?;
    // the kappa mass doubles as the interpolation pairing
    let kappa_mass = assemble_weighted_mass(
        &pipe.mesh,
        &pipe.cache,
        &pipe.dof_map,
        field,
        &nbhd,
        &MassWeight::Kappa,
    )?;
    let eig = match snapshots {
        Some((m_count, seed)) => {
            let snap = gmsfem_snapshots(
                &a,
                &kappa_mass,
                nbhd.floating,
                m_count,
                seed ^ (nbhd.omega_idx as u64).wrapping_mul(0x9E3779B97F4A7C15),
            )?;
            snap.into_generalized()
        }
        None => {
            let m = match mode {
                WeightMode::Kappa => kappa_mass.clone(),
                WeightMode::MultiscaleKappaTilde => assemble_weighted_mass(
                    &pipe.mesh,
                    &pipe.cache,
                    &pipe.dof_map,
                    field,
                    &nbhd,
                    &MassWeight::Multiscale {
                        pu: &pipe.pu,
                        h_coarse: pipe.partition.h_coarse,
                    },
                )?,
                WeightMode::AbstractCutoff => assemble_weighted_mass(
                    &pipe.mesh,
                    &pipe.cache,
                    &pipe.dof_map,
                    field,
                    &nbhd,
                    &MassWeight::Abstract {
                        pu: &pipe.pu,
                        xi: &pipe.xi,
                        stiffness: &a,
                    },
                )?,
            };
            solve_local_eig(&a, &m, mode, count)?
        }
    };
    let floating = nbhd.floating;
    let omega_idx = nbhd.omega_idx;
    Ok(NeighborhoodEig {
        selection: select_modes(omega_idx, eig, floating, tau, l_max),
        nbhd,
        stiffness: a,
        mass: kappa_mass,
    })
}

/// Preconditioner for one (eta, coarse-mode) pair plus the coarse dimension
/// and the eigen bundles when a spectral space was built.
pub struct BuiltPreconditioner {
    pub precond: SchwarzPreconditioner,
    pub dim_v0: usize,
    pub dropped_columns: usize,
    pub bundles: Option<Vec<NeighborhoodEig>>,
}

pub fn build_preconditioner(
    pipe: &Pipeline,
    field: &CoefficientField,
    system: &GlobalSystem,
    mode: &CoarseMode,
    config: &ExperimentConfig,
    row_seed: u64,
) -> Result<BuiltPreconditioner> {
    let one = build_one_level(system, &pipe.mesh, &pipe.overlap)?;
    let (space, bundles) = match mode {
        CoarseMode::None => {
            return Ok(BuiltPreconditioner {
                precond: one,
                dim_v0: 0,
                dropped_columns: 0,
                bundles: None,
            })
        }
        CoarseMode::NonAdaptive => (CoarseSpace::from_pu(&pipe.pu, &pipe.dof_map), None),
        CoarseMode::AdaptiveKappa
        | CoarseMode::AdaptiveMultiscale
        | CoarseMode::AdaptiveAbstract
        | CoarseMode::Gmsfem { .. } => {
            let (weight, snaps) = match mode {
                CoarseMode::AdaptiveKappa => (WeightMode::Kappa, None),
                CoarseMode::AdaptiveMultiscale => (WeightMode::MultiscaleKappaTilde, None),
                CoarseMode::AdaptiveAbstract => (WeightMode::AbstractCutoff, None),
                CoarseMode::Gmsfem { snapshots } => (WeightMode::Kappa, Some((*snapshots, row_seed))),
                _ => unreachable!(),
            };
            let bundles = build_neighborhood_bundles(
                pipe,
                field,
                weight,
                config.eigen_threshold,
                config.max_modes_per_neighborhood,
                config.n_eigenpairs,
                snaps,
            )?;
            let space = build_coarse_basis(&bundles, &pipe.pu, &pipe.dof_map);
            (space, Some(bundles))
        }
    };
    let dim_v0 = space.dim();
    let precond = build_two_level(one, &space, system)?;
    let dropped = precond.coarse.as_ref().map_or(0, |c| c.dropped.len());
    Ok(BuiltPreconditioner {
        precond,
        dim_v0: dim_v0 - dropped,
        dropped_columns: dropped,
        bundles,
    })
}

/// One CSV row of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eta: f64,
    pub method: String,
    pub k: usize,
    pub pu_mode: String,
    pub coarse_mode: String,
    pub dim_v0: Option<usize>,
    pub iters: Option<usize>,
    pub cond_est: Option<f64>,
    pub cond_oracle: Option<f64>,
    pub delta: f64,
    pub h_over_h: f64,
    pub seconds: f64,
    pub status: String,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub csv: String,
    pub config_hash: String,
}

fn pu_label(mode: &PuMode) -> String {
    match mode {
        PuMode::Harmonic => "harmonic".into(),
        PuMode::Polynomial { degree } => format!("polynomial-{degree}"),
    }
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Run the configured contrast sweep: one row per (eta, coarse mode).
/// Stage failures mark the row FAILED and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let hash = config_hash(config);
    let pipe = build_pipeline(config)?;
    let h_over_h = pipe.partition.h_coarse / pipe.mesh.h();
    let mut rows = Vec::new();
    for (ei, &eta) in config.eta_sweep.iter().enumerate() {
        let field = pipe.paint(&config.inclusions, eta)?;
        let system = pipe.assemble(&field)?;
        for (mi, mode) in config.coarse_modes.iter().enumerate() {
            let row_seed = config
                .rng_seed
                .wrapping_add(((ei * config.coarse_modes.len() + mi) as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
            let started = std::time::Instant::now();
            let mut row = SweepRow {
                eta,
                method: if matches!(mode, CoarseMode::None) {
                    "one-level".into()
                } else {
                    "two-level".into()
                },
                k: config.vem_degree,
                pu_mode: pu_label(&config.pu_mode),
                coarse_mode: mode.label(),
                dim_v0: None,
                iters: None,
                cond_est: None,
                cond_oracle: None,
                delta: pipe.overlap.delta,
                h_over_h,
                seconds: 0.0,
                status: "ok".into(),
            };
            let outcome = (|| -> Result<()> {
                let built = build_preconditioner(&pipe, &field, &system, mode, config, row_seed)?;
                row.dim_v0 = Some(built.dim_v0);
                let (_, report) = pcg(
                    &system.a,
                    &system.b,
                    &built.precond,
                    config.pcg_tol,
                    config.pcg_max_iter,
                )?;
                row.iters = Some(report.iterations);
                row.cond_est = report.cond_estimate;
                if !report.converged {
                    row.status = format!("not-converged-after-{}", report.iterations);
                }
                if config.cond_oracle && system.a.n() <= 2000 {
                    row.cond_oracle = Some(dense_cond_oracle(&system.a, &built.precond, 2000)?);
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                row.status = format!("FAILED: {e}");
            }
            if config.report_timing {
                row.seconds = started.elapsed().as_secs_f64();
            }
            rows.push(row);
        }
    }
    let csv = sweep_csv(&rows, &hash);
    Ok(SweepOutput {
        rows,
        csv,
        config_hash: hash,
    })
}

pub fn sweep_csv(rows: &[SweepRow], hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# config_hash={hash} version={ARTIFACT_VERSION}\n"
    ));
    out.push_str("eta,method,k,pu_mode,coarse_mode,dimV0,iters,cond_est,cond_oracle,delta,H_over_h,seconds,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.eta),
            r.method,
            r.k,
            r.pu_mode,
            r.coarse_mode,
            fmt_opt_usize(r.dim_v0),
            fmt_opt_usize(r.iters),
            fmt_opt_f64(r.cond_est),
            fmt_opt_f64(r.cond_oracle),
            fmt_f64(r.delta),
            fmt_f64(r.h_over_h),
            fmt_f64(r.seconds),
            r.status
        ));
    }
    out
}

/// Eigenvalue report: per (eta, neighborhood) the sorted local eigenvalues.
pub struct EigsOutput {
    /// per eta: (omega_id, ell, lambda) rows
    pub tables: Vec<(f64, Vec<(usize, usize, f64)>)>,
    pub config_hash: String,
}

pub fn run_eigs(config: &ExperimentConfig) -> Result<EigsOutput> {
    let hash = config_hash(config);
    let pipe = build_pipeline(config)?;
    let weight = weight_for_report(config);
    let mut tables = Vec::new();
    for &eta in &config.eta_sweep {
        let field = pipe.paint(&config.inclusions, eta)?;
        let bundles = build_neighborhood_bundles(
            &pipe,
            &field,
            weight,
            config.eigen_threshold,
            config.max_modes_per_neighborhood,
            config.n_eigenpairs,
            None,
        )?;
        let mut rows = Vec::new();
        for b in &bundles {
            for (ell, &lam) in b.selection.eigenvalues.iter().enumerate() {
                rows.push((b.nbhd.omega_idx, ell + 1, lam));
            }
        }
        tables.push((eta, rows));
    }
    Ok(EigsOutput {
        tables,
        config_hash: hash,
    })
}

fn weight_for_report(config: &ExperimentConfig) -> WeightMode {
    for m in &config.coarse_modes {
        match m {
            CoarseMode::AdaptiveMultiscale => return WeightMode::MultiscaleKappaTilde,
            CoarseMode::AdaptiveAbstract => return WeightMode::AbstractCutoff,
            _ => {}
        }
    }
    WeightMode::Kappa
}

pub fn eigs_csv(eta: f64, rows: &[(usize, usize, f64)], hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# config_hash={hash} version={ARTIFACT_VERSION} eta={eta}\n"
    ));
    out.push_str("omega_id,ell,lambda\n");
    for &(omega, ell, lam) in rows {
        out.push_str(&format!("{omega},{ell},{}\n", fmt_f64(lam)));
    }
    out
}

/// Two-column (ell, lambda) plot data, sorted per neighborhood.
pub fn eigs_plot_data(eta: f64, rows: &[(usize, usize, f64)], hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# config_hash={hash} version={ARTIFACT_VERSION} eta={eta}\n"
    ));
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut last_omega = usize::MAX;
    for (omega, ell, lam) in sorted {
        if omega != last_omega && last_omega != usize::MAX {
            out.push('\n'); // gnuplot dataset separator
        }
        last_omega = omega;
        out.push_str(&format!("{ell} {}\n", fmt_f64(lam)));
    }
    out
}

/// A self-check outcome.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Diagnostics: partition-of-unity sums, a patch test on the configured mesh
/// family, and preconditioned-operator symmetry. `inject_drop_generator`
/// removes one PU function first (fault injection for the harness itself).
pub fn run_validate(
    config: &ExperimentConfig,
    inject_drop_generator: Option<usize>,
) -> Result<Vec<CheckResult>> {
    let mut pipe = build_pipeline(config)?;
    if let Some(g) = inject_drop_generator {
        if g < pipe.pu.functions.len() {
            pipe.pu.functions.remove(g);
        }
    }
    let mut checks = Vec::new();

    // PU sums at interior dofs
    let mut worst: f64 = 0.0;
    for d in 0..pipe.dof_map.total() {
        if pipe.dof_map.is_dirichlet(d) {
            continue;
        }
        worst = worst.max((pipe.pu.sum_at(d) - 1.0).abs());
    }
    checks.push(CheckResult {
        name: "coarse-pu-sum".into(),
        passed: worst <= 1e-12,
        detail: format!("max |sum chi - 1| = {worst:.3e}"),
    });
    // harmonic bounds
    if matches!(config.pu_mode, PuMode::Harmonic) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in &pipe.pu.functions {
            for &v in &f.values {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        checks.push(CheckResult {
            name: "coarse-pu-bounds".into(),
            passed: lo >= -1e-12 && hi <= 1.0 + 1e-12,
            detail: format!("range [{lo:.3e}, {hi:.3e}]"),
        });
    }
    // overlap PU sums
    let mut worst_xi: f64 = 0.0;
    for d in 0..pipe.dof_map.total() {
        let s: f64 = pipe.xi.functions.iter().map(|f| f[d]).sum();
        worst_xi = worst_xi.max((s - 1.0).abs());
    }
    checks.push(CheckResult {
        name: "overlap-pu-sum".into(),
        passed: worst_xi == 0.0,
        detail: format!("max |sum xi - 1| = {worst_xi:.3e}"),
    });

    // patch test on the configured mesh family
    let patch = if config.vem_degree == 1 {
        patch_test_error(&pipe.mesh, &pipe.cache, &|p| p[0] + 2.0 * p[1], &|_| 0.0)?
    } else {
        patch_test_error(
            &pipe.mesh,
            &pipe.cache,
            &|p| p[0] * p[0] - 0.5 * p[1] * p[1] + p[0] * p[1] + p[1],
            &|_| -1.0,
        )?
    };
    checks.push(CheckResult {
        name: "patch-test".into(),
        passed: patch <= 1e-9,
        detail: format!("max dof error = {patch:.3e}"),
    });

    // operator symmetry of the two-level preconditioner at the first eta
    let eta = config.eta_sweep.first().copied().unwrap_or(1.0);
    let field = pipe.paint(&config.inclusions, eta)?;
    let system = pipe.assemble(&field)?;
    let built = build_preconditioner(
        &pipe,
        &field,
        &system,
        config
            .coarse_modes
            .first()
            .unwrap_or(&CoarseMode::NonAdaptive),
        config,
        config.rng_seed,
    )?;
    let n = system.a.n();
    let u: Vec<f64> = (0..n).map(|i| ((i * 7 + 1) % 13) as f64 / 13.0 - 0.4).collect();
    let v: Vec<f64> = (0..n).map(|i| ((i * 11 + 5) % 17) as f64 / 17.0 - 0.6).collect();
    use crate::schwarz::Preconditioner;
    let mu = built.precond.apply(&u);
    let mv = built.precond.apply(&v);
    let s1 = crate::linalg::dot(&mu, &v);
    let s2 = crate::linalg::dot(&u, &mv);
    let dev = (s1 - s2).abs() / s1.abs().max(s2.abs()).max(1e-300);
    checks.push(CheckResult {
        name: "preconditioner-symmetry".into(),
        passed: dev <= 1e-9,
        detail: format!("relative asymmetry = {dev:.3e}"),
    });
    Ok(checks)
}

/// Single solve at one eta with the first configured coarse mode.
pub struct SolveSummary {
    pub eta: f64,
    pub dim_v0: usize,
    pub iterations: usize,
    pub converged: bool,
    pub cond_estimate: Option<f64>,
    pub final_residual: Option<f64>,
    pub n_dofs: usize,
}

pub fn run_solve(config: &ExperimentConfig) -> Result<SolveSummary> {
    let pipe = build_pipeline(config)?;
    let eta = config.eta_sweep.first().copied().unwrap_or(1.0);
    let field = pipe.paint(&config.inclusions, eta)?;
    let system = pipe.assemble(&field)?;
    let mode = config
        .coarse_modes
        .first()
        .copied()
        .unwrap_or(CoarseMode::AdaptiveKappa);
    let built = build_preconditioner(&pipe, &field, &system, &mode, config, config.rng_seed)?;
    let (_, report) = pcg(
        &system.a,
        &system.b,
        &built.precond,
        config.pcg_tol,
        config.pcg_max_iter,
    )?;
    Ok(SolveSummary {
        eta,
        dim_v0: built.dim_v0,
        iterations: report.iterations,
        converged: report.converged,
        cond_estimate: report.cond_estimate,
        final_residual: report.residual_history.last().copied(),
        n_dofs: system.a.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Region;

    pub fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            mesh: MeshSpec::Triangular { n: 16 },
            partition: PartitionSpec::Structured { m: 4 },
            overlap_layers: 1,
            vem_degree: 1,
            pu_mode: PuMode::Harmonic,
            coarse_modes: vec![CoarseMode::AdaptiveKappa],
            eigen_threshold: 1.0,
            max_modes_per_neighborhood: 12,
            n_eigenpairs: 20,
            eta_sweep: vec![1.0, 1e4],
            inclusions: InclusionSpec {
                regions: vec![Region::Channel {
                    points: vec![[0.05, 0.53], [0.95, 0.53]],
                    width: 0.08,
                }],
            },
            pcg_tol: 1e-6,
            pcg_max_iter: 500,
            rng_seed: 0,
            cond_oracle: false,
            report_timing: false,
            output_dir: None,
        }
    }

    #[test]
    fn sweep_produces_row_per_eta_and_mode() {
        let mut config = small_config();
        config.coarse_modes = vec![CoarseMode::None, CoarseMode::AdaptiveKappa];
        let out = run_sweep(&config).unwrap();
        assert_eq!(out.rows.len(), 4);
        for r in &out.rows {
            assert!(r.status == "ok", "{:?}", r.status);
            assert!(r.iters.unwrap() >= 1);
        }
        // adaptive at high contrast stays close to eta = 1
        let it = |eta: f64, mode: &str| {
            out.rows
                .iter()
                .find(|r| r.eta == eta && r.coarse_mode == mode)
                .unwrap()
                .iters
                .unwrap() as f64
        };
        assert!(it(1e4, "adaptive-kappa") <= 1.5 * it(1.0, "adaptive-kappa"));
        assert!(it(1e4, "none") >= it(1.0, "none"));
    }

    #[test]
    fn empty_eta_list_gives_empty_table() {
        let mut config = small_config();
        config.eta_sweep.clear();
        let out = run_sweep(&config).unwrap();
        assert!(out.rows.is_empty());
        assert!(out.csv.contains("eta,method"));
    }

    #[test]
    fn sweep_csv_deterministic() {
        let config = small_config();
        let a = run_sweep(&config).unwrap();
        let b = run_sweep(&config).unwrap();
        assert_eq!(a.csv, b.csv);
    }

    #[test]
    fn validate_passes_and_fault_injection_fails() {
        let config = small_config();
        let checks = run_validate(&config, None).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        let broken = run_validate(&config, Some(0)).unwrap();
        assert!(broken.iter().any(|c| !c.passed));
    }

    #[test]
    fn eigs_report_counts_contrast_modes() {
        let config = small_config();
        let out = run_eigs(&config).unwrap();
        assert_eq!(out.tables.len(), 2);
        let below = |t: &Vec<(usize, usize, f64)>| t.iter().filter(|r| r.2 < 1.0).count();
        let low = below(&out.tables[0].1);
        let high = below(&out.tables[1].1);
        assert!(high > low, "low {low}, high {high}");
        let csv = eigs_csv(out.tables[0].0, &out.tables[0].1, &out.config_hash);
        assert!(csv.starts_with("# config_hash="));
        assert!(csv.contains("omega_id,ell,lambda"));
    }
}
