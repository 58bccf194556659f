//! One scale of the pipeline: mesh, corrector fields, absorption density,
//! singular solve and diagnostics, with stage-tagged failures and artifacts
//! persisted as soon as each stage completes.

use super::config::SweepConfig;
use crate::corrector::{
    analytic_mu, compute_w, compute_z, mu_density, pairing_bound_check, sandwich_violation,
    CorrectorField, MeasureDensity, ZField,
};
use crate::domain::{build_mesh, mask_to_perforated, LatticeSpec, Mesh, VertexMarker};
use crate::error::{HomlabError, Stage};
use crate::fem::{norm_l2, seminorm_h1, CoefficientField, FeFunction};
use crate::singular::{
    apriori_profile, energy_equality_residual, make_source, solve_semilinear, zdelta_mass,
    AprioriRow, SingularSource, SolveTrace,
};
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct CaseDiagnostics {
    /// Relative defect of the discrete energy identity at the median level.
    pub energy_residual: f64,
    pub median_level: f64,
    pub apriori: Vec<AprioriRow>,
    /// `(delta, mass)` pairs of the near-zero source mass.
    pub zdelta_masses: Vec<(f64, f64)>,
    pub sandwich_min_z: f64,
    pub sandwich_excess: f64,
    pub pairing_ratio: f64,
    /// Mean corrector energy density over interior cells.
    pub mu_interior_mean: f64,
    /// Relative deviation of that mean from the closed-form limit density.
    pub mu_interior_dev: f64,
    pub z_minus_w_h1: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub continuation_levels: usize,
    pub final_delta: f64,
    pub final_increment: f64,
    pub envelope_violations: usize,
    pub removed_disk_area: f64,
    pub removed_polygon_area: f64,
}

/// Everything computed for one scale.
#[derive(Debug)]
pub struct CaseResult {
    pub epsilon: f64,
    pub spec: LatticeSpec,
    pub mesh: Mesh,
    pub coefficient: CoefficientField,
    pub source: SingularSource,
    pub u: FeFunction,
    pub trace: SolveTrace,
    pub w: CorrectorField,
    pub z: ZField,
    pub density: MeasureDensity,
    pub diagnostics: CaseDiagnostics,
    pub n_holes: usize,
    pub n_vertices: usize,
}

fn stage_err(stage: Stage, e: HomlabError) -> HomlabError {
    match e {
        HomlabError::Stage { stage: s, message } => HomlabError::Stage { stage: s, message },
        other => HomlabError::stage(stage, other.to_string()),
    }
}

fn persist(out_dir: Option<&Path>, name: &str, content: &str) {
    if let Some(dir) = out_dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join(name), content);
    }
}

/// Nodal median over the non-hole vertices, floored away from zero so it is
/// always a usable truncation level.
pub fn median_level(mesh: &Mesh, u: &FeFunction) -> f64 {
    let mut vals: Vec<f64> = (0..mesh.n_vertices())
        .filter(|&v| mesh.vertex_marker[v] != VertexMarker::HoleInterior)
        .map(|v| u.values[v])
        .collect();
    vals.sort_by(f64::total_cmp);
    vals[vals.len() / 2].max(1e-6)
}

/// Dirichlet node set of the perforated problem: outer boundary plus every
/// hole node.
pub fn perforated_constraints(mesh: &Mesh) -> Vec<usize> {
    (0..mesh.n_vertices())
        .filter(|&v| mesh.vertex_marker[v] != VertexMarker::Interior)
        .collect()
}

/// Run the full pipeline at one scale. Artifacts are written into `out_dir`
/// stage by stage, so a failure leaves the completed ones behind.
pub fn run_case(
    epsilon: f64,
    config: &SweepConfig,
    out_dir: Option<&Path>,
) -> Result<CaseResult, HomlabError> {
    config.validate()?;
    let tag = format!("eps_{epsilon:.6}");

    // geometry
    let spec = LatticeSpec::new(epsilon, config.c0, 2, config.domain)
        .map_err(|e| stage_err(Stage::Geometry, e))?;
    let removed = crate::domain::removed_measure(&spec).map_err(|e| stage_err(Stage::Geometry, e))?;

    // mesh
    let mesh = build_mesh(&spec, &config.mesh).map_err(|e| stage_err(Stage::Mesh, e))?;
    persist(out_dir, &format!("mesh_{tag}.txt"), &mesh.export_text());

    // coefficient
    let a = config
        .coefficient
        .build(&mesh)
        .map_err(|e| stage_err(Stage::Fem, e))?;

    // corrector fields and density
    let w = compute_w(&mesh, &spec, &a).map_err(|e| stage_err(Stage::Corrector, e))?;
    let z = compute_z(&mesh, &w, &a).map_err(|e| stage_err(Stage::Corrector, e))?;
    let density = mu_density(&w, &mesh, &a).map_err(|e| stage_err(Stage::Corrector, e))?;
    persist(out_dir, &format!("density_{tag}.csv"), &density.export_csv());
    let (sandwich_min_z, sandwich_excess) = sandwich_violation(&w, &z);
    let pairing_ratio = pairing_bound_check(&w, &mesh, &a).map_err(|e| stage_err(Stage::Corrector, e))?;
    let zw = z.z.sub(&w.w);
    let z_minus_w_h1 = seminorm_h1(&mesh, &zw).map_err(|e| stage_err(Stage::Corrector, e))?;

    // singular solve on the perforated domain
    let source = make_source(&mesh, &config.source).map_err(|e| stage_err(Stage::Solver, e))?;
    let constrained = perforated_constraints(&mesh);
    let (u, trace) = solve_semilinear(&mesh, &a, None, &source, &config.solver, &constrained)
        .map_err(|e| stage_err(Stage::Solver, e))?;
    persist(out_dir, &format!("trace_{tag}.csv"), &trace.export_csv());
    persist(out_dir, &format!("u_{tag}.txt"), &u.export_text(&mesh));

    // diagnostics
    let final_delta = trace.records.last().map(|r| r.delta).unwrap_or(config.solver.delta_min);
    let med = median_level(&mesh, &u);
    let energy_residual = energy_equality_residual(&mesh, &u, &source, &a, med, final_delta)
        .map_err(|e| stage_err(Stage::Solver, e))?;
    let apriori = apriori_profile(&mesh, &u, &source, &config.k_levels)
        .map_err(|e| stage_err(Stage::Solver, e))?;
    let mut phi = FeFunction::from_fn(&mesh, |x, y| {
        let sx = std::f64::consts::PI * (x - config.domain.x0) / config.domain.width();
        let sy = std::f64::consts::PI * (y - config.domain.y0) / config.domain.height();
        sx.sin() * sy.sin()
    });
    for b in mesh.outer_boundary_indices() {
        phi.values[b] = 0.0;
    }
    let mut zdelta_masses = Vec::new();
    for &d in &config.delta_levels {
        let m = zdelta_mass(&mesh, &u, &source, &phi, d, final_delta)
            .map_err(|e| stage_err(Stage::Solver, e))?;
        zdelta_masses.push((d, m));
    }
    let mu_star = analytic_mu(2, config.c0).map_err(|e| stage_err(Stage::Corrector, e))?;
    let mu_interior_mean = density.interior_mean();
    let mu_interior_dev = if density.interior_densities().is_empty() {
        f64::NAN
    } else {
        (mu_interior_mean - mu_star).abs() / mu_star
    };

    let diagnostics = CaseDiagnostics {
        energy_residual,
        median_level: med,
        apriori,
        zdelta_masses,
        sandwich_min_z,
        sandwich_excess,
        pairing_ratio,
        mu_interior_mean,
        mu_interior_dev,
        z_minus_w_h1,
        min_u: u.min(),
        max_u: u.max(),
        continuation_levels: trace.records.len(),
        final_delta,
        final_increment: trace.records.last().map(|r| r.increment).unwrap_or(0.0),
        envelope_violations: trace.envelope_violations,
        removed_disk_area: removed.disk_area,
        removed_polygon_area: removed.polygon_area,
    };
    for v in [
        diagnostics.energy_residual,
        diagnostics.mu_interior_mean,
        diagnostics.z_minus_w_h1,
        diagnostics.pairing_ratio,
    ] {
        if !v.is_finite() {
            return Err(HomlabError::stage(Stage::Solver, "non-finite diagnostic"));
        }
    }
    persist(
        out_dir,
        &format!("diagnostics_{tag}.json"),
        &serde_json::to_string_pretty(&diagnostics).unwrap_or_default(),
    );

    Ok(CaseResult {
        epsilon,
        spec,
        mesh,
        coefficient: a,
        source,
        u,
        trace,
        w,
        z,
        density,
        diagnostics,
        n_holes: 0,
        n_vertices: 0,
    }
    .finalize())
}

impl CaseResult {
    fn finalize(mut self) -> Self {
        self.n_vertices = self.mesh.n_vertices();
        self.n_holes = self.mesh.holes.len();
        self
    }

    /// Extension by zero of the solved state.
    pub fn masked_u(&self) -> Result<FeFunction, HomlabError> {
        mask_to_perforated(&self.u, &self.mesh)
    }

    /// Relative L2 distance between the masked state and a limit candidate
    /// on the same mesh.
    pub fn l2_gap(&self, limit: &FeFunction) -> Result<(f64, f64), HomlabError> {
        let masked = self.masked_u()?;
        let diff = masked.sub(limit);
        let e = norm_l2(&self.mesh, &diff)?;
        let scale = norm_l2(&self.mesh, limit)?.max(1e-300);
        Ok((e, e / scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singular::SourceSpec;

    #[test]
    fn smoke_case_at_half() {
        let config = SweepConfig::default();
        let case = run_case(0.5, &config, None).unwrap();
        assert_eq!(case.n_holes, 1);
        assert!(case.diagnostics.sandwich_excess <= 1e-8);
        assert!(case.diagnostics.sandwich_min_z >= -1e-8);
        assert!(case.diagnostics.min_u >= -1e-12);
        assert_eq!(case.diagnostics.envelope_violations, 0);
    }

    #[test]
    fn no_hole_config_matches_plain_solve() {
        let mut config = SweepConfig::default();
        config.epsilon_list = vec![0.8];
        config.c0 = 8.0;
        let case = run_case(0.8, &config, None).unwrap();
        assert_eq!(case.n_holes, 0);
        // masked state equals the state itself without holes
        let masked = case.masked_u().unwrap();
        assert_eq!(masked.values, case.u.values);
    }

    #[test]
    fn geometry_stage_error_is_tagged() {
        let mut config = SweepConfig::default();
        config.c0 = 0.01;
        let err = run_case(0.5, &config, None).unwrap_err();
        assert_eq!(err.stage_tag(), Some(Stage::Geometry));
    }

    #[test]
    fn power_source_case_converges() {
        let mut config = SweepConfig::default();
        config.source = SourceSpec::Power {
            h: 1.0,
            gamma: 2.0,
            envelope_h: None,
        };
        let case = run_case(0.5, &config, None).unwrap();
        assert!(case.diagnostics.min_u >= -1e-12);
        assert!(case.diagnostics.energy_residual <= 1e-3);
    }
}
