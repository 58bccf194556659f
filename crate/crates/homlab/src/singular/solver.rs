//! Regularized continuation solver for the singular semilinear problem.
//!
//! The singularity of `F` at zero is tamed by the clamp regularization
//! `F_delta(x, s) = F(x, max(s, delta))`, which keeps the declared envelope
//! exactly and converges to `F` pointwise on `s > 0`. The outer loop drives
//! `delta` down geometrically; each level is solved by a damped Picard
//! iteration with nodal nonnegativity clipping. Continuation stops once two
//! consecutive levels agree in relative L2.

use super::source::SingularSource;
use crate::domain::Mesh;
use crate::error::{HomlabError, Stage};
use crate::fem::sparse::pcg_from;
use crate::fem::{
    assemble_load, assemble_stiffness, assemble_weighted_mass, constrain, CoefficientField,
    FeFunction, LoadData,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Initial regularization level.
    pub delta0: f64,
    /// Geometric factor applied to `delta` per continuation step.
    pub delta_factor: f64,
    /// Smallest regularization level.
    pub delta_min: f64,
    /// Picard damping `theta` in (0, 1].
    pub damping: f64,
    /// Relative L2 increment stopping the inner iteration.
    pub inner_rtol: f64,
    pub inner_maxit: usize,
    /// Relative L2 gap between consecutive levels stopping the continuation.
    pub continuation_rtol: f64,
    /// Linear-solver relative residual.
    pub linear_rtol: f64,
    /// Starting iterate (defaults to zero). Clipped to the constraints.
    #[serde(skip)]
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            delta0: 1e-1,
            delta_factor: 0.5,
            delta_min: 1e-6,
            damping: 0.5,
            inner_rtol: 1e-9,
            inner_maxit: 200,
            continuation_rtol: 1e-6,
            linear_rtol: 1e-10,
            initial_guess: None,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), HomlabError> {
        let ok = self.delta0 > 0.0
            && self.delta_factor > 0.0
            && self.delta_factor < 1.0
            && self.delta_min > 0.0
            && self.delta_min <= self.delta0
            && self.damping > 0.0
            && self.damping <= 1.0
            && self.inner_rtol > 0.0
            && self.inner_maxit >= 1
            && self.continuation_rtol > 0.0
            && self.linear_rtol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HomlabError::stage(Stage::Solver, "invalid solver parameters"))
        }
    }
}

/// One continuation level of the trace.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaRecord {
    pub delta: f64,
    pub inner_iters: usize,
    /// Last inner relative increment.
    pub final_residual: f64,
    /// Relative L2 gap to the previous level's solution.
    pub increment: f64,
    pub min_u: f64,
    pub max_u: f64,
    /// Nodes clipped to zero at the last inner iteration.
    pub clipped_nodes: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveTrace {
    pub records: Vec<DeltaRecord>,
    /// Envelope checks that failed during evaluation (must stay zero).
    pub envelope_violations: usize,
}

impl SolveTrace {
    /// CSV columns: `delta, inner_iters, final_residual, increment, min_u, max_u`.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("delta,inner_iters,final_residual,increment,min_u,max_u\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.delta, r.inner_iters, r.final_residual, r.increment, r.min_u, r.max_u
            ));
        }
        out
    }

    /// Continuation increments per level (first level reported against zero).
    pub fn increments(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.increment).collect()
    }
}

/// Solve the semilinear problem: stiffness of `a` plus an optional
/// absorption mass (per-triangle density `mu_weight`), source `F` on the
/// right, homogeneous Dirichlet data on `constrained_nodes`.
///
/// Returns the nonnegative solution and the continuation trace.
pub fn solve_semilinear(
    mesh: &Mesh,
    a: &CoefficientField,
    mu_weight: Option<&[f64]>,
    source: &SingularSource,
    params: &SolverParams,
    constrained_nodes: &[usize],
) -> Result<(FeFunction, SolveTrace), HomlabError> {
    params.validate()?;
    if source.n_vertices() != mesh.n_vertices() {
        return Err(HomlabError::stage(Stage::Solver, "source does not match mesh"));
    }
    if constrained_nodes.is_empty() {
        return Err(HomlabError::stage(
            Stage::Solver,
            "constrained node set is empty; the Dirichlet problem needs boundary data",
        ));
    }
    let n = mesh.n_vertices();
    let stiff = assemble_stiffness(mesh, a, false)?;
    let system = match mu_weight {
        None => stiff,
        Some(w) => {
            let mass = assemble_weighted_mass(mesh, w, false)?;
            add_csr(&stiff, &mass)
        }
    };
    let bc: BTreeMap<usize, f64> = constrained_nodes.iter().map(|&v| (v, 0.0)).collect();
    let reduced = constrain(&system, &vec![0.0; n], &bc)?;
    let is_free: Vec<bool> = reduced.free_of_full.iter().map(|f| f.is_some()).collect();

    // lumped mass for mesh-independent increment norms
    let lumped = lumped_masses(mesh);
    let norm_m = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&lumped)
            .map(|(v, m)| v * v * m)
            .sum::<f64>()
            .sqrt()
    };

    let mut u: Vec<f64> = match &params.initial_guess {
        Some(g) => {
            if g.len() != n {
                return Err(HomlabError::stage(Stage::Solver, "initial guess length mismatch"));
            }
            g.iter()
                .enumerate()
                .map(|(i, &v)| if is_free[i] { v.max(0.0) } else { 0.0 })
                .collect()
        }
        None => vec![0.0; n],
    };

    let mut trace = SolveTrace::default();
    let mut fvals = vec![0.0; mesh.n_triangles()];
    let mut x_free: Vec<f64> = vec![0.0; reduced.n_free()];
    let mut prev_level: Option<Vec<f64>> = None;
    let mut delta = params.delta0;
    let max_levels = 1000;

    for _level in 0..max_levels {
        let mut grow_streak = 0usize;
        let mut last_inc = f64::INFINITY;
        let mut iters = 0usize;
        let mut final_residual = f64::INFINITY;
        let mut clipped = 0usize;
        for it in 0..params.inner_maxit {
            iters = it + 1;
            // centroid quadrature of the singular term: element averages stay
            // positive next to the Dirichlet set, so the load has a limit as
            // delta -> 0 on a fixed mesh (nodal sampling would pump F(delta)
            // from the boundary nodes into the neighboring rows)
            eval_source_on_triangles(mesh, source, &u, delta, &mut fvals, &mut trace)?;
            let load = assemble_load(mesh, LoadData::Triangle(&fvals))?;
            let rhs_free: Vec<f64> = reduced.full_of_free.iter().map(|&v| load[v]).collect();
            let nf = reduced.n_free();
            let (sol, _) = pcg_from(
                &reduced.matrix,
                &rhs_free,
                Some(&x_free),
                params.linear_rtol,
                400 + 40 * nf,
            )
            .map_err(|e| match e {
                HomlabError::NoConvergence { message, residuals } => HomlabError::NoConvergence {
                    message: format!("linear solve at delta {delta:.3e}: {message}"),
                    residuals,
                },
                other => other,
            })?;
            x_free = sol;
            let full = reduced.expand(&x_free);
            let theta = params.damping;
            clipped = 0;
            let mut diff2 = 0.0;
            let mut norm2 = 0.0;
            for i in 0..n {
                let clipped_val = if full[i] < 0.0 {
                    if is_free[i] {
                        clipped += 1;
                    }
                    0.0
                } else {
                    full[i]
                };
                let next = (1.0 - theta) * u[i] + theta * clipped_val;
                let d = next - u[i];
                diff2 += d * d * lumped[i];
                norm2 += next * next * lumped[i];
                u[i] = next;
            }
            let rel_inc = diff2.sqrt() / norm2.sqrt().max(1e-300);
            final_residual = rel_inc;
            if rel_inc <= params.inner_rtol {
                break;
            }
            if rel_inc > last_inc {
                grow_streak += 1;
                if grow_streak >= 10 {
                    return Err(HomlabError::NoConvergence {
                        message: format!(
                            "picard iteration diverging at delta {delta:.3e} (increment {rel_inc:.3e})"
                        ),
                        residuals: vec![last_inc, rel_inc],
                    });
                }
            } else {
                grow_streak = 0;
            }
            last_inc = rel_inc;
        }

        let increment = match &prev_level {
            None => norm_m(&u) / norm_m(&u).max(1e-300),
            Some(p) => {
                let d: Vec<f64> = u.iter().zip(p).map(|(a, b)| a - b).collect();
                norm_m(&d) / norm_m(&u).max(1e-300)
            }
        };
        let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
        let max_u = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        trace.records.push(DeltaRecord {
            delta,
            inner_iters: iters,
            final_residual,
            increment,
            min_u,
            max_u,
            clipped_nodes: clipped,
        });
        if min_u < -1e-12 {
            return Err(HomlabError::stage(
                Stage::Solver,
                format!("accepted iterate has negative nodal value {min_u:.3e}"),
            ));
        }
        let converged = prev_level.is_some() && increment <= params.continuation_rtol;
        prev_level = Some(u.clone());
        if converged || delta <= params.delta_min {
            break;
        }
        delta = (delta * params.delta_factor).max(params.delta_min);
    }

    Ok((FeFunction { values: u }, trace))
}

/// Evaluate the regularized source at triangle centroids (vertex set of the
/// coefficient samples), checking the envelope at every evaluation.
pub(crate) fn eval_source_on_triangles(
    mesh: &Mesh,
    source: &SingularSource,
    u: &[f64],
    delta: f64,
    out: &mut [f64],
    trace: &mut SolveTrace,
) -> Result<(), HomlabError> {
    debug_assert_eq!(out.len(), mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangles[t];
        let ubar = ((u[tri[0]] + u[tri[1]] + u[tri[2]]) / 3.0).max(0.0);
        let s = ubar.max(delta);
        // the sources are linear in their x-fields, so averaging the vertex
        // evaluations equals evaluating at the averaged fields
        let mut acc = 0.0;
        for &v in &tri {
            acc += source.eval_regularized(v, ubar, delta);
            if !source.envelope_ok(v, s) {
                trace.envelope_violations += 1;
                return Err(HomlabError::stage(
                    Stage::Solver,
                    format!("envelope violation during evaluation at delta = {delta:.3e}"),
                ));
            }
        }
        out[t] = acc / 3.0;
    }
    Ok(())
}

/// Lumped mass per vertex (row sums of the P1 mass matrix).
pub fn lumped_masses(mesh: &Mesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        for &v in &mesh.triangles[t] {
            m[v] += area / 3.0;
        }
    }
    m
}

fn add_csr(a: &crate::fem::CsrMatrix, b: &crate::fem::CsrMatrix) -> crate::fem::CsrMatrix {
    assert_eq!(a.n, b.n);
    let mut trip = crate::fem::Triplets::new(a.n);
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            trip.push(i, a.col_ix[k], a.vals[k]);
        }
        for k in b.row_ptr[i]..b.row_ptr[i + 1] {
            trip.push(i, b.col_ix[k], b.vals[k]);
        }
    }
    trip.to_csr()
}
