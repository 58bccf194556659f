//! Capacitary corrector fields and the cell-by-cell absorption density they
//! induce.
//!
//! The corrector `w` vanishes on every hole, equals one outside the inscribed
//! ball of each perforated cell, and solves the (transposed-coefficient)
//! Dirichlet problem on the annulus in between; the construction is local to
//! each cell. Its energy density per lattice cell approximates the absorption
//! density of the limit problem, whose closed form under the critical radius
//! law is available in any dimension. The variant `z` solves the same
//! operator against the corrector-weighted flux pairing and agrees with `w`
//! on hole nodes and on the outer boundary.

use crate::domain::{radius_for, Cell, LatticeSpec, Mesh, VertexMarker};
use crate::error::{HomlabError, Stage};
use crate::fem::{
    assemble_stiffness, constrain, constrained_from, solve_spd, CoefficientField, FeFunction,
};
use std::f64::consts::PI;

/// Radial log profile of the annulus potential: 0 at `r0`, 1 at `big_r`,
/// clamped outside.
pub fn analytic_w_profile(rho: f64, r0: f64, big_r: f64) -> Result<f64, HomlabError> {
    if !(r0 > 0.0 && big_r > r0) {
        return Err(HomlabError::stage(
            Stage::Corrector,
            format!("annulus radii must satisfy 0 < r0 < R, got {r0}, {big_r}"),
        ));
    }
    if rho <= r0 {
        return Ok(0.0);
    }
    if rho >= big_r {
        return Ok(1.0);
    }
    Ok((rho.ln() - r0.ln()) / (big_r.ln() - r0.ln()))
}

/// Dirichlet energy of the log profile over the annulus: `2 pi / ln(R/r0)`.
pub fn analytic_annulus_energy(r0: f64, big_r: f64) -> f64 {
    2.0 * PI / (big_r / r0).ln()
}

/// Surface area of the unit sphere bounding the unit ball of `R^d`:
/// `2 pi^(d/2) / Gamma(d/2)`.
fn unit_sphere_area(dim: u32) -> f64 {
    let d = dim as f64;
    let gamma_half = |n2: u32| -> f64 {
        // Gamma(n2 / 2) exactly, integer or half-integer argument
        if n2 % 2 == 0 {
            let mut g = 1.0;
            for k in 2..(n2 / 2) {
                g *= k as f64;
            }
            g
        } else {
            let mut g = PI.sqrt();
            let mut arg = 0.5;
            while (n2 as f64 / 2.0 - arg) > 0.25 {
                g *= arg;
                arg += 1.0;
            }
            g
        }
    };
    2.0 * PI.powf(d / 2.0) / gamma_half(dim)
}

/// Closed-form limit absorption density under the critical radius law:
/// `pi/(2 c0)` in 2-D, `S_{d-1} (d-2) c0^(d-2) / 2^d` for `d >= 3`.
pub fn analytic_mu(dim: u32, c0: f64) -> Result<f64, HomlabError> {
    if dim < 2 {
        return Err(HomlabError::stage(
            Stage::Corrector,
            format!("limit density needs dimension >= 2, got {dim}"),
        ));
    }
    if !(c0 > 0.0) {
        return Err(HomlabError::stage(Stage::Corrector, "c0 must be positive"));
    }
    Ok(if dim == 2 {
        (2.0 * PI / 4.0) / c0
    } else {
        let d = dim as f64;
        unit_sphere_area(dim) * (d - 2.0) / 2.0f64.powf(d) * c0.powf(d - 2.0)
    })
}

/// Corrector field with its per-hole annulus metadata.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub w: FeFunction,
    /// Per hole: center, hole radius, outer annulus radius.
    pub annuli: Vec<([f64; 2], f64, f64)>,
}

/// Per-cell energy density of the corrector.
#[derive(Debug, Clone)]
pub struct MeasureDensity {
    pub cells: Vec<CellDensity>,
}

#[derive(Debug, Clone, Copy)]
pub struct CellDensity {
    pub ix: i64,
    pub iy: i64,
    pub area: f64,
    pub density: f64,
    /// Full cell carrying a hole; only these enter limit-density comparisons.
    pub interior: bool,
}

impl MeasureDensity {
    pub fn interior_densities(&self) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.interior)
            .map(|c| c.density)
            .collect()
    }

    /// Total mass `sum density * area`.
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.density * c.area).sum()
    }

    /// Mean density over interior cells, or 0 when there are none.
    pub fn interior_mean(&self) -> f64 {
        let d = self.interior_densities();
        if d.is_empty() {
            0.0
        } else {
            d.iter().sum::<f64>() / d.len() as f64
        }
    }

    /// CSV export: `cell_ix, cell_iy, area, density, interior_flag`.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("cell_ix,cell_iy,area,density,interior_flag\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.ix,
                c.iy,
                c.area,
                c.density,
                u8::from(c.interior)
            ));
        }
        out
    }

    /// Piecewise-constant density evaluated at a point of the lattice that
    /// produced it; 0 outside all recorded cells.
    pub fn eval(&self, spec: &LatticeSpec, x: f64, y: f64) -> f64 {
        let side = 2.0 * spec.epsilon;
        let ix = (x / side).floor() as i64;
        let iy = (y / side).floor() as i64;
        self.cells
            .iter()
            .find(|c| c.ix == ix && c.iy == iy)
            .map(|c| c.density)
            .unwrap_or(0.0)
    }
}

/// Variant corrector used as the admissible test field.
#[derive(Debug, Clone)]
pub struct ZField {
    pub z: FeFunction,
}

/// Nodes at inscribed-ball radius or farther from every hole center.
fn outside_all_balls(mesh: &Mesh, outer_radius: f64) -> Vec<bool> {
    let tol = 1e-9 * outer_radius;
    let mut inside = vec![false; mesh.n_vertices()];
    for hole in &mesh.holes {
        for (v, p) in mesh.vertices.iter().enumerate() {
            let dx = p[0] - hole.center[0];
            let dy = p[1] - hole.center[1];
            if (dx * dx + dy * dy).sqrt() < outer_radius - tol {
                inside[v] = true;
            }
        }
    }
    inside.iter().map(|b| !b).collect()
}

/// Build the corrector: zero on the holes, one outside every inscribed ball,
/// discrete `tA`-harmonic on each annulus. The local problems decouple, so a
/// single constrained solve realizes all of them at once.
pub fn compute_w(
    mesh: &Mesh,
    spec: &LatticeSpec,
    a: &CoefficientField,
) -> Result<CorrectorField, HomlabError> {
    let eps = spec.epsilon;
    let expected_r = radius_for(eps, spec.c0, 2)?;
    for hole in &mesh.holes {
        if (hole.radius - expected_r).abs() > 1e-12 * expected_r {
            return Err(HomlabError::stage(
                Stage::Corrector,
                "mesh holes do not match the lattice radius law",
            ));
        }
    }
    if mesh.holes.is_empty() {
        return Ok(CorrectorField {
            w: FeFunction::constant(mesh, 1.0),
            annuli: Vec::new(),
        });
    }
    let outside = outside_all_balls(mesh, eps);
    let stiff_t = assemble_stiffness(mesh, a, true)?;
    let constrained = constrained_from(mesh, |v| {
        if matches!(
            mesh.vertex_marker[v],
            VertexMarker::HoleBoundary | VertexMarker::HoleInterior
        ) {
            Some(0.0)
        } else if outside[v] {
            Some(1.0)
        } else {
            None
        }
    });
    let sys = constrain(&stiff_t, &vec![0.0; mesh.n_vertices()], &constrained)?;
    let mut w = solve_spd(&sys, 1e-12)?;
    // the annulus problems obey the maximum principle up to solver noise;
    // anything past that tolerance is a bug
    for v in &w {
        if *v < -1e-9 || *v > 1.0 + 1e-9 {
            return Err(HomlabError::stage(
                Stage::Corrector,
                format!("corrector value {v} escapes [0, 1]"),
            ));
        }
    }
    for v in &mut w {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(CorrectorField {
        w: FeFunction { values: w },
        annuli: mesh
            .holes
            .iter()
            .map(|h| (h.center, h.radius, eps))
            .collect(),
    })
}

/// Per-cell energy density `(int_cell tA Dw . Dw) / |cell|`.
pub fn mu_density(
    w: &CorrectorField,
    mesh: &Mesh,
    a: &CoefficientField,
) -> Result<MeasureDensity, HomlabError> {
    crate::fem::check_field(mesh, &w.w)?;
    let mut energy = vec![0.0f64; mesh.cells.len()];
    for t in 0..mesh.n_triangles() {
        let Some(cell) = mesh.triangle_cell[t] else {
            continue;
        };
        let (grads, area) = crate::fem::p1_gradients_of(mesh, t);
        let tri = mesh.triangles[t];
        let mut g = [0.0, 0.0];
        for i in 0..3 {
            g[0] += w.w.values[tri[i]] * grads[i][0];
            g[1] += w.w.values[tri[i]] * grads[i][1];
        }
        let m = a.per_triangle[t];
        // quadratic form: (tA g) . g == (A g) . g
        let ag = [m[0] * g[0] + m[1] * g[1], m[2] * g[0] + m[3] * g[1]];
        energy[cell] += area * (ag[0] * g[0] + ag[1] * g[1]);
    }
    let cells = mesh
        .cells
        .iter()
        .enumerate()
        .map(|(i, c): (usize, &Cell)| {
            let area = c.rect.area();
            CellDensity {
                ix: c.ix,
                iy: c.iy,
                area,
                density: if area > 0.0 { energy[i] / area } else { 0.0 },
                interior: c.full && c.hole.is_some(),
            }
        })
        .collect();
    Ok(MeasureDensity { cells })
}

/// Solve for the variant corrector `z`: same operator, right-hand side the
/// corrector-weighted flux pairing `<w mu, phi_i> = int tA Dw . D(I_h(w phi_i))`
/// with the product interpolated nodally, `z` matching `w` on hole nodes and
/// on the outer boundary.
pub fn compute_z(
    mesh: &Mesh,
    w: &CorrectorField,
    a: &CoefficientField,
) -> Result<ZField, HomlabError> {
    crate::fem::check_field(mesh, &w.w)?;
    let stiff_t = assemble_stiffness(mesh, a, true)?;
    let n = mesh.n_vertices();
    let mut sw = vec![0.0; n];
    stiff_t.mul_vec(&w.w.values, &mut sw);
    // nodal product: I_h(w phi_i) = w_i phi_i
    let rhs: Vec<f64> = (0..n).map(|i| w.w.values[i] * sw[i]).collect();
    let constrained = constrained_from(mesh, |v| match mesh.vertex_marker[v] {
        VertexMarker::HoleBoundary | VertexMarker::HoleInterior | VertexMarker::OuterBoundary => {
            Some(w.w.values[v])
        }
        VertexMarker::Interior => None,
    });
    let sys = constrain(&stiff_t, &rhs, &constrained)?;
    let z = solve_spd(&sys, 1e-12)?;
    Ok(ZField {
        z: FeFunction { values: z },
    })
}

/// Sandwich diagnostics for `z`: most negative value of `z` and largest
/// excess of `z` over `w`.
pub fn sandwich_violation(w: &CorrectorField, z: &ZField) -> (f64, f64) {
    let mut min_z = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    for (zi, wi) in z.z.values.iter().zip(&w.w.values) {
        min_z = min_z.min(*zi);
        max_excess = max_excess.max(zi - wi);
    }
    (min_z, max_excess)
}

/// Ratio of dual norms `||w mu|| / ||mu||` computed through Riesz lifts on
/// the unperforated domain (Laplace inner product, outer boundary only);
/// reported as 1 in the hole-free degenerate case.
pub fn pairing_bound_check(
    w: &CorrectorField,
    mesh: &Mesh,
    a: &CoefficientField,
) -> Result<f64, HomlabError> {
    crate::fem::check_field(mesh, &w.w)?;
    if mesh.holes.is_empty() {
        return Ok(1.0);
    }
    let stiff_t = assemble_stiffness(mesh, a, true)?;
    let n = mesh.n_vertices();
    let mut sw = vec![0.0; n];
    stiff_t.mul_vec(&w.w.values, &mut sw);
    let is_hole = |v: usize| {
        matches!(
            mesh.vertex_marker[v],
            VertexMarker::HoleBoundary | VertexMarker::HoleInterior
        )
    };
    // flux rows on hole nodes belong to the constraint functional, which
    // never pairs with extended fields, so the measure rows vanish there
    let mu: Vec<f64> = (0..n).map(|i| if is_hole(i) { 0.0 } else { sw[i] }).collect();
    let wmu: Vec<f64> = (0..n).map(|i| w.w.values[i] * mu[i]).collect();

    let identity = CoefficientField::identity(mesh);
    let lap = assemble_stiffness(mesh, &identity, false)?;
    let constrained = constrained_from(mesh, |v| {
        (mesh.vertex_marker[v] == VertexMarker::OuterBoundary).then_some(0.0)
    });
    let dual_norm = |f: &[f64]| -> Result<f64, HomlabError> {
        let sys = constrain(&lap, f, &constrained)?;
        let r = solve_spd(&sys, 1e-12)?;
        let e: f64 = r.iter().zip(f).map(|(ri, fi)| ri * fi).sum();
        Ok(e.max(0.0).sqrt())
    };
    let nm = dual_norm(&mu)?;
    let nwm = dual_norm(&wmu)?;
    if nm == 0.0 {
        return Ok(1.0);
    }
    Ok(nwm / nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, MeshParams};

    #[test]
    fn profile_endpoints_and_midpoint() {
        let r0 = 0.01;
        let big_r = 0.5;
        assert_eq!(analytic_w_profile(r0, r0, big_r).unwrap(), 0.0);
        assert_eq!(analytic_w_profile(big_r, r0, big_r).unwrap(), 1.0);
        let mid = (r0 * big_r).sqrt();
        assert!((analytic_w_profile(mid, r0, big_r).unwrap() - 0.5).abs() < 1e-12);
        assert!(analytic_w_profile(0.5, 0.5, 0.4).is_err());
    }

    #[test]
    fn annulus_energy_log_law() {
        // R/r0 = e^4 -> 2 pi / 4
        let e = analytic_annulus_energy(1e-3, 1e-3 * 4.0f64.exp());
        assert!((e - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn limit_density_spot_values() {
        assert!((analytic_mu(2, 1.0).unwrap() - PI / 2.0).abs() < 1e-14);
        assert!((analytic_mu(3, 1.0).unwrap() - PI / 2.0).abs() < 1e-14);
        assert!((analytic_mu(2, 2.0).unwrap() - PI / 4.0).abs() < 1e-14);
        assert!(analytic_mu(1, 1.0).is_err());
        // d = 4: S_3 = 2 pi^2, so mu = 2 pi^2 * 2 / 16 * c0^2
        let mu4 = analytic_mu(4, 3.0).unwrap();
        assert!((mu4 - 2.0 * PI * PI * 2.0 / 16.0 * 9.0).abs() < 1e-11);
    }

    fn setup(eps: f64) -> (LatticeSpec, Mesh, CoefficientField) {
        let spec = LatticeSpec::unit_square(eps, 1.0).unwrap();
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let a = CoefficientField::identity(&mesh);
        (spec, mesh, a)
    }

    #[test]
    fn corrector_matches_log_profile_on_rings() {
        let (spec, mesh, a) = setup(0.5);
        let w = compute_w(&mesh, &spec, &a).unwrap();
        let hole = &mesh.holes[0];
        let mut worst: f64 = 0.0;
        for (v, p) in mesh.vertices.iter().enumerate() {
            let dx = p[0] - hole.center[0];
            let dy = p[1] - hole.center[1];
            let rho = (dx * dx + dy * dy).sqrt();
            if rho > hole.radius * (1.0 + 1e-9) && rho < spec.epsilon * (1.0 - 1e-9) {
                let exact = analytic_w_profile(rho, hole.radius, spec.epsilon).unwrap();
                worst = worst.max((w.w.values[v] - exact).abs());
            }
        }
        assert!(worst <= 2e-2, "ring-node deviation {worst}");
        for v in 0..mesh.n_vertices() {
            if matches!(
                mesh.vertex_marker[v],
                VertexMarker::HoleBoundary | VertexMarker::HoleInterior
            ) {
                assert_eq!(w.w.values[v], 0.0);
            }
        }
        // domain corners sit outside the ball
        let corner = mesh
            .vertices
            .iter()
            .position(|p| p[0] == 0.0 && p[1] == 0.0)
            .unwrap();
        assert_eq!(w.w.values[corner], 1.0);
    }

    #[test]
    fn cell_energy_matches_annulus_oracle() {
        let (spec, mesh, a) = setup(0.5);
        let w = compute_w(&mesh, &spec, &a).unwrap();
        let d = mu_density(&w, &mesh, &a).unwrap();
        let exact = analytic_annulus_energy(mesh.holes[0].radius, 0.5);
        let interior = d.interior_densities();
        assert_eq!(interior.len(), 1);
        // the single cell is the whole unit square, so density == energy
        let rel = (interior[0] - exact).abs() / exact;
        assert!(rel <= 0.03, "cell energy off by {rel:.4}");
        assert!((exact - 1.900).abs() < 2e-3);
    }

    #[test]
    fn density_scales_with_coefficient() {
        let (spec, mesh, _) = setup(1.0 / 3.0);
        let a1 = CoefficientField::identity(&mesh);
        let a2 = CoefficientField::constant(&mesh, [2.0, 0.0, 0.0, 2.0]).unwrap();
        let w1 = compute_w(&mesh, &spec, &a1).unwrap();
        let w2 = compute_w(&mesh, &spec, &a2).unwrap();
        let d1 = mu_density(&w1, &mesh, &a1).unwrap();
        let d2 = mu_density(&w2, &mesh, &a2).unwrap();
        for (c1, c2) in d1.cells.iter().zip(&d2.cells) {
            assert!((2.0 * c1.density - c2.density).abs() <= 1e-10 * (1.0 + c2.density));
        }
    }

    #[test]
    fn no_holes_degenerate_case() {
        let spec = LatticeSpec::unit_square(0.8, 8.0).unwrap();
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let a = CoefficientField::identity(&mesh);
        let w = compute_w(&mesh, &spec, &a).unwrap();
        assert!(w.w.values.iter().all(|&v| v == 1.0));
        let d = mu_density(&w, &mesh, &a).unwrap();
        assert!(d.cells.iter().all(|c| c.density == 0.0));
        let z = compute_z(&mesh, &w, &a).unwrap();
        assert!(z.z.values.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        assert_eq!(pairing_bound_check(&w, &mesh, &a).unwrap(), 1.0);
    }

    #[test]
    fn z_sandwich_holds() {
        for eps in [0.5, 1.0 / 3.0] {
            let (spec, mesh, a) = setup(eps);
            let w = compute_w(&mesh, &spec, &a).unwrap();
            let z = compute_z(&mesh, &w, &a).unwrap();
            let (min_z, max_excess) = sandwich_violation(&w, &z);
            assert!(min_z >= -1e-8, "z dips to {min_z}");
            assert!(max_excess <= 1e-8, "z exceeds w by {max_excess}");
        }
    }

    #[test]
    fn pairing_ratio_bounded_and_scale_invariant() {
        let (spec, mesh, a) = setup(0.5);
        let w = compute_w(&mesh, &spec, &a).unwrap();
        let r1 = pairing_bound_check(&w, &mesh, &a).unwrap();
        assert!(r1 <= 1.0 + 1e-6, "ratio {r1}");
        let a2 = CoefficientField::constant(&mesh, [3.0, 0.0, 0.0, 3.0]).unwrap();
        let w2 = compute_w(&mesh, &spec, &a2).unwrap();
        let r2 = pairing_bound_check(&w2, &mesh, &a2).unwrap();
        assert!((r1 - r2).abs() < 1e-8, "ratios {r1} vs {r2}");
    }
}
