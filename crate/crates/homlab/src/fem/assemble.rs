//! P1 assembly of stiffness, weighted mass and load, plus Dirichlet
//! elimination and the constrained SPD solve.

use super::sparse::{pcg, CsrMatrix, Triplets};
use crate::domain::Mesh;
use crate::error::{HomlabError, Stage};
use std::collections::BTreeMap;

/// Matrix-valued coefficient, piecewise constant per triangle (evaluated at
/// the centroid when built from a closure).
#[derive(Debug, Clone)]
pub struct CoefficientField {
    /// Row-major 2x2 matrix per triangle.
    pub per_triangle: Vec<[f64; 4]>,
    /// Coercivity constant: smallest eigenvalue of the symmetric parts.
    pub alpha: f64,
    /// Largest matrix entry magnitude.
    pub sup_norm: f64,
}

impl CoefficientField {
    pub fn identity(mesh: &Mesh) -> Self {
        CoefficientField {
            per_triangle: vec![[1.0, 0.0, 0.0, 1.0]; mesh.n_triangles()],
            alpha: 1.0,
            sup_norm: 1.0,
        }
    }

    pub fn constant(mesh: &Mesh, a: [f64; 4]) -> Result<Self, HomlabError> {
        Self::from_fn(mesh, |_, _| a)
    }

    /// Build from a pointwise matrix map, sampling at triangle centroids.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> [f64; 4]) -> Result<Self, HomlabError> {
        let mut per_triangle = Vec::with_capacity(mesh.n_triangles());
        let mut alpha = f64::INFINITY;
        let mut sup = 0.0f64;
        for t in 0..mesh.n_triangles() {
            let c = mesh.triangle_centroid(t);
            let a = f(c[0], c[1]);
            // eigenvalues of the symmetric part
            let s01 = 0.5 * (a[1] + a[2]);
            let tr = a[0] + a[3];
            let det = a[0] * a[3] - s01 * s01;
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let lmin = tr / 2.0 - disc;
            alpha = alpha.min(lmin);
            for v in a {
                sup = sup.max(v.abs());
            }
            per_triangle.push(a);
        }
        if !(alpha > 0.0) {
            return Err(HomlabError::stage(
                Stage::Fem,
                format!("coefficient is not coercive: min symmetric eigenvalue {alpha:.3e}"),
            ));
        }
        Ok(CoefficientField {
            per_triangle,
            alpha,
            sup_norm: sup,
        })
    }

    #[inline]
    fn apply(&self, t: usize, g: [f64; 2], transpose: bool) -> [f64; 2] {
        let a = self.per_triangle[t];
        if transpose {
            [a[0] * g[0] + a[2] * g[1], a[1] * g[0] + a[3] * g[1]]
        } else {
            [a[0] * g[0] + a[1] * g[1], a[2] * g[0] + a[3] * g[1]]
        }
    }
}

/// Gradients of the three P1 basis functions and the (signed) area.
pub(crate) fn p1_gradients(mesh: &Mesh, t: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.triangles[t];
    let p = &mesh.vertices;
    let area = mesh.triangle_area(t);
    let two_a = 2.0 * area;
    // grad(phi_i) = perp(p_{i+2} - p_{i+1}) / (2 A), perp(x, y) = (-y, x)
    let g = |u: [f64; 2], v: [f64; 2]| [-(v[1] - u[1]) / two_a, (v[0] - u[0]) / two_a];
    (
        [g(p[b], p[c]), g(p[c], p[a]), g(p[a], p[b])],
        area,
    )
}

const DEGENERATE_AREA: f64 = 1e-14;

/// Degenerate iff non-positive or vanishing relative to the triangle's own
/// scale (longest edge squared). At unit scale this is the absolute 1e-14
/// threshold; the relative form keeps the deliberately tiny, well-shaped
/// triangles around exponentially small holes assemblable.
fn is_degenerate(mesh: &Mesh, t: usize, area: f64) -> bool {
    if area <= 0.0 {
        return true;
    }
    let [a, b, c] = mesh.triangles[t];
    let p = &mesh.vertices;
    let sq = |u: [f64; 2], v: [f64; 2]| {
        let dx = v[0] - u[0];
        let dy = v[1] - u[1];
        dx * dx + dy * dy
    };
    let longest = sq(p[a], p[b]).max(sq(p[b], p[c])).max(sq(p[c], p[a]));
    area < DEGENERATE_AREA * longest
}

/// Stiffness matrix for the bilinear form `(A grad u, grad v)`; with
/// `transpose` set, `A` is applied transposed.
///
/// Exact for the piecewise-constant coefficient; degenerate triangles are an
/// error.
pub fn assemble_stiffness(
    mesh: &Mesh,
    a: &CoefficientField,
    transpose: bool,
) -> Result<CsrMatrix, HomlabError> {
    if a.per_triangle.len() != mesh.n_triangles() {
        return Err(HomlabError::stage(
            Stage::Fem,
            "coefficient field does not match mesh",
        ));
    }
    let mut trip = Triplets::new(mesh.n_vertices());
    for t in 0..mesh.n_triangles() {
        let (grads, area) = p1_gradients(mesh, t);
        if is_degenerate(mesh, t, area) {
            return Err(HomlabError::stage(
                Stage::Fem,
                format!("degenerate triangle {t}: area {area:.3e}"),
            ));
        }
        let tri = mesh.triangles[t];
        for i in 0..3 {
            let agj: [f64; 2] = grads[i];
            for j in 0..3 {
                let ag = a.apply(t, grads[j], transpose);
                let val = area * (ag[0] * agj[0] + ag[1] * agj[1]);
                trip.push(tri[i], tri[j], val);
            }
        }
    }
    Ok(trip.to_csr())
}

/// Mass matrix weighted by a per-triangle nonnegative factor; `lumped` sums
/// rows onto the diagonal.
pub fn assemble_weighted_mass(
    mesh: &Mesh,
    weight: &[f64],
    lumped: bool,
) -> Result<CsrMatrix, HomlabError> {
    if weight.len() != mesh.n_triangles() {
        return Err(HomlabError::stage(
            Stage::Fem,
            "weight vector does not match triangle count",
        ));
    }
    let mut trip = Triplets::new(mesh.n_vertices());
    for t in 0..mesh.n_triangles() {
        let w = weight[t];
        if w < 0.0 {
            return Err(HomlabError::stage(
                Stage::Fem,
                format!("negative mass weight {w} on triangle {t}"),
            ));
        }
        if w == 0.0 {
            continue;
        }
        let area = mesh.triangle_area(t);
        let tri = mesh.triangles[t];
        if lumped {
            for &v in &tri {
                trip.push(v, v, w * area / 3.0);
            }
        } else {
            for i in 0..3 {
                for j in 0..3 {
                    let base = if i == j { 2.0 } else { 1.0 };
                    trip.push(tri[i], tri[j], w * area / 12.0 * base);
                }
            }
        }
    }
    Ok(trip.to_csr())
}

/// Right-hand-side data: nodal values of a P1 density, or one value per
/// triangle.
pub enum LoadData<'a> {
    Vertex(&'a [f64]),
    Triangle(&'a [f64]),
}

/// Load vector `(f, phi_i)`, exact when `f` is the P1 interpolant of the
/// vertex data (or piecewise constant per triangle).
pub fn assemble_load(mesh: &Mesh, f: LoadData<'_>) -> Result<Vec<f64>, HomlabError> {
    let mut load = vec![0.0; mesh.n_vertices()];
    match f {
        LoadData::Vertex(vals) => {
            if vals.len() != mesh.n_vertices() {
                return Err(HomlabError::stage(Stage::Fem, "load data length mismatch"));
            }
            for v in vals {
                if !v.is_finite() {
                    return Err(HomlabError::stage(Stage::Fem, "non-finite load value"));
                }
            }
            for t in 0..mesh.n_triangles() {
                let area = mesh.triangle_area(t);
                let tri = mesh.triangles[t];
                for i in 0..3 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        acc += if i == j { 2.0 } else { 1.0 } * vals[tri[j]];
                    }
                    load[tri[i]] += area / 12.0 * acc;
                }
            }
        }
        LoadData::Triangle(vals) => {
            if vals.len() != mesh.n_triangles() {
                return Err(HomlabError::stage(Stage::Fem, "load data length mismatch"));
            }
            for t in 0..mesh.n_triangles() {
                let area = mesh.triangle_area(t);
                for &v in &mesh.triangles[t] {
                    load[v] += area / 3.0 * vals[t];
                }
            }
        }
    }
    Ok(load)
}

/// Reduced system after Dirichlet elimination.
pub struct Constrained {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Free-node index per full index (None when constrained).
    pub free_of_full: Vec<Option<usize>>,
    /// Full index per free index.
    pub full_of_free: Vec<usize>,
    /// Constrained value per full index (0 for free nodes).
    pub values: Vec<f64>,
    n_full: usize,
}

impl Constrained {
    /// Scatter a free-node solution back to a full-length nodal vector with
    /// the constrained values substituted.
    pub fn expand(&self, x_free: &[f64]) -> Vec<f64> {
        let mut full = self.values.clone();
        for (k, &v) in self.full_of_free.iter().enumerate() {
            full[v] = x_free[k];
        }
        debug_assert_eq!(full.len(), self.n_full);
        full
    }

    pub fn n_free(&self) -> usize {
        self.full_of_free.len()
    }
}

/// Eliminate the constrained nodes from `matrix * u = rhs`, substituting
/// their values into the right-hand side.
///
/// An empty free set yields a trivial system (solved immediately by the
/// constrained values); an empty constrained set is rejected since the
/// problems assembled here are singular without Dirichlet data.
pub fn constrain(
    matrix: &CsrMatrix,
    rhs: &[f64],
    constrained: &BTreeMap<usize, f64>,
) -> Result<Constrained, HomlabError> {
    let n = matrix.n;
    if rhs.len() != n {
        return Err(HomlabError::stage(Stage::Fem, "rhs length mismatch"));
    }
    if constrained.is_empty() {
        return Err(HomlabError::stage(
            Stage::Fem,
            "constrained node set is empty; the system would be singular",
        ));
    }
    if let Some((&k, _)) = constrained.iter().next_back() {
        if k >= n {
            return Err(HomlabError::stage(
                Stage::Fem,
                format!("constrained node {k} out of range"),
            ));
        }
    }
    let mut free_of_full = vec![None; n];
    let mut full_of_free = Vec::new();
    let mut values = vec![0.0; n];
    for i in 0..n {
        if let Some(&v) = constrained.get(&i) {
            values[i] = v;
        } else {
            free_of_full[i] = Some(full_of_free.len());
            full_of_free.push(i);
        }
    }
    let nf = full_of_free.len();
    let mut trip = Triplets::new(nf);
    let mut red_rhs = vec![0.0; nf];
    for i in 0..n {
        let Some(fi) = free_of_full[i] else { continue };
        red_rhs[fi] = rhs[i];
        for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            let j = matrix.col_ix[k];
            match free_of_full[j] {
                Some(fj) => trip.push(fi, fj, matrix.vals[k]),
                None => red_rhs[fi] -= matrix.vals[k] * values[j],
            }
        }
    }
    Ok(Constrained {
        matrix: trip.to_csr(),
        rhs: red_rhs,
        free_of_full,
        full_of_free,
        values,
        n_full: n,
    })
}

/// Solve the reduced SPD system by preconditioned conjugate gradients and
/// scatter back to a full nodal vector.
pub fn solve_spd(system: &Constrained, rtol: f64) -> Result<Vec<f64>, HomlabError> {
    let nf = system.n_free();
    if nf == 0 {
        return Ok(system.expand(&[]));
    }
    let max_iters = 400 + 40 * nf;
    let (x, _stats) = pcg(&system.matrix, &system.rhs, rtol, max_iters)?;
    Ok(system.expand(&x))
}

/// Convenience: eliminate and solve in one call.
pub fn solve_constrained(
    matrix: &CsrMatrix,
    rhs: &[f64],
    constrained: &BTreeMap<usize, f64>,
    rtol: f64,
) -> Result<Vec<f64>, HomlabError> {
    let sys = constrain(matrix, rhs, constrained)?;
    solve_spd(&sys, rtol)
}

/// Dirichlet value map from a per-node predicate.
pub fn constrained_from(
    mesh: &Mesh,
    mut pred: impl FnMut(usize) -> Option<f64>,
) -> BTreeMap<usize, f64> {
    let mut map = BTreeMap::new();
    for v in 0..mesh.n_vertices() {
        if let Some(val) = pred(v) {
            map.insert(v, val);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, LatticeSpec, Mesh, MeshParams, Rect, VertexMarker};

    /// Single positively oriented right triangle (0,0), (1,0), (0,1).
    fn one_triangle() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            vertex_marker: vec![VertexMarker::OuterBoundary; 3],
            triangle_cell: vec![None],
            triangle_in_hole: vec![false],
            cells: Vec::new(),
            holes: Vec::new(),
            domain: Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            },
            ring_radii: Vec::new(),
        }
    }

    fn plain_unit_mesh(h: f64) -> Mesh {
        let spec = LatticeSpec::unit_square(5.0, 200.0).unwrap();
        build_mesh(
            &spec,
            &MeshParams {
                target_h: h,
                ..MeshParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn element_stiffness_matches_hand_computation() {
        let mesh = one_triangle();
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        let expect = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (k.get(i, j) - expect[i][j]).abs() < 1e-14,
                    "K[{i}][{j}] = {}",
                    k.get(i, j)
                );
            }
        }
    }

    #[test]
    fn constants_in_stiffness_kernel_and_linearity() {
        let mesh = plain_unit_mesh(0.2);
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let mut y = vec![0.0; mesh.n_vertices()];
        k.mul_vec(&ones, &mut y);
        for v in y {
            assert!(v.abs() < 1e-12);
        }
        let a2 = CoefficientField::constant(&mesh, [2.0, 0.0, 0.0, 2.0]).unwrap();
        let k2 = assemble_stiffness(&mesh, &a2, false).unwrap();
        for (v, w) in k.vals.iter().zip(&k2.vals) {
            assert!((2.0 * v - w).abs() < 1e-13);
        }
    }

    #[test]
    fn transpose_flag_transposes() {
        let mesh = plain_unit_mesh(0.25);
        let a = CoefficientField::constant(&mesh, [2.0, 0.7, 0.1, 1.5]).unwrap();
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        let kt = assemble_stiffness(&mesh, &a, true).unwrap();
        assert_eq!(kt, k.transpose());
    }

    #[test]
    fn symmetric_coefficient_gives_symmetric_matrix() {
        let mesh = plain_unit_mesh(0.25);
        let a = CoefficientField::constant(&mesh, [2.0, 0.5, 0.5, 1.0]).unwrap();
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        assert!(k.asymmetry() < 1e-14);
    }

    #[test]
    fn lumped_mass_unit_triangle() {
        // triangle scaled to unit area
        let mut mesh = one_triangle();
        for p in &mut mesh.vertices {
            p[0] *= 2.0_f64.sqrt();
            p[1] *= 2.0_f64.sqrt();
        }
        let m = assemble_weighted_mass(&mesh, &[1.0], true).unwrap();
        for i in 0..3 {
            assert!((m.get(i, i) - 1.0 / 3.0).abs() < 1e-14);
        }
        let zero = assemble_weighted_mass(&mesh, &[0.0], false).unwrap();
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn mass_quadrature_weighted_area() {
        let mesh = plain_unit_mesh(0.2);
        let w = vec![3.0; mesh.n_triangles()];
        let m = assemble_weighted_mass(&mesh, &w, false).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let mut y = vec![0.0; mesh.n_vertices()];
        m.mul_vec(&ones, &mut y);
        let total: f64 = ones.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((total - 3.0).abs() < 1e-12);
        assert!(assemble_weighted_mass(&mesh, &vec![-1.0; mesh.n_triangles()], false).is_err());
    }

    #[test]
    fn load_is_exact_for_linear_data() {
        let mesh = one_triangle();
        // f = 1 + 2x + 3y at the vertices
        let f = [1.0, 3.0, 4.0];
        let load = assemble_load(&mesh, LoadData::Vertex(&f)).unwrap();
        // analytic moments int_T f phi_i via exact P1 mass: area/12 (2 f_i + f_j + f_k)
        let area = 0.5;
        for i in 0..3 {
            let expect = area / 12.0 * (2.0 * f[i] + f[(i + 1) % 3] + f[(i + 2) % 3]);
            assert!((load[i] - expect).abs() < 1e-15);
        }
        // constants: entries sum to the area
        let total: f64 = assemble_load(&mesh, LoadData::Vertex(&[1.0, 1.0, 1.0]))
            .unwrap()
            .iter()
            .sum();
        assert!((total - 0.5).abs() < 1e-15);
        let zero = assemble_load(&mesh, LoadData::Vertex(&[0.0, 0.0, 0.0])).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constrain_substitutes_and_keeps_symmetry() {
        let mesh = one_triangle();
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        // u = g on nodes 1 and 2, free node 0: hand elimination
        let mut bc = BTreeMap::new();
        bc.insert(1, 2.0);
        bc.insert(2, -1.0);
        let sys = constrain(&k, &[0.0; 3], &bc).unwrap();
        assert_eq!(sys.n_free(), 1);
        // K00 u0 = -K01 g1 - K02 g2 -> u0 = (0.5*2 - 0.5*1)/1
        let u = solve_spd(&sys, 1e-14).unwrap();
        let expect = (0.5 * 2.0 + 0.5 * (-1.0)) / 1.0;
        assert!((u[0] - expect).abs() < 1e-12);
        assert_eq!(u[1], 2.0);
        assert_eq!(u[2], -1.0);
        assert!(sys.matrix.asymmetry() < 1e-15);
    }

    #[test]
    fn all_nodes_constrained_is_trivial() {
        let mesh = one_triangle();
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        let bc: BTreeMap<usize, f64> = (0..3).map(|i| (i, 0.0)).collect();
        let sys = constrain(&k, &[1.0; 3], &bc).unwrap();
        assert_eq!(sys.n_free(), 0);
        let u = solve_spd(&sys, 1e-12).unwrap();
        assert_eq!(u, vec![0.0; 3]);
    }

    #[test]
    fn empty_constrained_set_rejected() {
        let mesh = one_triangle();
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        assert!(constrain(&k, &[0.0; 3], &BTreeMap::new()).is_err());
    }

    #[test]
    fn degenerate_sliver_rejected() {
        let mut mesh = one_triangle();
        mesh.vertices[2] = [0.5, 1e-15];
        let a = CoefficientField::identity(&mesh);
        let err = assemble_stiffness(&mesh, &a, false).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn tiny_well_shaped_triangles_assemble() {
        // exponentially small holes produce well-shaped triangles far below
        // any absolute area threshold
        let spec = LatticeSpec::unit_square(0.25, 1.0).unwrap();
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let a = CoefficientField::identity(&mesh);
        assert!(assemble_stiffness(&mesh, &a, false).is_ok());
    }

    #[test]
    fn non_coercive_coefficient_rejected() {
        let mesh = one_triangle();
        assert!(CoefficientField::constant(&mesh, [1.0, 0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn galerkin_residual_below_tolerance() {
        let mesh = plain_unit_mesh(0.1);
        let a = CoefficientField::identity(&mesh);
        let k = assemble_stiffness(&mesh, &a, false).unwrap();
        let f = vec![1.0; mesh.n_vertices()];
        let load = assemble_load(&mesh, LoadData::Vertex(&f)).unwrap();
        let bc: BTreeMap<usize, f64> = mesh
            .outer_boundary_indices()
            .into_iter()
            .map(|v| (v, 0.0))
            .collect();
        let rtol = 1e-10;
        let sys = constrain(&k, &load, &bc).unwrap();
        let nf = sys.n_free();
        let (x, stats) = pcg(&sys.matrix, &sys.rhs, rtol, 400 + 40 * nf).unwrap();
        let mut r = vec![0.0; nf];
        sys.matrix.mul_vec(&x, &mut r);
        let res: f64 = r
            .iter()
            .zip(&sys.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let bnorm: f64 = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(res <= rtol * bnorm * 1.01);
        assert!(stats.relative_residual <= rtol);
    }
}
