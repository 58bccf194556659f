//! Quadrature-exact norms and pairings for P1 fields.

use super::assemble::{p1_gradients, CoefficientField};
use super::{check_same_mesh, FeFunction};
use crate::domain::Mesh;
use crate::error::HomlabError;

/// L2 inner product, exact for P1 arguments.
pub fn l2_inner(mesh: &Mesh, u: &FeFunction, v: &FeFunction) -> Result<f64, HomlabError> {
    check_same_mesh(mesh, u)?;
    check_same_mesh(mesh, v)?;
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let tri = mesh.triangles[t];
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += if i == j { 2.0 } else { 1.0 } * u.values[tri[i]] * v.values[tri[j]];
            }
        }
        acc += area / 12.0 * s;
    }
    Ok(acc)
}

pub fn norm_l2(mesh: &Mesh, u: &FeFunction) -> Result<f64, HomlabError> {
    Ok(l2_inner(mesh, u, u)?.max(0.0).sqrt())
}

/// H1 seminorm `|| grad u ||_{L2}`, exact for P1.
pub fn seminorm_h1(mesh: &Mesh, u: &FeFunction) -> Result<f64, HomlabError> {
    check_same_mesh(mesh, u)?;
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let (grads, area) = p1_gradients(mesh, t);
        let tri = mesh.triangles[t];
        let mut gx = 0.0;
        let mut gy = 0.0;
        for i in 0..3 {
            gx += u.values[tri[i]] * grads[i][0];
            gy += u.values[tri[i]] * grads[i][1];
        }
        acc += area * (gx * gx + gy * gy);
    }
    Ok(acc.max(0.0).sqrt())
}

/// Energy pairing `int (A grad u) . grad v`.
pub fn energy_pair(
    mesh: &Mesh,
    a: &CoefficientField,
    u: &FeFunction,
    v: &FeFunction,
) -> Result<f64, HomlabError> {
    check_same_mesh(mesh, u)?;
    check_same_mesh(mesh, v)?;
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let (grads, area) = p1_gradients(mesh, t);
        let tri = mesh.triangles[t];
        let mut gu = [0.0, 0.0];
        let mut gv = [0.0, 0.0];
        for i in 0..3 {
            gu[0] += u.values[tri[i]] * grads[i][0];
            gu[1] += u.values[tri[i]] * grads[i][1];
            gv[0] += v.values[tri[i]] * grads[i][0];
            gv[1] += v.values[tri[i]] * grads[i][1];
        }
        let m = a.per_triangle[t];
        let agu = [m[0] * gu[0] + m[1] * gu[1], m[2] * gu[0] + m[3] * gu[1]];
        acc += area * (agu[0] * gv[0] + agu[1] * gv[1]);
    }
    Ok(acc)
}
