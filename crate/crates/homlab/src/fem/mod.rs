//! P1 finite elements on triangles: assembly, Dirichlet elimination, SPD
//! solves and quadrature-exact norms.

mod assemble;
mod norms;
pub mod sparse;

pub use assemble::{
    assemble_load, assemble_stiffness, assemble_weighted_mass, constrain, constrained_from,
    solve_constrained, solve_spd, CoefficientField, Constrained, LoadData,
};
pub use norms::{energy_pair, l2_inner, norm_l2, seminorm_h1};
pub use sparse::{pcg, CgStats, CsrMatrix, Triplets};

use crate::domain::Mesh;
use crate::error::{HomlabError, Stage};

/// Continuous piecewise-linear field given by one value per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    pub values: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        FeFunction {
            values: vec![0.0; mesh.n_vertices()],
        }
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        FeFunction {
            values: vec![c; mesh.n_vertices()],
        }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        FeFunction {
            values: mesh.vertices.iter().map(|p| f(p[0], p[1])).collect(),
        }
    }

    pub fn from_values(mesh: &Mesh, values: Vec<f64>) -> Result<Self, HomlabError> {
        if values.len() != mesh.n_vertices() {
            return Err(HomlabError::stage(
                Stage::Fem,
                format!(
                    "field length {} does not match {} mesh vertices",
                    values.len(),
                    mesh.n_vertices()
                ),
            ));
        }
        Ok(FeFunction { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Apply a scalar map nodally.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeFunction {
        FeFunction {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeFunction) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// Nodal difference `self - other`.
    pub fn sub(&self, other: &FeFunction) -> FeFunction {
        assert_eq!(self.len(), other.len());
        FeFunction {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Plain-text export `x y value` per vertex.
    pub fn export_text(&self, mesh: &Mesh) -> String {
        let mut out = String::new();
        for (p, v) in mesh.vertices.iter().zip(&self.values) {
            out.push_str(&format!("{} {} {}\n", p[0], p[1], v));
        }
        out
    }

    /// Triangle-soup CSV for plotting: one row per triangle with the three
    /// `x,y,value` corners.
    pub fn export_triangle_csv(&self, mesh: &Mesh) -> String {
        let mut out = String::from("x0,y0,v0,x1,y1,v1,x2,y2,v2\n");
        for tri in &mesh.triangles {
            let mut row = Vec::with_capacity(9);
            for &v in tri {
                row.push(format!(
                    "{},{},{}",
                    mesh.vertices[v][0], mesh.vertices[v][1], self.values[v]
                ));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// P1 basis gradients and area of one triangle.
pub fn p1_gradients_of(mesh: &Mesh, t: usize) -> ([[f64; 2]; 3], f64) {
    assemble::p1_gradients(mesh, t)
}

/// Check that a nodal field belongs to this mesh.
pub fn check_field(mesh: &Mesh, u: &FeFunction) -> Result<(), HomlabError> {
    check_same_mesh(mesh, u)
}

pub(crate) fn check_same_mesh(mesh: &Mesh, u: &FeFunction) -> Result<(), HomlabError> {
    if u.len() != mesh.n_vertices() {
        return Err(HomlabError::stage(
            Stage::Fem,
            format!(
                "field length {} does not match {} mesh vertices",
                u.len(),
                mesh.n_vertices()
            ),
        ));
    }
    Ok(())
}
