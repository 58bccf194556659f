//! Perforated-domain geometry: the lattice of cells, the radius law for the
//! holes, and measures of what perforation removes.
//!
//! Cells are axis-aligned squares of side `2*epsilon` anchored at the origin.
//! Every cell that lies entirely inside the domain carries one closed
//! circular hole at its center; cells cut by the domain boundary stay
//! unperforated so the capacitary construction remains local to its cell.

mod mesh;

pub use mesh::{
    build_mesh, mask_to_perforated, Mesh, MeshParams, MeshStats, VertexMarker,
    DEFAULT_POLYGON_ORDER,
};

use crate::error::{HomlabError, Stage};
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn unit_square() -> Self {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Scale parameter and radius-law constant for the perforation lattice.
///
/// `epsilon` is half the cell side (cells have side `2*epsilon`); `c0` is the
/// constant of the critical radius law. `dim` is accepted for the radius and
/// limit-measure formulas in any dimension >= 2, but meshing is 2-D only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub epsilon: f64,
    pub c0: f64,
    pub dim: u32,
    pub domain: Rect,
}

impl LatticeSpec {
    pub fn new(epsilon: f64, c0: f64, dim: u32, domain: Rect) -> Result<Self, HomlabError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(HomlabError::stage(
                Stage::Geometry,
                format!("epsilon must be positive, got {epsilon}"),
            ));
        }
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(HomlabError::stage(
                Stage::Geometry,
                format!("c0 must be positive, got {c0}"),
            ));
        }
        if dim < 2 {
            return Err(HomlabError::stage(
                Stage::Geometry,
                format!("dimension must be >= 2, got {dim}"),
            ));
        }
        if !(domain.x1 > domain.x0) || !(domain.y1 > domain.y0) {
            return Err(HomlabError::stage(
                Stage::Geometry,
                "domain rectangle is empty".to_string(),
            ));
        }
        let r = radius_for(epsilon, c0, dim)?;
        if r >= epsilon {
            return Err(HomlabError::stage(
                Stage::Geometry,
                format!(
                    "hole radius {r:.3e} >= epsilon {epsilon:.3e}; holes would not fit in their cells"
                ),
            ));
        }
        Ok(LatticeSpec {
            epsilon,
            c0,
            dim,
            domain,
        })
    }

    pub fn unit_square(epsilon: f64, c0: f64) -> Result<Self, HomlabError> {
        LatticeSpec::new(epsilon, c0, 2, Rect::unit_square())
    }

    pub fn hole_radius(&self) -> f64 {
        radius_for(self.epsilon, self.c0, self.dim).expect("validated at construction")
    }
}

/// Critical hole radius: `c0 * eps^(d/(d-2))` for `d >= 3`,
/// `exp(-c0/eps^2)` for `d = 2`.
pub fn radius_for(epsilon: f64, c0: f64, dim: u32) -> Result<f64, HomlabError> {
    if !(epsilon > 0.0) || !(c0 > 0.0) {
        return Err(HomlabError::stage(
            Stage::Geometry,
            format!("epsilon and c0 must be positive, got {epsilon}, {c0}"),
        ));
    }
    if dim < 2 {
        return Err(HomlabError::stage(
            Stage::Geometry,
            format!("radius law needs dimension >= 2, got {dim}"),
        ));
    }
    Ok(if dim == 2 {
        (-c0 / (epsilon * epsilon)).exp()
    } else {
        let p = dim as f64 / (dim as f64 - 2.0);
        c0 * epsilon.powf(p)
    })
}

/// One circular hole, realized as a regular polygon in the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
    pub polygon_order: usize,
    /// Integer lattice coordinates of the owning cell.
    pub cell: (i64, i64),
}

impl Hole {
    /// Exact area of the inscribed regular polygon.
    pub fn polygon_area(&self) -> f64 {
        let m = self.polygon_order as f64;
        0.5 * m * self.radius * self.radius * (2.0 * std::f64::consts::PI / m).sin()
    }

    pub fn disk_area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
}

/// One lattice cell clipped to the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub ix: i64,
    pub iy: i64,
    pub rect: Rect,
    /// True when the cell is a complete `2*epsilon` square inside the domain.
    pub full: bool,
    pub hole: Option<usize>,
}

/// Cells of the origin-anchored lattice clipped to the domain, in row-major
/// order (y outer, x inner), each full cell carrying a hole index.
pub fn cells_for(spec: &LatticeSpec, polygon_order: usize) -> (Vec<Cell>, Vec<Hole>) {
    let side = 2.0 * spec.epsilon;
    let d = spec.domain;
    let tol = 1e-12 * side.max(1.0);
    let ix0 = ((d.x0 + tol) / side).floor() as i64;
    let ix1 = ((d.x1 - tol) / side).ceil() as i64;
    let iy0 = ((d.y0 + tol) / side).floor() as i64;
    let iy1 = ((d.y1 - tol) / side).ceil() as i64;
    let r = spec.hole_radius();

    let mut cells = Vec::new();
    let mut holes = Vec::new();
    for iy in iy0..iy1 {
        for ix in ix0..ix1 {
            let xa = (ix as f64) * side;
            let xb = ((ix + 1) as f64) * side;
            let ya = (iy as f64) * side;
            let yb = ((iy + 1) as f64) * side;
            let rect = Rect {
                x0: xa.max(d.x0),
                y0: ya.max(d.y0),
                x1: xb.min(d.x1),
                y1: yb.min(d.y1),
            };
            let full = xa >= d.x0 - tol && xb <= d.x1 + tol && ya >= d.y0 - tol && yb <= d.y1 + tol;
            let hole = if full {
                let center = [xa + spec.epsilon, ya + spec.epsilon];
                holes.push(Hole {
                    center,
                    radius: r,
                    polygon_order,
                    cell: (ix, iy),
                });
                Some(holes.len() - 1)
            } else {
                None
            };
            cells.push(Cell {
                ix,
                iy,
                rect,
                full,
                hole,
            });
        }
    }
    (cells, holes)
}

/// One hole per lattice cell whose full `2*epsilon` square fits inside the
/// domain; boundary-cut cells are left unperforated.
pub fn place_holes(spec: &LatticeSpec) -> Result<Vec<Hole>, HomlabError> {
    if spec.dim != 2 {
        return Err(HomlabError::stage(
            Stage::Geometry,
            format!("hole placement is 2-D only, got dim {}", spec.dim),
        ));
    }
    let (_, holes) = cells_for(spec, DEFAULT_POLYGON_ORDER);
    Ok(holes)
}

/// Total area removed by the holes, as exact disks and as the inscribed
/// polygons actually meshed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovedMeasure {
    pub hole_count: usize,
    pub disk_area: f64,
    pub polygon_area: f64,
}

impl RemovedMeasure {
    /// Disk-area total, the quantity the limit statements are about.
    pub fn total(&self) -> f64 {
        self.disk_area
    }
}

pub fn removed_measure(spec: &LatticeSpec) -> Result<RemovedMeasure, HomlabError> {
    let holes = place_holes(spec)?;
    Ok(RemovedMeasure {
        hole_count: holes.len(),
        disk_area: holes.iter().map(Hole::disk_area).sum(),
        polygon_area: holes.iter().map(Hole::polygon_area).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_law_2d() {
        let r = radius_for(0.5, 1.0, 2).unwrap();
        assert!((r - (-4.0_f64).exp()).abs() < 1e-18);
        assert!((r - 1.8316e-2).abs() / r < 1e-3);
        let r = radius_for(0.25, 1.0, 2).unwrap();
        assert!((r - (-16.0_f64).exp()).abs() < 1e-22);
        assert!((r - 1.1254e-7).abs() / r < 1e-3);
    }

    #[test]
    fn radius_law_3d() {
        let r = radius_for(0.1, 2.0, 3).unwrap();
        assert!((r - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn radius_law_rejects_low_dim() {
        assert!(radius_for(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn one_hole_at_half() {
        let spec = LatticeSpec::unit_square(0.5, 1.0).unwrap();
        let holes = place_holes(&spec).unwrap();
        assert_eq!(holes.len(), 1);
        assert!((holes[0].center[0] - 0.5).abs() < 1e-15);
        assert!((holes[0].center[1] - 0.5).abs() < 1e-15);
        assert!((holes[0].radius - (-4.0_f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn hole_layout_follows_full_cells() {
        // enumeration oracle: a cell is kept iff its 2*eps square fits in the
        // unit square, so the expected centers are (2i+1)eps x (2j+1)eps
        for (eps, expected) in [(0.25, 4usize), (1.0 / 3.0, 1), (1.0 / 6.0, 9)] {
            let spec = LatticeSpec::unit_square(eps, 1.0).unwrap();
            let holes = place_holes(&spec).unwrap();
            let side = 2.0 * eps;
            let mut count = 0;
            let n = (1.0 / side).floor() as i64 + 1;
            for i in 0..n {
                for j in 0..n {
                    let (xa, ya) = (side * i as f64, side * j as f64);
                    if xa + side <= 1.0 + 1e-12 && ya + side <= 1.0 + 1e-12 {
                        count += 1;
                        let c = [xa + eps, ya + eps];
                        assert!(
                            holes
                                .iter()
                                .any(|h| (h.center[0] - c[0]).abs() < 1e-12
                                    && (h.center[1] - c[1]).abs() < 1e-12),
                            "missing hole at {c:?} for eps={eps}"
                        );
                    }
                }
            }
            assert_eq!(holes.len(), count);
            assert_eq!(holes.len(), expected);
        }
    }

    #[test]
    fn oversized_radius_rejected() {
        // c0 small enough that exp(-c0/eps^2) >= eps
        assert!(LatticeSpec::unit_square(0.5, 0.01).is_err());
    }

    #[test]
    fn removed_measure_values() {
        let spec = LatticeSpec::unit_square(0.5, 1.0).unwrap();
        let rm = removed_measure(&spec).unwrap();
        let expect = std::f64::consts::PI * (-8.0_f64).exp();
        assert!((rm.disk_area - expect).abs() / expect < 1e-12);
        assert!((rm.disk_area - 1.054e-3).abs() / expect < 1e-3);
        // polygon area is slightly below the disk area
        assert!(rm.polygon_area < rm.disk_area);
        assert!(rm.polygon_area > 0.99 * rm.disk_area);

        let spec = LatticeSpec::unit_square(0.25, 1.0).unwrap();
        let rm = removed_measure(&spec).unwrap();
        let expect = 4.0 * std::f64::consts::PI * (-32.0_f64).exp();
        assert_eq!(rm.hole_count, 4);
        assert!((rm.disk_area - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn removed_measure_decreases_along_schedule() {
        let mut prev = f64::INFINITY;
        for eps in [0.5, 1.0 / 3.0, 0.25] {
            let rm = removed_measure(&LatticeSpec::unit_square(eps, 1.0).unwrap()).unwrap();
            assert!(rm.disk_area < prev);
            prev = rm.disk_area;
        }
    }

    #[test]
    fn no_full_cell_means_no_holes() {
        // eps too large for any full cell in the unit square
        let spec = LatticeSpec::unit_square(0.8, 8.0).unwrap();
        assert!(place_holes(&spec).unwrap().is_empty());
    }
}
