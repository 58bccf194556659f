//! Conforming triangulation of the whole closed domain, resolving every hole
//! boundary, with logarithmically graded rings around the holes.
//!
//! Layout per perforated cell: the hole polygon (order `m`), geometrically
//! graded circular rings out to the inscribed radius `epsilon`, then one
//! transition layer tied to the uniformly subdivided cell boundary. The four
//! cardinal nodes of the outermost ring coincide with the cell-edge midpoints
//! (the inscribed circle is tangent there), so ring and cell boundary share
//! vertices and the mesh stays conforming across cells. Hole interiors are
//! meshed by a small fan and marked, which makes extension by zero a nodal
//! masking operation.
//!
//! Construction is fully deterministic: identical inputs produce bit-identical
//! vertex and triangle arrays.

use super::{cells_for, Cell, Hole, LatticeSpec, Rect};
use crate::error::{HomlabError, Stage};
use crate::fem::FeFunction;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

pub const DEFAULT_POLYGON_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexMarker {
    Interior,
    OuterBoundary,
    HoleBoundary,
    HoleInterior,
}

impl VertexMarker {
    pub fn as_int(self) -> u8 {
        match self {
            VertexMarker::Interior => 0,
            VertexMarker::OuterBoundary => 1,
            VertexMarker::HoleBoundary => 2,
            VertexMarker::HoleInterior => 3,
        }
    }

    pub fn from_int(v: u8) -> Result<Self, HomlabError> {
        Ok(match v {
            0 => VertexMarker::Interior,
            1 => VertexMarker::OuterBoundary,
            2 => VertexMarker::HoleBoundary,
            3 => VertexMarker::HoleInterior,
            _ => {
                return Err(HomlabError::stage(
                    Stage::Mesh,
                    format!("unknown vertex marker {v}"),
                ))
            }
        })
    }
}

/// Mesh generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshParams {
    /// Target edge length away from the holes.
    pub target_h: f64,
    /// Ratio of consecutive ring radii around each hole, in (1, 4].
    pub grading_ratio: f64,
    /// Number of polygon segments per hole boundary (multiple of 4, >= 16).
    pub polygon_order: usize,
    /// Quality gate: fail the build if any triangle angle drops below this
    /// many degrees.
    pub min_angle_deg: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            target_h: 0.05,
            grading_ratio: 1.4,
            polygon_order: DEFAULT_POLYGON_ORDER,
            min_angle_deg: 3.0,
        }
    }
}

impl MeshParams {
    fn validate(&self) -> Result<(), HomlabError> {
        if !(self.target_h > 0.0) {
            return Err(HomlabError::stage(Stage::Mesh, "target_h must be positive"));
        }
        if !(self.grading_ratio > 1.0 && self.grading_ratio <= 4.0) {
            return Err(HomlabError::stage(
                Stage::Mesh,
                format!("grading_ratio must be in (1, 4], got {}", self.grading_ratio),
            ));
        }
        if self.polygon_order < 16 || self.polygon_order % 4 != 0 {
            return Err(HomlabError::stage(
                Stage::Mesh,
                format!(
                    "polygon_order must be a multiple of 4 and >= 16, got {}",
                    self.polygon_order
                ),
            ));
        }
        if !(self.min_angle_deg >= 0.0) {
            return Err(HomlabError::stage(Stage::Mesh, "min_angle_deg must be >= 0"));
        }
        Ok(())
    }
}

/// Conforming triangulation of the closed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_marker: Vec<VertexMarker>,
    /// Owning lattice cell per triangle (index into `cells`), or `None` for
    /// meshes built without a lattice.
    pub triangle_cell: Vec<Option<usize>>,
    pub triangle_in_hole: Vec<bool>,
    /// Lattice cells the triangulation was built over (empty for plain meshes).
    pub cells: Vec<Cell>,
    /// Holes resolved by this mesh.
    pub holes: Vec<Hole>,
    pub domain: Rect,
    /// Ring radii generated around each hole (grading diagnostics).
    pub ring_radii: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct MeshStats {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub min_angle_deg: f64,
    pub total_area: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let p = &self.vertices;
        0.5 * ((p[b][0] - p[a][0]) * (p[c][1] - p[a][1])
            - (p[c][0] - p[a][0]) * (p[b][1] - p[a][1]))
    }

    pub fn triangle_centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let p = &self.vertices;
        [
            (p[a][0] + p[b][0] + p[c][0]) / 3.0,
            (p[a][1] + p[b][1] + p[c][1]) / 3.0,
        ]
    }

    /// Smallest interior angle of triangle `t`, degrees.
    pub fn triangle_min_angle_deg(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let p = &self.vertices;
        let mut worst = 180.0f64;
        let pts = [p[a], p[b], p[c]];
        for i in 0..3 {
            let u = [
                pts[(i + 1) % 3][0] - pts[i][0],
                pts[(i + 1) % 3][1] - pts[i][1],
            ];
            let v = [
                pts[(i + 2) % 3][0] - pts[i][0],
                pts[(i + 2) % 3][1] - pts[i][1],
            ];
            let dot = u[0] * v[0] + u[1] * v[1];
            let cr = u[0] * v[1] - u[1] * v[0];
            let ang = cr.atan2(dot).abs().to_degrees();
            worst = worst.min(ang);
        }
        worst
    }

    /// Structural checks: positive orientation, edge conformity, angle bound,
    /// and area closure against the domain rectangle.
    pub fn validate(&self, min_angle_deg: f64) -> Result<MeshStats, HomlabError> {
        let mut total_area = 0.0;
        let mut min_angle = 180.0f64;
        for t in 0..self.n_triangles() {
            let area = self.triangle_area(t);
            if !(area > 0.0) {
                return Err(HomlabError::stage(
                    Stage::Mesh,
                    format!("triangle {t} has non-positive area {area:.3e}"),
                ));
            }
            total_area += area;
            min_angle = min_angle.min(self.triangle_min_angle_deg(t));
        }
        if min_angle < min_angle_deg {
            return Err(HomlabError::stage(
                Stage::Mesh,
                format!(
                    "mesh quality infeasible: min angle {min_angle:.2} deg below bound {min_angle_deg:.2} deg \
                     ({} vertices, {} triangles)",
                    self.n_vertices(),
                    self.n_triangles()
                ),
            ));
        }
        // conformity: every interior edge shared by exactly two triangles
        let mut edges: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count > 2 {
                return Err(HomlabError::stage(
                    Stage::Mesh,
                    format!("edge ({a},{b}) shared by {count} triangles"),
                ));
            }
            if count == 1 {
                let on_rim = |v: usize| {
                    let [x, y] = self.vertices[v];
                    let d = self.domain;
                    let tol = 1e-9 * (d.width() + d.height());
                    (x - d.x0).abs() < tol
                        || (x - d.x1).abs() < tol
                        || (y - d.y0).abs() < tol
                        || (y - d.y1).abs() < tol
                };
                if !(on_rim(a) && on_rim(b)) {
                    return Err(HomlabError::stage(
                        Stage::Mesh,
                        format!("dangling interior edge ({a},{b})"),
                    ));
                }
            }
        }
        let dom_area = self.domain.area();
        if (total_area - dom_area).abs() > 1e-9 * dom_area {
            return Err(HomlabError::stage(
                Stage::Mesh,
                format!(
                    "triangulation area {total_area:.15} does not close the domain area {dom_area:.15}"
                ),
            ));
        }
        Ok(MeshStats {
            n_vertices: self.n_vertices(),
            n_triangles: self.n_triangles(),
            min_angle_deg: min_angle,
            total_area,
        })
    }

    /// Node indices whose marker is one of the hole markers.
    pub fn hole_node_indices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&v| {
                matches!(
                    self.vertex_marker[v],
                    VertexMarker::HoleBoundary | VertexMarker::HoleInterior
                )
            })
            .collect()
    }

    pub fn outer_boundary_indices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&v| self.vertex_marker[v] == VertexMarker::OuterBoundary)
            .collect()
    }

    /// Plain-text export: `nv nt`, then `x y marker` per vertex, then
    /// `i j k cell in_hole` per triangle.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.n_vertices(), self.n_triangles()));
        for v in 0..self.n_vertices() {
            out.push_str(&format!(
                "{} {} {}\n",
                self.vertices[v][0],
                self.vertices[v][1],
                self.vertex_marker[v].as_int()
            ));
        }
        for t in 0..self.n_triangles() {
            let [a, b, c] = self.triangles[t];
            let cell = self.triangle_cell[t].map(|c| c as i64).unwrap_or(-1);
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                a,
                b,
                c,
                cell,
                u8::from(self.triangle_in_hole[t])
            ));
        }
        out
    }

    /// Parse the plain-text format written by [`Mesh::export_text`]. Lattice
    /// metadata (cells, holes, ring radii) is not part of the format.
    pub fn import_text(text: &str, domain: Rect) -> Result<Mesh, HomlabError> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| HomlabError::stage(Stage::Mesh, "empty mesh file"))?;
        let mut it = head.split_whitespace();
        let bad = |what: &str| HomlabError::stage(Stage::Mesh, format!("malformed {what}"));
        let nv: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header"))?;
        let nt: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header"))?;
        let mut vertices = Vec::with_capacity(nv);
        let mut marker = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| bad("vertex line"))?;
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("vertex x"))?;
            let y: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("vertex y"))?;
            let m: u8 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("vertex marker"))?;
            vertices.push([x, y]);
            marker.push(VertexMarker::from_int(m)?);
        }
        let mut triangles = Vec::with_capacity(nt);
        let mut tri_cell = Vec::with_capacity(nt);
        let mut tri_hole = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = lines.next().ok_or_else(|| bad("triangle line"))?;
            let mut it = line.split_whitespace();
            let mut ijk = [0usize; 3];
            for v in &mut ijk {
                *v = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("triangle index"))?;
            }
            let cell: i64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("triangle cell"))?;
            let in_hole: u8 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("triangle in_hole"))?;
            triangles.push(ijk);
            tri_cell.push(if cell < 0 { None } else { Some(cell as usize) });
            tri_hole.push(in_hole != 0);
        }
        Ok(Mesh {
            vertices,
            triangles,
            vertex_marker: marker,
            triangle_cell: tri_cell,
            triangle_in_hole: tri_hole,
            cells: Vec::new(),
            holes: Vec::new(),
            domain,
            ring_radii: Vec::new(),
        })
    }
}

/// Copy of `u` with every hole node set to zero (nodal extension by zero).
///
/// For nonnegative fields this can only lower the L2 norm.
pub fn mask_to_perforated(u: &FeFunction, mesh: &Mesh) -> Result<FeFunction, HomlabError> {
    if u.values.len() != mesh.n_vertices() {
        return Err(HomlabError::stage(
            Stage::Fem,
            format!(
                "mask: field has {} values but mesh has {} vertices",
                u.values.len(),
                mesh.n_vertices()
            ),
        ));
    }
    let mut out = u.values.clone();
    for v in 0..mesh.n_vertices() {
        if matches!(
            mesh.vertex_marker[v],
            VertexMarker::HoleBoundary | VertexMarker::HoleInterior
        ) {
            out[v] = 0.0;
        }
    }
    Ok(FeFunction { values: out })
}

// ---------------------------------------------------------------------------
// builder
// ---------------------------------------------------------------------------

struct Builder {
    vertices: Vec<[f64; 2]>,
    marker: Vec<VertexMarker>,
    triangles: Vec<[usize; 3]>,
    tri_cell: Vec<Option<usize>>,
    tri_hole: Vec<bool>,
}

impl Builder {
    fn add_vertex(&mut self, p: [f64; 2], m: VertexMarker) -> usize {
        self.vertices.push(p);
        self.marker.push(m);
        self.vertices.len() - 1
    }

    fn add_tri(&mut self, a: usize, b: usize, c: usize, cell: usize, in_hole: bool) {
        self.triangles.push([a, b, c]);
        self.tri_cell.push(Some(cell));
        self.tri_hole.push(in_hole);
    }
}

/// Uniform subdivision points of `[a, b]` with exact endpoints.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 1);
    v.push(a);
    for k in 1..n {
        v.push(a + (b - a) * (k as f64) / (n as f64));
    }
    v.push(b);
    v
}

fn round_up_even(n: usize) -> usize {
    if n % 2 == 0 {
        n
    } else {
        n + 1
    }
}

/// Build the conforming mesh for `spec` under `params`.
pub fn build_mesh(spec: &LatticeSpec, params: &MeshParams) -> Result<Mesh, HomlabError> {
    params.validate()?;
    if spec.dim != 2 {
        return Err(HomlabError::stage(
            Stage::Mesh,
            format!("meshing supports dim = 2 only, got {}", spec.dim),
        ));
    }
    let (cells, holes) = cells_for(spec, params.polygon_order);
    let eps = spec.epsilon;
    let side = 2.0 * eps;
    let m = params.polygon_order;
    // segments per full-cell side: even, at least m/4, resolving target_h
    let n_side = round_up_even((m / 4).max((side / params.target_h).ceil() as usize));
    let h_edge = side / (n_side as f64);

    // grid stations
    let d = spec.domain;
    let mut xs: Vec<f64> = cells
        .iter()
        .filter(|c| c.iy == cells[0].iy)
        .map(|c| c.rect.x0)
        .collect();
    xs.push(d.x1);
    let mut ys: Vec<f64> = cells
        .iter()
        .filter(|c| c.ix == cells[0].ix)
        .map(|c| c.rect.y0)
        .collect();
    ys.push(d.y1);
    let ncols = xs.len() - 1;
    let nrows = ys.len() - 1;
    debug_assert_eq!(cells.len(), ncols * nrows);

    let seg_count = |w: f64, full: bool| -> usize {
        if full {
            n_side
        } else {
            round_up_even(((w / h_edge).round() as usize).max(2))
        }
    };
    let full_col: Vec<bool> = (0..ncols).map(|c| cells[c].full || cells[c].rect.width() >= side - 1e-12 * side).collect();
    let full_row: Vec<bool> = (0..nrows)
        .map(|r| cells[r * ncols].full || cells[r * ncols].rect.height() >= side - 1e-12 * side)
        .collect();
    let count_x: Vec<usize> = (0..ncols)
        .map(|c| seg_count(xs[c + 1] - xs[c], full_col[c]))
        .collect();
    let count_y: Vec<usize> = (0..nrows)
        .map(|r| seg_count(ys[r + 1] - ys[r], full_row[r]))
        .collect();
    let pos_x: Vec<Vec<f64>> = (0..ncols)
        .map(|c| linspace(xs[c], xs[c + 1], count_x[c]))
        .collect();
    let pos_y: Vec<Vec<f64>> = (0..nrows)
        .map(|r| linspace(ys[r], ys[r + 1], count_y[r]))
        .collect();

    let mut b = Builder {
        vertices: Vec::new(),
        marker: Vec::new(),
        triangles: Vec::new(),
        tri_cell: Vec::new(),
        tri_hole: Vec::new(),
    };

    let on_rim_x = |c: usize| c == 0 || c == ncols;
    let on_rim_y = |r: usize| r == 0 || r == nrows;

    // station corners
    let mut corner = vec![vec![0usize; nrows + 1]; ncols + 1];
    for (r, yr) in ys.iter().enumerate() {
        for (c, xc) in xs.iter().enumerate() {
            let mk = if on_rim_x(c) || on_rim_y(r) {
                VertexMarker::OuterBoundary
            } else {
                VertexMarker::Interior
            };
            corner[c][r] = b.add_vertex([*xc, *yr], mk);
        }
    }
    // horizontal grid-line interior nodes: hline[r][c] along y = ys[r]
    let mut hline = vec![vec![Vec::<usize>::new(); ncols]; nrows + 1];
    for r in 0..=nrows {
        for c in 0..ncols {
            let mk = if on_rim_y(r) {
                VertexMarker::OuterBoundary
            } else {
                VertexMarker::Interior
            };
            let ids: Vec<usize> = pos_x[c][1..count_x[c]]
                .iter()
                .map(|&x| b.add_vertex([x, ys[r]], mk))
                .collect();
            hline[r][c] = ids;
        }
    }
    // vertical grid-line interior nodes: vline[c][r] along x = xs[c]
    let mut vline = vec![vec![Vec::<usize>::new(); nrows]; ncols + 1];
    for c in 0..=ncols {
        for r in 0..nrows {
            let mk = if on_rim_x(c) {
                VertexMarker::OuterBoundary
            } else {
                VertexMarker::Interior
            };
            let ids: Vec<usize> = pos_y[r][1..count_y[r]]
                .iter()
                .map(|&y| b.add_vertex([xs[c], y], mk))
                .collect();
            vline[c][r] = ids;
        }
    }

    // side lists per cell, corners included, bottom/top left->right,
    // left/right bottom->top
    let side_nodes = |b_: &Builder, c: usize, r: usize| -> [Vec<usize>; 4] {
        let _ = b_;
        let mut bottom = vec![corner[c][r]];
        bottom.extend(&hline[r][c]);
        bottom.push(corner[c + 1][r]);
        let mut top = vec![corner[c][r + 1]];
        top.extend(&hline[r + 1][c]);
        top.push(corner[c + 1][r + 1]);
        let mut left = vec![corner[c][r]];
        left.extend(&vline[c][r]);
        left.push(corner[c][r + 1]);
        let mut right = vec![corner[c + 1][r]];
        right.extend(&vline[c + 1][r]);
        right.push(corner[c + 1][r + 1]);
        [bottom, right, top, left]
    };

    let mut ring_radii: Vec<Vec<f64>> = vec![Vec::new(); holes.len()];

    for (cell_id, cell) in cells.iter().enumerate() {
        let c = (cell_id % ncols, cell_id / ncols);
        let [bottom, right, top, left] = side_nodes(&b, c.0, c.1);
        match cell.hole {
            None => tensor_cell(&mut b, cell_id, &pos_x[c.0], &pos_y[c.1], &bottom, &right, &top, &left),
            Some(h) => {
                let radii = holed_cell(
                    &mut b,
                    cell_id,
                    &holes[h],
                    eps,
                    params.grading_ratio,
                    m,
                    &bottom,
                    &right,
                    &top,
                    &left,
                )?;
                ring_radii[h] = radii;
            }
        }
    }

    let mesh = Mesh {
        vertices: b.vertices,
        triangles: b.triangles,
        vertex_marker: b.marker,
        triangle_cell: b.tri_cell,
        triangle_in_hole: b.tri_hole,
        cells,
        holes,
        domain: d,
        ring_radii,
    };
    mesh.validate(params.min_angle_deg)?;
    Ok(mesh)
}

/// Tensor-product triangulation of an unperforated cell.
#[allow(clippy::too_many_arguments)]
fn tensor_cell(
    b: &mut Builder,
    cell_id: usize,
    px: &[f64],
    py: &[f64],
    bottom: &[usize],
    right: &[usize],
    top: &[usize],
    left: &[usize],
) {
    let nx = px.len() - 1;
    let ny = py.len() - 1;
    let mut grid = vec![vec![0usize; ny + 1]; nx + 1];
    for i in 0..=nx {
        grid[i][0] = bottom[i];
        grid[i][ny] = top[i];
    }
    for j in 0..=ny {
        grid[0][j] = left[j];
        grid[nx][j] = right[j];
    }
    for i in 1..nx {
        for j in 1..ny {
            grid[i][j] = b.add_vertex([px[i], py[j]], VertexMarker::Interior);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            let (a, c, d, e) = (grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]);
            if (i + j) % 2 == 0 {
                b.add_tri(a, c, d, cell_id, false);
                b.add_tri(a, d, e, cell_id, false);
            } else {
                b.add_tri(a, c, e, cell_id, false);
                b.add_tri(c, d, e, cell_id, false);
            }
        }
    }
}

/// Bridge two open polylines sharing both endpoints (inner arc `p`, outer
/// path `s`, both counterclockwise) with a fan of positively oriented
/// triangles.
fn zip_loops(b: &mut Builder, p: &[usize], s: &[usize], cell_id: usize) {
    let np = p.len();
    let ns = s.len();
    debug_assert!(np >= 3 && ns >= 3);
    debug_assert_eq!(p[0], s[0]);
    debug_assert_eq!(p[np - 1], s[ns - 1]);
    // opening wedge at the shared start
    b.add_tri(p[0], s[1], p[1], cell_id, false);
    let (mut i, mut j) = (1usize, 1usize);
    while i < np - 2 || j < ns - 2 {
        let adv_p = if i >= np - 2 {
            false
        } else if j >= ns - 2 {
            true
        } else {
            (i + 1) * (ns - 1) <= (j + 1) * (np - 1)
        };
        if adv_p {
            b.add_tri(p[i], s[j], p[i + 1], cell_id, false);
            i += 1;
        } else {
            b.add_tri(p[i], s[j], s[j + 1], cell_id, false);
            j += 1;
        }
    }
    // closing wedge at the shared end
    b.add_tri(p[np - 2], s[ns - 2], p[np - 1], cell_id, false);
}

/// Rings, transition layer and hole fan for a perforated cell. Returns the
/// generated ring radii.
#[allow(clippy::too_many_arguments)]
fn holed_cell(
    b: &mut Builder,
    cell_id: usize,
    hole: &Hole,
    eps: f64,
    grading_ratio: f64,
    m: usize,
    bottom: &[usize],
    right: &[usize],
    top: &[usize],
    left: &[usize],
) -> Result<Vec<f64>, HomlabError> {
    let c = hole.center;
    let r0 = hole.radius;
    let n_side = bottom.len() - 1;
    debug_assert!(n_side % 2 == 0);
    let (mid_b, mid_r, mid_t, mid_l) = (
        bottom[n_side / 2],
        right[n_side / 2],
        top[n_side / 2],
        left[n_side / 2],
    );

    // ring count: geometric progression from the hole radius out to eps
    let span = eps / r0;
    debug_assert!(span > 1.0);
    let k_rings = ((span.ln() / grading_ratio.ln()) - 1e-12).ceil().max(1.0) as usize;
    let log_span = span.ln();

    let angle = |t: usize| 2.0 * PI * (t as f64) / (m as f64);

    // hole boundary (ring 0)
    let ring0: Vec<usize> = (0..m)
        .map(|t| {
            let a = angle(t);
            b.add_vertex(
                [c[0] + r0 * a.cos(), c[1] + r0 * a.sin()],
                VertexMarker::HoleBoundary,
            )
        })
        .collect();
    // fan the hole interior from its center
    let center = b.add_vertex(c, VertexMarker::HoleInterior);
    for t in 0..m {
        b.add_tri(center, ring0[t], ring0[(t + 1) % m], cell_id, true);
    }

    let mut radii = Vec::with_capacity(k_rings);
    let mut prev = ring0;
    for k in 1..=k_rings {
        let rho = if k == k_rings {
            eps
        } else {
            r0 * ((k as f64) / (k_rings as f64) * log_span).exp()
        };
        radii.push(rho);
        let ring: Vec<usize> = (0..m)
            .map(|t| {
                // cardinal nodes of the outermost ring are the cell-edge
                // midpoints (tangency of the inscribed circle)
                if k == k_rings {
                    if t == 0 {
                        return mid_r;
                    } else if t == m / 4 {
                        return mid_t;
                    } else if t == m / 2 {
                        return mid_l;
                    } else if t == 3 * m / 4 {
                        return mid_b;
                    }
                }
                let a = angle(t);
                b.add_vertex(
                    [c[0] + rho * a.cos(), c[1] + rho * a.sin()],
                    VertexMarker::Interior,
                )
            })
            .collect();
        // counterclockwise quad loop: inner_t, outer_t, outer_{t+1}, inner_{t+1}
        for t in 0..m {
            let tn = (t + 1) % m;
            let (aa, bb, cc, dd) = (prev[t], ring[t], ring[tn], prev[tn]);
            if (t + k) % 2 == 0 {
                b.add_tri(aa, bb, cc, cell_id, false);
                b.add_tri(aa, cc, dd, cell_id, false);
            } else {
                b.add_tri(aa, bb, dd, cell_id, false);
                b.add_tri(bb, cc, dd, cell_id, false);
            }
        }
        prev = ring;
    }

    // transition layer: four quadrant zips from the outer ring to the cell
    // boundary, meeting at the tangency midpoints
    let ring_k = prev;
    let q = m / 4;
    let mid = n_side / 2;
    let arc = |a: usize, bq: usize| -> Vec<usize> {
        (a..=bq).map(|t| ring_k[t % m]).collect()
    };
    // quadrant 0: right midpoint -> top midpoint
    let mut path = right[mid..].to_vec();
    path.extend(top[mid..n_side].iter().rev());
    zip_loops(b, &arc(0, q), &path, cell_id);
    // quadrant 1: top midpoint -> left midpoint
    let mut path = top[..=mid].iter().rev().copied().collect::<Vec<_>>();
    path.extend(left[mid..n_side].iter().rev());
    zip_loops(b, &arc(q, 2 * q), &path, cell_id);
    // quadrant 2: left midpoint -> bottom midpoint
    let mut path = left[..=mid].iter().rev().copied().collect::<Vec<_>>();
    path.extend(bottom[1..=mid].iter());
    zip_loops(b, &arc(2 * q, 3 * q), &path, cell_id);
    // quadrant 3: bottom midpoint -> right midpoint
    let mut path = bottom[mid..].to_vec();
    path.extend(right[1..=mid].iter());
    zip_loops(b, &arc(3 * q, 4 * q), &path, cell_id);

    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LatticeSpec;

    fn unit_spec(eps: f64, c0: f64) -> LatticeSpec {
        LatticeSpec::unit_square(eps, c0).unwrap()
    }

    #[test]
    fn plain_fallback_structured_grid() {
        // eps too large for a full cell: one clipped cell, uniform grid
        let spec = unit_spec(0.8, 8.0);
        let params = MeshParams {
            target_h: 0.25,
            ..MeshParams::default()
        };
        let mesh = build_mesh(&spec, &params).unwrap();
        assert!(mesh.holes.is_empty());
        assert!(mesh.n_triangles() >= 32);
        assert!(mesh
            .vertex_marker
            .iter()
            .all(|m| matches!(m, VertexMarker::Interior | VertexMarker::OuterBoundary)));
        let stats = mesh.validate(params.min_angle_deg).unwrap();
        assert!((stats.total_area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_count_matches_log_arithmetic() {
        let spec = unit_spec(0.5, 1.0);
        let params = MeshParams {
            grading_ratio: 2.0,
            ..MeshParams::default()
        };
        let mesh = build_mesh(&spec, &params).unwrap();
        // ceil(log2(eps / r)) = ceil(log2(0.5 e^4)) = 5
        assert_eq!(mesh.ring_radii[0].len(), 5);
        let radii = &mesh.ring_radii[0];
        assert!((radii.last().unwrap() - 0.5).abs() < 1e-15);
        // consecutive ratios stay near the requested grading
        let mut prev = spec.hole_radius();
        for &rho in radii {
            let ratio = rho / prev;
            assert!(
                ratio >= 0.9 * 2.0 && ratio <= 1.1 * 2.0,
                "ring ratio {ratio} out of band"
            );
            prev = rho;
        }
    }

    #[test]
    fn hole_boundary_nodes_marked() {
        let spec = unit_spec(0.5, 1.0);
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let hole = &mesh.holes[0];
        let mut boundary_count = 0;
        for v in 0..mesh.n_vertices() {
            let dx = mesh.vertices[v][0] - hole.center[0];
            let dy = mesh.vertices[v][1] - hole.center[1];
            let d = (dx * dx + dy * dy).sqrt();
            if (d - hole.radius).abs() < 1e-12 * hole.radius.max(1e-30) {
                assert_eq!(mesh.vertex_marker[v], VertexMarker::HoleBoundary);
                boundary_count += 1;
            }
        }
        assert_eq!(boundary_count, mesh.holes[0].polygon_order);
    }

    #[test]
    fn perforated_mesh_closes_area_and_conforms() {
        for eps in [0.5, 1.0 / 3.0, 0.25] {
            let spec = unit_spec(eps, 1.0);
            let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
            let stats = mesh.validate(3.0).unwrap();
            assert!(
                (stats.total_area - 1.0).abs() < 1e-9,
                "area {} at eps {eps}",
                stats.total_area
            );
        }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = unit_spec(0.25, 1.0);
        let a = build_mesh(&spec, &MeshParams::default()).unwrap();
        let b = build_mesh(&spec, &MeshParams::default()).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.triangles, b.triangles);
    }

    #[test]
    fn infeasible_quality_bound_errors() {
        let spec = unit_spec(0.5, 1.0);
        let params = MeshParams {
            min_angle_deg: 25.0,
            ..MeshParams::default()
        };
        let err = build_mesh(&spec, &params).unwrap_err();
        assert!(err.to_string().contains("min angle"));
    }

    #[test]
    fn export_import_roundtrip() {
        let spec = unit_spec(0.5, 1.0);
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let text = mesh.export_text();
        let back = Mesh::import_text(&text, mesh.domain).unwrap();
        assert_eq!(mesh.vertices, back.vertices);
        assert_eq!(mesh.triangles, back.triangles);
        assert_eq!(mesh.vertex_marker, back.vertex_marker);
        assert_eq!(mesh.triangle_cell, back.triangle_cell);
        assert_eq!(mesh.triangle_in_hole, back.triangle_in_hole);
    }

    #[test]
    fn mask_zeroes_hole_nodes_and_is_idempotent() {
        let spec = unit_spec(0.5, 1.0);
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let ones = FeFunction {
            values: vec![1.0; mesh.n_vertices()],
        };
        let masked = mask_to_perforated(&ones, &mesh).unwrap();
        for v in 0..mesh.n_vertices() {
            let expect = match mesh.vertex_marker[v] {
                VertexMarker::HoleBoundary | VertexMarker::HoleInterior => 0.0,
                _ => 1.0,
            };
            assert_eq!(masked.values[v], expect);
        }
        let twice = mask_to_perforated(&masked, &mesh).unwrap();
        assert_eq!(masked.values, twice.values);
    }
}
