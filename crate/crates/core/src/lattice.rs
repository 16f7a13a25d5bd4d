//! Box-lattice combinatorics for the planar Ising model.
//!
//! The graph is the square box `[-n, n]^2` with wired boundary: every outer
//! face is fused into a single face `v_out` so the whole structure lives on
//! the sphere. Each edge carries a quad `z = (v0•, v0°, v1•, v1°)` of the
//! bipartite incidence graph `Λ(G) = G• ∪ G°`, and the corners (incident
//! vertex/face pairs) are the sites where fermions live.
//!
//! Spinors on corners need a double cover of the corner graph. We store it
//! as ±1 weights on corner adjacencies (four arcs per quad) relative to a
//! fixed section; transporting a spinor along an arc multiplies by the arc
//! sign, and the product of signs around a cycle of the corner graph is -1
//! exactly when the cycle encloses an odd number of branch faces.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub type VertexId = usize;
pub type FaceId = usize;
pub type EdgeId = usize;
pub type QuadId = usize;
pub type CornerId = usize;

/// Geographic label of a corner relative to the vertical edge of its quad.
/// SE corners are `A`, NE are `B`, NW are `C`, SW are `D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CornerLabel {
    A,
    B,
    C,
    D,
}

impl CornerLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CornerLabel::A => "SE",
            CornerLabel::B => "NE",
            CornerLabel::C => "NW",
            CornerLabel::D => "SW",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// A node of the bipartite graph Λ(G) = G• ∪ G°.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaNode {
    Vertex(VertexId),
    Face(FaceId),
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub v0: VertexId,
    pub v1: VertexId,
    /// Face on the positive side (east of a vertical edge, north of a horizontal one).
    pub f_pos: FaceId,
    /// Face on the negative side.
    pub f_neg: FaceId,
    pub orientation: Orientation,
}

/// The quad of an edge. Corners are stored in the cyclic order
/// `[a, b, c, d]` of their geographic labels; `arc_sign[i]` is the
/// double-cover weight of the arc between corners `i` and `(i+1) % 4`.
#[derive(Clone, Debug)]
pub struct Quad {
    pub corners: [CornerId; 4],
    pub arc_sign: [i8; 4],
    /// Λ-cycle of the quad in counterclockwise order, for geometry.
    pub cycle: [LambdaNode; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Corner {
    pub vertex: VertexId,
    pub face: FaceId,
    pub label: CornerLabel,
    /// The two quads containing this corner, sorted. On the wired sphere
    /// every corner belongs to exactly two quads.
    pub quads: [QuadId; 2],
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("box half-width must be at least 1, got {0}")]
    EmptyBox(usize),
    #[error("angle out of range at edge {edge}: theta = {theta}")]
    AngleOutOfRange { edge: EdgeId, theta: f64 },
    #[error("(vertex, face) pair is not a corner of the graph")]
    NotACorner,
    #[error("quad {0} touches the outer face; defects live on interior quads only")]
    BoundaryQuad(QuadId),
    #[error("serialization schema mismatch: {0}")]
    Schema(String),
}

/// The wired box graph with its quad/corner combinatorics and one abstract
/// angle `theta_e ∈ (0, π/2)` per edge (`x_e = tan(theta_e / 2)`).
#[derive(Clone, Debug)]
pub struct IsingGraph {
    n: usize,
    edges: Vec<Edge>,
    quads: Vec<Quad>,
    corners: Vec<Corner>,
    /// corner id by (vertex, slot); usize::MAX when the slot is merged or absent.
    corner_by_slot: Vec<[usize; 4]>,
    theta: Vec<f64>,
}

/// Face slots around a vertex in counterclockwise order.
/// NE = face (x, y), NW = (x-1, y), SW = (x-1, y-1), SE = (x, y-1).
pub const SLOTS: [(i64, i64); 4] = [(0, 0), (-1, 0), (-1, -1), (0, -1)];

const SLOT_LABEL: [CornerLabel; 4] = [CornerLabel::A, CornerLabel::D, CornerLabel::C, CornerLabel::B];

impl IsingGraph {
    /// Build the wired box `[-n, n]^2` with all angles at the critical π/4.
    pub fn build_box(n: usize) -> Result<IsingGraph, LatticeError> {
        if n == 0 {
            return Err(LatticeError::EmptyBox(0));
        }
        let n = n as i64;
        let w = (2 * n + 1) as usize;
        let num_vertices = w * w;
        let outer = (2 * n) as usize * (2 * n) as usize;

        let vx = |x: i64, y: i64| -> VertexId { ((y + n) as usize) * w + (x + n) as usize };
        // Inner face with lower-left vertex (fx, fy); anything outside is the fused outer face.
        let face = |fx: i64, fy: i64| -> FaceId {
            if fx >= -n && fx < n && fy >= -n && fy < n {
                ((fy + n) as usize) * (2 * n) as usize + (fx + n) as usize
            } else {
                outer
            }
        };

        // Corners: per vertex, slots NE, NW, SW, SE; all out-of-range slots
        // merge into a single (vertex, outer) corner.
        let mut corners: Vec<Corner> = Vec::new();
        let mut corner_by_slot = vec![[usize::MAX; 4]; num_vertices];
        for y in -n..=n {
            for x in -n..=n {
                let v = vx(x, y);
                let mut outer_corner = usize::MAX;
                for (s, (dx, dy)) in SLOTS.iter().enumerate() {
                    let f = face(x + dx, y + dy);
                    if f == outer {
                        if outer_corner == usize::MAX {
                            outer_corner = corners.len();
                            corners.push(Corner {
                                vertex: v,
                                face: f,
                                label: SLOT_LABEL[s],
                                quads: [usize::MAX; 2],
                            });
                        }
                        corner_by_slot[v][s] = outer_corner;
                    } else {
                        corner_by_slot[v][s] = corners.len();
                        corners.push(Corner {
                            vertex: v,
                            face: f,
                            label: SLOT_LABEL[s],
                            quads: [usize::MAX; 2],
                        });
                    }
                }
            }
        }

        // Edges: horizontal row-major, then vertical row-major.
        let mut edges: Vec<Edge> = Vec::new();
        for y in -n..=n {
            for x in -n..n {
                edges.push(Edge {
                    v0: vx(x, y),
                    v1: vx(x + 1, y),
                    f_pos: face(x, y),
                    f_neg: face(x, y - 1),
                    orientation: Orientation::Horizontal,
                });
            }
        }
        for y in -n..n {
            for x in -n..=n {
                edges.push(Edge {
                    v0: vx(x, y),
                    v1: vx(x, y + 1),
                    f_pos: face(x, y),
                    f_neg: face(x - 1, y),
                    orientation: Orientation::Vertical,
                });
            }
        }

        // Quads with labeled corners and double-cover arc signs.
        //
        // Base rule: the arc between the a- and b-corners carries -1, all
        // others +1. Two boundary corrections keep every monodromy of the
        // corner graph equal to -1 (branching over all faces): the quads of
        // the east boundary column move the -1 from the (a,b) arc to the
        // (d,a) arc, and the north-boundary quad next to the NE box corner
        // picks up -1 on its (c,d) and (d,a) arcs as well.
        let corner_at = |x: i64, y: i64, slot: usize| -> CornerId { corner_by_slot[vx(x, y)][slot] };

        let mut quads: Vec<Quad> = Vec::with_capacity(edges.len());
        let mut eidx = 0usize;
        for y in -n..=n {
            for x in -n..n {
                // Horizontal edge (x,y)-(x+1,y): a = (west, N), b = (west, S),
                // c = (east, S), d = (east, N).
                let a = corner_at(x, y, 0); // NE slot of west vertex = face (x, y)
                let b = corner_at(x, y, 3); // SE slot = face (x, y-1)
                let c = corner_at(x + 1, y, 2); // SW slot of east vertex = face (x, y-1)
                let d = corner_at(x + 1, y, 1); // NW slot = face (x, y)
                let mut arc_sign = [1i8, 1, 1, 1];
                arc_sign[0] = -1; // (a,b): cos-arc at the west vertex
                if y == n && x == n - 1 {
                    // North-boundary quad at the NE box corner.
                    arc_sign[2] = -1; // (c,d): cos-arc at the east vertex
                    arc_sign[3] = -1; // (d,a): sin-arc along the outer face
                }
                let e = &edges[eidx];
                quads.push(Quad {
                    corners: [a, b, c, d],
                    arc_sign,
                    cycle: [
                        LambdaNode::Vertex(e.v0),
                        LambdaNode::Face(e.f_neg),
                        LambdaNode::Vertex(e.v1),
                        LambdaNode::Face(e.f_pos),
                    ],
                });
                eidx += 1;
            }
        }
        for y in -n..n {
            for x in -n..=n {
                // Vertical edge (x,y)-(x,y+1): a = (bottom, E), b = (top, E),
                // c = (top, W), d = (bottom, W).
                let a = corner_at(x, y, 0); // NE slot of bottom vertex = face (x, y)
                let b = corner_at(x, y + 1, 3); // SE slot of top vertex = face (x, y)
                let c = corner_at(x, y + 1, 2); // SW slot = face (x-1, y)
                let d = corner_at(x, y, 1); // NW slot = face (x-1, y)
                let mut arc_sign = [1i8, 1, 1, 1];
                if x == n {
                    // East boundary column: -1 moves to the bottom cos-arc.
                    arc_sign[3] = -1; // (d,a)
                } else {
                    arc_sign[0] = -1; // (a,b): sin-arc along the east face
                }
                let e = &edges[eidx];
                quads.push(Quad {
                    corners: [a, b, c, d],
                    arc_sign,
                    cycle: [
                        LambdaNode::Vertex(e.v0),
                        LambdaNode::Face(e.f_pos),
                        LambdaNode::Vertex(e.v1),
                        LambdaNode::Face(e.f_neg),
                    ],
                });
                eidx += 1;
            }
        }

        // Register quad membership on corners.
        for (q, quad) in quads.iter().enumerate() {
            for &c in &quad.corners {
                let slots = &mut corners[c].quads;
                if slots[0] == usize::MAX {
                    slots[0] = q;
                } else if slots[1] == usize::MAX {
                    slots[1] = q;
                    if slots[0] > slots[1] {
                        slots.swap(0, 1);
                    }
                } else {
                    unreachable!("corner in more than two quads");
                }
            }
        }

        let theta = vec![std::f64::consts::FRAC_PI_4; edges.len()];
        Ok(IsingGraph {
            n: n as usize,
            edges,
            quads,
            corners,
            corner_by_slot,
            theta,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        2 * self.n + 1
    }

    pub fn num_vertices(&self) -> usize {
        self.width() * self.width()
    }

    /// Inner faces plus the fused outer face.
    pub fn num_faces(&self) -> usize {
        4 * self.n * self.n + 1
    }

    pub fn outer_face(&self) -> FaceId {
        4 * self.n * self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_corners(&self) -> usize {
        self.corners.len()
    }

    pub fn num_lambda_nodes(&self) -> usize {
        self.num_vertices() + self.num_faces()
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn quad(&self, z: QuadId) -> &Quad {
        &self.quads[z]
    }

    pub fn corner(&self, c: CornerId) -> &Corner {
        &self.corners[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn quads(&self) -> &[Quad] {
        &self.quads
    }

    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn vertex_id(&self, x: i64, y: i64) -> Option<VertexId> {
        let n = self.n as i64;
        if x < -n || x > n || y < -n || y > n {
            return None;
        }
        Some(((y + n) as usize) * self.width() + (x + n) as usize)
    }

    pub fn vertex_xy(&self, v: VertexId) -> (i64, i64) {
        let n = self.n as i64;
        let w = self.width();
        ((v % w) as i64 - n, (v / w) as i64 - n)
    }

    /// Lower-left vertex coordinates of an inner face.
    pub fn face_xy(&self, f: FaceId) -> Option<(i64, i64)> {
        if f == self.outer_face() {
            return None;
        }
        let n = self.n as i64;
        let s = 2 * self.n;
        Some(((f % s) as i64 - n, (f / s) as i64 - n))
    }

    pub fn face_id(&self, fx: i64, fy: i64) -> FaceId {
        let n = self.n as i64;
        if fx >= -n && fx < n && fy >= -n && fy < n {
            ((fy + n) as usize) * 2 * self.n + (fx + n) as usize
        } else {
            self.outer_face()
        }
    }

    pub fn corner_id(&self, v: VertexId, f: FaceId) -> Result<CornerId, LatticeError> {
        for s in 0..4 {
            let c = self.corner_by_slot[v][s];
            if c != usize::MAX && self.corners[c].face == f {
                return Ok(c);
            }
        }
        Err(LatticeError::NotACorner)
    }

    pub fn corner_by_slot(&self, v: VertexId, slot: usize) -> Option<CornerId> {
        let c = self.corner_by_slot[v][slot];
        (c != usize::MAX).then_some(c)
    }

    /// Horizontal edge with west vertex (x, y).
    pub fn h_edge(&self, x: i64, y: i64) -> Option<EdgeId> {
        let n = self.n as i64;
        if x < -n || x >= n || y < -n || y > n {
            return None;
        }
        Some(((y + n) as usize) * 2 * self.n + (x + n) as usize)
    }

    /// Vertical edge with bottom vertex (x, y).
    pub fn v_edge(&self, x: i64, y: i64) -> Option<EdgeId> {
        let n = self.n as i64;
        if x < -n || x > n || y < -n || y >= n {
            return None;
        }
        let h_count = 2 * self.n * self.width();
        Some(h_count + ((y + n) as usize) * self.width() + (x + n) as usize)
    }

    pub fn theta(&self, e: EdgeId) -> f64 {
        self.theta[e]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, e: EdgeId, theta: f64) -> Result<(), LatticeError> {
        if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
            return Err(LatticeError::AngleOutOfRange { edge: e, theta });
        }
        self.theta[e] = theta;
        Ok(())
    }

    pub fn set_thetas(&mut self, theta: &[f64]) -> Result<(), LatticeError> {
        assert_eq!(theta.len(), self.edges.len());
        for (e, &t) in theta.iter().enumerate() {
            self.set_theta(e, t)?;
        }
        Ok(())
    }

    /// Angles may touch 0 when a region is frozen (wired sub-domains);
    /// regular model setup should go through `set_theta`.
    pub fn set_theta_unchecked(&mut self, e: EdgeId, theta: f64) {
        self.theta[e] = theta;
    }

    /// True when both faces of the quad are inner faces.
    pub fn is_interior_quad(&self, z: QuadId) -> bool {
        let e = &self.edges[z];
        e.f_pos != self.outer_face() && e.f_neg != self.outer_face()
    }

    /// The geographic label of a corner (SE = a, NE = b, NW = c, SW = d).
    pub fn classify_corner(&self, c: CornerId) -> CornerLabel {
        self.corners[c].label
    }

    /// Index of `c` within quad `z` (0..4, in label order a, b, c, d).
    pub fn corner_pos_in_quad(&self, z: QuadId, c: CornerId) -> usize {
        self.quads[z]
            .corners
            .iter()
            .position(|&x| x == c)
            .expect("corner not in quad")
    }

    /// The corner of `z` that shares its vertex with position `i`, together
    /// with the sign of the connecting arc, and likewise for the face.
    /// For vertical quads vertex-arcs are (a,d) and (b,c); for horizontal
    /// quads they are (a,b) and (c,d).
    pub fn quad_neighbors(&self, z: QuadId, pos: usize) -> QuadNeighbors {
        let vertical = matches!(self.edges[z].orientation, Orientation::Vertical);
        // cyclic arcs: 0 = (a,b), 1 = (b,c), 2 = (c,d), 3 = (d,a)
        let (vpos, varc, fpos, farc) = if vertical {
            match pos {
                0 => (3, 3, 1, 0), // a: vertex-mate d, face-mate b
                1 => (2, 1, 0, 0), // b: vertex-mate c, face-mate a
                2 => (1, 1, 3, 2), // c: vertex-mate b, face-mate d
                3 => (0, 3, 2, 2), // d: vertex-mate a, face-mate c
                _ => unreachable!(),
            }
        } else {
            match pos {
                0 => (1, 0, 3, 3), // a: vertex-mate b, face-mate d
                1 => (0, 0, 2, 1), // b: vertex-mate a, face-mate c
                2 => (3, 2, 1, 1), // c: vertex-mate d, face-mate b
                3 => (2, 2, 0, 3), // d: vertex-mate c, face-mate a
                _ => unreachable!(),
            }
        };
        let q = &self.quads[z];
        QuadNeighbors {
            vertex_mate: q.corners[vpos],
            vertex_sign: q.arc_sign[varc] as f64,
            face_mate: q.corners[fpos],
            face_sign: q.arc_sign[farc] as f64,
        }
    }

    /// All corners incident to a vertex, in counterclockwise slot order.
    pub fn corners_of_vertex(&self, v: VertexId) -> Vec<CornerId> {
        let mut out = Vec::with_capacity(4);
        for s in 0..4 {
            let c = self.corner_by_slot[v][s];
            if c != usize::MAX && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Stable structured-text serialization of the combinatorics and angles.
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema = \"ising-graph/1\"");
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "vertices = {}", self.num_vertices());
        let _ = writeln!(s, "faces = {}", self.num_faces());
        let _ = writeln!(s, "[edges]");
        for (i, e) in self.edges.iter().enumerate() {
            let _ = writeln!(
                s,
                "e{} = [{}, {}, {}, {}]",
                i, e.v0, e.v1, e.f_pos, e.f_neg
            );
        }
        let _ = writeln!(s, "[angles]");
        for (i, t) in self.theta.iter().enumerate() {
            let _ = writeln!(s, "e{} = {:.17e}", i, t);
        }
        s
    }

    /// Rebuild a graph from `to_document` output, checking the layout matches.
    pub fn from_document(doc: &str) -> Result<IsingGraph, LatticeError> {
        let mut n = None;
        let mut angles: Vec<(usize, f64)> = Vec::new();
        let mut in_angles = false;
        for line in doc.lines() {
            let line = line.trim();
            if line.starts_with("schema") {
                if !line.contains("ising-graph/1") {
                    return Err(LatticeError::Schema(format!("unknown schema: {line}")));
                }
            } else if let Some(rest) = line.strip_prefix("n = ") {
                n = rest.trim().parse::<usize>().ok();
            } else if line == "[angles]" {
                in_angles = true;
            } else if line == "[edges]" {
                in_angles = false;
            } else if in_angles && line.starts_with('e') {
                let (id, val) = line[1..]
                    .split_once('=')
                    .ok_or_else(|| LatticeError::Schema(line.to_string()))?;
                let id: usize = id
                    .trim()
                    .parse()
                    .map_err(|_| LatticeError::Schema(line.to_string()))?;
                let val: f64 = val
                    .trim()
                    .parse()
                    .map_err(|_| LatticeError::Schema(line.to_string()))?;
                angles.push((id, val));
            }
        }
        let n = n.ok_or_else(|| LatticeError::Schema("missing n".into()))?;
        let mut g = IsingGraph::build_box(n)?;
        for (e, t) in angles {
            if e >= g.num_edges() {
                return Err(LatticeError::Schema(format!("edge {e} out of range")));
            }
            g.theta[e] = t;
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadNeighbors {
    pub vertex_mate: CornerId,
    pub vertex_sign: f64,
    pub face_mate: CornerId,
    pub face_sign: f64,
}

/// A double cover of the corner graph, stored as arc signs per quad.
/// `make_double_cover(g, None)` branches over every face of the corner graph
/// (Υ×); passing a (vertex, face) pair q removes the branching around both
/// members of the pair (Υ×_(q)) by swapping the two connections of q inside
/// one of its quads.
#[derive(Clone, Debug)]
pub struct DoubleCover {
    pub arc_sign: Vec<[i8; 4]>,
    pub unbranched: Option<CornerId>,
    pub defect_quad: Option<QuadId>,
}

pub fn make_double_cover(
    g: &IsingGraph,
    unbranched: Option<(VertexId, FaceId)>,
) -> Result<DoubleCover, LatticeError> {
    let mut arc_sign: Vec<[i8; 4]> = g.quads().iter().map(|q| q.arc_sign).collect();
    let (unbranched, defect_quad) = match unbranched {
        None => (None, None),
        Some((v, f)) => {
            let c = g.corner_id(v, f)?;
            let z = g.corner(c).quads[0];
            flip_corner_arcs(g, &mut arc_sign, c, z);
            (Some(c), Some(z))
        }
    };
    Ok(DoubleCover {
        arc_sign,
        unbranched,
        defect_quad,
    })
}

/// Flip the two arcs incident to corner `c` inside quad `z`. This toggles the
/// branching around the vertex-face and face-face of `c` while leaving every
/// quad monodromy unchanged.
pub fn flip_corner_arcs(g: &IsingGraph, arc_sign: &mut [[i8; 4]], c: CornerId, z: QuadId) {
    let pos = g.corner_pos_in_quad(z, c);
    let prev = (pos + 3) % 4;
    arc_sign[z][pos] = -arc_sign[z][pos];
    arc_sign[z][prev] = -arc_sign[z][prev];
}

/// Sign of the arc between two corners of a quad.
pub fn arc_sign_between(g: &IsingGraph, arc_sign: &[[i8; 4]], z: QuadId, c0: CornerId, c1: CornerId) -> i8 {
    let p0 = g.corner_pos_in_quad(z, c0);
    let p1 = g.corner_pos_in_quad(z, c1);
    if (p0 + 1) % 4 == p1 {
        arc_sign[z][p0]
    } else if (p1 + 1) % 4 == p0 {
        arc_sign[z][p1]
    } else {
        panic!("corners are not adjacent in the quad");
    }
}

/// Elementary faces of the corner graph Υ: one per quad, one per vertex of
/// G•, one per face of G° (including the outer face). Returns, for each,
/// the cyclic list of (quad, corner, corner) arcs.
pub fn corner_graph_faces(g: &IsingGraph) -> Vec<Vec<(QuadId, CornerId, CornerId)>> {
    let mut faces = Vec::new();
    // Quad faces.
    for (z, q) in g.quads().iter().enumerate() {
        let mut cyc = Vec::with_capacity(4);
        for i in 0..4 {
            cyc.push((z, q.corners[i], q.corners[(i + 1) % 4]));
        }
        faces.push(cyc);
    }
    // Vertex faces: walk counterclockwise around v; each existing edge at v
    // separates two sectors, and the arc between their corners lives in
    // that edge's quad. (Consecutive sectors can share a corner when both
    // map to the fused outer face, so the quad must come from the edge.)
    for v in 0..g.num_vertices() {
        let (x, y) = g.vertex_xy(v);
        let steps: [(Option<EdgeId>, usize, usize); 4] = [
            (g.v_edge(x, y), 0, 1),       // up edge: NE -> NW
            (g.h_edge(x - 1, y), 1, 2),   // left edge: NW -> SW
            (g.v_edge(x, y - 1), 2, 3),   // down edge: SW -> SE
            (g.h_edge(x, y), 3, 0),       // right edge: SE -> NE
        ];
        let mut cyc = Vec::new();
        for (e, s_from, s_to) in steps {
            if let Some(e) = e {
                let c0 = g.corner_by_slot(v, s_from).unwrap();
                let c1 = g.corner_by_slot(v, s_to).unwrap();
                cyc.push((e, c0, c1));
            }
        }
        if cyc.len() >= 2 {
            faces.push(cyc);
        }
    }
    // Face faces: corners around an inner face in vertex order.
    let n = g.n() as i64;
    for fy in -n..n {
        for fx in -n..n {
            let f = g.face_id(fx, fy);
            let vs = [
                g.vertex_id(fx, fy).unwrap(),
                g.vertex_id(fx + 1, fy).unwrap(),
                g.vertex_id(fx + 1, fy + 1).unwrap(),
                g.vertex_id(fx, fy + 1).unwrap(),
            ];
            let cs: Vec<CornerId> = vs.iter().map(|&v| g.corner_id(v, f).unwrap()).collect();
            let mut cyc = Vec::with_capacity(4);
            for i in 0..4 {
                let z = common_quad(g, cs[i], cs[(i + 1) % 4]).unwrap();
                cyc.push((z, cs[i], cs[(i + 1) % 4]));
            }
            faces.push(cyc);
        }
    }
    // Outer face: boundary corners counterclockwise.
    let mut boundary: Vec<VertexId> = Vec::new();
    for x in -n..n {
        boundary.push(g.vertex_id(x, -n).unwrap());
    }
    for y in -n..n {
        boundary.push(g.vertex_id(n, y).unwrap());
    }
    for x in -n..n {
        boundary.push(g.vertex_id(-x, n).unwrap());
    }
    for y in -n..n {
        boundary.push(g.vertex_id(-n, -y).unwrap());
    }
    let outer = g.outer_face();
    let cs: Vec<CornerId> = boundary
        .iter()
        .map(|&v| g.corner_id(v, outer).unwrap())
        .collect();
    let mut cyc = Vec::with_capacity(cs.len());
    for i in 0..cs.len() {
        let z = common_quad(g, cs[i], cs[(i + 1) % cs.len()]).unwrap();
        cyc.push((z, cs[i], cs[(i + 1) % cs.len()]));
    }
    faces.push(cyc);
    faces
}

pub fn common_quad(g: &IsingGraph, c0: CornerId, c1: CornerId) -> Option<QuadId> {
    let q0 = g.corner(c0).quads;
    let q1 = g.corner(c1).quads;
    for &a in &q0 {
        for &b in &q1 {
            if a == b && a != usize::MAX {
                let quad = g.quad(a);
                let p0 = quad.corners.iter().position(|&x| x == c0)?;
                let p1 = quad.corners.iter().position(|&x| x == c1)?;
                if (p0 + 1) % 4 == p1 || (p1 + 1) % 4 == p0 {
                    return Some(a);
                }
            }
        }
    }
    None
}

/// The defect pair of an interior quad: its SE (a) and NW (c) corners, with
/// the mismatch quad equal to the quad itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DefectPair {
    pub quad: QuadId,
    pub a_corner: CornerId,
    pub c_corner: CornerId,
}

pub fn defect_pair(g: &IsingGraph, z: QuadId) -> Result<DefectPair, LatticeError> {
    if !g.is_interior_quad(z) {
        return Err(LatticeError::BoundaryQuad(z));
    }
    let q = g.quad(z);
    Ok(DefectPair {
        quad: z,
        a_corner: q.corners[0],
        c_corner: q.corners[2],
    })
}
