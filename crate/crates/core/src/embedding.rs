//! From propagators to geometry: the s-embedding S with quad centers and
//! inscribed radii, the origami map Q, Dirac phases, weight recovery from
//! the picture, the spinor/s-holomorphic correspondence, both primitives,
//! and the s-Laplacian stencil.
//!
//! A propagator Y lives on corners; its squares are the increments of S
//! across corners (S(v•) - S(v°) = Y(c)²) and its squared moduli the
//! increments of Q. Everything geometric is defined on the inner part of
//! the box: corners touching the fused outer face carry no geometry.

use crate::lattice::{
    CornerId, FaceId, IsingGraph, LambdaNode, Orientation, QuadId, VertexId,
};
use num_complex::Complex64;
use thiserror::Error;

/// e^{iπ/4}, the fixed phase of the Dirac spinor convention.
pub const VARSIGMA: Complex64 = Complex64::new(
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
);

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("propagator inconsistent: corner {corner} jump {residual:.3e} exceeds {tol:.1e}")]
    Inconsistent {
        corner: CornerId,
        residual: f64,
        tol: f64,
    },
    #[error("origami closure failed at quad {quad}: residual {residual:.3e}")]
    OrigamiClosure { quad: QuadId, residual: f64 },
    #[error("degenerate quad {0}: half-angle below threshold")]
    DegenerateQuad(QuadId),
    #[error("quad {0} has collinear corner directions; s-holomorphic reconstruction impossible")]
    CollinearQuad(QuadId),
    #[error("singular kernel-condition solve at Λ-node {0}")]
    SingularStencil(usize),
}

/// Complex spinor on corners generating an embedding. Outer-face corners
/// carry zero; they never enter interior propagation equations.
#[derive(Clone, Debug)]
pub struct Propagator(pub Vec<Complex64>);

impl Propagator {
    pub fn zeros(g: &IsingGraph) -> Self {
        Propagator(vec![Complex64::new(0.0, 0.0); g.num_corners()])
    }

    /// Max deviation from the propagation equations at interior quads, for
    /// the graph's current angles.
    pub fn residual(&self, g: &IsingGraph) -> f64 {
        self.residual_for(g, g.thetas())
    }

    pub fn residual_for(&self, g: &IsingGraph, theta: &[f64]) -> f64 {
        let cos_t: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let sin_t: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        crate::correlators::kernel::propagation_residual(g, &cos_t, &sin_t, &self.0)
    }
}

/// Phase class of a corner on the critical lattice: arg Y = (π/4) * class
/// mod π, set by the position of the face relative to the vertex.
fn phase_class(g: &IsingGraph, c: CornerId) -> Option<u8> {
    let corner = g.corner(c);
    if corner.face == g.outer_face() {
        return None;
    }
    let (x, y) = g.vertex_xy(corner.vertex);
    let (fx, fy) = g.face_xy(corner.face).unwrap();
    Some(match (fx - x, fy - y) {
        (0, 0) => 2,   // NE slot: S(v)-S(f) = -1/n
        (-1, 0) => 3,  // NW: -i/n
        (-1, -1) => 0, // SW: +1/n
        (0, -1) => 1,  // SE: +i/n
        _ => unreachable!(),
    })
}

/// The standard critical propagator: |Y| = scale^{-1/2} with eighth-root
/// phases, constructed exactly (phases as integers mod 8) by propagating
/// through interior quads from the east-going corner at the box center.
/// The corners at the four extreme box vertices belong to no interior
/// quad; they get the positive phase representative, which only ever
/// enters through Y².
pub fn critical_propagator(g: &IsingGraph, scale: f64) -> Propagator {
    assert!(
        g.thetas()
            .iter()
            .all(|t| (t - std::f64::consts::FRAC_PI_4).abs() < 1e-12),
        "critical propagator requires theta = π/4 everywhere"
    );
    let nc = g.num_corners();
    let mut k: Vec<Option<u8>> = vec![None; nc];
    let origin = g.vertex_id(0, 0).unwrap();
    let root = g
        .corner_id(origin, g.face_id(-1, -1))
        .expect("SW corner of the origin");
    k[root] = Some(0);

    let mut changed = true;
    while changed {
        changed = false;
        for z in 0..g.quads().len() {
            if !g.is_interior_quad(z) {
                continue;
            }
            let quad = g.quad(z);
            for pos in 0..4 {
                let c = quad.corners[pos];
                let Some(kc) = k[c] else { continue };
                let nb = g.quad_neighbors(z, pos);
                for (mate, sign) in [
                    (nb.vertex_mate, nb.vertex_sign),
                    (nb.face_mate, nb.face_sign),
                ] {
                    let class = phase_class(g, mate).expect("interior quad corner");
                    let plus = (kc + 1) % 8;
                    let minus = (kc + 7) % 8;
                    let target = if plus % 4 == class % 4 {
                        plus
                    } else {
                        debug_assert_eq!(minus % 4, class % 4);
                        minus
                    };
                    let val = if sign > 0.0 { target } else { (target + 4) % 8 };
                    match k[mate] {
                        None => {
                            k[mate] = Some(val);
                            changed = true;
                        }
                        Some(old) => assert_eq!(
                            old, val,
                            "critical propagator section inconsistency at corner {mate}"
                        ),
                    }
                }
            }
        }
    }

    let amp = 1.0 / scale.sqrt();
    let omega =
        |k: u8| -> Complex64 { Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * k as f64) };
    let mut y = vec![Complex64::new(0.0, 0.0); nc];
    for c in 0..nc {
        if let Some(kc) = k[c] {
            y[c] = omega(kc) * amp;
        } else if let Some(class) = phase_class(g, c) {
            y[c] = omega(class) * amp;
        }
    }
    Propagator(y)
}

/// Positions, origami values, inscribed radii, and Dirac phases of an
/// embedded propagator.
#[derive(Clone, Debug)]
pub struct SEmbedding {
    /// Λ-node positions: vertices then faces; the fused outer face is None.
    pub s: Vec<Option<Complex64>>,
    /// Quad-center positions (interior quads only).
    pub center: Vec<Option<Complex64>>,
    /// Origami values per Λ-node.
    pub q: Vec<Option<f64>>,
    /// Inscribed radius per interior quad.
    pub radius: Vec<Option<f64>>,
    /// Dirac phase per inner corner (ς e^{-i arg ΔS / 2} via the propagator).
    pub eta: Vec<Complex64>,
    /// Λ-edge lengths |Y(c)|² per inner corner.
    pub delta_c: Vec<f64>,
    /// Max jump of S across non-tree corners.
    pub consistency_residual: f64,
    /// Max spread among the four center estimates of a quad.
    pub center_residual: f64,
    /// Max spread among the four side distances of a quad.
    pub tangency_spread: f64,
    num_vertices: usize,
}

impl SEmbedding {
    pub fn lambda(&self, node: LambdaNode) -> Option<Complex64> {
        self.s[self.lambda_index(node)]
    }

    pub fn vertex(&self, v: VertexId) -> Complex64 {
        self.s[v].expect("vertex position")
    }

    pub fn face(&self, f: FaceId) -> Option<Complex64> {
        self.s[self.num_vertices + f]
    }

    pub fn lambda_index(&self, node: LambdaNode) -> usize {
        match node {
            LambdaNode::Vertex(v) => v,
            LambdaNode::Face(f) => self.num_vertices + f,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }
}

fn corner_inner(g: &IsingGraph, c: CornerId) -> bool {
    g.corner(c).face != g.outer_face()
}

pub fn face_corners(g: &IsingGraph, f: FaceId) -> Vec<CornerId> {
    let Some((fx, fy)) = g.face_xy(f) else {
        return Vec::new();
    };
    [(fx, fy), (fx + 1, fy), (fx + 1, fy + 1), (fx, fy + 1)]
        .iter()
        .map(|&(x, y)| g.corner_id(g.vertex_id(x, y).unwrap(), f).unwrap())
        .collect()
}

/// Integrate Y² along a spanning tree of the inner incidence graph, fix
/// quad centers, radii, origami and Dirac phases. Fails when a closure
/// residual exceeds `tol`.
pub fn embed(
    g: &IsingGraph,
    y: &Propagator,
    anchor: VertexId,
    anchor_pos: Complex64,
    tol: f64,
) -> Result<SEmbedding, EmbeddingError> {
    let nv = g.num_vertices();
    let nl = g.num_lambda_nodes();
    let mut s: Vec<Option<Complex64>> = vec![None; nl];
    let mut q: Vec<Option<f64>> = vec![None; nl];
    s[anchor] = Some(anchor_pos);
    q[anchor] = Some(0.0);

    let mut tree_used = vec![false; g.num_corners()];
    let mut frontier = std::collections::VecDeque::from([LambdaNode::Vertex(anchor)]);
    while let Some(node) = frontier.pop_front() {
        let corners: Vec<CornerId> = match node {
            LambdaNode::Vertex(v) => g.corners_of_vertex(v),
            LambdaNode::Face(f) => face_corners(g, f),
        };
        for c in corners {
            if !corner_inner(g, c) {
                continue;
            }
            let corner = g.corner(c);
            let (iv, ifc) = (corner.vertex, nv + corner.face);
            let dy = y.0[c] * y.0[c];
            let dq = y.0[c].norm_sqr();
            match (s[iv], s[ifc]) {
                (Some(sv), None) => {
                    s[ifc] = Some(sv - dy);
                    q[ifc] = Some(q[iv].unwrap() - dq);
                    tree_used[c] = true;
                    frontier.push_back(LambdaNode::Face(corner.face));
                }
                (None, Some(sf)) => {
                    s[iv] = Some(sf + dy);
                    q[iv] = Some(q[ifc].unwrap() + dq);
                    tree_used[c] = true;
                    frontier.push_back(LambdaNode::Vertex(corner.vertex));
                }
                _ => {}
            }
        }
    }

    let mut worst = (0usize, 0.0f64);
    for c in 0..g.num_corners() {
        if tree_used[c] || !corner_inner(g, c) {
            continue;
        }
        let corner = g.corner(c);
        if let (Some(sv), Some(sf)) = (s[corner.vertex], s[nv + corner.face]) {
            let res = (sv - sf - y.0[c] * y.0[c]).norm();
            if res > worst.1 {
                worst = (c, res);
            }
        }
    }
    if worst.1 > tol {
        return Err(EmbeddingError::Inconsistent {
            corner: worst.0,
            residual: worst.1,
            tol,
        });
    }

    // Origami closure per interior quad (alternating sum of edge lengths).
    let mut origami_worst = (0usize, 0.0f64);
    for z in 0..g.quads().len() {
        if !g.is_interior_quad(z) {
            continue;
        }
        let qd = g.quad(z);
        let alt = y.0[qd.corners[0]].norm_sqr() - y.0[qd.corners[1]].norm_sqr()
            + y.0[qd.corners[2]].norm_sqr()
            - y.0[qd.corners[3]].norm_sqr();
        if alt.abs() > origami_worst.1 {
            origami_worst = (z, alt.abs());
        }
    }
    if origami_worst.1 > tol {
        return Err(EmbeddingError::OrigamiClosure {
            quad: origami_worst.0,
            residual: origami_worst.1,
        });
    }

    let nq = g.quads().len();
    let mut center: Vec<Option<Complex64>> = vec![None; nq];
    let mut radius: Vec<Option<f64>> = vec![None; nq];
    let mut center_residual: f64 = 0.0;
    let mut tangency_spread: f64 = 0.0;
    for z in 0..nq {
        if !g.is_interior_quad(z) {
            continue;
        }
        let ests = center_estimates(g, y, &s, nv, z);
        for e in &ests[1..] {
            center_residual = center_residual.max((e - ests[0]).norm());
        }
        let cen = (ests[0] + ests[1] + ests[2] + ests[3]) / 4.0;
        center[z] = Some(cen);
        let cyc = &g.quad(z).cycle;
        let mut dmin = f64::INFINITY;
        let mut dmax: f64 = 0.0;
        for i in 0..4 {
            let p0 = lambda_pos(&s, nv, cyc[i]).unwrap();
            let p1 = lambda_pos(&s, nv, cyc[(i + 1) % 4]).unwrap();
            let d = point_line_distance(cen, p0, p1);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        radius[z] = Some(dmin);
        tangency_spread = tangency_spread.max(dmax - dmin);
    }

    let mut eta = vec![Complex64::new(0.0, 0.0); g.num_corners()];
    let mut delta_c = vec![0.0; g.num_corners()];
    for c in 0..g.num_corners() {
        if corner_inner(g, c) && y.0[c].norm() > 0.0 {
            eta[c] = VARSIGMA * (y.0[c] / y.0[c].norm()).conj();
            delta_c[c] = y.0[c].norm_sqr();
        }
    }

    Ok(SEmbedding {
        s,
        center,
        q,
        radius,
        eta,
        delta_c,
        consistency_residual: worst.1,
        center_residual,
        tangency_spread,
        num_vertices: nv,
    })
}

fn lambda_pos(s: &[Option<Complex64>], nv: usize, node: LambdaNode) -> Option<Complex64> {
    match node {
        LambdaNode::Vertex(v) => s[v],
        LambdaNode::Face(f) => s[nv + f],
    }
}

/// The four center estimates of an interior quad, one per incident Λ-node.
fn center_estimates(
    g: &IsingGraph,
    y: &Propagator,
    s: &[Option<Complex64>],
    nv: usize,
    z: QuadId,
) -> [Complex64; 4] {
    let quad = g.quad(z);
    let e = g.edge(z);
    let (ct, st) = (g.theta(z).cos(), g.theta(z).sin());
    let yv = |i: usize| y.0[quad.corners[i]];
    let sgn = |i: usize| quad.arc_sign[i] as f64;
    // arc indices: 0 = (a,b), 1 = (b,c), 2 = (c,d), 3 = (d,a)
    match e.orientation {
        Orientation::Vertical => [
            s[e.v0].unwrap() - sgn(3) * yv(0) * yv(3) * ct,
            s[e.v1].unwrap() - sgn(1) * yv(1) * yv(2) * ct,
            s[nv + e.f_pos].unwrap() + sgn(0) * yv(0) * yv(1) * st,
            s[nv + e.f_neg].unwrap() + sgn(2) * yv(2) * yv(3) * st,
        ],
        Orientation::Horizontal => [
            s[e.v0].unwrap() - sgn(0) * yv(0) * yv(1) * ct,
            s[e.v1].unwrap() - sgn(2) * yv(2) * yv(3) * ct,
            s[nv + e.f_pos].unwrap() + sgn(3) * yv(3) * yv(0) * st,
            s[nv + e.f_neg].unwrap() + sgn(1) * yv(1) * yv(2) * st,
        ],
    }
}

fn point_line_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    ((p - a) * ab.conj()).im.abs() / ab.norm()
}

/// Geometric half-angles of each interior quad and the abstract weight
/// recovered from them: tan θ = sqrt(sin φ_v0 sin φ_v1 / (sin φ_f0 sin φ_f1)).
pub fn recover_weights(
    g: &IsingGraph,
    emb: &SEmbedding,
) -> Result<Vec<Option<f64>>, EmbeddingError> {
    let mut out = vec![None; g.quads().len()];
    for z in 0..g.quads().len() {
        if !g.is_interior_quad(z) {
            continue;
        }
        let cyc = &g.quad(z).cycle;
        let pos: Vec<Complex64> = cyc
            .iter()
            .map(|&n| emb.lambda(n).expect("interior quad positions"))
            .collect();
        let mut half = [0.0f64; 4];
        for i in 0..4 {
            let u = pos[(i + 3) % 4] - pos[i];
            let w = pos[(i + 1) % 4] - pos[i];
            half[i] = (u * w.conj()).arg().abs() / 2.0;
            if half[i] < 1e-8 || half[i] > std::f64::consts::FRAC_PI_2 - 1e-12 {
                return Err(EmbeddingError::DegenerateQuad(z));
            }
        }
        // cycle = (v0, f, v1, f'): vertices at 0 and 2, faces at 1 and 3.
        let t = (half[0].sin() * half[2].sin() / (half[1].sin() * half[3].sin())).sqrt();
        out[z] = Some(t.atan());
    }
    Ok(out)
}

/// A complex function on interior quads.
#[derive(Clone, Debug)]
pub struct QuadField(pub Vec<Option<Complex64>>);

/// Reconstruct the s-holomorphic function from a real spinor: on each quad,
/// solve the four projection identities X(c) = Re[ς̄ Y(c) F(z)] in least
/// squares for F(z).
pub fn shol_from_spinor(
    g: &IsingGraph,
    y: &Propagator,
    x: &[f64],
) -> Result<QuadField, EmbeddingError> {
    let mut f = vec![None; g.quads().len()];
    for z in 0..g.quads().len() {
        if !g.is_interior_quad(z) {
            continue;
        }
        let quad = g.quad(z);
        let mut ata = [0.0f64; 4];
        let mut atb = [0.0f64; 2];
        for &c in &quad.corners {
            let coef = VARSIGMA.conj() * y.0[c];
            let (a, b) = (coef.re, -coef.im);
            ata[0] += a * a;
            ata[1] += a * b;
            ata[3] += b * b;
            atb[0] += a * x[c];
            atb[1] += b * x[c];
        }
        ata[2] = ata[1];
        let det = ata[0] * ata[3] - ata[1] * ata[2];
        let scale = ata[0] + ata[3];
        if det.abs() < 1e-14 * scale * scale {
            return Err(EmbeddingError::CollinearQuad(z));
        }
        let u = (atb[0] * ata[3] - atb[1] * ata[1]) / det;
        let v = (atb[1] * ata[0] - atb[0] * ata[2]) / det;
        f[z] = Some(Complex64::new(u, v));
    }
    Ok(QuadField(f))
}

/// The inverse map: X(c) = Re[ς̄ Y(c) F(z)], averaged over the adjacent
/// quads carrying F; returns the worst cross-quad mismatch (zero exactly
/// when F is s-holomorphic).
pub fn spinor_from_shol(g: &IsingGraph, y: &Propagator, f: &QuadField) -> (Vec<f64>, f64) {
    let mut x = vec![0.0; g.num_corners()];
    let mut mismatch: f64 = 0.0;
    for c in 0..g.num_corners() {
        let vals: Vec<f64> = g
            .corner(c)
            .quads
            .iter()
            .filter_map(|&z| f.0.get(z).copied().flatten())
            .map(|fz| (VARSIGMA.conj() * y.0[c] * fz).re)
            .collect();
        match vals.len() {
            0 => {}
            1 => x[c] = vals[0],
            _ => {
                mismatch = mismatch.max((vals[0] - vals[1]).abs());
                x[c] = 0.5 * (vals[0] + vals[1]);
            }
        }
    }
    (x, mismatch)
}

/// The complex primitive I_C[F] = ∫ (ς̄ F dS + ς F̄ dQ) on Λ-nodes.
/// Returns the primitive and the worst loop residual.
pub fn primitive_complex(
    g: &IsingGraph,
    y: &Propagator,
    f: &QuadField,
    anchor: VertexId,
) -> (Vec<Option<Complex64>>, f64) {
    let increment = |c: CornerId| -> Option<Complex64> {
        let corner = g.corner(c);
        let fz = corner
            .quads
            .iter()
            .filter_map(|&z| f.0.get(z).copied().flatten())
            .next()?;
        let yy = y.0[c];
        Some(VARSIGMA.conj() * fz * yy * yy + VARSIGMA * fz.conj() * yy.norm_sqr())
    };
    integrate_corners_complex(g, anchor, increment)
}

/// H_F on Λ-nodes: the primitive of ½ Re(ς̄² F² dS + |F|² dQ), normalized
/// so that it coincides with the combinatorial primitive of the square
/// (the corner increment Im(F²ΔS) + |F|²ΔQ equals exactly 2X(c)²).
pub fn h_f_on_lambda(
    g: &IsingGraph,
    y: &Propagator,
    f: &QuadField,
    anchor: VertexId,
) -> (Vec<Option<f64>>, f64) {
    let increment = |c: CornerId| -> Option<f64> {
        let corner = g.corner(c);
        let fz = corner
            .quads
            .iter()
            .filter_map(|&z| f.0.get(z).copied().flatten())
            .next()?;
        let yy = y.0[c];
        Some(
            0.5 * ((VARSIGMA.conj() * VARSIGMA.conj() * fz * fz * yy * yy).re
                + fz.norm_sqr() * yy.norm_sqr()),
        )
    };
    let (vals, res) = integrate_corners_complex(g, anchor, |c| {
        increment(c).map(|v| Complex64::new(v, 0.0))
    });
    (
        vals.into_iter().map(|o| o.map(|c| c.re)).collect(),
        res,
    )
}

/// Shared tree integration over inner corners with a per-corner increment
/// I(v•) - I(v°); returns values per Λ-node and the worst loop residual.
fn integrate_corners_complex(
    g: &IsingGraph,
    anchor: VertexId,
    increment: impl Fn(CornerId) -> Option<Complex64>,
) -> (Vec<Option<Complex64>>, f64) {
    let nv = g.num_vertices();
    let nl = g.num_lambda_nodes();
    let mut vals: Vec<Option<Complex64>> = vec![None; nl];
    vals[anchor] = Some(Complex64::new(0.0, 0.0));
    let mut tree_used = vec![false; g.num_corners()];
    let mut frontier = std::collections::VecDeque::from([LambdaNode::Vertex(anchor)]);
    while let Some(node) = frontier.pop_front() {
        let corners: Vec<CornerId> = match node {
            LambdaNode::Vertex(v) => g.corners_of_vertex(v),
            LambdaNode::Face(f) => face_corners(g, f),
        };
        for c in corners {
            if !corner_inner(g, c) {
                continue;
            }
            let Some(inc) = increment(c) else { continue };
            let corner = g.corner(c);
            let (iv, ifc) = (corner.vertex, nv + corner.face);
            match (vals[iv], vals[ifc]) {
                (Some(a), None) => {
                    vals[ifc] = Some(a - inc);
                    tree_used[c] = true;
                    frontier.push_back(LambdaNode::Face(corner.face));
                }
                (None, Some(b)) => {
                    vals[iv] = Some(b + inc);
                    tree_used[c] = true;
                    frontier.push_back(LambdaNode::Vertex(corner.vertex));
                }
                _ => {}
            }
        }
    }
    let mut worst: f64 = 0.0;
    for c in 0..g.num_corners() {
        if tree_used[c] || !corner_inner(g, c) {
            continue;
        }
        let corner = g.corner(c);
        if let (Some(a), Some(b), Some(inc)) =
            (vals[corner.vertex], vals[nv + corner.face], increment(c))
        {
            worst = worst.max((a - b - inc).norm());
        }
    }
    (vals, worst)
}

/// Node index of a quad center in the extended H_X domain Λ(G) ∪ ◊(G).
pub fn hx_center_index(g: &IsingGraph, z: QuadId) -> usize {
    g.num_lambda_nodes() + z
}

/// Smirnov-type primitive H_X of a real admissible spinor on Λ(G) ∪ ◊(G),
/// from the three increment rules; returns (values, worst closure residual).
pub fn primitive_square(
    g: &IsingGraph,
    x: &[f64],
    anchor: VertexId,
) -> (Vec<Option<f64>>, f64) {
    let nv = g.num_vertices();
    let nl = g.num_lambda_nodes();
    let total = nl + g.quads().len();
    let mut h: Vec<Option<f64>> = vec![None; total];
    h[anchor] = Some(0.0);

    // (from, to, delta): h[to] = h[from] + delta. Corner increments only
    // inside the interior region, where the spinor is admissible.
    let mut incs: Vec<(usize, usize, f64)> = Vec::new();
    for c in 0..g.num_corners() {
        if !corner_inner(g, c) {
            continue;
        }
        let corner = g.corner(c);
        if !corner.quads.iter().any(|&z| g.is_interior_quad(z)) {
            continue;
        }
        incs.push((nv + corner.face, corner.vertex, x[c] * x[c]));
    }
    for z in 0..g.quads().len() {
        if !g.is_interior_quad(z) {
            continue;
        }
        let quad = g.quad(z);
        let e = g.edge(z);
        let (ct, st) = (g.theta(z).cos(), g.theta(z).sin());
        let xv = |i: usize| x[quad.corners[i]];
        let sgn = |i: usize| quad.arc_sign[i] as f64;
        let zc = hx_center_index(g, z);
        match e.orientation {
            Orientation::Vertical => {
                incs.push((zc, e.v0, sgn(3) * xv(0) * xv(3) * ct));
                incs.push((zc, e.v1, sgn(1) * xv(1) * xv(2) * ct));
                incs.push((zc, nv + e.f_pos, -sgn(0) * xv(0) * xv(1) * st));
                incs.push((zc, nv + e.f_neg, -sgn(2) * xv(2) * xv(3) * st));
            }
            Orientation::Horizontal => {
                incs.push((zc, e.v0, sgn(0) * xv(0) * xv(1) * ct));
                incs.push((zc, e.v1, sgn(2) * xv(2) * xv(3) * ct));
                incs.push((zc, nv + e.f_pos, -sgn(3) * xv(3) * xv(0) * st));
                incs.push((zc, nv + e.f_neg, -sgn(1) * xv(1) * xv(2) * st));
            }
        }
    }

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    for &(a, b, d) in &incs {
        adj[a].push((b, d));
        adj[b].push((a, -d));
    }
    let mut queue = std::collections::VecDeque::from([anchor]);
    while let Some(node) = queue.pop_front() {
        let hn = h[node].unwrap();
        for &(m, d) in &adj[node] {
            if h[m].is_none() {
                h[m] = Some(hn + d);
                queue.push_back(m);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for &(a, b, d) in &incs {
        if let (Some(ha), Some(hb)) = (h[a], h[b]) {
            worst = worst.max((hb - ha - d).abs());
        }
    }
    (h, worst)
}

/// The s-Laplacian stencil: analytic a-coefficients (sin²θ/r on •-•,
/// cos²θ/r on °-°) and b-coefficients solved per node (minimum norm) from
/// the kernel conditions Δ[S] = Δ[S̄] = 0; Δ[1] = 0 holds by construction.
#[derive(Clone, Debug)]
pub struct LaplacianStencil {
    pub a_terms: Vec<Vec<(usize, f64)>>,
    pub b_terms: Vec<Vec<(usize, f64)>>,
    /// +1 on vertices, -1 on faces.
    pub node_sign: Vec<f64>,
    /// Λ-nodes with a full interior stencil.
    pub interior: Vec<usize>,
    num_vertices: usize,
}

pub fn s_laplacian(g: &IsingGraph, emb: &SEmbedding) -> Result<LaplacianStencil, EmbeddingError> {
    let nv = g.num_vertices();
    let nl = g.num_lambda_nodes();
    let mut a_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nl];
    let mut b_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nl];
    let mut node_sign = vec![0.0; nl];
    let mut full = vec![true; nl];
    let n = g.n() as i64;

    for v in 0..nv {
        node_sign[v] = 1.0;
        let (x, y) = g.vertex_xy(v);
        let edges = [
            (g.v_edge(x, y), g.vertex_id(x, y + 1)),
            (g.v_edge(x, y - 1), g.vertex_id(x, y - 1)),
            (g.h_edge(x, y), g.vertex_id(x + 1, y)),
            (g.h_edge(x - 1, y), g.vertex_id(x - 1, y)),
        ];
        for (e, nbr) in edges {
            match (e, nbr) {
                (Some(e), Some(nbr)) if g.is_interior_quad(e) && emb.radius[e].is_some() => {
                    let r = emb.radius[e].unwrap();
                    let st = g.theta(e).sin();
                    a_terms[v].push((nbr, st * st / r));
                }
                _ => full[v] = false,
            }
        }
        for (dx, dy) in crate::lattice::SLOTS {
            let f = g.face_id(x + dx, y + dy);
            if f != g.outer_face() {
                b_terms[v].push((nv + f, 0.0));
            } else {
                full[v] = false;
            }
        }
    }
    node_sign
        .iter_mut()
        .skip(nv)
        .for_each(|s| *s = -1.0);
    for fy in -n..n {
        for fx in -n..n {
            let f = g.face_id(fx, fy);
            let node = nv + f;
            let edges = [
                (g.v_edge(fx, fy), g.face_id(fx - 1, fy)),
                (g.v_edge(fx + 1, fy), g.face_id(fx + 1, fy)),
                (g.h_edge(fx, fy), g.face_id(fx, fy - 1)),
                (g.h_edge(fx, fy + 1), g.face_id(fx, fy + 1)),
            ];
            for (e, nbr) in edges {
                match e {
                    Some(e)
                        if g.is_interior_quad(e)
                            && emb.radius[e].is_some()
                            && nbr != g.outer_face() =>
                    {
                        let r = emb.radius[e].unwrap();
                        let ct = g.theta(e).cos();
                        a_terms[node].push((nv + nbr, ct * ct / r));
                    }
                    _ => full[node] = false,
                }
            }
            for (x, y) in [(fx, fy), (fx + 1, fy), (fx + 1, fy + 1), (fx, fy + 1)] {
                b_terms[node].push((g.vertex_id(x, y).unwrap(), 0.0));
            }
        }
    }

    let mut interior = Vec::new();
    for node in 0..nl {
        if !full[node] || a_terms[node].len() != 4 {
            continue;
        }
        let Some(s_v) = emb.s[node] else { continue };
        let a_sign = if node < nv { 1.0 } else { -1.0 };
        let mut rhs = Complex64::new(0.0, 0.0);
        let mut ok = true;
        for &(nbr, a) in &a_terms[node] {
            match emb.s[nbr] {
                Some(s_n) => rhs += a_sign * a * (s_n - s_v),
                None => ok = false,
            }
        }
        if !ok {
            continue;
        }
        let dirs: Vec<Complex64> = match b_terms[node]
            .iter()
            .map(|&(nbr, _)| emb.s[nbr].map(|s_n| s_n - s_v))
            .collect::<Option<Vec<_>>>()
        {
            Some(d) => d,
            None => continue,
        };
        let mut aat = [0.0f64; 4];
        for d in &dirs {
            aat[0] += d.re * d.re;
            aat[1] += d.re * d.im;
            aat[3] += d.im * d.im;
        }
        aat[2] = aat[1];
        let det = aat[0] * aat[3] - aat[1] * aat[2];
        let scale = aat[0] + aat[3];
        if det.abs() < 1e-14 * scale * scale {
            return Err(EmbeddingError::SingularStencil(node));
        }
        // Minimum-norm b solving sum_j b_j dirs_j = -rhs.
        let t0 = (-rhs.re * aat[3] + rhs.im * aat[1]) / det;
        let t1 = (-rhs.im * aat[0] + rhs.re * aat[2]) / det;
        for (j, d) in dirs.iter().enumerate() {
            b_terms[node][j].1 = d.re * t0 + d.im * t1;
        }
        interior.push(node);
    }

    Ok(LaplacianStencil {
        a_terms,
        b_terms,
        node_sign,
        interior,
        num_vertices: nv,
    })
}

impl LaplacianStencil {
    /// Apply the stencil to a real function on Λ-nodes: at vertices
    /// Σ a (H_k - H) + Σ b (H_j - H), at faces Σ b (H_j - H) - Σ a (H_k - H).
    pub fn apply(&self, h: &[f64]) -> Vec<Option<f64>> {
        let mut out = vec![None; self.a_terms.len()];
        for &node in &self.interior {
            let a_sign = if node < self.num_vertices { 1.0 } else { -1.0 };
            let mut acc = 0.0;
            for &(k, a) in &self.a_terms[node] {
                acc += a_sign * a * (h[k] - h[node]);
            }
            for &(j, b) in &self.b_terms[node] {
                acc += b * (h[j] - h[node]);
            }
            out[node] = Some(acc);
        }
        out
    }

    pub fn apply_complex(&self, h: &[Complex64]) -> Vec<Option<Complex64>> {
        let re: Vec<f64> = h.iter().map(|c| c.re).collect();
        let im: Vec<f64> = h.iter().map(|c| c.im).collect();
        let ar = self.apply(&re);
        let ai = self.apply(&im);
        ar.into_iter()
            .zip(ai)
            .map(|(r, i)| match (r, i) {
                (Some(r), Some(i)) => Some(Complex64::new(r, i)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn critical_setup(n: usize) -> (IsingGraph, Propagator, SEmbedding) {
        let g = IsingGraph::build_box(n).unwrap();
        let y = critical_propagator(&g, n as f64);
        let anchor = g.vertex_id(0, 0).unwrap();
        let emb = embed(&g, &y, anchor, Complex64::new(0.0, 0.0), 1e-10).unwrap();
        (g, y, emb)
    }

    #[test]
    fn critical_propagator_is_admissible_and_normalized() {
        let g = IsingGraph::build_box(3).unwrap();
        let y = critical_propagator(&g, 3.0);
        assert!(y.residual(&g) < 1e-13);
        let amp = 1.0 / 3.0f64.sqrt();
        for c in 0..g.num_corners() {
            if g.corner(c).face != g.outer_face() {
                assert!((y.0[c].norm() - amp).abs() < 1e-14);
            }
        }
        // East-going corner at the anchor is positive real.
        let root = g
            .corner_id(g.vertex_id(0, 0).unwrap(), g.face_id(-1, -1))
            .unwrap();
        assert!(y.0[root].im.abs() < 1e-15 && y.0[root].re > 0.0);
    }

    #[test]
    fn critical_embedding_is_the_standard_grid() {
        let (g, _y, emb) = critical_setup(3);
        let n = 3.0;
        for v in 0..g.num_vertices() {
            let (x, y) = g.vertex_xy(v);
            let expect = Complex64::new((x + y) as f64 / n, (y - x) as f64 / n);
            assert!((emb.vertex(v) - expect).norm() < 1e-13, "vertex {v}");
        }
        for z in 0..g.quads().len() {
            if !g.is_interior_quad(z) {
                continue;
            }
            assert!((emb.radius[z].unwrap() - 1.0 / (2.0 * n)).abs() < 1e-13);
            let e = g.edge(z);
            let mid = (emb.vertex(e.v0) + emb.vertex(e.v1)) / 2.0;
            assert!((emb.center[z].unwrap() - mid).norm() < 1e-13);
        }
        assert!(emb.consistency_residual < 1e-13);
        assert!(emb.center_residual < 1e-13);
        assert!(emb.tangency_spread < 1e-13);
        // Origami constant on vertices and on faces separately, and
        // |ΔQ| = |ΔS| on every Λ-edge.
        let q0 = emb.q[g.vertex_id(1, 2).unwrap()].unwrap();
        for v in 0..g.num_vertices() {
            assert!((emb.q[v].unwrap() - q0).abs() < 1e-13);
        }
        let f0 = emb.q[g.num_vertices() + g.face_id(0, 0)].unwrap();
        for f in 0..g.num_faces() - 1 {
            assert!((emb.q[g.num_vertices() + f].unwrap() - f0).abs() < 1e-13);
        }
        for c in 0..g.num_corners() {
            let corner = g.corner(c);
            if corner.face == g.outer_face() {
                continue;
            }
            let dq = emb.q[corner.vertex].unwrap()
                - emb.q[g.num_vertices() + corner.face].unwrap();
            let ds = (emb.vertex(corner.vertex) - emb.face(corner.face).unwrap()).norm();
            assert!((dq.abs() - ds).abs() < 1e-13);
        }
    }

    #[test]
    fn rotation_covariance() {
        let (g, y, emb) = critical_setup(2);
        let alpha = 0.73;
        let lambda = Complex64::from_polar(1.0, alpha / 2.0);
        let y2 = Propagator(y.0.iter().map(|v| v * lambda).collect());
        let anchor = g.vertex_id(0, 0).unwrap();
        let emb2 = embed(&g, &y2, anchor, Complex64::new(0.0, 0.0), 1e-10).unwrap();
        let rot = Complex64::from_polar(1.0, alpha);
        for v in 0..g.num_vertices() {
            assert!((emb2.vertex(v) - rot * emb.vertex(v)).norm() < 1e-12);
        }
    }

    #[test]
    fn recover_weights_on_critical_lattice() {
        let (g, _y, emb) = critical_setup(2);
        let thetas = recover_weights(&g, &emb).unwrap();
        for t in thetas.iter().flatten() {
            assert!((t - FRAC_PI_4).abs() < 1e-12);
            assert!(((t / 2.0).tan() - (2.0f64.sqrt() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rhombic_half_angle_identity() {
        // A rhombus with half-angle α at both •-vertices has φ° = π/2 - α,
        // so the recovery formula returns θ = α.
        let alpha = 0.6f64;
        let t = (alpha.sin() * alpha.sin()
            / (std::f64::consts::FRAC_PI_2 - alpha).sin().powi(2))
        .sqrt()
        .atan();
        assert!((t - alpha).abs() < 1e-12);
    }

    #[test]
    fn shol_roundtrip_and_projection() {
        let (g, y, _emb) = critical_setup(3);
        // X from a constant F (s-holomorphic on the critical lattice).
        let fconst = Complex64::new(0.7, -0.3);
        let x: Vec<f64> = (0..g.num_corners())
            .map(|c| (VARSIGMA.conj() * y.0[c] * fconst).re)
            .collect();
        let f = shol_from_spinor(&g, &y, &x).unwrap();
        for fz in f.0.iter().flatten() {
            assert!((fz - fconst).norm() < 1e-12);
        }
        let (x2, mismatch) = spinor_from_shol(&g, &y, &f);
        assert!(mismatch < 1e-12);
        for c in 0..g.num_corners() {
            let corner = g.corner(c);
            if corner.face != g.outer_face()
                && corner.quads.iter().any(|&z| g.is_interior_quad(z))
            {
                assert!((x2[c] - x[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn primitive_complex_trivial_and_constant() {
        let (g, y, emb) = critical_setup(3);
        let anchor = g.vertex_id(0, 0).unwrap();
        let zero = QuadField(vec![Some(Complex64::new(0.0, 0.0)); g.quads().len()]);
        let (i0, res0) = primitive_complex(&g, &y, &zero, anchor);
        assert!(res0 < 1e-15);
        for v in i0.iter().flatten() {
            assert!(v.norm() < 1e-15);
        }
        // F ≡ 1 on the critical lattice: I = ς̄ S + ς Q up to a constant.
        let one = QuadField(vec![Some(Complex64::new(1.0, 0.0)); g.quads().len()]);
        let (i1, res1) = primitive_complex(&g, &y, &one, anchor);
        assert!(res1 < 1e-13);
        let base = i1[anchor].unwrap()
            - (VARSIGMA.conj() * emb.vertex(anchor) + VARSIGMA * emb.q[anchor].unwrap());
        for node in 0..g.num_lambda_nodes() {
            if let (Some(iv), Some(sv), Some(qv)) = (i1[node], emb.s[node], emb.q[node]) {
                let expect = VARSIGMA.conj() * sv + VARSIGMA * qv + base;
                assert!((iv - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn primitive_square_structure_and_hf_match() {
        let (g, y, _emb) = critical_setup(3);
        let anchor = g.vertex_id(0, 0).unwrap();
        let zero = vec![0.0; g.num_corners()];
        let (h0, r0) = primitive_square(&g, &zero, anchor);
        assert!(r0 < 1e-15);
        for v in h0.iter().flatten() {
            assert!(v.abs() < 1e-15);
        }
        let fconst = Complex64::new(0.4, 0.9);
        let x: Vec<f64> = (0..g.num_corners())
            .map(|c| (VARSIGMA.conj() * y.0[c] * fconst).re)
            .collect();
        let (h, res) = primitive_square(&g, &x, anchor);
        assert!(res < 1e-13);
        for c in 0..g.num_corners() {
            let corner = g.corner(c);
            if corner.face == g.outer_face()
                || !corner.quads.iter().any(|&z| g.is_interior_quad(z))
            {
                continue;
            }
            let hv = h[corner.vertex].unwrap();
            let hf = h[g.num_vertices() + corner.face].unwrap();
            let diff = hv - hf;
            assert!((diff - x[c] * x[c]).abs() < 1e-12);
            assert!(diff >= -1e-12);
        }
        // H(v•) - H(z) = ± X X cos θ structure entrywise at a sample quad.
        let z = g.v_edge(0, 0).unwrap();
        let quad = g.quad(z);
        let hz = h[hx_center_index(&g, z)].unwrap();
        let hv0 = h[g.edge(z).v0].unwrap();
        let expected = (quad.arc_sign[3] as f64)
            * x[quad.corners[0]]
            * x[quad.corners[3]]
            * g.theta(z).cos();
        assert!((hv0 - hz - expected).abs() < 1e-12);
        // H_F coincides with H_X up to one additive constant.
        let f = shol_from_spinor(&g, &y, &x).unwrap();
        let (hf, resf) = h_f_on_lambda(&g, &y, &f, anchor);
        assert!(resf < 1e-13);
        let mut offset = None;
        for node in 0..g.num_lambda_nodes() {
            if let (Some(a), Some(b)) = (h[node], hf[node]) {
                let d = a - b;
                match offset {
                    None => offset = Some(d),
                    Some(o) => assert!((d - o).abs() < 1e-10, "spread in H_X - H_F"),
                }
            }
        }
    }

    #[test]
    fn laplacian_critical_lattice() {
        let (g, _y, emb) = critical_setup(4);
        let stencil = s_laplacian(&g, &emb).unwrap();
        assert!(!stencil.interior.is_empty());
        let n = 4.0f64;
        for &node in &stencil.interior {
            for &(_, a) in &stencil.a_terms[node] {
                assert!((a - n).abs() < 1e-10, "a = {a}");
            }
            for &(_, b) in &stencil.b_terms[node] {
                assert!(b.abs() < 1e-10, "b = {b}");
            }
        }
        let ones = vec![1.0; g.num_lambda_nodes()];
        for v in stencil.apply(&ones).iter().flatten() {
            assert!(v.abs() < 1e-12);
        }
        let s: Vec<Complex64> = (0..g.num_lambda_nodes())
            .map(|i| emb.s[i].unwrap_or_default())
            .collect();
        for v in stencil.apply_complex(&s).iter().flatten() {
            assert!(v.norm() < 1e-10);
        }
        let sbar: Vec<Complex64> = s.iter().map(|c| c.conj()).collect();
        for v in stencil.apply_complex(&sbar).iter().flatten() {
            assert!(v.norm() < 1e-10);
        }
        // Harmonic quadratic x² - y² is annihilated exactly on the grid.
        let quad_fn: Vec<f64> = (0..g.num_lambda_nodes())
            .map(|i| emb.s[i].map_or(0.0, |p| p.re * p.re - p.im * p.im))
            .collect();
        for v in stencil.apply(&quad_fn).iter().flatten() {
            assert!(v.abs() < 1e-11);
        }
        // Re z⁴ residual decays at second order under mesh halving.
        let worst4 = |nn: usize| -> f64 {
            let g = IsingGraph::build_box(nn).unwrap();
            let y = critical_propagator(&g, nn as f64);
            let emb = embed(
                &g,
                &y,
                g.vertex_id(0, 0).unwrap(),
                Complex64::new(0.0, 0.0),
                1e-10,
            )
            .unwrap();
            let st = s_laplacian(&g, &emb).unwrap();
            let h: Vec<f64> = (0..g.num_lambda_nodes())
                .map(|i| emb.s[i].map_or(0.0, |p| (p * p * p * p).re))
                .collect();
            // Δ_S carries one power of δ; normalize to a Laplacian scale.
            st.apply(&h)
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                * nn as f64
        };
        let c4 = worst4(4);
        let c8 = worst4(8);
        assert!(
            c8 < c4 / 2.5,
            "harmonic quartic residual did not decay at O(δ²): {c4} -> {c8}"
        );
    }
}

/// Stable structured-text snapshot of an embedding: positions, origami,
/// radii, angles, and the residual summary.
pub fn snapshot_document(g: &IsingGraph, emb: &SEmbedding) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "schema = \"embedding-snapshot/1\"");
    let _ = writeln!(s, "n = {}", g.n());
    let _ = writeln!(
        s,
        "residuals = [{:.3e}, {:.3e}, {:.3e}]",
        emb.consistency_residual, emb.center_residual, emb.tangency_spread
    );
    let _ = writeln!(s, "[positions]");
    for (i, p) in emb.s.iter().enumerate() {
        if let Some(p) = p {
            let _ = writeln!(s, "l{} = [{:.17e}, {:.17e}]", i, p.re, p.im);
        }
    }
    let _ = writeln!(s, "[origami]");
    for (i, q) in emb.q.iter().enumerate() {
        if let Some(q) = q {
            let _ = writeln!(s, "l{} = {:.17e}", i, q);
        }
    }
    let _ = writeln!(s, "[centers]");
    for (z, c) in emb.center.iter().enumerate() {
        if let Some(c) = c {
            let _ = writeln!(s, "z{} = [{:.17e}, {:.17e}]", z, c.re, c.im);
        }
    }
    let _ = writeln!(s, "[radii]");
    for (z, r) in emb.radius.iter().enumerate() {
        if let Some(r) = r {
            let _ = writeln!(s, "z{} = {:.17e}", z, r);
        }
    }
    let _ = writeln!(s, "[angles]");
    for e in 0..g.num_edges() {
        let _ = writeln!(s, "e{} = {:.17e}", e, g.theta(e));
    }
    s
}

/// Parse a snapshot produced by `snapshot_document`: returns the graph
/// (with the stored angles) and the embedding data it carries.
pub fn snapshot_parse(doc: &str) -> Result<(IsingGraph, SEmbedding), String> {
    let mut n: Option<usize> = None;
    let mut section = String::new();
    let mut positions: Vec<(usize, Complex64)> = Vec::new();
    let mut origami: Vec<(usize, f64)> = Vec::new();
    let mut centers: Vec<(usize, Complex64)> = Vec::new();
    let mut radii: Vec<(usize, f64)> = Vec::new();
    let mut angles: Vec<(usize, f64)> = Vec::new();
    for line in doc.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("n = ") {
            n = rest.trim().parse().ok();
        } else if line.starts_with('[') {
            section = line.trim_matches(|c| c == '[' || c == ']').to_string();
        } else if line.starts_with("schema") {
            if !line.contains("embedding-snapshot/1") {
                return Err(format!("unknown snapshot schema: {line}"));
            }
        } else if line.starts_with("residuals") {
            continue;
        } else if let Some((key, val)) = line.split_once('=') {
            let idx: usize = key.trim()[1..]
                .parse()
                .map_err(|_| format!("bad key {key}"))?;
            let val = val.trim();
            let parse_pair = |v: &str| -> Result<Complex64, String> {
                let v = v.trim_matches(|c| c == '[' || c == ']');
                let mut it = v.split(',');
                let re: f64 = it
                    .next()
                    .ok_or("missing re")?
                    .trim()
                    .parse()
                    .map_err(|_| "bad re")?;
                let im: f64 = it
                    .next()
                    .ok_or("missing im")?
                    .trim()
                    .parse()
                    .map_err(|_| "bad im")?;
                Ok(Complex64::new(re, im))
            };
            match section.as_str() {
                "positions" => positions.push((idx, parse_pair(val)?)),
                "origami" => origami.push((idx, val.parse().map_err(|_| "bad origami")?)),
                "centers" => centers.push((idx, parse_pair(val)?)),
                "radii" => radii.push((idx, val.parse().map_err(|_| "bad radius")?)),
                "angles" => angles.push((idx, val.parse().map_err(|_| "bad angle")?)),
                other => return Err(format!("unknown section {other}")),
            }
        }
    }
    let n = n.ok_or("missing n")?;
    let mut g = IsingGraph::build_box(n).map_err(|e| e.to_string())?;
    for (e, t) in angles {
        g.set_theta_unchecked(e, t);
    }
    let nl = g.num_lambda_nodes();
    let nq = g.quads().len();
    let mut emb = SEmbedding {
        s: vec![None; nl],
        center: vec![None; nq],
        q: vec![None; nl],
        radius: vec![None; nq],
        eta: vec![Complex64::new(0.0, 0.0); g.num_corners()],
        delta_c: vec![0.0; g.num_corners()],
        consistency_residual: 0.0,
        center_residual: 0.0,
        tangency_spread: 0.0,
        num_vertices: g.num_vertices(),
    };
    for (i, p) in positions {
        emb.s[i] = Some(p);
    }
    for (i, q) in origami {
        emb.q[i] = Some(q);
    }
    for (z, c) in centers {
        emb.center[z] = Some(c);
    }
    for (z, r) in radii {
        emb.radius[z] = Some(r);
    }
    Ok((g, emb))
}
