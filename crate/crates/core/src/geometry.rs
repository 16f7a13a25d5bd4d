//! Geometric validation of embeddings: the Unif(δ, r₀, θ₀) regularity
//! class, the κ-Lipschitz property of the origami map, winding numbers,
//! properness via the argument principle, and distance comparability
//! between two embeddings of the same graph.

use crate::embedding::SEmbedding;
use crate::lattice::{IsingGraph, LambdaNode, QuadId, VertexId};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate quad {0} in the scanned region")]
    DegenerateQuad(QuadId),
    #[error("winding undefined: point lies on the polyline (distance {0:.3e})")]
    PointOnCurve(f64),
    #[error("embeddings have mismatched vertex sets")]
    MismatchedVertexSets,
}

/// Outcome of a Unif(δ, r₀, θ₀) scan with the extremal witnesses.
#[derive(Clone, Debug)]
pub struct UnifReport {
    pub delta: f64,
    pub r0: f64,
    pub theta0: f64,
    /// Worst ratio max(len/δ, δ/len) over scanned Λ-edges.
    pub worst_edge_ratio: f64,
    pub worst_edge_corner: usize,
    /// Smallest quad half-angle seen.
    pub worst_half_angle: f64,
    pub worst_angle_quad: usize,
    pub pass: bool,
}

/// Region selector: which interior quads participate in a scan.
pub fn quads_in_box(g: &IsingGraph, halfwidth: i64) -> Vec<QuadId> {
    (0..g.quads().len())
        .filter(|&z| {
            if !g.is_interior_quad(z) {
                return false;
            }
            let e = g.edge(z);
            for v in [e.v0, e.v1] {
                let (x, y) = g.vertex_xy(v);
                if x.abs() > halfwidth || y.abs() > halfwidth {
                    return false;
                }
            }
            true
        })
        .collect()
}

/// Exhaustive Unif scan over the given quads: all Λ-edge lengths within
/// [δ/r₀, r₀·δ] and all quad half-angles at least θ₀.
pub fn check_unif(
    g: &IsingGraph,
    emb: &SEmbedding,
    quads: &[QuadId],
    delta: f64,
    r0: f64,
    theta0: f64,
) -> Result<UnifReport, GeometryError> {
    let mut worst_edge_ratio: f64 = 1.0;
    let mut worst_edge_corner = 0usize;
    let mut worst_half_angle = std::f64::consts::FRAC_PI_2;
    let mut worst_angle_quad = 0usize;
    for &z in quads {
        let cyc = &g.quad(z).cycle;
        let pos: Vec<Complex64> = cyc
            .iter()
            .map(|&nd| emb.lambda(nd).expect("interior quad position"))
            .collect();
        for i in 0..4 {
            let len = (pos[(i + 1) % 4] - pos[i]).norm();
            if len <= 0.0 {
                return Err(GeometryError::DegenerateQuad(z));
            }
            let ratio = (len / delta).max(delta / len);
            if ratio > worst_edge_ratio {
                worst_edge_ratio = ratio;
                worst_edge_corner = corner_of_cycle_side(g, z, i);
            }
            let u = pos[(i + 3) % 4] - pos[i];
            let w = pos[(i + 1) % 4] - pos[i];
            if u.norm() == 0.0 || w.norm() == 0.0 {
                return Err(GeometryError::DegenerateQuad(z));
            }
            let half = (u * w.conj()).arg().abs() / 2.0;
            if half < worst_half_angle {
                worst_half_angle = half;
                worst_angle_quad = z;
            }
        }
    }
    let pass = worst_edge_ratio <= r0 && worst_half_angle >= theta0;
    Ok(UnifReport {
        delta,
        r0,
        theta0,
        worst_edge_ratio,
        worst_edge_corner,
        worst_half_angle,
        worst_angle_quad,
        pass,
    })
}

fn corner_of_cycle_side(g: &IsingGraph, z: QuadId, side: usize) -> usize {
    // Cycle side i joins cycle[i] and cycle[i+1]; the corner is the
    // (vertex, face) incidence between them.
    let cyc = &g.quad(z).cycle;
    let (a, b) = (cyc[side], cyc[(side + 1) % 4]);
    let (v, f) = match (a, b) {
        (LambdaNode::Vertex(v), LambdaNode::Face(f)) => (v, f),
        (LambdaNode::Face(f), LambdaNode::Vertex(v)) => (v, f),
        _ => unreachable!("quad cycle alternates"),
    };
    g.corner_id(v, f).unwrap()
}

/// Result of a Lip(κ, δ) scan of the origami map.
#[derive(Clone, Debug)]
pub struct LipReport {
    pub kappa: f64,
    pub delta: f64,
    pub pass: bool,
    /// Worst observed |ΔQ| / |ΔS| among pairs with |ΔS| >= δ.
    pub worst_ratio: f64,
    pub worst_pair: (usize, usize),
}

/// Verify |Q(v') - Q(v)| <= κ |S(v') - S(v)| over all Λ-node pairs at
/// distance strictly above δ. Plain O(N²) scan; pairs at distance <= δ are
/// exempt (the scale is an infimum: on the critical grid adjacent pairs sit
/// exactly at δ with |ΔQ| = |ΔS| and do not count against κ < 1).
pub fn check_lip(emb: &SEmbedding, kappa: f64, delta: f64) -> LipReport {
    let nodes: Vec<(Complex64, f64)> = emb
        .s
        .iter()
        .zip(emb.q.iter())
        .filter_map(|(s, q)| match (s, q) {
            (Some(s), Some(q)) => Some((*s, *q)),
            _ => None,
        })
        .collect();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_pair = (0usize, 0usize);
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let ds = (nodes[j].0 - nodes[i].0).norm();
            if ds <= delta * (1.0 + 1e-9) {
                continue;
            }
            let ratio = (nodes[j].1 - nodes[i].1).abs() / ds;
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst_pair = (i, j);
            }
        }
    }
    LipReport {
        kappa,
        delta,
        pass: worst_ratio <= kappa,
        worst_ratio,
        worst_pair,
    }
}

/// Exact integer winding number of a closed polyline around a point, by
/// counting signed crossings of the horizontal ray to the right of the
/// point. Vertex-on-ray ties are handled by the half-open convention;
/// a point within 1e-12 of the polyline is an error.
pub fn winding_number(polyline: &[Complex64], point: Complex64) -> Result<i64, GeometryError> {
    let n = polyline.len();
    assert!(n >= 3, "winding needs a closed polyline");
    // Distance guard.
    for i in 0..n {
        let (a, b) = (polyline[i], polyline[(i + 1) % n]);
        let d = point_segment_distance(point, a, b);
        if d < 1e-12 {
            return Err(GeometryError::PointOnCurve(d));
        }
    }
    let mut winding = 0i64;
    for i in 0..n {
        let a = polyline[i] - point;
        let b = polyline[(i + 1) % n] - point;
        // Half-open crossing rule on the upward sweep.
        if (a.im <= 0.0) != (b.im <= 0.0) {
            // x-coordinate of the intersection with the horizontal axis.
            let t = a.im / (a.im - b.im);
            let x = a.re + t * (b.re - a.re);
            if x > 0.0 {
                winding += if b.im > a.im { 1 } else { -1 };
            }
        }
    }
    Ok(winding)
}

fn point_segment_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Properness report: orientation failures and winding failures witness
/// the defect.
#[derive(Clone, Debug)]
pub struct ProperReport {
    pub pass: bool,
    pub orientation_failures: Vec<QuadId>,
    pub winding_failures: Vec<(QuadId, i64)>,
}

/// Signed area of an interior quad's image (counterclockwise positive).
pub fn quad_signed_area(g: &IsingGraph, emb: &SEmbedding, z: QuadId) -> Option<f64> {
    if !g.is_interior_quad(z) {
        return None;
    }
    let pos: Vec<Complex64> = g
        .quad(z)
        .cycle
        .iter()
        .map(|&nd| emb.lambda(nd))
        .collect::<Option<Vec<_>>>()?;
    let mut area = 0.0;
    for i in 0..4 {
        let (a, b) = (pos[i], pos[(i + 1) % 4]);
        area += a.re * b.im - b.re * a.im;
    }
    Some(area / 2.0)
}

/// The outer boundary cycle of the combinatorial box of halfwidth m,
/// counterclockwise, as vertex ids.
pub fn box_boundary_cycle(g: &IsingGraph, m: i64) -> Vec<VertexId> {
    let mut cyc = Vec::new();
    for x in -m..m {
        cyc.push(g.vertex_id(x, -m).unwrap());
    }
    for y in -m..m {
        cyc.push(g.vertex_id(m, y).unwrap());
    }
    for x in -m..m {
        cyc.push(g.vertex_id(-x, m).unwrap());
    }
    for y in -m..m {
        cyc.push(g.vertex_id(-m, -y).unwrap());
    }
    cyc
}

/// The argument-principle properness test: every interior quad image of the
/// observation box is positively oriented, and the image of the outer
/// boundary cycle winds exactly once around every quad center of the inner
/// box. Together these certify that no two inner quad images overlap.
pub fn check_proper(
    g: &IsingGraph,
    emb: &SEmbedding,
    inner_halfwidth: i64,
    outer_halfwidth: i64,
) -> Result<ProperReport, GeometryError> {
    let mut orientation_failures = Vec::new();
    for &z in &quads_in_box(g, outer_halfwidth) {
        if let Some(area) = quad_signed_area(g, emb, z) {
            if area <= 0.0 {
                orientation_failures.push(z);
            }
        }
    }
    let boundary: Vec<Complex64> = box_boundary_cycle(g, outer_halfwidth)
        .iter()
        .map(|&v| emb.vertex(v))
        .collect();
    let mut winding_failures = Vec::new();
    for &z in &quads_in_box(g, inner_halfwidth) {
        let center = emb.center[z].expect("inner quad center");
        let w = winding_number(&boundary, center)?;
        if w != 1 {
            winding_failures.push((z, w));
        }
    }
    Ok(ProperReport {
        pass: orientation_failures.is_empty() && winding_failures.is_empty(),
        orientation_failures,
        winding_failures,
    })
}

/// Extremal |ΔS_t| / |ΔS_0| over all Λ-node pairs present in both
/// embeddings.
pub fn distance_comparability(
    emb_t: &SEmbedding,
    emb_0: &SEmbedding,
) -> Result<(f64, f64), GeometryError> {
    if emb_t.s.len() != emb_0.s.len() {
        return Err(GeometryError::MismatchedVertexSets);
    }
    let pairs: Vec<(Complex64, Complex64)> = emb_t
        .s
        .iter()
        .zip(emb_0.s.iter())
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some((*a, *b)),
            _ => None,
        })
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..pairs.len() {
        for j in (i + 1)..pairs.len() {
            let dt = (pairs[j].0 - pairs[i].0).norm();
            let d0 = (pairs[j].1 - pairs[i].1).norm();
            if d0 == 0.0 {
                continue;
            }
            let r = dt / d0;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Ok((lo, hi))
}

/// Brute-force overlap oracle: do any two interior quad images of the
/// region intersect in their interiors? Used to validate `check_proper`.
pub fn any_quads_overlap(g: &IsingGraph, emb: &SEmbedding, quads: &[QuadId]) -> bool {
    let polys: Vec<Vec<Complex64>> = quads
        .iter()
        .map(|&z| {
            g.quad(z)
                .cycle
                .iter()
                .map(|&nd| emb.lambda(nd).unwrap())
                .collect()
        })
        .collect();
    for i in 0..polys.len() {
        for j in (i + 1)..polys.len() {
            if polygons_overlap(&polys[i], &polys[j]) {
                return true;
            }
        }
    }
    false
}

fn polygons_overlap(a: &[Complex64], b: &[Complex64]) -> bool {
    // Proper segment crossings.
    for i in 0..a.len() {
        for j in 0..b.len() {
            if segments_cross(
                a[i],
                a[(i + 1) % a.len()],
                b[j],
                b[(j + 1) % b.len()],
            ) {
                return true;
            }
        }
    }
    // Containment: a vertex strictly inside the other polygon.
    strictly_inside(a[0], b) || strictly_inside(b[0], a)
}

fn orient(a: Complex64, b: Complex64, c: Complex64) -> f64 {
    (b.re - a.re) * (c.im - a.im) - (b.im - a.im) * (c.re - a.re)
}

fn segments_cross(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> bool {
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < -1e-24 && d3 * d4 < -1e-24
}

fn strictly_inside(p: Complex64, poly: &[Complex64]) -> bool {
    match winding_number(poly, p) {
        Ok(w) => w != 0,
        Err(_) => false,
    }
}
