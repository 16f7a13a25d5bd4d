//! Fermion engine backed by the propagation linear system.
//!
//! On the wired box every Kadanoff-Ceva two-point fermion `X^(q) = <χ_· χ_q>`
//! satisfies the three-term propagation equation around every quad of the
//! double cover that branches everywhere except around the two members of q.
//! Presented on the base cover, that system is the base propagation matrix
//! with the two arcs at q flipped inside one quad (the mismatch quad). The
//! flip is a rank-one perturbation of the base matrix, so one banded
//! factorization per angle field yields every fermion as a normalized
//! column of the perturbed kernel.

use crate::lattice::{CornerId, EdgeId, IsingGraph, Orientation, QuadId};
use crate::linalg::{band_factorize, BandLdu, BandMatrix, InverseBand, LinalgError};
use num_complex::Complex64;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("factorization failed: {0}")]
    Factorization(#[from] LinalgError),
    #[error("defect kernel is degenerate at corner {0} (|X(q)| / max|X| = {1:.3e})")]
    DegenerateKernel(CornerId, f64),
}

/// Which of a quad's four equations provide rows of the square system:
/// vertical quads host the equations centered at their a- and c-corners,
/// horizontal quads the ones at b and d. Every corner then owns exactly
/// one equation and the matrix has a unit diagonal.
fn hosted_positions(orientation: Orientation) -> [usize; 2] {
    match orientation {
        Orientation::Vertical => [0, 2],
        Orientation::Horizontal => [1, 3],
    }
}

/// A flipped corner-adjacency arc, identified by (quad, cyclic arc index).
pub type ArcFlip = (QuadId, usize);

/// The two arcs at corner `q` inside quad `z`.
pub fn defect_flips(g: &IsingGraph, q: CornerId, z: QuadId) -> [ArcFlip; 2] {
    let pos = g.corner_pos_in_quad(z, q);
    [(z, pos), (z, (pos + 3) % 4)]
}

/// The two corners of quad `r` sharing its first endpoint; their spin faces
/// are the two faces of the edge, and the shared vertex makes the disorder
/// parts cancel, so ε_r = χ χ over this pair.
pub fn epsilon_pair(g: &IsingGraph, r: EdgeId) -> (CornerId, CornerId) {
    let q = g.quad(r);
    match g.edge(r).orientation {
        Orientation::Vertical => (q.corners[3], q.corners[0]), // (d, a) at the bottom vertex
        Orientation::Horizontal => (q.corners[1], q.corners[0]), // (b, a) at the west vertex
    }
}

/// Sign relating the a-defect fermion's value at the c-corner to the energy
/// of the quad's edge: E[ε] = cos θ - sin θ * energy_sign * X^(a)(c).
/// The sign is a local gauge factor of the section; it equals the product
/// of the quad's non-(a,b) arc signs, negated for horizontal quads.
pub fn energy_sign(g: &IsingGraph, z: QuadId) -> f64 {
    let s = &g.quad(z).arc_sign;
    let prod = (s[1] * s[2] * s[3]) as f64;
    match g.edge(z).orientation {
        Orientation::Vertical => prod,
        Orientation::Horizontal => -prod,
    }
}

/// The canonical mismatch quad of a corner: its vertical quad when it has
/// exactly one, otherwise the lower-indexed quad.
pub fn canonical_defect_quad(g: &IsingGraph, q: CornerId) -> QuadId {
    let [q0, q1] = g.corner(q).quads;
    let v0 = matches!(g.edge(q0).orientation, Orientation::Vertical);
    let v1 = matches!(g.edge(q1).orientation, Orientation::Vertical);
    match (v0, v1) {
        (true, false) => q0,
        (false, true) => q1,
        _ => q0.min(q1),
    }
}

/// One factorization of the base propagation system for a fixed angle
/// field. Holds no reference to the graph; callers pass the same graph to
/// every method (only its immutable combinatorics are used).
pub struct Factorized {
    pub cos_t: Vec<f64>,
    pub sin_t: Vec<f64>,
    ldu: BandLdu,
    inv: OnceLock<InverseBand>,
}

/// Per-quad scalars the flows need at every refresh: the normalization
/// values of the two defect fermions, their cross values, and the energy.
#[derive(Clone, Copy, Debug)]
pub struct DefectScalars {
    /// (M^{-1} u_a)(a): unnormalized value of the a-defect column at a.
    pub norm_a: f64,
    /// (M^{-1} u_c)(c).
    pub norm_c: f64,
    /// X^(a)(c) = <χ_{c+} χ_{a+}>, normalized.
    pub xa_at_c: f64,
    /// X^(c)(a), normalized.
    pub xc_at_a: f64,
    /// E[ε] of the quad's edge.
    pub energy: f64,
}

/// Sparse description of the rank-one defect perturbation Δ = u v^T.
#[derive(Clone, Debug)]
pub struct DefectUpdate {
    /// u as (row, coefficient) pairs; at most two entries.
    pub u: Vec<(usize, f64)>,
    /// v as (column, coefficient) pairs; at most two entries.
    pub v: Vec<(usize, f64)>,
}

/// Per-quad data for the deformation flows: the two defect fermions of the
/// quad evaluated at its own four corners (normalized), their raw
/// normalizations and right-hand-side structures, and the edge energy.
#[derive(Clone, Debug)]
pub struct DefectQuadData {
    pub ua: DefectUpdate,
    pub uc: DefectUpdate,
    pub norm_a: f64,
    pub norm_c: f64,
    /// X^(a) at corners [a, b, c, d] of the quad.
    pub xa: [f64; 4],
    /// X^(c) at corners [a, b, c, d].
    pub xc: [f64; 4],
    pub energy: f64,
}

impl Factorized {
    pub fn new(g: &IsingGraph, theta: &[f64]) -> Result<Self, KernelError> {
        assert_eq!(theta.len(), g.num_edges());
        let cos_t: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let sin_t: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let n = g.num_corners();

        // Bandwidth: max index spread within a quad.
        let mut band = 1usize;
        for q in g.quads() {
            let lo = *q.corners.iter().min().unwrap();
            let hi = *q.corners.iter().max().unwrap();
            band = band.max(hi - lo);
        }

        let mut m = BandMatrix::zeros(n, band, band);
        for (z, quad) in g.quads().iter().enumerate() {
            for pos in hosted_positions(g.edge(z).orientation) {
                let c = quad.corners[pos];
                let nb = g.quad_neighbors(z, pos);
                m.add(c, c, 1.0);
                m.add(c, nb.vertex_mate, -cos_t[z] * nb.vertex_sign);
                m.add(c, nb.face_mate, -sin_t[z] * nb.face_sign);
            }
        }
        let ldu = band_factorize(m, 1e-13)?;
        Ok(Factorized {
            cos_t,
            sin_t,
            ldu,
            inv: OnceLock::new(),
        })
    }

    fn inverse_band(&self) -> &InverseBand {
        self.inv.get_or_init(|| self.ldu.inverse_band())
    }

    /// Force the Takahashi pass to run now (lets callers time it separately).
    pub fn prepare_inverse_band(&self) {
        let _ = self.inverse_band();
    }

    /// Solve the base system for an arbitrary dense right-hand side.
    pub fn solve(&self, rhs: &mut [f64]) {
        self.ldu.solve(rhs);
    }

    /// Rank-one description of the defect at (q, z).
    pub fn defect_update(&self, g: &IsingGraph, q: CornerId, z: QuadId) -> DefectUpdate {
        let entries = self.delta_entries(g, &defect_flips(g, q, z));
        factor_rank_one(&entries).expect("single-corner defect is always rank one")
    }

    /// Entry list (row, col, delta) of the matrix perturbation for a flip set.
    fn delta_entries(&self, g: &IsingGraph, flips: &[ArcFlip]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for &(z, arc) in flips {
            let quad = g.quad(z);
            let orientation = g.edge(z).orientation;
            for pos in hosted_positions(orientation) {
                let nb = g.quad_neighbors(z, pos);
                // Arc indices used by the equation at `pos`.
                let (varc, farc) = arcs_of_position(orientation, pos);
                let row = quad.corners[pos];
                if arc == varc {
                    // old coeff -cos*s flips to +cos*s: delta = +2 cos s.
                    out.push((row, nb.vertex_mate, 2.0 * self.cos_t[z] * nb.vertex_sign));
                }
                if arc == farc {
                    out.push((row, nb.face_mate, 2.0 * self.sin_t[z] * nb.face_sign));
                }
            }
        }
        out
    }

    /// The normalized two-point fermion X^(q) with mismatch quad z:
    /// X^(q)(q) = 1 and the propagation equation holds at every other quad.
    pub fn fermion(&self, g: &IsingGraph, q: CornerId, z: QuadId) -> Result<Vec<f64>, KernelError> {
        let upd = self.defect_update(g, q, z);
        let mut col = vec![0.0; g.num_corners()];
        if upd.u.len() == 1 && upd.u[0].1 == 1.0 {
            self.ldu.solve_unit(upd.u[0].0, &mut col);
        } else {
            for &(r, w) in &upd.u {
                col[r] = w;
            }
            self.ldu.solve(&mut col);
        }
        normalize_at(col, q, 1.0)
    }

    /// Values of the two defect fermions of quad `z` at all four corners of
    /// `z`, their normalizations, and the edge energy, all read off the
    /// in-band inverse without extra solves.
    pub fn defect_quad_data(&self, g: &IsingGraph, z: QuadId) -> DefectQuadData {
        let zb = self.inverse_band();
        let quad = g.quad(z);
        let (a, c) = (quad.corners[0], quad.corners[2]);
        let ua = self.defect_update(g, a, z);
        let uc = self.defect_update(g, c, z);
        let col_entry = |u: &DefectUpdate, at: usize| -> f64 {
            u.u.iter().map(|&(r, w)| w * zb.get(at, r)).sum()
        };
        let norm_a = col_entry(&ua, a);
        let norm_c = col_entry(&uc, c);
        let mut xa = [0.0; 4];
        let mut xc = [0.0; 4];
        for i in 0..4 {
            xa[i] = col_entry(&ua, quad.corners[i]) / norm_a;
            xc[i] = col_entry(&uc, quad.corners[i]) / norm_c;
        }
        let energy = self.cos_t[z] - self.sin_t[z] * energy_sign(g, z) * xa[2];
        DefectQuadData {
            ua,
            uc,
            norm_a,
            norm_c,
            xa,
            xc,
            energy,
        }
    }

    /// Scalars for the defect pair of an interior quad, read off the in-band
    /// inverse without any extra solves. The energy comes from the local
    /// relation E[ε] = cos θ - sin θ * energy_sign * <χ_{c+} χ_{a+}>.
    pub fn defect_scalars(&self, g: &IsingGraph, z: QuadId) -> DefectScalars {
        let zb = self.inverse_band();
        let quad = g.quad(z);
        let (a, c) = (quad.corners[0], quad.corners[2]);
        let ua = self.defect_update(g, a, z);
        let uc = self.defect_update(g, c, z);
        let col_entry = |u: &DefectUpdate, at: usize| -> f64 {
            u.u.iter().map(|&(r, w)| w * zb.get(at, r)).sum()
        };
        let norm_a = col_entry(&ua, a);
        let norm_c = col_entry(&uc, c);
        let xa_at_c = col_entry(&ua, c) / norm_a;
        let xc_at_a = col_entry(&uc, a) / norm_c;
        let energy = self.cos_t[z] - self.sin_t[z] * energy_sign(g, z) * xa_at_c;
        DefectScalars {
            norm_a,
            norm_c,
            xa_at_c,
            xc_at_a,
            energy,
        }
    }

    /// E[ε_e] for the edge of quad z, from the local fermionic relation.
    pub fn energy(&self, g: &IsingGraph, z: QuadId) -> f64 {
        let quad = g.quad(z);
        let (a, c) = (quad.corners[0], quad.corners[2]);
        let x = self
            .fermion(g, a, z)
            .expect("energy fermion should not degenerate");
        self.cos_t[z] - self.sin_t[z] * energy_sign(g, z) * x[c]
    }

    /// Max deviation from the propagation equation over the four relations of
    /// every interior quad, for a complex corner field and this angle field.
    pub fn propagation_residual(&self, g: &IsingGraph, y: &[Complex64]) -> f64 {
        propagation_residual(g, &self.cos_t, &self.sin_t, y)
    }
}

/// Residual of the interior propagation system for a complex corner field.
pub fn propagation_residual(g: &IsingGraph, cos_t: &[f64], sin_t: &[f64], y: &[Complex64]) -> f64 {
    let mut worst: f64 = 0.0;
    for z in 0..g.quads().len() {
        if !g.is_interior_quad(z) {
            continue;
        }
        let quad = g.quad(z);
        for pos in 0..4 {
            let nb = g.quad_neighbors(z, pos);
            let r = y[quad.corners[pos]]
                - y[nb.vertex_mate] * (cos_t[z] * nb.vertex_sign)
                - y[nb.face_mate] * (sin_t[z] * nb.face_sign);
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// Residuals of all four equations of one quad for a real spinor, in label
/// order (a, b, c, d).
pub fn quad_residuals(
    g: &IsingGraph,
    cos_t: &[f64],
    sin_t: &[f64],
    z: QuadId,
    x: &[f64],
) -> [f64; 4] {
    let quad = g.quad(z);
    let mut out = [0.0; 4];
    for pos in 0..4 {
        let nb = g.quad_neighbors(z, pos);
        out[pos] = x[quad.corners[pos]]
            - cos_t[z] * nb.vertex_sign * x[nb.vertex_mate]
            - sin_t[z] * nb.face_sign * x[nb.face_mate];
    }
    out
}

/// Cyclic arc indices (vertex-arc, face-arc) used by the equation centered
/// at position `pos`.
fn arcs_of_position(orientation: Orientation, pos: usize) -> (usize, usize) {
    match orientation {
        Orientation::Vertical => match pos {
            0 => (3, 0),
            1 => (1, 0),
            2 => (1, 2),
            3 => (3, 2),
            _ => unreachable!(),
        },
        Orientation::Horizontal => match pos {
            0 => (0, 3),
            1 => (0, 1),
            2 => (2, 1),
            3 => (2, 3),
            _ => unreachable!(),
        },
    }
}

fn factor_rank_one(entries: &[(usize, usize, f64)]) -> Option<DefectUpdate> {
    let rows: Vec<usize> = {
        let mut r: Vec<usize> = entries.iter().map(|e| e.0).collect();
        r.sort_unstable();
        r.dedup();
        r
    };
    let cols: Vec<usize> = {
        let mut c: Vec<usize> = entries.iter().map(|e| e.1).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if rows.len() == 1 {
        Some(DefectUpdate {
            u: vec![(rows[0], 1.0)],
            v: entries.iter().map(|&(_, c, d)| (c, d)).collect(),
        })
    } else if cols.len() == 1 {
        Some(DefectUpdate {
            u: entries.iter().map(|&(r, _, d)| (r, d)).collect(),
            v: vec![(cols[0], 1.0)],
        })
    } else {
        None
    }
}

fn normalize_at(mut x: Vec<f64>, at: CornerId, target: f64) -> Result<Vec<f64>, KernelError> {
    let scale = x[at];
    let maxabs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if maxabs == 0.0 || scale.abs() < 1e-12 * maxabs {
        return Err(KernelError::DegenerateKernel(at, scale.abs() / maxabs));
    }
    let f = target / scale;
    for v in &mut x {
        *v *= f;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::defect_pair;

    #[test]
    fn base_system_is_nonsingular() {
        for n in 1..=4 {
            let g = IsingGraph::build_box(n).unwrap();
            let f = Factorized::new(&g, g.thetas()).unwrap();
            // Solve a random-ish system and verify by substitution through
            // the residual of a fermion defect below.
            let _ = f;
        }
    }

    #[test]
    fn fermion_satisfies_propagation_away_from_defect() {
        let g = IsingGraph::build_box(3).unwrap();
        let f = Factorized::new(&g, g.thetas()).unwrap();
        let z = g.v_edge(0, 0).unwrap();
        let pair = defect_pair(&g, z).unwrap();
        let x = f.fermion(&g, pair.a_corner, z).unwrap();
        assert!((x[pair.a_corner] - 1.0).abs() < 1e-12);
        for zz in 0..g.quads().len() {
            let res = quad_residuals(&g, &f.cos_t, &f.sin_t, zz, &x);
            if zz == z {
                continue;
            }
            for r in res {
                assert!(
                    r.abs() < 1e-9,
                    "propagation residual {r:.3e} at quad {zz} (defect {z})"
                );
            }
        }
    }

    /// The mismatch pattern at the defect quad: for an a-type defect the four
    /// residuals are (2, 2 sin θ, 0, -2 cos θ); for a c-type defect they are
    /// (0, -2 cos θ, 2, -2 sin θ). Checked on vertical quads where the
    /// labels' geographic reading applies directly.
    #[test]
    fn defect_pattern_on_vertical_quads() {
        let mut g = IsingGraph::build_box(3).unwrap();
        // A non-symmetric angle field.
        for e in 0..g.num_edges() {
            g.set_theta(e, 0.5 + 0.4 * ((e * 37 % 11) as f64) / 11.0).unwrap();
        }
        let f = Factorized::new(&g, g.thetas()).unwrap();
        let z = g.v_edge(0, 0).unwrap();
        let (ct, st) = (f.cos_t[z], f.sin_t[z]);
        let pair = defect_pair(&g, z).unwrap();

        let xa = f.fermion(&g, pair.a_corner, z).unwrap();
        let res = quad_residuals(&g, &f.cos_t, &f.sin_t, z, &xa);
        let expect = [2.0, 2.0 * st, 0.0, -2.0 * ct];
        for i in 0..4 {
            assert!(
                (res[i] - expect[i]).abs() < 1e-9,
                "a-defect residual {i}: {} vs {}",
                res[i],
                expect[i]
            );
        }

        let xc = f.fermion(&g, pair.c_corner, z).unwrap();
        let res = quad_residuals(&g, &f.cos_t, &f.sin_t, z, &xc);
        let expect = [0.0, -2.0 * ct, 2.0, -2.0 * st];
        for i in 0..4 {
            assert!(
                (res[i] - expect[i]).abs() < 1e-9,
                "c-defect residual {i}: {} vs {}",
                res[i],
                expect[i]
            );
        }
    }

    #[test]
    fn defect_scalars_match_full_solves() {
        let g = IsingGraph::build_box(3).unwrap();
        let f = Factorized::new(&g, g.thetas()).unwrap();
        for &z in &[g.v_edge(0, 0).unwrap(), g.h_edge(0, 1).unwrap()] {
            let pair = defect_pair(&g, z).unwrap();
            let sc = f.defect_scalars(&g, z);
            let xa = f.fermion(&g, pair.a_corner, z).unwrap();
            let xc = f.fermion(&g, pair.c_corner, z).unwrap();
            assert!((sc.xa_at_c - xa[pair.c_corner]).abs() < 1e-10);
            assert!((sc.xc_at_a - xc[pair.a_corner]).abs() < 1e-10);
            assert!((sc.energy - f.energy(&g, z)).abs() < 1e-10);
        }
    }

    #[test]
    fn fermions_are_bounded_by_one() {
        let g = IsingGraph::build_box(3).unwrap();
        let f = Factorized::new(&g, g.thetas()).unwrap();
        let z = g.v_edge(1, 1).unwrap();
        let pair = defect_pair(&g, z).unwrap();
        let x = f.fermion(&g, pair.a_corner, z).unwrap();
        for &v in &x {
            assert!(v.abs() <= 1.0 + 1e-9);
        }
    }
}
