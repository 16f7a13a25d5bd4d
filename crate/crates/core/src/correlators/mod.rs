//! Exact Ising correlation engine on wired boxes.
//!
//! Two backends compute the same quantities: a brute-force enumeration over
//! the cycle space (the oracle, feasible on small graphs) and a planar
//! backend built from one banded factorization of the propagation system
//! per angle field (fermions) plus Kac-Ward determinants (even sums, spin
//! correlations).
//!
//! Fermion values are reported in a fixed coherent gauge: the two-point
//! kernel `K(p, q) = <χ_p χ_q>` is antisymmetric off the diagonal, `|K|` at
//! the ε-pair of an edge equals the energy density, and four-point
//! correlators with an energy insertion follow the Pfaffian (Wick) rule
//! away from coincidences, with exact collapse identities at them.

pub mod enumeration;
pub mod kernel;
pub mod kw;

use crate::lattice::{CornerId, DefectPair, EdgeId, IsingGraph, Orientation, QuadId};
use enumeration::{EnumError, Enumerator};
use kernel::{canonical_defect_quad, energy_sign, epsilon_pair, Factorized, KernelError};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Enumeration,
    PlanarDeterminant,
}

#[derive(Debug, Error)]
pub enum CorrelatorError {
    #[error(transparent)]
    Enumeration(#[from] EnumError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Kw(#[from] kw::KwError),
    #[error("corner {0} could not be linked into the coherent gauge")]
    UnlinkedCorner(CornerId),
    #[error("fermion matrix over {0} corners exceeds the memory cap of {1}")]
    MatrixTooLarge(usize, usize),
}

/// A corner lifted to the canonical section (`sheet = +1`) or its negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiftedCorner {
    pub corner: CornerId,
    pub sheet: i8,
}

impl LiftedCorner {
    pub fn plus(corner: CornerId) -> Self {
        LiftedCorner { corner, sheet: 1 }
    }
    pub fn minus(corner: CornerId) -> Self {
        LiftedCorner { corner, sheet: -1 }
    }
}

pub struct CorrelatorEngine<'g> {
    pub g: &'g IsingGraph,
    pub backend: Backend,
    kernel: Factorized,
    enumerator: Option<Enumerator<'g>>,
    /// Coherent-gauge signs per corner: +1 on labels a/c, -1 on b/d for
    /// inner corners; outer-face corners are linked lazily.
    sigma: Mutex<Vec<i8>>,
    columns: Mutex<HashMap<CornerId, Arc<Vec<f64>>>>,
}

impl<'g> CorrelatorEngine<'g> {
    pub fn new(g: &'g IsingGraph, backend: Backend) -> Result<Self, CorrelatorError> {
        let kernel = Factorized::new(g, g.thetas())?;
        let enumerator = match backend {
            Backend::Enumeration => Some(Enumerator::new(g)?),
            Backend::PlanarDeterminant => None,
        };
        let mut sigma = vec![0i8; g.num_corners()];
        let outer = g.outer_face();
        for (c, s) in sigma.iter_mut().enumerate() {
            if g.corner(c).face != outer {
                *s = match g.corner(c).label {
                    crate::lattice::CornerLabel::A | crate::lattice::CornerLabel::C => 1,
                    _ => -1,
                };
            }
        }
        Ok(CorrelatorEngine {
            g,
            backend,
            kernel,
            enumerator,
            sigma: Mutex::new(sigma),
            columns: Mutex::new(HashMap::new()),
        })
    }

    pub fn kernel(&self) -> &Factorized {
        &self.kernel
    }

    /// Normalized defect fermion column X^(q) with the canonical mismatch
    /// quad, cached.
    fn column(&self, q: CornerId) -> Result<Arc<Vec<f64>>, CorrelatorError> {
        if let Some(col) = self.columns.lock().unwrap().get(&q) {
            return Ok(col.clone());
        }
        let col = Arc::new(self.kernel.fermion(self.g, q, canonical_defect_quad(self.g, q))?);
        self.columns.lock().unwrap().insert(q, col.clone());
        Ok(col)
    }

    /// Coherent-gauge sign of a corner; outer-face corners are linked on
    /// first use through their strongest inner partner.
    fn sigma(&self, c: CornerId) -> Result<f64, CorrelatorError> {
        {
            let s = self.sigma.lock().unwrap();
            if s[c] != 0 {
                return Ok(s[c] as f64);
            }
        }
        let xc = self.column(c)?;
        let outer = self.g.outer_face();
        let mut best: Option<(CornerId, f64)> = None;
        for p in 0..self.g.num_corners() {
            if p == c || self.g.corner(p).face == outer {
                continue;
            }
            let strength = xc[p].abs();
            if best.map_or(true, |(_, b)| strength > b) {
                best = Some((p, strength));
            }
        }
        let (p, strength) = best.ok_or(CorrelatorError::UnlinkedCorner(c))?;
        if strength < 1e-12 {
            return Err(CorrelatorError::UnlinkedCorner(c));
        }
        let xp = self.column(p)?;
        let sp = self.sigma(p)?;
        let sc = if (xc[p] > 0.0) == (xp[c] > 0.0) {
            -sp
        } else {
            sp
        };
        self.sigma.lock().unwrap()[c] = sc as i8;
        Ok(sc)
    }

    /// The antisymmetric coherent kernel K(p, q) = <χ_p χ_q>, zero on the
    /// diagonal.
    pub fn coherent(&self, p: CornerId, q: CornerId) -> Result<f64, CorrelatorError> {
        if p == q {
            return Ok(0.0);
        }
        Ok(self.sigma(q)? * self.column(q)?[p])
    }

    /// Even-subgraph generating sum for arbitrary real weights.
    pub fn even_subgraph_sum(&self, weights: &[f64]) -> Result<f64, CorrelatorError> {
        assert_eq!(weights.len(), self.g.num_edges());
        match self.backend {
            Backend::Enumeration => Ok(self.enumerator.as_ref().unwrap().even_sum(weights)),
            Backend::PlanarDeterminant => Ok(kw::even_sum(self.g, weights)?),
        }
    }

    /// E[prod sigma] over an even set of faces (wired boundary).
    pub fn spin_correlation(&self, faces: &[usize]) -> Result<f64, CorrelatorError> {
        match self.backend {
            Backend::Enumeration => Ok(self.enumerator.as_ref().unwrap().spin_correlation(faces)?),
            Backend::PlanarDeterminant => Ok(kw::spin_correlation(self.g, faces)?),
        }
    }

    /// Energy density E[ε_e] of an edge.
    pub fn energy_density(&self, e: EdgeId) -> Result<f64, CorrelatorError> {
        match self.backend {
            Backend::Enumeration => Ok(self.enumerator.as_ref().unwrap().energy(e)),
            Backend::PlanarDeterminant => {
                let quad = self.g.quad(e);
                let (a, c) = (quad.corners[0], quad.corners[2]);
                let xa_at_c = if canonical_defect_quad(self.g, a) == e {
                    self.column(a)?[c]
                } else {
                    self.kernel.fermion(self.g, a, e)?[c]
                };
                Ok(self.kernel.cos_t[e]
                    - self.kernel.sin_t[e] * energy_sign(self.g, e) * xa_at_c)
            }
        }
    }

    /// Two-point Kadanoff-Ceva fermion <χ_p χ_q> with the canonical
    /// mismatch quad of q; lift signs multiply the section value, and the
    /// coincident value is 1.
    pub fn two_point_fermion(
        &self,
        q: LiftedCorner,
        p: LiftedCorner,
    ) -> Result<f64, CorrelatorError> {
        let sheet = (p.sheet * q.sheet) as f64;
        if p.corner == q.corner {
            return Ok(sheet);
        }
        match self.backend {
            Backend::Enumeration => {
                let signed = self.fermion_signed_enumeration(q.corner)?;
                Ok(sheet * signed[p.corner])
            }
            Backend::PlanarDeterminant => Ok(sheet * self.column(q.corner)?[p.corner]),
        }
    }

    /// The normalized defect fermions for an explicit defect pair, in the
    /// canonical section: (X^(a), X^(c)) with the mismatch quad at the pair.
    pub fn fermion_with_defect(
        &self,
        pair: &DefectPair,
    ) -> Result<(Vec<f64>, Vec<f64>), CorrelatorError> {
        let xa = self.kernel.fermion(self.g, pair.a_corner, pair.quad)?;
        let xc = self.kernel.fermion(self.g, pair.c_corner, pair.quad)?;
        Ok((xa, xc))
    }

    /// <χ_p χ_q ε_r> in the coherent gauge: the Pfaffian rule away from
    /// coincidences; at a coincidence the χ² = 1 collapse applies, with the
    /// section's orientation-dependent bookkeeping sign.
    pub fn fermion_energy_correlator(
        &self,
        p: CornerId,
        q: CornerId,
        r: EdgeId,
    ) -> Result<f64, CorrelatorError> {
        let (c0, c1) = epsilon_pair(self.g, r);
        let kc = self.coherent(c0, c1)?;
        let e_r = kc.abs();
        let eta = if kc >= 0.0 { 1.0 } else { -1.0 };
        let omega = match self.g.edge(r).orientation {
            Orientation::Horizontal => 1.0,
            Orientation::Vertical => -1.0,
        };
        if p == q {
            return Ok(e_r);
        }
        if p == c0 && q == c1 {
            return Ok(eta);
        }
        if p == c1 && q == c0 {
            return Ok(-eta);
        }
        if p == c0 {
            return Ok(omega * eta * self.coherent(c1, q)?);
        }
        if q == c0 {
            return Ok(omega * eta * self.coherent(p, c1)?);
        }
        if p == c1 {
            return Ok(omega * eta * self.coherent(c0, q)?);
        }
        if q == c1 {
            return Ok(omega * eta * self.coherent(p, c0)?);
        }
        Ok(eta
            * (self.coherent(p, q)? * kc - self.coherent(p, c0)? * self.coherent(q, c1)?
                + self.coherent(p, c1)? * self.coherent(q, c0)?))
    }

    /// d<χ_p χ_q>/dθ_r in the coherent gauge. The reference bookkeeping's
    /// case split (negation when both corners sit on the quad of r) is
    /// carried by the coincidence rules of the ε correlator; the formula
    /// matches central finite differences in every branch.
    pub fn d_fermion_dtheta(
        &self,
        p: CornerId,
        q: CornerId,
        r: EdgeId,
    ) -> Result<f64, CorrelatorError> {
        let e_r = self.energy_density(r)?;
        let f = self.fermion_energy_correlator(p, q, r)?;
        let k = self.coherent(p, q)?;
        Ok((k * e_r - f) / (2.0 * self.g.theta(r).sin()))
    }

    /// d²<χ_p χ_q>/dθ_r²: the factored form of the second derivative,
    /// using ε² = 1.
    pub fn d2_fermion_dtheta2(
        &self,
        p: CornerId,
        q: CornerId,
        r: EdgeId,
    ) -> Result<f64, CorrelatorError> {
        let t = self.g.theta(r);
        let e_r = self.energy_density(r)?;
        let f = self.fermion_energy_correlator(p, q, r)?;
        let k = self.coherent(p, q)?;
        let first = (k * e_r - f) / (2.0 * t.sin());
        Ok(first * (-t.cos() / t.sin() + e_r / t.sin()))
    }

    /// dE[ε_k]/dθ_r = (E_k E_r - E[ε_k ε_r]) / (2 sin θ_r); at k = r this
    /// is (E_r² - 1)/(2 sin θ_r) <= 0 since ε² = 1.
    pub fn d_energy_dtheta(&self, k: EdgeId, r: EdgeId) -> Result<f64, CorrelatorError> {
        let e_k = self.energy_density(k)?;
        let e_r = self.energy_density(r)?;
        let pair = self.energy_pair(k, r)?;
        Ok((e_k * e_r - pair) / (2.0 * self.g.theta(r).sin()))
    }

    pub fn d2_energy_dtheta2(&self, k: EdgeId, r: EdgeId) -> Result<f64, CorrelatorError> {
        let t = self.g.theta(r);
        let e_r = self.energy_density(r)?;
        let first = self.d_energy_dtheta(k, r)?;
        Ok(first * (-t.cos() / t.sin() + e_r / t.sin()))
    }

    /// E[ε_k ε_r] (1 when k = r).
    pub fn energy_pair(&self, k: EdgeId, r: EdgeId) -> Result<f64, CorrelatorError> {
        if k == r {
            return Ok(1.0);
        }
        match self.backend {
            Backend::Enumeration => Ok(self.enumerator.as_ref().unwrap().energy_pair(k, r)),
            Backend::PlanarDeterminant => Ok(kw::energy_pair(self.g, k, r)?),
        }
    }

    /// All pairwise fermions over a corner set plus every edge energy, from
    /// the single factorization of this engine.
    pub fn fermion_matrix(&self, corners: &[CornerId]) -> Result<FermionMatrix, CorrelatorError> {
        const MATRIX_CAP: usize = 8192;
        if corners.len() > MATRIX_CAP {
            return Err(CorrelatorError::MatrixTooLarge(corners.len(), MATRIX_CAP));
        }
        let mut values = vec![0.0; corners.len() * corners.len()];
        for (j, &q) in corners.iter().enumerate() {
            let col = self.column(q)?;
            let sq = self.sigma(q)?;
            for (i, &p) in corners.iter().enumerate() {
                values[i * corners.len() + j] = if p == q { 1.0 } else { sq * col[p] };
            }
        }
        let mut energies = Vec::with_capacity(self.g.num_edges());
        for e in 0..self.g.num_edges() {
            energies.push(self.energy_density(e)?);
        }
        Ok(FermionMatrix {
            corners: corners.to_vec(),
            values,
            energies,
        })
    }

    /// Residual report of the propagation system for a real spinor with a
    /// declared defect pair.
    pub fn defect_residual(&self, x: &[f64], pair: &DefectPair) -> DefectResidualReport {
        let k = &self.kernel;
        let mut worst_off_defect: f64 = 0.0;
        for z in 0..self.g.quads().len() {
            if z == pair.quad {
                continue;
            }
            let res = kernel::quad_residuals(self.g, &k.cos_t, &k.sin_t, z, x);
            for r in res {
                worst_off_defect = worst_off_defect.max(r.abs());
            }
        }
        let at_defect = kernel::quad_residuals(self.g, &k.cos_t, &k.sin_t, pair.quad, x);
        DefectResidualReport {
            worst_off_defect,
            at_defect,
        }
    }

    /// Signed enumeration fermion: magnitudes from brute force, signs fitted
    /// to the canonical section by local propagation around quads.
    fn fermion_signed_enumeration(&self, q: CornerId) -> Result<Vec<f64>, CorrelatorError> {
        let en = self.enumerator.as_ref().expect("enumeration backend");
        let g = self.g;
        let z = canonical_defect_quad(g, q);
        let mags: Vec<f64> = (0..g.num_corners())
            .map(|p| en.fermion_magnitude(p, q))
            .collect();
        let mut sign = vec![0i8; g.num_corners()];
        sign[q] = 1;
        let mut changed = true;
        while changed {
            changed = false;
            for zz in 0..g.quads().len() {
                let quad = g.quad(zz);
                let unknown: Vec<usize> = (0..4)
                    .filter(|&i| sign[quad.corners[i]] == 0 && mags[quad.corners[i]] >= 1e-11)
                    .collect();
                let known = (0..4)
                    .filter(|&i| sign[quad.corners[i]] != 0)
                    .count();
                if unknown.is_empty() || known == 0 {
                    continue;
                }
                let mut fits: Vec<(u32, f64)> = Vec::new();
                for combo in 0..(1u32 << unknown.len()) {
                    let mut xv = [0.0f64; 4];
                    for i in 0..4 {
                        let c = quad.corners[i];
                        let s = if sign[c] != 0 {
                            sign[c] as f64
                        } else if let Some(j) = unknown.iter().position(|&u| u == i) {
                            if combo >> j & 1 == 1 {
                                -1.0
                            } else {
                                1.0
                            }
                        } else {
                            0.0
                        };
                        xv[i] = s * mags[c];
                    }
                    let res = quad_fit_residual(g, &self.kernel, zz, zz == z, q, &xv);
                    fits.push((combo, res));
                }
                fits.sort_by(|a, b| a.1.total_cmp(&b.1));
                if fits[0].1 < 1e-7 && (fits.len() < 2 || fits[1].1 > 10.0 * fits[0].1 + 1e-9) {
                    for (j, &i) in unknown.iter().enumerate() {
                        sign[quad.corners[i]] = if fits[0].0 >> j & 1 == 1 { -1 } else { 1 };
                    }
                    changed = true;
                }
            }
        }
        Ok((0..g.num_corners())
            .map(|p| sign[p] as f64 * mags[p])
            .collect())
    }

    /// CSV table of fermions over a corner set.
    pub fn fermion_csv(&self, corners: &[CornerId]) -> Result<String, CorrelatorError> {
        let m = self.fermion_matrix(corners)?;
        let mut s = String::from("p,q,sheet_p,sheet_q,value,backend\n");
        for (i, &p) in corners.iter().enumerate() {
            for (j, &q) in corners.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},+,+,{:.17e},{}",
                    p,
                    q,
                    m.values[i * corners.len() + j],
                    match self.backend {
                        Backend::Enumeration => "enum",
                        Backend::PlanarDeterminant => "planar",
                    }
                );
            }
        }
        Ok(s)
    }
}

/// Residuals of all four propagation equations at the defect quad plus the
/// worst residual anywhere else.
#[derive(Clone, Debug)]
pub struct DefectResidualReport {
    pub worst_off_defect: f64,
    pub at_defect: [f64; 4],
}

impl DefectResidualReport {
    /// Expected mismatch pattern for an a-type defect on a vertical quad:
    /// (2, 2 sin θ, 0, -2 cos θ) in label order.
    pub fn a_type_pattern(theta: f64) -> [f64; 4] {
        [2.0, 2.0 * theta.sin(), 0.0, -2.0 * theta.cos()]
    }
    /// Expected pattern for a c-type defect: (0, -2 cos θ, 2, -2 sin θ).
    pub fn c_type_pattern(theta: f64) -> [f64; 4] {
        [0.0, -2.0 * theta.cos(), 2.0, -2.0 * theta.sin()]
    }
}

/// Pairwise fermions over a requested corner set plus all edge energies.
pub struct FermionMatrix {
    pub corners: Vec<CornerId>,
    /// Row-major; entry (i, j) = <χ_{corners[i]} χ_{corners[j]}>, 1 on the
    /// diagonal by the coincidence convention.
    pub values: Vec<f64>,
    pub energies: Vec<f64>,
}

impl FermionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.corners.len() + j]
    }
}

/// Residual of one quad's equations for a candidate sign assignment, with
/// defect flips applied at the mismatch quad.
fn quad_fit_residual(
    g: &IsingGraph,
    k: &Factorized,
    z: QuadId,
    is_defect: bool,
    q: CornerId,
    xv: &[f64; 4],
) -> f64 {
    let quad = g.quad(z);
    let mut worst: f64 = 0.0;
    for pos in 0..4 {
        let nb = g.quad_neighbors(z, pos);
        let vi = quad
            .corners
            .iter()
            .position(|&c| c == nb.vertex_mate)
            .unwrap();
        let fi = quad
            .corners
            .iter()
            .position(|&c| c == nb.face_mate)
            .unwrap();
        let (mut sv, mut sf) = (nb.vertex_sign, nb.face_sign);
        if is_defect {
            if quad.corners[pos] == q || nb.vertex_mate == q {
                sv = -sv;
            }
            if quad.corners[pos] == q || nb.face_mate == q {
                sf = -sf;
            }
        }
        let r = xv[pos] - k.cos_t[z] * sv * xv[vi] - k.sin_t[z] * sf * xv[fi];
        worst = worst.max(r.abs());
    }
    worst
}
