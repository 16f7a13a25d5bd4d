//! Kac-Ward determinant backend for even-subgraph sums and spin
//! correlations. The transition operator on directed edges, with half-angle
//! phases on the turns, satisfies det(I - T) = Z^2 where Z is the
//! even-subgraph generating sum. Negative entries of the weight vector are
//! a gauge of a spin insertion on the faces where the negative set has odd
//! dual degree, so Z is nonnegative for every real weight vector and the
//! positive square root is always the right one.

use crate::lattice::{EdgeId, FaceId, IsingGraph};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KwError {
    #[error("Kac-Ward determinant has a non-real phase {0:.3e}; weight vector invalid")]
    Phase(f64),
    #[error("spin set must have even size, got {0}")]
    OddSpinSet(usize),
}

/// log |Z(w)| for the even-subgraph sum with arbitrary real edge weights,
/// via the Kac-Ward determinant. Returns an error if the determinant phase
/// does not vanish (it always should, up to roundoff).
pub fn log_even_sum(g: &IsingGraph, weights: &[f64]) -> Result<f64, KwError> {
    let (logmag, phase) = kw_logdet(g, weights);
    // det = Z^2 >= 0, so the phase must be ~0 (mod 2π).
    let wrapped = (phase + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
        - std::f64::consts::PI;
    if wrapped.abs() > 1e-6 {
        return Err(KwError::Phase(wrapped));
    }
    Ok(logmag / 2.0)
}

/// The even-subgraph sum itself (nonnegative for any real weights).
pub fn even_sum(g: &IsingGraph, weights: &[f64]) -> Result<f64, KwError> {
    Ok(log_even_sum(g, weights)?.exp())
}

/// E[prod_{f in faces} sigma_f] via the ratio of a flipped and the plain
/// even-subgraph sum. Nonnegative by Griffiths' first inequality.
pub fn spin_correlation(g: &IsingGraph, faces: &[FaceId]) -> Result<f64, KwError> {
    let weights: Vec<f64> = g.thetas().iter().map(|t| (t / 2.0).tan()).collect();
    let flip = flip_edges(g, faces)?;
    if flip.is_empty() {
        return Ok(1.0);
    }
    let mut flipped = weights.clone();
    for e in flip {
        flipped[e] = -flipped[e];
    }
    let l0 = log_even_sum(g, &weights)?;
    let l1 = log_even_sum(g, &flipped)?;
    Ok((l1 - l0).exp())
}

pub fn energy(g: &IsingGraph, e: EdgeId) -> Result<f64, KwError> {
    let edge = g.edge(e);
    spin_correlation(g, &[edge.f_pos, edge.f_neg])
}

pub fn energy_pair(g: &IsingGraph, k: EdgeId, r: EdgeId) -> Result<f64, KwError> {
    let (ek, er) = (g.edge(k), g.edge(r));
    spin_correlation(g, &[ek.f_pos, ek.f_neg, er.f_pos, er.f_neg])
}

/// Edges crossed by canonical dual paths pairing the (mod-2 reduced) faces.
fn flip_edges(g: &IsingGraph, faces: &[FaceId]) -> Result<Vec<EdgeId>, KwError> {
    let mut reduced: Vec<FaceId> = Vec::new();
    for &f in faces {
        if let Some(i) = reduced.iter().position(|&x| x == f) {
            reduced.swap_remove(i);
        } else {
            reduced.push(f);
        }
    }
    if reduced.len() % 2 != 0 {
        return Err(KwError::OddSpinSet(faces.len()));
    }
    reduced.sort_unstable();
    let mut mask = vec![false; g.num_edges()];
    for pair in reduced.chunks(2) {
        for e in super::enumeration::dual_path(g, pair[0], pair[1]) {
            mask[e] = !mask[e];
        }
    }
    Ok(mask
        .iter()
        .enumerate()
        .filter_map(|(e, &m)| m.then_some(e))
        .collect())
}

/// (log |det(I - T)|, arg det) with T the Kac-Ward transition operator for
/// the straight-line drawing of the box.
fn kw_logdet(g: &IsingGraph, weights: &[f64]) -> (f64, f64) {
    let ne = g.num_edges();
    let n = 2 * ne; // directed edges: 2e = v0->v1, 2e+1 = v1->v0
    // Square roots of the weights, complex for negative entries.
    let s: Vec<Complex64> = weights
        .iter()
        .map(|&w| Complex64::new(w, 0.0).sqrt())
        .collect();
    let dir = |de: usize| -> (f64, f64) {
        let e = g.edge(de / 2);
        let (x0, y0) = g.vertex_xy(e.v0);
        let (x1, y1) = g.vertex_xy(e.v1);
        let (dx, dy) = ((x1 - x0) as f64, (y1 - y0) as f64);
        if de % 2 == 0 {
            (dx, dy)
        } else {
            (-dx, -dy)
        }
    };
    let head = |de: usize| -> usize {
        let e = g.edge(de / 2);
        if de % 2 == 0 {
            e.v1
        } else {
            e.v0
        }
    };
    // Directed edges grouped by tail vertex.
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); g.num_vertices()];
    for de in 0..n {
        let e = g.edge(de / 2);
        let tail = if de % 2 == 0 { e.v0 } else { e.v1 };
        out_edges[tail].push(de);
    }

    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        a[i * n + i] = Complex64::new(1.0, 0.0);
    }
    for de in 0..n {
        let h = head(de);
        let (dx0, dy0) = dir(de);
        let ang0 = dy0.atan2(dx0);
        for &df in &out_edges[h] {
            if df / 2 == de / 2 {
                continue; // no backtracking
            }
            let (dx1, dy1) = dir(df);
            let ang1 = dy1.atan2(dx1);
            let mut turn = ang1 - ang0;
            while turn > std::f64::consts::PI {
                turn -= 2.0 * std::f64::consts::PI;
            }
            while turn < -std::f64::consts::PI {
                turn += 2.0 * std::f64::consts::PI;
            }
            let phase = Complex64::new(0.0, turn / 2.0).exp();
            a[de * n + df] -= s[de / 2] * s[df / 2] * phase;
        }
    }
    complex_logdet(a, n)
}

/// (log |det|, arg det) of a dense complex matrix by partial-pivot LU.
fn complex_logdet(mut a: Vec<Complex64>, n: usize) -> (f64, f64) {
    let mut logmag = 0.0f64;
    let mut phase = 0.0f64;
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].norm_sqr();
        for i in (k + 1)..n {
            let v = a[i * n + k].norm_sqr();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            phase += std::f64::consts::PI; // det *= -1
        }
        let piv = a[k * n + k];
        logmag += piv.norm().ln();
        phase += piv.arg();
        for i in (k + 1)..n {
            let l = a[i * n + k] / piv;
            if l != Complex64::new(0.0, 0.0) {
                for j in (k + 1)..n {
                    let v = a[k * n + j];
                    a[i * n + j] -= l * v;
                }
            }
        }
    }
    (logmag, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlators::enumeration::Enumerator;

    #[test]
    fn determinant_matches_enumeration_on_positive_weights() {
        let mut g = IsingGraph::build_box(1).unwrap();
        for e in 0..g.num_edges() {
            g.set_theta(e, 0.3 + 0.1 * (e as f64 % 5.0)).unwrap();
        }
        let en = Enumerator::new(&g).unwrap();
        let w: Vec<f64> = g.thetas().iter().map(|t| (t / 2.0).tan()).collect();
        let z_enum = en.even_sum(&w);
        let z_det = even_sum(&g, &w).unwrap();
        assert!(
            ((z_det - z_enum) / z_enum).abs() < 1e-10,
            "{z_det} vs {z_enum}"
        );
    }

    #[test]
    fn determinant_matches_enumeration_on_signed_weights() {
        let g = IsingGraph::build_box(1).unwrap();
        let en = Enumerator::new(&g).unwrap();
        let mut w: Vec<f64> = g.thetas().iter().map(|t| (t / 2.0).tan()).collect();
        // Flip a dual path (a valid spin-correlation gauge).
        let f0 = g.face_id(0, 0);
        let f1 = g.face_id(-1, -1);
        for e in super::super::enumeration::dual_path(&g, f0, f1) {
            w[e] = -w[e];
        }
        let z_enum = en.even_sum(&w);
        let z_det = even_sum(&g, &w).unwrap();
        assert!(
            ((z_det - z_enum) / z_enum.abs()).abs() < 1e-10,
            "{z_det} vs {z_enum}"
        );
        assert!(z_enum > 0.0);
    }

    #[test]
    fn spin_correlation_matches_enumeration() {
        let mut g = IsingGraph::build_box(1).unwrap();
        for e in 0..g.num_edges() {
            g.set_theta(e, 0.5 + 0.07 * (e as f64)).unwrap();
        }
        let en = Enumerator::new(&g).unwrap();
        let faces = [g.face_id(0, 0), g.face_id(-1, 0)];
        let a = en.spin_correlation(&faces).unwrap();
        let b = spin_correlation(&g, &faces).unwrap();
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        // energies and pair energies too
        for e in [g.v_edge(0, 0).unwrap(), g.h_edge(-1, 1).unwrap()] {
            assert!((en.energy(e) - energy(&g, e).unwrap()).abs() < 1e-11);
        }
        let k = g.v_edge(0, 0).unwrap();
        let r = g.h_edge(0, 0).unwrap();
        assert!((en.energy_pair(k, r) - energy_pair(&g, k, r).unwrap()).abs() < 1e-11);
    }
}
