//! Brute-force backend: exact even-subgraph sums over the cycle space,
//! spin correlations with explicit disorder/flip paths, and fermion
//! magnitudes. Feasible up to the configured edge cap; this is the oracle
//! the fast backend is measured against.

use crate::lattice::{EdgeId, FaceId, IsingGraph, VertexId};
use thiserror::Error;

pub const ENUM_EDGE_CAP: usize = 24;

#[derive(Debug, Error)]
pub enum EnumError {
    #[error("enumeration refused: {0} edges exceeds the cap of {ENUM_EDGE_CAP}")]
    TooLarge(usize),
    #[error("spin set must have even size, got {0}")]
    OddSpinSet(usize),
    #[error("no path between the requested sites")]
    Disconnected,
}

/// Cycle-space description of a graph: spanning-tree fundamental cycles as
/// edge bitmasks, plus tree paths for odd-degree bases.
pub struct CycleSpace {
    pub basis: Vec<u64>,
    parent_edge: Vec<Option<(VertexId, EdgeId)>>,
}

impl CycleSpace {
    pub fn new(g: &IsingGraph) -> Result<CycleSpace, EnumError> {
        let ne = g.num_edges();
        if ne > ENUM_EDGE_CAP {
            return Err(EnumError::TooLarge(ne));
        }
        let nv = g.num_vertices();
        let mut adj: Vec<Vec<(VertexId, EdgeId)>> = vec![Vec::new(); nv];
        for (e, edge) in g.edges().iter().enumerate() {
            adj[edge.v0].push((edge.v1, e));
            adj[edge.v1].push((edge.v0, e));
        }
        // BFS spanning tree from vertex 0, lexicographic neighbor order.
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        let mut parent_edge: Vec<Option<(VertexId, EdgeId)>> = vec![None; nv];
        let mut seen = vec![false; nv];
        let mut tree_edge = vec![false; ne];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        while let Some(v) = queue.pop_front() {
            for &(u, e) in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent_edge[u] = Some((v, e));
                    tree_edge[e] = true;
                    queue.push_back(u);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(EnumError::Disconnected);
        }
        let tree_path = |v: VertexId| -> u64 {
            let mut mask = 0u64;
            let mut cur = v;
            while let Some((p, e)) = parent_edge[cur] {
                mask ^= 1 << e;
                cur = p;
            }
            mask
        };
        let mut basis = Vec::new();
        for (e, edge) in g.edges().iter().enumerate() {
            if !tree_edge[e] {
                basis.push((1u64 << e) ^ tree_path(edge.v0) ^ tree_path(edge.v1));
            }
        }
        Ok(CycleSpace { basis, parent_edge })
    }

    /// Edge mask of the tree path between two vertices.
    pub fn vertex_path(&self, a: VertexId, b: VertexId) -> u64 {
        let walk = |v: VertexId| -> u64 {
            let mut mask = 0u64;
            let mut cur = v;
            while let Some((p, e)) = self.parent_edge[cur] {
                mask ^= 1 << e;
                cur = p;
            }
            mask
        };
        walk(a) ^ walk(b)
    }

    /// Sum of prod_{e in C} w_e over the affine space base ^ <basis>.
    pub fn affine_sum(&self, base: u64, weights: &[f64]) -> f64 {
        let dim = self.basis.len();
        let mut total = 0.0;
        for s in 0..(1u64 << dim) {
            let mut mask = base;
            let mut t = s;
            let mut i = 0;
            while t != 0 {
                if t & 1 == 1 {
                    mask ^= self.basis[i];
                }
                t >>= 1;
                i += 1;
            }
            let mut prod = 1.0;
            let mut m = mask;
            while m != 0 {
                let e = m.trailing_zeros() as usize;
                prod *= weights[e];
                m &= m - 1;
            }
            total += prod;
        }
        total
    }
}

/// Canonical shortest dual path between two faces: BFS over faces (the
/// fused outer face is an ordinary dual vertex), lexicographic tie-break.
/// Returns the set of primal edges crossed.
pub fn dual_path(g: &IsingGraph, f0: FaceId, f1: FaceId) -> Vec<EdgeId> {
    if f0 == f1 {
        return Vec::new();
    }
    let nf = g.num_faces();
    let mut adj: Vec<Vec<(FaceId, EdgeId)>> = vec![Vec::new(); nf];
    for (e, edge) in g.edges().iter().enumerate() {
        adj[edge.f_pos].push((edge.f_neg, e));
        adj[edge.f_neg].push((edge.f_pos, e));
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    bfs_path(&adj, f0, f1)
}

/// Canonical shortest primal path between two vertices (edge set).
pub fn primal_path(g: &IsingGraph, v0: VertexId, v1: VertexId) -> Vec<EdgeId> {
    if v0 == v1 {
        return Vec::new();
    }
    let nv = g.num_vertices();
    let mut adj: Vec<Vec<(VertexId, EdgeId)>> = vec![Vec::new(); nv];
    for (e, edge) in g.edges().iter().enumerate() {
        adj[edge.v0].push((edge.v1, e));
        adj[edge.v1].push((edge.v0, e));
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    bfs_path(&adj, v0, v1)
}

fn bfs_path(adj: &[Vec<(usize, EdgeId)>], from: usize, to: usize) -> Vec<EdgeId> {
    let mut prev: Vec<Option<(usize, EdgeId)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &(u, e) in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                prev[u] = Some((v, e));
                queue.push_back(u);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = to;
    while let Some((p, e)) = prev[cur] {
        path.push(e);
        cur = p;
    }
    path
}

pub struct Enumerator<'g> {
    pub g: &'g IsingGraph,
    pub cycles: CycleSpace,
    weights: Vec<f64>,
    z_even: f64,
}

impl<'g> Enumerator<'g> {
    pub fn new(g: &'g IsingGraph) -> Result<Self, EnumError> {
        let cycles = CycleSpace::new(g)?;
        let weights: Vec<f64> = g.thetas().iter().map(|t| (t / 2.0).tan()).collect();
        let z_even = cycles.affine_sum(0, &weights);
        Ok(Enumerator {
            g,
            cycles,
            weights,
            z_even,
        })
    }

    pub fn even_sum(&self, weights: &[f64]) -> f64 {
        self.cycles.affine_sum(0, weights)
    }

    /// E[prod sigma] over an even face set, via flip paths paired in order.
    pub fn spin_correlation(&self, faces: &[FaceId]) -> Result<f64, EnumError> {
        if faces.len() % 2 != 0 {
            return Err(EnumError::OddSpinSet(faces.len()));
        }
        let flip = self.flip_mask(faces);
        Ok(self.flipped_ratio(flip, 0))
    }

    pub fn energy(&self, e: EdgeId) -> f64 {
        let edge = self.g.edge(e);
        self.spin_correlation(&[edge.f_pos, edge.f_neg]).unwrap()
    }

    /// |<χ_p χ_q>|: disorder at the corners' vertices, spins at their faces.
    pub fn fermion_magnitude(&self, p: usize, q: usize) -> f64 {
        let (cp, cq) = (self.g.corner(p), self.g.corner(q));
        let flip = self.flip_mask(&[cp.face, cq.face]);
        let base = if cp.vertex == cq.vertex {
            0
        } else {
            self.cycles.vertex_path(cp.vertex, cq.vertex)
        };
        self.flipped_ratio(flip, base).abs()
    }

    /// |<χ_p χ_q ε_r>|.
    pub fn fermion_energy_magnitude(&self, p: usize, q: usize, r: EdgeId) -> f64 {
        let (cp, cq) = (self.g.corner(p), self.g.corner(q));
        let edge = self.g.edge(r);
        let flip = self.flip_mask(&[cp.face, cq.face, edge.f_pos, edge.f_neg]);
        let base = if cp.vertex == cq.vertex {
            0
        } else {
            self.cycles.vertex_path(cp.vertex, cq.vertex)
        };
        self.flipped_ratio(flip, base).abs()
    }

    /// E[ε_k ε_r] as a four-face spin correlation (mod-2 collapsed).
    pub fn energy_pair(&self, k: EdgeId, r: EdgeId) -> f64 {
        let (ek, er) = (self.g.edge(k), self.g.edge(r));
        let faces = [ek.f_pos, ek.f_neg, er.f_pos, er.f_neg];
        let flip = self.flip_mask(&faces);
        self.flipped_ratio(flip, 0)
    }

    /// XOR of canonical dual paths pairing the (mod-2 reduced) face set.
    fn flip_mask(&self, faces: &[FaceId]) -> u64 {
        let mut reduced: Vec<FaceId> = Vec::new();
        for &f in faces {
            if let Some(i) = reduced.iter().position(|&x| x == f) {
                reduced.swap_remove(i);
            } else {
                reduced.push(f);
            }
        }
        reduced.sort_unstable();
        let mut mask = 0u64;
        for pair in reduced.chunks(2) {
            if pair.len() == 2 {
                for e in dual_path(self.g, pair[0], pair[1]) {
                    mask ^= 1 << e;
                }
            }
        }
        mask
    }

    fn flipped_ratio(&self, flip: u64, base: u64) -> f64 {
        let mut w = self.weights.clone();
        for (e, we) in w.iter_mut().enumerate() {
            if flip >> e & 1 == 1 {
                *we = -*we;
            }
        }
        self.cycles.affine_sum(base, &w) / self.z_even
    }
}

/// Fully independent cross-check: direct sum over all spin configurations
/// (outer face fixed to +1). Only for the smallest boxes.
pub fn spin_config_correlation(g: &IsingGraph, faces: &[FaceId]) -> f64 {
    let nf = g.num_faces() - 1; // inner faces are free, outer pinned to +1
    assert!(nf <= 20, "spin-configuration enumeration cap");
    let x: Vec<f64> = g.thetas().iter().map(|t| (t / 2.0).tan()).collect();
    let spin = |cfg: usize, f: FaceId| -> f64 {
        if f == g.outer_face() {
            1.0
        } else if cfg >> f & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for cfg in 0..(1usize << nf) {
        let mut w = 1.0;
        for (e, edge) in g.edges().iter().enumerate() {
            if spin(cfg, edge.f_pos) * spin(cfg, edge.f_neg) < 0.0 {
                w *= x[e];
            }
        }
        let mut s = 1.0;
        for &f in faces {
            s *= spin(cfg, f);
        }
        num += s * w;
        den += w;
    }
    num / den
}
