//! FK-Ising cluster Monte Carlo through the Edwards-Sokal coupling: spins
//! live on faces, bond variables on the dual adjacencies, and a
//! Swendsen-Wang sweep alternates bond and cluster resampling. Circuit
//! events in annuli are detected by the complementary primal crossing.

use crate::lattice::{EdgeId, FaceId, IsingGraph, VertexId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FkError {
    #[error("weight {0} outside [0, 1]")]
    WeightRange(f64),
    #[error("no samples requested")]
    ZeroSamples,
    #[error("domain too large for exact enumeration ({0} active edges)")]
    TooLargeForExact(usize),
    #[error("parameter out of range: {0}")]
    BadParameter(String),
}

/// Kramers-Wannier dual weight x* = (1 - x)/(1 + x); an involution on [0, 1].
pub fn dual_weight(x: f64) -> Result<f64, FkError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(FkError::WeightRange(x));
    }
    Ok((1.0 - x) / (1.0 + x))
}

/// Edwards-Sokal bond probability for the angle θ: p = 1 - x*(θ) with
/// x = tan(θ/2); increasing in θ, equal to √2/(1+√2) at θ = π/4.
pub fn p_open_for(theta: f64) -> f64 {
    let x = (theta / 2.0).tan();
    1.0 - (1.0 - x) / (1.0 + x)
}

/// One active adjacency: the spins at `f0`, `f1` interact across the
/// primal edge `edge`; conditional on alignment the bond opens with
/// probability `p_open` = 1 - x* = 2x/(1+x), the Edwards-Sokal parameter
/// of the Kramers-Wannier dual couplings. This convention makes cluster
/// connectivity increase with θ and is self-dual at the critical point.
#[derive(Clone, Copy, Debug)]
pub struct FkEdge {
    pub edge: EdgeId,
    pub f0: FaceId,
    pub f1: FaceId,
    pub p_open: f64,
}

/// The sampling domain: which faces carry spins and which dual adjacencies
/// carry couplings.
#[derive(Clone, Debug)]
pub struct FkDomain {
    pub active_face: Vec<bool>,
    pub faces: Vec<FaceId>,
    pub edges: Vec<FkEdge>,
    /// Half-width of the inner hole when the domain is an annulus.
    pub hole_halfwidth: Option<i64>,
}

impl FkDomain {
    /// The wired box: every face including the fused outer one is active,
    /// every edge carries its coupling.
    pub fn wired_box(g: &IsingGraph) -> FkDomain {
        let active_face = vec![true; g.num_faces()];
        let faces = (0..g.num_faces()).collect();
        let edges = (0..g.num_edges())
            .map(|e| {
                let edge = g.edge(e);
                FkEdge {
                    edge: e,
                    f0: edge.f_pos,
                    f1: edge.f_neg,
                    p_open: p_open_for(g.theta(e)),
                }
            })
            .collect();
        FkDomain {
            active_face,
            faces,
            edges,
            hole_halfwidth: None,
        }
    }

    /// Free-boundary annulus: active faces are the inner faces whose
    /// centers lie at L∞ distance >= hole from the origin; couplings across
    /// the inner and outer boundaries are deleted.
    pub fn free_annulus(g: &IsingGraph, hole: i64) -> FkDomain {
        let mut active_face = vec![false; g.num_faces()];
        for f in 0..g.num_faces() - 1 {
            let (fx, fy) = g.face_xy(f).unwrap();
            let cx = fx as f64 + 0.5;
            let cy = fy as f64 + 0.5;
            if cx.abs().max(cy.abs()) > hole as f64 - 0.5 {
                active_face[f] = true;
            }
        }
        let faces = (0..g.num_faces()).filter(|&f| active_face[f]).collect();
        let edges = (0..g.num_edges())
            .filter_map(|e| {
                let edge = g.edge(e);
                (edge.f_pos != g.outer_face()
                    && edge.f_neg != g.outer_face()
                    && active_face[edge.f_pos]
                    && active_face[edge.f_neg])
                .then(|| FkEdge {
                    edge: e,
                    f0: edge.f_pos,
                    f1: edge.f_neg,
                    p_open: p_open_for(g.theta(e)),
                })
            })
            .collect();
        FkDomain {
            active_face,
            faces,
            edges,
            hole_halfwidth: Some(hole),
        }
    }

    /// Force every bond probability (degenerate-limit tests).
    pub fn with_uniform_p(mut self, p: f64) -> FkDomain {
        for e in &mut self.edges {
            e.p_open = p;
        }
        self
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }
    fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
    }
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            self.parent[x as usize] = self.parent[self.parent[x as usize] as usize];
            x = self.parent[x as usize];
        }
        x
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }
}

/// One Swendsen-Wang chain on a domain.
pub struct SwChain<'d> {
    domain: &'d FkDomain,
    pub spins: Vec<i8>,
    pub open: Vec<bool>,
    uf: UnionFind,
    rng: ChaCha12Rng,
}

impl<'d> SwChain<'d> {
    pub fn new(domain: &'d FkDomain, num_faces: usize, rng: ChaCha12Rng) -> Self {
        let mut chain = SwChain {
            domain,
            spins: vec![1i8; num_faces],
            open: vec![false; domain.edges.len()],
            uf: UnionFind::new(num_faces),
            rng,
        };
        // Random initial spins.
        for &f in &domain.faces {
            chain.spins[f] = if chain.rng.gen::<bool>() { 1 } else { -1 };
        }
        chain
    }

    /// Bond step, cluster step, spin step. After the bond step, `open`
    /// holds an FK-distributed configuration (once the chain is warm).
    pub fn sweep(&mut self) {
        for (i, e) in self.domain.edges.iter().enumerate() {
            self.open[i] =
                self.spins[e.f0] == self.spins[e.f1] && self.rng.gen::<f64>() < e.p_open;
        }
        self.uf.reset();
        for (i, e) in self.domain.edges.iter().enumerate() {
            if self.open[i] {
                self.uf.union(e.f0 as u32, e.f1 as u32);
            }
        }
        // Fresh spin per cluster root, copied to members.
        let mut root_spin: Vec<i8> = vec![0; self.spins.len()];
        for &f in &self.domain.faces {
            let r = self.uf.find(f as u32) as usize;
            if root_spin[r] == 0 {
                root_spin[r] = if self.rng.gen::<bool>() { 1 } else { -1 };
            }
            self.spins[f] = root_spin[r];
        }
    }

    /// Number of FK clusters among active faces for the current bonds.
    pub fn cluster_count(&mut self) -> usize {
        self.uf.reset();
        for (i, e) in self.domain.edges.iter().enumerate() {
            if self.open[i] {
                self.uf.union(e.f0 as u32, e.f1 as u32);
            }
        }
        let mut roots = std::collections::HashSet::new();
        for &f in &self.domain.faces {
            roots.insert(self.uf.find(f as u32));
        }
        roots.len()
    }
}

/// Does the open-bond configuration contain a circuit of FK-connected faces
/// separating the hole from the outer boundary? Detected as the absence of
/// a primal vertex path from the hole to the box boundary using only edges
/// whose dual adjacency is not open.
pub fn circuit_exists(g: &IsingGraph, domain: &FkDomain, open: &[bool]) -> bool {
    let hole = domain
        .hole_halfwidth
        .expect("circuit detection needs an annulus domain");
    let n = g.n() as i64;
    let mut blocked = vec![false; g.num_edges()];
    for (i, e) in domain.edges.iter().enumerate() {
        if open[i] {
            blocked[e.edge] = true;
        }
    }
    let mut uf = UnionFind::new(g.num_vertices() + 1);
    let outer_node = g.num_vertices() as u32;
    for e in 0..g.num_edges() {
        if blocked[e] {
            continue;
        }
        let edge = g.edge(e);
        uf.union(edge.v0 as u32, edge.v1 as u32);
    }
    for v in boundary_vertices(g) {
        uf.union(outer_node, v as u32);
    }
    // Any vertex strictly inside the hole reaching the outer ring kills the
    // circuit.
    let mut inner: Option<VertexId> = None;
    'outer: for y in -n..=n {
        for x in -n..=n {
            if x.abs().max(y.abs()) < hole {
                inner = Some(g.vertex_id(x, y).unwrap());
                break 'outer;
            }
        }
    }
    let inner = inner.expect("hole contains a vertex");
    uf.find(inner as u32) != uf.find(outer_node)
}

fn boundary_vertices(g: &IsingGraph) -> Vec<VertexId> {
    let n = g.n() as i64;
    let mut out = Vec::new();
    for y in -n..=n {
        for x in -n..=n {
            if x.abs().max(y.abs()) == n {
                out.push(g.vertex_id(x, y).unwrap());
            }
        }
    }
    out
}

/// Monte Carlo estimate of a bond-configuration event.
#[derive(Clone, Copy, Debug)]
pub struct CrossingEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

/// Sampling controls: burn-in sweeps and the thinning interval (sweeps per
/// retained sample). Thinning is sized from a pilot autocorrelation
/// estimate when `auto_thin` is set.
#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub auto_thin: bool,
    pub chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 1000,
            thin: 1,
            auto_thin: true,
            chains: 2,
        }
    }
}

/// Estimate P(open circuit in the annulus) by Swendsen-Wang sampling.
/// Chains are independent streams of the master seed; estimates merge by
/// sufficient statistics, so the result is deterministic for a fixed seed
/// and chain count.
pub fn open_circuit_probability(
    g: &IsingGraph,
    domain: &FkDomain,
    samples: u64,
    seed: u64,
    config: &SamplerConfig,
) -> Result<CrossingEstimate, FkError> {
    if samples == 0 {
        return Err(FkError::ZeroSamples);
    }
    let chains = config.chains.max(1) as u64;
    let per_chain = samples.div_ceil(chains);
    let total: u64 = (0..chains)
        .map(|chain| {
            let rng = crate::rng::stream(seed, 0x6b_0000 + chain);
            let mut sw = SwChain::new(domain, g.num_faces(), rng);
            for _ in 0..config.burn_in {
                sw.sweep();
            }
            let thin = if config.auto_thin {
                estimate_thin(g, domain, &mut sw)
            } else {
                config.thin.max(1)
            };
            let mut hits = 0u64;
            for _ in 0..per_chain {
                for _ in 0..thin {
                    sw.sweep();
                }
                if circuit_exists(g, domain, &sw.open) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let n = (per_chain * chains) as f64;
    let p = total as f64 / n;
    Ok(CrossingEstimate {
        probability: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        samples: per_chain * chains,
        seed,
    })
}

/// Integrated-autocorrelation pilot for the circuit indicator; returns a
/// thinning interval in [1, 16].
fn estimate_thin(g: &IsingGraph, domain: &FkDomain, sw: &mut SwChain) -> usize {
    const PILOT: usize = 256;
    let mut series = Vec::with_capacity(PILOT);
    for _ in 0..PILOT {
        sw.sweep();
        series.push(if circuit_exists(g, domain, &sw.open) {
            1.0f64
        } else {
            0.0
        });
    }
    let mean = series.iter().sum::<f64>() / PILOT as f64;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / PILOT as f64;
    if var < 1e-12 {
        return 1;
    }
    let mut tau = 1.0;
    for lag in 1..32 {
        let mut acc = 0.0;
        for i in 0..(PILOT - lag) {
            acc += (series[i] - mean) * (series[i + lag] - mean);
        }
        let rho = acc / ((PILOT - lag) as f64 * var);
        if rho < 0.05 {
            break;
        }
        tau += 2.0 * rho;
    }
    (tau.ceil() as usize).clamp(1, 16)
}

/// Exact FK distribution over bond configurations of a tiny domain:
/// P(ω) ∝ 2^{#clusters} ∏ p^{ω} (1-p)^{1-ω}.
pub fn exact_fk_distribution(domain: &FkDomain, num_faces: usize) -> Result<Vec<f64>, FkError> {
    let m = domain.edges.len();
    if m > 20 {
        return Err(FkError::TooLargeForExact(m));
    }
    let mut weights = Vec::with_capacity(1 << m);
    let mut uf = UnionFind::new(num_faces);
    for mask in 0u32..(1 << m) {
        let mut w = 1.0;
        uf.reset();
        for (i, e) in domain.edges.iter().enumerate() {
            if mask >> i & 1 == 1 {
                w *= e.p_open;
                uf.union(e.f0 as u32, e.f1 as u32);
            } else {
                w *= 1.0 - e.p_open;
            }
        }
        let mut roots = std::collections::HashSet::new();
        for &f in &domain.faces {
            roots.insert(uf.find(f as u32));
        }
        w *= (2.0f64).powi(roots.len() as i32);
        weights.push(w);
    }
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Draw one FK bond configuration after burn-in (a convenience wrapper
/// around a fresh Swendsen-Wang chain).
pub fn sample_fk(
    g: &IsingGraph,
    domain: &FkDomain,
    burn_in: usize,
    seed: u64,
) -> Vec<bool> {
    let rng = crate::rng::stream(seed, 0x6b_5a3);
    let mut sw = SwChain::new(domain, g.num_faces(), rng);
    for _ in 0..=burn_in {
        sw.sweep();
    }
    sw.open.clone()
}

/// Per-edge empirical open frequencies over a sampling run (wired box).
pub fn edge_open_frequencies(
    g: &IsingGraph,
    domain: &FkDomain,
    samples: u64,
    seed: u64,
    burn_in: usize,
) -> Vec<f64> {
    let rng = crate::rng::stream(seed, 0x6b_f00d);
    let mut sw = SwChain::new(domain, g.num_faces(), rng);
    for _ in 0..burn_in {
        sw.sweep();
    }
    let mut counts = vec![0u64; domain.edges.len()];
    for _ in 0..samples {
        sw.sweep();
        for (i, c) in counts.iter_mut().enumerate() {
            if sw.open[i] {
                *c += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / samples as f64)
        .collect()
}

/// Environments for the crossing experiments.
pub enum Environment {
    /// x_e = x_c + m_e / n on the support, critical outside.
    Massive { masses: Vec<f64>, n: f64 },
    /// θ_e = π/4 + t N(0,1) i.i.d., redrawn until inside (lo, hi).
    IidGaussian { t: f64 },
    /// Angles taken from a stored interacting-flow checkpoint.
    InteractingSnapshot { thetas: Vec<f64> },
}

/// Generate a per-edge angle field; returns (thetas, resample count).
pub fn environment_thetas(
    g: &IsingGraph,
    env: &Environment,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<f64>, u64), FkError> {
    const LO: f64 = 1e-3;
    const HI: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;
    match env {
        Environment::Massive { masses, n } => {
            if *n <= 0.0 {
                return Err(FkError::BadParameter("massive n must be positive".into()));
            }
            let xc = 2.0f64.sqrt() - 1.0;
            let mut thetas = Vec::with_capacity(g.num_edges());
            for e in 0..g.num_edges() {
                let x = xc + masses[e] / n;
                if !(0.0..1.0).contains(&x) {
                    return Err(FkError::BadParameter(format!(
                        "massive weight {x} at edge {e} outside (0, 1)"
                    )));
                }
                thetas.push(2.0 * x.atan());
            }
            Ok((thetas, 0))
        }
        Environment::IidGaussian { t } => {
            if *t < 0.0 {
                return Err(FkError::BadParameter("t must be nonnegative".into()));
            }
            let mut resamples = 0u64;
            let mut thetas = Vec::with_capacity(g.num_edges());
            for _ in 0..g.num_edges() {
                loop {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let theta = std::f64::consts::FRAC_PI_4 + t * z;
                    if (LO..=HI).contains(&theta) {
                        thetas.push(theta);
                        break;
                    }
                    resamples += 1;
                }
            }
            Ok((thetas, resamples))
        }
        Environment::InteractingSnapshot { thetas } => {
            if thetas.len() != g.num_edges() {
                return Err(FkError::BadParameter(
                    "snapshot length does not match the graph".into(),
                ));
            }
            for &t in thetas {
                if !(LO..=HI).contains(&t) {
                    return Err(FkError::BadParameter(format!("snapshot angle {t}")));
                }
            }
            Ok((thetas.clone(), 0))
        }
    }
}
