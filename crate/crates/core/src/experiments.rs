//! Desk-scale experiment drivers shared by the CLI and the acceptance
//! suite: the bounded-domain energy-density profile and the admissible
//! mass-bound search for the massive flow.

use crate::correlators::kernel::{energy_sign, Factorized, KernelError};
use crate::deformation::{
    critical_start, ode_flow, DeformationSchedule, FlowConfig, FlowError, Trajectory,
};
use crate::geometry;
use crate::lattice::IsingGraph;
use num_complex::Complex64;

/// E[ε] at the center edge of a wired box whose couplings are frozen
/// (θ -> 0, an exact wiring of the exterior) outside a centered Euclidean
/// disk; `disk_radius = None` keeps the whole box critical (the full-plane
/// surrogate).
pub fn disk_center_energy(
    box_halfwidth: usize,
    disk_radius: Option<f64>,
) -> Result<f64, KernelError> {
    let mut g = IsingGraph::build_box(box_halfwidth).unwrap();
    if let Some(r) = disk_radius {
        for e in 0..g.num_edges() {
            let edge = g.edge(e);
            let (x0, y0) = g.vertex_xy(edge.v0);
            let (x1, y1) = g.vertex_xy(edge.v1);
            let mx = (x0 + x1) as f64 / 2.0;
            let my = (y0 + y1) as f64 / 2.0;
            if (mx * mx + my * my).sqrt() > r {
                g.set_theta_unchecked(e, 1e-9);
            }
        }
    }
    let fact = Factorized::new(&g, g.thetas())?;
    let z = g.h_edge(0, 0).unwrap();
    let quad = g.quad(z);
    let x = fact.fermion(&g, quad.corners[0], z)?;
    Ok(g.theta(z).cos() - g.theta(z).sin() * energy_sign(&g, z) * x[quad.corners[2]])
}

/// One row of the energy-density profile: the normalized second-order
/// correction √2 r (E_disk - E_surrogate), which approaches the hyperbolic
/// term 1/π for a centered unit disk.
#[derive(Clone, Copy, Debug)]
pub struct ProfilePoint {
    pub radius: f64,
    pub disk_energy: f64,
    pub normalized: f64,
}

pub fn energy_profile(
    surrogate_halfwidth: usize,
    radii: &[f64],
) -> Result<(f64, Vec<ProfilePoint>), KernelError> {
    let e_surr = disk_center_energy(surrogate_halfwidth, None)?;
    let mut points = Vec::with_capacity(radii.len());
    for &r in radii {
        let e_disk = disk_center_energy(surrogate_halfwidth, Some(r))?;
        points.push(ProfilePoint {
            radius: r,
            disk_energy: e_disk,
            normalized: 2.0f64.sqrt() * r * (e_disk - e_surr),
        });
    }
    Ok((e_surr, points))
}

/// Criteria the massive flow must meet over [0, 1/n] for a mass bound to be
/// declared admissible, per the reference experiment: final residual,
/// deviation bound M(t) <= 0.1 n^{-1/2} n t, distance ratios in [0.9, 1.1],
/// Unif(1/n, 10, π/10), and properness at the final time.
pub struct MassiveRun {
    pub trajectory: Trajectory,
    pub admissible: bool,
    pub worst_m_ratio: f64,
    pub ratio_bounds: (f64, f64),
    pub unif_pass: bool,
    pub proper_pass: bool,
    pub final_residual: f64,
}

pub fn run_massive(
    n_def: usize,
    mass: f64,
    steps: usize,
    store_every: usize,
) -> Result<MassiveRun, FlowError> {
    let (g, y0) = critical_start(n_def);
    let support = n_def as i64;
    let mut sched = DeformationSchedule::massive(&g, support, |_| mass);
    sched.horizon = 1.0 / n_def as f64;
    sched.steps = steps;
    let mut config = FlowConfig::for_graph(&g);
    config.store_every = store_every;
    config.check_residual = false;
    let traj = ode_flow(&g, &y0, &sched, &config)?;

    let nf = n_def as f64;
    let mut worst_m_ratio: f64 = 0.0;
    for (t, m) in traj.times.iter().zip(&traj.m_dev) {
        if *t > 0.0 {
            worst_m_ratio = worst_m_ratio.max(m / (0.1 / nf.sqrt() * nf * t));
        }
    }
    let final_residual = *traj.residuals.last().unwrap();
    let emb = crate::embedding::embed(
        &g,
        traj.final_y(),
        config.anchor,
        Complex64::new(0.0, 0.0),
        f64::INFINITY,
    )
    .map_err(|e| FlowError::Embedding(e.to_string()))?;
    let quads = geometry::quads_in_box(&g, support);
    let unif = geometry::check_unif(
        &g,
        &emb,
        &quads,
        1.0 / nf,
        10.0,
        std::f64::consts::PI / 10.0,
    )
    .map_err(|e| FlowError::Embedding(e.to_string()))?;
    let proper = geometry::check_proper(&g, &emb, support, 2 * support)
        .map_err(|e| FlowError::Embedding(e.to_string()))?;
    let emb0 = crate::embedding::embed(
        &g,
        &traj.y[0],
        config.anchor,
        Complex64::new(0.0, 0.0),
        f64::INFINITY,
    )
    .map_err(|e| FlowError::Embedding(e.to_string()))?;
    let ratio_bounds = geometry::distance_comparability(&emb, &emb0)
        .map_err(|e| FlowError::Embedding(e.to_string()))?;
    let admissible = final_residual <= 1e-6
        && worst_m_ratio <= 1.0
        && ratio_bounds.0 >= 0.9
        && ratio_bounds.1 <= 1.1
        && unif.pass
        && proper.pass;
    Ok(MassiveRun {
        trajectory: traj,
        admissible,
        worst_m_ratio,
        ratio_bounds,
        unif_pass: unif.pass,
        proper_pass: proper.pass,
        final_residual,
    })
}

/// Bisection for the admissible mass bound at a given size: the largest
/// uniform mass (within `iterations` halvings between lo and hi) whose run
/// meets every admissibility requirement.
pub fn admissible_mass_bound(
    n_def: usize,
    steps: usize,
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
) -> Result<f64, FlowError> {
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let run = run_massive(n_def, mid, steps, steps.max(1))?;
        if run.admissible {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
