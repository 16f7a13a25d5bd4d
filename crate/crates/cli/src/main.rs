//! Experiment orchestrator: reproducible runs of the correlator tables,
//! deformation flows, geometric validation, FK crossing windows, and the
//! energy-density profile. Every run directory contains its manifest; a
//! fixed (manifest, seed, workers) triple reproduces byte-identical CSVs.

mod manifest;

use anyhow::{bail, Context, Result};
use clap::Parser;
use manifest::ExperimentManifest;
use num_complex::Complex64;
use rayon::prelude::*;
use semb_core::correlators::{Backend, CorrelatorEngine};
use semb_core::deformation::{
    critical_start, diagnostics, ode_flow, sde_flow, DeformationSchedule, FlowConfig,
    ScheduleKind, StopCause,
};
use semb_core::embedding::{critical_propagator, embed, snapshot_document, snapshot_parse};
use semb_core::experiments;
use semb_core::fkmc::{self, FkDomain, SamplerConfig};
use semb_core::geometry;
use semb_core::IsingGraph;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "semb", about = "planar Ising s-embedding laboratory")]
struct Args {
    /// Subcommand: correlators | deform-massive | deform-random |
    /// deform-interacting | validate | fk-window | energy-profile
    command: String,
    /// Experiment manifest (TOML). Defaults are synthesized from flags when
    /// omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Worker threads (also honors SEMB_WORKERS).
    #[arg(long, env = "SEMB_WORKERS")]
    workers: Option<usize>,
    /// Correlator backend: enum | planar.
    #[arg(long, default_value = "planar")]
    backend: String,
    /// Box half-width when no manifest is given.
    #[arg(long, default_value_t = 4)]
    n: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: Args) -> Result<bool> {
    if let Some(w) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .ok();
    }
    let mut m = match &args.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentManifest::parse(&text)?
        }
        None => ExperimentManifest::parse(&format!(
            "version = 1\ncommand = \"{}\"\nn = {}\n",
            args.command, args.n
        ))?,
    };
    if m.command != args.command {
        bail!(
            "manifest command '{}' does not match subcommand '{}'",
            m.command,
            args.command
        );
    }
    if let Some(seed) = args.seed {
        m.seed = seed;
    }
    let backend = match args.backend.as_str() {
        "planar" => Backend::PlanarDeterminant,
        "enum" => Backend::Enumeration,
        other => bail!("unknown backend '{other}' (use enum or planar)"),
    };

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("manifest.toml"), m.emit())?;
    let mut log = RunLog::default();

    let pass = match args.command.as_str() {
        "correlators" => cmd_correlators(&m, backend, &args.out, &mut log)?,
        "deform-massive" => cmd_deform_massive(&m, &args.out, &mut log)?,
        "deform-random" => cmd_deform_stochastic(&m, &args.out, &mut log, false)?,
        "deform-interacting" => cmd_deform_stochastic(&m, &args.out, &mut log, true)?,
        "validate" => cmd_validate(&m, &args.out, &mut log)?,
        "fk-window" => cmd_fk_window(&m, &args.out, &mut log)?,
        "energy-profile" => cmd_energy_profile(&m, &args.out, &mut log)?,
        other => bail!("unknown subcommand '{other}'"),
    };
    std::fs::write(args.out.join("run.log"), log.text)?;
    Ok(pass)
}

#[derive(Default)]
struct RunLog {
    text: String,
}

impl RunLog {
    fn event(&mut self, code: &str, msg: &str) {
        let _ = writeln!(self.text, "code={code} msg={msg}");
        println!("[{code}] {msg}");
    }
}

fn write_csv(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

fn cmd_correlators(
    m: &ExperimentManifest,
    backend: Backend,
    out: &Path,
    log: &mut RunLog,
) -> Result<bool> {
    let g = IsingGraph::build_box(m.n)?;
    let engine = CorrelatorEngine::new(&g, backend)?;
    // Corners of the four quads around the origin.
    let mut corners = Vec::new();
    for z in [
        g.v_edge(0, 0).unwrap(),
        g.v_edge(0, -1).unwrap(),
        g.h_edge(0, 0).unwrap(),
        g.h_edge(-1, 0).unwrap(),
    ] {
        corners.extend_from_slice(&g.quad(z).corners);
    }
    corners.sort_unstable();
    corners.dedup();
    write_csv(&out.join("correlators.csv"), &engine.fermion_csv(&corners)?)?;

    // Derivative checks against central finite differences.
    let r = g.v_edge(0, 0).unwrap();
    let pairs = [
        (g.quad(g.h_edge(0, 0).unwrap()).corners[0], g.quad(g.h_edge(-1, 0).unwrap()).corners[2]),
        (g.quad(r).corners[1], g.quad(r).corners[2]),
    ];
    let mut csv = String::from("p,q,r,analytic_d1,fd_d1,analytic_d2,fd_d2\n");
    let mut ok = true;
    for &(p, q) in &pairs {
        let d1 = engine.d_fermion_dtheta(p, q, r)?;
        let d2 = engine.d2_fermion_dtheta2(p, q, r)?;
        let (fd1, fd2) = fd_fermion(&g, p, q, r)?;
        ok &= (d1 - fd1).abs() <= 1e-5 * (1.0 + fd1.abs());
        ok &= (d2 - fd2).abs() <= 1e-3 * (1.0 + fd2.abs());
        let _ = writeln!(csv, "{p},{q},{r},{d1:.15e},{fd1:.15e},{d2:.15e},{fd2:.15e}");
    }
    write_csv(&out.join("derivatives.csv"), &csv)?;
    log.event(
        if ok { "correlators-ok" } else { "derivative-mismatch" },
        &format!("{} corners tabulated", corners.len()),
    );
    Ok(ok)
}

fn fd_fermion(g: &IsingGraph, p: usize, q: usize, r: usize) -> Result<(f64, f64)> {
    let h1 = 1e-5;
    let h2 = 1e-3;
    let at = |dt: f64| -> Result<f64> {
        let mut gg = g.clone();
        gg.set_theta(r, g.theta(r) + dt)?;
        let e = CorrelatorEngine::new(&gg, Backend::PlanarDeterminant)?;
        Ok(e.coherent(p, q)?)
    };
    let fd1 = (at(h1)? - at(-h1)?) / (2.0 * h1);
    let fd2 = (at(h2)? - 2.0 * at(0.0)? + at(-h2)?) / (h2 * h2);
    Ok((fd1, fd2))
}

fn trajectory_csv(
    g: &IsingGraph,
    traj: &semb_core::deformation::Trajectory,
    anchor: usize,
) -> Result<String> {
    let report = diagnostics(g, traj, anchor)?;
    let mut csv = String::from("t,m_dev,min_ratio,max_ratio,residual\n");
    for i in 0..report.times.len() {
        let _ = writeln!(
            csv,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            report.times[i],
            report.m_dev[i],
            report.ratios[i].0,
            report.ratios[i].1,
            report.residuals[i]
        );
    }
    Ok(csv)
}

fn cmd_deform_massive(m: &ExperimentManifest, out: &Path, log: &mut RunLog) -> Result<bool> {
    let n = m.n;
    let (g, y0) = critical_start(n);
    let mut sched = DeformationSchedule::massive(&g, n as i64, |_| m.mass);
    sched.horizon = if m.horizon > 0.0 { m.horizon } else { 1.0 / n as f64 };
    sched.steps = m.steps;
    let mut config = FlowConfig::for_graph(&g);
    config.store_every = m.store_every;
    config.refresh_every = m.refresh_every;
    config.residual_tol = m.residual_tol;
    let traj = ode_flow(&g, &y0, &sched, &config)?;
    write_csv(&out.join("trajectory.csv"), &trajectory_csv(&g, &traj, config.anchor)?)?;
    // Embedding snapshots at every stored checkpoint.
    for (i, y) in traj.y.iter().enumerate() {
        let emb_i = embed(&g, y, config.anchor, Complex64::new(0.0, 0.0), f64::INFINITY)
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        let mut gi = g.clone();
        for (e, &th) in traj.thetas[i].iter().enumerate() {
            gi.set_theta_unchecked(e, th);
        }
        std::fs::write(
            out.join(format!("snapshot_{i:03}.toml")),
            snapshot_document(&gi, &emb_i),
        )?;
    }
    let emb = embed(
        &g,
        traj.final_y(),
        config.anchor,
        Complex64::new(0.0, 0.0),
        f64::INFINITY,
    )
    .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    std::fs::write(out.join("snapshot_final.toml"), snapshot_document(&g, &emb))?;
    let quads = geometry::quads_in_box(&g, n as i64);
    let unif = geometry::check_unif(
        &g,
        &emb,
        &quads,
        1.0 / n as f64,
        10.0,
        std::f64::consts::PI / 10.0,
    )?;
    let proper = geometry::check_proper(&g, &emb, n as i64, 2 * n as i64)?;
    let final_residual = *traj.residuals.last().unwrap();
    let pass = unif.pass && proper.pass && final_residual <= m.residual_tol;
    let mut report = String::new();
    let _ = writeln!(report, "unif_pass = {}", unif.pass);
    let _ = writeln!(report, "worst_edge_ratio = {:.6}", unif.worst_edge_ratio);
    let _ = writeln!(report, "worst_half_angle = {:.6}", unif.worst_half_angle);
    let _ = writeln!(report, "proper_pass = {}", proper.pass);
    let _ = writeln!(report, "final_residual = {final_residual:.3e}");
    std::fs::write(out.join("validation.toml"), report)?;
    log.event(
        if pass { "massive-ok" } else { "massive-validation-failed" },
        &format!("mass {} over horizon {}", m.mass, sched.horizon),
    );
    Ok(pass)
}

fn cmd_deform_stochastic(
    m: &ExperimentManifest,
    out: &Path,
    log: &mut RunLog,
    interacting: bool,
) -> Result<bool> {
    let n = m.n;
    let (g, y0) = critical_start(n);
    let horizon = if m.horizon > 0.0 { m.horizon } else { 0.5 / n as f64 };
    let runs: Vec<(usize, Option<(f64, StopCause)>, f64, f64)> = (0..m.runs)
        .into_par_iter()
        .map(|run| {
            let mut sched = DeformationSchedule::random(&g, n as i64, |_| m.sigma);
            if interacting {
                sched.kind = ScheduleKind::InteractingSde;
            }
            sched.horizon = horizon;
            sched.steps = m.steps;
            sched.seed = semb_core::rng::derive_seed(m.seed, run as u64);
            let mut config = FlowConfig::for_graph(&g);
            config.store_every = m.store_every.max(m.steps);
            config.refresh_every = m.refresh_every;
            config.check_residual = false;
            config.unif = Some((1.0 / n as f64, 10.0, std::f64::consts::PI / 10.0));
            let traj = sde_flow(&g, &y0, &sched, &config).expect("sde run");
            let stop = traj.stop.map(|s| (s.time, s.cause));
            (
                run,
                stop,
                *traj.residuals.last().unwrap(),
                *traj.m_dev.last().unwrap(),
            )
        })
        .collect();
    let mut csv = String::from("run,stopped,stop_time,cause,final_residual,final_m\n");
    let mut survived = 0usize;
    for (run, stop, res, mdev) in &runs {
        let (stopped, time, cause) = match stop {
            Some((t, StopCause::UnifExit)) => (1, *t, "unif_exit"),
            Some((t, StopCause::BrownianExit)) => (1, *t, "brownian_exit"),
            None => {
                survived += 1;
                (0, horizon, "none")
            }
        };
        let _ = writeln!(csv, "{run},{stopped},{time:.9e},{cause},{res:.3e},{mdev:.6e}");
    }
    write_csv(&out.join("survival.csv"), &csv)?;
    log.event(
        "sde-ok",
        &format!(
            "{}/{} runs reached the horizon {horizon} ({})",
            survived,
            m.runs,
            if interacting { "interacting" } else { "random" }
        ),
    );
    Ok(true)
}

fn cmd_validate(m: &ExperimentManifest, out: &Path, log: &mut RunLog) -> Result<bool> {
    let (g, emb) = if m.snapshot.is_empty() {
        // Default: the critical snapshot at the manifest size.
        let g = IsingGraph::build_box(m.n)?;
        let y = critical_propagator(&g, m.n as f64);
        let emb = embed(&g, &y, g.vertex_id(0, 0).unwrap(), Complex64::new(0.0, 0.0), 1e-9)
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        (g, emb)
    } else {
        let text = std::fs::read_to_string(&m.snapshot)?;
        snapshot_parse(&text).map_err(|e| anyhow::anyhow!(e))?
    };
    let scale = m.n as f64;
    let quads = geometry::quads_in_box(&g, g.n() as i64);
    let unif = geometry::check_unif(&g, &emb, &quads, 1.0 / scale, 10.0, std::f64::consts::PI / 10.0)?;
    let lip = geometry::check_lip(&emb, m.kappa, 1.0 / scale);
    let inner = (g.n() / 2) as i64;
    let proper = geometry::check_proper(&g, &emb, inner, g.n() as i64)?;
    let pass = unif.pass && lip.pass && proper.pass;
    let mut report = String::new();
    let _ = writeln!(report, "unif_pass = {}", unif.pass);
    let _ = writeln!(report, "worst_edge_ratio = {:.6}", unif.worst_edge_ratio);
    let _ = writeln!(report, "worst_half_angle = {:.6}", unif.worst_half_angle);
    let _ = writeln!(report, "lip_pass = {}", lip.pass);
    let _ = writeln!(report, "lip_worst_ratio = {:.6}", lip.worst_ratio);
    let _ = writeln!(report, "proper_pass = {}", proper.pass);
    std::fs::write(out.join("validation.toml"), report)?;
    log.event(
        if pass { "validate-ok" } else { "validate-failed" },
        &format!(
            "unif={} lip={} proper={}",
            unif.pass, lip.pass, proper.pass
        ),
    );
    Ok(pass)
}

fn cmd_fk_window(m: &ExperimentManifest, out: &Path, log: &mut RunLog) -> Result<bool> {
    let sizes = if m.sizes.is_empty() {
        vec![16, 32, 64]
    } else {
        m.sizes.clone()
    };
    let mut csv = String::from(
        "n,environment,param,probability,stderr,samples,seed,dual_probability,dual_stderr\n",
    );
    for &n in &sizes {
        let mut g = IsingGraph::build_box(n)?;
        let mut rng = semb_core::rng::stream(m.seed, 0xe0 + n as u64);
        let (thetas, resamples) = match m.environment.as_str() {
            "critical" => (vec![std::f64::consts::FRAC_PI_4; g.num_edges()], 0),
            "massive" => fkmc::environment_thetas(
                &g,
                &fkmc::Environment::Massive {
                    masses: vec![m.mass; g.num_edges()],
                    n: n as f64,
                },
                &mut rng,
            )?,
            "iid" => fkmc::environment_thetas(
                &g,
                &fkmc::Environment::IidGaussian { t: m.t_shift },
                &mut rng,
            )?,
            "shifted" => (
                vec![std::f64::consts::FRAC_PI_4 + m.shift; g.num_edges()],
                0,
            ),
            other => bail!("unknown environment '{other}'"),
        };
        if resamples > 0 {
            log.event("env-resamples", &format!("{resamples} clipped draws redrawn"));
        }
        for (e, &t) in thetas.iter().enumerate() {
            g.set_theta(e, t)?;
        }
        // Replay record.
        std::fs::write(
            out.join(format!("environment_n{n}.toml")),
            g.to_document(),
        )?;
        let domain = FkDomain::free_annulus(&g, (n / 2) as i64);
        let config = SamplerConfig::default();
        let est = fkmc::open_circuit_probability(&g, &domain, m.samples, m.seed, &config)?;
        // Dual model: θ -> π/2 - θ on the same geometry.
        let mut gd = g.clone();
        for e in 0..gd.num_edges() {
            gd.set_theta(e, std::f64::consts::FRAC_PI_2 - g.theta(e))?;
        }
        let dd = FkDomain::free_annulus(&gd, (n / 2) as i64);
        let dual = fkmc::open_circuit_probability(&gd, &dd, m.samples, m.seed ^ 1, &config)?;
        let param = match m.environment.as_str() {
            "massive" => m.mass,
            "iid" => m.t_shift,
            "shifted" => m.shift,
            _ => 0.0,
        };
        let _ = writeln!(
            csv,
            "{n},{},{param},{:.6},{:.6},{},{},{:.6},{:.6}",
            m.environment,
            est.probability,
            est.stderr,
            est.samples,
            est.seed,
            dual.probability,
            dual.stderr
        );
        log.event(
            "fk-estimate",
            &format!("n={n} P = {:.4} ± {:.4}", est.probability, est.stderr),
        );
    }
    write_csv(&out.join("window.csv"), &csv)?;
    Ok(true)
}

fn cmd_energy_profile(m: &ExperimentManifest, out: &Path, log: &mut RunLog) -> Result<bool> {
    let radii = if m.radii.is_empty() {
        vec![8.0, 12.0, 16.0, 24.0]
    } else {
        m.radii.clone()
    };
    let (e_surr, points) = experiments::energy_profile(m.surrogate_halfwidth, &radii)?;
    let target = 1.0 / std::f64::consts::PI;
    let mut csv = String::from("radius,disk_energy,normalized,target\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{:.12e},{:.8},{:.8}",
            p.radius, p.disk_energy, p.normalized, target
        );
    }
    let _ = writeln!(csv, "surrogate,{e_surr:.12e},,");
    write_csv(&out.join("profile.csv"), &csv)?;
    let last = points.last().map(|p| p.normalized).unwrap_or(f64::NAN);
    let pass = (last - target).abs() <= 0.25 * target;
    log.event(
        if pass { "profile-ok" } else { "profile-outside-tolerance" },
        &format!("largest disk normalized value {last:.5} vs 1/π = {target:.5}"),
    );
    Ok(pass)
}
