use semb_core::deformation::*;
fn main() {
    let (g, y) = critical_start(2);
    for steps in [256usize, 1024, 4096] {
        let mut sched = DeformationSchedule::random(&g, 2, |_| 0.5);
        sched.horizon = 0.02;
        sched.steps = steps;
        sched.seed = 71;
        let mut config = FlowConfig::for_graph(&g);
        config.store_every = steps / 4;
        config.check_residual = false;
        config.brownian_cap = f64::INFINITY;
        let traj = sde_flow(&g, &y, &sched, &config).unwrap();
        println!("steps {steps}: residuals at quarters {:?}", traj.residuals);
    }
}
