//! NARMA-2 across the chaos-integrability crossover of the normalized
//! interpolated model at a long input interval.
//!
//! cargo run --release --example parametric_edge [realizations]

use syk_reservoir::harness::{geometric_grid, run_qrc_sweep, Axis, Command, ExperimentConfig, Sweep};
use syk_reservoir::tasks::TaskSpec;

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Qrc);
    cfg.realizations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    cfg.model = cfg.model.clone().normalized(true);
    cfg.reservoir.dt_in = 50.0;
    cfg.tasks = vec![TaskSpec::narma(2)];
    cfg.haar_baseline = false;
    cfg.sweep = Some(Sweep { axis: Axis::KappaRatio, values: geometric_grid(0.1, 1000.0, 9) });
    let rep = run_qrc_sweep(&cfg)?;
    println!("kappa2/J4    NMSE");
    for p in &rep.points {
        let s = p.nmse.expect("nmse");
        println!("{:9.2}   {:.4} ± {:.4}", p.value.unwrap(), s.mean, s.std);
    }
    Ok(())
}
