//! Measurement noise on the features. One noiseless trajectory per
//! realization is reused for every noise level.
//!
//! cargo run --release --example noise_sweep

use syk_reservoir::harness::{run_qrc_sweep, Axis, Command, ExperimentConfig, Sweep};
use syk_reservoir::tasks::TaskSpec;

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Qrc);
    cfg.realizations = 5;
    cfg.haar_baseline = false;
    cfg.tasks = vec![TaskSpec::narma(2)];
    cfg.sweep = Some(Sweep { axis: Axis::Sigma, values: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1] });
    for dt in [1.0, 50.0] {
        cfg.reservoir.dt_in = dt;
        let rep = run_qrc_sweep(&cfg)?;
        println!("dt_in = {dt}");
        for p in &rep.points {
            println!("  sigma = {:7.0e}  NMSE {:.4}", p.value.unwrap(), p.nmse.expect("nmse").mean);
        }
    }
    Ok(())
}
