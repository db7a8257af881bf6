//! Distance between two trajectories started from different half-filling
//! states and driven by the same inputs.
//!
//! cargo run --release --example echo_state

use syk_reservoir::ensembles::ModelSpec;
use syk_reservoir::harness::{run_esp, Command, ExperimentConfig};

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Esp);
    cfg.realizations = 20;
    cfg.esp.steps = 300;
    for (label, model) in [("SYK4", ModelSpec::syk4(6)), ("SYK2", ModelSpec::syk2(6))] {
        cfg.model = model;
        let rep = run_esp(&cfg)?;
        for p in &rep.points {
            println!("{label} dt_in = {}", p.value.unwrap());
            for k in [0, 4, 49, 99, 299] {
                println!("  k = {:3}  median {:.3e}  mean {:.3e}", k + 1, p.median[k], p.mean[k]);
            }
        }
    }
    Ok(())
}
