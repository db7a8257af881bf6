//! A reservoir driven by one fixed Haar unitary, trained directly with the
//! library pieces instead of the harness.
//!
//! cargo run --release --example haar_baseline

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syk_reservoir::reservoir::{vacuum, Reservoir, ReservoirConfig};
use syk_reservoir::tasks::{evaluate, gen_inputs, Ridge, SplitSpec, TaskSpec};

fn main() -> syk_reservoir::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let split = SplitSpec::desk();
    let reservoir = Reservoir::haar(ReservoirConfig::new(1.0), 5, &mut rng)?;
    for task in [TaskSpec::stm(0), TaskSpec::stm(1), TaskSpec::stm(2), TaskSpec::narma(2)] {
        let inputs = gen_inputs(&task, split.total(), &mut rng)?;
        let traj = reservoir.clone().run_sequence(&inputs.encoded, &vacuum(5)?, &mut rng)?;
        let targets = task.targets(&inputs)?;
        let m = evaluate(&traj.features, &task, &targets, &split, Ridge::Auto)?;
        println!("{:5} {:6}  R2 {:.4}  NMSE {:.4}", m.task, m.params, m.r_squared.unwrap_or(f64::NAN), m.nmse.unwrap_or(f64::NAN));
    }
    Ok(())
}
