//! NARMA-2 and one-step memory versus the input interval, with the Haar
//! reservoir as the long-time reference.
//!
//! cargo run --release --example temporal_edge [realizations]

use syk_reservoir::harness::{run_qrc_sweep, BackendKind, Command, ExperimentConfig};

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Qrc);
    cfg.realizations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let rep = run_qrc_sweep(&cfg)?;
    for task in &cfg.tasks {
        println!("{} ({})", task.kind.name(), task.kind.primary_metric().name());
        for p in rep.points.iter().filter(|p| &p.task == task) {
            let s = p.primary().expect("metric");
            let at = p.value.map_or("any".to_string(), |v| v.to_string());
            let who = if p.backend == BackendKind::Haar { "haar" } else { "syk" };
            println!("  {who:4} dt_in = {at:>5}  {:.4} ± {:.4}", s.mean, s.std);
        }
    }
    println!("worst trace defect {:.1e}", rep.hygiene.max_trace_defect);
    Ok(())
}
