//! Site occupations inside each input interval, one line per virtual node.
//!
//! cargo run --release --example readout_trace

use syk_reservoir::harness::{run_trace, Command, ExperimentConfig};

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Trace);
    cfg.trace.steps = 3;
    let rep = run_trace(&cfg)?;
    let rows = &rep.traces[0].1;
    let n = cfg.model.n_modes;
    for chunk in rows.chunks(n) {
        let occ: Vec<String> = chunk.iter().map(|r| format!("{:.3}", r.occupation)).collect();
        println!("k={} v={:2} t={:6.2}  [{}]", chunk[0].step, chunk[0].v, chunk[0].t, occ.join(", "));
    }
    Ok(())
}
