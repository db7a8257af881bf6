//! Disorder-averaged spectral form factor and its plateau time.
//!
//! cargo run --release --example spectral_form_factor

use syk_reservoir::ensembles::ModelSpec;
use syk_reservoir::harness::{run_sff, Command, ExperimentConfig};

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Sff);
    cfg.realizations = 1000;
    cfg.sff.points = 120;
    for (label, model) in [("SYK4", ModelSpec::syk4(8)), ("SYK2", ModelSpec::syk2(8))] {
        cfg.model = model;
        let rep = run_sff(&cfg)?;
        let p = &rep.points[0];
        let curve = p.curve.as_ref().expect("curve");
        println!("{label}: plateau 1/{} , t_p = {:?}", curve.sector_dim, p.plateau_time);
        for (t, k) in curve.t_grid.iter().zip(&curve.k).step_by(10) {
            println!("  t = {t:10.3}  N*K = {:.4}", k * curve.sector_dim as f64);
        }
    }
    Ok(())
}
