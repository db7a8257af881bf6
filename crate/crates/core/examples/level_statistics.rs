//! Spacing-ratio statistics for the four-body and quadratic models at
//! half filling, then the crossover as the quadratic coupling grows.
//!
//! cargo run --release --example level_statistics

use syk_reservoir::chaoskit::RmtClass;
use syk_reservoir::ensembles::ModelSpec;
use syk_reservoir::harness::{run_levels, Axis, Command, ExperimentConfig, Sweep};

fn main() -> syk_reservoir::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Levels);
    cfg.sweep = None;
    cfg.realizations = 200;

    for (label, model) in [
        ("SYK4", ModelSpec::syk4(8)),
        ("SYK2", ModelSpec::syk2(8)),
        ("SYK4 + PHS term", ModelSpec::syk4(8).with_phs_correction(true)),
    ] {
        cfg.model = model;
        let rep = run_levels(&cfg)?;
        let s = rep.points[0].stats.as_ref().expect("levels");
        println!("{label:16} <r> = {:.4}  nearest class: {:?}", s.mean_r, RmtClass::nearest(s.mean_r));
    }

    cfg.model = ModelSpec::syk4(8);
    cfg.sweep = Some(Sweep { axis: Axis::KappaRatio, values: vec![0.1, 1.0, 5.0, 10.0, 30.0, 100.0, 300.0] });
    let rep = run_levels(&cfg)?;
    println!("\nkappa2/J4   <r>");
    for p in &rep.points {
        println!("{:9.1}   {:.4}", p.value.unwrap(), p.stats.as_ref().map_or(f64::NAN, |s| s.mean_r));
    }
    if let Some(b) = rep.boundaries {
        println!("last Wigner-Dyson point: {:?}, first Poisson point: {:?}", b.kappa_wd, b.kappa_poi);
    }
    Ok(())
}
