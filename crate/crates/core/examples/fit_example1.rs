//! Simulates the first artificial example and fits a three-phase model to
//! both the individual life vectors and the aggregated global rates.

use std::time::Instant;

use mbtfit::demography::{curves, AgeGrid};
use mbtfit::estimation::{fit_global, fit_individual, FitConfig};
use mbtfit::model::{build_atmmpp, preset};
use mbtfit::simulation::{aggregate_rates, simulate_sample, SimConfig};

fn main() -> mbtfit::Result<()> {
    let p = preset("example1")?;
    let truth = build_atmmpp(&p.params)?;
    let cfg = SimConfig::new(p.sample_size, p.horizon, 1.0, 1);
    let sample = simulate_sample(&truth, &cfg, 0)?;
    let rates = aggregate_rates(&sample)?;
    let seeds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(25);
    let fit_cfg = FitConfig::new(3).with_seeds(seeds).with_seed(1);

    let t = Instant::now();
    let ind = fit_individual(&sample, &fit_cfg)?;
    println!("individual fit: {:.2?}, -logL = {:.4}", t.elapsed(), ind.objective);
    let t = Instant::now();
    let glo = fit_global(&rates, &fit_cfg)?;
    println!("global fit:     {:.2?}, F = {:.6}", t.elapsed(), glo.objective);
    let evals: usize = ind.seeds.iter().map(|s| s.evaluations).sum();
    println!("likelihood evaluations: {evals}");

    let grid = AgeGrid::classes(rates.len(), 1.0)?;
    let c_true = curves(&truth, &grid)?;
    let c_ind = curves(&ind.model()?, &grid)?;
    let c_glo = curves(&glo.model()?, &grid)?;
    println!("age  surv   d_true d_ind  d_glo  b_true b_ind  b_glo");
    for (x, age) in grid.ages().iter().enumerate() {
        println!(
            "{age:>3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
            c_true.survival[x],
            c_true.mortality[x],
            c_ind.mortality[x],
            c_glo.mortality[x],
            c_true.fertility[x],
            c_ind.fertility[x],
            c_glo.fertility[x]
        );
    }
    println!("individual: {:?}", ind.params);
    println!("global:     {:?}", glo.params);
    Ok(())
}
