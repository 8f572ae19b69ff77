//! Chooses the number of phases by AIC, cross-validation and MSIL on one
//! simulated sample. Fits are shared between CV and MSIL.

use mbtfit::estimation::FitConfig;
use mbtfit::model::{build_atmmpp, preset};
use mbtfit::selection::{aic, cross_validate_with, msil_select_with, partition_mk1, FoldFits};
use mbtfit::simulation::{aggregate_rates, simulate_sample, SimConfig};

fn main() -> mbtfit::Result<()> {
    let model = build_atmmpp(&preset("example1")?.params)?;
    let sample = simulate_sample(&model, &SimConfig::new(300, 15.0, 1.0, 3), 0)?;
    let n_values = [1, 2, 3, 4];
    let cfg = FitConfig::new(1).with_seeds(4).with_seed(3);

    let a = aic(&sample, &n_values, &cfg)?;
    println!("AIC  {:?} -> n = {:?}", a.scores, a.chosen_n);

    let mut fits = FoldFits::new(&sample, 5, &cfg)?;
    let cv = cross_validate_with(&mut fits, &n_values)?;
    println!("CV   {:?} -> n = {:?}", cv.scores, cv.chosen_n);

    let partition = partition_mk1(&aggregate_rates(&sample)?)?;
    let msil = msil_select_with(&mut fits, &n_values, partition)?;
    println!("MSIL (K = {}, M = {}) {:?} -> n = {:?}", partition.max_count, partition.horizon, msil.scores, msil.chosen_n);
    Ok(())
}
