//! Bootstrap and delta-method pointwise bands for the mortality curve of an
//! individual-data fit.

use mbtfit::demography::{curves, AgeGrid};
use mbtfit::estimation::{fit_individual, FitConfig};
use mbtfit::model::{build_atmmpp, preset};
use mbtfit::simulation::{simulate_sample, SimConfig};
use mbtfit::uncertainty::{band_bootstrap, band_delta, BandOptions};

fn main() -> mbtfit::Result<()> {
    let truth = build_atmmpp(&preset("example1")?.params)?;
    let sample = simulate_sample(&truth, &SimConfig::new(300, 15.0, 1.0, 5), 0)?;
    let grid = AgeGrid::classes(8, 1.0)?;
    let cfg = FitConfig::new(2).with_seeds(3);
    let mortality = |m: &mbtfit::model::TmapModel| Ok(curves(m, &grid)?.mortality);

    let boot = band_bootstrap(
        &sample,
        grid.ages(),
        |s| fit_individual(s, &cfg)?.model(),
        mortality,
        &BandOptions::new(10, 1),
    )?;
    let fit = fit_individual(&sample, &cfg)?;
    let delta = band_delta(&sample, &fit.params, grid.ages(), mortality, 0.95)?;
    println!("age  bootstrap            delta");
    for (x, age) in grid.ages().iter().enumerate() {
        println!(
            "{age:>3}  [{:.3}, {:.3}]  [{:.3}, {:.3}]",
            boot.lower[x], boot.upper[x], delta.lower[x], delta.upper[x]
        );
    }
    println!("mean widths: bootstrap {:.4}, delta {:.4}", boot.mean_width(), delta.mean_width());
    Ok(())
}
