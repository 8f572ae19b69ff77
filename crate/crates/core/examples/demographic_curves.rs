//! Mortality, fertility and survival curves of the built-in examples, and
//! the per-year <-> per-class rate conversion.

use mbtfit::demography::{curves, rates_model_equivalents, AgeGrid};
use mbtfit::model::{build_atmmpp, preset, PRESET_NAMES};

fn main() -> mbtfit::Result<()> {
    let grid = AgeGrid::classes(10, 1.0)?;
    for name in PRESET_NAMES {
        let model = build_atmmpp(&preset(name)?.params)?;
        let c = curves(&model, &grid)?;
        println!("{name}");
        println!("  age  survival  mortality  fertility");
        for (x, age) in c.ages.iter().enumerate() {
            println!("  {age:>3}  {:.4}    {:.4}     {:.4}", c.survival[x], c.mortality[x], c.fertility[x]);
        }
    }
    // five-year classes from yearly rates
    let (d5, b5) = rates_model_equivalents(0.4, 0.05, 5.0)?;
    println!("yearly (b = 0.4, d = 0.05) over 5 years: d = {d5:.4}, b = {b5:.4}");
    Ok(())
}
