//! Extinction probability of a family by the founder's phase and age,
//! checked against simulated family trees.

use mbtfit::demography::{
    extinction_curve, extinction_vector, mean_offspring, DEFAULT_EXTINCTION_MAX_ITER, DEFAULT_EXTINCTION_TOL,
};
use mbtfit::model::{build_atmmpp, preset};
use mbtfit::simulation::{extinction_frequency, TreeCaps};

fn main() -> mbtfit::Result<()> {
    let model = build_atmmpp(&preset("example1")?.params)?;
    let q = extinction_vector(&model, DEFAULT_EXTINCTION_TOL, DEFAULT_EXTINCTION_MAX_ITER)?;
    println!("mean offspring {:.3}, q by phase {:?}", mean_offspring(&model)?, q.as_slice());
    let ages: Vec<f64> = (0..=10).map(f64::from).collect();
    for (age, p) in ages.iter().zip(extinction_curve(&model, &q, &ages)?) {
        println!("  founder aged {age:>2}: {p:.4}");
    }
    let caps = TreeCaps {
        max_population: 500,
        ..TreeCaps::default()
    };
    let est = extinction_frequency(&model, 2000, &caps, 1)?;
    println!(
        "simulated newborn extinction {:.4} +- {:.4} (formula {:.4})",
        est.frequency,
        est.standard_error,
        model.alpha().dot(&q)
    );
    Ok(())
}
