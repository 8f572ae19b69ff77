//! Simulates life vectors from a preset, optionally censors them, and writes
//! both data formats to a directory (default: a temporary one).

use mbtfit::io::{life_vectors_csv, write_atomic, write_rates};
use mbtfit::model::{build_atmmpp, preset};
use mbtfit::rng::stream;
use mbtfit::simulation::{aggregate_rates, censor, simulate_sample, SimConfig};

fn main() -> mbtfit::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("mbtfit-sim"));
    let p = preset("example2")?;
    let model = build_atmmpp(&p.params)?;
    let sample = simulate_sample(&model, &SimConfig::new(p.sample_size, p.horizon, 1.0, 7), 0)?;
    let censored = censor(&sample, 0.1, &mut stream(7, &[42]))?;
    for v in sample.vectors().iter().take(5) {
        println!("{:?}", v.entries());
    }
    write_atomic(&out.join("vectors.csv"), life_vectors_csv(&sample).as_bytes())?;
    write_atomic(&out.join("censored.csv"), life_vectors_csv(&censored).as_bytes())?;
    let rates = aggregate_rates(&sample)?;
    write_rates(&out.join("rates.csv"), &rates)?;
    println!("{} vectors, {} rate rows -> {}", sample.len(), rates.len(), out.display());
    Ok(())
}
