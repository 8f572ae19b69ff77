//! Builds a general TMAP from matrices, lists structural violations, and
//! round-trips a valid model through JSON.

use mbtfit::model::{build_atmmpp, validate, AtmmppParams, TmapModel};
use nalgebra::{dmatrix, dvector};

fn main() -> mbtfit::Result<()> {
    // rows of D0 + D1 do not balance the death rates
    let bad = TmapModel::from_parts(
        dvector![1.0, 0.0],
        dmatrix![-1.0, 0.5; 0.0, -1.0],
        dmatrix![0.2, 0.0; 0.0, 0.3],
        dvector![0.1, 0.7],
    );
    match bad {
        Ok(m) => println!("violations: {:?}", validate(&m)),
        Err(e) => println!("rejected: {e}"),
    }
    let good = build_atmmpp(&AtmmppParams::new(vec![0.5], vec![0.1, 0.8], vec![2.0, 0.5])?)?;
    println!("valid: {}", validate(&good).is_empty());
    let json = good.to_json()?;
    println!("{json}");
    assert_eq!(TmapModel::from_json(&json)?.d0(), good.d0());
    Ok(())
}
