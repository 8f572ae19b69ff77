//! The finite class partition behind MSIL: class counts, masses under a
//! model, and where individual life vectors land.

use mbtfit::likelihood::msil::{class_masses, class_of, enumerate_classes, closed_form_class_count};
use mbtfit::likelihood::LifeVector;
use mbtfit::model::{build_atmmpp, preset};

fn main() -> mbtfit::Result<()> {
    let model = build_atmmpp(&preset("example1")?.params)?;
    let (k, m) = (2, 3);
    let set = enumerate_classes(k, m)?;
    println!(
        "K = {k}, M = {m}: {} classes (closed-form count: {})",
        set.classes.len(),
        closed_form_class_count(k, m)
    );
    let masses = class_masses(&model, 1.0, k, m)?;
    println!("total mass {:.15}", masses.iter().sum::<f64>());
    let mut top: Vec<_> = set.classes.iter().zip(&masses).collect();
    top.sort_by(|a, b| b.1.total_cmp(a.1));
    for (class, mass) in top.iter().take(5) {
        println!("  {:?}: {mass:.5}", class.entries());
    }
    for v in [vec![0, 5, 1, 2, 7], vec![1, -1], vec![-2, 3, -1]] {
        println!("{v:?} -> {:?}", class_of(&LifeVector::new(v.clone())?, k, m));
    }
    Ok(())
}
