//! Probabilities of individual life vectors and the sample log-likelihood.

use mbtfit::likelihood::{count_kernels, life_vector_probability, log_likelihood, LifeVector, LifeVectorSample};
use mbtfit::model::{build_atmmpp, preset};

fn main() -> mbtfit::Result<()> {
    let model = build_atmmpp(&preset("example1")?.params)?;
    let kernels = count_kernels(&model, 1.0, 10)?;
    // 3 births then 1 birth then death; alive after 2 years; one censored year
    let vectors = [vec![3, 1, -1], vec![4, 2], vec![5, -2, 1]];
    for v in &vectors {
        let p = life_vector_probability(&model, &LifeVector::new(v.clone())?, &kernels)?;
        println!("p({v:?}) = {p:.6e}");
    }
    let sample = LifeVectorSample::from_entries(vectors.to_vec(), 1.0)?;
    let ll = log_likelihood(&model, &sample)?;
    println!("log-likelihood = {:.6}, per vector {:?}", ll.total, ll.per_vector);
    Ok(())
}
