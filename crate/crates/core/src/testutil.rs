use rand::Rng;

use crate::error::Result;
use crate::gradcheck;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn finite_diff_check<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    gradcheck::check(inputs, h, usize::MAX, f)
        .unwrap()
        .worst_relative
}
