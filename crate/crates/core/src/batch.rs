use ficm_numerics::{Real, Tensor};

use crate::error::{shape_err, Result};

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Real>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = items.first() else {
        return shape_err("stack", "no tensors to stack");
    };
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != shape.as_slice() {
            return shape_err("stack", format!("{:?} vs {:?}", t.shape(), shape));
        }
        data.extend_from_slice(t.data());
    }
    let mut out_shape = vec![items.len()];
    out_shape.extend_from_slice(&shape);
    Ok(Tensor::new(&out_shape, data)?)
}

/// Splits the leading axis of `t` back into separate tensors.
pub fn unstack<T: Real>(t: &Tensor<T>) -> Vec<Tensor<T>> {
    let n = t.shape()[0];
    let inner = &t.shape()[1..];
    let per = t.numel() / n;
    t.data()
        .chunks(per)
        .map(|c| Tensor::new(inner, c.to_vec()).expect("consistent split"))
        .collect()
}

/// Mean squared difference of each leading-axis slice, accumulated in f64.
pub fn per_sample_mse<T: Real>(a: &[T], b: &[T], n: usize) -> Vec<f64> {
    let per = a.len() / n;
    a.chunks(per)
        .zip(b.chunks(per))
        .map(|(x, y)| {
            let s: f64 = x
                .iter()
                .zip(y)
                .map(|(&p, &q)| {
                    let d = p.f64() - q.f64();
                    d * d
                })
                .sum();
            s / per as f64
        })
        .collect()
}
