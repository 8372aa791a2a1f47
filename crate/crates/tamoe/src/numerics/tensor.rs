//! Dense row-major tensor over f64.
//!
//! This is the carrier for all model math. Gradient-bearing operations live
//! on the tape in [`crate::numerics::graph`]; the methods here are plain
//! value-space helpers shared by the tape and by test oracles.

use rand::RngExt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Dim {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn full(shape: Vec<usize>, x: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![x; n],
        }
    }

    /// Entries drawn i.i.d. from uniform[lo, hi].
    pub fn rand_uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl RngExt) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix ([r, c]) or vector length ([n]).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Scalar value of a [1] tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    /// Row slice of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "non-finite value in {context} (shape {:?})",
                self.shape
            )))
        }
    }

    pub fn approx_eq(&self, other: &Tensor, tol: f64) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn add_in_place(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, x: f64) {
        self.data.iter_mut().for_each(|v| *v = x);
    }
}

/// Concatenate along `axis`. All non-axis extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
    let rank = first.shape.len();
    if axis >= rank {
        return Err(Error::Domain(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    let mut out_shape = first.shape.clone();
    for p in &parts[1..] {
        if p.shape.len() != rank
            || p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(Error::Dim {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
    }
    out_shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();

    // Row-major copy: outer = product of dims before axis, inner = after.
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat`]: split along `axis` into chunks of the given extents.
pub fn split(t: &Tensor, axis: usize, extents: &[usize]) -> Result<Vec<Tensor>> {
    if axis >= t.shape.len() || extents.iter().sum::<usize>() != t.shape[axis] {
        return Err(Error::Dim {
            op: "split",
            lhs: t.shape.clone(),
            rhs: extents.to_vec(),
        });
    }
    let outer: usize = t.shape[..axis].iter().product();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let total_block: usize = t.shape[axis] * inner;
    let mut out = Vec::with_capacity(extents.len());
    let mut offset = 0;
    for &e in extents {
        let mut shape = t.shape.clone();
        shape[axis] = e;
        let mut data = Vec::with_capacity(outer * e * inner);
        for o in 0..outer {
            let start = o * total_block + offset;
            data.extend_from_slice(&t.data[start..start + e * inner]);
        }
        out.push(Tensor::from_vec(shape, data)?);
        offset += e * inner;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn concat_axis0_vectors() {
        let a = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![2.0]).unwrap();
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[2]);
        assert_eq!(c.data(), &[1.0, 2.0]);
    }

    #[test]
    fn concat_axis1_matrices() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![9.0, 8.0]).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn concat_rejects_extent_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![3, 3]);
        assert!(concat(&[&a, &b], 0).is_err());
    }

    #[test]
    fn split_round_trips_concat() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for axis in 0..2 {
            let a = Tensor::rand_uniform(vec![3, 4], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(
                if axis == 0 { vec![2, 4] } else { vec![3, 2] },
                -1.0,
                1.0,
                &mut rng,
            );
            let joined = concat(&[&a, &b], axis).unwrap();
            let parts = split(&joined, axis, &[a.shape()[axis], b.shape()[axis]]).unwrap();
            assert_eq!(parts[0], a);
            assert_eq!(parts[1], b);
        }
    }

    #[test]
    fn rand_uniform_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::rand_uniform(vec![100], -0.1, 0.1, &mut rng);
        assert!(t.data().iter().all(|&x| (-0.1..=0.1).contains(&x)));
    }
}
