use crate::error::{Error, Result};

/// Dense row-major array of 64-bit floats.
///
/// Rank 0 (empty shape) is a scalar, rank 1 a vector, rank 2 a matrix.
/// Higher ranks are not needed by any consumer in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Build an array, checking the shape/data contract and rejecting
    /// non-finite entries.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Invalid(format!(
                "shape {:?} implies {} entries, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("zero-sized dimension in {shape:?}")));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("array entry {bad}")));
        }
        Ok(DenseArray { shape, data })
    }

    /// Internal constructor for values produced by tape kernels; skips the
    /// finiteness scan (inputs are screened at the boundary instead).
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        DenseArray { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        DenseArray {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        DenseArray {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        DenseArray {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        DenseArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        DenseArray::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element array.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, i: usize) -> f64 {
        self.data[i]
    }

    /// Matrix element accessor (rank-2 only).
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

// ---- kernels used by the tape evaluator -------------------------------
//
// All reductions run in a fixed left-to-right order so that repeated
// evaluation is bitwise reproducible within one build.

pub(crate) fn k_zip(a: &DenseArray, b: &DenseArray, f: impl Fn(f64, f64) -> f64) -> DenseArray {
    debug_assert_eq!(a.shape, b.shape);
    let data = a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
    DenseArray::raw(a.shape.clone(), data)
}

pub(crate) fn k_map(a: &DenseArray, f: impl Fn(f64) -> f64) -> DenseArray {
    DenseArray::raw(a.shape.clone(), a.data.iter().map(|x| f(*x)).collect())
}

/// Row-major matrix product. Rows are independent, so the rayon split used
/// for large products cannot change the arithmetic order within a row.
pub(crate) fn k_matmul(a: &DenseArray, b: &DenseArray) -> DenseArray {
    use rayon::prelude::*;

    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    debug_assert_eq!(b.shape[0], k);
    let mut out = vec![0.0; m * n];
    let row_job = |i: usize, row: &mut [f64]| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b.data[l * n..(l + 1) * n];
            for (o, &b_lj) in row.iter_mut().zip(b_row) {
                *o += a_il * b_lj;
            }
        }
    };
    if m * k * n >= 1 << 16 && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| row_job(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_job(i, row);
        }
    }
    DenseArray::raw(vec![m, n], out)
}

pub(crate) fn k_transpose(a: &DenseArray) -> DenseArray {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    DenseArray::raw(vec![n, m], out)
}

pub(crate) fn k_sum(a: &DenseArray) -> f64 {
    let mut acc = 0.0;
    for v in &a.data {
        acc += v;
    }
    acc
}

pub(crate) fn k_sum_rows(a: &DenseArray) -> DenseArray {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(&a.data[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
    DenseArray::raw(vec![n], out)
}

pub(crate) fn k_broadcast_rows(a: &DenseArray, rows: usize) -> DenseArray {
    let n = a.data.len();
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(&a.data);
    }
    DenseArray::raw(vec![rows, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_contract() {
        assert!(DenseArray::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(DenseArray::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseArray::from_vec(vec![2], vec![f64::NAN, 0.0]).is_err());
        assert!(DenseArray::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let eye = DenseArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = DenseArray::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let y = k_matmul(&eye, &x);
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = DenseArray::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = k_transpose(&a);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(k_transpose(&t), a);
    }

    #[test]
    fn row_reductions() {
        let a = DenseArray::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(k_sum(&a), 10.0);
        assert_eq!(k_sum_rows(&a).data(), &[4.0, 6.0]);
        assert_eq!(
            k_broadcast_rows(&DenseArray::vector(vec![1.0, 2.0]), 2).data(),
            &[1.0, 2.0, 1.0, 2.0]
        );
    }
}
