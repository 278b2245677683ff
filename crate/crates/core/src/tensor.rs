use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Dense `d^k` array of k-th order partial derivatives, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivTensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl DerivTensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            data: vec![0.0; dim.pow(order as u32)],
        }
    }

    pub fn from_vec(dim: usize, order: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim.pow(order as u32), "tensor size mismatch");
        Self { dim, order, data }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self::from_vec(v.len(), 1, v.as_slice().to_vec())
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let d = m.nrows();
        let mut t = Self::zeros(d, 2);
        for i in 0..d {
            for j in 0..d {
                t.data[i * d + j] = m[(i, j)];
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let k = self.flat(idx);
        self.data[k] = v;
    }

    /// Adds `w * x^{⊗k}`.
    pub fn add_outer_power(&mut self, x: &[f64], w: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        for (flat, slot) in self.data.iter_mut().enumerate() {
            let mut rem = flat;
            let mut prod = w;
            for _ in 0..self.order {
                prod *= x[rem % d];
                rem /= d;
            }
            *slot += prod;
        }
    }

    pub fn add_assign(&mut self, other: &DerivTensor) {
        assert_eq!((self.dim, self.order), (other.dim, other.order));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `<T, h^{⊗k}>`.
    pub fn contract_power(&self, h: &[f64]) -> f64 {
        let d = self.dim;
        self.data
            .iter()
            .enumerate()
            .map(|(flat, &t)| {
                let mut rem = flat;
                let mut prod = t;
                for _ in 0..self.order {
                    prod *= h[rem % d];
                    rem /= d;
                }
                prod
            })
            .sum()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1);
        DVector::from_column_slice(&self.data)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2);
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest deviation between entries related by an index permutation.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        let mut idx = vec![0usize; self.order];
        for flat in 0..self.data.len() {
            let mut rem = flat;
            for slot in idx.iter_mut().rev() {
                *slot = rem % d;
                rem /= d;
            }
            let v = self.data[flat];
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            worst = worst.max((v - self.get(&sorted)).abs());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_power_contracts_to_power_of_inner_product() {
        let x = [0.3, -1.2];
        let h = [2.0, 0.5];
        let mut t = DerivTensor::zeros(2, 4);
        t.add_outer_power(&x, 1.5);
        let ip: f64 = x.iter().zip(&h).map(|(a, b)| a * b).sum();
        assert!((t.contract_power(&h) - 1.5 * ip.powi(4)).abs() < 1e-12);
        assert_eq!(t.symmetry_defect(), 0.0);
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(DerivTensor::from_matrix(&m).to_matrix(), m);
        assert_eq!(DerivTensor::from_matrix(&m).get(&[0, 1]), 2.0);
    }
}
