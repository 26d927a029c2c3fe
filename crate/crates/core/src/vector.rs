//! Layered vectors: a flat `f64` buffer partitioned into layer blocks.
//!
//! Reductions run left to right inside a layer and then across layers, so
//! results never depend on thread count.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredVector {
    data: Vec<f64>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

fn offsets_of(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for d in dims {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::contract("a layered vector needs at least one layer"));
    }
    if dims.contains(&0) {
        return Err(Error::contract("layer dimensions must be positive"));
    }
    Ok(())
}

impl LayeredVector {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let offsets = offsets_of(dims);
        Ok(Self {
            data: vec![0.0; offsets[dims.len()]],
            dims: dims.to_vec(),
            offsets,
        })
    }

    /// Builds a vector from a flat buffer and its layer partition.
    pub fn from_flat(data: Vec<f64>, dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let offsets = offsets_of(dims);
        if offsets[dims.len()] != data.len() {
            return Err(Error::contract(format!(
                "flat buffer has {} coordinates but layer dims sum to {}",
                data.len(),
                offsets[dims.len()]
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("layered vector coordinates must be finite"));
        }
        Ok(Self {
            data,
            dims: dims.to_vec(),
            offsets,
        })
    }

    pub fn from_layers(layers: Vec<Vec<f64>>) -> Result<Self> {
        let dims: Vec<usize> = layers.iter().map(Vec::len).collect();
        Self::from_flat(layers.into_iter().flatten().collect(), &dims)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.data[self.offsets[l]..self.offsets[l + 1]]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[l], self.offsets[l + 1]);
        &mut self.data[a..b]
    }

    pub fn layers(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.dims.len()).map(move |l| self.layer(l))
    }

    pub fn is_compatible(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.dims.clone(),
                right: other.dims.clone(),
            })
        }
    }

    pub fn dot_layer(&self, other: &Self, l: usize) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(dot_slice(self.layer(l), other.layer(l)))
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok((0..self.layer_count())
            .map(|l| dot_slice(self.layer(l), other.layer(l)))
            .fold(0.0, |acc, x| acc + x))
    }

    pub fn norm_layer(&self, l: usize) -> f64 {
        dot_slice(self.layer(l), self.layer(l)).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.layers()
            .map(|x| dot_slice(x, x))
            .fold(0.0, |acc, x| acc + x)
            .sqrt()
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        (0..self.layer_count()).map(|l| self.norm_layer(l)).collect()
    }

    /// `c·self + y`.
    pub fn axpy(&self, c: f64, y: &Self) -> Result<Self> {
        self.ensure_compatible(y)?;
        let data = self
            .data
            .iter()
            .zip(&y.data)
            .map(|(x, y)| c * x + y)
            .collect();
        Ok(self.with_data(data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        other.axpy(-1.0, self)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.with_data(self.data.iter().map(|x| c * x).collect())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_compatible(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        self.with_data(vec![0.0; self.data.len()])
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        Self {
            data,
            dims: self.dims.clone(),
            offsets: self.offsets.clone(),
        }
    }

    /// I.i.d. `N(0, std²)` coordinates drawn from `stream`, in flat order.
    pub fn gaussian(stream: &RngStream, dims: &[usize], std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() {
            return Err(Error::contract(format!(
                "noise std must be finite and non-negative, got {std}"
            )));
        }
        let mut v = Self::zeros(dims)?;
        if std > 0.0 {
            v.data = stream.gaussians(v.data.len(), std);
        }
        Ok(v)
    }
}

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn norm_slice(a: &[f64]) -> f64 {
    dot_slice(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamTag;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(layers: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_layers(layers.iter().map(|l| l.to_vec()).collect()).unwrap()
    }

    // Neumaier-compensated sum; independent of the fixed-order reduction.
    fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for x in xs {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                c += (sum - t) + x;
            } else {
                c += (x - t) + sum;
            }
            sum = t;
        }
        sum + c
    }

    fn random_lv(rng: &mut ChaCha8Rng, dims: &[usize]) -> LayeredVector {
        let n: usize = dims.iter().sum();
        let data = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        LayeredVector::from_flat(data, dims).unwrap()
    }

    #[test]
    fn dot_hand_values() {
        assert_eq!(lv(&[&[1.0, 0.0, 2.0]]).dot(&lv(&[&[3.0, 1.0, 0.0]])).unwrap(), 3.0);
        let a = lv(&[&[3.0, 4.0]]);
        assert_eq!(a.dot(&a).unwrap(), 25.0);
    }

    #[test]
    fn dot_rejects_shape_mismatch() {
        let a = lv(&[&[1.0, 2.0]]);
        let b = lv(&[&[1.0], &[2.0]]);
        assert!(matches!(a.dot(&b), Err(Error::ShapeMismatch { .. })));
        assert!(a.axpy(1.0, &b).is_err());
    }

    #[test]
    fn dot_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [40, 10, 50];
        let a = random_lv(&mut rng, &dims);
        let b = random_lv(&mut rng, &dims);
        let oracle = compensated_sum(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y));
        let got = a.dot(&b).unwrap();
        assert!(((got - oracle) / oracle).abs() <= 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn norm_values() {
        assert_eq!(lv(&[&[3.0, 4.0]]).norm(), 5.0);
        assert_eq!(LayeredVector::zeros(&[3, 2]).unwrap().norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_lv(&mut rng, &[300, 700]);
        let oracle = compensated_sum(a.as_slice().iter().map(|x| x * x)).sqrt();
        assert!(((a.norm() - oracle) / oracle).abs() <= 1e-12);
        assert_eq!(a.layer_norms().len(), 2);
    }

    #[test]
    fn axpy_cases() {
        let y = lv(&[&[1.0, 1.0]]);
        let x = lv(&[&[2.0, 4.0]]);
        assert_eq!(x.axpy(0.0, &y).unwrap(), y);
        assert_eq!(y.scale(-1.0).axpy(1.0, &y).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(x.axpy(-0.5, &y).unwrap().as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn rejects_non_finite_and_bad_dims() {
        assert!(LayeredVector::from_flat(vec![f64::NAN], &[1]).is_err());
        assert!(LayeredVector::from_flat(vec![1.0, 2.0], &[1]).is_err());
        assert!(LayeredVector::zeros(&[]).is_err());
        assert!(LayeredVector::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn gaussian_zero_std_and_negative() {
        let s = RngStream::aggregate(1, 0, StreamTag::Test);
        let z = LayeredVector::gaussian(&s, &[3, 4], 0.0).unwrap();
        assert!(z.as_slice().iter().all(|&x| x == 0.0));
        assert!(LayeredVector::gaussian(&s, &[3], -1.0).is_err());
    }

    #[test]
    fn gaussian_statistics() {
        let s = RngStream::aggregate(9, 0, StreamTag::Test);
        let v = LayeredVector::gaussian(&s, &[5000, 5000], 2.0).unwrap();
        let n = v.total_dim() as f64;
        let mean = v.as_slice().iter().sum::<f64>() / n;
        let var = v.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() / 2.0 < 0.03, "std {}", var.sqrt());
        let again = LayeredVector::gaussian(&s, &[5000, 5000], 2.0).unwrap();
        assert_eq!(v, again);
    }

    proptest! {
        #[test]
        fn dot_is_sum_of_layer_dots(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let dims = [5, 4, 3];
            let a = LayeredVector::from_flat(a, &dims).unwrap();
            let b = LayeredVector::from_flat(b, &dims).unwrap();
            let total = a.dot(&b).unwrap();
            let per_layer: f64 = (0..3).map(|l| a.dot_layer(&b, l).unwrap()).sum();
            prop_assert!((total - per_layer).abs() <= 1e-12 * total.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn norm_is_homogeneous(
            x in proptest::collection::vec(-10.0f64..10.0, 8),
            c in -5.0f64..5.0,
        ) {
            let x = LayeredVector::from_flat(x, &[3, 5]).unwrap();
            let scaled = x.axpy(c, &x.zeros_like()).unwrap();
            let expect = c.abs() * x.norm();
            prop_assert!((scaled.norm() - expect).abs() <= 1e-12 * expect.max(1e-300));
        }
    }
}
