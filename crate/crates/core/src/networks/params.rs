//! Named parameter arrays.
//!
//! Every network keeps its weights in a [`ParamSet`]; gradients and optimizer
//! moments are `ParamSet`s with the same layout, so updates are plain zips.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    /// Appends a tensor drawn from N(0, std²) and returns its index.
    pub fn push_gaussian<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> usize {
        let normal = Normal::new(0.0, std).expect("valid std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
        self.push(name, shape, data)
    }

    pub fn push_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        let len = shape.iter().product();
        self.push(name, shape, vec![T::zero(); len])
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> usize {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn get(&self, index: usize) -> &ParamTensor<T> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut ParamTensor<T> {
        &mut self.tensors[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// `(name, shape)` pairs in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect()
    }

    /// Reads the scalar at a flat index across all tensors.
    pub fn scalar(&self, mut index: usize) -> T {
        for t in &self.tensors {
            if index < t.data.len() {
                return t.data[index];
            }
            index -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_scalar(&mut self, mut index: usize, value: T) {
        for t in &mut self.tensors {
            if index < t.data.len() {
                t.data[index] = value;
                return;
            }
            index -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}
