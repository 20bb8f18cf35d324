use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Fills a tensor with values drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, scale: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-scale..=scale)).collect();
        Self {
            shape,
            data,
            grad: None,
        }
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

    /// Rows when viewed as a matrix; a rank-1 tensor is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Ordered collection of named parameters plus the optimizer state that
/// travels with them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    moments: Vec<Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let len = tensor.len();
        let (idx, _) = self.params.insert_full(name, tensor);
        self.moments.push(Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn at(&self, idx: usize) -> &Tensor {
        &self.params[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            let g = t.grad_mut();
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `scale * buf` into the gradient of every parameter.
    pub fn accumulate(&mut self, buf: &GradBuf, scale: f64) -> Result<()> {
        if buf.0.len() != self.params.len() {
            return Err(Error::shape(
                "ParamStore::accumulate",
                format!("buffer has {} entries, store has {}", buf.0.len(), self.params.len()),
            ));
        }
        for ((name, t), g) in self.params.iter_mut().zip(&buf.0) {
            if g.len() != t.len() {
                return Err(Error::shape(
                    "ParamStore::accumulate",
                    format!("gradient for `{name}` has {} values, expected {}", g.len(), t.len()),
                ));
            }
            for (acc, v) in t.grad_mut().iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
        Ok(())
    }

    /// Parameter values only, with gradients and optimizer state dropped.
    pub fn snapshot(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, t) in &self.params {
            let mut t = t.clone();
            t.clear_grad();
            // names are unique in `self`
            let _ = out.insert(name.clone(), t);
        }
        out
    }

    pub(crate) fn moments_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Vec<f64>, &mut Vec<f64>)> {
        self.params
            .iter_mut()
            .zip(self.moments.iter_mut())
            .map(|((n, t), m)| (n.as_str(), t, &mut m.first, &mut m.second))
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }
}

/// Gradient scratch space aligned with a [`ParamStore`]'s insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuf(pub Vec<Vec<f64>>);

impl GradBuf {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuf(store.iter().map(|(_, t)| vec![0.0; t.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &GradBuf) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn grad_has_data_shape() {
        let mut t = Tensor::zeros(vec![3, 2]);
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), 6);
    }

    #[test]
    fn store_keeps_insertion_order_and_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.insert("z", Tensor::zeros(vec![1])).unwrap();
        s.insert("a", Tensor::zeros(vec![2])).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["z", "a"]);
        assert!(matches!(
            s.insert("z", Tensor::zeros(vec![1])),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn accumulate_scales_and_sums() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        let buf = GradBuf(vec![vec![1.0, -2.0]]);
        s.accumulate(&buf, 0.5).unwrap();
        s.accumulate(&buf, 0.5).unwrap();
        assert_eq!(s.get("w").unwrap().grad().unwrap(), &[1.0, -2.0]);
    }
}
