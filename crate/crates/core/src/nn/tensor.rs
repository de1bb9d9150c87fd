use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", numel, data.len()));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("Tensor::set_grad", self.data.len(), grad.len()));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn accumulate_grad(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::accumulate_grad",
                self.data.len(),
                grad.len(),
            ));
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Interprets the tensor as a matrix: rank-1 tensors are a single row.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let cols = *other.last().unwrap_or(&1);
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Named parameter tensors with a deterministic (sorted) iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_same_structure(&self, other: &ParameterSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape(
                "parameter set structure",
                format!("{} tensors", self.params.len()),
                format!("{} tensors", other.params.len()),
            ));
        }
        for ((na, ta), (nb, tb)) in self.params.iter().zip(other.params.iter()) {
            if na != nb {
                return Err(Error::shape("parameter set structure", na, nb));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::shape(
                    format!("parameter `{na}`"),
                    format!("{:?}", ta.shape()),
                    format!("{:?}", tb.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Prefixes every name with `prefix/`.
    pub fn namespaced(&self, prefix: &str) -> ParameterSet {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (format!("{prefix}/{k}"), v.clone()))
                .collect(),
        }
    }

    /// Extracts the entries under `prefix/`, stripping the prefix.
    pub fn extract(&self, prefix: &str) -> ParameterSet {
        let lead = format!("{prefix}/");
        ParameterSet {
            params: self
                .params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&lead).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: ParameterSet) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Euclidean distance between two parameter sets of identical structure.
    pub fn distance(&self, other: &ParameterSet) -> Result<f64> {
        self.check_same_structure(other)?;
        let sq: f64 = self
            .params
            .values()
            .zip(other.params.values())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        Ok(sq.sqrt())
    }
}

/// Polyak averaging `target <- tau * source + (1 - tau) * target`.
pub fn soft_update(target: &mut ParameterSet, source: &ParameterSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "soft update rate must lie in [0, 1], got {tau}"
        )));
    }
    target.check_same_structure(source)?;
    for ((_, t), (_, s)) in target.iter_mut().zip(source.iter()) {
        if tau == 1.0 {
            t.data_mut().copy_from_slice(s.data());
        } else if tau != 0.0 {
            for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
                *tv = tau * sv + (1.0 - tau) * *tv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![v, v])).unwrap();
        p
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = single(1.0);
        assert!(p.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn soft_update_endpoints() {
        let mut t = single(1.0);
        let s = single(0.0);
        soft_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, single(1.0));
        soft_update(&mut t, &s, 0.005).unwrap();
        assert!((t.get("w").unwrap().data()[0] - 0.995).abs() < 1e-15);
        soft_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn soft_update_geometric_convergence() {
        let mut t = single(3.0);
        let s = single(-1.0);
        let tau = 0.1;
        let mut prev = t.distance(&s).unwrap();
        for _ in 0..20 {
            soft_update(&mut t, &s, tau).unwrap();
            let d = t.distance(&s).unwrap();
            assert!((d - (1.0 - tau) * prev).abs() < 1e-12);
            prev = d;
        }
    }

    #[test]
    fn soft_update_structure_mismatch() {
        let mut t = single(1.0);
        let mut s = ParameterSet::new();
        s.insert("v", Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert!(soft_update(&mut t, &s, 0.5).is_err());
        assert!(soft_update(&mut t, &single(0.0), 1.5).is_err());
    }

    #[test]
    fn namespacing_round_trip() {
        let p = single(2.0);
        let ns = p.namespaced("actor");
        assert!(ns.get("actor/w").is_some());
        assert_eq!(ns.extract("actor"), p);
    }
}
