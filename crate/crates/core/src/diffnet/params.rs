//! Named parameter arrays with matching gradient accumulators.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Param {
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of named parameters. Iteration order is the
/// lexicographic name order, which makes optimizer updates deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) {
        self.map.insert(name.into(), param);
    }

    /// Adds a parameter initialized from a zero-mean uniform with
    /// scale `1/sqrt(fan_in)`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        let mut p = Param::zeros(shape);
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in p.values.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
        self.map.insert(name.into(), p);
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.map
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.map.values_mut() {
            for g in p.grad.iter_mut() {
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|p| p.len()).sum()
    }

    /// Merges another store under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (name, p) in other.map {
            self.map.insert(format!("{prefix}{name}"), p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_matches_shape_and_zeroes() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        s.insert_uniform("w", vec![3, 2], 2, &mut rng);
        let p = s.get_mut("w").unwrap();
        assert_eq!(p.grad.len(), p.values.len());
        p.grad[0] = 1.5;
        s.zero_grad();
        assert!(s.get("w").unwrap().grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_init_respects_fan_in_scale() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        s.insert_uniform("w", vec![10, 100], 100, &mut rng);
        let bound = 0.1;
        assert!(s.get("w").unwrap().values.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn iteration_order_is_name_sorted() {
        let mut s = ParamStore::new();
        s.insert("b", Param::zeros(vec![1]));
        s.insert("a", Param::zeros(vec![1]));
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, ["a", "b"]);
    }
}
