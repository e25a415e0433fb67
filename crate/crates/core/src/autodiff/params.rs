use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, Tensor};

/// How a parameter was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// Uniform in `±bound`.
    Uniform { bound: f64 },
    /// Supplied by the caller or loaded from a checkpoint.
    Given,
}

impl Init {
    fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let bound = match *self {
            Init::Zeros | Init::Given => return vec![0.0; len],
            Init::Glorot { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::Uniform { bound } => bound,
        };
        (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub init: Init,
}

/// Named trainable parameters, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<(String, Param)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter drawn from `init`.
    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<(), AutodiffError> {
        let data = init.sample(shape.iter().product(), rng);
        self.push(name, Tensor::from_parts(shape.to_vec(), data), init)
    }

    /// Adds a parameter with a given value.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        self.push(name, value, Init::Given)
    }

    fn push(&mut self, name: &str, value: Tensor, init: Init) -> Result<(), AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(AutodiffError::Checkpoint(format!("invalid parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push((
            name.to_string(),
            Param {
                value,
                grad: None,
                init,
            },
        ));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i].1)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(n, p)| (n.as_str(), &mut *p))
    }

    /// Stores the gradients of every parameter that was placed on the tape.
    pub fn absorb(&mut self, grads: &Gradients) {
        for (name, g) in grads.named() {
            if let Some(p) = self.get_mut(name) {
                p.grad = Some(g.clone());
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for (_, p) in &mut self.params {
            p.grad = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initializers_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamStore::new();
        ps.add("w", &[20, 30], Init::Glorot { fan_in: 20, fan_out: 30 }, &mut rng).unwrap();
        ps.add("b", &[30], Init::Zeros, &mut rng).unwrap();
        ps.add("a", &[16, 1], Init::Uniform { bound: (3.0f64 / 16.0).sqrt() }, &mut rng).unwrap();
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(ps.value("w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(ps.value("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(ps.value("a").unwrap().data().iter().all(|v| v.abs() <= 0.433013));
        assert_eq!(ps.num_values(), 600 + 30 + 16);
        assert_eq!(ps.names().collect::<Vec<_>>(), vec!["w", "b", "a"]);
    }

    #[test]
    fn names_are_unique() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            ps.insert("w", Tensor::scalar(2.0)),
            Err(AutodiffError::DuplicateParam(_))
        ));
    }
}
