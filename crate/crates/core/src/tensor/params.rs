//! Named, ordered collections of trainable tensors.

use std::collections::HashMap;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// One network's trainable state: ordered (name, value, gradient) triples.
/// Order is stable across clone, save and load.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.by_name.insert(name.clone(), self.names.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.by_name.get(name)?;
        Some(&mut self.values[i])
    }

    pub fn grad_of(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).map(|&i| &self.grads[i])
    }

    pub fn value_at(&self, idx: usize) -> &Tensor<T> {
        &self.values[idx]
    }

    pub fn get_mut_at(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.values[idx]
    }

    pub fn grad_at(&self, idx: usize) -> &Tensor<T> {
        &self.grads[idx]
    }

    pub fn grad_at_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.grads[idx]
    }

    pub fn name_at(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &Tensor<T>)> {
        (0..self.len()).map(move |i| (self.names[i].as_str(), &self.values[i], &self.grads[i]))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(T::ZERO);
        }
    }

    pub fn check_same_structure(&self, other: &ParamSet<T>, context: &str) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid(format!(
                "{context}: parameter sets differ in names or order"
            )));
        }
        for i in 0..self.len() {
            if self.values[i].shape() != other.values[i].shape() {
                return Err(Error::shape(
                    format!("{context} ({})", self.names[i]),
                    self.values[i].shape(),
                    other.values[i].shape(),
                ));
            }
        }
        Ok(())
    }

    /// Elementwise `self - other`, carried in f64 so that
    /// `other.axpy(1.0, &delta)` reproduces `self` bit-exactly.
    pub fn delta(&self, other: &ParamSet<T>) -> Result<ParamDelta> {
        self.check_same_structure(other, "delta")?;
        let entries = (0..self.len())
            .map(|i| {
                let d: Vec<f64> = self.values[i]
                    .data()
                    .iter()
                    .zip(other.values[i].data())
                    .map(|(&a, &b)| a.to_f64() - b.to_f64())
                    .collect();
                (self.names[i].clone(), self.values[i].shape().to_vec(), d)
            })
            .collect();
        Ok(ParamDelta { entries })
    }

    /// self += scale * delta, computed through f64.
    pub fn axpy(&mut self, scale: f64, delta: &ParamDelta) -> Result<()> {
        if delta.entries.len() != self.len() {
            return Err(Error::invalid("axpy: delta entry count mismatch"));
        }
        for (i, (name, shape, d)) in delta.entries.iter().enumerate() {
            if name != &self.names[i] || shape != self.values[i].shape() {
                return Err(Error::invalid(format!(
                    "axpy: entry {i} mismatch ({name} vs {})",
                    self.names[i]
                )));
            }
            for (v, dv) in self.values[i].data_mut().iter_mut().zip(d) {
                *v = T::from_f64(v.to_f64() + scale * dv);
            }
        }
        Ok(())
    }

    /// Install a delta as the gradient of every entry (used for the
    /// meta-learning pseudo-gradient).
    pub fn set_grads_from_delta(&mut self, delta: &ParamDelta) -> Result<()> {
        if delta.entries.len() != self.len() {
            return Err(Error::invalid("set_grads_from_delta: entry count mismatch"));
        }
        for (i, (name, shape, d)) in delta.entries.iter().enumerate() {
            if name != &self.names[i] || shape != self.values[i].shape() {
                return Err(Error::invalid(format!(
                    "set_grads_from_delta: entry {i} mismatch ({name} vs {})",
                    self.names[i]
                )));
            }
            for (g, dv) in self.grads[i].data_mut().iter_mut().zip(d) {
                *g = T::from_f64(*dv);
            }
        }
        Ok(())
    }

    /// Insert every parameter into a graph. Trainable bindings become
    /// gradient leaves; constant bindings are plain inputs.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Result<Binding> {
        let mut vars = Vec::with_capacity(self.len());
        let mut by_name = HashMap::with_capacity(self.len());
        for i in 0..self.len() {
            let mut t = self.values[i].clone();
            if trainable {
                t = t.with_grad();
            }
            let v = if trainable { graph.input(t)? } else { graph.constant(t)? };
            by_name.insert(self.names[i].clone(), v);
            vars.push(v);
        }
        Ok(Binding { vars, by_name })
    }

    /// Accumulate gradients computed on `graph` back into this set.
    /// Parameters that never reached the loss keep their zero gradient.
    pub fn absorb_grads(&mut self, graph: &Graph<T>, binding: &Binding) -> Result<()> {
        if binding.vars.len() != self.len() {
            return Err(Error::invalid("absorb_grads: binding does not match parameter set"));
        }
        for i in 0..self.len() {
            if let Some(g) = graph.grad(binding.vars[i]) {
                if g.shape() != self.grads[i].shape() {
                    return Err(Error::shape(
                        format!("absorb_grads ({})", self.names[i]),
                        g.shape(),
                        self.grads[i].shape(),
                    ));
                }
                for (acc, &gv) in self.grads[i].data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + gv;
                }
            }
        }
        Ok(())
    }
}

/// f64-carried elementwise difference of two structurally equal ParamSets.
pub struct ParamDelta {
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl ParamDelta {
    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|(_, _, d)| d.iter().all(|&v| v == 0.0))
    }
}

/// Graph variables for one bound ParamSet, in entry order.
pub struct Binding {
    vars: Vec<Var>,
    by_name: HashMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no bound parameter named {name:?}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set(scale: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![3], vec![0.25 * scale, -1.5 * scale, 2.0 * scale]).unwrap())
            .unwrap();
        p.insert("b", Tensor::new(vec![2, 2], vec![scale, 0.0, -scale, 0.125]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn delta_axpy_roundtrip_is_exact() {
        let a = sample_set(1.0);
        let b = sample_set(0.3330001);
        let d = a.delta(&b).unwrap();
        let mut rebuilt = b.clone();
        rebuilt.axpy(1.0, &d).unwrap();
        for i in 0..a.len() {
            assert_eq!(rebuilt.value_at(i).data(), a.value_at(i).data());
        }
    }

    #[test]
    fn zero_delta_detected() {
        let a = sample_set(1.0);
        let d = a.delta(&a).unwrap();
        assert!(d.is_zero());
        assert_eq!(d.l2_norm(), 0.0);
    }

    #[test]
    fn structure_mismatch_rejected() {
        let a = sample_set(1.0);
        let mut c = ParamSet::<f32>::new();
        c.insert("a", Tensor::zeros(&[3])).unwrap();
        assert!(a.delta(&c).is_err());
    }
}
