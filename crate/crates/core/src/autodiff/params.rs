use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tape::{axpy, Tape, Var};
use crate::error::AutodiffError;

/// Named dense parameter matrices with a stable flattening order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter `{name}`");
        self.entries.push((name, value));
    }

    pub fn with(mut self, name: impl Into<String>, value: Array2<f64>) -> Self {
        self.push(name, value);
        self
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(|i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.entries.iter_mut().map(|(_, v)| v)
    }

    /// Number of named entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.values().map(Array2::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for v in self.values() {
            out.extend(v.iter().copied());
        }
        out
    }

    /// A parameter set with the same names and shapes, filled from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self, AutodiffError> {
        if flat.len() != self.n_scalars() {
            return Err(AutodiffError::ParamMismatch(format!(
                "expected {} scalars, got {}",
                self.n_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(name, v)| {
                let n = v.len();
                let value = Array2::from_shape_vec(v.dim(), flat[offset..offset + n].to_vec()).expect("shape checked");
                offset += n;
                (name.clone(), value)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), Array2::zeros(v.dim())))
                .collect(),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<(), AutodiffError> {
        let same = self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, v1), (n2, v2))| n1 == n2 && v1.dim() == v2.dim());
        if same {
            Ok(())
        } else {
            Err(AutodiffError::ParamMismatch("parameter names or shapes differ".into()))
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<(), AutodiffError> {
        self.check_compatible(other)?;
        for ((_, v), (_, o)) in self.entries.iter_mut().zip(&other.entries) {
            axpy(v, alpha, o);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.values().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Records every entry as a differentiable input, in order.
    pub fn to_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.values().map(|v| tape.input(v.clone())).collect()
    }

    /// Builds a parameter set with these names from tape values.
    pub fn from_tape(&self, tape: &Tape, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), self.len());
        Self {
            entries: self
                .entries
                .iter()
                .zip(vars)
                .map(|((n, _), &v)| (n.clone(), tape.value(v).clone()))
                .collect(),
        }
    }
}
