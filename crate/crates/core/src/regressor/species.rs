use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{ParamBuf, Real};

/// Name of the reserved row for species never seen in training.
pub const UNKNOWN_SPECIES: &str = "<unknown>";

/// Learnable species embeddings. Row 0 is the reserved unknown row; it stays
/// zero because training never routes a sample through it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesTable<T> {
    names: Vec<String>,
    index: HashMap<String, usize>,
    pub dim: usize,
    pub params: ParamBuf<T>,
}

/// Trim and case-fold.
pub fn normalize_species(name: &str) -> String {
    name.trim().to_lowercase()
}

impl<T: Real> SpeciesTable<T> {
    /// Table over `names` (normalized, deduplicated, first occurrence order)
    /// with embeddings uniform in `[-scale, scale]`.
    pub fn new<R: Rng>(names: &[String], dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut table = Self::empty(dim);
        for n in names {
            table.insert(n);
        }
        for v in table.params.values.iter_mut().skip(dim) {
            *v = T::of(rng.gen_range(-scale..=scale));
        }
        table
    }

    pub(crate) fn empty(dim: usize) -> Self {
        let mut index = HashMap::new();
        index.insert(UNKNOWN_SPECIES.to_string(), 0);
        Self {
            names: vec![UNKNOWN_SPECIES.to_string()],
            index,
            dim,
            params: ParamBuf::zeros(dim),
        }
    }

    fn insert(&mut self, name: &str) -> usize {
        let key = normalize_species(name);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.names.len();
        self.names.push(key.clone());
        self.index.insert(key, i);
        self.params.values.extend(std::iter::repeat_n(T::zero(), self.dim));
        self.params.grad.extend(std::iter::repeat_n(T::zero(), self.dim));
        i
    }

    /// Rebuilds a table from stored names (row order) and values.
    pub(crate) fn from_parts(names: Vec<String>, dim: usize, values: Vec<T>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(UNKNOWN_SPECIES)
            || values.len() != names.len() * dim
        {
            return Err(Error::Checkpoint("malformed species table".into()));
        }
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Ok(Self {
            names,
            index,
            dim,
            params: ParamBuf::from_values(values),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of rows including the unknown row.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() <= 1
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_species(name)).copied()
    }

    /// Known index, the unknown row, or an error in strict mode.
    pub fn resolve(&self, name: &str, strict: bool) -> Result<usize> {
        match self.lookup(name) {
            Some(i) if i > 0 => Ok(i),
            _ if strict => Err(Error::UnknownSpecies(name.to_string())),
            _ => Ok(0),
        }
    }

    #[inline]
    pub fn embedding(&self, i: usize) -> &[T] {
        &self.params.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn grad_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params.grad[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cast<U: Real>(&self) -> SpeciesTable<U> {
        SpeciesTable {
            names: self.names.clone(),
            index: self.index.clone(),
            dim: self.dim,
            params: self.params.cast(),
        }
    }
}
