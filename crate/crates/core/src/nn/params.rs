use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// How a parameter block is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    offset: usize,
    rows: usize,
    cols: usize,
}

/// Flat parameter vector with a name index.
///
/// Layout is the registration order, so a fixed config always yields the
/// same offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    pub init_seed: u64,
}

impl ParamStore {
    pub fn new(init_seed: u64) -> Self {
        Self {
            values: Vec::new(),
            slots: Vec::new(),
            index: HashMap::new(),
            init_seed,
        }
    }

    /// Appends a `rows x cols` block drawn from `rng`.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut impl Rng) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let offset = self.values.len();
        let n = rows * cols;
        match init {
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                self.values.extend((0..n).map(|_| rng.gen_range(-bound..=bound)));
            }
            Init::Zeros => self.values.extend(std::iter::repeat(0.0).take(n)),
            Init::Ones => self.values.extend(std::iter::repeat(1.0).take(n)),
        }
        self.index.insert(name.to_string(), self.slots.len());
        self.slots.push(Slot {
            name: name.to_string(),
            offset,
            rows,
            cols,
        });
    }

    /// Builds a store by running `layout` with a generator seeded from `seed`.
    pub fn build(seed: u64, layout: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng)) -> Self {
        let mut store = Self::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layout(&mut store, &mut rng);
        store
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                self.values.len()
            )));
        }
        self.values = values;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// `(offset, rows, cols)` of a registered block. Panics on unknown names.
    pub fn slot(&self, name: &str) -> (usize, usize, usize) {
        let s = &self.slots[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))];
        (s.offset, s.rows, s.cols)
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let (o, r, c) = self.slot(name);
        &self.values[o..o + r * c]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let (o, r, c) = self.slot(name);
        &mut self.values[o..o + r * c]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    /// Name of the block containing flat index `i`.
    pub fn name_at(&self, i: usize) -> Option<&str> {
        self.slots
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.rows * s.cols)
            .map(|s| s.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_deterministic() {
        let make = || {
            ParamStore::build(9, |s, rng| {
                s.register("a", 2, 3, Init::Glorot { fan_in: 2, fan_out: 3 }, rng);
                s.register("b", 1, 3, Init::Zeros, rng);
                s.register("g", 1, 4, Init::Ones, rng);
            })
        };
        let (p, q) = (make(), make());
        assert_eq!(p, q);
        assert_eq!(p.len(), 6 + 3 + 4);
        assert_eq!(p.slot("b"), (6, 1, 3));
        assert!(p.get("b").iter().all(|&v| v == 0.0));
        assert!(p.get("g").iter().all(|&v| v == 1.0));
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(p.get("a").iter().all(|v| v.abs() <= bound));
        assert_eq!(p.name_at(7), Some("b"));
    }
}
