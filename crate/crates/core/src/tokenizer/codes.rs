use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::{Error, Result};

/// Fixed-length digit codes for every item, with per-position cardinalities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeAssignment {
    cardinalities: Vec<usize>,
    digits: Vec<u32>,
}

impl CodeAssignment {
    /// `codes[item]` is the digit vector of `item`; every digit must be below
    /// the cardinality of its position.
    pub fn new(cardinalities: Vec<usize>, codes: &[Vec<u32>]) -> Result<Self> {
        let m = cardinalities.len();
        if m == 0 || cardinalities.contains(&0) {
            return Err(Error::Config(format!(
                "invalid code cardinalities {cardinalities:?}"
            )));
        }
        let mut digits = Vec::with_capacity(codes.len() * m);
        for (item, code) in codes.iter().enumerate() {
            if code.len() != m {
                return Err(Error::Vocabulary(format!(
                    "item {item} has {} digits, expected {m}",
                    code.len()
                )));
            }
            for (p, &d) in code.iter().enumerate() {
                if d as usize >= cardinalities[p] {
                    return Err(Error::Vocabulary(format!(
                        "item {item}: digit {d} at position {p} exceeds cardinality {}",
                        cardinalities[p]
                    )));
                }
            }
            digits.extend_from_slice(code);
        }
        Ok(Self {
            cardinalities,
            digits,
        })
    }

    pub fn m(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn n_items(&self) -> usize {
        self.digits.len() / self.m()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn code(&self, item: u32) -> &[u32] {
        let m = self.m();
        &self.digits[item as usize * m..(item as usize + 1) * m]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.digits.chunks_exact(self.m())
    }

    /// Map from code to item; fails on the first duplicate code.
    pub fn inverse(&self) -> Result<HashMap<Vec<u32>, u32>> {
        let mut map = HashMap::with_capacity(self.n_items());
        for (item, code) in self.iter().enumerate() {
            if let Some(prev) = map.insert(code.to_vec(), item as u32) {
                return Err(Error::Vocabulary(format!(
                    "items {prev} and {item} share code {code:?}"
                )));
            }
        }
        Ok(map)
    }

    pub fn is_injective(&self) -> bool {
        self.inverse().is_ok()
    }

    /// Text table `item,c1,...,cm`, one row per item, using `labels` for the
    /// item column when given.
    pub fn export(&self, path: &Path, labels: Option<&[String]>) -> Result<()> {
        let mut out = String::from("item");
        for p in 0..self.m() {
            out.push_str(&format!(",c{}", p + 1));
        }
        out.push('\n');
        for (i, code) in self.iter().enumerate() {
            match labels {
                Some(l) => out.push_str(&l[i]),
                None => out.push_str(&i.to_string()),
            }
            for d in code {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}
