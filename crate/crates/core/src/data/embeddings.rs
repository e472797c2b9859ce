//! Class attribute embeddings.
//!
//! Text format: one class per line, `name v1 v2 … v_da`, separated by
//! whitespace. Blank lines and lines starting with `#` are skipped. Names
//! are single tokens.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::ops::l2_normalize_rows;
use crate::tensor::Tensor;

/// Raw vectors as stored on disk, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self> {
        if names.len() != vectors.len() {
            return Err(Error::Embedding(format!(
                "{} names for {} vectors",
                names.len(),
                vectors.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Embedding(format!("invalid class name {name:?}")));
            }
            if seen.insert(name.as_str(), i).is_some() {
                return Err(Error::Embedding(format!("duplicate class name {name:?}")));
            }
        }
        if let Some(first) = vectors.first() {
            if first.is_empty() {
                return Err(Error::Embedding("zero-width vectors".into()));
            }
            if let Some(i) = vectors.iter().position(|v| v.len() != first.len()) {
                return Err(Error::Embedding(format!(
                    "{:?} has {} values, {:?} has {}",
                    names[i],
                    vectors[i].len(),
                    names[0],
                    first.len()
                )));
            }
        }
        if let Some(i) = vectors.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Embedding(format!("{:?} has a non-finite value", names[i])));
        }
        Ok(Self { names, vectors })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let name = tokens.next().expect("non-empty line").to_string();
            let values = tokens
                .map(|t| t.parse::<f32>())
                .collect::<Result<Vec<f32>, _>>()
                .map_err(|e| {
                    Error::Embedding(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
            names.push(name);
            vectors.push(values);
        }
        Self::new(names, vectors)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::format(path, e.valid_up_to() as u64, "embedding file is not UTF-8"))?;
        Self::parse(text, path)
    }

    /// Shortest round-tripping decimal for every value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.names.iter().zip(&self.vectors) {
            out.push_str(name);
            for x in v {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_text().as_bytes())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    /// Rows for `expected`, in that order, ℓ2-normalized.
    pub fn select(&self, expected: &[String]) -> Result<AttributeMatrix> {
        let index: HashMap<&str, usize> =
            self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let missing: Vec<&str> = expected
            .iter()
            .filter(|n| !index.contains_key(n.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Embedding(format!("no vector for classes: {}", missing.join(", "))));
        }
        let d = self.dim().unwrap_or(0);
        let mut raw = Vec::with_capacity(expected.len() * d);
        for name in expected {
            raw.extend(self.vectors[index[name.as_str()]].iter().map(|&x| x as f64));
        }
        let raw = Tensor::from_vec(&[expected.len(), d], raw)?;
        AttributeMatrix::from_raw(expected.to_vec(), &raw)
    }
}

/// ℓ2-normalized class embeddings, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    names: Vec<String>,
    matrix: Tensor<f32>,
}

impl AttributeMatrix {
    /// Normalizes rows of `raw` (`[C, d_a]`) in 64-bit; a zero row is an
    /// error.
    pub fn from_raw(names: Vec<String>, raw: &Tensor<f64>) -> Result<Self> {
        if raw.rank() != 2 || raw.rows() != names.len() {
            return Err(Error::Embedding(format!(
                "{} names for a matrix of shape {:?}",
                names.len(),
                raw.shape()
            )));
        }
        let (normalized, zero) = l2_normalize_rows(raw);
        if !zero.is_empty() {
            let bad: Vec<&str> = zero.iter().map(|&i| names[i].as_str()).collect();
            return Err(Error::Embedding(format!("zero vector for classes: {}", bad.join(", "))));
        }
        Ok(Self {
            names,
            matrix: normalized.cast(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `[C, d_a]`
    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Embedding(format!(
                "cannot join {}-d and {}-d embeddings",
                self.dim(),
                other.dim()
            )));
        }
        if let Some(n) = other.names.iter().find(|n| self.names.contains(n)) {
            return Err(Error::Embedding(format!("class {n:?} appears in both tables")));
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut data = self.matrix.data().to_vec();
        data.extend_from_slice(other.matrix.data());
        Ok(Self {
            names,
            matrix: Tensor::from_vec(&[self.len() + other.len(), self.dim()], data)?,
        })
    }
}

pub fn load_embeddings(path: &Path, expected: &[String]) -> Result<AttributeMatrix> {
    EmbeddingTable::read(path)?.select(expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pythagorean_row() {
        let t = EmbeddingTable::parse("cat 3 4\n", Path::new("e")).unwrap();
        let a = t.select(&names(&["cat"])).unwrap();
        assert_eq!(a.matrix().data(), &[0.6, 0.8]);
    }

    #[test]
    fn rows_follow_expected_order() {
        let t = EmbeddingTable::parse("cat 1 0\n# comment\n\ndog 0 2\n", Path::new("e")).unwrap();
        let a = t.select(&names(&["dog", "cat"])).unwrap();
        assert_eq!(a.matrix().data(), &[0., 1., 1., 0.]);
        assert_eq!(a.index_of("cat"), Some(1));
    }

    #[test]
    fn missing_classes_are_listed() {
        let t = EmbeddingTable::parse("cat 1 0\n", Path::new("e")).unwrap();
        let err = t.select(&names(&["cow", "cat", "emu"])).unwrap_err().to_string();
        assert!(err.contains("cow, emu"), "{err}");
    }

    #[test]
    fn malformed_tables() {
        let p = Path::new("e");
        assert!(EmbeddingTable::parse("a 1 2\nb 1\n", p).is_err());
        assert!(EmbeddingTable::parse("a 1 2\na 1 3\n", p).is_err());
        assert!(EmbeddingTable::parse("a 1 x\n", p).is_err());
        assert!(EmbeddingTable::parse("a\n", p).is_err());
        let zero = EmbeddingTable::parse("a 0 0\n", p).unwrap();
        assert!(matches!(zero.select(&names(&["a"])), Err(Error::Embedding(_))));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let v = vec![vec![0.1f32, -1.0e-7, 3.4028235e38], vec![f32::MIN_POSITIVE, 2.5, -0.0]];
        let t = EmbeddingTable::new(names(&["x", "y"]), v).unwrap();
        let back = EmbeddingTable::parse(&t.to_text(), Path::new("e")).unwrap();
        assert_eq!(back.names(), t.names());
        for (a, b) in back.vectors().iter().flatten().zip(t.vectors().iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn concat_keeps_order_and_rejects_overlap() {
        let t = EmbeddingTable::parse("a 1 0\nb 0 1\nc 1 1\n", Path::new("e")).unwrap();
        let s = t.select(&names(&["a", "b"])).unwrap();
        let u = t.select(&names(&["c"])).unwrap();
        let all = s.concat(&u).unwrap();
        assert_eq!(all.names(), &names(&["a", "b", "c"])[..]);
        assert_eq!(all.matrix().shape(), &[3, 2]);
        assert!(s.concat(&s).is_err());
    }
}
