use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// Source of token vectors, and optionally whole-document vectors, for the
/// dense half of the fused representation.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn token_vector(&self, id: TokenId) -> &[f64];

    /// Externally computed vector for a document, when one exists.
    fn document_vector(&self, _doc_id: &str) -> Option<&[f64]> {
        None
    }
}

/// Dense `vocab × dim` table.
#[derive(Debug, Clone)]
pub struct TokenTable {
    dim: usize,
    data: Vec<f64>,
}

impl TokenTable {
    /// Frozen table with entries drawn uniformly from `[-1, 1]`.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..vocab_size * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "token table of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("token table has non-finite entries".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn vocab_size(&self) -> usize {
        self.data.len() / self.dim
    }
}

impl EmbeddingProvider for TokenTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, id: TokenId) -> &[f64] {
        let i = id as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Token table plus document vectors read from a `doc_id<TAB>f,f,...` file.
#[derive(Debug, Clone)]
pub struct DocVectorFile {
    tokens: TokenTable,
    docs: HashMap<String, Vec<f64>>,
}

impl DocVectorFile {
    pub fn load(path: impl AsRef<Path>, tokens: TokenTable) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Validation(format!("{}:{}: expected doc_id<TAB>floats", path.display(), lineno + 1));
            let (id, vals) = line.split_once('\t').ok_or_else(bad)?;
            let v: Vec<f64> = vals
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            if v.len() != tokens.dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "{}:{}: vector for `{id}` must have {} finite values",
                    path.display(),
                    lineno + 1,
                    tokens.dim
                )));
            }
            docs.insert(id.to_string(), v);
        }
        Ok(Self { tokens, docs })
    }
}

impl EmbeddingProvider for DocVectorFile {
    fn dim(&self) -> usize {
        self.tokens.dim
    }

    fn token_vector(&self, id: TokenId) -> &[f64] {
        self.tokens.token_vector(id)
    }

    fn document_vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.docs.get(doc_id).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn random_table_is_seeded() {
        assert_eq!(TokenTable::random(10, 4, 7).data, TokenTable::random(10, 4, 7).data);
        assert_ne!(TokenTable::random(10, 4, 7).data, TokenTable::random(10, 4, 8).data);
    }

    #[test]
    fn doc_vector_file_checks_dimension() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "d1\t0.5,0.25").unwrap();
        let p = DocVectorFile::load(f.path(), TokenTable::random(6, 2, 0)).unwrap();
        assert_eq!(p.document_vector("d1").unwrap(), &[0.5, 0.25]);
        assert!(DocVectorFile::load(f.path(), TokenTable::random(6, 3, 0)).is_err());
    }
}
