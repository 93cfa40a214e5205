use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Pretrained word vectors read from `token v1 ... vd` lines.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub covered: usize,
    /// Vocabulary tokens without a vector, in vocabulary order.
    pub missing: Vec<String>,
}

impl EmbeddingTable {
    pub fn coverage<'a>(&self, vocab: impl IntoIterator<Item = &'a String>) -> CoverageReport {
        let mut covered = 0;
        let mut missing = Vec::new();
        for t in vocab {
            if self.vectors.contains_key(t) {
                covered += 1;
            } else {
                missing.push(t.clone());
            }
        }
        CoverageReport { covered, missing }
    }
}

pub fn load_embedding_file(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vectors = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parse_err = |msg: String| Error::Parse { path: path.display().to_string(), line: n + 1, msg };
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|e| parse_err(format!("`{p}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != expected_dim {
            return Err(parse_err(format!("expected {expected_dim} values, found {}", values.len())));
        }
        vectors.insert(token.to_string(), values);
    }
    Ok(EmbeddingTable { dim: expected_dim, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn parses_and_rejects_bad_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, "the 0.1 0.2\n").unwrap();
        let t = load_embedding_file(&path, 2).unwrap();
        assert_eq!(t.vectors["the"], vec![0.1, 0.2]);

        std::fs::write(&path, "the 0.1 0.2\ncat 0.1 0.2 0.3\n").unwrap();
        assert!(matches!(load_embedding_file(&path, 2), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn coverage_is_a_set_difference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let lines: String = (0..50).map(|i| format!("w{i} {i}.0 1.0\n")).collect();
        std::fs::write(&path, lines).unwrap();
        let t = load_embedding_file(&path, 2).unwrap();
        let vocab: Vec<String> = (40..60).map(|i| format!("w{i}")).collect();
        let report = t.coverage(&vocab);
        let file: HashSet<String> = (0..50).map(|i| format!("w{i}")).collect();
        let want: Vec<String> = vocab.iter().filter(|w| !file.contains(*w)).cloned().collect();
        assert_eq!(report.missing, want);
        assert_eq!(report.covered, 10);
    }
}
