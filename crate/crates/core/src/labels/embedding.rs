use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors read from the common textual format
/// (`word v1 v2 ... vD`, one word per line).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Inserts or replaces a vector.
    pub fn insert(&mut self, word: impl Into<String>, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} in a table of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        let word = word.into();
        match self.index.get(&word) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(word, self.index.len());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    /// `None` for unknown words; there is no implicit zero vector.
    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Mean of the token vectors of a phrase; `None` if any token is unknown.
    pub fn phrase(&self, phrase: &str) -> Option<Vec<f64>> {
        let mut acc = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for tok in phrase.split_whitespace() {
            for (a, v) in acc.iter_mut().zip(self.get(tok)?) {
                *a += f64::from(*v);
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Some(acc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_filtered(path, None, |_| true)
    }

    /// Streams a textual embedding file, keeping only words accepted by `keep`.
    ///
    /// The dimension comes from `expected_dim` or the first data line. A leading
    /// `count dim` header line is skipped. Words containing spaces are
    /// recovered by treating the last `dim` fields as the vector.
    pub fn load_filtered(
        path: impl AsRef<Path>,
        expected_dim: Option<usize>,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::new);
        let mut row: Vec<f32> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
            if fields.is_empty() {
                continue;
            }
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let dim = match &table {
                Some(t) => t.dim,
                None => fields.len() - 1,
            };
            if fields.len() < dim + 1 || dim == 0 {
                return Err(Error::parse_one(
                    path,
                    n + 1,
                    format!("expected a word and {dim} values, found {} fields", fields.len()),
                ));
            }
            let split = fields.len() - dim;
            let word = fields[..split].join(" ");
            let table = table.get_or_insert_with(|| EmbeddingTable::new(dim));
            if !keep(&word) {
                continue;
            }
            row.clear();
            for f in &fields[split..] {
                let v: f32 = f
                    .parse()
                    .map_err(|_| Error::parse_one(path, n + 1, format!("bad real `{f}`")))?;
                row.push(v);
            }
            table.insert(word, &row)?;
        }
        Ok(table.unwrap_or_else(|| EmbeddingTable::new(expected_dim.unwrap_or(0))))
    }

    /// Writes words in the given order using the textual format.
    pub fn save<'a>(&self, path: impl AsRef<Path>, words: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for word in words {
            if let Some(v) = self.get(word) {
                write!(w, "{word}")?;
                for x in v {
                    write!(w, " {x}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// The `k` nearest words to `query` by cosine similarity, most similar first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = self
            .index
            .iter()
            .map(|(w, &row)| {
                let v = &self.data[row * self.dim..(row + 1) * self.dim];
                (w.clone(), 1.0 - cosine_distance(query, v))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// `1 - cos(a, b)`; 1.0 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let y = f64::from(*y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}
