use super::{check_query, cosine_f32, sort_hits, Hit, Rows, SearchIndex};
use crate::embeddings::EmbeddingStore;
use crate::error::Result;

/// Exhaustive cosine search; the exactness reference for [`super::HnswIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    pub(crate) rows: Rows,
}

impl FlatIndex {
    /// Builds from `(id, vector)` rows; vectors are normalized on the way in.
    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<Self> {
        Ok(Self {
            rows: Rows::from_iter(dim, rows)?,
        })
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        self.rows.row(i)
    }

    /// Scores every row; used where the full ranking is needed.
    pub fn scores(&self, query: &[f32]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| cosine_f32(query, self.rows.row(i))).collect()
    }
}

impl SearchIndex for FlatIndex {
    fn dim(&self) -> usize {
        self.rows.dim
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn doc_ids(&self) -> &[String] {
        &self.rows.ids
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        check_query(query, self.rows.dim, k)?;
        let scored = self.scores(query).into_iter().enumerate().collect();
        Ok(sort_hits(&self.rows.ids, scored, k))
    }
}

pub fn build_flat(store: &EmbeddingStore) -> Result<FlatIndex> {
    FlatIndex::from_rows(store.dim(), store.iter())
}

pub fn search_flat(index: &FlatIndex, query: &[f32], k: usize) -> Result<Vec<Hit>> {
    index.search(query, k)
}
