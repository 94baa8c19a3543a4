use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::SquareMatrix;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionParams};
use crate::scalar::{dot, norm, Scalar};

/// `B` positive pairs: row `i` of every matrix belongs to the same
/// (query, document) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T> {
    pub query_vecs: Vec<Vec<T>>,
    pub text_vecs: Vec<Vec<T>>,
    pub img_vecs: Vec<Vec<T>>,
    pub doc_ids: Vec<String>,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.doc_ids.len();
        if b == 0 {
            return Err(Error::Empty("batch".into()));
        }
        if self.query_vecs.len() != b || self.text_vecs.len() != b || self.img_vecs.len() != b {
            return Err(Error::InvalidArgument("batch matrices disagree on B".into()));
        }
        let d = self.text_vecs[0].len();
        for v in self.query_vecs.iter().chain(&self.text_vecs).chain(&self.img_vecs) {
            if v.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn fused(&self, params: &FusionParams<T>) -> Result<Vec<Vec<T>>> {
        self.text_vecs
            .iter()
            .zip(&self.img_vecs)
            .map(|(t, i)| fuse(t, i, params))
            .collect()
    }
}

/// `S[i][j] = cos(query_i, fuse(text_j, img_j))`.
pub fn similarity_matrix<T: Scalar>(batch: &TrainingBatch<T>, params: &FusionParams<T>) -> Result<SquareMatrix<T>> {
    batch.validate()?;
    let docs = batch.fused(params)?;
    sim_from_parts(&batch.query_vecs, &docs, &batch.doc_ids)
}

pub(crate) fn sim_from_parts<T: Scalar>(queries: &[Vec<T>], docs: &[Vec<T>], ids: &[String]) -> Result<SquareMatrix<T>> {
    let n = queries.len();
    let qn: Vec<f64> = queries.iter().map(|q| norm(q)).collect();
    let dn: Vec<f64> = docs.iter().map(|d| norm(d)).collect();
    if let Some(i) = qn.iter().position(|x| *x == 0.0) {
        return Err(Error::ZeroVector(Some(format!("query row {i}"))));
    }
    if let Some(j) = dn.iter().position(|x| *x == 0.0) {
        return Err(Error::ZeroVector(Some(ids[j].clone())));
    }
    let mut s = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let c = dot(&queries[i], &docs[j]) / (qn[i] * dn[j]);
            s.set(i, j, T::of(c.clamp(-1.0, 1.0)));
        }
    }
    Ok(s)
}

/// One `(query_id, doc_id)` pair per query of the document.
pub fn multi_query_pairing(doc: &Document) -> Vec<(String, String)> {
    doc.query_ids().map(|q| (q, doc.id.clone())).collect()
}

/// Shuffles pair indices and packs them into batches of at most `batch_size`
/// such that no batch holds two pairs of the same document. A pair whose
/// document is already present goes to the next batch with room.
pub fn assemble_batches<R: Rng + ?Sized>(doc_of_pair: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..doc_of_pair.len()).collect();
    order.shuffle(rng);
    let mut batches: Vec<(Vec<usize>, HashSet<usize>)> = Vec::new();
    let mut first_open = 0;
    for p in order {
        let doc = doc_of_pair[p];
        let slot = (first_open..batches.len())
            .find(|&b| batches[b].0.len() < batch_size && !batches[b].1.contains(&doc));
        let b = slot.unwrap_or_else(|| {
            batches.push((Vec::new(), HashSet::new()));
            batches.len() - 1
        });
        batches[b].0.push(p);
        batches[b].1.insert(doc);
        while first_open < batches.len() && batches[first_open].0.len() >= batch_size {
            first_open += 1;
        }
    }
    batches.into_iter().map(|(b, _)| b).collect()
}
