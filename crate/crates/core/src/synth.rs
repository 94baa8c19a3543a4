//! Synthetic corpora whose retrieval signal lives in exactly one modality.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Domain, Split};
use crate::embeddings::{EmbeddingStore, StoreKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    /// Queries are noisy copies of the text vector; images are unrelated noise.
    Text,
    /// Queries and every image are noisy copies of one latent vector; the text
    /// vector is unrelated noise.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub docs: usize,
    pub dim: usize,
    /// Standard deviation of the per-component query noise.
    pub noise: f64,
    pub signal: Signal,
    pub max_images: usize,
    pub queries_per_doc: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 200,
            dim: 32,
            noise: 0.05,
            signal: Signal::Text,
            max_images: 3,
            queries_per_doc: 1,
            train_frac: 0.7,
            valid_frac: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
    pub text: EmbeddingStore,
    pub image: EmbeddingStore,
    pub query: EmbeddingStore,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy<R: Rng>(rng: &mut R, base: &[f64], sigma: f64) -> Vec<f32> {
    base.iter()
        .map(|x| (x + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.docs == 0 || cfg.dim == 0 || cfg.max_images == 0 || cfg.queries_per_doc == 0 {
        return Err(Error::InvalidArgument("docs, dim, max_images and queries_per_doc must be >= 1".into()));
    }
    if !(cfg.train_frac >= 0.0 && cfg.valid_frac >= 0.0 && cfg.train_frac + cfg.valid_frac <= 1.0) {
        return Err(Error::InvalidArgument("split fractions must be non-negative and sum to <= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut text = EmbeddingStore::new(StoreKind::Text, cfg.dim, false);
    let mut image = EmbeddingStore::new(StoreKind::Image, cfg.dim, false);
    let mut query = EmbeddingStore::new(StoreKind::Query, cfg.dim, false);
    let mut docs = Vec::with_capacity(cfg.docs);
    for i in 0..cfg.docs {
        let id = format!("syn{i:05}");
        let n_images = rng.gen_range(1..=cfg.max_images);
        let latent = unit(&mut rng, cfg.dim);
        match cfg.signal {
            Signal::Text => {
                text.push(id.clone(), &narrow(&latent))?;
                for k in 0..n_images {
                    image.push(format!("{id}#{k}"), &narrow(&unit(&mut rng, cfg.dim)))?;
                }
            }
            Signal::Image => {
                text.push(id.clone(), &narrow(&unit(&mut rng, cfg.dim)))?;
                for k in 0..n_images {
                    image.push(format!("{id}#{k}"), &noisy(&mut rng, &latent, cfg.noise))?;
                }
            }
        }
        for k in 0..cfg.queries_per_doc {
            query.push(format!("{id}@q{k}"), &noisy(&mut rng, &latent, cfg.noise))?;
        }
        docs.push(Document {
            id: id.clone(),
            domain: Domain::ALL[i % 3],
            texts: vec![format!("Synthetic document {i}.")],
            images: (0..n_images).map(|k| format!("{id}/{k}.png")).collect(),
            queries: (0..cfg.queries_per_doc).map(|k| format!("Synthetic query {k} for document {i}?")).collect(),
        });
    }
    let mut order: Vec<usize> = (0..cfg.docs).collect();
    order.shuffle(&mut rng);
    let n_train = (cfg.train_frac * cfg.docs as f64).round() as usize;
    let n_valid = ((cfg.valid_frac * cfg.docs as f64).round() as usize).min(cfg.docs - n_train);
    let pick = |range: &[usize]| {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| docs[i].clone()).collect::<Vec<_>>()
    };
    Ok(SynthCorpus {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
        text,
        image,
        query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (140, 30, 30));
        assert_eq!(a.text.len(), 200);
        assert_eq!(a.query.len(), 200);
        let images: usize = a.train.iter().chain(&a.valid).chain(&a.test).map(|d| d.images.len()).sum();
        assert_eq!(a.image.len(), images);
        assert_eq!(generate(&cfg).unwrap(), a);
        let b = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.query, b.query);
    }
}
