use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{assemble_batches, TrainingBatch};
use super::grad::{loss_grad, LossKind, Objective};
use super::optim::{lr_at, AdamW};
use crate::corpus::{Document, Domain};
use crate::embeddings::{l2_normalize, mean_pool_images, EmbeddingStore, ImageGroup, StoreKind};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{mrr_at_10, rank_of};
use crate::fusion::{fuse, FusionMode, FusionParams, MlpHead};
use crate::scalar::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub fusion: FusionMode,
    /// MLP hidden width; defaults to the embedding dimension.
    pub hidden: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub warmup_frac: f64,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    /// BCE diagonal weight; defaults to `max(B − 1, 1)` per batch.
    pub pos_weight: Option<f64>,
    pub temperature: f64,
    pub seed: u64,
    /// Holds the logit transform at scale 1, bias 0.
    pub freeze_logits: bool,
    pub init_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Bce,
            fusion: FusionMode::WeightedSum,
            hidden: None,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            warmup_frac: 0.1,
            max_epochs: 200,
            patience_epochs: 20,
            pos_weight: None,
            temperature: 0.07,
            seed: 0,
            freeze_logits: false,
            init_alpha: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must lie in [0, 1]");
        }
        if self.patience_epochs < 1 {
            return bad("patience_epochs must be >= 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1");
        }
        if matches!(self.pos_weight, Some(w) if !(w > 0.0)) {
            return bad("pos_weight must be > 0");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return bad("lr and adam_eps must be > 0, weight_decay >= 0");
        }
        if !(self.init_alpha > 0.0 && self.init_alpha < 1.0) {
            return bad("init_alpha must lie in (0, 1)");
        }
        if self.hidden == Some(0) {
            return bad("hidden must be >= 1");
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            kind: self.loss,
            pos_weight: self.pos_weight,
            temperature: self.temperature,
        }
    }

    /// Initial parameters for embedding dimension `dim`.
    pub fn init_params(&self, dim: usize) -> FusionParams<f64> {
        let mut p = match self.fusion {
            FusionMode::WeightedSum => FusionParams::weighted_sum(),
            FusionMode::Mlp => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d6c_7000);
                FusionParams::mlp(MlpHead::init(dim, self.hidden.unwrap_or(dim), &mut rng))
            }
        }
        .with_alpha(self.init_alpha);
        if self.freeze_logits {
            p = p.with_identity_logits();
        }
        p
    }
}

/// Normalized text, pooled image and query vectors for one split, keyed by
/// document position.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedData {
    pub dim: usize,
    pub doc_ids: Vec<String>,
    pub domains: Vec<Domain>,
    pub text: Vec<Vec<f64>>,
    pub img: Vec<Vec<f64>>,
    pub query_ids: Vec<String>,
    pub query_doc: Vec<usize>,
    pub queries: Vec<Vec<f64>>,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn unit(v: &[f32], id: &str) -> Result<Vec<f64>> {
    l2_normalize(&widen(v)).map_err(|_| Error::ZeroVector(Some(id.to_owned())))
}

impl AlignedData {
    /// Joins the corpus with its stores. Every document needs a text vector,
    /// one image vector per image reference (`docid#k`) and, when a query
    /// store is given, one query vector per query (`docid@qk`, at least one).
    /// All missing ids are reported together.
    pub fn from_stores(
        docs: &[Document],
        text: &EmbeddingStore,
        img: &EmbeddingStore,
        query: Option<&EmbeddingStore>,
    ) -> Result<Self> {
        let dim = text.dim();
        for s in std::iter::once(img).chain(query) {
            if s.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: s.dim() });
            }
        }
        let mut missing = Vec::new();
        for d in docs {
            if !text.contains(&d.id) {
                missing.push(d.id.clone());
            }
            missing.extend((0..d.images.len().max(1)).map(|k| d.image_id(k)).filter(|id| !img.contains(id)));
            if let Some(query) = query {
                missing.extend((0..d.queries.len().max(1)).map(|k| d.query_id(k)).filter(|id| !query.contains(id)));
            }
        }
        if !missing.is_empty() {
            return Err(Error::Misaligned(missing));
        }
        let mut out = Self {
            dim,
            doc_ids: Vec::with_capacity(docs.len()),
            domains: Vec::with_capacity(docs.len()),
            text: Vec::with_capacity(docs.len()),
            img: Vec::with_capacity(docs.len()),
            query_ids: Vec::new(),
            query_doc: Vec::new(),
            queries: Vec::new(),
        };
        for (j, d) in docs.iter().enumerate() {
            out.doc_ids.push(d.id.clone());
            out.domains.push(d.domain);
            out.text.push(unit(text.try_get(&d.id)?, &d.id)?);
            let group = ImageGroup {
                doc_id: d.id.clone(),
                member_ids: (0..d.images.len().max(1)).map(|k| d.image_id(k)).collect(),
            };
            out.img.push(unit(&mean_pool_images(&group, img)?, &d.id)?);
            let Some(query) = query else { continue };
            for qid in (0..d.queries.len().max(1)).map(|k| d.query_id(k)) {
                let v = unit(query.try_get(&qid)?, &qid)?;
                out.queries.push(v);
                out.query_doc.push(j);
                out.query_ids.push(qid);
            }
        }
        Ok(out)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Unit-norm fused document vectors.
    pub fn fused_docs(&self, params: &FusionParams<f64>) -> Result<Vec<Vec<f64>>> {
        self.text
            .iter()
            .zip(&self.img)
            .zip(&self.doc_ids)
            .map(|((t, i), id)| {
                l2_normalize(&fuse(t, i, params)?).map_err(|e| match e {
                    Error::ZeroVector(None) => Error::ZeroVector(Some(id.clone())),
                    e => e,
                })
            })
            .collect()
    }

    /// Fused vectors as a normalized store keyed by document id, ready for
    /// indexing.
    pub fn fused_store(&self, params: &FusionParams<f64>) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(StoreKind::Text, self.dim, true);
        for (id, v) in self.doc_ids.iter().zip(self.fused_docs(params)?) {
            let v: Vec<f32> = v.iter().map(|x| *x as f32).collect();
            store.push(id.clone(), &v)?;
        }
        Ok(store)
    }

    /// Exact 1-based rank of each query's document among this split's documents.
    pub fn ranks(&self, params: &FusionParams<f64>) -> Result<Vec<usize>> {
        let docs = self.fused_docs(params)?;
        Ok(self
            .queries
            .par_iter()
            .zip(&self.query_doc)
            .map(|(q, &target)| {
                let scores: Vec<f64> = docs.iter().map(|d| dot(q, d)).collect();
                rank_of(&scores, &self.doc_ids, target)
            })
            .collect())
    }

    /// MRR@10 of this split's queries against this split's documents.
    pub fn mrr10(&self, params: &FusionParams<f64>) -> Result<f64> {
        let ranks: Vec<Option<usize>> = self.ranks(params)?.into_iter().map(Some).collect();
        mrr_at_10(&ranks)
    }

    fn batch(&self, pairs: &[usize]) -> TrainingBatch<f64> {
        TrainingBatch {
            query_vecs: pairs.iter().map(|&p| self.queries[p].clone()).collect(),
            text_vecs: pairs.iter().map(|&p| self.text[self.query_doc[p]].clone()).collect(),
            img_vecs: pairs.iter().map(|&p| self.img[self.query_doc[p]].clone()).collect(),
            doc_ids: pairs.iter().map(|&p| self.doc_ids[self.query_doc[p]].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub val_mrr10: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub loss: LossKind,
    pub fusion: FusionMode,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters are returned.
    pub best_epoch: usize,
    pub best_val_mrr10: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Step lines, then epoch lines, then one summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        let summary = serde_json::json!({
            "loss": self.loss,
            "fusion": self.fusion,
            "best_epoch": self.best_epoch,
            "best_val_mrr10": self.best_val_mrr10,
            "stopped_early": self.stopped_early,
        });
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: FusionParams<f64>,
    pub log: TrainLog,
}

/// Fits the fusion head on `train`, selecting the epoch with the best
/// validation MRR@10. Later epochs that tie the best replace it; only strict
/// drops count toward `patience_epochs`.
pub fn train(train: &AlignedData, valid: &AlignedData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.num_queries() == 0 {
        return Err(Error::Empty("training split has no queries".into()));
    }
    if valid.num_queries() == 0 {
        return Err(Error::Empty("validation split has no queries".into()));
    }
    if train.dim != valid.dim {
        return Err(Error::DimMismatch {
            expected: train.dim,
            got: valid.dim,
        });
    }
    let objective = cfg.objective();
    let mut params = cfg.init_params(train.dim);
    let decay = params.decay_mask();
    let frozen: Vec<bool> = (0..params.num_params())
        .map(|i| cfg.freeze_logits && (i == 1 || i == 2))
        .collect();
    let mut opt = AdamW::new(params.num_params(), cfg.weight_decay, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let steps_per_epoch = train.num_queries().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut log = TrainLog {
        loss: cfg.loss,
        fusion: cfg.fusion,
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mrr10: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best = params.clone();
    let mut bad_epochs = 0;
    let mut step = 0;

    for epoch in 0..cfg.max_epochs {
        let batches = assemble_batches(&train.query_doc, cfg.batch_size, &mut rng);
        let mut loss_sum = 0.0;
        for pairs in &batches {
            let batch = train.batch(pairs);
            let lg = loss_grad(&batch, &params, &objective).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} at epoch {epoch} step {step} (alpha_raw {}, logit_scale_raw {}, logit_bias {})",
                    params.alpha_raw, params.logit_scale_raw, params.logit_bias
                )),
                e => e,
            })?;
            let mut grad = lg.grad;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient entry {i} at epoch {epoch} step {step}")));
            }
            for (g, f) in grad.iter_mut().zip(&frozen) {
                if *f {
                    *g = 0.0;
                }
            }
            let lr = lr_at(step, total_steps, cfg.warmup_frac, cfg.lr);
            let mut flat = params.to_flat();
            opt.step(&mut flat, &grad, lr, &decay);
            params.set_flat(&flat)?;
            log.steps.push(StepLog {
                step,
                epoch,
                loss: lg.loss,
                lr,
            });
            loss_sum += lg.loss;
            step += 1;
        }
        let val = valid.mrr10(&params)?;
        log.epochs.push(EpochLog {
            epoch,
            val_mrr10: val,
            mean_loss: loss_sum / batches.len() as f64,
        });
        if val >= log.best_val_mrr10 {
            log.best_val_mrr10 = val;
            log.best_epoch = epoch;
            best = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience_epochs {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, images: usize, queries: usize) -> Document {
        Document {
            id: id.into(),
            domain: Domain::Wiki,
            texts: vec!["t".into()],
            images: (0..images).map(|k| format!("{k}.png")).collect(),
            queries: (0..queries).map(|k| format!("q{k}")).collect(),
        }
    }

    #[test]
    fn misaligned_lists_every_missing_id() {
        let docs = [doc("a", 2, 1), doc("b", 1, 1)];
        let mut text = EmbeddingStore::new(StoreKind::Text, 2, false);
        text.push("a", &[1.0, 0.0]).unwrap();
        text.push("b", &[0.0, 1.0]).unwrap();
        let mut img = EmbeddingStore::new(StoreKind::Image, 2, false);
        img.push("a#0", &[1.0, 0.0]).unwrap();
        img.push("b#0", &[1.0, 0.0]).unwrap();
        let mut q = EmbeddingStore::new(StoreKind::Query, 2, false);
        q.push("a@q0", &[1.0, 0.0]).unwrap();
        let err = AlignedData::from_stores(&docs, &text, &img, Some(&q)).unwrap_err();
        match err {
            Error::Misaligned(ids) => assert_eq!(ids, vec!["a#1".to_string(), "b@q0".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn pooled_then_normalized() {
        let docs = [doc("a", 2, 1)];
        let mut text = EmbeddingStore::new(StoreKind::Text, 2, false);
        text.push("a", &[3.0, 4.0]).unwrap();
        let mut img = EmbeddingStore::new(StoreKind::Image, 2, false);
        img.push("a#0", &[2.0, 0.0]).unwrap();
        img.push("a#1", &[0.0, 2.0]).unwrap();
        let mut q = EmbeddingStore::new(StoreKind::Query, 2, false);
        q.push("a@q0", &[0.0, 5.0]).unwrap();
        let data = AlignedData::from_stores(&docs, &text, &img, Some(&q)).unwrap();
        assert_eq!(data.text[0], vec![0.6, 0.8]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((data.img[0][0] - h).abs() < 1e-7 && (data.img[0][1] - h).abs() < 1e-7);
        assert_eq!(data.queries[0], vec![0.0, 1.0]);
    }

    #[test]
    fn config_parses_partial_json_and_rejects_unknown() {
        let c: TrainConfig = serde_json::from_str(r#"{"loss":"infonce","batch_size":8}"#).unwrap();
        assert_eq!(c.loss, LossKind::Infonce);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.lr, 1e-2);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr_typo":1}"#).is_err());
        let bad = TrainConfig {
            warmup_frac: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
