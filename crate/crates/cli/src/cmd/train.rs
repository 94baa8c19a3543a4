use anyhow::{Context, Result};
use mmdr_core::corpus::Split;
use mmdr_core::fusion::{write_checkpoint_to, FusionMode};
use mmdr_core::train::{train, AlignedData, LossKind, TrainConfig};

use super::{default_manifest_path, load_clean, load_store};
use crate::manifest::{sibling, Outputs, RunManifest};
use crate::{FusionArg, LossArg, TrainArgs, UsageError};

fn config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(l) = a.loss {
        c.loss = match l {
            LossArg::Bce => LossKind::Bce,
            LossArg::Infonce => LossKind::Infonce,
        };
    }
    if let Some(f) = a.fusion {
        c.fusion = match f {
            FusionArg::WeightedSum => FusionMode::WeightedSum,
            FusionArg::Mlp => FusionMode::Mlp,
        };
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag { c.$field = v; }
        )*};
    }
    set!(batch_size => batch_size, lr => lr, weight_decay => weight_decay, adam_eps => adam_eps,
         warmup_frac => warmup_frac, max_epochs => max_epochs, patience => patience_epochs,
         temperature => temperature, init_alpha => init_alpha, seed => seed);
    if a.hidden.is_some() {
        c.hidden = a.hidden;
    }
    if a.pos_weight.is_some() {
        c.pos_weight = a.pos_weight;
    }
    if a.freeze_logits {
        c.freeze_logits = true;
    }
    c.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(c)
}

pub fn run(a: TrainArgs) -> Result<()> {
    let cfg = config(&a)?;
    let mut manifest = RunManifest::start("train", serde_json::to_value(&cfg)?, Some(cfg.seed));
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    let train_docs = load_clean(&a.corpus, Split::Train, &mut manifest)?;
    let valid_docs = match &a.valid {
        Some(p) => load_clean(p, Split::Valid, &mut manifest)?,
        None => {
            manifest.note("no --valid given; validating on the training corpus");
            train_docs.clone()
        }
    };
    let text = load_store(&a.text_emb, &mut manifest)?;
    let img = load_store(&a.img_emb, &mut manifest)?;
    let query = load_store(&a.query_emb, &mut manifest)?;
    let tr = AlignedData::from_stores(&train_docs, &text, &img, Some(&query)).context("aligning training split")?;
    let va = AlignedData::from_stores(&valid_docs, &text, &img, Some(&query)).context("aligning validation split")?;

    let outcome = train(&tr, &va, &cfg)?;
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out_ckpt, "log.jsonl"));
    let mut out = Outputs::default();
    out.write(&a.out_ckpt, |w| Ok(write_checkpoint_to(&outcome.params, w)?))?;
    out.write(&log_path, |w| Ok(outcome.log.write_jsonl(w)?))?;
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out_ckpt))?;
    let p = &outcome.params;
    println!(
        "best val MRR@10 {:.5} at epoch {} ({} epochs, loss {}, fusion {}, alpha {:.4})",
        outcome.log.best_val_mrr10,
        outcome.log.best_epoch,
        outcome.log.epochs.len(),
        outcome.log.loss,
        outcome.log.fusion,
        p.alpha()
    );
    Ok(())
}
