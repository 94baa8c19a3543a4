use anyhow::{Context, Result};
use mmdr_core::corpus::write_corpus;
use mmdr_core::embeddings::write_store_to;
use mmdr_core::synth::{generate, Signal, SynthConfig};

use crate::manifest::{Outputs, RunManifest};
use crate::{SignalArg, SynthArgs};

pub fn run(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        docs: a.docs,
        dim: a.dim,
        noise: a.noise,
        signal: match a.signal {
            SignalArg::Text => Signal::Text,
            SignalArg::Image => Signal::Image,
        },
        max_images: a.max_images,
        queries_per_doc: a.queries_per_doc,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg)?;
    let manifest = RunManifest::start("synth", serde_json::to_value(&cfg)?, Some(a.seed));
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = &a.out_dir;
    let mut out = Outputs::default();
    out.write(&dir.join("train.jsonl"), |w| Ok(write_corpus(&corpus.train, w)?))?;
    out.write(&dir.join("valid.jsonl"), |w| Ok(write_corpus(&corpus.valid, w)?))?;
    out.write(&dir.join("test.jsonl"), |w| Ok(write_corpus(&corpus.test, w)?))?;
    out.write(&dir.join("text.demb"), |w| Ok(write_store_to(&corpus.text, w)?))?;
    out.write(&dir.join("image.demb"), |w| Ok(write_store_to(&corpus.image, w)?))?;
    out.write(&dir.join("query.demb"), |w| Ok(write_store_to(&corpus.query, w)?))?;
    out.commit(manifest, &dir.join("manifest.json"))?;
    println!(
        "wrote {} train, {} valid, {} test documents to {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        dir.display()
    );
    Ok(())
}
