use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use mmdr_core::corpus::Split;
use mmdr_core::evaluation::{
    evaluate, full_collection_pool, read_qrels, render_method_table, split_only_pool, EvalOptions, QRels,
};
use mmdr_core::retrieval::{read_index, SearchIndex};
use serde_json::json;

use super::{default_manifest_path, load_clean, load_store};
use crate::manifest::{Outputs, RunManifest};
use crate::EvalArgs;

pub fn run(a: EvalArgs) -> Result<()> {
    let config = json!({
        "full_collection": a.full_collection,
        "train_domain": a.train_domain,
        "truncate": a.truncate,
        "method": a.method,
    });
    let mut manifest = RunManifest::start("eval", config, None);
    let (pool, judged_docs) = if a.full_collection {
        let (tr, va, te) = (a.train.as_ref().unwrap(), a.valid.as_ref().unwrap(), a.test.as_ref().unwrap());
        let train = load_clean(tr, Split::Train, &mut manifest)?;
        let valid = load_clean(va, Split::Valid, &mut manifest)?;
        let test = load_clean(te, Split::Test, &mut manifest)?;
        (full_collection_pool(&train, &valid, &test)?, test)
    } else {
        let p = a.corpus.as_ref().expect("clap enforces --corpus");
        let docs = load_clean(p, Split::Test, &mut manifest)?;
        (split_only_pool(&docs, Split::Test)?, docs)
    };
    let qrels = match &a.qrels {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("opening qrels {}", p.display()))?;
            manifest.input(p)?;
            read_qrels(f)?
        }
        None => QRels::from_documents(&judged_docs)?,
    };

    let index = read_index(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    manifest.input(&a.index)?;
    let indexed: HashSet<&str> = index.doc_ids().iter().map(String::as_str).collect();
    let pooled: HashSet<&str> = pool.doc_ids.iter().map(String::as_str).collect();
    if indexed != pooled {
        let mut missing: Vec<&str> = pooled.difference(&indexed).copied().collect();
        let mut extra: Vec<&str> = indexed.difference(&pooled).copied().collect();
        missing.sort_unstable();
        extra.sort_unstable();
        bail!(
            "index does not match the document pool; missing from index: [{}], not in pool: [{}]",
            missing.join(", "),
            extra.join(", ")
        );
    }
    let queries = load_store(&a.query_emb, &mut manifest)?;
    let opts = EvalOptions {
        protocol: pool.protocol,
        train_domain: a.train_domain.clone(),
        truncate: a.truncate,
    };
    let report = evaluate(&queries, &index, &qrels, &pool.domain_map(), &opts)?;

    let mut out = Outputs::default();
    out.write_json(&a.out, &report)?;
    if let Some(p) = &a.csv {
        out.write(p, |w| Ok(report.write_csv(w)?))?;
    }
    if let Some(p) = &a.table {
        out.write_bytes(p, render_method_table(&[(a.method.as_str(), &report)]).as_bytes())?;
    }
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out))?;
    let f = report.full();
    println!(
        "{} queries, pool {} ({}): MRR@10 {:.5} NDCG@10 {:.5} HIT@1 {:.5} HIT@3 {:.5} HIT@10 {:.5}",
        f.queries,
        report.pool_size,
        report.protocol.as_str(),
        f.mrr10,
        f.ndcg10,
        f.hit1,
        f.hit3,
        f.hit10
    );
    Ok(())
}
