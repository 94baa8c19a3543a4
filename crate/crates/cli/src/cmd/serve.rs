use anyhow::{Context, Result};
use mmdr_core::corpus::Split;
use mmdr_core::embeddings::write_store_to;
use mmdr_core::fusion::read_checkpoint;
use mmdr_core::retrieval::{
    build_flat, build_hnsw, read_index, write_index_to, write_results, AnyIndex, HnswParams, RankedList, SearchIndex,
};
use mmdr_core::train::AlignedData;
use rayon::prelude::*;
use serde_json::json;

use super::{default_manifest_path, load_clean, load_store};
use crate::manifest::{Outputs, RunManifest};
use crate::{IndexArgs, IndexKind, SearchArgs};

pub fn index(a: IndexArgs) -> Result<()> {
    let params = HnswParams {
        m_links: a.m_links as usize,
        ef_construction: a.ef_construction as usize,
        ef_search: a.ef_search as usize,
    };
    let config = json!({
        "kind": format!("{:?}", a.kind).to_lowercase(),
        "hnsw": params,
    });
    let mut manifest = RunManifest::start("index", config, Some(a.seed));
    let mut docs = Vec::new();
    for p in &a.corpus {
        docs.extend(load_clean(p, Split::Train, &mut manifest)?);
    }
    let text = load_store(&a.text_emb, &mut manifest)?;
    let img = load_store(&a.img_emb, &mut manifest)?;
    let params_f = read_checkpoint::<f64>(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    manifest.input(&a.ckpt)?;
    let data = AlignedData::from_stores(&docs, &text, &img, None).context("aligning documents with stores")?;
    let fused = data.fused_store(&params_f)?;
    let index = match a.kind {
        IndexKind::Flat => AnyIndex::Flat(build_flat(&fused)?),
        IndexKind::Hnsw => AnyIndex::Hnsw(build_hnsw(&fused, params, a.seed)?),
    };
    let mut out = Outputs::default();
    out.write(&a.out, |w| Ok(write_index_to(&index, w)?))?;
    if let Some(p) = &a.fused_out {
        out.write(p, |w| Ok(write_store_to(&fused, w)?))?;
    }
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out))?;
    println!("indexed {} documents (dim {})", index.len(), index.dim());
    Ok(())
}

pub fn search(a: SearchArgs) -> Result<()> {
    let config = json!({ "k": a.k, "ef_search": a.ef_search });
    let mut manifest = RunManifest::start("search", config, None);
    let mut index = read_index(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    manifest.input(&a.index)?;
    if let (AnyIndex::Hnsw(h), Some(ef)) = (&mut index, a.ef_search) {
        h.ef_search = ef as usize;
    }
    let queries = load_store(&a.query_emb, &mut manifest)?;
    let k = a.k as usize;
    let lists: Vec<RankedList> = queries
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(id, v)| {
            Ok(RankedList {
                query_id: id.to_string(),
                hits: index.search(v, k).with_context(|| format!("searching {id}"))?,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Outputs::default();
    out.write(&a.out, |w| Ok(write_results(&lists, w)?))?;
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out))?;
    println!("searched {} queries", lists.len());
    Ok(())
}
