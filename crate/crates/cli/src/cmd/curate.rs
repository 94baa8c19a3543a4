use std::io::Write;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use mmdr_core::corpus::{
    compute_split_stats, load_corpus_with, write_corpus, write_rejects, CorpusStats, Curator, Domain, LoadOptions,
    PolicySet, Split, TokenizerHandle,
};
use serde_json::json;

use super::default_manifest_path;
use crate::manifest::{sibling, Outputs, RunManifest};
use crate::{AnnotateArgs, CurateArgs, SplitArg, UsageError};

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

/// In-memory audit sink, flushed to disk with the other outputs.
#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("audit buffer poisoned").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl SharedBuf {
    fn contents(&self) -> Vec<u8> {
        self.0.lock().expect("audit buffer poisoned").clone()
    }
}

pub fn run(a: CurateArgs) -> Result<()> {
    let split: Split = a.split.into();
    let policies = match &a.policy {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading policy {}", p.display()))?;
            let set: PolicySet = serde_json::from_str(&text).with_context(|| format!("parsing policy {}", p.display()))?;
            set.validate()?;
            set
        }
        None => PolicySet::default(),
    };
    let tokenizer = match &a.tokenizer {
        Some(p) => TokenizerHandle::load_tiktoken(p).with_context(|| format!("loading tokenizer {}", p.display()))?,
        None => TokenizerHandle::Whitespace,
    };
    let gate_domains = a
        .judge_domains
        .iter()
        .map(|d| d.parse::<Domain>().map_err(|_| UsageError(format!("unknown domain {d:?}"))))
        .collect::<Result<Vec<_>, _>>()?;

    let config = json!({
        "policy": policies,
        "tokenizer": tokenizer.name(),
        "split": split.as_str(),
        "strict": a.strict,
        "judge_endpoint": a.judge_endpoint,
        "judge_domains": gate_domains.iter().map(|d| d.as_str()).collect::<Vec<_>>(),
    });
    let mut manifest = RunManifest::start("curate", config, None);
    if a.policy.is_none() {
        manifest.note("no --policy given; built-in per-domain defaults used");
    }
    if a.tokenizer.is_none() {
        manifest.note("no --tokenizer given; whitespace token counting used");
    }
    for p in a.policy.iter().chain(&a.tokenizer) {
        manifest.input(p)?;
    }

    let loaded = load_corpus_with(&a.input, split, LoadOptions { strict: a.strict })
        .with_context(|| format!("loading corpus {}", a.input.display()))?;
    manifest.input(&a.input)?;

    let audit = SharedBuf::default();
    let curated = match &a.judge_endpoint {
        None => Curator::new(&policies, &tokenizer).run(&loaded.docs)?,
        Some(endpoint) => judged(&policies, &tokenizer, &loaded.docs, endpoint, gate_domains, audit.clone())?,
    };

    let mut rejects = loaded.rejects;
    rejects.extend(curated.rejects);
    for w in loaded.warnings.iter().chain(&curated.warnings) {
        log::warn!("{w}");
        manifest.note(w.clone());
    }
    let stats = if curated.accepted.is_empty() {
        manifest.note("no documents accepted; statistics are empty");
        CorpusStats::default()
    } else {
        compute_split_stats(&curated.accepted, split, &tokenizer)?
    };

    let rejects_path = a.rejects.clone().unwrap_or_else(|| sibling(&a.out, "rejects.jsonl"));
    let stats_path = a.stats.clone().unwrap_or_else(|| sibling(&a.out, "stats.json"));
    let mut out = Outputs::default();
    out.write(&a.out, |w| Ok(write_corpus(&curated.accepted, w)?))?;
    out.write(&rejects_path, |w| Ok(write_rejects(&rejects, w)?))?;
    out.write_json(&stats_path, &stats.report_json())?;
    if let Some(p) = &a.audit {
        out.write_bytes(p, &audit.contents())?;
    }
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out))?;
    println!("accepted {} rejected {}", curated.accepted.len(), rejects.len());
    Ok(())
}

#[cfg(feature = "http")]
fn judged(
    policies: &PolicySet,
    tokenizer: &TokenizerHandle,
    docs: &[mmdr_core::corpus::Document],
    endpoint: &str,
    gate_domains: Vec<Domain>,
    audit: SharedBuf,
) -> Result<mmdr_core::corpus::Curated> {
    use mmdr_core::annotate::http::{HttpConfig, HttpTransport};
    use mmdr_core::annotate::LlmClient;
    let client = LlmClient::new(HttpTransport::new(HttpConfig::from_env(Some(endpoint))?)).with_audit(audit);
    let mut curator = Curator::new(policies, tokenizer).with_gate(&client);
    curator.gate_domains = gate_domains;
    Ok(curator.run(docs)?)
}

#[cfg(not(feature = "http"))]
fn judged(
    _: &PolicySet,
    _: &TokenizerHandle,
    _: &[mmdr_core::corpus::Document],
    _: &str,
    _: Vec<Domain>,
    _: SharedBuf,
) -> Result<mmdr_core::corpus::Curated> {
    Err(UsageError("this build has no HTTP transport; --judge-endpoint is unavailable".into()).into())
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    let config = json!({ "endpoint": a.endpoint, "in_flight": a.in_flight, "all": a.all });
    let mut manifest = RunManifest::start("annotate", config, None);
    let mut docs = super::load_clean(&a.input, Split::Train, &mut manifest)?;
    let todo: Vec<usize> = (0..docs.len()).filter(|&i| a.all || docs[i].queries.is_empty()).collect();
    let audit = SharedBuf::default();
    let selected: Vec<_> = todo.iter().map(|&i| docs[i].clone()).collect();
    let results = generate(&selected, a.endpoint.as_deref(), a.in_flight as usize, audit.clone())?;
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| format!("{id}: {e}")))
        .collect();
    if !failed.is_empty() {
        bail!("query generation failed for {} document(s): {}", failed.len(), failed.join("; "));
    }
    for (&i, (_, r)) in todo.iter().zip(results) {
        docs[i].queries.push(r.expect("checked"));
    }
    let mut out = Outputs::default();
    out.write(&a.out, |w| Ok(write_corpus(&docs, w)?))?;
    if let Some(p) = &a.audit {
        out.write_bytes(p, &audit.contents())?;
    }
    out.commit(manifest, &default_manifest_path(&a.manifest, &a.out))?;
    println!("annotated {} document(s)", todo.len());
    Ok(())
}

#[cfg(feature = "http")]
fn generate(
    docs: &[mmdr_core::corpus::Document],
    endpoint: Option<&str>,
    in_flight: usize,
    audit: SharedBuf,
) -> Result<Vec<(String, mmdr_core::Result<String>)>> {
    use mmdr_core::annotate::http::{HttpConfig, HttpTransport};
    use mmdr_core::annotate::LlmClient;
    let client = LlmClient::new(HttpTransport::new(HttpConfig::from_env(endpoint)?)).with_audit(audit);
    Ok(client.generate_queries(docs, in_flight))
}

#[cfg(not(feature = "http"))]
fn generate(
    _: &[mmdr_core::corpus::Document],
    _: Option<&str>,
    _: usize,
    _: SharedBuf,
) -> Result<Vec<(String, mmdr_core::Result<String>)>> {
    Err(UsageError("this build has no HTTP transport".into()).into())
}
