use std::path::PathBuf;

use mmdr_core::corpus::{
    filter_document, is_garbled, parse_corpus, strip_math, write_corpus, BpeTokenizer, Curator, Document, Domain,
    FilterPolicy, LoadOptions, PolicySet, Split, TokenizerHandle, CL100K_PATTERN,
};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// Reference ids from tiktoken 0.14.0 run on fixture.tiktoken with the same
// split pattern, frozen once.
const BPE_REFERENCE: &[(&str, &[u32])] = &[
    (
        "The retrieval system ranks documents by similarity.",
        &[84, 104, 101, 297, 342, 345, 274, 346, 343, 46],
    ),
    (
        "Images and text segments: the document answers the query!",
        &[73, 109, 97, 103, 101, 115, 275, 296, 344, 58, 259, 267, 348, 259, 298, 33],
    ),
    (
        "Émile's 12345 résumé isn't here\n\n  ok",
        &[
            195, 137, 109, 105, 108, 101, 39, 115, 32, 49, 50, 51, 52, 53, 277, 195, 169, 115, 117, 109, 195, 169, 350,
            110, 39, 116, 32, 104, 273, 101, 10, 10, 32, 32, 111, 107,
        ],
    ),
    ("", &[]),
    (
        "queries   with    spacing\tand tabs",
        &[113, 117, 101, 283, 115, 32, 32, 349, 32, 32, 32, 276, 112, 97, 99, 287, 9, 266, 100, 256, 97, 98, 115],
    ),
];

#[test]
fn bpe_matches_reference_tokenization() {
    let bpe = BpeTokenizer::from_tiktoken_file(fixture("fixture.tiktoken"), CL100K_PATTERN).unwrap();
    assert_eq!(bpe.vocab_size(), 354);
    for (text, ids) in BPE_REFERENCE {
        assert_eq!(bpe.encode(text).unwrap(), *ids, "{text:?}");
    }
    let handle = TokenizerHandle::bpe(bpe);
    for (text, ids) in BPE_REFERENCE {
        assert_eq!(handle.count_tokens(text).unwrap(), ids.len());
    }
}

#[test]
fn handle_is_shareable_across_threads() {
    let handle = TokenizerHandle::load_tiktoken(fixture("fixture.tiktoken")).unwrap();
    let (text, ids) = BPE_REFERENCE[1];
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| assert_eq!(handle.count_tokens(text).unwrap(), ids.len()));
        }
    });
}

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[a-z ]{0,8}",
            Just("$".to_string()),
            Just("$$".to_string()),
            Just("\\begin{equation}".to_string()),
            Just("\\end{equation}".to_string()),
            "[!@#%^&*~]{0,14}",
        ],
        0..12,
    )
    .prop_map(|parts| parts.concat())
}

fn doc_strategy() -> impl Strategy<Value = Document> {
    (
        0usize..3,
        prop::collection::vec(
            prop_oneof![
                3 => (1usize..200).prop_map(|n| vec!["word"; n].join(" ")),
                1 => "[!@#%^&*~ a-z]{1,40}",
            ],
            1..5,
        ),
        0usize..3,
        prop::collection::vec("[a-z ]{1,20}", 0..3),
    )
        .prop_map(|(d, texts, imgs, queries)| Document {
            id: "d".into(),
            domain: Domain::ALL[d],
            texts,
            images: (0..imgs).map(|k| format!("i{k}.png")).collect(),
            queries,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn strip_math_is_idempotent(s in text_strategy()) {
        let once = strip_math(&s).text;
        prop_assert_eq!(strip_math(&once).text, once);
    }

    #[test]
    fn garbled_is_monotone_in_threshold(s in "[!@#a-z ]{0,40}", k in 1usize..20) {
        let at = |run| is_garbled(&s, &FilterPolicy { garbled_min_run: run, ..FilterPolicy::default() });
        if at(k) {
            for lower in 1..=k {
                prop_assert!(at(lower));
            }
        }
    }

    #[test]
    fn stricter_policy_accepts_a_subset(
        docs in prop::collection::vec(doc_strategy(), 1..20),
        loose_tokens in 0usize..300,
        extra in 0usize..300,
        loose_frac in 0.0f64..=1.0,
        cut in 0.0f64..=1.0,
    ) {
        let tok = TokenizerHandle::Whitespace;
        let loose = FilterPolicy { min_tokens: loose_tokens, garbled_doc_fraction: loose_frac, ..FilterPolicy::default() };
        let strict = FilterPolicy { min_tokens: loose_tokens + extra, garbled_doc_fraction: loose_frac * cut, ..loose.clone() };
        for d in &docs {
            let s = filter_document(d, &strict, &tok).unwrap().is_accept();
            let l = filter_document(d, &loose, &tok).unwrap().is_accept();
            prop_assert!(!s || l);
            prop_assert_eq!(filter_document(d, &strict, &tok).unwrap(), filter_document(d, &strict, &tok).unwrap());
        }
    }

    #[test]
    fn canonical_form_round_trips(docs in prop::collection::vec(doc_strategy(), 0..8)) {
        let docs: Vec<Document> = docs
            .into_iter()
            .enumerate()
            .map(|(i, d)| Document { id: format!("d{i}"), ..d })
            .collect();
        let mut first = Vec::new();
        write_corpus(&docs, &mut first).unwrap();
        let parsed = parse_corpus(first.as_slice(), Split::Train, LoadOptions { strict: true }).unwrap();
        prop_assert!(parsed.rejects.is_empty());
        prop_assert_eq!(&parsed.docs, &docs);
        let mut second = Vec::new();
        write_corpus(&parsed.docs, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn curation_keeps_input_order(docs in prop::collection::vec(doc_strategy(), 0..30)) {
        let docs: Vec<Document> = docs
            .into_iter()
            .enumerate()
            .map(|(i, d)| Document { id: format!("d{i:02}"), ..d })
            .collect();
        let policies = PolicySet::default();
        let tok = TokenizerHandle::Whitespace;
        let out = Curator::new(&policies, &tok).run(&docs).unwrap();
        let ids: Vec<&str> = out.accepted.iter().map(|d| d.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        prop_assert_eq!(ids, sorted);
        prop_assert_eq!(out.accepted.len() + out.rejects.len(), docs.len());
    }
}
