//! Cosine ranking over fused document vectors: exact flat search and an HNSW
//! graph index, plus the `DIDX` index file format.
//!
//! ```text
//! "DIDX" | version u8 = 1 | kind u8 (0 flat, 1 hnsw) | payload
//! ```
//!
//! Both payloads start with `count u32 | dim u32 | count × (id_len u16 | id)`
//! followed by `count × dim` f32 unit vectors. HNSW appends its parameters and
//! adjacency lists (see [`HnswIndex`]).

mod flat;
mod hnsw;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use flat::{build_flat, search_flat, FlatIndex};
pub use hnsw::{build_hnsw, build_hnsw_from_rows, search_hnsw, HnswIndex, HnswParams};

use crate::embeddings::Cursor;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"DIDX";
pub const INDEX_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Hits in non-increasing score order, ties by ascending `doc_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn is_well_ordered(&self) -> bool {
        self.hits.windows(2).all(|w| {
            w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id)
        })
    }
}

pub trait SearchIndex: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn doc_ids(&self) -> &[String];
    /// Top `k` hits for `query`, `k ≥ 1`.
    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Flat(FlatIndex),
    Hnsw(HnswIndex),
}

impl SearchIndex for AnyIndex {
    fn dim(&self) -> usize {
        match self {
            AnyIndex::Flat(i) => i.dim(),
            AnyIndex::Hnsw(i) => i.dim(),
        }
    }

    fn len(&self) -> usize {
        match self {
            AnyIndex::Flat(i) => i.len(),
            AnyIndex::Hnsw(i) => i.len(),
        }
    }

    fn doc_ids(&self) -> &[String] {
        match self {
            AnyIndex::Flat(i) => i.doc_ids(),
            AnyIndex::Hnsw(i) => i.doc_ids(),
        }
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        match self {
            AnyIndex::Flat(i) => i.search(query, k),
            AnyIndex::Hnsw(i) => i.search(query, k),
        }
    }
}

/// Exact cosine in 64-bit. Index rows are unit vectors up to f32 rounding, so
/// both norms are still divided out.
pub(crate) fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0f64;
    let mut aa = 0f64;
    let mut bb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

pub(crate) fn check_query(query: &[f32], dim: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if query.len() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: query.len(),
        });
    }
    if crate::scalar::norm(query) == 0.0 {
        return Err(Error::ZeroVector(Some("query".into())));
    }
    Ok(())
}

/// Orders candidate rows by descending score, ties by ascending id.
pub(crate) fn sort_hits(ids: &[String], mut scored: Vec<(usize, f64)>, k: usize) -> Vec<Hit> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
    scored.truncate(k);
    scored
        .into_iter()
        .map(|(i, score)| Hit {
            doc_id: ids[i].clone(),
            score,
        })
        .collect()
}

/// Unit-normalized rows with unique ids: the storage shared by both indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Rows {
    pub dim: usize,
    pub ids: Vec<String>,
    pub data: Vec<f32>,
}

impl Rows {
    pub fn from_iter<'a>(dim: usize, rows: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Rows {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        };
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: v.len() });
            }
            if !seen.insert(id.to_owned()) {
                return Err(Error::DuplicateId(id.to_owned()));
            }
            let unit = crate::embeddings::l2_normalize(v).map_err(|_| Error::ZeroVector(Some(id.to_owned())))?;
            out.ids.push(id.to_owned());
            out.data.extend_from_slice(&unit);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let count = u32::try_from(self.len()).map_err(|_| Error::InvalidArgument("too many rows".into()))?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for id in &self.ids {
            let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("id too long: {id}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn read(c: &mut Cursor<'_>) -> Result<Self> {
        let count = c.u32("count")? as usize;
        let dim = c.u32("dim")? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            ids.push(c.string("id")?);
        }
        let n = count.checked_mul(dim).ok_or_else(|| Error::Truncated("vectors".into()))?;
        let data = c.f32s(n, "vectors")?;
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Rows { dim, ids, data })
    }
}

pub fn write_index_to<W: Write>(index: &AnyIndex, mut w: W) -> Result<()> {
    w.write_all(INDEX_MAGIC)?;
    match index {
        AnyIndex::Flat(i) => {
            w.write_all(&[INDEX_VERSION, 0])?;
            i.rows.write(&mut w)?;
        }
        AnyIndex::Hnsw(i) => {
            w.write_all(&[INDEX_VERSION, 1])?;
            i.rows.write(&mut w)?;
            i.write_graph(&mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn index_bytes(index: &AnyIndex) -> Vec<u8> {
    let mut buf = Vec::new();
    write_index_to(index, &mut buf).expect("writing to memory");
    buf
}

pub fn write_index(index: &AnyIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_index_to(index, BufWriter::new(f)).map_err(|e| match e {
        Error::Stream(s) => Error::io(path, s),
        other => other,
    })
}

pub fn read_index_from_bytes(buf: &[u8]) -> Result<AnyIndex> {
    let mut c = Cursor::new(buf);
    c.magic(INDEX_MAGIC)?;
    let version = c.u8("version")?;
    if version != INDEX_VERSION {
        return Err(Error::BadVersion(version));
    }
    let kind = c.u8("kind")?;
    let rows = Rows::read(&mut c)?;
    let index = match kind {
        0 => AnyIndex::Flat(FlatIndex { rows }),
        1 => AnyIndex::Hnsw(HnswIndex::read_graph(rows, &mut c)?),
        k => return Err(Error::InvalidArgument(format!("unknown index kind {k}"))),
    };
    c.finish()?;
    Ok(index)
}

pub fn read_index(path: impl AsRef<Path>) -> Result<AnyIndex> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    read_index_from_bytes(&buf)
}

/// One JSON object per line: `{"query_id": ..., "hits": [{"doc_id", "score"}]}`.
pub fn write_results<W: Write>(lists: &[RankedList], mut w: W) -> Result<()> {
    for l in lists {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingStore, StoreKind};

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(StoreKind::Text, 3, false);
        s.push("a", &[1.0, 0.0, 0.0]).unwrap();
        s.push("b", &[0.0, 2.0, 0.0]).unwrap();
        s.push("c", &[0.0, 0.0, 3.0]).unwrap();
        s.push("d", &[1.0, 1.0, 0.0]).unwrap();
        s
    }

    #[test]
    fn serialization_round_trips_search() {
        let s = store();
        let flat = AnyIndex::Flat(build_flat(&s).unwrap());
        let hnsw = AnyIndex::Hnsw(build_hnsw(&s, HnswParams::default(), 7).unwrap());
        for idx in [flat, hnsw] {
            let bytes = index_bytes(&idx);
            assert_eq!(&bytes[..4], b"DIDX");
            let back = read_index_from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            let q = [0.3, 0.9, 0.1];
            assert_eq!(back.search(&q, 4).unwrap(), idx.search(&q, 4).unwrap());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = index_bytes(&AnyIndex::Flat(build_flat(&store()).unwrap()));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_index_from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(read_index_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
    }

    #[test]
    fn results_jsonl_shape() {
        let l = RankedList {
            query_id: "q".into(),
            hits: vec![Hit {
                doc_id: "a".into(),
                score: 0.5,
            }],
        };
        let mut buf = Vec::new();
        write_results(&[l], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"query_id\":\"q\",\"hits\":[{\"doc_id\":\"a\",\"score\":0.5}]}\n");
    }
}
