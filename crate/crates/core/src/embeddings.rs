//! Precomputed embedding vectors and the `DEMB` on-disk format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DEMB" | version u8 = 1 | kind u8 | count u32 | dim u32 | normalized u8
//! count × (id_len u16 | id bytes, UTF-8)
//! count × dim × f32, row-major, in id order
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::parse_image_id;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const STORE_MAGIC: &[u8; 4] = b"DEMB";
pub const STORE_VERSION: u8 = 1;
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Text = 0,
    Image = 1,
    Query = 2,
}

impl StoreKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(StoreKind::Text),
            1 => Ok(StoreKind::Image),
            2 => Ok(StoreKind::Query),
            other => Err(Error::InvalidArgument(format!("unknown store kind byte {other}"))),
        }
    }
}

/// Id-addressed matrix of `f32` vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    kind: StoreKind,
    dim: usize,
    normalized: bool,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(kind: StoreKind, dim: usize, normalized: bool) -> Self {
        Self {
            kind,
            dim,
            normalized,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Builds a store without checking invariants; [`validate`](Self::validate)
    /// and [`write_store`] do.
    pub fn from_parts(kind: StoreKind, dim: usize, normalized: bool, ids: Vec<String>, data: Vec<f32>) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            kind,
            dim,
            normalized,
            ids,
            index,
            data,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, v: &[f32]) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.normalized {
            check_norm(&id, v)?;
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn normalized(&self) -> bool {
        self.normalized
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn try_get(&self, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::MissingId(id.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if self.data.len() != self.ids.len() * self.dim {
            return Err(Error::DimMismatch {
                expected: self.ids.len() * self.dim,
                got: self.data.len(),
            });
        }
        if self.index.len() != self.ids.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = self.ids.iter().find(|id| !seen.insert(*id)).cloned().unwrap_or_default();
            return Err(Error::DuplicateId(dup));
        }
        if self.normalized {
            for (id, v) in self.iter() {
                check_norm(id, v)?;
            }
        }
        Ok(())
    }

    /// Groups `docid#k` entries of an image store by document, ordered by `k`.
    pub fn image_groups(&self) -> Result<BTreeMap<String, ImageGroup>> {
        let mut groups: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for id in &self.ids {
            let (doc, k) = parse_image_id(id)
                .ok_or_else(|| Error::InvalidArgument(format!("image id {id:?} is not of the form docid#k")))?;
            groups.entry(doc.to_owned()).or_default().push((k, id.clone()));
        }
        Ok(groups
            .into_iter()
            .map(|(doc_id, mut members)| {
                members.sort();
                let member_ids = members.into_iter().map(|(_, id)| id).collect();
                (doc_id.clone(), ImageGroup { doc_id, member_ids })
            })
            .collect())
    }
}

fn check_norm(id: &str, v: &[f32]) -> Result<()> {
    let n = crate::scalar::norm(v);
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NormViolation { id: id.to_owned(), norm: n });
    }
    Ok(())
}

pub fn write_store_to<W: Write>(store: &EmbeddingStore, mut w: W) -> Result<()> {
    store.validate()?;
    let count = u32::try_from(store.len()).map_err(|_| Error::InvalidArgument("too many entries".into()))?;
    let dim = u32::try_from(store.dim).map_err(|_| Error::InvalidArgument("dim too large".into()))?;
    w.write_all(STORE_MAGIC)?;
    w.write_all(&[STORE_VERSION, store.kind as u8])?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&[store.normalized as u8])?;
    for id in &store.ids {
        let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("id too long: {id}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    for x in &store.data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_store_to(store, BufWriter::new(f)).map_err(|e| match e {
        Error::Stream(s) => Error::io(path, s),
        other => other,
    })
}

/// Little-endian cursor over an in-memory buffer.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(what.into()))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic").map_err(|_| Error::BadMagic {
            expected: String::from_utf8_lossy(expected).into(),
            found: String::from_utf8_lossy(self.buf).into(),
        })?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into(),
                found: String::from_utf8_lossy(found).into(),
            });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::InvalidArgument(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn read_store_from_bytes(buf: &[u8]) -> Result<EmbeddingStore> {
    let mut c = Cursor::new(buf);
    c.magic(STORE_MAGIC)?;
    let version = c.u8("version")?;
    if version != STORE_VERSION {
        return Err(Error::BadVersion(version));
    }
    let kind = StoreKind::from_byte(c.u8("kind")?)?;
    let count = c.u32("count")? as usize;
    let dim = c.u32("dim")? as usize;
    let normalized = match c.u8("normalized flag")? {
        0 => false,
        1 => true,
        b => return Err(Error::InvalidArgument(format!("bad normalized flag {b}"))),
    };
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        ids.push(c.string("id")?);
    }
    let n = count.checked_mul(dim).ok_or_else(|| Error::Truncated("payload".into()))?;
    let data = c.f32s(n, "vector payload")?;
    c.finish()?;
    let store = EmbeddingStore::from_parts(kind, dim, normalized, ids, data);
    store.validate()?;
    Ok(store)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    read_store_from_bytes(&buf)
}

/// Plain-text interchange: one `id v1 v2 ... vd` line per entry. Blank lines
/// and `#` comments are skipped. The dimension is taken from the first row.
pub fn read_text_store<R: Read>(r: R, kind: StoreKind, normalized: bool) -> Result<EmbeddingStore> {
    let mut store: Option<EmbeddingStore> = None;
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line has a token");
        let v: Vec<f32> = parts
            .map(|p| p.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))?;
        let s = store.get_or_insert_with(|| EmbeddingStore::new(kind, v.len(), normalized));
        s.push(id, &v)?;
    }
    store.ok_or_else(|| Error::Empty("text store has no rows".into()))
}

/// Member image embeddings of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGroup {
    pub doc_id: String,
    pub member_ids: Vec<String>,
}

/// Elementwise mean of the member vectors, accumulated in 64-bit.
pub fn mean_pool_images(group: &ImageGroup, store: &EmbeddingStore) -> Result<Vec<f32>> {
    if store.kind() != StoreKind::Image {
        return Err(Error::InvalidArgument("mean pooling needs an image store".into()));
    }
    if group.member_ids.is_empty() {
        return Err(Error::Empty(format!("image group of {} is empty", group.doc_id)));
    }
    let mut acc = vec![0f64; store.dim()];
    for id in &group.member_ids {
        for (a, x) in acc.iter_mut().zip(store.try_get(id)?) {
            *a += *x as f64;
        }
    }
    let m = group.member_ids.len() as f64;
    Ok(acc.into_iter().map(|a| (a / m) as f32).collect())
}

/// Unit-L2 copy of `v`; the norm is accumulated in 64-bit.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = crate::scalar::norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector(None));
    }
    Ok(v.iter().map(|x| T::of(x.as_f64() / n)).collect())
}
