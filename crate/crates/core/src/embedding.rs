//! Per-encoder embedding segments: validation, normalization, file formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "VREB" | version: u16 = 1 | encoder_id: u16 len + UTF-8 | dim: u32 | count: u64
//! count × ( item_id: u16 len + UTF-8 | dim × f32 )
//! ```
//!
//! Files ending in `.ndjson`, `.jsonl` or `.json` are read as one
//! `{"item_id": ..., "vector": [...]}` object per line instead.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

pub const MAGIC: [u8; 4] = *b"VREB";
pub const FORMAT_VERSION: u16 = 1;

/// Vectors whose norm is already this close to 1 are left untouched.
pub const NORM_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderRole {
    CrossModal,
    IntraModal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderProfile {
    pub encoder_id: String,
    pub dim: usize,
    pub role: EncoderRole,
}

impl EncoderProfile {
    pub fn new(encoder_id: impl Into<String>, dim: usize, role: EncoderRole) -> Result<Self> {
        let encoder_id = encoder_id.into();
        if encoder_id.is_empty() || encoder_id.len() > u16::MAX as usize {
            return Err(Error::InvalidProfile(format!("bad encoder id `{encoder_id}`")));
        }
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidProfile(format!("dim {dim} for `{encoder_id}`")));
        }
        Ok(EncoderProfile { encoder_id, dim, role })
    }
}

/// Scales `v` to unit L2 norm, rejecting non-finite and zero vectors.
pub fn normalize(item_id: &str, v: &mut [f32]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { item_id: item_id.to_string() });
    }
    let norm = dot::<f64>(v, v).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm { item_id: item_id.to_string() });
    }
    if (norm - 1.0).abs() > NORM_SLACK {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Ok(())
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine<S: Scalar>(u: &[f32], v: &[f32]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch { item_id: "<cosine operand>".into(), expected: u.len(), found: v.len() });
    }
    Ok(dot(u, v))
}

/// All vectors of one encoder, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    encoder_id: String,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl Segment {
    pub fn new(encoder_id: impl Into<String>, dim: usize) -> Self {
        Segment { encoder_id: encoder_id.into(), dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() }
    }

    pub fn for_profile(profile: &EncoderProfile) -> Self {
        Segment::new(profile.encoder_id.clone(), profile.dim)
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Validates, normalizes and appends one vector.
    pub fn push(&mut self, item_id: impl Into<String>, mut vector: Vec<f32>) -> Result<()> {
        let item_id = item_id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch { item_id, expected: self.dim, found: vector.len() });
        }
        if self.index.contains_key(&item_id) {
            return Err(Error::DuplicateItem { encoder_id: self.encoder_id.clone(), item_id });
        }
        normalize(&item_id, &mut vector)?;
        self.index.insert(item_id.clone(), self.ids.len());
        self.ids.push(item_id);
        self.data.extend_from_slice(&vector);
        Ok(())
    }

    pub fn get(&self, item_id: &str) -> Option<&[f32]> {
        self.index.get(item_id).map(|&i| self.row(i))
    }

    pub fn require(&self, item_id: &str) -> Result<&[f32]> {
        self.get(item_id).ok_or_else(|| Error::MissingEmbedding {
            encoder_id: self.encoder_id.clone(),
            item_id: item_id.to_string(),
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Appends every item of `other`, failing on any repeated id.
    pub fn merge(&mut self, other: Segment) -> Result<()> {
        if other.encoder_id != self.encoder_id {
            return Err(Error::EncoderMismatch { expected: self.encoder_id.clone(), found: other.encoder_id });
        }
        if other.dim != self.dim {
            return Err(Error::DimMismatch { item_id: "<segment>".into(), expected: self.dim, found: other.dim });
        }
        for (id, v) in other.iter() {
            self.push(id, v.to_vec())?;
        }
        Ok(())
    }

    /// Exact byte length of the binary encoding.
    pub fn encoded_len(&self) -> usize {
        header_len(&self.encoder_id) + self.ids.iter().map(|id| 2 + id.len() + 4 * self.dim).sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.encoder_id);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            put_str(&mut out, id);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses the binary encoding; `profile`, when given, must agree with the header.
    pub fn decode(bytes: &[u8], profile: Option<&EncoderProfile>) -> Result<Segment> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let encoder_id = r.string("encoder_id")?;
        let dim = u32::from_le_bytes(r.take(4, "dim")?.try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(r.take(8, "count")?.try_into().expect("8 bytes"));
        if let Some(p) = profile {
            if p.encoder_id != encoder_id {
                return Err(Error::EncoderMismatch { expected: p.encoder_id.clone(), found: encoder_id });
            }
            if p.dim != dim {
                return Err(Error::DimMismatch { item_id: "<header>".into(), expected: p.dim, found: dim });
            }
        }
        if dim == 0 {
            return Err(Error::InvalidProfile(format!("dim 0 in header of `{encoder_id}`")));
        }
        let mut seg = Segment::new(encoder_id, dim);
        for i in 0..count {
            let id = r.string(&format!("item_id of record {i}"))?;
            let raw = r.take(4 * dim, &format!("vector of `{id}`"))?;
            let v = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            seg.push(id, v)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(seg)
    }
}

fn header_len(encoder_id: &str) -> usize {
    4 + 2 + 2 + encoder_id.len() + 4 + 8
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::InvalidUtf8)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRow {
    item_id: String,
    vector: Vec<f32>,
}

fn is_text_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("ndjson" | "jsonl" | "json"))
}

/// Reads one embedding file (binary or line-delimited text) for `profile`.
pub fn load_embeddings(path: impl AsRef<Path>, profile: &EncoderProfile) -> Result<Segment> {
    let path = path.as_ref();
    if is_text_path(path) {
        let rows: Vec<TextRow> = crate::knowledge_base::read_ndjson(path)?;
        let mut seg = Segment::for_profile(profile);
        for row in rows {
            seg.push(row.item_id, row.vector)?;
        }
        Ok(seg)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Segment::decode(&bytes, Some(profile))
    }
}

/// Reads one embedding file whose dimension is taken from the file itself.
/// The segment must belong to `encoder_id`.
pub fn read_embeddings(path: impl AsRef<Path>, encoder_id: &str) -> Result<Segment> {
    let path = path.as_ref();
    let seg = if is_text_path(path) {
        let rows: Vec<TextRow> = crate::knowledge_base::read_ndjson(path)?;
        let dim = rows.first().map_or(0, |r| r.vector.len());
        let profile = EncoderProfile::new(encoder_id, dim.max(1), EncoderRole::CrossModal)?;
        let mut seg = Segment::for_profile(&profile);
        for row in rows {
            seg.push(row.item_id, row.vector)?;
        }
        seg
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Segment::decode(&bytes, None)?
    };
    if seg.encoder_id() != encoder_id {
        return Err(Error::EncoderMismatch { expected: encoder_id.to_string(), found: seg.encoder_id().to_string() });
    }
    Ok(seg)
}

/// Writes the segment in the binary format, or as text for `.ndjson`/`.jsonl`/`.json` paths.
pub fn write_embeddings(segment: &Segment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_text_path(path) {
        let rows: Vec<TextRow> =
            segment.iter().map(|(id, v)| TextRow { item_id: id.to_string(), vector: v.to_vec() }).collect();
        crate::knowledge_base::write_ndjson(path, &rows)
    } else {
        fs::write(path, segment.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Segments keyed by encoder id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    segments: BTreeMap<String, Segment>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a segment, merging with an existing one for the same encoder.
    pub fn insert(&mut self, segment: Segment) -> Result<()> {
        match self.segments.get_mut(segment.encoder_id()) {
            Some(existing) => existing.merge(segment),
            None => {
                self.segments.insert(segment.encoder_id().to_string(), segment);
                Ok(())
            }
        }
    }

    pub fn segment(&self, encoder_id: &str) -> Result<&Segment> {
        self.segments.get(encoder_id).ok_or_else(|| Error::UnknownEncoder(encoder_id.to_string()))
    }

    pub fn vector(&self, encoder_id: &str, item_id: &str) -> Result<&[f32]> {
        self.segment(encoder_id)?.require(item_id)
    }

    pub fn encoder_ids(&self) -> impl Iterator<Item = &str> {
        self.segments.keys().map(String::as_str)
    }
}

/// One query image as seen by every configured encoder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryInput {
    pub query_id: String,
    pub ground_truth_species: Option<String>,
    /// Cross-modal image vectors keyed by encoder id.
    pub cross_modal: BTreeMap<String, Vec<f32>>,
    /// Vector under the intra-modal (re-rank) encoder.
    pub intra_modal: Option<Vec<f32>>,
}

impl QueryInput {
    /// Collects the query's vectors from per-encoder query segments.
    pub fn from_store(
        query_id: &str,
        ground_truth_species: Option<String>,
        store: &EmbeddingStore,
        cross_encoders: &[String],
        intra_encoder: Option<&str>,
    ) -> Result<Self> {
        let mut cross_modal = BTreeMap::new();
        for enc in cross_encoders {
            cross_modal.insert(enc.clone(), store.vector(enc, query_id)?.to_vec());
        }
        let intra_modal = match intra_encoder {
            Some(enc) => Some(store.vector(enc, query_id)?.to_vec()),
            None => None,
        };
        Ok(QueryInput { query_id: query_id.to_string(), ground_truth_species, cross_modal, intra_modal })
    }

    pub fn cross(&self, encoder_id: &str) -> Result<&[f32]> {
        self.cross_modal.get(encoder_id).map(Vec::as_slice).ok_or_else(|| Error::MissingEmbedding {
            encoder_id: encoder_id.to_string(),
            item_id: self.query_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(dim: usize) -> EncoderProfile {
        EncoderProfile::new("enc-a", dim, EncoderRole::CrossModal).unwrap()
    }

    fn unit(dim: usize, hot: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        v
    }

    #[test]
    fn three_four_five() {
        let mut v = vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        normalize("x", &mut v).unwrap();
        assert_eq!(v[..2], [0.6, 0.8]);
        assert!(v[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn push_validation() {
        let mut seg = Segment::for_profile(&profile(8));
        for i in 0..5 {
            seg.push(format!("chunk-{i}"), unit(8, i)).unwrap();
        }
        assert_eq!(seg.len(), 5);
        let err = seg.push("chunk-x", vec![1.0; 7]).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { ref item_id, expected: 8, found: 7 } if item_id == "chunk-x"));
        let mut bad = unit(8, 0);
        bad[3] = f32::NAN;
        assert!(matches!(seg.push("nan", bad), Err(Error::NonFinite { .. })));
        assert!(matches!(seg.push("zero", vec![0.0; 8]), Err(Error::ZeroNorm { .. })));
        assert!(matches!(seg.push("chunk-1", unit(8, 1)), Err(Error::DuplicateItem { .. })));
    }

    #[test]
    fn cosine_examples() {
        let u = {
            let mut v = vec![0.3, -0.2, 0.9, 0.1];
            normalize("u", &mut v).unwrap();
            v
        };
        let neg: Vec<f32> = u.iter().map(|x| -x).collect();
        assert!((cosine::<f64>(&u, &u).unwrap() - 1.0).abs() < 1e-6);
        assert!((cosine::<f64>(&u, &neg).unwrap() + 1.0).abs() < 1e-6);
        assert!(cosine::<f64>(&unit(4, 0), &unit(4, 2)).unwrap().abs() < 1e-6);
        assert!(cosine::<f32>(&u, &u[..3]).is_err());
    }

    #[test]
    fn empty_segment_round_trip() {
        let seg = Segment::for_profile(&profile(4));
        let bytes = seg.encode();
        assert_eq!(bytes.len(), 4 + 2 + 2 + 5 + 4 + 8);
        assert_eq!(&bytes[bytes.len() - 8..], &0u64.to_le_bytes());
        assert_eq!(Segment::decode(&bytes, Some(&profile(4))).unwrap(), seg);
    }

    #[test]
    fn encoded_size_follows_the_layout() {
        // header + count * (2 + id_len + 4 * dim)
        let dim = 768;
        let mut seg = Segment::new("enc-a", dim);
        for i in 0..300 {
            seg.push(format!("sp{i:05}#0"), unit(dim, i % dim)).unwrap();
        }
        let expected = (4 + 2 + 2 + 5 + 4 + 8) + 300 * (2 + 9 + 4 * 768);
        assert_eq!(seg.encode().len(), expected);
        assert_eq!(seg.encoded_len(), expected);
        // corpus scale: 22,404 chunk ids of 9 bytes each at dim 768
        assert_eq!(header_len("enc-a") + 22_404 * (2 + 9 + 4 * 768), 69_071_557);
    }

    #[test]
    fn header_corruption() {
        let mut seg = Segment::for_profile(&profile(4));
        seg.push("a", unit(4, 0)).unwrap();
        seg.push("b", unit(4, 1)).unwrap();
        let good = seg.encode();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Segment::decode(&bad, None), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(Segment::decode(&bad, None), Err(Error::UnsupportedVersion(2))));

        let dim_at = 4 + 2 + 2 + 5;
        let mut bad = good.clone();
        bad[dim_at] = 5;
        assert!(matches!(Segment::decode(&bad, Some(&profile(4))), Err(Error::DimMismatch { expected: 4, found: 5, .. })));
        assert!(matches!(Segment::decode(&bad, None), Err(Error::Truncated(_))));

        let count_at = dim_at + 4;
        let mut bad = good.clone();
        bad[count_at] = 3;
        assert!(matches!(Segment::decode(&bad, None), Err(Error::Truncated(_))));
        let mut bad = good.clone();
        bad[count_at] = 1;
        assert!(matches!(Segment::decode(&bad, None), Err(Error::TrailingBytes(_))));

        let other = EncoderProfile::new("enc-b", 4, EncoderRole::CrossModal).unwrap();
        assert!(matches!(Segment::decode(&good, Some(&other)), Err(Error::EncoderMismatch { .. })));
    }

    #[test]
    fn text_and_binary_files() {
        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("e.ndjson");
        std::fs::write(
            &text,
            "{\"item_id\": \"a\", \"vector\": [3, 4, 0, 0]}\n{\"item_id\": \"b\", \"vector\": [0, 0, 2, 0]}\n",
        )
        .unwrap();
        let seg = load_embeddings(&text, &profile(4)).unwrap();
        assert_eq!(seg.get("a").unwrap(), [0.6, 0.8, 0.0, 0.0]);
        assert_eq!(seg.get("b").unwrap(), [0.0, 0.0, 1.0, 0.0]);

        let bin = dir.path().join("e.vreb");
        write_embeddings(&seg, &bin).unwrap();
        assert_eq!(load_embeddings(&bin, &profile(4)).unwrap(), seg);

        std::fs::write(&text, "{\"item_id\": \"chunk-x\", \"vector\": [1, 0, 0]}\n").unwrap();
        assert!(matches!(load_embeddings(&text, &profile(4)), Err(Error::DimMismatch { .. })));
        assert!(matches!(load_embeddings(dir.path().join("missing.vreb"), &profile(4)), Err(Error::Io { .. })));
    }

    #[test]
    fn store_rejects_cross_file_duplicates() {
        let mut a = Segment::new("enc-a", 2);
        a.push("x", vec![1.0, 0.0]).unwrap();
        let mut b = Segment::new("enc-a", 2);
        b.push("y", vec![0.0, 1.0]).unwrap();
        let mut store = EmbeddingStore::new();
        store.insert(a.clone()).unwrap();
        store.insert(b).unwrap();
        assert_eq!(store.segment("enc-a").unwrap().len(), 2);
        assert!(matches!(store.insert(a), Err(Error::DuplicateItem { .. })));
        assert!(matches!(store.vector("enc-z", "x"), Err(Error::UnknownEncoder(_))));
        assert!(matches!(store.vector("enc-a", "q"), Err(Error::MissingEmbedding { .. })));
    }

    fn raw_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-100.0f32..100.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(v in (1usize..64).prop_flat_map(raw_vec)) {
            let mut once = v.clone();
            normalize("v", &mut once).unwrap();
            let norm = dot::<f64>(&once, &once).sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-4);
            let mut twice = once.clone();
            normalize("v", &mut twice).unwrap();
            prop_assert_eq!(
                once.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                twice.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(pair in (1usize..48).prop_flat_map(|d| (raw_vec(d), raw_vec(d)))) {
            let (mut u, mut v) = pair;
            normalize("u", &mut u).unwrap();
            normalize("v", &mut v).unwrap();
            let a: f64 = cosine(&u, &v).unwrap();
            let b: f64 = cosine(&v, &u).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.abs() <= 1.0 + 1e-6);
        }

        #[test]
        fn binary_round_trip_is_lossless(rows in (1usize..16).prop_flat_map(|d| prop::collection::vec(raw_vec(d), 0..20))) {
            let dim = rows.first().map_or(3, Vec::len);
            let mut seg = Segment::new("enc-p", dim);
            for (i, r) in rows.into_iter().enumerate() {
                seg.push(format!("item-{i}"), r).unwrap();
            }
            let back = Segment::decode(&seg.encode(), None).unwrap();
            prop_assert_eq!(back.encode(), seg.encode());
            prop_assert_eq!(back, seg);
        }
    }
}
