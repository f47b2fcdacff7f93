//! BM25 inverted index over chunks.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln((N − df + 0.5) / (df + 0.5) + 1)
//! ```
//!
//! Terms are lowercased alphanumeric words; repeated query terms count once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenizer::words;
use crate::corpus::Chunk;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Index into the id-sorted document table.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    pub params: Bm25Params,
    ids: Vec<String>,
    lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    n: usize,
    avgdl: f64,
    k1: f64,
    b: f64,
}

const POSTINGS_MAGIC: &[u8; 4] = b"BM25";
const POSTINGS_VERSION: u32 = 1;

impl Bm25Index {
    /// Indexes `(id, text)` pairs. Document numbers follow ascending id, so
    /// every postings list is sorted by id.
    pub fn build<'a, I>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut docs: Vec<(&str, &str)> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.0.cmp(b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.to_string()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(docs.len());
        for (d, (_, text)) in docs.iter().enumerate() {
            let terms = words(text);
            lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push(Posting { doc: d as u32, tf: c });
            }
        }
        let total: u64 = lengths.iter().map(|&l| l as u64).sum();
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Ok(Self {
            params,
            ids: docs.iter().map(|(i, _)| i.to_string()).collect(),
            lengths,
            avgdl,
            postings,
        })
    }

    pub fn from_chunks(chunks: &[Chunk], params: Bm25Params) -> Result<Self> {
        Self::build(chunks.iter().map(|c| (c.id.as_str(), c.text.as_str())), params)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(|v| v.as_slice())
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.ids[doc as usize]
    }

    pub fn doc_len(&self, id: &str) -> Option<u32> {
        self.ids
            .binary_search_by(|x| x.as_str().cmp(id))
            .ok()
            .map(|i| self.lengths[i])
    }

    pub fn term_frequency(&self, term: &str, id: &str) -> u32 {
        let Ok(d) = self.ids.binary_search_by(|x| x.as_str().cmp(id)) else {
            return 0;
        };
        self.postings(term)
            .and_then(|p| p.iter().find(|p| p.doc == d as u32))
            .map_or(0, |p| p.tf)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings(term).map_or(0, |p| p.len()) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Top `top_k` `(id, score)` by descending score, ties by ascending id.
    /// Documents sharing no term with the query are not returned.
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<(String, f64)>> {
        if top_k == 0 {
            return Err(Error::Invalid("top_k must be >= 1".into()));
        }
        let terms = words(query);
        if terms.is_empty() {
            return Err(Error::Invalid("empty query".into()));
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        let mut seen = HashSet::new();
        for t in terms.iter().filter(|t| seen.insert(t.as_str())) {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for p in list {
                let len = self.lengths[p.doc as usize] as f64;
                let tf = p.tf as f64;
                let norm = if self.avgdl > 0.0 { len / self.avgdl } else { 0.0 };
                *scores.entry(p.doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        // Doc numbers follow id order, so the secondary key is the id order.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(ranked
            .into_iter()
            .map(|(d, s)| (self.ids[d as usize].clone(), s))
            .collect())
    }

    /// Writes `postings.bin` and `meta.json` into `dir`.
    ///
    /// `postings.bin`: magic `BM25`, u32 version, u32 doc count, per doc
    /// (u16 id length, id bytes, u32 length), u32 term count, per term in
    /// sorted order (u16 term length, term bytes, u32 postings, per posting
    /// u32 doc, u32 tf). Little-endian throughout.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(POSTINGS_MAGIC);
        buf.extend_from_slice(&POSTINGS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for (id, &len) in self.ids.iter().zip(&self.lengths) {
            put_str(&mut buf, id)?;
            buf.extend_from_slice(&len.to_le_bytes());
        }
        buf.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for (term, list) in &self.postings {
            put_str(&mut buf, term)?;
            buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                buf.extend_from_slice(&p.doc.to_le_bytes());
                buf.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        fs::write(dir.join("postings.bin"), buf)?;
        let meta = Meta {
            n: self.ids.len(),
            avgdl: self.avgdl,
            k1: self.params.k1,
            b: self.params.b,
        };
        fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let bytes = fs::read(dir.join("postings.bin"))?;
        let mut r = Reader::new(&bytes);
        if r.take(4)? != POSTINGS_MAGIC {
            return Err(r.corrupt("bad postings magic"));
        }
        if r.u32()? != POSTINGS_VERSION {
            return Err(r.corrupt("unsupported postings version"));
        }
        let n = r.u32()? as usize;
        if n != meta.n {
            return Err(r.corrupt("document count disagrees with meta.json"));
        }
        let mut ids = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.string()?);
            lengths.push(r.u32()?);
        }
        let terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let t = r.string()?;
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(n));
            for _ in 0..count {
                let doc = r.u32()?;
                if doc as usize >= n {
                    return Err(r.corrupt("posting references unknown document"));
                }
                list.push(Posting { doc, tf: r.u32()? });
            }
            postings.insert(t, list);
        }
        if !r.done() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Self {
            params: Bm25Params { k1: meta.k1, b: meta.b },
            ids,
            lengths,
            avgdl: meta.avgdl,
            postings,
        })
    }
}

pub(crate) fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Invalid(format!("string too long: {} bytes", s.len())))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn corrupt(&self, msg: &str) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            msg: msg.to_string(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                msg: format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt {
            offset: at as u64,
            msg: "invalid UTF-8".into(),
        })
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::build(docs.iter().copied(), Bm25Params::default()).unwrap()
    }

    fn toy() -> Bm25Index {
        index(&[
            ("d1", "The cat sat on the mat."),
            ("d2", "the dog sat"),
            ("d3", "A cat and a dog played"),
        ])
    }

    #[test]
    fn toy_postings_match_hand_table() {
        let idx = toy();
        let table: &[(&str, &[(u32, u32)])] = &[
            ("the", &[(0, 2), (1, 1)]),
            ("cat", &[(0, 1), (2, 1)]),
            ("sat", &[(0, 1), (1, 1)]),
            ("a", &[(2, 2)]),
            ("dog", &[(1, 1), (2, 1)]),
            ("mat", &[(0, 1)]),
        ];
        for (term, expect) in table {
            let got: Vec<(u32, u32)> = idx.postings(term).unwrap().iter().map(|p| (p.doc, p.tf)).collect();
            assert_eq!(&got, expect, "{term}");
        }
        assert_eq!(idx.doc_len("d1"), Some(6));
        assert_eq!(idx.avgdl(), 5.0);
    }

    #[test]
    fn toy_scores_match_hand_computation() {
        // Worked out by hand from the formula with N=3, avgdl=5.
        let idx = toy();
        let cases: &[(&str, &[(&str, f64)])] = &[
            ("cat sat", &[("d1", 0.9056865066601396), ("d2", 0.5085460680904883), ("d3", 0.4528432533300698)]),
            ("dog", &[("d2", 0.5085460680904883), ("d3", 0.4528432533300698)]),
            ("the THE", &[("d1", 0.6009467668687063), ("d2", 0.5085460680904883)]),
        ];
        for (q, expect) in cases {
            let got = idx.search(q, 5).unwrap();
            assert_eq!(got.len(), expect.len(), "{q}");
            for ((id, s), (eid, es)) in got.iter().zip(expect.iter()) {
                assert_eq!(id, eid);
                assert!((s - es).abs() < 1e-9, "{q} {id}: {s} vs {es}");
            }
        }
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = index(&[]);
        assert_eq!(idx.len(), 0);
        assert!(idx.search("anything", 5).unwrap().is_empty());
    }

    #[test]
    fn single_chunk_counts() {
        let idx = index(&[("c", "a b a")]);
        assert_eq!(idx.term_frequency("a", "c"), 2);
        assert_eq!(idx.term_frequency("b", "c"), 1);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn term_containment() {
        let idx = index(&[("d1", "apple"), ("d2", "banana")]);
        let hits = idx.search("apple", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "d1");
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let idx = index(&[("z", "same words"), ("a", "same words"), ("m", "same words")]);
        let ids: Vec<_> = idx.search("same", 5).unwrap().into_iter().map(|h| h.0).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = Bm25Index::build([("x", "a"), ("x", "b")], Bm25Params::default());
        assert!(matches!(r, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn empty_query_rejected() {
        let idx = index(&[("d", "a")]);
        assert!(idx.search("  ?! ", 3).is_err());
        assert!(idx.search("a", 0).is_err());
    }

    #[test]
    fn top_k_truncates() {
        let docs: Vec<(String, String)> = (0..10).map(|i| (format!("d{i}"), "w".to_string())).collect();
        let idx = Bm25Index::build(docs.iter().map(|(a, b)| (a.as_str(), b.as_str())), Bm25Params::default()).unwrap();
        assert_eq!(idx.search("w", 3).unwrap().len(), 3);
    }

    #[test]
    fn save_load_roundtrip() {
        let idx = index(&[("d1", "the cat sat"), ("d2", "the dog ran far"), ("d3", "cat and dog")]);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = Bm25Index::load(dir.path()).unwrap();
        assert_eq!(back, idx);
        let bytes = fs::read(dir.path().join("postings.bin")).unwrap();
        fs::write(dir.path().join("postings.bin"), &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(Bm25Index::load(dir.path()), Err(Error::Corrupt { .. })));
    }
}
