use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::encoder::BiEncoder;
use crate::corpus::{make_training_pairs, Dialogue, EmotionLabel, EmotionManifest, Vocab};
use crate::error::{Error, Result};

const POOL_MAGIC: &[u8; 8] = b"EXGNPOOL";
const POOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub tokens: Vec<usize>,
    pub source_dialogue_id: String,
    pub vector: Vec<f64>,
}

/// Encoded agent responses of the training dialogues with one emotion.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub emotion: EmotionLabel,
    pub entries: Vec<PoolEntry>,
}

/// Pools keyed by emotion id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolSet {
    pub pools: BTreeMap<usize, CandidatePool>,
    /// Emotions of the manifest that ended up without a pool.
    pub warnings: Vec<String>,
}

impl PoolSet {
    pub fn get(&self, emotion_id: usize) -> Result<&CandidatePool> {
        self.pools.get(&emotion_id).ok_or(Error::MissingPool(emotion_id))
    }

    pub fn total_entries(&self) -> usize {
        self.pools.values().map(|p| p.entries.len()).sum()
    }
}

/// Encodes every agent response of `dialogues` once with the candidate
/// encoder and files it under the dialogue's emotion.
pub fn build_pools(dialogues: &[Dialogue], vocab: &Vocab, enc: &BiEncoder, manifest: &EmotionManifest) -> Result<PoolSet> {
    let items: Vec<(EmotionLabel, String, Vec<usize>)> = dialogues
        .iter()
        .flat_map(make_training_pairs)
        .map(|p| (p.emotion, p.source_dialogue_id, vocab.encode(&p.response.tokens)))
        .collect();
    let vectors: Vec<Result<Vec<f64>>> = items.par_iter().map(|(_, _, t)| enc.candidate_vector(t)).collect();
    let mut set = PoolSet::default();
    for ((emotion, source_dialogue_id, tokens), vector) in items.into_iter().zip(vectors) {
        set.pools
            .entry(emotion.id)
            .or_insert_with(|| CandidatePool { emotion, entries: Vec::new() })
            .entries
            .push(PoolEntry { tokens, source_dialogue_id, vector: vector? });
    }
    for (id, name) in manifest.emotions.iter().enumerate() {
        if !set.pools.contains_key(&id) {
            let msg = format!("no training responses for emotion `{name}`; pool omitted");
            log::warn!("{msg}");
            set.warnings.push(msg);
        }
    }
    Ok(set)
}

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

/// Header (emotion id, entry count, vector width) per pool, then per entry
/// the dialogue id, token ids and vector.
pub fn save_pools(path: &Path, pools: &PoolSet) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut write = || -> std::io::Result<()> {
        w.write_all(POOL_MAGIC)?;
        w.write_all(&POOL_VERSION.to_le_bytes())?;
        put_u32(&mut w, pools.pools.len())?;
        for pool in pools.pools.values() {
            let width = pool.entries.first().map_or(0, |e| e.vector.len());
            put_u32(&mut w, pool.emotion.id)?;
            w.write_all(&(pool.entries.len() as u64).to_le_bytes())?;
            w.write_all(&(width as u64).to_le_bytes())?;
            for e in &pool.entries {
                put_u32(&mut w, e.source_dialogue_id.len())?;
                w.write_all(e.source_dialogue_id.as_bytes())?;
                put_u32(&mut w, e.tokens.len())?;
                for &t in &e.tokens {
                    put_u32(&mut w, t)?;
                }
                for v in &e.vector {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()
    };
    write().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> std::io::Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> std::io::Result<usize> {
        Ok(u64::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn load_pools(path: &Path, manifest: &EmotionManifest) -> Result<PoolSet> {
    let io = |e| Error::io(path, e);
    let mut r = Reader { inner: BufReader::new(File::open(path).map_err(io)?) };
    if &r.bytes::<8>().map_err(io)? != POOL_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a pool file", path.display())));
    }
    let version = u32::from_le_bytes(r.bytes().map_err(io)?);
    if version != POOL_VERSION {
        return Err(Error::Checkpoint(format!("unsupported pool file version {version}")));
    }
    let mut set = PoolSet::default();
    for _ in 0..r.u32().map_err(io)? {
        let id = r.u32().map_err(io)?;
        let emotion = manifest
            .by_id(id)
            .ok_or_else(|| Error::Checkpoint(format!("pool emotion id {id} not in manifest")))?;
        let count = r.u64().map_err(io)?;
        let width = r.u64().map_err(io)?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32().map_err(io)?;
            let mut id_bytes = vec![0u8; n];
            r.inner.read_exact(&mut id_bytes).map_err(io)?;
            let source_dialogue_id =
                String::from_utf8(id_bytes).map_err(|_| Error::Checkpoint("dialogue id is not UTF-8".into()))?;
            let tokens = (0..r.u32().map_err(io)?).map(|_| r.u32()).collect::<std::io::Result<_>>().map_err(io)?;
            let vector = (0..width).map(|_| r.f64()).collect::<std::io::Result<_>>().map_err(io)?;
            entries.push(PoolEntry { tokens, source_dialogue_id, vector });
        }
        set.pools.insert(id, CandidatePool { emotion, entries });
    }
    Ok(set)
}
