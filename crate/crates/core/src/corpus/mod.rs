//! Dialogue data model, ingestion, pair construction, retriever training
//! samples, splits, vocabulary and word vectors.

mod dpr;
mod embeddings;
mod split;
mod tokenize;
mod toy;
mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dpr::{build_dpr_samples, DprSample, Negative, DEFAULT_N_NEG};
pub use embeddings::{load_embedding_file, CoverageReport, EmbeddingTable};
pub use split::{split_corpus, Split, SplitSpec};
pub use tokenize::{detokenize, tokenize};
pub use toy::{generate_toy_corpus, ToyCorpusConfig};
pub use vocab::{Vocab, EOS, PAD, START, UNK};

use crate::error::{Error, Result};

/// The 32 emotion labels of the reference empathetic-dialogue corpus.
pub const EMOTIONS: [&str; 32] = [
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive", "ashamed", "caring",
    "confident", "content", "devastated", "disappointed", "disgusted", "embarrassed", "excited",
    "faithful", "furious", "grateful", "guilty", "hopeful", "impressed", "jealous", "joyful",
    "lonely", "nostalgic", "prepared", "proud", "sad", "sentimental", "surprised", "terrified",
    "trusting",
];

pub const NUM_EMOTIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    pub fn index(self) -> usize {
        match self {
            Speaker::User => 0,
            Speaker::Agent => 1,
        }
    }

    /// Speaker of the 1-based turn `index`: odd turns are the user's.
    pub fn for_turn(index: usize) -> Self {
        if index % 2 == 1 {
            Speaker::User
        } else {
            Speaker::Agent
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub speaker: Speaker,
    /// 1-based position in the dialogue.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmotionLabel {
    pub id: usize,
    pub name: String,
}

/// Ordered list of exactly 32 distinct emotion names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionManifest {
    pub emotions: Vec<String>,
}

impl Default for EmotionManifest {
    fn default() -> Self {
        Self { emotions: EMOTIONS.iter().map(|s| s.to_string()).collect() }
    }
}

impl EmotionManifest {
    pub fn new(emotions: Vec<String>) -> Result<Self> {
        let m = Self { emotions };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let distinct: HashSet<&String> = self.emotions.iter().collect();
        if self.emotions.len() != NUM_EMOTIONS || distinct.len() != NUM_EMOTIONS {
            return Err(Error::Contract(format!(
                "emotion manifest needs {NUM_EMOTIONS} distinct labels, got {} ({} distinct)",
                self.emotions.len(),
                distinct.len()
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn label(&self, name: &str) -> Result<EmotionLabel> {
        self.emotions
            .iter()
            .position(|e| e == name)
            .map(|id| EmotionLabel { id, name: name.to_string() })
            .ok_or_else(|| Error::UnknownEmotion(name.to_string()))
    }

    pub fn by_id(&self, id: usize) -> Option<EmotionLabel> {
        self.emotions.get(id).map(|n| EmotionLabel { id, name: n.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub emotion: EmotionLabel,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidDialogue { id: self.dialogue_id.clone(), msg };
        if self.utterances.len() < 2 {
            return Err(bad(format!("needs at least 2 utterances, has {}", self.utterances.len())));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            let turn = i + 1;
            if u.index != turn {
                return Err(bad(format!("utterance {turn} carries index {}", u.index)));
            }
            if u.speaker != Speaker::for_turn(turn) {
                return Err(bad(format!("speaker alternation broken at turn {turn} ({:?})", u.speaker)));
            }
            if u.tokens.is_empty() {
                return Err(bad(format!("turn {turn} is empty")));
            }
        }
        Ok(())
    }

    pub fn agent_turns(&self) -> usize {
        self.utterances.iter().filter(|u| u.speaker == Speaker::Agent).count()
    }
}

/// A context of odd length ending with the user, and the agent turn that
/// follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextResponsePair {
    pub pair_id: String,
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub emotion: EmotionLabel,
    pub source_dialogue_id: String,
}

impl ContextResponsePair {
    pub fn context_tokens(&self) -> impl Iterator<Item = &String> {
        self.context.iter().flat_map(|u| u.tokens.iter())
    }
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    emotion: String,
    utterances: Vec<RawTurn>,
}

/// Reads one JSON dialogue per line, tokenizing and validating each.
pub fn load_dialogues(path: &Path, manifest: &EmotionManifest) -> Result<Vec<Dialogue>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        let emotion = manifest.label(&raw.emotion)?;
        let utterances = raw
            .utterances
            .into_iter()
            .enumerate()
            .map(|(i, t)| Utterance { tokens: tokenize(&t.text), speaker: t.speaker, index: i + 1 })
            .collect();
        let d = Dialogue { dialogue_id: raw.dialogue_id, emotion, utterances };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        let raw = RawDialogue {
            dialogue_id: d.dialogue_id.clone(),
            emotion: d.emotion.name.clone(),
            utterances: d
                .utterances
                .iter()
                .map(|u| RawTurn { speaker: u.speaker, text: detokenize(&u.tokens) })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One pair per agent turn: turns `1..=n` as context, turn `n+1` as response.
pub fn make_training_pairs(d: &Dialogue) -> Vec<ContextResponsePair> {
    d.utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.speaker == Speaker::Agent)
        .map(|(i, u)| ContextResponsePair {
            pair_id: format!("{}:{}", d.dialogue_id, u.index),
            context: d.utterances[..i].to_vec(),
            response: u.clone(),
            emotion: d.emotion.clone(),
            source_dialogue_id: d.dialogue_id.clone(),
        })
        .collect()
}

pub fn pairs_for<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Vec<ContextResponsePair> {
    dialogues.into_iter().flat_map(make_training_pairs).collect()
}
