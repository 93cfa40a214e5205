//! Deterministic synthetic corpus with the dialogue schema of the real data.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Dialogue, EmotionManifest, Speaker, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusConfig {
    pub dialogues: usize,
    /// Number of emotion labels used, taken from the front of the manifest.
    pub emotions: usize,
    /// Upper bound on distinct tokens, specials included.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self { dialogues: 200, emotions: 8, vocab_size: 500, seed: 17 }
    }
}

const NEGATIVE: [&str; 18] = [
    "afraid", "angry", "annoyed", "anxious", "apprehensive", "ashamed", "devastated", "disappointed",
    "disgusted", "embarrassed", "furious", "guilty", "jealous", "lonely", "sad", "terrified",
    "nostalgic", "sentimental",
];

const TOPICS: [&str; 24] = [
    "dog", "cat", "job", "exam", "car", "house", "sister", "brother", "friend", "boss", "garden",
    "trip", "party", "wedding", "phone", "laptop", "bike", "concert", "team", "school", "mom", "dad",
    "neighbor", "project",
];

const NEG_EVENTS: [&str; 6] = ["got hurt", "broke down", "was lost", "failed", "got sick", "was ruined"];
const POS_EVENTS: [&str; 6] = ["won a prize", "came home", "got better", "was amazing", "went well", "got an award"];
const NEG_STATES: [&str; 3] = ["worse", "gone", "broken"];
const POS_STATES: [&str; 3] = ["fine", "great", "better"];
const NEG_ADJ: [&str; 3] = ["awful", "terrible", "hard"];
const POS_ADJ: [&str; 3] = ["wonderful", "amazing", "great"];
const OPENERS: [&str; 4] = ["", "well ,", "honestly ,", "so"];

const NEG_REPLIES: [&str; 4] = [
    "oh no , did your {topic} get hurt ?",
    "that sounds {adj} , you must have been {emotion} .",
    "i am sorry to hear that . that happened to me with my {topic} .",
    "i understand . what will you do now ?",
];
const POS_REPLIES: [&str; 4] = [
    "wow , how did your {topic} do it ?",
    "that sounds {adj} ! you must be so {emotion} .",
    "that is great . i have a {topic} too .",
    "i can imagine . congratulations !",
];
const FOLLOWUPS: [&str; 3] = [
    "i am glad your {topic} is {state} .",
    "i hope things get better for you .",
    "that must be hard . is your {topic} ok ?",
];

const ADVICE: [&str; 2] = ["what would you do about my {topic} ?", "do you have any advice ?"];
const TIPS: [&str; 3] = [
    "just take it one day at a time .",
    "talk to someone you trust about your {topic} .",
    "try to enjoy it while it lasts .",
];

struct Slots<'a> {
    emotion: &'a str,
    topic: &'a str,
    adj: &'a str,
    state: &'a str,
}

fn fill(template: &str, s: &Slots) -> String {
    template
        .replace("{emotion}", s.emotion)
        .replace("{topic}", s.topic)
        .replace("{adj}", s.adj)
        .replace("{state}", s.state)
}

fn fixed_vocabulary(emotions: &[String]) -> HashSet<String> {
    let mut all: Vec<&str> = Vec::new();
    all.extend(TOPICS);
    all.extend(NEG_EVENTS);
    all.extend(POS_EVENTS);
    all.extend(NEG_STATES);
    all.extend(POS_STATES);
    all.extend(NEG_ADJ);
    all.extend(POS_ADJ);
    all.extend(OPENERS);
    all.extend(NEG_REPLIES);
    all.extend(POS_REPLIES);
    all.extend(FOLLOWUPS);
    all.extend(ADVICE);
    all.extend(TIPS);
    all.extend([
        "i feel {emotion} . my {topic} near the",
        "yes , my {topic} is {state} now .",
        "no , but i am still {emotion} .",
        "thanks , i appreciate it .",
        "you are welcome . take care .",
        "it was {adj} , to be honest .",
        "i hope your {topic} is {state} soon .",
    ]);
    let mut set: HashSet<String> = all.iter().flat_map(|s| tokenize(s)).collect();
    set.extend(emotions.iter().cloned());
    set.retain(|t| !t.contains('{') && !t.contains('}'));
    for slot in ["emotion", "topic", "adj", "state"] {
        set.remove(slot);
    }
    set
}

/// Pronounceable filler words used as place names.
fn filler_words(n: usize, taken: &HashSet<String>) -> Vec<String> {
    const C: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const V: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut out = Vec::with_capacity(n);
    'outer: for c1 in C {
        for v1 in V {
            for c2 in C {
                for v2 in V {
                    let w = format!("{c1}{v1}{c2}{v2}");
                    if !taken.contains(&w) {
                        out.push(w);
                    }
                    if out.len() == n {
                        break 'outer;
                    }
                }
            }
        }
    }
    out
}

pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, manifest: &EmotionManifest) -> Result<Vec<Dialogue>> {
    if cfg.emotions == 0 || cfg.emotions > manifest.emotions.len() {
        return Err(Error::Contract(format!("toy corpus needs 1..={} emotions", manifest.emotions.len())));
    }
    let emotions = &manifest.emotions[..cfg.emotions];
    let fixed = fixed_vocabulary(emotions);
    let budget = cfg.vocab_size.saturating_sub(4 + fixed.len());
    let fillers = filler_words(budget, &fixed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut out = Vec::with_capacity(cfg.dialogues);
    for n in 0..cfg.dialogues {
        let emotion = manifest.label(&emotions[n % emotions.len()])?;
        let negative = NEGATIVE.contains(&emotion.name.as_str());
        let topic = *TOPICS.choose(&mut rng).unwrap();
        let slots = Slots {
            emotion: &emotion.name,
            topic,
            adj: if negative { NEG_ADJ.choose(&mut rng) } else { POS_ADJ.choose(&mut rng) }.unwrap(),
            state: if negative { NEG_STATES.choose(&mut rng) } else { POS_STATES.choose(&mut rng) }.unwrap(),
        };
        let event = if negative { NEG_EVENTS.choose(&mut rng) } else { POS_EVENTS.choose(&mut rng) }.unwrap();
        let opener = OPENERS.choose(&mut rng).unwrap();
        let place = match fillers.choose(&mut rng) {
            Some(f) if rng.gen_bool(0.7) => format!(" near the {f}"),
            _ => String::new(),
        };
        let mut turns = vec![format!("{opener} i feel {} . my {topic} {event}{place} .", emotion.name)];
        let replies = if negative { &NEG_REPLIES } else { &POS_REPLIES };
        // each emotion leans on one reply style
        let style = if rng.gen_bool(0.6) { n % emotions.len() % 4 } else { rng.gen_range(0..4) };
        turns.push(fill(replies[style], &slots));

        let length = match rng.gen_range(0..10) {
            0..=3 => 6,
            4..=7 => 8,
            _ => 10,
        };
        {
            let user = if rng.gen_bool(0.5) { "yes , my {topic} is {state} now ." } else { "no , but i am still {emotion} ." };
            turns.push(fill(user, &slots));
            turns.push(fill(FOLLOWUPS.choose(&mut rng).unwrap(), &slots));
        }
        {
            turns.push(fill("it was {adj} , to be honest .", &slots));
            turns.push(fill("i hope your {topic} is {state} soon .", &slots));
        }
        if length >= 8 {
            turns.push(fill(ADVICE.choose(&mut rng).unwrap(), &slots));
            turns.push(fill(TIPS.choose(&mut rng).unwrap(), &slots));
        }
        if length >= 10 {
            turns.push("thanks , i appreciate it .".into());
            turns.push("you are welcome . take care .".into());
        }
        let utterances = turns
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance { tokens: tokenize(t), speaker: Speaker::for_turn(i + 1), index: i + 1 })
            .collect();
        let d = Dialogue { dialogue_id: format!("toy-{n:05}"), emotion, utterances };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}
