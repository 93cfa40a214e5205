use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::objective::{build_examples, GenExample, TrainingObjective};
use crate::corpus::{
    build_dpr_samples, generate_toy_corpus, load_dialogues, pairs_for, split_corpus, ContextResponsePair, Dialogue,
    EmotionManifest, Split, SplitSpec, ToyCorpusConfig, Vocab, DEFAULT_N_NEG,
};
use crate::error::{Error, Result};
use crate::model::{DecodeMode, ModelConfig};
use crate::retriever::{
    build_pools, retrieve_for_pairs, train_retriever, BiEncoder, EncodedDprSample, PoolSet, RetrievalResult,
    RetrieverReport, RetrieverSchedule,
};
use crate::signals::{synthesize_corpus_labels, LabelSet, RuleLabeler, RuleTables, SentimentLexicon};

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "EF_CONFIG";
/// Environment variable overriding the experiment seed.
pub const SEED_ENV: &str = "EF_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    Toy(ToyCorpusConfig),
    Files { dialogues: PathBuf, manifest: Option<PathBuf> },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Toy(ToyCorpusConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverSettings {
    pub schedule: RetrieverSchedule,
    pub n_neg: usize,
    /// Trains on the first this-many samples only.
    pub max_samples: Option<usize>,
}

impl Default for RetrieverSettings {
    fn default() -> Self {
        Self { schedule: RetrieverSchedule::default(), n_neg: DEFAULT_N_NEG, max_samples: None }
    }
}

/// Optional replacements for the builtin rule tables and lexicon.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerSettings {
    pub rules: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

impl LabelerSettings {
    pub fn build(&self) -> Result<(RuleLabeler, SentimentLexicon)> {
        let tables = match &self.rules {
            Some(p) => RuleTables::load(p)?,
            None => RuleTables::default(),
        };
        let lexicon = match &self.lexicon {
            Some(p) => SentimentLexicon::load(p, &tables)?,
            None => SentimentLexicon::default(),
        };
        Ok((RuleLabeler::new(tables), lexicon))
    }
}

/// Everything one experiment needs. `seed` drives splitting, negative
/// sampling, initialization and batch order; the per-component seed fields
/// are overwritten from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSource,
    pub vocab_max: Option<usize>,
    /// `vocab_size` is filled in from the built vocabulary.
    pub model: ModelConfig,
    pub retriever: RetrieverSettings,
    pub objective: TrainingObjective,
    pub labeler: LabelerSettings,
    pub decode: DecodeMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            corpus: CorpusSource::default(),
            vocab_max: None,
            model: ModelConfig::desk(0),
            retriever: RetrieverSettings::default(),
            objective: TrainingObjective::default(),
            labeler: LabelerSettings::default(),
            decode: DecodeMode::Greedy,
        };
        c.set_seed(0);
        c
    }
}

impl ExperimentConfig {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.retriever.schedule.seed = seed;
        self.objective.seed = seed;
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text)?;
        c.set_seed(c.seed);
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path`, or the file named by `EF_CONFIG`, or the defaults, then
    /// applies `EF_SEED`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let from_env = env(CONFIG_ENV).map(PathBuf::from);
        let mut c = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::from_json(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?,
            None => Self::default(),
        };
        if let Some(s) = env(SEED_ENV) {
            let seed = s.trim().parse().map_err(|_| Error::Contract(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
            c.set_seed(seed);
        }
        c.objective.validate()?;
        Ok(c)
    }
}

/// Corpus, split, vocabulary and pairs of one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub manifest: EmotionManifest,
    pub dialogues: Vec<Dialogue>,
    pub split: SplitSpec,
    pub vocab: Vocab,
    pub train_pairs: Vec<ContextResponsePair>,
    pub valid_pairs: Vec<ContextResponsePair>,
    pub test_pairs: Vec<ContextResponsePair>,
}

impl PreparedData {
    pub fn dialogues_in(&self, split: Split) -> Vec<Dialogue> {
        self.split.select(split, &self.dialogues).into_iter().cloned().collect()
    }

    pub fn pairs(&self, split: Split) -> &[ContextResponsePair] {
        match split {
            Split::Train => &self.train_pairs,
            Split::Valid => &self.valid_pairs,
            Split::Test => &self.test_pairs,
        }
    }

    pub fn all_pairs(&self) -> Vec<ContextResponsePair> {
        [&self.train_pairs, &self.valid_pairs, &self.test_pairs].into_iter().flatten().cloned().collect()
    }

    /// Model config with the vocabulary size filled in.
    pub fn model_config(&self, config: &ExperimentConfig) -> ModelConfig {
        ModelConfig { vocab_size: self.vocab.len(), ..config.model.clone() }
    }
}

pub fn load_corpus(source: &CorpusSource) -> Result<(EmotionManifest, Vec<Dialogue>)> {
    match source {
        CorpusSource::Toy(cfg) => {
            let manifest = EmotionManifest::default();
            let dialogues = generate_toy_corpus(cfg, &manifest)?;
            Ok((manifest, dialogues))
        }
        CorpusSource::Files { dialogues, manifest } => {
            let manifest = match manifest {
                Some(p) => EmotionManifest::load(p)?,
                None => EmotionManifest::default(),
            };
            let d = load_dialogues(dialogues, &manifest)?;
            Ok((manifest, d))
        }
    }
}

/// Splits the corpus and builds the vocabulary from the training split.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (manifest, dialogues) = load_corpus(&config.corpus)?;
    let split = split_corpus(&dialogues, config.seed)?;
    let train = split.select(Split::Train, &dialogues);
    let vocab = Vocab::build(train.iter().copied(), config.vocab_max);
    let train_pairs = pairs_for(train);
    let valid_pairs = pairs_for(split.select(Split::Valid, &dialogues));
    let test_pairs = pairs_for(split.select(Split::Test, &dialogues));
    Ok(PreparedData { manifest, dialogues, split, vocab, train_pairs, valid_pairs, test_pairs })
}

/// Trains the bi-encoder on training pairs, validating on validation pairs
/// when there are enough of them to draw negatives.
pub fn train_dpr(config: &ExperimentConfig, data: &PreparedData) -> Result<(BiEncoder, RetrieverReport)> {
    let settings = &config.retriever;
    let encode = |pairs: &[ContextResponsePair], seed: u64| -> Result<Vec<EncodedDprSample>> {
        let samples = build_dpr_samples(pairs, settings.n_neg, seed)?;
        Ok(samples.iter().map(|s| EncodedDprSample::new(s, &data.vocab)).collect())
    };
    let mut train = encode(&data.train_pairs, config.seed)?;
    if let Some(n) = settings.max_samples {
        train.truncate(n);
    }
    let valid = match encode(&data.valid_pairs, config.seed.wrapping_add(1)) {
        Ok(v) => v,
        Err(Error::Insufficient(msg)) => {
            log::warn!("retriever trains without validation: {msg}");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let mut enc = BiEncoder::new(&data.model_config(config))?;
    let report = train_retriever(&mut enc, &train, &valid, &settings.schedule)?;
    Ok((enc, report))
}

/// Retrieval, labels and joined examples on top of prepared data and a
/// trained retriever.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub pools: PoolSet,
    pub labels: LabelSet,
    pub train: Vec<GenExample>,
    pub valid: Vec<GenExample>,
    pub test: Vec<GenExample>,
}

impl Experiment {
    /// Builds pools from training dialogues, retrieves `q` exemplars for
    /// every pair and labels every gold response.
    pub fn assemble(config: &ExperimentConfig, data: PreparedData, retriever: &BiEncoder) -> Result<Self> {
        let pools = build_pools(&data.dialogues_in(Split::Train), &data.vocab, retriever, &data.manifest)?;
        let (labeler, lexicon) = config.labeler.build()?;
        let labels = synthesize_corpus_labels(&data.all_pairs(), &labeler, &lexicon)?;
        Self::from_parts(config, data, retriever, pools, labels)
    }

    /// Like [`Experiment::assemble`] with pools and labels already built.
    pub fn from_parts(
        config: &ExperimentConfig,
        data: PreparedData,
        retriever: &BiEncoder,
        pools: PoolSet,
        labels: LabelSet,
    ) -> Result<Self> {
        let join = |split: Split| -> Result<Vec<GenExample>> {
            let pairs = data.pairs(split);
            let r: Vec<RetrievalResult> = retrieve_for_pairs(pairs, &data.vocab, retriever, &pools, config.model.q)?;
            build_examples(pairs, &data.vocab, Some(&r), &labels)
        };
        let train = join(Split::Train)?;
        let valid = join(Split::Valid)?;
        let test = join(Split::Test)?;
        Ok(Self { config: config.clone(), data, pools, labels, train, valid, test })
    }

    pub fn model_config(&self) -> ModelConfig {
        self.data.model_config(&self.config)
    }
}
