use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use exgen_core::corpus::{tokenize, write_dialogues, Speaker, Split, Utterance, Vocab};
use exgen_core::harness::{
    ab_aggregate, aggregate_ratings, build_examples, contexts_by_pair, evaluate_automatic, evaluate_synthetic,
    generate_responses, load_generations, load_ratings, load_votes, prepare_data, render_ab_table, render_ablation,
    render_ratings_table, run_ablation, save_generations, train_dpr, train_generator, CorpusSource, Experiment,
    ExperimentConfig, GenExample, PreparedData, TrainOptions,
};
use exgen_core::metrics::{render_table, MetricsReport};
use exgen_core::model::{ContextIds, DecodeMode, Example, ExemplarModel, ModelConfig};
use exgen_core::retriever::{build_pools, load_pools, retrieve_for_pairs, save_pools, top_q, BiEncoder, PoolSet};
use exgen_core::signals::{synthesize_corpus_labels, LabelSet};
use exgen_core::tensor::{load_checkpoint, save_checkpoint};

#[derive(Parser)]
#[command(name = "exgen", version, about = "Exemplar-guided empathetic response generation")]
struct Cli {
    /// Experiment config (JSON). Falls back to $EF_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding every artifact of the experiment.
    #[arg(long, global = true, default_value = "run")]
    work: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic corpus and its emotion manifest to the work directory.
    GenToyCorpus {
        #[arg(long)]
        dialogues: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trains the bi-encoder retriever.
    TrainDpr,
    /// Encodes every training response into per-emotion candidate pools.
    BuildPools,
    /// Prints the top exemplars for a context (one utterance per line, user first).
    Retrieve {
        #[arg(long)]
        context_file: PathBuf,
        #[arg(long)]
        emotion: String,
        #[arg(long)]
        q: Option<usize>,
    },
    /// Labels every gold response with the rule labeler and lexicon.
    LabelSynth,
    /// Trains the generator.
    TrainGen {
        #[arg(long)]
        no_exemplars: bool,
        #[arg(long)]
        no_emp_losses: bool,
    },
    /// Decodes responses for one split.
    Generate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Sample among the k most likely tokens instead of greedy decoding.
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// BLEU, perplexity and Distinct-1/2 on the test split.
    EvalAuto {
        #[arg(long, default_value = "model")]
        system: String,
    },
    /// Label-based F1 and sentiment MAE of a generation file.
    EvalSynth {
        #[arg(long)]
        generations: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        system: String,
    },
    /// Means of human ratings, one table row per file.
    RatingsAggregate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Win/loss/tie percentages of A/B vote files, one row per file.
    AbAggregate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Trains and evaluates the full system and both ablations.
    Ablate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

struct Work {
    dir: PathBuf,
    config: ExperimentConfig,
}

impl Work {
    fn open(dir: &Path, config: Option<&Path>) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut config = ExperimentConfig::load(config)?;
        let corpus = dir.join("corpus.jsonl");
        if corpus.exists() {
            let manifest = dir.join("manifest.json");
            config.corpus = CorpusSource::Files { dialogues: corpus, manifest: manifest.exists().then_some(manifest) };
        }
        Ok(Self { dir: dir.to_path_buf(), config })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            bail!("{} is missing; run `exgen {producer}` first", p.display());
        }
        Ok(p)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    /// Corpus, split and vocabulary; checks the vocabulary against the one
    /// saved by `train-dpr`.
    fn data(&self) -> Result<PreparedData> {
        let data = prepare_data(&self.config)?;
        let saved = self.path("vocab.json");
        if saved.exists() && Vocab::load(&saved)? != data.vocab {
            bail!("{} does not match the corpus and config; re-run `exgen train-dpr`", saved.display());
        }
        Ok(data)
    }

    fn retriever(&self, data: &PreparedData) -> Result<BiEncoder> {
        let path = self.require("dpr.ckpt", "train-dpr")?;
        let cfg = data.model_config(&self.config);
        let mut enc = BiEncoder::new(&cfg)?;
        load_checkpoint(&path, &mut enc.store, &cfg.digest())?;
        Ok(enc)
    }

    fn pools(&self, data: &PreparedData) -> Result<PoolSet> {
        Ok(load_pools(&self.require("pools.bin", "build-pools")?, &data.manifest)?)
    }

    fn labels(&self) -> Result<LabelSet> {
        Ok(LabelSet::load(&self.require("labels.jsonl", "label-synth")?)?)
    }

    fn generator(&self) -> Result<ExemplarModel> {
        let cfg_path = self.require("gen_model.json", "train-gen")?;
        let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path)?)?;
        let mut model = ExemplarModel::new(&cfg)?;
        load_checkpoint(&self.require("gen.ckpt", "train-gen")?, &mut model.store, &cfg.digest())?;
        Ok(model)
    }

    /// Examples of one split, with exemplars when the model uses them.
    fn examples(&self, data: &PreparedData, labels: &LabelSet, split: Split, exemplars: bool) -> Result<Vec<GenExample>> {
        let pairs = data.pairs(split);
        if !exemplars {
            return Ok(build_examples(pairs, &data.vocab, None, labels)?);
        }
        let enc = self.retriever(data)?;
        let pools = self.pools(data)?;
        let r = retrieve_for_pairs(pairs, &data.vocab, &enc, &pools, self.config.model.q)?;
        Ok(build_examples(pairs, &data.vocab, Some(&r), labels)?)
    }
}

fn plain(xs: Vec<GenExample>) -> Vec<Example> {
    xs.into_iter().map(|x| x.example).collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let work = Work::open(&cli.work, cli.config.as_deref())?;
    work.write("config.json", &work.config.to_json())?;
    match cli.command {
        Command::GenToyCorpus { dialogues, seed } => {
            let mut toy = match &work.config.corpus {
                CorpusSource::Toy(t) => t.clone(),
                CorpusSource::Files { .. } => Default::default(),
            };
            toy.dialogues = dialogues.unwrap_or(toy.dialogues);
            toy.seed = seed.unwrap_or(toy.seed);
            let (manifest, ds) = exgen_core::harness::load_corpus(&CorpusSource::Toy(toy))?;
            write_dialogues(&work.path("corpus.jsonl"), &ds)?;
            manifest.save(&work.path("manifest.json"))?;
            println!("wrote {} dialogues to {}", ds.len(), work.path("corpus.jsonl").display());
        }
        Command::TrainDpr => {
            let data = work.data()?;
            let (enc, report) = train_dpr(&work.config, &data)?;
            save_checkpoint(&work.path("dpr.ckpt"), &enc.store, &enc.config.digest())?;
            data.vocab.save(&work.path("vocab.json"))?;
            work.write("split.json", &serde_json::to_string_pretty(&data.split)?)?;
            work.write("dpr_report.json", &serde_json::to_string_pretty(&report)?)?;
            println!(
                "dpr loss {:.4} -> {:.4} (best epoch {})",
                report.initial_loss,
                report.train_loss.last().copied().unwrap_or(f64::NAN),
                report.best_epoch
            );
        }
        Command::BuildPools => {
            let data = work.data()?;
            let enc = work.retriever(&data)?;
            let pools = build_pools(&data.dialogues_in(Split::Train), &data.vocab, &enc, &data.manifest)?;
            save_pools(&work.path("pools.bin"), &pools)?;
            println!("{} candidates in {} pools", pools.total_entries(), pools.pools.len());
        }
        Command::Retrieve { context_file, emotion, q } => {
            let data = work.data()?;
            let enc = work.retriever(&data)?;
            let pools = work.pools(&data)?;
            let text = std::fs::read_to_string(&context_file).with_context(|| format!("reading {}", context_file.display()))?;
            let utterances: Vec<Utterance> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| Utterance { tokens: tokenize(l), speaker: Speaker::for_turn(i + 1), index: i + 1 })
                .collect();
            if utterances.is_empty() {
                bail!("{} holds no utterances", context_file.display());
            }
            let label = data.manifest.label(&emotion)?;
            let query = enc.query_vector(&ContextIds::from_utterances(&utterances, &data.vocab))?;
            let result = top_q(pools.get(label.id)?, &query, "", q.unwrap_or(work.config.model.q))?;
            for (rank, e) in result.exemplars.iter().enumerate() {
                let line = serde_json::json!({
                    "rank": rank + 1,
                    "score": e.score,
                    "source_dialogue_id": e.source_dialogue_id,
                    "text": data.vocab.decode(&e.tokens).join(" "),
                });
                println!("{line}");
            }
            if result.shortfall {
                log::warn!("pool holds fewer than the requested number of candidates");
            }
        }
        Command::LabelSynth => {
            let data = work.data()?;
            let (labeler, lexicon) = work.config.labeler.build()?;
            let labels = synthesize_corpus_labels(&data.all_pairs(), &labeler, &lexicon)?;
            labels.save(&work.path("labels.jsonl"))?;
            println!("{}", serde_json::to_string_pretty(&labels.distribution())?);
        }
        Command::TrainGen { no_exemplars, no_emp_losses } => {
            let data = work.data()?;
            let labels = work.labels()?;
            let cfg = ModelConfig { use_exemplars: !no_exemplars, ..data.model_config(&work.config) };
            let objective =
                if no_emp_losses { work.config.objective.without_empathy_losses() } else { work.config.objective.clone() };
            let train = work.examples(&data, &labels, Split::Train, cfg.use_exemplars)?;
            let valid = work.examples(&data, &labels, Split::Valid, cfg.use_exemplars)?;
            let mut model = ExemplarModel::new(&cfg)?;
            let options = TrainOptions { divergence_checkpoint: Some(work.path("gen.last-good.ckpt")) };
            let history = train_generator(&mut model, &train, &valid, &objective, &options)?;
            save_checkpoint(&work.path("gen.ckpt"), &model.store, &cfg.digest())?;
            work.write("gen_model.json", &serde_json::to_string_pretty(&cfg)?)?;
            work.write("history.json", &serde_json::to_string_pretty(&history)?)?;
            for e in &history.epochs {
                let v = e.valid.map_or("-".to_string(), |v| format!("{:.4} (L_gen {:.4})", v.total, v.gen));
                println!("epoch {:>3}  train {:.4}  valid {v}", e.epoch, e.train.total);
            }
            println!("kept epoch {}{}", history.best_epoch, if history.stopped_early { " (stopped early)" } else { "" });
        }
        Command::Generate { split, top_k, seed, output } => {
            let data = work.data()?;
            let labels = work.labels()?;
            let model = work.generator()?;
            let examples = plain(work.examples(&data, &labels, split.into(), model.config.use_exemplars)?);
            let mode = top_k.map_or(DecodeMode::Greedy, DecodeMode::TopK);
            let gens = generate_responses(&model, &examples, &data.vocab, mode, seed)?;
            let out = output.unwrap_or_else(|| work.path("generations.jsonl"));
            save_generations(&out, &gens)?;
            println!("wrote {} generations to {}", gens.len(), out.display());
        }
        Command::EvalAuto { system } => {
            let data = work.data()?;
            let labels = work.labels()?;
            let model = work.generator()?;
            let examples = plain(work.examples(&data, &labels, Split::Test, model.config.use_exemplars)?);
            let (report, gens) = evaluate_automatic(&model, &examples, &data.vocab, &system)?;
            save_generations(&work.path("generations.jsonl"), &gens)?;
            work.write("report_auto.json", &report.to_json())?;
            print!("{}", render_table(&[report]));
        }
        Command::EvalSynth { generations, system } => {
            let data = work.data()?;
            let labels = work.labels()?;
            let (labeler, lexicon) = work.config.labeler.build()?;
            let path = generations.unwrap_or_else(|| work.path("generations.jsonl"));
            let gens = load_generations(&path)?;
            let scores = evaluate_synthetic(&gens, &contexts_by_pair(&data.all_pairs()), &labels, &labeler, &lexicon)?;
            let mut report = MetricsReport::new(system);
            scores.apply(&mut report);
            work.write("report_synth.json", &report.to_json())?;
            print!("{}", render_table(&[report]));
        }
        Command::RatingsAggregate { files } => {
            let mut rows = Vec::new();
            for f in &files {
                let means = aggregate_ratings(&load_ratings(f)?)?;
                rows.push((stem(f), means));
            }
            print!("{}", render_ratings_table(&rows));
            for (name, m) in &rows {
                println!("{name}: {} samples, {} annotators", m.samples, m.annotators);
            }
        }
        Command::AbAggregate { files } => {
            let mut rows = Vec::new();
            for f in &files {
                rows.push((stem(f), ab_aggregate(&load_votes(f)?)?));
            }
            print!("{}", render_ab_table(&rows));
        }
        Command::Ablate => {
            let data = work.data()?;
            let enc = match work.retriever(&data) {
                Ok(enc) => enc,
                Err(_) => {
                    log::info!("no trained retriever in {}; training one", work.dir.display());
                    let (enc, _) = train_dpr(&work.config, &data)?;
                    enc
                }
            };
            let exp = Experiment::assemble(&work.config, data, &enc)?;
            let rows = run_ablation(&exp)?;
            work.write("ablation.json", &serde_json::to_string_pretty(&rows)?)?;
            let table = render_ablation(&rows);
            work.write("ablation.txt", &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}
