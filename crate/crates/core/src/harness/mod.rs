//! Experiment orchestration: the weighted training objective, automatic and
//! label-based evaluation, human rating and A/B vote aggregation, and the
//! ablation runs.

mod ablation;
mod config;
mod eval;
mod human;
mod objective;

pub use ablation::{
    ablation_variants, render_ablation, run_ablation, train_and_evaluate, AblationRow, FULL, NO_EMPATHY_LOSSES,
    NO_EXEMPLARS_NO_EMPATHY_LOSSES,
};
pub use config::{
    load_corpus, prepare_data, train_dpr, CorpusSource, Experiment, ExperimentConfig, LabelerSettings, PreparedData,
    RetrieverSettings, CONFIG_ENV, SEED_ENV,
};
pub use eval::{
    contexts_by_pair, evaluate_automatic, evaluate_synthetic, generate_responses, load_generations, mean_token_nll,
    save_generations, score_text, Generation, SyntheticScores,
};
pub use human::{
    ab_aggregate, aggregate_ratings, load_ratings, load_votes, render_ab_table, render_ratings_table, AbVote,
    RatingRecord, Vote,
};
pub use objective::{
    build_examples, evaluate_losses, example_loss, train_generator, EpochRecord, GenExample, LossComponents,
    StepRecord, TrainHistory, TrainOptions, TrainingObjective,
};
