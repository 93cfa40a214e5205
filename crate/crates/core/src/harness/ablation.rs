use serde::{Deserialize, Serialize};

use super::config::Experiment;
use super::eval::{contexts_by_pair, evaluate_automatic, evaluate_synthetic, Generation};
use super::objective::{train_generator, GenExample, TrainHistory, TrainOptions, TrainingObjective};
use crate::corpus::Split;
use crate::error::Result;
use crate::metrics::{render_table, MetricsReport};
use crate::model::{Example, ExemplarModel, ModelConfig};

pub const FULL: &str = "full";
pub const NO_EMPATHY_LOSSES: &str = "w/o Emp. Losses";
pub const NO_EXEMPLARS_NO_EMPATHY_LOSSES: &str = "w/o Exemplars, w/o Emp. Losses";

/// The three systems compared, in reporting order.
pub fn ablation_variants(model: &ModelConfig, objective: &TrainingObjective) -> Vec<(&'static str, ModelConfig, TrainingObjective)> {
    let plain = objective.without_empathy_losses();
    vec![
        (FULL, ModelConfig { use_exemplars: true, ..model.clone() }, objective.clone()),
        (NO_EMPATHY_LOSSES, ModelConfig { use_exemplars: true, ..model.clone() }, plain.clone()),
        (NO_EXEMPLARS_NO_EMPATHY_LOSSES, ModelConfig { use_exemplars: false, ..model.clone() }, plain),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub report: MetricsReport,
    pub history: TrainHistory,
    #[serde(skip)]
    pub generations: Vec<Generation>,
}

fn examples(xs: &[GenExample]) -> Vec<Example> {
    xs.iter().map(|x| x.example.clone()).collect()
}

/// Trains and evaluates one system on the experiment's test split.
pub fn train_and_evaluate(
    exp: &Experiment,
    name: &str,
    model_config: &ModelConfig,
    objective: &TrainingObjective,
) -> Result<(ExemplarModel, AblationRow)> {
    let mut model = ExemplarModel::new(model_config)?;
    let history = train_generator(&mut model, &exp.train, &exp.valid, objective, &TrainOptions::default())?;
    let test = examples(&exp.test);
    let (mut report, generations) = evaluate_automatic(&model, &test, &exp.data.vocab, name)?;
    let (labeler, lexicon) = exp.config.labeler.build()?;
    let contexts = contexts_by_pair(exp.data.pairs(Split::Test));
    evaluate_synthetic(&generations, &contexts, &exp.labels, &labeler, &lexicon)?.apply(&mut report);
    Ok((model, AblationRow { report, history, generations }))
}

/// Trains the full system and both ablations from the same seed.
pub fn run_ablation(exp: &Experiment) -> Result<Vec<AblationRow>> {
    ablation_variants(&exp.model_config(), &exp.config.objective)
        .into_iter()
        .map(|(name, cfg, obj)| {
            log::info!("ablation: training `{name}`");
            Ok(train_and_evaluate(exp, name, &cfg, &obj)?.1)
        })
        .collect()
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.report.clone()).collect();
    render_table(&reports)
}
