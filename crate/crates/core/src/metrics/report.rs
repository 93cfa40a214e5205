use serde::{Deserialize, Serialize, Serializer};

/// Rounds to two decimals on serialization.
fn two_dp<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(round2(*x)),
        None => s.serialize_none(),
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerScore {
    pub attribute: String,
    #[serde(serialize_with = "two_dp")]
    pub accuracy: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub weighted_f1: Option<f64>,
}

/// Mean human ratings: coarse attributes on 1–5, empathy attributes on 0–2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMeans {
    pub empathy: f64,
    pub relevance: f64,
    pub fluency: f64,
    pub ep: f64,
    pub int: f64,
    pub exp: f64,
    pub samples: usize,
    pub annotators: usize,
}

/// A/B outcome percentages from the point of view of system A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbOutcome {
    pub win: f64,
    pub loss: f64,
    pub tie: f64,
}

/// Every aggregate reported for one evaluated system; absent measures are
/// `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system: String,
    #[serde(serialize_with = "two_dp")]
    pub bleu: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub ppl: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub distinct1: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub distinct2: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub f1_ep: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub f1_int: Option<f64>,
    #[serde(serialize_with = "two_dp")]
    pub f1_exp: Option<f64>,
    /// Mean absolute sentiment error, printed with three decimals in tables.
    pub sent_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labeler: Vec<LabelerScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<RatingMeans>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ab: Option<AbOutcome>,
}

impl MetricsReport {
    pub fn new(system: impl Into<String>) -> Self {
        Self { system: system.into(), ..Self::default() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

/// Aligned text table with one row per system. Columns that are empty for
/// every row are dropped.
pub fn render_table(rows: &[MetricsReport]) -> String {
    type Col = (&'static str, usize, fn(&MetricsReport) -> Option<f64>);
    let cols: [Col; 8] = [
        ("BLEU", 2, |r| r.bleu),
        ("PPL", 2, |r| r.ppl),
        ("Distinct-1", 2, |r| r.distinct1),
        ("Distinct-2", 2, |r| r.distinct2),
        ("EP F1", 2, |r| r.f1_ep),
        ("Int F1", 2, |r| r.f1_int),
        ("Exp F1", 2, |r| r.f1_exp),
        ("Sent MAE", 3, |r| r.sent_mae),
    ];
    let used: Vec<&Col> = cols.iter().filter(|c| rows.iter().any(|r| (c.2)(r).is_some())).collect();
    let mut table: Vec<Vec<String>> = vec![std::iter::once("System".to_string()).chain(used.iter().map(|c| c.0.to_string())).collect()];
    for r in rows {
        table.push(std::iter::once(r.system.clone()).chain(used.iter().map(|c| cell((c.2)(r), c.1))).collect());
    }
    align(&table)
}

/// Left-aligns the first column and right-aligns the rest.
pub fn align(table: &[Vec<String>]) -> String {
    let width = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|i| table.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
