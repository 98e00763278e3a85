use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::taxonomy::{normalize_label, Taxonomy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopKEntry {
    pub label: String,
    pub prob: f64,
}

/// One to five classifier guesses, most probable first.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK(Vec<TopKEntry>);

impl TopK {
    pub fn new(entries: Vec<TopKEntry>) -> Result<Self> {
        if entries.is_empty() || entries.len() > 5 {
            return Err(Error::Argument(format!("top-k must hold 1 to 5 entries, got {}", entries.len())));
        }
        if let Some(e) = entries.iter().find(|e| !(0.0..=1.0).contains(&e.prob)) {
            return Err(Error::Argument(format!("probability {} for `{}` is outside [0, 1]", e.prob, e.label)));
        }
        if entries.windows(2).any(|w| w[1].prob > w[0].prob) {
            return Err(Error::Argument("top-k probabilities must be non-increasing".into()));
        }
        let total: f64 = entries.iter().map(|e| e.prob).sum();
        if total > 1.0 + 1e-6 {
            return Err(Error::Argument(format!("top-k probabilities sum to {total} > 1")));
        }
        Ok(Self(entries))
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(label, prob)| TopKEntry {
                    label: label.to_string(),
                    prob,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TopKEntry] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ExactTop1,
    Top5Sum,
    WordnetFallback,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ExactTop1 => "exact_top1",
            Rule::Top5Sum => "top5_sum",
            Rule::WordnetFallback => "wordnet_fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Good,
    Intermediate,
    Bad,
    Unset,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Good => "good",
            Category::Intermediate => "intermediate",
            Category::Bad => "bad",
            Category::Unset => "unset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub truth_label: String,
    pub score: f64,
    pub rule: Rule,
    pub category: Category,
}

/// Normalized strings standing for `label`: itself plus the lemmas of every
/// node it names.
fn surface_forms(label: &str, t: &Taxonomy) -> Vec<String> {
    let mut forms = vec![normalize_label(label)];
    for &n in t.lookup(label) {
        forms.extend(t.node(n).lemmas.iter().cloned());
    }
    forms.sort();
    forms.dedup();
    forms
}

/// A predicted label matches the truth when it shares a lemma with it, or
/// when one of its forms contains one of the truth's forms.
pub fn labels_match(predicted: &str, truth: &str, t: &Taxonomy) -> bool {
    let truth_forms = surface_forms(truth, t);
    surface_forms(predicted, t)
        .iter()
        .any(|p| truth_forms.iter().any(|q| p == q || p.contains(q.as_str())))
}

/// Apply the three scoring rules in order; exactly one fires.
pub fn score_image(image_id: &str, truth: &str, topk: &TopK, t: &Taxonomy) -> Result<ScoreRecord> {
    let truth_nodes = t.lookup(truth);
    if truth_nodes.is_empty() {
        return Err(Error::UnresolvedLabel { label: truth.to_string() });
    }
    let record = |score: f64, rule| ScoreRecord {
        image_id: image_id.to_string(),
        truth_label: truth.to_string(),
        score: score.clamp(0.0, 1.0),
        rule,
        category: Category::Unset,
    };
    let entries = topk.entries();
    if labels_match(&entries[0].label, truth, t) {
        return Ok(record(1.0, Rule::ExactTop1));
    }
    let matched: Vec<f64> = entries
        .iter()
        .filter(|e| labels_match(&e.label, truth, t))
        .map(|e| e.prob)
        .collect();
    if !matched.is_empty() {
        return Ok(record(matched.iter().sum(), Rule::Top5Sum));
    }
    let mut score = 0.0;
    for e in entries {
        let best = t
            .lookup(&e.label)
            .iter()
            .flat_map(|&n| truth_nodes.iter().map(move |&s| (s, n)))
            .filter_map(|(s, n)| t.wu_palmer_idx(s, n).ok())
            .fold(0.0, f64::max);
        score += e.prob * best;
    }
    Ok(record(score, Rule::WordnetFallback))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Good above `mean + std`, bad below `mean - std`, intermediate otherwise.
pub fn categorize(scores: &[f64]) -> Result<(Vec<Category>, f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::Argument(format!("categorize needs at least 2 scores, got {}", scores.len())));
    }
    let (mean, std) = mean_std(scores);
    let cats = scores
        .iter()
        .map(|&s| {
            if s > mean + std {
                Category::Good
            } else if s < mean - std {
                Category::Bad
            } else {
                Category::Intermediate
            }
        })
        .collect();
    Ok((cats, mean, std))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn summarize(scores: &[f64]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::Argument("cannot summarize zero scores".into()));
    }
    let (mean, std) = mean_std(scores);
    Ok(Summary {
        count: scores.len(),
        mean,
        std,
    })
}

/// One line of a classifier-output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub image_id: String,
    pub truth: String,
    pub topk: Vec<TopKEntry>,
    /// Optional grouping key (model or subject) for summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

pub fn read_predictions(reader: impl BufRead, source: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).map_err(|e| Error::format(source, format!("line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportRow {
    Scored(ScoreRecord),
    /// The truth label is missing from the taxonomy.
    Unresolved { image_id: String, truth: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ReportRow>,
    /// Over all scored rows; `None` when nothing could be scored.
    pub overall: Option<Summary>,
    pub by_group: BTreeMap<String, Summary>,
}

impl ScoreReport {
    pub fn unresolved(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r, ReportRow::Unresolved { .. })).count()
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.rows.iter().filter_map(|r| match r {
            ReportRow::Scored(s) => Some(s),
            ReportRow::Unresolved { .. } => None,
        })
    }

    /// CSV with header `image_id,truth,score,rule,category`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "image_id,truth,score,rule,category")?;
        for row in &self.rows {
            match row {
                ReportRow::Scored(r) => writeln!(
                    w,
                    "{},{},{:.5},{},{}",
                    csv_field(&r.image_id),
                    csv_field(&r.truth_label),
                    r.score,
                    r.rule.as_str(),
                    r.category.as_str()
                )?,
                ReportRow::Unresolved { image_id, truth } => {
                    writeln!(w, "{},{},,unresolved,unset", csv_field(image_id), csv_field(truth))?
                }
            }
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Score every prediction, then categorize the scored rows together.
/// Unresolvable truth labels become flagged rows instead of failing the run.
pub fn score_predictions(predictions: &[Prediction], t: &Taxonomy) -> Result<ScoreReport> {
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let mut rows = Vec::with_capacity(predictions.len());
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in predictions {
        let topk = TopK::new(p.topk.clone())
            .map_err(|e| Error::Argument(format!("prediction `{}`: {e}", p.image_id)))?;
        match score_image(&p.image_id, &p.truth, &topk, t) {
            Ok(r) => {
                if let Some(g) = &p.group {
                    groups.entry(g.clone()).or_default().push(r.score);
                }
                rows.push(ReportRow::Scored(r));
            }
            Err(Error::UnresolvedLabel { .. }) => rows.push(ReportRow::Unresolved {
                image_id: p.image_id.clone(),
                truth: p.truth.clone(),
            }),
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = rows
        .iter()
        .filter_map(|r| match r {
            ReportRow::Scored(s) => Some(s.score),
            ReportRow::Unresolved { .. } => None,
        })
        .collect();
    if scores.len() >= 2 {
        let (cats, _, _) = categorize(&scores)?;
        let mut it = cats.into_iter();
        for row in &mut rows {
            if let ReportRow::Scored(r) = row {
                r.category = it.next().expect("one category per score");
            }
        }
    }
    let overall = summarize(&scores).ok();
    let by_group = groups
        .into_iter()
        .map(|(k, v)| Ok((k, summarize(&v)?)))
        .collect::<Result<_>>()?;
    Ok(ScoreReport { rows, overall, by_group })
}
