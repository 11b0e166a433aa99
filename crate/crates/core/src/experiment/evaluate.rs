use std::io::Read;

use crate::error::{Error, Result};
use crate::metrics::{delong_test, ensemble_mean, roc_curve, Alternative, EvalReport, ScoredPredictions};

use super::report::{Chart, CsvTable, Report};

/// Scores of one model, keyed by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model_id: String,
    pub instance_ids: Vec<String>,
    pub predictions: ScoredPredictions,
}

pub const DEFAULT_MODEL_ID: &str = "model";

/// Parses `instance_id,label,score[,model_id]`, grouping rows by model in
/// order of first appearance.
pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionSet>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("predictions lack a `{name}` column")));
    let (id_c, label_c, score_c) = (need("instance_id")?, need("label")?, need("score")?);
    let model_c = col("model_id");
    let mut groups: Vec<(String, Vec<String>, Vec<f64>, Vec<u8>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", line + 2));
        let label: u8 = record[label_c].trim().parse().map_err(|_| bad("label"))?;
        let score: f64 = record[score_c].trim().parse().map_err(|_| bad("score"))?;
        let model = model_c.map_or(DEFAULT_MODEL_ID, |c| &record[c]).to_string();
        let g = match groups.iter().position(|g| g.0 == model) {
            Some(i) => &mut groups[i],
            None => {
                groups.push((model, Vec::new(), Vec::new(), Vec::new()));
                groups.last_mut().expect("just pushed")
            }
        };
        g.1.push(record[id_c].to_string());
        g.2.push(score);
        g.3.push(label);
    }
    if groups.is_empty() {
        return Err(Error::Input("no predictions".into()));
    }
    groups
        .into_iter()
        .map(|(model_id, ids, scores, labels)| {
            Ok(PredictionSet {
                model_id,
                instance_ids: ids,
                predictions: ScoredPredictions::new(scores, labels)?,
            })
        })
        .collect()
}

/// Reorders every set by instance id and checks they cover the same
/// instances with the same labels.
fn align(sets: &[PredictionSet]) -> Result<Vec<ScoredPredictions>> {
    let sorted: Vec<(Vec<&String>, ScoredPredictions)> = sets
        .iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..s.instance_ids.len()).collect();
            idx.sort_by(|&a, &b| s.instance_ids[a].cmp(&s.instance_ids[b]));
            let ids = idx.iter().map(|&i| &s.instance_ids[i]).collect();
            let sp = ScoredPredictions::new(
                idx.iter().map(|&i| s.predictions.scores()[i]).collect(),
                idx.iter().map(|&i| s.predictions.labels()[i]).collect(),
            )?;
            Ok((ids, sp))
        })
        .collect::<Result<_>>()?;
    let first = &sorted[0];
    if sorted.iter().any(|(ids, sp)| ids != &first.0 || sp.labels() != first.1.labels()) {
        return Err(Error::Input("models must score the same instances with the same labels".into()));
    }
    Ok(sorted.into_iter().map(|(_, sp)| sp).collect())
}

pub const METRICS_HEADER: [&str; 8] = [
    "model_id",
    "n",
    "accuracy",
    "balanced_accuracy",
    "recall",
    "auroc",
    "auroc_ci_low",
    "auroc_ci_high",
];

/// Metrics per model; with several models also their score ensemble and
/// one-tailed paired DeLong tests (`model_a > model_b`) for every pair.
pub fn evaluate_predictions(sets: &[PredictionSet], n_boot: usize, seed: u64, with_roc: bool) -> Result<Report> {
    let mut metrics = CsvTable::new("metrics", &METRICS_HEADER);
    let mut push = |id: &str, sp: &ScoredPredictions| -> Result<()> {
        let r = EvalReport::compute(sp, n_boot, seed)?;
        metrics.push(vec![
            id.to_string(),
            r.n.to_string(),
            r.accuracy.to_string(),
            r.balanced_accuracy.to_string(),
            r.recall.to_string(),
            r.auroc.to_string(),
            r.auroc_ci.0.to_string(),
            r.auroc_ci.1.to_string(),
        ]);
        Ok(())
    };
    for s in sets {
        push(&s.model_id, &s.predictions)?;
    }
    let mut report = Report::default();
    if sets.len() > 1 {
        let aligned = align(sets)?;
        push("ensemble", &ensemble_mean(&aligned)?)?;
        let mut delong = CsvTable::new("delong", &["model_a", "model_b", "auc_a", "auc_b", "z", "p_one_tailed", "p_underflow"]);
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let r = delong_test(&aligned[i], &aligned[j], Alternative::AGreater)?;
                delong.push(vec![
                    sets[i].model_id.clone(),
                    sets[j].model_id.clone(),
                    r.auc_a.to_string(),
                    r.auc_b.to_string(),
                    r.z.to_string(),
                    r.p_one_tailed.to_string(),
                    r.p_underflow.to_string(),
                ]);
            }
        }
        report.tables.push(delong);
    }
    report.summary = metrics.to_csv_string()?;
    report.tables.insert(0, metrics);
    if with_roc {
        let mut roc = CsvTable::new("roc", &["model_id", "fpr", "tpr", "threshold"]);
        for s in sets {
            let c = roc_curve(&s.predictions)?;
            for k in 0..c.len() {
                roc.push(vec![
                    s.model_id.clone(),
                    c.fpr[k].to_string(),
                    c.tpr[k].to_string(),
                    c.thresholds[k].to_string(),
                ]);
            }
        }
        report.charts.push(Chart::line("roc", "ROC curve", &roc, "fpr", "tpr", "model_id")?);
        report.tables.push(roc);
    }
    Ok(report)
}
