use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specnet::{evaluate_balanced_accuracy, train, LabeledDataset, Model, ModelKind, SdConfig, TrainConfig};

use super::report::CsvTable;

/// λ values shared by both penalty forms.
pub const S1: [f64; 6] = [0.1, 0.01, 0.001, 1e-4, 1e-5, 1e-6];
/// γ values for the per-class form.
pub const S2: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Eq1,
    Eq2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub equation: Equation,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Evaluate at most this many points, in enumeration order.
    pub budget: Option<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::eq1()
    }
}

impl SearchSpace {
    pub fn eq1() -> Self {
        Self {
            equation: Equation::Eq1,
            lambdas: S1.to_vec(),
            gammas: S2.to_vec(),
            budget: None,
        }
    }

    pub fn eq2() -> Self {
        Self {
            equation: Equation::Eq2,
            ..Self::eq1()
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || (self.equation == Equation::Eq2 && self.gammas.is_empty()) {
            return Err(Error::Config("search space is empty".into()));
        }
        if self.budget == Some(0) {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        for sd in self.all_points() {
            sd.validate()?;
        }
        Ok(())
    }

    /// Every point of the space: `λ` alone, or `(λ_neg, γ_neg, λ_pos, γ_pos)`.
    pub fn all_points(&self) -> Vec<SdConfig> {
        match self.equation {
            Equation::Eq1 => self.lambdas.iter().map(|&l| SdConfig::eq1(l)).collect(),
            Equation::Eq2 => {
                let mut out = Vec::new();
                for &ln in &self.lambdas {
                    for &gn in &self.gammas {
                        for &lp in &self.lambdas {
                            for &gp in &self.gammas {
                                out.push(SdConfig::eq2(ln, gn, lp, gp));
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// The points actually evaluated under the budget.
    pub fn points(&self) -> Vec<SdConfig> {
        let mut all = self.all_points();
        if let Some(b) = self.budget {
            all.truncate(b);
        }
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub index: usize,
    pub sd: SdConfig,
    pub metric: Option<f64>,
    /// Why training failed, when it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: SdConfig,
    pub best_metric: f64,
}

/// `(Σλ, Σ|γ|)`, the tie-break order.
fn tie_key(sd: &SdConfig) -> (f64, f64) {
    match *sd {
        SdConfig::Off => (0.0, 0.0),
        SdConfig::Eq1 { lambda } => (lambda, 0.0),
        SdConfig::Eq2 {
            lambda_neg,
            gamma_neg,
            lambda_pos,
            gamma_pos,
        } => (lambda_neg + lambda_pos, gamma_neg.abs() + gamma_pos.abs()),
    }
}

fn better(a: &GridRow, b: &GridRow) -> Ordering {
    let (ma, mb) = (a.metric.unwrap_or(f64::NEG_INFINITY), b.metric.unwrap_or(f64::NEG_INFINITY));
    let (la, ga) = tie_key(&a.sd);
    let (lb, gb) = tie_key(&b.sd);
    mb.total_cmp(&ma)
        .then(la.total_cmp(&lb))
        .then(ga.total_cmp(&gb))
        .then(a.index.cmp(&b.index))
}

/// Trains one model per grid point (same seed for all) and picks the point
/// with the best validation balanced accuracy. Weight decay is forced off.
pub fn grid_search(
    space: &SearchSpace,
    train_data: &LabeledDataset,
    val: &LabeledDataset,
    model: ModelKind,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GridResult> {
    space.validate()?;
    if std::ptr::eq(train_data, val) || train_data == val {
        return Err(Error::Input("validation split must differ from the training split".into()));
    }
    let cfg = cfg.clone().with_seed(seed).with_weight_decay(0.0);
    let rows: Vec<GridRow> = space
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(index, sd)| {
            let outcome = Model::new(model, train_data.dim(), seed)
                .and_then(|m| train(m, train_data, &cfg, &sd))
                .and_then(|(m, _)| evaluate_balanced_accuracy(&m, val));
            match outcome {
                Ok(v) => GridRow {
                    index,
                    sd,
                    metric: Some(v),
                    error: None,
                },
                Err(e) => GridRow {
                    index,
                    sd,
                    metric: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let (best, best_metric) = rows
        .iter()
        .filter(|r| r.metric.is_some())
        .min_by(|a, b| better(a, b))
        .map(|r| (r.sd, r.metric.unwrap_or(f64::NAN)))
        .ok_or_else(|| Error::Input("every grid point failed to train".into()))?;
    Ok(GridResult {
        rows,
        best,
        best_metric,
    })
}

pub const GRID_CSV_HEADER: [&str; 9] = [
    "index",
    "variant",
    "lambda",
    "lambda_neg",
    "gamma_neg",
    "lambda_pos",
    "gamma_pos",
    "val_balanced_accuracy",
    "status",
];

impl GridResult {
    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new("gridsearch", &GRID_CSV_HEADER);
        for r in &self.rows {
            let blank = String::new;
            let (variant, l, ln, gn, lp, gp) = match r.sd {
                SdConfig::Off => ("off", blank(), blank(), blank(), blank(), blank()),
                SdConfig::Eq1 { lambda } => ("eq1", lambda.to_string(), blank(), blank(), blank(), blank()),
                SdConfig::Eq2 {
                    lambda_neg,
                    gamma_neg,
                    lambda_pos,
                    gamma_pos,
                } => (
                    "eq2",
                    blank(),
                    lambda_neg.to_string(),
                    gamma_neg.to_string(),
                    lambda_pos.to_string(),
                    gamma_pos.to_string(),
                ),
            };
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("failed: {e}"),
            };
            t.push(vec![
                r.index.to_string(),
                variant.to_string(),
                l,
                ln,
                gn,
                lp,
                gp,
                r.metric.map(|m| m.to_string()).unwrap_or_default(),
                status,
            ]);
        }
        t
    }
}
