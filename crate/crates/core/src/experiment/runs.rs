use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, mean_sd};
use crate::perturb::{run_sweep, PerturbationSweep, SweepKind, SweepTable};
use crate::rng;
use crate::specnet::{
    evaluate_balanced_accuracy, predict_proba, train, train_with_validation, LabeledDataset, Model, SdConfig, Split,
    TrainConfig, TrainTrace,
};
use crate::stain::{normalize_to_reference, throughput_bench, StainReference, ThroughputReport};
use crate::synthgen::{make_cutout_dataset, make_he_dataset, HeImageSpec};

use super::config::{DatasetKind, ExperimentConfig};
use super::report::{Chart, CsvTable, Report};
use super::search::{grid_search, GridResult};

/// One training recipe. Spectral-decoupling arms never use weight decay and
/// weight-decay arms never use the logit penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub sd: SdConfig,
    pub weight_decay: f64,
    pub augment: bool,
}

impl Arm {
    pub fn weight_decay(name: &str, augment: bool) -> Self {
        Self {
            name: name.to_string(),
            sd: SdConfig::Off,
            weight_decay: TrainConfig::DEFAULT_WEIGHT_DECAY,
            augment,
        }
    }

    pub fn spectral(name: &str, sd: SdConfig, augment: bool) -> Result<Self> {
        if !sd.is_active() {
            return Err(Error::Config(format!("arm {name} needs an active penalty")));
        }
        Ok(Self {
            name: name.to_string(),
            sd,
            weight_decay: 0.0,
            augment,
        })
    }

    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        base.clone()
            .with_seed(seed)
            .with_weight_decay(self.weight_decay)
            .with_augment(self.augment)
    }

    pub fn fit(&self, cfg: &ExperimentConfig, data: &LabeledDataset, seed: u64) -> Result<Model> {
        let model = Model::new(cfg.model.kind(), data.dim(), seed)?;
        Ok(train(model, data, &self.train_config(&cfg.train, seed), &self.sd)?.0)
    }
}

fn val_size(n_train: usize) -> usize {
    ((n_train / 20) * 2).max(2)
}

/// Train, validation and test splits of the configured benchmark.
pub fn build_splits(cfg: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let d = &cfg.data;
    match d.kind {
        DatasetKind::Cutout => {
            let c = make_cutout_dataset(&d.image, &d.cutout, d.n_train, d.n_test, seed)?;
            Ok((c.train, c.val, c.test))
        }
        DatasetKind::He => Ok((
            make_he_dataset(&d.he, d.n_train, Split::Train, seed)?,
            make_he_dataset(&d.he, val_size(d.n_train), Split::Val, seed)?,
            make_he_dataset(&d.he, d.n_test, Split::Test, seed)?,
        )),
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Models, traces and test scores from `sdlab train`.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub seed: u64,
    pub model: Model,
    pub trace: TrainTrace,
    pub test_labels: Vec<u8>,
    pub test_scores: Vec<f64>,
}

/// Trains one model per seed with the configured penalty, reporting
/// validation balanced accuracy per epoch. Every model scores the test split
/// of the first seed so the predictions can be compared and ensembled.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<TrainingRun>> {
    cfg.validate()?;
    let (_, _, test) = build_splits(cfg, cfg.seeds[0])?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let (tr, val, _) = build_splits(cfg, seed)?;
            let model = Model::new(cfg.model.kind(), tr.dim(), seed)?;
            let tc = cfg.train.clone().with_seed(seed);
            let (model, trace) = train_with_validation(model, &tr, Some(&val), &tc, &cfg.sd)?;
            let test_scores = predict_proba(&model, test.inputs())?;
            Ok(TrainingRun {
                seed,
                model,
                trace,
                test_labels: test.labels().to_vec(),
                test_scores,
            })
        })
        .collect()
}

pub const PREDICTION_HEADER: [&str; 4] = ["instance_id", "label", "score", "model_id"];

pub fn predictions_table(runs: &[TrainingRun]) -> CsvTable {
    let mut t = CsvTable::new("predictions", &PREDICTION_HEADER);
    for r in runs {
        for (i, (l, s)) in r.test_labels.iter().zip(&r.test_scores).enumerate() {
            t.push(vec![i.to_string(), l.to_string(), f(*s), format!("seed{}", r.seed)]);
        }
    }
    t
}

pub fn run_gridsearch(cfg: &ExperimentConfig) -> Result<GridResult> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let (tr, val, _) = build_splits(cfg, seed)?;
    grid_search(&cfg.search, &tr, &val, cfg.model.kind(), &cfg.train, seed)
}

impl GridResult {
    pub fn report(&self) -> Result<Report> {
        let table = self.table();
        let mut summary = String::new();
        let ok = self.rows.iter().filter(|r| r.metric.is_some()).count();
        let _ = writeln!(summary, "grid points evaluated: {} ({} failed)", self.rows.len(), self.rows.len() - ok);
        let _ = writeln!(summary, "best: {} with validation balanced accuracy {:.4}", self.best.label(), self.best_metric);
        Ok(Report {
            tables: vec![table],
            charts: vec![],
            summary,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedScore {
    pub seed: u64,
    pub accuracy: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmScores {
    pub arm: String,
    pub runs: Vec<SeedScore>,
}

impl ArmScores {
    pub fn accuracy(&self) -> (f64, f64) {
        mean_sd(&self.runs.iter().map(|r| r.accuracy).collect::<Vec<_>>())
    }

    pub fn recall(&self) -> (f64, f64) {
        mean_sd(&self.runs.iter().map(|r| r.recall).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoutReport {
    pub arms: Vec<ArmScores>,
}

pub const CUTOUT_ARMS: [&str; 3] = ["weight_decay", "spectral_decoupling", "control"];

impl CutoutReport {
    pub fn arm(&self, name: &str) -> Option<&ArmScores> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn summary_table(&self) -> CsvTable {
        let mut t = CsvTable::new("cutout_summary", &["arm", "metric", "mean", "sd", "n_seeds"]);
        for a in &self.arms {
            for (metric, (m, s)) in [("accuracy", a.accuracy()), ("recall", a.recall())] {
                t.push(vec![a.arm.clone(), metric.into(), f(m), f(s), a.runs.len().to_string()]);
            }
        }
        t
    }

    pub fn runs_table(&self) -> CsvTable {
        let mut t = CsvTable::new("cutout_runs", &["arm", "seed", "accuracy", "recall"]);
        for a in &self.arms {
            for r in &a.runs {
                t.push(vec![a.arm.clone(), r.seed.to_string(), f(r.accuracy), f(r.recall)]);
            }
        }
        t
    }

    pub fn report(&self) -> Result<Report> {
        let summary_table = self.summary_table();
        let chart = Chart::bars(
            "cutout_summary",
            "Cutout test set: mean over seeds",
            &summary_table,
            &["arm", "metric"],
            "mean",
            Some("sd"),
        )?;
        let mut summary = String::from("arm                  accuracy          recall\n");
        for a in &self.arms {
            let (am, asd) = a.accuracy();
            let (rm, rsd) = a.recall();
            let _ = writeln!(summary, "{:<20} {am:.3} ± {asd:.3}   {rm:.3} ± {rsd:.3}", a.arm);
        }
        Ok(Report {
            tables: vec![summary_table, self.runs_table()],
            charts: vec![chart],
            summary,
        })
    }
}

/// Weight decay, spectral decoupling and a control (cutouts on every image)
/// trained per seed and scored on the cutout test set.
pub fn run_cutout_experiment(cfg: &ExperimentConfig) -> Result<CutoutReport> {
    cfg.validate()?;
    let d = &cfg.data;
    let arms = [
        (Arm::weight_decay(CUTOUT_ARMS[0], false), d.cutout),
        (Arm::spectral(CUTOUT_ARMS[1], cfg.sd, false)?, d.cutout),
        (Arm::weight_decay(CUTOUT_ARMS[2], false), d.cutout.control()),
    ];
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let scores: Vec<SeedScore> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let (arm, cut) = &arms[a];
            let data = make_cutout_dataset(&d.image, cut, d.n_train, d.n_test, seed)?;
            let model = arm.fit(cfg, &data.train, seed)?;
            let pred = metrics::binarize(&predict_proba(&model, data.test.inputs())?, metrics::DEFAULT_CUTOFF);
            Ok(SeedScore {
                seed,
                accuracy: metrics::accuracy(&pred, data.test.labels())?,
                recall: metrics::recall(&pred, data.test.labels())?,
            })
        })
        .collect::<Result<_>>()?;
    let k = cfg.seeds.len();
    Ok(CutoutReport {
        arms: arms
            .iter()
            .enumerate()
            .map(|(i, (arm, _))| ArmScores {
                arm: arm.name.clone(),
                runs: scores[i * k..(i + 1) * k].to_vec(),
            })
            .collect(),
    })
}

pub const ROBUSTNESS_ARMS: [&str; 3] = ["wd_noaug", "wd_aug", "sd_aug"];

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    /// `(arm, table)` for every arm and sweep kind.
    pub tables: Vec<(String, SweepTable)>,
    pub compare_blur: usize,
}

impl RobustnessReport {
    pub fn table(&self, arm: &str, kind: SweepKind) -> Option<&SweepTable> {
        self.tables.iter().find(|(a, t)| a == arm && t.kind == kind).map(|(_, t)| t)
    }

    pub fn blur_mean(&self, arm: &str, level: usize) -> Option<f64> {
        self.table(arm, SweepKind::Blur)?.row(level as f64).map(|r| r.mean_balanced_accuracy)
    }

    /// Mean at the last level of the blur sweep.
    pub fn final_blur_mean(&self, arm: &str) -> Option<f64> {
        self.table(arm, SweepKind::Blur)?.rows.last().map(|r| r.mean_balanced_accuracy)
    }

    pub fn kind_table(&self, kind: SweepKind) -> CsvTable {
        let mut t = CsvTable::new(
            &format!("robustness_{}", kind.as_str().replace('-', "_")),
            &["arm", "kind", "level", "mean_balanced_accuracy", "sd", "n_seeds"],
        );
        for (arm, table) in self.tables.iter().filter(|(_, t)| t.kind == kind) {
            for r in &table.rows {
                t.push(vec![
                    arm.clone(),
                    kind.as_str().into(),
                    f(r.level),
                    f(r.mean_balanced_accuracy),
                    f(r.sd),
                    r.per_seed.len().to_string(),
                ]);
            }
        }
        t
    }

    pub fn report(&self) -> Result<Report> {
        let mut kinds: Vec<SweepKind> = Vec::new();
        for (_, t) in &self.tables {
            if !kinds.contains(&t.kind) {
                kinds.push(t.kind);
            }
        }
        let mut report = Report::default();
        for kind in kinds {
            let t = self.kind_table(kind);
            report.charts.push(Chart::line(
                &t.name,
                &format!("Balanced accuracy under {}", kind.as_str()),
                &t,
                "level",
                "mean_balanced_accuracy",
                "arm",
            )?);
            report.tables.push(t);
        }
        let s = &mut report.summary;
        let _ = writeln!(s, "blur comparison at n = {}:", self.compare_blur);
        for arm in ROBUSTNESS_ARMS {
            if let Some(v) = self.blur_mean(arm, self.compare_blur) {
                let _ = writeln!(s, "  {arm:<10} {v:.3}");
            }
        }
        let _ = writeln!(s, "final blur level:");
        for arm in ROBUSTNESS_ARMS {
            if let Some(v) = self.final_blur_mean(arm) {
                let _ = writeln!(s, "  {arm:<10} {v:.3}");
            }
        }
        Ok(report)
    }
}

/// Trains the three robustness arms per seed on H&E tiles and sweeps every
/// configured perturbation over a shared test set.
pub fn run_robustness_experiment(cfg: &ExperimentConfig) -> Result<RobustnessReport> {
    cfg.validate()?;
    let d = &cfg.data;
    let arms = [
        Arm::weight_decay(ROBUSTNESS_ARMS[0], false),
        Arm::weight_decay(ROBUSTNESS_ARMS[1], true),
        Arm::spectral(ROBUSTNESS_ARMS[2], cfg.sd, true)?,
    ];
    let test = make_he_dataset(&d.he, d.n_test, Split::Test, cfg.seeds[0])?;
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let models: Vec<Model> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let tr = make_he_dataset(&d.he, d.n_train, Split::Train, seed)?;
            arms[a].fit(cfg, &tr, seed)
        })
        .collect::<Result<_>>()?;
    let k = cfg.seeds.len();
    let mut tables = Vec::new();
    for (i, arm) in arms.iter().enumerate() {
        for &kind in &cfg.robustness.kinds {
            let t = run_sweep(&models[i * k..(i + 1) * k], &test, &PerturbationSweep::standard(kind))?;
            tables.push((arm.name.clone(), t));
        }
    }
    Ok(RobustnessReport {
        tables,
        compare_blur: cfg.robustness.compare_blur,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StainRow {
    pub arm: String,
    pub normalized: bool,
    pub shifted: Vec<f64>,
    pub unshifted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StainComparisonReport {
    /// Arm × normalized, four rows.
    pub rows: Vec<StainRow>,
    /// Test images whose stain matrix could not be estimated, left as is.
    pub normalization_failures: usize,
    pub reference: StainReference,
}

pub const STAIN_ARMS: [&str; 2] = ["weight_decay", "spectral_decoupling"];

impl StainComparisonReport {
    pub fn mean(&self, arm: &str, normalized: bool, shifted: bool) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.normalized == normalized)
            .map(|r| mean_sd(if shifted { &r.shifted } else { &r.unshifted }).0)
    }

    /// Gain from normalization on the shifted test set.
    pub fn gain(&self, arm: &str) -> Option<f64> {
        Some(self.mean(arm, true, true)? - self.mean(arm, false, true)?)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(
            "stain_comparison",
            &[
                "arm",
                "normalized",
                "mean_balanced_accuracy_shifted",
                "sd_shifted",
                "mean_balanced_accuracy_unshifted",
                "sd_unshifted",
                "n_seeds",
            ],
        );
        for r in &self.rows {
            let (ms, ss) = mean_sd(&r.shifted);
            let (mu, su) = mean_sd(&r.unshifted);
            t.push(vec![
                r.arm.clone(),
                r.normalized.to_string(),
                f(ms),
                f(ss),
                f(mu),
                f(su),
                r.shifted.len().to_string(),
            ]);
        }
        t
    }

    pub fn report(&self) -> Result<Report> {
        let t = self.table();
        let chart = Chart::bars(
            "stain_comparison",
            "Stain-shifted test set",
            &t,
            &["arm", "normalized"],
            "mean_balanced_accuracy_shifted",
            Some("sd_shifted"),
        )?;
        let mut summary = String::new();
        for arm in STAIN_ARMS {
            if let Some(g) = self.gain(arm) {
                let _ = writeln!(summary, "{arm}: normalization gain on shifted stains {:+.2} pp", 100.0 * g);
            }
            if let (Some(a), Some(b)) = (self.mean(arm, true, false), self.mean(arm, false, false)) {
                let _ = writeln!(summary, "{arm}: normalization change on unshifted stains {:+.2} pp", 100.0 * (a - b));
            }
        }
        let _ = writeln!(summary, "images left unnormalized: {}", self.normalization_failures);
        Ok(Report {
            tables: vec![t],
            charts: vec![chart],
            summary,
        })
    }
}

fn normalize_dataset(data: &LabeledDataset, reference: &StainReference) -> Result<(LabeledDataset, usize)> {
    let images = data.images()?;
    let out: Vec<(Image, bool)> = images
        .par_iter()
        .map(|img| match normalize_to_reference(img, reference) {
            Ok(n) => (n.quantized(), false),
            Err(_) => (img.clone(), true),
        })
        .collect();
    let failures = out.iter().filter(|(_, f)| *f).count();
    let imgs: Vec<Image> = out.into_iter().map(|(i, _)| i).collect();
    Ok((LabeledDataset::from_images(&imgs, data.labels().to_vec(), data.split())?, failures))
}

/// Accuracy of weight-decay and spectral-decoupling models on stain-shifted
/// and unshifted test tiles, with and without normalization to a reference
/// estimated from the training tiles.
pub fn run_stain_norm_comparison(cfg: &ExperimentConfig) -> Result<StainComparisonReport> {
    cfg.validate()?;
    let d = &cfg.data;
    let arms = [Arm::weight_decay(STAIN_ARMS[0], false), Arm::spectral(STAIN_ARMS[1], cfg.sd, false)?];
    let base_seed = cfg.seeds[0];
    let reference_images = make_he_dataset(&d.he, val_size(d.n_train), Split::Val, base_seed)?.images()?;
    let reference = StainReference::from_images(&reference_images)?;
    let shifted_spec = HeImageSpec {
        intensity: d.stain_shift_intensity,
        ..d.he.with_stains(d.he.stains.spread(d.stain_shift_deg)?)
    };
    let unshifted = make_he_dataset(&d.he, d.n_test, Split::Test, base_seed)?;
    let shifted = make_he_dataset(&shifted_spec, d.n_test, Split::Test, base_seed)?;
    let (unshifted_norm, f1) = normalize_dataset(&unshifted, &reference)?;
    let (shifted_norm, f2) = normalize_dataset(&shifted, &reference)?;

    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let scores: Vec<[f64; 4]> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let tr = make_he_dataset(&d.he, d.n_train, Split::Train, seed)?;
            let m = arms[a].fit(cfg, &tr, seed)?;
            Ok([
                evaluate_balanced_accuracy(&m, &shifted)?,
                evaluate_balanced_accuracy(&m, &unshifted)?,
                evaluate_balanced_accuracy(&m, &shifted_norm)?,
                evaluate_balanced_accuracy(&m, &unshifted_norm)?,
            ])
        })
        .collect::<Result<_>>()?;
    let k = cfg.seeds.len();
    let mut rows = Vec::new();
    for (i, arm) in arms.iter().enumerate() {
        let s = &scores[i * k..(i + 1) * k];
        for normalized in [false, true] {
            let off = if normalized { 2 } else { 0 };
            rows.push(StainRow {
                arm: arm.name.clone(),
                normalized,
                shifted: s.iter().map(|v| v[off]).collect(),
                unshifted: s.iter().map(|v| v[off + 1]).collect(),
            });
        }
    }
    Ok(StainComparisonReport {
        rows,
        normalization_failures: f1 + f2,
        reference,
    })
}

pub fn run_bench(cfg: &ExperimentConfig) -> Result<ThroughputReport> {
    cfg.validate()?;
    let b = &cfg.bench;
    let spec = HeImageSpec {
        size: b.size,
        ..cfg.data.he
    };
    let seed = rng::derive(cfg.seeds[0], 0xbe4c);
    let images: Vec<Image> = (0..b.images)
        .map(|i| spec.render((i % 2) as u8, &mut rng::stream(seed, i as u64)))
        .collect();
    let reference = StainReference::from_images(&images)?;
    throughput_bench(&images, b.warmup, &reference)
}

pub fn bench_report(r: &ThroughputReport) -> Report {
    let mut t = CsvTable::new("bench", &["sd_penalty_images_per_sec", "macenko_images_per_sec", "ratio"]);
    t.push(vec![f(r.sd_penalty_per_sec), f(r.macenko_per_sec), f(r.ratio())]);
    Report {
        tables: vec![t],
        charts: vec![],
        summary: format!(
            "logit penalty: {:.3e} images/s\nmacenko: {:.3e} images/s\nratio: {:.1}\n",
            r.sd_penalty_per_sec,
            r.macenko_per_sec,
            r.ratio()
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::ExperimentKind;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_kind(kind);
        cfg.seeds = vec![0, 1];
        cfg.data.n_train = 80;
        cfg.data.n_test = 40;
        cfg.data.he.size = 16;
        cfg.model.hidden = 8;
        cfg.train.epochs = 2;
        cfg
    }

    #[test]
    fn arms_enforce_coupling() {
        let wd = Arm::weight_decay("wd", false);
        assert_eq!(wd.sd, SdConfig::Off);
        assert!(wd.weight_decay > 0.0);
        let sd = Arm::spectral("sd", SdConfig::TUNED_EQ1, true).unwrap();
        assert_eq!(sd.weight_decay, 0.0);
        assert!(Arm::spectral("x", SdConfig::Off, true).is_err());
    }

    #[test]
    fn cutout_report_shape() {
        let r = run_cutout_experiment(&tiny(ExperimentKind::Cutout)).unwrap();
        assert_eq!(r.arms.len(), 3);
        assert_eq!(r.summary_table().rows.len(), 6);
        assert!(r.arms.iter().all(|a| a.runs.len() == 2));
    }

    #[test]
    fn robustness_shape_and_identity_levels() {
        let cfg = tiny(ExperimentKind::Robustness);
        let r = run_robustness_experiment(&cfg).unwrap();
        assert_eq!(r.tables.len(), 12);
        let test = make_he_dataset(&cfg.data.he, cfg.data.n_test, Split::Test, 0).unwrap();
        let tr = make_he_dataset(&cfg.data.he, cfg.data.n_train, Split::Train, 0).unwrap();
        let m = Arm::weight_decay("wd_noaug", false).fit(&cfg, &tr, 0).unwrap();
        let direct = evaluate_balanced_accuracy(&m, &test).unwrap();
        let t = r.table("wd_noaug", SweepKind::Blur).unwrap();
        assert_eq!(t.row(1.0).unwrap().per_seed[0], direct);
    }

    #[test]
    fn stain_comparison_is_two_by_two() {
        let r = run_stain_norm_comparison(&tiny(ExperimentKind::StainNormComparison)).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.table().rows.len(), 4);
    }
}
