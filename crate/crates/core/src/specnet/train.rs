use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::config::{SdConfig, TrainConfig};
use super::dataset::{ImageShape, LabeledDataset};
use super::loss::{loss_and_grad, predict_proba};
use super::model::Model;
use crate::error::{Error, Result};
use crate::{metrics, rng};

/// Maximum shift (pixels) of the random crop used for augmentation.
pub const AUGMENT_PAD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    /// Mean of the per-batch objective (cross-entropy + penalty).
    pub train_loss: f64,
    /// Balanced accuracy on the validation split, if one was given.
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,lr,train_loss,val_metric` with an empty cell when no
    /// validation split was used.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "lr", "train_loss", "val_metric"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.val_metric.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn train(
    model: Model,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    sd: &SdConfig,
) -> Result<(Model, TrainTrace)> {
    train_with_validation(model, data, None, cfg, sd)
}

/// Mini-batch SGD on `CE + penalty`, optionally reporting validation
/// balanced accuracy after every epoch. Deterministic for a fixed
/// `cfg.seed`.
pub fn train_with_validation(
    mut model: Model,
    data: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    sd: &SdConfig,
) -> Result<(Model, TrainTrace)> {
    cfg.validate(sd)?;
    if data.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    let shape = if cfg.augment {
        Some(data.image_shape().ok_or_else(|| {
            Error::Config("augmentation requires a dataset built from images".into())
        })?)
    } else {
        None
    };

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, 1);
    let mut augment_rng = rng::stream(cfg.seed, 2);
    let mut trace = TrainTrace::default();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_lr = cfg.lr_schedule.rate(cfg.base_lr, step, total_steps);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = data.inputs().select(Axis(0), idx);
            if let Some(shape) = shape {
                augment_batch(&mut x, shape, &mut augment_rng);
            }
            let y: Vec<u8> = idx.iter().map(|&i| data.labels()[i]).collect();
            let (loss, mut grads) = loss_and_grad(&model, x.view(), &y, sd)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: b,
                    loss,
                });
            }
            if cfg.weight_decay > 0.0 {
                grads.scaled_add(cfg.weight_decay, &model);
            }
            let lr = cfg.lr_schedule.rate(cfg.base_lr, step, total_steps);
            model.scaled_add(-lr, &grads);
            loss_sum += loss;
            step += 1;
        }
        let val_metric = match val {
            Some(v) => Some(evaluate_balanced_accuracy(&model, v)?),
            None => None,
        };
        trace.records.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_metric,
        });
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            step: 0,
            loss: f64::NAN,
        });
    }
    Ok((model, trace))
}

/// Balanced accuracy at the 0.5 cutoff, falling back to plain accuracy when
/// the split holds a single class.
pub fn evaluate_balanced_accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let scores = predict_proba(model, data.inputs())?;
    let pred = metrics::binarize(&scores, metrics::DEFAULT_CUTOFF);
    match metrics::balanced_accuracy(&pred, data.labels()) {
        Err(Error::MissingClass) => metrics::accuracy(&pred, data.labels()),
        r => r,
    }
}

/// Fraction of training samples classified correctly at the 0.5 cutoff.
pub fn evaluate_accuracy(model: &Model, inputs: ArrayView2<'_, f64>, labels: &[u8]) -> Result<f64> {
    let scores = predict_proba(model, inputs)?;
    metrics::accuracy(&metrics::binarize(&scores, metrics::DEFAULT_CUTOFF), labels)
}

/// Shifted crop from a reflect-padded copy plus random flips, in place.
fn augment_batch(x: &mut Array2<f64>, shape: ImageShape, rng: &mut rng::Rng) {
    let (w, h, c) = (shape.width, shape.height, shape.channels);
    let pad = AUGMENT_PAD as i64;
    let mut src = vec![0.0; shape.len()];
    for mut row in x.rows_mut() {
        let dx = rng.random_range(-pad..=pad);
        let dy = rng.random_range(-pad..=pad);
        let flip_x = rng.random_bool(0.5);
        let flip_y = rng.random_bool(0.5);
        src.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
        for y in 0..h {
            let ty = if flip_y { h - 1 - y } else { y };
            let sy = crate::image::mirror_index((ty as i64 + dy) as isize, h);
            for xx in 0..w {
                let tx = if flip_x { w - 1 - xx } else { xx };
                let sx = crate::image::mirror_index((tx as i64 + dx) as isize, w);
                for ch in 0..c {
                    row[(y * w + xx) * c + ch] = src[(sy * w + sx) * c + ch];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specnet::dataset::Split;
    use crate::specnet::loss::positive_probability;
    use crate::specnet::config::LrSchedule;

    fn separable(n: usize, seed: u64) -> LabeledDataset {
        let mut r = rng::seeded(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            x[[i, 0]] = sign * r.random_range(0.5..2.0);
            x[[i, 1]] = r.random_range(-1.0..1.0);
            y.push(label);
        }
        LabeledDataset::new(x, y, Split::Train).unwrap()
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = separable(100, 1);
        let cfg = TrainConfig {
            epochs: 200,
            base_lr: 0.1,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let (model, trace) = train(Model::linear(2, 0).unwrap(), &data, &cfg, &SdConfig::Off).unwrap();
        assert_eq!(evaluate_accuracy(&model, data.inputs(), data.labels()).unwrap(), 1.0);
        assert_eq!(trace.records.len(), 200);
        assert!(trace.records[199].train_loss < trace.records[0].train_loss);
    }

    #[test]
    fn training_is_bit_identical_per_seed() {
        let data = separable(64, 2);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || train(Model::mlp(2, 8, 3).unwrap(), &data, &cfg, &SdConfig::eq1(0.01)).unwrap();
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(ta, tb);
    }

    #[test]
    fn off_and_zero_lambda_follow_the_same_trajectory() {
        let data = separable(40, 3);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let m = Model::mlp(2, 4, 5).unwrap();
        let (a, _) = train(m.clone(), &data, &cfg, &SdConfig::Off).unwrap();
        let (b, _) = train(m, &data, &cfg, &SdConfig::eq1(0.0)).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn rejects_weight_decay_with_penalty_and_nan() {
        let data = separable(10, 4);
        let cfg = TrainConfig::default().with_weight_decay(1e-4);
        let m = Model::linear(2, 0).unwrap();
        assert!(matches!(
            train(m.clone(), &data, &cfg, &SdConfig::eq1(0.01)),
            Err(Error::Config(_))
        ));
        let cfg = TrainConfig {
            base_lr: 1e6,
            lr_schedule: LrSchedule::Constant,
            epochs: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(m, &data, &cfg, &SdConfig::eq1(1.0)),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn penalty_shrinks_logits() {
        let mut with = 0.0;
        let mut without = 0.0;
        for seed in 0..5 {
            let data = separable(100, 10 + seed);
            let cfg = TrainConfig {
                epochs: 50,
                base_lr: 0.1,
                seed,
                ..TrainConfig::default()
            };
            let m = Model::mlp(2, 8, seed).unwrap();
            for (sd, acc) in [(SdConfig::eq1(0.01), &mut with), (SdConfig::Off, &mut without)] {
                let (model, _) = train(m.clone(), &data, &cfg, &sd).unwrap();
                let z = model.forward(data.inputs()).unwrap();
                *acc += z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
            }
        }
        assert!(with < without, "{with} vs {without}");
    }

    #[test]
    fn validation_metric_and_csv() {
        let data = separable(40, 5);
        let val = separable(20, 6);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (model, trace) =
            train_with_validation(Model::linear(2, 0).unwrap(), &data, Some(&val), &cfg, &SdConfig::Off).unwrap();
        let p = positive_probability(model.forward(val.inputs()).unwrap().view());
        assert_eq!(p.len(), 20);
        assert!(trace.records.iter().all(|r| r.val_metric.is_some()));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_metric\n0,0.05,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn augmentation_preserves_shape_and_values() {
        use crate::image::Image;
        let imgs: Vec<Image> = (0..4)
            .map(|k| Image::from_fn(8, 8, 3, |x, y, c| ((x + y * 3 + c + k) % 5) as f64 / 4.0))
            .collect();
        let data = LabeledDataset::from_images(&imgs, vec![0, 1, 0, 1], Split::Train).unwrap();
        let mut x = data.inputs().to_owned();
        augment_batch(&mut x, data.image_shape().unwrap(), &mut rng::seeded(0));
        assert_eq!(x.dim(), (4, 192));
        for v in x.iter() {
            assert!(data.inputs().iter().any(|s| s == v));
        }
        let cfg = TrainConfig {
            epochs: 1,
            augment: true,
            ..TrainConfig::default()
        };
        assert!(train(Model::linear(192, 0).unwrap(), &data, &cfg, &SdConfig::Off).is_ok());
    }
}
