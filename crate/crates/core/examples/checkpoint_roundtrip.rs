//! Trains with a per-class penalty, saves the checkpoint and loss trace,
//! reloads the model and checks the predictions are unchanged.

use spectral_decoupling::experiment::{build_splits, ExperimentConfig};
use spectral_decoupling::specnet::{checkpoint, predict_proba, train_with_validation, Model, SdConfig};

fn main() -> spectral_decoupling::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_train = 400;
    cfg.data.n_test = 200;
    cfg.train.epochs = 5;
    let (tr, val, test) = build_splits(&cfg, 0)?;
    let model = Model::new(cfg.model.kind(), tr.dim(), 0)?;
    let (model, trace) = train_with_validation(model, &tr, Some(&val), &cfg.train, &SdConfig::TUNED_EQ2_CUTOUT)?;
    for r in &trace.records {
        println!("epoch {:>2} lr {:.4} loss {:.4} val {:.3}", r.epoch, r.lr, r.train_loss, r.val_metric.unwrap_or(f64::NAN));
    }
    let dir = std::env::temp_dir().join("sdlab-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    checkpoint::save(&model, dir.join("model.ckpt"))?;
    trace.save_csv(dir.join("trace.csv"))?;
    let reloaded = checkpoint::load(dir.join("model.ckpt"))?;
    let same = predict_proba(&model, test.inputs())? == predict_proba(&reloaded, test.inputs())?;
    println!("{} parameters, reloaded predictions identical: {same}", model.num_params());
    Ok(())
}
