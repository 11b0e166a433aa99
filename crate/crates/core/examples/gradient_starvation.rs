//! Two linearly separable features, one strong but only partly predictive,
//! one weak but perfectly predictive. Without a logit penalty the model
//! leans on the strong feature; spectral decoupling keeps the weak one.

use spectral_decoupling::specnet::{evaluate_balanced_accuracy, train, Model, SdConfig, TrainConfig};
use spectral_decoupling::synthgen::make_linear_starvation_dataset;

fn main() -> spectral_decoupling::Result<()> {
    let (tr, te) = make_linear_starvation_dataset(400, 2.0, 0.5, 0.2, 0.9, 0)?;
    let cfg = TrainConfig { epochs: 200, base_lr: 0.5, ..TrainConfig::default() };
    for (name, sd) in [("cross-entropy", SdConfig::Off), ("spectral decoupling", SdConfig::eq1(0.1))] {
        let (model, _) = train(Model::linear(tr.dim(), 0)?, &tr, &cfg, &sd)?;
        // logit margin contributed by each feature: w[., 1] - w[., 0]
        let w = &model.output_layer().weight;
        let (strong, weak) = (w[[0, 1]] - w[[0, 0]], w[[1, 1]] - w[[1, 0]]);
        println!(
            "{name:>20}: test balanced accuracy {:.3}, weights strong {strong:+.3} weak {weak:+.3}, weak/strong {:.1}",
            evaluate_balanced_accuracy(&model, &te)?,
            weak / strong
        );
    }
    Ok(())
}
