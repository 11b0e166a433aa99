//! Trains a small model on rendered H&E tiles and measures how its balanced
//! accuracy degrades under blur, sharpening and stain-intensity changes.

use spectral_decoupling::perturb::{run_sweep, PerturbationSweep, SweepKind};
use spectral_decoupling::specnet::{train, Model, SdConfig, Split, TrainConfig};
use spectral_decoupling::synthgen::{make_he_dataset, HeImageSpec};

fn main() -> spectral_decoupling::Result<()> {
    let spec = HeImageSpec::default();
    let tr = make_he_dataset(&spec, 600, Split::Train, 0)?;
    let te = make_he_dataset(&spec, 200, Split::Test, 0)?;
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let (model, _) = train(Model::mlp(tr.dim(), 32, 0)?, &tr, &cfg, &SdConfig::TUNED_EQ1)?;
    for kind in SweepKind::ALL {
        let table = run_sweep(std::slice::from_ref(&model), &te, &PerturbationSweep::standard(kind))?;
        let cells: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("{}={:.2}", r.level, r.mean_balanced_accuracy))
            .collect();
        println!("{:>8}: {}", kind.as_str(), cells.join(" "));
    }
    Ok(())
}
