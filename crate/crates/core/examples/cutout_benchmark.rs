//! Weight decay, spectral decoupling and the all-cutout control on a small
//! version of the dominant-feature benchmark.

use spectral_decoupling::experiment::{run_cutout_experiment, ExperimentConfig, ExperimentKind};

fn main() -> spectral_decoupling::Result<()> {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::Cutout);
    cfg.seeds = vec![0, 1];
    cfg.data.n_train = 2000;
    cfg.data.n_test = 500;
    cfg.train.epochs = 20;
    let report = run_cutout_experiment(&cfg)?;
    for arm in &report.arms {
        let (acc, acc_sd) = arm.accuracy();
        let (rec, rec_sd) = arm.recall();
        println!("{:>20}: accuracy {acc:.3} ± {acc_sd:.3}, recall {rec:.3} ± {rec_sd:.3}", arm.arm);
    }
    Ok(())
}
