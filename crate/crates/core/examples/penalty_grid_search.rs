//! Searches the single-λ penalty grid on a validation split and prints the
//! resulting table.

use spectral_decoupling::experiment::{run_gridsearch, ExperimentConfig, ExperimentKind, SearchSpace};

fn main() -> spectral_decoupling::Result<()> {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::Gridsearch);
    cfg.seeds = vec![0];
    cfg.data.n_train = 600;
    cfg.train.epochs = 8;
    cfg.search = SearchSpace::eq1();
    let result = run_gridsearch(&cfg)?;
    print!("{}", result.table().to_csv_string()?);
    println!("best {} at {:.4}", result.best.label(), result.best_metric);
    Ok(())
}
