//! AUROC with a bootstrap interval, a paired DeLong comparison and a
//! two-model score ensemble on simulated classifier outputs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use spectral_decoupling::metrics::{delong_test, ensemble_mean, Alternative, EvalReport, ScoredPredictions};
use spectral_decoupling::rng;

fn main() -> spectral_decoupling::Result<()> {
    let mut r = rng::seeded(3);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let labels: Vec<u8> = (0..500).map(|_| r.random_range(0..2u8)).collect();
    let scorer = |r: &mut rng::Rng, separation: f64| -> Vec<f64> {
        labels.iter().map(|&l| separation * l as f64 + noise.sample(r)).collect()
    };
    let strong = ScoredPredictions::new(scorer(&mut r, 1.5), labels.clone())?;
    let weak = ScoredPredictions::new(scorer(&mut r, 0.8), labels.clone())?;
    for (name, sp) in [("strong", &strong), ("weak", &weak)] {
        let e = EvalReport::compute(sp, 1000, 0)?;
        println!("{name:>8}: AUROC {:.3} (95% CI {:.3}-{:.3})", e.auroc, e.auroc_ci.0, e.auroc_ci.1);
    }
    let d = delong_test(&strong, &weak, Alternative::AGreater)?;
    println!("DeLong strong > weak: z = {:.2}, one-tailed p = {:.2e}", d.z, d.p_one_tailed);
    let ens = EvalReport::compute(&ensemble_mean(&[strong, weak])?, 200, 0)?;
    println!("ensemble AUROC {:.3}", ens.auroc);
    Ok(())
}
