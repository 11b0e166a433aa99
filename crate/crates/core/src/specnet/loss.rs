use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::config::SdConfig;
use super::model::{column_sums, Model, OUTPUT_DIM};
use crate::error::{Error, Result};

fn check_labels(logits: &ArrayView2<'_, f64>, labels: &[u8]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.ncols() != OUTPUT_DIM {
        return Err(Error::Shape(format!(
            "expected {OUTPUT_DIM} logits per row, got {}",
            logits.ncols()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("labels must be 0 or 1, found {bad}")));
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of the true class under the row softmax.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[u8]) -> Result<f64> {
    check_labels(&logits, labels)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let row = row.to_vec();
            log_sum_exp(&row) - row[y as usize]
        })
        .sum();
    Ok((total / labels.len() as f64).max(0.0))
}

/// `λ/2 · mean(ŷ²)` over every entry. Accepts any logit width.
pub fn sd_penalty_eq1(logits: ArrayView2<'_, f64>, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "spectral decoupling lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let total: f64 = logits.rows().into_iter().map(|row| sample_penalty(row, lambda, 0.0)).sum();
    Ok(total / logits.nrows() as f64)
}

/// `λ/2 · mean_c (ŷ_c − γ)²` for one sample.
fn sample_penalty(row: ArrayView1<'_, f64>, lambda: f64, gamma: f64) -> f64 {
    let mean_sq = row.iter().map(|v| (v - gamma).powi(2)).sum::<f64>() / row.len() as f64;
    0.5 * lambda * mean_sq
}

/// Per-sample `λ_y/2 · mean_c (ŷ_c − γ_y)²` with `(λ_y, γ_y)` chosen by the
/// sample's label, averaged over the batch.
pub fn sd_penalty_eq2(logits: ArrayView2<'_, f64>, labels: &[u8], cfg: &SdConfig) -> Result<f64> {
    check_labels(&logits, labels)?;
    let params = eq2_params(cfg)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let (lambda, gamma) = params[y as usize];
            sample_penalty(row, lambda, gamma)
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `[(λ_neg, γ_neg), (λ_pos, γ_pos)]`, indexed by label.
fn eq2_params(cfg: &SdConfig) -> Result<[(f64, f64); 2]> {
    cfg.validate()?;
    match *cfg {
        SdConfig::Eq2 {
            lambda_neg,
            gamma_neg,
            lambda_pos,
            gamma_pos,
        } => Ok([(lambda_neg, gamma_neg), (lambda_pos, gamma_pos)]),
        _ => Err(Error::Config("sd_penalty_eq2 requires an eq2 configuration".into())),
    }
}

/// Penalty for any configuration (`Off` gives 0).
pub fn sd_penalty(logits: ArrayView2<'_, f64>, labels: &[u8], cfg: &SdConfig) -> Result<f64> {
    match *cfg {
        SdConfig::Off => Ok(0.0),
        SdConfig::Eq1 { lambda } => sd_penalty_eq1(logits, lambda),
        SdConfig::Eq2 { .. } => sd_penalty_eq2(logits, labels, cfg),
    }
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.as_slice().expect("owned rows are contiguous"));
        row.mapv_inplace(|v| (v - lse).exp());
    }
    out
}

/// Probability of class 1 for each row of two-logit output.
pub fn positive_probability(logits: ArrayView2<'_, f64>) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let d = r[0] - r[1];
            if d >= 0.0 {
                let e = (-d).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + d.exp())
            }
        })
        .collect()
}

pub fn predict_proba(model: &Model, batch: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    Ok(positive_probability(model.forward(batch)?.view()))
}

/// Total objective `CE + SD penalty` and its exact gradient with respect to
/// every model parameter. The gradient is returned in a [`Model`] of the same
/// shape.
pub fn loss_and_grad(
    model: &Model,
    batch: ArrayView2<'_, f64>,
    labels: &[u8],
    sd: &SdConfig,
) -> Result<(f64, Model)> {
    let cache = model.forward_cached(batch)?;
    let logits = &cache.logits;
    check_labels(&logits.view(), labels)?;
    let n = labels.len() as f64;

    let loss = cross_entropy(logits.view(), labels)? + sd_penalty(logits.view(), labels, sd)?;

    // dL/dz for the cross-entropy term.
    let mut g = softmax(logits.view());
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        row[y as usize] -= 1.0;
    }
    g /= n;

    match *sd {
        SdConfig::Off => {}
        SdConfig::Eq1 { lambda } => {
            let k = lambda / (n * OUTPUT_DIM as f64);
            g.scaled_add(k, logits);
        }
        SdConfig::Eq2 { .. } => {
            let params = eq2_params(sd)?;
            for ((mut grow, zrow), &y) in g.rows_mut().into_iter().zip(logits.rows()).zip(labels) {
                let (lambda, gamma) = params[y as usize];
                let k = lambda / (n * OUTPUT_DIM as f64);
                for (gv, zv) in grow.iter_mut().zip(zrow.iter()) {
                    *gv += k * (zv - gamma);
                }
            }
        }
    }

    let mut grads = model.zeros_like();
    let upstream = match (&cache.hidden_act, &cache.hidden_pre) {
        (Some(act), Some(pre)) => {
            let out = grads.output_mut();
            out.weight = act.t().dot(&g);
            out.bias = column_sums(&g);
            let mut d_pre = g.dot(&model.output_layer().weight.t());
            d_pre.zip_mut_with(pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            d_pre
        }
        _ => {
            let out = grads.output_mut();
            out.weight = batch.t().dot(&g);
            out.bias = column_sums(&g);
            return Ok((loss, grads));
        }
    };
    let hidden = grads.hidden_mut().expect("hidden layer present");
    hidden.weight = batch.t().dot(&upstream);
    hidden.bias = upstream.sum_axis(Axis(0));
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cross_entropy_examples() {
        let z = Array2::zeros((3, 2));
        assert!(close(cross_entropy(z.view(), &[0, 1, 1]).unwrap(), 2f64.ln(), 1e-15));
        let sat = array![[20.0, -20.0]];
        assert!(cross_entropy(sat.view(), &[0]).unwrap() < 1e-15);
    }

    #[test]
    fn cross_entropy_matches_softplus_form() {
        // -log softmax_y = ln(1 + exp(z_other - z_y))
        let z: Array2<f64> = array![[0.3, -1.2], [2.0, 2.5], [-0.7, 4.1]];
        let y = [1u8, 0, 1];
        let want: f64 = z
            .rows()
            .into_iter()
            .zip(&y)
            .map(|(r, &l)| f64::ln_1p((r[1 - l as usize] - r[l as usize]).exp()))
            .sum::<f64>()
            / 3.0;
        assert!(close(cross_entropy(z.view(), &y).unwrap(), want, 1e-14));
    }

    #[test]
    fn eq1_examples() {
        let z = array![[2.0, -1.0]];
        assert_eq!(sd_penalty_eq1(z.view(), 0.0).unwrap(), 0.0);
        assert!(close(sd_penalty_eq1(z.view(), 0.01).unwrap(), 0.0125, 1e-15));
        let dup = array![[2.0, -1.0], [2.0, -1.0]];
        assert_eq!(
            sd_penalty_eq1(dup.view(), 0.01).unwrap(),
            sd_penalty_eq1(z.view(), 0.01).unwrap()
        );
        assert!(sd_penalty_eq1(z.view(), -1.0).is_err());
        let wide = Array2::from_elem((512, 1), 1.0);
        assert!(close(sd_penalty_eq1(wide.view(), 0.1).unwrap(), 0.05, 1e-15));
    }

    #[test]
    fn eq2_examples() {
        let cfg = SdConfig::TUNED_EQ2_CUTOUT;
        let at_target = array![[2.61, 2.61]];
        assert_eq!(sd_penalty_eq2(at_target.view(), &[1], &cfg).unwrap(), 0.0);
        let neg = array![[0.0, 0.0]];
        let want = 0.0969 / 2.0 * 1.83 * 1.83;
        assert!(close(sd_penalty_eq2(neg.view(), &[0], &cfg).unwrap(), want, 1e-15));
        assert!((want - 0.16226).abs() < 1e-5);
        assert!(sd_penalty_eq2(neg.view(), &[2], &cfg).is_err());
        assert!(sd_penalty_eq2(neg.view(), &[0], &SdConfig::eq1(0.1)).is_err());
    }

    #[test]
    fn eq2_degenerates_to_eq1() {
        let z = array![[0.4, -3.0], [1.5, 2.2], [-0.1, 0.0]];
        let a = sd_penalty_eq2(z.view(), &[0, 1, 0], &SdConfig::eq2(0.3, 0.0, 0.3, 0.0)).unwrap();
        let b = sd_penalty_eq1(z.view(), 0.3).unwrap();
        assert!(close(a, b, 1e-16));
    }

    #[test]
    fn probabilities() {
        let z = array![[0.0, 0.0], [-10.0, 10.0], [1.0, -2.0]];
        let p = positive_probability(z.view());
        assert_eq!(p[0], 0.5);
        assert!(p[1] > 1.0 - 1e-8);
        let s = softmax(z.view());
        for (pi, si) in p.iter().zip(s.column(1)) {
            assert!(close(*pi, *si, 1e-15));
        }
        assert!(close(p[2], 1.0 / (1.0 + 3f64.exp()), 1e-15));
    }

    fn finite_difference_check(model: &Model, x: &Array2<f64>, y: &[u8], sd: &SdConfig) {
        let (_, grads) = loss_and_grad(model, x.view(), y, sd).unwrap();
        let analytic = grads.flat_params();
        let base = model.flat_params();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] += h;
            m.set_flat_params(&p).unwrap();
            let up = loss_and_grad(&m, x.view(), y, sd).unwrap().0;
            p[i] -= 2.0 * h;
            m.set_flat_params(&p).unwrap();
            let down = loss_and_grad(&m, x.view(), y, sd).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-4);
            assert!(
                (analytic[i] - numeric).abs() / denom < 1e-5,
                "param {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 4 + j) as f64 * 0.71).sin() * 2.0);
        let y = [0u8, 1, 1, 0, 1, 0, 0];
        for sd in [
            SdConfig::Off,
            SdConfig::eq1(0.3),
            SdConfig::eq2(0.2, -1.0, 0.05, 2.0),
        ] {
            finite_difference_check(&Model::linear(4, 3).unwrap(), &x, &y, &sd);
            finite_difference_check(&Model::mlp(4, 5, 3).unwrap(), &x, &y, &sd);
        }
    }

    #[test]
    fn zero_lambda_matches_plain_cross_entropy() {
        let m = Model::mlp(3, 4, 11).unwrap();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let (l0, g0) = loss_and_grad(&m, x.view(), &[0, 1], &SdConfig::Off).unwrap();
        let (l1, g1) = loss_and_grad(&m, x.view(), &[0, 1], &SdConfig::eq1(0.0)).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
    }
}
