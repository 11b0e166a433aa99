use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;

use spectral_decoupling::image::Image;
use spectral_decoupling::metrics::{
    accuracy, auroc, balanced_accuracy, binarize, bootstrap_ci, delong_test, roc_curve, Alternative, ScoredPredictions,
};
use spectral_decoupling::perturb::{box_blur, laplace_variance, sharpen_blend, PerturbationSweep, SweepKind};
use spectral_decoupling::specnet::{sd_penalty_eq1, sd_penalty_eq2, SdConfig};
use spectral_decoupling::stain::{
    estimate_stain_matrix, modify_intensity_with, recombine_od, rgb_to_od, separate_od, recombine, ConcentrationMap,
    StainMatrix, DEFAULT_ALPHA, DEFAULT_BETA,
};
use spectral_decoupling::synthgen::{make_cutout_dataset, CutoutSpec, SyntheticImageSpec};
use spectral_decoupling::tiler::plan_grid;

fn logits_and_labels() -> impl Strategy<Value = (Array2<f64>, Vec<u8>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-20.0f64..20.0, n * 2),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(move |(z, y)| (Array2::from_shape_vec((n, 2), z).unwrap(), y))
    })
}

/// Scores with both classes present; `distinct` forces tie-free scores.
fn scored(distinct: bool) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (4usize..60).prop_flat_map(move |n| {
        let scores = if distinct {
            Just((0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>())
                .prop_shuffle()
                .boxed()
        } else {
            prop::collection::vec((0u32..6).prop_map(|v| v as f64 / 5.0), n).boxed()
        };
        let labels = prop::collection::vec(0u8..2, n).prop_map(|mut l| {
            l[0] = 0;
            l[1] = 1;
            l
        });
        (scores, labels)
    })
}

fn gray_image(max_side: usize) -> impl Strategy<Value = Image> {
    (3usize..max_side, 3usize..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| Image::from_vec(w, h, 1, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eq2_with_shared_lambda_and_zero_gamma_is_eq1((z, y) in logits_and_labels(), lambda in 0.0f64..10.0) {
        let a = sd_penalty_eq1(z.view(), lambda).unwrap();
        let b = sd_penalty_eq2(z.view(), &y, &SdConfig::eq2(lambda, 0.0, lambda, 0.0)).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn eq1_penalty_grows_with_lambda((z, _) in logits_and_labels(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sd_penalty_eq1(z.view(), lo).unwrap() <= sd_penalty_eq1(z.view(), hi).unwrap());
    }

    #[test]
    fn auroc_ignores_increasing_transforms((s, y) in scored(false), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let base = auroc(&ScoredPredictions::new(s.clone(), y.clone()).unwrap()).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| scale * v + shift).collect();
        let exp: Vec<f64> = s.iter().map(|v| (3.0 * v).exp()).collect();
        for t in [affine, exp] {
            prop_assert_eq!(auroc(&ScoredPredictions::new(t, y.clone()).unwrap()).unwrap(), base);
        }
    }

    #[test]
    fn auroc_complement_and_trapezoid((s, y) in scored(true)) {
        let sp = ScoredPredictions::new(s.clone(), y.clone()).unwrap();
        let a = auroc(&sp).unwrap();
        let flipped = auroc(&ScoredPredictions::new(s.iter().map(|v| -v).collect(), y).unwrap()).unwrap();
        assert_relative_eq!(a + flipped, 1.0, epsilon = 1e-12);
        let curve = roc_curve(&sp).unwrap();
        prop_assert!((curve.area() - a).abs() <= 1e-12);
        prop_assert_eq!((curve.fpr[0], curve.tpr[0]), (0.0, 0.0));
        prop_assert_eq!((*curve.fpr.last().unwrap(), *curve.tpr.last().unwrap()), (1.0, 1.0));
        prop_assert!(curve.fpr.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn delong_is_antisymmetric((s, y) in scored(false), noise in prop::collection::vec(-0.3f64..0.3, 60)) {
        let a = ScoredPredictions::new(s.clone(), y.clone()).unwrap();
        let b = ScoredPredictions::new(s.iter().zip(&noise).map(|(v, e)| v + e).collect(), y).unwrap();
        if let (Ok(ab), Ok(ba)) = (delong_test(&a, &b, Alternative::AGreater), delong_test(&b, &a, Alternative::AGreater)) {
            prop_assert_eq!(ab.z, -ba.z);
        }
    }

    #[test]
    fn balanced_accuracy_is_accuracy_on_balanced_data(half in 1usize..40, scores in prop::collection::vec(0.0f64..1.0, 80)) {
        let labels: Vec<u8> = (0..2 * half).map(|i| (i % 2) as u8).collect();
        let pred = binarize(&scores[..2 * half], 0.5);
        assert_relative_eq!(
            balanced_accuracy(&pred, &labels).unwrap(),
            accuracy(&pred, &labels).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn transforms_keep_shape_and_are_pure(img in gray_image(24), n in 2usize..21, alpha in 0.0f64..=1.0) {
        for (kind, level) in [(SweepKind::Blur, n as f64), (SweepKind::Sharpen, alpha)] {
            let sweep = PerturbationSweep::standard(kind);
            let once = sweep.apply(&img, level).unwrap();
            prop_assert!(once.same_shape(&img));
            prop_assert_eq!(once, sweep.apply(&img, level).unwrap());
        }
    }

    #[test]
    fn blur_preserves_mean_with_constant_border(
        inner in gray_image(16),
        n in 2usize..8,
        border in 0.0f64..1.0,
    ) {
        let pad = n + 1;
        let (w, h) = (inner.width() + 2 * pad, inner.height() + 2 * pad);
        let img = Image::from_fn(w, h, 1, |x, y, _| {
            if (pad..pad + inner.width()).contains(&x) && (pad..pad + inner.height()).contains(&y) {
                inner.get(x - pad, y - pad, 0)
            } else {
                border
            }
        });
        prop_assert!((box_blur(&img, n).unwrap().mean() - img.mean()).abs() <= 1e-6);
    }

    #[test]
    fn blur_lowers_laplace_variance(img in gray_image(20), n in 2usize..21) {
        prop_assume!(img.data().iter().any(|&v| v != img.data()[0]));
        prop_assert!(laplace_variance(&box_blur(&img, n).unwrap()) < laplace_variance(&img));
    }

    #[test]
    fn full_sharpen_does_not_lower_sharpness(img in gray_image(20)) {
        // natural-statistics stand-in: smooth mid-range content
        let smooth = box_blur(&img.map(|v| 0.35 + 0.3 * v), 3).unwrap();
        prop_assert!(laplace_variance(&sharpen_blend(&smooth, 1.0).unwrap()) >= laplace_variance(&smooth));
    }

    #[test]
    fn separate_inverts_recombine(
        values in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 16),
        spread in -4.0f64..4.0,
    ) {
        let stains = StainMatrix::standard().spread(spread).unwrap();
        let conc = ConcentrationMap::new(4, 4, values.iter().map(|&(h, e)| [h, e]).collect()).unwrap();
        let back = separate_od(&recombine_od(&stains, &conc), &stains).unwrap();
        for (a, b) in conc.values.iter().zip(&back.values) {
            for k in 0..2 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1e-12));
            }
        }
    }

    #[test]
    fn estimated_stains_are_unit_and_nonnegative(seed in any::<u64>(), spread in -4.0f64..4.0) {
        use rand::Rng;
        let mut r = spectral_decoupling::rng::seeded(seed);
        let truth = StainMatrix::standard().spread(spread).unwrap();
        let values = (0..24 * 24).map(|_| [r.random_range(0.0..1.2), r.random_range(0.0..0.8)]).collect();
        let img = recombine(&truth, &ConcentrationMap::new(24, 24, values).unwrap());
        let est = estimate_stain_matrix(&rgb_to_od(&img).unwrap(), DEFAULT_BETA, DEFAULT_ALPHA).unwrap();
        for v in [est.h(), est.e()] {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn lowering_a_multiplier_never_darkens(
        values in prop::collection::vec((0.0f64..1.5, 0.0f64..1.0), 16),
        hi in 0.0f64..=1.0,
        frac in 0.0f64..=1.0,
        which in 0usize..2,
    ) {
        let stains = StainMatrix::standard();
        let img = recombine(&stains, &ConcentrationMap::new(4, 4, values.iter().map(|&(h, e)| [h, e]).collect()).unwrap());
        let lo = hi * frac;
        let (a, b) = if which == 0 {
            (modify_intensity_with(&img, &stains, hi, 1.0).unwrap(), modify_intensity_with(&img, &stains, lo, 1.0).unwrap())
        } else {
            (modify_intensity_with(&img, &stains, 1.0, hi).unwrap(), modify_intensity_with(&img, &stains, 1.0, lo).unwrap())
        };
        let column = if which == 0 { stains.h() } else { stains.e() };
        for (pa, pb) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)) {
            for ch in 0..3 {
                if column[ch] > 0.0 {
                    prop_assert!(pb[ch] >= pa[ch] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn tiles_cover_minimally(tile in 4usize..150, wm in 1.0f64..5.0, hm in 1.0f64..5.0, overlap in 0.0f64..0.9) {
        let (w, h) = ((tile as f64 * wm) as usize, (tile as f64 * hm) as usize);
        let g = plan_grid(w, h, tile, overlap).unwrap();
        prop_assert!(g.stride >= 1);
        for (axis, dim) in [(&g.xs, w), (&g.ys, h)] {
            prop_assert_eq!(axis[0], 0);
            prop_assert_eq!(*axis.last().unwrap() + tile, dim);
            prop_assert!(axis.iter().all(|&o| o + tile <= dim));
            let gaps: Vec<usize> = axis.windows(2).map(|p| p[1] - p[0]).collect();
            if let Some((_, head)) = gaps.split_last() {
                prop_assert!(head.iter().all(|&d| d == g.stride));
            }
            prop_assert!(gaps.iter().all(|&d| d <= g.stride && d > 0));
            // one tile fewer could not reach the far edge at this stride
            prop_assert!(axis.len() == 1 || (axis.len() - 2) * g.stride + tile < dim);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cutout_counts_are_stratified(half in 10usize..60, seed in any::<u64>(), neg in 0.0f64..=1.0, pos in 0.0f64..=1.0) {
        let cut = CutoutSpec { train_rate_neg: neg, train_rate_pos: pos, ..CutoutSpec::desk() };
        let n = 2 * half;
        let data = make_cutout_dataset(&SyntheticImageSpec::default(), &cut, n, 20, seed).unwrap();
        for (label, rate) in [(0u8, neg), (1u8, pos)] {
            let realized = data.train_meta.iter().filter(|m| m.label == label && m.has_cutouts).count();
            prop_assert_eq!(realized, (rate * half as f64).round() as usize);
        }
        let again = make_cutout_dataset(&SyntheticImageSpec::default(), &cut, n, 20, seed).unwrap();
        prop_assert!(again.train == data.train && again.test == data.test && again.val == data.val);
    }

    #[test]
    fn bootstrap_interval_contains_the_estimate((s, y) in scored(false), seed in any::<u64>()) {
        let sp = ScoredPredictions::new(s, y).unwrap();
        let point = auroc(&sp).unwrap();
        let (lo, hi) = bootstrap_ci(&sp, auroc, 200, 0.95, seed).unwrap();
        prop_assert!(lo <= point && point <= hi, "{lo} <= {point} <= {hi}");
    }
}
