//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Runs under `cargo test` (optimized profile); the training-based criteria
//! take several minutes on a small CPU.

mod gradcheck;
mod seghelp;
mod util;

use pulmo_core::augment::balance_augment;
use pulmo_core::image::{Class, Dataset, GrayImage, Sample};
use pulmo_core::metrics::{
    auc, average_roc, classification_metrics, make_fold_plan, roc_curve,
    segmentation_metrics_from_counts, ConfusionMatrix,
};
use pulmo_core::rng::SplitMix64;

#[test]
fn acceptance_1_metric_oracle_exact() {
    // ChexNet whole-image row: 18/700 TB missed, 105/3500 normals flagged.
    let whole = classification_metrics(&ConfusionMatrix::new(682, 3395, 105, 18)).unwrap();
    assert!(
        (whole.accuracy - 0.9707).abs() < 1e-4,
        "whole-image accuracy {} vs 0.9707",
        whole.accuracy
    );
    // DenseNet201 segmented row: 4/700 TB missed, no normal misses.
    let segmented = classification_metrics(&ConfusionMatrix::new(696, 3500, 0, 4)).unwrap();
    assert!(
        (segmented.accuracy - 0.99905).abs() < 1e-4,
        "segmented accuracy {} vs 0.99905",
        segmented.accuracy
    );
    println!(
        "ACCEPTANCE 1 PASS: metric oracle exact ({:.4} / {:.5})",
        whole.accuracy, segmented.accuracy
    );
}

#[test]
fn acceptance_2_split_engine_exact() {
    // 704 segmentation images: 451 train / 112 validation / 141 test per fold.
    let seg = make_fold_plan(&[704], 5, 0).unwrap();
    let mut counts_141 = 0;
    for fold in &seg.folds {
        let c = &fold.per_class[0];
        if c.test.len() == 141 {
            assert_eq!((c.train.len(), c.validation.len()), (451, 112));
            counts_141 += 1;
        }
    }
    assert_eq!(counts_141, 4, "four of five folds carry the 451/112/141 split");

    // classification: 3500 normal -> 2240/560/700; 700 tb -> 448/112/140.
    let cls = make_fold_plan(&[3500, 700], 5, 9).unwrap();
    for fold in &cls.folds {
        let normal = &fold.per_class[0];
        assert_eq!(
            (normal.train.len(), normal.validation.len(), normal.test.len()),
            (2240, 560, 700)
        );
        let tb = &fold.per_class[1];
        assert_eq!((tb.train.len(), tb.validation.len(), tb.test.len()), (448, 112, 140));
    }

    // balance_augment with 4 copies maps the 448 TB training images to 2240.
    let image = GrayImage::from_reals(8, 8, vec![0.5; 64]).unwrap();
    let mut samples = Vec::new();
    for i in 0..448 {
        let mut s = Sample::new(format!("tb_{i:04}"), image.clone());
        s.label = Some(Class::Tb);
        samples.push(s);
    }
    let balanced = balance_augment(&Dataset { samples }, Class::Tb, 4, 1).unwrap();
    assert_eq!(balanced.class_indices(Class::Tb).len(), 2240);

    println!("ACCEPTANCE 2 PASS: split engine reproduces 451/112/141, 2240/560/700, 448/112/140, 448->2240");
}

#[test]
fn acceptance_3_gradient_suite() {
    let reports = gradcheck::run_all();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0f64, f64::max);
    for r in &reports {
        assert!(r.max_rel_err < gradcheck::TOL, "{}: {:.3e}", r.op, r.max_rel_err);
    }
    println!(
        "ACCEPTANCE 3 PASS: {} ops gradient-checked, worst relative error {:.2e} < 1e-4",
        reports.len(),
        worst
    );
}

#[test]
fn acceptance_4_segmentation_learning() {
    let report = seghelp::run_segmentation_experiment();
    assert!(
        report.unet_dice >= 0.90,
        "original U-Net mean test dice {:.4} < 0.90",
        report.unet_dice
    );
    assert!(
        report.modified_dice >= report.unet_dice - 0.05,
        "modified U-Net dice {:.4} more than 0.05 below original {:.4}",
        report.modified_dice,
        report.unet_dice
    );
    println!(
        "ACCEPTANCE 4 PASS: segmentation learning (unet dice {:.4}, modified {:.4})",
        report.unet_dice, report.modified_dice
    );
}

#[test]
fn acceptance_5_segmentation_helps_property() {
    let outcomes = seghelp::run_segmentation_helps(&[11, 22, 33]);
    let mut held = 0usize;
    for o in &outcomes {
        println!(
            "  seed {}: whole acc {:.3}, segmented acc {:.3}, loc whole {:.3}, loc segmented {:.3}",
            o.seed, o.whole_accuracy, o.segmented_accuracy, o.whole_localization, o.segmented_localization
        );
        if o.segmented_accuracy >= 0.90
            && o.whole_accuracy <= 0.70
            && o.segmented_localization >= o.whole_localization + 0.15
        {
            held += 1;
        }
    }
    assert!(
        held >= 2,
        "segmentation-helps property held for only {held} of 3 seeds: {outcomes:?}"
    );
    println!("ACCEPTANCE 5 PASS: segmentation-helps property held for {held}/3 seeds");
}

#[test]
fn acceptance_6_score_cam_reference() {
    let worst = seghelp::score_cam_reference_check();
    assert!(worst < 1e-5, "score_cam deviates from reference by {worst:.2e}");
    println!("ACCEPTANCE 6 PASS: score_cam matches step-by-step reference within {worst:.2e}");
}

#[test]
fn acceptance_7_auc_oracle() {
    let mut rng = SplitMix64::new(777);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 4 + rng.below(47);
        let quantized = rng.next_f64() < 0.5;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantized {
                    rng.below(5) as f64 / 4.0
                } else {
                    rng.next_f64()
                }
            })
            .collect();
        let mut truths: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        truths[0] = true;
        truths[1 % n] = false;

        let curve = roc_curve(&scores, &truths).unwrap();
        let got = auc(&curve);

        // Mann-Whitney pair statistic
        let mut pairs = 0usize;
        let mut stat = 0.0f64;
        for i in 0..n {
            if !truths[i] {
                continue;
            }
            for j in 0..n {
                if truths[j] {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    stat += 1.0;
                } else if scores[i] == scores[j] {
                    stat += 0.5;
                }
            }
        }
        let want = stat / pairs as f64;
        worst = worst.max((got - want).abs());

        let avg = average_roc(std::slice::from_ref(&curve)).unwrap();
        assert!(
            (auc(&avg) - got).abs() < 0.01,
            "single-curve averaging moved AUC by {}",
            (auc(&avg) - got).abs()
        );
    }
    assert!(worst < 1e-9, "AUC vs Mann-Whitney deviation {worst:.2e}");
    println!("ACCEPTANCE 7 PASS: AUC equals pair statistic within {worst:.1e} on 200 instances");
}

#[test]
fn acceptance_8_bit_exact_roundtrips() {
    util::roundtrip_checks();
    util::full_pipeline_reproducibility();
    println!("ACCEPTANCE 8 PASS: PGM/checkpoint/dataset round trips and full pipeline rerun are byte-identical");
}

#[test]
fn acceptance_9_algebraic_identities() {
    let mut rng = SplitMix64::new(99);
    for _ in 0..1000 {
        let cm = ConfusionMatrix::new(rng.below(200), rng.below(200), rng.below(200), rng.below(200));
        if cm.total() == 0 {
            continue;
        }
        let report = segmentation_metrics_from_counts(&cm).unwrap();
        let (iou, dice) = (report.iou.unwrap(), report.dice.unwrap());
        assert!(
            (dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-9,
            "dice {dice} vs 2iou/(1+iou) at {cm:?}"
        );
        let f1_pos = report.per_class[1].1.f1;
        assert!((f1_pos - dice).abs() < 1e-9, "f1 {f1_pos} vs dice {dice} at {cm:?}");
    }
    println!("ACCEPTANCE 9 PASS: Dice-IoU and F1-Dice identities exact on 1000 random counts");
}
