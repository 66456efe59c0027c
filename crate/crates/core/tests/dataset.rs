//! Fusion, label schemes, preset splits and k-fold on the corpus-shaped manifests.

use cxr_core::dataset::{fuse, kfold, preset, split, PRESET_NAMES};
use cxr_core::synthetic::fused_corpus_manifests;
use cxr_core::{Finding, LabelScheme, Manifest, Split};
use proptest::prelude::*;

fn corpus() -> Manifest {
    fuse(&fused_corpus_manifests()).unwrap()
}

#[test]
fn fused_corpus_class_totals() {
    let m = corpus();
    assert_eq!(m.len(), 1214);
    let by_finding = m.finding_counts();
    assert_eq!(by_finding[Finding::COVID19 as usize], 108);
    assert_eq!(by_finding[Finding::OtherPneumonia as usize], 515);
    assert_eq!(by_finding[Finding::Tuberculosis as usize], 58);
    assert_eq!(by_finding[Finding::Normal as usize], 533);
    assert_eq!(m.class_counts(LabelScheme::Binary), vec![1106, 108]);
    assert_eq!(m.class_counts(LabelScheme::Multi3), vec![533, 108, 573]);
    assert_eq!(m.class_counts(LabelScheme::Multi4), vec![533, 108, 515, 58]);
}

/// Hand-tallied per-split, per-class counts of every preset.
fn expected(name: &str) -> [Vec<usize>; 3] {
    match name {
        "table2-cb" | "table2-rb" => [vec![906, 88], vec![90, 9], vec![110, 11]],
        "table2-cm3" | "table2-rm3" => [vec![437, 88, 469], vec![44, 9, 46], vec![52, 11, 58]],
        _ => [vec![437, 88, 422, 47], vec![44, 9, 41, 5], vec![52, 11, 52, 6]],
    }
}

#[test]
fn preset_splits_reproduce_published_counts() {
    let m = corpus();
    for name in PRESET_NAMES {
        let p = preset(name).unwrap();
        let out = split(&m, p.scheme, &p.counts, 42).unwrap();
        let [train, val, test] = expected(name);
        assert_eq!(out.subset(Split::Train).class_counts(p.scheme), train, "{name}");
        assert_eq!(out.subset(Split::Val).class_counts(p.scheme), val, "{name}");
        assert_eq!(out.subset(Split::Test).class_counts(p.scheme), test, "{name}");
        assert!(out.subset(Split::Unassigned).is_empty());
        let totals = [train.iter().sum::<usize>(), val.iter().sum(), test.iter().sum()];
        assert_eq!(totals, [994, 99, 121]);
    }
}

#[test]
fn split_is_reproducible_and_survives_csv() {
    let m = corpus();
    let p = preset("table2-cm4").unwrap();
    let a = split(&m, p.scheme, &p.counts, 7).unwrap();
    let b = split(&m, p.scheme, &p.counts, 7).unwrap();
    let c = split(&m, p.scheme, &p.counts, 8).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    assert_ne!(a.to_csv_string(), c.to_csv_string());
    let back = Manifest::read_csv(a.to_csv_string().as_bytes()).unwrap();
    assert_eq!(back.records, a.records);
}

#[test]
fn split_rejects_wrong_totals() {
    let m = corpus();
    let p = preset("table2-cb").unwrap();
    assert!(split(&m, LabelScheme::Multi3, &p.counts, 0).is_err());
    let mut counts = p.counts.clone();
    counts[1].train += 1;
    assert!(split(&m, p.scheme, &counts, 0).is_err());
}

#[test]
fn kfold_on_training_split_is_stratified() {
    let m = corpus();
    let p = preset("table2-cb").unwrap();
    let train = split(&m, p.scheme, &p.counts, 1).unwrap().subset(Split::Train);
    assert_eq!(train.len(), 994);
    let labels = train.labels(p.scheme);
    let folds = kfold(&train, p.scheme, 5, 3).unwrap();
    let mut seen = vec![0usize; train.len()];
    for f in &folds {
        assert_eq!(f.train.len() + f.val.len(), 994);
        assert!((198..=199).contains(&f.val.len()), "{}", f.val.len());
        let pos = f.val.iter().filter(|&&i| labels[i] == 1).count();
        assert!((17..=18).contains(&pos), "88 positives over 5 folds, got {pos}");
        for &i in &f.val {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&n| n == 1));
}

proptest! {
    #[test]
    fn kfold_partitions_any_labelling(
        labels in prop::collection::vec(0usize..3, 12..80),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        let folds = cxr_core::dataset::kfold_labels(&labels, k, seed);
        let per_class: Vec<usize> = (0..3).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        prop_assume!(per_class.iter().all(|&n| n == 0 || n >= k));
        let folds = folds.unwrap();
        let mut seen = vec![0usize; labels.len()];
        for f in &folds {
            for &i in &f.val {
                seen[i] += 1;
            }
            for (c, &n) in per_class.iter().enumerate() {
                let got = f.val.iter().filter(|&&i| labels[i] == c).count();
                prop_assert!(got * k >= n.saturating_sub(k - 1) && got * k <= n + k);
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }
}
