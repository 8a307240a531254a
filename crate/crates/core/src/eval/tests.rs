use proptest::prelude::*;

use super::*;
use crate::dataset::{Frame, Sequence};
use crate::fcn::{build_fcn, FcnConfig};
use crate::params::ParamSet;
use crate::recurrent::{build_head, CellKind, RnnConfig};
use crate::tensor::{Dims, Tensor4};

fn labels(h: usize, w: usize, data: Vec<u8>) -> LabelMap {
    LabelMap::new(1, h, w, data).unwrap()
}

#[test]
fn perfect_prediction_is_diagonal() {
    let t = labels(10, 10, (0..100).map(|i| (i % 4) as u8).collect());
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&t, &t).unwrap();
    assert_eq!(cm.total(), 100);
    assert_eq!((0..4).map(|i| cm.get(i, i)).sum::<u64>(), 100);
    assert_eq!(cm.pixel_accuracy().unwrap(), 1.0);
}

#[test]
fn constant_wrong_prediction() {
    let t = LabelMap::filled(1, 6, 7, 0);
    let p = LabelMap::filled(1, 6, 7, 1);
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&t, &p).unwrap();
    assert_eq!(cm.get(0, 1), 42);
    assert_eq!(cm.total(), 42);
    assert_eq!(cm.per_class_accuracy(), vec![Some(0.0), None, None]);
}

#[test]
fn two_class_hand_example() {
    let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
    assert_eq!(cm.pixel_accuracy().unwrap(), 0.75);
    assert_eq!(cm.per_class_accuracy(), vec![Some(0.75), Some(0.75)]);
    assert_eq!(
        cm.row_normalized(),
        vec![Some(vec![0.75, 0.25]), Some(vec![0.25, 0.75])]
    );
}

#[test]
fn empty_matrix_has_no_accuracy() {
    assert!(ConfusionMatrix::new(4).pixel_accuracy().is_err());
    let all_ignored = LabelMap::filled(1, 2, 2, IGNORE_LABEL);
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&all_ignored, &LabelMap::filled(1, 2, 2, 0)).unwrap();
    assert_eq!(cm.total(), 0);
}

#[test]
fn accumulate_rejects_bad_input() {
    let mut cm = ConfusionMatrix::new(2);
    let a = LabelMap::filled(1, 2, 2, 0);
    assert!(matches!(cm.accumulate(&a, &LabelMap::filled(1, 2, 3, 0)), Err(Error::Contract(_))));
    assert!(matches!(cm.accumulate(&a, &LabelMap::filled(1, 2, 2, IGNORE_LABEL)), Err(Error::Contract(_))));
    assert!(matches!(cm.accumulate(&LabelMap::filled(1, 2, 2, 5), &a), Err(Error::Data(_))));
}

#[test]
fn paper_anchor_formatting() {
    assert_eq!(format_percent(0.650), "65.0%");
    assert_eq!(format_percent(0.749), "74.9%");
    assert_eq!(format_percent(0.805), "80.5%");
}

proptest! {
    #[test]
    fn matches_scalar_recount(pairs in prop::collection::vec((0u8..5, 0u8..4), 1..200)) {
        // truth value 4 stands for an ignored pixel
        let t: Vec<u8> = pairs.iter().map(|p| if p.0 == 4 { IGNORE_LABEL } else { p.0 }).collect();
        let p: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let n = pairs.len();
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&labels(1, n, t.clone()), &labels(1, n, p.clone())).unwrap();
        for i in 0..4u8 {
            for j in 0..4u8 {
                let count = t.iter().zip(&p).filter(|&(&a, &b)| a == i && b == j).count() as u64;
                prop_assert_eq!(cm.get(i as usize, j as usize), count);
            }
        }
        prop_assert_eq!(cm.total() as usize, t.iter().filter(|&&v| v != IGNORE_LABEL).count());
        if let Ok(acc) = cm.pixel_accuracy() {
            prop_assert!((0.0..=1.0).contains(&acc));
        }
        for row in cm.row_normalized().into_iter().flatten() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulation_is_order_independent(
        frames in prop::collection::vec(prop::collection::vec((0u8..3, 0u8..3), 12), 1..8),
        seed in any::<u64>(),
    ) {
        let maps: Vec<(LabelMap, LabelMap)> = frames
            .iter()
            .map(|f| (
                labels(3, 4, f.iter().map(|p| p.0).collect()),
                labels(3, 4, f.iter().map(|p| p.1).collect()),
            ))
            .collect();
        let mut order: Vec<usize> = (0..maps.len()).collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut a = ConfusionMatrix::new(3);
        let mut b = ConfusionMatrix::new(3);
        for (t, p) in &maps {
            a.accumulate(t, p).unwrap();
        }
        for &i in &order {
            b.accumulate(&maps[i].0, &maps[i].1).unwrap();
        }
        prop_assert_eq!(a, b);
    }
}

fn tiny_config() -> FcnConfig {
    let mut c = FcnConfig::desk(4);
    c.input_height = 16;
    c.input_width = 16;
    c
}

fn image(seed: usize) -> Tensor4 {
    Tensor4::from_fn(Dims::new(1, 3, 16, 16), |_, c, y, x| {
        ((seed * 7 + c * 3 + y * 5 + x) as f64 * 0.37).sin() * 0.5 + 0.5
    })
}

fn dataset(seqs: usize, frames: usize) -> Dataset {
    let sequences = (0..seqs)
        .map(|s| Sequence {
            id: s,
            frames: (0..frames)
                .map(|f| Frame {
                    image: image(s * 100 + f),
                    // 40% class 0: rows 0..6 of 16 are 37.5%, so use pixel index
                    labels: labels(16, 16, (0..256).map(|i| if i * 5 < 256 * 2 { 0 } else { 1 + (i % 3) as u8 }).collect()),
                })
                .collect(),
        })
        .collect();
    Dataset::new(4, sequences).unwrap()
}

#[test]
fn constant_model_scores_class_share() {
    let mut fcn = build_fcn(&tiny_config(), 1).unwrap();
    fcn.visit_mut(&mut |name, _, d, _| {
        if name.contains("head") {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
    });
    fcn.low_head.bias.as_mut().unwrap()[0] = 5.0;
    let model = SegModel::new(fcn, None).unwrap();
    let data = dataset(2, 3);
    let r = evaluate_model(&model, &data).unwrap();
    let zeros = (0..256).filter(|i| i * 5 < 512).count() as f64 / 256.0;
    assert!((zeros - 0.4).abs() < 0.01);
    assert!((r.accuracy - zeros).abs() < 1e-12, "{} vs {zeros}", r.accuracy);
    assert_eq!(r.variant, Variant::Fcn);
}

#[test]
fn fcn_evaluation_ignores_frame_order() {
    let model = SegModel::new(build_fcn(&tiny_config(), 2).unwrap(), None).unwrap();
    let data = dataset(2, 4);
    let mut shuffled = data.clone();
    for s in shuffled.sequences.iter_mut() {
        s.frames.reverse();
        s.frames.swap(0, 1);
    }
    assert_eq!(
        evaluate_model(&model, &data).unwrap().confusion,
        evaluate_model(&model, &shuffled).unwrap().confusion
    );
}

#[test]
fn evaluation_is_deterministic_and_checks_classes() {
    let head = build_head(&RnnConfig::desk(CellKind::Convlstm, 4), 4).unwrap();
    let model = SegModel::new(build_fcn(&tiny_config(), 3).unwrap(), Some(head)).unwrap();
    let data = dataset(3, 3);
    let a = evaluate_model(&model, &data).unwrap();
    assert_eq!(a, evaluate_model(&model, &data).unwrap());
    assert_eq!(a.variant, Variant::FcnConvlstm);
    assert_eq!(a.confusion.total(), 3 * 3 * 256);
    let mut other = data.clone();
    other.num_classes = 5;
    assert!(matches!(evaluate_model(&model, &other), Err(Error::Incompatible(_))));
}

fn names() -> Vec<String> {
    ["a", "b", "c"].map(String::from).to_vec()
}

fn result(v: Variant, counts: Vec<u64>) -> EvalResult {
    EvalResult::from_confusion(v, ConfusionMatrix::from_counts(3, counts).unwrap()).unwrap()
}

#[test]
fn single_variant_report_has_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = result(Variant::Fcn, vec![5, 1, 0, 2, 7, 1, 0, 0, 0]);
    let files = emit_report(&[r], &names(), dir.path()).unwrap();
    let mut got: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    got.sort();
    assert_eq!(got, ["confusion_fcn.csv", "confusion_fcn.svg", "summary.csv"]);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let results = vec![
        result(Variant::Fcn, vec![5, 1, 0, 2, 7, 1, 0, 0, 0]),
        result(Variant::FcnSimple, vec![6, 0, 0, 1, 9, 0, 0, 3, 1]),
        result(Variant::FcnConvlstm, vec![3, 3, 1, 2, 8, 1, 1, 1, 7]),
    ];
    let files = emit_report(&results, &names(), dir.path()).unwrap();
    assert_eq!(files.len(), 1 + 2 * 3 + 1);
    let rows = read_summary_csv(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(rows, results.iter().map(summary_row).collect::<Vec<_>>());
    assert_eq!(rows[0].recalls[2], None);
    for r in &results {
        let m = read_confusion_csv(&dir.path().join(format!("confusion_{}.csv", r.variant.slug()))).unwrap();
        assert_eq!(m, r.confusion.row_normalized());
    }
}

#[test]
fn svg_cells_encode_row_normalized_values() {
    let dir = tempfile::tempdir().unwrap();
    let r = result(Variant::FcnConvlstm, vec![3, 3, 1, 2, 8, 1, 0, 0, 0]);
    emit_report(std::slice::from_ref(&r), &names(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("confusion_fcn_convlstm.svg")).unwrap();
    let cells = svg_cells(&text);
    assert_eq!(cells.len(), 9);
    let norm = r.confusion.row_normalized();
    for (i, j, v, opacity) in cells {
        match &norm[i] {
            Some(row) => {
                // hand-computed oracle for the first row: 3/7, 3/7, 1/7
                if i == 0 {
                    assert_eq!(v, Some([3.0, 3.0, 1.0][j] / 7.0));
                }
                assert_eq!(v, Some(row[j]));
                assert_eq!(opacity, Some(row[j]));
            }
            None => assert_eq!((v, opacity), (None, None)),
        }
    }
    assert!(text.contains(&format_percent(r.accuracy)));
}
