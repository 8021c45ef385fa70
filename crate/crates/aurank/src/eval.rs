//! Evaluation: the competition metric (0.5 x unweighted-mean F1 + 0.5 x
//! pooled accuracy), per-AU confusion counts, Kendall tau-b for ordering
//! quality, and rank-based AUROC for occlusion detection.

use serde::{Deserialize, Serialize};

use crate::data::io::LabelTable;
use crate::data::Label;
use crate::error::{Error, Result};

/// Per-AU confusion counts over valid-label frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 = 2TP / (2TP + FP + FN). The 0/0 case (no positives anywhere) is
    /// scored 1 when the AU was predicted perfectly negative on at least one
    /// frame, 0 when nothing was evaluated; `zero_division` records that the
    /// convention fired.
    pub fn f1(&self) -> (f64, bool) {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom > 0 {
            (2.0 * self.tp as f64 / denom as f64, false)
        } else if self.tn > 0 {
            (1.0, true)
        } else {
            (0.0, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuScore {
    pub name: String,
    pub counts: ConfusionCounts,
    pub f1: f64,
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_au: Vec<AuScore>,
    /// Unweighted mean of per-AU F1.
    pub average_f1: f64,
    /// Correct frame-AU decisions pooled over all AUs.
    pub total_accuracy: f64,
    /// Mean of per-AU accuracies; reported for transparency, not part of the
    /// competition metric.
    pub mean_per_au_accuracy: f64,
    pub competition_metric: f64,
    pub evaluated_frame_aus: u64,
    pub skipped_frame_aus: u64,
}

impl MetricReport {
    /// Human-readable table at Table-1 precision (3 decimals).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "AU", "F1", "TP", "FP", "FN", "TN"));
        for au in &self.per_au {
            out.push_str(&format!(
                "{:<10} {:>8.3} {:>8} {:>8} {:>8} {:>8}{}\n",
                au.name,
                au.f1,
                au.counts.tp,
                au.counts.fp,
                au.counts.fn_,
                au.counts.tn,
                if au.zero_division { "  (0/0 convention)" } else { "" },
            ));
        }
        out.push_str(&format!("average F1         {:>8.3}\n", self.average_f1));
        out.push_str(&format!("total accuracy     {:>8.3}\n", self.total_accuracy));
        out.push_str(&format!("competition metric {:>8.3}\n", self.competition_metric));
        out.push_str(&format!(
            "evaluated {} frame-AU decisions, skipped {}\n",
            self.evaluated_frame_aus, self.skipped_frame_aus
        ));
        out
    }
}

/// The competition metric: `0.5 * avg_f1 + 0.5 * total_accuracy`.
pub fn competition_metric(avg_f1: f64, total_accuracy: f64) -> Result<f64> {
    for (name, v) in [("average F1", avg_f1), ("total accuracy", total_accuracy)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(0.5 * avg_f1 + 0.5 * total_accuracy)
}

fn occurrence_value(label: Label, role: &str, table: &str) -> Result<Option<bool>> {
    match label {
        Label::Invalid => Ok(None),
        Label::Value(0) => Ok(Some(false)),
        Label::Value(1) => Ok(Some(true)),
        Label::Value(v) => Err(Error::InvalidInput(format!(
            "{role} label {v} in {table} is not a 0/1 occurrence value"
        ))),
    }
}

/// Scores occurrence predictions against ground truth. Rows must align by
/// (video_id, frame_index); frames whose truth (or prediction) carries the
/// invalid marker are excluded per AU and counted as skipped.
pub fn score_occurrence(
    predictions: &LabelTable,
    ground_truth: &LabelTable,
    au_list: &[String],
) -> Result<MetricReport> {
    if predictions.rows.len() != ground_truth.rows.len() {
        return Err(Error::Alignment(format!(
            "{} prediction rows vs {} ground-truth rows",
            predictions.rows.len(),
            ground_truth.rows.len()
        )));
    }

    let mut pred_order: Vec<usize> = (0..predictions.rows.len()).collect();
    pred_order.sort_by(|&a, &b| {
        let (pa, pb) = (&predictions.rows[a], &predictions.rows[b]);
        (&pa.video_id, pa.frame_index).cmp(&(&pb.video_id, pb.frame_index))
    });
    let mut truth_order: Vec<usize> = (0..ground_truth.rows.len()).collect();
    truth_order.sort_by(|&a, &b| {
        let (ta, tb) = (&ground_truth.rows[a], &ground_truth.rows[b]);
        (&ta.video_id, ta.frame_index).cmp(&(&tb.video_id, tb.frame_index))
    });

    let au_columns: Vec<(usize, usize)> = au_list
        .iter()
        .map(|name| {
            let p = predictions
                .au_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Alignment(format!("predictions have no column {name}")))?;
            let t = ground_truth
                .au_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Alignment(format!("ground truth has no column {name}")))?;
            Ok((p, t))
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![ConfusionCounts::default(); au_list.len()];
    let mut skipped = 0u64;

    for (&pi, &ti) in pred_order.iter().zip(&truth_order) {
        let pred = &predictions.rows[pi];
        let truth = &ground_truth.rows[ti];
        if pred.video_id != truth.video_id || pred.frame_index != truth.frame_index {
            return Err(Error::Alignment(format!(
                "first mismatch: prediction {}/{} vs ground truth {}/{}",
                pred.video_id, pred.frame_index, truth.video_id, truth.frame_index
            )));
        }
        for (au, &(p_col, t_col)) in au_columns.iter().enumerate() {
            let truth_label = occurrence_value(truth.labels[t_col], "ground-truth", "truth")?;
            let pred_label = occurrence_value(pred.labels[p_col], "prediction", "predictions")?;
            match (pred_label, truth_label) {
                (Some(p), Some(t)) => {
                    let c = &mut counts[au];
                    match (p, t) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => c.tn += 1,
                    }
                }
                _ => skipped += 1,
            }
        }
    }

    let mut per_au = Vec::with_capacity(au_list.len());
    let mut f1_sum = 0.0;
    let mut acc_sum = 0.0;
    let (mut correct, mut evaluated) = (0u64, 0u64);
    for (name, c) in au_list.iter().zip(&counts) {
        let (f1, zero_division) = c.f1();
        f1_sum += f1;
        let n = c.evaluated();
        acc_sum += if n > 0 { (c.tp + c.tn) as f64 / n as f64 } else { 0.0 };
        correct += c.tp + c.tn;
        evaluated += n;
        per_au.push(AuScore {
            name: name.clone(),
            counts: *c,
            f1,
            zero_division,
        });
    }

    let average_f1 = f1_sum / au_list.len().max(1) as f64;
    let total_accuracy = if evaluated > 0 {
        correct as f64 / evaluated as f64
    } else {
        0.0
    };
    Ok(MetricReport {
        per_au,
        average_f1,
        total_accuracy,
        mean_per_au_accuracy: acc_sum / au_list.len().max(1) as f64,
        competition_metric: competition_metric(average_f1, total_accuracy)?,
        evaluated_frame_aus: evaluated,
        skipped_frame_aus: skipped,
    })
}

/// Kendall tau-b between two equal-length series:
/// `(P - Q) / sqrt((P + Q + Tx)(P + Q + Ty))` with pairs tied in both series
/// excluded from the tie terms.
pub fn kendall_tau(series_a: &[f64], series_b: &[f64]) -> Result<f64> {
    if series_a.len() != series_b.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            series_a.len(),
            series_b.len()
        )));
    }
    if series_a.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 observations".to_string()));
    }

    let n = series_a.len();
    let (mut concordant, mut discordant) = (0u64, 0u64);
    let (mut ties_a, mut ties_b) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let da = series_a[i] - series_a[j];
            let db = series_b[i] - series_b[j];
            if da == 0.0 && db == 0.0 {
                // tied in both: excluded from the correction terms
            } else if da == 0.0 {
                ties_a += 1;
            } else if db == 0.0 {
                ties_b += 1;
            } else if (da > 0.0) == (db > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }

    let denom =
        (((concordant + discordant + ties_a) as f64) * ((concordant + discordant + ties_b) as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "kendall tau undefined: a series is constant".to_string(),
        ));
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}

/// Rank-based (Mann-Whitney) AUROC of `sigma` as a detector of
/// `occluded_flags`, with tied scores receiving averaged ranks.
pub fn occlusion_auroc(sigma: &[f64], occluded_flags: &[bool]) -> Result<f64> {
    if sigma.len() != occluded_flags.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} flags",
            sigma.len(),
            occluded_flags.len()
        )));
    }
    let n_pos = occluded_flags.iter().filter(|&&f| f).count();
    let n_neg = occluded_flags.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".to_string(),
        ));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".to_string()));
    }

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]));

    // average ranks across tie groups, then sum positive ranks
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && sigma[order[j + 1]] == sigma[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // 1-based
        for &idx in &order[i..=j] {
            if occluded_flags[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::LabelRow;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn table(au_names: &[&str], rows: &[(&str, u32, &[i64])]) -> LabelTable {
        LabelTable {
            au_names: au_names.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|(video, frame, labels)| LabelRow {
                    video_id: video.to_string(),
                    frame_index: *frame,
                    labels: labels.iter().map(|&l| Label::from_raw(l).unwrap()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn competition_metric_reproduces_table_one() {
        // baseline and "Ours P1" rows at 3-decimal precision
        let baseline = competition_metric(0.40, 0.22).unwrap();
        assert!((baseline - 0.31).abs() < 1e-12);
        assert_eq!(format!("{baseline:.3}"), "0.310");

        let p1 = competition_metric(0.460, 0.839).unwrap();
        assert!((p1 - 0.6495).abs() < 1e-12);
        assert_eq!(format!("{p1:.3}"), "0.649");

        let p2 = competition_metric(0.482, 0.826).unwrap();
        assert_eq!(format!("{p2:.3}"), "0.654");

        assert_eq!(competition_metric(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn competition_metric_rejects_out_of_range() {
        assert!(competition_metric(-0.1, 0.5).is_err());
        assert!(competition_metric(0.5, 1.1).is_err());
        assert!(competition_metric(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = table(&["AU1", "AU2"], &[("v", 0, &[1, 0]), ("v", 1, &[0, 1])]);
        let report = score_occurrence(&truth, &truth, &["AU1".into(), "AU2".into()]).unwrap();
        assert_eq!(report.average_f1, 1.0);
        assert_eq!(report.total_accuracy, 1.0);
        assert_eq!(report.competition_metric, 1.0);
    }

    #[test]
    fn average_f1_is_unweighted() {
        // AU1: TP=1 FP=2 FN=1 -> F1 = 2/(2+3) = 0.4
        // AU2: TP=3 FP=2 FN=2 -> F1 = 6/(6+4) = 0.6
        let truth = table(
            &["AU1", "AU2"],
            &[
                ("v", 0, &[1, 1]),
                ("v", 1, &[1, 1]),
                ("v", 2, &[0, 1]),
                ("v", 3, &[0, 1]),
                ("v", 4, &[0, 1]),
                ("v", 5, &[0, 0]),
                ("v", 6, &[0, 0]),
            ],
        );
        let pred = table(
            &["AU1", "AU2"],
            &[
                ("v", 0, &[1, 1]),
                ("v", 1, &[0, 1]),
                ("v", 2, &[1, 1]),
                ("v", 3, &[0, 0]),
                ("v", 4, &[0, 0]),
                ("v", 5, &[1, 1]),
                ("v", 6, &[0, 1]),
            ],
        );
        let report = score_occurrence(&pred, &truth, &["AU1".into(), "AU2".into()]).unwrap();
        let au1 = &report.per_au[0];
        let au2 = &report.per_au[1];
        assert!((au1.f1 - 0.4).abs() < 1e-12, "AU1 F1 {}", au1.f1);
        assert!((au2.f1 - 0.6).abs() < 1e-12, "AU2 F1 {}", au2.f1);
        assert!((report.average_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_tallied_confusion_counts() {
        let truth = table(&["AU1"], &[("v", 0, &[1]), ("v", 1, &[0]), ("v", 2, &[0]), ("v", 3, &[0])]);
        let pred = table(&["AU1"], &[("v", 0, &[1]), ("v", 1, &[0]), ("v", 2, &[1]), ("v", 3, &[0])]);
        let report = score_occurrence(&pred, &truth, &["AU1".into()]).unwrap();
        let c = report.per_au[0].counts;
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 0, 2));
        assert!((report.per_au[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.total_accuracy - 0.75).abs() < 1e-12);
        assert!((report.competition_metric - 17.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_truth_frames_are_skipped() {
        let truth = table(&["AU1"], &[("v", 0, &[1]), ("v", 1, &[-1]), ("v", 2, &[0])]);
        let pred = table(&["AU1"], &[("v", 0, &[1]), ("v", 1, &[1]), ("v", 2, &[0])]);
        let report = score_occurrence(&pred, &truth, &["AU1".into()]).unwrap();
        assert_eq!(report.evaluated_frame_aus, 2);
        assert_eq!(report.skipped_frame_aus, 1);
        assert_eq!(report.total_accuracy, 1.0);
    }

    #[test]
    fn misaligned_rows_report_first_mismatch() {
        let truth = table(&["AU1"], &[("v", 0, &[1]), ("v", 1, &[0])]);
        let pred = table(&["AU1"], &[("v", 0, &[1]), ("v", 2, &[0])]);
        let err = score_occurrence(&pred, &truth, &["AU1".into()]).unwrap_err();
        match err {
            Error::Alignment(msg) => assert!(msg.contains("v/2") && msg.contains("v/1"), "{msg}"),
            other => panic!("expected alignment error, got {other}"),
        }
    }

    #[test]
    fn intensity_valued_labels_are_rejected_by_occurrence_scoring() {
        let truth = table(&["AU1"], &[("v", 0, &[3])]);
        let pred = table(&["AU1"], &[("v", 0, &[1])]);
        assert!(matches!(
            score_occurrence(&pred, &truth, &["AU1".into()]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn shuffling_rows_does_not_change_scores() {
        let truth = table(
            &["AU1"],
            &[("a", 0, &[1]), ("a", 1, &[0]), ("b", 0, &[1]), ("b", 1, &[1])],
        );
        let pred = table(
            &["AU1"],
            &[("b", 1, &[0]), ("a", 0, &[1]), ("b", 0, &[1]), ("a", 1, &[0])],
        );
        let in_order = table(
            &["AU1"],
            &[("a", 0, &[1]), ("a", 1, &[0]), ("b", 0, &[1]), ("b", 1, &[0])],
        );
        let a = score_occurrence(&pred, &truth, &["AU1".into()]).unwrap();
        let b = score_occurrence(&in_order, &truth, &["AU1".into()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_negative_au_hits_zero_division_convention() {
        let truth = table(&["AU1"], &[("v", 0, &[0]), ("v", 1, &[0])]);
        let report = score_occurrence(&truth, &truth, &["AU1".into()]).unwrap();
        assert_eq!(report.per_au[0].f1, 1.0);
        assert!(report.per_au[0].zero_division);
    }

    #[test]
    fn kendall_identical_orderings() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn kendall_reversed_orderings() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn kendall_single_swap() {
        // 5 concordant, 1 discordant out of 6 pairs
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 3.0, 2.0, 4.0];
        let tau = kendall_tau(&a, &b).unwrap();
        assert!((tau - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_errors() {
        assert!(matches!(kendall_tau(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(matches!(
            kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    /// Independent oracle: classify every pair from scratch.
    fn tau_b_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
        let n = a.len();
        let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let sa = (a[i] - a[j]).signum();
                let sb = (b[i] - b[j]).signum();
                match (sa as i8, sb as i8) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    (x, y) if x == y => p += 1,
                    _ => q += 1,
                }
            }
        }
        let d = (((p + q + tx) as f64) * ((p + q + ty) as f64)).sqrt();
        (d != 0.0).then(|| (p - q) as f64 / d)
    }

    #[test]
    fn auroc_separated_classes_is_one() {
        let sigma = [0.9, 1.1, 0.2, 0.3];
        let flags = [true, true, false, false];
        assert_eq!(occlusion_auroc(&sigma, &flags).unwrap(), 1.0);
    }

    #[test]
    fn auroc_flag_inversion_is_complementary() {
        let sigma = [0.9, 0.4, 0.6, 0.3, 0.85];
        let flags = [true, false, true, false, false];
        let inverted: Vec<bool> = flags.iter().map(|f| !f).collect();
        let a = occlusion_auroc(&sigma, &flags).unwrap();
        let b = occlusion_auroc(&sigma, &inverted).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_independent_scores_hover_near_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 4000;
        let sigma: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let flags: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.4).collect();
        let auroc = occlusion_auroc(&sigma, &flags).unwrap();
        assert!((auroc - 0.5).abs() < 0.05, "auroc {auroc}");
    }

    #[test]
    fn auroc_ties_get_average_ranks() {
        // all scores tied: AUROC is exactly 0.5
        let sigma = [1.0, 1.0, 1.0, 1.0];
        let flags = [true, false, true, false];
        assert_eq!(occlusion_auroc(&sigma, &flags).unwrap(), 0.5);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(
            occlusion_auroc(&[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    proptest! {
        // tau-b agrees with the pair-classification oracle
        #[test]
        fn kendall_matches_brute_force(
            (a, b) in (2usize..12).prop_flat_map(|n| (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )),
        ) {
            match (kendall_tau(&a, &b), tau_b_oracle(&a, &b)) {
                (Ok(tau), Some(oracle)) => prop_assert!((tau - oracle).abs() < 1e-12),
                (Err(Error::UndefinedMetric(_)), None) => {}
                (got, want) => {
                    return Err(TestCaseError::fail(format!("{got:?} vs oracle {want:?}")));
                }
            }
        }

        #[test]
        fn f1_and_accuracy_stay_in_unit_interval(
            tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50,
        ) {
            let c = ConfusionCounts { tp, fp, fn_, tn };
            let (f1, _) = c.f1();
            prop_assert!((0.0..=1.0).contains(&f1));
        }
    }
}
