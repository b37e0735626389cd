//! Subset-correctness evaluation.
//!
//! A prediction is correct iff it is a valid answer set and every predicted
//! option is in the label ("N" matches only "N"); unparseable responses
//! count as incorrect rather than being excluded. This deliberately differs
//! from the proportional reward: a strict-subset prediction is fully
//! correct here but earns only fractional reward during training.
//!
//! Per-dimension scores count a sample toward every defect dimension
//! present in its annotations, reusing the sample-level correctness
//! unchanged; dimensions with no qualifying samples are absent from the
//! result rather than zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{is_subset_of, AnswerSet};
use crate::env::{DefectDimension, SyntheticSample};
use crate::policy::{Policy, PolicyError, PolicyParams};
use crate::rewards::extract_answer_span;

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub sample_id: String,
    /// `None` when the response failed format extraction.
    pub predicted: Option<AnswerSet>,
    pub label: AnswerSet,
    pub correct: bool,
    /// Defect dimensions present in any option of the sample.
    pub dimensions: Vec<DefectDimension>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot score an empty judgment set")]
    Empty,
    #[error("sample {0} carries no label; evaluation needs the labeled test split")]
    MissingLabel(String),
    #[error("sample {0} carries no defect annotations")]
    MissingDefects(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("runs were evaluated on different test files (checksum {a} vs {b})")]
    ChecksumMismatch { a: String, b: String },
}

/// True iff the prediction is a valid answer set fully contained in the
/// label. Format failures (`None`) are incorrect.
pub fn judge_response(pred: Option<&AnswerSet>, label: &AnswerSet) -> bool {
    match pred {
        Some(pred) => is_subset_of(pred, label),
        None => false,
    }
}

/// Greedy-decodes every sample and judges the responses.
pub fn evaluate(
    policy: &dyn Policy,
    params: &PolicyParams,
    samples: &[SyntheticSample],
) -> Result<Vec<Judgment>, EvalError> {
    samples
        .iter()
        .map(|sample| {
            let label = *sample
                .label
                .as_ref()
                .ok_or_else(|| EvalError::MissingLabel(sample.id.clone()))?;
            let defects = sample
                .defects
                .as_ref()
                .ok_or_else(|| EvalError::MissingDefects(sample.id.clone()))?;
            let response = policy.greedy_response(params, &sample.obs)?;
            let predicted = extract_answer_span(&response.text).ok();
            Ok(Judgment {
                sample_id: sample.id.clone(),
                predicted,
                label,
                correct: judge_response(predicted.as_ref(), &label),
                dimensions: defects.dimensions_present(),
            })
        })
        .collect()
}

/// Overall score: 100 × fraction of correct judgments.
pub fn overall_score(judgments: &[Judgment]) -> Result<f64, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = judgments.iter().filter(|j| j.correct).count();
    Ok(100.0 * correct as f64 / judgments.len() as f64)
}

/// Per-dimension scores over the samples containing each dimension.
/// Dimensions with zero qualifying samples are absent from the map.
pub fn dimension_scores(judgments: &[Judgment]) -> BTreeMap<DefectDimension, f64> {
    let mut out = BTreeMap::new();
    for dim in DefectDimension::ALL {
        let qualifying: Vec<&Judgment> = judgments
            .iter()
            .filter(|j| j.dimensions.contains(&dim))
            .collect();
        if qualifying.is_empty() {
            continue;
        }
        let correct = qualifying.iter().filter(|j| j.correct).count();
        out.insert(dim, 100.0 * correct as f64 / qualifying.len() as f64);
    }
    out
}

/// Machine-readable evaluation summary, pinned to the exact test file by
/// checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_file_checksum: String,
    pub count: usize,
    pub overall: f64,
    pub dimension_scores: BTreeMap<DefectDimension, f64>,
}

impl EvalReport {
    pub fn from_judgments(judgments: &[Judgment], checksum: String) -> Result<Self, EvalError> {
        Ok(Self {
            test_file_checksum: checksum,
            count: judgments.len(),
            overall: overall_score(judgments)?,
            dimension_scores: dimension_scores(judgments),
        })
    }
}

/// Line-delimited judgment dump record.
#[derive(Debug, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub sample_id: String,
    pub predicted: Option<String>,
    pub label: String,
    pub correct: bool,
    pub dimensions: Vec<DefectDimension>,
}

impl From<&Judgment> for JudgmentRecord {
    fn from(j: &Judgment) -> Self {
        Self {
            sample_id: j.sample_id.clone(),
            predicted: j.predicted.map(|p| p.to_string()),
            label: j.label.to_string(),
            correct: j.correct,
            dimensions: j.dimensions.clone(),
        }
    }
}

/// Plain-text single-run report.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("Subset-correctness evaluation\n");
    out.push_str(&format!(
        "test file: checksum {} ({} samples)\n",
        report.test_file_checksum, report.count
    ));
    out.push_str(
        "dimension scores count each sample toward every defect dimension it contains;\n\
         correctness is the sample-level subset rule in all columns\n\n",
    );
    out.push_str(&format!(
        "{:<28}{:>10}\n",
        "Overall Score",
        format_score(report.overall)
    ));
    for (dim, score) in &report.dimension_scores {
        out.push_str(&format!(
            "{:<28}{:>10}\n",
            dim.display_name(),
            format_score(*score)
        ));
    }
    out
}

fn format_score(v: f64) -> String {
    format!("{v:.2}")
}

fn format_delta(b: f64, a: f64) -> String {
    format!("{:+.2}", b - a)
}

/// Side-by-side comparison of two runs evaluated on the same test file.
pub fn compare_report(
    name_a: &str,
    a: &EvalReport,
    name_b: &str,
    b: &EvalReport,
) -> Result<String, EvalError> {
    if a.test_file_checksum != b.test_file_checksum {
        return Err(EvalError::ChecksumMismatch {
            a: a.test_file_checksum.clone(),
            b: b.test_file_checksum.clone(),
        });
    }
    let mut out = String::new();
    out.push_str(&format!(
        "test file: checksum {} ({} samples)\n\n",
        a.test_file_checksum, a.count
    ));
    out.push_str(&format!(
        "{:<28}{:>12}{:>12}{:>10}\n",
        "metric", name_a, name_b, "delta"
    ));
    out.push_str(&format!(
        "{:<28}{:>12}{:>12}{:>10}\n",
        "Overall Score",
        format_score(a.overall),
        format_score(b.overall),
        format_delta(b.overall, a.overall)
    ));
    for dim in DefectDimension::ALL {
        let (sa, sb) = (a.dimension_scores.get(&dim), b.dimension_scores.get(&dim));
        if sa.is_none() && sb.is_none() {
            continue;
        }
        let cell = |s: Option<&f64>| s.map(|v| format_score(*v)).unwrap_or_else(|| "-".into());
        let delta = match (sa, sb) {
            (Some(x), Some(y)) => format_delta(*y, *x),
            _ => "-".into(),
        };
        out.push_str(&format!(
            "{:<28}{:>12}{:>12}{:>10}\n",
            dim.display_name(),
            cell(sa),
            cell(sb),
            delta
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answers::parse_answer_set;
    use crate::env::{generate_split, GenConfig, Split};
    use crate::policy::CategoricalPolicy;
    use crate::rewards::dpa_accuracy_reward;

    fn ans(s: &str) -> AnswerSet {
        parse_answer_set(s).unwrap()
    }

    #[test]
    fn subset_predictions_are_correct() {
        assert!(judge_response(Some(&ans("A")), &ans("AC")));
        assert!(!judge_response(Some(&ans("AB")), &ans("AC")));
        assert!(!judge_response(None, &ans("AC")));
        assert!(judge_response(Some(&ans("N")), &ans("N")));
        assert!(!judge_response(Some(&ans("N")), &ans("AC")));
    }

    #[test]
    fn every_label_judges_itself_correct() {
        for a in AnswerSet::all() {
            assert!(judge_response(Some(&a), &a));
        }
    }

    #[test]
    fn metric_and_reward_diverge_on_strict_subsets() {
        // The same prediction is fully correct for evaluation but earns
        // fractional training reward.
        let (pred, label) = (ans("A"), ans("AC"));
        assert!(judge_response(Some(&pred), &label));
        assert!((dpa_accuracy_reward(&pred, &label) - 0.5).abs() < 1e-12);
    }

    fn judgment(id: &str, correct: bool, dims: &[DefectDimension]) -> Judgment {
        Judgment {
            sample_id: id.into(),
            predicted: Some(ans("A")),
            label: ans("A"),
            correct,
            dimensions: dims.to_vec(),
        }
    }

    #[test]
    fn overall_score_is_percentage() {
        let js = vec![
            judgment("1", true, &[]),
            judgment("2", true, &[]),
            judgment("3", true, &[]),
            judgment("4", false, &[]),
        ];
        assert_eq!(overall_score(&js).unwrap(), 75.0);
        assert_eq!(overall_score(&js[..3]).unwrap(), 100.0);
        assert!(matches!(overall_score(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn dimension_scores_skip_empty_dimensions() {
        use DefectDimension::*;
        let js = vec![
            judgment("1", true, &[PlacementLayout]),
            judgment("2", false, &[AppearanceDeformation, PlacementLayout]),
        ];
        let scores = dimension_scores(&js);
        assert_eq!(scores.get(&PlacementLayout), Some(&50.0));
        assert_eq!(scores.get(&AppearanceDeformation), Some(&0.0));
        assert!(!scores.contains_key(&PhysicalShadow));
        assert!(!scores.contains_key(&ExtensionRationality));
    }

    #[test]
    fn dimension_counts_recombine_consistently() {
        // Independent recount: per dimension, tally qualifying and correct
        // judgments directly and compare with the reported ratio.
        let gc = GenConfig {
            defect_prob: 0.4,
            block_size: 2,
            noise_sigma: 0.2,
        };
        let policy = CategoricalPolicy::new(gc.feature_dim());
        let params = policy.init_params(0);
        let samples = generate_split(&gc, Split::Test, 64, 21);
        let judgments = evaluate(&policy, &params, &samples).unwrap();
        let scores = dimension_scores(&judgments);
        for dim in DefectDimension::ALL {
            let mut qualifying = 0usize;
            let mut correct = 0usize;
            for j in &judgments {
                let mut present = false;
                for d in &j.dimensions {
                    if *d == dim {
                        present = true;
                    }
                }
                if present {
                    qualifying += 1;
                    correct += j.correct as usize;
                }
            }
            match scores.get(&dim) {
                Some(score) => {
                    assert!(qualifying > 0);
                    assert!((score - 100.0 * correct as f64 / qualifying as f64).abs() < 1e-12);
                }
                None => assert_eq!(qualifying, 0),
            }
        }
    }

    #[test]
    fn evaluation_requires_annotations() {
        let gc = GenConfig {
            defect_prob: 0.3,
            block_size: 2,
            noise_sigma: 0.1,
        };
        let policy = CategoricalPolicy::new(gc.feature_dim());
        let params = policy.init_params(0);
        let explore = generate_split(&gc, Split::Explore, 2, 3);
        assert!(matches!(
            evaluate(&policy, &params, &explore),
            Err(EvalError::MissingLabel(_))
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let gc = GenConfig {
            defect_prob: 0.3,
            block_size: 2,
            noise_sigma: 0.1,
        };
        let policy = CategoricalPolicy::new(gc.feature_dim());
        let params = policy.init_params(0);
        let samples = generate_split(&gc, Split::Test, 16, 3);
        let a = evaluate(&policy, &params, &samples).unwrap();
        let b = evaluate(&policy, &params, &samples).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn comparison_requires_matching_checksums() {
        let report = |checksum: &str, overall: f64| EvalReport {
            test_file_checksum: checksum.into(),
            count: 200,
            overall,
            dimension_scores: BTreeMap::new(),
        };
        let a = report("aaaa", 50.0);
        let b = report("aaaa", 53.0);
        let table = compare_report("run_a", &a, "run_b", &b).unwrap();
        assert!(table.contains("+3.00"), "{table}");
        let same = compare_report("run_a", &a, "run_a", &a).unwrap();
        assert!(same.contains("+0.00"), "{same}");
        let mismatched = report("bbbb", 53.0);
        assert!(matches!(
            compare_report("a", &a, "b", &mismatched),
            Err(EvalError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn monotone_under_prediction_shrinkage() {
        // If pred1 ⊆ pred2 ⊆ label then both are correct.
        for label in AnswerSet::all() {
            for pred2 in AnswerSet::all() {
                if !is_subset_of(&pred2, &label) {
                    continue;
                }
                for pred1 in AnswerSet::all() {
                    if is_subset_of(&pred1, &pred2) {
                        assert!(judge_response(Some(&pred1), &label));
                        assert!(judge_response(Some(&pred2), &label));
                    }
                }
            }
        }
    }
}
