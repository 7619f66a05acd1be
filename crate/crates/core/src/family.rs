//! Pseudo language family selection.
//!
//! Candidates are sorted best-first. The first gap `|L[1] - L[0]|` sets the
//! radius; walking down the list, a candidate is admitted while the gap to
//! its predecessor does not exceed the current radius. A strictly smaller gap
//! becomes the new radius, an equal gap halves it, a larger gap stops the
//! walk.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::LangPairId;
use crate::error::{Error, Result};
use crate::model::SectionId;
use crate::similarity::{Method, SimilarityMatrix};

/// Absolute tolerance for the equal-gap case.
pub const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair: LangPairId,
    pub score: f64,
}

/// Which positions seed the auxiliary list before the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Positions 0 and 1.
    #[default]
    FirstTwo,
    /// Position 0 only; position 1 still defines the initial gap.
    FirstOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Gap shrank: admitted, radius set to the gap.
    Add,
    /// Gap equal to the radius: admitted, radius halved.
    AddHalve,
    /// Gap grew: walk ends.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStep {
    pub i: usize,
    pub d: f64,
    pub gap_before: f64,
    pub gap_after: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoFamily {
    pub target: LangPairId,
    /// In selection order.
    pub auxiliaries: Vec<Candidate>,
    pub initial_gap: f64,
    pub gap_trace: Vec<GapStep>,
    /// The sorted candidate list the selection ran on.
    pub scores: Vec<Candidate>,
}

/// Every pair except `target`, best first (descending for Overlap,
/// ascending for MSE/KL), ties broken by pair code.
pub fn sort_candidates(matrix: &SimilarityMatrix, target: &LangPairId) -> Result<Vec<Candidate>> {
    if matrix.pairs.len() < 2 {
        return Err(Error::Invalid("similarity matrix needs at least two pairs".into()));
    }
    let row = matrix
        .index_of(target)
        .ok_or_else(|| Error::Invalid(format!("target {target} is not in the matrix")))?;
    let mut out: Vec<Candidate> = matrix
        .pairs
        .iter()
        .zip(&matrix.scores[row])
        .filter(|(p, _)| *p != target)
        .map(|(p, &score)| Candidate { pair: p.clone(), score })
        .collect();
    let higher = matrix.method.higher_is_closer();
    out.sort_by(|a, b| {
        let by_score = if higher {
            b.score.total_cmp(&a.score)
        } else {
            a.score.total_cmp(&b.score)
        };
        match by_score {
            Ordering::Equal => a.pair.to_string().cmp(&b.pair.to_string()),
            o => o,
        }
    });
    Ok(out)
}

pub fn select_pseudo_family(sorted: &[Candidate], target: &LangPairId, rule: InitRule) -> Result<PseudoFamily> {
    if sorted.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least two candidates, got {}",
            sorted.len()
        )));
    }
    if sorted.iter().any(|c| &c.pair == target) {
        return Err(Error::Invalid(format!("target {target} listed as its own candidate")));
    }
    let initial_gap = (sorted[1].score - sorted[0].score).abs();
    let mut gap = initial_gap;
    let mut auxiliaries = vec![sorted[0].clone()];
    if rule == InitRule::FirstTwo {
        auxiliaries.push(sorted[1].clone());
    }
    let mut gap_trace = Vec::new();
    for i in 2..sorted.len() {
        let d = (sorted[i - 1].score - sorted[i].score).abs();
        let before = gap;
        let decision = if (d - gap).abs() <= GAP_TOLERANCE {
            gap /= 2.0;
            Decision::AddHalve
        } else if d < gap {
            gap = d;
            Decision::Add
        } else {
            Decision::Stop
        };
        gap_trace.push(GapStep {
            i,
            d,
            gap_before: before,
            gap_after: gap,
            decision,
        });
        if decision == Decision::Stop {
            break;
        }
        auxiliaries.push(sorted[i].clone());
    }
    Ok(PseudoFamily {
        target: target.clone(),
        auxiliaries,
        initial_gap,
        gap_trace,
        scores: sorted.to_vec(),
    })
}

/// The persisted selection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub target: LangPairId,
    pub method: Method,
    pub k: Option<f64>,
    pub sections: String,
    pub init_rule: InitRule,
    pub auxiliaries: Vec<Candidate>,
    pub initial_gap: f64,
    pub gap_trace: Vec<GapStep>,
}

impl FamilyRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("family record serializes");
        s.push('\n');
        s
    }
}

/// Sorts the target's row of `matrix` and runs the selection.
pub fn family_for(
    matrix: &SimilarityMatrix,
    target: &LangPairId,
    rule: InitRule,
) -> Result<(PseudoFamily, FamilyRecord)> {
    let sorted = sort_candidates(matrix, target)?;
    let fam = select_pseudo_family(&sorted, target, rule)?;
    let record = FamilyRecord {
        target: target.clone(),
        method: matrix.method,
        k: matrix.k_fraction,
        sections: SectionId::filter_label(&matrix.sections),
        init_rule: rule,
        auxiliaries: fam.auxiliaries.clone(),
        initial_gap: fam.initial_gap,
        gap_trace: fam.gap_trace.clone(),
    };
    Ok((fam, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(s: &str) -> LangPairId {
        format!("{s}-en").parse().unwrap()
    }

    fn list(scores: &[f64]) -> Vec<Candidate> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Candidate {
                pair: pid(&format!("l{i}")),
                score,
            })
            .collect()
    }

    fn chosen(f: &PseudoFamily) -> Vec<String> {
        f.auxiliaries.iter().map(|c| c.pair.source().to_string()).collect()
    }

    fn matrix(method: Method, row: &[(&str, f64)]) -> SimilarityMatrix {
        let mut pairs = vec![pid("a")];
        pairs.extend(row.iter().map(|(p, _)| pid(p)));
        let n = pairs.len();
        let mut scores = vec![vec![method.identity(); n]; n];
        for (j, (_, s)) in row.iter().enumerate() {
            scores[0][j + 1] = *s;
        }
        SimilarityMatrix {
            method,
            pairs,
            scores,
            k_fraction: None,
            sections: SectionId::FFN.to_vec(),
            model_hash: String::new(),
        }
    }

    #[test]
    fn equal_gap_halves_then_stops() {
        let f = select_pseudo_family(&list(&[0.9, 0.85, 0.80, 0.60]), &pid("t"), InitRule::FirstTwo).unwrap();
        assert_eq!(chosen(&f), vec!["l0", "l1", "l2"]);
        assert_eq!(f.gap_trace[0].decision, Decision::AddHalve);
        assert!((f.gap_trace[0].gap_after - 0.025).abs() < 1e-12);
        assert_eq!(f.gap_trace[1].decision, Decision::Stop);
    }

    #[test]
    fn two_candidates_are_both_taken() {
        let f = select_pseudo_family(&list(&[0.9, 0.8]), &pid("t"), InitRule::FirstTwo).unwrap();
        assert_eq!(chosen(&f), vec!["l0", "l1"]);
        assert!(f.gap_trace.is_empty());
    }

    #[test]
    fn widening_gap_stops_immediately() {
        let f = select_pseudo_family(&list(&[0.9, 0.8, 0.3]), &pid("t"), InitRule::FirstTwo).unwrap();
        assert_eq!(chosen(&f), vec!["l0", "l1"]);
    }

    #[test]
    fn shrinking_gaps_keep_adding() {
        let f = select_pseudo_family(&list(&[1.0, 0.6, 0.4, 0.3, 0.25, 0.0]), &pid("t"), InitRule::FirstTwo).unwrap();
        assert_eq!(chosen(&f), vec!["l0", "l1", "l2", "l3", "l4"]);
        let gaps: Vec<f64> = f.gap_trace.iter().map(|s| s.gap_after).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn first_only_rule_skips_position_one() {
        let f = select_pseudo_family(&list(&[0.9, 0.85, 0.80, 0.60]), &pid("t"), InitRule::FirstOnly).unwrap();
        assert_eq!(chosen(&f), vec!["l0", "l2"]);
    }

    #[test]
    fn selection_errors() {
        assert!(select_pseudo_family(&list(&[0.9]), &pid("t"), InitRule::FirstTwo).is_err());
        assert!(select_pseudo_family(&list(&[0.9, 0.8]), &pid("l1"), InitRule::FirstTwo).is_err());
    }

    #[test]
    fn sorting_follows_method_direction() {
        let m = matrix(Method::Overlap, &[("b", 0.9), ("c", 0.5), ("d", 0.7)]);
        let s: Vec<_> = sort_candidates(&m, &pid("a"))
            .unwrap()
            .into_iter()
            .map(|c| c.pair.source().to_string())
            .collect();
        assert_eq!(s, vec!["b", "d", "c"]);

        let m = matrix(Method::Mse, &[("b", 4.0), ("c", 0.1)]);
        let s: Vec<_> = sort_candidates(&m, &pid("a"))
            .unwrap()
            .into_iter()
            .map(|c| c.pair.source().to_string())
            .collect();
        assert_eq!(s, vec!["c", "b"]);

        let m = matrix(Method::Overlap, &[("c", 0.5), ("b", 0.5)]);
        let s: Vec<_> = sort_candidates(&m, &pid("a"))
            .unwrap()
            .into_iter()
            .map(|c| c.pair.source().to_string())
            .collect();
        assert_eq!(s, vec!["b", "c"]);
    }

    #[test]
    fn sorting_errors() {
        let m = matrix(Method::Kl, &[("b", 1.0)]);
        assert!(sort_candidates(&m, &pid("zz")).is_err());
        let mut tiny = m.clone();
        tiny.pairs.truncate(1);
        tiny.scores = vec![vec![0.0]];
        assert!(sort_candidates(&tiny, &pid("a")).is_err());
    }

    #[test]
    fn record_serializes_trace() {
        let m = matrix(Method::Overlap, &[("b", 0.9), ("c", 0.85), ("d", 0.8), ("e", 0.6)]);
        let (_, rec) = family_for(&m, &pid("a"), InitRule::FirstTwo).unwrap();
        let json = rec.to_json();
        assert!(json.contains("\"target\": \"a-en\""));
        assert!(json.contains("\"add_halve\""));
        let back: FamilyRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }

    proptest::proptest! {
        #[test]
        fn walk_invariants(mut scores in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            scores.sort_by(|a, b| b.total_cmp(a));
            let sorted = list(&scores);
            let f = select_pseudo_family(&sorted, &pid("t"), InitRule::FirstTwo).unwrap();
            proptest::prop_assert!(f.gap_trace.len() <= sorted.len() - 2);
            let mut prev = f.initial_gap;
            for s in &f.gap_trace {
                proptest::prop_assert!(s.gap_after <= prev);
                prev = s.gap_after;
            }
            proptest::prop_assert_eq!(&f.auxiliaries[..], &sorted[..f.auxiliaries.len()]);
            proptest::prop_assert_eq!(&f.auxiliaries[0], &sorted[0]);
        }
    }
}
