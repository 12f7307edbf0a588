//! Two-alternative forced choice (2AFC) similarity judgments.
//!
//! Given a reference and two options, the model picks the option whose
//! embedding has the higher cosine similarity with the reference. Alignment
//! is the fraction of trials where that pick agrees with a human's.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::cosine_similarity;
use crate::stats::proportion_se;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAfcTrial {
    pub reference: Vec<f32>,
    pub option0: Vec<f32>,
    pub option1: Vec<f32>,
    pub human_choice: Option<u8>,
}

impl TwoAfcTrial {
    pub fn new(reference: Vec<f32>, option0: Vec<f32>, option1: Vec<f32>) -> Self {
        Self {
            reference,
            option0,
            option1,
            human_choice: None,
        }
    }

    pub fn with_human_choice(mut self, choice: u8) -> Self {
        self.human_choice = Some(choice);
        self
    }

    fn validate(&self) -> Result<()> {
        let d = self.reference.len();
        for v in [&self.option0, &self.option1] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
        }
        let all = self.reference.iter().chain(&self.option0).chain(&self.option1);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::Invariant("trial has a non-finite component".into()));
        }
        if let Some(c) = self.human_choice {
            if c > 1 {
                return Err(Error::Invariant(format!("human choice {c} is not 0 or 1")));
            }
        }
        Ok(())
    }
}

/// Picks the option more similar to the reference; ties pick option 0.
pub fn two_afc_judge(trial: &TwoAfcTrial) -> Result<u8> {
    trial.validate()?;
    let sim = |v: &[f32], what: &str| {
        cosine_similarity(&trial.reference, v).ok_or_else(|| Error::ZeroNormInput(what.into()))
    };
    let s0 = sim(&trial.option0, "reference or option0")?;
    let s1 = sim(&trial.option1, "reference or option1")?;
    Ok(if s1 > s0 { 1 } else { 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub trials: u64,
    pub matches: u64,
    pub alignment: f64,
    /// Standard error of the alignment proportion.
    pub se: f64,
}

/// Fraction of trials where the judged choice equals the human choice.
pub fn two_afc_alignment(trials: &[TwoAfcTrial]) -> Result<AlignmentReport> {
    if trials.is_empty() {
        return Err(Error::InvalidParam("no trials".into()));
    }
    let mut matches = 0u64;
    for (i, t) in trials.iter().enumerate() {
        let human = t
            .human_choice
            .ok_or_else(|| Error::Invariant(format!("trial {i} has no human choice")))?;
        if two_afc_judge(t)? == human {
            matches += 1;
        }
    }
    Ok(alignment_report(matches, trials.len() as u64))
}

/// Builds a report from raw counts.
pub fn alignment_report(matches: u64, trials: u64) -> AlignmentReport {
    let alignment = matches as f64 / trials as f64;
    AlignmentReport {
        trials,
        matches,
        alignment,
        se: proportion_se(alignment, trials).unwrap_or(0.0),
    }
}

/// How a trial manifest names an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingRef {
    /// Record id in an accompanying store.
    Id(u64),
    /// Path to a file holding the embedding.
    Path(String),
    Inline(Vec<f32>),
}

/// One line of a JSON-lines trial manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub reference: EmbeddingRef,
    pub option0: EmbeddingRef,
    pub option1: EmbeddingRef,
    pub human_choice: Option<u8>,
}

pub fn parse_trial_manifest(reader: impl BufRead) -> Result<Vec<TrialSpec>> {
    let mut specs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("trial manifest line {}: {e}", lineno + 1)))?;
        specs.push(spec);
    }
    Ok(specs)
}

/// Resolves every reference of every trial through `embed`.
pub fn resolve_trials<F>(specs: &[TrialSpec], mut embed: F) -> Result<Vec<TwoAfcTrial>>
where
    F: FnMut(&EmbeddingRef) -> Result<Vec<f32>>,
{
    specs
        .iter()
        .map(|s| {
            Ok(TwoAfcTrial {
                reference: embed(&s.reference)?,
                option0: embed(&s.option0)?,
                option1: embed(&s.option1)?,
                human_choice: s.human_choice,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_option_wins() {
        let t = TwoAfcTrial::new(vec![0.3, 0.4], vec![0.3, 0.4], vec![0.4, 0.3]);
        assert_eq!(two_afc_judge(&t).unwrap(), 0);
    }

    #[test]
    fn hand_cosines() {
        let t = TwoAfcTrial::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![0.8, 0.6]);
        assert_eq!(two_afc_judge(&t).unwrap(), 1);
    }

    #[test]
    fn tie_picks_option0() {
        let t = TwoAfcTrial::new(vec![1.0, 2.0], vec![2.0, 1.0], vec![2.0, 1.0]);
        assert_eq!(two_afc_judge(&t).unwrap(), 0);
    }

    #[test]
    fn judge_errors() {
        let t = TwoAfcTrial::new(vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!(matches!(two_afc_judge(&t).unwrap_err(), Error::ZeroNormInput(_)));
        let t = TwoAfcTrial::new(vec![1.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!(two_afc_judge(&t).is_err());
        let t = TwoAfcTrial::new(vec![1.0], vec![1.0], vec![0.5]).with_human_choice(2);
        assert!(two_afc_judge(&t).is_err());
    }

    #[test]
    fn alignment_extremes() {
        let agree = TwoAfcTrial::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![0.8, 0.6]).with_human_choice(1);
        let disagree = agree.clone().with_human_choice(0);
        let r = two_afc_alignment(&vec![agree; 5]).unwrap();
        assert_eq!(r.alignment, 1.0);
        let r = two_afc_alignment(&vec![disagree; 5]).unwrap();
        assert_eq!(r.alignment, 0.0);
        let missing = TwoAfcTrial::new(vec![1.0], vec![1.0], vec![1.0]);
        assert!(two_afc_alignment(&[missing]).is_err());
    }

    #[test]
    fn reported_counts() {
        // 1433 / 1720 rounds to the 0.8331 alignment reported for the real-data model
        let r = alignment_report(1433, 1720);
        assert!((r.alignment - 0.8331).abs() < 5e-5);
        assert!((r.se - 0.0090).abs() < 1e-4);
    }

    #[test]
    fn manifest_parsing() {
        let text = r#"{"reference": 3, "option0": "a.vmem", "option1": [0.5, 0.5], "human_choice": 1}

{"reference": 1, "option0": 2, "option1": 3, "human_choice": 0}
"#;
        let specs = parse_trial_manifest(text.as_bytes()).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].reference, EmbeddingRef::Id(3));
        assert_eq!(specs[0].option0, EmbeddingRef::Path("a.vmem".into()));
        assert_eq!(specs[0].option1, EmbeddingRef::Inline(vec![0.5, 0.5]));
        let bad = parse_trial_manifest("{oops}\n".as_bytes()).unwrap_err();
        assert!(matches!(bad, Error::Format(_)));
    }
}
