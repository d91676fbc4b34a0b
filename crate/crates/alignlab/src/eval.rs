//! Deterministic metrics (CER, ROUGE-L) and the evaluation harness.
//!
//! Metrics operate on token ids; the toy vocabulary maps one symbol per
//! token, so token-level CER coincides with character-level CER.

use crate::alignment::System;
use crate::corpus::{Task, TaskSample, Token, END_OF_TEXT};
use crate::error::{Error, Result};

/// Levenshtein distance with unit costs, over reference length, x100.
pub fn cer(hypothesis: &[Token], reference: &[Token]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("CER against an empty reference".into()));
    }
    let dist = levenshtein(hypothesis, reference);
    Ok(100.0 * dist as f64 / reference.len() as f64)
}

fn levenshtein(a: &[Token], b: &[Token]) -> usize {
    let n = b.len();
    let mut prev: Vec<usize> = (0..=n).collect();
    let mut cur = vec![0usize; n + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

/// LCS-based F1 (beta = 1), x100.
pub fn rouge_l(hypothesis: &[Token], reference: &[Token]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("ROUGE-L against an empty reference".into()));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_len(hypothesis, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / hypothesis.len() as f64;
    let r = l as f64 / reference.len() as f64;
    Ok(100.0 * 2.0 * p * r / (p + r))
}

fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let n = b.len();
    let mut prev = vec![0usize; n + 1];
    let mut cur = vec![0usize; n + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
        cur[0] = 0;
    }
    prev[n]
}

/// One evaluation result row.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub variant: String,
    pub mix: String,
    pub k: Option<usize>,
    pub dim: Option<usize>,
    pub cer: f64,
    pub rouge_l: f64,
    pub n: usize,
    pub fail: usize,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tmix\tk\tdim\tcer\trouge_l\tn\tfail\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{}\t{}\n",
                r.variant,
                r.mix,
                r.k.map(|k| k.to_string()).unwrap_or_else(|| "full".into()),
                r.dim.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
                r.cer,
                r.rouge_l,
                r.n,
                r.fail
            ));
        }
        out
    }
}

/// Corpus-level metric summary from one run over a test set.
#[derive(Clone, Copy, Debug)]
pub struct EvalOutcome {
    pub cer: f64,
    pub rouge_l: f64,
    pub n: usize,
    pub fail: usize,
}

/// Greedy-decode every sample, strip at END_OF_TEXT, score against the
/// reference answer. Decode failures (no END_OF_TEXT emitted) count as
/// empty hypotheses. Means are plain arithmetic means over samples.
pub fn run_eval(system: &System, test_set: &[TaskSample], task: Task) -> Result<EvalOutcome> {
    if test_set.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if let Some(bad) = test_set.iter().find(|s| s.task != task) {
        return Err(Error::Config(format!(
            "test set contains a {} sample, expected {}",
            bad.task.name(),
            task.name()
        )));
    }
    let mut ordered: Vec<&TaskSample> = test_set.iter().collect();
    ordered.sort_by_key(|s| s.sample_id);

    let mut cer_sum = 0.0f64;
    let mut rouge_sum = 0.0f64;
    let mut fail = 0usize;
    for s in &ordered {
        let decoded = system.decode(s)?;
        let hyp: Vec<Token> = match decoded.iter().position(|&t| t == END_OF_TEXT) {
            Some(pos) => decoded[..pos].to_vec(),
            None => {
                fail += 1;
                Vec::new()
            }
        };
        let reference: Vec<Token> = s
            .answer_tokens
            .iter()
            .copied()
            .take_while(|&t| t != END_OF_TEXT)
            .collect();
        cer_sum += cer(&hyp, &reference)?;
        rouge_sum += rouge_l(&hyp, &reference)?;
    }
    let n = ordered.len();
    Ok(EvalOutcome {
        cer: cer_sum / n as f64,
        rouge_l: rouge_sum / n as f64,
        n,
        fail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_identical_is_zero() {
        assert_eq!(cer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn cer_empty_hypothesis_is_hundred() {
        assert_eq!(cer(&[], &[5, 6, 7, 8]).unwrap(), 100.0);
    }

    #[test]
    fn cer_single_substitution() {
        // "a b d" vs "a b c"
        let got = cer(&[0, 1, 3], &[0, 1, 2]).unwrap();
        assert!((got - 33.333).abs() < 1e-2, "got {got}");
    }

    #[test]
    fn cer_empty_reference_is_undefined() {
        assert!(matches!(cer(&[1], &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn cer_can_exceed_hundred() {
        let got = cer(&[1, 2, 3, 4, 5, 6], &[9]).unwrap();
        assert!(got > 100.0);
    }

    #[test]
    fn rouge_identical_is_hundred() {
        assert_eq!(rouge_l(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
    }

    #[test]
    fn rouge_disjoint_is_zero() {
        assert_eq!(rouge_l(&[1, 2], &[3, 4]).unwrap(), 0.0);
    }

    #[test]
    fn rouge_partial_overlap_value() {
        // hyp "a b c d", ref "a c d": LCS 3, P .75, R 1, F1 85.714
        let got = rouge_l(&[0, 1, 2, 3], &[0, 2, 3]).unwrap();
        assert!((got - 85.714).abs() < 1e-2, "got {got}");
    }

    #[test]
    fn rouge_empty_hypothesis_is_zero() {
        assert_eq!(rouge_l(&[], &[1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn levenshtein_triangle_inequality_over_seeded_triples() {
        let mut rng = crate::rng::Stream::new(31);
        for _ in 0..1000 {
            let mk = |rng: &mut crate::rng::Stream| -> Vec<Token> {
                let len = 1 + rng.usize_below(8);
                (0..len).map(|_| rng.usize_below(4) as Token).collect()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }
    }

    #[test]
    fn rouge_f1_invariant_under_swap_at_equal_length() {
        let h: Vec<Token> = vec![1, 2, 3, 9];
        let r: Vec<Token> = vec![1, 2, 4, 9];
        let a = rouge_l(&h, &r).unwrap();
        let b = rouge_l(&r, &h).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tsv_header_and_formatting() {
        let report = MetricsReport {
            rows: vec![ReportRow {
                variant: "base".into(),
                mix: "mix2".into(),
                k: None,
                dim: Some(128),
                cer: 9.5,
                rouge_l: 88.125,
                n: 50,
                fail: 0,
            }],
        };
        let tsv = report.to_tsv();
        let mut lines = tsv.lines();
        assert_eq!(lines.next().unwrap(), "variant\tmix\tk\tdim\tcer\trouge_l\tn\tfail");
        assert_eq!(lines.next().unwrap(), "base\tmix2\tfull\t128\t9.500\t88.125\t50\t0");
    }
}
