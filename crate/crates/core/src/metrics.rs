//! Letter error rate with deletion / substitution / insertion decomposition.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

/// One column of an alignment; `None` is a gap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
    pub op: EditOp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub deletions: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    pub alignment: Vec<AlignedPair>,
}

impl ErrorDecomposition {
    pub fn errors(&self) -> usize {
        self.deletions + self.substitutions + self.insertions
    }

    pub fn matches(&self) -> usize {
        self.reference_len - self.substitutions - self.deletions
    }
}

/// Unit-cost Levenshtein alignment of two token sequences.
///
/// The backtrace prefers match, then substitution, then deletion, then
/// insertion whenever several moves reach the optimum.
pub fn align_tokens<T: AsRef<str> + PartialEq>(
    reference: &[T],
    hypothesis: &[T],
) -> ErrorDecomposition {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * w] = i;
        for j in 1..=m {
            let diag =
                cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut alignment = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let (mut d, mut s, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = cost[(i - 1) * w + j - 1];
            if same && diag == here {
                alignment.push(pair(
                    Some(&reference[i - 1]),
                    Some(&hypothesis[j - 1]),
                    EditOp::Match,
                ));
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                alignment.push(pair(
                    Some(&reference[i - 1]),
                    Some(&hypothesis[j - 1]),
                    EditOp::Substitution,
                ));
                s += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            alignment.push(pair(Some(&reference[i - 1]), None, EditOp::Deletion));
            d += 1;
            i -= 1;
        } else {
            alignment.push(pair(None, Some(&hypothesis[j - 1]), EditOp::Insertion));
            ins += 1;
            j -= 1;
        }
    }
    alignment.reverse();
    ErrorDecomposition {
        deletions: d,
        substitutions: s,
        insertions: ins,
        reference_len: n,
        alignment,
    }
}

fn pair<T: AsRef<str>>(r: Option<&T>, h: Option<&T>, op: EditOp) -> AlignedPair {
    AlignedPair {
        reference: r.map(|x| x.as_ref().to_string()),
        hypothesis: h.map(|x| x.as_ref().to_string()),
        op,
    }
}

/// Splits a transcript into letter tokens: whitespace-separated tokens if the
/// text contains whitespace, single characters otherwise.
pub fn letter_tokens(text: &str) -> Vec<String> {
    let text = text.trim();
    if text.contains(char::is_whitespace) {
        text.split_whitespace().map(str::to_string).collect()
    } else {
        text.chars().map(|c| c.to_string()).collect()
    }
}

pub fn align(reference: &str, hypothesis: &str) -> ErrorDecomposition {
    align_tokens(&letter_tokens(reference), &letter_tokens(hypothesis))
}

/// (D + S + I) / N × 100.
pub fn ler(decomp: &ErrorDecomposition) -> Result<f64> {
    if decomp.reference_len == 0 {
        return Err(Error::invalid(
            "letter error rate is undefined for an empty reference",
        ));
    }
    Ok(decomp.errors() as f64 / decomp.reference_len as f64 * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub reference: String,
    pub hypothesis: String,
    pub decomposition: ErrorDecomposition,
    pub ler: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    /// Pooled (ΣD + ΣS + ΣI) / ΣN × 100.
    pub ler: f64,
    pub deletions: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    /// D, S and I as percentages of ΣN.
    pub deletion_rate: f64,
    pub substitution_rate: f64,
    pub insertion_rate: f64,
    pub words: Vec<WordScore>,
}

pub fn score_corpus<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<CorpusScore> {
    if pairs.is_empty() {
        return Err(Error::empty("no word pairs to score"));
    }
    let mut words = Vec::with_capacity(pairs.len());
    let (mut d, mut s, mut i, mut n) = (0, 0, 0, 0);
    for (k, (r, h)) in pairs.iter().enumerate() {
        let decomp = align(r.as_ref(), h.as_ref());
        if decomp.reference_len == 0 {
            return Err(Error::invalid(format!("empty reference in pair {k}")));
        }
        d += decomp.deletions;
        s += decomp.substitutions;
        i += decomp.insertions;
        n += decomp.reference_len;
        let word_ler = ler(&decomp)?;
        words.push(WordScore {
            reference: r.as_ref().to_string(),
            hypothesis: h.as_ref().to_string(),
            decomposition: decomp,
            ler: word_ler,
        });
    }
    let pct = |x: usize| x as f64 / n as f64 * 100.0;
    Ok(CorpusScore {
        ler: pct(d + s + i),
        deletions: d,
        substitutions: s,
        insertions: i,
        reference_len: n,
        deletion_rate: pct(d),
        substitution_rate: pct(s),
        insertion_rate: pct(i),
        words,
    })
}

impl CorpusScore {
    /// Human-readable report with one aligned block per word.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "LER {:.2}%  (D {:.2}%  S {:.2}%  I {:.2}%)  N={}",
            self.ler,
            self.deletion_rate,
            self.substitution_rate,
            self.insertion_rate,
            self.reference_len
        );
        for w in &self.words {
            let mut refs = String::new();
            let mut hyps = String::new();
            let mut tags = String::new();
            for p in &w.decomposition.alignment {
                let r = p.reference.as_deref().unwrap_or("*");
                let h = p.hypothesis.as_deref().unwrap_or("*");
                let width = r.len().max(h.len());
                let tag = match p.op {
                    EditOp::Match => "",
                    EditOp::Substitution => "S",
                    EditOp::Deletion => "D",
                    EditOp::Insertion => "I",
                };
                let _ = write!(refs, "{r:<width$} ");
                let _ = write!(hyps, "{h:<width$} ");
                let _ = write!(tags, "{tag:<width$} ");
            }
            let _ = writeln!(out, "\nREF: {}", refs.trim_end());
            let _ = writeln!(out, "HYP: {}", hyps.trim_end());
            let _ = writeln!(out, "     {}   ({:.1}%)", tags.trim_end(), w.ler);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity() {
        let d = align("TULIP", "TULIP");
        assert_eq!((d.deletions, d.substitutions, d.insertions), (0, 0, 0));
        assert_eq!(ler(&d).unwrap(), 0.0);
    }

    #[test]
    fn deletions_only() {
        let d = align("ROAD", "A");
        assert_eq!((d.deletions, d.substitutions, d.insertions), (3, 0, 0));
    }

    #[test]
    fn insertions_only() {
        let d = align("", "AB");
        assert_eq!(d.insertions, 2);
        assert!(ler(&d).is_err());
    }

    #[test]
    fn ler_formula() {
        let d = ErrorDecomposition {
            deletions: 2,
            substitutions: 1,
            insertions: 1,
            reference_len: 10,
            alignment: vec![],
        };
        assert_eq!(ler(&d).unwrap(), 40.0);
    }

    #[test]
    fn substitution_preferred_over_indel_pair() {
        let d = align("AB", "AC");
        assert_eq!((d.deletions, d.substitutions, d.insertions), (0, 1, 0));
        assert_eq!(d.alignment[1].op, EditOp::Substitution);
    }

    #[test]
    fn corpus_pooling() {
        let c = score_corpus(&[("ABCDE", "ABCDX"), ("FGHIJ", "XGHIJ")]).unwrap();
        assert_eq!(c.ler, 20.0);
        assert_eq!(c.substitution_rate, 20.0);
        assert_eq!((c.deletion_rate, c.insertion_rate), (0.0, 0.0));

        // Pooled rate differs from the mean of per-word rates.
        let c = score_corpus(&[("AB", "XY"), ("ABCDEFGH", "ABCDEFGH")]).unwrap();
        let mean: f64 = c.words.iter().map(|w| w.ler).sum::<f64>() / 2.0;
        assert_eq!(c.ler, 20.0);
        assert_eq!(mean, 50.0);
        assert!((c.deletion_rate + c.substitution_rate + c.insertion_rate - c.ler).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(score_corpus(&[("", "A")]).is_err());
        assert!(score_corpus::<&str, &str>(&[]).is_err());
    }

    #[test]
    fn text_report_tags() {
        let c = score_corpus(&[("ROAD", "RAD")]).unwrap();
        let t = c.to_text();
        assert!(t.contains("REF: R O A D"));
        assert!(t.contains("HYP: R * A D"));
        assert!(t.contains("D"));
    }
}
