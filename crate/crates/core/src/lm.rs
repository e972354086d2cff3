//! Witten-Bell smoothed backoff bigram letter language model.
//!
//! For a history `h` with `c(h)` successor tokens of `n(h)` distinct types,
//!
//! ```text
//! p(w | h) = (c(h, w) + n(h) · p_uni(w)) / (c(h) + n(h))
//! ```
//!
//! and `p(w | h) = p_uni(w)` for histories never observed. Unigrams are
//! add-one smoothed over every successor symbol (letters and `</s>`). The
//! interpolated form is stored in ARPA backoff form: seen bigrams carry their
//! probability, unseen ones back off with weight `n(h) / (c(h) + n(h))`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alphabet::{LetterAlphabet, BOS, BOS_SYMBOL, EOS};
use crate::error::{Error, Result};

pub const WORDLIST_1: &str = include_str!("../data/wordlist1.txt");
pub const WORDLIST_2: &str = include_str!("../data/wordlist2.txt");

/// Both reference word lists, in file order.
pub fn default_lexicon() -> Vec<String> {
    WORDLIST_1
        .lines()
        .chain(WORDLIST_2.lines())
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    alphabet: LetterAlphabet,
    /// Unigram probabilities indexed by label; zero for `<s>`.
    unigram: Vec<f64>,
    /// Row-major `[prev][next]` conditional probabilities.
    cond: Vec<f64>,
    /// Backoff weight per history.
    backoff: Vec<f64>,
    /// Whether the bigram was observed (stored explicitly in ARPA output).
    seen: Vec<bool>,
}

impl BigramLm {
    pub fn train<S: AsRef<str>>(words: &[S], alphabet: &LetterAlphabet) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::empty("language model corpus"));
        }
        let v = alphabet.class_count();
        let mut bigram = vec![0u64; v * v];
        let mut unigram = vec![0u64; v];
        for w in words {
            let labels = alphabet.tokenize(w.as_ref())?;
            if labels.is_empty() {
                continue;
            }
            let mut prev = BOS;
            for &l in labels.iter().chain(std::iter::once(&EOS)) {
                bigram[prev * v + l] += 1;
                unigram[l] += 1;
                prev = l;
            }
        }
        Ok(Self::from_counts(alphabet.clone(), &unigram, &bigram))
    }

    fn from_counts(
        alphabet: LetterAlphabet,
        unigram_counts: &[u64],
        bigram_counts: &[u64],
    ) -> Self {
        let v = alphabet.class_count();
        let successors = v - 1;
        let total: u64 = unigram_counts.iter().sum();
        let mut unigram = vec![0.0; v];
        for (w, p) in unigram.iter_mut().enumerate() {
            if w != BOS {
                *p = (unigram_counts[w] as f64 + 1.0) / (total as f64 + successors as f64);
            }
        }
        let mut cond = vec![0.0; v * v];
        let mut backoff = vec![1.0; v];
        let mut seen = vec![false; v * v];
        for h in 0..v {
            if h == EOS {
                continue;
            }
            let row = &bigram_counts[h * v..(h + 1) * v];
            let c: u64 = row.iter().sum();
            let types = row.iter().filter(|&&x| x > 0).count() as f64;
            if c > 0 {
                backoff[h] = types / (c as f64 + types);
            }
            for w in 0..v {
                if w == BOS {
                    continue;
                }
                let p = if c == 0 {
                    unigram[w]
                } else {
                    (row[w] as f64 + types * unigram[w]) / (c as f64 + types)
                };
                cond[h * v + w] = p;
                seen[h * v + w] = row[w] > 0;
            }
        }
        BigramLm {
            alphabet,
            unigram,
            cond,
            backoff,
            seen,
        }
    }

    pub fn alphabet(&self) -> &LetterAlphabet {
        &self.alphabet
    }

    fn check(&self, prev: usize, next: usize) -> Result<()> {
        let v = self.alphabet.class_count();
        if prev >= v || prev == EOS {
            return Err(Error::UnknownSymbol(format!("history #{prev}")));
        }
        if next >= v || next == BOS {
            return Err(Error::UnknownSymbol(format!("successor #{next}")));
        }
        Ok(())
    }

    /// p(next | prev) for label indices.
    pub fn prob(&self, prev: usize, next: usize) -> Result<f64> {
        self.check(prev, next)?;
        Ok(self.cond[prev * self.alphabet.class_count() + next])
    }

    /// Natural-log p(next | prev).
    pub fn logprob(&self, prev: usize, next: usize) -> Result<f64> {
        Ok(self.prob(prev, next)?.ln())
    }

    pub fn logprob_symbols(&self, prev: &str, next: &str) -> Result<f64> {
        let p = self.alphabet.letter_index(prev)?;
        let n = self.alphabet.letter_index(next)?;
        self.logprob(p, n)
    }

    pub fn unigram(&self, w: usize) -> f64 {
        self.unigram.get(w).copied().unwrap_or(0.0)
    }

    /// Natural-log probability of a whole word including both boundaries.
    pub fn word_logprob(&self, labels: &[usize]) -> Result<f64> {
        let mut prev = BOS;
        let mut total = 0.0;
        for &l in labels.iter().chain(std::iter::once(&EOS)) {
            total += self.logprob(prev, l)?;
            prev = l;
        }
        Ok(total)
    }

    pub fn to_arpa(&self) -> String {
        let v = self.alphabet.class_count();
        let sym = |i: usize| self.alphabet.symbol(i).expect("label in range");
        let n_bigrams = self.seen.iter().filter(|&&s| s).count();
        let mut out = String::new();
        let _ = writeln!(out, "\\data\\");
        let _ = writeln!(out, "ngram 1={v}");
        let _ = writeln!(out, "ngram 2={n_bigrams}");
        let _ = writeln!(out, "\n\\1-grams:");
        for w in 0..v {
            let p = if w == BOS {
                -99.0
            } else {
                self.unigram[w].log10()
            };
            if w == EOS {
                let _ = writeln!(out, "{p}\t{}", sym(w));
            } else {
                let _ = writeln!(out, "{p}\t{}\t{}", sym(w), self.backoff[w].log10());
            }
        }
        let _ = writeln!(out, "\n\\2-grams:");
        for h in 0..v {
            for w in 0..v {
                if self.seen[h * v + w] {
                    let _ = writeln!(
                        out,
                        "{}\t{} {}",
                        self.cond[h * v + w].log10(),
                        sym(h),
                        sym(w)
                    );
                }
            }
        }
        let _ = writeln!(out, "\n\\end\\");
        out
    }

    pub fn from_arpa(text: &str, alphabet: &LetterAlphabet) -> Result<Self> {
        let v = alphabet.class_count();
        let mut unigram = vec![f64::NAN; v];
        let mut backoff = vec![1.0; v];
        let mut explicit = vec![f64::NAN; v * v];
        let mut section = 0;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("ngram ") || line == "\\data\\" {
                continue;
            }
            match line {
                "\\1-grams:" => section = 1,
                "\\2-grams:" => section = 2,
                "\\end\\" => break,
                _ => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    let bad = || Error::Format(format!("malformed ARPA line {line:?}"));
                    let p: f64 = fields.first().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                    match section {
                        1 if fields.len() >= 2 => {
                            let w = alphabet.letter_index(fields[1])?;
                            unigram[w] = if fields[1] == BOS_SYMBOL {
                                0.0
                            } else {
                                10f64.powf(p)
                            };
                            if let Some(b) = fields.get(2) {
                                backoff[w] = 10f64.powf(b.parse::<f64>().map_err(|_| bad())?);
                            }
                        }
                        2 if fields.len() == 3 => {
                            let h = alphabet.letter_index(fields[1])?;
                            let w = alphabet.letter_index(fields[2])?;
                            explicit[h * v + w] = 10f64.powf(p);
                        }
                        _ => return Err(bad()),
                    }
                }
            }
        }
        if unigram.iter().any(|p| p.is_nan()) {
            return Err(Error::Format(
                "ARPA file does not cover the alphabet".into(),
            ));
        }
        let mut cond = vec![0.0; v * v];
        let mut seen = vec![false; v * v];
        for h in 0..v {
            if h == EOS {
                continue;
            }
            for w in 0..v {
                if w == BOS {
                    continue;
                }
                let e = explicit[h * v + w];
                if e.is_nan() {
                    cond[h * v + w] = backoff[h] * unigram[w];
                } else {
                    cond[h * v + w] = e;
                    seen[h * v + w] = true;
                }
            }
        }
        Ok(BigramLm {
            alphabet: alphabet.clone(),
            unigram,
            cond,
            backoff,
            seen,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(c: char) -> usize {
        (c as u8 - b'A') as usize
    }

    /// Count-based Witten-Bell evaluation kept independent of the model tables.
    fn oracle(words: &[&str], h: usize, w: usize) -> f64 {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for word in words {
            let mut seq = vec![BOS];
            seq.extend(word.chars().map(idx));
            seq.push(EOS);
            for k in 1..seq.len() {
                pairs.push((seq[k - 1], seq[k]));
            }
        }
        let total = pairs.len() as f64;
        let uni = (pairs.iter().filter(|p| p.1 == w).count() as f64 + 1.0) / (total + 27.0);
        let c_h = pairs.iter().filter(|p| p.0 == h).count() as f64;
        let mut types: Vec<usize> = pairs.iter().filter(|p| p.0 == h).map(|p| p.1).collect();
        types.sort();
        types.dedup();
        let t = types.len() as f64;
        let c_hw = pairs.iter().filter(|p| **p == (h, w)).count() as f64;
        if c_h == 0.0 {
            uni
        } else {
            (c_hw + t * uni) / (c_h + t)
        }
    }

    #[test]
    fn smoothing_reserves_mass() {
        let lm = BigramLm::train(&["AB", "AB"], &LetterAlphabet::new()).unwrap();
        let p = lm.prob(idx('A'), idx('B')).unwrap();
        assert!(p < 1.0);
        for w in (0..26).chain([EOS]) {
            assert!(lm.prob(idx('A'), w).unwrap() > 0.0);
        }
    }

    #[test]
    fn normalized_for_every_history() {
        let alphabet = LetterAlphabet::new();
        let lm = BigramLm::train(&default_lexicon(), &alphabet).unwrap();
        for h in (0..26).chain([BOS]) {
            let s: f64 = (0..26).chain([EOS]).map(|w| lm.prob(h, w).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-9, "history {h}: {s}");
        }
    }

    #[test]
    fn matches_count_oracle() {
        let corpus = ["AB", "AC", "BC"];
        let lm = BigramLm::train(&corpus, &LetterAlphabet::new()).unwrap();
        for (h, w) in [('A', 'B'), ('A', 'C'), ('B', 'C'), ('C', 'A'), ('Q', 'Z')] {
            let expect = oracle(&corpus, idx(h), idx(w));
            assert!((lm.prob(idx(h), idx(w)).unwrap() - expect).abs() < 1e-15);
        }
        // p(B|A): c(A)=2 over two types; B occurs twice (after A and after <s>), so p_uni(B) = 3/36
        let closed = (1.0 + 2.0 * (3.0 / 36.0)) / 4.0;
        let got = lm.prob(idx('A'), idx('B')).unwrap();
        assert!((got - closed).abs() < 1e-14, "{got} vs {closed}");
    }

    #[test]
    fn single_word_closed_form() {
        let lm = BigramLm::train(&["CAB"], &LetterAlphabet::new()).unwrap();
        // tokens: C A B </s> → total 4; p_uni(A) = 2/31; history C has one type.
        let closed = (1.0 + 2.0 / 31.0) / 2.0;
        assert!((lm.prob(idx('C'), idx('A')).unwrap() - closed).abs() < 1e-15);
        assert!(
            (lm.prob(idx('C'), idx('A')).unwrap() - oracle(&["CAB"], idx('C'), idx('A'))).abs()
                < 1e-15
        );
    }

    #[test]
    fn logprob_bounds() {
        let lm = BigramLm::train(&["HELLO"], &LetterAlphabet::new()).unwrap();
        for h in (0..26).chain([BOS]) {
            for w in (0..26).chain([EOS]) {
                let lp = lm.logprob(h, w).unwrap();
                assert!(lp.is_finite() && lp <= 0.0);
            }
        }
        assert!(lm.logprob(EOS, 0).is_err());
        assert!(lm.logprob(0, BOS).is_err());
        assert!(lm.logprob_symbols("A", "7").is_err());
    }

    #[test]
    fn out_of_alphabet_rejected() {
        let err = BigramLm::train(&["AB", "A-B"], &LetterAlphabet::new()).unwrap_err();
        assert!(matches!(err, Error::InvalidWord { position: 1, .. }));
        assert!(BigramLm::train::<&str>(&[], &LetterAlphabet::new()).is_err());
    }

    #[test]
    fn arpa_round_trip() {
        let alphabet = LetterAlphabet::new();
        let lm = BigramLm::train(&["TULIP", "TAXI", "QUIZ"], &alphabet).unwrap();
        let text = lm.to_arpa();
        assert!(text.starts_with("\\data\\\nngram 1=28\n"));
        let back = BigramLm::from_arpa(&text, &alphabet).unwrap();
        for h in (0..26).chain([BOS]) {
            for w in (0..26).chain([EOS]) {
                let a = lm.prob(h, w).unwrap();
                let b = back.prob(h, w).unwrap();
                assert!(
                    (a - b).abs() < 1e-12 * a.max(1e-300),
                    "{h}->{w}: {a} vs {b}"
                );
            }
        }
        assert_eq!(back.to_arpa().lines().count(), text.lines().count());
    }

    #[test]
    fn training_is_deterministic() {
        let a = BigramLm::train(&default_lexicon(), &LetterAlphabet::new()).unwrap();
        let b = BigramLm::train(&default_lexicon(), &LetterAlphabet::new()).unwrap();
        assert_eq!(a.to_arpa(), b.to_arpa());
    }
}
