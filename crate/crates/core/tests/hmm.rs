use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segspell_core::alphabet::{LetterAlphabet, BOS, EOS};
use segspell_core::hmm::{
    forced_align, nbest, train_em, viterbi_decode, CandidateLattice, DecodeConfig, HmmConfig,
    LetterHmm,
};
use segspell_core::lm::BigramLm;
use segspell_core::semimarkov::{Segment, Segmentation};

const N_LABELS: usize = 28;

fn toy_hmm(rng: &mut ChaCha8Rng, cfg: HmmConfig) -> LetterHmm {
    let dummy = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
    let mut hmm = LetterHmm::flat_start(N_LABELS, &[dummy], &cfg).unwrap();
    for m in &mut hmm.models {
        for g in &mut m.states {
            for (mu, v) in g.means.iter_mut().zip(g.vars.iter_mut()) {
                mu[0] = rng.random_range(-2.0..2.0);
                v[0] = rng.random_range(0.3..1.5);
            }
        }
        for p in &mut m.self_loop {
            *p = rng.random_range(0.2..0.8);
        }
    }
    hmm
}

fn lm() -> BigramLm {
    BigramLm::train(&["ABC", "CAB", "BA", "ACCA", "CB"], &LetterAlphabet::new()).unwrap()
}

type Key = (Vec<usize>, Vec<(usize, usize)>);

/// Best score of every (label sequence, segmentation) reachable by a
/// composite state path, by exhaustive enumeration. Also returns the number
/// of state paths.
fn enumerate_paths(
    hmm: &LetterHmm,
    lm: &BigramLm,
    x: &Array2<f64>,
    cfg: &DecodeConfig,
    vocab: &[usize],
) -> (BTreeMap<Key, f64>, usize) {
    let t_len = x.nrows();
    let emit = |y: usize, k: usize, t: usize| hmm.models[y].states[k].log_density(&[x[[t, 0]]]);
    let lp = |a: usize, b: usize| cfg.lm_weight * lm.logprob(a, b).unwrap();
    let pen = |y: usize| {
        if y == BOS || y == EOS {
            0.0
        } else {
            cfg.insertion_penalty
        }
    };
    let allowed = |a: usize, b: usize| a != b && a != EOS && b != BOS && !(a == BOS && b == EOS);
    let mut labels: Vec<usize> = vocab.to_vec();
    labels.push(BOS);
    labels.push(EOS);

    let mut out: BTreeMap<Key, f64> = BTreeMap::new();
    let mut count = 0;
    struct St {
        t: usize,
        y: usize,
        k: usize,
        score: f64,
        segs: Vec<(usize, usize)>,
    }
    let mut stack: Vec<St> = Vec::new();
    for &y in &labels {
        if y == EOS {
            continue;
        }
        let first = if y == BOS { 0.0 } else { lp(BOS, y) - pen(y) };
        stack.push(St {
            t: 0,
            y,
            k: 0,
            score: first + emit(y, 0, 0),
            segs: vec![(y, 0)],
        });
    }
    while let Some(st) = stack.pop() {
        let m = &hmm.models[st.y];
        let s = m.states.len();
        if st.t + 1 == t_len {
            if st.k == s - 1 && st.y != BOS {
                count += 1;
                let fin = if st.y == EOS { 0.0 } else { lp(st.y, EOS) };
                let total = st.score + m.log_next(s - 1) + fin;
                let mut lab = Vec::new();
                let mut spans = Vec::new();
                for (i, &(l, start)) in st.segs.iter().enumerate() {
                    let end = st.segs.get(i + 1).map_or(t_len, |n| n.1);
                    lab.push(l);
                    spans.push((start, end));
                }
                let e = out.entry((lab, spans)).or_insert(f64::NEG_INFINITY);
                *e = e.max(total);
            }
            continue;
        }
        let t = st.t + 1;
        stack.push(St {
            t,
            y: st.y,
            k: st.k,
            score: st.score + m.log_self(st.k) + emit(st.y, st.k, t),
            segs: st.segs.clone(),
        });
        if st.k + 1 < s {
            stack.push(St {
                t,
                y: st.y,
                k: st.k + 1,
                score: st.score + m.log_next(st.k) + emit(st.y, st.k + 1, t),
                segs: st.segs.clone(),
            });
        } else {
            for &z in &labels {
                if !allowed(st.y, z) {
                    continue;
                }
                let mut segs = st.segs.clone();
                segs.push((z, t));
                stack.push(St {
                    t,
                    y: z,
                    k: 0,
                    score: st.score + m.log_next(st.k) + lp(st.y, z) - pen(z) + emit(z, 0, t),
                    segs,
                });
            }
        }
    }
    (out, count)
}

fn key_of(labels: &[usize], seg: &Segmentation) -> Key {
    (
        labels.to_vec(),
        seg.segments().iter().map(|s| (s.start, s.end)).collect(),
    )
}

fn small_cfg() -> HmmConfig {
    HmmConfig {
        letter_states: 2,
        silence_states: 2,
        components: 1,
        var_floor: 1e-4,
        max_letter_frames: 100,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs())
}

#[test]
fn decoding_matches_state_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lm = lm();
    let vocab = vec![0, 1, 2];
    for (trial, t_len) in [6usize, 7, 8].into_iter().enumerate() {
        let hmm = toy_hmm(&mut rng, small_cfg());
        let x = Array2::from_shape_fn((t_len, 1), |_| rng.random_range(-2.0..2.0));
        let cfg = DecodeConfig {
            lm_weight: 0.7,
            insertion_penalty: 0.3 * trial as f64,
            nbest: 1,
            vocabulary: Some(vocab.clone()),
        };
        let (groups, paths) = enumerate_paths(&hmm, &lm, &x, &cfg, &vocab);
        assert!(paths <= 5000, "{paths} paths");
        let mut ranked: Vec<(&Key, f64)> = groups.iter().map(|(k, &v)| (k, v)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

        let best = viterbi_decode(&hmm, &lm, &x, &cfg).unwrap();
        assert!(close(best.score, ranked[0].1));
        assert_eq!(&key_of(&best.labels, &best.segmentation), ranked[0].0);

        let all = nbest(
            &hmm,
            &lm,
            &x,
            &DecodeConfig {
                nbest: groups.len() + 5,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(all.hypotheses.len(), groups.len());
        for h in &all.hypotheses {
            let v = groups[&key_of(&h.labels, &h.segmentation)];
            assert!(close(h.score, v));
            h.segmentation.validate(t_len).unwrap();
        }
        assert!(all.hypotheses.windows(2).all(|w| w[0].score >= w[1].score));
        let one = nbest(&hmm, &lm, &x, &cfg).unwrap();
        assert_eq!(one.hypotheses, vec![best.clone()]);
        assert_eq!(one.baseline, best.segmentation.frame_labels());

        // forced alignment against the LM-free enumeration
        let plain = DecodeConfig {
            lm_weight: 0.0,
            insertion_penalty: 0.0,
            ..cfg.clone()
        };
        let (groups, _) = enumerate_paths(&hmm, &lm, &x, &plain, &vocab);
        let letters = best.letters();
        let target = groups
            .iter()
            .filter(|(k, _)| {
                k.0.iter()
                    .copied()
                    .filter(|&l| l != BOS && l != EOS)
                    .collect::<Vec<_>>()
                    == letters
            })
            .map(|(k, &v)| (k, v))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let fa = forced_align(&hmm, &x, &letters).unwrap();
        assert!(close(fa.score, target.1));
        assert_eq!(&key_of(&fa.labels, &fa.segmentation), target.0);
        let free = viterbi_decode(&hmm, &lm, &x, &plain).unwrap();
        assert!(fa.score <= free.score + 1e-12);
    }
}

#[test]
fn single_letter_vocabulary() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hmm = toy_hmm(&mut rng, HmmConfig::default());
    let x = Array2::from_shape_fn((5, 1), |_| rng.random_range(-2.0..2.0));
    let cfg = DecodeConfig {
        vocabulary: Some(vec![7]),
        ..Default::default()
    };
    let h = viterbi_decode(&hmm, &lm(), &x, &cfg).unwrap();
    assert_eq!(h.letters(), vec![7]);
    let x = Array2::from_shape_fn((2, 1), |_| 0.0);
    assert!(viterbi_decode(&hmm, &lm(), &x, &cfg).is_err());
}

#[test]
fn insertion_penalty_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hmm = toy_hmm(&mut rng, HmmConfig::default());
    let x = Array2::from_shape_fn((40, 1), |_| rng.random_range(-2.0..2.0));
    let mut last = usize::MAX;
    for p in [-4.0, -2.0, 0.0, 1.0, 2.0, 5.0, 10.0, 50.0] {
        let cfg = DecodeConfig {
            insertion_penalty: p,
            ..Default::default()
        };
        let n = viterbi_decode(&hmm, &lm(), &x, &cfg)
            .unwrap()
            .letters()
            .len();
        assert!(n <= last);
        last = n;
    }
}

#[test]
fn zero_lm_weight_ignores_the_lm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hmm = toy_hmm(&mut rng, HmmConfig::default());
    let x = Array2::from_shape_fn((30, 1), |_| rng.random_range(-2.0..2.0));
    let cfg = DecodeConfig {
        lm_weight: 0.0,
        nbest: 5,
        ..Default::default()
    };
    let other = BigramLm::train(&["ZZZ", "QQ", "XYZ"], &LetterAlphabet::new()).unwrap();
    assert_eq!(
        nbest(&hmm, &lm(), &x, &cfg).unwrap(),
        nbest(&hmm, &other, &x, &cfg).unwrap()
    );
}

#[test]
fn forced_alignment_with_mandatory_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hmm = toy_hmm(&mut rng, HmmConfig::default());
    let x = Array2::from_shape_fn((9, 1), |_| rng.random_range(-2.0..2.0));
    let fa = forced_align(&hmm, &x, &[3, 1, 4]).unwrap();
    assert_eq!(
        fa.segmentation,
        Segmentation(vec![
            Segment::new(3, 0, 3),
            Segment::new(1, 3, 6),
            Segment::new(4, 6, 9)
        ])
    );
    assert!(forced_align(&hmm, &x, &[3, 1, 4, 1]).is_err());
    assert!(forced_align(&hmm, &x, &[]).is_err());
    let x = Array2::from_shape_fn((40, 1), |_| rng.random_range(-2.0..2.0));
    let fa = forced_align(&hmm, &x, &[0, 0, 2]).unwrap();
    fa.segmentation.validate(40).unwrap();
    assert_eq!(fa.letters(), vec![0, 0, 2]);
}

/// Words whose letters emit around `2 * letter` in the first dimension.
fn toy_corpus(
    rng: &mut ChaCha8Rng,
    n: usize,
) -> (Vec<Array2<f64>>, Vec<Vec<usize>>, Vec<Segmentation>) {
    let (mut xs, mut words, mut segs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let len = rng.random_range(1..4);
        let letters: Vec<usize> = (0..len).map(|_| rng.random_range(0..4)).collect();
        let mut labels = vec![BOS];
        labels.extend(&letters);
        labels.push(EOS);
        let mut rows = Vec::new();
        let mut parts = Vec::new();
        for &l in &labels {
            let d = if l == BOS || l == EOS {
                rng.random_range(9..13)
            } else {
                rng.random_range(3..7)
            };
            let center = if l == BOS || l == EOS {
                -3.0
            } else {
                2.0 * l as f64
            };
            parts.push(Segment::new(l, rows.len() / 2, rows.len() / 2 + d));
            for i in 0..d {
                rows.push(center + 0.3 * (i as f64 / d as f64) + rng.random_range(-0.4..0.4));
                rows.push(rng.random_range(-1.0..1.0));
            }
        }
        let t = rows.len() / 2;
        xs.push(Array2::from_shape_vec((t, 2), rows).unwrap());
        words.push(letters);
        segs.push(Segmentation(parts));
    }
    (xs, words, segs)
}

#[test]
fn em_is_monotone_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (xs, words, segs) = toy_corpus(&mut rng, 20);
    let cfg = HmmConfig::default();
    for segmentation in [Some(&segs[..]), None] {
        let (hmm, report) = train_em(&xs, &words, segmentation, N_LABELS, &cfg, 10).unwrap();
        assert_eq!(report.log_likelihood.len(), 11);
        for w in report.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} then {}", w[0], w[1]);
        }
        hmm.validate().unwrap();
        for m in &hmm.models {
            for g in &m.states {
                assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
    let (hmm, _) = train_em(&xs, &words, Some(&segs), N_LABELS, &cfg, 5).unwrap();
    let lm = BigramLm::train(
        &["A", "B", "C", "D", "AB", "BC", "CD", "DA"],
        &LetterAlphabet::new(),
    )
    .unwrap();
    let mut correct = 0;
    for (x, w) in xs.iter().zip(&words) {
        if &viterbi_decode(&hmm, &lm, x, &DecodeConfig::default())
            .unwrap()
            .letters()
            == w
        {
            correct += 1;
        }
    }
    assert!(correct >= 16, "{correct} of 20 decoded");
}

#[test]
fn segmented_init_averages_uniform_thirds() {
    let x = Array2::from_shape_vec((6, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
    let seg = Segmentation(vec![Segment::new(0, 0, 6)]);
    let cfg = HmmConfig {
        components: 1,
        ..Default::default()
    };
    let (hmm, report) = train_em(&[x], &[vec![0]], Some(&[seg]), N_LABELS, &cfg, 0).unwrap();
    assert_eq!(report.log_likelihood.len(), 1);
    let means: Vec<f64> = hmm.models[0].states.iter().map(|g| g.means[0][0]).collect();
    assert_eq!(means, vec![1.5, 3.5, 7.0]);
}

#[test]
fn zero_iterations_return_flat_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (xs, words, _) = toy_corpus(&mut rng, 5);
    let cfg = HmmConfig::default();
    let (hmm, _) = train_em(&xs, &words, None, N_LABELS, &cfg, 0).unwrap();
    assert_eq!(hmm, LetterHmm::flat_start(N_LABELS, &xs, &cfg).unwrap());
    assert!(train_em(&[], &[], None, N_LABELS, &cfg, 1).is_err());
    let bad = Segmentation(vec![Segment::new(0, 0, 3)]);
    assert!(train_em(&xs[..1], &words[..1], Some(&[bad]), N_LABELS, &cfg, 1).is_err());
}

#[test]
fn lattice_and_model_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hmm = toy_hmm(&mut rng, HmmConfig::default());
    let x = Array2::from_shape_fn((30, 1), |_| rng.random_range(-2.0..2.0));
    let lat = nbest(
        &hmm,
        &lm(),
        &x,
        &DecodeConfig {
            nbest: 7,
            ..Default::default()
        },
    )
    .unwrap();
    let alphabet = LetterAlphabet::new();
    let text = lat.to_jsonl(&alphabet).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(CandidateLattice::from_jsonl(&text, &alphabet).unwrap(), lat);
    assert_eq!(LetterHmm::from_json(&hmm.to_json().unwrap()).unwrap(), hmm);
}
