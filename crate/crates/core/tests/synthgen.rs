use segspell_core::alphabet::{BOS, EOS};
use segspell_core::lm::default_lexicon;
use segspell_core::scrf::{peak_curve, single_peak};
use segspell_core::synthgen::{
    generate_corpus, make_signers, render_frames, RenderedWord, SignerSpec, SynthConfig,
    SyntheticSigner,
};
use segspell_core::vision::{fit_hand_color_model, segment_hand, ColorModelConfig};

#[test]
fn lexicon_corpus_has_one_peak_per_segment() {
    let words = default_lexicon();
    let cfg = SynthConfig::default();
    let spec = SignerSpec {
        noise: 0.0,
        ..Default::default()
    };
    let signers = make_signers(4, cfg.dim, &spec, 77).unwrap();
    let corpus = generate_corpus(&words, &signers, 1, &cfg, 77).unwrap();
    assert_eq!(corpus.items.len(), 4 * words.len());
    for item in &corpus.items {
        let curve = peak_curve(&item.descriptors);
        let segs = item.segmentation.segments();
        assert_eq!(segs.first().unwrap().label, BOS);
        assert_eq!(segs.last().unwrap().label, EOS);
        item.segmentation.validate(item.frames()).unwrap();
        for (seg, &p) in segs.iter().zip(&item.peaks) {
            assert!(seg.start <= p && p < seg.end);
            assert!(
                single_peak(&curve, seg.start, seg.end),
                "{} {:?}",
                item.word,
                seg
            );
        }
        for seg in &segs[1..segs.len() - 1] {
            assert!((2..=40).contains(&seg.len()));
        }
        assert_eq!(corpus.alphabet.render(&item.labels), item.word);
    }
}

#[test]
fn protocol_sized_corpus() {
    let words: Vec<String> = default_lexicon().into_iter().take(300).collect();
    let cfg = SynthConfig::default();
    let signers = make_signers(4, cfg.dim, &SignerSpec::default(), 1).unwrap();
    let one = generate_corpus(&words, &signers[..1], 2, &cfg, 1).unwrap();
    assert_eq!(one.items.len(), 600);
    let all = generate_corpus(&words, &signers, 2, &cfg, 1).unwrap();
    assert_eq!(all.manifest.entries.len(), 2400);
}

fn rendered(signer: &SyntheticSigner, words: &[&str], seed: u64) -> Vec<RenderedWord> {
    let cfg = SynthConfig::default();
    let c = generate_corpus(words, std::slice::from_ref(signer), 1, &cfg, seed).unwrap();
    c.items
        .iter()
        .map(|w| render_frames(w, signer, &cfg.image).unwrap())
        .collect()
}

#[test]
fn front_end_recovers_rendered_hands() {
    let signers = make_signers(2, 24, &SignerSpec::default(), 4).unwrap();
    let train = rendered(&signers[0], &["FOX", "QUIZ"], 1);
    let frames: Vec<_> = train
        .iter()
        .flat_map(|r| r.frames.iter().step_by(4).cloned())
        .take(30)
        .collect();
    let rois: Vec<_> = train
        .iter()
        .flat_map(|r| r.masks.iter().step_by(4).cloned())
        .take(30)
        .collect();
    assert_eq!(frames.len(), 30);
    let model = fit_hand_color_model(&frames, &rois, &ColorModelConfig::default()).unwrap();

    let test = rendered(&signers[0], &["JUMP", "WAVY"], 2);
    let (mut hits, mut total) = (0usize, 0usize);
    for r in &test {
        for (f, m) in r.frames.iter().zip(&r.masks) {
            let odds = model.hand_pixels(f).unwrap();
            hits += m
                .data
                .iter()
                .zip(&odds.data)
                .filter(|(a, b)| **a && **b)
                .count();
            total += m.count();
            let seg = segment_hand(f, &model, None, None).unwrap();
            assert!(!seg.empty);
            assert!(seg.mask.iou(m) >= 0.9, "IoU {}", seg.mask.iou(m));
        }
    }
    assert!(hits as f64 / total as f64 >= 0.95);
}

#[test]
fn signers_hand_colors_differ() {
    let signers = make_signers(2, 24, &SignerSpec::default(), 4).unwrap();
    let hist = |s: &SyntheticSigner| {
        let mut h = vec![1e-9; 8 * 8 * 8];
        for r in rendered(s, &["HAND"], 3) {
            for (f, m) in r.frames.iter().zip(&r.masks) {
                for (p, &inside) in f.pixels().zip(&m.data) {
                    if inside {
                        let b = |c: u8| (c / 32) as usize;
                        h[b(p.0[0]) * 64 + b(p.0[1]) * 8 + b(p.0[2])] += 1.0;
                    }
                }
            }
        }
        let n: f64 = h.iter().sum();
        h.into_iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let (a, b) = (hist(&signers[0]), hist(&signers[1]));
    let chi: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2) / (x + y))
        .sum();
    // identical histograms give 0; disjoint ones give 2
    assert!(chi > 1.0, "{chi}");
}
