//! Synthetic fingerspelling corpora.
//!
//! Every word token draws its randomness from its own generator, seeded by
//! [`derive_seed`] from the corpus seed and the counters
//! `(signer index, word index, repetition)`. Signers are seeded the same way
//! from `(u64::MAX, signer index)`. No generator state is shared, so tokens
//! can be produced in any order or in parallel.

use std::collections::BTreeSet;

use image::{Rgb, RgbImage};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::{LetterAlphabet, PhoneticFeatureTable, BOS, EOS, PHONETIC_EMBED_DIM};
use crate::error::{Error, Result};
use crate::semimarkov::{Segment, Segmentation};
use crate::vision::Mask;

/// Mixes counters into a seed with the SplitMix64 finalizer.
pub fn derive_seed(base: u64, counters: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    counters.iter().fold(mix(base), |acc, &c| mix(acc ^ mix(c)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Descriptor dimension.
    pub dim: usize,
    /// Range of a letter's duration in frames before the speed factor.
    pub letter_frames: (f64, f64),
    /// Duration multiplier for doubled-letter tokens.
    pub doubled_stretch: f64,
    /// Range of each boundary silence in frames before the speed factor.
    pub silence_frames: (f64, f64),
    /// Frames of motion on each side of a segment boundary; the rest of
    /// each segment holds its target.
    pub transition_frames: usize,
    /// Render doubled letters as one prolonged token.
    pub doubled_letters: bool,
    /// Seed of the shared letter geometry (the same for every signer).
    pub geometry_seed: u64,
    pub image: ImageConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 24,
            letter_frames: (12.0, 22.0),
            doubled_stretch: 1.6,
            silence_frames: (15.0, 24.0),
            transition_frames: 2,
            doubled_letters: true,
            geometry_seed: 2017,
            image: ImageConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageConfig {
    pub width: u32,
    pub height: u32,
    /// Hand area as a fraction of the frame.
    pub hand_fraction: f64,
    /// Standard deviation of per-pixel color noise, in 8-bit units.
    pub pixel_noise: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            width: 64,
            height: 48,
            hand_fraction: 0.08,
            pixel_noise: 3.0,
        }
    }
}

/// How a corpus's signers are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignerSpec {
    /// Slowest over fastest speed factor across the corpus.
    pub speed_ratio: f64,
    /// Speed factor of the fastest signer.
    pub fastest: f64,
    /// Scale of the skew generator of each signer's rotation.
    pub mismatch: f64,
    pub bias: f64,
    pub noise: f64,
    /// Displacement of the non-signing poses from the rest pose.
    pub rest_amplitude: f64,
}

impl Default for SignerSpec {
    fn default() -> Self {
        SignerSpec {
            speed_ratio: 1.8,
            fastest: 0.8,
            mismatch: 0.25,
            bias: 0.3,
            noise: 0.15,
            rest_amplitude: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSigner {
    pub id: String,
    pub seed: u64,
    /// Multiplies every duration.
    pub speed: f64,
    /// Orthogonal `dim x dim` appearance map, row-major.
    pub transform: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise: f64,
    pub hand_color: [u8; 3],
    pub rest_amplitude: f64,
}

const HAND_COLORS: [[u8; 3]; 6] = [
    [224, 172, 105],
    [141, 85, 36],
    [255, 205, 148],
    [198, 134, 66],
    [241, 194, 125],
    [110, 60, 30],
];

impl SyntheticSigner {
    /// Identity appearance, no noise, unit speed.
    pub fn neutral(id: &str, dim: usize) -> Self {
        let mut transform = vec![0.0; dim * dim];
        (0..dim).for_each(|i| transform[i * dim + i] = 1.0);
        SyntheticSigner {
            id: id.to_string(),
            seed: 0,
            speed: 1.0,
            transform,
            bias: vec![0.0; dim],
            noise: 0.0,
            hand_color: HAND_COLORS[0],
            rest_amplitude: 1.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.speed > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::invalid(format!(
                "signer {}: speed must be positive and noise non-negative",
                self.id
            )));
        }
        if self.bias.len() != dim || self.transform.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

/// Signers with speeds spaced evenly from `fastest` to
/// `fastest * speed_ratio` and Cayley-transform rotations.
pub fn make_signers(
    count: usize,
    dim: usize,
    spec: &SignerSpec,
    seed: u64,
) -> Result<Vec<SyntheticSigner>> {
    if !(spec.speed_ratio >= 1.0 && spec.fastest > 0.0 && spec.noise >= 0.0) {
        return Err(Error::invalid(
            "signer speeds need fastest > 0 and a ratio of at least 1",
        ));
    }
    (0..count)
        .map(|k| {
            let s = derive_seed(seed, &[u64::MAX, k as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut a = DMatrix::<f64>::zeros(dim, dim);
            for i in 0..dim {
                for j in i + 1..dim {
                    let v = spec.mismatch * normal.sample(&mut rng);
                    a[(i, j)] = v;
                    a[(j, i)] = -v;
                }
            }
            let eye = DMatrix::<f64>::identity(dim, dim);
            let q = (&eye - &a)
                .try_inverse()
                .ok_or_else(|| Error::invalid("singular Cayley factor"))?
                * (&eye + &a);
            let transform = (0..dim * dim).map(|i| q[(i / dim, i % dim)]).collect();
            let bias = (0..dim)
                .map(|_| spec.bias * normal.sample(&mut rng))
                .collect();
            let frac = if count > 1 {
                k as f64 / (count - 1) as f64
            } else {
                0.0
            };
            Ok(SyntheticSigner {
                id: format!("S{}", k + 1),
                seed: s,
                speed: spec.fastest * spec.speed_ratio.powf(frac),
                transform,
                bias,
                noise: spec.noise,
                hand_color: HAND_COLORS[k % HAND_COLORS.len()],
                rest_amplitude: spec.rest_amplitude,
            })
        })
        .collect()
}

/// Letter and rest targets in descriptor space, shared by all signers.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub dim: usize,
    /// One target per label index; boundary labels hold the rest pose.
    pub targets: Vec<Vec<f64>>,
}

impl Geometry {
    /// Projects each label's phonetic embedding (centered over the 26
    /// letters) through a fixed random map.
    pub fn new(alphabet: &LetterAlphabet, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("descriptor dimension must be positive"));
        }
        let table = PhoneticFeatureTable;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / dim as f64).sqrt()).expect("valid");
        let camera: Vec<f64> = (0..dim * PHONETIC_EMBED_DIM)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let mut mean = [0.0; PHONETIC_EMBED_DIM];
        for l in 0..26 {
            let e = table
                .row_for_label(alphabet, l)
                .expect("letter row")
                .embed();
            mean.iter_mut().zip(e).for_each(|(m, v)| *m += v / 26.0);
        }
        let project = |e: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|i| {
                    (0..PHONETIC_EMBED_DIM)
                        .map(|j| camera[i * PHONETIC_EMBED_DIM + j] * (e[j] - mean[j]))
                        .sum()
                })
                .collect()
        };
        let rest: Vec<f64> = (0..dim).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        let targets = (0..alphabet.class_count())
            .map(|l| match table.row_for_label(alphabet, l) {
                Some(r) => project(&r.embed()),
                None => rest.clone(),
            })
            .collect();
        Ok(Geometry { dim, targets })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWord {
    pub word: String,
    pub signer: String,
    pub seed: u64,
    /// Labels with the boundary silences.
    pub labels: Vec<usize>,
    pub segmentation: Segmentation,
    /// Peak frame of every segment, silences included.
    pub peaks: Vec<usize>,
    /// Durations before rounding and clamping.
    pub raw_durations: Vec<f64>,
    /// Noise-free trajectory before the signer's appearance map.
    #[serde(skip)]
    pub trajectory: Array2<f64>,
    #[serde(skip)]
    pub descriptors: Array2<f64>,
}

impl SyntheticWord {
    pub fn frames(&self) -> usize {
        self.descriptors.nrows()
    }

    /// Letters only, boundary silences dropped.
    pub fn letters(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != BOS && l != EOS)
            .collect()
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// One word token. Each segment's peak frame sits at its middle and holds the
/// label's target exactly; frames between peaks follow a smoothstep, so hand
/// motion is zero at the peaks and largest between them.
pub fn generate_word(
    word: &str,
    signer: &SyntheticSigner,
    alphabet: &LetterAlphabet,
    geometry: &Geometry,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticWord> {
    if word.is_empty() {
        return Err(Error::empty("word"));
    }
    signer.validate(geometry.dim)?;
    let tokens = alphabet.tokenize(word)?;
    if let Some(i) = tokens.windows(2).position(|p| p[0] == p[1]) {
        // adjacent segments must change label
        return Err(Error::InvalidWord {
            word: word.to_string(),
            position: i + 1,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= geometry.targets.len()) {
        return Err(Error::UnknownSymbol(format!("#{bad}")));
    }
    let (lo, hi) = cfg.letter_frames;
    let (slo, shi) = cfg.silence_frames;
    if !(lo > 0.0 && hi >= lo && slo > 0.0 && shi >= slo) {
        return Err(Error::invalid(
            "duration ranges must be positive and ordered",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![BOS];
    labels.extend_from_slice(&tokens);
    labels.push(EOS);
    let mut raw = Vec::with_capacity(labels.len());
    let mut durations = Vec::with_capacity(labels.len());
    for &l in &labels {
        if l == BOS || l == EOS {
            let r = rng.random_range(slo..=shi) * signer.speed;
            raw.push(r);
            durations.push((r.round() as usize).max(4));
        } else {
            let mut r = rng.random_range(lo..=hi) * signer.speed;
            if l >= EOS + 1 {
                r *= cfg.doubled_stretch;
            }
            raw.push(r);
            durations.push((r.round() as usize).clamp(2, 40));
        }
    }
    let mut segs = Vec::with_capacity(labels.len());
    let mut peaks = Vec::with_capacity(labels.len());
    let mut t = 0;
    for (&l, &d) in labels.iter().zip(&durations) {
        segs.push(Segment::new(l, t, t + d));
        peaks.push(t + d / 2);
        t += d;
    }
    let t_len = t;
    let dim = geometry.dim;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let rest = &geometry.targets[BOS];
    let off = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let dir: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        rest.iter()
            .zip(&dir)
            .map(|(r, v)| r + signer.rest_amplitude * v / n)
            .collect()
    };
    // every segment holds its target except for `transition_frames` at
    // each inner edge (twice that at the outer edges of the silences)
    let tau = cfg.transition_frames;
    let n_seg = segs.len();
    let holds: Vec<(usize, usize)> = segs
        .iter()
        .zip(&peaks)
        .enumerate()
        .map(|(i, (s, &p))| {
            let lead = if i == 0 { 2 * tau } else { tau };
            let tail = if i + 1 == n_seg { 2 * tau } else { tau };
            let a = (s.start + lead).min(p);
            let b = (s.end - 1).saturating_sub(tail).max(p);
            (a, b)
        })
        .collect();
    let mut traj = Array2::zeros((t_len, dim));
    let mut put = |f: usize, a: &[f64], b: &[f64], u: f64| {
        let s = smoothstep(u);
        for k in 0..dim {
            traj[[f, k]] = a[k] + s * (b[k] - a[k]);
        }
    };
    let first = off(&mut rng);
    let last = off(&mut rng);
    let t0 = &geometry.targets[labels[0]];
    for f in 0..holds[0].0 {
        put(f, &first, t0, f as f64 / holds[0].0 as f64);
    }
    for (i, &l) in labels.iter().enumerate() {
        let target = &geometry.targets[l];
        for f in holds[i].0..=holds[i].1 {
            put(f, target, target, 0.0);
        }
        if let Some(&next) = labels.get(i + 1) {
            let (a, b) = (holds[i].1 as f64, holds[i + 1].0 as f64);
            let m = segs[i].end as f64 - 0.5;
            for f in holds[i].1 + 1..holds[i + 1].0 {
                let t = f as f64;
                let u = if t <= m {
                    0.5 * (t - a) / (m - a)
                } else {
                    0.5 + 0.5 * (t - m) / (b - m)
                };
                put(f, target, &geometry.targets[next], u);
            }
        }
    }
    let (a, tl) = (holds[labels.len() - 1].1, &geometry.targets[EOS]);
    for f in a + 1..t_len {
        put(f, tl, &last, (f - a) as f64 / (t_len - 1 - a) as f64);
    }
    let mut desc = Array2::zeros((t_len, dim));
    for f in 0..t_len {
        for i in 0..dim {
            let mut v = signer.bias[i];
            for k in 0..dim {
                v += signer.transform[i * dim + k] * traj[[f, k]];
            }
            if signer.noise > 0.0 {
                v += signer.noise * normal.sample(&mut rng);
            }
            desc[[f, i]] = v;
        }
    }
    Ok(SyntheticWord {
        word: word.to_ascii_uppercase(),
        signer: signer.id.clone(),
        seed,
        labels,
        segmentation: Segmentation(segs),
        peaks,
        raw_durations: raw,
        trajectory: traj,
        descriptors: desc,
    })
}

/// Every doubled pair occurring in `words`, sorted.
pub fn doubled_tokens<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for w in words {
        let b: Vec<u8> = w.as_ref().bytes().map(|c| c.to_ascii_uppercase()).collect();
        for p in b.windows(2) {
            if p[0] == p[1] && p[0].is_ascii_uppercase() {
                set.insert(String::from_utf8(p.to_vec()).expect("ascii"));
            }
        }
    }
    set.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub signer: usize,
    pub word_index: usize,
    pub word: String,
    pub rep: usize,
    pub seed: u64,
    /// Descriptor matrix path, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub doubled: Vec<String>,
    pub words: Vec<String>,
    pub repetitions: usize,
    pub signers: Vec<SyntheticSigner>,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn alphabet(&self) -> Result<LetterAlphabet> {
        LetterAlphabet::with_doubled(&self.doubled)
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub alphabet: LetterAlphabet,
    /// In manifest entry order.
    pub items: Vec<SyntheticWord>,
}

/// Each word `repetitions` times per signer, ordered by signer, word and
/// repetition.
pub fn generate_corpus<S: AsRef<str>>(
    words: &[S],
    signers: &[SyntheticSigner],
    repetitions: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Corpus> {
    if words.is_empty() {
        return Err(Error::empty("word list"));
    }
    if signers.is_empty() || repetitions == 0 {
        return Err(Error::empty("signers or repetitions"));
    }
    let doubled = if cfg.doubled_letters {
        doubled_tokens(words)
    } else {
        Vec::new()
    };
    let words: Vec<String> = words
        .iter()
        .map(|w| w.as_ref().to_ascii_uppercase())
        .collect();
    let mut entries = Vec::new();
    for s in 0..signers.len() {
        for (w, word) in words.iter().enumerate() {
            for rep in 0..repetitions {
                entries.push(ManifestEntry {
                    signer: s,
                    word_index: w,
                    word: word.clone(),
                    rep,
                    seed: derive_seed(seed, &[s as u64, w as u64, rep as u64]),
                    descriptors: None,
                    truth: None,
                });
            }
        }
    }
    let manifest = CorpusManifest {
        seed,
        config: cfg.clone(),
        doubled,
        words,
        repetitions,
        signers: signers.to_vec(),
        entries,
    };
    regenerate(manifest)
}

/// Rebuilds every token from the seeds recorded in a manifest.
pub fn regenerate(manifest: CorpusManifest) -> Result<Corpus> {
    let alphabet = manifest.alphabet()?;
    let geometry = Geometry::new(
        &alphabet,
        manifest.config.dim,
        manifest.config.geometry_seed,
    )?;
    let items = manifest
        .entries
        .par_iter()
        .map(|e| {
            let signer = manifest.signers.get(e.signer).ok_or_else(|| {
                Error::ManifestMismatch(format!("signer #{} not in manifest", e.signer))
            })?;
            generate_word(
                &e.word,
                signer,
                &alphabet,
                &geometry,
                &manifest.config,
                e.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        manifest,
        alphabet,
        items,
    })
}

/// Rendered frames and their exact hand masks.
#[derive(Clone, Debug)]
pub struct RenderedWord {
    pub frames: Vec<RgbImage>,
    pub masks: Vec<Mask>,
}

/// Maps a trajectory frame to (orientation, axis ratio, center offset).
fn ellipse_params(v: &[f64], cfg: &ImageConfig) -> (f64, f64, f64, f64) {
    let at = |i: usize| v.get(i).copied().unwrap_or(0.0);
    let theta = at(1).atan2(at(0));
    let ratio = 0.4 + 0.5 / (1.0 + (-at(2)).exp());
    let dx = 0.08 * cfg.width as f64 * at(3).tanh();
    let dy = 0.08 * cfg.height as f64 * at(4).tanh();
    (theta, ratio, dx, dy)
}

/// Background plus a hand-colored ellipse of fixed area whose orientation,
/// eccentricity and position follow the word's trajectory.
pub fn render_frames(
    word: &SyntheticWord,
    signer: &SyntheticSigner,
    cfg: &ImageConfig,
) -> Result<RenderedWord> {
    if cfg.width == 0 || cfg.height == 0 || !(cfg.hand_fraction > 0.0 && cfg.hand_fraction < 0.5) {
        return Err(Error::invalid(
            "image size must be positive and the hand fraction in (0, 0.5)",
        ));
    }
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let area = cfg.hand_fraction * (w * h) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(word.seed, &[1]));
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-12)).expect("valid");
    let mut frames = Vec::with_capacity(word.frames());
    let mut masks = Vec::with_capacity(word.frames());
    for f in 0..word.frames() {
        let row = word.trajectory.row(f);
        let v: Vec<f64> = row.iter().copied().collect();
        let (theta, ratio, dx, dy) = ellipse_params(&v, cfg);
        let a = (area / (std::f64::consts::PI * ratio)).sqrt();
        let b = a * ratio;
        let (cx, cy) = (w as f64 / 2.0 + dx, h as f64 / 2.0 + dy);
        let (c, s) = (theta.cos(), theta.sin());
        let mut mask = Mask::new(w, h);
        let mut img = RgbImage::new(cfg.width, cfg.height);
        for y in 0..h {
            for x in 0..w {
                let px = x as f64 + 0.5 - cx;
                let py = y as f64 + 0.5 - cy;
                let u = (c * px + s * py) / a;
                let q = (-s * px + c * py) / b;
                let inside = u * u + q * q <= 1.0;
                mask.set(x, y, inside);
                let base = if inside {
                    signer.hand_color.map(|v| v as f64)
                } else {
                    [
                        40.0 + 30.0 * (x as f64 / w as f64),
                        70.0 + 20.0 * (y as f64 / h as f64),
                        120.0,
                    ]
                };
                let mut px = [0u8; 3];
                for k in 0..3 {
                    let n = if cfg.pixel_noise > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    px[k] = (base[k] + n).round().clamp(0.0, 255.0) as u8;
                }
                img.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        frames.push(img);
        masks.push(mask);
    }
    Ok(RenderedWord { frames, masks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scrf::{peak_curve, single_peak};

    fn setup() -> (LetterAlphabet, Geometry, SynthConfig) {
        let alphabet = LetterAlphabet::with_doubled(&["ZZ", "EE", "FF", "OO", "KK"]).unwrap();
        let cfg = SynthConfig::default();
        let g = Geometry::new(&alphabet, cfg.dim, cfg.geometry_seed).unwrap();
        (alphabet, g, cfg)
    }

    #[test]
    fn deterministic_and_exact_at_peaks() {
        let (alphabet, g, cfg) = setup();
        let signer = SyntheticSigner::neutral("n", cfg.dim);
        let a = generate_word("TULIP", &signer, &alphabet, &g, &cfg, 9).unwrap();
        let b = generate_word("TULIP", &signer, &alphabet, &g, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.descriptors, b.descriptors);
        for (&l, &p) in a.labels.iter().zip(&a.peaks) {
            assert_eq!(a.descriptors.row(p).to_vec(), g.targets[l]);
        }
        a.segmentation.validate(a.frames()).unwrap();
        assert_eq!(a.labels.first(), Some(&BOS));
        assert_eq!(a.labels.last(), Some(&EOS));
    }

    #[test]
    fn speed_scales_raw_durations() {
        let (alphabet, g, cfg) = setup();
        let mut slow = SyntheticSigner::neutral("n", cfg.dim);
        let fast = slow.clone();
        slow.speed = 2.0;
        let a = generate_word("JAZZ", &fast, &alphabet, &g, &cfg, 3).unwrap();
        let b = generate_word("JAZZ", &slow, &alphabet, &g, &cfg, 3).unwrap();
        for (x, y) in a.raw_durations.iter().zip(&b.raw_durations) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a.labels, vec![BOS, 9, 0, 28, EOS]);
        let plain = LetterAlphabet::new();
        assert!(matches!(
            generate_word("JAZZ", &fast, &plain, &g, &cfg, 3),
            Err(Error::InvalidWord { position: 3, .. })
        ));
    }

    #[test]
    fn one_peak_per_segment() {
        let (alphabet, g, cfg) = setup();
        let spec = SignerSpec {
            noise: 0.0,
            ..Default::default()
        };
        let signers = make_signers(4, cfg.dim, &spec, 5).unwrap();
        for (k, s) in signers.iter().enumerate() {
            for (i, w) in ["A", "QUIZ", "COFFEE", "JAZZ", "WYVERN", "BOOKKEEPER"]
                .iter()
                .enumerate()
            {
                let word = generate_word(w, s, &alphabet, &g, &cfg, (k * 10 + i) as u64).unwrap();
                let curve = peak_curve(&word.descriptors);
                for seg in word.segmentation.segments() {
                    assert!(
                        single_peak(&curve, seg.start, seg.end),
                        "{w} {seg:?} {:?} {:?}",
                        &curve[seg.start.saturating_sub(3)..(seg.end + 3).min(curve.len())],
                        word.peaks
                    );
                    assert!((2..=40).contains(&seg.len()) || seg.label == BOS || seg.label == EOS);
                }
            }
        }
    }

    #[test]
    fn signers_are_orthogonal_with_spread_speeds() {
        let s = make_signers(4, 6, &SignerSpec::default(), 1).unwrap();
        let ratio = s[3].speed / s[0].speed;
        assert!((ratio - 1.8).abs() < 1e-12);
        for sig in &s {
            let q = DMatrix::from_row_slice(6, 6, &sig.transform);
            let err = (q.transpose() * &q - DMatrix::<f64>::identity(6, 6))
                .abs()
                .max();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn corpus_shape_and_regeneration() {
        let words = ["ABC", "JAZZ", "TEE"];
        let signers = make_signers(2, 24, &SignerSpec::default(), 3).unwrap();
        let c = generate_corpus(&words, &signers, 2, &SynthConfig::default(), 11).unwrap();
        assert_eq!(c.items.len(), 12);
        assert_eq!(c.manifest.doubled, vec!["EE".to_string(), "ZZ".to_string()]);
        let again = regenerate(c.manifest.clone()).unwrap();
        for (a, b) in c.items.iter().zip(&again.items) {
            assert_eq!(a.descriptors, b.descriptors);
        }
        // the two repetitions differ
        assert_ne!(c.items[0].descriptors, c.items[1].descriptors);
    }

    #[test]
    fn rendered_hand_area() {
        let (alphabet, g, cfg) = setup();
        let s = SyntheticSigner::neutral("n", cfg.dim);
        let w = generate_word("AB", &s, &alphabet, &g, &cfg, 1).unwrap();
        let r = render_frames(&w, &s, &cfg.image).unwrap();
        let want = cfg.image.hand_fraction * (64.0 * 48.0);
        for m in &r.masks {
            let n = m.count() as f64;
            assert!((n - want).abs() <= 0.1 * want, "{n} vs {want}");
        }
    }
}
