use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segspell_core::vision::{fit_pca, hog_descriptor, HogConfig, Mask};
use std::f64::consts::PI;

const N: usize = 128;

fn pixel(img: &Array2<f64>, r: isize, c: isize) -> f64 {
    img[[
        r.clamp(0, N as isize - 1) as usize,
        c.clamp(0, N as isize - 1) as usize,
    ]]
}

/// Histograms the original image's per-pixel gradients at the positions and
/// orientations they take after a clockwise quarter turn.
fn rotated_oracle(img: &Array2<f64>, grids: &[usize], bins: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for &g in grids {
        let cell = N / g;
        let mut h = vec![0.0; g * g * bins];
        for r in 0..N as isize {
            for c in 0..N as isize {
                let gx = (pixel(img, r, c + 1) - pixel(img, r, c - 1)) / 2.0;
                let gy = (pixel(img, r + 1, c) - pixel(img, r - 1, c)) / 2.0;
                let m = (gx * gx + gy * gy).sqrt();
                if m == 0.0 {
                    continue;
                }
                // pixel (r, c) lands at (c, N-1-r); its angle turns by a quarter
                let (nr, nc) = (c as usize, N - 1 - r as usize);
                let mut a = gy.atan2(gx) + PI / 2.0;
                while a >= PI {
                    a -= PI;
                }
                while a < 0.0 {
                    a += PI;
                }
                let b = ((a / (PI / bins as f64)) as usize).min(bins - 1);
                h[((nr / cell) * g + nc / cell) * bins + b] += m;
            }
        }
        let norm = (h.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
        out.extend(h.iter().map(|v| v / norm));
    }
    out
}

#[test]
fn hog_quarter_turn_matches_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = Array2::from_shape_fn((N, N), |(r, c)| {
        ((r as f64) * 0.07).sin() + (c as f64 * 0.05).cos() + 0.3 * rng.random::<f64>()
    });
    // inverse of the oracle placement: rot[r][c] = img[N-1-c][r]
    let rot = Array2::from_shape_fn((N, N), |(r, c)| img[[N - 1 - c, r]]);
    let mut full = Mask::new(N, N);
    full.data.iter_mut().for_each(|b| *b = true);
    let cfg = HogConfig::default();
    let got = hog_descriptor(&rot, &full, &cfg).unwrap();
    let want = rotated_oracle(&img, &cfg.grids, cfg.bins);
    assert_eq!(got.len(), 2688);
    let err = got
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-9, "max deviation {err}");

    // the same relation as a permutation of the unrotated descriptor
    let orig = hog_descriptor(&img, &full, &cfg).unwrap();
    let mut off = 0;
    for &g in &cfg.grids {
        for cr in 0..g {
            for cc in 0..g {
                for b in 0..8 {
                    let src = off + (cr * g + cc) * 8 + b;
                    let dst = off + (cc * g + g - 1 - cr) * 8 + (b + 4) % 8;
                    assert!((orig[src] - got[dst]).abs() < 1e-9);
                }
            }
        }
        off += g * g * 8;
    }
}

#[test]
fn hog_ignores_pixels_outside_the_mask() {
    let cfg = HogConfig::default();
    let m = Mask::polygon(
        64,
        64,
        &[(10.0, 10.0), (50.0, 12.0), (40.0, 55.0), (8.0, 40.0)],
    );
    let a = Array2::from_shape_fn((64, 64), |(r, c)| ((r * 13 + c * 7) % 23) as f64);
    let mut b = a.clone();
    // change pixels far from the hand so they cannot reach it through gradients
    let near = m.dilate(3);
    for r in 0..64 {
        for c in 0..64 {
            if !near.get(c, r) {
                b[[r, c]] = 99.0;
            }
        }
    }
    assert_eq!(
        hog_descriptor(&a, &m, &cfg).unwrap(),
        hog_descriptor(&b, &m, &cfg).unwrap()
    );
}

/// Closed-form eigen decomposition of a symmetric 2×2 matrix, largest first.
fn eig2(a: f64, b: f64, d: f64) -> [(f64, [f64; 2]); 2] {
    let tr = a + d;
    let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = tr / 2.0 - disc;
    let v = |l: f64| {
        let (x, y) = if b.abs() > 1e-15 {
            (b, l - a)
        } else if (l - a).abs() < 1e-12 {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    };
    [(l1, v(l1)), (l2, v(l2))]
}

#[test]
fn pca_toy_matches_closed_form() {
    let x = ndarray::array![[1.0, 2.0], [3.0, 3.0], [4.0, 7.0]];
    let model = fit_pca(&x, 2).unwrap();
    let mean = [8.0 / 3.0, 4.0];
    let dev: Vec<[f64; 2]> = (0..3)
        .map(|i| [x[[i, 0]] - mean[0], x[[i, 1]] - mean[1]])
        .collect();
    let s = |p: usize, q: usize| dev.iter().map(|d| d[p] * d[q]).sum::<f64>() / 2.0;
    let eig = eig2(s(0, 0), s(0, 1), s(1, 1));
    for (k, (l, v)) in eig.iter().enumerate() {
        assert!((model.variances[k] - l).abs() < 1e-9);
        for i in 0..3 {
            let z = model.apply(x.row(i)).unwrap()[k];
            let want = dev[i][0] * v[0] + dev[i][1] * v[1];
            // eigenvectors are defined up to sign
            assert!((z.abs() - want.abs()).abs() < 1e-9);
        }
    }
    let m = ndarray::Array1::from(mean.to_vec());
    assert!(model
        .apply(m.view())
        .unwrap()
        .iter()
        .all(|v| v.abs() < 1e-9));
}
