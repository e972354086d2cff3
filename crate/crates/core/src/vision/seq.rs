use ndarray::Array2;

use crate::classifier::fill_window;
use crate::error::{Error, Result};

/// Frames `t - w/2 ..= t + w/2` concatenated, edges replicated.
pub fn stack_window(seq: &Array2<f64>, t: usize, w: usize) -> Result<Vec<f64>> {
    if w % 2 == 0 {
        return Err(Error::invalid(format!("window size {w} must be odd")));
    }
    if t >= seq.nrows() {
        return Err(Error::invalid(format!(
            "frame {t} outside a {}-frame sequence",
            seq.nrows()
        )));
    }
    let mut out = vec![0.0; w * seq.ncols()];
    fill_window(seq, t, w, &mut out);
    Ok(out)
}

/// Linear interpolation in time to `round(T / factor)` frames; output frame
/// `j` samples input time `j * factor`.
pub fn resample_speed(seq: &Array2<f64>, factor: f64) -> Result<Array2<f64>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!(
            "speed factor {factor} must be positive"
        )));
    }
    let t = seq.nrows();
    if t < 2 {
        return Err(Error::invalid("resampling needs at least two frames"));
    }
    let n = ((t as f64 / factor).round() as usize).max(1);
    let last = (t - 1) as f64;
    let mut out = Array2::zeros((n, seq.ncols()));
    for (j, mut row) in out.outer_iter_mut().enumerate() {
        let p = (j as f64 * factor).min(last);
        let i = p.floor() as usize;
        let f = p - i as f64;
        if f == 0.0 {
            row.assign(&seq.row(i));
        } else {
            let (a, b) = (seq.row(i), seq.row(i + 1));
            row.iter_mut()
                .zip(a.iter().zip(b.iter()))
                .for_each(|(o, (x, y))| *o = x * (1.0 - f) + y * f);
        }
    }
    Ok(out)
}

/// The originals followed by one resampled copy of each per factor.
pub fn augment_speeds(seqs: &[Array2<f64>], factors: &[f64]) -> Result<Vec<Array2<f64>>> {
    let mut out = seqs.to_vec();
    for &f in factors {
        for s in seqs {
            out.push(resample_speed(s, f)?);
        }
    }
    Ok(out)
}
