//! Iterative radix-2 FFT with a real-input fast path.

use crate::error::{Error, Result};

/// In-place radix-2 decimation-in-time FFT. Lengths must be powers of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if im.len() != n {
        return Err(Error::Shape(format!(
            "fft: re has {} entries, im has {}",
            n,
            im.len()
        )));
    }
    if !n.is_power_of_two() {
        return Err(Error::Shape(format!("fft length {n} is not a power of two")));
    }
    if n <= 1 {
        return Ok(());
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_im, w_re) = ang.sin_cos();
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Power spectrum (|X[k]|²) of a real signal for bins 0..=n/2.
///
/// Packs the even/odd samples into a half-length complex FFT and unpacks,
/// so a real frame costs one FFT of n/2 points.
pub fn real_fft_power(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::Shape(format!(
            "real fft length {n} must be a power of two >= 2"
        )));
    }
    let half = n / 2;

    let mut re: Vec<f64> = (0..half).map(|j| x[2 * j]).collect();
    let mut im: Vec<f64> = (0..half).map(|j| x[2 * j + 1]).collect();
    fft_in_place(&mut re, &mut im)?;

    // X[k] = E[k] + e^{-2πik/n} O[k], where E/O come from the packed
    // spectrum: E[k] = (Z[k] + conj(Z[half-k]))/2, O[k] = (Z[k] - conj(Z[half-k]))/(2i)
    let mut power = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let (zk_re, zk_im) = if k == half {
            (re[0], im[0])
        } else {
            (re[k], im[k])
        };
        let mirror = (half - k) % half;
        let (zm_re, zm_im) = (re[mirror], -im[mirror]);

        let e_re = 0.5 * (zk_re + zm_re);
        let e_im = 0.5 * (zk_im + zm_im);
        let o_re = 0.5 * (zk_im - zm_im);
        let o_im = -0.5 * (zk_re - zm_re);

        let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (s, c) = ang.sin_cos();
        let x_re = e_re + c * o_re - s * o_im;
        let x_im = e_im + c * o_im + s * o_re;
        power.push(x_re * x_re + x_im * x_im);
    }
    Ok(power)
}
