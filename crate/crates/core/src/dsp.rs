//! Shared signal-processing helpers.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Periodic Hann window, the variant that overlap-adds to a constant.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Frequency of the strongest non-DC bin of a Hann-windowed spectrum, in Hz.
pub fn dominant_frequency(samples: &[f32], sample_rate: u32) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let window = hann_periodic(n);
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&window)
        .map(|(s, w)| Complex::new(*s as f64 * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (bin, _) = buf[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm_sqr()))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    bin as f64 * sample_rate as f64 / n as f64
}

/// Centered short-time Fourier transform: the signal is zero-padded by
/// `n_fft / 2` on both sides and frame `t` covers `[t·hop, t·hop + n_fft)` of the padded signal.
pub fn stft(signal: &[f64], n_fft: usize, hop: usize, window: &[f64]) -> Vec<Vec<Complex<f64>>> {
    let pad = n_fft / 2;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(signal);
    padded.resize(padded.len() + pad, 0.0);
    if padded.len() < n_fft {
        padded.resize(n_fft, 0.0);
    }
    let frames = 1 + (padded.len() - n_fft) / hop;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    (0..frames)
        .map(|t| {
            let mut buf: Vec<Complex<f64>> = padded[t * hop..t * hop + n_fft]
                .iter()
                .zip(window)
                .map(|(x, w)| Complex::new(x * w, 0.0))
                .collect();
            fft.process(&mut buf);
            buf
        })
        .collect()
}

/// Inverse of [`stft`] by windowed overlap-add, normalized by the summed squared window.
pub fn istft(frames: &[Vec<Complex<f64>>], n_fft: usize, hop: usize, window: &[f64], out_len: usize) -> Vec<f64> {
    let pad = n_fft / 2;
    let total = (frames.len().saturating_sub(1)) * hop + n_fft;
    let mut acc = vec![0.0; total.max(out_len + pad)];
    let mut norm = vec![0.0; acc.len()];
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    for (t, frame) in frames.iter().enumerate() {
        let mut buf = frame.clone();
        ifft.process(&mut buf);
        for (i, (c, w)) in buf.iter().zip(window).enumerate() {
            acc[t * hop + i] += c.re / n_fft as f64 * w;
            norm[t * hop + i] += w * w;
        }
    }
    (0..out_len)
        .map(|i| {
            let k = i + pad;
            if norm[k] > 1e-10 {
                acc[k] / norm[k]
            } else {
                0.0
            }
        })
        .collect()
}

/// Wraps a phase to `[-π, π)`.
pub fn wrap_phase(p: f64) -> f64 {
    (p + PI).rem_euclid(2.0 * PI) - PI
}
