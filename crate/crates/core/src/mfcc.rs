//! Mel-frequency cepstral coefficients: pre-emphasis, framing, power
//! spectrum, mel filterbank, log compression and orthonormal DCT-II,
//! followed by fixed-size segmentation.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor added inside the logarithm of filterbank energies.
pub const LOG_FLOOR: f64 = 1e-10;
pub const EXPECTED_RATE: u32 = 16_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Symmetric window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / denom;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub alpha: f64,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub window: WindowKind,
    pub nfft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// Upper filterbank edge; `None` means half the sample rate.
    pub fmax_hz: Option<f64>,
    pub n_coeffs: usize,
    pub segment_frames: usize,
    pub overlap_frames: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            alpha: 0.97,
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            window: WindowKind::Hamming,
            nfft: 512,
            n_mels: 40,
            fmin_hz: 0.0,
            fmax_hz: None,
            n_coeffs: 13,
            segment_frames: 469,
            overlap_frames: 128,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.frame_len_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fmax(&self, sample_rate: u32) -> f64 {
        self.fmax_hz.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn segment_hop(&self) -> usize {
        self.segment_frames - self.overlap_frames
    }

    /// Frame count for a signal of `samples` samples.
    pub fn num_frames(&self, samples: usize, sample_rate: u32) -> usize {
        let frame = self.frame_len(sample_rate);
        if samples < frame {
            0
        } else {
            1 + (samples - frame) / self.hop_len(sample_rate)
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return Err(Error::Argument(format!(
                "n_coeffs {} must be in 1..={} (n_mels)",
                self.n_coeffs, self.n_mels
            )));
        }
        if self.overlap_frames >= self.segment_frames {
            return Err(Error::Argument(format!(
                "overlap {} must be below segment length {}",
                self.overlap_frames, self.segment_frames
            )));
        }
        if !self.nfft.is_power_of_two() {
            return Err(Error::Argument(format!("nfft {} is not a power of two", self.nfft)));
        }
        let frame = self.frame_len(sample_rate);
        if frame == 0 || self.hop_len(sample_rate) == 0 {
            return Err(Error::Argument("frame and hop must span at least one sample".into()));
        }
        if self.nfft < frame {
            return Err(Error::Argument(format!("nfft {} is shorter than a {frame}-sample frame", self.nfft)));
        }
        let fmax = self.fmax(sample_rate);
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax && fmax <= sample_rate as f64 / 2.0) {
            return Err(Error::Argument(format!(
                "filterbank edges {}..{fmax} Hz invalid at {sample_rate} Hz",
                self.fmin_hz
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.9 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("pre-emphasis coefficient {alpha} must lie strictly in (0.9, 1)")))
    }
}

/// `[n_coeffs × T]` coefficient matrix of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccMatrix {
    pub coeffs: Matrix,
    /// Start time of each frame in seconds.
    pub frame_times: Vec<f64>,
    pub config: MfccConfig,
    pub source_id: String,
}

impl MfccMatrix {
    pub fn num_frames(&self) -> usize {
        self.coeffs.cols
    }
}

/// Fixed-size window of an [`MfccMatrix`]: `[n_coeffs × segment_frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSegment {
    pub data: Matrix,
    pub parent_id: String,
    pub index: usize,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `y[0] = x[0]`, `y[n] = x[n] − α·x[n−1]`.
pub fn pre_emphasis(signal: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if signal.is_empty() {
        return Err(Error::Empty("signal"));
    }
    let mut out = Vec::with_capacity(signal.len());
    out.push(signal[0]);
    out.extend(signal.windows(2).map(|w| w[1] - alpha * w[0]));
    Ok(out)
}

/// Splits into `1 + (len − frame)/hop` frames and applies the window.
pub fn frame_and_window(signal: &[f64], config: &MfccConfig, sample_rate: u32) -> Result<Matrix> {
    let frame = config.frame_len(sample_rate);
    let hop = config.hop_len(sample_rate);
    if frame == 0 || hop == 0 {
        return Err(Error::Argument("frame and hop must span at least one sample".into()));
    }
    if signal.len() < frame {
        return Err(Error::TooShort { what: "framing", needed: frame, actual: signal.len() });
    }
    let window = config.window.coefficients(frame);
    let count = 1 + (signal.len() - frame) / hop;
    let mut out = Matrix::zeros(count, frame);
    for i in 0..count {
        let src = &signal[i * hop..i * hop + frame];
        for ((o, s), w) in out.row_mut(i).iter_mut().zip(src).zip(&window) {
            *o = s * w;
        }
    }
    Ok(out)
}

/// `|DFT|²` of each zero-padded frame, bins `0..=nfft/2`.
pub fn power_spectrum(frames: &Matrix, nfft: usize) -> Result<Matrix> {
    if !nfft.is_power_of_two() {
        return Err(Error::Argument(format!("nfft {nfft} is not a power of two")));
    }
    if nfft < frames.cols {
        return Err(Error::Argument(format!("nfft {nfft} is shorter than frame length {}", frames.cols)));
    }
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let bins = nfft / 2 + 1;
    let mut out = Matrix::zeros(frames.rows, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for r in 0..frames.rows {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, v) in buf.iter_mut().zip(frames.row(r)) {
            b.re = *v;
        }
        fft.process(&mut buf);
        for (o, c) in out.row_mut(r).iter_mut().zip(&buf) {
            *o = c.norm_sqr();
        }
    }
    Ok(out)
}

/// Triangular filters with peaks uniformly spaced on the mel scale between
/// `fmin` and `fmax`; weights are evaluated at each bin's centre frequency.
pub fn mel_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<Matrix> {
    let fmax = config.fmax(sample_rate);
    let nyquist = sample_rate as f64 / 2.0;
    if !(config.fmin_hz >= 0.0 && config.fmin_hz < fmax && fmax <= nyquist) {
        return Err(Error::Argument(format!(
            "filterbank edges {}..{fmax} Hz invalid at {sample_rate} Hz",
            config.fmin_hz
        )));
    }
    if config.n_mels == 0 || !config.nfft.is_power_of_two() {
        return Err(Error::Argument("need n_mels > 0 and a power-of-two nfft".into()));
    }
    let (mel_lo, mel_hi) = (hz_to_mel(config.fmin_hz), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bins = config.nfft / 2 + 1;
    let mut fb = Matrix::zeros(config.n_mels, bins);
    for m in 0..config.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / config.nfft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II basis, `[n_out × n_in]`.
pub fn dct_basis(n_in: usize, n_out: usize) -> Matrix {
    let mut basis = Matrix::zeros(n_out, n_in);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
        for m in 0..n_in {
            basis.set(k, m, scale * (PI * k as f64 * (2 * m + 1) as f64 / (2 * n_in) as f64).cos());
        }
    }
    basis
}

pub fn extract_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<MfccMatrix> {
    config.validate(clip.sample_rate)?;
    if clip.sample_rate != EXPECTED_RATE {
        log::warn!(
            "{}: MFCC extraction at {} Hz (pipeline expects {EXPECTED_RATE} Hz)",
            clip.source_id,
            clip.sample_rate
        );
    }
    let signal: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    if signal.is_empty() {
        return Err(Error::TooShort { what: "framing", needed: config.frame_len(clip.sample_rate), actual: 0 });
    }
    let emphasized = pre_emphasis(&signal, config.alpha)?;
    let frames = frame_and_window(&emphasized, config, clip.sample_rate)?;
    let power = power_spectrum(&frames, config.nfft)?;
    let fb = mel_filterbank(config, clip.sample_rate)?;
    let dct = dct_basis(config.n_mels, config.n_coeffs);

    let t = frames.rows;
    let mut coeffs = Matrix::zeros(config.n_coeffs, t);
    let mut log_mel = vec![0.0; config.n_mels];
    for f in 0..t {
        let spec = power.row(f);
        for (m, slot) in log_mel.iter_mut().enumerate() {
            let energy: f64 = fb.row(m).iter().zip(spec).map(|(w, p)| w * p).sum();
            *slot = (energy + LOG_FLOOR).ln();
        }
        for k in 0..config.n_coeffs {
            let c: f64 = dct.row(k).iter().zip(&log_mel).map(|(b, x)| b * x).sum();
            coeffs.set(k, f, c);
        }
    }
    let hop = config.hop_len(clip.sample_rate) as f64 / clip.sample_rate as f64;
    Ok(MfccMatrix {
        coeffs,
        frame_times: (0..t).map(|i| i as f64 * hop).collect(),
        config: config.clone(),
        source_id: clip.source_id.clone(),
    })
}

/// Windows of `segment_frames` columns at offsets `i · (segment_frames − overlap_frames)`.
/// A trailing partial window is dropped.
pub fn segment(m: &MfccMatrix, segment_frames: usize, overlap_frames: usize) -> Result<Vec<FeatureSegment>> {
    if overlap_frames >= segment_frames {
        return Err(Error::Argument(format!(
            "overlap {overlap_frames} must be below segment length {segment_frames}"
        )));
    }
    let t = m.num_frames();
    if t < segment_frames {
        return Err(Error::TooShort { what: "segmentation (frames)", needed: segment_frames, actual: t });
    }
    let hop = segment_frames - overlap_frames;
    let count = 1 + (t - segment_frames) / hop;
    Ok((0..count)
        .map(|i| FeatureSegment {
            data: m.coeffs.columns(i * hop, segment_frames),
            parent_id: m.source_id.clone(),
            index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pre_emphasis_examples() {
        let y = pre_emphasis(&[1.0; 5], 0.97).unwrap();
        assert_eq!(y[0], 1.0);
        assert!(y[1..].iter().all(|v| (v - 0.03).abs() < 1e-12));
        assert_eq!(pre_emphasis(&[1.0, 0.0, 0.0], 0.95).unwrap(), vec![1.0, -0.95, 0.0]);
        assert!(pre_emphasis(&[1.0], 0.9).is_err());
        assert!(pre_emphasis(&[1.0], 1.0).is_err());
        assert!(pre_emphasis(&[], 0.97).is_err());
    }

    #[test]
    fn framing_counts() {
        let cfg = MfccConfig::default();
        let frames = frame_and_window(&vec![0.0; 240_000], &cfg, 16000).unwrap();
        assert_eq!((frames.rows, frames.cols), (1498, 400));
        let one = frame_and_window(&vec![0.0; 400], &cfg, 16000).unwrap();
        assert_eq!(one.rows, 1);
        assert!(matches!(
            frame_and_window(&vec![0.0; 399], &cfg, 16000),
            Err(Error::TooShort { needed: 400, .. })
        ));
    }

    #[test]
    fn constant_signal_frames_equal_window() {
        for kind in [WindowKind::Rectangular, WindowKind::Hamming] {
            let cfg = MfccConfig { window: kind, ..MfccConfig::default() };
            let frames = frame_and_window(&vec![1.0; 1000], &cfg, 16000).unwrap();
            let w = kind.coefficients(400);
            for r in 0..frames.rows {
                assert_eq!(frames.row(r), w.as_slice());
            }
        }
    }

    #[test]
    fn power_spectrum_special_inputs() {
        let mut impulse = Matrix::zeros(1, 400);
        impulse.set(0, 0, 1.0);
        let p = power_spectrum(&impulse, 512).unwrap();
        assert_eq!(p.cols, 257);
        assert!(p.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let zeros = power_spectrum(&Matrix::zeros(2, 400), 512).unwrap();
        assert!(zeros.data.iter().all(|&v| v == 0.0));
        assert!(power_spectrum(&impulse, 500).is_err());
        assert!(power_spectrum(&impulse, 256).is_err());
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let expect = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - expect).abs() / expect < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        let bad = MfccConfig { fmin_hz: 9000.0, ..MfccConfig::default() };
        assert!(mel_filterbank(&bad, 16000).is_err());
        let above = MfccConfig { fmax_hz: Some(9000.0), ..MfccConfig::default() };
        assert!(mel_filterbank(&above, 16000).is_err());
    }

    #[test]
    fn filterbank_structure() {
        let fb = mel_filterbank(&MfccConfig::default(), 16000).unwrap();
        assert_eq!((fb.rows, fb.cols), (40, 257));
        for m in 0..fb.rows {
            assert!(fb.row(m).iter().sum::<f64>() > 0.0);
            assert!(fb.row(m).iter().all(|&w| w >= 0.0));
        }
        for k in 0..fb.cols {
            assert!((0..fb.rows).filter(|&m| fb.get(m, k) > 0.0).count() <= 2);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let b = dct_basis(40, 40);
        for i in 0..40 {
            for j in 0..40 {
                let d: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    fn matrix_with_frames(t: usize) -> MfccMatrix {
        MfccMatrix {
            coeffs: Matrix::from_vec(13, t, (0..13 * t).map(|i| i as f64).collect()).unwrap(),
            frame_times: vec![0.0; t],
            config: MfccConfig::default(),
            source_id: "m".into(),
        }
    }

    #[test]
    fn segment_counts() {
        assert_eq!(segment(&matrix_with_frames(1498), 469, 128).unwrap().len(), 4);
        assert_eq!(segment(&matrix_with_frames(469), 469, 128).unwrap().len(), 1);
        assert_eq!(segment(&matrix_with_frames(938), 469, 128).unwrap().len(), 2);
        assert!(matches!(
            segment(&matrix_with_frames(468), 469, 128),
            Err(Error::TooShort { needed: 469, .. })
        ));
    }

    #[test]
    fn segments_are_exact_submatrices() {
        let m = matrix_with_frames(1498);
        for s in segment(&m, 469, 128).unwrap() {
            assert_eq!((s.data.rows, s.data.cols), (13, 469));
            for r in 0..13 {
                assert_eq!(s.data.row(r), &m.coeffs.row(r)[s.index * 341..s.index * 341 + 469]);
            }
        }
    }

    #[test]
    fn silent_clip_has_constant_columns() {
        let clip = AudioClip::new(vec![0.0; 4000], 16000, "z").unwrap();
        let m = extract_mfcc(&clip, &MfccConfig::default()).unwrap();
        let expect = {
            let b = dct_basis(40, 13);
            let v = vec![LOG_FLOOR.ln(); 40];
            (0..13).map(|k| b.row(k).iter().zip(&v).map(|(x, y)| x * y).sum::<f64>()).collect::<Vec<_>>()
        };
        for f in 0..m.num_frames() {
            for k in 0..13 {
                assert!((m.coeffs.get(k, f) - expect[k]).abs() < 1e-9);
            }
        }
    }
}
