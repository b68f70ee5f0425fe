//! WAV I/O, resampling and the [`AudioClip`] type.

use std::fs;
use std::path::Path;

use crate::dsp::bessel_i0;
use crate::error::{Error, Result};

/// Mono audio buffer with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        let clip = Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("sample {i} of {} is not finite", self.source_id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>, tag: &str) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            source_id: format!("{}#{tag}", self.source_id),
        }
    }
}

const WAVE_PCM: u16 = 1;
const WAVE_FLOAT: u16 = 3;
const WAVE_EXTENSIBLE: u16 = 0xFFFE;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE byte buffer. Stereo is averaged down to mono.
pub fn decode_wav(bytes: &[u8], source_id: &str) -> Result<AudioClip> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(Error::Format { offset: 0, message: "missing RIFF tag".into() });
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(Error::Format { offset: 8, message: "missing WAVE tag".into() });
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while r.pos < bytes.len() && data.is_none() {
        let chunk_at = r.pos as u64;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format { offset: chunk_at, message: format!("fmt chunk of {size} bytes") });
                }
                let body = r.take(size, "fmt chunk")?;
                let mut f = Reader { bytes: body, pos: 0 };
                let mut format = f.u16("format tag")?;
                let channels = f.u16("channels")?;
                let sample_rate = f.u32("sample rate")?;
                f.u32("byte rate")?;
                f.u16("block align")?;
                let bits = f.u16("bits per sample")?;
                if format == WAVE_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::Format {
                            offset: chunk_at,
                            message: "extensible fmt chunk without subformat".into(),
                        });
                    }
                    // cbSize, valid bits, channel mask, then the subformat GUID
                    f.take(8, "extension")?;
                    format = f.u16("subformat")?;
                }
                fmt = Some(FmtChunk { format, channels, sample_rate, bits });
            }
            b"data" => {
                if fmt.is_none() {
                    return Err(Error::Format { offset: chunk_at, message: "data chunk before fmt chunk".into() });
                }
                data = Some(r.take(size, "data chunk")?);
            }
            _ => {
                r.take(size, "chunk body")?;
            }
        }
        if size % 2 == 1 && r.pos < bytes.len() {
            r.pos += 1;
        }
    }
    let fmt = fmt.ok_or_else(|| Error::Format { offset: r.pos as u64, message: "no fmt chunk".into() })?;
    let data = data.ok_or_else(|| Error::Format { offset: r.pos as u64, message: "no data chunk".into() })?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedCodec(format!("{} channels (mono or stereo only)", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Format { offset: 24, message: "sample rate is zero".into() });
    }
    let interleaved: Vec<f32> = match (fmt.format, fmt.bits) {
        (WAVE_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (WAVE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        (format, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "format tag {format:#06x} with {bits} bits per sample (PCM16 or float32 only)"
            )))
        }
    };
    let samples = if fmt.channels == 2 {
        interleaved.chunks_exact(2).map(|p| (p[0] + p[1]) * 0.5).collect()
    } else {
        interleaved
    };
    AudioClip::new(samples, fmt.sample_rate, source_id)
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, &path.to_string_lossy())
}

/// PCM16 code for a sample: `round(v · 32768)` clamped to the i16 range.
pub fn quantize_pcm16(v: f32) -> i16 {
    (v as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

/// Writes a mono PCM16 WAV. Out-of-range samples are clamped.
pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    clip.validate()?;
    fs::write(path, encode_wav_pcm16(clip)).map_err(|e| Error::io(path, e))
}

/// Zero crossings of the sinc kept on each side, at the output cutoff.
const SINC_ZERO_CROSSINGS: f64 = 24.0;
const KAISER_BETA: f64 = 8.6;
/// Cutoff relative to the lower of the two Nyquist frequencies.
const CUTOFF_SCALE: f64 = 0.95;

/// Kernel samples per input-sample step; taps between entries are linearly interpolated.
const KERNEL_OVERSAMPLE: usize = 512;

/// Band-limited interpolation of `samples` to `out_len` samples at `ratio` output
/// samples per input sample, with a Kaiser-windowed sinc kernel.
pub(crate) fn resample_by_ratio(samples: &[f32], ratio: f64, out_len: usize) -> Vec<f32> {
    if samples.is_empty() {
        return vec![0.0; out_len];
    }
    let cutoff = ratio.min(1.0) * CUTOFF_SCALE;
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);
    let table_len = (half_width * KERNEL_OVERSAMPLE as f64).ceil() as usize + 2;
    let table: Vec<f64> = (0..table_len)
        .map(|k| {
            let tau = k as f64 / KERNEL_OVERSAMPLE as f64;
            if tau >= half_width {
                return 0.0;
            }
            let x = std::f64::consts::PI * cutoff * tau;
            let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
            let r = tau / half_width;
            cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
        })
        .collect();
    let kernel = |tau: f64| {
        let pos = tau.abs() * KERNEL_OVERSAMPLE as f64;
        let k = pos as usize;
        if k + 1 >= table_len {
            return 0.0;
        }
        let frac = pos - k as f64;
        table[k] * (1.0 - frac) + table[k + 1] * frac
    };
    let n = samples.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0f64;
            for i in lo..=hi {
                acc += samples[i as usize] as f64 * kernel(t - i as f64);
            }
            acc as f32
        })
        .collect()
}

/// Windowed-sinc resampling to `target_rate`. Output length is
/// `round(len · target_rate / sample_rate)`; equal rates return the clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Argument("target rate must be positive".into()));
    }
    clip.validate()?;
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    Ok(AudioClip {
        samples: resample_by_ratio(&clip.samples, ratio, out_len),
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}
