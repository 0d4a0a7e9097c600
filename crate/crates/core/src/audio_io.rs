//! PCM WAV decoding, resampling, short-time spectra and synthetic fixtures.
//!
//! Everything downstream assumes mono audio at [`CANONICAL_RATE`] and
//! spectrograms computed with [`DEFAULT_WINDOW`] / [`DEFAULT_HOP`].

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const CANONICAL_RATE: u32 = 22050;
pub const DEFAULT_WINDOW: usize = 2048;
pub const DEFAULT_HOP: usize = 512;

/// Mono PCM buffer in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

/// Magnitude short-time spectrum, `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub frame_rate: f64,
    pub bin_freqs: Vec<f64>,
    pub sample_rate: u32,
    pub window_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bin_freqs.len()
    }
}

/// Decodes a 16-bit integer or 32-bit float PCM WAV file, mono or stereo.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let unsupported = |reason: String| Error::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingFile(path.to_path_buf())
        }
        hound::Error::Unsupported => unsupported("unsupported format tag".into()),
        other => malformed(other.to_string()),
    })?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(e.to_string()))?,
        (fmt, bits) => {
            return Err(unsupported(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let channels = spec.channels as usize;
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    if samples.is_empty() {
        return Err(malformed("data chunk holds no samples".into()));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(samples, spec.sample_rate, id).map_err(|e| malformed(e.to_string()))
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::new(std::io::ErrorKind::Other, other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

/// Windowed-sinc resampling. Output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    const HALF_TAPS: f64 = 32.0;
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    // cutoff relative to the input Nyquist, slightly below the lower of the two rates
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = HALF_TAPS / cutoff;
    let src = &clip.samples;
    let out_len = ((src.len() as f64) * ratio).round().max(1.0) as usize;
    let step = 1.0 / ratio;
    let samples = (0..out_len)
        .map(|i| {
            let x = i as f64 * step;
            let lo = ((x - half_width).ceil().max(0.0)) as usize;
            let hi = ((x + half_width).floor() as usize).min(src.len() - 1);
            let mut acc = 0.0;
            for (j, &s) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let t = x - j as f64;
                let w = 0.5 + 0.5 * (PI * t / half_width).cos();
                acc += s * cutoff * sinc(cutoff * t) * w;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(samples, target_rate, clip.source_id.clone())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed magnitude STFT with `1 + (len - window_len) / hop` frames.
pub fn stft(clip: &AudioClip, window_len: usize, hop: usize) -> Result<Spectrogram> {
    let len = clip.samples.len();
    if hop == 0 || hop > window_len || window_len > len {
        return Err(Error::InvalidInput(format!(
            "stft needs 0 < hop <= window_len <= len (hop {hop}, window {window_len}, len {len})"
        )));
    }
    let n_frames = 1 + (len - window_len) / hop;
    let n_bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut magnitudes = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * hop;
        for ((b, &s), &w) in buf
            .iter_mut()
            .zip(&clip.samples[start..start + window_len])
            .zip(&window)
        {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        magnitudes.push(buf[..n_bins].iter().map(|c| c.norm()).collect());
    }
    let sr = clip.sample_rate as f64;
    Ok(Spectrogram {
        magnitudes,
        frame_rate: sr / hop as f64,
        bin_freqs: (0..n_bins).map(|k| k as f64 * sr / window_len as f64).collect(),
        sample_rate: clip.sample_rate,
        window_len,
    })
}

/// STFT with the default 2048 / 512 parameters.
pub fn default_stft(clip: &AudioClip) -> Result<Spectrogram> {
    stft(clip, DEFAULT_WINDOW, DEFAULT_HOP)
}

pub const CLICK_LEN_S: f64 = 0.005;

/// Sample indices at which clicks start for a given tempo and duration.
pub fn click_onsets(bpm: f64, duration_s: f64, rate: u32) -> Vec<usize> {
    let period = 60.0 / bpm;
    let n = (duration_s * rate as f64).round() as usize;
    (0..)
        .map(|k| k as f64 * period)
        .take_while(|t| *t < duration_s)
        .map(|t| (t * rate as f64).round() as usize)
        .filter(|&i| i < n)
        .collect()
}

/// Unit-amplitude 5 ms clicks at exact beat period `60 / bpm`.
pub fn synth_click_track(bpm: f64, duration_s: f64, rate: u32) -> Result<AudioClip> {
    if !(30.0..=480.0).contains(&bpm) {
        return Err(Error::InvalidInput(format!("bpm {bpm} outside [30, 480]")));
    }
    if !(duration_s > 0.0) || rate == 0 {
        return Err(Error::InvalidInput("duration and rate must be positive".into()));
    }
    let n = (duration_s * rate as f64).round() as usize;
    let click_len = ((CLICK_LEN_S * rate as f64).round() as usize).max(1);
    let mut samples = vec![0.0; n.max(1)];
    for start in click_onsets(bpm, duration_s, rate) {
        for s in samples.iter_mut().skip(start).take(click_len) {
            *s = 1.0;
        }
    }
    AudioClip::new(samples, rate, format!("click_{bpm}bpm"))
}

/// Pure sine of the given amplitude.
pub fn synth_sine(freq: f64, amplitude: f64, duration_s: f64, rate: u32) -> Result<AudioClip> {
    let n = (duration_s * rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq * i as f64 / rate as f64).sin())
        .collect();
    AudioClip::new(samples, rate, format!("sine_{freq}hz"))
}
