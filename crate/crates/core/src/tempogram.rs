//! Onset novelty, Fourier / autocorrelation tempograms, octave-folded
//! (cyclic) tempograms and the 64-value tempogram feature block.
//!
//! The novelty curve is the half-wave rectified spectral flux of
//! `ln(1 + 1000 |X|)`, with a 1 s local mean subtracted and rectified again.
//! Both tempograms are computed over 8 s analysis windows with a 1 s hop on a
//! 1 BPM grid spanning 30..=480 BPM.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::{default_stft, AudioClip, Spectrogram};
use crate::error::{Error, Result};
use crate::schema::{FeatureGroup, FeatureVector};
use crate::stats;

pub const MIN_BPM: f64 = 30.0;
pub const MAX_BPM: f64 = 480.0;
pub const LOG_COMPRESSION: f64 = 1000.0;
pub const REFERENCE_TEMPO: f64 = 60.0;
pub const SCALE_BINS: usize = 15;
pub const SUMMARY_TOP_N: usize = 4;
pub const TEMPOGRAM_DIMS: usize = 64;
/// Gaussian width (novelty frames) applied before autocorrelation; absorbs
/// the frame quantization of onset positions.
pub const AUTOCORR_SMOOTHING_FRAMES: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyCurve {
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

impl NoveltyCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TempogramKind {
    Fourier,
    Autocorr,
}

/// Time × tempo magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tempogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub tempo_axis: Vec<f64>,
    pub kind: TempogramKind,
}

/// Octave-folded tempogram over scales `s` in [1, 2).
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicTempogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub scale_axis: Vec<f64>,
    pub ref_tempo: f64,
}

/// Analysis window layout for the tempogram transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempogramParams {
    pub window_s: f64,
    pub hop_s: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub bpm_step: f64,
}

impl Default for TempogramParams {
    fn default() -> Self {
        Self {
            window_s: 8.0,
            hop_s: 1.0,
            min_bpm: MIN_BPM,
            max_bpm: MAX_BPM,
            bpm_step: 1.0,
        }
    }
}

impl TempogramParams {
    /// Shrinks the analysis window so a curve shorter than it still yields one frame.
    pub fn fitted_to(self, nov: &NoveltyCurve) -> Self {
        let available = nov.len() as f64 / nov.frame_rate;
        Self {
            window_s: self.window_s.min(available),
            ..self
        }
    }

    pub fn tempo_axis(&self) -> Vec<f64> {
        let n = ((self.max_bpm - self.min_bpm) / self.bpm_step).round() as usize + 1;
        (0..n).map(|i| self.min_bpm + i as f64 * self.bpm_step).collect()
    }

    fn frames(&self, nov: &NoveltyCurve) -> Result<(usize, usize, usize)> {
        let win = (self.window_s * nov.frame_rate).round() as usize;
        let hop = ((self.hop_s * nov.frame_rate).round() as usize).max(1);
        if win < 2 || nov.len() < win {
            return Err(Error::TooShort {
                needed: format!("{:.2} s of novelty", self.window_s),
                got: format!("{:.2} s", nov.duration_s()),
            });
        }
        Ok((win, hop, 1 + (nov.len() - win) / hop))
    }
}

fn log_compressed(spec: &Spectrogram, lo_bin: usize, hi_bin: usize) -> Vec<Vec<f64>> {
    spec.magnitudes
        .iter()
        .map(|frame| {
            frame[lo_bin..hi_bin]
                .iter()
                .map(|m| (1.0 + LOG_COMPRESSION * m).ln())
                .collect()
        })
        .collect()
}

fn rectified_flux(compressed: &[Vec<f64>]) -> Vec<f64> {
    let mut flux = vec![0.0; compressed.len()];
    for t in 1..compressed.len() {
        flux[t] = compressed[t]
            .iter()
            .zip(&compressed[t - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    flux
}

fn bin_range(spec: &Spectrogram, lo_hz: f64, hi_hz: f64) -> (usize, usize) {
    let lo = spec.bin_freqs.partition_point(|&f| f < lo_hz);
    let hi = spec.bin_freqs.partition_point(|&f| f < hi_hz);
    (lo, hi.max(lo))
}

/// Raw onset strength: rectified log-magnitude flux before local-mean removal.
pub fn onset_strength(spec: &Spectrogram) -> Result<NoveltyCurve> {
    if spec.n_frames() < 2 {
        return Err(Error::TooShort {
            needed: "2 frames".into(),
            got: format!("{} frames", spec.n_frames()),
        });
    }
    Ok(NoveltyCurve {
        values: rectified_flux(&log_compressed(spec, 0, spec.n_bins())),
        frame_rate: spec.frame_rate,
    })
}

fn subtract_local_mean(flux: &[f64], frame_rate: f64) -> Vec<f64> {
    let half = ((frame_rate / 2.0).round() as usize).max(1);
    let mut prefix = vec![0.0; flux.len() + 1];
    for (i, v) in flux.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..flux.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(flux.len());
            let local = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            (flux[t] - local).max(0.0)
        })
        .collect()
}

/// Novelty curve of the full spectrum.
pub fn novelty_curve(spec: &Spectrogram) -> Result<NoveltyCurve> {
    novelty_curve_band(spec, 0.0, f64::INFINITY)
}

/// Novelty curve restricted to bins with frequency in `[lo_hz, hi_hz)`.
pub fn novelty_curve_band(spec: &Spectrogram, lo_hz: f64, hi_hz: f64) -> Result<NoveltyCurve> {
    if spec.n_frames() < 2 {
        return Err(Error::TooShort {
            needed: "2 frames".into(),
            got: format!("{} frames", spec.n_frames()),
        });
    }
    let (lo, hi) = bin_range(spec, lo_hz, hi_hz);
    let flux = rectified_flux(&log_compressed(spec, lo, hi));
    Ok(NoveltyCurve {
        values: subtract_local_mean(&flux, spec.frame_rate),
        frame_rate: spec.frame_rate,
    })
}

/// Magnitude of the Hann-windowed Fourier coefficient of the novelty at
/// `tempo / 60` Hz, per analysis window.
pub fn fourier_tempogram(nov: &NoveltyCurve, params: &TempogramParams) -> Result<Tempogram> {
    let (win, hop, n_windows) = params.frames(nov)?;
    let axis = params.tempo_axis();
    let window = crate::audio_io::hann(win);
    let norm: f64 = window.iter().sum();
    // (cos, sin) of each tempo's phase advance per novelty frame
    let table: Vec<Vec<(f64, f64)>> = axis
        .iter()
        .map(|&bpm| {
            let omega = 2.0 * PI * (bpm / 60.0) / nov.frame_rate;
            (0..win)
                .map(|n| {
                    let ph = omega * n as f64;
                    (ph.cos() * window[n], ph.sin() * window[n])
                })
                .collect()
        })
        .collect();
    let magnitudes = (0..n_windows)
        .map(|w| {
            let seg = &nov.values[w * hop..w * hop + win];
            table
                .iter()
                .map(|row| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (x, (c, s)) in seg.iter().zip(row) {
                        re += x * c;
                        im -= x * s;
                    }
                    (re * re + im * im).sqrt() / norm
                })
                .collect()
        })
        .collect();
    Ok(Tempogram {
        magnitudes,
        tempo_axis: axis,
        kind: TempogramKind::Fourier,
    })
}

/// Normalized autocorrelation per analysis window, read at the (fractional)
/// lag `60 * frame_rate / tempo` for every tempo on the grid.
///
/// Fractional lags are evaluated from the zero-padded power spectrum, which
/// is the band-limited interpolation of the linear autocorrelation.
pub fn autocorr_tempogram(nov: &NoveltyCurve, params: &TempogramParams) -> Result<Tempogram> {
    let (win, hop, n_windows) = params.frames(nov)?;
    let axis = params.tempo_axis();
    let m = (2 * win).next_power_of_two();
    let half = m / 2;
    // cos(2π k ℓ / m) weighted for the one-sided power spectrum
    let table: Vec<Vec<f64>> = axis
        .iter()
        .map(|&bpm| {
            let lag = 60.0 * nov.frame_rate / bpm;
            (0..=half)
                .map(|k| {
                    let weight = if k == 0 || k == half { 1.0 } else { 2.0 };
                    weight * (2.0 * PI * k as f64 * lag / m as f64).cos()
                })
                .collect()
        })
        .collect();
    // Gaussian smoothing of the novelty, applied as |G(f)|^2 on the power spectrum
    let sigma = AUTOCORR_SMOOTHING_FRAMES;
    let taper: Vec<f64> = (0..=half)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / m as f64;
            (-(w * sigma).powi(2)).exp()
        })
        .collect();
    let one_sided: Vec<f64> = (0..=half)
        .map(|k| if k == 0 || k == half { 1.0 } else { 2.0 })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    let mut magnitudes = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let seg = &nov.values[w * hop..w * hop + win];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &x) in buf.iter_mut().zip(seg) {
            b.re = x;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..=half]
            .iter()
            .zip(&taper)
            .map(|(c, g)| c.norm_sqr() * g)
            .collect();
        let energy: f64 = power.iter().zip(&one_sided).map(|(p, c)| p * c).sum::<f64>() / m as f64;
        let row = if energy <= 1e-300 {
            vec![0.0; axis.len()]
        } else {
            table
                .iter()
                .map(|cosines| {
                    let r: f64 = power.iter().zip(cosines).map(|(p, c)| p * c).sum::<f64>()
                        / m as f64;
                    (r / energy).clamp(0.0, 1.0)
                })
                .collect()
        };
        magnitudes.push(row);
    }
    Ok(Tempogram {
        magnitudes,
        tempo_axis: axis,
        kind: TempogramKind::Autocorr,
    })
}

fn interpolate(axis: &[f64], row: &[f64], x: f64) -> f64 {
    let i = axis.partition_point(|&a| a <= x);
    if i == 0 {
        return row[0];
    }
    if i >= axis.len() {
        return row[axis.len() - 1];
    }
    let (x0, x1) = (axis[i - 1], axis[i]);
    let t = (x - x0) / (x1 - x0);
    row[i - 1] * (1.0 - t) + row[i] * t
}

/// Log-spaced scales `2^(j / n)` for `j` in `0..n`.
pub fn scale_axis(n_scales: usize) -> Vec<f64> {
    (0..n_scales)
        .map(|j| 2f64.powf(j as f64 / n_scales as f64))
        .collect()
}

/// Pools `tg` over every octave `s · ρ · 2^k` inside the tempo axis.
/// Out-of-range octaves are skipped.
pub fn cyclic_tempogram(tg: &Tempogram, ref_tempo: f64, n_scales: usize) -> Result<CyclicTempogram> {
    if !(MIN_BPM..=MAX_BPM).contains(&ref_tempo) {
        return Err(Error::InvalidInput(format!(
            "reference tempo {ref_tempo} outside [30, 480]"
        )));
    }
    if n_scales < 4 {
        return Err(Error::InvalidInput("need at least 4 scale bins".into()));
    }
    let axis = &tg.tempo_axis;
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let eps = 1e-9;
    let scales = scale_axis(n_scales);
    let octaves: Vec<Vec<f64>> = scales
        .iter()
        .map(|&s| {
            let base = s * ref_tempo;
            let k_min = ((lo - eps) / base).log2().ceil() as i32;
            let k_max = ((hi + eps) / base).log2().floor() as i32;
            (k_min..=k_max)
                .map(|k| base * 2f64.powi(k))
                .filter(|&t| t >= lo - eps && t <= hi + eps)
                .map(|t| t.clamp(lo, hi))
                .collect()
        })
        .collect();
    let magnitudes = tg
        .magnitudes
        .iter()
        .map(|row| {
            octaves
                .iter()
                .map(|tempi| tempi.iter().map(|&t| interpolate(axis, row, t)).sum())
                .collect()
        })
        .collect();
    Ok(CyclicTempogram {
        magnitudes,
        scale_axis: scales,
        ref_tempo,
    })
}

/// Anything with a time × bin magnitude table and a bin axis.
pub trait TempoBins {
    fn magnitudes(&self) -> &[Vec<f64>];
    fn axis(&self) -> &[f64];
    /// Name of the axis unit used in feature names.
    fn axis_label(&self) -> &'static str;
}

impl TempoBins for Tempogram {
    fn magnitudes(&self) -> &[Vec<f64>] {
        &self.magnitudes
    }
    fn axis(&self) -> &[f64] {
        &self.tempo_axis
    }
    fn axis_label(&self) -> &'static str {
        "bpm"
    }
}

impl TempoBins for CyclicTempogram {
    fn magnitudes(&self) -> &[Vec<f64>] {
        &self.magnitudes
    }
    fn axis(&self) -> &[f64] {
        &self.scale_axis
    }
    fn axis_label(&self) -> &'static str {
        "scale"
    }
}

/// Mean magnitude of each bin over time.
pub fn time_average<T: TempoBins + ?Sized>(tg: &T) -> Vec<f64> {
    stats::column_means(tg.magnitudes())
}

/// Axis value of the strongest time-averaged bin.
pub fn dominant_bin<T: TempoBins + ?Sized>(tg: &T) -> (usize, f64) {
    let avg = time_average(tg);
    let i = stats::argmax(&avg);
    (i, tg.axis()[i])
}

/// For each of the `top_n` strongest bins: axis value, time mean, temporal
/// std and strength relative to the strongest bin.
pub fn tempogram_summary<T: TempoBins + ?Sized>(
    tg: &T,
    top_n: usize,
    prefix: &str,
) -> Result<FeatureVector> {
    let n_bins = tg.axis().len();
    if top_n == 0 || top_n > n_bins {
        return Err(Error::InvalidInput(format!(
            "top_n {top_n} must be in 1..={n_bins}"
        )));
    }
    let avg = time_average(tg);
    let mut order: Vec<usize> = (0..n_bins).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]).then(a.cmp(&b)));
    let best = avg[order[0]];
    let mut out = FeatureVector::new();
    let label = tg.axis_label();
    for (rank, &bin) in order.iter().take(top_n).enumerate() {
        let column: Vec<f64> = tg.magnitudes().iter().map(|row| row[bin]).collect();
        let (axis_value, rel) = if best > 0.0 {
            (tg.axis()[bin], avg[bin] / best)
        } else {
            (0.0, 0.0)
        };
        let r = rank + 1;
        let g = FeatureGroup::Tempogram;
        out.push(format!("{prefix}_r{r}_{label}"), g, axis_value);
        out.push(format!("{prefix}_r{r}_mean"), g, avg[bin]);
        out.push(format!("{prefix}_r{r}_std"), g, stats::std(&column));
        out.push(format!("{prefix}_r{r}_rel"), g, rel);
    }
    Ok(out)
}

/// Fourier and autocorrelation tempograms of a clip's full-band novelty.
pub fn clip_tempograms(
    clip: &AudioClip,
    params: &TempogramParams,
) -> Result<(NoveltyCurve, Tempogram, Tempogram)> {
    let spec = default_stft(clip)?;
    let nov = novelty_curve(&spec)?;
    let fourier = fourier_tempogram(&nov, params)?;
    let autocorr = autocorr_tempogram(&nov, params)?;
    Ok((nov, fourier, autocorr))
}

/// The 64-value block: {fourier, autocorr, cyclic fourier, cyclic autocorr}
/// × top-4 bins × {axis value, mean, std, relative strength}.
pub fn tempogram_feature_vector(clip: &AudioClip) -> Result<FeatureVector> {
    if clip.duration_s() < 10.0 {
        return Err(Error::TooShort {
            needed: "10 s".into(),
            got: format!("{:.2} s", clip.duration_s()),
        });
    }
    let (_, fourier, autocorr) = clip_tempograms(clip, &TempogramParams::default())?;
    let cyc_f = cyclic_tempogram(&fourier, REFERENCE_TEMPO, SCALE_BINS)?;
    let cyc_a = cyclic_tempogram(&autocorr, REFERENCE_TEMPO, SCALE_BINS)?;
    let mut out = tempogram_summary(&fourier, SUMMARY_TOP_N, "tg_fourier")?;
    out.extend(tempogram_summary(&autocorr, SUMMARY_TOP_N, "tg_autocorr")?);
    out.extend(tempogram_summary(&cyc_f, SUMMARY_TOP_N, "tg_cyc_fourier")?);
    out.extend(tempogram_summary(&cyc_a, SUMMARY_TOP_N, "tg_cyc_autocorr")?);
    debug_assert_eq!(out.len(), TEMPOGRAM_DIMS);
    Ok(out)
}
