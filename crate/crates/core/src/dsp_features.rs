//! The 92-value fundamental feature vector plus the 6 band beat-emphasis
//! values that travel with the rhythmic block.
//!
//! Schema (in order): spectral 10, MFCC + delta 52, chroma 26, tempo 3,
//! DFA danceability 1.

use std::f64::consts::PI;

use log::warn;

use crate::audio_io::{default_stft, AudioClip, Spectrogram};
use crate::error::{Error, Result};
use crate::schema::{FeatureGroup, FeatureVector};
use crate::stats::{self, mean, std};
use crate::tempogram::{self, TempogramParams};

pub const FUNDAMENTAL_DIMS: usize = 92;
pub const BAND_EMPHASIS_DIMS: usize = 6;
pub const ROLLOFF_FRACTION: f64 = 0.85;
pub const MEL_BANDS: usize = 40;
pub const MFCC_COEFFS: usize = 13;
pub const LOG_FLOOR: f64 = 1e-10;
pub const CHROMA_MIN_HZ: f64 = 55.0;
pub const BAND_EDGES_HZ: [f64; 6] = [60.0, 120.0, 240.0, 480.0, 960.0, 1920.0];
pub const PITCH_CLASSES: [&str; 12] = [
    "C", "Cs", "D", "Ds", "E", "F", "Fs", "G", "Gs", "A", "As", "B",
];

fn too_short_frames(needed: usize, got: usize) -> Error {
    Error::TooShort {
        needed: format!("{needed} frames"),
        got: format!("{got} frames"),
    }
}

fn require_duration(clip: &AudioClip, secs: f64) -> Result<()> {
    if clip.duration_s() < secs {
        return Err(Error::TooShort {
            needed: format!("{secs} s"),
            got: format!("{:.2} s", clip.duration_s()),
        });
    }
    Ok(())
}

fn push_mean_std(out: &mut FeatureVector, name: &str, group: FeatureGroup, xs: &[f64]) {
    out.push(format!("{name}_mean"), group, mean(xs));
    out.push(format!("{name}_std"), group, std(xs));
}

/// Centroid, spread, entropy, flux and rolloff (mean and std over frames).
pub fn spectral_stats(spec: &Spectrogram) -> Result<FeatureVector> {
    if spec.n_frames() < 2 {
        return Err(too_short_frames(2, spec.n_frames()));
    }
    let freqs = &spec.bin_freqs;
    let n = spec.n_frames();
    let (mut centroid, mut spread, mut entropy, mut rolloff) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for frame in &spec.magnitudes {
        let total: f64 = frame.iter().sum();
        if total <= 0.0 {
            centroid.push(0.0);
            spread.push(0.0);
            entropy.push(0.0);
            rolloff.push(0.0);
            continue;
        }
        let c = frame.iter().zip(freqs).map(|(m, f)| m * f).sum::<f64>() / total;
        let var = frame
            .iter()
            .zip(freqs)
            .map(|(m, f)| m * (f - c).powi(2))
            .sum::<f64>()
            / total;
        let h = -frame
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|m| {
                let p = m / total;
                p * p.ln()
            })
            .sum::<f64>();
        let power: f64 = frame.iter().map(|m| m * m).sum();
        let target = ROLLOFF_FRACTION * power;
        let mut acc = 0.0;
        let mut r = freqs[freqs.len() - 1];
        for (m, f) in frame.iter().zip(freqs) {
            acc += m * m;
            if acc >= target {
                r = *f;
                break;
            }
        }
        centroid.push(c);
        spread.push(var.sqrt());
        entropy.push(h);
        rolloff.push(r);
    }
    let flux: Vec<f64> = spec
        .magnitudes
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(a, b)| (a - b).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let g = FeatureGroup::Spectral;
    let mut out = FeatureVector::new();
    push_mean_std(&mut out, "spectral_centroid", g, &centroid);
    push_mean_std(&mut out, "spectral_spread", g, &spread);
    push_mean_std(&mut out, "spectral_entropy", g, &entropy);
    push_mean_std(&mut out, "spectral_flux", g, &flux);
    push_mean_std(&mut out, "spectral_rolloff", g, &rolloff);
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `bin_freqs`, `n_bands × bins`.
pub fn mel_filterbank(bin_freqs: &[f64], n_bands: usize, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_bands + 1) as f64))
        .collect();
    (0..n_bands)
        .map(|b| {
            let (lo, centre, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            bin_freqs
                .iter()
                .map(|&f| {
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= centre {
                        (f - lo) / (centre - lo)
                    } else {
                        (hi - f) / (hi - centre)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Per-frame MFCCs (13 coefficients).
pub fn mfcc_frames(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let nyquist = spec.sample_rate as f64 / 2.0;
    let bank = mel_filterbank(&spec.bin_freqs, MEL_BANDS, 0.0, nyquist);
    spec.magnitudes
        .iter()
        .map(|frame| {
            let log_mel: Vec<f64> = bank
                .iter()
                .map(|filter| {
                    let e: f64 = filter.iter().zip(frame).map(|(w, m)| w * m * m).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect();
            dct2(&log_mel, MFCC_COEFFS)
        })
        .collect()
}

/// Mean and std of 13 MFCCs and of their centred first differences.
pub fn mfcc_features(spec: &Spectrogram) -> Result<FeatureVector> {
    if spec.n_frames() < 3 {
        return Err(too_short_frames(3, spec.n_frames()));
    }
    let frames = mfcc_frames(spec);
    let deltas: Vec<Vec<f64>> = (1..frames.len() - 1)
        .map(|t| {
            frames[t + 1]
                .iter()
                .zip(&frames[t - 1])
                .map(|(a, b)| (a - b) / 2.0)
                .collect()
        })
        .collect();
    let g = FeatureGroup::Timbral;
    let mut out = FeatureVector::new();
    let column = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    for c in 0..MFCC_COEFFS {
        out.push(format!("mfcc_mean_{c:02}"), g, mean(&column(&frames, c)));
    }
    for c in 0..MFCC_COEFFS {
        out.push(format!("mfcc_std_{c:02}"), g, std(&column(&frames, c)));
    }
    for c in 0..MFCC_COEFFS {
        out.push(format!("mfcc_delta_mean_{c:02}"), g, mean(&column(&deltas, c)));
    }
    for c in 0..MFCC_COEFFS {
        out.push(format!("mfcc_delta_std_{c:02}"), g, std(&column(&deltas, c)));
    }
    Ok(out)
}

/// Pitch class (0 = C) of each bin, `None` below 55 Hz.
fn pitch_classes(bin_freqs: &[f64]) -> Vec<Option<usize>> {
    bin_freqs
        .iter()
        .map(|&f| {
            if f < CHROMA_MIN_HZ {
                None
            } else {
                let semis = (12.0 * (f / 440.0).log2()).round() as i64;
                Some((semis + 9).rem_euclid(12) as usize)
            }
        })
        .collect()
}

/// L1-normalized 12-bin chroma per frame; silent frames are uniform.
pub fn chroma_frames(spec: &Spectrogram) -> Vec<[f64; 12]> {
    let classes = pitch_classes(&spec.bin_freqs);
    spec.magnitudes
        .iter()
        .map(|frame| {
            let mut c = [0.0; 12];
            for (m, pc) in frame.iter().zip(&classes) {
                if let Some(pc) = pc {
                    c[*pc] += m * m;
                }
            }
            let total: f64 = c.iter().sum();
            if total > 0.0 {
                c.iter_mut().for_each(|v| *v /= total);
            } else {
                c = [1.0 / 12.0; 12];
            }
            c
        })
        .collect()
}

/// 12 chroma means, 12 stds, mean chroma entropy, std of dominant class.
pub fn chroma_features(spec: &Spectrogram) -> Result<FeatureVector> {
    if spec.n_frames() < 1 {
        return Err(too_short_frames(1, 0));
    }
    let frames = chroma_frames(spec);
    let g = FeatureGroup::Harmonic;
    let mut out = FeatureVector::new();
    let per_class: Vec<Vec<f64>> = (0..12).map(|c| frames.iter().map(|f| f[c]).collect()).collect();
    for (c, name) in PITCH_CLASSES.iter().enumerate() {
        out.push(format!("chroma_mean_{name}"), g, mean(&per_class[c]));
    }
    for (c, name) in PITCH_CLASSES.iter().enumerate() {
        out.push(format!("chroma_std_{name}"), g, std(&per_class[c]));
    }
    let entropies: Vec<f64> = frames
        .iter()
        .map(|f| -f.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        .collect();
    let dominant: Vec<f64> = frames.iter().map(|f| stats::argmax(f) as f64).collect();
    out.push("chroma_entropy_mean", g, mean(&entropies));
    out.push("chroma_dominant_std", g, std(&dominant));
    Ok(out)
}

/// Fourier-tempogram argmax, autocorrelation-tempogram argmax and their
/// geometric mean, in BPM. Silence yields 0 for all three.
pub fn tempo_estimates(clip: &AudioClip) -> Result<FeatureVector> {
    require_duration(clip, 5.0)?;
    let spec = default_stft(clip)?;
    let nov = tempogram::novelty_curve(&spec)?;
    let params = TempogramParams::default().fitted_to(&nov);
    let fourier = tempogram::fourier_tempogram(&nov, &params)?;
    let autocorr = tempogram::autocorr_tempogram(&nov, &params)?;
    let strongest = |tg: &tempogram::Tempogram| {
        let avg = tempogram::time_average(tg);
        let i = stats::argmax(&avg);
        if avg[i] > 0.0 {
            tg.tempo_axis[i]
        } else {
            0.0
        }
    };
    let (f, a) = (strongest(&fourier), strongest(&autocorr));
    if f == 0.0 || a == 0.0 {
        warn!("no periodic onsets in `{}`; tempo set to 0", clip.source_id);
    }
    let geo = if f > 0.0 && a > 0.0 { (f * a).sqrt() } else { 0.0 };
    let g = FeatureGroup::Rhythmic;
    let mut out = FeatureVector::new();
    out.push("tempo_fourier_bpm", g, f);
    out.push("tempo_autocorr_bpm", g, a);
    out.push("tempo_geomean_bpm", g, geo);
    Ok(out)
}

/// Window sizes (in samples of the series) for DFA: `n_sizes` log-spaced
/// integers between `min` and `max`, deduplicated.
pub fn dfa_window_sizes(min: usize, max: usize, n_sizes: usize) -> Vec<usize> {
    let (lo, hi) = ((min.max(4)) as f64, (max.max(min.max(4))) as f64);
    let mut sizes: Vec<usize> = (0..n_sizes)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n_sizes - 1) as f64)).round() as usize)
        .collect();
    sizes.dedup();
    sizes
}

/// Detrended fluctuation F(s) for each window size.
pub fn dfa_fluctuations(series: &[f64], sizes: &[usize]) -> Vec<f64> {
    let m = mean(series);
    let mut profile = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for x in series {
        acc += x - m;
        profile.push(acc);
    }
    sizes
        .iter()
        .map(|&s| {
            let n_windows = profile.len() / s;
            if n_windows == 0 || s < 2 {
                return 0.0;
            }
            let xs: Vec<f64> = (0..s).map(|i| i as f64).collect();
            let x_mean = mean(&xs);
            let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
            let mut total = 0.0;
            for w in 0..n_windows {
                let seg = &profile[w * s..(w + 1) * s];
                let y_mean = mean(seg);
                let sxy: f64 = xs.iter().zip(seg).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
                let b = sxy / sxx;
                let a = y_mean - b * x_mean;
                total += xs
                    .iter()
                    .zip(seg)
                    .map(|(x, y)| (y - a - b * x).powi(2))
                    .sum::<f64>()
                    / s as f64;
            }
            (total / n_windows as f64).sqrt()
        })
        .collect()
}

/// DFA scaling exponent: slope of log F(s) against log s. Returns 0 when
/// fewer than two sizes have nonzero fluctuation.
pub fn dfa_exponent(series: &[f64], sizes: &[usize]) -> f64 {
    let f = dfa_fluctuations(series, sizes);
    let (xs, ys): (Vec<f64>, Vec<f64>) = sizes
        .iter()
        .zip(&f)
        .filter(|(_, &f)| f > 1e-12)
        .map(|(&s, &f)| ((s as f64).ln(), f.ln()))
        .unzip();
    if xs.len() < 2 {
        0.0
    } else {
        stats::slope(&xs, &ys)
    }
}

pub const DFA_MIN_S: f64 = 0.1;
pub const DFA_MAX_S: f64 = 5.0;
pub const DFA_SIZES: usize = 12;

/// DFA exponent of the clip's onset-strength envelope over 0.1–5 s windows.
pub fn danceability_dfa(clip: &AudioClip) -> Result<f64> {
    require_duration(clip, 10.0)?;
    let spec = default_stft(clip)?;
    let env = tempogram::onset_strength(&spec)?;
    let sizes = dfa_window_sizes(
        (DFA_MIN_S * env.frame_rate).round() as usize,
        (DFA_MAX_S * env.frame_rate).round() as usize,
        DFA_SIZES,
    );
    Ok(dfa_exponent(&env.values, &sizes))
}

/// Mean novelty per bin below which a band counts as having no onsets.
pub const BAND_SILENCE: f64 = 0.05;

/// Peak of the mean-normalized novelty autocorrelation over lags
/// 0.125–2 s. Returns 0 for onset-free input.
pub fn beat_emphasis(nov: &tempogram::NoveltyCurve, n_bins: usize) -> f64 {
    let x = &nov.values;
    let m = mean(x);
    if n_bins == 0 || m / n_bins as f64 <= BAND_SILENCE {
        return 0.0;
    }
    let lo = ((0.125 * nov.frame_rate).round() as usize).max(1);
    let hi = ((2.0 * nov.frame_rate).round() as usize).min(x.len().saturating_sub(1));
    (lo..=hi)
        .map(|lag| {
            let n = x.len() - lag;
            let r: f64 = (0..n).map(|i| x[i] * x[i + lag]).sum::<f64>() / n as f64;
            r / (m * m)
        })
        .fold(0.0, f64::max)
}

/// Beat emphasis in six octave bands starting at 60 Hz.
pub fn band_beat_emphasis(clip: &AudioClip) -> Result<FeatureVector> {
    require_duration(clip, 5.0)?;
    let spec = default_stft(clip)?;
    let mut out = FeatureVector::new();
    for (i, &lo) in BAND_EDGES_HZ.iter().enumerate() {
        let hi = 2.0 * lo;
        let nov = tempogram::novelty_curve_band(&spec, lo, hi)?;
        let n_bins = spec.bin_freqs.iter().filter(|&&f| f >= lo && f < hi).count();
        out.push(
            format!("beat_emphasis_band{}", i + 1),
            FeatureGroup::Rhythmic,
            beat_emphasis(&nov, n_bins),
        );
    }
    Ok(out)
}

/// The 92-value fundamental vector.
pub fn fundamental_feature_vector(clip: &AudioClip) -> Result<FeatureVector> {
    require_duration(clip, 10.0)?;
    let spec = default_stft(clip)?;
    let mut out = spectral_stats(&spec).map_err(|e| e.in_group("spectral"))?;
    out.extend(mfcc_features(&spec).map_err(|e| e.in_group("timbral"))?);
    out.extend(chroma_features(&spec).map_err(|e| e.in_group("harmonic"))?);
    out.extend(tempo_estimates(clip).map_err(|e| e.in_group("tempo"))?);
    let alpha = danceability_dfa(clip).map_err(|e| e.in_group("danceability"))?;
    out.push("danceability_dfa", FeatureGroup::Rhythmic, alpha);
    debug_assert_eq!(out.len(), FUNDAMENTAL_DIMS);
    Ok(out)
}

/// Fundamental (92) + tempogram (64) + band beat emphasis (6) = 162 values.
pub fn track_feature_vector(clip: &AudioClip) -> Result<FeatureVector> {
    let mut out = fundamental_feature_vector(clip)?;
    out.extend(tempogram::tempogram_feature_vector(clip).map_err(|e| e.in_group("tempogram"))?);
    out.extend(band_beat_emphasis(clip).map_err(|e| e.in_group("beat emphasis"))?);
    out.validate()?;
    Ok(out)
}

pub const TRACK_DIMS: usize = FUNDAMENTAL_DIMS + tempogram::TEMPOGRAM_DIMS + BAND_EMPHASIS_DIMS;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{synth_click_track, synth_sine, CANONICAL_RATE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(secs: f64, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * CANONICAL_RATE as f64) as usize;
        AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), CANONICAL_RATE, "noise").unwrap()
    }

    fn synthetic_spec(frames: Vec<Vec<f64>>, freqs: Vec<f64>) -> Spectrogram {
        Spectrogram {
            magnitudes: frames,
            frame_rate: 43.0,
            bin_freqs: freqs,
            sample_rate: 22050,
            window_len: 2048,
        }
    }

    #[test]
    fn spectral_stats_of_delta_spectrum() {
        let freqs = vec![0.0, 220.0, 440.0, 880.0];
        let spec = synthetic_spec(vec![vec![0.0, 0.0, 2.0, 0.0]; 5], freqs);
        let v = spectral_stats(&spec).unwrap();
        assert_eq!(v.get("spectral_centroid_mean"), Some(440.0));
        assert_eq!(v.get("spectral_spread_mean"), Some(0.0));
        assert_eq!(v.get("spectral_flux_mean"), Some(0.0));
        assert_eq!(v.get("spectral_rolloff_mean"), Some(440.0));
        assert_eq!(v.len(), 10);
    }

    #[test]
    fn flat_spectrum_has_maximum_entropy() {
        let b = 64;
        let freqs: Vec<f64> = (0..b).map(|i| i as f64 * 10.0).collect();
        let spec = synthetic_spec(vec![vec![0.3; b]; 4], freqs);
        let h = spectral_stats(&spec).unwrap().get("spectral_entropy_mean").unwrap();
        assert!((h - (b as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn silent_frames_give_zero_centroid() {
        let spec = synthetic_spec(vec![vec![0.0; 8]; 3], (0..8).map(|i| i as f64).collect());
        let v = spectral_stats(&spec).unwrap();
        assert_eq!(v.get("spectral_centroid_mean"), Some(0.0));
        assert_eq!(v.get("spectral_entropy_mean"), Some(0.0));
        let one = synthetic_spec(vec![vec![1.0; 8]], (0..8).map(|i| i as f64).collect());
        assert!(spectral_stats(&one).is_err());
    }

    #[test]
    fn white_noise_rolloff_matches_direct_summation() {
        let spec = default_stft(&noise_clip(3.0, 1)).unwrap();
        let v = spectral_stats(&spec).unwrap();
        // oracle: cumulative power of the realized spectrum, frame by frame
        let mut rolls = Vec::new();
        for frame in &spec.magnitudes {
            let total: f64 = frame.iter().map(|m| m * m).sum();
            let mut acc = 0.0;
            let k = frame
                .iter()
                .position(|m| {
                    acc += m * m;
                    acc >= 0.85 * total
                })
                .unwrap();
            rolls.push(spec.bin_freqs[k]);
        }
        let oracle = mean(&rolls);
        assert!((v.get("spectral_rolloff_mean").unwrap() - oracle).abs() < 1e-9);
        let nyquist = 11025.0;
        assert!((oracle / nyquist - 0.85).abs() <= 0.03, "{}", oracle / nyquist);
    }

    #[test]
    fn mfcc_constant_spectrum_has_zero_delta_means() {
        let freqs: Vec<f64> = (0..1025).map(|k| k as f64 * 22050.0 / 2048.0).collect();
        let frame: Vec<f64> = (0..1025).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let v = mfcc_features(&synthetic_spec(vec![frame; 6], freqs)).unwrap();
        assert_eq!(v.len(), 52);
        for c in 0..13 {
            assert_eq!(v.get(&format!("mfcc_delta_mean_{c:02}")), Some(0.0));
        }
    }

    #[test]
    fn mfcc_of_silence_is_the_floor_constant() {
        let clip = AudioClip::new(vec![0.0; 22050], CANONICAL_RATE, "z").unwrap();
        let v = mfcc_features(&default_stft(&clip).unwrap()).unwrap();
        let expected = (MEL_BANDS as f64).sqrt() * LOG_FLOOR.ln();
        assert!((v.get("mfcc_mean_00").unwrap() - expected).abs() < 1e-9);
        for c in 1..13 {
            assert!(v.get(&format!("mfcc_mean_{c:02}")).unwrap().abs() < 1e-9);
        }
        for c in 0..13 {
            assert_eq!(v.get(&format!("mfcc_delta_mean_{c:02}")), Some(0.0));
        }
    }

    #[test]
    fn mfcc_separates_sine_from_noise() {
        let sine = mfcc_features(&default_stft(&synth_sine(440.0, 0.5, 2.0, CANONICAL_RATE).unwrap()).unwrap()).unwrap();
        let noise = mfcc_features(&default_stft(&noise_clip(2.0, 2)).unwrap()).unwrap();
        let d: f64 = (0..13)
            .map(|c| {
                let k = format!("mfcc_mean_{c:02}");
                (sine.get(&k).unwrap() - noise.get(&k).unwrap()).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(d > 1.0, "{d}");
    }

    #[test]
    fn mfcc_needs_three_frames() {
        let spec = synthetic_spec(vec![vec![1.0; 4]; 2], vec![0.0, 1.0, 2.0, 3.0]);
        assert!(mfcc_features(&spec).is_err());
    }

    #[test]
    fn dct_matches_direct_orthonormal_definition() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = dct2(&x, 4);
        // orthonormal transform preserves energy
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((ex - ey).abs() < 1e-12);
        assert!((y[0] - 2.5 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn chroma_of_a440_peaks_at_a() {
        let spec = default_stft(&synth_sine(440.0, 0.5, 1.0, CANONICAL_RATE).unwrap()).unwrap();
        let v = chroma_features(&spec).unwrap();
        let means: Vec<f64> = PITCH_CLASSES
            .iter()
            .map(|p| v.get(&format!("chroma_mean_{p}")).unwrap())
            .collect();
        assert_eq!(stats::argmax(&means), 9);
        assert!((means.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(v.len(), 26);
    }

    #[test]
    fn chroma_octave_equivalence() {
        let a = synth_sine(440.0, 0.4, 1.0, CANONICAL_RATE).unwrap();
        let b = synth_sine(880.0, 0.4, 1.0, CANONICAL_RATE).unwrap();
        let mix: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
        let mix = AudioClip::new(mix, CANONICAL_RATE, "mix").unwrap();
        let dominant = |clip: &AudioClip| {
            let v = chroma_features(&default_stft(clip).unwrap()).unwrap();
            let means: Vec<f64> = PITCH_CLASSES
                .iter()
                .map(|p| v.get(&format!("chroma_mean_{p}")).unwrap())
                .collect();
            stats::argmax(&means)
        };
        assert_eq!(dominant(&mix), dominant(&a));
    }

    #[test]
    fn silent_chroma_is_uniform() {
        let spec = synthetic_spec(vec![vec![0.0; 4]], vec![0.0, 100.0, 200.0, 300.0]);
        let v = chroma_features(&spec).unwrap();
        for p in PITCH_CLASSES {
            assert!((v.get(&format!("chroma_mean_{p}")).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tempo_of_click_tracks() {
        let clip = synth_click_track(128.0, 10.0, CANONICAL_RATE).unwrap();
        let v = tempo_estimates(&clip).unwrap();
        for v in &v.values {
            assert!((v - 128.0).abs() <= 1.0, "{v}");
        }
        let slow = tempo_estimates(&synth_click_track(60.0, 10.0, CANONICAL_RATE).unwrap()).unwrap();
        let a = slow.get("tempo_fourier_bpm").unwrap();
        assert!((a - 60.0).abs() <= 1.0 || (a - 120.0).abs() <= 1.0, "{a}");
        // 6 dB louder
        let loud = tempo_estimates(&clip.scaled(2.0)).unwrap();
        assert_eq!(loud, v);
    }

    #[test]
    fn tempo_of_short_clip_uses_fitted_window() {
        let clip = synth_click_track(120.0, 6.0, CANONICAL_RATE).unwrap();
        let v = tempo_estimates(&clip).unwrap();
        assert!((v.get("tempo_fourier_bpm").unwrap() - 120.0).abs() <= 1.0);
        let short = synth_click_track(120.0, 4.0, CANONICAL_RATE).unwrap();
        assert!(tempo_estimates(&short).is_err());
    }

    #[test]
    fn tempo_of_silence_is_sentinel_zero() {
        let clip = AudioClip::new(vec![0.0; 22050 * 6], CANONICAL_RATE, "z").unwrap();
        let v = tempo_estimates(&clip).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    /// Independent DFA: explicit cumulative sum and 2x2 normal equations.
    fn brute_dfa(series: &[f64], sizes: &[usize]) -> f64 {
        let n = series.len();
        let avg = series.iter().sum::<f64>() / n as f64;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = series[..=i].iter().map(|v| v - avg).sum();
        }
        let mut pts = Vec::new();
        for &s in sizes {
            let mut sum_sq = 0.0;
            let mut count = 0.0;
            for w in 0..n / s {
                let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..s {
                    let x = i as f64;
                    let v = y[w * s + i];
                    sx += x;
                    sy += v;
                    sxx += x * x;
                    sxy += x * v;
                }
                let k = s as f64;
                let b = (k * sxy - sx * sy) / (k * sxx - sx * sx);
                let a = (sy - b * sx) / k;
                for i in 0..s {
                    sum_sq += (y[w * s + i] - a - b * i as f64).powi(2);
                    count += 1.0;
                }
            }
            pts.push(((s as f64).ln(), (sum_sq / count).sqrt().ln()));
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
    }

    #[test]
    fn dfa_of_white_noise_is_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sizes = dfa_window_sizes(4, 215, 12);
        assert!(sizes.len() >= 8);
        let alpha = dfa_exponent(&series, &sizes);
        assert!((alpha - brute_dfa(&series, &sizes)).abs() < 1e-9);
        assert!((alpha - 0.5).abs() <= 0.1, "{alpha}");
    }

    #[test]
    fn dfa_of_constant_envelope_is_zero() {
        assert_eq!(dfa_exponent(&[3.0; 500], &dfa_window_sizes(4, 200, 12)), 0.0);
    }

    #[test]
    fn periodic_clicks_have_lower_dfa_than_noise() {
        let clicks = danceability_dfa(&synth_click_track(128.0, 12.0, CANONICAL_RATE).unwrap()).unwrap();
        let noise = danceability_dfa(&noise_clip(12.0, 5)).unwrap();
        assert!(clicks < noise, "{clicks} vs {noise}");
        assert!(danceability_dfa(&noise_clip(5.0, 5)).is_err());
    }

    #[test]
    fn click_track_emphasizes_every_band() {
        let v = band_beat_emphasis(&synth_click_track(120.0, 10.0, CANONICAL_RATE).unwrap()).unwrap();
        assert_eq!(v.len(), 6);
        for x in &v.values {
            assert!(*x > 1.0, "{:?}", v.values);
        }
    }

    #[test]
    fn steady_sine_has_no_beat_emphasis() {
        let v = band_beat_emphasis(&synth_sine(100.0, 0.5, 10.0, CANONICAL_RATE).unwrap()).unwrap();
        for x in &v.values {
            assert!(x.abs() < 1e-9, "{:?}", v.values);
        }
    }

    #[test]
    fn kick_only_clicks_favour_the_low_band() {
        let clip = synth_click_track(120.0, 10.0, CANONICAL_RATE).unwrap();
        // one-pole low-pass at 150 Hz, applied twice
        let a = (-2.0 * PI * 150.0 / CANONICAL_RATE as f64).exp();
        let mut s = clip.samples.clone();
        for _ in 0..2 {
            let mut y = 0.0;
            for v in s.iter_mut() {
                y = (1.0 - a) * *v + a * y;
                *v = y;
            }
        }
        let kick = AudioClip::new(s, CANONICAL_RATE, "kick").unwrap();
        let v = band_beat_emphasis(&kick).unwrap();
        assert!(v.values[0] >= v.values[5], "{:?}", v.values);
    }

    #[test]
    fn fundamental_vector_schema() {
        let clip = synth_click_track(128.0, 10.0, CANONICAL_RATE).unwrap();
        let v = fundamental_feature_vector(&clip).unwrap();
        assert_eq!(v.len(), FUNDAMENTAL_DIMS);
        v.validate().unwrap();
        assert_eq!(v, fundamental_feature_vector(&clip).unwrap());
        let full = track_feature_vector(&clip).unwrap();
        assert_eq!(full.len(), TRACK_DIMS);
        assert_eq!(TRACK_DIMS, 162);
    }

    #[test]
    fn scale_invariant_features_survive_gain() {
        let clip = noise_clip(10.0, 9);
        let a = fundamental_feature_vector(&clip).unwrap();
        let b = fundamental_feature_vector(&clip.scaled(0.25)).unwrap();
        for name in a.names.iter().filter(|n| {
            n.starts_with("spectral_centroid")
                || n.starts_with("spectral_spread")
                || n.starts_with("spectral_entropy")
                || n.starts_with("spectral_rolloff")
                || n.starts_with("chroma_")
        }) {
            let (x, y) = (a.get(name).unwrap(), b.get(name).unwrap());
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{name}: {x} vs {y}");
        }
        assert_ne!(a.get("spectral_flux_mean"), b.get("spectral_flux_mean"));
        assert_ne!(a.get("mfcc_mean_00"), b.get("mfcc_mean_00"));
    }
}
