//! Waveform feature views: temporal-mean-subtracted magnitude spectrograms and
//! band-averaged full-length magnitude spectra.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::TooShort { len: 0, needed: 1 });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { samples, sample_rate })
    }

    /// Reads a single-channel 16-bit PCM RIFF/WAVE file, scaled to [-1, 1).
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "expected mono 16-bit PCM, found {} channel(s) at {} bits",
                    spec.channels, spec.bits_per_sample
                ),
            });
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    /// `lambda * a + (1 - lambda) * b` over the shorter of the two lengths.
    pub fn mix(a: &Waveform, b: &Waveform, lambda: f64) -> Result<Waveform> {
        if a.sample_rate != b.sample_rate {
            return Err(Error::Data("cannot mix waveforms with different sample rates".into()));
        }
        let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        Waveform::new(samples, a.sample_rate)
    }
}

/// Spectrogram (`T x F`) and spectrum of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub spectrogram: Vec<Vec<f64>>,
    pub spectrum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub frame: usize,
    pub hop: usize,
    pub spectrum_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { frame: 1024, hop: 512, spectrum_bins: 4096 }
    }
}

impl FeatureConfig {
    /// Length of the reduced spectrogram vector fed to the network.
    pub fn spectrogram_input_dim(&self) -> usize {
        2 * (self.frame / 2 + 1)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// `|DFT|` of Hann-windowed frames; `T = (len - frame) / hop + 1`, `F = frame / 2 + 1`.
pub fn magnitude_spectrogram(w: &Waveform, frame: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if frame == 0 || hop == 0 {
        return Err(Error::ConfigInvalid("frame and hop must be positive".into()));
    }
    let len = w.samples.len();
    if len < frame {
        return Err(Error::TooShort { len, needed: frame });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame);
    let window = hann(frame);
    let bins = frame / 2 + 1;
    let frames = (len - frame) / hop + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

/// Per-bin mean over time.
pub fn temporal_mean(spec: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = spec.first() else { return Vec::new() };
    let mut mean = vec![0.0; first.len()];
    for row in spec {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let t = spec.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    mean
}

/// Removes each frequency bin's temporal mean.
pub fn subtract_temporal_mean(spec: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mean = temporal_mean(spec);
    spec.iter().map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect()
}

/// Full-length DFT magnitudes (bins `0..=len/2`) averaged into `out_bins` bands.
pub fn magnitude_spectrum(w: &Waveform, out_bins: usize) -> Result<Vec<f64>> {
    if out_bins == 0 {
        return Err(Error::ConfigInvalid("spectrum needs at least one band".into()));
    }
    let len = w.samples.len();
    if len == 0 {
        return Err(Error::TooShort { len, needed: 1 });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let mut buf: Vec<Complex<f64>> = w.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    let mags: Vec<f64> = buf[..len / 2 + 1].iter().map(|c| c.norm()).collect();
    Ok(band_average(&mags, out_bins))
}

/// Averages `values` into `bands` contiguous groups; when there are fewer
/// values than bands, bands reuse the value they fall on.
pub fn band_average(values: &[f64], bands: usize) -> Vec<f64> {
    let n = values.len();
    (0..bands)
        .map(|b| {
            let start = (b * n / bands).min(n - 1);
            let end = ((b + 1) * n / bands).max(start + 1).min(n);
            values[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect()
}

/// Both feature views of a clip.
pub fn extract_pair(w: &Waveform, cfg: &FeatureConfig) -> Result<FeaturePair> {
    let spec = magnitude_spectrogram(w, cfg.frame, cfg.hop)?;
    Ok(FeaturePair { spectrogram: subtract_temporal_mean(&spec), spectrum: magnitude_spectrum(w, cfg.spectrum_bins)? })
}

/// Clip-level summary of a mean-subtracted spectrogram: per-bin standard
/// deviation followed by per-bin maximum over time (`2F` values).
pub fn summarize_spectrogram(spec: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = spec.first() else { return Vec::new() };
    let f = first.len();
    let t = spec.len() as f64;
    let mean = temporal_mean(spec);
    let mut var = vec![0.0; f];
    let mut max = vec![f64::NEG_INFINITY; f];
    for row in spec {
        for i in 0..f {
            let d = row[i] - mean[i];
            var[i] += d * d;
            max[i] = max[i].max(row[i]);
        }
    }
    var.iter().map(|v| (v / t).sqrt()).chain(max).collect()
}

/// Network inputs for one clip: reduced spectrogram and band spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub spectrogram: Vec<f64>,
    pub spectrum: Vec<f64>,
}

pub fn clip_features(w: &Waveform, cfg: &FeatureConfig) -> Result<ClipFeatures> {
    let pair = extract_pair(w, cfg)?;
    Ok(ClipFeatures { spectrogram: summarize_spectrogram(&pair.spectrogram), spectrum: pair.spectrum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        let s = (0..len).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin()).collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let w = sine(1000.0, 16000, 16000);
        let spec = magnitude_spectrogram(&w, 1024, 512).unwrap();
        assert_eq!(spec[0].len(), 513);
        for row in &spec {
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, 64);
        }
    }

    #[test]
    fn zero_waveform_gives_zero_features() {
        let w = Waveform::new(vec![0.0; 4096], 16000).unwrap();
        assert!(magnitude_spectrogram(&w, 1024, 512).unwrap().iter().flatten().all(|&v| v == 0.0));
        assert!(magnitude_spectrum(&w, 64).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(s, 16000).unwrap();
        let (frame, hop) = (256, 100);
        let spec = magnitude_spectrogram(&w, frame, hop).unwrap();
        let win = hann(frame);
        for (t, row) in spec.iter().enumerate() {
            let energy: f64 = (0..frame).map(|i| (w.samples[t * hop + i] * win[i]).powi(2)).sum();
            // one-sided bins: interior bins stand for two conjugate bins
            let last = row.len() - 1;
            let mut total = 0.0;
            for (k, m) in row.iter().enumerate() {
                let f = if k == 0 || k == last { 1.0 } else { 2.0 };
                total += f * m * m;
            }
            let rel = (total / frame as f64 - energy).abs() / energy;
            assert!(rel < 1e-6, "frame {t}: {rel}");
        }
    }

    #[test]
    fn frame_count_formula() {
        for len in [1024usize, 1025, 1535, 1536, 5000] {
            let w = Waveform::new(vec![0.1; len], 16000).unwrap();
            let spec = magnitude_spectrogram(&w, 1024, 512).unwrap();
            assert_eq!(spec.len(), (len - 1024) / 512 + 1);
        }
        let w = Waveform::new(vec![0.1; 100], 16000).unwrap();
        assert!(matches!(magnitude_spectrogram(&w, 1024, 512), Err(Error::TooShort { .. })));
    }

    #[test]
    fn temporal_mean_subtraction() {
        let constant = vec![vec![1.0, 2.0, 3.0]; 5];
        assert!(subtract_temporal_mean(&constant).iter().flatten().all(|&v| v == 0.0));
        let single = vec![vec![4.0, -1.0]];
        assert!(subtract_temporal_mean(&single).iter().flatten().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let means = temporal_mean(&m);
        let sub = subtract_temporal_mean(&m);
        for c in temporal_mean(&sub) {
            assert!(c.abs() < 1e-9);
        }
        for (row, orig) in sub.iter().zip(&m) {
            for ((v, mu), o) in row.iter().zip(&means).zip(orig) {
                assert!((v + mu - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_examples() {
        let w = sine(1000.0, 16000, 16000);
        let bands = magnitude_spectrum(&w, 64).unwrap();
        let argmax = bands.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        // 8001 one-sided bins at 1 Hz resolution over 64 bands
        let expected = (0..64).find(|b| b * 8001 / 64 <= 1000 && 1000 < (b + 1) * 8001 / 64).unwrap();
        assert_eq!(argmax, expected);

        let dc = Waveform::new(vec![0.5; 1000], 16000).unwrap();
        let bands = magnitude_spectrum(&dc, 16).unwrap();
        assert!(bands[0] > 0.0);
        assert!(bands[1..].iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn spectrum_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let sa = magnitude_spectrum(&Waveform::new(a, 16000).unwrap(), 2000).unwrap();
        let sb = magnitude_spectrum(&Waveform::new(b, 16000).unwrap(), 2000).unwrap();
        let ss = magnitude_spectrum(&Waveform::new(sum, 16000).unwrap(), 2000).unwrap();
        for i in 0..ss.len() {
            assert!(ss[i] <= sa[i] + sb[i] + 1e-9);
        }
    }

    #[test]
    fn features_are_deterministic() {
        let w = sine(440.0, 16000, 8000);
        let cfg = FeatureConfig { frame: 512, hop: 256, spectrum_bins: 128 };
        let a = clip_features(&w, &cfg).unwrap();
        let b = clip_features(&w, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.spectrogram.len(), cfg.spectrogram_input_dim());
        assert_eq!(a.spectrum.len(), 128);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(300.0, 16000, 2048);
        w.write_wav(&path).unwrap();
        let r = Waveform::read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 16000);
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
