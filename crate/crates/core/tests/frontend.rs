use std::f64::consts::PI;

use speechsem::frontend::{
    frame_count, frame_signal, mel_points, spectrum, AudioClip, Fbank, FFT_LEN, FRAME_DIM, NUM_MEL, SAMPLE_RATE,
    WINDOW_LEN,
};
use speechsem::wav::{decode_wav, encode_wav, load_wav, write_wav, WavError};

fn tone(hz: f64, len: usize, amp: f64) -> AudioClip {
    let samples = (0..len)
        .map(|n| (amp * (2.0 * PI * hz * n as f64 / SAMPLE_RATE as f64).sin()).round() as i16)
        .collect();
    AudioClip::new(samples, SAMPLE_RATE).unwrap()
}

/// Direct O(N²) DFT power of a zero-padded frame.
fn dft_power(frame: &[f64]) -> Vec<f64> {
    (0..=FFT_LEN / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / FFT_LEN as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn fft_power_matches_direct_dft() {
    let fb = Fbank::new();
    let clip = tone(1234.5, WINDOW_LEN, 9000.0);
    let frame = &frame_signal(&clip)[0];
    let fast = fb.power_spectrum(frame).unwrap();
    let slow = dft_power(frame);
    let scale = slow.iter().cloned().fold(0.0, f64::max);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
    }
}

#[test]
fn tone_at_filter_center_peaks_in_that_filter() {
    let fb = Fbank::new();
    let centers = mel_points();
    for k in 0..NUM_MEL {
        let clip = tone(centers[k + 1], WINDOW_LEN, 12000.0);
        let frame = &frame_signal(&clip)[0];
        let energies = fb.apply_filters(&dft_power(frame));
        let best = (0..NUM_MEL).fold(0, |b, i| if energies[i] > energies[b] { i } else { b });
        assert_eq!(best, k, "tone at {:.1} Hz", centers[k + 1]);
    }
}

#[test]
fn one_second_tone() {
    let clip = tone(440.0, SAMPLE_RATE as usize, 8000.0);
    assert_eq!(clip.samples().len(), 16000);
    assert_eq!(frame_count(16000), 98);
    assert_eq!(spectrum(&clip).len(), 98 * FRAME_DIM);
}

/// Hand-built 44-byte header; the codec must read exactly what it says.
fn hand_wav(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
    let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    let mut b = Vec::new();
    b.extend(b"RIFF");
    b.extend((36 + data.len() as u32).to_le_bytes());
    b.extend(b"WAVE");
    b.extend(b"fmt ");
    b.extend(16u32.to_le_bytes());
    b.extend(1u16.to_le_bytes());
    b.extend(channels.to_le_bytes());
    b.extend(rate.to_le_bytes());
    b.extend((rate * 2 * channels as u32).to_le_bytes());
    b.extend((2 * channels).to_le_bytes());
    b.extend(16u16.to_le_bytes());
    b.extend(b"data");
    b.extend((data.len() as u32).to_le_bytes());
    b.extend(data);
    b
}

#[test]
fn writer_matches_hand_layout() {
    let mut samples = vec![0i16, 1, -1, i16::MAX, i16::MIN, 1234];
    samples.resize(WINDOW_LEN, -7);
    let clip = AudioClip::new(samples.to_vec(), SAMPLE_RATE).unwrap();
    assert_eq!(encode_wav(&clip), hand_wav(1, SAMPLE_RATE, &samples));
    assert_eq!(decode_wav(&hand_wav(1, SAMPLE_RATE, &samples)).unwrap().samples(), &samples);
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.wav");
    let clip = tone(440.0, 16000, 8000.0);
    write_wav(&path, &clip).unwrap();
    assert_eq!(load_wav(&path).unwrap().samples(), clip.samples());
}

#[test]
fn rejects_stereo_and_other_rates() {
    let s = [1i16; WINDOW_LEN];
    assert!(matches!(decode_wav(&hand_wav(1, SAMPLE_RATE, &s[..4])), Err(WavError::Clip(_))));
    assert!(matches!(decode_wav(&hand_wav(2, SAMPLE_RATE, &s)), Err(WavError::Channels(2))));
    assert!(matches!(decode_wav(&hand_wav(1, 44100, &s)), Err(WavError::SampleRate(44100))));
    assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(WavError::NotWave)));
    let mut cut = hand_wav(1, SAMPLE_RATE, &s);
    cut.truncate(cut.len() - 3);
    assert!(decode_wav(&cut).is_err());
}

#[test]
fn silence_gives_finite_floor() {
    let clip = AudioClip::new(vec![0; 4000], SAMPLE_RATE).unwrap();
    let spec = spectrum(&clip);
    assert_eq!(spec.len(), frame_count(4000) * FRAME_DIM);
    assert!(spec.iter().all(|v| v.is_finite()));
}
