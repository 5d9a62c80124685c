use xdjdl_core::preprocess::{
    build_dataset, detect_ppg_onsets, detect_r_peaks, detrend, segment_o2o, segment_r2r, FiducialIndexList, PreprocessConfig,
    SegmentationMode,
};
use xdjdl_core::synthetic::{gen_synthetic_record, EcgTemplateParams};
use xdjdl_core::Error;

const FS: f64 = 125.0;

fn hits(detected: &[usize], planted: &[usize], tol: usize) -> usize {
    planted.iter().filter(|&&p| detected.iter().any(|&d| d.abs_diff(p) <= tol)).count()
}

#[test]
fn r_peaks_at_sixty_bpm() {
    let rec = gen_synthetic_record(&EcgTemplateParams::default(), 10.0, FS).unwrap();
    let peaks = detect_r_peaks(&rec.record.ecg, FS).unwrap();
    assert!(peaks.len() >= 9);
    for &p in peaks.as_slice() {
        assert!(rec.truth.r_peaks.iter().any(|&r| r.abs_diff(p) <= 2), "spurious peak {p}");
    }
}

#[test]
fn r_peak_spacing_at_120_bpm() {
    let params = EcgTemplateParams { heart_rate: 120.0, ..Default::default() };
    let rec = gen_synthetic_record(&params, 10.0, FS).unwrap();
    let peaks = detect_r_peaks(&rec.record.ecg, FS).unwrap();
    let mut gaps: Vec<f64> = peaks.as_slice().windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len();
    let median = if m % 2 == 1 { gaps[m / 2] } else { 0.5 * (gaps[m / 2 - 1] + gaps[m / 2]) };
    assert!((median - 62.5).abs() <= 2.0, "median {median}");
}

#[test]
fn r_peak_recall_across_rates_and_noise() {
    for hr in [50.0, 60.0, 90.0, 120.0] {
        for (seed, noise) in [(1u64, 0.0), (2, 0.02), (3, 0.05)] {
            let params = EcgTemplateParams { heart_rate: hr, noise_std: noise, seed, ..Default::default() };
            let rec = gen_synthetic_record(&params, 20.0, FS).unwrap();
            let peaks = detect_r_peaks(&rec.record.ecg, FS).unwrap();
            let found = hits(peaks.as_slice(), &rec.truth.r_peaks, 2);
            let total = rec.truth.r_peaks.len();
            assert!(found as f64 >= 0.9 * total as f64, "hr {hr} noise {noise}: {found}/{total}");
        }
    }
}

#[test]
fn r_peaks_survive_detrending_and_jitter() {
    let params = EcgTemplateParams { hr_jitter: 0.1, noise_std: 0.02, seed: 11, ..Default::default() };
    let rec = gen_synthetic_record(&params, 30.0, FS).unwrap();
    let ecg = detrend(&rec.record.ecg, 300.0).unwrap();
    let peaks = detect_r_peaks(&ecg, FS).unwrap();
    let found = hits(peaks.as_slice(), &rec.truth.r_peaks, 2);
    assert!(found as f64 >= 0.9 * rec.truth.r_peaks.len() as f64);
}

#[test]
fn ppg_onsets_match_planted() {
    let rec = gen_synthetic_record(&EcgTemplateParams::default(), 10.0, FS).unwrap();
    let onsets = detect_ppg_onsets(&rec.record.ppg, FS).unwrap();
    assert!(!onsets.is_empty());
    for &o in onsets.as_slice() {
        assert!(rec.truth.onsets.iter().any(|&p| p.abs_diff(o) <= 3), "onset {o} not planted");
    }
    assert!(hits(onsets.as_slice(), &rec.truth.onsets, 3) >= rec.truth.onsets.len() - 1);
}

#[test]
fn r2r_cycles_start_at_planted_r() {
    let rec = gen_synthetic_record(&EcgTemplateParams::default(), 10.0, FS).unwrap();
    let r = FiducialIndexList::new(rec.truth.r_peaks.clone(), rec.record.len()).unwrap();
    let pairs = segment_r2r(&rec.record.ppg, &rec.record.ecg, &r, FS).unwrap();
    assert_eq!(pairs.len(), 9);
    for pair in &pairs {
        assert_eq!(pair.ppg.len(), pair.ecg.len());
        let inside: Vec<usize> =
            rec.truth.r_peaks.iter().copied().filter(|&x| x >= pair.start && x < pair.start + pair.len()).collect();
        assert_eq!(inside, vec![pair.start]);
    }
}

#[test]
fn o2o_cycle_count_from_planted_onsets() {
    let rec = gen_synthetic_record(&EcgTemplateParams::default(), 10.0, FS).unwrap();
    let o = FiducialIndexList::new(rec.truth.onsets.clone(), rec.record.len()).unwrap();
    let cycles = segment_o2o(&rec.record.ppg, &o, FS).unwrap();
    assert_eq!(cycles.len(), rec.truth.onsets.len() - 1);
}

#[test]
fn dataset_from_eleven_beats() {
    let params = EcgTemplateParams { noise_std: 0.01, seed: 4, ..Default::default() };
    let rec = gen_synthetic_record(&params, 11.0, FS).unwrap();
    assert_eq!(rec.truth.r_peaks.len(), 11);
    let built = build_dataset(&[rec.record], None, &PreprocessConfig::default()).unwrap();
    assert_eq!(built.set.len(), 10);
    assert_eq!(built.set.d(), 300);
    built.set.check_shapes().unwrap();
    built.set.check_normalized().unwrap();
    assert!(built.lags[0].abs_diff(25) <= 2, "lag {:?}", built.lags);
}

#[test]
fn dataset_labels_follow_records() {
    let a = gen_synthetic_record(&EcgTemplateParams { seed: 1, ..Default::default() }, 8.0, FS).unwrap();
    let b = gen_synthetic_record(&EcgTemplateParams { heart_rate: 80.0, seed: 2, ..Default::default() }, 8.0, FS).unwrap();
    let built = build_dataset(&[a.record, b.record], Some(&[0, 1]), &PreprocessConfig::default()).unwrap();
    let labels = built.set.labels.as_ref().unwrap();
    for (l, r) in labels.iter().zip(&built.set.record_ids) {
        assert_eq!(l, r);
    }
    assert!(labels.contains(&0) && labels.contains(&1));
    let first_b = labels.iter().position(|&l| l == 1).unwrap();
    assert!(labels[first_b..].iter().all(|&l| l == 1));
}

#[test]
fn o2o_dataset_is_normalized() {
    let rec = gen_synthetic_record(&EcgTemplateParams { noise_std: 0.01, seed: 3, ..Default::default() }, 12.0, FS).unwrap();
    let cfg = PreprocessConfig { mode: SegmentationMode::O2O, ..Default::default() };
    let built = build_dataset(&[rec.record], None, &cfg).unwrap();
    assert!(built.set.len() >= 9);
    built.set.check_normalized().unwrap();
}

#[test]
fn single_beat_record_is_empty_dataset() {
    let params = EcgTemplateParams { heart_rate: 25.0, ..Default::default() };
    let rec = gen_synthetic_record(&params, 4.8, FS).unwrap();
    let r = build_dataset(&[rec.record], None, &PreprocessConfig::default());
    assert!(matches!(r, Err(Error::EmptyDataset)), "{r:?}");
}
