use xdjdl_core::evaluate::{detect_fiducials, interval_mae, intervals, split_subwaves, BorderRule, Intervals, R_POSITION};
use xdjdl_core::inference::rotate;
use xdjdl_core::preprocess::{build_dataset, PreprocessConfig};
use xdjdl_core::synthetic::{gen_synthetic_record, EcgTemplateParams};

const FS: f64 = 125.0;

/// Cycles of the planted ECG cut at planted R peaks, rotated so R sits at 40%.
fn planted_frame_cycles(params: &EcgTemplateParams) -> Vec<(Vec<f64>, [usize; 5])> {
    let rec = gen_synthetic_record(params, 10.0, FS).unwrap();
    let ecg = &rec.record.ecg;
    let beats = &rec.truth.beats;
    let mut out = Vec::new();
    for w in beats.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b.r - a.r;
        let shift = (R_POSITION * len as f64).floor() as isize;
        let cycle = rotate(&ecg[a.r..b.r], shift);
        let s = shift as usize;
        // P and Q of the next beat wrap to the front of the frame
        let planted = [b.p - a.r + s - len, b.q - a.r + s - len, s, a.s - a.r + s, a.t - a.r + s];
        out.push((cycle, planted));
    }
    out
}

#[test]
fn fiducials_on_planted_cycles() {
    for (cycle, planted) in planted_frame_cycles(&EcgTemplateParams::default()) {
        let f = detect_fiducials(&cycle, FS);
        assert!(f.is_complete(), "{f:?}");
        let got = [f.p.unwrap(), f.q.unwrap(), f.r.unwrap(), f.s.unwrap(), f.t.unwrap()];
        for (g, p) in got.iter().zip(&planted) {
            assert!(g.abs_diff(*p) <= 2, "detected {got:?}, planted {planted:?}");
        }
    }
}

#[test]
fn planted_waves_fall_in_their_subwaves() {
    for (cycle, planted) in planted_frame_cycles(&EcgTemplateParams::default()) {
        let f = detect_fiducials(&cycle, FS);
        let w = split_subwaves(cycle.len(), &f, BorderRule::single_cycle(cycle.len())).unwrap();
        assert!(w.p.contains(&planted[0]));
        assert!(w.qrs.contains(&planted[2]));
        assert!(w.t.contains(&planted[4]));
        assert_eq!(w.p.start, 0);
        assert_eq!(w.t.end, cycle.len());
    }
}

#[test]
fn mean_intervals_match_template() {
    let params = EcgTemplateParams::default();
    let want = params.implied_intervals();
    let ivs: Vec<Intervals> =
        planted_frame_cycles(&params).iter().map(|(c, _)| intervals(&detect_fiducials(c, FS), FS)).collect();
    let n = ivs.len() as f64;
    let mean = |f: &dyn Fn(&Intervals) -> f64| ivs.iter().map(f).sum::<f64>() / n;
    assert!((mean(&|i| i.pr.unwrap()) - want.pr).abs() <= 0.010);
    assert!((mean(&|i| i.qrs.unwrap()) - want.qrs).abs() <= 0.010);
    assert!((mean(&|i| i.qt.unwrap()) - want.qt).abs() <= 0.010);
}

#[test]
fn preprocessed_reference_intervals_near_planted() {
    let mut worst = 0.0f64;
    for (seed, hr) in [(1u64, 60.0), (2, 75.0), (3, 90.0)] {
        let params = EcgTemplateParams { heart_rate: hr, noise_std: 0.02, seed, ..Default::default() };
        let rec = gen_synthetic_record(&params, 30.0, FS).unwrap();
        let planted = rec.truth.beats[1].intervals(FS);
        let built = build_dataset(&[rec.record], None, &PreprocessConfig::default()).unwrap();
        let set = &built.set;
        let mut got = Vec::new();
        for j in 0..set.len() {
            let col: Vec<f64> = set.e.column(j).iter().copied().collect();
            let d = col.len();
            let fs_eff = set.effective_fs(j);
            let r = detect_fiducials(&col, fs_eff).r.unwrap();
            let framed = rotate(&col, (R_POSITION * d as f64).floor() as isize - r as isize);
            got.push(intervals(&detect_fiducials(&framed, fs_eff), fs_eff));
        }
        let reference = vec![Intervals { pr: Some(planted.pr), qrs: Some(planted.qrs), qt: Some(planted.qt) }; got.len()];
        let mae = interval_mae(&got, &reference).unwrap();
        eprintln!("hr {hr}: {mae:?}");
        worst = worst.max(mae.pr).max(mae.qrs).max(mae.qt);
    }
    assert!(worst <= 0.016, "worst MAE {worst}");
}
