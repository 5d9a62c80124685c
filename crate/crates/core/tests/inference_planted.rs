use nalgebra::DMatrix;
use proptest::prelude::*;
use xdjdl_core::dict_learning::{build_q_matrix, LcXdjdlModel, XdjdlModel};
use xdjdl_core::inference::{align_r_peak_offset, infer_ecg, infer_ecg_lc, rotate};
use xdjdl_core::synthetic::{gen_planted_model, PlantedData, PlantedSpec};
use xdjdl_core::HyperParams;

fn true_model(data: &PlantedData, spec: &PlantedSpec) -> XdjdlModel {
    XdjdlModel {
        d_e: data.model.d_e.clone(),
        d_p: data.model.d_p.atoms().clone(),
        w: data.model.w.clone(),
        hyper: HyperParams { t_e: spec.t_e, t_p: spec.t_p, ..HyperParams::desk() },
        trace: vec![],
        iterations: vec![],
    }
}

#[test]
fn true_model_reconstructs_planted_ecg() {
    for seed in 0..5 {
        let spec = PlantedSpec { seed, n: 100, ..Default::default() };
        let data = gen_planted_model(&spec).unwrap();
        let model = true_model(&data, &spec);
        let rec = infer_ecg(&model, &data.x_p).unwrap();
        let err = (&rec.r_e - &data.x_e).abs().max();
        assert!(err < 1e-6, "seed {seed}: {err:e}");
        // reconstruction is D_e W s_p for the returned codes
        let direct = model.d_e.atoms() * (&model.w * rec.source_codes.to_dense());
        assert!((&rec.r_e - direct).abs().max() < 1e-12);
        assert!(rec.source_codes.max_nnz() <= spec.t_p);
    }
}

#[test]
fn inference_commutes_with_column_permutation() {
    let spec = PlantedSpec { seed: 4, n: 40, ..Default::default() };
    let data = gen_planted_model(&spec).unwrap();
    let model = true_model(&data, &spec);
    let perm: Vec<usize> = (0..40).rev().map(|j| (j * 7) % 40).collect();
    let a = infer_ecg(&model, &data.x_p).unwrap().r_e;
    let b = infer_ecg(&model, &data.x_p.select_columns(perm.iter())).unwrap().r_e;
    assert_eq!(a.select_columns(perm.iter()), b);
}

#[test]
fn lc_inference_with_class_indicator_matches_truth() {
    let spec = PlantedSpec { seed: 2, n: 80, class_count: Some(2), simplex_codes: true, ..Default::default() };
    let data = gen_planted_model(&spec).unwrap();
    let labels = data.model.labels.clone().unwrap();
    let pool = spec.k_p / 2;
    let h = DMatrix::from_fn(2, spec.k_p, |c, i| f64::from(u8::from(i / pool == c)));
    let q = build_q_matrix(&labels, 2, 1).unwrap();
    // H A_p reproduces Q exactly for simplex codes
    assert!((&q.q - data.model.codes.left_mul(&h)).abs().max() < 1e-12);

    let mut base = true_model(&data, &spec);
    base.hyper.gamma = 1e-12;
    let lc = LcXdjdlModel { base: base.clone(), h, class_count: 2, ones_per_class: 1 };
    let r_lc = infer_ecg_lc(&lc, &data.x_p, &q).unwrap().r_e;
    let r = infer_ecg(&base, &data.x_p).unwrap().r_e;
    assert!((&r_lc - &r).abs().max() < 1e-9);
    assert!((&r_lc - &data.x_e).abs().max() < 1e-6);
}

proptest! {
    #[test]
    fn alignment_undoes_rotation(len in 8usize..80, peak_frac in 0.0f64..1.0, shift in -200isize..200) {
        let peak = ((len - 1) as f64 * peak_frac) as usize;
        let cycle: Vec<f64> = (0..len).map(|i| if i == peak { 5.0 } else { ((i * 13) % 7) as f64 * 0.1 }).collect();
        let moved = rotate(&cycle, shift);
        let aligned = align_r_peak_offset(&cycle, &moved).unwrap();
        prop_assert_eq!(aligned, cycle);
    }
}
