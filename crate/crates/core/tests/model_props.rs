mod common;

use common::*;
use partpose::features::{GroupedDesignMatrix, Standardization};
use partpose::solver::*;
use partpose::types::CategoryLabel;
use proptest::prelude::*;
use rand::Rng;

fn pose_model(omega: Vec<f64>, target_mean: f64) -> PoseModel {
    let d = omega.len();
    PoseModel {
        groups: vec![0..d],
        omega,
        standardization: Standardization::identity(d),
        target_mean,
        rho: 1.0,
        lambda: 0.0,
        alpha: 0.0,
        penalty: Penalty::Group,
        features: None,
    }
}

fn category_model(class_weights: Vec<Vec<f64>>) -> CategoryModel {
    let d = class_weights[0].len();
    let c = class_weights.len();
    CategoryModel {
        groups: vec![0..d],
        class_weights,
        standardization: Standardization::identity(d),
        rho: 1.0,
        lambdas: vec![0.0; c],
        alpha: 0.0,
        logistic_form: LogisticForm::Conventional,
        categories: (0..c).map(|i| format!("c{i}")).collect(),
        features: None,
    }
}

#[test]
fn zero_weights_predict_the_training_mean() {
    let m = pose_model(vec![0.0; 6], 123.5);
    assert_eq!(predict_pose(&m, &[1.0, -2.0, 3.0, 0.5, 9.0, -1.0]).unwrap(), 123.5);
    assert!(predict_pose(&m, &[1.0]).is_err());
}

#[test]
fn exactly_determined_rows_are_reproduced() {
    let mut r = rng(17);
    let f = random_matrix(&mut r, 6, 6);
    let poses: Vec<f64> = (0..6).map(|i| 50.0 * i as f64 + r.random_range(0.0..10.0)).collect();
    let dm = GroupedDesignMatrix::new(to_array(&f), vec![0..6]).unwrap();
    let cfg = AdmmConfig {
        alpha: 0.0,
        tol_primal: 1e-12,
        tol_dual: 1e-12,
        max_iters: 100_000,
        ..AdmmConfig::default()
    };
    let (model, _) = PoseModel::fit(&dm, &poses, Penalty::Group, &cfg).unwrap();
    for (row, pose) in f.iter().zip(&poses) {
        let p = predict_pose(&model, row).unwrap();
        assert!((p - pose).abs() < 1e-6, "{p} vs {pose}");
    }
}

#[test]
fn reported_pose_wraps_into_turntable_range() {
    assert_eq!(report_pose(370.0), 10.0);
    assert_eq!(report_pose(-10.0), 350.0);
    assert_eq!(report_pose(360.0), 0.0);
}

#[test]
fn logistic_probability_stability() {
    assert_eq!(sigmoid(0.0), 0.5);
    let p = sigmoid(50.0);
    assert!(p.is_finite() && p <= 1.0 && 1.0 - p < 1e-20);
    assert!(sigmoid(-50.0) > 0.0 && sigmoid(-50.0) < 1e-20);
    for h in [-1e4, -700.0, 700.0, 1e4] {
        let p = sigmoid(h);
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }
}

#[test]
fn category_tie_goes_to_first_class() {
    let m = category_model(vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
    assert_eq!(
        predict_category(&m, &[0.3, -0.1]).unwrap(),
        CategoryLabel::new(1).unwrap()
    );
    let m = category_model(vec![vec![3.0], vec![-1.0]]);
    assert_eq!(predict_category(&m, &[1.0]).unwrap(), CategoryLabel::new(1).unwrap());
}

#[test]
fn models_survive_json_round_trip() {
    let mut m = pose_model(vec![0.25, -1.5, 1e-17, 3.0], 181.0);
    m.groups = vec![0..2, 2..4];
    let back = PoseModel::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    let c = category_model(vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.0, 0.0]]);
    assert_eq!(CategoryModel::from_json(&c.to_json().unwrap()).unwrap(), c);
    let text = m.to_json().unwrap();
    for key in [
        "\"groups\"",
        "\"omega\"",
        "\"col_means\"",
        "\"col_scales\"",
        "\"rho\"",
        "\"lambda\"",
        "\"alpha\"",
    ] {
        assert!(text.contains(key), "missing {key}");
    }
}

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn probability_matches_direct_formula(f in vec_of(5), w in vec_of(5)) {
        let h: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum();
        let direct = h.exp() / (1.0 + h.exp());
        let p = logistic_prob(&f, &w).unwrap();
        prop_assert!(p > 0.0 && p < 1.0 || h.abs() > 30.0);
        if direct.is_finite() {
            prop_assert!((p - direct).abs() <= 1e-12, "{} vs {}", p, direct);
        }
    }

    #[test]
    fn pose_prediction_is_affine(w in vec_of(6), f1 in vec_of(6), f2 in vec_of(6), mean in 0.0f64..360.0) {
        let m = pose_model(w, mean);
        let zero = predict_pose(&m, &[0.0; 6]).unwrap();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let lhs = predict_pose(&m, &sum).unwrap() - zero;
        let rhs = (predict_pose(&m, &f1).unwrap() - zero) + (predict_pose(&m, &f2).unwrap() - zero);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn argmax_ignores_common_weight_shift(ws in prop::collection::vec(vec_of(4), 2..5), shift in vec_of(4), f in vec_of(4)) {
        let before = predict_category(&category_model(ws.clone()), &f).unwrap();
        let shifted: Vec<Vec<f64>> = ws.iter().map(|w| w.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let scores: Vec<f64> = ws.iter().map(|w| w.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // a near tie can flip under rounding of the shifted scores
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(predict_category(&category_model(shifted), &f).unwrap(), before);
        let best = scores.iter().enumerate().fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
        prop_assert_eq!(before.index(), best);
    }
}
