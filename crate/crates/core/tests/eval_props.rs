use partpose::eval::search::cv_loss;
use partpose::eval::*;
use partpose::solver::AdmmConfig;
use partpose::synth::SynthConfig;
use partpose::types::{CategoryLabel, ImageRecord, PartRealization, PoseLabel};
use proptest::prelude::*;

fn label(c: u32) -> CategoryLabel {
    CategoryLabel::new(c).unwrap()
}

#[test]
fn pose_error_examples() {
    let p = |d: f64| PoseLabel::new(d).unwrap();
    assert_eq!(pose_error(p(10.0), 10.0), 0.0);
    assert_eq!(pose_error(p(355.0), 0.0), 5.0);
    assert_eq!(pose_error(p(10.0), 225.0), 145.0);
    assert_eq!(squared_pose_error(p(355.0), 0.0), 25.0);
}

#[test]
fn accuracy_examples() {
    let l = [label(1), label(2), label(1), label(3)];
    assert_eq!(accuracy(&l, &l).unwrap(), 100.0);
    assert_eq!(accuracy(&[label(2), label(1), label(2), label(1)], &l).unwrap(), 0.0);
    assert_eq!(accuracy(&[label(1), label(2), label(1), label(1)], &l).unwrap(), 75.0);
    assert!(accuracy(&[], &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pose_error_is_a_bounded_symmetric_distance(a in 0.0f64..360.0, b in 0.0f64..360.0, k in -3i32..3) {
        let e = pose_error(PoseLabel::new(a).unwrap(), b + 360.0 * k as f64);
        prop_assert!((0.0..=180.0).contains(&e));
        let back = pose_error(PoseLabel::new(b).unwrap(), a);
        prop_assert!((e - back).abs() < 1e-9);
    }

    #[test]
    fn accuracy_ignores_pair_order(pairs in prop::collection::vec((1u32..4, 1u32..4), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (p, l): (Vec<_>, Vec<_>) = pairs.iter().map(|&(a, b)| (label(a), label(b))).unzip();
        let acc = accuracy(&p, &l).unwrap();
        prop_assert!((0.0..=100.0).contains(&acc));
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (p2, l2): (Vec<_>, Vec<_>) = shuffled.iter().map(|&(a, b)| (label(a), label(b))).unzip();
        prop_assert_eq!(accuracy(&p2, &l2).unwrap(), acc);
    }

    #[test]
    fn folds_never_split_an_object(objects in prop::collection::vec(1usize..6, 1..12), k in 2usize..5) {
        let mut records = Vec::new();
        for (o, &views) in objects.iter().enumerate() {
            for v in 0..views {
                let id = format!("o{o}_{v}");
                records.push(ImageRecord::new(id, format!("o{o}"), label(1 + (o % 2) as u32), PoseLabel::new(10.0 * v as f64).unwrap(), 32, 32, vec![]).unwrap());
            }
        }
        let rows: Vec<usize> = (0..records.len()).collect();
        let folds = cv_folds(&records, &rows, k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(all, rows);
        if objects.len() >= 2 {
            for f in &folds {
                for g in &folds {
                    if std::ptr::eq(f, g) {
                        continue;
                    }
                    for &i in f {
                        prop_assert!(g.iter().all(|&j| records[j].object_id != records[i].object_id));
                    }
                }
            }
            prop_assert!(folds.iter().all(|f| !f.is_empty()));
        }
    }
}

/// Each view holds parts on a ring, rotated with the pose; orientation bins
/// are the only place where the pose shows up at a fine scale.
fn ring_records() -> Vec<ImageRecord> {
    let mut out = Vec::new();
    for o in 0..4 {
        let radius = 18.0 + 2.0 * o as f64;
        for step in 0..72 {
            let pose = 5.0 * step as f64;
            let id = format!("ring{o}_{step:03}");
            let parts = [0.0, 100.0, 170.0]
                .iter()
                .enumerate()
                .map(|(k, off)| {
                    let t = (pose + off).to_radians();
                    PartRealization {
                        image_id: id.clone(),
                        layer: 1,
                        part_id: k as u32,
                        x: radius * t.cos(),
                        y: radius * t.sin(),
                        score: 1.0,
                    }
                })
                .collect();
            out.push(
                ImageRecord::new(
                    id,
                    format!("ring{o}"),
                    label(1),
                    PoseLabel::new(pose).unwrap(),
                    64,
                    64,
                    parts,
                )
                .unwrap(),
            );
        }
    }
    out
}

#[test]
fn fine_bins_win_when_coarse_bins_blur_the_pose() {
    let records = ring_records();
    let cache = FeatureCache::new(&records, 1);
    let grids = Grids {
        bin_sizes: vec![8.0, 16.0, 32.0, 64.0],
        cells: vec![2],
        alphas: vec![1e-3],
    };
    let train: Vec<usize> = (0..records.len()).collect();
    let cats = vec!["ring".to_string()];
    let solver = AdmmConfig::default();
    let sel = greedy_grid_search(
        &cache,
        Task::Pose,
        Method::Proposed,
        &grids,
        &cats,
        &train,
        3,
        &solver,
        false,
    )
    .unwrap();
    // exhaustive sweep over the same folds
    let folds = cv_folds(&records, &train, 3);
    let losses: Vec<(f64, f64)> = grids
        .bin_sizes
        .iter()
        .map(|&b| {
            let s = Setting {
                bin_size: b,
                cells: 2,
                alpha: 1e-3,
            };
            (
                b,
                cv_loss(&cache, Task::Pose, Method::Proposed, &s, &cats, &folds, &solver, false).unwrap(),
            )
        })
        .collect();
    let oracle = losses.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert!(oracle.0 <= 16.0, "{losses:?}");
    assert_eq!(sel.setting.bin_size, oracle.0, "{losses:?}");
    assert!((sel.cv_loss - oracle.1).abs() < 1e-12);
}

#[test]
fn single_point_grid_trains_nothing() {
    let records = ring_records();
    let cache = FeatureCache::new(&records, 1);
    let grids = Grids {
        bin_sizes: vec![32.0],
        cells: vec![4],
        alphas: vec![0.1],
    };
    let sel = greedy_grid_search(
        &cache,
        Task::Pose,
        Method::Proposed,
        &grids,
        &["ring".into()],
        &[0, 1, 2],
        3,
        &AdmmConfig::default(),
        false,
    )
    .unwrap();
    assert_eq!(sel.evaluations, 0);
    assert_eq!(
        (sel.setting.bin_size, sel.setting.cells, sel.setting.alpha),
        (32.0, 4, 0.1)
    );
}

#[test]
fn selection_is_never_worse_than_what_the_sweep_saw() {
    let mut sc = SynthConfig::new(&["cup", "teapot"], 4, 21);
    sc.pose_step_deg = 30.0;
    let m = sc.generate(std::path::Path::new(".")).unwrap();
    let cache = FeatureCache::new(&m.records, m.num_layers);
    let grids = Grids {
        bin_sizes: vec![32.0, 64.0],
        cells: vec![2, 4],
        alphas: vec![0.01, 0.1, 1.0],
    };
    let train: Vec<usize> = (0..m.records.len())
        .filter(|&i| m.records[i].category.index() == 0)
        .collect();
    let solver = AdmmConfig::default();
    for method in [Method::Proposed, Method::Layer(2)] {
        let sel = greedy_grid_search(
            &cache,
            Task::Pose,
            method,
            &grids,
            &m.categories,
            &train,
            3,
            &solver,
            false,
        )
        .unwrap();
        let folds = cv_folds(&m.records, &train, 3);
        let loss = |s: Setting| cv_loss(&cache, Task::Pose, method, &s, &m.categories, &folds, &solver, false).unwrap();
        assert!((loss(sel.setting) - sel.cv_loss).abs() < 1e-12);
        // the first point of the sweep and the whole last sweep
        assert!(
            sel.cv_loss
                <= loss(Setting {
                    bin_size: 32.0,
                    cells: 2,
                    alpha: 0.1
                })
        );
        for a in &grids.alphas {
            assert!(
                sel.cv_loss
                    <= loss(Setting {
                        alpha: *a,
                        ..sel.setting
                    })
            );
        }
        assert!(sel.evaluations <= 2 + 2 + 3);
    }
}

fn small_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        protocol: Protocol::ObjectWise,
        task: Task::Pose,
        n_train: vec![1, 2],
        n_test: 1,
        categories: vec![1],
        repeats: 2,
        grids: Grids {
            bin_sizes: vec![32.0, 64.0],
            cells: vec![4],
            alphas: vec![0.1],
        },
        methods: vec![],
        solver: AdmmConfig::default(),
        cv_folds: 3,
        squared_error: false,
        seed,
    }
}

#[test]
fn experiments_are_deterministic() {
    let mut sc = SynthConfig::new(&["cup", "bottle"], 3, 2);
    sc.pose_step_deg = 30.0;
    let m = sc.generate(std::path::Path::new(".")).unwrap();
    let a = run_experiment(&small_experiment(7), &m, 0).unwrap();
    let b = run_experiment(&small_experiment(7), &m, 0).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(a.rows.iter().all(|r| r.value.is_some()));
    // 2 n_train values x 2 repeats x (proposed + 4 layers + hog), categories pooled
    assert_eq!(a.rows.len(), 2 * 2 * 6);
    let c = run_experiment(&small_experiment(8), &m, 0).unwrap();
    assert_ne!(a.to_csv().unwrap(), c.to_csv().unwrap());
    let csv = a.to_csv().unwrap();
    assert!(csv.starts_with("protocol,C,n_train,method,repeat,metric,value\n"));
}

#[test]
fn too_few_objects_fail_before_training() {
    let mut sc = SynthConfig::new(&["cup"], 3, 2);
    sc.pose_step_deg = 30.0;
    let m = sc.generate(std::path::Path::new(".")).unwrap();
    let mut cfg = small_experiment(1);
    cfg.n_train = vec![1, 3];
    assert!(run_experiment(&cfg, &m, 0).is_err());
}
