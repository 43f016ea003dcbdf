use ndarray::Array2;
use partpose::io::*;
use partpose::synth::SynthConfig;
use partpose::types::{CategoryLabel, ImageRecord, PartRealization, PoseLabel};
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = ImageRecord> {
    let coord = prop_oneof![-100.0f64..100.0, any::<f64>().prop_filter("finite", |v| v.is_finite())];
    let parts = prop::collection::vec((1u32..5, any::<u32>(), coord.clone(), coord, 0.0f64..1e6), 0..12);
    (
        "[a-z0-9_\\-\"é]{1,12}",
        1u32..5,
        0.0f64..360.0,
        16u32..200,
        16u32..200,
        parts,
    )
        .prop_map(|(id, cat, pose, w, h, parts)| {
            let parts = parts
                .into_iter()
                .map(|(layer, part_id, x, y, score)| PartRealization {
                    image_id: id.clone(),
                    layer,
                    part_id,
                    x,
                    y,
                    score,
                })
                .collect();
            ImageRecord::new(
                id.clone(),
                format!("obj-{id}"),
                CategoryLabel::new(cat).unwrap(),
                PoseLabel::new(pose).unwrap(),
                w,
                h,
                parts,
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn part_lines_round_trip(recs in prop::collection::vec(record_strategy(), 0..4)) {
        let mut seen = std::collections::HashSet::new();
        let recs: Vec<_> = recs.into_iter().filter(|r| seen.insert(r.image_id.clone())).collect();
        let text = parts_to_string(&recs);
        prop_assert!(!text.contains('\r'));
        let back = parse_parts(text.as_bytes()).unwrap();
        prop_assert_eq!(back, recs);
    }
}

#[test]
fn generated_dataset_round_trips_through_files() {
    let mut sc = SynthConfig::new(&["cup", "bottle"], 2, 8);
    sc.pose_step_deg = 30.0;
    let m = sc.generate(std::path::Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_manifest(&m, dir.path()).unwrap();
    let back = read_manifest(&manifest_path).unwrap();
    assert_eq!(back, m);
    assert_eq!(manifest_digest(&back), manifest_digest(&m));
    let parts = dir.path().join("extra.jsonl");
    write_parts(&m.records, &parts).unwrap();
    assert_eq!(read_parts(&parts).unwrap(), m.records);
}

#[test]
fn malformed_lines_report_their_number() {
    let good = parts_to_string(&[ImageRecord::new(
        "a",
        "o",
        CategoryLabel::new(1).unwrap(),
        PoseLabel::new(5.0).unwrap(),
        32,
        32,
        vec![PartRealization {
            image_id: "a".into(),
            layer: 1,
            part_id: 0,
            x: 1.0,
            y: 2.0,
            score: 1.0,
        }],
    )
    .unwrap()]);
    let text = format!("{good}{{\"image_id\": \"a\", oops\n");
    match parse_parts(text.as_bytes()) {
        Err(partpose::Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn smooth_image(seed: u64, h: usize, w: usize) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(10.0..h as f64 - 10.0),
                rng.random_range(10.0..w as f64 - 10.0),
                rng.random_range(2.0..5.0),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    Array2::from_shape_fn((h, w), |(r, c)| {
        blobs
            .iter()
            .map(|(br, bc, s, a)| {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>()
            .min(1.0)
    })
}

#[test]
fn responses_match_direct_convolution() {
    let img = smooth_image(3, 24, 30);
    let n = 6;
    let kernels = oriented_kernels(n);
    let resp = response_maps(&img, n);
    for (k, ker) in kernels.iter().enumerate() {
        assert!(ker.sum().abs() < 1e-12);
        for r in 0..24 {
            for c in 0..30 {
                let inside = (3..21).contains(&r) && (3..27).contains(&c);
                let mut acc = 0.0;
                if inside {
                    for dr in -3i64..=3 {
                        for dc in -3i64..=3 {
                            acc += ker[[(dr + 3) as usize, (dc + 3) as usize]]
                                * img[[(r as i64 + dr) as usize, (c as i64 + dc) as usize]];
                        }
                    }
                }
                assert!((resp[[k, r, c]] - acc).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn constant_image_gives_no_parts() {
    let img = Array2::from_elem((32, 32), 0.6);
    assert!(detect_layer1(&img, "c", &EdgeDetectorConfig::default())
        .unwrap()
        .is_empty());
}

#[test]
fn vertical_step_edge() {
    let img = Array2::from_shape_fn((32, 32), |(_, c)| if c >= 16 { 1.0 } else { 0.0 });
    let cfg = EdgeDetectorConfig::default();
    let parts = detect_layer1(&img, "step", &cfg).unwrap();
    assert!(!parts.is_empty());
    let vertical = cfg.n_orientations / 2;
    // dense responses: the winning orientation along the edge is vertical
    let resp = response_maps(&img, cfg.n_orientations);
    for r in 3..29 {
        for c in [15usize, 16] {
            let best = (0..cfg.n_orientations)
                .max_by(|&a, &b| resp[[a, r, c]].abs().total_cmp(&resp[[b, r, c]].abs()))
                .unwrap();
            assert_eq!(best, vertical);
        }
    }
    for p in &parts {
        // the step sits between pixel columns 15 and 16, i.e. centered x = -0.5
        assert!((p.x + 0.5).abs() <= 1.5, "part at x = {}", p.x);
        assert_eq!(p.part_id as usize, vertical);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn detection_is_translation_equivariant(seed in 0u64..10_000, dx in -6i64..=6, dy in -6i64..=6) {
        let (h, w) = (64usize, 64usize);
        let base = smooth_image(seed, 32, 32);
        let place = |ox: i64, oy: i64| {
            let mut img = Array2::<f64>::zeros((h, w));
            for r in 0..32 {
                for c in 0..32 {
                    img[[(r as i64 + 16 + oy) as usize, (c as i64 + 16 + ox) as usize]] = base[[r, c]];
                }
            }
            img
        };
        let cfg = EdgeDetectorConfig { threshold: 0.02, ..EdgeDetectorConfig::default() };
        let a = detect_layer1(&place(0, 0), "a", &cfg).unwrap();
        let b = detect_layer1(&place(dx, dy), "a", &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!((q.x, q.y), (p.x + dx as f64, p.y - dy as f64));
            prop_assert_eq!(q.part_id, p.part_id);
            prop_assert_eq!(q.score, p.score);
        }
    }

    #[test]
    fn suppression_keeps_parts_apart(seed in 0u64..10_000, radius in 0.0f64..6.0) {
        let img = smooth_image(seed, 40, 40);
        let cfg = EdgeDetectorConfig { threshold: 0.01, nms_radius: radius, ..EdgeDetectorConfig::default() };
        let parts = detect_layer1(&img, "n", &cfg).unwrap();
        for (i, p) in parts.iter().enumerate() {
            for q in &parts[i + 1..] {
                prop_assert!((p.x - q.x).hypot(p.y - q.y) > radius);
            }
        }
    }
}
