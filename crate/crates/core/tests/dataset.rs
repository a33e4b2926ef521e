use std::fs;
use std::path::Path;

use pcsc_core::dataset::{
    decode_sample, encode_sample, generate_synthetic, make_manifest, normalize_unit_sphere,
    parse_off, serialize_off, Dataset, PointCloud, ShapeClass, SyntheticConfig,
};
use pcsc_core::Error;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[test]
fn minimal_off_reads_three_points() {
    let c = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
    assert_eq!(c.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
}

#[test]
fn short_vertex_block_names_a_line() {
    match parse_off(b"OFF\n4 0 0\n0 0 0\n1 0 0\n0 1 0\n") {
        Err(Error::Parse { line, .. }) => assert!(line >= 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn non_numeric_coordinate_is_a_parse_error() {
    assert!(matches!(
        parse_off(b"OFF\n1 0 0\n0 x 0\n"),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn sphere_points_lie_on_unit_sphere() {
    let c = generate_synthetic(ShapeClass::Sphere as usize, 256, 7, 0.0).unwrap();
    assert_eq!(c.len(), 256);
    for p in c.points() {
        assert!((norm(*p) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn generator_is_deterministic() {
    for class in 0..8 {
        let a = generate_synthetic(class, 128, 99, 0.01).unwrap();
        let b = generate_synthetic(class, 128, 99, 0.01).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn cube_points_lie_on_faces() {
    let c = generate_synthetic(ShapeClass::Cube as usize, 256, 1, 0.0).unwrap();
    let half = c
        .points()
        .iter()
        .flat_map(|p| p.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    for p in c.points() {
        let m = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!((m - half).abs() < 1e-6, "{p:?} off the faces");
    }
}

#[test]
fn every_class_is_normalized() {
    for class in 0..8 {
        let c = generate_synthetic(class, 200, 3, 0.02).unwrap();
        let cen = c.centroid();
        assert!(cen.iter().all(|x| x.abs() < 1e-6), "class {class}: {cen:?}");
        assert!((c.max_norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn generator_rejects_bad_arguments() {
    assert!(matches!(generate_synthetic(8, 64, 0, 0.0), Err(Error::Config(_))));
    assert!(generate_synthetic(0, 4, 0, 0.0).is_err());
}

#[test]
fn normalization_edge_cases() {
    let unit = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], None).unwrap();
    let n = normalize_unit_sphere(&unit).unwrap();
    for (a, b) in n.points().iter().zip(unit.points()) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
    }
    let same = PointCloud::new(vec![[0.3, 0.3, 0.3]; 5], None).unwrap();
    assert!(matches!(normalize_unit_sphere(&same), Err(Error::Degenerate(_))));
}

#[test]
fn empty_and_non_finite_clouds_are_rejected() {
    assert!(PointCloud::new(vec![], None).is_err());
    assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], None).is_err());
}

#[test]
fn synthetic_splits_are_balanced() {
    let cfg = SyntheticConfig {
        points_per_cloud: 32,
        ..SyntheticConfig::default()
    };
    let d = Dataset::synthetic(&cfg).unwrap();
    assert_eq!(Dataset::class_counts(&d.train, 8), vec![64; 8]);
    assert_eq!(Dataset::class_counts(&d.test, 8), vec![16; 8]);
    assert_eq!(make_manifest(&cfg).unwrap(), d.manifest);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_directory_is_reproducible_and_round_trips() {
    let cfg = SyntheticConfig {
        train_per_class: 4,
        test_per_class: 2,
        points_per_cloud: 64,
        ..SyntheticConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let d = Dataset::synthetic(&cfg).unwrap();
    d.write(a.path()).unwrap();
    Dataset::synthetic(&cfg).unwrap().write(b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));

    let loaded = Dataset::load(a.path()).unwrap();
    assert_eq!(loaded, d.quantized().unwrap());
}

#[test]
fn load_rejects_foreign_labels() {
    let cfg = SyntheticConfig {
        train_per_class: 1,
        test_per_class: 1,
        points_per_cloud: 16,
        ..SyntheticConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let d = Dataset::synthetic(&cfg).unwrap();
    d.write(dir.path()).unwrap();
    let id = &d.manifest.splits.train[0];
    let bad = PointCloud::new(d.train[0].points().to_vec(), Some(11)).unwrap();
    fs::write(
        dir.path().join("samples").join(format!("{id}.pcsc")),
        encode_sample(&bad).unwrap(),
    )
    .unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Config(_))));
}

#[test]
fn random_bytes_never_crash_the_parser() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut accepted = 0;
    for i in 0..10_000 {
        let len = rng.random_range(0..256);
        let mut buf = vec![0u8; len];
        rng.fill_bytes(&mut buf);
        // Half the cases get a plausible header so the body parser is exercised.
        if i % 2 == 0 {
            let mut v = b"OFF\n3 0 0\n".to_vec();
            v.extend(buf.iter().map(|b| b"0123456789 .-e\n#x"[*b as usize % 17]));
            buf = v;
        }
        if parse_off(&buf).is_ok() {
            accepted += 1;
        }
    }
    assert!(accepted < 10_000);
}

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3f64..1e3,
        any::<i16>().prop_map(f64::from),
        (any::<i32>(), -30i32..30).prop_map(|(m, e)| f64::from(m) * 10f64.powi(e)),
    ]
}

proptest! {
    #[test]
    fn off_round_trip(points in proptest::collection::vec([coord(), coord(), coord()], 1..50)) {
        let text = serialize_off(&PointCloud::new(points, None).unwrap());
        let once = parse_off(text.as_bytes()).unwrap();
        let twice = parse_off(serialize_off(&once).as_bytes()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn pcsc_sample_round_trip(
        points in proptest::collection::vec([-10.0f32..10.0, -10.0f32..10.0, -10.0f32..10.0], 1..40),
        label in proptest::option::of(0usize..1000),
    ) {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| p.map(f64::from)).collect();
        let c = PointCloud::new(pts, label).unwrap();
        let bytes = encode_sample(&c).unwrap();
        let back = decode_sample(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(encode_sample(&back).unwrap(), bytes);
    }

    #[test]
    fn normalization_centers_and_scales(
        points in proptest::collection::vec([-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0], 2..60),
    ) {
        let c = PointCloud::new(points, None).unwrap();
        prop_assume!(c.points().iter().any(|p| *p != c.points()[0]));
        let n = c.normalize_unit_sphere().unwrap();
        prop_assert!(n.centroid().iter().all(|x| x.abs() < 1e-6));
        prop_assert!((n.max_norm() - 1.0).abs() < 1e-6);
    }
}

fn write_off(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

// Two disjoint triangles: area 2 at z = 0 and area 0.5 at z = 1.
const TWO_LAYERS: &str = "OFF\n6 2 0\n0 0 0\n2 0 0\n0 2 0\n0 0 1\n1 0 1\n0 1 1\n3 0 1 2\n3 3 4 5\n";
const FLAT: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

#[test]
fn off_tree_import_samples_by_area() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    write_off(&r.join("b_flat/train/m1.off"), FLAT);
    write_off(&r.join("b_flat/test/m2.off"), FLAT);
    write_off(&r.join("a_layers/train/x.off"), TWO_LAYERS);
    write_off(&r.join("a_layers/train/notes.txt"), "ignored");
    write_off(&r.join("a_layers/test/y.OFF"), TWO_LAYERS);

    let data = Dataset::from_off_tree(r, 4000, 5).unwrap();
    assert_eq!(data.manifest.class_names, ["a_layers", "b_flat"]);
    assert_eq!(data.manifest.splits.train, ["a_layers_train_x", "b_flat_train_m1"]);
    assert_eq!(data.manifest.splits.test, ["a_layers_test_y", "b_flat_test_m2"]);
    assert_eq!(data.train[0].label, Some(0));
    assert_eq!(data.train[1].label, Some(1));

    // A planar mesh stays planar through centering and scaling.
    assert!(data.train[1].points().iter().all(|p| p[2].abs() < 1e-12));
    for c in data.train.iter().chain(&data.test) {
        assert_eq!(c.len(), 4000);
        let max = c.points().iter().map(|&p| norm(p)).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
    }
    // Area weighting: 4/5 of the samples land on the lower layer.
    let zs: Vec<f64> = data.train[0].points().iter().map(|p| p[2]).collect();
    let mid = (zs.iter().cloned().fold(f64::INFINITY, f64::min) + zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)) / 2.0;
    let lower = zs.iter().filter(|&&z| z < mid).count() as f64 / zs.len() as f64;
    let se = (0.8f64 * 0.2 / 4000.0).sqrt();
    assert!((lower - 0.8).abs() < 4.0 * se, "lower fraction {lower}");

    let again = Dataset::from_off_tree(r, 4000, 5).unwrap();
    assert_eq!(again.train, data.train);
    assert_ne!(Dataset::from_off_tree(r, 4000, 6).unwrap().train, data.train);
}

#[test]
fn off_tree_errors_name_the_file() {
    let root = tempfile::tempdir().unwrap();
    assert!(matches!(Dataset::from_off_tree(root.path(), 16, 0), Err(Error::Config(_))));
    write_off(&root.path().join("c/train/bad.off"), "OFF\n3 1 0\n0 0 0\n");
    match Dataset::from_off_tree(root.path(), 16, 0) {
        Err(Error::Parse { msg, .. }) => assert!(msg.contains("bad.off"), "{msg}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}
