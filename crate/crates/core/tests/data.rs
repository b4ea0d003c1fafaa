use std::fs;
use std::path::Path;

use pcdiag_core::data::{
    build_dataset, compose_background, generate_dataset, generate_shape, load_dataset, load_off, load_xyz, normalize,
    parse_off, parse_xyz, to_xyz, write_xyz, DatasetConfig, DatasetManifest, ShapeClass, MANIFEST_FILE,
};
use pcdiag_core::geom::{mean_nn_distance, Point, PointCloud};
use pcdiag_core::Error;
use proptest::prelude::*;

fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn centroid(pts: &[Point]) -> Point {
    let n = pts.len() as f64;
    [0, 1, 2].map(|r| pts.iter().map(|p| p[r]).sum::<f64>() / n)
}

#[test]
fn shapes_follow_their_surfaces() {
    for seed in 0..5 {
        let sphere = generate_shape(ShapeClass::Sphere, 500, seed).unwrap();
        assert!(sphere.points().iter().all(|p| (norm(p) - 1.0).abs() <= 0.05));
        let plane = generate_shape(ShapeClass::Plane, 500, seed).unwrap();
        assert!(plane.points().iter().all(|p| p[2].abs() <= 0.05));
    }
    for class in ShapeClass::ALL {
        let c = generate_shape(class, 300, 1).unwrap();
        assert_eq!(c.len(), 300);
        assert_eq!(c.label(), Some(class.index()));
        assert!(c.points().iter().all(|p| norm(p) <= 1.05), "{class} leaves the unit ball");
        assert_eq!(c, generate_shape(class, 300, 1).unwrap());
        assert_ne!(c, generate_shape(class, 300, 2).unwrap());
        assert_eq!(class.name().parse::<ShapeClass>().unwrap(), class);
    }
    assert!(matches!(generate_shape(ShapeClass::Cube, 7, 0), Err(Error::Count(_))));
    assert!(matches!("pyramid".parse::<ShapeClass>(), Err(Error::Class(_))));
}

#[test]
fn sampling_is_uniform_by_area() {
    // cylinder r = 0.6, half height 0.8: caps hold 2πr² of 2πr·1.6 + 2πr²
    let c = generate_shape(ShapeClass::Cylinder, 20_000, 3).unwrap();
    let caps = c.points().iter().filter(|p| (p[2].abs() - 0.8).abs() < 0.04 && p[0].hypot(p[1]) < 0.55).count();
    // counted inside radius 0.55 only, clear of the rim where the side meets the cap
    let expected = 0.6 / (1.6 + 0.6) * (0.55f64 / 0.6).powi(2);
    let frac = caps as f64 / 20_000.0;
    assert!((frac - expected).abs() < 0.02, "cap fraction {frac} vs {expected}");

    // a sphere's z coordinate is uniform on [−1, 1] (Archimedes)
    let s = generate_shape(ShapeClass::Sphere, 20_000, 4).unwrap();
    let upper = s.points().iter().filter(|p| p[2] > 0.5).count() as f64 / 20_000.0;
    assert!((upper - 0.25).abs() < 0.02);

    // torus R = 0.7, r = 0.3: the outer half (cos v > 0) has area share ½ + r/(πR)
    let t = generate_shape(ShapeClass::Torus, 20_000, 5).unwrap();
    let outer = t.points().iter().filter(|p| p[0].hypot(p[1]) > 0.7).count() as f64 / 20_000.0;
    let share = 0.5 + 0.3 / (std::f64::consts::PI * 0.7);
    assert!((outer - share).abs() < 0.02, "{outer} vs {share}");
}

#[test]
fn normalize_examples() {
    let two = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
    assert_eq!(normalize(&two).unwrap().points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let same = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
    assert!(matches!(normalize(&same), Err(Error::Degenerate(_))));

    let cloud = generate_shape(ShapeClass::Cone, 200, 9).unwrap();
    let unit = normalize(&cloud).unwrap();
    assert!(centroid(unit.points()).iter().all(|c| c.abs() < 1e-9));
    let max = unit.points().iter().map(norm).fold(0.0, f64::max);
    assert!((max - 1.0).abs() < 1e-9);
    let again = normalize(&unit).unwrap();
    for (a, b) in again.points().iter().zip(unit.points()) {
        assert!((0..3).all(|r| (a[r] - b[r]).abs() < 1e-9));
    }
    let moved = cloud
        .with_points(cloud.points().iter().map(|p| [5.0 * p[0] + 1.0, 5.0 * p[1] - 2.0, 5.0 * p[2] + 0.5]).collect())
        .unwrap();
    for (a, b) in normalize(&moved).unwrap().points().iter().zip(unit.points()) {
        assert!((0..3).all(|r| (a[r] - b[r]).abs() < 1e-9));
    }
    assert_eq!(unit.label(), cloud.label());
}

#[test]
fn background_composition() {
    for seed in 0..10 {
        let fg = normalize(&generate_shape(ShapeClass::Torus, 256, seed).unwrap()).unwrap();
        let donor = generate_shape(ShapeClass::Cube, 256, seed + 100).unwrap();
        let out = compose_background(&fg, &donor, 128, seed).unwrap();
        assert_eq!(out.len(), 384);
        let mask = out.mask().unwrap();
        assert_eq!(mask.iter().filter(|m| **m).count(), 256);
        assert_eq!(out.label(), fg.label());
        assert_eq!(&out.points()[..256], fg.points());

        let bg: Vec<Point> = out.points()[256..].to_vec();
        let ratio = mean_nn_distance(&bg) / mean_nn_distance(fg.points());
        assert!((ratio - 1.0).abs() < 0.1, "density ratio {ratio}");

        let c = centroid(fg.points());
        let radius = fg.points().iter().map(|p| norm(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]])).fold(0.0, f64::max);
        let gap = bg
            .iter()
            .flat_map(|b| fg.points().iter().map(move |f| norm(&[b[0] - f[0], b[1] - f[1], b[2] - f[2]])))
            .fold(f64::INFINITY, f64::min);
        assert!(gap >= 0.2 * radius - 1e-12, "gap {gap} radius {radius}");
    }
    let fg = generate_shape(ShapeClass::Torus, 64, 0).unwrap();
    let small = generate_shape(ShapeClass::Cube, 64, 0).unwrap();
    assert!(matches!(compose_background(&fg, &small, 128, 0), Err(Error::Count(_))));
    let twin = generate_shape(ShapeClass::Torus, 256, 1).unwrap();
    assert!(matches!(compose_background(&fg, &twin, 128, 0), Err(Error::Label(_))));
}

#[test]
fn xyz_and_off_examples() {
    let cloud = parse_xyz("1 2 3\n4 5 6\n7 8 9\n").unwrap();
    assert_eq!(cloud.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
    assert!(cloud.mask().is_none());
    assert!(matches!(parse_xyz("0 0 0\n1 1 1\n1 2 nan\n"), Err(Error::Value { line: 3 })));
    assert!(matches!(parse_xyz("0 0 0\n1 1\n"), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(parse_xyz("0 0 0 1\n1 1 1\n"), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(parse_xyz("0 0 0 2\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_xyz("0 x 0\n"), Err(Error::Parse { line: 1, .. })));

    let off = "OFF\n# a tetrahedron\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
    let mesh = parse_off(off).unwrap();
    assert_eq!(mesh.len(), 4);
    assert_eq!(mesh.points()[3], [0.0, 0.0, 1.0]);
    let inline = parse_off("OFF4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n").unwrap();
    assert_eq!(inline, mesh);
    assert!(matches!(parse_off("PLY\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_off("OFF\n3 0 0\n0 0 0\n1 1 1\n"), Err(Error::Parse { line: 5, .. })));
    assert!(matches!(parse_off("OFF\n2 0 0\n0 0 0\n1 inf 1\n"), Err(Error::Value { line: 4 })));
}

#[test]
fn loaders_read_files() {
    let dir = tempfile::tempdir().unwrap();
    let off = dir.path().join("a.off");
    fs::write(&off, "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n").unwrap();
    assert_eq!(load_off(&off).unwrap().len(), 4);
    let missing = load_xyz(dir.path().join("nope.xyz")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
    assert!(missing.to_string().contains("nope.xyz"));
}

proptest! {
    #[test]
    fn xyz_round_trip(
        pts in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..40),
        masked in any::<bool>(),
    ) {
        let mut cloud = PointCloud::new(pts.clone()).unwrap();
        if masked {
            cloud = cloud.with_mask((0..pts.len()).map(|i| i % 2 == 0).collect()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        write_xyz(&path, &cloud).unwrap();
        let back = load_xyz(&path).unwrap();
        prop_assert_eq!(back.points(), cloud.points());
        prop_assert_eq!(back.mask(), cloud.mask());
        prop_assert_eq!(to_xyz(&back), to_xyz(&cloud));
    }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for split in ["train", "test"] {
        for e in fs::read_dir(root.join(split)).unwrap() {
            let p = e.unwrap().path();
            out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.push((MANIFEST_FILE.into(), fs::read(root.join(MANIFEST_FILE)).unwrap()));
    out.sort();
    out
}

#[test]
fn full_dataset_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(&DatasetConfig::new(1), dir.path()).unwrap();
    assert_eq!(manifest.splits.train.len() + manifest.splits.test.len(), 1500);
    assert_eq!(read_tree(dir.path()).len(), 1501);
    assert_eq!(manifest.classes, ["sphere", "cube", "cylinder", "cone", "torus", "plane"]);
}

#[test]
fn dataset_files_are_deterministic() {
    let config = DatasetConfig {
        classes: vec![ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Plane],
        train_per_class: 3,
        test_per_class: 2,
        points: 64,
        background: true,
        background_points: 32,
        ..DatasetConfig::new(17)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&config, a.path()).unwrap();
    build_dataset(&config, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    // file contents match; only the manifest's root differs between directories
    let clouds = |t: &[(String, Vec<u8>)]| t.iter().filter(|(n, _)| n != MANIFEST_FILE).cloned().collect::<Vec<_>>();
    assert_eq!(clouds(&ta), clouds(&tb));
    build_dataset(&config, a.path()).unwrap();
    assert_eq!(read_tree(a.path()), ta);

    let first = fs::read_to_string(a.path().join("train/sphere_0000.xyz")).unwrap();
    assert!(first.lines().all(|l| l.split_whitespace().count() == 4));

    let (manifest, data) = load_dataset(a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.version, 1);
    assert!(manifest.splits.train.iter().all(|e| e.bg));
    let generated = generate_dataset(&config).unwrap();
    assert_eq!(data, generated);
    for cloud in data.train.iter().chain(&data.test) {
        assert_eq!(cloud.len(), 96);
        assert!(centroid(cloud.points()).iter().all(|c| c.abs() < 1e-9));
        let max = cloud.points().iter().map(norm).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
    }
}

#[test]
fn manifest_checks() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig {
        classes: vec![ShapeClass::Sphere, ShapeClass::Cube],
        train_per_class: 1,
        test_per_class: 1,
        points: 16,
        ..DatasetConfig::new(0)
    };
    let manifest = build_dataset(&config, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut bad = manifest.clone();
    bad.version = 2;
    fs::write(&path, bad.to_json().unwrap()).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Format(_))));
    let mut bad = manifest;
    bad.splits.test[0].label = 5;
    fs::write(&path, bad.to_json().unwrap()).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Label(_))));

    let missing: Result<DatasetConfig, _> = serde_json::from_str(r#"{"points": 64}"#);
    assert!(missing.unwrap_err().to_string().contains("seed"));
    let one = DatasetConfig {
        classes: vec![ShapeClass::Sphere],
        background: true,
        ..DatasetConfig::new(0)
    };
    assert!(matches!(generate_dataset(&one), Err(Error::Label(_))));
}
