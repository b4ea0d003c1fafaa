use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn cloud_from(points: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(points.to_vec()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Clouds with exact duplicates and lattice ties, to stress tie-breaking.
fn tie_heavy_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-2i32..=2) as f64))
        .collect()
}

fn oracle_fps(points: &[Point], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = None;
        for j in 0..points.len() {
            if chosen.contains(&j) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| {
                    let v: f64 = (0..3).map(|a| (points[j][a] - points[c][a]).powi(2)).sum();
                    v.sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            match best {
                Some((bd, _)) if d <= bd => {}
                _ => best = Some((d, j)),
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

fn oracle_knn(points: &[Point], c: usize, k: usize, include_self: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).filter(|&j| include_self || j != c).collect();
    let dist = |j: usize| -> f64 {
        (0..3).map(|a| (points[j][a] - points[c][a]).powi(2)).sum::<f64>().sqrt()
    };
    // stable sort on distance keeps ascending index order among ties
    idx.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap());
    idx.truncate(k);
    idx
}

#[test]
fn point_cloud_contracts() {
    assert!(matches!(PointCloud::new(vec![]), Err(Error::Count(_))));
    assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
    let c = cloud_from(&[[0.0; 3], [1.0; 3]]);
    assert!(c.clone().with_mask(vec![true]).is_err());
    let c = c.with_label(3).with_mask(vec![true, false]).unwrap();
    let t = c.to_tensor();
    assert_eq!(t.shape(), &[3, 2]);
    assert_eq!(tensor_to_points(&t).unwrap(), c.points());
}

#[test]
fn fps_examples() {
    let pts = [[0., 0., 0.], [1., 0., 0.], [0., 1., 0.], [10., 10., 10.]];
    assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 3]);
    let mut all = farthest_point_sample(&pts, 4, 0).unwrap();
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);
    assert!(matches!(farthest_point_sample(&pts, 5, 0), Err(Error::Count(_))));
    // equal distances from the start: lowest index wins
    assert_eq!(farthest_point_sample(&pts[..3], 2, 0).unwrap(), vec![0, 1]);
}

#[test]
fn knn_examples() {
    let line = [[0., 0., 0.], [1., 0., 0.], [2., 0., 0.], [3., 0., 0.]];
    let nbr = knn_search(&line, &[0], 2, false).unwrap();
    assert_eq!(nbr.of(0), &[1, 2]);
    let nbr = knn_search(&line, &[2], 4, true).unwrap();
    assert_eq!(nbr.of(0), &[2, 1, 3, 0]);
    assert!(matches!(knn_search(&line, &[0], 4, false), Err(Error::Count(_))));
    assert!(matches!(knn_search(&line, &[9], 1, true), Err(Error::Index(_))));
}

#[test]
fn ball_query_examples() {
    let pts = [
        [0., 0., 0.],
        [0.1, 0., 0.],
        [0., 0.2, 0.],
        [0., 0., 0.3],
        [1., 0., 0.],
        [0., 1., 0.],
        [0., 0., 1.],
        [5., 5., 5.],
    ];
    // isolated center: k copies of itself
    assert_eq!(ball_query(&pts, &[7], 0.01, 3).unwrap().of(0), &[7, 7, 7]);
    // mixed: three hits within 0.25 of the origin, padded with the first
    assert_eq!(ball_query(&pts, &[0], 0.25, 5).unwrap().of(0), &[0, 1, 2, 0, 0]);
    // truncation to k by (distance, index)
    assert_eq!(ball_query(&pts, &[0], 1.0, 4).unwrap().of(0), &[0, 1, 2, 3]);
    // everything within a big ball, then padding
    let nbr = ball_query(&pts[..4], &[3], 10.0, 6).unwrap();
    assert_eq!(nbr.of(0), &[3, 0, 1, 2, 3, 3]);
}

#[test]
fn octant_examples() {
    let mut pts = vec![[0.0; 3]];
    for o in 0..8 {
        let s = |bit: usize| if o & bit != 0 { 0.1 } else { -0.1 };
        pts.push([s(4), s(2), s(1)]);
    }
    let nb = octant_neighbors(&pts, 0, 0.5).unwrap();
    assert_eq!(nb, [1, 2, 3, 4, 5, 6, 7, 8]);

    // nothing within r
    assert_eq!(octant_neighbors(&pts, 0, 0.01).unwrap(), [0; 8]);

    // boundary plane: dx = 0 counts as +, so (0,-1,-1) lands in (+,−,−)
    let pts = [[0., 0., 0.], [0., -0.1, -0.1]];
    assert_eq!(octant_neighbors(&pts, 0, 1.0).unwrap(), [0, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(octant_of(&[0.; 3], &[0.; 3]), 7);
}

#[test]
fn kde_examples() {
    let h = 0.3;
    let same = [[0.5, 0.5, 0.5]; 4];
    let nbr = NeighborhoodIndex::new(vec![0], 4, vec![0, 1, 2, 3]).unwrap();
    assert_eq!(kde_density(&same, &nbr, h).unwrap(), vec![vec![1.0; 4]]);

    let pair = [[0., 0., 0.], [h * 2f64.sqrt(), 0., 0.]];
    let nbr = NeighborhoodIndex::new(vec![0], 2, vec![0, 1]).unwrap();
    let d = kde_density(&pair, &nbr, h).unwrap();
    let expected = (1.0 + (-1f64).exp()) / 2.0;
    assert!((expected - 0.683940).abs() < 1e-6);
    for v in &d[0] {
        assert!((v - expected).abs() < 1e-12);
    }

    let far = [[0., 0., 0.], [100., 0., 0.], [0., 100., 0.]];
    let nbr = NeighborhoodIndex::new(vec![0], 3, vec![0, 1, 2]).unwrap();
    for v in &kde_density(&far, &nbr, h).unwrap()[0] {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn rotation_examples() {
    let r = Rotation::about_z(std::f64::consts::FRAC_PI_2);
    let p = r.apply(&[1., 0., 0.]);
    assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2] == 0.0);

    let c = cloud_from(&[[1., 2., 3.], [-1., 0., 0.5]]).with_label(1);
    assert_eq!(apply_rotation(&c, &Rotation::identity()).unwrap(), c);
}

fn assert_orthonormal(r: &Rotation) {
    let rt = r.transpose().compose(r);
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((rt.matrix[i][j] - want).abs() < 1e-9);
        }
    }
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}

#[test]
fn random_rotations_are_proper_and_so3_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mean = [0.0; 3];
    let samples = 10_000;
    for _ in 0..samples {
        let r = random_rotation(&mut rng, RotationMode::So3);
        assert_orthonormal(&r);
        let v = r.apply(&[0.0, 0.0, 1.0]);
        for a in 0..3 {
            mean[a] += v[a] / samples as f64;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 0.05, "{norm}");

    for _ in 0..100 {
        let r = random_rotation(&mut rng, RotationMode::ZAxis);
        assert_orthonormal(&r);
        assert_eq!(r.apply(&[0., 0., 1.]), [0., 0., 1.]);
    }
    assert_eq!(random_rotation(&mut rng, RotationMode::None), Rotation::identity());
}

#[test]
fn rotation_serde_names() {
    let s = serde_json::to_string(&[RotationMode::None, RotationMode::ZAxis, RotationMode::So3]).unwrap();
    assert_eq!(s, r#"["none","z-axis","so3"]"#);
}

#[test]
fn fixed_contexts_follow_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = random_points(&mut rng, 40);
    let reqs = [
        ContextRequest::Sample { m: 10 },
        ContextRequest::Group { kind: GroupKind::Knn { k: 5 } },
        ContextRequest::None,
        ContextRequest::Pool,
        ContextRequest::Octant { radius: 0.8 },
        ContextRequest::Sample { m: 4 },
        ContextRequest::MultiScale { scales: vec![6, 3] },
        ContextRequest::GlobalPool,
        ContextRequest::None,
    ];
    let plan = build_fixed_contexts(&pts, &reqs).unwrap();
    assert_eq!(plan.n_points(), 40);
    let fps = farthest_point_sample(&pts, 10, 0).unwrap();
    assert_eq!(plan.level(0).len(), 40);
    assert_eq!(plan.level(4), fps.as_slice());
    match plan.step(4) {
        PlanStep::Octant { nbr } => {
            assert_eq!(nbr.len(), 10);
            assert!(nbr.flat().iter().all(|&j| j < 10));
        }
        s => panic!("{s:?}"),
    }
    let PlanStep::Sample { centers } = plan.step(5) else { panic!() };
    let level: Vec<usize> = centers.iter().map(|&c| fps[c]).collect();
    assert_eq!(plan.level(7), level.as_slice());
    assert!(plan.level(8).is_empty());

    let too_many = [ContextRequest::Sample { m: 41 }];
    let err = build_fixed_contexts(&pts, &too_many).unwrap_err();
    assert!(matches!(err, Error::Count(ref m) if m.contains("layer 0")));
    let after_global = [ContextRequest::GlobalPool, ContextRequest::Neighbors { k: 2 }];
    assert!(matches!(build_fixed_contexts(&pts, &after_global), Err(Error::Contract(_))));
}

#[test]
fn fps_and_knn_match_brute_force_on_200_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..200 {
        let n = rng.random_range(2..=64);
        let pts = if trial % 3 == 0 {
            tie_heavy_points(&mut rng, n)
        } else {
            random_points(&mut rng, n)
        };
        let m = rng.random_range(1..=n);
        let start = rng.random_range(0..n);
        assert_eq!(farthest_point_sample(&pts, m, start).unwrap(), oracle_fps(&pts, m, start));
        let k = rng.random_range(1..n);
        let centers: Vec<usize> = (0..n).collect();
        for include_self in [true, false] {
            let nbr = knn_search(&pts, &centers, k, include_self).unwrap();
            for c in 0..n {
                assert_eq!(nbr.of(c), oracle_knn(&pts, c, k, include_self).as_slice());
            }
        }
    }
}

proptest! {
    #[test]
    fn octant_results_stay_in_radius(seed in 0u64..500, r in 0.05f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 30);
        let c = rng.random_range(0..30);
        let nb = octant_neighbors(&pts, c, r).unwrap();
        for (o, &j) in nb.iter().enumerate() {
            prop_assert!(j == c || dist_sq(&pts[j], &pts[c]) <= r * r);
            if j != c {
                prop_assert_eq!(octant_of(&pts[c], &pts[j]), o);
            }
        }
    }

    #[test]
    fn kde_is_bounded_and_rotation_invariant(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 24);
        let nbr = knn_search(&pts, &[0, 5, 11], 6, true).unwrap();
        let rot = random_rotation(&mut rng, RotationMode::So3);
        let rotated: Vec<Point> = pts.iter().map(|p| rot.apply(p)).collect();
        let a = kde_density(&pts, &nbr, 0.2).unwrap();
        let b = kde_density(&rotated, &nbr, 0.2).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!(*x > 0.0 && *x <= 1.0);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotations_preserve_distances_and_compose(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::new(random_points(&mut rng, 12)).unwrap();
        let r1 = random_rotation(&mut rng, RotationMode::So3);
        let r2 = random_rotation(&mut rng, RotationMode::ZAxis);
        let once = apply_rotation(&cloud, &r1).unwrap();
        let twice = apply_rotation(&once, &r2).unwrap();
        let composed = apply_rotation(&cloud, &r2.compose(&r1)).unwrap();
        for i in 0..12 {
            for a in 0..3 {
                prop_assert!((twice.points()[i][a] - composed.points()[i][a]).abs() < 1e-9);
            }
            for j in 0..12 {
                let d0 = dist_sq(&cloud.points()[i], &cloud.points()[j]).sqrt();
                let d1 = dist_sq(&once.points()[i], &once.points()[j]).sqrt();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ball_query_lists_have_length_k(seed in 0u64..500, r in 0.01f64..2.0, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 20);
        let nbr = ball_query(&pts, &[0, 7, 19], r, k).unwrap();
        for i in 0..3 {
            let c = nbr.centers()[i];
            prop_assert_eq!(nbr.of(i).len(), k);
            prop_assert!(nbr.of(i).iter().all(|&j| dist_sq(&pts[j], &pts[c]) <= r * r));
        }
    }
}
