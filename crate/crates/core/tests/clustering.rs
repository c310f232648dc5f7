use ndarray::{Array2, Array3};
use proptest::prelude::*;

use freeseg::assignment::{compose, MaskLabel};
use freeseg::backbones::{FeatureMap, FeatureStack, MapKind};
use freeseg::clustering::{
    binarize, cluster_features, kmeans, upsample_assignments, upsample_nearest, BinaryMask, ClusterConfig,
    MaskResolution,
};
use freeseg::Error;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

prop_compose! {
    fn instance()(n in 1usize..=120, c in 1usize..=32)
        (data in prop::collection::vec(-50.0f64..50.0, n * c), n in Just(n), c in Just(c),
         k in 1usize..=8, seed in any::<u64>())
        -> (Array2<f64>, usize, u64)
    {
        (Array2::from_shape_vec((n, c), data).unwrap(), k.min(n), seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lloyd_invariants((x, k, seed) in instance()) {
        let r = kmeans(x.view(), k, seed, 300, 1e-4).unwrap();
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9, "inertia rose: {:?}", r.inertia_history);
        }
        let mut inertia = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            let row = row.to_vec();
            let d: Vec<f64> = r.centroids.outer_iter().map(|c| sq(&row, &c.to_vec())).collect();
            let best = (0..k).fold(0, |b, j| if d[j] < d[b] { j } else { b });
            prop_assert_eq!(r.assignments[i], best);
            inertia += d[best];
        }
        prop_assert!((inertia - r.inertia).abs() <= 1e-6 * inertia.max(1.0));
        let sizes = r.cluster_sizes();
        for j in 0..k {
            prop_assert!(sizes[j] > 0 || r.empty_reseeded[j]);
        }
    }

    #[test]
    fn worker_count_does_not_matter((x, k, seed) in instance()) {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
                .install(|| kmeans(x.view(), k, seed, 300, 1e-4).unwrap())
        };
        let a = run(1);
        let b = run(4);
        prop_assert_eq!(a.assignments, b.assignments);
        prop_assert_eq!(a.centroids, b.centroids);
    }

    /// Upsampled clusters of a random stack partition the image, and the
    /// composed map keeps every mask's pixel count.
    #[test]
    fn upsampled_masks_partition_the_image(
        seed in any::<u64>(), k in 1usize..=6, h in 8usize..90, w in 8usize..90, channels in 1usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let map = FeatureMap {
            resolution: 16,
            kind: MapKind::Feature,
            block: "b".into(),
            order: 0,
            tensor: Array3::from_shape_fn((channels, 16, 16), |_| rng.random::<f32>()),
        };
        let stack = FeatureStack::from_maps("s", vec![map], 32, 0).unwrap();
        let r = cluster_features(&stack, &ClusterConfig { k, seed, ..Default::default() }).unwrap();
        let pixel = upsample_assignments(&r.assignments, 32, h, w);
        let masks: Vec<BinaryMask> = (0..k)
            .map(|c| BinaryMask {
                width: w,
                height: h,
                bits: pixel.iter().map(|&a| a == c).collect(),
                resolution: MaskResolution::Image,
            })
            .collect();
        let mut cover = vec![0u8; w * h];
        for m in &masks {
            for (c, &b) in cover.iter_mut().zip(&m.bits) {
                *c += u8::from(b);
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
        let labelled: Vec<(BinaryMask, MaskLabel)> = masks
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, m)| (m.clone(), MaskLabel { mask_id: i, class_index: (i % 3) as u16, nearest_class: (i % 3) as u16, distance: 0.0 }))
            .collect();
        let classes: Vec<String> = ["unlabeled", "a", "b"].map(String::from).to_vec();
        let map = compose(&labelled, h, w, classes.clone()).unwrap();
        for c in 0..3u16 {
            let expected: usize = labelled.iter().filter(|(_, l)| l.class_index == c).map(|(m, _)| m.count()).sum();
            prop_assert_eq!(map.count(c), expected);
        }
        // any pixel claimed twice is caught
        if labelled.len() >= 2 {
            let mut bad = labelled.clone();
            let first = bad[0].0.bits.iter().position(|&b| b).unwrap();
            bad[1].0.bits[first] = true;
            prop_assert!(matches!(compose(&bad, h, w, classes), Err(Error::PartitionViolation(_))));
        }
    }
}

#[test]
fn toy_recovers_the_best_two_partition() {
    let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
    let x = Array2::from_shape_fn((4, 2), |(i, j)| pts[i][j]);
    // every non-trivial 2-partition, scored by within-cluster squared error
    let cost = |mask: u32| -> f64 {
        (0..2)
            .map(|side| {
                let members: Vec<usize> = (0..4).filter(|&i| ((mask >> i) & 1) == side).collect();
                let mean: Vec<f64> = (0..2)
                    .map(|j| members.iter().map(|&i| pts[i][j]).sum::<f64>() / members.len() as f64)
                    .collect();
                members.iter().map(|&i| sq(&pts[i], &mean)).sum::<f64>()
            })
            .sum()
    };
    let (best_mask, best) = (1u32..15)
        .map(|m| (m, cost(m)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert_eq!(best, 1.0);
    for seed in 0..20 {
        let r = kmeans(x.view(), 2, seed, 300, 1e-4).unwrap();
        assert_eq!(r.inertia, best);
        let same_side = |i: usize, j: usize| ((best_mask >> i) & 1) == ((best_mask >> j) & 1);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.assignments[i] == r.assignments[j], same_side(i, j));
            }
        }
    }
}

#[test]
fn constant_channel_does_not_change_clusters() {
    let tensor = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + 1) * (x * 7 + y * 3) % 11) as f32);
    let with_const = {
        let mut t = Array3::<f32>::from_elem((4, 16, 16), 5.0);
        t.slice_mut(ndarray::s![..3, .., ..]).assign(&tensor);
        t
    };
    let stack = |t: Array3<f32>| {
        let map = FeatureMap { resolution: 16, kind: MapKind::Feature, block: "b".into(), order: 0, tensor: t };
        FeatureStack::from_maps("s", vec![map], 32, 0).unwrap()
    };
    let config = ClusterConfig::default();
    let a = cluster_features(&stack(tensor), &config).unwrap();
    let b = cluster_features(&stack(with_const), &config).unwrap();
    assert_eq!(a.assignments, b.assignments);
}

#[test]
fn grid_masks_upsample_to_a_partition() {
    let r = kmeans(
        Array2::from_shape_fn((32 * 32, 1), |(i, _)| ((i * 37) % 5) as f64).view(),
        5,
        1,
        300,
        1e-4,
    )
    .unwrap();
    let masks = binarize(&r, 32).unwrap();
    let total: usize = masks
        .iter()
        .map(|m| upsample_nearest(m, 375, 500).unwrap().count())
        .sum();
    assert_eq!(total, 500 * 375);
}
