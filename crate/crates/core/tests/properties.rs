use std::collections::HashSet;

use mldrnet::data::{decode, encode, kfold, relabel_noise, split, split_sizes, Dataset, Sample};
use mldrnet::fusion::{fuse, fuse_backward};
use mldrnet::nn::{softmax, softmax_cross_entropy};
use mldrnet::{FusionKind, TensorF64};
use proptest::prelude::*;

fn tiny(count: usize, n_classes: usize) -> Dataset<f64> {
    let samples = (0..count)
        .map(|i| Sample {
            image: TensorF64::full([3, 2, 2], (i % 256) as f64 / 255.0),
            label: i % n_classes,
            id: format!("s{i}"),
        })
        .collect();
    Dataset::new(samples, mldrnet::data::default_class_names(n_classes)).unwrap()
}

fn branches() -> impl Strategy<Value = Vec<TensorF64>> {
    (2usize..7, 1usize..4, 1usize..9).prop_flat_map(|(k, n, d)| {
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, n * d), k)
            .prop_map(move |vs| vs.iter().map(|v| TensorF64::from_f64([n, d], v).unwrap()).collect())
    })
}

proptest! {
    #[test]
    fn min_mean_max_are_ordered(xs in branches()) {
        let lo = fuse(&xs, FusionKind::Min).unwrap().0;
        let mid = fuse(&xs, FusionKind::Mean).unwrap().0;
        let hi = fuse(&xs, FusionKind::Max).unwrap().0;
        for i in 0..lo.len() {
            prop_assert!(lo.data()[i] <= mid.data()[i] && mid.data()[i] <= hi.data()[i]);
        }
    }

    #[test]
    fn identical_branches_are_returned_exactly(xs in branches()) {
        let same = vec![xs[0].clone(); xs.len()];
        for kind in [FusionKind::Min, FusionKind::Max, FusionKind::Mean] {
            let (out, _) = fuse(&same, kind).unwrap();
            prop_assert_eq!(out.data(), xs[0].data());
        }
    }

    #[test]
    fn branch_gradients_sum_to_upstream(xs in branches(), seed in 0u64..1000) {
        for kind in [FusionKind::Min, FusionKind::Max, FusionKind::Mean] {
            let (out, state) = fuse(&xs, kind).unwrap();
            let mut rng = mldrnet::Rng::new(seed);
            let g = TensorF64::uniform(out.shape().to_vec(), -2.0, 2.0, &mut rng);
            let grads = fuse_backward(&state, &g).unwrap();
            for i in 0..g.len() {
                let sum = grads.iter().map(|t| t.data()[i]).fold(0.0, |a, b| a + b);
                prop_assert_eq!(sum, g.data()[i]);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(v in prop::collection::vec(-30f64..30.0, 8), c in -100f64..100.0) {
        let a = softmax(&TensorF64::from_f64([1, 8], &v).unwrap()).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = softmax(&TensorF64::from_f64([1, 8], &shifted).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero(v in prop::collection::vec(-10f64..10.0, 16), l0 in 0usize..8, l1 in 0usize..8) {
        let out = softmax_cross_entropy(&TensorF64::from_f64([2, 8], &v).unwrap(), &[l0, l1]).unwrap();
        prop_assert!(out.loss >= 0.0);
        for row in out.grad_logits.data().chunks(8) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn split_partitions_the_dataset(count in 3usize..400, seed in 0u64..50) {
        let ds = tiny(count, 8);
        let (train, test, val) = split(&ds, (0.8, 0.15, 0.05), seed).unwrap();
        let sizes = split_sizes(count, (0.8, 0.15, 0.05)).unwrap();
        prop_assert_eq!((train.len(), test.len(), val.len()), sizes);
        let ids: HashSet<_> = train.samples.iter().chain(&test.samples).chain(&val.samples).map(|s| s.id.clone()).collect();
        prop_assert_eq!(ids.len(), count);
    }

    #[test]
    fn kfold_is_disjoint_and_exhaustive(count in 10usize..300, k in 2usize..11, seed in 0u64..50) {
        let folds = kfold(&tiny(count, 4), k, seed).unwrap();
        let mut seen = HashSet::new();
        let sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), count);
            for s in &test.samples {
                prop_assert!(seen.insert(s.id.clone()));
            }
        }
        prop_assert_eq!(seen.len(), count);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn relabel_noise_never_keeps_a_label(count in 1usize..300, rate in 0f64..=1.0, seed in 0u64..50) {
        let ds = tiny(count, 8);
        let (noisy, changed) = relabel_noise(&ds, rate, seed).unwrap();
        prop_assert_eq!(changed.len(), (rate * count as f64).round() as usize);
        for (i, (a, b)) in ds.samples.iter().zip(&noisy.samples).enumerate() {
            prop_assert_eq!(a.label != b.label, changed.binary_search(&i).is_ok());
        }
    }

    #[test]
    fn dataset_bytes_round_trip(count in 0usize..40, n in 2usize..9) {
        let ds = tiny(count, n);
        let back: Dataset<f64> = decode(&encode(&ds).unwrap()).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(&back.class_names, &ds.class_names);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            prop_assert_eq!(a.image.data(), b.image.data());
            prop_assert_eq!(&a.id, &b.id);
        }
    }
}
