//! Randomized invariants over the core data structures.

use proptest::prelude::*;

use sensordrop::agent::{RewardConfig, RewardKind};
use sensordrop::checkpoint::{read_network, write_network};
use sensordrop::env::{fuse, ActionMask};
use sensordrop::layers::Layer;
use sensordrop::network::Network;
use sensordrop::Tensor;

fn finite_f64() -> impl Strategy<Value = f64> {
    (-1e6f64..1e6).prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Checkpoints are bit-exact for any dense layer contents.
    #[test]
    fn checkpoint_round_trip_dense(
        inputs in 1usize..6,
        outputs in 1usize..6,
        fill in finite_f64(),
    ) {
        let weight = Tensor::from_vec(
            &[outputs, inputs],
            (0..inputs * outputs).map(|i| fill + i as f64).collect(),
        ).unwrap();
        let bias = Tensor::from_vec(&[outputs], vec![fill; outputs]).unwrap();
        let net = Network::new(vec![Layer::Dense { weight, bias, inputs, outputs }]);
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        prop_assert_eq!(read_network(&mut buf.as_slice()).unwrap(), net);
    }

    /// Fusing is equivariant under a simultaneous permutation of the sensors
    /// and the mask.
    #[test]
    fn fuse_is_permutation_equivariant(
        values in prop::collection::vec(-10.0f64..10.0, 6),
        bits in prop::collection::vec(any::<bool>(), 6),
        rot in 0usize..6,
    ) {
        prop_assume!(bits.iter().any(|&b| b));
        let features: Vec<Tensor> = values
            .iter()
            .map(|&v| Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap())
            .collect();
        let fused = fuse(&features, &ActionMask::new(bits.clone())).unwrap();

        let mut pf = features.clone();
        let mut pb = bits.clone();
        pf.rotate_left(rot);
        pb.rotate_left(rot);
        let fused_rot = fuse(&pf, &ActionMask::new(pb)).unwrap();
        prop_assert!((fused.data()[0] - fused_rot.data()[0]).abs() < 1e-12);
    }

    /// The reporting normalization maps the raw reward range onto [-1, 1]
    /// with the endpoints exact.
    #[test]
    fn reward_normalization_is_an_affine_onto_map(
        quadratic in any::<bool>(),
        k1 in 1.0f64..500.0,
        k2 in 0.0f64..400.0,
        zeta in 0.1f64..500.0,
        k in 0.0f64..1.0,
        raw_frac in 0.0f64..1.0,
    ) {
        prop_assume!(k2 < k1);
        let cfg = RewardConfig {
            kind: if quadratic { RewardKind::Quadratic } else { RewardKind::Harmonic },
            k1,
            k2,
            zeta,
            k,
            zeta_prime: 0.75,
        };
        let n = 6;
        let (lo, hi) = cfg.raw_range(n);
        prop_assert!(lo < hi);
        prop_assert!((cfg.normalized(lo, n) + 1.0).abs() < 1e-12);
        prop_assert!((cfg.normalized(hi, n) - 1.0).abs() < 1e-12);
        let mid = lo + raw_frac * (hi - lo);
        let norm = cfg.normalized(mid, n);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&norm));
    }

    /// Every achievable reward lies inside the declared raw range.
    #[test]
    fn rewards_lie_in_raw_range(
        quadratic in any::<bool>(),
        correct in any::<bool>(),
        d in 1usize..=6,
    ) {
        let mut cfg = RewardConfig::default();
        if !quadratic {
            cfg.kind = RewardKind::Harmonic;
        }
        let n = 6;
        let (lo, hi) = cfg.raw_range(n);
        let r = cfg.reward(correct, d, n);
        prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12, "r={r} not in [{lo}, {hi}]");
    }
}
