//! Config file round-trip and rejection properties.

use std::path::PathBuf;

use prolab_cli::config::{DataConfig, TrainConfig, WorldConfig};
use prolab_cli::RunConfig;
use prolab_core::experiments::{FeedbackKind, ImbalanceSpec, LabelClass, LossConfig};
use prolab_core::{KtoSign, LossKind, WorldShape};
use proptest::prelude::*;

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![0.001f64..100.0, Just(0.1), Just(2.5), 1e-9f64..1e-3]
}

fn shape() -> impl Strategy<Value = WorldShape> {
    prop_oneof![
        (2usize..40).prop_map(WorldShape::Tabular),
        (2usize..5, 1usize..4).prop_map(|(vocab, length)| WorldShape::Sequence { vocab, length }),
    ]
}

fn data() -> impl Strategy<Value = DataConfig> {
    let kind = prop_oneof![
        Just(FeedbackKind::Pairwise),
        Just(FeedbackKind::Binary),
        (2usize..8).prop_map(|group_size| FeedbackKind::Scalar { group_size }),
    ];
    (
        kind,
        1usize..5000,
        proptest::option::of((any::<bool>(), 0.0001f64..=1.0)),
        proptest::option::of(0.0f64..3.0),
        proptest::option::of("[a-z0-9_/.-]{1,20}"),
    )
        .prop_map(|(kind, records, imb, noise, dir)| DataConfig {
            kind,
            records,
            imbalance: match (kind, imb) {
                (FeedbackKind::Binary, Some((desired, keep))) => Some(
                    ImbalanceSpec::new(if desired { LabelClass::Desired } else { LabelClass::Undesired }, keep).unwrap(),
                ),
                _ => None,
            },
            noise,
            dir: dir.map(PathBuf::from),
        })
}

fn loss() -> impl Strategy<Value = LossConfig> {
    (
        proptest::sample::select(LossKind::ALL.to_vec()),
        positive(),
        positive(),
        proptest::option::of(0.01f64..0.99),
        any::<bool>(),
        any::<bool>(),
        (0.0f64..5.0, positive(), positive(), any::<bool>()),
    )
        .prop_map(|(kind, beta, alpha, eta, pin, reweight, (z0, ld, lu, printed))| {
            let mut l = LossConfig::new(kind);
            l.beta = beta;
            l.alpha = alpha;
            l.eta = eta;
            l.pin = pin;
            l.reweight = reweight;
            l.kto.z0 = z0;
            l.kto.lambda_d = ld;
            l.kto.lambda_u = lu;
            l.kto.sign_mode = if printed { KtoSign::AsPrinted } else { KtoSign::Utility };
            l
        })
}

fn config() -> impl Strategy<Value = RunConfig> {
    (any::<u64>(), shape(), 0.0f64..10.0, data(), loss(), 1usize..100_000, 0.0f64..1e3).prop_map(
        |(seed, shape, reward_scale, data, loss, steps, lr)| RunConfig {
            seed,
            world: WorldConfig { shape, reward_scale },
            data,
            loss,
            train: TrainConfig { steps, lr },
        },
    )
}

proptest! {
    #[test]
    fn round_trip(c in config()) {
        let text = c.to_text();
        prop_assert_eq!(RunConfig::parse(&text).unwrap(), c.clone());
        // Serialization is a fixed point.
        prop_assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn unknown_keys_rejected(c in config(), key in "[a-z]{3,10}", section in 0usize..5) {
        let known = ["seed", "shape", "reward_scale", "kind", "records", "group_size", "imbalance", "noise", "dir",
            "beta", "alpha", "eta", "pin", "reweight", "kto_z0", "kto_lambda_d", "kto_lambda_u", "kto_sign", "steps", "lr"];
        prop_assume!(!known.contains(&key.as_str()));
        let name = ["run", "world", "data", "loss", "train"][section];
        let text = c.to_text().replacen(&format!("[{name}]\n"), &format!("[{name}]\n{key} = 1\n"), 1);
        let err = RunConfig::parse(&text).unwrap_err();
        prop_assert!(err.message.contains(&key));
    }
}
