use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use onepath_core::input_share::{open_seed, prepare_query, PreparedQuery};
use onepath_core::model_prep::{
    encode_linear, fisher_yates, pad_label, prepare_model, unpad_label, LinearCode, PreparedModel,
};
use onepath_core::primitives::{Group, PrfSeed};
use onepath_core::protocol::{Deployment, DeploymentConfig, IssuedKeys};
use onepath_core::tree::random_complete_tree;
use onepath_core::ProtocolParams;

const LABELS: &[&str] = &["stay", "leave"];

#[test]
fn provider_state_and_query_round_trip() {
    let config = DeploymentConfig::default();
    let params = config.params;
    let group = &Group::standard(config.security_bits).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let tree = random_complete_tree(&mut rng, 4, 6, params.feature_bits, LABELS).unwrap();
    let keys = IssuedKeys::generate(group, &params, &mut rng);
    let seed = PrfSeed::sample(tree.gamma(), &mut rng);
    let prepared = prepare_model(&tree, &keys.provider_keys(), &keys.ipfe.mpk, &seed, &params, &mut rng).unwrap();

    let bytes = prepared.encode(group);
    let decoded = PreparedModel::decode(group, &bytes).unwrap();
    assert_eq!(decoded.cs1_tree, prepared.cs1_tree);
    assert_eq!(decoded.cs2_root, prepared.cs2_root);
    assert_eq!(decoded.seed_ct, prepared.seed_ct);
    assert_eq!(decoded.index_map, prepared.index_map);
    assert_eq!(decoded.coefficients, prepared.coefficients);
    assert_eq!(decoded.encode(group), bytes);
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(PreparedModel::decode(group, &bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
    }

    let opened = open_seed(&prepared.seed_ct, &keys.sk3).unwrap();
    let x: Vec<u64> = (0..6).map(|_| rng.gen_range(0..params.feature_domain())).collect();
    let query = prepare_query(&x, &opened, &params, opened.gamma(), &mut rng).unwrap();
    let encoded = query.encode();
    assert_eq!(PreparedQuery::decode(&encoded).unwrap(), query);
    let mut swapped = encoded.clone();
    swapped[0] ^= 1;
    assert!(PreparedQuery::decode(&swapped).is_err());

    // A deployment rebuilt from the decoded state answers the stored query.
    let expected = onepath_core::tree::plaintext_infer(&tree, &x).0.to_owned();
    let mut dep = Deployment::from_parts(tree, &config, &keys, decoded, 9).unwrap();
    let before = dep.entities().cs2.stored_records();
    let session = dep.submit_prepared(&query).unwrap();
    dep.run().unwrap();
    let outcome = dep.outcome(session, &x, before).unwrap();
    dep.verify(&outcome, &x).unwrap();
    assert_eq!(outcome.label, expected.as_bytes());
    assert!(dep.submit_prepared(&query).is_err(), "replayed query accepted");
}

proptest! {
    #[test]
    fn linear_code_orders_like_the_threshold(theta in 0u64..128, x in 0u64..128, seed in any::<u64>()) {
        let params = ProtocolParams::default();
        let code = encode_linear(theta, &params, &mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert!(code.slope >= 1 && code.slope <= params.slope_max);
        prop_assert_eq!(code.eval(x) > 1, x > theta);
        prop_assert_eq!(code, LinearCode::with_slope(theta, code.slope));
    }

    #[test]
    fn padded_labels_round_trip(label in proptest::collection::vec(any::<u8>(), 0..40), extra in 0usize..16) {
        let padded = pad_label(&label, label.len() + extra);
        prop_assert_eq!(padded.len(), 2 + label.len() + extra);
        prop_assert_eq!(unpad_label(&padded).unwrap(), label);
    }

    #[test]
    fn shuffle_is_a_permutation(gamma in 1u32..300, seed in any::<u64>()) {
        let map = fisher_yates(gamma, &mut ChaCha20Rng::seed_from_u64(seed));
        let mut seen = map.as_slice().to_vec();
        seen.sort_unstable();
        prop_assert_eq!(seen, (1..=gamma).collect::<Vec<_>>());
        for position in 1..=gamma as usize {
            prop_assert_eq!(map.position_of(map.index_of(position)), position);
        }
    }
}
