// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        for (op, err) in common::op_gradient_errors(seed).unwrap() {
            prop_assert!(err < common::FD_TOLERANCE, "{op}: relative error {err:e}");
        }
    }

    #[test]
    fn two_layer_transformer_matches_central_differences(seed in any::<u64>()) {
        let err = common::model_gradient_error(seed).unwrap();
        prop_assert!(err < common::FD_TOLERANCE, "relative error {err:e}");
    }
}
