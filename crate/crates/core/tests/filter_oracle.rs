mod common;

use proptest::prelude::*;

#[test]
fn ukf_matches_kalman_filter_over_100_steps() {
    let (dm, dp) = common::linear_kf_deviation(11, 6, 3, 100);
    assert!(dm < 1e-8 && dp < 1e-8, "mean {dm:e}, covariance {dp:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ukf_is_exact_on_linear_systems(seed in any::<u64>(), n in 1usize..9, m in 1usize..5) {
        let (dm, dp) = common::linear_kf_deviation(seed, n, m, 30);
        prop_assert!(dm < 1e-8 && dp < 1e-8, "mean {:e}, covariance {:e}", dm, dp);
    }
}
