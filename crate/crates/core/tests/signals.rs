use proptest::prelude::*;
use tcu_core::signals::{make_reference, resample_log, Resampling};
use tcu_core::{DeltaModulator, ReferenceProfile};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn running_sums_stay_within_one(seq in prop::collection::vec(0.0f64..=1.0, 1..100_000)) {
        let mut m = DeltaModulator::new();
        let mut analog = 0.0;
        let mut digital = 0.0;
        for &u in &seq {
            digital += m.step(u).unwrap() as u8 as f64;
            analog += u;
            prop_assert!((analog - digital).abs() <= 1.0);
        }
    }

    #[test]
    fn window_means_keep_the_total(seq in prop::collection::vec(0.0f64..=1.0, 6..600), factor in 1usize..7) {
        let n = seq.len() / factor * factor;
        let means = resample_log(&seq[..n], factor, Resampling::WindowMean).unwrap();
        let held: f64 = means.iter().map(|m| m * factor as f64).sum();
        let raw: f64 = seq[..n].iter().sum();
        prop_assert!((held - raw).abs() < 1e-9 * (1.0 + raw));
    }
}

#[test]
fn default_profiles_cover_the_band() {
    for p in [ReferenceProfile::identification_default(), ReferenceProfile::validation_default()] {
        let r = make_reference(&p, 6.0).unwrap();
        assert_eq!(r.len(), 1960);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= 40.0 && hi >= 75.0, "{lo}..{hi}");
        assert!(p.distinct_levels() >= 4);
    }
}
