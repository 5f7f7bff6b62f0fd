use std::f64::consts::PI;

use confuseq_core::config::{BandConfig, BandCorrection, ErpConfig};
use confuseq_core::erp::*;
use confuseq_core::model::{ConditionLabel, EpochSet};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

const FS: f64 = 512.0;

#[test]
fn f_survival_matches_reference() {
    for &(d1, d2) in &[(1.0, 1.0), (2.0, 6.0), (2.0, 297.0), (3.0, 40.0), (10.0, 3.5), (1.0, 500.0)] {
        let oracle = FisherSnedecor::new(d1, d2).unwrap();
        for &f in &[0.01, 0.2, 0.9, 1.0, 2.5, 5.143, 12.0, 80.0] {
            let want = oracle.sf(f);
            let got = f_survival(f, d1, d2);
            assert!((got - want).abs() <= 1e-10 + 1e-8 * want, "F({d1},{d2}) at {f}: {got} vs {want}");
        }
    }
}

#[test]
fn hand_computed_anova() {
    let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
    assert_eq!(r.f, 3.0);
    assert_eq!((r.df_between, r.df_within), (2, 6));
    assert!((r.p - 0.125).abs() < 1e-12, "{}", r.p);
    let p = f_survival(5.143, 2.0, 6.0);
    assert!((0.0495..=0.0505).contains(&p), "{p}");
}

#[test]
fn anova_is_shift_and_scale_invariant_and_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let groups: Vec<Vec<f64>> = (0..3).map(|g| (0..8).map(|_| normal.sample(&mut rng) + g as f64 * 0.4).collect()).collect();
    let base = one_way_anova(&groups).unwrap();
    let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| 7.5 * v + 1e3).collect()).collect();
    let r = one_way_anova(&moved).unwrap();
    assert!((r.f - base.f).abs() < 1e-8 * base.f);
    let mut shuffled = groups.clone();
    shuffled.reverse();
    shuffled[0].reverse();
    let r = one_way_anova(&shuffled).unwrap();
    assert!((r.f - base.f).abs() < 1e-12 * base.f);
}

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn null_p_values_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let p: Vec<f64> = (0..500)
        .map(|_| {
            let g: Vec<Vec<f64>> = (0..3).map(|_| (0..20).map(|_| normal.sample(&mut rng)).collect()).collect();
            one_way_anova(&g).unwrap().p
        })
        .collect();
    let d = ks_uniform(p);
    assert!(d <= 0.1, "KS {d}");
}

/// Epochs of white noise; `boost` adds a theta burst to the N400 slice of
/// confusion trials on the listed channels.
fn epochs(n_per: usize, channels: &[&str], boost: &[usize], amp: f64, seed: u64) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<ConditionLabel> = ConditionLabel::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, n_per)).collect();
    let n = labels.len();
    let samples = 1024;
    let mut data = Array3::from_shape_fn((n, channels.len(), samples), |_| normal.sample(&mut rng));
    for (t, l) in labels.iter().enumerate() {
        if *l == ConditionLabel::Control {
            continue;
        }
        for &c in boost {
            for s in 179..230 {
                data[[t, c, s]] += amp * (2.0 * PI * 6.0 * s as f64 / FS).sin();
            }
        }
    }
    EpochSet::new(
        data,
        labels,
        (0..n as u32).collect(),
        channels.iter().map(|s| s.to_string()).collect(),
        FS,
        2.0,
    )
    .unwrap()
}

#[test]
fn n400_slice_power_shape_and_parseval() {
    let e = epochs(3, &["T7", "Cz"], &[], 0.0, 1);
    let bands = BandConfig::default().erp_bands;
    let p = n400_band_power(&e, (0.35, 0.45), &bands).unwrap();
    assert_eq!(p.shape(), &[9, 2, bands.len()]);
    assert_eq!(n400_range((0.35, 0.45), FS), (179, 230));
    assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(n400_band_power(&e, (0.35, 9.0), &bands).is_err());
}

#[test]
fn injected_channels_are_flagged() {
    let chans = ["T7", "T8", "Cz", "Pz", "Oz", "Fz"];
    let e = epochs(30, &chans, &[0, 1], 1.5, 3);
    let bands = BandConfig::default().erp_bands;
    let map = significance_map(
        &e,
        &[vec![ConditionLabel::FactualConfusion, ConditionLabel::ContextualConfusion], vec![ConditionLabel::Control]],
        &bands,
        &ErpConfig::default(),
    )
    .unwrap();
    let sig = map.significant_channels();
    assert!(sig.contains(&"T7") && sig.contains(&"T8"), "{sig:?}");
    for c in &map.channels {
        assert_eq!(c.bands.len(), bands.len());
        let min = c.bands.iter().map(|b| b.p).fold(1.0, f64::min);
        assert_eq!(c.p, min);
    }
}

#[test]
fn bonferroni_scales_min_p() {
    let e = epochs(10, &["T7", "Cz"], &[0], 0.6, 5);
    let bands = BandConfig::default().erp_bands;
    let groups = [vec![ConditionLabel::FactualConfusion], vec![ConditionLabel::Control]];
    let plain = significance_map(&e, &groups, &bands, &ErpConfig::default()).unwrap();
    let cfg = ErpConfig {
        band_correction: BandCorrection::Bonferroni,
        ..Default::default()
    };
    let corrected = significance_map(&e, &groups, &bands, &cfg).unwrap();
    for (a, b) in plain.channels.iter().zip(&corrected.channels) {
        assert!((b.p - (a.p * bands.len() as f64).min(1.0)).abs() < 1e-15);
    }
}

#[test]
fn undersized_group_is_rejected() {
    let e = epochs(1, &["T7"], &[], 0.0, 2);
    let bands = BandConfig::default().erp_bands;
    let groups = [vec![ConditionLabel::FactualConfusion], vec![ConditionLabel::Control]];
    assert!(significance_map(&e, &groups, &bands, &ErpConfig::default()).is_err());
}

#[test]
fn aggregation_counts_per_channel() {
    let bands = BandConfig::default().erp_bands;
    let groups = [vec![ConditionLabel::FactualConfusion, ConditionLabel::ContextualConfusion], vec![ConditionLabel::Control]];
    let maps: Vec<_> = (0..3)
        .map(|s| significance_map(&epochs(20, &["T7", "Cz"], &[0], 2.0, s), &groups, &bands, &ErpConfig::default()).unwrap())
        .collect();
    let counts = aggregate_significance(&maps).unwrap();
    assert_eq!(counts.n_maps, 3);
    let manual: Vec<usize> = (0..2).map(|c| maps.iter().filter(|m| m.channels[c].significant).count()).collect();
    assert_eq!(counts.counts, manual);
    assert_eq!(counts.counts[0], 3);
    assert!(aggregate_significance(&[]).is_err());
}

#[test]
fn average_erp_recovers_a_slow_deflection() {
    // Every trial carries the same 2 Hz wave; the 15 Hz lowpass keeps it.
    let n = 6;
    let wave: Vec<f64> = (0..1024).map(|s| (2.0 * PI * 2.0 * s as f64 / FS).sin()).collect();
    let data = Array3::from_shape_fn((n, 1, 1024), |(_, _, s)| wave[s]);
    let e = EpochSet::new(data, vec![ConditionLabel::Control; n], (0..n as u32).collect(), vec!["Cz".into()], FS, 2.0).unwrap();
    let w = average_erp(&e, ConditionLabel::Control, &ErpConfig::default()).unwrap();
    assert_eq!(w.data.shape(), &[1, 512]);
    // Away from the reflected edge (half the kernel length).
    for s in 200..512 {
        assert!((w.data[[0, s]] - wave[s]).abs() < 1e-2, "sample {s}");
    }
    assert!(average_erp(&e, ConditionLabel::FactualConfusion, &ErpConfig::default()).is_err());
}

#[test]
fn downsample_block_means() {
    let d = Array2::from_shape_fn((1, 512), |(_, s)| s as f64);
    let r = downsample(&d, 128);
    assert_eq!(r.ncols(), 128);
    assert_eq!(r[[0, 0]], 1.5);
    assert_eq!(r[[0, 127]], 509.5);
}

#[test]
fn report_has_three_comparisons() {
    let e = epochs(4, &["T7", "Cz"], &[0], 1.0, 8);
    let r = erp_report(&[e], &BandConfig::default().erp_bands, &ErpConfig::default()).unwrap();
    assert_eq!(r.comparisons.len(), 3);
    assert_eq!(r.waveforms[0].len(), 3);
    assert_eq!(r.waveforms[0][0].channels[0].1.len(), 128);
    serde_json::to_string(&r).unwrap();
}
