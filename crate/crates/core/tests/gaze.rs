use std::collections::{BTreeMap, HashMap};

use confuseq_core::config::GazeConfig;
use confuseq_core::gaze::*;
use confuseq_core::model::{ConditionLabel, GazeSample, GazeStream, StimulusTrial, Word, WordBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(t: f64, x: f64, y: f64) -> GazeSample {
    GazeSample { t, x, y, c: 1.0 }
}

// ---- brute-force DBSCAN reference -------------------------------------------

fn find(p: &mut [usize], mut i: usize) -> usize {
    while p[i] != i {
        p[i] = p[p[i]];
        i = p[i];
    }
    i
}

/// O(N²) reference: union-find over core pairs; each border point joins the
/// component of its lowest-index core neighbour.
fn reference(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (a, b) = (points[i], points[j]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(find(&mut parent, i))
            } else {
                (0..n).find(|&j| core[j] && near(i, j)).map(|j| find(&mut parent, j))
            }
        })
        .collect()
}

fn same_partition(got: &[i32], want: &[Option<usize>]) -> bool {
    let mut fwd: HashMap<i32, usize> = HashMap::new();
    let mut back: HashMap<usize, i32> = HashMap::new();
    got.iter().zip(want).all(|(&g, w)| match (g, w) {
        (NOISE, None) => true,
        (g, Some(w)) if g >= 0 => *fwd.entry(g).or_insert(*w) == *w && *back.entry(*w).or_insert(g) == g,
        _ => false,
    })
}

#[test]
fn dbscan_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(1..=500);
        let n_blobs = rng.random_range(1..=5);
        let centers: Vec<(f64, f64)> = (0..n_blobs).map(|_| (rng.random(), rng.random())).collect();
        let spread = rng.random_range(0.005..0.1);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    (rng.random(), rng.random())
                } else {
                    let c = centers[rng.random_range(0..n_blobs)];
                    (c.0 + spread * (rng.random::<f64>() - 0.5), c.1 + spread * (rng.random::<f64>() - 0.5))
                }
            })
            .collect();
        let eps = rng.random_range(0.005..0.08);
        let min_pts = rng.random_range(1..=8);
        let got = dbscan(&points, eps, min_pts);
        assert!(same_partition(&got, &reference(&points, eps, min_pts)), "case {case}");
        // Labels are numbered by first core point.
        let is_core = |i: usize| {
            let p = points[i];
            points.iter().filter(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() <= eps).count() >= min_pts
        };
        let mut seen = -1;
        for (i, &l) in got.iter().enumerate() {
            if l > seen && is_core(i) {
                assert_eq!(l, seen + 1, "case {case}");
                seen = l;
            }
        }
    }
}

#[test]
fn dbscan_two_blobs_and_an_outlier() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pts = Vec::new();
    for c in [(0.3, 0.5), (0.7, 0.5)] {
        for _ in 0..20 {
            let (r, a): (f64, f64) = (0.01 * rng.random::<f64>(), std::f64::consts::TAU * rng.random::<f64>());
            pts.push((c.0 + r * a.cos(), c.1 + r * a.sin()));
        }
    }
    pts.push((0.5, 0.9));
    let l = dbscan(&pts, 0.05, 5);
    assert!(l[..20].iter().all(|&v| v == 0));
    assert!(l[20..40].iter().all(|&v| v == 1));
    assert_eq!(l[40], NOISE);
}

#[test]
fn dbscan_trivial_cases() {
    assert_eq!(dbscan(&[(0.4, 0.4); 7], 0.01, 5), vec![0; 7]);
    assert_eq!(dbscan(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)], 0.05, 5), vec![NOISE; 3]);
}

#[test]
fn uniformity_hand_cases() {
    assert_eq!(vertical_uniformity(&[1.0, 1.0, 1.0, 3.0, 3.0, 3.0]).unwrap(), 2.0);
    assert_eq!(vertical_uniformity(&[0.0, 0.0, 3.0, 3.0, 3.0]).unwrap(), 3.0);
    assert_eq!(vertical_uniformity(&[0.4; 9]).unwrap(), 0.0);
    assert!(vertical_uniformity(&[1.0]).is_err());
}

fn cluster(size: usize, u: f64, ws: f64, wu: f64) -> GazeCluster {
    GazeCluster {
        members: (0..size).collect(),
        size,
        uniformity: u,
        score: size as f64 * ws - u * wu,
    }
}

#[test]
fn selection_prefers_flat_clusters() {
    let c = [cluster(100, 0.30, 0.01, 1.0), cluster(80, 0.02, 0.01, 1.0)];
    assert!((c[0].score - 0.70).abs() < 1e-12 && (c[1].score - 0.78).abs() < 1e-12);
    assert_eq!(select_cluster(&c).unwrap(), 1);
    assert_eq!(select_cluster(&c[..1]).unwrap(), 0);
    // Equal scores: larger cluster.
    let tie = [cluster(40, 0.0, 0.0, 1.0), cluster(50, 0.0, 0.0, 1.0)];
    assert_eq!(select_cluster(&tie).unwrap(), 1);
    assert!(select_cluster(&[]).is_err());
}

proptest! {
    #[test]
    fn selection_invariant_to_joint_weight_scaling(
        specs in prop::collection::vec((1usize..300, 0.0f64..1.0), 1..8),
        ws in 0.001f64..1.0, wu in 0.0f64..5.0, k in 0.01f64..100.0,
    ) {
        let a: Vec<_> = specs.iter().map(|&(n, u)| cluster(n, u, ws, wu)).collect();
        let b: Vec<_> = specs.iter().map(|&(n, u)| cluster(n, u, k * ws, k * wu)).collect();
        let (ia, ib) = (select_cluster(&a).unwrap(), select_cluster(&b).unwrap());
        // Rounding can break exact ties differently; the chosen scores must agree.
        prop_assert!(ia == ib || (a[ia].score - a[ib].score).abs() <= 1e-9 * a[ia].score.abs().max(1.0));
    }

    #[test]
    fn entropy_ignores_point_order(mut pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200)) {
        let h = gaze_entropy(&pts, 8);
        pts.reverse();
        prop_assert_eq!(h, gaze_entropy(&pts, 8));
        prop_assert!((0.0..=6.0 + 1e-12).contains(&h));
    }
}

#[test]
fn entropy_hand_cases() {
    assert_eq!(gaze_entropy(&[(0.01, 0.01), (0.02, 0.05)], 8), 0.0);
    let four = [(0.05, 0.05), (0.95, 0.05), (0.05, 0.95), (0.95, 0.95)];
    assert!((gaze_entropy(&four, 8) - 2.0).abs() < 1e-12);
}

#[test]
fn confidence_filter() {
    let v = [
        GazeSample { t: 0.0, x: 0.1, y: 0.1, c: 0.3 },
        GazeSample { t: 0.1, x: 0.2, y: 0.1, c: 0.9 },
        GazeSample { t: 0.2, x: 0.3, y: 0.1, c: 0.8 },
    ];
    assert_eq!(filter_confidence(&v, 0.0).len(), 3);
    assert!(filter_confidence(&v, 1.01).is_empty());
    let kept = filter_confidence(&v, 0.8);
    assert_eq!(kept, vec![v[1], v[2]]);
}

const RATE: f64 = 120.0;

/// Dwells of `dur` seconds at each point, with instantaneous jumps between them.
fn dwell_path(points: &[(f64, f64)], dur: f64) -> Vec<GazeSample> {
    let per = (dur * RATE).round() as usize;
    let mut out = Vec::new();
    for &(x, y) in points {
        for _ in 0..per {
            out.push(s(out.len() as f64 / RATE, x, y));
        }
    }
    out
}

#[test]
fn fixations_on_constructed_dwells() {
    let centres = [(0.2, 0.3), (0.4, 0.3), (0.6, 0.3)];
    let f = detect_fixations(&dwell_path(&centres, 0.2), 0.02, 0.1);
    assert_eq!(f.len(), 3);
    for (fx, c) in f.iter().zip(&centres) {
        assert!((fx.x - c.0).abs() < 1e-6 && (fx.y - c.1).abs() < 1e-6);
        assert!((fx.duration_s - 0.2).abs() <= 1.0 / RATE + 1e-12);
    }
    // Contiguous, non-overlapping members.
    for w in f.windows(2) {
        assert!(w[0].start + w[0].n_samples <= w[1].start);
    }
    // Fast sweep: 0.005 per sample over 100 ms exceeds the dispersion limit.
    let sweep: Vec<_> = (0..240).map(|i| s(i as f64 / RATE, 0.005 * i as f64 % 1.0, 0.5)).collect();
    assert!(detect_fixations(&sweep, 0.02, 0.1).is_empty());
    // Short dwell.
    let short = dwell_path(&[(0.5, 0.5)], 0.09);
    assert!(detect_fixations(&short, 0.02, 0.1).is_empty());
}

fn features_of(samples: Vec<GazeSample>) -> GazeFeatureVector {
    let cfg = GazeConfig::default();
    let stream = GazeStream::new(1, samples).unwrap();
    process_trial(&stream, &cfg).unwrap().features
}

#[test]
fn stationary_dwell_features() {
    let f = features_of(dwell_path(&[(0.5, 0.5)], 1.0));
    assert_eq!(f.n_fixations, 1.0);
    assert!(f.mean_velocity.abs() < 1e-12);
    assert_eq!(f.stationary_entropy, 0.0);
    assert_eq!(f.n_clusters, 1.0);
    assert_eq!(f.selected_cluster_fraction, 1.0);
}

#[test]
fn two_fixation_path() {
    let f = features_of(dwell_path(&[(0.3, 0.4), (0.7, 0.4)], 0.5));
    assert_eq!(f.n_fixations, 2.0);
    assert!((f.total_fixation_time - 1.0).abs() <= 2.0 / RATE + 1e-12, "{}", f.total_fixation_time);
}

#[test]
fn doubling_timestamps_halves_velocity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<GazeSample> = (0..600)
        .map(|i| s(i as f64 / RATE, 0.5 + 0.01 * rng.random::<f64>(), 0.5 + 0.01 * rng.random::<f64>()))
        .collect();
    let slow: Vec<GazeSample> = base.iter().map(|g| s(2.0 * g.t, g.x, g.y)).collect();
    let (a, b) = (features_of(base), features_of(slow));
    assert!((b.mean_velocity - a.mean_velocity / 2.0).abs() < 1e-9);
    assert!((b.max_velocity - a.max_velocity / 2.0).abs() < 1e-9);
}

#[test]
fn resampling_contracts() {
    let ramp = resample_linear(&[s(0.0, 0.0, 0.0), s(1.0, 1.0, 1.0)], 1000).unwrap();
    for i in 0..1000 {
        let want = i as f64 / 999.0;
        assert!((ramp[[0, i]] - want).abs() < 1e-12 && (ramp[[1, i]] - want).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let uniform: Vec<GazeSample> = (0..1000).map(|i| s(i as f64 * 0.01, rng.random(), 0.25)).collect();
    let r = resample_trace(&uniform, 1000).unwrap();
    assert_eq!(r.shape(), &[2, 1000]);
    let x: Vec<f64> = uniform.iter().map(|g| g.x).collect();
    let m = x.iter().sum::<f64>() / 1000.0;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1000.0).sqrt();
    for i in 0..1000 {
        assert!((r[[0, i]] - (x[i] - m) / sd).abs() < 1e-9);
        assert_eq!(r[[1, i]], 0.0);
    }
    let mean: f64 = r.row(0).sum() / 1000.0;
    let var: f64 = r.row(0).iter().map(|v| v * v).sum::<f64>() / 1000.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    assert!(resample_trace(&uniform[..1], 1000).is_err());
}

fn stimulus() -> StimulusTrial {
    StimulusTrial {
        id: 3,
        class: ConditionLabel::Control,
        words: (0..5)
            .map(|i| Word {
                text: format!("w{i}"),
                bbox: WordBox::new(0.1 + 0.15 * i as f64, 0.40, 0.22 + 0.15 * i as f64, 0.45).unwrap(),
            })
            .collect(),
    }
}

fn fix(x: f64, y: f64, d: f64) -> Fixation {
    Fixation {
        onset_s: 0.0,
        duration_s: d,
        x,
        y,
        start: 0,
        n_samples: 1,
    }
}

#[test]
fn word_alignment_rules() {
    let st = stimulus();
    let inside = 0.5 * (st.words[3].bbox.x_min + st.words[3].bbox.x_max);
    assert_eq!(word_at(&st, inside, 0.42, 0.03), Some(3));
    assert_eq!(word_at(&st, inside, 0.46, 0.03), Some(3));
    assert_eq!(word_at(&st, inside, 0.55, 0.03), None);
    let a = align_to_words(&[fix(inside, 0.42, 0.2), fix(inside, 0.46, 0.1), fix(0.5, 0.9, 0.3)], &st, 0.03);
    assert_eq!(a.words[3].fixation_count, 2);
    assert!((a.words[3].total_duration_s - 0.3).abs() < 1e-12);
    assert_eq!(a.unassigned, 1);
}

#[test]
fn preprocess_reports_unusable_trials() {
    let st = stimulus();
    let mut other = stimulus();
    other.id = 4;
    other.class = ConditionLabel::FactualConfusion;
    let mut missing = stimulus();
    missing.id = 5;
    let good = GazeStream::new(3, dwell_path(&[(0.2, 0.42), (0.35, 0.42)], 0.5)).unwrap();
    // All samples below the confidence threshold.
    let bad = GazeStream::new(
        4,
        (0..50).map(|i| GazeSample { t: i as f64 / RATE, x: 0.5, y: 0.5, c: 0.1 }).collect(),
    )
    .unwrap();
    let out = preprocess_gaze(&[good, bad], &[st, other, missing], &GazeConfig::default(), None).unwrap();
    assert_eq!(out.features.n_rows(), 1);
    assert_eq!(out.traces.data.shape(), &[1, 2, TRACE_LEN]);
    let ex: BTreeMap<u32, String> = out.excluded.iter().map(|e| (e.trial_id, e.reason.clone())).collect();
    assert_eq!(ex.keys().copied().collect::<Vec<_>>(), vec![4, 5]);
    assert_eq!(out.alignments[0].words[0].fixation_count + out.alignments[0].words[1].fixation_count, 2);

    let orphan = GazeStream::new(99, dwell_path(&[(0.5, 0.5)], 0.5)).unwrap();
    assert!(preprocess_gaze(&[orphan], &[stimulus()], &GazeConfig::default(), None).is_err());
}
