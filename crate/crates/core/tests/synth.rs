use std::collections::BTreeMap;
use std::path::Path;

use confuseq_core::config::PipelineConfig;
use confuseq_core::dsp::{band_power, welch_psd};
use confuseq_core::eeg_prep::{detect_bad_channels, filter_recording, preprocess};
use confuseq_core::erp::{average_erp, erp_report};
use confuseq_core::gaze::{align_to_words, filter_confidence, process_trial, word_at};
use confuseq_core::model::{ConditionLabel, EpochSet};
use confuseq_core::synth::*;
use confuseq_core::Error;

fn spec(n_trials: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_trials,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn shipped_default_spec_matches_code_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synth_default.json");
    assert_eq!(SynthSpec::load(&path).unwrap(), SynthSpec::default());
}

#[test]
fn default_class_counts_follow_reference_design() {
    let s = SynthSpec::default();
    assert_eq!(s.n_trials, 300);
    assert_eq!(s.class_counts(), [120, 99, 81]);
    let labels = s.labels();
    assert_eq!(labels.len(), 300);
    for (class, n) in ConditionLabel::ALL.into_iter().zip([120, 99, 81]) {
        assert_eq!(labels.values().filter(|&&l| l == class).count(), n);
    }
    // Proportional split for other sizes, summing exactly.
    for n in [10, 50, 100, 301] {
        let c = spec(n, 1).class_counts();
        assert_eq!(c.iter().sum::<usize>(), n);
        assert!(c[0] >= c[1] && c[1] >= c[2]);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut cases = Vec::new();
    let mut s = SynthSpec::default();
    s.n400_amplitude_uv = -1.0;
    cases.push(s);
    let mut s = SynthSpec::default();
    s.affected_channels.push("X99".into());
    cases.push(s);
    let mut s = SynthSpec::default();
    s.n_trials = 4;
    cases.push(s);
    let mut s = SynthSpec::default();
    s.gaze.outlier_rate = 1.5;
    cases.push(s);
    let mut s = SynthSpec::default();
    s.eeg_noise.line_hz = 300.0;
    cases.push(s);
    for s in cases {
        assert!(matches!(s.validate(), Err(Error::Config(_))), "{s:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let mut s = SynthSpec::default();
    s.theta_gain = -2.0;
    assert!(synth_dataset(&s, dir.path()).is_err());
}

#[test]
fn dataset_is_byte_identical_for_equal_seeds() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synth_dataset(&spec(12, 3), a.path()).unwrap();
    let mb = synth_dataset(&spec(12, 3), b.path()).unwrap();
    let mc = synth_dataset(&spec(12, 4), c.path()).unwrap();
    assert_eq!(ma, mb);
    for name in ["eeg.csv", "events.jsonl", "gaze.csv", "stimuli.json", "manifest.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs");
    }
    assert_ne!(ma.files["eeg.csv"], mc.files["eeg.csv"]);
}

#[test]
fn manifest_records_hashes_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(12, 5);
    let m = synth_dataset(&s, dir.path()).unwrap();
    assert_eq!(m.files.len(), 4);
    for (name, hash) in &m.files {
        assert_eq!(&sha256_file(&dir.path().join(name)).unwrap(), hash);
    }
    assert_eq!(m.trials.len(), 12);
    assert_eq!(
        m.class_counts.control + m.class_counts.factual_confusion + m.class_counts.contextual_confusion,
        12
    );
    for t in &m.trials {
        assert_eq!(t.n400_injected, t.class.is_confusion());
        assert_eq!(t.theta_gain, if t.class.is_confusion() { 2.0 } else { 1.0 });
        if t.class.is_confusion() {
            assert!(t.gaze.dwell_s.is_some());
        }
    }
    let onsets: Vec<usize> = m.trials.iter().map(|t| t.onset_sample).collect();
    assert!(onsets.windows(2).all(|w| w[0] < w[1]));
    let written: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(written, m);
}

#[test]
fn outliers_fall_below_confidence_threshold() {
    let s = spec(30, 11);
    let stimuli = synth_stimuli(&s);
    let (streams, truth) = synth_gaze(&s, &stimuli).unwrap();
    let mut total = (0, 0);
    for (st, tr) in streams.iter().zip(&truth) {
        let low = st.samples().iter().filter(|x| x.c < 0.6).count();
        assert_eq!(low, tr.outliers);
        let kept = filter_confidence(st.samples(), 0.6);
        assert_eq!(kept.len(), st.len() - tr.outliers);
        assert!(kept.iter().all(|x| x.c >= 0.6));
        total.0 += tr.outliers;
        total.1 += st.len();
    }
    let rate = total.0 as f64 / total.1 as f64;
    assert!((rate - 0.05).abs() < 0.005, "outlier rate {rate}");
}

#[test]
fn control_reading_is_one_dominant_cluster() {
    let cfg = PipelineConfig::default().gaze;
    let mut checked = 0;
    for seed in 1..=5 {
        let s = spec(100, seed);
        let stimuli = synth_stimuli(&s);
        let (streams, _) = synth_gaze(&s, &stimuli).unwrap();
        for (st, stim) in streams.iter().zip(&stimuli) {
            if stim.class != ConditionLabel::Control {
                continue;
            }
            let trial = process_trial(st, &cfg).unwrap();
            let kept = filter_confidence(st.samples(), cfg.confidence_threshold);
            let on_text: Vec<usize> = (0..kept.len())
                .filter(|&i| word_at(stim, kept[i].x, kept[i].y, 0.0).is_some())
                .collect();
            let members: std::collections::BTreeSet<usize> =
                trial.clusters[trial.selected].members.iter().copied().collect();
            let covered = on_text.iter().filter(|i| members.contains(i)).count();
            let frac = covered as f64 / on_text.len() as f64;
            assert!(frac >= 0.8, "seed {seed} trial {}: coverage {frac}", stim.id);
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn confusion_dwell_lands_on_target_word() {
    let cfg = PipelineConfig::default().gaze;
    let mut checked = 0;
    for seed in 1..=5 {
        let s = spec(100, seed);
        let stimuli = synth_stimuli(&s);
        let (streams, truth) = synth_gaze(&s, &stimuli).unwrap();
        for ((st, stim), tr) in streams.iter().zip(&stimuli).zip(&truth) {
            if !stim.class.is_confusion() {
                continue;
            }
            let trial = process_trial(st, &cfg).unwrap();
            let al = align_to_words(&trial.fixations, stim, cfg.align_tolerance);
            let best = (0..al.words.len())
                .max_by(|&a, &b| al.words[a].total_duration_s.total_cmp(&al.words[b].total_duration_s))
                .unwrap();
            assert_eq!(best, tr.target_word, "seed {seed} trial {}", stim.id);
            assert_eq!(tr.target_word, target_word(&s, stim));
            assert_eq!(tr.dwell_word, Some(tr.target_word));
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn line_noise_is_present_and_removed_by_the_notch() {
    let s = spec(10, 2);
    let raw = synth_eeg(&s).unwrap().recording;
    let ch = raw.channel_index("Cz").unwrap();
    let fs = raw.sample_rate_hz();
    let before = raw.data().row(ch).to_vec();
    let filtered = filter_recording(raw, &PipelineConfig::default()).unwrap();
    let after = filtered.data().row(ch).to_vec();

    let psd = welch_psd(&before, fs, 2048, 0.5).unwrap();
    // Highest bin above 20 Hz is the line frequency.
    let (mut peak, mut best) = (0.0, 0.0);
    for (f, p) in psd.freqs_hz.iter().zip(&psd.psd) {
        if *f > 20.0 && *p > best {
            (peak, best) = (*f, *p);
        }
    }
    assert!((peak - 60.0).abs() <= 0.5, "peak at {peak} Hz");
    let pa = band_power(&psd, 59.5, 60.5).unwrap();
    let pb = band_power(&welch_psd(&after, fs, 2048, 0.5).unwrap(), 59.5, 60.5).unwrap();
    let db = 10.0 * (pa / pb).log10();
    assert!(db >= 30.0, "line reduction {db:.1} dB");
}

fn difference_wave(epochs: &EpochSet, channels: &[String]) -> Vec<f64> {
    let cfg = PipelineConfig::default().erp;
    let ctrl = average_erp(epochs, ConditionLabel::Control, &cfg).unwrap();
    let conf: Vec<_> = [ConditionLabel::FactualConfusion, ConditionLabel::ContextualConfusion]
        .into_iter()
        .map(|c| average_erp(epochs, c, &cfg).unwrap())
        .collect();
    let n_conf = (conf[0].n_trials + conf[1].n_trials) as f64;
    let idx: Vec<usize> = channels.iter().map(|c| epochs.channel_index(c).unwrap()).collect();
    (0..ctrl.data.ncols())
        .map(|t| {
            idx.iter()
                .map(|&c| {
                    let m = (conf[0].n_trials as f64 * conf[0].data[[c, t]]
                        + conf[1].n_trials as f64 * conf[1].data[[c, t]])
                        / n_conf;
                    m - ctrl.data[[c, t]]
                })
                .sum::<f64>()
                / idx.len() as f64
        })
        .collect()
}

#[test]
fn injected_deflection_peaks_at_400_ms() {
    let s = spec(60, 8);
    let synth = synth_eeg(&s).unwrap();
    let (epochs, _) = preprocess(synth.recording, &synth.labels, &PipelineConfig::default()).unwrap();
    let wave = difference_wave(&epochs, &s.affected_channels);
    let fs = epochs.sample_rate_hz();
    let (lo, hi) = ((0.2 * fs) as usize, (0.6 * fs) as usize);
    let trough = (lo..hi).min_by(|&a, &b| wave[a].total_cmp(&wave[b])).unwrap();
    let latency = trough as f64 / fs;
    assert!((latency - 0.4).abs() <= 0.02, "trough at {latency} s");
    assert!(wave[trough] < 0.0);
}

#[test]
fn ica_keeps_the_injected_deflection() {
    let s = spec(100, 9);
    let synth = synth_eeg(&s).unwrap();
    let mut no_ica = PipelineConfig::default();
    no_ica.ica.enabled = false;
    let (with, report) = preprocess(synth.recording.clone(), &synth.labels, &PipelineConfig::default()).unwrap();
    let (without, _) = preprocess(synth.recording, &synth.labels, &no_ica).unwrap();
    let ica = report.ica.unwrap();
    assert!(ica.components.iter().any(|c| c.rejected), "blink component should be rejected");
    let at = (0.4 * with.sample_rate_hz()) as usize;
    let (a, b) = (
        difference_wave(&with, &s.affected_channels)[at],
        difference_wave(&without, &s.affected_channels)[at],
    );
    assert!(a < 0.0 && b < 0.0);
    assert!(a / b >= 0.8, "deflection after ICA {a}, without {b}");
}

#[test]
fn clean_synthetic_channels_are_never_flagged() {
    let cfg = PipelineConfig::default();
    for seed in 1..=20 {
        let rec = synth_eeg(&spec(12, seed)).unwrap().recording;
        let rec = filter_recording(rec, &cfg).unwrap();
        let report = detect_bad_channels(&rec, &cfg.bad_channels).unwrap();
        assert!(report.excluded_channels().is_empty(), "seed {seed}: {:?}", report.excluded_channels());
    }
}

fn significant_count(s: &SynthSpec) -> usize {
    let cfg = PipelineConfig::default();
    let synth = synth_eeg(s).unwrap();
    let (epochs, _) = preprocess(synth.recording, &synth.labels, &cfg).unwrap();
    let r = erp_report(&[epochs], &cfg.bands.erp_bands, &cfg.erp).unwrap();
    let c = r.comparisons.iter().find(|c| c.name == "confusion_vs_control").unwrap();
    c.maps[0].significant_channels().len()
}

#[test]
fn more_amplitude_never_means_fewer_significant_channels() {
    let ladder = [0.0, 8.0, 16.0, 25.0];
    let mut table = BTreeMap::new();
    for seed in 1..=5 {
        let counts: Vec<usize> = ladder
            .iter()
            .map(|&a| {
                significant_count(&SynthSpec {
                    n400_amplitude_uv: a,
                    ..spec(100, seed)
                })
            })
            .collect();
        table.insert(seed, counts);
    }
    for (seed, counts) in &table {
        for w in counts.windows(2) {
            assert!(w[1] + 1 >= w[0], "seed {seed}: counts {counts:?}");
        }
    }
}

