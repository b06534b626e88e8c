use super::*;
use crate::data::{generate_synthetic_dataset, load_split, SynthConfig};
use crate::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

const T: usize = 4;
const C: usize = 6;

fn record(id: &str, audio: &[(usize, usize)], visual: &[(usize, usize)]) -> VideoRecord {
    let mut pa = LabelMatrix::zeros(T, C);
    let mut pv = LabelMatrix::zeros(T, C);
    for &(t, c) in audio {
        pa.set(t, c, true);
    }
    for &(t, c) in visual {
        pv.set(t, c, true);
    }
    let video_label = (0..C).map(|c| pa.column_any(c) || pv.column_any(c)).collect();
    VideoRecord {
        video_id: id.into(),
        audio: Tensor::full(&[T, 2], id.len() as f64).unwrap(),
        visual: Tensor::full(&[T, 3], -(id.len() as f64)).unwrap(),
        video_label,
        pseudo_a: pa,
        pseudo_v: pv,
        discard: false,
        audio_path: None,
        visual_path: None,
    }
}

fn random_pool(seed: u64, n: usize) -> Vec<VideoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ev = |rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
                (0..rng.gen_range(1..=2))
                    .map(|_| (rng.gen_range(0..T), rng.gen_range(0..C)))
                    .collect()
            };
            let a = ev(&mut rng);
            let v = ev(&mut rng);
            record(&format!("p{i:03}"), &a, &v)
        })
        .collect()
}

#[test]
fn threshold_is_strict() {
    let mut recs = Vec::new();
    for i in 0..51 {
        recs.push(record(&format!("a{i}"), &[(0, 0)], &[]));
    }
    for i in 0..50 {
        recs.push(record(&format!("b{i}"), &[], &[(1, 1)]));
    }
    let d = count_label_distribution(&recs, C, 50);
    assert_eq!(d.counts[0], 51);
    assert_eq!(d.counts[1], 50);
    assert_eq!(d.retained, vec![0]);
}

#[test]
fn empty_dataset_gives_empty_distribution() {
    let d = count_label_distribution(&[], C, 50);
    assert_eq!(d.counts, vec![0; C]);
    assert!(d.retained.is_empty());
}

#[test]
fn five_video_tally() {
    // class:  0 1 2 3 4 5
    // v0      x . x . . .
    // v1      x x . . . .
    // v2      . . x . . x
    // v3      x . . . . .
    // v4      . . x . . x
    let recs = [
        record("v0", &[(0, 0)], &[(2, 2), (3, 2)]),
        record("v1", &[(0, 1)], &[(0, 0), (1, 0)]),
        record("v2", &[(0, 5)], &[(3, 2)]),
        record("v3", &[(1, 0), (2, 0)], &[(1, 0)]),
        record("v4", &[], &[(0, 2), (0, 5)]),
    ];
    let d = count_label_distribution(&recs, C, 1);
    assert_eq!(d.counts, vec![3, 1, 3, 0, 0, 2]);
    assert_eq!(d.retained, vec![0, 2, 5]);
    let n = d.normalized();
    assert_eq!(n, vec![3.0 / 8.0, 3.0 / 8.0, 2.0 / 8.0]);
}

#[test]
fn combine_takes_tracks_and_unions_labels() {
    let violin = 3;
    let speech = 0;
    let vd = record("vid", &[(0, 4)], &[(1, violin)]);
    let ad = record("aud", &[(2, speech)], &[(0, 5)]);
    let r = cmrc_combine(&vd, &ad).unwrap();
    assert_eq!(r.video_id, "cmrc_vid_aud");
    assert_eq!(r.label_classes(), vec![speech, violin]);
    assert_eq!(r.visual.to_vec(), vd.visual.to_vec());
    assert_eq!(r.audio.to_vec(), ad.audio.to_vec());
    assert_eq!(r.pseudo_v, vd.pseudo_v);
    assert_eq!(r.pseudo_a, ad.pseudo_a);
}

#[test]
fn self_combination_keeps_tracks() {
    let v = record("x", &[(0, 1)], &[(2, 4)]);
    let r = cmrc_combine(&v, &v).unwrap();
    assert_eq!(r.pseudo_a, v.pseudo_a);
    assert_eq!(r.pseudo_v, v.pseudo_v);
    assert_eq!(r.audio.to_vec(), v.audio.to_vec());
    assert_eq!(r.visual.to_vec(), v.visual.to_vec());
    assert_eq!(r.video_label, v.video_label);
}

#[test]
fn ineligible_donors_are_rejected() {
    let ok = record("ok", &[(0, 1)], &[]);
    let mut discarded = record("d", &[(0, 1)], &[]);
    discarded.discard = true;
    let mut nulls = record("n", &[], &[]);
    nulls.pseudo_v.set_null(2);
    assert!(matches!(cmrc_combine(&discarded, &ok), Err(AugmentError::Discarded { .. })));
    assert!(matches!(cmrc_combine(&ok, &discarded), Err(AugmentError::Discarded { .. })));
    assert!(matches!(cmrc_combine(&ok, &nulls), Err(AugmentError::Unannotated { .. })));
}

#[test]
fn batch_has_exact_count_and_unique_ids() {
    let pool = random_pool(1, 30);
    let d = count_label_distribution(&pool, C, 3);
    let cfg = AugmentConfig::default();
    let batch = generate_cmrc_batch(&pool, &d, &cfg, 100).unwrap();
    assert_eq!(batch.len(), 100);
    let ids: HashSet<_> = batch.iter().map(|c| c.record.video_id.clone()).collect();
    assert_eq!(ids.len(), 100);
    assert!(batch.iter().all(|c| c.visual_donor != c.audio_donor));
}

#[test]
fn batch_is_seeded() {
    let pool = random_pool(2, 20);
    let d = count_label_distribution(&pool, C, 2);
    let ids = |seed| {
        let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
        generate_cmrc_batch(&pool, &d, &cfg, 50)
            .unwrap()
            .into_iter()
            .map(|c| c.record.video_id)
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(5), ids(5));
    assert_ne!(ids(5), ids(6));
}

#[test]
fn all_discarded_pool_has_no_capacity() {
    let mut pool = random_pool(3, 5);
    for r in &mut pool {
        r.discard = true;
    }
    let d = count_label_distribution(&pool, C, 0);
    let err = generate_cmrc_batch(&pool, &d, &AugmentConfig::default(), 1).unwrap_err();
    assert!(matches!(err, AugmentError::Capacity { target: 1, available: 0 }));
}

#[test]
fn capacity_is_ordered_pairs_without_self() {
    let pool = random_pool(4, 4);
    let d = count_label_distribution(&pool, C, 0);
    let cfg = AugmentConfig::default();
    assert_eq!(generate_cmrc_batch(&pool, &d, &cfg, 12).unwrap().len(), 12);
    assert!(matches!(
        generate_cmrc_batch(&pool, &d, &cfg, 13),
        Err(AugmentError::Capacity { available: 12, .. })
    ));
}

#[test]
fn generated_profile_tracks_retained_distribution() {
    let pool = random_pool(7, 120);
    let d = count_label_distribution(&pool, C, 10);
    assert!(d.retained.len() >= 3);
    let batch = generate_cmrc_batch(&pool, &d, &AugmentConfig::default(), 600).unwrap();
    let dist = d.l1_distance(batch.iter().map(|c| c.record.video_label.as_slice()));
    assert!(dist < 0.15, "L1 = {dist}");
}

#[test]
fn histogram_oracle_for_l1() {
    let d = LabelDistribution { counts: vec![2, 0, 6], threshold: 1, retained: vec![0, 2] };
    let labels = [vec![true, false, false], vec![true, true, true]];
    // generated: class0 2, class2 1 -> (2/3, 1/3); goal (1/4, 3/4)
    let got = d.l1_distance(labels.iter().map(Vec::as_slice));
    assert!((got - (5.0 / 12.0 + 5.0 / 12.0)).abs() < 1e-15);
}

#[test]
fn multiplier_targets() {
    let cfg = |m| AugmentConfig { target: Target::Multiplier(m), ..AugmentConfig::default() };
    assert_eq!(cfg(1.0).target_count(40), 40);
    assert_eq!(cfg(0.25).target_count(30), 8);
    assert_eq!(cfg(2.0).target_count(40), 80);
    assert!(cfg(0.3).validate().is_err());
    let explicit = AugmentConfig { target: Target::Count(7), ..AugmentConfig::default() };
    assert_eq!(explicit.target_count(1000), 7);
}

#[test]
fn written_batch_reloads_with_donor_features() {
    let dir = tempfile::tempdir().unwrap();
    let syn = SynthConfig {
        videos: 12,
        val_videos: 1,
        test_videos: 1,
        null_rate: 0.3,
        d_audio: 4,
        d_visual: 5,
        ..SynthConfig::default()
    };
    let out = generate_synthetic_dataset(&syn, &dir.path().join("ds")).unwrap();
    let split = load_split(&out.train).unwrap();
    let d = count_label_distribution(&split.records, split.vocab.len(), 0);
    let batch = generate_cmrc_batch(&split.records, &d, &AugmentConfig::default(), 10).unwrap();
    let files = write_cmrc_batch(&dir.path().join("aug"), &batch, &split.vocab, split.segments()).unwrap();

    let reloaded = load_split(&files.manifest).unwrap();
    assert_eq!(reloaded.records.len(), 10);
    for (c, r) in batch.iter().zip(&reloaded.records) {
        assert_eq!(r.video_id, c.record.video_id);
        assert_eq!(r.pseudo_a, c.record.pseudo_a);
        assert_eq!(r.pseudo_v, c.record.pseudo_v);
        assert_eq!(r.video_label, c.record.video_label);
        assert_eq!(r.audio.to_vec(), c.record.audio.to_vec());
        assert_eq!(r.visual.to_vec(), c.record.visual.to_vec());
    }
    let prov = fs::read_to_string(&files.provenance).unwrap();
    let lines: Vec<&str> = prov.lines().collect();
    assert_eq!(lines[0], "new_id,visual_donor,audio_donor");
    assert_eq!(lines.len(), 11);
    let first = &batch[0];
    assert_eq!(
        lines[1],
        format!("{},{},{}", first.record.video_id, first.visual_donor, first.audio_donor)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn union_labels_and_eligible_donors(seed in 0u64..1000, n in 3usize..12, drop in 0usize..3, target in 0usize..20) {
        let mut pool = random_pool(seed, n);
        for r in pool.iter_mut().take(drop) {
            if seed % 2 == 0 { r.discard = true } else { r.pseudo_a.set_null(0) }
        }
        let eligible = n - drop;
        let target = target.min(eligible * (eligible - 1));
        let d = count_label_distribution(&pool, C, 1);
        let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
        let batch = generate_cmrc_batch(&pool, &d, &cfg, target).unwrap();
        prop_assert_eq!(batch.len(), target);
        let by_id: std::collections::HashMap<_, _> = pool.iter().map(|r| (r.video_id.clone(), r)).collect();
        for c in &batch {
            let v = by_id[&c.visual_donor];
            let a = by_id[&c.audio_donor];
            prop_assert!(v.is_cmrc_eligible() && a.is_cmrc_eligible());
            for k in 0..C {
                prop_assert_eq!(c.record.video_label[k], v.pseudo_v.column_any(k) || a.pseudo_a.column_any(k));
            }
        }
    }
}
