use std::collections::{BTreeMap, BTreeSet};

use cliffordm::data::{aggregate_labels, expand_eyes, patient_split, stratum_key, train_count, SampleRecord, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random manifest; some patients appear on several rows.
fn manifest(rng: &mut ChaCha8Rng) -> Vec<SampleRecord> {
    let patients = rng.random_range(2..60);
    let rows = patients + rng.random_range(0..10);
    (0..rows)
        .map(|r| {
            let id = if r < patients { r } else { rng.random_range(0..patients) };
            let (left, right) = match rng.random_range(0..3) {
                0 => (Some(format!("{id}_l.png").into()), None),
                1 => (None, Some(format!("{id}_r.png").into())),
                _ => (Some(format!("{id}_l.png").into()), Some(format!("{id}_r.png").into())),
            };
            let labels = (0..8).map(|_| rng.random_bool(0.2) as u8).collect();
            SampleRecord { patient_id: format!("p{id:03}"), left, right, labels }
        })
        .collect()
}

#[test]
fn splits_are_patient_disjoint_and_stratified() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..1000 {
        let records = manifest(&mut rng);
        let ratio = [0.8, 0.5, 0.7, 0.9][case % 4];
        let seed = rng.random();
        let split = patient_split(&records, ratio, seed).unwrap();
        assert_eq!(split, patient_split(&records, ratio, seed).unwrap());

        let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
        let val: BTreeSet<&str> = split.val.iter().map(String::as_str).collect();
        assert!(train.is_disjoint(&val), "case {case}");
        let all: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        assert_eq!(train.union(&val).copied().collect::<BTreeSet<_>>(), all);

        // every image of a patient lands on the patient's side
        for s in expand_eyes(&records, &split).unwrap() {
            let want = if train.contains(s.patient_id.as_str()) { Split::Train } else { Split::Val };
            assert_eq!(s.split, want);
        }

        // per-stratum train share follows the rounding rule
        let mut strata: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (id, labels) in aggregate_labels(&records) {
            let e = strata.entry(stratum_key(&labels)).or_default();
            e.0 += 1;
            e.1 += train.contains(id) as usize;
        }
        for (key, (n, n_train)) in strata {
            let want = if n == 1 { 1 } else { train_count(n, ratio) };
            assert_eq!(n_train, want, "case {case} stratum {key}");
            assert_eq!(split.singleton_strata.contains(&key), n == 1);
        }
    }
}

#[test]
fn aggregation_is_an_elementwise_max() {
    let rec = |id: &str, l: [u8; 3]| SampleRecord {
        patient_id: id.into(),
        left: Some("x.png".into()),
        right: None,
        labels: l.to_vec(),
    };
    let records = vec![rec("a", [0, 1, 0]), rec("b", [0, 0, 0]), rec("a", [0, 0, 1])];
    let agg = aggregate_labels(&records);
    assert_eq!(agg["a"], vec![0, 1, 1]);
    assert_eq!(stratum_key(&agg["a"]), 1);
    assert_eq!(stratum_key(&agg["b"]), 0);
}

#[test]
fn rounding_is_half_up() {
    assert_eq!(train_count(5, 0.8), 4);
    assert_eq!(train_count(3, 0.5), 2);
    assert_eq!(train_count(2, 0.75), 2);
    assert_eq!(train_count(10, 0.0), 0);
    assert_eq!(train_count(10, 1.0), 10);
}
