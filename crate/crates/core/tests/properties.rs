//! Property-based invariants over the numeric kernels and the data
//! pipeline.

use proptest::prelude::*;
use stabr_core::data::{
    make_examples, sessionize, split_sessions, Interaction, Session, SessionItem, SongKey,
    SongVocab, TagTable, MIN_SESSION_LEN,
};
use stabr_core::numerics::{relu, sigmoid, softmax, tanh, Matrix, Rng};

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, len)
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(v in finite_vec(1..12), c in -100.0..100.0f64) {
        let base = softmax(&v).unwrap();
        let shifted_input: Vec<f64> = v.iter().map(|x| x + c).collect();
        let shifted = softmax(&shifted_input).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(base.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn matmul_is_associative_on_5x5_chains(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let a = rng.uniform_matrix(-1.0, 1.0, 5, 5).unwrap();
        let b = rng.uniform_matrix(-1.0, 1.0, 5, 5).unwrap();
        let c = rng.uniform_matrix(-1.0, 1.0, 5, 5).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn nonlinearities_match_scalar_references(v in finite_vec(1..16)) {
        let m = Matrix::from_vec(1, v.len(), v.clone()).unwrap();
        let r = relu(&m);
        let s = sigmoid(&m);
        let t = tanh(&m);
        for (i, &x) in v.iter().enumerate() {
            let relu_ref = if x > 0.0 { x } else { 0.0 };
            let sig_ref = 1.0 / (1.0 + (-x).exp());
            prop_assert!((r.data()[i] - relu_ref).abs() == 0.0);
            prop_assert!((s.data()[i] - sig_ref).abs() <= 1e-15 * sig_ref.max(1e-300));
            prop_assert!((t.data()[i] - x.tanh()).abs() == 0.0);
        }
    }

    #[test]
    fn vocab_roundtrips(n in 1usize..60) {
        let keys: Vec<SongKey> =
            (0..n).map(|i| SongKey::new(&format!("a{}", i % 7), &format!("t{i}"))).collect();
        let vocab = SongVocab::from_keys(keys).unwrap();
        for i in 0..vocab.len() {
            prop_assert_eq!(vocab.lookup(vocab.key(i).unwrap()), Some(i));
        }
    }
}

fn random_plays(seed: u64, users: usize) -> Vec<Interaction> {
    let mut rng = Rng::new(seed);
    let mut plays = Vec::new();
    for u in 0..users {
        let mut ts = 1_000 + rng.next_index(10_000) as i64;
        for i in 0..(MIN_SESSION_LEN + rng.next_index(40)) {
            plays.push(Interaction {
                user_id: format!("user{u}"),
                timestamp: ts,
                artist: "A".to_string(),
                track: format!("t{i}"),
            });
            ts += 30 + rng.next_index(5_000) as i64;
        }
    }
    plays
}

proptest! {
    #[test]
    fn split_partitions_and_bounds_train_fraction(seed in 0u64..500) {
        let plays = random_plays(seed, 3);
        let sessions = sessionize(&plays, 1800);
        prop_assume!(!sessions.is_empty());
        let (train, test) = split_sessions(sessions.clone());

        // exact partition
        prop_assert_eq!(train.len() + test.len(), sessions.len());
        let mut rejoined = train.clone();
        rejoined.extend(test.clone());
        for s in &sessions {
            prop_assert_eq!(rejoined.iter().filter(|r| *r == s).count(), 1);
        }

        // per-user train fraction within 1/n of 0.7
        let users: std::collections::BTreeSet<&str> =
            sessions.iter().map(|s| s.user_id.as_str()).collect();
        for user in users {
            let n = sessions.iter().filter(|s| s.user_id == user).count() as f64;
            let tr = train.iter().filter(|s| s.user_id == user).count() as f64;
            let frac = tr / n;
            prop_assert!(frac >= 0.7 - 1.0 / n - 1e-12);
            prop_assert!(frac <= 0.7 + 1.0 / n + 1e-12);
        }
    }

    #[test]
    fn resessionizing_sessions_is_identity(seed in 0u64..500) {
        let plays = random_plays(seed, 2);
        let sessions = sessionize(&plays, 1800);
        let rejoined: Vec<Interaction> = sessions
            .iter()
            .flat_map(|s| {
                s.items.iter().map(|it| Interaction {
                    user_id: s.user_id.clone(),
                    timestamp: it.timestamp,
                    artist: it.key.artist.clone(),
                    track: it.key.track.clone(),
                })
            })
            .collect();
        prop_assert_eq!(sessionize(&rejoined, 1800), sessions);
    }

    #[test]
    fn in_vocab_session_yields_len_minus_one_examples(len in 5usize..25, m in 1usize..30) {
        let session = Session {
            user_id: "u".to_string(),
            items: (0..len)
                .map(|i| SessionItem {
                    key: SongKey::new("A", &format!("t{i}")),
                    timestamp: 1000 + i as i64,
                })
                .collect(),
        };
        let vocab = SongVocab::from_keys(
            (0..len).map(|i| SongKey::new("A", &format!("t{i}"))).collect(),
        )
        .unwrap();
        let table = TagTable::new(vec![vec![]; len]);
        let examples = make_examples(&session, m, &vocab, &table);
        prop_assert_eq!(examples.len(), len - 1);
        for ex in &examples {
            prop_assert!(ex.prefix.len() <= m);
            prop_assert!(!ex.prefix.is_empty());
        }
    }
}
