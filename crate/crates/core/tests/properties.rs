use proptest::prelude::*;

use tapdecode::alphabet::{CharacterDictionary, ENTER, SPACE};
use tapdecode::compute::ops;
use tapdecode::compute::verify::{check_primitives, Dims};
use tapdecode::compute::{GradCheckConfig, Tensor};
use tapdecode::dataset::{preprocess_phrase, Dataset, ScreenSpec, TouchPoint, TouchSample};
use tapdecode::dnd::{DecodeState, Decoder, DndConfig, NeuralDecoder, Variant};
use tapdecode::eval::{levenshtein, words};

fn phrase() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(CharacterDictionary::standard().typeable().to_vec()), 1..20)
        .prop_map(|v| v.into_iter().collect())
}

fn touches(n: usize) -> impl Strategy<Value = Vec<TouchPoint>> {
    proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| TouchPoint::new(x, y)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn primitive_gradients_match_finite_differences(seed in any::<u64>(), m in 1usize..=4, k in 1usize..=4, n in 2usize..=5) {
        let cfg = GradCheckConfig::default();
        for (name, r) in check_primitives(seed, Dims { m, k, n }, &cfg).unwrap() {
            prop_assert!(r.max_rel_error < 1e-6, "{} {:?}", name, r);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..8, vals in proptest::collection::vec(-50.0..50.0f64, 40)) {
        let data: Vec<f64> = vals.iter().cycle().take(rows * cols).copied().collect();
        let p = ops::softmax(&Tensor::new(vec![rows, cols], data).unwrap()).unwrap();
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocessing_is_idempotent(raw in "[A-Za-z .,'!?\n\t-]{0,40}") {
        if let Ok(once) = preprocess_phrase(&raw, None) {
            prop_assert_eq!(preprocess_phrase(&once, None).unwrap(), once.clone());
            let dict = CharacterDictionary::standard();
            prop_assert!(once.chars().all(|c| dict.is_typeable(c)));
            prop_assert!(!once.starts_with([SPACE, ENTER]) && !once.ends_with([SPACE, ENTER]));
        }
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,7}", b in "[abc]{0,7}", c in "[abc]{0,7}") {
        let (a, b, c): (Vec<char>, Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect(), c.chars().collect());
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(ab <= levenshtein(&a, &c) + levenshtein(&c, &b));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(ab <= a.len().max(b.len()));
    }

    #[test]
    fn words_never_contain_separators(s in "[ab \n]{0,20}") {
        for w in words(&s) {
            prop_assert!(!w.is_empty() && !w.contains([SPACE, ENTER]));
        }
    }

    #[test]
    fn dataset_round_trips(phrases in proptest::collection::vec(phrase(), 1..5), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = phrases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = p.chars().map(|_| TouchPoint::new(rng.random(), rng.random())).collect();
                TouchSample::new(format!("u{}", i % 2), p.clone(), t).unwrap()
            })
            .collect();
        let d = Dataset::new(ScreenSpec::default(), samples);
        let back = Dataset::read_from(d.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(back, d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn streaming_matches_batch_decode_of_the_buffer(points in touches(12), window in 1usize..6) {
        let cfg = DndConfig { window, ..DndConfig::new(Variant::Dnd, 1, 8) };
        let model = NeuralDecoder::<f32>::new(&cfg, 5).unwrap();
        let mut state = DecodeState::new(window);
        for (i, p) in points.into_iter().enumerate() {
            let shown = state.push(&model, p).unwrap();
            prop_assert_eq!(shown, model.decode(&state.buffered()).unwrap());
            prop_assert!(state.buffered().len() <= window);
            prop_assert_eq!(state.text().chars().count(), i + 1);
        }
    }
}
