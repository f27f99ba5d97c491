//! Edit-distance metrics, typing speed and timed evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alphabet::{ENTER, SPACE};
use crate::dataset::Dataset;
use crate::dnd::Decoder;
use crate::error::{Error, Result};

/// Unit-cost edit distance (insertions, deletions, substitutions).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Words are maximal runs between spaces and line breaks.
pub fn words(s: &str) -> Vec<&str> {
    s.split([SPACE, ENTER]).filter(|w| !w.is_empty()).collect()
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// Character error rate of `decoded` against `truth`, in percent.
pub fn cer(decoded: &str, truth: &str) -> Result<f64> {
    let p = chars(truth);
    if p.is_empty() {
        return Err(Error::Eval("character error rate needs a non-empty reference".into()));
    }
    Ok(100.0 * levenshtein(&chars(decoded), &p) as f64 / p.len() as f64)
}

/// Word error rate of `decoded` against `truth`, in percent.
pub fn wer(decoded: &str, truth: &str) -> Result<f64> {
    let p = words(truth);
    if p.is_empty() {
        return Err(Error::Eval("word error rate needs a reference with at least one word".into()));
    }
    Ok(100.0 * levenshtein(&words(decoded), &p) as f64 / p.len() as f64)
}

/// Words per minute with five characters per word.
pub fn wpm(text: &str, minutes: f64) -> Result<f64> {
    if !(minutes > 0.0) {
        return Err(Error::Eval(format!("elapsed time must be positive, got {minutes} min")));
    }
    let n = text.chars().count();
    if n == 0 {
        return Err(Error::Eval("typing speed needs at least one character".into()));
    }
    Ok((n - 1) as f64 / minutes / 5.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cer: f64,
    pub wer: f64,
    /// Mean single-threaded decode time per reference word.
    pub ms_per_word: f64,
    pub n_phrases: usize,
    pub n_chars: usize,
    pub n_words: usize,
    pub char_errors: usize,
    pub word_errors: usize,
}

/// Decodes every phrase one at a time on the calling thread and reports
/// micro-averaged error rates (total distance over total length).
pub fn evaluate<D: Decoder + ?Sized>(model: &D, test: &Dataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    let mut r = EvalReport {
        cer: 0.0,
        wer: 0.0,
        ms_per_word: 0.0,
        n_phrases: test.len(),
        n_chars: 0,
        n_words: 0,
        char_errors: 0,
        word_errors: 0,
    };
    let mut seconds = 0.0;
    for s in test.samples() {
        let start = Instant::now();
        let out = model.decode(s.touches())?;
        seconds += start.elapsed().as_secs_f64();
        let truth = s.phrase();
        r.char_errors += levenshtein(&chars(&out), &chars(truth));
        r.n_chars += truth.chars().count();
        let tw = words(truth);
        r.word_errors += levenshtein(&words(&out), &tw);
        r.n_words += tw.len();
    }
    if r.n_words == 0 {
        return Err(Error::Eval("evaluation set contains no words".into()));
    }
    r.cer = 100.0 * r.char_errors as f64 / r.n_chars as f64;
    r.wer = 100.0 * r.word_errors as f64 / r.n_words as f64;
    r.ms_per_word = 1000.0 * seconds / r.n_words as f64;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::CharacterDictionary;
    use crate::dataset::{ScreenSpec, TouchPoint, TouchSample};

    /// Reads the truth back from the touch x coordinate, or always says 'a'.
    struct Oracle {
        constant: bool,
    }

    impl Decoder for Oracle {
        fn window(&self) -> usize {
            8
        }

        fn decode_window(&self, touches: &[TouchPoint]) -> Result<Vec<usize>> {
            Ok(touches.iter().map(|p| if self.constant { 0 } else { (p.x * 100.0).round() as usize }).collect())
        }
    }

    fn set(phrases: &[&str]) -> Dataset {
        let dict = CharacterDictionary::standard();
        let samples = phrases
            .iter()
            .map(|p| {
                let t = dict.encode(p).unwrap().into_iter().map(|i| TouchPoint::new(i as f64 / 100.0, 0.5)).collect();
                TouchSample::new("u", *p, t).unwrap()
            })
            .collect();
        Dataset::new(ScreenSpec::default(), samples)
    }

    #[test]
    fn evaluation_cases() {
        let d = set(&["the cat sat", "on a long mat with a hat", "ab"]);
        let r = evaluate(&Oracle { constant: false }, &d).unwrap();
        assert_eq!((r.cer, r.wer, r.n_phrases), (0.0, 0.0, 3));
        let r = evaluate(&Oracle { constant: true }, &set(&["ab"])).unwrap();
        assert_eq!(r.cer, 50.0);

        let r = evaluate(&Oracle { constant: true }, &d).unwrap();
        let (mut dist, mut len) = (0, 0);
        for s in d.samples() {
            let out = "a".repeat(s.len());
            dist += levenshtein(&chars(&out), &chars(s.phrase()));
            len += s.phrase().chars().count();
        }
        assert_eq!(r.cer, 100.0 * dist as f64 / len as f64);
        assert_eq!((r.n_chars, r.n_words), (len, 11));
        assert!(evaluate(&Oracle { constant: true }, &set(&[])).is_err());
    }

    #[test]
    fn distance_cases() {
        assert_eq!(levenshtein(&chars(""), &chars("abc")), 3);
        assert_eq!(levenshtein(&chars("kitten"), &chars("sitting")), 3);
        assert_eq!(levenshtein(&chars("flaw"), &chars("lawn")), 2);
        let x = chars("the quick brown fox");
        assert_eq!(levenshtein(&x, &x), 0);
    }

    #[test]
    fn rate_cases() {
        assert_eq!(cer("cat", "cart").unwrap(), 25.0);
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert_eq!(cer("", "ab").unwrap(), 100.0);
        assert!(cer("a", "").is_err());
        assert_eq!(wer("my cat", "my bat").unwrap(), 50.0);
        assert_eq!(wer("a b c", "a c").unwrap(), 50.0);
        assert_eq!(wer("hi\nthere", "hi there").unwrap(), 0.0);
        assert!(wer("a", "  ").is_err());
    }

    #[test]
    fn speed_cases() {
        assert_eq!(wpm("hello world", 0.5).unwrap(), 4.0);
        assert_eq!(wpm("x", 3.0).unwrap(), 0.0);
        assert!(wpm("abc", 0.0).is_err());
        let n: f64 = 45.57 * 5.0 + 1.0;
        assert!((wpm(&"a".repeat(n.round() as usize), 1.0).unwrap() - 45.6).abs() < 0.1);
    }
}
