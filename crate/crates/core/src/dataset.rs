//! Touch samples, datasets, phrase cleaning, user-level splits and the
//! line-delimited dataset file format.
//!
//! A dataset file is UTF-8 text. The first line is a header object
//! `{"format_version":1,"screen_mm":[w,h],"screen_px":[w,h]}`; every further
//! line is one sample `{"user_id":..,"phrase":..,"touches":[[x,y],[x,y,t_ms],..]}`.
//! The enter symbol is stored as `"\n"` inside the phrase string.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::alphabet::{CharacterDictionary, ENTER, SPACE};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// One touch in normalized screen units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TouchPoint {
    pub x: f64,
    pub y: f64,
    pub t_ms: Option<f64>,
}

impl TouchPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, t_ms: None }
    }

    pub fn at(x: f64, y: f64, t_ms: f64) -> Self {
        Self {
            x,
            y,
            t_ms: Some(t_ms),
        }
    }
}

impl Serialize for TouchPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(if self.t_ms.is_some() { 3 } else { 2 }))?;
        seq.serialize_element(&self.x)?;
        seq.serialize_element(&self.y)?;
        if let Some(t) = self.t_ms {
            seq.serialize_element(&t)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for TouchPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = TouchPoint;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("[x, y] or [x, y, t_ms]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<TouchPoint, A::Error> {
                let x = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let y = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let t_ms = seq.next_element()?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(4, &self));
                }
                Ok(TouchPoint { x, y, t_ms })
            }
        }
        d.deserialize_seq(PointVisitor)
    }
}

/// Physical size and resolution of the touch surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenSpec {
    pub width_mm: f64,
    pub height_mm: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for ScreenSpec {
    /// A 23" 1920×1080 touch monitor, 555×338 mm.
    fn default() -> Self {
        Self {
            width_mm: 555.0,
            height_mm: 338.0,
            width_px: 1920,
            height_px: 1080,
        }
    }
}

impl ScreenSpec {
    pub fn mm_per_px_x(&self) -> f64 {
        self.width_mm / self.width_px as f64
    }

    pub fn mm_per_px_y(&self) -> f64 {
        self.height_mm / self.height_px as f64
    }

    pub fn px_to_mm(&self, dx_px: f64, dy_px: f64) -> (f64, f64) {
        (dx_px * self.mm_per_px_x(), dy_px * self.mm_per_px_y())
    }

    pub fn mm_to_normalized(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        (x_mm / self.width_mm, y_mm / self.height_mm)
    }

    pub fn px_to_normalized(&self, dx_px: f64, dy_px: f64) -> (f64, f64) {
        (dx_px / self.width_px as f64, dy_px / self.height_px as f64)
    }

    pub fn center_mm(&self) -> (f64, f64) {
        (self.width_mm / 2.0, self.height_mm / 2.0)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.width_mm.is_finite()
            && self.height_mm.is_finite()
            && self.width_mm > 0.0
            && self.height_mm > 0.0
            && self.width_px > 0
            && self.height_px > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid screen spec {self:?}")))
        }
    }
}

/// A phrase with one touch per character.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchSample {
    user_id: String,
    phrase: String,
    touches: Vec<TouchPoint>,
}

impl TouchSample {
    pub fn new(user_id: impl Into<String>, phrase: impl Into<String>, touches: Vec<TouchPoint>) -> Result<Self> {
        let sample = Self {
            user_id: user_id.into(),
            phrase: phrase.into(),
            touches,
        };
        sample.validate().map_err(|reason| Error::Validation { record: 0, reason })?;
        Ok(sample)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let dict = CharacterDictionary::standard();
        let n_chars = self.phrase.chars().count();
        if n_chars == 0 {
            return Err("empty phrase".into());
        }
        if n_chars != self.touches.len() {
            return Err(format!(
                "phrase has {n_chars} symbols but {} touches",
                self.touches.len()
            ));
        }
        if let Some(c) = self.phrase.chars().find(|&c| !dict.is_typeable(c)) {
            return Err(format!("phrase contains non-dictionary symbol {:?}", c));
        }
        let mut last_t = f64::NEG_INFINITY;
        for (i, p) in self.touches.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(format!("touch {i} is not finite"));
            }
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(format!("touch {i} ({}, {}) outside [0, 1]", p.x, p.y));
            }
            if let Some(t) = p.t_ms {
                if !t.is_finite() || t < last_t {
                    return Err(format!("touch {i} timestamp {t} is decreasing or not finite"));
                }
                last_t = t;
            }
        }
        Ok(())
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn phrase(&self) -> &str {
        &self.phrase
    }

    pub fn touches(&self) -> &[TouchPoint] {
        &self.touches
    }

    pub fn len(&self) -> usize {
        self.touches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touches.is_empty()
    }

    /// Dictionary indices of the phrase.
    pub fn targets(&self) -> Vec<usize> {
        CharacterDictionary::standard()
            .encode(&self.phrase)
            .expect("validated phrase")
    }

    /// Same phrase and user with every touch mapped through `f`.
    pub fn map_touches(&self, f: impl Fn(&TouchPoint) -> TouchPoint) -> Result<Self> {
        Self::new(
            self.user_id.clone(),
            self.phrase.clone(),
            self.touches.iter().map(f).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub screen: ScreenSpec,
    samples: Vec<TouchSample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    screen_mm: [f64; 2],
    screen_px: [u32; 2],
}

impl Dataset {
    pub fn new(screen: ScreenSpec, samples: Vec<TouchSample>) -> Self {
        Self { screen, samples }
    }

    pub fn empty(screen: ScreenSpec) -> Self {
        Self::new(screen, Vec::new())
    }

    pub fn samples(&self) -> &[TouchSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TouchSample> {
        self.samples
    }

    pub fn push(&mut self, sample: TouchSample) {
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct user ids in sorted order.
    pub fn users(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.user_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn keystrokes(&self) -> usize {
        self.samples.iter().map(TouchSample::len).sum()
    }

    pub fn filter_users(&self, keep: &BTreeSet<String>) -> Dataset {
        Dataset::new(
            self.screen,
            self.samples
                .iter()
                .filter(|s| keep.contains(&s.user_id))
                .cloned()
                .collect(),
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            screen_mm: [self.screen.width_mm, self.screen.height_mm],
            screen_px: [self.screen.width_px, self.screen.height_px],
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        reason: "missing header record".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        reason: format!("bad header: {e}"),
                    })?;
                }
            }
        };
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unsupported format_version {}", header.format_version),
            });
        }
        let screen = ScreenSpec {
            width_mm: header.screen_mm[0],
            height_mm: header.screen_mm[1],
            width_px: header.screen_px[0],
            height_px: header.screen_px[1],
        };
        screen.validate()?;
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: TouchSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            sample.validate().map_err(|reason| Error::Validation {
                record: i + 1,
                reason,
            })?;
            samples.push(sample);
        }
        Ok(Dataset::new(screen, samples))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Cleans raw text down to the dictionary: lowercases letters, keeps period
/// and apostrophe, drops everything else and collapses whitespace. A
/// whitespace run that contains a line break becomes a single enter, any other
/// run a single space. When `second` is given the two cleaned sentences are
/// joined with enter.
pub fn preprocess_phrase(raw: &str, second: Option<&str>) -> Result<String> {
    let first = clean(raw)?;
    match second {
        None => Ok(first),
        Some(s) => {
            let second = clean(s)?;
            Ok(format!("{first}{ENTER}{second}"))
        }
    }
}

fn clean(raw: &str) -> Result<String> {
    let dict = CharacterDictionary::standard();
    let mut out = String::with_capacity(raw.len());
    // Pending separator: None, Some(false) = space, Some(true) = enter.
    let mut pending: Option<bool> = None;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            let is_break = c == '\n' || c == '\r';
            pending = Some(pending.unwrap_or(false) || is_break);
        } else if dict.is_typeable(c) {
            if let Some(brk) = pending.take() {
                if !out.is_empty() {
                    out.push(if brk { ENTER } else { SPACE });
                }
            }
            out.push(c);
        }
    }
    if out.is_empty() {
        Err(Error::RejectedPhrase(raw.to_string()))
    } else {
        Ok(out)
    }
}

/// Reads a plain-text corpus (one sentence per line), cleaning every line and
/// skipping lines with nothing typeable.
pub fn load_corpus(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| preprocess_phrase(l, None).ok())
        .collect()
}

/// The bundled everyday-English sentence corpus.
pub fn bundled_corpus() -> Vec<String> {
    load_corpus(include_str!("../data/corpus.txt"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// User-disjoint train/validation/test partition. Users are sorted, shuffled
/// with `seed`, and the first `n_test_users` go to test, the next
/// `n_val_users` to validation, the rest to training.
pub fn split_dataset(d: &Dataset, n_test_users: usize, n_val_users: usize, seed: u64) -> Result<Split> {
    let mut users = d.users();
    let needed = n_test_users + n_val_users + 1;
    if users.len() < needed {
        return Err(Error::TooFewUsers {
            found: users.len(),
            needed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let test: BTreeSet<String> = users[..n_test_users].iter().cloned().collect();
    let val: BTreeSet<String> = users[n_test_users..n_test_users + n_val_users]
        .iter()
        .cloned()
        .collect();
    let train: BTreeSet<String> = users[n_test_users + n_val_users..].iter().cloned().collect();
    Ok(Split {
        train: d.filter_users(&train),
        val: d.filter_users(&val),
        test: d.filter_users(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(user: &str, phrase: &str) -> TouchSample {
        let n = phrase.chars().count();
        let touches = (0..n)
            .map(|i| TouchPoint::new(0.1 + 0.01 * i as f64, 0.5))
            .collect();
        TouchSample::new(user, phrase, touches).unwrap()
    }

    #[test]
    fn cleaning_examples() {
        assert_eq!(preprocess_phrase("Hello, World!", None).unwrap(), "hello world");
        assert_eq!(preprocess_phrase("I'm ok.", None).unwrap(), "i'm ok.");
        assert_eq!(preprocess_phrase("ab", Some("cd")).unwrap(), "ab\ncd");
        assert_eq!(preprocess_phrase("  a \t -  b  ", None).unwrap(), "a b");
        assert_eq!(preprocess_phrase("Route 66 rocks", None).unwrap(), "route rocks");
    }

    #[test]
    fn cleaning_rejects_empty() {
        assert!(matches!(
            preprocess_phrase("123 !?", None),
            Err(Error::RejectedPhrase(_))
        ));
        assert!(preprocess_phrase("ok", Some("42")).is_err());
    }

    #[test]
    fn cleaning_is_idempotent_on_joined_phrases() {
        let once = preprocess_phrase("Can I go?", Some("Yes, you can.")).unwrap();
        assert_eq!(preprocess_phrase(&once, None).unwrap(), once);
    }

    #[test]
    fn length_mismatch_rejected() {
        let touches = vec![TouchPoint::new(0.5, 0.5); 4];
        assert!(matches!(
            TouchSample::new("u", "hello", touches),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn split_examples() {
        let mut d = Dataset::empty(ScreenSpec::default());
        for u in ["u1", "u2", "u3", "u4"] {
            for p in ["ab", "cd"] {
                d.push(sample(u, p));
            }
        }
        let s = split_dataset(&d, 2, 1, 7).unwrap();
        assert_eq!(s.train.users().len(), 1);
        assert_eq!(s.val.users().len(), 1);
        assert_eq!(s.test.users().len(), 2);
        let mut all: Vec<String> = s.train.users();
        all.extend(s.val.users());
        all.extend(s.test.users());
        all.sort();
        assert_eq!(all, d.users());
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), d.len());
        assert_eq!(split_dataset(&d, 2, 1, 7).unwrap(), s);

        let three = d.filter_users(&["u1", "u2", "u3"].iter().map(|s| s.to_string()).collect());
        assert!(matches!(
            split_dataset(&three, 2, 1, 7),
            Err(Error::TooFewUsers { found: 3, needed: 4 })
        ));
    }

    #[test]
    fn empty_dataset_round_trip() {
        let d = Dataset::empty(ScreenSpec::default());
        let bytes = d.to_bytes();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(Dataset::read_from(&bytes[..]).unwrap(), d);
    }

    #[test]
    fn one_sample_round_trip() {
        let mut d = Dataset::empty(ScreenSpec::default());
        let s = TouchSample::new(
            "user-7",
            "a\nb",
            vec![
                TouchPoint::at(0.123456789012345, 0.987654321, 0.0),
                TouchPoint::at(1.0 / 3.0, 0.0, 12.5),
                TouchPoint::at(0.5, 1.0, 40.0),
            ],
        )
        .unwrap();
        d.push(s);
        let back = Dataset::read_from(&d.to_bytes()[..]).unwrap();
        assert_eq!(back, d);
        assert!(String::from_utf8(d.to_bytes()).unwrap().contains("\"a\\nb\""));
    }

    #[test]
    fn malformed_and_invalid_records_name_the_line() {
        let header = r#"{"format_version":1,"screen_mm":[555.0,338.0],"screen_px":[1920,1080]}"#;
        let bad_json = format!("{header}\n{{\"user_id\":\"u\",\"phrase\":\"ab\"\n");
        match Dataset::read_from(bad_json.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let mismatch = format!(
            "{header}\n{}\n",
            r#"{"user_id":"u","phrase":"hello","touches":[[0.1,0.1],[0.2,0.1],[0.3,0.1],[0.4,0.1]]}"#
        );
        match Dataset::read_from(mismatch.as_bytes()) {
            Err(Error::Validation { record, reason }) => {
                assert_eq!(record, 2);
                assert!(reason.contains("5 symbols but 4 touches"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bundled_corpus_is_large_and_clean() {
        let corpus = bundled_corpus();
        assert!(corpus.len() >= 500);
        let dict = CharacterDictionary::standard();
        for s in &corpus {
            assert!(s.chars().all(|c| dict.is_typeable(c) && c != ENTER));
        }
    }
}
