//! The fixed 31-entry character dictionary.
//!
//! Indices 0..=25 are `a`..=`z`, then space, enter, period, apostrophe, and
//! the padding slot at index 30. Padding is used only to fill batches and
//! never occurs in phrase text.

use std::fmt;

pub const DICT_SIZE: usize = 31;
pub const TYPEABLE: usize = 30;
pub const PAD_INDEX: usize = 30;

pub const SPACE: char = ' ';
pub const ENTER: char = '\n';
pub const PERIOD: char = '.';
pub const APOSTROPHE: char = '\'';
/// Placeholder character for the padding slot.
pub const PAD: char = '\u{0}';

const SYMBOLS: [char; DICT_SIZE] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't', 'u', 'v', 'w', 'x', 'y', 'z', SPACE, ENTER, PERIOD, APOSTROPHE, PAD,
];

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct CharacterDictionary {
    symbols: [char; DICT_SIZE],
}

impl Default for CharacterDictionary {
    fn default() -> Self {
        Self::standard()
    }
}

impl fmt::Debug for CharacterDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.symbols.iter().map(|c| c.escape_debug().to_string()))
            .finish()
    }
}

impl CharacterDictionary {
    pub const fn standard() -> Self {
        Self { symbols: SYMBOLS }
    }

    pub fn len(&self) -> usize {
        DICT_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char; DICT_SIZE] {
        &self.symbols
    }

    /// The 30 symbols a user can type (everything but padding).
    pub fn typeable(&self) -> &[char] {
        &self.symbols[..TYPEABLE]
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            SPACE => Some(26),
            ENTER => Some(27),
            PERIOD => Some(28),
            APOSTROPHE => Some(29),
            PAD => Some(PAD_INDEX),
            _ => None,
        }
    }

    pub fn symbol_at(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn is_typeable(&self, c: char) -> bool {
        matches!(self.index_of(c), Some(i) if i < TYPEABLE)
    }

    /// Maps typeable text to indices; `None` if any character is not typeable.
    pub fn encode(&self, text: &str) -> Option<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).filter(|&i| i < TYPEABLE))
            .collect()
    }

    /// Maps indices back to text. Padding indices are skipped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter(|&&i| i != PAD_INDEX)
            .filter_map(|&i| self.symbol_at(i))
            .collect()
    }
}

/// Printable form of a symbol, used in tables and error messages.
pub fn display_symbol(c: char) -> String {
    match c {
        ENTER => "⏎".to_string(),
        SPACE => "␣".to_string(),
        PAD => "<pad>".to_string(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijection() {
        let d = CharacterDictionary::standard();
        assert_eq!(d.len(), 31);
        for i in 0..DICT_SIZE {
            let c = d.symbol_at(i).unwrap();
            assert_eq!(d.index_of(c), Some(i));
        }
        assert_eq!(d.symbol_at(31), None);
        assert_eq!(d.index_of('A'), None);
        assert_eq!(d.index_of('!'), None);
    }

    #[test]
    fn padding_is_not_typeable() {
        let d = CharacterDictionary::standard();
        assert_eq!(d.index_of(PAD), Some(PAD_INDEX));
        assert!(!d.is_typeable(PAD));
        assert_eq!(d.typeable().len(), 30);
        assert!(d.encode("ab\0").is_none());
        assert_eq!(d.encode("i'm ok.\n"), Some(vec![8, 29, 12, 26, 14, 10, 28, 27]));
    }

    #[test]
    fn decode_skips_padding() {
        let d = CharacterDictionary::standard();
        assert_eq!(d.decode(&[7, 8, PAD_INDEX, PAD_INDEX]), "hi");
    }
}
