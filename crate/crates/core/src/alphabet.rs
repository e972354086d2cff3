//! Label alphabets and the handshape feature tables used as classifier targets.
//!
//! Letter indices are fixed: `A`..`Z` map to `0..26`, the begin-silence `<s>`
//! is `26` and the end-silence `</s>` is `27`. Doubled-letter tokens, when
//! enabled, are appended after the boundaries so serialized models stay
//! compatible with the default alphabet.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LETTERS: usize = 26;
pub const BOS: usize = 26;
pub const EOS: usize = 27;
pub const BOS_SYMBOL: &str = "<s>";
pub const EOS_SYMBOL: &str = "</s>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterAlphabet {
    doubled: Vec<String>,
}

impl Default for LetterAlphabet {
    fn default() -> Self {
        Self::new()
    }
}

impl LetterAlphabet {
    /// The 26 letters plus the two boundary symbols.
    pub fn new() -> Self {
        LetterAlphabet {
            doubled: Vec::new(),
        }
    }

    /// Alphabet with extra doubled-letter tokens such as `ZZ`.
    pub fn with_doubled<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut doubled: Vec<String> = Vec::new();
        for t in tokens {
            let t = t.as_ref().to_ascii_uppercase();
            let b = t.as_bytes();
            if b.len() != 2 || b[0] != b[1] || !b[0].is_ascii_uppercase() {
                return Err(Error::UnknownSymbol(t));
            }
            if !doubled.contains(&t) {
                doubled.push(t);
            }
        }
        Ok(LetterAlphabet { doubled })
    }

    pub fn class_count(&self) -> usize {
        NUM_LETTERS + 2 + self.doubled.len()
    }

    pub fn doubled(&self) -> &[String] {
        &self.doubled
    }

    pub fn letter_index(&self, symbol: &str) -> Result<usize> {
        match symbol {
            BOS_SYMBOL => return Ok(BOS),
            EOS_SYMBOL => return Ok(EOS),
            _ => {}
        }
        let b = symbol.as_bytes();
        if b.len() == 1 && b[0].is_ascii_alphabetic() {
            return Ok((b[0].to_ascii_uppercase() - b'A') as usize);
        }
        let upper = symbol.to_ascii_uppercase();
        if let Some(pos) = self.doubled.iter().position(|d| *d == upper) {
            return Ok(NUM_LETTERS + 2 + pos);
        }
        Err(Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, index: usize) -> Result<String> {
        if index < NUM_LETTERS {
            Ok(((b'A' + index as u8) as char).to_string())
        } else if index == BOS {
            Ok(BOS_SYMBOL.to_string())
        } else if index == EOS {
            Ok(EOS_SYMBOL.to_string())
        } else if let Some(d) = self.doubled.get(index - NUM_LETTERS - 2) {
            Ok(d.clone())
        } else {
            Err(Error::UnknownSymbol(format!("#{index}")))
        }
    }

    pub fn is_boundary(&self, index: usize) -> bool {
        index == BOS || index == EOS
    }

    /// Indices of every non-boundary label (letters and doubled tokens).
    pub fn letter_labels(&self) -> Vec<usize> {
        (0..self.class_count())
            .filter(|&i| !self.is_boundary(i))
            .collect()
    }

    /// Base letter (`0..26`) of a letter or doubled token.
    pub fn base_letter(&self, index: usize) -> Option<usize> {
        if index < NUM_LETTERS {
            Some(index)
        } else if index >= NUM_LETTERS + 2 && index < self.class_count() {
            let d = &self.doubled[index - NUM_LETTERS - 2];
            Some((d.as_bytes()[0] - b'A') as usize)
        } else {
            None
        }
    }

    /// Splits a word into label indices. Doubled tokens are matched greedily
    /// when enabled; otherwise every character is its own letter.
    pub fn tokenize(&self, word: &str) -> Result<Vec<usize>> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::with_capacity(chars.len());
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !c.is_ascii_alphabetic() {
                return Err(Error::InvalidWord {
                    word: word.to_string(),
                    position: i,
                });
            }
            if i + 1 < chars.len() && chars[i + 1].eq_ignore_ascii_case(&c) {
                let pair: String = [c, chars[i + 1]].iter().collect();
                if let Ok(idx) = self.letter_index(&pair) {
                    out.push(idx);
                    i += 2;
                    continue;
                }
            }
            out.push((c.to_ascii_uppercase() as u8 - b'A') as usize);
            i += 1;
        }
        Ok(out)
    }

    /// Renders letter labels back to a word; boundary labels are skipped.
    pub fn render(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .filter(|&&l| !self.is_boundary(l))
            .filter_map(|&l| self.symbol(l).ok())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhonologicalFeature {
    #[serde(rename = "SF POR")]
    SfPor,
    #[serde(rename = "SF joints")]
    SfJoints,
    #[serde(rename = "SF quantity")]
    SfQuantity,
    #[serde(rename = "SF thumb")]
    SfThumb,
    #[serde(rename = "SF handpart")]
    SfHandpart,
    #[serde(rename = "UF")]
    Uf,
}

impl PhonologicalFeature {
    pub const ALL: [PhonologicalFeature; 6] = [
        PhonologicalFeature::SfPor,
        PhonologicalFeature::SfJoints,
        PhonologicalFeature::SfQuantity,
        PhonologicalFeature::SfThumb,
        PhonologicalFeature::SfHandpart,
        PhonologicalFeature::Uf,
    ];

    /// Value strings; index 0 is the silence or not-applicable value.
    pub fn values(self) -> &'static [&'static str] {
        match self {
            PhonologicalFeature::SfPor => &["SIL", "radial", "ulnar", "radial/ulnar"],
            PhonologicalFeature::SfJoints => &[
                "SIL",
                "flexed:base",
                "flexed:nonbase",
                "flexed:base & nonbase",
                "stacked",
                "crossed",
                "spread",
            ],
            PhonologicalFeature::SfQuantity => &["N/A", "all", "one", "one > all", "all > one"],
            PhonologicalFeature::SfThumb => &["N/A", "unopposed", "opposed"],
            PhonologicalFeature::SfHandpart => &["SIL", "base", "palm", "ulnar"],
            PhonologicalFeature::Uf => &["SIL", "open", "closed"],
        }
    }

    pub fn value_count(self) -> usize {
        self.values().len()
    }

    pub fn value_index(self, value: &str) -> Option<usize> {
        self.values().iter().position(|v| *v == value)
    }

    pub fn name(self) -> &'static str {
        match self {
            PhonologicalFeature::SfPor => "SF POR",
            PhonologicalFeature::SfJoints => "SF joints",
            PhonologicalFeature::SfQuantity => "SF quantity",
            PhonologicalFeature::SfThumb => "SF thumb",
            PhonologicalFeature::SfHandpart => "SF handpart",
            PhonologicalFeature::Uf => "UF",
        }
    }
}

impl fmt::Display for PhonologicalFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Total number of phonological values over the six features.
pub fn phonological_value_total() -> usize {
    PhonologicalFeature::ALL
        .iter()
        .map(|f| f.value_count())
        .sum()
}

/// Per-letter phonological assignment; `None` marks an unassigned feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonologicalValues {
    pub values: BTreeMap<PhonologicalFeature, Option<String>>,
}

impl PhonologicalValues {
    pub fn get(&self, feature: PhonologicalFeature) -> Option<&str> {
        self.values.get(&feature).and_then(|v| v.as_deref())
    }

    pub fn is_assigned(&self, feature: PhonologicalFeature) -> bool {
        self.get(feature).is_some()
    }

    pub fn unassigned(&self) -> Vec<PhonologicalFeature> {
        PhonologicalFeature::ALL
            .iter()
            .copied()
            .filter(|f| !self.is_assigned(*f))
            .collect()
    }
}

/// Partial letter-to-value assignments for the six phonological features.
///
/// The JSON form is `{"assignments": {"A": {"SF thumb": "unopposed", ...}}}`
/// using the exact value strings returned by [`PhonologicalFeature::values`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonologicalFeatureTable {
    assignments: BTreeMap<String, BTreeMap<PhonologicalFeature, String>>,
}

impl Default for PhonologicalFeatureTable {
    /// Only the assignments illustrated by the reference example images.
    fn default() -> Self {
        use PhonologicalFeature::*;
        let entries: [(PhonologicalFeature, &str, &str); 20] = [
            (SfPor, "radial", "A"),
            (SfPor, "ulnar", "D"),
            (SfPor, "radial/ulnar", "Y"),
            (SfJoints, "flexed:base", "D"),
            (SfJoints, "flexed:nonbase", "E"),
            (SfJoints, "flexed:base & nonbase", "R"),
            (SfJoints, "stacked", "K"),
            (SfJoints, "crossed", "V"),
            (SfJoints, "spread", "A"),
            (SfQuantity, "all", "F"),
            (SfQuantity, "one", "B"),
            (SfQuantity, "one > all", "H"),
            (SfQuantity, "all > one", "D"),
            (SfThumb, "unopposed", "A"),
            (SfThumb, "opposed", "C"),
            (SfHandpart, "base", "A"),
            (SfHandpart, "palm", "G"),
            (SfHandpart, "ulnar", "J"),
            (Uf, "open", "D"),
            (Uf, "closed", "A"),
        ];
        let mut assignments: BTreeMap<String, BTreeMap<PhonologicalFeature, String>> =
            BTreeMap::new();
        for (feature, value, letter) in entries {
            assignments
                .entry(letter.to_string())
                .or_default()
                .insert(feature, value.to_string());
        }
        PhonologicalFeatureTable { assignments }
    }
}

impl PhonologicalFeatureTable {
    pub fn empty() -> Self {
        PhonologicalFeatureTable {
            assignments: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: PhonologicalFeatureTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (letter, row) in &self.assignments {
            let b = letter.as_bytes();
            if b.len() != 1 || !b[0].is_ascii_uppercase() {
                return Err(Error::UnknownSymbol(letter.clone()));
            }
            for (feature, value) in row {
                if feature.value_index(value).is_none() {
                    return Err(Error::InvalidFeatureValue {
                        feature: feature.name().to_string(),
                        value: value.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn assign(
        &mut self,
        letter: char,
        feature: PhonologicalFeature,
        value: &str,
    ) -> Result<()> {
        if !letter.is_ascii_alphabetic() {
            return Err(Error::UnknownSymbol(letter.to_string()));
        }
        if feature.value_index(value).is_none() {
            return Err(Error::InvalidFeatureValue {
                feature: feature.name().to_string(),
                value: value.to_string(),
            });
        }
        self.assignments
            .entry(letter.to_ascii_uppercase().to_string())
            .or_default()
            .insert(feature, value.to_string());
        Ok(())
    }

    pub fn phonological_values(&self, letter: char) -> Result<PhonologicalValues> {
        if !letter.is_ascii_alphabetic() {
            return Err(Error::UnknownSymbol(letter.to_string()));
        }
        let key = letter.to_ascii_uppercase().to_string();
        let row = self.assignments.get(&key);
        let values = PhonologicalFeature::ALL
            .iter()
            .map(|f| (*f, row.and_then(|r| r.get(f).cloned())))
            .collect();
        Ok(PhonologicalValues { values })
    }

    /// Frame class for `feature` given a label index: boundary labels map to
    /// the silence value, unassigned letters to `None`.
    pub fn class_for_label(
        &self,
        alphabet: &LetterAlphabet,
        feature: PhonologicalFeature,
        label: usize,
    ) -> Option<usize> {
        if alphabet.is_boundary(label) {
            return Some(0);
        }
        let base = alphabet.base_letter(label)?;
        let letter = (b'A' + base as u8) as char;
        let values = self.phonological_values(letter).ok()?;
        values.get(feature).and_then(|v| feature.value_index(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Palm {
    #[serde(rename = "for")]
    Forward,
    #[serde(rename = "in")]
    In,
    #[serde(rename = "dwn")]
    Down,
}

/// One row of the numeric handshape table. Angles are in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneticRow {
    pub letter: &'static str,
    /// MCP and PIP angles for index, middle, ring and pinky, in that order.
    pub fingers: [[i32; 2]; 4],
    pub spread: i32,
    pub thumb_y: i32,
    pub thumb_z: i32,
    pub thumb_pip: i32,
    /// Finger the thumb touches (`i`, `m`, `r`, `p`, `m/i`, or `-` for none).
    pub touch: &'static str,
    pub palm: Palm,
}

const fn row(
    letter: &'static str,
    f: [i32; 8],
    spread: i32,
    thumb: [i32; 3],
    touch: &'static str,
    palm: Palm,
) -> PhoneticRow {
    PhoneticRow {
        letter,
        fingers: [[f[0], f[1]], [f[2], f[3]], [f[4], f[5]], [f[6], f[7]]],
        spread,
        thumb_y: thumb[0],
        thumb_z: thumb[1],
        thumb_pip: thumb[2],
        touch,
        palm,
    }
}

use Palm::{Down as DWN, Forward as FOR, In as IN};

static PHONETIC_ROWS: [PhoneticRow; 27] = [
    row(
        "a",
        [90, 90, 90, 90, 90, 90, 90, 90],
        0,
        [0, 90, 180],
        "i",
        FOR,
    ),
    row(
        "b",
        [180, 180, 180, 180, 180, 180, 180, 180],
        0,
        [-45, 90, 180],
        "r",
        FOR,
    ),
    row(
        "c",
        [180, 90, 180, 90, 180, 90, 180, 90],
        0,
        [0, 0, 135],
        "-",
        FOR,
    ),
    row(
        "d",
        [180, 180, 90, 135, 90, 90, 90, 90],
        0,
        [0, 45, 180],
        "m",
        FOR,
    ),
    row(
        "e",
        [135, 90, 135, 90, 135, 90, 135, 90],
        0,
        [-45, 0, 90],
        "r",
        FOR,
    ),
    row(
        "f",
        [90, 135, 180, 180, 180, 180, 180, 180],
        1,
        [0, 45, 180],
        "i",
        FOR,
    ),
    row(
        "g",
        [180, 180, 90, 90, 90, 90, 90, 90],
        0,
        [0, 90, 180],
        "m",
        IN,
    ),
    row(
        "h",
        [180, 180, 180, 180, 90, 90, 90, 90],
        0,
        [-45, 90, 180],
        "r",
        IN,
    ),
    row(
        "i",
        [90, 90, 90, 90, 90, 90, 180, 180],
        0,
        [-45, 90, 180],
        "r",
        FOR,
    ),
    row(
        "j",
        [90, 90, 90, 90, 90, 90, 180, 180],
        0,
        [-45, 90, 180],
        "r",
        DWN,
    ),
    row(
        "k",
        [180, 180, 90, 180, 90, 90, 90, 90],
        0,
        [0, 90, 180],
        "m",
        FOR,
    ),
    row(
        "l",
        [180, 180, 90, 90, 90, 90, 90, 90],
        0,
        [90, 0, 180],
        "-",
        FOR,
    ),
    row(
        "m",
        [90, 135, 90, 135, 90, 135, 90, 90],
        0,
        [-45, 90, 180],
        "p",
        FOR,
    ),
    row(
        "n",
        [90, 135, 90, 135, 90, 90, 90, 90],
        0,
        [-45, 90, 180],
        "r",
        FOR,
    ),
    row(
        "o",
        [135, 135, 135, 135, 135, 135, 135, 135],
        0,
        [-45, 0, 180],
        "m/i",
        FOR,
    ),
    row(
        "p",
        [180, 180, 90, 180, 90, 90, 90, 90],
        0,
        [0, 90, 180],
        "m",
        DWN,
    ),
    row(
        "q",
        [180, 180, 90, 90, 90, 90, 90, 90],
        0,
        [0, 90, 180],
        "m",
        DWN,
    ),
    row(
        "r",
        [180, 180, 180, 180, 90, 90, 90, 90],
        -1,
        [-45, 0, 180],
        "r",
        FOR,
    ),
    row(
        "s",
        [90, 90, 90, 90, 90, 90, 90, 90],
        0,
        [-45, 45, 180],
        "r",
        FOR,
    ),
    row(
        "t",
        [90, 135, 90, 90, 90, 90, 90, 90],
        0,
        [-45, 90, 180],
        "m",
        FOR,
    ),
    row(
        "u",
        [180, 180, 180, 180, 90, 90, 90, 90],
        0,
        [-45, 90, 180],
        "r",
        FOR,
    ),
    row(
        "v",
        [180, 180, 180, 180, 90, 90, 90, 90],
        1,
        [-45, 90, 180],
        "r",
        FOR,
    ),
    row(
        "w",
        [180, 180, 180, 180, 180, 180, 90, 90],
        1,
        [-45, 90, 180],
        "p",
        FOR,
    ),
    row(
        "x",
        [180, 135, 90, 90, 90, 90, 90, 90],
        0,
        [-45, 45, 180],
        "m",
        FOR,
    ),
    row(
        "y",
        [90, 90, 90, 90, 90, 90, 180, 180],
        1,
        [90, 0, 180],
        "-",
        FOR,
    ),
    row(
        "z",
        [180, 180, 90, 90, 90, 90, 90, 90],
        0,
        [0, 45, 180],
        "m",
        FOR,
    ),
    row(
        "zz",
        [180, 180, 180, 180, 90, 90, 90, 90],
        1,
        [0, 45, 180],
        "m",
        FOR,
    ),
];

/// Numeric joint-angle description of every letter handshape.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhoneticFeatureTable;

impl PhoneticFeatureTable {
    pub fn rows(&self) -> &'static [PhoneticRow] {
        &PHONETIC_ROWS
    }

    pub fn phonetic_values(&self, letter: &str) -> Result<&'static PhoneticRow> {
        let key = letter.to_ascii_lowercase();
        PHONETIC_ROWS
            .iter()
            .find(|r| r.letter == key)
            .ok_or_else(|| Error::UnknownSymbol(letter.to_string()))
    }

    /// Row used to render a label; doubled tokens without a row of their own
    /// fall back to their base letter.
    pub fn row_for_label(
        &self,
        alphabet: &LetterAlphabet,
        label: usize,
    ) -> Option<&'static PhoneticRow> {
        let symbol = alphabet.symbol(label).ok()?;
        if let Ok(r) = self.phonetic_values(&symbol) {
            return Some(r);
        }
        let base = alphabet.base_letter(label)?;
        self.phonetic_values(&((b'a' + base as u8) as char).to_string())
            .ok()
    }
}

/// Dimension of [`PhoneticRow::embed`].
pub const PHONETIC_EMBED_DIM: usize = 19;

impl PhoneticRow {
    /// Numeric embedding: finger and thumb angles in right angles, the spread
    /// flag, a touched-finger indicator and a one-hot palm orientation.
    pub fn embed(&self) -> [f64; PHONETIC_EMBED_DIM] {
        let mut v = [0.0; PHONETIC_EMBED_DIM];
        for (f, [mcp, pip]) in self.fingers.iter().enumerate() {
            v[2 * f] = *mcp as f64 / 90.0;
            v[2 * f + 1] = *pip as f64 / 90.0;
        }
        v[8] = self.spread as f64;
        v[9] = self.thumb_y as f64 / 90.0;
        v[10] = self.thumb_z as f64 / 90.0;
        v[11] = self.thumb_pip as f64 / 90.0;
        let fingers = ["i", "m", "r", "p"];
        for part in self.touch.split('/') {
            if let Some(k) = fingers.iter().position(|c| *c == part) {
                v[12 + k] = 1.0;
            }
        }
        let palm = match self.palm {
            Palm::Forward => 0,
            Palm::In => 1,
            Palm::Down => 2,
        };
        v[16 + palm] = 1.0;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letter_indices() {
        let a = LetterAlphabet::new();
        assert_eq!(a.letter_index("A").unwrap(), 0);
        assert_eq!(a.letter_index("</s>").unwrap(), 27);
        assert_eq!(a.letter_index("<s>").unwrap(), 26);
        assert_eq!(a.class_count(), 28);
        match a.letter_index("7") {
            Err(Error::UnknownSymbol(s)) => assert_eq!(s, "7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_symbol_round_trip() {
        let a = LetterAlphabet::with_doubled(&["ZZ"]).unwrap();
        for i in 0..a.class_count() {
            let s = a.symbol(i).unwrap();
            assert_eq!(a.letter_index(&s).unwrap(), i);
        }
        assert_eq!(a.letter_index("ZZ").unwrap(), 28);
        assert!(a.symbol(29).is_err());
    }

    #[test]
    fn tokenize_with_and_without_doubles() {
        let plain = LetterAlphabet::new();
        assert_eq!(plain.tokenize("IZZY").unwrap(), vec![8, 25, 25, 24]);
        let zz = LetterAlphabet::with_doubled(&["ZZ"]).unwrap();
        assert_eq!(zz.tokenize("IZZY").unwrap(), vec![8, 28, 24]);
        assert_eq!(zz.render(&[26, 8, 28, 24, 27]), "IZZY");
        assert!(matches!(
            plain.tokenize("A1"),
            Err(Error::InvalidWord { position: 1, .. })
        ));
    }

    #[test]
    fn phonological_value_counts() {
        assert_eq!(phonological_value_total(), 26);
        let counts: Vec<usize> = PhonologicalFeature::ALL
            .iter()
            .map(|f| f.value_count())
            .collect();
        assert_eq!(counts, vec![4, 7, 5, 3, 4, 3]);
    }

    #[test]
    fn appendix_assignments() {
        let t = PhonologicalFeatureTable::default();
        let c = t.phonological_values('C').unwrap();
        assert_eq!(c.get(PhonologicalFeature::SfThumb), Some("opposed"));
        let a = t.phonological_values('a').unwrap();
        assert_eq!(a.get(PhonologicalFeature::SfThumb), Some("unopposed"));
        assert_eq!(a.get(PhonologicalFeature::SfJoints), Some("spread"));
        assert_eq!(a.get(PhonologicalFeature::Uf), Some("closed"));
        assert_eq!(a.get(PhonologicalFeature::SfHandpart), Some("base"));
        assert_eq!(a.get(PhonologicalFeature::SfPor), Some("radial"));
        assert_eq!(a.get(PhonologicalFeature::SfQuantity), None);
        let q = t.phonological_values('Q').unwrap();
        assert_eq!(q.unassigned().len(), 6);
    }

    #[test]
    fn table_json_round_trip_and_validation() {
        let t = PhonologicalFeatureTable::default();
        let json = t.to_json().unwrap();
        assert!(json.contains("\"SF thumb\": \"opposed\""));
        assert_eq!(PhonologicalFeatureTable::from_json(&json).unwrap(), t);
        let bad = r#"{"assignments": {"A": {"UF": "half"}}}"#;
        assert!(matches!(
            PhonologicalFeatureTable::from_json(bad),
            Err(Error::InvalidFeatureValue { .. })
        ));
    }

    #[test]
    fn feature_classes_for_labels() {
        let a = LetterAlphabet::new();
        let t = PhonologicalFeatureTable::default();
        assert_eq!(t.class_for_label(&a, PhonologicalFeature::Uf, BOS), Some(0));
        assert_eq!(t.class_for_label(&a, PhonologicalFeature::Uf, 0), Some(2));
        assert_eq!(t.class_for_label(&a, PhonologicalFeature::Uf, 16), None);
    }

    #[test]
    fn phonetic_rows() {
        let t = PhoneticFeatureTable;
        assert_eq!(t.rows().len(), 27);
        let mut letters: Vec<&str> = t.rows().iter().map(|r| r.letter).collect();
        letters.sort();
        letters.dedup();
        assert_eq!(letters.len(), 27);

        let a = t.phonetic_values("a").unwrap();
        assert!(a.fingers.iter().all(|f| *f == [90, 90]));
        assert_eq!(
            (a.spread, a.thumb_y, a.thumb_z, a.thumb_pip),
            (0, 0, 90, 180)
        );
        assert_eq!((a.touch, a.palm), ("i", Palm::Forward));

        let b = t.phonetic_values("b").unwrap();
        assert!(b.fingers.iter().all(|f| *f == [180, 180]));
        assert_eq!((b.spread, b.thumb_y, b.thumb_z), (0, -45, 90));

        let w = t.phonetic_values("w").unwrap();
        assert_eq!(w.fingers[..3], [[180, 180]; 3]);
        assert_eq!(w.fingers[3], [90, 90]);
        assert_eq!(w.spread, 1);
        assert!(t.phonetic_values("ß").is_err());

        let allowed = [0, 45, 90, 135, 180, -45, -1, 1];
        for r in t.rows() {
            let mut vals: Vec<i32> = r.fingers.iter().flatten().copied().collect();
            vals.extend([r.spread, r.thumb_y, r.thumb_pip]);
            for v in vals {
                assert!(allowed.contains(&v), "{} has {}", r.letter, v);
            }
        }
    }

    #[test]
    fn letter_embeddings_are_distinct() {
        let t = PhoneticFeatureTable;
        let rows = t.rows();
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let d: f64 = rows[i]
                    .embed()
                    .iter()
                    .zip(rows[j].embed().iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!(d > 0.1, "{} vs {}", rows[i].letter, rows[j].letter);
            }
        }
    }
}
