//! Chord symbol algebra: parsing, pitch-class sets, transposition and the
//! two label vocabularies.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChordError {
    #[error("cannot parse chord symbol {0:?}")]
    Parse(String),
    #[error("chord {0} has no pitch content")]
    NotPitched(ChordLabel),
    #[error("chord {label} is not representable in the {vocab} vocabulary")]
    NotInVocabulary { label: ChordLabel, vocab: VocabKind },
    #[error("index {index} out of range for the {vocab} vocabulary ({len} labels)")]
    IndexOutOfRange {
        index: usize,
        vocab: VocabKind,
        len: usize,
    },
    #[error("unknown vocabulary {0:?} (expected majmin or large)")]
    UnknownVocabulary(String),
}

/// Pitch class 0-11 with C = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PitchClass(u8);

const NOTE_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

impl PitchClass {
    pub fn new(pc: i32) -> Self {
        PitchClass(pc.rem_euclid(12) as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::new(self.0 as i32 + semitones)
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(NOTE_NAMES[self.0 as usize])
    }
}

/// The fourteen chord qualities of the large vocabulary, in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quality {
    Min,
    Maj,
    Dim,
    Aug,
    Min6,
    Maj6,
    Min7,
    MinMaj7,
    Maj7,
    Dom7,
    Dim7,
    HalfDim7,
    Sus2,
    Sus4,
}

/// Triad family a quality reduces to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Triad {
    Maj,
    Min,
    Dim,
    Aug,
    Sus2,
    Sus4,
}

impl Quality {
    pub const ALL: [Quality; 14] = [
        Quality::Min,
        Quality::Maj,
        Quality::Dim,
        Quality::Aug,
        Quality::Min6,
        Quality::Maj6,
        Quality::Min7,
        Quality::MinMaj7,
        Quality::Maj7,
        Quality::Dom7,
        Quality::Dim7,
        Quality::HalfDim7,
        Quality::Sus2,
        Quality::Sus4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quality::Min => "min",
            Quality::Maj => "maj",
            Quality::Dim => "dim",
            Quality::Aug => "aug",
            Quality::Min6 => "min6",
            Quality::Maj6 => "maj6",
            Quality::Min7 => "min7",
            Quality::MinMaj7 => "minmaj7",
            Quality::Maj7 => "maj7",
            Quality::Dom7 => "7",
            Quality::Dim7 => "dim7",
            Quality::HalfDim7 => "hdim7",
            Quality::Sus2 => "sus2",
            Quality::Sus4 => "sus4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.name() == name)
    }

    /// Semitone intervals above the root.
    pub fn intervals(self) -> &'static [u8] {
        match self {
            Quality::Maj => &[0, 4, 7],
            Quality::Min => &[0, 3, 7],
            Quality::Dim => &[0, 3, 6],
            Quality::Aug => &[0, 4, 8],
            Quality::Sus2 => &[0, 2, 7],
            Quality::Sus4 => &[0, 5, 7],
            Quality::Maj6 => &[0, 4, 7, 9],
            Quality::Min6 => &[0, 3, 7, 9],
            Quality::Dom7 => &[0, 4, 7, 10],
            Quality::Maj7 => &[0, 4, 7, 11],
            Quality::Min7 => &[0, 3, 7, 10],
            Quality::MinMaj7 => &[0, 3, 7, 11],
            Quality::Dim7 => &[0, 3, 6, 9],
            Quality::HalfDim7 => &[0, 3, 6, 10],
        }
    }

    /// Third above the root: `Some(3)`, `Some(4)` or `None` for sus chords.
    pub fn third(self) -> Option<u8> {
        self.intervals().iter().copied().find(|i| *i == 3 || *i == 4)
    }

    pub fn triad(self) -> Triad {
        match self {
            Quality::Maj | Quality::Maj6 | Quality::Dom7 | Quality::Maj7 => Triad::Maj,
            Quality::Min | Quality::Min6 | Quality::Min7 | Quality::MinMaj7 => Triad::Min,
            Quality::Dim | Quality::Dim7 | Quality::HalfDim7 => Triad::Dim,
            Quality::Aug => Triad::Aug,
            Quality::Sus2 => Triad::Sus2,
            Quality::Sus4 => Triad::Sus4,
        }
    }

    /// Maj/min reduction through the third and perfect fifth; `None` for
    /// qualities without such a triad.
    pub fn majmin(self) -> Option<Quality> {
        let iv = self.intervals();
        match (iv.contains(&4), iv.contains(&3), iv.contains(&7)) {
            (true, _, true) => Some(Quality::Maj),
            (_, true, true) => Some(Quality::Min),
            _ => None,
        }
    }
}

/// A chord symbol: pitched, "N" (no chord) or "X" (unknown).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChordLabel {
    Pitched { root: PitchClass, quality: Quality },
    NoChord,
    Unknown,
}

impl ChordLabel {
    pub fn pitched(root: i32, quality: Quality) -> Self {
        ChordLabel::Pitched {
            root: PitchClass::new(root),
            quality,
        }
    }

    pub fn root(&self) -> Option<PitchClass> {
        match self {
            ChordLabel::Pitched { root, .. } => Some(*root),
            _ => None,
        }
    }

    pub fn quality(&self) -> Option<Quality> {
        match self {
            ChordLabel::Pitched { quality, .. } => Some(*quality),
            _ => None,
        }
    }

    pub fn is_pitched(&self) -> bool {
        matches!(self, ChordLabel::Pitched { .. })
    }

    /// Pitch classes sounded by the chord, as a 12-bit mask (bit `pc`).
    pub fn pitch_mask(&self) -> Result<u16, ChordError> {
        match self {
            ChordLabel::Pitched { root, quality } => Ok(quality
                .intervals()
                .iter()
                .fold(0u16, |m, i| m | 1 << root.transpose(*i as i32).value())),
            other => Err(ChordError::NotPitched(*other)),
        }
    }

    /// Pitch classes sounded by the chord, ascending.
    pub fn pitch_class_set(&self) -> Result<Vec<u8>, ChordError> {
        let mask = self.pitch_mask()?;
        Ok((0..12).filter(|pc| mask & (1 << pc) != 0).collect())
    }

    pub fn transpose(&self, semitones: i32) -> Self {
        match self {
            ChordLabel::Pitched { root, quality } => ChordLabel::Pitched {
                root: root.transpose(semitones),
                quality: *quality,
            },
            other => *other,
        }
    }
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordLabel::Pitched { root, quality } => write!(f, "{root}:{}", quality.name()),
            ChordLabel::NoChord => f.write_str("N"),
            ChordLabel::Unknown => f.write_str("X"),
        }
    }
}

impl FromStr for ChordLabel {
    type Err = ChordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_chord(s)
    }
}

/// Parses `ROOT[:QUALITY][/BASS]`.
///
/// Accidentals `#`/`b` may repeat. A missing quality means `maj`; the bass is
/// validated and discarded. Qualities outside the fourteen known ones parse
/// to [`ChordLabel::Unknown`].
pub fn parse_chord(text: &str) -> Result<ChordLabel, ChordError> {
    let err = || ChordError::Parse(text.to_string());
    let s = text.trim();
    match s {
        "" => return Err(err()),
        "N" => return Ok(ChordLabel::NoChord),
        "X" => return Ok(ChordLabel::Unknown),
        _ => {}
    }
    let (body, bass) = match s.split_once('/') {
        Some((b, bass)) => (b, Some(bass)),
        None => (s, None),
    };
    if let Some(bass) = bass {
        if bass.is_empty() || bass.contains('/') {
            return Err(err());
        }
    }
    let (root_text, quality_text) = match body.split_once(':') {
        Some((r, q)) => (r, Some(q)),
        None => (body, None),
    };
    let root = parse_root(root_text).ok_or_else(err)?;
    let quality = match quality_text {
        None => Some(Quality::Maj),
        Some("") => return Err(err()),
        Some(q) => Quality::from_name(q),
    };
    Ok(match quality {
        Some(quality) => ChordLabel::Pitched { root, quality },
        None => ChordLabel::Unknown,
    })
}

fn parse_root(text: &str) -> Option<PitchClass> {
    let mut chars = text.chars();
    let base = match chars.next()? {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut offset = 0i32;
    for c in chars {
        match c {
            '#' => offset += 1,
            'b' => offset -= 1,
            _ => return None,
        }
    }
    Some(PitchClass::new(base + offset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabKind {
    MajMin,
    Large,
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabKind::MajMin => "majmin",
            VocabKind::Large => "large",
        })
    }
}

impl FromStr for VocabKind {
    type Err = ChordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majmin" => Ok(VocabKind::MajMin),
            "large" => Ok(VocabKind::Large),
            other => Err(ChordError::UnknownVocabulary(other.to_string())),
        }
    }
}

/// Ordered label set with a bijection to `0..len`.
///
/// Maj-min: index `2·root + {0: maj, 1: min}`, then N at 24.
/// Large: index `14·root + quality`, then X at 168 and N at 169.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocabulary {
    kind: VocabKind,
}

impl Vocabulary {
    pub const MAJMIN_LEN: usize = 25;
    pub const LARGE_LEN: usize = 170;

    pub fn new(kind: VocabKind) -> Self {
        Vocabulary { kind }
    }

    pub fn majmin() -> Self {
        Self::new(VocabKind::MajMin)
    }

    pub fn large() -> Self {
        Self::new(VocabKind::Large)
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        match self.kind {
            VocabKind::MajMin => Self::MAJMIN_LEN,
            VocabKind::Large => Self::LARGE_LEN,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn no_chord_index(&self) -> usize {
        self.len() - 1
    }

    pub fn labels(&self) -> Vec<ChordLabel> {
        (0..self.len())
            .map(|i| self.from_index(i).expect("in range"))
            .collect()
    }

    /// Entries with pitch content, in index order.
    pub fn pitched_labels(&self) -> Vec<ChordLabel> {
        self.labels().into_iter().filter(|l| l.is_pitched()).collect()
    }

    /// The vocabulary's representative of `label`.
    ///
    /// Under maj-min, qualities reduce through third and fifth; those without a
    /// maj/min triad become [`ChordLabel::Unknown`], which the maj-min
    /// vocabulary cannot index.
    pub fn canonical(&self, label: &ChordLabel) -> ChordLabel {
        match (self.kind, label) {
            (VocabKind::MajMin, ChordLabel::Pitched { root, quality }) => match quality.majmin() {
                Some(q) => ChordLabel::Pitched {
                    root: *root,
                    quality: q,
                },
                None => ChordLabel::Unknown,
            },
            _ => *label,
        }
    }

    pub fn to_index(&self, label: &ChordLabel) -> Result<usize, ChordError> {
        let canonical = self.canonical(label);
        match (self.kind, canonical) {
            (VocabKind::MajMin, ChordLabel::Pitched { root, quality }) => {
                let offset = usize::from(quality == Quality::Min);
                Ok(root.value() as usize * 2 + offset)
            }
            (VocabKind::Large, ChordLabel::Pitched { root, quality }) => {
                let q = Quality::ALL
                    .iter()
                    .position(|x| *x == quality)
                    .expect("all qualities listed");
                Ok(root.value() as usize * 14 + q)
            }
            (_, ChordLabel::NoChord) => Ok(self.no_chord_index()),
            (VocabKind::Large, ChordLabel::Unknown) => Ok(168),
            (VocabKind::MajMin, ChordLabel::Unknown) => Err(ChordError::NotInVocabulary {
                label: *label,
                vocab: self.kind,
            }),
        }
    }

    pub fn from_index(&self, index: usize) -> Result<ChordLabel, ChordError> {
        if index >= self.len() {
            return Err(ChordError::IndexOutOfRange {
                index,
                vocab: self.kind,
                len: self.len(),
            });
        }
        Ok(match self.kind {
            VocabKind::MajMin if index == 24 => ChordLabel::NoChord,
            VocabKind::MajMin => {
                let quality = if index.is_multiple_of(2) { Quality::Maj } else { Quality::Min };
                ChordLabel::pitched((index / 2) as i32, quality)
            }
            VocabKind::Large if index == 168 => ChordLabel::Unknown,
            VocabKind::Large if index == 169 => ChordLabel::NoChord,
            VocabKind::Large => ChordLabel::pitched((index / 14) as i32, Quality::ALL[index % 14]),
        })
    }

    /// Transposes an index through its label; no-chord and unknown are fixed.
    pub fn transpose_index(&self, index: usize, semitones: i32) -> Result<usize, ChordError> {
        self.to_index(&self.from_index(index)?.transpose(semitones))
    }
}
