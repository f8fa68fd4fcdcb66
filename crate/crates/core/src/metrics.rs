//! Weighted chord symbol recall over annotation intervals.
//!
//! `WCSR = 100 · t_c / t_a`, where `t_a` is the duration whose reference label
//! the comparator can judge and `t_c` the part of it labeled correctly.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::annotation::AnnotationTrack;
use crate::chord::{ChordLabel, Quality, Triad, VocabKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("unknown comparator {0:?}")]
    UnknownComparator(String),
    #[error("no comparable duration for {0}")]
    NothingComparable(Comparator),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Root,
    Thirds,
    Triads,
    Sevenths,
    Tetrads,
    MajMin,
    Mirex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Correct,
    Incorrect,
    Excluded,
}

impl Comparator {
    /// Column order of the large-vocabulary report.
    pub const ALL: [Comparator; 7] = [
        Comparator::Root,
        Comparator::Thirds,
        Comparator::Triads,
        Comparator::Sevenths,
        Comparator::Tetrads,
        Comparator::MajMin,
        Comparator::Mirex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comparator::Root => "root",
            Comparator::Thirds => "thirds",
            Comparator::Triads => "triads",
            Comparator::Sevenths => "sevenths",
            Comparator::Tetrads => "tetrads",
            Comparator::MajMin => "majmin",
            Comparator::Mirex => "mirex",
        }
    }

    /// Column heading used in reports.
    pub fn title(self) -> &'static str {
        match self {
            Comparator::Root => "Root",
            Comparator::Thirds => "Thirds",
            Comparator::Triads => "Triads",
            Comparator::Sevenths => "Sevenths",
            Comparator::Tetrads => "Tetrads",
            Comparator::MajMin => "Maj-min",
            Comparator::Mirex => "MIREX",
        }
    }

    /// Metrics reported for a vocabulary.
    pub fn for_vocab(kind: VocabKind) -> &'static [Comparator] {
        match kind {
            VocabKind::MajMin => &[Comparator::Root, Comparator::MajMin],
            VocabKind::Large => &Comparator::ALL,
        }
    }

    /// Whether a reference label counts toward `t_a`.
    pub fn comparable(self, reference: &ChordLabel) -> bool {
        match reference {
            ChordLabel::Unknown => false,
            ChordLabel::NoChord => true,
            ChordLabel::Pitched { quality, .. } => match self {
                Comparator::Sevenths => matches!(
                    quality,
                    Quality::Maj | Quality::Min | Quality::Dom7 | Quality::Maj7 | Quality::Min7
                ),
                Comparator::MajMin => matches!(quality.triad(), Triad::Maj | Triad::Min),
                _ => true,
            },
        }
    }

    pub fn compare(self, reference: &ChordLabel, estimate: &ChordLabel) -> Outcome {
        if !self.comparable(reference) {
            return Outcome::Excluded;
        }
        let correct = match (reference, estimate) {
            (ChordLabel::NoChord, ChordLabel::NoChord) => true,
            (
                ChordLabel::Pitched { root: r, quality: q },
                ChordLabel::Pitched { root: er, quality: eq },
            ) => self.pitched_match(*r == *er, *q, *eq, reference, estimate),
            _ => false,
        };
        if correct {
            Outcome::Correct
        } else {
            Outcome::Incorrect
        }
    }

    fn pitched_match(
        self,
        same_root: bool,
        q: Quality,
        eq: Quality,
        reference: &ChordLabel,
        estimate: &ChordLabel,
    ) -> bool {
        match self {
            Comparator::Root => same_root,
            Comparator::Thirds => same_root && q.third() == eq.third(),
            Comparator::Triads | Comparator::MajMin => same_root && q.triad() == eq.triad(),
            Comparator::Sevenths => same_root && q == eq,
            Comparator::Tetrads => same_root && q.intervals() == eq.intervals(),
            Comparator::Mirex => {
                let shared = reference.pitch_mask().unwrap_or(0) & estimate.pitch_mask().unwrap_or(0);
                shared.count_ones() >= 3
            }
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Comparator {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        Comparator::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| MetricError::UnknownComparator(s.to_string()))
    }
}

/// Compares two labels under a comparator given by name.
pub fn compare(name: &str, reference: &ChordLabel, estimate: &ChordLabel) -> Result<Outcome> {
    Ok(name.parse::<Comparator>()?.compare(reference, estimate))
}

/// A stretch of time over which both tracks hold one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub duration: f64,
    pub reference: ChordLabel,
    pub estimate: ChordLabel,
}

/// Splits the reference span at every boundary of either track. Gaps in
/// either track inside the span read as no-chord; the estimate is clipped to
/// the reference span.
pub fn intersect_intervals(reference: &AnnotationTrack, estimate: &AnnotationTrack) -> Vec<Piece> {
    let (Some(start), Some(end)) = (reference.start(), reference.end()) else {
        return Vec::new();
    };
    let mut cuts: Vec<f64> = reference
        .intervals()
        .iter()
        .chain(estimate.intervals())
        .flat_map(|iv| [iv.start, iv.end])
        .filter(|t| *t > start && *t < end)
        .collect();
    cuts.push(start);
    cuts.push(end);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let label = |track: &AnnotationTrack, t: f64| track.label_at(t).unwrap_or(ChordLabel::NoChord);
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            Piece {
                duration: w[1] - w[0],
                reference: label(reference, mid),
                estimate: label(estimate, mid),
            }
        })
        .collect()
}

/// One reference/estimate pair, pre-split into pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pieces: Vec<Piece>,
}

impl ScoredPair {
    pub fn new(reference: &AnnotationTrack, estimate: &AnnotationTrack) -> Self {
        ScoredPair {
            pieces: intersect_intervals(reference, estimate),
        }
    }

    pub fn span(&self) -> f64 {
        self.pieces.iter().map(|p| p.duration).sum()
    }

    /// `(t_c, t_a)` under a comparator.
    pub fn durations(&self, comparator: Comparator) -> (f64, f64) {
        let (mut correct, mut comparable) = (0.0, 0.0);
        for p in &self.pieces {
            match comparator.compare(&p.reference, &p.estimate) {
                Outcome::Correct => {
                    correct += p.duration;
                    comparable += p.duration;
                }
                Outcome::Incorrect => comparable += p.duration,
                Outcome::Excluded => {}
            }
        }
        (correct, comparable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub comparator: Comparator,
    /// Percentage in `[0, 100]`.
    pub score: f64,
    pub t_c: f64,
    pub t_a: f64,
}

/// `100 · t_c / t_a`.
pub fn wcsr_from_durations(comparator: Comparator, t_c: f64, t_a: f64) -> Result<Score> {
    if t_a.is_nan() || t_a <= 0.0 {
        return Err(MetricError::NothingComparable(comparator));
    }
    Ok(Score {
        comparator,
        score: 100.0 * t_c / t_a,
        t_c,
        t_a,
    })
}

/// Durations pooled over every pair before dividing.
pub fn wcsr(pairs: &[ScoredPair], comparator: Comparator) -> Result<Score> {
    let (t_c, t_a) = pairs
        .iter()
        .map(|p| p.durations(comparator))
        .fold((0.0, 0.0), |(c, a), (pc, pa)| (c + pc, a + pa));
    wcsr_from_durations(comparator, t_c, t_a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub comparator: Comparator,
    /// `None` when nothing was comparable.
    pub score: Option<f64>,
    pub t_c: f64,
    pub t_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Every metric reported for the vocabulary, in column order.
pub fn report(pairs: &[ScoredPair], kind: VocabKind) -> Report {
    let rows = Comparator::for_vocab(kind)
        .iter()
        .map(|&comparator| match wcsr(pairs, comparator) {
            Ok(s) => ReportRow {
                comparator,
                score: Some(s.score),
                t_c: s.t_c,
                t_a: s.t_a,
            },
            Err(_) => ReportRow {
                comparator,
                score: None,
                t_c: 0.0,
                t_a: 0.0,
            },
        })
        .collect();
    Report { rows }
}

impl Report {
    pub fn get(&self, comparator: Comparator) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.comparator == comparator)
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>12} {:>12}\n", "metric", "score", "t_c", "t_a");
        for r in &self.rows {
            let score = r.score.map_or_else(|| "n/a".to_string(), |s| format!("{s:.2}"));
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>12.3} {:>12.3}",
                r.comparator.title(),
                score,
                r.t_c,
                r.t_a
            );
        }
        out
    }

    /// CSV with header `metric,score,t_c,t_a`; an undefined score is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,score,t_c,t_a\n");
        for r in &self.rows {
            let score = r.score.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.comparator.name(), score, r.t_c, r.t_a);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Interval;
    use crate::chord::parse_chord;

    fn c(s: &str) -> ChordLabel {
        parse_chord(s).unwrap()
    }

    fn track(items: &[(f64, f64, &str)]) -> AnnotationTrack {
        AnnotationTrack::new(items.iter().map(|(a, b, l)| Interval::new(*a, *b, c(l))).collect())
            .unwrap()
    }

    #[test]
    fn hand_split() {
        let r = track(&[(0.0, 10.0, "C")]);
        let e = track(&[(0.0, 5.0, "C"), (5.0, 10.0, "G")]);
        let pieces = intersect_intervals(&r, &e);
        assert_eq!(
            pieces,
            vec![
                Piece { duration: 5.0, reference: c("C"), estimate: c("C") },
                Piece { duration: 5.0, reference: c("C"), estimate: c("G") },
            ]
        );
        let same = intersect_intervals(&e, &e);
        assert_eq!(same.len(), 2);
        assert!(same.iter().all(|p| p.reference == p.estimate));
    }

    #[test]
    fn estimate_is_clipped_and_gaps_are_no_chord() {
        let r = track(&[(1.0, 3.0, "C"), (4.0, 5.0, "D")]);
        let e = track(&[(0.0, 2.0, "C"), (4.5, 9.0, "D")]);
        let pieces = intersect_intervals(&r, &e);
        let total: f64 = pieces.iter().map(|p| p.duration).sum();
        assert_eq!(total, 4.0);
        assert!(pieces.iter().any(|p| p.reference == ChordLabel::NoChord && p.duration == 1.0));
        assert!(pieces.iter().any(|p| p.reference == c("C") && p.estimate == ChordLabel::NoChord));
    }

    #[test]
    fn named_examples() {
        assert_eq!(compare("mirex", &c("G:maj"), &c("B:min")).unwrap(), Outcome::Incorrect);
        assert_eq!(compare("mirex", &c("A:maj"), &c("F#:min")).unwrap(), Outcome::Incorrect);
        assert_eq!(compare("root", &c("C:maj7"), &c("C:min")).unwrap(), Outcome::Correct);
        assert_eq!(compare("sevenths", &c("C:dim7"), &c("C:dim7")).unwrap(), Outcome::Excluded);
        assert!(matches!(compare("bogus", &c("C"), &c("C")), Err(MetricError::UnknownComparator(_))));
    }

    #[test]
    fn arithmetic_and_errors() {
        let s = wcsr_from_durations(Comparator::Root, 30.0, 40.0).unwrap();
        assert_eq!(s.score, 75.0);
        assert!(wcsr_from_durations(Comparator::Root, 0.0, 0.0).is_err());
        assert!(wcsr(&[], Comparator::Root).is_err());
    }

    #[test]
    fn perfect_and_empty_estimates() {
        let r = track(&[(0.0, 1.5, "C:maj7"), (1.5, 2.25, "A:min"), (2.25, 4.0, "N")]);
        let perfect = ScoredPair::new(&r, &r);
        for comp in Comparator::ALL {
            assert_eq!(wcsr(std::slice::from_ref(&perfect), comp).unwrap().score, 100.0);
        }
        let pitched = track(&[(0.0, 2.0, "C"), (2.0, 3.0, "E:min")]);
        let empty = ScoredPair::new(&pitched, &AnnotationTrack::empty());
        assert_eq!(wcsr(&[empty], Comparator::Root).unwrap().score, 0.0);
    }

    #[test]
    fn report_layout() {
        let r = track(&[(0.0, 2.0, "C"), (2.0, 3.0, "N")]);
        let pairs = [ScoredPair::new(&r, &r)];
        let small = report(&pairs, VocabKind::MajMin);
        let names: Vec<&str> = small.rows.iter().map(|r| r.comparator.title()).collect();
        assert_eq!(names, ["Root", "Maj-min"]);
        let large = report(&pairs, VocabKind::Large);
        let names: Vec<&str> = large.rows.iter().map(|r| r.comparator.title()).collect();
        assert_eq!(names, ["Root", "Thirds", "Triads", "Sevenths", "Tetrads", "Maj-min", "MIREX"]);
        let csv = small.to_csv();
        assert_eq!(csv.lines().next(), Some("metric,score,t_c,t_a"));
        assert_eq!(csv.lines().nth(1), Some("root,100,3,3"));
        assert!(small.to_table().contains("Maj-min"));
    }
}
