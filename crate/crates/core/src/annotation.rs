//! Time-stamped chord annotations for one song.

use thiserror::Error;

use crate::chord::ChordLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("interval {index} has start {start} >= end {end}")]
    EmptyInterval { index: usize, start: f64, end: f64 },
    #[error("interval {index} starts at {start} before the previous one ends at {previous_end}")]
    Overlap {
        index: usize,
        start: f64,
        previous_end: f64,
    },
    #[error("interval {index} has a non-finite or negative time")]
    BadTime { index: usize },
}

impl TrackError {
    /// Position of the offending interval.
    pub fn index(&self) -> usize {
        match self {
            TrackError::EmptyInterval { index, .. }
            | TrackError::Overlap { index, .. }
            | TrackError::BadTime { index } => *index,
        }
    }
}

/// Half-open interval `[start, end)` in seconds carrying one chord.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: ChordLabel,
}

impl Interval {
    pub fn new(start: f64, end: f64, label: ChordLabel) -> Self {
        Interval { start, end, label }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Time-ordered, non-overlapping chord intervals. Gaps are allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationTrack {
    intervals: Vec<Interval>,
}

impl AnnotationTrack {
    pub fn new(intervals: Vec<Interval>) -> Result<Self, TrackError> {
        for (index, iv) in intervals.iter().enumerate() {
            if !iv.start.is_finite() || !iv.end.is_finite() || iv.start < 0.0 {
                return Err(TrackError::BadTime { index });
            }
            if iv.start >= iv.end {
                return Err(TrackError::EmptyInterval {
                    index,
                    start: iv.start,
                    end: iv.end,
                });
            }
            if index > 0 && iv.start < intervals[index - 1].end {
                return Err(TrackError::Overlap {
                    index,
                    start: iv.start,
                    previous_end: intervals[index - 1].end,
                });
            }
        }
        Ok(AnnotationTrack { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.intervals.first().map(|iv| iv.start)
    }

    pub fn end(&self) -> Option<f64> {
        self.intervals.last().map(|iv| iv.end)
    }

    /// Label at time `t`, if some interval covers it.
    pub fn label_at(&self, t: f64) -> Option<ChordLabel> {
        let idx = self.intervals.partition_point(|iv| iv.end <= t);
        self.intervals
            .get(idx)
            .filter(|iv| iv.contains(t))
            .map(|iv| iv.label)
    }

    pub fn transpose(&self, semitones: i32) -> Self {
        AnnotationTrack {
            intervals: self
                .intervals
                .iter()
                .map(|iv| Interval::new(iv.start, iv.end, iv.label.transpose(semitones)))
                .collect(),
        }
    }

    /// Builds a track from per-frame labels, merging runs of equal labels.
    /// Frame `i` spans `[i·frame_secs, (i+1)·frame_secs)`.
    pub fn from_frames(labels: &[ChordLabel], frame_secs: f64) -> Self {
        let mut intervals: Vec<Interval> = Vec::new();
        let mut run_start = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[run_start] {
                intervals.push(Interval::new(
                    run_start as f64 * frame_secs,
                    i as f64 * frame_secs,
                    labels[run_start],
                ));
                run_start = i;
            }
        }
        AnnotationTrack { intervals }
    }
}
