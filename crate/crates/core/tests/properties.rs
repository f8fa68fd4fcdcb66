use btc_core::annotation::{AnnotationTrack, Interval};
use btc_core::chord::{parse_chord, ChordLabel, Quality, VocabKind, Vocabulary};
use btc_core::features::{pitch_shift, FeatureMatrix, N_BINS, SHIFT_LIMIT};
use btc_core::io::{
    decode_btcf, decode_checkpoint, encode_btcf, format_attention, format_lab, parse_attention,
    parse_kv, parse_lab, AttentionDump,
};
use btc_core::metrics::{wcsr, Comparator, ScoredPair};
use btc_core::net::{AttentionMap, Direction};
use btc_core::tensor::{softmax_rows, Tensor};
use btc_core::train::split_songs;
use proptest::collection::vec;
use proptest::prelude::*;

fn any_label() -> impl Strategy<Value = ChordLabel> {
    prop_oneof![
        Just(ChordLabel::NoChord),
        Just(ChordLabel::Unknown),
        (0i32..12, 0usize..14).prop_map(|(r, q)| ChordLabel::pitched(r, Quality::ALL[q])),
    ]
}

/// Contiguous or gapped tracks built from positive durations.
fn any_track() -> impl Strategy<Value = AnnotationTrack> {
    (0.0f64..5.0, vec((0.01f64..10.0, 0.0f64..1.0, any_label()), 1..30)).prop_map(|(start, parts)| {
        let mut t = start;
        let intervals = parts
            .into_iter()
            .map(|(len, gap, label)| {
                if gap > 0.8 {
                    t += gap;
                }
                let iv = Interval::new(t, t + len, label);
                t += len;
                iv
            })
            .collect();
        AnnotationTrack::new(intervals).unwrap()
    })
}

proptest! {
    #[test]
    fn chord_text_round_trips(label in any_label()) {
        prop_assert_eq!(parse_chord(&label.to_string()).unwrap(), label);
    }

    #[test]
    fn parse_chord_never_panics(text in "\\PC{0,12}") {
        let _ = parse_chord(&text);
    }

    #[test]
    fn vocabulary_indices_are_a_bijection(large in any::<bool>(), index in 0usize..170) {
        let vocab = Vocabulary::new(if large { VocabKind::Large } else { VocabKind::MajMin });
        if index < vocab.len() {
            let label = vocab.from_index(index).unwrap();
            prop_assert_eq!(vocab.to_index(&label).unwrap(), index);
        } else {
            prop_assert!(vocab.from_index(index).is_err());
        }
    }

    #[test]
    fn lab_round_trip_keeps_labels_and_microsecond_times(track in any_track()) {
        let text = format_lab(&track);
        let back = parse_lab(&text).unwrap();
        prop_assert_eq!(back.intervals().len(), track.intervals().len());
        for (a, b) in back.intervals().iter().zip(track.intervals()) {
            prop_assert_eq!(a.label, b.label);
            prop_assert!((a.start - b.start).abs() <= 5e-7);
            prop_assert!((a.end - b.end).abs() <= 5e-7);
        }
        prop_assert_eq!(format_lab(&back), text);
    }

    #[test]
    fn btcf_round_trip_is_bit_exact(frames in 1usize..6, seed in any::<u32>()) {
        let data: Vec<f32> = (0..frames * N_BINS)
            .map(|i| f32::from_bits((i as u32).wrapping_mul(2654435761) ^ seed) % 1e6)
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let m = FeatureMatrix::new(frames, data).unwrap();
        let back = decode_btcf(&encode_btcf(&m)).unwrap();
        prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn decoders_reject_garbage_without_panicking(bytes in vec(any::<u8>(), 0..256)) {
        let _ = decode_btcf(&bytes);
        let _ = decode_checkpoint(&bytes);
        if let Ok(text) = std::str::from_utf8(&bytes) {
            let _ = parse_lab(text);
            let _ = parse_attention(text);
            let _ = parse_kv(text);
        }
    }

    #[test]
    fn attention_dumps_round_trip(size in 1usize..8, logits in vec(-5.0f64..5.0, 64)) {
        let x = Tensor::new(&[size, size], logits[..size * size].to_vec()).unwrap();
        let probs = softmax_rows(&x).unwrap().data().iter().map(|v| *v as f32).collect();
        let dump = AttentionDump { layer: 3, dir: Direction::Forward, head: 2, map: AttentionMap { size, probs } };
        prop_assert_eq!(parse_attention(&format_attention(&dump)).unwrap(), dump);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..9, v in vec(-30.0f64..30.0, 40)) {
        let x = Tensor::new(&[rows, cols], v[..rows * cols].to_vec()).unwrap();
        let p = softmax_rows(&x).unwrap();
        for row in p.data().chunks(cols) {
            prop_assert!(row.iter().all(|q| (0.0..=1.0).contains(q)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wcsr_is_bounded_and_pieces_tile_the_reference(r in any_track(), e in any_track()) {
        let pair = ScoredPair::new(&r, &e);
        let span = r.end().unwrap() - r.start().unwrap();
        prop_assert!((pair.span() - span).abs() < 1e-9 * span.max(1.0));
        for comparator in Comparator::ALL {
            let (c, a) = pair.durations(comparator);
            prop_assert!(c <= a + 1e-12);
            if let Ok(score) = wcsr(std::slice::from_ref(&pair), comparator) {
                prop_assert!((0.0..=100.0).contains(&score.score));
            }
        }
    }

    #[test]
    fn pitch_shift_inverts_on_interior_bins(k in -SHIFT_LIMIT..=SHIFT_LIMIT, v in vec(0.0f32..4.0, N_BINS * 2)) {
        let m = FeatureMatrix::new(2, v).unwrap();
        let track = AnnotationTrack::empty();
        let (up, _) = pitch_shift(&m, &track, k).unwrap();
        let (back, _) = pitch_shift(&up, &track, -k).unwrap();
        let offset = 2 * k.unsigned_abs() as usize;
        let interior = if k >= 0 { 0..N_BINS - offset } else { offset..N_BINS };
        for t in 0..2 {
            prop_assert_eq!(&back.frame(t)[interior.clone()], &m.frame(t)[interior.clone()]);
        }
    }

    #[test]
    fn song_split_is_a_partition(n in 2usize..60, fraction in 0.05f64..0.95) {
        let ids: Vec<String> = (0..n).map(|i| format!("song_{i:04}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let (train, val) = split_songs(&refs, fraction);
        prop_assert!(!train.is_empty() && !val.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_songs(&refs, fraction), (train, val));
    }
}
