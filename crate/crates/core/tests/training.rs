use btc_core::annotation::AnnotationTrack;
use btc_core::chord::{ChordLabel, VocabKind};
use btc_core::features::{synth_dataset, SynthConfig};
use btc_core::metrics::{wcsr, Comparator, ScoredPair};
use btc_core::net::{BtcConfig, BtcModel};
use btc_core::pipeline::transcribe;
use btc_core::tensor::Rng;
use btc_core::train::{fit, frame_accuracy, prepare_dataset, Song, TrainConfig};

fn songs(n: usize, seed: u64) -> Vec<Song> {
    let cfg = SynthConfig { songs: n, seed, ..SynthConfig::default() };
    synth_dataset(&cfg)
        .into_iter()
        .map(|(id, features, track)| Song { id, features, track })
        .collect()
}

fn small_model() -> BtcConfig {
    BtcConfig { n_layers: 2, n_heads: 4, model_dim: 64, ..BtcConfig::default() }
}

#[test]
fn first_epoch_cuts_the_loss_by_a_fifth() {
    let cfg = small_model();
    let data = prepare_dataset(&songs(200, 1), &cfg.vocabulary(), 0.2, cfg.seq_len).unwrap();
    let model = BtcModel::new(cfg, &mut Rng::seed_from(0)).unwrap();
    let train = TrainConfig { lr: 1e-3, max_epochs: 1, ..TrainConfig::default() };
    let (_, report) = fit(model, &data.train, &data.val, &train).unwrap();
    let losses = &report.epochs[0].batch_losses;
    let tail = &losses[losses.len() - 3..];
    let late = tail.iter().sum::<f64>() / tail.len() as f64;
    let uniform = 25f64.ln();
    assert!(losses[0] > 0.9 * uniform, "first batch {}", losses[0]);
    assert!(late <= 0.8 * uniform, "late batches average {late}, uniform {uniform}");
}

#[test]
fn frame_accuracy_matches_interval_scoring_on_the_same_predictions() {
    let cfg = BtcConfig { n_layers: 1, model_dim: 16, n_heads: 2, ..BtcConfig::default() };
    let all = songs(8, 4);
    let data = prepare_dataset(&all, &cfg.vocabulary(), 0.3, cfg.seq_len).unwrap();
    let model = BtcModel::new(cfg, &mut Rng::seed_from(1)).unwrap();
    let train = TrainConfig { lr: 3e-3, max_epochs: 2, ..TrainConfig::default() };
    let (model, _) = fit(model, &data.train, &data.val, &train).unwrap();
    let accuracy = frame_accuracy(&model, &data.val).unwrap();

    // Every synthetic frame is one whole frame of its reference, so the
    // duration-weighted score over N-inclusive frames equals frame accuracy.
    let vocab = model.config().vocabulary();
    let pairs: Vec<ScoredPair> = all
        .iter()
        .filter(|s| data.val_ids.contains(&s.id))
        .map(|s| {
            let estimate = transcribe(&model, &data.stats, &s.features).unwrap();
            let frames: Vec<ChordLabel> = (0..s.features.frames())
                .map(|t| s.track.label_at((t as f64 + 0.5) * s.features.frame_secs()).unwrap())
                .collect();
            let reference = AnnotationTrack::from_frames(&frames, s.features.frame_secs());
            assert!(frames.iter().all(|l| vocab.to_index(l).is_ok()));
            ScoredPair::new(&reference, &estimate)
        })
        .collect();
    let score = wcsr(&pairs, Comparator::MajMin).unwrap().score;
    assert!((score - 100.0 * accuracy).abs() < 1e-6, "wcsr {score} vs accuracy {accuracy}");
    assert_eq!(model.config().vocab, VocabKind::MajMin);
}
