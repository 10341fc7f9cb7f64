use advmt::data::{Corpus, CorpusConfig, SeedRange, Split};
use advmt::eval::{ablation_report, evaluate, HorizonSet};
use advmt::losses::LossWeights;
use advmt::model::EncoderModel;
use advmt::training::{fit, fit_with, latest_checkpoint, TrainConfig};

fn corpus(train: u64, test: u64) -> Corpus {
    Corpus::generate(&CorpusConfig {
        train_seeds: SeedRange { start: 0, end: train },
        test_seeds: SeedRange {
            start: 100,
            end: 100 + test,
        },
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        windows_per_epoch: Some(8),
        validation_windows: Some(4),
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_logs_and_weights() {
    let c = corpus(6, 2);
    let a = fit(&c, &short(2)).unwrap();
    let b = fit(&c, &short(2)).unwrap();
    assert_eq!(a.log.without_timing(), b.log.without_timing());
    assert_eq!(a.encoder.to_bytes(), b.encoder.to_bytes());
    assert_eq!(a.discriminator.to_bytes(), b.discriminator.to_bytes());

    let other = fit(&c, &TrainConfig { seed: 1, ..short(2) }).unwrap();
    assert_ne!(a.encoder.to_bytes(), other.encoder.to_bytes());
}

#[test]
fn two_hundred_steps_reduce_training_error() {
    let c = corpus(20, 1);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 2,
        windows_per_epoch: Some(40),
        validation_windows: Some(0),
        ..TrainConfig::default()
    };
    let out = fit(&c, &cfg).unwrap();
    let first = out.log.records[0].train.mpjpe;
    let tenth = out.log.records[9].train.mpjpe;
    assert!(tenth < first, "epoch 1 {first} mm, epoch 10 {tenth} mm");
}

#[test]
fn latest_checkpoint_evaluates_like_the_trained_model() {
    let c = corpus(6, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..short(3)
    };
    let out = fit_with(&c, &cfg, Some(dir.path()), |_| {}).unwrap();
    let path = latest_checkpoint(dir.path()).unwrap().unwrap();
    assert!(path.ends_with("encoder_epoch_0003.ckpt"));
    assert!(dir.path().join("encoder_epoch_0002.ckpt").exists());
    let loaded = EncoderModel::load(&path).unwrap();

    let windows = c.windows(Split::Test, 50, 25, 5).unwrap();
    let h = HorizonSet::default_at(25).unwrap();
    let fresh = evaluate(&out.encoder, &windows, &h).unwrap();
    let reloaded = evaluate(&loaded, &windows, &h).unwrap();
    assert_eq!(fresh, reloaded);

    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log, out.log.to_csv());
}

#[test]
fn ablation_pair_feeds_the_ablation_table() {
    let c = corpus(6, 2);
    let full = fit(&c, &short(1)).unwrap();
    let plain = fit(
        &c,
        &TrainConfig {
            loss_weights: LossWeights::MPJPE_ONLY,
            ..short(1)
        },
    )
    .unwrap();
    assert_eq!(full.log.horizons_ms, plain.log.horizons_ms);
    assert_eq!(plain.log.records[0].train.total.to_bits(), plain.log.records[0].train.mpjpe.to_bits());

    let windows = c.windows(Split::Test, 50, 25, 5).unwrap();
    let h = HorizonSet::default_at(25).unwrap();
    let runs = vec![
        ("mpjpe_only".to_owned(), evaluate(&plain.encoder, &windows, &h).unwrap()),
        ("full".to_owned(), evaluate(&full.encoder, &windows, &h).unwrap()),
    ];
    let table = ablation_report(&runs).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.horizons_ms, vec![160, 400, 560, 720, 880, 1000]);
    assert_eq!(table.to_csv().lines().count(), 1 + 2 * 6);
}
