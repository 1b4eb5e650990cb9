use std::collections::BTreeSet;

use audiopred::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint};
use audiopred::dsp::MelSpectrogram;
use audiopred::training::{build_manifest, train, write_loss_log, Manifest, Split, TrainConfig};
use audiopred::{Error, ModelConfig};

fn spec(id: &str, cols: usize, phase: usize) -> MelSpectrogram {
    let px = (0..128 * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            if (r + c + phase) % 16 < 3 {
                200.0
            } else {
                (r % 7) as f32 * 3.0
            }
        })
        .collect();
    MelSpectrogram::new(id, 128, cols, 512.0 / 44100.0, px).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        frame_width: 8,
        sequence_length: 3,
        sequences_per_clip: 2,
        batch_size: 2,
        epochs: 2,
        patience: 0,
        learning_rate: 1e-2,
        ..TrainConfig::tiny()
    }
}

fn corpus() -> (Vec<MelSpectrogram>, Vec<MelSpectrogram>) {
    let train: Vec<_> = (0..4).map(|i| spec(&format!("train{i}"), 14, i)).collect();
    let val: Vec<_> = (0..2).map(|i| spec(&format!("val{i}"), 14, 5 + i)).collect();
    (train, val)
}

#[test]
fn manifest_split_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        std::fs::write(dir.path().join(format!("clip{i:03}.wav")), b"").unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), b"").unwrap();
    let m = build_manifest(dir.path(), 0.1, 4).unwrap();
    assert_eq!((m.count(Split::Train), m.count(Split::Val)), (90, 10));
    assert_eq!(build_manifest(dir.path(), 0.1, 4).unwrap(), m);
    assert_ne!(build_manifest(dir.path(), 0.1, 5).unwrap(), m);
    let all = build_manifest(dir.path(), 0.0, 4).unwrap();
    assert_eq!(all.count(Split::Train), 100);
    assert!(m.entries.iter().all(|e| e.label == "clip"));

    let path = dir.path().join("manifest.csv");
    m.write(&path).unwrap();
    assert_eq!(Manifest::read(&path).unwrap(), m);
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(build_manifest(dir.path(), 0.1, 0), Err(Error::EmptyCorpus(_))));
}

#[test]
fn training_is_reproducible_and_val_never_backpropagates() {
    let (tr, va) = corpus();
    let cfg = small_cfg();
    let a = train(&tr, &va, &cfg).unwrap();
    let b = train(&tr, &va, &cfg).unwrap();
    let losses = |o: &audiopred::TrainOutcome| -> Vec<(f64, Option<f64>)> {
        o.log.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(encode_checkpoint(&a.best), encode_checkpoint(&b.best));
    assert_eq!(a.log.len(), 2);
    assert!(a.log.iter().all(|e| e.train_loss.is_finite() && e.val_loss.unwrap().is_finite()));

    for v in &va {
        assert_eq!(a.gradient_contributions[&v.clip_id], 0, "{} contributed gradients", v.clip_id);
    }
    let total: usize = tr.iter().map(|t| a.gradient_contributions[&t.clip_id]).sum();
    assert_eq!(total, 2 * tr.len() * cfg.sequences_per_clip);

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("loss.csv");
    write_loss_log(&log, &a.log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_loss,wall_seconds\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn worker_count_does_not_change_results() {
    let (tr, va) = corpus();
    let one = train(&tr, &va, &small_cfg()).unwrap();
    let three = train(&tr, &va, &TrainConfig { workers: 3, ..small_cfg() }).unwrap();
    assert_eq!(one.best.model, three.best.model);
    assert_eq!(one.log.len(), three.log.len());
    for (a, b) in one.log.iter().zip(&three.log) {
        assert_eq!((a.train_loss, a.val_loss), (b.train_loss, b.val_loss));
    }
}

#[test]
fn non_finite_pixels_are_rejected() {
    let (mut tr, va) = corpus();
    tr[1].pixels[100] = f32::NAN;
    assert!(matches!(train(&tr, &va, &small_cfg()), Err(Error::InvalidInput(_))));
}

#[test]
fn divergence_is_reported() {
    let (tr, va) = corpus();
    let cfg = TrainConfig {
        learning_rate: 1e38,
        epochs: 3,
        ..small_cfg()
    };
    match train(&tr, &va, &cfg) {
        Err(e) => {
            assert!(e.is_numeric_divergence(), "{e}");
            assert_eq!(e.code(), "divergence");
        }
        Ok(o) => panic!("expected divergence, got log {:?}", o.log),
    }
}

#[test]
fn short_clips_are_skipped() {
    let (mut tr, va) = corpus();
    tr.push(spec("short", 9, 0));
    let out = train(&tr, &va, &small_cfg()).unwrap();
    assert!(!out.gradient_contributions.contains_key("short"));
}

#[test]
fn checkpoint_reload_reproduces_forward_bytes() {
    let (tr, va) = corpus();
    let out = train(&tr, &va, &small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.pnck");
    save_checkpoint(&path, &out.best).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config_hash(), out.best.config_hash());
    assert_eq!(back.step(), out.best.step());
    assert_eq!(back.meta.get("train.seed").map(String::as_str), Some("0"));

    let frames: Vec<Vec<f32>> = (0..3).map(|k| spec("x", 8, k).pixels).collect();
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    let p1 = out.best.model.forward_sequence(&refs).unwrap();
    let p2 = back.model.forward_sequence(&refs).unwrap();
    let bytes = |v: &Vec<Vec<f32>>| v.iter().flatten().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
    assert_eq!(bytes(&p1.predictions), bytes(&p2.predictions));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));

    let desk = ModelConfig {
        width: 8,
        ..ModelConfig::desk()
    };
    match load_checkpoint_for(&path, &desk) {
        Err(Error::TensorShape { name, .. }) => assert!(name.starts_with("layer0.")),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn epochs_zero_gives_untrained_model() {
    let (tr, va) = corpus();
    let out = train(&tr, &va, &TrainConfig { epochs: 0, ..small_cfg() }).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best.step(), 0);
    let ids: BTreeSet<_> = out.gradient_contributions.keys().collect();
    assert!(ids.is_empty());
}
