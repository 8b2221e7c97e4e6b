use super::*;
use crate::corpus::{build_vocab, encode_line, CharVocab, EncodedLine, RawCorpus};
use crate::eval;
use crate::mslm::{ModelConfig, Mslm};
use crate::segmentation::Segmentation;

fn toy(lines: &[&str]) -> (CharVocab, Vec<EncodedLine>) {
    let raw = RawCorpus::new(lines.iter().map(|s| s.to_string()).collect(), "t").unwrap();
    let vocab = build_vocab(&raw).unwrap();
    let enc = raw.lines.iter().map(|l| encode_line(&vocab, l, true).unwrap()).collect();
    (vocab, enc)
}

fn small_config(steps: usize, every: usize) -> TrainConfig {
    TrainConfig {
        steps,
        warmup_steps: steps / 8,
        peak_lr: 3e-3,
        encoder_dropout: 0.0,
        other_dropout: 0.0,
        batch_size: 4,
        checkpoint_every: every,
        seed: 11,
        mode: TrainMode::Pretrain,
        clip_norm: 1.0,
    }
}

fn fresh<T: crate::Scalar>(vocab: &CharVocab, d: usize) -> Init<T> {
    Init::Fresh {
        model: Mslm::new(ModelConfig::tiny(vocab.len(), 1, d, 3), 5).unwrap(),
        vocab: vocab.clone(),
    }
}

const LINES: [&str; 6] = ["ab cab ca", "cab ab", "ca ca ab", "ab ab cab", "cab ca", "ab ca cab ab"];

#[test]
fn select_best_fixtures() {
    let rows = |v: &[f64]| -> Vec<MetricsRow> {
        v.iter()
            .enumerate()
            .map(|(i, &b)| MetricsRow {
                step: (i + 1) * 10,
                train_bpc: None,
                val_bpc: b,
                mcc: None,
            })
            .collect()
    };
    assert_eq!(select_best(&rows(&[3.0])).unwrap().step, 10);
    assert_eq!(select_best(&rows(&[2.0, 1.5, 1.7])).unwrap().step, 20);
    assert_eq!(select_best(&rows(&[1.5, 1.5])).unwrap().step, 10);
    assert_eq!(select_best(&rows(&[f64::NAN, 4.0])).unwrap().step, 20);
    assert!(select_best::<MetricsRow>(&[]).is_err());
}

#[test]
fn checkpoint_count_and_log() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: Some(&enc[..2]),
    };
    let out = train_run::<f32>(&small_config(512, 128), fresh(&vocab, 8), &data, Keep::All).unwrap();
    let steps: Vec<usize> = out.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![128, 256, 384, 512]);
    assert_eq!(out.log.len(), 5);
    assert_eq!(out.log[0].val_bpc, out.initial_val_bpc);
    assert!(out.log.iter().all(|r| r.mcc.is_some()));
    assert!(out.metrics_tsv().starts_with("step\ttrain_bpc\tval_bpc\tmcc\n0\t\t"));
    let best = out.best().unwrap();
    assert!(best.val_bpc < out.initial_val_bpc, "{} vs {}", best.val_bpc, out.initial_val_bpc);

    let kept = train_run::<f32>(&small_config(512, 128), fresh(&vocab, 8), &data, Keep::BestAndLast).unwrap();
    assert_eq!(kept.checkpoints.last().unwrap(), out.checkpoints.last().unwrap());
    assert_eq!(kept.best().unwrap(), best);
    assert!(kept.checkpoints.len() <= 2);
}

#[test]
fn repeating_alphabet_is_learned() {
    let line = "abcdefghijklmnopqrstuvwxyz";
    let lines: Vec<String> = (0..8).map(|i| format!("{}{}", &line[i..], &line[..i])).collect();
    let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
    let (vocab, enc) = toy(&refs);
    let data = TrainData {
        train: &enc[..6],
        val: &enc[6..],
        monitor: None,
    };
    let mut cfg = small_config(512, 128);
    cfg.batch_size = 2;
    let out = train_run::<f32>(&cfg, fresh(&vocab, 16), &data, Keep::All).unwrap();
    let last = out.checkpoints.last().unwrap().val_bpc;
    assert!(last < out.initial_val_bpc, "{last} vs {}", out.initial_val_bpc);
}

#[test]
fn runs_are_bit_identical() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: None,
    };
    let mut cfg = small_config(30, 10);
    cfg.encoder_dropout = 0.2;
    cfg.other_dropout = 0.1;
    let a = train_run::<f32>(&cfg, fresh(&vocab, 8), &data, Keep::All).unwrap();
    let b = train_run::<f32>(&cfg, fresh(&vocab, 8), &data, Keep::All).unwrap();
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(x.to_bytes(), y.to_bytes());
    }
    cfg.seed += 1;
    let c = train_run::<f32>(&cfg, fresh(&vocab, 8), &data, Keep::All).unwrap();
    assert_ne!(a.checkpoints[2].to_bytes(), c.checkpoints[2].to_bytes());
}

#[test]
fn checkpoint_round_trip() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..3],
        monitor: None,
    };
    let out = train_run::<f32>(&small_config(20, 20), fresh(&vocab, 8), &data, Keep::All).unwrap();
    let ck = &out.checkpoints[0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(&back, ck);
    let again = corpus_bpc(&back.model, data.val, 4).unwrap();
    assert!((again - ck.val_bpc).abs() < 1e-6);

    // a 32-bit file loads as 64-bit with identical values
    let wide = Checkpoint::<f64>::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(wide.model.params.tensors()[0].data()[0], ck.model.params.tensors()[0].data()[0] as f64);

    let mut bytes = ck.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
    assert!(Checkpoint::<f32>::from_bytes(b"seglm-ckpt v2\n").is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: None,
    };
    let mut cfg = small_config(24, 8);
    cfg.encoder_dropout = 0.1;
    let full = train_run::<f64>(&cfg, fresh(&vocab, 8), &data, Keep::All).unwrap();
    let mid = Checkpoint::<f64>::from_bytes(&full.checkpoints[0].to_bytes()).unwrap();
    let resumed = train_run::<f64>(&cfg, Init::From(mid), &data, Keep::All).unwrap();
    assert_eq!(resumed.checkpoints.len(), 2);
    for (a, b) in resumed.checkpoints.iter().zip(&full.checkpoints[1..]) {
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

#[test]
fn finetune_restarts() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: None,
    };
    let pre = train_run::<f32>(&small_config(16, 16), fresh(&vocab, 8), &data, Keep::All).unwrap();
    let parent = pre.checkpoints[0].clone();
    let mut cfg = small_config(8, 4);
    cfg.mode = TrainMode::Finetune;
    let ft = train_run::<f32>(&cfg, Init::From(parent.clone()), &data, Keep::All).unwrap();
    assert_eq!(ft.log[0].step, 0);
    assert_eq!(ft.checkpoints[0].step, 4);
    assert_eq!(ft.checkpoints[0].optimizer.as_ref().unwrap().t, 4);
    assert_eq!(ft.checkpoints[0].provenance.parent, parent.id());
    assert_eq!(ft.initial_val_bpc, parent.val_bpc);
}

#[test]
fn training_errors() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: None,
    };
    let (other, _) = toy(&["x"]);
    let err = train_run::<f32>(&small_config(4, 2), fresh(&other, 8), &data, Keep::All).unwrap_err();
    assert!(matches!(err, crate::Error::Data(_)), "{err}");

    let mut model = Mslm::<f32>::new(ModelConfig::tiny(vocab.len(), 1, 8, 3), 5).unwrap();
    model.params.tensors_mut()[2].data_mut()[0] = f32::NAN;
    let err = train_run(&small_config(4, 2), Init::Fresh { model, vocab }, &data, Keep::All).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite { step: 1 }), "{err}");
}

#[test]
fn monitor_delegates_to_eval() {
    let (vocab, enc) = toy(&LINES);
    let model = Mslm::<f32>::new(ModelConfig::tiny(vocab.len(), 1, 8, 3), 2).unwrap();
    let pred = segment_lines(&model, &enc, 4).unwrap();
    let gold: Vec<Segmentation> = enc.iter().map(|l| l.gold_segmentation().unwrap()).collect();
    let pb: Vec<_> = pred.iter().map(Segmentation::to_boundary_vector).collect();
    let gb: Vec<_> = gold.iter().map(Segmentation::to_boundary_vector).collect();
    assert_eq!(monitor_mcc(&model, &enc).unwrap(), eval::mcc(&pb, &gb).unwrap());
    assert_eq!(eval::mcc(&gb, &gb).unwrap(), 1.0);
    let (v2, plain) = {
        let raw = RawCorpus::new(vec!["abc".into()], "t").unwrap();
        let v = build_vocab(&raw).unwrap();
        let e = vec![encode_line(&v, "abc", false).unwrap()];
        (v, e)
    };
    let m2 = Mslm::<f32>::new(ModelConfig::tiny(v2.len(), 1, 8, 3), 2).unwrap();
    assert!(monitor_mcc(&m2, &plain).is_err());
}

#[test]
fn sweep_rows_and_failures() {
    let (vocab, enc) = toy(&LINES);
    let data = TrainData {
        train: &enc,
        val: &enc[..2],
        monitor: None,
    };
    let base = small_config(8, 4);
    let init = fresh::<f32>(&vocab, 8);
    let one = sweep(&SweepGrid::new(vec![3e-3], vec![0.0]).unwrap(), &base, &init, &data, None, 1).unwrap();
    let direct = train_run(&base, init.clone(), &data, Keep::All).unwrap();
    assert_eq!(one.best.as_ref().unwrap(), direct.best().unwrap());

    let grid = SweepGrid::new(vec![3e-3, -1.0], vec![0.0, 0.1]).unwrap();
    let rep = sweep(&grid, &base, &init, &data, Some(&enc), 3).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert!(rep.rows[..2].iter().all(|r| r.outcome.is_ok()));
    assert!(rep.rows[2..].iter().all(|r| r.outcome.is_err()));
    assert!(rep.winner.unwrap() < 2);
    let tsv = rep.tsv();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.lines().nth(3).unwrap().contains("failed"));
    let spread = rep.top4().unwrap();
    assert_eq!(spread.rows, 2);
    // parallel and sequential sweeps agree
    let seq = sweep(&grid, &base, &init, &data, Some(&enc), 1).unwrap();
    assert_eq!(seq.rows, rep.rows);
}

#[test]
fn spread_matches_hand_computation() {
    let row = |bpc: f64, f1: f64| SweepRow {
        learning_rate: 0.0,
        encoder_dropout: 0.0,
        outcome: Ok(SweepPoint {
            best_step: 1,
            best_val_bpc: bpc,
            f1: Some(f1),
        }),
    };
    let rep = SweepReport::<f32> {
        rows: vec![row(1.0, 0.30), row(2.0, 0.34), row(0.5, 0.36), row(1.5, 0.32), row(9.0, 0.0)],
        winner: Some(2),
        best: None,
    };
    let s = rep.top4().unwrap();
    assert_eq!(s.rows, 4);
    assert!((s.mean - 0.33).abs() < 1e-12);
    // deviations .03 .01 .01 .03 -> sample variance .002/3
    assert!((s.stdev - (0.002f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(s.to_string(), "33.0 ± 2.6 (7.8%)");
}

#[test]
fn ladder_is_nested() {
    let lines: Vec<String> = (0..50).map(|i| format!("line{i}")).collect();
    let c = RawCorpus::new(lines, "t").unwrap();
    let sets = size_ladder(&c, &[5, 10, 20, 50], 3).unwrap();
    for w in sets.windows(2) {
        assert!(w[0].lines.iter().all(|l| w[1].lines.contains(l)));
    }
    assert_eq!(sets[3], c);
    assert!(size_ladder(&c, &[10, 5], 3).is_err());
    assert!(size_ladder(&c, &[51], 3).is_err());
}
