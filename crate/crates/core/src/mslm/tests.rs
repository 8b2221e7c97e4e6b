use super::*;
use crate::corpus::{build_vocab, encode_line, RawCorpus};
use crate::segmentation::Segmentation;

fn tiny64(v: usize, layers: usize, k: usize) -> Mslm<f64> {
    Mslm::new(ModelConfig::tiny(v, layers, 8, k), 3).unwrap()
}

#[test]
fn encodings_are_blind_to_the_masked_span() {
    let k = 3;
    let m = tiny64(20, 2, k);
    let line: Vec<usize> = (0..12).map(|i| 6 + (i * 5) % 14).collect();
    let base = m.encode(&line, Mode::Eval).unwrap();
    let d = m.config.hidden;
    for i in 0..line.len() {
        let mut other = line.clone();
        for j in i..(i + k).min(line.len()) {
            other[j] = 6 + (other[j] + 7) % 14;
        }
        let h = m.encode(&other, Mode::Eval).unwrap();
        assert_eq!(base.row(i), h.row(i), "row {i}");
        let _ = d;
    }
    // outside the window the encoding does change
    let mut other = line.clone();
    other[5] = 6 + (other[5] + 1) % 14;
    let h = m.encode(&other, Mode::Eval).unwrap();
    assert_ne!(base.row(1), h.row(1));
}

#[test]
fn f32_blindness() {
    let m = Mslm::<f32>::new(ModelConfig::tiny(20, 2, 8, 2), 1).unwrap();
    let line = vec![7, 8, 9, 10, 11, 12, 13];
    let base = m.encode(&line, Mode::Eval).unwrap();
    let mut other = line.clone();
    other[3] = 19;
    other[4] = 18;
    let h = m.encode(&other, Mode::Eval).unwrap();
    for (a, b) in base.row(3).iter().zip(h.row(3)) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn batching_does_not_change_scores() {
    let m = tiny64(16, 2, 3);
    let a = vec![6, 7, 8, 9, 10];
    let b = vec![11, 12, 13, 14, 15, 6, 7, 8];
    let both = m.score_batch(&[&a, &b]).unwrap();
    assert_eq!(both[0], m.score_edges(&a).unwrap());
    assert_eq!(both[1], m.score_edges(&b).unwrap());
}

#[test]
fn edges_are_log_probabilities() {
    let m = tiny64(16, 1, 3);
    let lat = m.score_edges(&[6, 7, 8, 9, 10]).unwrap();
    assert_eq!(lat.num_edges(), 12);
    for i in 0..5 {
        for l in 1..=3 {
            if let Some(e) = lat.get(i, l) {
                assert!(e.is_finite() && e <= 0.0, "({i},{l}) = {e}");
            }
        }
    }
    // marginal over segmentations of a line is a log-probability too
    assert!(lat.marginal_logprob() < 0.0);
}

#[test]
fn loss_matches_lattice_marginals() {
    let m = tiny64(16, 1, 3);
    let a = vec![6, 7, 8, 9];
    let b = vec![10, 11, 12, 13, 14, 15];
    let loss = m.batch_loss(&[&a, &b], Mode::Eval).unwrap();
    let lats = m.score_batch(&[&a, &b]).unwrap();
    let total: f64 = lats.iter().map(|l| l.marginal_logprob()).sum();
    assert!((loss.total_log_marginal - total).abs() < 1e-10);
    assert!((loss.loss + total / 2.0).abs() < 1e-10);
    assert_eq!(loss.total_chars, 10);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut m = Mslm::<f64>::new(ModelConfig::tiny(12, 2, 4, 2), 9).unwrap();
    let lines: [&[usize]; 2] = [&[6, 7, 8, 9, 10], &[11, 6, 7]];
    let (_, grads) = m.loss_and_grad(&lines, Mode::Eval).unwrap();
    let eps = 1e-5;
    for p in 0..m.params.tensors().len() {
        for idx in [0, m.params.tensors()[p].len() / 2] {
            let orig = m.params.tensors()[p].data()[idx];
            m.params.tensors_mut()[p].data_mut()[idx] = orig + eps;
            let up = m.batch_loss(&lines, Mode::Eval).unwrap().loss;
            m.params.tensors_mut()[p].data_mut()[idx] = orig - eps;
            let down = m.batch_loss(&lines, Mode::Eval).unwrap().loss;
            m.params.tensors_mut()[p].data_mut()[idx] = orig;
            let num = (up - down) / (2.0 * eps);
            let an = grads[p].data()[idx];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "{} [{idx}]: {an} vs {num}", m.params.names()[p]);
        }
    }
}

#[test]
fn dropout_is_seeded() {
    let mut c = ModelConfig::tiny(16, 1, 8, 3);
    c.dropout_encoder = 0.3;
    c.dropout_embedding = 0.1;
    c.dropout_decoder = 0.1;
    let m = Mslm::<f64>::new(c, 0).unwrap();
    let lines: [&[usize]; 1] = [&[6, 7, 8, 9, 10, 11]];
    let a = m.batch_loss(&lines, Mode::Train { seed: 4 }).unwrap();
    assert_eq!(a, m.batch_loss(&lines, Mode::Train { seed: 4 }).unwrap());
    assert_ne!(a, m.batch_loss(&lines, Mode::Train { seed: 5 }).unwrap());
    assert_ne!(a, m.batch_loss(&lines, Mode::Eval).unwrap());
}

#[test]
fn rejects_bad_input() {
    let m = tiny64(16, 1, 3);
    assert!(m.score_edges(&[]).is_err());
    assert!(m.score_edges(&[6, 99]).is_err());
    let long = vec![6; 600];
    assert!(m.score_edges(&long).is_err());
}

#[test]
fn segment_line_keeps_characters() {
    let corpus = RawCorpus::new(vec!["abc de".into(), "fgh".into()], "txt").unwrap();
    let vocab = build_vocab(&corpus).unwrap();
    let m = Mslm::<f32>::new(ModelConfig::tiny(vocab.len(), 1, 8, 3), 0).unwrap();
    let out = m.segment_line(&vocab, "ab cdez  fg").unwrap();
    assert_eq!(out.replace(' ', ""), "abcdezfg");
    assert!(!out.contains("  ") && !out.starts_with(' ') && !out.ends_with(' '));
    for piece in out.split(' ') {
        assert!((1..=3).contains(&piece.chars().count()));
    }
}

#[test]
fn extend_vocab_keeps_old_rows() {
    let mut m = tiny64(12, 1, 2);
    let old = m.params.get("embed").unwrap().clone();
    m.extend_vocab(15, 1).unwrap();
    let new = m.params.get("embed").unwrap();
    assert_eq!(new.shape(), &[15, 8]);
    assert_eq!(&new.data()[..old.len()], old.data());
    assert!(m.score_edges(&[13, 14, 6]).is_ok());
    assert!(m.extend_vocab(10, 0).is_err());
}

#[test]
fn oracle_lattice_recovers_gold() {
    let gold = "k in ch'aw r uk' le nu nan";
    let (chars, seg) = Segmentation::parse(gold);
    let ends: std::collections::HashSet<(usize, usize)> = seg.spans().collect();
    let lat = EdgeLattice::<f64>::from_fn(chars.len(), 10, |i, l| {
        if ends.contains(&(i, i + l)) {
            -1.0
        } else {
            -20.0
        }
    })
    .unwrap();
    let (best, _) = lat.viterbi();
    assert_eq!(best.render(&chars), gold);
    let _ = encode_line;
}

#[test]
fn longer_segments_never_lower_the_marginal() {
    let m = tiny64(16, 2, 4);
    let lat = m.score_edges(&[6, 7, 8, 9, 10, 11, 12]).unwrap();
    let z: Vec<f64> = (1..=4).map(|j| lat.truncate(j).unwrap().marginal_logprob()).collect();
    assert!(z.windows(2).all(|w| w[0] <= w[1]), "{z:?}");
}
