use super::*;
use crate::numerics::{gradient_check, GradCheckConfig};

const V_SRC: usize = 9;
const V_TGT: usize = 11;

fn config(unit: Unit, attention: AttentionKind) -> ModelConfig {
    ModelConfig::new(unit, attention, V_SRC, V_TGT).with_sizes(6, 5)
}

fn variants() -> Vec<(Unit, AttentionKind)> {
    Unit::ALL
        .into_iter()
        .flat_map(|u| [(u, AttentionKind::None), (u, AttentionKind::Multiplicative)])
        .collect()
}

#[test]
fn zero_srn_cell_outputs_zero() {
    let m = Seq2Seq::zeros(config(Unit::Srn, AttentionKind::None)).unwrap();
    let s = CellState { h: vec![0.3, -0.2, 0.9, 0.1, 0.0, 1.0], c: None };
    let out = m.cell_step(Side::Encoder, &[1.0, 2.0, -3.0, 0.5, 0.25], &s).unwrap();
    assert!(out.h.iter().all(|&x| x == 0.0));
}

#[test]
fn zero_gru_cell_halves_state() {
    let m = Seq2Seq::zeros(config(Unit::Gru, AttentionKind::None)).unwrap();
    let v = vec![0.3, -0.2, 0.9, 0.1, 0.0, 1.0];
    let out = m
        .cell_step(Side::Decoder, &[1.0; 5], &CellState { h: v.clone(), c: None })
        .unwrap();
    for (a, b) in out.h.iter().zip(&v) {
        assert!((a - 0.5 * b).abs() < 1e-15);
    }
}

#[test]
fn zero_lstm_cell() {
    let m = Seq2Seq::zeros(config(Unit::Lstm, AttentionKind::None)).unwrap();
    let v = vec![0.3, -0.2, 0.9, 0.1, 0.0, 1.0];
    let out = m
        .cell_step(Side::Encoder, &[0.7; 5], &CellState { h: vec![0.4; 6], c: Some(v.clone()) })
        .unwrap();
    let c = out.c.unwrap();
    for j in 0..6 {
        assert!((c[j] - 0.5 * v[j]).abs() < 1e-15);
        assert!((out.h[j] - 0.5 * (0.5 * v[j]).tanh()).abs() < 1e-15);
    }
}

#[test]
fn cell_step_rejects_bad_shapes() {
    let m = Seq2Seq::zeros(config(Unit::Lstm, AttentionKind::None)).unwrap();
    let no_c = CellState { h: vec![0.0; 6], c: None };
    assert!(matches!(m.cell_step(Side::Encoder, &[0.0; 5], &no_c), Err(ModelError::ShapeMismatch(_))));
    let ok = CellState::zeros(Unit::Lstm, 6);
    assert!(m.cell_step(Side::Encoder, &[0.0; 4], &ok).is_err());
}

#[test]
fn encoder_one_state_per_token() {
    let m = Seq2Seq::new(config(Unit::Gru, AttentionKind::None), 1).unwrap();
    let src = [3, 4, 5, 1];
    let a = m.encode_sequence(&src).unwrap();
    assert_eq!(a.states.len(), 4);
    assert_eq!(a.final_state.h, a.states[3]);
    assert_eq!(a, m.encode_sequence(&src).unwrap());

    let z = Seq2Seq::zeros(config(Unit::Srn, AttentionKind::None)).unwrap();
    let enc = z.encode_sequence(&src).unwrap();
    assert!(enc.states.iter().flatten().all(|&x| x == 0.0));

    assert!(matches!(m.encode_sequence(&[]), Err(ModelError::EmptySequence(_))));
    assert!(matches!(
        m.encode_sequence(&[V_SRC]),
        Err(ModelError::IndexOutOfRange { index: V_SRC, size: V_SRC })
    ));
}

#[test]
fn attention_examples() {
    let mut m = Seq2Seq::new(config(Unit::Srn, AttentionKind::Multiplicative), 2).unwrap();
    let h = vec![0.1, 0.5, -0.3, 0.2, 0.9, -0.7];
    let e0 = vec![0.3, -0.1, 0.4, 0.0, 0.2, 0.6];
    let single = m.attend(&h, std::slice::from_ref(&e0)).unwrap();
    assert_eq!(single.weights, [1.0]);
    for (a, b) in single.context.iter().zip(&e0) {
        assert!((a - b).abs() < 1e-15);
    }

    let same = vec![e0.clone(), e0.clone(), e0.clone()];
    let a = m.attend(&h, &same).unwrap();
    for (x, y) in a.context.iter().zip(&e0) {
        assert!((x - y).abs() < 1e-14);
    }

    let w_a = m.params().id("attention.w_a").unwrap();
    m.params_mut().value_mut(w_a).fill(0.0);
    let states = vec![e0.clone(), vec![1.0; 6], vec![-2.0; 6], vec![0.5; 6]];
    let a = m.attend(&h, &states).unwrap();
    for w in &a.weights {
        assert!((w - 0.25).abs() < 1e-15);
    }

    let plain = Seq2Seq::new(config(Unit::Srn, AttentionKind::None), 2).unwrap();
    assert_eq!(plain.attend(&h, &states), Err(ModelError::AttentionDisabled));
}

#[test]
fn attention_weights_are_a_distribution() {
    for unit in Unit::ALL {
        let m = Seq2Seq::new(config(unit, AttentionKind::Multiplicative), 5).unwrap();
        let trace = m.greedy_decode_traced(&[2, 3, 4, 1], 8).unwrap();
        assert_eq!(trace.attention.len(), trace.tokens.len());
        for a in &trace.attention {
            assert_eq!(a.len(), 4);
            assert!(a.iter().all(|&w| w >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn decode_step_shapes_and_dataflow() {
    for (unit, attention) in variants() {
        let m = Seq2Seq::new(config(unit, attention), 3).unwrap();
        let enc = m.encode_sequence(&[2, 5, 7, 1]).unwrap();
        let step = m.decode_step(SOS_INDEX, &enc.final_state, &enc.states).unwrap();
        assert_eq!(step.logits.len(), V_TGT);
        assert_eq!(step, m.decode_step(SOS_INDEX, &enc.final_state, &enc.states).unwrap());

        let mut perturbed = enc.states.clone();
        for s in perturbed.iter_mut().take(3) {
            s.iter_mut().for_each(|x| *x += 0.37);
        }
        let other = m.decode_step(SOS_INDEX, &enc.final_state, &perturbed).unwrap();
        if attention.enabled() {
            assert_ne!(other.logits, step.logits);
        } else {
            assert_eq!(other.logits, step.logits);
        }
    }
}

#[test]
fn teacher_forced_loss_limits() {
    let m = Seq2Seq::zeros(config(Unit::Lstm, AttentionKind::Multiplicative)).unwrap();
    let tf = m.forward_teacher_forced(&[2, 3, 1], &[4, 5, 6, 1]).unwrap();
    assert_eq!(tf.token_losses.len(), 4);
    assert!((tf.mean_loss - (V_TGT as f64).ln()).abs() < 1e-12);

    let mut m = Seq2Seq::zeros(config(Unit::Gru, AttentionKind::None)).unwrap();
    let b = m.params().id("output.b").unwrap();
    m.params_mut().value_mut(b).data_mut()[EOS_INDEX] = 60.0;
    let tf = m.forward_teacher_forced(&[2, 1], &[EOS_INDEX]).unwrap();
    assert!(tf.mean_loss < 1e-20);

    let m = Seq2Seq::new(config(Unit::Srn, AttentionKind::None), 9).unwrap();
    let tf = m.forward_teacher_forced(&[2, 3, 1], &[4, 5, 1]).unwrap();
    assert!(tf.token_losses.iter().all(|&l| l >= 0.0));
    assert!(m.forward_teacher_forced(&[2, 3, 1], &[V_TGT]).is_err());
}

#[test]
fn greedy_decode_boundaries() {
    let m = Seq2Seq::new(config(Unit::Gru, AttentionKind::Multiplicative), 4).unwrap();
    assert!(m.greedy_decode(&[2, 3, 1], 0).unwrap().is_empty());
    let a = m.greedy_decode(&[2, 3, 1], 12).unwrap();
    assert!(!a.is_empty() && a.len() <= 12);
    assert_eq!(a, m.greedy_decode(&[2, 3, 1], 12).unwrap());

    // Zero parameters give uniform logits; the tie goes to index 0.
    let z = Seq2Seq::zeros(config(Unit::Srn, AttentionKind::None)).unwrap();
    assert_eq!(z.greedy_decode(&[2, 1], 3).unwrap(), [0, 0, 0]);
}

#[test]
fn accumulate_matches_forward_loss() {
    let mut m = Seq2Seq::new(config(Unit::Lstm, AttentionKind::Multiplicative), 6).unwrap();
    let plain = m.forward_teacher_forced(&[2, 3, 4, 1], &[5, 6, 7, 1]).unwrap();
    let acc = m.accumulate_gradients(&[2, 3, 4, 1], &[5, 6, 7, 1]).unwrap();
    assert_eq!(plain, acc);
    assert!(m.params().grad_norm() > 0.0);
}

fn check(unit: Unit, attention: AttentionKind, seed: u64) -> crate::numerics::GradCheckReport {
    let mut m = Seq2Seq::new(config(unit, attention), seed).unwrap();
    // Move biases off zero so every gradient path is exercised.
    for id in m.params().ids().collect::<Vec<_>>() {
        if m.params().kind(id) == ParamKind::Bias {
            for (i, v) in m.params_mut().value_mut(id).data_mut().iter_mut().enumerate() {
                *v = 0.1 * ((i as f64) * 0.7 + seed as f64).sin();
            }
        }
    }
    let (src, tgt) = ([2usize, 7, 3, 1], [4usize, 8, 9, 10, 1]);
    let mut obj = ExampleObjective { model: &mut m, source: &src, target: &tgt };
    gradient_check(&mut obj, &GradCheckConfig { coords_per_param: 10, seed, ..Default::default() }).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    for (unit, attention) in variants() {
        let report = check(unit, attention, 11);
        assert!(report.passed(), "{unit} {attention}: {report:?}");
        let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names.contains(&"attention.w_a"), attention.enabled());
    }
}

#[test]
fn gru_reset_fault_is_detected() {
    let mut m = Seq2Seq::new(config(Unit::Gru, AttentionKind::None), 3).unwrap();
    m.inject_fault(Some(Fault::GruResetSignFlip));
    let (src, tgt) = ([2usize, 7, 3, 1], [4usize, 8, 9, 10, 1]);
    let mut obj = ExampleObjective { model: &mut m, source: &src, target: &tgt };
    let report = gradient_check(&mut obj, &GradCheckConfig::default()).unwrap();
    assert!(!report.passed());
    // The output layer does not depend on the reset gate's backward path.
    assert!(report.get("output.w").unwrap().max_rel_error < 1e-4);
}

#[test]
fn teacher_forcing_matches_stepwise_decoding_bitwise() {
    let (src, tgt) = ([2usize, 7, 3, 1], [4usize, 8, 9, 10, 1]);
    for (unit, attention) in variants() {
        let m = Seq2Seq::new(config(unit, attention), 21).unwrap();
        let tf = m.forward_teacher_forced(&src, &tgt).unwrap();
        let enc = m.encode_sequence(&src).unwrap();
        let (mut state, mut prev) = (enc.final_state.clone(), SOS_INDEX);
        for (t, &gold) in tgt.iter().enumerate() {
            let step = m.decode_step(prev, &state, &enc.states).unwrap();
            let (loss, _) = crate::numerics::cross_entropy(&step.logits, gold).unwrap();
            assert_eq!(loss.to_bits(), tf.token_losses[t].to_bits(), "{unit} {attention} step {t}");
            state = step.state;
            prev = gold;
        }
    }
}
