use privloc::dataset::{TokenizedPath, NULL_PATH};
use privloc::model::*;
use privloc_autograd::{grad_check_report, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(arch: Architecture, rnn: RnnKind, num_paths: usize, mode: HeadMode) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        tokenize_nonterminals: true,
        use_attention: true,
        rnn_kind: rnn,
        num_paths,
        head_mode: mode,
        fc_hidden: 6,
        embed_size: 4,
        vocab_size: 12,
    }
}

fn random_path(rng: &mut ChaCha8Rng, vocab: u32) -> TokenizedPath {
    let mut p = NULL_PATH;
    p[0] = rng.gen_range(1..vocab);
    for slot in p.iter_mut().take(1 + rng.gen_range(1..=8)).skip(1) {
        *slot = rng.gen_range(1..vocab);
    }
    p[9] = rng.gen_range(1..vocab);
    p
}

fn random_hop(rng: &mut ChaCha8Rng, n: usize, real: usize, vocab: u32) -> Vec<TokenizedPath> {
    let mut rows: Vec<_> = (0..real).map(|_| random_path(rng, vocab)).collect();
    rows.resize(n, NULL_PATH);
    rows
}

// ---- straight-line oracle ---------------------------------------------------

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = w.dims2().unwrap();
    assert_eq!(c, x.len());
    (0..r).map(|i| (0..c).map(|j| w.get2(i, j) * x[j]).sum()).collect()
}

/// Plain-loop LSTM over a sequence of input vectors; returns every h.
fn lstm_oracle(m: &Model, prefix: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w_ih = m.params.get(&format!("{prefix}w_ih")).unwrap();
    let w_hh = m.params.get(&format!("{prefix}w_hh")).unwrap();
    let b = m.params.get(&format!("{prefix}b")).unwrap().data();
    let hdim = b.len() / 4;
    let (mut h, mut c) = (vec![0.0; hdim], vec![0.0; hdim]);
    let mut out = Vec::new();
    for x in xs {
        let a = matvec(w_ih, x);
        let r = matvec(w_hh, &h);
        let z: Vec<f64> = (0..4 * hdim).map(|k| a[k] + r[k] + b[k]).collect();
        for j in 0..hdim {
            let (i, f, g, o) = (sig(z[j]), sig(z[hdim + j]), z[2 * hdim + j].tanh(), sig(z[3 * hdim + j]));
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn encode_oracle(m: &Model, head: usize, path: &TokenizedPath) -> Vec<f64> {
    let embed = m.params.get("embed").unwrap();
    let xs: Vec<Vec<f64>> = path.iter().map(|&t| embed.row_slice(t as usize).to_vec()).collect();
    let l1 = lstm_oracle(m, &format!("head{head}.rnn.layer1."), &xs);
    lstm_oracle(m, &format!("head{head}.rnn.layer2."), &l1).pop().unwrap()
}

fn attention_oracle(m: &Model, head: usize, encs: &[Option<Vec<f64>>]) -> Vec<f64> {
    let w = m.params.get(&format!("head{head}.attn.W")).unwrap();
    let v = m.params.get(&format!("head{head}.attn.v")).unwrap().data();
    let scores: Vec<Option<f64>> = encs
        .iter()
        .map(|e| {
            e.as_ref().map(|e| {
                let u = matvec(w, e);
                u.iter().zip(v).map(|(u, v)| u.tanh() * v).sum()
            })
        })
        .collect();
    let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
    scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp() / z)).collect()
}

#[test]
fn weights_match_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let m = Model::new(config(Architecture::MultiHead, RnnKind::Lstm, 6, HeadMode::StackedWeights), seed).unwrap();
        let input: Vec<_> = (0..3).map(|h| random_hop(&mut rng, 6, 6 - h * 2, 12)).collect();
        let out = m.forward_multi_head(&input).unwrap();
        for (h, hop) in input.iter().enumerate() {
            let encs: Vec<Option<Vec<f64>>> = hop
                .iter()
                .map(|row| (*row != NULL_PATH).then(|| encode_oracle(&m, h + 1, row)))
                .collect();
            for (r, e) in encs.iter().enumerate() {
                let got = out.hops[h].path_encodings.row_slice(r);
                match e {
                    Some(e) => got.iter().zip(e).for_each(|(a, b)| assert!((a - b).abs() < 1e-12)),
                    None => assert!(got.iter().all(|&x| x == 0.0)),
                }
            }
            let want = attention_oracle(&m, h + 1, &encs);
            let got = &out.hops[h].attention_weights;
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(out.probability > 0.0 && out.probability < 1.0);
    }
}

#[test]
fn masking_and_empty_hops() {
    let m = Model::new(config(Architecture::MultiHead, RnnKind::Lstm, 5, HeadMode::StackedWeights), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = vec![random_hop(&mut rng, 5, 1, 12), vec![NULL_PATH; 5], random_hop(&mut rng, 5, 3, 12)];
    let out = m.forward_multi_head(&input).unwrap();
    assert!((out.hops[0].attention_weights[0] - 1.0).abs() < 1e-9);
    assert!(out.hops[0].attention_weights[1..].iter().all(|&w| w < 1e-9));
    assert_eq!(out.hops[1].attention_weights, vec![0.2; 5]);
    assert!(out.hops[2].attention_weights[3..].iter().all(|&w| w < 1e-9));
}

#[test]
fn permuting_rows_permutes_weights() {
    let m = Model::new(config(Architecture::MultiHead, RnnKind::Lstm, 7, HeadMode::StackedWeights), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input: Vec<_> = (0..3).map(|_| random_hop(&mut rng, 7, 5, 12)).collect();
    let base = m.forward(&input).unwrap();
    let mut shuffled = input.clone();
    let perm = [6usize, 2, 0, 4, 1, 5, 3];
    shuffled[1] = perm.iter().map(|&i| input[1][i]).collect();
    let moved = m.forward(&shuffled).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((moved.hops[1].attention_weights[k] - base.hops[1].attention_weights[i]).abs() < 1e-12);
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(&moved.hops[1].attention_weights), sorted(&base.hops[1].attention_weights));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn zero_classifier_gives_one_half() {
    for mode in [HeadMode::StackedWeights, HeadMode::WeightedContext] {
        let mut m = Model::new(config(Architecture::MultiHead, RnnKind::Lstm, 4, mode), 5).unwrap();
        for name in ["fc.1.w", "fc.1.b", "fc.2.w", "fc.2.b"] {
            m.params.get_mut(name).unwrap().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input: Vec<_> = (0..3).map(|_| random_hop(&mut rng, 4, 3, 12)).collect();
        assert_eq!(m.forward(&input).unwrap().probability, 0.5);
    }
}

#[test]
fn mean_pooling_of_identical_paths() {
    let mut cfg = config(Architecture::SingleHead, RnnKind::Lstm, 6, HeadMode::StackedWeights);
    cfg.use_attention = false;
    cfg.tokenize_nonterminals = false;
    let m = Model::new(cfg, 4).unwrap();
    assert!(!m.params.contains("head1.attn.W"));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_path(&mut rng, 12);
    let mut one = vec![NULL_PATH; 6];
    one[0] = p;
    let mut many = vec![p; 4];
    many.resize(6, NULL_PATH);
    let a = m.forward_single_head(&one).unwrap();
    let b = m.forward_single_head(&many).unwrap();
    assert!((a - b).abs() < 1e-12);
    let w = &m.forward(&[many]).unwrap().hops[0].attention_weights;
    assert_eq!(w, &[0.25, 0.25, 0.25, 0.25, 0.0, 0.0]);
}

#[test]
fn experiment_shapes() {
    // (Tok, Attn, LSTM, 100): the classifier reads 100 weights
    let mut cfg = config(Architecture::SingleHead, RnnKind::Lstm, 100, HeadMode::StackedWeights);
    cfg.fc_hidden = DEFAULT_FC_HIDDEN;
    let m = Model::new(cfg, 0).unwrap();
    assert_eq!(m.params.get("fc.1.w").unwrap().shape(), [128, 100]);

    let m = Model::new(config(Architecture::SingleHead, RnnKind::BiLstm, 300, HeadMode::StackedWeights), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pooled = random_hop(&mut rng, 300, 40, 12);
    let p = m.forward_single_head(&pooled).unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert!(matches!(m.forward_single_head(&pooled[..299]), Err(ModelError::ShapeMismatch { .. })));
    assert!(m.forward_multi_head(&[pooled]).is_err());

    let multi = Model::new(config(Architecture::MultiHead, RnnKind::Lstm, 100, HeadMode::StackedWeights), 0).unwrap();
    assert_eq!(multi.params.get("fc.1.w").unwrap().shape()[1], 300);
    assert!(multi.params.contains("head3.rnn.layer2.w_hh"));
    assert!(matches!(multi.forward(&vec![vec![NULL_PATH; 100]; 2]), Err(ModelError::ShapeMismatch { .. })));
    assert!(matches!("sum".parse::<HeadMode>(), Err(ModelError::UnknownMode(_))));
}

#[test]
fn bilstm_directions_agree_on_palindromes() {
    let mut m = Model::new(config(Architecture::SingleHead, RnnKind::BiLstm, 3, HeadMode::StackedWeights), 8).unwrap();
    let e = m.config.embed_size;
    for part in ["w_ih", "w_hh", "b"] {
        let f = m.params.get(&format!("head1.rnn.layer1.fwd.{part}")).unwrap().clone();
        m.params.insert(format!("head1.rnn.layer1.bwd.{part}"), f);
    }
    // layer-2 input is [fwd, bwd]; the backward copy sees those halves swapped
    for part in ["w_hh", "b"] {
        let f = m.params.get(&format!("head1.rnn.layer2.fwd.{part}")).unwrap().clone();
        m.params.insert(format!("head1.rnn.layer2.bwd.{part}"), f);
    }
    let f = m.params.get("head1.rnn.layer2.fwd.w_ih").unwrap().clone();
    let (rows, cols) = f.dims2().unwrap();
    let mut swapped = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            swapped[r * cols + (c + e) % cols] = f.get2(r, c);
        }
    }
    m.params.insert("head1.rnn.layer2.bwd.w_ih", Tensor::matrix(rows, cols, swapped).unwrap());

    let pal: TokenizedPath = [3, 5, 7, 2, 9, 11, 9, 2, 7, 5, 3];
    let (fw, bw) = m.bilstm_final_states(1, &[pal]).unwrap().unwrap();
    assert!(fw.max_abs_diff(&bw) < 1e-12);
    let not_pal: TokenizedPath = [3, 5, 7, 2, 9, 11, 9, 2, 7, 5, 4];
    let (fw, bw) = m.bilstm_final_states(1, &[not_pal]).unwrap().unwrap();
    assert!(fw.max_abs_diff(&bw) > 1e-6);
}

#[test]
fn full_graph_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cases = [
        config(Architecture::MultiHead, RnnKind::Lstm, 3, HeadMode::StackedWeights),
        config(Architecture::MultiHead, RnnKind::Lstm, 3, HeadMode::WeightedContext),
        config(Architecture::SingleHead, RnnKind::BiLstm, 4, HeadMode::StackedWeights),
    ];
    for (k, cfg) in cases.into_iter().enumerate() {
        let m = Model::new(cfg, k as u64).unwrap();
        let heads = m.config.num_heads();
        let input: Vec<_> = (0..heads).map(|h| random_hop(&mut rng, m.config.num_paths, 3 - h, 12)).collect();
        let label = (k % 2) as f64;
        let rep = grad_check_report(
            |tape: &mut Tape, vars| {
                let g = m.build_graph(tape, vars, &input).unwrap();
                tape.bce_loss(g.probability, &[label])
            },
            m.params.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "case {k}: {rep:?}");
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::new(config(Architecture::MultiHead, RnnKind::BiLstm, 4, HeadMode::WeightedContext), 6).unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    m.save(&a, None).unwrap();
    let back = Model::load(&a).unwrap();
    back.save(&b, None).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(back, m);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input: Vec<_> = (0..3).map(|_| random_hop(&mut rng, 4, 2, 12)).collect();
    assert_eq!(m.forward(&input).unwrap(), back.forward(&input).unwrap());
    for name in m.params.names() {
        assert!(name == "embed" || name.starts_with("fc.") || name.starts_with("head"), "{name}");
    }
}

#[test]
fn full_graph_check_helper() {
    for seed in 0..3 {
        let cfg = config(Architecture::MultiHead, RnnKind::Lstm, 3, HeadMode::StackedWeights);
        let rep = privloc::model::full_graph_check(&cfg, seed).unwrap();
        assert!(rep.coordinates == Model::new(cfg, 0).unwrap().params.tensors().iter().map(|t| t.len()).sum::<usize>());
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}
