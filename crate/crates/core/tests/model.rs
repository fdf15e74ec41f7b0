mod common;

use common::{fixture_vocab, reference_logprobs, tiny_config, tiny_model, SENTENCES};
use domprompt::adaptation::prompt_grads;
use domprompt::model::{
    encode_corpus, load_checkpoint, pretrain, save_checkpoint, DecodeMode, LanguageModel, ModelConfig,
    Parameters, Prefix, TrainHyper,
};
use domprompt::numerics::Matrix;
use domprompt::tokenizer::{Tokenizer, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_prompt(k: usize, d: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(k, d, |_, _| rng.random_range(-0.5..0.5))
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(3..vocab)).collect()
}

#[test]
fn forward_matches_reference_loops() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 3);
    let prompt = random_prompt(3, 16, 1);
    for s in SENTENCES {
        let ids = vocab.encode(s).ids;
        for (prefix, rows) in [(Prefix::None, None), (Prefix::Rows(&prompt), Some(&prompt))] {
            let got = model.sequence_score(&ids, prefix).unwrap().token_logprobs;
            let want = reference_logprobs(model.config(), model.params(), rows, &ids);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn output_projection_is_the_token_embedding() {
    let config = tiny_config(40);
    let (v, d, p) = (config.vocab_size, config.d_model, config.max_positions);
    let expected = v * d + p * d + config.n_layers * config.block_param_count() + 2 * d;
    assert_eq!(config.param_count(), expected);
    let params: Parameters<f64> = Parameters::init(&config).unwrap();
    assert_eq!(params.count(), expected);
}

#[test]
fn rows_are_normalized_in_both_precisions() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 5);
    let model32 = LanguageModel::<f32>::new(model.config().clone(), model.params().cast()).unwrap();
    let ids = vocab.encode(SENTENCES[3]).ids;
    let lp = model.forward(&ids, Prefix::None).unwrap();
    let lp32 = model32.forward(&ids, Prefix::None).unwrap();
    for r in 0..ids.len() {
        let z: f64 = lp.row(r).iter().map(|v| v.exp()).sum();
        let z32: f64 = lp32.row(r).iter().map(|v| (*v as f64).exp()).sum();
        assert!((z - 1.0).abs() < 1e-6);
        assert!((z32 - 1.0).abs() < 1e-6);
    }
}

#[test]
fn future_tokens_never_leak_exhaustively() {
    let vocab_size = 9;
    let model = tiny_model(vocab_size, 11);
    let prompt = random_prompt(2, 16, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in 1..=8 {
        let base = random_tokens(&mut rng, t, vocab_size);
        for prefix in [Prefix::None, Prefix::Rows(&prompt)] {
            let before = model.forward(&base, prefix).unwrap();
            for pos in 0..t {
                for replacement in 3..vocab_size {
                    if replacement == base[pos] {
                        continue;
                    }
                    let mut changed = base.clone();
                    changed[pos] = replacement;
                    let after = model.forward(&changed, prefix).unwrap();
                    // Row r predicts token r from tokens before it.
                    for r in 0..=pos {
                        assert_eq!(before.row(r), after.row(r), "T={t} pos={pos} row={r}");
                    }
                }
            }
        }
    }
}

#[test]
fn empty_prefix_is_a_no_op() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 2);
    let empty = Matrix::zeros(0, 16);
    for s in SENTENCES {
        let ids = vocab.encode(s).ids;
        let plain = model.forward(&ids, Prefix::None).unwrap();
        let rows = model.forward(&ids, Prefix::Rows(&empty)).unwrap();
        assert_eq!(plain, rows);
        let (a, _) = prompt_grads(&model, &empty, &ids).unwrap();
        let b = -model.sequence_score(&ids, Prefix::None).unwrap().total_logprob;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn cached_prefix_matches_recomputation() {
    let vocab_size = 30;
    let model = tiny_model(vocab_size, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..20 {
        let k = rng.random_range(1..6);
        let prompt = random_prompt(k, 16, i);
        let cache = model.prefix_cache_from_rows(&prompt).unwrap();
        let len = rng.random_range(1..12);
        let ids = random_tokens(&mut rng, len, vocab_size);
        let a = model.sequence_score(&ids, Prefix::Rows(&prompt)).unwrap().total_logprob;
        let b = model.sequence_score(&ids, Prefix::Cached(&cache)).unwrap().total_logprob;
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn cache_is_rejected_by_a_different_model() {
    let model = tiny_model(20, 1);
    let other = tiny_model(20, 2);
    let cache = model.prefix_cache_from_rows(&random_prompt(2, 16, 0)).unwrap();
    assert!(other.sequence_score(&[3, 4], Prefix::Cached(&cache)).is_err());
}

#[test]
fn permuting_prompt_rows_with_their_positions_changes_nothing() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 4);
    let prompt = random_prompt(4, 16, 8);
    let mut swapped_prompt = prompt.clone();
    swapped_prompt.row_mut(0).copy_from_slice(prompt.row(3));
    swapped_prompt.row_mut(3).copy_from_slice(prompt.row(0));
    let mut params = model.params().clone();
    let pe = params.position_embedding.clone();
    params.position_embedding.row_mut(0).copy_from_slice(pe.row(3));
    params.position_embedding.row_mut(3).copy_from_slice(pe.row(0));
    let swapped = LanguageModel::new(model.config().clone(), params).unwrap();
    for s in SENTENCES {
        let ids = vocab.encode(s).ids;
        let a = model.sequence_score(&ids, Prefix::Rows(&prompt)).unwrap().total_logprob;
        let b = swapped.sequence_score(&ids, Prefix::Rows(&swapped_prompt)).unwrap().total_logprob;
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_embeddings_give_uniform_perplexity() {
    let vocab = Vocab::build(&["hello"], 16).unwrap();
    assert_eq!(vocab.len(), 4);
    let config = ModelConfig {
        vocab_size: 4,
        ..tiny_config(4)
    };
    let mut params: Parameters<f64> = Parameters::init(&config).unwrap();
    params.token_embedding = Matrix::zeros(4, config.d_model);
    let model = LanguageModel::new(config, params).unwrap();
    let ids = vocab.encode("hello hello hello").ids;
    let ppl = model.sequence_score(&ids, Prefix::None).unwrap().perplexity;
    assert!((ppl - 4.0).abs() < 1e-12);
}

#[test]
fn a_certain_model_has_unit_perplexity() {
    let vocab = Vocab::build(&["hello"], 16).unwrap();
    let config = tiny_config(4);
    let mut params: Parameters<f64> = Parameters::init(&config).unwrap();
    let d = config.d_model;
    let target = vocab.token_id("hello").unwrap();
    params.final_norm_gain = Matrix::zeros(1, d);
    params.final_norm_bias = Matrix::from_fn(1, d, |_, c| if c == 0 { 1.0 } else { 0.0 });
    params.token_embedding = Matrix::from_fn(4, d, |r, c| if r == target && c == 0 { 100.0 } else { 0.0 });
    let model = LanguageModel::new(config, params).unwrap();
    let ids = vocab.encode("hello hello hello").ids;
    let score = model.sequence_score(&ids, Prefix::None).unwrap();
    assert!(score.total_logprob.abs() < 1e-12);
    assert!((score.perplexity - 1.0).abs() < 1e-12);
}

#[test]
fn three_token_loss_is_the_summed_cross_entropy() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 6);
    let prompt = random_prompt(2, 16, 3);
    let ids = vocab.encode("book a flight").ids;
    assert_eq!(ids.len(), 3);
    let (loss, grads) = prompt_grads(&model, &prompt, &ids).unwrap();
    let want: f64 = -reference_logprobs(model.config(), model.params(), Some(&prompt), &ids)
        .iter()
        .sum::<f64>();
    assert!((loss - want).abs() < 1e-10);
    assert!(grads.iter().count() == 1);
}

fn overfit(seed: u64) -> (LanguageModel<f32>, Vocab) {
    let sentence = "please book a flight to boston tomorrow morning";
    let vocab = Vocab::build(&[sentence], 32).unwrap();
    let config = ModelConfig {
        dropout: 0.0,
        seed,
        max_positions: 16,
        ..ModelConfig::toy(vocab.len())
    };
    let model = LanguageModel::<f32>::init(config).unwrap();
    let corpus = encode_corpus(&vocab, &vec![sentence; 20], usize::MAX);
    let hyper = TrainHyper {
        lr: 3e-3,
        epochs: 10,
        batch_tokens: 1,
        patience: None,
        seed,
    };
    let (trained, log) = pretrain(&model, &corpus, &hyper).unwrap();
    assert_eq!(log.steps(), 200);
    (trained, vocab)
}

#[test]
fn pretraining_memorizes_and_generation_recites() {
    let (model, vocab) = overfit(1);
    let ids = vocab.encode("please book a flight to boston tomorrow morning").ids;
    let ppl = model.sequence_score(&ids, Prefix::None).unwrap().perplexity;
    assert!(ppl < 1.5, "perplexity {ppl}");
    let text = model
        .generate(&vocab, Prefix::None, "please", ids.len() - 1, &DecodeMode::Greedy)
        .unwrap();
    assert_eq!(text, "please book a flight to boston tomorrow morning");
    let sampled = model
        .generate(
            &vocab,
            Prefix::None,
            "please",
            4,
            &DecodeMode::TopK {
                k: 3,
                temperature: 1.0,
                seed: 2,
            },
        )
        .unwrap();
    assert_eq!(sampled.split_whitespace().count(), 5);
}

#[test]
fn pretraining_is_deterministic_and_checkpoints_round_trip() {
    let (a, vocab) = overfit(4);
    let (b, _) = overfit(4);
    assert_eq!(a.params().to_blob(), b.params().to_blob());
    let dir = tempfile::tempdir().unwrap();
    let fp = save_checkpoint(dir.path(), &a, &vocab).unwrap();
    assert_eq!(&fp, a.fingerprint());
    let (loaded, v2) = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(loaded.params().to_blob(), a.params().to_blob());
    assert_eq!(v2, vocab);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 8);
    let corpus = encode_corpus(&vocab, &SENTENCES, usize::MAX);
    let hyper = TrainHyper {
        lr: 0.0,
        epochs: 2,
        batch_tokens: 8,
        patience: None,
        seed: 0,
    };
    let (trained, log) = pretrain(&model, &corpus, &hyper).unwrap();
    assert!(log.steps() > 0);
    assert_eq!(trained.params().to_blob(), model.params().to_blob());
}

#[test]
fn overlong_sequences_are_rejected() {
    let model = tiny_model(10, 0);
    // BOS plus the first T-1 tokens occupy the positions.
    let ids = vec![3; 25];
    assert!(model.sequence_score(&ids, Prefix::None).is_err());
    assert!(model.sequence_score(&ids[..24], Prefix::None).is_ok());
    let prompt = random_prompt(2, 16, 0);
    assert!(model.sequence_score(&ids[..23], Prefix::Rows(&prompt)).is_err());
    assert!(model.sequence_score(&ids[..22], Prefix::Rows(&prompt)).is_ok());
}
