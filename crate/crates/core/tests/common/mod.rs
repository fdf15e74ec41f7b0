#![allow(dead_code)]

use domprompt::model::{LanguageModel, ModelConfig, Parameters};
use domprompt::numerics::Matrix;
use domprompt::tokenizer::{Vocab, BOS_ID};

pub const SENTENCES: [&str; 5] = [
    "book a flight to boston",
    "i want to change my seat",
    "is my flight on time",
    "cancel the flight to denver please",
    "what time does the flight leave",
];

pub fn fixture_vocab() -> Vocab {
    Vocab::build(&SENTENCES, 64).unwrap()
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        vocab_size,
        max_positions: 24,
        dropout: 0.0,
        seed: 7,
        prompt_positions: true,
    }
}

pub fn tiny_model(vocab_size: usize, seed: u64) -> LanguageModel<f64> {
    let config = ModelConfig {
        seed,
        ..tiny_config(vocab_size)
    };
    LanguageModel::init(config).unwrap()
}

fn row(m: &Matrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).to_vec()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let r = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * r * g + b)
        .collect()
}

fn affine(x: &[f64], w: &Matrix<f64>, b: &Matrix<f64>) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b[(0, j)] + (0..w.rows()).map(|i| x[i] * w[(i, j)]).sum::<f64>())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Log-probability of each token of `tokens`, computed row by row with plain
/// loops: prompt rows first, then BOS, then the tokens shifted by one.
pub fn reference_logprobs(
    config: &ModelConfig,
    p: &Parameters<f64>,
    prompt: Option<&Matrix<f64>>,
    tokens: &[usize],
) -> Vec<f64> {
    let d = config.d_model;
    let k = prompt.map_or(0, |m| m.rows());
    let mut x: Vec<Vec<f64>> = Vec::new();
    let mut ids = vec![BOS_ID];
    ids.extend_from_slice(&tokens[..tokens.len() - 1]);
    for r in 0..k {
        x.push(row(prompt.unwrap(), r));
    }
    for &id in &ids {
        x.push(row(&p.token_embedding, id));
    }
    for (pos, v) in x.iter_mut().enumerate() {
        let pe = row(&p.position_embedding, pos);
        for (a, b) in v.iter_mut().zip(pe) {
            *a += b;
        }
    }
    let n = x.len();
    let heads = config.n_heads;
    let hd = d / heads;
    for b in &p.blocks {
        let qkv: Vec<Vec<f64>> = x
            .iter()
            .map(|v| affine(&layer_norm(v, b.ln1_gain.row(0), b.ln1_bias.row(0)), &b.qkv_weight, &b.qkv_bias))
            .collect();
        let mut att = vec![vec![0.0; d]; n];
        for h in 0..heads {
            for i in 0..n {
                let visible: Vec<usize> = (0..n).filter(|&j| j <= i || j < k).collect();
                let scores: Vec<f64> = visible
                    .iter()
                    .map(|&j| {
                        (0..hd).map(|c| qkv[i][h * hd + c] * qkv[j][d + h * hd + c]).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (s, &j) in scores.iter().zip(&visible) {
                    let w = (s - m).exp() / z;
                    for c in 0..hd {
                        att[i][h * hd + c] += w * qkv[j][2 * d + h * hd + c];
                    }
                }
            }
        }
        for i in 0..n {
            let o = affine(&att[i], &b.out_weight, &b.out_bias);
            for (a, v) in x[i].iter_mut().zip(o) {
                *a += v;
            }
            let h = layer_norm(&x[i], b.ln2_gain.row(0), b.ln2_bias.row(0));
            let f: Vec<f64> = affine(&h, &b.ffn_in_weight, &b.ffn_in_bias).into_iter().map(gelu).collect();
            let f = affine(&f, &b.ffn_out_weight, &b.ffn_out_bias);
            for (a, v) in x[i].iter_mut().zip(f) {
                *a += v;
            }
        }
    }
    let mut out = Vec::with_capacity(tokens.len());
    for (t, &target) in tokens.iter().enumerate() {
        let h = layer_norm(&x[k + t], p.final_norm_gain.row(0), p.final_norm_bias.row(0));
        let logits: Vec<f64> = (0..config.vocab_size)
            .map(|v| (0..d).map(|c| h[c] * p.token_embedding[(v, c)]).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        out.push(logits[target] - lse);
    }
    out
}

/// Writes a synthetic suite into `dir` and pretrains its `base` checkpoint.
pub fn build_suite(
    dir: &std::path::Path,
    opts: &domprompt::harness::SuiteOptions,
    arch: &ModelConfig,
    hyper: &domprompt::model::TrainHyper,
) -> domprompt::harness::ExperimentConfig {
    let config_path = domprompt::harness::write_suite(dir, opts).unwrap();
    let generic = std::fs::read_to_string(dir.join("generic.txt")).unwrap();
    let lines: Vec<&str> = generic.lines().collect();
    let (model, vocab, _) =
        domprompt::harness::pretrain_from_text::<f32, _>(&lines, 10_000, arch, hyper).unwrap();
    domprompt::model::save_checkpoint(&dir.join("base"), &model, &vocab).unwrap();
    domprompt::harness::ExperimentConfig::load(&config_path).unwrap()
}
