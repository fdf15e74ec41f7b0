use crate::error::Result;
use crate::model::{encode_corpus, pretrain, LanguageModel, ModelConfig, TrainHyper, TrainLog};
use crate::numerics::Scalar;
use crate::tokenizer::Vocab;

/// Builds a vocabulary of at most `max_vocab` entries from `lines` and
/// pretrains a freshly initialized model of shape `arch` on them.
/// `arch.vocab_size` is replaced by the built vocabulary's size.
pub fn pretrain_from_text<S: Scalar, L: AsRef<str>>(
    lines: &[L],
    max_vocab: usize,
    arch: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<(LanguageModel<S>, Vocab, TrainLog)> {
    let vocab = Vocab::build(lines, max_vocab)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..arch.clone()
    };
    let model = LanguageModel::<S>::init(config)?;
    let corpus = encode_corpus(&vocab, lines, usize::MAX);
    let (model, log) = pretrain(&model, &corpus, hyper)?;
    Ok((model, vocab, log))
}
