//! Domain adaptation of a pretrained model: learned domain prompts and the
//! comparison methods (embedding tuning, fixed prompts, domain embedding,
//! bottleneck adapters, full fine-tuning).

pub mod adapter;
pub mod artifact;
mod methods;
mod prompt;

pub use adapter::{AdapterConfig, AdapterSet};
pub use artifact::{Manifest, ManifestEntry};
pub use methods::{
    count_trainable, prompt_grads, select_by_dev, train_baseline, train_prompt,
    train_prompt_from, AdaptationResult, Adapted, Method, TrainJob, FIXED_PROMPT_WORDS,
};
pub use prompt::{init_prompt, DomainPrompt, PromptInit, PROMPT_KEY};
