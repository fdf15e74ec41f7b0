use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `corpus` with `seed` and cuts it into train and dev parts.
///
/// The train part gets `round(ratio · n)` lines, clamped so both parts are
/// non-empty.
pub fn split_corpus<L: Clone>(corpus: &[L], ratio: f64, seed: u64) -> Result<(Vec<L>, Vec<L>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must be in (0, 1)")));
    }
    if corpus.len() < 2 {
        return Err(Error::Config(format!(
            "corpus has {} line(s); at least 2 are needed to split",
            corpus.len()
        )));
    }
    let n = corpus.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let dev = order[n_train..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, dev))
}
