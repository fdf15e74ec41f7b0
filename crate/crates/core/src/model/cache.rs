use crate::error::{Error, Result};
use crate::model::forward::Net;
use crate::model::params::Fingerprint;
use crate::model::LanguageModel;
use crate::numerics::{Graph, Matrix, Scalar};

/// Per-layer attention keys and values of a prompt, computed once per
/// domain. Prompt rows never attend to hypothesis tokens, so their state is
/// the same for every hypothesis they prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixCache<S> {
    pub(crate) keys: Vec<Matrix<S>>,
    pub(crate) values: Vec<Matrix<S>>,
    len: usize,
    width: usize,
    fingerprint: Fingerprint,
    adapter_fingerprint: Option<Fingerprint>,
}

impl<S: Scalar> PrefixCache<S> {
    /// Prompt length `k`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layers(&self) -> usize {
        self.keys.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn keys(&self, layer: usize) -> &Matrix<S> {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &Matrix<S> {
        &self.values[layer]
    }

    /// Fingerprint of the backbone the cache was built from.
    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn adapter_fingerprint(&self) -> Option<&Fingerprint> {
        self.adapter_fingerprint.as_ref()
    }
}

impl<S: Scalar> LanguageModel<S> {
    /// Runs `rows` (a `k × d` prompt) through every layer and keeps the keys
    /// and values.
    pub fn prefix_cache_from_rows(&self, rows: &Matrix<S>) -> Result<PrefixCache<S>> {
        let cfg = self.config();
        let d = cfg.d_model;
        if rows.cols() != d {
            return Err(Error::shape(format!(
                "prompt has {} columns, model d = {d}",
                rows.cols()
            )));
        }
        let k = rows.rows();
        let needed = cfg.positions_needed(k, 0);
        if needed > cfg.max_positions {
            return Err(Error::SequenceTooLong {
                needed,
                max: cfg.max_positions,
            });
        }
        let mut keys = Vec::with_capacity(cfg.n_layers);
        let mut values = Vec::with_capacity(cfg.n_layers);
        if k == 0 {
            keys.resize(cfg.n_layers, Matrix::zeros(0, d));
            values.resize(cfg.n_layers, Matrix::zeros(0, d));
        } else {
            let mut g = Graph::inference();
            let mut net: Net<'_, S> = self.net();
            let prompt = g.constant(rows);
            let mut x = if cfg.prompt_positions {
                let table = g.constant(&self.params().position_embedding);
                let ids: Vec<usize> = (0..k).collect();
                let pos = g.gather(table, &ids)?;
                g.add(prompt, pos)?
            } else {
                prompt
            };
            for layer in 0..cfg.n_layers {
                let (out, kn, vn) = net.block(&mut g, layer, x, k, 0, None, None)?;
                keys.push(g.value(kn).clone());
                values.push(g.value(vn).clone());
                x = out;
            }
        }
        Ok(PrefixCache {
            keys,
            values,
            len: k,
            width: d,
            fingerprint: self.fingerprint().clone(),
            adapter_fingerprint: self.adapter_fingerprint().cloned(),
        })
    }
}
