//! Shared self-attentive encoder: token embedding, bidirectional LSTM,
//! scaled dot-product self-attention over the embeddings, and the
//! concatenation `E = H ‖ C` consumed by both decoders.

use crate::autodiff::{Scalar, Tape, Var};
use crate::corpus::Batch;
use crate::nn::{dropout_mask, glorot, BiLstm, ParamId, ParamStore};
use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("example {0} has no unmasked position")]
    AllMasked(usize),
}

/// Model-wide dimensions of the encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_lstm: usize,
    /// Self-attention output width `d`; defaults to `2·d_lstm` so the
    /// recurrent and attentive halves of `E` carry equal width.
    pub d_attn: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Width of `E = H ‖ C`.
    pub fn output_width(&self) -> usize {
        2 * self.d_lstm + self.d_attn
    }
}

/// Trainable encoder parameters.
pub struct EncoderParams {
    pub embedding: ParamId,
    pub lstm: BiLstm,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub config: EncoderConfig,
}

/// Encoder output carried between stages.
pub struct Encoded {
    /// BiLSTM states `[B×n×2·d_lstm]`.
    pub h: Var,
    /// Self-attention context `[B×n×d]`.
    pub c: Var,
    /// `E = H ‖ C`, `[B×n×(2·d_lstm+d)]`.
    pub e: Var,
}

/// Training/inference switch; training carries the dropout source.
pub enum Mode<'a> {
    Train {
        rng: &'a mut ChaCha8Rng,
        dropout: f64,
    },
    Infer,
}

impl EncoderParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        config: EncoderConfig,
    ) -> Self {
        let embedding = store.add(
            "encoder.embedding",
            glorot(
                rng,
                &[config.vocab_size, config.d_emb],
                config.vocab_size,
                config.d_emb,
            ),
        );
        let lstm = BiLstm::init(store, rng, "encoder.lstm", config.d_emb, config.d_lstm);
        let w_q = store.add(
            "encoder.attn.w_q",
            glorot(rng, &[config.d_emb, config.d_attn], config.d_emb, config.d_attn),
        );
        let w_k = store.add(
            "encoder.attn.w_k",
            glorot(rng, &[config.d_emb, config.d_attn], config.d_emb, config.d_attn),
        );
        let w_v = store.add(
            "encoder.attn.w_v",
            glorot(rng, &[config.d_emb, config.d_attn], config.d_emb, config.d_attn),
        );
        EncoderParams {
            embedding,
            lstm,
            w_q,
            w_k,
            w_v,
            config,
        }
    }

    /// Scaled dot-product self-attention `softmax(QKᵀ/√d_k)V` with padded
    /// key positions excluded from the softmax. Rows of padded queries
    /// come out all-zero.
    pub fn self_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &Array2<bool>,
    ) -> Result<Var, EncodeError> {
        for (b, row) in mask.rows().into_iter().enumerate() {
            if !row.iter().any(|&m| m) {
                return Err(EncodeError::AllMasked(b));
            }
        }
        let w_q = store.leaf(tape, self.w_q);
        let w_k = store.leaf(tape, self.w_k);
        let w_v = store.leaf(tape, self.w_v);
        let q = tape.linear(x, w_q);
        let k = tape.linear(x, w_k);
        let v = tape.linear(x, w_v);
        let scores = tape.bmm_bt(q, k); // [B×n×n]
        let scale = T::from_f64(1.0 / (self.config.d_attn as f64).sqrt());
        let scores = tape.scale(scores, scale);
        let attn_mask = attention_mask(mask);
        let alpha = tape.row_softmax_masked(scores, &attn_mask);
        Ok(tape.bmm(alpha, v))
    }

    /// Full encoder pass over a batch: embeddings (dropout in training),
    /// mask-gated BiLSTM, self-attention, and the concatenation `E`.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Encoded, EncodeError> {
        let table = store.leaf(tape, self.embedding);
        let mut x = tape.gather_rows(table, &batch.token_ids);
        if let Mode::Train { rng, dropout } = mode {
            if *dropout > 0.0 {
                let m = dropout_mask::<T>(rng, tape.value(x).shape(), *dropout);
                x = tape.mul_const(x, m);
            }
        }
        let mut h = self.lstm.forward(tape, store, x, &batch.token_mask);
        let c = self.self_attention(tape, store, x, &batch.token_mask)?;
        if let Mode::Train { rng, dropout } = mode {
            if *dropout > 0.0 {
                let m = dropout_mask::<T>(rng, tape.value(h).shape(), *dropout);
                h = tape.mul_const(h, m);
            }
        }
        let e = tape.concat_last(h, c);
        Ok(Encoded { h, c, e })
    }
}

/// Key/query mask for self-attention: position `(i, j)` participates iff
/// both tokens are real.
fn attention_mask(mask: &Array2<bool>) -> ArrayD<bool> {
    let (bsz, n) = (mask.shape()[0], mask.shape()[1]);
    let mut out = ArrayD::from_elem(IxDyn(&[bsz, n, n]), false);
    for b in 0..bsz {
        for i in 0..n {
            if !mask[(b, i)] {
                continue;
            }
            for j in 0..n {
                if mask[(b, j)] {
                    out[[b, i, j]] = true;
                }
            }
        }
    }
    out
}
