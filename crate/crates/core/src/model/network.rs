use super::{ModelConfig, ParagraphEncoder, ParamVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Decision threshold for the hard mask.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Token ids of one case after vocabulary lookup and truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub paragraphs: Vec<Vec<usize>>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardResult {
    /// Soft attention scores, `[N]`, each in (0, 1).
    pub soft_attention: Var,
    /// Hard mask used for pooling, `[N]`.
    pub mask: Var,
    /// Masked, max-pooled document representation.
    pub doc_repr: Var,
    /// Per-label probabilities.
    pub label_probs: Var,
    pub keys: Var,
    pub queries: Var,
}

/// Shared part of the network, up to the attention scores. Reused by the
/// extra masked passes (complement, random) of the regularizers.
#[derive(Clone, Copy, Debug)]
pub struct Trunk {
    pub soft_attention: Var,
    pub keys: Var,
    pub queries: Var,
    pub paragraphs: usize,
}

/// The hierarchical hard-attention classifier bound to one set of tape
/// parameters.
pub struct Model<'a> {
    config: &'a ModelConfig,
    vars: &'a ParamVars,
}

impl<'a> Model<'a> {
    pub fn new(config: &'a ModelConfig, vars: &'a ParamVars) -> Self {
        Self { config, vars }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn p(&self, name: &str) -> Var {
        self.vars.get(name)
    }

    fn dense(&self, tape: &mut Tape, x: Var, w: &str, b: &str) -> Result<Var> {
        let h = tape.matmul(x, self.p(w))?;
        Ok(tape.add_row_vector(h, self.p(b))?)
    }

    fn norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let n = tape.layer_norm_rows(x)?;
        let g = tape.mul_row_vector(n, self.p(&format!("{prefix}.g")))?;
        Ok(tape.add_row_vector(g, self.p(&format!("{prefix}.b")))?)
    }

    /// Post-norm transformer encoder layer over the rows of `x`.
    fn transformer_layer(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let d = self.config.embed_dim;
        let heads = self.config.attention_heads;
        let dh = d / heads;
        let q = self.dense(tape, x, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
        let k = self.dense(tape, x, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
        let v = self.dense(tape, x, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.affine(scores, scale, 0.0);
            let attn = tape.softmax_rows(scores)?;
            outs.push(tape.matmul(attn, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let attended = self.dense(tape, joined, &format!("{prefix}.wo"), &format!("{prefix}.bo"))?;
        let res1 = tape.add(x, attended)?;
        let h1 = self.norm(tape, res1, &format!("{prefix}.ln1"))?;
        let ff = self.dense(tape, h1, &format!("{prefix}.ff1.w"), &format!("{prefix}.ff1.b"))?;
        let ff = tape.relu(ff);
        let ff = self.dense(tape, ff, &format!("{prefix}.ff2.w"), &format!("{prefix}.ff2.b"))?;
        let res2 = tape.add(h1, ff)?;
        self.norm(tape, res2, &format!("{prefix}.ln2"))
    }

    /// Context-unaware paragraph embeddings, `[N, embed_dim]`. Each paragraph
    /// is encoded independently by the shared encoder.
    pub fn encode_paragraphs(&self, tape: &mut Tape, input: &ModelInput) -> Result<Var> {
        if input.is_empty() {
            return Err(Error::EmptyCase);
        }
        if input.len() > self.config.max_paragraphs {
            return Err(Error::TooManyParagraphs {
                got: input.len(),
                max: self.config.max_paragraphs,
            });
        }
        let table = self.p("embed.tokens");
        let segments: Vec<Vec<usize>> = input
            .paragraphs
            .iter()
            .map(|p| {
                let p = &p[..p.len().min(self.config.max_tokens)];
                if p.is_empty() {
                    vec![0]
                } else {
                    p.to_vec()
                }
            })
            .collect();
        match self.config.paragraph_encoder {
            ParagraphEncoder::MeanOfEmbeddings => Ok(tape.segment_mean(table, &segments)?),
            ParagraphEncoder::SingleTransformerLayer => {
                let mut rows = Vec::with_capacity(segments.len());
                for seg in &segments {
                    let tokens = tape.gather_rows(table, seg)?;
                    let positions: Vec<usize> = (0..seg.len()).collect();
                    let pos = tape.gather_rows(self.p("para.pos"), &positions)?;
                    let x = tape.add(tokens, pos)?;
                    let h = self.transformer_layer(tape, x, "para.layer")?;
                    rows.push(tape.mean_rows(h)?);
                }
                Ok(tape.stack_rows(&rows)?)
            }
        }
    }

    /// Contextualized paragraph embeddings: learned positions plus the
    /// stack of transformer layers across paragraphs.
    pub fn contextualize(&self, tape: &mut Tape, paragraphs: Var) -> Result<Var> {
        let n = tape.value(paragraphs).rows();
        if n > self.config.max_paragraphs {
            return Err(Error::TooManyParagraphs {
                got: n,
                max: self.config.max_paragraphs,
            });
        }
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(self.p("ctx.pos"), &positions)?;
        let mut x = tape.add(paragraphs, pos)?;
        for l in 0..self.config.context_layers {
            x = self.transformer_layer(tape, x, &format!("ctx.{l}"))?;
        }
        Ok(x)
    }

    /// `(P^K, P^Q)`: two SELU projections of the contextual embeddings.
    pub fn project_kq(&self, tape: &mut Tape, contextual: Var) -> Result<(Var, Var)> {
        let k = self.dense(tape, contextual, "k.w", "k.b")?;
        let q = self.dense(tape, contextual, "q.w", "q.b")?;
        Ok((tape.selu(k), tape.selu(q)))
    }

    /// One sigmoid score per paragraph from its query encoding.
    pub fn attention_scores(&self, tape: &mut Tape, queries: Var) -> Result<Var> {
        let n = tape.value(queries).rows();
        let logits = self.dense(tape, queries, "score.w", "score.b")?;
        let a = tape.sigmoid(logits);
        Ok(tape.slice(a, 0, n)?)
    }

    /// Max-pool over all rows of `mask_i * P^K_i`; masked rows take part as zeros.
    pub fn document_repr(&self, tape: &mut Tape, keys: Var, mask: Var) -> Result<Var> {
        let n = tape.value(keys).rows();
        let got = tape.value(mask).len();
        if got != n {
            return Err(Error::MaskLength { got, expected: n });
        }
        let masked = tape.scale_rows(keys, mask)?;
        Ok(tape.maxpool_rows(masked)?)
    }

    pub fn classify(&self, tape: &mut Tape, doc: Var) -> Result<Var> {
        let row = tape.stack_rows(&[doc])?;
        let logits = self.dense(tape, row, "cls.w", "cls.b")?;
        let probs = tape.sigmoid(logits);
        Ok(tape.slice(probs, 0, self.config.num_labels)?)
    }

    pub fn trunk(&self, tape: &mut Tape, input: &ModelInput) -> Result<Trunk> {
        let p = self.encode_paragraphs(tape, input)?;
        let c = self.contextualize(tape, p)?;
        let (keys, queries) = self.project_kq(tape, c)?;
        let soft_attention = self.attention_scores(tape, queries)?;
        Ok(Trunk {
            soft_attention,
            keys,
            queries,
            paragraphs: input.len(),
        })
    }

    /// Straight-through hard mask from the trunk's soft scores.
    pub fn learned_mask(&self, tape: &mut Tape, trunk: &Trunk) -> Result<Var> {
        Ok(tape.threshold(trunk.soft_attention, MASK_THRESHOLD)?)
    }

    /// Pool and classify under the given mask. The mask bypasses
    /// thresholding entirely.
    pub fn head(&self, tape: &mut Tape, trunk: &Trunk, mask: Var) -> Result<(Var, Var)> {
        let doc = self.document_repr(tape, trunk.keys, mask)?;
        let probs = self.classify(tape, doc)?;
        Ok((doc, probs))
    }

    /// Whole pipeline. With `mask_override`, pooling and classification use
    /// the override, while the soft scores are still computed and reported.
    pub fn forward(&self, tape: &mut Tape, input: &ModelInput, mask_override: Option<Var>) -> Result<ForwardResult> {
        let trunk = self.trunk(tape, input)?;
        let mask = match mask_override {
            Some(m) => {
                let got = tape.value(m).len();
                if got != trunk.paragraphs {
                    return Err(Error::MaskLength {
                        got,
                        expected: trunk.paragraphs,
                    });
                }
                m
            }
            None => self.learned_mask(tape, &trunk)?,
        };
        let (doc_repr, label_probs) = self.head(tape, &trunk, mask)?;
        Ok(ForwardResult {
            soft_attention: trunk.soft_attention,
            mask,
            doc_repr,
            label_probs,
            keys: trunk.keys,
            queries: trunk.queries,
        })
    }
}

/// Constant all-ones mask (no paragraph masked).
pub fn all_ones(tape: &mut Tape, n: usize) -> Var {
    tape.constant(Tensor::filled(&[n], 1.0))
}

/// `1 - mask`, kept on the tape so gradients reach the learned scores.
pub fn complement(tape: &mut Tape, mask: Var) -> Var {
    tape.affine(mask, -1.0, 1.0)
}
