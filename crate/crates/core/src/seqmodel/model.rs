//! Encoder-decoder transformer over behavior/item token sequences.
//!
//! Pre-norm layers. Encoder feed-forward blocks are dense; every decoder
//! feed-forward block is a set of experts selected by token role. The first
//! `n_bi` layers of both stacks concatenate a behavior embedding to the FFN
//! input. Encoder positions are counted from the end of the sequence, so the
//! most recent interaction always sits at the same positions regardless of
//! history length (and trailing padding does not shift anything).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::io::json_hash;
use crate::numerics::{
    kernels, Checkpoint, CrossEntropyLoss, Graph, ParamId, ParamStore, Tensor, Var,
};
use crate::tokenizer::{Role, Vocabulary, PAD};
use crate::{Error, Result};

/// Expert index for a token role: behavior → 0, digit `p` → `1 + p`, anything
/// else → `m + 1`; clamped to the available experts.
pub fn position_route(role: Role, m: usize, experts: usize) -> usize {
    let r = match role {
        Role::Behavior(_) => 0,
        Role::Digit(p, _) => 1 + p,
        _ => m + 1,
    };
    r.min(experts - 1)
}

/// Behavior-table row for every token: digits inherit `1 + b` from their
/// tuple's behavior token; everything else uses the padding row 0. A trailing
/// incomplete tuple is accepted (decoder prefixes).
pub fn behavior_context(vocab: &Vocabulary, tokens: &[u32]) -> Result<Vec<usize>> {
    let m = vocab.m();
    let mut out = Vec::with_capacity(tokens.len());
    let mut current: Option<u32> = None;
    let mut next_digit = 0;
    for (i, &t) in tokens.iter().enumerate() {
        match vocab.role(t)? {
            Role::Behavior(b) => {
                if current.is_some() {
                    return Err(Error::Sequence(format!("behavior token at {i} interrupts an unfinished tuple")));
                }
                current = Some(b);
                next_digit = 0;
                out.push(0);
            }
            Role::Digit(p, _) => match current {
                Some(b) if p == next_digit => {
                    out.push(b as usize + 1);
                    next_digit += 1;
                    if next_digit == m {
                        current = None;
                    }
                }
                _ => {
                    return Err(Error::Sequence(format!(
                        "digit token at {i} (position {p}) is not preceded by its tuple's behavior and digits"
                    )))
                }
            },
            other => {
                if current.is_some() {
                    return Err(Error::Sequence(format!("{other:?} at {i} interrupts an unfinished tuple")));
                }
                out.push(0);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ln {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Attn {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct EncLayer {
    ln1: Ln,
    attn: Attn,
    ln2: Ln,
    ffn: Ffn,
    inject: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct DecLayer {
    ln1: Ln,
    self_attn: Attn,
    ln2: Ln,
    cross: Attn,
    ln3: Ln,
    experts: Vec<Ffn>,
    inject: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    tok: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    beh: Option<ParamId>,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    enc_ln: Ln,
    dec_ln: Ln,
    out_w: ParamId,
    out_b: ParamId,
}

struct Builder<'a> {
    params: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.params.add(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.params.add(name, Tensor::zeros(shape))
    }

    fn ln(&mut self, name: &str, d: usize) -> Ln {
        Ln {
            g: self
                .params
                .add(format!("{name}.g"), Tensor::full(&[d], 1.0)),
            b: self.zeros(format!("{name}.b"), &[d]),
        }
    }

    fn attn(&mut self, name: &str, d: usize, a: usize, depth: usize) -> Attn {
        let s_in = 1.0 / (d as f64).sqrt();
        let s_out = 1.0 / ((a * 2 * depth) as f64).sqrt();
        Attn {
            wq: self.normal(format!("{name}.wq"), &[d, a], s_in),
            wk: self.normal(format!("{name}.wk"), &[d, a], s_in),
            wv: self.normal(format!("{name}.wv"), &[d, a], s_in),
            wo: self.normal(format!("{name}.wo"), &[a, d], s_out),
        }
    }

    fn ffn(&mut self, name: &str, input: usize, inner: usize, d: usize, depth: usize) -> Ffn {
        Ffn {
            w1: self.normal(
                format!("{name}.w1"),
                &[input, inner],
                (2.0 / input as f64).sqrt(),
            ),
            b1: self.zeros(format!("{name}.b1"), &[inner]),
            w2: self.normal(
                format!("{name}.w2"),
                &[inner, d],
                1.0 / ((inner * 2 * depth) as f64).sqrt(),
            ),
            b2: self.zeros(format!("{name}.b2"), &[d]),
        }
    }
}

/// Training-time dropout state.
pub struct Dropout {
    pub p: f64,
    pub rng: ChaCha8Rng,
}

/// Padded batch of model sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub encoder: Vec<u32>,
    pub encoder_lens: Vec<usize>,
    pub encoder_width: usize,
    pub decoder_input: Vec<u32>,
    pub decoder_target: Vec<u32>,
    pub decoder_len: usize,
}

impl Batch {
    pub fn new(examples: &[&crate::tokenizer::ModelSequence]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Sequence("empty batch".into()))?;
        let t = first.decoder_input.len();
        let width = examples.iter().map(|e| e.encoder.len()).max().unwrap_or(0);
        let mut b = Batch {
            encoder: Vec::with_capacity(examples.len() * width),
            encoder_lens: Vec::with_capacity(examples.len()),
            encoder_width: width,
            decoder_input: Vec::with_capacity(examples.len() * t),
            decoder_target: Vec::with_capacity(examples.len() * t),
            decoder_len: t,
        };
        for e in examples {
            if e.decoder_input.len() != t || e.decoder_target.len() != t {
                return Err(Error::Sequence(
                    "decoder lengths differ within a batch".into(),
                ));
            }
            b.encoder.extend_from_slice(&e.encoder);
            b.encoder
                .extend(std::iter::repeat_n(PAD, width - e.encoder.len()));
            b.encoder_lens.push(e.encoder.len());
            b.decoder_input.extend_from_slice(&e.decoder_input);
            b.decoder_target.extend_from_slice(&e.decoder_target);
        }
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.encoder_lens.len()
    }
}

/// Encoder output of a batch, with the cross-attention keys and values of
/// every decoder layer precomputed.
pub struct EncodedBatch {
    cross_k: Vec<Tensor>,
    cross_v: Vec<Tensor>,
    lens: Vec<usize>,
    width: usize,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    vocab: Vocabulary,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    ids: Ids,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let a = config.attn_width();
        let v = vocab.size();
        let t = 1 + vocab.tuple_len();
        let depth = config.encoder_layers + config.decoder_layers;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut bld = Builder {
            params: ParamStore::new(),
            rng: &mut rng,
        };
        let tok = bld.normal("tok_emb".into(), &[v, d], 0.5);
        let enc_pos = bld.normal("enc_pos".into(), &[config.max_encoder_len, d], 0.5);
        let dec_pos = bld.normal("dec_pos".into(), &[t, d], 0.5);
        let beh = (config.n_bi > 0).then(|| {
            bld.normal(
                "beh_emb".into(),
                &[vocab.n_behaviors() + 1, config.d_beh],
                0.5,
            )
        });
        let ffn_in = |l: usize| d + if l < config.n_bi { config.d_beh } else { 0 };
        let enc = (0..config.encoder_layers)
            .map(|l| EncLayer {
                ln1: bld.ln(&format!("enc.{l}.ln1"), d),
                attn: bld.attn(&format!("enc.{l}.attn"), d, a, depth),
                ln2: bld.ln(&format!("enc.{l}.ln2"), d),
                ffn: bld.ffn(&format!("enc.{l}.ffn"), ffn_in(l), config.d_inner, d, depth),
                inject: l < config.n_bi,
            })
            .collect();
        let dec = (0..config.decoder_layers)
            .map(|l| DecLayer {
                ln1: bld.ln(&format!("dec.{l}.ln1"), d),
                self_attn: bld.attn(&format!("dec.{l}.self"), d, a, depth),
                ln2: bld.ln(&format!("dec.{l}.ln2"), d),
                cross: bld.attn(&format!("dec.{l}.cross"), d, a, depth),
                ln3: bld.ln(&format!("dec.{l}.ln3"), d),
                experts: (0..config.experts)
                    .map(|e| {
                        bld.ffn(
                            &format!("dec.{l}.expert.{e}"),
                            ffn_in(l),
                            config.d_inner,
                            d,
                            depth,
                        )
                    })
                    .collect(),
                inject: l < config.n_bi,
            })
            .collect();
        let enc_ln = bld.ln("enc.final_ln", d);
        let dec_ln = bld.ln("dec.final_ln", d);
        let out_w = bld.normal("out.w".into(), &[d, v], 0.02);
        let out_b = bld.zeros("out.b".into(), &[v]);
        let params = bld.params;
        Ok(Self {
            config,
            vocab,
            params,
            ids: Ids {
                tok,
                enc_pos,
                dec_pos,
                beh,
                enc,
                dec,
                enc_ln,
                dec_ln,
                out_w,
                out_b,
            },
        })
    }

    /// `[BOS] + tuple` length.
    pub fn decoder_len(&self) -> usize {
        1 + self.vocab.tuple_len()
    }

    pub fn route(&self, token: u32) -> Result<usize> {
        Ok(position_route(
            self.vocab.role(token)?,
            self.vocab.m(),
            self.config.experts,
        ))
    }

    /// Parameter ids of expert `e` in decoder layer `layer` (w1, b1, w2, b2).
    pub fn expert_params(&self, layer: usize, e: usize) -> [ParamId; 4] {
        let f = self.ids.dec[layer].experts[e];
        [f.w1, f.b1, f.w2, f.b2]
    }

    pub fn behavior_table(&self) -> Option<ParamId> {
        self.ids.beh
    }

    fn ln(&self, g: &mut Graph, x: Var, ln: Ln) -> Result<Var> {
        let gv = g.param(&self.params, ln.g);
        let bv = g.param(&self.params, ln.b);
        g.layer_norm(x, gv, bv)
    }

    fn heads(&self, g: &mut Graph, x: Var, b: usize, t: usize) -> Result<Var> {
        let (h, hd) = (self.config.heads, self.config.head_dim);
        let y = g.swap_axes_12(x, [b, t, h, hd])?;
        g.reshape(y, &[b * h, t, hd])
    }

    fn kv(&self, g: &mut Graph, src: Var, at: Attn) -> Result<(Var, Var)> {
        let wk = g.param(&self.params, at.wk);
        let wv = g.param(&self.params, at.wv);
        Ok((g.matmul(src, wk)?, g.matmul(src, wv)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        q_src: Var,
        kv: (Var, Var),
        at: Attn,
        b: usize,
        tq: usize,
        tk: usize,
        mask: &[bool],
    ) -> Result<Var> {
        let (h, hd) = (self.config.heads, self.config.head_dim);
        let wq = g.param(&self.params, at.wq);
        let q = g.matmul(q_src, wq)?;
        let q = self.heads(g, q, b, tq)?;
        let k = self.heads(g, kv.0, b, tk)?;
        let v = self.heads(g, kv.1, b, tk)?;
        let s = g.batch_matmul(q, k, true)?;
        let s = g.scale(s, 1.0 / (hd as f64).sqrt());
        let p = g.masked_softmax(s, mask, h)?;
        let ctx = g.batch_matmul(p, v, false)?;
        let ctx = g.swap_axes_12(ctx, [b, h, tq, hd])?;
        let ctx = g.reshape(ctx, &[b * tq, h * hd])?;
        let wo = g.param(&self.params, at.wo);
        g.matmul(ctx, wo)
    }

    fn apply_ffn(&self, g: &mut Graph, x: Var, f: Ffn) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(&self.params, f.w1),
            g.param(&self.params, f.b1),
            g.param(&self.params, f.w2),
            g.param(&self.params, f.b2),
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        g.add_bias(o, b2)
    }

    /// FFN block input is `x` or `concat(x, behavior_embedding[ctx])`; with
    /// several experts each row is processed only by the expert in `routes`.
    fn ffn_block(
        &self,
        g: &mut Graph,
        x: Var,
        beh_ctx: Option<&[usize]>,
        experts: &[Ffn],
        routes: Option<&[usize]>,
    ) -> Result<Var> {
        let n = g.value(x).rows();
        let input = match (beh_ctx, self.ids.beh) {
            (Some(ctx), Some(table)) => {
                let tv = g.param(&self.params, table);
                let e = g.gather_rows(tv, ctx)?;
                g.concat_cols(x, e)?
            }
            _ => x,
        };
        let routes = match routes {
            Some(r) if experts.len() > 1 => r,
            _ => return self.apply_ffn(g, input, experts[0]),
        };
        let mut out: Option<Var> = None;
        for (e, &f) in experts.iter().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| routes[i] == e).collect();
            if idx.is_empty() {
                continue;
            }
            let xin = g.gather_rows(input, &idx)?;
            let y = self.apply_ffn(g, xin, f)?;
            let y = g.scatter_rows(y, &idx, n)?;
            out = Some(match out {
                None => y,
                Some(o) => g.add(o, y)?,
            });
        }
        out.ok_or_else(|| Error::Sequence("no tokens to route".into()))
    }

    fn dropout(&self, g: &mut Graph, x: Var, drop: &mut Option<&mut Dropout>) -> Result<Var> {
        match drop {
            Some(d) if d.p > 0.0 => {
                let n = g.value(x).len();
                let keep = 1.0 / (1.0 - d.p);
                let mask = (0..n)
                    .map(|_| {
                        if d.rng.random::<f64>() < d.p {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                g.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Encoder over right-padded `tokens` (`b` rows of `width`).
    fn encode_graph(
        &self,
        g: &mut Graph,
        tokens: &[u32],
        lens: &[usize],
        width: usize,
        drop: &mut Option<&mut Dropout>,
    ) -> Result<Var> {
        let b = lens.len();
        let limit = self.config.max_encoder_len;
        let mut positions = Vec::with_capacity(b * width);
        let mut ctx = Vec::with_capacity(b * width);
        let mut mask = Vec::with_capacity(b * width * width);
        for (r, &len) in lens.iter().enumerate() {
            if len > limit {
                return Err(Error::TooLong { len, limit });
            }
            if len == 0 {
                return Err(Error::Sequence("empty encoder input".into()));
            }
            let row = &tokens[r * width..(r + 1) * width];
            positions.extend((0..width).map(|i| if i < len { len - 1 - i } else { 0 }));
            ctx.extend(behavior_context(&self.vocab, row)?);
            for _ in 0..width {
                mask.extend((0..width).map(|j| j < len));
            }
        }
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let tok = g.param(&self.params, self.ids.tok);
        let x = g.gather_rows(tok, &idx)?;
        let pos_table = g.param(&self.params, self.ids.enc_pos);
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut x = g.add(x, pos)?;
        for layer in &self.ids.enc {
            let h = self.ln(g, x, layer.ln1)?;
            let kv = self.kv(g, h, layer.attn)?;
            let a = self.attention(g, h, kv, layer.attn, b, width, width, &mask)?;
            let a = self.dropout(g, a, drop)?;
            x = g.add(x, a)?;
            let h = self.ln(g, x, layer.ln2)?;
            let f = self.ffn_block(
                g,
                h,
                layer.inject.then_some(&ctx[..]),
                std::slice::from_ref(&layer.ffn),
                None,
            )?;
            let f = self.dropout(g, f, drop)?;
            x = g.add(x, f)?;
        }
        self.ln(g, x, self.ids.enc_ln)
    }

    /// Decoder over `b` rows of `t` tokens each; `cross[l]` holds the projected
    /// encoder keys and values for layer `l` (`b·enc_width` rows).
    #[allow(clippy::too_many_arguments)]
    fn decode_graph(
        &self,
        g: &mut Graph,
        tokens: &[u32],
        b: usize,
        t: usize,
        cross: &[(Var, Var)],
        enc_lens: &[usize],
        enc_width: usize,
        drop: &mut Option<&mut Dropout>,
    ) -> Result<Var> {
        if t > self.decoder_len() {
            return Err(Error::TooLong {
                len: t,
                limit: self.decoder_len(),
            });
        }
        let mut ctx = Vec::with_capacity(b * t);
        let mut routes = Vec::with_capacity(b * t);
        for r in 0..b {
            let row = &tokens[r * t..(r + 1) * t];
            ctx.extend(behavior_context(&self.vocab, row)?);
            for &tok in row {
                routes.push(self.route(tok)?);
            }
        }
        let mut causal = Vec::with_capacity(b * t * t);
        let mut cross_mask = Vec::with_capacity(b * t * enc_width);
        for &len in enc_lens {
            for i in 0..t {
                causal.extend((0..t).map(|j| j <= i));
                cross_mask.extend((0..enc_width).map(|j| j < len));
            }
        }
        let idx: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let tok = g.param(&self.params, self.ids.tok);
        let x = g.gather_rows(tok, &idx)?;
        let pos_table = g.param(&self.params, self.ids.dec_pos);
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut x = g.add(x, pos)?;
        for (l, layer) in self.ids.dec.iter().enumerate() {
            let h = self.ln(g, x, layer.ln1)?;
            let kv = self.kv(g, h, layer.self_attn)?;
            let a = self.attention(g, h, kv, layer.self_attn, b, t, t, &causal)?;
            let a = self.dropout(g, a, drop)?;
            x = g.add(x, a)?;
            let h = self.ln(g, x, layer.ln2)?;
            let c = self.attention(g, h, cross[l], layer.cross, b, t, enc_width, &cross_mask)?;
            let c = self.dropout(g, c, drop)?;
            x = g.add(x, c)?;
            let h = self.ln(g, x, layer.ln3)?;
            let f = self.ffn_block(
                g,
                h,
                layer.inject.then_some(&ctx[..]),
                &layer.experts,
                Some(&routes),
            )?;
            let f = self.dropout(g, f, drop)?;
            x = g.add(x, f)?;
        }
        self.ln(g, x, self.ids.dec_ln)
    }

    fn project_out(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let w = g.param(&self.params, self.ids.out_w);
        let bias = g.param(&self.params, self.ids.out_b);
        let logits = g.matmul(h, w)?;
        g.add_bias(logits, bias)
    }

    /// Logits for every decoder position of every row: `[b·t × V]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &Batch,
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let b = batch.size();
        let mem = self.encode_graph(
            g,
            &batch.encoder,
            &batch.encoder_lens,
            batch.encoder_width,
            &mut drop,
        )?;
        let mut cross = Vec::with_capacity(self.ids.dec.len());
        for layer in &self.ids.dec {
            cross.push(self.kv(g, mem, layer.cross)?);
        }
        let h = self.decode_graph(
            g,
            &batch.decoder_input,
            b,
            batch.decoder_len,
            &cross,
            &batch.encoder_lens,
            batch.encoder_width,
            &mut drop,
        )?;
        self.project_out(g, h)
    }

    /// Mean next-token cross-entropy over non-PAD decoder targets.
    pub fn loss(
        &self,
        g: &mut Graph,
        batch: &Batch,
        drop: Option<&mut Dropout>,
    ) -> Result<CrossEntropyLoss> {
        let logits = self.forward(g, batch, drop)?;
        let targets: Vec<usize> = batch.decoder_target.iter().map(|&t| t as usize).collect();
        g.softmax_cross_entropy(logits, &targets, PAD as usize)
    }

    /// Logits `[t × V]` for a single example.
    pub fn logits(&self, encoder: &[u32], decoder_input: &[u32]) -> Result<Tensor> {
        let batch = Batch {
            encoder: encoder.to_vec(),
            encoder_lens: vec![encoder.len()],
            encoder_width: encoder.len(),
            decoder_input: decoder_input.to_vec(),
            decoder_target: vec![PAD; decoder_input.len()],
            decoder_len: decoder_input.len(),
        };
        let mut g = Graph::new();
        let out = self.forward(&mut g, &batch, None)?;
        Ok(g.value(out).clone())
    }

    pub fn encode_batch(&self, sequences: &[Vec<u32>]) -> Result<EncodedBatch> {
        let width = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(sequences.len() * width);
        let mut lens = Vec::with_capacity(sequences.len());
        for s in sequences {
            tokens.extend_from_slice(s);
            tokens.extend(std::iter::repeat_n(PAD, width - s.len()));
            lens.push(s.len());
        }
        let mut g = Graph::new();
        let mem = self.encode_graph(&mut g, &tokens, &lens, width, &mut None)?;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &self.ids.dec {
            let (k, v) = self.kv(&mut g, mem, layer.cross)?;
            cross_k.push(g.value(k).clone());
            cross_v.push(g.value(v).clone());
        }
        Ok(EncodedBatch {
            cross_k,
            cross_v,
            lens,
            width,
        })
    }

    /// Log-probabilities over the whole vocabulary for the token following
    /// each prefix. `owners[i]` selects the encoded example prefix `i`
    /// conditions on; all prefixes must have equal length.
    pub fn next_log_probs(
        &self,
        enc: &EncodedBatch,
        owners: &[usize],
        prefixes: &[Vec<u32>],
    ) -> Result<Vec<Vec<f64>>> {
        let n = prefixes.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let t = prefixes[0].len();
        if prefixes.iter().any(|p| p.len() != t) || owners.len() != n {
            return Err(Error::Sequence(
                "prefixes must share one length and have one owner each".into(),
            ));
        }
        let w = enc.width;
        let a = self.config.attn_width();
        let mut g = Graph::new();
        let mut cross = Vec::with_capacity(self.ids.dec.len());
        for l in 0..self.ids.dec.len() {
            let mut kd = Vec::with_capacity(n * w * a);
            let mut vd = Vec::with_capacity(n * w * a);
            for &o in owners {
                kd.extend_from_slice(&enc.cross_k[l].data()[o * w * a..(o + 1) * w * a]);
                vd.extend_from_slice(&enc.cross_v[l].data()[o * w * a..(o + 1) * w * a]);
            }
            let k = g.constant(Tensor::new(vec![n * w, a], kd)?);
            let v = g.constant(Tensor::new(vec![n * w, a], vd)?);
            cross.push((k, v));
        }
        let lens: Vec<usize> = owners.iter().map(|&o| enc.lens[o]).collect();
        let tokens: Vec<u32> = prefixes.iter().flatten().copied().collect();
        let h = self.decode_graph(&mut g, &tokens, n, t, &cross, &lens, w, &mut None)?;
        let last: Vec<usize> = (0..n).map(|r| r * t + t - 1).collect();
        let h = g.gather_rows(h, &last)?;
        let logits = self.project_out(&mut g, h)?;
        let lv = g.value(logits);
        Ok((0..n).map(|r| kernels::log_softmax(lv.row(r))).collect())
    }

    pub fn config_hash(&self) -> String {
        json_hash(&(&self.config, &self.vocab)).expect("config serializes")
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = Meta {
            model: self.config.clone(),
            vocab: self.vocab.clone(),
            extra,
        };
        let mut c = Checkpoint::new(
            self.config_hash(),
            serde_json::to_value(meta).expect("metadata serializes"),
        );
        c.push_params("model.", &self.params);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_value(c.metadata.clone())?;
        let mut model = Self::new(meta.model, meta.vocab)?;
        c.load_params("model.", &mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
