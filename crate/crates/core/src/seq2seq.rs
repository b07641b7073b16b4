//! Attention-based LSTM encoder-decoder.
//!
//! Single-layer unidirectional LSTMs on both sides. At each decoder step the
//! LSTM consumes `[h̃_{t-1}; e(y_{t-1})]` (input feeding), scores every encoder
//! state with the bilinear "general" form `h_tᵀ W_a h_i`, and mixes the
//! context into the output vector `h̃_t = tanh(W_o [h_t; c_t])`. The vocab
//! head turns `h̃_t` into `softmax(W_s h̃_t)`; the value head into `wᵀ h̃_t`.
//!
//! The decoder hidden state starts at the last encoder hidden state, the
//! decoder cell and the first fed-back vector start at zero, and the first
//! input token is BOS.

use serde::{Deserialize, Serialize};

use crate::diffcore::{NodeId, ParamId, ParamStore, SeededRng, Tape, Tensor};
use crate::error::{ensure, Result};

pub const EOS: u32 = 0;
pub const BOS: u32 = 1;
pub const UNK: u32 = 2;

/// Longest accepted source sentence.
pub const MAX_SOURCE_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    SoftmaxVocab,
    ScalarValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Hard cap on decoded length; the per-sentence limit is
    /// `min(max_decode_len, 2 * len(x) + 5)`.
    pub max_decode_len: usize,
    pub head: Head,
}

impl Seq2SeqConfig {
    pub const DEFAULT_MAX_DECODE_LEN: usize = 2 * MAX_SOURCE_LEN + 5;

    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Seq2SeqConfig {
            src_vocab_size,
            tgt_vocab_size,
            embed_dim,
            hidden_dim,
            max_decode_len: Self::DEFAULT_MAX_DECODE_LEN,
            head: Head::SoftmaxVocab,
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.src_vocab_size >= 1
                && self.tgt_vocab_size >= 1
                && self.embed_dim >= 1
                && self.hidden_dim >= 1
                && self.max_decode_len >= 1,
            "all model dimensions must be at least 1: {self:?}"
        );
        Ok(())
    }

    pub fn decode_limit(&self, src_len: usize) -> usize {
        self.max_decode_len.min(2 * src_len + 5)
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (e, h) = (self.embed_dim, self.hidden_dim);
        let encoder = self.src_vocab_size * e + 4 * h * (e + h + 1);
        let decoder = self.tgt_vocab_size * e + 4 * h * ((h + e) + h + 1);
        let attention = h * h + h * 2 * h;
        let head = match self.head {
            Head::SoftmaxVocab => self.tgt_vocab_size * h,
            Head::ScalarValue => h,
        };
        encoder + decoder + attention + head
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    enc_embed: ParamId,
    enc_w_ih: ParamId,
    enc_w_hh: ParamId,
    enc_bias: ParamId,
    dec_embed: ParamId,
    dec_w_ih: ParamId,
    dec_w_hh: ParamId,
    dec_bias: ParamId,
    w_a: ParamId,
    w_o: ParamId,
    head: ParamId,
}

impl Layout {
    fn resolve(store: &ParamStore, head: Head) -> Result<Layout> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| crate::Error::contract(format!("missing parameter {name:?}")))
        };
        Ok(Layout {
            enc_embed: get("enc.embed")?,
            enc_w_ih: get("enc.lstm.w_ih")?,
            enc_w_hh: get("enc.lstm.w_hh")?,
            enc_bias: get("enc.lstm.bias")?,
            dec_embed: get("dec.embed")?,
            dec_w_ih: get("dec.lstm.w_ih")?,
            dec_w_hh: get("dec.lstm.w_hh")?,
            dec_bias: get("dec.lstm.bias")?,
            w_a: get("attn.w_a")?,
            w_o: get("attn.w_o")?,
            head: get(match head {
                Head::SoftmaxVocab => "out.w_s",
                Head::ScalarValue => "value.w",
            })?,
        })
    }
}

/// Encoder-decoder model together with its parameters.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub config: Seq2SeqConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn uniform_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform() * 0.2 - 0.1;
    }
    t
}

fn lstm_bias(hidden: usize) -> Tensor {
    let mut b = Tensor::zeros(&[4 * hidden]);
    // gate order: input, forget, candidate, output
    b.data_mut()[hidden..2 * hidden].fill(1.0);
    b
}

/// Fresh parameters: weights uniform in [-0.1, 0.1], biases zero except the
/// LSTM forget gates, which start at 1.
pub fn init_params(config: &Seq2SeqConfig, rng: &mut SeededRng) -> Result<ParamStore> {
    config.validate()?;
    let (e, h) = (config.embed_dim, config.hidden_dim);
    let mut s = ParamStore::new();
    s.insert("enc.embed", uniform_tensor(&[config.src_vocab_size, e], rng))?;
    s.insert("enc.lstm.w_ih", uniform_tensor(&[4 * h, e], rng))?;
    s.insert("enc.lstm.w_hh", uniform_tensor(&[4 * h, h], rng))?;
    s.insert("enc.lstm.bias", lstm_bias(h))?;
    s.insert("dec.embed", uniform_tensor(&[config.tgt_vocab_size, e], rng))?;
    s.insert("dec.lstm.w_ih", uniform_tensor(&[4 * h, h + e], rng))?;
    s.insert("dec.lstm.w_hh", uniform_tensor(&[4 * h, h], rng))?;
    s.insert("dec.lstm.bias", lstm_bias(h))?;
    s.insert("attn.w_a", uniform_tensor(&[h, h], rng))?;
    s.insert("attn.w_o", uniform_tensor(&[h, 2 * h], rng))?;
    match config.head {
        Head::SoftmaxVocab => s.insert("out.w_s", uniform_tensor(&[config.tgt_vocab_size, h], rng))?,
        Head::ScalarValue => s.insert("value.w", uniform_tensor(&[h], rng))?,
    };
    Ok(s)
}

/// Encoder output held on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `[src_len, hidden]`, one row per source token.
    pub memory: NodeId,
    memory_t: NodeId,
    /// Last encoder hidden state.
    pub summary: NodeId,
    pub src_len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: NodeId,
    pub cell: NodeId,
    /// Previous output vector `h̃_{t-1}`, fed into the next LSTM input.
    pub feed: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub enum HeadOutput {
    /// Log-probabilities over the target vocabulary.
    LogProbs(NodeId),
    /// Scalar value estimate.
    Value(NodeId),
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub head: HeadOutput,
    /// `h̃_t`
    pub output_vector: NodeId,
    pub attention: NodeId,
}

impl StepOutput {
    pub fn log_probs(&self) -> NodeId {
        match self.head {
            HeadOutput::LogProbs(n) => n,
            HeadOutput::Value(_) => panic!("value head has no log-probabilities"),
        }
    }

    pub fn value(&self) -> NodeId {
        match self.head {
            HeadOutput::Value(n) => n,
            HeadOutput::LogProbs(_) => panic!("vocab head has no value output"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTranslation {
    pub tokens: Vec<u32>,
    /// `log P(ŷ_t | ŷ_<t, x)` for each emitted token.
    pub log_probs: Vec<f64>,
    /// `h̃_t` for each step.
    pub output_vectors: Vec<Vec<f64>>,
}

impl SampledTranslation {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Tokens with a trailing EOS removed.
    pub fn content(&self) -> &[u32] {
        strip_eos(&self.tokens)
    }
}

pub fn strip_eos(tokens: &[u32]) -> &[u32] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Seq2Seq {
    pub fn new(config: Seq2SeqConfig, rng: &mut SeededRng) -> Result<Self> {
        let params = init_params(&config, rng)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: Seq2SeqConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&params, config.head)?;
        let model = Seq2Seq { config, params, layout };
        ensure!(
            model.params.num_scalars() == config.param_count(),
            "parameter shapes do not match config {config:?}"
        );
        Ok(model)
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(self)
    }

    pub fn check_source(&self, src: &[u32]) -> Result<()> {
        ensure!(!src.is_empty(), "source sentence is empty");
        ensure!(
            src.len() <= MAX_SOURCE_LEN,
            "source has {} tokens, limit is {MAX_SOURCE_LEN}",
            src.len()
        );
        if let Some(&bad) = src.iter().find(|&&t| t as usize >= self.config.src_vocab_size) {
            return Err(crate::Error::contract(format!(
                "source token {bad} outside vocabulary of {}",
                self.config.src_vocab_size
            )));
        }
        Ok(())
    }

    pub fn check_target(&self, tgt: &[u32]) -> Result<()> {
        ensure!(!tgt.is_empty(), "target sentence is empty");
        if let Some(&bad) = tgt.iter().find(|&&t| t as usize >= self.config.tgt_vocab_size) {
            return Err(crate::Error::contract(format!(
                "target token {bad} outside vocabulary of {}",
                self.config.tgt_vocab_size
            )));
        }
        Ok(())
    }

    /// Encoder memory `[len(x), hidden]` and the final hidden state.
    pub fn encode(&self, src: &[u32]) -> Result<(Tensor, Tensor)> {
        let mut g = self.graph();
        let enc = g.encode(src)?;
        Ok((g.tape.value(enc.memory).clone(), g.tape.value(enc.summary).clone()))
    }

    /// Next-token distribution after teacher-forcing `prefix`.
    pub fn step_distribution(&self, src: &[u32], prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_target_prefix(prefix)?;
        let mut g = self.graph();
        let enc = g.encode(src)?;
        let mut state = g.initial_state(&enc);
        let mut prev = BOS;
        for &tok in prefix {
            let (_, next) = g.decode_step(&enc, &state, prev);
            state = next;
            prev = tok;
        }
        let (out, _) = g.decode_step(&enc, &state, prev);
        Ok(g.tape.value(out.log_probs()).data().iter().map(|l| l.exp()).collect())
    }

    fn check_target_prefix(&self, prefix: &[u32]) -> Result<()> {
        ensure!(
            prefix.iter().all(|&t| (t as usize) < self.config.tgt_vocab_size),
            "prefix token outside target vocabulary"
        );
        Ok(())
    }

    /// `Σ_t log P(y_t | y_<t, x)` under teacher forcing. `tgt` must end with EOS.
    pub fn sequence_log_prob(&self, src: &[u32], tgt: &[u32]) -> Result<f64> {
        let mut g = self.graph();
        let total = g.sequence_log_prob(src, tgt)?;
        Ok(g.tape.scalar(total))
    }

    pub fn sample(&self, src: &[u32], rng: &mut SeededRng, max_len: usize) -> Result<SampledTranslation> {
        let mut g = self.graph();
        Ok(g.sample(src, rng, max_len)?.translation)
    }

    pub fn greedy_decode(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
        ensure!(self.config.head == Head::SoftmaxVocab, "greedy decoding needs the vocab head");
        let mut g = self.graph();
        let enc = g.encode(src)?;
        let mut state = g.initial_state(&enc);
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (step, next) = g.decode_step(&enc, &state, prev);
            let tok = argmax(g.tape.value(step.log_probs()).data()) as u32;
            out.push(tok);
            if tok == EOS {
                break;
            }
            state = next;
            prev = tok;
        }
        Ok(out)
    }

    /// Value-head outputs `V(ŷ_<t)` for `t = 1..=len(ŷ)`.
    pub fn values(&self, src: &[u32], translation: &[u32]) -> Result<Vec<f64>> {
        let mut g = self.graph();
        let nodes = g.values(src, translation)?;
        Ok(nodes.iter().map(|&n| g.tape.scalar(n)).collect())
    }

    /// Teacher-forced `h̃_t` vectors; identical math for either head.
    pub fn output_vectors(&self, src: &[u32], inputs: &[u32]) -> Result<Vec<Vec<f64>>> {
        let mut g = self.graph();
        let enc = g.encode(src)?;
        let mut state = g.initial_state(&enc);
        let mut out = Vec::new();
        for &tok in inputs {
            let (step, next) = g.decode_step(&enc, &state, tok);
            out.push(g.tape.value(step.output_vector).data().to_vec());
            state = next;
        }
        Ok(out)
    }
}

/// A forward pass in progress: one tape plus the model's parameter nodes.
pub struct Graph<'m> {
    model: &'m Seq2Seq,
    pub tape: Tape,
    wa_t: Option<NodeId>,
}

/// Result of sampling on a tape, keeping the per-step log-probability nodes
/// for later differentiation.
pub struct SampledGraph {
    pub translation: SampledTranslation,
    pub log_prob_nodes: Vec<NodeId>,
}

impl<'m> Graph<'m> {
    pub fn new(model: &'m Seq2Seq) -> Self {
        Graph {
            model,
            tape: Tape::new(),
            wa_t: None,
        }
    }

    pub fn model(&self) -> &Seq2Seq {
        self.model
    }

    fn p(&mut self, id: ParamId) -> NodeId {
        self.tape.param(&self.model.params, id)
    }

    fn lstm(
        &mut self,
        w_ih: ParamId,
        w_hh: ParamId,
        bias: ParamId,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> (NodeId, NodeId) {
        let hd = self.model.config.hidden_dim;
        let (w_ih, w_hh, bias) = (self.p(w_ih), self.p(w_hh), self.p(bias));
        let t = &mut self.tape;
        let a = t.matvec(w_ih, x);
        let b = t.matvec(w_hh, h);
        let ab = t.add(a, b);
        let gates = t.add(ab, bias);
        let i = t.slice(gates, 0, hd);
        let i = t.sigmoid(i);
        let f = t.slice(gates, hd, hd);
        let f = t.sigmoid(f);
        let g = t.slice(gates, 2 * hd, hd);
        let g = t.tanh(g);
        let o = t.slice(gates, 3 * hd, hd);
        let o = t.sigmoid(o);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c_next = t.add(fc, ig);
        let tc = t.tanh(c_next);
        let h_next = t.mul(o, tc);
        (h_next, c_next)
    }

    fn zeros(&mut self) -> NodeId {
        let hd = self.model.config.hidden_dim;
        self.tape.input(Tensor::zeros(&[hd]))
    }

    pub fn encode(&mut self, src: &[u32]) -> Result<Encoded> {
        self.model.check_source(src)?;
        let l = self.model.layout;
        let embed = self.p(l.enc_embed);
        let mut h = self.zeros();
        let mut c = self.zeros();
        let mut rows = Vec::with_capacity(src.len());
        for &tok in src {
            let x = self.tape.row(embed, tok as usize);
            let (h2, c2) = self.lstm(l.enc_w_ih, l.enc_w_hh, l.enc_bias, x, h, c);
            h = h2;
            c = c2;
            rows.push(h);
        }
        let memory = self.tape.stack_rows(&rows);
        let memory_t = self.tape.transpose(memory);
        Ok(Encoded {
            memory,
            memory_t,
            summary: h,
            src_len: src.len(),
        })
    }

    pub fn initial_state(&mut self, enc: &Encoded) -> DecoderState {
        DecoderState {
            hidden: enc.summary,
            cell: self.zeros(),
            feed: self.zeros(),
        }
    }

    /// One decoder step consuming `prev_token`.
    pub fn decode_step(&mut self, enc: &Encoded, state: &DecoderState, prev_token: u32) -> (StepOutput, DecoderState) {
        assert!(
            (prev_token as usize) < self.model.config.tgt_vocab_size,
            "previous token {prev_token} outside target vocabulary"
        );
        let l = self.model.layout;
        let embed = self.p(l.dec_embed);
        let e = self.tape.row(embed, prev_token as usize);
        let x = self.tape.concat(&[state.feed, e]);
        let (h, c) = self.lstm(l.dec_w_ih, l.dec_w_hh, l.dec_bias, x, state.hidden, state.cell);

        let wa_t = match self.wa_t {
            Some(n) => n,
            None => {
                let wa = self.p(l.w_a);
                let n = self.tape.transpose(wa);
                self.wa_t = Some(n);
                n
            }
        };
        // score_i = hᵀ W_a m_i = m_i · (W_aᵀ h)
        let query = self.tape.matvec(wa_t, h);
        let scores = self.tape.matvec(enc.memory, query);
        let attention = self.tape.softmax(scores);
        let context = self.tape.matvec(enc.memory_t, attention);
        let hc = self.tape.concat(&[h, context]);
        let w_o = self.p(l.w_o);
        let pre = self.tape.matvec(w_o, hc);
        let out = self.tape.tanh(pre);

        let head_w = self.p(l.head);
        let head = match self.model.config.head {
            Head::SoftmaxVocab => {
                let logits = self.tape.matvec(head_w, out);
                HeadOutput::LogProbs(self.tape.log_softmax(logits))
            }
            Head::ScalarValue => HeadOutput::Value(self.tape.dot(head_w, out)),
        };
        (
            StepOutput {
                head,
                output_vector: out,
                attention,
            },
            DecoderState {
                hidden: h,
                cell: c,
                feed: out,
            },
        )
    }

    /// Per-step log-probability nodes of `tgt` under teacher forcing.
    pub fn step_log_probs(&mut self, src: &[u32], tgt: &[u32]) -> Result<Vec<NodeId>> {
        self.model.check_target(tgt)?;
        let enc = self.encode(src)?;
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut nodes = Vec::with_capacity(tgt.len());
        for &tok in tgt {
            let (step, next) = self.decode_step(&enc, &state, prev);
            nodes.push(self.tape.pick(step.log_probs(), tok as usize));
            state = next;
            prev = tok;
        }
        Ok(nodes)
    }

    /// Scalar node holding `log P(y | x)`.
    pub fn sequence_log_prob(&mut self, src: &[u32], tgt: &[u32]) -> Result<NodeId> {
        ensure!(
            tgt.last() == Some(&EOS),
            "target must end with EOS (id {EOS})"
        );
        let steps = self.step_log_probs(src, tgt)?;
        let all = self.tape.concat(&steps);
        Ok(self.tape.sum(all))
    }

    /// Ancestral sampling until EOS or `max_len` tokens.
    pub fn sample(&mut self, src: &[u32], rng: &mut SeededRng, max_len: usize) -> Result<SampledGraph> {
        ensure!(max_len >= 1, "max_len must be at least 1");
        ensure!(self.model.config.head == Head::SoftmaxVocab, "sampling needs the vocab head");
        let enc = self.encode(src)?;
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut translation = SampledTranslation {
            tokens: Vec::new(),
            log_probs: Vec::new(),
            output_vectors: Vec::new(),
        };
        let mut nodes = Vec::new();
        let mut probs = Vec::with_capacity(self.model.config.tgt_vocab_size);
        for _ in 0..max_len {
            let (step, next) = self.decode_step(&enc, &state, prev);
            let lp = step.log_probs();
            probs.clear();
            probs.extend(self.tape.value(lp).data().iter().map(|l| l.exp()));
            let tok = sample_index(&probs, rng);
            let node = self.tape.pick(lp, tok);
            translation.tokens.push(tok as u32);
            translation.log_probs.push(self.tape.scalar(node));
            translation
                .output_vectors
                .push(self.tape.value(step.output_vector).data().to_vec());
            nodes.push(node);
            if tok as u32 == EOS {
                break;
            }
            state = next;
            prev = tok as u32;
        }
        Ok(SampledGraph {
            translation,
            log_prob_nodes: nodes,
        })
    }

    /// Value nodes `V(ŷ_<t)`, one per token of `translation`. The first step
    /// consumes BOS, step `t` consumes `ŷ_{t-1}`.
    pub fn values(&mut self, src: &[u32], translation: &[u32]) -> Result<Vec<NodeId>> {
        ensure!(self.model.config.head == Head::ScalarValue, "values need the value head");
        ensure!(!translation.is_empty(), "translation is empty");
        self.model.check_target(translation)?;
        let enc = self.encode(src)?;
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(translation.len());
        for &tok in translation {
            let (step, next) = self.decode_step(&enc, &state, prev);
            out.push(step.value());
            state = next;
            prev = tok;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(head: Head, seed: u64) -> Seq2Seq {
        let cfg = Seq2SeqConfig::new(6, 5, 3, 4).with_head(head);
        Seq2Seq::new(cfg, &mut SeededRng::new(seed)).unwrap()
    }

    fn zeroed(mut m: Seq2Seq) -> Seq2Seq {
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.value_mut(id).fill(0.0);
        }
        m
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = tiny(Head::SoftmaxVocab, 1);
        let b = tiny(Head::SoftmaxVocab, 1);
        assert_eq!(a.params, b.params);
        for id in a.params.ids() {
            let name = a.params.name(id);
            for (i, &v) in a.params.value(id).data().iter().enumerate() {
                let forget = name.ends_with("bias") && (4..8).contains(&i);
                if forget {
                    assert_eq!(v, 1.0);
                } else if name.ends_with("bias") {
                    assert_eq!(v, 0.0);
                } else {
                    assert!((-0.1..=0.1).contains(&v));
                }
            }
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        for head in [Head::SoftmaxVocab, Head::ScalarValue] {
            for d in [1, 3, 8] {
                let cfg = Seq2SeqConfig {
                    embed_dim: d,
                    hidden_dim: d,
                    ..Seq2SeqConfig::new(7, 7, d, d).with_head(head)
                };
                let m = Seq2Seq::new(cfg, &mut SeededRng::new(0)).unwrap();
                // V·d (src) + 4d(2d+1) + V·d (tgt) + 4d(3d+1) + 3d² + head
                let v = 7;
                let head_n = if head == Head::SoftmaxVocab { v * d } else { d };
                let hand = v * d + 4 * d * (2 * d + 1) + v * d + 4 * d * (3 * d + 1) + 3 * d * d + head_n;
                assert_eq!(m.params.num_scalars(), hand);
            }
        }
    }

    #[test]
    fn memory_has_one_row_per_token() {
        let m = tiny(Head::SoftmaxVocab, 2);
        let (mem, phi) = m.encode(&[3, 4, 5, 3, 4, 5, 3]).unwrap();
        assert_eq!(mem.shape(), &[7, 4]);
        assert_eq!(mem.row(6), phi.data());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let m = tiny(Head::SoftmaxVocab, 2);
        assert!(m.encode(&[]).is_err());
        assert!(m.encode(&[99]).is_err());
        assert!(m.encode(&vec![3; 51]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_summary_and_uniform_policy() {
        let m = zeroed(tiny(Head::SoftmaxVocab, 3));
        let (_, phi) = m.encode(&[3, 4]).unwrap();
        assert!(phi.data().iter().all(|&v| v == 0.0));
        let p = m.step_distribution(&[3, 4], &[]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn first_memory_row_depends_only_on_first_token() {
        let m = tiny(Head::SoftmaxVocab, 4);
        let (a, _) = m.encode(&[3, 4, 5]).unwrap();
        let (b, _) = m.encode(&[3, 5, 4]).unwrap();
        let (c, _) = m.encode(&[4, 3, 5]).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
        assert_ne!(a.row(0), c.row(0));
    }

    #[test]
    fn distributions_normalize() {
        let m = tiny(Head::SoftmaxVocab, 5);
        for prefix in [&[][..], &[2, 3], &[4, 4, 1]] {
            let p = m.step_distribution(&[3, 4, 5], prefix).unwrap();
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn single_row_memory_attends_fully() {
        let m = tiny(Head::SoftmaxVocab, 6);
        let mut g = m.graph();
        let enc = g.encode(&[4]).unwrap();
        let s0 = g.initial_state(&enc);
        let (out, _) = g.decode_step(&enc, &s0, BOS);
        assert_eq!(g.tape.value(out.attention).data(), &[1.0]);
    }

    #[test]
    fn uniform_policy_log_prob() {
        let cfg = Seq2SeqConfig::new(4, 2, 2, 2);
        let m = zeroed(Seq2Seq::new(cfg, &mut SeededRng::new(0)).unwrap());
        let lp = m.sequence_log_prob(&[3], &[1, 1, EOS]).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_must_end_with_eos() {
        let m = tiny(Head::SoftmaxVocab, 7);
        assert!(m.sequence_log_prob(&[3], &[3, 4]).is_err());
        assert!(m.sequence_log_prob(&[3], &[]).is_err());
    }

    #[test]
    fn sample_is_reproducible_and_consistent() {
        let m = tiny(Head::SoftmaxVocab, 8);
        let a = m.sample(&[3, 4], &mut SeededRng::new(11), 9).unwrap();
        let b = m.sample(&[3, 4], &mut SeededRng::new(11), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 9);
        assert!(a.log_probs.iter().all(|&l| l <= 0.0));
        if a.tokens.last() == Some(&EOS) {
            let lp = m.sequence_log_prob(&[3, 4], &a.tokens).unwrap();
            assert!((lp - a.total_log_prob()).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_zero_weights_emits_eos() {
        let m = zeroed(tiny(Head::SoftmaxVocab, 9));
        // all ties: the lowest id wins, which is EOS
        assert_eq!(m.greedy_decode(&[3], 7).unwrap(), vec![EOS]);
        let a = tiny(Head::SoftmaxVocab, 9);
        assert_eq!(a.greedy_decode(&[3, 4], 7).unwrap(), a.greedy_decode(&[3, 4], 7).unwrap());
    }

    #[test]
    fn value_head_counts_and_zero() {
        let c = tiny(Head::ScalarValue, 10);
        assert_eq!(c.values(&[3], &[4]).unwrap().len(), 1);
        assert_eq!(c.values(&[3], &[4, 2, EOS]).unwrap().len(), 3);
        let z = zeroed(tiny(Head::ScalarValue, 10));
        assert!(z.values(&[3, 4], &[2, 3, EOS]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_share_output_vectors_bit_exactly() {
        // Shared parameters are drawn first, in the same order, so the same
        // seed yields identical encoder/decoder/attention weights.
        let nmt = tiny(Head::SoftmaxVocab, 12);
        let crt = tiny(Head::ScalarValue, 12);
        let a = nmt.output_vectors(&[3, 4, 5], &[BOS, 2, 3]).unwrap();
        let b = crt.output_vectors(&[3, 4, 5], &[BOS, 2, 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_prefers_lowest_tie() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }
}
