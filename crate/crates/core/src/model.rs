//! The attentive next-song models. SABR runs a single song branch
//! (embedding, Bi-GRU, attention); STABR adds a parallel tag branch whose
//! context vector is concatenated with the song context before the
//! bottleneck layer. Both end in bottleneck -> output -> softmax over the
//! whole song vocabulary, trained with negative log likelihood.

use crate::error::{Error, Result};
use crate::layers::{
    attention_backward, attention_forward, bigru_backward, bigru_forward, dense_backward,
    dense_forward, dropout_backward, dropout_forward, embed_song, embed_song_backward,
    embed_tags_avg, embed_tags_avg_backward, init_weight, Activation, AttentionCache,
    AttentionParams, BiGruCache, DenseCache, DropoutCache, GruParams, Mode,
};
use crate::numerics::{log_softmax, Matrix, Rng};
use crate::params::{prefixed, ParamBlocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sabr,
    Stabr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Sabr => "sabr",
            ModelKind::Stabr => "stabr",
        }
    }
}

/// Model hyperparameters. Defaults: song embeddings 50, tag embeddings
/// 25, bottleneck 50, dropout 0.1, history window 10; hidden sizes match
/// the embedding widths.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHyper {
    pub song_vocab: usize,
    pub tag_vocab: usize,
    pub song_dim: usize,
    pub tag_dim: usize,
    pub song_hidden: usize,
    pub tag_hidden: usize,
    pub bottleneck: usize,
    pub dropout: f64,
    pub history: usize,
}

impl ModelHyper {
    pub fn with_defaults(song_vocab: usize, tag_vocab: usize) -> Self {
        ModelHyper {
            song_vocab,
            tag_vocab,
            song_dim: 50,
            tag_dim: 25,
            song_hidden: 50,
            tag_hidden: 25,
            bottleneck: 50,
            dropout: 0.1,
            history: 10,
        }
    }

    pub fn song_state_dim(&self) -> usize {
        2 * self.song_hidden
    }

    pub fn tag_state_dim(&self) -> usize {
        2 * self.tag_hidden
    }
}

/// One supervised position in a session: the (up to m) most recent
/// in-vocabulary songs before the target, their tag lists, and the song
/// to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub prefix: Vec<usize>,
    pub prefix_tags: Vec<Vec<usize>>,
    pub target: usize,
}

impl TrainingExample {
    pub fn new(prefix: Vec<usize>, prefix_tags: Vec<Vec<usize>>, target: usize) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::argument("training example with empty prefix".to_string()));
        }
        if prefix.len() != prefix_tags.len() {
            return Err(Error::dimension(format!(
                "prefix has {} songs but {} tag lists",
                prefix.len(),
                prefix_tags.len()
            )));
        }
        Ok(TrainingExample { prefix, prefix_tags, target })
    }
}

/// Tag branch of STABR.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSideParams {
    pub e2: Matrix,
    pub gru_fwd: GruParams,
    pub gru_bwd: GruParams,
    pub att: AttentionParams,
}

/// Every learnable tensor of SABR or STABR. SABR instances simply carry
/// no tag side and a narrower bottleneck weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: ModelHyper,
    pub e1: Matrix,
    pub song_gru_fwd: GruParams,
    pub song_gru_bwd: GruParams,
    pub song_att: AttentionParams,
    pub tag_side: Option<TagSideParams>,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Gradient container: shape-congruent with its `ModelParams`.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn new(kind: ModelKind, hyper: ModelHyper, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let song_state = hyper.song_state_dim();
        let e1 = init_weight(&mut rng, hyper.song_dim, hyper.song_vocab);
        let song_gru_fwd = GruParams::new(hyper.song_dim, hyper.song_hidden, &mut rng);
        let song_gru_bwd = GruParams::new(hyper.song_dim, hyper.song_hidden, &mut rng);
        // attention projection uses half the state width
        let song_att = AttentionParams::new(song_state, hyper.song_hidden, &mut rng);

        let (tag_side, context_dim) = match kind {
            ModelKind::Sabr => (None, song_state),
            ModelKind::Stabr => {
                let tag_state = hyper.tag_state_dim();
                let side = TagSideParams {
                    e2: init_weight(&mut rng, hyper.tag_dim, hyper.tag_vocab),
                    gru_fwd: GruParams::new(hyper.tag_dim, hyper.tag_hidden, &mut rng),
                    gru_bwd: GruParams::new(hyper.tag_dim, hyper.tag_hidden, &mut rng),
                    att: AttentionParams::new(tag_state, hyper.tag_hidden, &mut rng),
                };
                (Some(side), song_state + tag_state)
            }
        };

        let w1 = init_weight(&mut rng, hyper.bottleneck, context_dim);
        let b1 = Matrix::zeros(hyper.bottleneck, 1);
        let w2 = init_weight(&mut rng, hyper.song_vocab, hyper.bottleneck);
        let b2 = Matrix::zeros(hyper.song_vocab, 1);

        ModelParams {
            hyper,
            e1,
            song_gru_fwd,
            song_gru_bwd,
            song_att,
            tag_side,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.tag_side.is_some() {
            ModelKind::Stabr
        } else {
            ModelKind::Sabr
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.hyper.song_vocab
    }

    pub fn context_dim(&self) -> usize {
        self.w1.cols()
    }

    fn validate_example(&self, ex: &TrainingExample) -> Result<()> {
        for &s in &ex.prefix {
            if s >= self.hyper.song_vocab {
                return Err(Error::vocabulary(format!(
                    "prefix song index {} out of range for vocabulary of {}",
                    s, self.hyper.song_vocab
                )));
            }
        }
        if self.tag_side.is_some() {
            for tags in &ex.prefix_tags {
                for &t in tags {
                    if t >= self.hyper.tag_vocab {
                        return Err(Error::vocabulary(format!(
                            "tag index {} out of range for vocabulary of {}",
                            t, self.hyper.tag_vocab
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Forward intermediates for one example.
pub struct ForwardCache {
    prefix: Vec<usize>,
    prefix_tags: Vec<Vec<usize>>,
    song_bigru: BiGruCache,
    song_att: AttentionCache,
    tag_bigru: Option<BiGruCache>,
    tag_att: Option<AttentionCache>,
    bottleneck: DenseCache,
    drop1: DropoutCache,
    output: DenseCache,
    drop2: DropoutCache,
    log_probs: Vec<f64>,
}

impl ModelParams {
    /// Runs the full pipeline and returns log-probabilities over the song
    /// vocabulary (softmax in the log domain) plus the backward cache.
    pub fn forward(
        &self,
        ex: &TrainingExample,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.validate_example(ex)?;

        let xs: Vec<Vec<f64>> = ex
            .prefix
            .iter()
            .map(|&s| embed_song(s, &self.e1))
            .collect::<Result<_>>()?;
        let (song_states, song_bigru) =
            bigru_forward(&xs, &self.song_gru_fwd, &self.song_gru_bwd)?;
        let (song_ctx, _, song_att) = attention_forward(&song_states, &self.song_att)?;

        let mut context = song_ctx;
        let (tag_bigru, tag_att) = if let Some(side) = &self.tag_side {
            let ts: Vec<Vec<f64>> = ex
                .prefix_tags
                .iter()
                .map(|tags| embed_tags_avg(tags, &side.e2))
                .collect::<Result<_>>()?;
            let (states, bigru) = bigru_forward(&ts, &side.gru_fwd, &side.gru_bwd)?;
            let (tag_ctx, _, att) = attention_forward(&states, &side.att)?;
            context.extend(tag_ctx);
            (Some(bigru), Some(att))
        } else {
            (None, None)
        };

        let (hidden, bottleneck) =
            dense_forward(&context, &self.w1, self.b1.data(), Activation::Relu)?;
        let (hidden, drop1) = dropout_forward(&hidden, self.hyper.dropout, mode, rng)?;
        let (logits, output) = dense_forward(&hidden, &self.w2, self.b2.data(), Activation::None)?;
        let (logits, drop2) = dropout_forward(&logits, self.hyper.dropout, mode, rng)?;
        let log_probs = log_softmax(&logits)?;

        let cache = ForwardCache {
            prefix: ex.prefix.clone(),
            prefix_tags: ex.prefix_tags.clone(),
            song_bigru,
            song_att,
            tag_bigru,
            tag_att,
            bottleneck,
            drop1,
            output,
            drop2,
            log_probs,
        };
        Ok((cache.log_probs.clone(), cache))
    }

    /// Analytic gradient of the negative log likelihood at `target` with
    /// respect to every parameter. Embedding gradients only touch the
    /// columns referenced by the example.
    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<Gradients> {
        if target >= self.hyper.song_vocab {
            return Err(Error::vocabulary(format!(
                "target song index {} out of range for vocabulary of {}",
                target, self.hyper.song_vocab
            )));
        }
        let mut grads = self.zeros_like();

        // d(loss)/d(logits) = softmax(logits) - one_hot(target)
        let mut dlogits: Vec<f64> = cache.log_probs.iter().map(|lp| lp.exp()).collect();
        dlogits[target] -= 1.0;

        let dlogits = dropout_backward(&cache.drop2, &dlogits);
        let (dhidden, dw2, db2) = dense_backward(&self.w2, &cache.output, &dlogits)?;
        grads.w2 = dw2;
        grads.b2 = Matrix::column(&db2);

        let dhidden = dropout_backward(&cache.drop1, &dhidden);
        let (dcontext, dw1, db1) = dense_backward(&self.w1, &cache.bottleneck, &dhidden)?;
        grads.w1 = dw1;
        grads.b1 = Matrix::column(&db1);

        let song_state = self.hyper.song_state_dim();
        let d_song_ctx = &dcontext[..song_state];

        let (dsong_states, datt) =
            attention_backward(&self.song_att, &cache.song_att, d_song_ctx)?;
        grads.song_att = datt;
        let (dxs, dfwd, dbwd) = bigru_backward(
            &self.song_gru_fwd,
            &self.song_gru_bwd,
            &cache.song_bigru,
            &dsong_states,
        )?;
        grads.song_gru_fwd = dfwd;
        grads.song_gru_bwd = dbwd;
        for (&song, dx) in cache.prefix.iter().zip(&dxs) {
            embed_song_backward(song, dx, &mut grads.e1);
        }

        if let Some(side) = &self.tag_side {
            let d_tag_ctx = &dcontext[song_state..];
            let gside = grads.tag_side.as_mut().expect("congruent gradient container");
            let (dtag_states, datt) = attention_backward(
                &side.att,
                cache.tag_att.as_ref().expect("stabr cache"),
                d_tag_ctx,
            )?;
            gside.att = datt;
            let (dts, dfwd, dbwd) = bigru_backward(
                &side.gru_fwd,
                &side.gru_bwd,
                cache.tag_bigru.as_ref().expect("stabr cache"),
                &dtag_states,
            )?;
            gside.gru_fwd = dfwd;
            gside.gru_bwd = dbwd;
            for (tags, dt) in cache.prefix_tags.iter().zip(&dts) {
                embed_tags_avg_backward(tags, dt, &mut gside.e2);
            }
        }

        Ok(grads)
    }

    /// Indices of the k most probable next songs under eval-mode forward,
    /// ties broken by ascending song index. The prefix is truncated to the
    /// model's history window.
    pub fn predict_topk(
        &self,
        prefix: &[usize],
        prefix_tags: &[Vec<usize>],
        k: usize,
    ) -> Result<Vec<usize>> {
        if k == 0 || k > self.hyper.song_vocab {
            return Err(Error::argument(format!(
                "k must lie in 1..={}, got {k}",
                self.hyper.song_vocab
            )));
        }
        let log_probs = self.eval_log_probs(prefix, prefix_tags)?;
        Ok(rank_topk(&log_probs, k))
    }

    /// Eval-mode log probabilities for an arbitrary prefix (truncated to
    /// the history window).
    pub fn eval_log_probs(&self, prefix: &[usize], prefix_tags: &[Vec<usize>]) -> Result<Vec<f64>> {
        if prefix.len() != prefix_tags.len() {
            return Err(Error::dimension(format!(
                "prefix has {} songs but {} tag lists",
                prefix.len(),
                prefix_tags.len()
            )));
        }
        let start = prefix.len().saturating_sub(self.hyper.history);
        let ex = TrainingExample::new(
            prefix[start..].to_vec(),
            prefix_tags[start..].to_vec(),
            0,
        )?;
        let mut rng = Rng::new(0); // unused in eval mode
        let (log_probs, _) = self.forward(&ex, Mode::Eval, &mut rng)?;
        Ok(log_probs)
    }
}

/// Deterministic top-k by score, ties broken by ascending index.
pub(crate) fn rank_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Negative log likelihood of the target under the model's output
/// distribution.
pub fn nll_loss(log_probs: &[f64], target: usize) -> Result<f64> {
    if target >= log_probs.len() {
        return Err(Error::vocabulary(format!(
            "loss target {} out of range for vocabulary of {}",
            target,
            log_probs.len()
        )));
    }
    Ok(-log_probs[target])
}

impl ParamBlocks for ModelParams {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.e1];
        out.extend(self.song_gru_fwd.blocks());
        out.extend(self.song_gru_bwd.blocks());
        out.extend(self.song_att.blocks());
        if let Some(side) = &self.tag_side {
            out.push(&side.e2);
            out.extend(side.gru_fwd.blocks());
            out.extend(side.gru_bwd.blocks());
            out.extend(side.att.blocks());
        }
        out.push(&self.w1);
        out.push(&self.b1);
        out.push(&self.w2);
        out.push(&self.b2);
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.e1];
        out.extend(self.song_gru_fwd.blocks_mut());
        out.extend(self.song_gru_bwd.blocks_mut());
        out.extend(self.song_att.blocks_mut());
        if let Some(side) = &mut self.tag_side {
            out.push(&mut side.e2);
            out.extend(side.gru_fwd.blocks_mut());
            out.extend(side.gru_bwd.blocks_mut());
            out.extend(side.att.blocks_mut());
        }
        out.push(&mut self.w1);
        out.push(&mut self.b1);
        out.push(&mut self.w2);
        out.push(&mut self.b2);
        out
    }

    fn block_names(&self) -> Vec<String> {
        let mut out = vec!["e1".to_string()];
        out.extend(prefixed("song_gru_fwd", self.song_gru_fwd.block_names()));
        out.extend(prefixed("song_gru_bwd", self.song_gru_bwd.block_names()));
        out.extend(prefixed("song_att", self.song_att.block_names()));
        if let Some(side) = &self.tag_side {
            out.push("e2".to_string());
            out.extend(prefixed("tag_gru_fwd", side.gru_fwd.block_names()));
            out.extend(prefixed("tag_gru_bwd", side.gru_bwd.block_names()));
            out.extend(prefixed("tag_att", side.att.block_names()));
        }
        out.push("w1".to_string());
        out.push("b1".to_string());
        out.push("w2".to_string());
        out.push("b2".to_string());
        out
    }

    fn zeros_like(&self) -> Self {
        ModelParams {
            hyper: self.hyper.clone(),
            e1: Matrix::zeros(self.e1.rows(), self.e1.cols()),
            song_gru_fwd: self.song_gru_fwd.zeros_like(),
            song_gru_bwd: self.song_gru_bwd.zeros_like(),
            song_att: self.song_att.zeros_like(),
            tag_side: self.tag_side.as_ref().map(|side| TagSideParams {
                e2: Matrix::zeros(side.e2.rows(), side.e2.cols()),
                gru_fwd: side.gru_fwd.zeros_like(),
                gru_bwd: side.gru_bwd.zeros_like(),
                att: side.att.zeros_like(),
            }),
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(self.b1.rows(), self.b1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Matrix::zeros(self.b2.rows(), self.b2.cols()),
        }
    }
}
