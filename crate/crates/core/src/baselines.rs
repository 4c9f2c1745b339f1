//! Comparison models evaluated under the same protocol as the attentive
//! architectures: a global popularity ranking, session-based
//! collaborative filtering over binary song-incidence vectors, and a
//! plain unidirectional GRU next-item predictor.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::layers::{
    dense_backward, dense_forward, embed_song, embed_song_backward, gru_cell_backward,
    gru_cell_forward, init_weight, Activation, GruParams,
};
use crate::model::{nll_loss, rank_topk, TrainingExample};
use crate::numerics::{log_softmax, Matrix, Rng};
use crate::optim::Trainable;
use crate::params::{prefixed, ParamBlocks};

/// How many of the most recent songs form the active-session fingerprint
/// for SSCF.
pub const SSCF_RECENT_WINDOW: usize = 5;

/// How many nearest training sessions vote for candidates.
pub const SSCF_DEFAULT_NEIGHBORS: usize = 100;

// ---------------------------------------------------------------------------
// POP
// ---------------------------------------------------------------------------

/// Songs ranked by descending training play count, ties by ascending
/// index. Recommendations ignore the user history entirely.
#[derive(Debug, Clone)]
pub struct PopModel {
    order: Vec<usize>,
}

impl PopModel {
    pub fn fit(train_sessions: &[Vec<usize>], vocab_size: usize) -> Self {
        let mut counts = vec![0usize; vocab_size];
        for session in train_sessions {
            for &song in session {
                counts[song] += 1;
            }
        }
        let mut order: Vec<usize> = (0..vocab_size).collect();
        order.sort_unstable_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        PopModel { order }
    }

    pub fn vocab_size(&self) -> usize {
        self.order.len()
    }

    pub fn ranking(&self) -> &[usize] {
        &self.order
    }

    pub fn recommend(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.order.len() {
            return Err(Error::argument(format!(
                "k must lie in 1..={}, got {k}",
                self.order.len()
            )));
        }
        Ok(self.order[..k].to_vec())
    }
}

// ---------------------------------------------------------------------------
// SSCF
// ---------------------------------------------------------------------------

/// Session-item index for session-based collaborative filtering.
/// Similarity between the active recent-song set and a training session
/// is the cosine of their binary incidence vectors; the top
/// `n_neighbors` sessions vote for candidate songs with their
/// similarity. Songs in the recent window are excluded; short results
/// are backfilled in popularity order.
#[derive(Debug, Clone)]
pub struct SscfIndex {
    session_songs: Vec<Vec<usize>>, // sorted, deduplicated
    inverted: HashMap<usize, Vec<usize>>,
    pop: PopModel,
    n_neighbors: usize,
}

impl SscfIndex {
    pub fn build(train_sessions: &[Vec<usize>], vocab_size: usize, n_neighbors: usize) -> Self {
        let mut session_songs = Vec::with_capacity(train_sessions.len());
        let mut inverted: HashMap<usize, Vec<usize>> = HashMap::new();
        for (sid, session) in train_sessions.iter().enumerate() {
            let mut songs = session.clone();
            songs.sort_unstable();
            songs.dedup();
            for &song in &songs {
                inverted.entry(song).or_default().push(sid);
            }
            session_songs.push(songs);
        }
        SscfIndex {
            session_songs,
            inverted,
            pop: PopModel::fit(train_sessions, vocab_size),
            n_neighbors,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.pop.vocab_size()
    }

    pub fn recommend(&self, recent: &[usize], k: usize) -> Result<Vec<usize>> {
        if recent.is_empty() {
            return Err(Error::argument("sscf requires at least one recent song".to_string()));
        }
        if k == 0 || k > self.vocab_size() {
            return Err(Error::argument(format!(
                "k must lie in 1..={}, got {k}",
                self.vocab_size()
            )));
        }
        let mut active: Vec<usize> = recent.to_vec();
        active.sort_unstable();
        active.dedup();

        // candidate sessions: anything sharing a song with the window
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for &song in &active {
            if let Some(sids) = self.inverted.get(&song) {
                for &sid in sids {
                    *overlap.entry(sid).or_insert(0) += 1;
                }
            }
        }
        let mut sims: Vec<(usize, f64)> = overlap
            .into_iter()
            .map(|(sid, shared)| {
                let denom =
                    (active.len() as f64).sqrt() * (self.session_songs[sid].len() as f64).sqrt();
                (sid, shared as f64 / denom)
            })
            .collect();
        sims.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1).expect("finite similarity").then(a.0.cmp(&b.0))
        });
        sims.truncate(self.n_neighbors);

        // score candidates by summed neighbor similarity
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for &(sid, sim) in &sims {
            for &song in &self.session_songs[sid] {
                if active.binary_search(&song).is_err() {
                    *scores.entry(song).or_insert(0.0) += sim;
                }
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        ranked.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1).expect("finite score").then(a.0.cmp(&b.0))
        });

        let mut out: Vec<usize> = ranked.into_iter().take(k).map(|(song, _)| song).collect();
        if out.len() < k {
            let chosen: std::collections::HashSet<usize> = out.iter().copied().collect();
            for &song in self.pop.ranking() {
                if out.len() == k {
                    break;
                }
                if !chosen.contains(&song) && active.binary_search(&song).is_err() {
                    out.push(song);
                }
            }
        }
        out.truncate(k);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// RNN baseline
// ---------------------------------------------------------------------------

/// Baseline hyperparameters. Defaults: 100 hidden units, learning
/// rate 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnHyper {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub history: usize,
}

impl RnnHyper {
    pub fn with_defaults(vocab: usize) -> Self {
        RnnHyper { vocab, dim: 50, hidden: 100, history: 10 }
    }
}

pub const RNN_DEFAULT_LEARNING_RATE: f64 = 0.1;

/// Plain next-item model: song embeddings into a unidirectional GRU, the
/// final hidden state through a dense layer to a softmax over all songs.
/// No attention, no tags, no dropout.
#[derive(Debug, Clone)]
pub struct RnnParams {
    pub hyper: RnnHyper,
    pub embedding: Matrix, // dim x vocab
    pub gru: GruParams,
    pub w_out: Matrix, // vocab x hidden
    pub b_out: Matrix, // vocab x 1
}

impl RnnParams {
    pub fn new(hyper: RnnHyper, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        RnnParams {
            embedding: init_weight(&mut rng, hyper.dim, hyper.vocab),
            gru: GruParams::new(hyper.dim, hyper.hidden, &mut rng),
            w_out: init_weight(&mut rng, hyper.vocab, hyper.hidden),
            b_out: Matrix::zeros(hyper.vocab, 1),
            hyper,
        }
    }

    fn validate_prefix(&self, prefix: &[usize]) -> Result<()> {
        if prefix.is_empty() {
            return Err(Error::argument("rnn forward over an empty prefix".to_string()));
        }
        for &s in prefix {
            if s >= self.hyper.vocab {
                return Err(Error::vocabulary(format!(
                    "prefix song index {} out of range for vocabulary of {}",
                    s, self.hyper.vocab
                )));
            }
        }
        Ok(())
    }

    /// Log probabilities of the next song given a prefix (truncated to
    /// the history window), plus the intermediates for backward.
    pub fn forward(&self, prefix: &[usize]) -> Result<(Vec<f64>, RnnCache)> {
        self.validate_prefix(prefix)?;
        let start = prefix.len().saturating_sub(self.hyper.history);
        let prefix = &prefix[start..];

        let mut h = vec![0.0; self.hyper.hidden];
        let mut cell_caches = Vec::with_capacity(prefix.len());
        for &song in prefix {
            let x = embed_song(song, &self.embedding)?;
            let (next, cache) = gru_cell_forward(&x, &h, &self.gru)?;
            cell_caches.push(cache);
            h = next;
        }
        let (logits, dense) = dense_forward(&h, &self.w_out, self.b_out.data(), Activation::None)?;
        let log_probs = log_softmax(&logits)?;
        Ok((
            log_probs.clone(),
            RnnCache { prefix: prefix.to_vec(), cells: cell_caches, dense, log_probs },
        ))
    }

    pub fn backward(&self, cache: &RnnCache, target: usize) -> Result<RnnParams> {
        if target >= self.hyper.vocab {
            return Err(Error::vocabulary(format!(
                "target song index {} out of range for vocabulary of {}",
                target, self.hyper.vocab
            )));
        }
        let mut grads = self.zeros_like();

        let mut dlogits: Vec<f64> = cache.log_probs.iter().map(|lp| lp.exp()).collect();
        dlogits[target] -= 1.0;
        let (mut dh, dw, db) = dense_backward(&self.w_out, &cache.dense, &dlogits)?;
        grads.w_out = dw;
        grads.b_out = Matrix::column(&db);

        for (t, cell) in cache.cells.iter().enumerate().rev() {
            let (dx, dh_prev) = gru_cell_backward(&self.gru, cell, &dh, &mut grads.gru)?;
            embed_song_backward(cache.prefix[t], &dx, &mut grads.embedding);
            dh = dh_prev;
        }
        Ok(grads)
    }

    pub fn predict_topk(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.hyper.vocab {
            return Err(Error::argument(format!(
                "k must lie in 1..={}, got {k}",
                self.hyper.vocab
            )));
        }
        let (log_probs, _) = self.forward(prefix)?;
        Ok(rank_topk(&log_probs, k))
    }
}

pub struct RnnCache {
    prefix: Vec<usize>,
    cells: Vec<crate::layers::GruCellCache>,
    dense: crate::layers::DenseCache,
    log_probs: Vec<f64>,
}

impl ParamBlocks for RnnParams {
    fn blocks(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embedding];
        out.extend(self.gru.blocks());
        out.push(&self.w_out);
        out.push(&self.b_out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.gru.blocks_mut());
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    fn block_names(&self) -> Vec<String> {
        let mut out = vec!["embedding".to_string()];
        out.extend(prefixed("gru", self.gru.block_names()));
        out.push("w_out".to_string());
        out.push("b_out".to_string());
        out
    }

    fn zeros_like(&self) -> Self {
        RnnParams {
            hyper: self.hyper.clone(),
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            gru: self.gru.zeros_like(),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: Matrix::zeros(self.b_out.rows(), self.b_out.cols()),
        }
    }
}

impl Trainable for RnnParams {
    fn example_loss_grad(&self, ex: &TrainingExample, _rng: &mut Rng) -> Result<(f64, Self)> {
        let (log_probs, cache) = self.forward(&ex.prefix)?;
        let loss = nll_loss(&log_probs, ex.target)?;
        let grads = self.backward(&cache, ex.target)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{attention_forward, bigru_forward, AttentionParams};
    use crate::optim::{train, TrainConfig};

    #[test]
    fn pop_orders_by_count_then_index() {
        // counts: a(0)=3, b(1)=1, c(2)=2
        let sessions = vec![vec![0, 0, 0, 2, 2, 1]];
        let pop = PopModel::fit(&sessions, 3);
        assert_eq!(pop.recommend(2).unwrap(), vec![0, 2]);

        // tie counts resolve by ascending index
        let pop = PopModel::fit(&[vec![0, 1, 0, 1]], 2);
        assert_eq!(pop.recommend(2).unwrap(), vec![0, 1]);

        assert!(matches!(pop.recommend(0), Err(Error::Argument(_))));
        assert!(matches!(pop.recommend(3), Err(Error::Argument(_))));
    }

    #[test]
    fn pop_matches_sort_oracle() {
        let mut rng = Rng::new(5);
        let vocab = 12;
        let session: Vec<usize> = (0..200).map(|_| rng.next_index(vocab)).collect();
        let pop = PopModel::fit(std::slice::from_ref(&session), vocab);

        let mut counts = vec![0usize; vocab];
        for &s in &session {
            counts[s] += 1;
        }
        let mut want: Vec<usize> = (0..vocab).collect();
        want.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        assert_eq!(pop.recommend(vocab).unwrap(), want);
    }

    #[test]
    fn pop_smaller_k_is_prefix_of_larger() {
        let pop = PopModel::fit(&[vec![3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5]], 10);
        let big = pop.recommend(10).unwrap();
        for k in 1..10 {
            assert_eq!(pop.recommend(k).unwrap(), big[..k].to_vec());
        }
    }

    #[test]
    fn sscf_shared_session_dominates() {
        // session 0 shares all five recent songs; session 1 is disjoint
        let sessions = vec![vec![0, 1, 2, 3, 4, 5, 6], vec![7, 8, 9]];
        let index = SscfIndex::build(&sessions, 10, 100);
        let recs = index.recommend(&[0, 1, 2, 3, 4], 5).unwrap();
        // songs 5 and 6 (from the matching session) come first
        assert_eq!(&recs[..2], &[5, 6]);
    }

    #[test]
    fn sscf_empty_recent_is_argument_error() {
        let index = SscfIndex::build(&[vec![0, 1]], 3, 100);
        assert!(matches!(index.recommend(&[], 1), Err(Error::Argument(_))));
    }

    #[test]
    fn sscf_backfills_with_pop_order() {
        // no session overlaps the window: pure POP backfill minus the window
        let sessions = vec![vec![0, 0, 0, 1, 1, 2]];
        let index = SscfIndex::build(&sessions, 5, 100);
        let recs = index.recommend(&[3], 3).unwrap();
        // pop order is 0, 1, 2, 3, 4; 3 is excluded as recent
        assert_eq!(recs, vec![0, 1, 2]);
        let recs = index.recommend(&[0], 4).unwrap();
        assert_eq!(recs, vec![1, 2, 3, 4]);
    }

    // exhaustive similarity oracle over a hand fixture
    fn sscf_oracle(
        sessions: &[Vec<usize>],
        recent: &[usize],
        k: usize,
        n_neighbors: usize,
        vocab: usize,
    ) -> Vec<usize> {
        let mut active: Vec<usize> = recent.to_vec();
        active.sort_unstable();
        active.dedup();
        let sets: Vec<Vec<usize>> = sessions
            .iter()
            .map(|s| {
                let mut v = s.clone();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let mut sims: Vec<(usize, f64)> = sets
            .iter()
            .enumerate()
            .map(|(sid, set)| {
                let shared = set.iter().filter(|s| active.contains(s)).count();
                let sim = shared as f64 / ((active.len() as f64).sqrt() * (set.len() as f64).sqrt());
                (sid, sim)
            })
            .filter(|&(_, sim)| sim > 0.0)
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(n_neighbors);
        let mut scores = vec![0.0; vocab];
        for &(sid, sim) in &sims {
            for &song in &sets[sid] {
                if !active.contains(&song) {
                    scores[song] += sim;
                }
            }
        }
        let mut ranked: Vec<usize> = (0..vocab).filter(|&s| scores[s] > 0.0).collect();
        ranked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        ranked.truncate(k);
        // backfill by popularity
        let mut counts = vec![0usize; vocab];
        for s in sessions {
            for &song in s {
                counts[song] += 1;
            }
        }
        let mut pop: Vec<usize> = (0..vocab).collect();
        pop.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        for song in pop {
            if ranked.len() == k {
                break;
            }
            if !ranked.contains(&song) && !active.contains(&song) {
                ranked.push(song);
            }
        }
        ranked
    }

    #[test]
    fn sscf_matches_exhaustive_oracle_on_six_session_fixture() {
        let sessions = vec![
            vec![0, 1, 2, 3, 4],
            vec![2, 3, 4, 5, 6],
            vec![5, 6, 7, 8, 9],
            vec![0, 2, 4, 6, 8],
            vec![1, 3, 5, 7, 9],
            vec![0, 1, 8, 9, 3],
        ];
        let vocab = 10;
        for n_neighbors in [2, 3, 100] {
            let index = SscfIndex::build(&sessions, vocab, n_neighbors);
            for recent in [vec![0, 1], vec![2, 3, 4], vec![9], vec![4, 5, 6, 7, 8]] {
                for k in [1, 3, 5, 8] {
                    let got = index.recommend(&recent, k).unwrap();
                    let want = sscf_oracle(&sessions, &recent, k, n_neighbors, vocab);
                    assert_eq!(got, want, "recent {recent:?} k {k} n {n_neighbors}");
                }
            }
        }
    }

    #[test]
    fn sscf_invariant_to_session_storage_order() {
        let sessions = vec![
            vec![0, 1, 2, 3, 4],
            vec![2, 3, 4, 5, 6],
            vec![5, 6, 7, 8, 9],
        ];
        let mut reversed = sessions.clone();
        reversed.reverse();
        // neighbor ties break on session id, which storage order permutes;
        // use distinct similarities so the documented tie-break is not hit
        let a = SscfIndex::build(&sessions, 10, 2);
        let b = SscfIndex::build(&reversed, 10, 2);
        assert_eq!(
            a.recommend(&[2, 3, 4], 4).unwrap(),
            b.recommend(&[2, 3, 4], 4).unwrap()
        );
    }

    #[test]
    fn rnn_memorizes_single_example() {
        let hyper = RnnHyper { vocab: 5, dim: 3, hidden: 4, history: 10 };
        let params = RnnParams::new(hyper, 3);
        let data = vec![TrainingExample::new(vec![0, 1], vec![vec![], vec![]], 2).unwrap()];
        let cfg = TrainConfig {
            learning_rate: RNN_DEFAULT_LEARNING_RATE,
            epochs: 200,
            ..Default::default()
        };
        let (_, trace) = train(params, &data, &cfg).unwrap();
        assert!(*trace.last().unwrap() < 0.05, "final loss {}", trace.last().unwrap());
    }

    #[test]
    fn rnn_prefix_validation() {
        let params = RnnParams::new(RnnHyper { vocab: 4, dim: 2, hidden: 3, history: 5 }, 1);
        assert!(matches!(params.forward(&[]), Err(Error::Argument(_))));
        assert!(matches!(params.forward(&[4]), Err(Error::Vocabulary(_))));
        let (lp, _) = params.forward(&[0, 1]).unwrap();
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_attention_sabr_is_mean_pooled_not_last_state() {
        // with the scoring vector zeroed, attention weights are uniform, so
        // the song context is the mean of the Bi-GRU states; zeroed backward
        // direction makes the state just the forward GRU state. That mean
        // differs from the final state the RNN baseline uses.
        let mut rng = Rng::new(17);
        let p_fwd = GruParams::new(3, 4, &mut rng);
        let p_bwd = GruParams::zeros(3, 4);
        let mut att = AttentionParams::new(8, 4, &mut rng);
        att.u = Matrix::zeros(4, 1);

        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect())
            .collect();
        let (states, _) = bigru_forward(&xs, &p_fwd, &p_bwd).unwrap();
        let (ctx, weights, _) = attention_forward(&states, &att).unwrap();

        for w in &weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
        // backward half of every state is zero
        for s in &states {
            assert!(s[4..].iter().all(|&v| v == 0.0));
        }
        // context = mean of forward states
        let mut mean = vec![0.0; 4];
        for s in &states {
            for (m, &v) in mean.iter_mut().zip(&s[..4]) {
                *m += v / 4.0;
            }
        }
        for (c, m) in ctx[..4].iter().zip(&mean) {
            assert!((c - m).abs() < 1e-12);
        }
        // and the mean differs from the last state
        let last = &states[3][..4];
        let diff: f64 = mean.iter().zip(last).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "mean pooling and last state coincide unexpectedly");
    }
}
