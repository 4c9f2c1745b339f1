//! Differentiable building blocks: embedding lookup, per-song tag
//! averaging, GRU cell, bidirectional GRU, additive attention, dense
//! layers and inverted dropout. Every forward pass returns a cache; the
//! matching backward pass turns an output gradient into input and
//! parameter gradients. Parameter gradients are per-call; callers
//! accumulate across time steps and examples.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_vec, softmax, tanh_vec, Matrix, Rng};
use crate::params::ParamBlocks;

/// Train/eval switch. Only dropout behaves differently between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform Glorot-style initialization: bounds ±sqrt(6 / (fan_in + fan_out))
/// with fan_out = rows and fan_in = cols.
pub(crate) fn init_weight(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    rng.uniform_matrix(-bound, bound, rows, cols).expect("positive bound")
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Column lookup in a `d x |I|` embedding table: the dense equivalent of
/// multiplying by a one-hot vector.
pub fn embed_song(song_index: usize, e1: &Matrix) -> Result<Vec<f64>> {
    if song_index >= e1.cols() {
        return Err(Error::vocabulary(format!(
            "song index {} out of range for vocabulary of {}",
            song_index,
            e1.cols()
        )));
    }
    Ok(e1.col(song_index))
}

/// Accumulate the gradient of a song lookup: only the referenced column
/// is touched.
pub fn embed_song_backward(song_index: usize, grad: &[f64], de1: &mut Matrix) {
    debug_assert_eq!(grad.len(), de1.rows());
    debug_assert!(song_index < de1.cols());
    for (r, &g) in grad.iter().enumerate() {
        let cur = de1.get(r, song_index);
        de1.set(r, song_index, cur + g);
    }
}

/// Mean of the tag embedding columns for one song. An empty tag list
/// yields the zero vector.
pub fn embed_tags_avg(tag_indices: &[usize], e2: &Matrix) -> Result<Vec<f64>> {
    if tag_indices.is_empty() {
        return Ok(vec![0.0; e2.rows()]);
    }
    let mut out = vec![0.0; e2.rows()];
    for &t in tag_indices {
        if t >= e2.cols() {
            return Err(Error::vocabulary(format!(
                "tag index {} out of range for vocabulary of {}",
                t,
                e2.cols()
            )));
        }
        for (o, r) in out.iter_mut().zip(0..e2.rows()) {
            *o += e2.get(r, t);
        }
    }
    let inv = 1.0 / tag_indices.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Ok(out)
}

/// Gradient of the tag average: each referenced column receives grad / n.
pub fn embed_tags_avg_backward(tag_indices: &[usize], grad: &[f64], de2: &mut Matrix) {
    if tag_indices.is_empty() {
        return;
    }
    debug_assert_eq!(grad.len(), de2.rows());
    let inv = 1.0 / tag_indices.len() as f64;
    for &t in tag_indices {
        for (r, &g) in grad.iter().enumerate() {
            let cur = de2.get(r, t);
            de2.set(r, t, cur + g * inv);
        }
    }
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

/// Gate parameters of one GRU direction.
///
/// ```text
/// z = sigmoid(W_z x + U_z h_prev + b_z)
/// r = sigmoid(W_r x + U_r h_prev + b_r)
/// c = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
/// h = (1 - z) ⊙ h_prev + z ⊙ c
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GruParams {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        GruParams {
            w_z: init_weight(rng, hidden_dim, input_dim),
            w_r: init_weight(rng, hidden_dim, input_dim),
            w_h: init_weight(rng, hidden_dim, input_dim),
            u_z: init_weight(rng, hidden_dim, hidden_dim),
            u_r: init_weight(rng, hidden_dim, hidden_dim),
            u_h: init_weight(rng, hidden_dim, hidden_dim),
            b_z: Matrix::zeros(hidden_dim, 1),
            b_r: Matrix::zeros(hidden_dim, 1),
            b_h: Matrix::zeros(hidden_dim, 1),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            w_z: Matrix::zeros(hidden_dim, input_dim),
            w_r: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, input_dim),
            u_z: Matrix::zeros(hidden_dim, hidden_dim),
            u_r: Matrix::zeros(hidden_dim, hidden_dim),
            u_h: Matrix::zeros(hidden_dim, hidden_dim),
            b_z: Matrix::zeros(hidden_dim, 1),
            b_r: Matrix::zeros(hidden_dim, 1),
            b_h: Matrix::zeros(hidden_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }
}

impl ParamBlocks for GruParams {
    fn blocks(&self) -> Vec<&Matrix> {
        vec![
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_z, &mut self.w_r, &mut self.w_h, &mut self.u_z, &mut self.u_r,
            &mut self.u_h, &mut self.b_z, &mut self.b_r, &mut self.b_h,
        ]
    }

    fn block_names(&self) -> Vec<String> {
        ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn zeros_like(&self) -> Self {
        GruParams::zeros(self.input_dim(), self.hidden_dim())
    }
}

/// Saved forward intermediates of one cell step.
#[derive(Debug, Clone)]
pub struct GruCellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

pub fn gru_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    p: &GruParams,
) -> Result<(Vec<f64>, GruCellCache)> {
    if x.len() != p.input_dim() || h_prev.len() != p.hidden_dim() {
        return Err(Error::dimension(format!(
            "gru cell expects input {} and hidden {}, got input {} and hidden {}",
            p.input_dim(),
            p.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    let add3 = |a: Vec<f64>, b: Vec<f64>, bias: &Matrix| -> Vec<f64> {
        a.iter()
            .zip(&b)
            .zip(bias.data())
            .map(|((av, bv), cv)| av + bv + cv)
            .collect()
    };

    let z = sigmoid_vec(&add3(p.w_z.matvec(x)?, p.u_z.matvec(h_prev)?, &p.b_z));
    let r = sigmoid_vec(&add3(p.w_r.matvec(x)?, p.u_r.matvec(h_prev)?, &p.b_r));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(rv, hv)| rv * hv).collect();
    let c = tanh_vec(&add3(p.w_h.matvec(x)?, p.u_h.matvec(&rh)?, &p.b_h));
    let h: Vec<f64> = z
        .iter()
        .zip(h_prev)
        .zip(&c)
        .map(|((zv, hv), cv)| (1.0 - zv) * hv + zv * cv)
        .collect();

    let cache = GruCellCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        c,
    };
    Ok((h, cache))
}

/// One cell step of backpropagation. Returns (dx, dh_prev) and adds this
/// call's parameter gradients into `grads`.
pub fn gru_cell_backward(
    p: &GruParams,
    cache: &GruCellCache,
    dh: &[f64],
    grads: &mut GruParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = p.hidden_dim();
    debug_assert_eq!(dh.len(), hd);

    let z = &cache.z;
    let r = &cache.r;
    let c = &cache.c;
    let h_prev = &cache.h_prev;
    let x = &cache.x;

    // h = (1-z) h_prev + z c
    let dc: Vec<f64> = dh.iter().zip(z).map(|(d, zv)| d * zv).collect();
    let dz: Vec<f64> = dh
        .iter()
        .zip(c.iter().zip(h_prev))
        .map(|(d, (cv, hv))| d * (cv - hv))
        .collect();
    let mut dh_prev: Vec<f64> = dh.iter().zip(z).map(|(d, zv)| d * (1.0 - zv)).collect();

    // candidate branch, through tanh
    let da_c: Vec<f64> = dc.iter().zip(c).map(|(d, cv)| d * (1.0 - cv * cv)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(rv, hv)| rv * hv).collect();
    grads.w_h.add_outer(&da_c, x);
    grads.u_h.add_outer(&da_c, &rh);
    for (b, &d) in grads.b_h.data_mut().iter_mut().zip(&da_c) {
        *b += d;
    }
    let drh = p.u_h.matvec_t(&da_c)?;
    let dr: Vec<f64> = drh.iter().zip(h_prev).map(|(d, hv)| d * hv).collect();
    for ((dhp, d), rv) in dh_prev.iter_mut().zip(&drh).zip(r) {
        *dhp += d * rv;
    }

    // update gate, through sigmoid
    let da_z: Vec<f64> = dz.iter().zip(z).map(|(d, zv)| d * zv * (1.0 - zv)).collect();
    grads.w_z.add_outer(&da_z, x);
    grads.u_z.add_outer(&da_z, h_prev);
    for (b, &d) in grads.b_z.data_mut().iter_mut().zip(&da_z) {
        *b += d;
    }
    for (dhp, d) in dh_prev.iter_mut().zip(p.u_z.matvec_t(&da_z)?) {
        *dhp += d;
    }

    // reset gate, through sigmoid
    let da_r: Vec<f64> = dr.iter().zip(r).map(|(d, rv)| d * rv * (1.0 - rv)).collect();
    grads.w_r.add_outer(&da_r, x);
    grads.u_r.add_outer(&da_r, h_prev);
    for (b, &d) in grads.b_r.data_mut().iter_mut().zip(&da_r) {
        *b += d;
    }
    for (dhp, d) in dh_prev.iter_mut().zip(p.u_r.matvec_t(&da_r)?) {
        *dhp += d;
    }

    // input gradient through all three input maps
    let mut dx = p.w_z.matvec_t(&da_z)?;
    for (a, b) in dx.iter_mut().zip(p.w_r.matvec_t(&da_r)?) {
        *a += b;
    }
    for (a, b) in dx.iter_mut().zip(p.w_h.matvec_t(&da_c)?) {
        *a += b;
    }

    Ok((dx, dh_prev))
}

// ---------------------------------------------------------------------------
// Bidirectional GRU
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: Vec<GruCellCache>,
    bwd: Vec<GruCellCache>, // indexed by sequence position, chain runs right to left
}

/// Runs a forward and a backward GRU over the sequence, both from zero
/// initial state, and concatenates the per-step states.
pub fn bigru_forward(
    xs: &[Vec<f64>],
    p_fwd: &GruParams,
    p_bwd: &GruParams,
) -> Result<(Vec<Vec<f64>>, BiGruCache)> {
    if xs.is_empty() {
        return Err(Error::argument("bigru over an empty sequence".to_string()));
    }
    if p_fwd.hidden_dim() != p_bwd.hidden_dim() || p_fwd.input_dim() != p_bwd.input_dim() {
        return Err(Error::dimension(format!(
            "bigru directions disagree: fwd {}x{}, bwd {}x{}",
            p_fwd.hidden_dim(),
            p_fwd.input_dim(),
            p_bwd.hidden_dim(),
            p_bwd.input_dim()
        )));
    }
    let n = xs.len();
    let hd = p_fwd.hidden_dim();

    let mut fwd_states = Vec::with_capacity(n);
    let mut fwd_caches = Vec::with_capacity(n);
    let mut h = vec![0.0; hd];
    for x in xs {
        let (next, cache) = gru_cell_forward(x, &h, p_fwd)?;
        fwd_caches.push(cache);
        fwd_states.push(next.clone());
        h = next;
    }

    let mut bwd_states = vec![Vec::new(); n];
    let mut bwd_caches: Vec<Option<GruCellCache>> = vec![None; n];
    let mut g = vec![0.0; hd];
    for t in (0..n).rev() {
        let (next, cache) = gru_cell_forward(&xs[t], &g, p_bwd)?;
        bwd_caches[t] = Some(cache);
        bwd_states[t] = next.clone();
        g = next;
    }

    let states = fwd_states
        .iter()
        .zip(&bwd_states)
        .map(|(f, b)| {
            let mut s = f.clone();
            s.extend_from_slice(b);
            s
        })
        .collect();

    let cache = BiGruCache {
        fwd: fwd_caches,
        bwd: bwd_caches.into_iter().map(|c| c.expect("filled")).collect(),
    };
    Ok((states, cache))
}

/// Backpropagation through both chains. `dstates[t]` is the gradient of
/// the concatenated state at step t. Returns per-step input gradients and
/// the parameter gradients of each direction.
pub fn bigru_backward(
    p_fwd: &GruParams,
    p_bwd: &GruParams,
    cache: &BiGruCache,
    dstates: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, GruParams, GruParams)> {
    let n = cache.fwd.len();
    if dstates.len() != n {
        return Err(Error::dimension(format!(
            "bigru backward got {} state gradients for {} steps",
            dstates.len(),
            n
        )));
    }
    let hd = p_fwd.hidden_dim();
    let id = p_fwd.input_dim();

    let mut g_fwd = p_fwd.zeros_like();
    let mut g_bwd = p_bwd.zeros_like();
    let mut dxs = vec![vec![0.0; id]; n];

    // left-to-right chain: BPTT runs right to left
    let mut carry = vec![0.0; hd];
    for t in (0..n).rev() {
        let mut dh: Vec<f64> = dstates[t][..hd].to_vec();
        for (a, b) in dh.iter_mut().zip(&carry) {
            *a += b;
        }
        let (dx, dh_prev) = gru_cell_backward(p_fwd, &cache.fwd[t], &dh, &mut g_fwd)?;
        for (a, b) in dxs[t].iter_mut().zip(&dx) {
            *a += b;
        }
        carry = dh_prev;
    }

    // right-to-left chain: BPTT runs left to right
    let mut carry = vec![0.0; hd];
    for (t, dstate) in dstates.iter().enumerate() {
        let mut dh: Vec<f64> = dstate[hd..].to_vec();
        for (a, b) in dh.iter_mut().zip(&carry) {
            *a += b;
        }
        let (dx, dh_prev) = gru_cell_backward(p_bwd, &cache.bwd[t], &dh, &mut g_bwd)?;
        for (a, b) in dxs[t].iter_mut().zip(&dx) {
            *a += b;
        }
        carry = dh_prev;
    }

    Ok((dxs, g_fwd, g_bwd))
}

// ---------------------------------------------------------------------------
// Additive attention
// ---------------------------------------------------------------------------

/// Additive scorer over a state sequence: score_j = uᵀ tanh(W s_j + b),
/// weights = softmax(scores), context = Σ weights_j s_j.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w: Matrix, // att_dim x state_dim
    pub b: Matrix, // att_dim x 1
    pub u: Matrix, // att_dim x 1
}

impl AttentionParams {
    pub fn new(state_dim: usize, att_dim: usize, rng: &mut Rng) -> Self {
        AttentionParams {
            w: init_weight(rng, att_dim, state_dim),
            b: Matrix::zeros(att_dim, 1),
            u: init_weight(rng, att_dim, 1),
        }
    }

    pub fn zeros(state_dim: usize, att_dim: usize) -> Self {
        AttentionParams {
            w: Matrix::zeros(att_dim, state_dim),
            b: Matrix::zeros(att_dim, 1),
            u: Matrix::zeros(att_dim, 1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn att_dim(&self) -> usize {
        self.w.rows()
    }
}

impl ParamBlocks for AttentionParams {
    fn blocks(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b, &self.u]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b, &mut self.u]
    }

    fn block_names(&self) -> Vec<String> {
        ["w", "b", "u"].iter().map(|s| s.to_string()).collect()
    }

    fn zeros_like(&self) -> Self {
        AttentionParams::zeros(self.state_dim(), self.att_dim())
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    states: Vec<Vec<f64>>,
    projected: Vec<Vec<f64>>, // tanh(W s_j + b)
    weights: Vec<f64>,
}

pub fn attention_forward(
    states: &[Vec<f64>],
    p: &AttentionParams,
) -> Result<(Vec<f64>, Vec<f64>, AttentionCache)> {
    if states.is_empty() {
        return Err(Error::argument("attention over an empty sequence".to_string()));
    }
    let mut projected = Vec::with_capacity(states.len());
    let mut scores = Vec::with_capacity(states.len());
    for s in states {
        let mut a = p.w.matvec(s)?;
        for (av, bv) in a.iter_mut().zip(p.b.data()) {
            *av += bv;
        }
        let q = tanh_vec(&a);
        scores.push(q.iter().zip(p.u.data()).map(|(qv, uv)| qv * uv).sum::<f64>());
        projected.push(q);
    }
    let weights = softmax(&scores)?;

    let state_dim = states[0].len();
    let mut context = vec![0.0; state_dim];
    for (w, s) in weights.iter().zip(states) {
        for (c, &sv) in context.iter_mut().zip(s) {
            *c += w * sv;
        }
    }

    let cache = AttentionCache {
        states: states.to_vec(),
        projected,
        weights: weights.clone(),
    };
    Ok((context, weights, cache))
}

/// Gradient of the context vector with respect to states and parameters.
pub fn attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    d_context: &[f64],
) -> Result<(Vec<Vec<f64>>, AttentionParams)> {
    let n = cache.states.len();
    let mut grads = p.zeros_like();

    // context = Σ w_j s_j
    let mut dstates: Vec<Vec<f64>> = cache
        .weights
        .iter()
        .map(|w| d_context.iter().map(|d| d * w).collect())
        .collect();
    let dweights: Vec<f64> = cache
        .states
        .iter()
        .map(|s| s.iter().zip(d_context).map(|(sv, dv)| sv * dv).sum())
        .collect();

    // softmax backward: de_j = w_j (dw_j - Σ_k dw_k w_k)
    let dot: f64 = dweights.iter().zip(&cache.weights).map(|(d, w)| d * w).sum();
    let dscores: Vec<f64> = dweights
        .iter()
        .zip(&cache.weights)
        .map(|(d, w)| w * (d - dot))
        .collect();

    for j in 0..n {
        let q = &cache.projected[j];
        let de = dscores[j];
        // score_j = uᵀ q_j
        for (gu, qv) in grads.u.data_mut().iter_mut().zip(q) {
            *gu += de * qv;
        }
        let da: Vec<f64> = q
            .iter()
            .zip(p.u.data())
            .map(|(qv, uv)| de * uv * (1.0 - qv * qv))
            .collect();
        grads.w.add_outer(&da, &cache.states[j]);
        for (gb, &d) in grads.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        for (ds, d) in dstates[j].iter_mut().zip(p.w.matvec_t(&da)?) {
            *ds += d;
        }
    }

    Ok((dstates, grads))
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    activation: Activation,
}

/// y = act(W x + b).
pub fn dense_forward(
    x: &[f64],
    w: &Matrix,
    b: &[f64],
    activation: Activation,
) -> Result<(Vec<f64>, DenseCache)> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::dimension(format!(
            "dense expects weight {}x{} against input {} and bias {}",
            w.rows(),
            w.cols(),
            x.len(),
            b.len()
        )));
    }
    let mut pre = w.matvec(x)?;
    for (p, bv) in pre.iter_mut().zip(b) {
        *p += bv;
    }
    let y = match activation {
        Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
        Activation::None => pre.clone(),
    };
    let cache = DenseCache { x: x.to_vec(), pre, activation };
    Ok((y, cache))
}

/// Returns (dx, dW, db).
pub fn dense_backward(
    w: &Matrix,
    cache: &DenseCache,
    dy: &[f64],
) -> Result<(Vec<f64>, Matrix, Vec<f64>)> {
    debug_assert_eq!(dy.len(), w.rows());
    let dpre: Vec<f64> = match cache.activation {
        Activation::Relu => dy
            .iter()
            .zip(&cache.pre)
            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
            .collect(),
        Activation::None => dy.to_vec(),
    };
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    dw.add_outer(&dpre, &cache.x);
    let dx = w.matvec_t(&dpre)?;
    Ok((dx, dw, dpre))
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DropoutCache {
    // per element: 0.0 for dropped, 1/(1-p) for kept; all 1.0 in eval mode
    scale: Vec<f64>,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p_discard` and survivors are scaled by 1/(1-p_discard); eval mode is
/// the identity.
pub fn dropout_forward(
    x: &[f64],
    p_discard: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Vec<f64>, DropoutCache)> {
    if !(0.0..1.0).contains(&p_discard) {
        return Err(Error::argument(format!(
            "dropout discard probability must lie in [0, 1), got {p_discard}"
        )));
    }
    if mode == Mode::Eval || p_discard == 0.0 {
        return Ok((x.to_vec(), DropoutCache { scale: vec![1.0; x.len()] }));
    }
    let keep_scale = 1.0 / (1.0 - p_discard);
    let scale: Vec<f64> = x
        .iter()
        .map(|_| if rng.next_f64() < p_discard { 0.0 } else { keep_scale })
        .collect();
    let y = x.iter().zip(&scale).map(|(v, s)| v * s).collect();
    Ok((y, DropoutCache { scale }))
}

pub fn dropout_backward(cache: &DropoutCache, dy: &[f64]) -> Vec<f64> {
    debug_assert_eq!(dy.len(), cache.scale.len());
    dy.iter().zip(&cache.scale).map(|(d, s)| d * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn embed_song_identity_and_oracle() {
        let e = Matrix::identity(3);
        assert_eq!(embed_song(1, &e).unwrap(), vec![0.0, 1.0, 0.0]);

        let mut rng = Rng::new(11);
        let e = rng.uniform_matrix(-1.0, 1.0, 4, 6).unwrap();
        for j in 0..6 {
            // one-hot multiply oracle
            let mut one_hot = Matrix::zeros(6, 1);
            one_hot.set(j, 0, 1.0);
            let want = e.matmul(&one_hot).unwrap();
            assert_eq!(embed_song(j, &e).unwrap(), want.data());
        }
        assert!(matches!(embed_song(6, &e), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn embed_tags_average_cases() {
        let e = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(embed_tags_avg(&[0], &e).unwrap(), vec![1.0, 0.0]);
        assert_eq!(embed_tags_avg(&[0, 1], &e).unwrap(), vec![0.5, 0.5]);
        assert_eq!(embed_tags_avg(&[], &e).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(embed_tags_avg(&[2], &e), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn gru_cell_zero_params_zero_state() {
        let p = GruParams::zeros(3, 2);
        let (h, _) = gru_cell_forward(&[0.4, -0.2, 0.9], &[0.0, 0.0], &p).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    // independent straight-line transcription of the four gate formulas
    fn gru_reference(x: &[f64], h_prev: &[f64], p: &GruParams) -> Vec<f64> {
        let hd = p.hidden_dim();
        let mut z = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        for i in 0..hd {
            let mut az = p.b_z.get(i, 0);
            let mut ar = p.b_r.get(i, 0);
            for (j, &xv) in x.iter().enumerate() {
                az += p.w_z.get(i, j) * xv;
                ar += p.w_r.get(i, j) * xv;
            }
            for (j, &hv) in h_prev.iter().enumerate() {
                az += p.u_z.get(i, j) * hv;
                ar += p.u_r.get(i, j) * hv;
            }
            z[i] = 1.0 / (1.0 + (-az).exp());
            r[i] = 1.0 / (1.0 + (-ar).exp());
        }
        let mut h = vec![0.0; hd];
        for i in 0..hd {
            let mut ac = p.b_h.get(i, 0);
            for (j, &xv) in x.iter().enumerate() {
                ac += p.w_h.get(i, j) * xv;
            }
            for (j, &hv) in h_prev.iter().enumerate() {
                ac += p.u_h.get(i, j) * (r[j] * hv);
            }
            let c = ac.tanh();
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c;
        }
        h
    }

    #[test]
    fn gru_cell_matches_formula_oracle() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let p = GruParams::new(3, 4, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
            let h0: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
            let (h, _) = gru_cell_forward(&x, &h0, &p).unwrap();
            let want = gru_reference(&x, &h0, &p);
            for (a, b) in h.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gru_cell_shape_mismatch() {
        let p = GruParams::zeros(3, 2);
        assert!(matches!(
            gru_cell_forward(&[0.0; 2], &[0.0; 2], &p),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            gru_cell_forward(&[0.0; 3], &[0.0; 3], &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bigru_single_step_is_pair_of_cells() {
        let mut rng = Rng::new(31);
        let p_f = GruParams::new(3, 2, &mut rng);
        let p_b = GruParams::new(3, 2, &mut rng);
        let x = vec![0.3, -0.5, 0.8];
        let (states, _) = bigru_forward(std::slice::from_ref(&x), &p_f, &p_b).unwrap();
        let (hf, _) = gru_cell_forward(&x, &[0.0, 0.0], &p_f).unwrap();
        let (hb, _) = gru_cell_forward(&x, &[0.0, 0.0], &p_b).unwrap();
        let mut want = hf;
        want.extend(hb);
        assert_eq!(states[0], want);
    }

    #[test]
    fn bigru_composes_iterated_cells() {
        let mut rng = Rng::new(32);
        let p_f = GruParams::new(2, 3, &mut rng);
        let p_b = GruParams::new(2, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect())
            .collect();
        let (states, _) = bigru_forward(&xs, &p_f, &p_b).unwrap();

        let mut h = vec![0.0; 3];
        let mut fwd = Vec::new();
        for x in &xs {
            let (next, _) = gru_cell_forward(x, &h, &p_f).unwrap();
            fwd.push(next.clone());
            h = next;
        }
        let mut g = vec![0.0; 3];
        let mut bwd = vec![Vec::new(); 3];
        for t in (0..3).rev() {
            let (next, _) = gru_cell_forward(&xs[t], &g, &p_b).unwrap();
            bwd[t] = next.clone();
            g = next;
        }
        for t in 0..3 {
            assert_eq!(&states[t][..3], fwd[t].as_slice());
            assert_eq!(&states[t][3..], bwd[t].as_slice());
        }
    }

    #[test]
    fn bigru_empty_sequence_is_argument_error() {
        let p = GruParams::zeros(2, 2);
        assert!(matches!(bigru_forward(&[], &p, &p), Err(Error::Argument(_))));
    }

    #[test]
    fn bigru_palindrome_symmetry() {
        let mut rng = Rng::new(33);
        let p = GruParams::new(2, 3, &mut rng);
        let a: Vec<f64> = vec![0.2, -0.7];
        let b: Vec<f64> = vec![0.9, 0.1];
        let c: Vec<f64> = vec![-0.4, 0.5];
        // palindrome a b c b a with shared direction parameters
        let xs = vec![a.clone(), b.clone(), c, b, a];
        let (states, _) = bigru_forward(&xs, &p, &p).unwrap();
        let m = xs.len();
        for j in 0..m {
            let fwd_j = &states[j][..3];
            let bwd_mirror = &states[m - 1 - j][3..];
            for (x, y) in fwd_j.iter().zip(bwd_mirror) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_singleton_and_uniform() {
        let mut rng = Rng::new(41);
        let p = AttentionParams::new(4, 2, &mut rng);
        let s = vec![0.1, -0.2, 0.3, 0.9];
        let (ctx, w, _) = attention_forward(std::slice::from_ref(&s), &p).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(ctx, s);

        // u = 0 makes every score 0: uniform weights, mean context
        let mut p0 = AttentionParams::new(3, 2, &mut rng);
        p0.u = Matrix::zeros(2, 1);
        let states = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (ctx, w, _) = attention_forward(&states, &p0).unwrap();
        for wv in &w {
            assert!((wv - 1.0 / 3.0).abs() < 1e-15);
        }
        for cv in &ctx {
            assert!((cv - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_weights_form_simplex() {
        let mut rng = Rng::new(42);
        for _ in 0..50 {
            let n = 1 + rng.next_index(5);
            let p = AttentionParams::new(3, 2, &mut rng);
            let states: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0).unwrap()).collect())
                .collect();
            let (_, w, _) = attention_forward(&states, &p).unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_identity_and_relu() {
        let w = Matrix::identity(2);
        let b = vec![0.0, 0.0];
        let (y, _) = dense_forward(&[3.0, -4.0], &w, &b, Activation::None).unwrap();
        assert_eq!(y, vec![3.0, -4.0]);
        let (y, _) = dense_forward(&[-1.0, 2.0], &w, &b, Activation::Relu).unwrap();
        assert_eq!(y, vec![0.0, 2.0]);
        assert!(matches!(
            dense_forward(&[1.0], &w, &b, Activation::None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dense_backward_picks_weight_row() {
        // with grad_out = e_k and no activation, grad_in is row k of W
        let w = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let (_, cache) = dense_forward(&[0.5, -0.5, 1.0], &w, &[0.0, 0.0], Activation::None).unwrap();
        let (dx, _, db) = dense_backward(&w, &cache, &[0.0, 1.0]).unwrap();
        assert_eq!(dx, vec![4.0, 5.0, 6.0]);
        assert_eq!(db, vec![0.0, 1.0]);
    }

    #[test]
    fn chained_dense_relu_matches_jacobian_product() {
        // dense(no act) ∘ relu ∘ dense(no act): compare layer backward with
        // an explicit Jacobian product on a fixed instance
        let w1 = Matrix::from_rows(vec![vec![1.0, -2.0], vec![0.5, 1.5]]).unwrap();
        let w2 = Matrix::from_rows(vec![vec![2.0, -1.0]]).unwrap();
        let x = [1.0, 1.0];
        let (h, c1) = dense_forward(&x, &w1, &[0.0, 0.0], Activation::Relu).unwrap();
        let (_, c2) = dense_forward(&h, &w2, &[0.0], Activation::None).unwrap();

        let dy = [1.0];
        let (dh, _, _) = dense_backward(&w2, &c2, &dy).unwrap();
        let (dx, _, _) = dense_backward(&w1, &c1, &dh).unwrap();

        // explicit: J1 = diag(pre > 0) W1, J2 = W2, dx = J1ᵀ J2ᵀ dy
        // pre = W1 x = [-1, 2] so the first unit is clamped
        let j2t_dy = [2.0, -1.0];
        let masked = [0.0, j2t_dy[1]];
        let want = [
            w1.get(0, 0) * masked[0] + w1.get(1, 0) * masked[1],
            w1.get(0, 1) * masked[0] + w1.get(1, 1) * masked[1],
        ];
        assert_eq!(dx, want);
    }

    #[test]
    fn dropout_eval_is_bitexact_identity() {
        let mut rng = Rng::new(51);
        let x: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        let (y, _) = dropout_forward(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(x, y);
        let (y, _) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = Rng::new(52);
        let n = 100_000;
        let x = vec![1.0; n];
        let (y, cache) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.iter().filter(|&&v| v != 0.0).count();
        assert!((survivors as f64 / n as f64 - 0.5).abs() < 0.01);
        let mean: f64 = y.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02);

        // backward applies the same mask and scale
        let dy = vec![1.0; n];
        let dx = dropout_backward(&cache, &dy);
        assert_eq!(dx, cache.scale);
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let mut rng = Rng::new(53);
        assert!(matches!(
            dropout_forward(&[1.0], 1.0, Mode::Train, &mut rng),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            dropout_forward(&[1.0], -0.1, Mode::Train, &mut rng),
            Err(Error::Argument(_))
        ));
    }
}
