//! Pre-LayerNorm transformer encoder with an MLM output head, with a
//! hand-written backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::PAD_ID;
use crate::error::{Error, Result};
use crate::rng::{derived_rng, STREAM_INIT};

const LN_EPS: f64 = 1e-5;

/// Floating-point element type of a model.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    /// Stored in checkpoints.
    const TAG: u8;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
    const BYTES: usize;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {
    const TAG: u8 = 4;
    const BYTES: usize = 4;
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const TAG: u8 = 8;
    const BYTES: usize = 8;
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Reuse the token embedding as the output projection.
    pub tied: bool,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 128,
            heads: 2,
            ff: 512,
            vocab_size: crate::corpus::DEFAULT_VOCAB_SIZE,
            seq_len: crate::corpus::DEFAULT_SEQ_LEN,
            tied: true,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("model.layers", self.layers),
            ("model.hidden", self.hidden),
            ("model.heads", self.heads),
            ("model.ff", self.ff),
            ("model.vocab_size", self.vocab_size),
            ("model.seq_len", self.seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.hidden {} not divisible by model.heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("model.init_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Array1<F>,
    pub ln1_b: Array1<F>,
    /// `hidden x 3*hidden`, columns ordered Q | K | V.
    pub w_qkv: Array2<F>,
    pub b_qkv: Array1<F>,
    pub w_o: Array2<F>,
    pub b_o: Array1<F>,
    pub ln2_g: Array1<F>,
    pub ln2_b: Array1<F>,
    pub w_ff1: Array2<F>,
    pub b_ff1: Array1<F>,
    pub w_ff2: Array2<F>,
    pub b_ff2: Array1<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    /// `vocab x hidden`
    pub tok_emb: Array2<F>,
    /// `seq_len x hidden`
    pub pos_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_g: Array1<F>,
    pub lnf_b: Array1<F>,
    /// `vocab x hidden`; absent when tied to `tok_emb`.
    pub out_w: Option<Array2<F>>,
    pub out_b: Array1<F>,
}

/// Name, element count, and whether weight decay applies, per tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
    pub decay: bool,
}

fn slice_mut<F, D: ndarray::Dimension>(a: &mut ndarray::Array<F, D>) -> &mut [F] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice<F, D: ndarray::Dimension>(a: &ndarray::Array<F, D>) -> &[F] {
    a.as_slice().expect("parameters are contiguous")
}

impl<F: Scalar> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden;
        let layer = || LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w_ff1: Array2::zeros((d, cfg.ff)),
            b_ff1: Array1::zeros(cfg.ff),
            w_ff2: Array2::zeros((cfg.ff, d)),
            b_ff2: Array1::zeros(d),
        };
        Params {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.seq_len, d)),
            layers: (0..cfg.layers).map(|_| layer()).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            out_w: (!cfg.tied).then(|| Array2::zeros((cfg.vocab_size, d))),
            out_b: Array1::zeros(cfg.vocab_size),
        }
    }

    /// Normal(0, init_std) matrices and embeddings, unit LayerNorm gains,
    /// zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = derived_rng(&[seed, STREAM_INIT]);
        let normal = Normal::new(0.0, cfg.init_std.max(f64::MIN_POSITIVE)).expect("valid std");
        let std = cfg.init_std;
        let fill = |a: &mut [F], rng: &mut rand_chacha::ChaCha8Rng| {
            for v in a {
                *v = if std == 0.0 { F::zero() } else { F::of(normal.sample(rng)) };
            }
        };
        fill(slice_mut(&mut p.tok_emb), &mut rng);
        fill(slice_mut(&mut p.pos_emb), &mut rng);
        for l in &mut p.layers {
            l.ln1_g.fill(F::one());
            l.ln2_g.fill(F::one());
            fill(slice_mut(&mut l.w_qkv), &mut rng);
            fill(slice_mut(&mut l.w_o), &mut rng);
            fill(slice_mut(&mut l.w_ff1), &mut rng);
            fill(slice_mut(&mut l.w_ff2), &mut rng);
        }
        p.lnf_g.fill(F::one());
        if let Some(w) = &mut p.out_w {
            fill(slice_mut(w), &mut rng);
        }
        p
    }

    pub fn tensor_info(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut push = |name: String, len: usize, decay: bool| out.push(TensorInfo { name, len, decay });
        push("tok_emb".into(), self.tok_emb.len(), true);
        push("pos_emb".into(), self.pos_emb.len(), true);
        for (i, l) in self.layers.iter().enumerate() {
            push(format!("layer{i}.ln1_g"), l.ln1_g.len(), false);
            push(format!("layer{i}.ln1_b"), l.ln1_b.len(), false);
            push(format!("layer{i}.w_qkv"), l.w_qkv.len(), true);
            push(format!("layer{i}.b_qkv"), l.b_qkv.len(), false);
            push(format!("layer{i}.w_o"), l.w_o.len(), true);
            push(format!("layer{i}.b_o"), l.b_o.len(), false);
            push(format!("layer{i}.ln2_g"), l.ln2_g.len(), false);
            push(format!("layer{i}.ln2_b"), l.ln2_b.len(), false);
            push(format!("layer{i}.w_ff1"), l.w_ff1.len(), true);
            push(format!("layer{i}.b_ff1"), l.b_ff1.len(), false);
            push(format!("layer{i}.w_ff2"), l.w_ff2.len(), true);
            push(format!("layer{i}.b_ff2"), l.b_ff2.len(), false);
        }
        push("lnf_g".into(), self.lnf_g.len(), false);
        push("lnf_b".into(), self.lnf_b.len(), false);
        if let Some(w) = &self.out_w {
            push("out_w".into(), w.len(), true);
        }
        push("out_b".into(), self.out_b.len(), false);
        out
    }

    /// Every tensor as a flat slice, in [`Params::tensor_info`] order.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![slice(&self.tok_emb), slice(&self.pos_emb)];
        for l in &self.layers {
            out.extend([
                slice(&l.ln1_g),
                slice(&l.ln1_b),
                slice(&l.w_qkv),
                slice(&l.b_qkv),
                slice(&l.w_o),
                slice(&l.b_o),
                slice(&l.ln2_g),
                slice(&l.ln2_b),
                slice(&l.w_ff1),
                slice(&l.b_ff1),
                slice(&l.w_ff2),
                slice(&l.b_ff2),
            ]);
        }
        out.extend([slice(&self.lnf_g), slice(&self.lnf_b)]);
        if let Some(w) = &self.out_w {
            out.push(slice(w));
        }
        out.push(slice(&self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![slice_mut(&mut self.tok_emb), slice_mut(&mut self.pos_emb)];
        for l in &mut self.layers {
            out.extend([
                slice_mut(&mut l.ln1_g),
                slice_mut(&mut l.ln1_b),
                slice_mut(&mut l.w_qkv),
                slice_mut(&mut l.b_qkv),
                slice_mut(&mut l.w_o),
                slice_mut(&mut l.b_o),
                slice_mut(&mut l.ln2_g),
                slice_mut(&mut l.ln2_b),
                slice_mut(&mut l.w_ff1),
                slice_mut(&mut l.b_ff1),
                slice_mut(&mut l.w_ff2),
                slice_mut(&mut l.b_ff2),
            ]);
        }
        out.extend([slice_mut(&mut self.lnf_g), slice_mut(&mut self.lnf_b)]);
        if let Some(w) = &mut self.out_w {
            out.push(slice_mut(w));
        }
        out.push(slice_mut(&mut self.out_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(F::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn head_weight(&self) -> &Array2<F> {
        self.out_w.as_ref().unwrap_or(&self.tok_emb)
    }
}

/// Inputs and prediction targets of one sequence.
#[derive(Clone, Debug)]
pub struct SequenceBatchItem<'a> {
    pub input_ids: &'a [u32],
    /// `(position, target id)`
    pub targets: Vec<(usize, u32)>,
}

/// Token-level negative log-likelihoods of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// Per sequence, one entry per target in the order given.
    pub token_nll: Vec<Vec<f64>>,
    /// Mean over all targets of the batch.
    pub mean: f64,
    pub targets: usize,
}

/// Deliberate backward-pass defects for validating the gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradFault {
    #[default]
    None,
    /// Drop the `1/sqrt(head_dim)` factor from the attention-score gradient.
    SkipAttentionScale,
}

struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

struct LayerCache<F> {
    ln1: LnCache<F>,
    h1: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    ln2: LnCache<F>,
    h2: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
}

struct ForwardCache<F> {
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    hidden: Array2<F>,
}

fn layer_norm<F: Scalar>(x: &Array2<F>, g: &Array1<F>, b: &Array1<F>) -> (Array2<F>, LnCache<F>) {
    let n = x.nrows();
    let d = F::of(x.ncols() as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(n);
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |a, &v| a + v * v) / d;
        let s = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * s);
        *is = s;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates dg and db.
fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    g: &Array1<F>,
    dg: &mut Array1<F>,
    db: &mut Array1<F>,
) -> Array2<F> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = F::of(dy.ncols() as f64);
    let mut dx = dy * g;
    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh).fold(F::zero(), |a, (&u, &v)| a + u * v) / d;
        for (u, &v) in row.iter_mut().zip(xh) {
            *u = is * (*u - mean_d - v * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Scalar>(u: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * u * (F::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<F: Scalar>(u: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (F::one() + t) + half * u * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * u * u)
}

/// Row-wise log-softmax in place.
fn log_softmax_rows<F: Scalar>(mut x: ArrayViewMut2<F>) {
    for mut row in x.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.fold(F::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
}

/// `c += a · b`
fn add_mat_mul<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>, c: &mut ArrayViewMut2<F>) {
    general_mat_mul(F::one(), a, b, F::one(), c);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Params::init(&config, seed),
            config,
        })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.seq_len || ids.is_empty() {
            return Err(Error::LengthMismatch {
                expected: self.config.seq_len,
                got: ids.len(),
            });
        }
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn forward_hidden(&self, ids: &[u32]) -> ForwardCache<F> {
        let cfg = &self.config;
        let p = &self.params;
        let n = ids.len();
        let d = cfg.hidden;
        let dh = cfg.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let key_masked: Vec<bool> = ids.iter().map(|&id| id == PAD_ID).collect();

        let mut x = Array2::<F>::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&p.tok_emb.row(id as usize));
            row += &p.pos_emb.row(i);
        }

        let mut caches = Vec::with_capacity(cfg.layers);
        for lp in &p.layers {
            let (h1, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let qkv = h1.dot(&lp.w_qkv) + &lp.b_qkv;
            let mut ctx = Array2::<F>::zeros((n, d));
            let mut probs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut scores = q.dot(&k.t());
                for mut row in scores.rows_mut() {
                    for (j, val) in row.iter_mut().enumerate() {
                        *val = if key_masked[j] { F::neg_infinity() } else { *val * scale };
                    }
                    let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
                    let mut sum = F::zero();
                    row.mapv_inplace(|v| {
                        let e = (v - max).exp();
                        sum += e;
                        e
                    });
                    row.mapv_inplace(|v| v / sum);
                }
                ctx.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&scores.dot(&v));
                probs.push(scores);
            }
            x = x + ctx.dot(&lp.w_o) + &lp.b_o;
            let (h2, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
            let ff_pre = h2.dot(&lp.w_ff1) + &lp.b_ff1;
            let ff_act = ff_pre.mapv(gelu);
            x = x + ff_act.dot(&lp.w_ff2) + &lp.b_ff2;
            caches.push(LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                ctx,
                ln2,
                h2,
                ff_pre,
                ff_act,
            });
        }
        let (hidden, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
        ForwardCache {
            layers: caches,
            lnf,
            hidden,
        }
    }

    fn head_logits(&self, rows: &Array2<F>) -> Array2<F> {
        rows.dot(&self.params.head_weight().t()) + &self.params.out_b
    }

    /// Log-probabilities over the vocabulary at every position of every
    /// sequence: shape `(batch, seq_len, vocab)`.
    pub fn forward_mlm(&self, batch: &[&[u32]]) -> Result<Array3<F>> {
        let n = batch.first().map_or(0, |s| s.len());
        let mut out = Array3::<F>::zeros((batch.len(), n, self.config.vocab_size));
        for (b, ids) in batch.iter().enumerate() {
            self.check_ids(ids)?;
            if ids.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: ids.len(),
                });
            }
            let cache = self.forward_hidden(ids);
            let mut logits = self.head_logits(&cache.hidden);
            log_softmax_rows(logits.view_mut());
            out.slice_mut(s![b, .., ..]).assign(&logits);
        }
        Ok(out)
    }

    /// Token-level losses without gradients.
    pub fn loss(&self, batch: &[SequenceBatchItem<'_>]) -> Result<BatchLoss> {
        self.run(batch, None, GradFault::None)
    }

    /// Mean masked-token loss of the batch; gradients of that mean are added
    /// to `grads`.
    pub fn loss_and_grad(&self, batch: &[SequenceBatchItem<'_>], grads: &mut Params<F>) -> Result<BatchLoss> {
        self.run(batch, Some(grads), GradFault::None)
    }

    #[doc(hidden)]
    pub fn loss_and_grad_faulty(
        &self,
        batch: &[SequenceBatchItem<'_>],
        grads: &mut Params<F>,
        fault: GradFault,
    ) -> Result<BatchLoss> {
        self.run(batch, Some(grads), fault)
    }

    fn run(&self, batch: &[SequenceBatchItem<'_>], mut grads: Option<&mut Params<F>>, fault: GradFault) -> Result<BatchLoss> {
        let total: usize = batch.iter().map(|b| b.targets.len()).sum();
        if total == 0 {
            return Err(Error::EmptyMask);
        }
        for item in batch {
            self.check_ids(item.input_ids)?;
            for &(pos, target) in &item.targets {
                if pos >= item.input_ids.len() {
                    return Err(Error::Other(format!("target position {pos} out of range")));
                }
                if target as usize >= self.config.vocab_size {
                    return Err(Error::TokenOutOfRange {
                        id: target,
                        vocab_size: self.config.vocab_size,
                    });
                }
            }
        }
        let inv_total = F::of(1.0 / total as f64);
        let mut token_nll = Vec::with_capacity(batch.len());
        let mut sum = 0.0f64;
        for item in batch {
            let cache = self.forward_hidden(item.input_ids);
            let positions: Vec<usize> = item.targets.iter().map(|t| t.0).collect();
            let rows = cache.hidden.select(Axis(0), &positions);
            let mut logp = self.head_logits(&rows);
            log_softmax_rows(logp.view_mut());
            let nll: Vec<f64> = item
                .targets
                .iter()
                .enumerate()
                .map(|(r, &(_, t))| -logp[[r, t as usize]].to_f64().unwrap())
                .collect();
            sum += nll.iter().sum::<f64>();
            token_nll.push(nll);
            if let Some(g) = grads.as_deref_mut() {
                // d(mean nll)/dlogits = (softmax - onehot) / total
                let mut dlogits = logp.mapv(|v| v.exp() * inv_total);
                for (r, &(_, t)) in item.targets.iter().enumerate() {
                    dlogits[[r, t as usize]] -= inv_total;
                }
                self.backward(item.input_ids, &cache, &positions, &rows, &dlogits, g, fault);
            }
        }
        Ok(BatchLoss {
            token_nll,
            mean: sum / total as f64,
            targets: total,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        ids: &[u32],
        cache: &ForwardCache<F>,
        positions: &[usize],
        rows: &Array2<F>,
        dlogits: &Array2<F>,
        g: &mut Params<F>,
        fault: GradFault,
    ) {
        let cfg = &self.config;
        let p = &self.params;
        let n = ids.len();
        let d = cfg.hidden;
        let dh = cfg.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());

        // output head
        g.out_b += &dlogits.sum_axis(Axis(0));
        {
            let gw = match &mut g.out_w {
                Some(w) => w,
                None => &mut g.tok_emb,
            };
            add_mat_mul(&dlogits.t(), &rows.view(), &mut gw.view_mut());
        }
        let drows = dlogits.dot(p.head_weight());
        let mut dhidden = Array2::<F>::zeros((n, d));
        for (r, &pos) in positions.iter().enumerate() {
            let mut row = dhidden.row_mut(pos);
            row += &drows.row(r);
        }

        let mut dx = layer_norm_backward(&dhidden, &cache.lnf, &p.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        for (li, lc) in cache.layers.iter().enumerate().rev() {
            let lp = &p.layers[li];
            let lg = &mut g.layers[li];

            // feed-forward block: x += gelu(h2 W1 + b1) W2 + b2
            lg.b_ff2 += &dx.sum_axis(Axis(0));
            add_mat_mul(&lc.ff_act.t(), &dx.view(), &mut lg.w_ff2.view_mut());
            let mut dpre = dx.dot(&lp.w_ff2.t());
            ndarray::Zip::from(&mut dpre)
                .and(&lc.ff_pre)
                .for_each(|g, &u| *g *= gelu_grad(u));
            lg.b_ff1 += &dpre.sum_axis(Axis(0));
            add_mat_mul(&lc.h2.t(), &dpre.view(), &mut lg.w_ff1.view_mut());
            let dh2 = dpre.dot(&lp.w_ff1.t());
            dx += &layer_norm_backward(&dh2, &lc.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);

            // attention block: x += ctx W_o + b_o
            lg.b_o += &dx.sum_axis(Axis(0));
            add_mat_mul(&lc.ctx.t(), &dx.view(), &mut lg.w_o.view_mut());
            let dctx = dx.dot(&lp.w_o.t());
            let mut dqkv = Array2::<F>::zeros((n, 3 * d));
            let score_scale = match fault {
                GradFault::SkipAttentionScale => F::one(),
                GradFault::None => scale,
            };
            for h in 0..cfg.heads {
                let q = lc.qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = lc.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
                let v = lc.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let a = &lc.probs[h];
                let dout = dctx.slice(s![.., h * dh..(h + 1) * dh]);
                let da = dout.dot(&v.t());
                let dv = a.t().dot(&dout);
                let mut ds = da;
                for (mut ds_row, a_row) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot = ds_row.iter().zip(a_row).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
                    for (x, &y) in ds_row.iter_mut().zip(a_row) {
                        *x = y * (*x - dot) * score_scale;
                    }
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
                dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dk);
                dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
            }
            lg.b_qkv += &dqkv.sum_axis(Axis(0));
            add_mat_mul(&lc.h1.t(), &dqkv.view(), &mut lg.w_qkv.view_mut());
            let dh1 = dqkv.dot(&lp.w_qkv.t());
            dx += &layer_norm_backward(&dh1, &lc.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        }

        for (i, &id) in ids.iter().enumerate() {
            let row = dx.row(i);
            let mut t = g.tok_emb.row_mut(id as usize);
            t += &row;
            let mut pe = g.pos_emb.row_mut(i);
            pe += &row;
        }
    }
}

/// Random inputs and targets for a model, used by tests and the gradient
/// checker.
pub fn random_items<R: Rng>(cfg: &ModelConfig, batch: usize, targets_per_seq: usize, rng: &mut R) -> Vec<(Vec<u32>, Vec<(usize, u32)>)> {
    let first = crate::corpus::vocab::RESERVED_TOKENS.len() as u32;
    (0..batch)
        .map(|_| {
            let n = cfg.seq_len;
            let pad = rng.gen_range(0..=n / 3);
            let mut ids: Vec<u32> = (0..n - pad)
                .map(|_| rng.gen_range(first.min(cfg.vocab_size as u32 - 1)..cfg.vocab_size as u32))
                .collect();
            ids.extend(std::iter::repeat(PAD_ID).take(pad));
            let live = n - pad;
            let mut positions: Vec<usize> = rand::seq::index::sample(rng, live, targets_per_seq.min(live)).into_vec();
            positions.sort_unstable();
            let targets = positions
                .into_iter()
                .map(|p| (p, rng.gen_range(0..cfg.vocab_size as u32)))
                .collect();
            (ids, targets)
        })
        .collect()
}
