//! Tokenizer training: reconstruction, commitment and wrist losses with
//! straight-through gradients, Adam on the networks and EMA codebooks.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{kmeans_pp_seed, CodeStats, Codebook};
use super::config::{PartKind, QuantizerConfig};
use super::grq::{grq_quantize, grq_quantize_traced, GrqTrace};
use super::model::{pad_window, select_columns, PartTokenizer};
use super::network::{NetGrad, PartNetwork};
use crate::error::{Error, Result};
use crate::mano::FeatureSequence;

pub const DEFAULT_LAMBDA_COMMIT: f64 = 0.02;
pub const DEFAULT_LAMBDA_WRIST: f64 = 1.0;

/// Columns with a spread below this are left unscaled.
const MIN_SCALE: f64 = 1e-8;
const LLOYD_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda_commit: f64,
    pub lambda_wrist: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Training stops as diverged once a step's loss exceeds this multiple
    /// of the first step's loss (taken as at least 1).
    pub divergence_factor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda_commit: DEFAULT_LAMBDA_COMMIT,
            lambda_wrist: DEFAULT_LAMBDA_WRIST,
            lr: 1e-3,
            batch: 64,
            epochs: 40,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            divergence_factor: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub commit: f64,
    pub wrist: f64,
    pub total: f64,
}

impl LossReport {
    fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.recon += weight * other.recon;
        self.commit += weight * other.commit;
        self.wrist += weight * other.wrist;
        self.total += weight * other.total;
    }
}

/// Normalized, stacked inputs for every part of a set of equal-length
/// windows.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Per part, `steps x (alpha * width)`.
    pub inputs: Vec<Array2<f64>>,
    /// Per part, 1 for entries from real frames and 0 for padding.
    pub masks: Vec<Array2<f64>>,
    pub frames: usize,
}

impl Batch {
    pub fn new(windows: &[&FeatureSequence], tok: &PartTokenizer) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let frames = first.frames();
        if windows.iter().any(|w| w.frames() != frames) {
            return Err(Error::InvalidInput("batch windows differ in length".into()));
        }
        let alpha = tok.config.alpha;
        let mut inputs = Vec::with_capacity(tok.parts.len());
        let mut masks = Vec::with_capacity(tok.parts.len());
        for p in &tok.parts {
            let sw = p.net.stacked_width();
            let mut rows = Vec::new();
            for w in windows {
                if w.data.ncols() != tok.config.variant.dim() {
                    return Err(Error::Config(format!(
                        "feature width {} but tokenizer expects {}",
                        w.data.ncols(),
                        tok.config.variant.dim()
                    )));
                }
                let padded = pad_window(w, alpha);
                let cols = select_columns(padded.data.view(), &p.columns);
                rows.push(p.net.stack(cols.view())?);
            }
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            let x = ndarray::concatenate(Axis(0), &views).expect("equal widths");
            let steps_per = rows[0].nrows();
            let mask = Array2::from_shape_fn((x.nrows(), sw), |(i, c)| {
                let frame = (i % steps_per) * alpha + c / p.net.width;
                if frame < frames {
                    1.0
                } else {
                    0.0
                }
            });
            inputs.push(x);
            masks.push(mask);
        }
        Ok(Batch {
            inputs,
            masks,
            frames,
        })
    }
}

/// Stacked-row columns holding the wrist rotation and translation of a
/// whole-hand part; empty for part-level parts.
pub fn wrist_loss_columns(tok: &PartTokenizer, part: usize) -> Vec<usize> {
    let p = &tok.parts[part];
    if p.kind != PartKind::Whole {
        return Vec::new();
    }
    let layout = tok.config.variant.layout();
    let wrist: Vec<usize> = layout.r_rot.chain(layout.tau).collect();
    let local: Vec<usize> = p
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| wrist.contains(c))
        .map(|(j, _)| j)
        .collect();
    (0..p.net.alpha)
        .flat_map(|f| local.iter().map(move |&j| f * p.net.width + j))
        .collect()
}

/// Loss terms for a part given its decoded output and frozen quantizer
/// quantities, plus the gradient with respect to the output and latent.
struct PartLoss {
    report: LossReport,
    grad_y: Array2<f64>,
    grad_z_commit: Array2<f64>,
}

fn part_loss(
    x: &Array2<f64>,
    mask: &Array2<f64>,
    y: &Array2<f64>,
    z: &Array2<f64>,
    partial: &[Array2<f64>],
    wrist_cols: &[usize],
    opts: &TrainOptions,
) -> PartLoss {
    let count = mask.sum().max(1.0);
    let diff = (y - x) * mask;
    let recon = diff.mapv(|v| v * v).sum() / count;
    let mut grad_y = diff.mapv(|v| 2.0 * v / count);

    let mut wrist = 0.0;
    if !wrist_cols.is_empty() {
        let mut n = 0.0;
        for &c in wrist_cols {
            n += mask.column(c).sum();
        }
        let n = n.max(1.0);
        for &c in wrist_cols {
            let dc = diff.column(c);
            wrist += dc.mapv(|v| v * v).sum() / n;
            let mut gc = grad_y.column_mut(c);
            gc.zip_mut_with(&dc, |g, &d| *g += opts.lambda_wrist * 2.0 * d / n);
        }
    }

    let zn = z.len().max(1) as f64;
    let mut commit = 0.0;
    let mut grad_z_commit = Array2::zeros(z.raw_dim());
    for p in partial {
        let d = z - p;
        commit += d.mapv(|v| v * v).sum() / zn;
        grad_z_commit.scaled_add(opts.lambda_commit * 2.0 / zn, &d);
    }
    let total = recon + opts.lambda_commit * commit + opts.lambda_wrist * wrist;
    PartLoss {
        report: LossReport {
            recon,
            commit,
            wrist,
            total,
        },
        grad_y,
        grad_z_commit,
    }
}

/// Loss and straight-through gradients for every part, along with the
/// quantizer traces used for the codebook update.
pub(crate) fn loss_and_grad_traced(
    tok: &PartTokenizer,
    batch: &Batch,
    opts: &TrainOptions,
) -> Result<(LossReport, Vec<NetGrad>, Vec<GrqTrace>)> {
    let mut total = LossReport::default();
    let mut grads = Vec::with_capacity(tok.parts.len());
    let mut traces = Vec::with_capacity(tok.parts.len());
    for (pi, p) in tok.parts.iter().enumerate() {
        let x = &batch.inputs[pi];
        let (z, enc_cache) = p.net.encode_cached(x.view());
        let trace = grq_quantize_traced(z.view(), &p.books, tok.config.layers)?;
        let (y, dec_cache) = p.net.decode_cached(trace.z_hat.view());
        let wrist_cols = wrist_loss_columns(tok, pi);
        let pl = part_loss(
            x,
            &batch.masks[pi],
            &y,
            &z,
            &trace.partial,
            &wrist_cols,
            opts,
        );
        let (grad_zhat, dec_grads) = p.net.decoder_backward(&dec_cache, pl.grad_y);
        // straight-through: d z_hat / d z = identity
        let grad_z = grad_zhat + &pl.grad_z_commit;
        let enc_grads = p.net.encoder_backward(&enc_cache, grad_z);
        total.accumulate(&pl.report, 1.0);
        grads.push(NetGrad {
            encoder: enc_grads,
            decoder: dec_grads,
        });
        traces.push(trace);
    }
    if !total.total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "loss became {}",
            total.total
        )));
    }
    Ok((total, grads, traces))
}

/// Loss and straight-through parameter gradients (one [`NetGrad`] per part)
/// without touching any state.
pub fn loss_and_grad(
    tok: &PartTokenizer,
    batch: &Batch,
    opts: &TrainOptions,
) -> Result<(LossReport, Vec<NetGrad>)> {
    let (l, g, _) = loss_and_grad_traced(tok, batch, opts)?;
    Ok((l, g))
}

/// Forward-only loss.
pub fn evaluate_loss(
    tok: &PartTokenizer,
    batch: &Batch,
    opts: &TrainOptions,
) -> Result<LossReport> {
    let mut total = LossReport::default();
    for (pi, p) in tok.parts.iter().enumerate() {
        let x = &batch.inputs[pi];
        let z = p.net.encode_rows(x.view());
        let trace = grq_quantize_traced(z.view(), &p.books, tok.config.layers)?;
        let y = p.net.decode_rows(trace.z_hat.view());
        let wrist_cols = wrist_loss_columns(tok, pi);
        let pl = part_loss(
            x,
            &batch.masks[pi],
            &y,
            &z,
            &trace.partial,
            &wrist_cols,
            opts,
        );
        total.accumulate(&pl.report, 1.0);
    }
    if !total.total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "loss became {}",
            total.total
        )));
    }
    Ok(total)
}

/// Adam state for one flat parameter list.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &PartNetwork) -> Self {
        let sizes: Vec<usize> = net
            .encoder
            .iter()
            .chain(&net.decoder)
            .flat_map(|l| [l.w.len(), l.b.len()])
            .collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut PartNetwork, grad: &NetGrad, opts: &TrainOptions) {
        self.t += 1;
        let (b1, b2) = (opts.adam_beta1, opts.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in net
            .params_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= opts.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + opts.adam_eps);
            }
        }
    }
}

fn ema_from_trace<R: Rng>(books: &mut [Codebook], trace: &GrqTrace, rng: &mut R) {
    let groups = books.len();
    let gw = books[0].width();
    for (g, book) in books.iter_mut().enumerate() {
        let mut stats = CodeStats::new(book.len(), gw);
        let mut pool_parts = Vec::with_capacity(trace.inputs.len());
        for (l, input) in trace.inputs.iter().enumerate() {
            let block = input.slice(s![.., g * gw..(g + 1) * gw]);
            for i in 0..block.nrows() {
                let k = trace.codes.ids[(i * groups + g) * trace.codes.layers + l] as usize;
                stats.add(k, block.row(i));
            }
            pool_parts.push(block);
        }
        let pool = ndarray::concatenate(Axis(0), &pool_parts).expect("equal widths");
        book.ema_update(&stats, Some((pool.view(), rng)));
    }
}

/// One optimization step on a batch: Adam on encoder and decoder weights
/// through the straight-through estimator, then EMA codebook updates.
/// Returns the loss measured before the update.
pub fn train_step<R: Rng>(
    tok: &mut PartTokenizer,
    batch: &Batch,
    opts: &TrainOptions,
    state: &mut TrainState,
    rng: &mut R,
) -> Result<LossReport> {
    if !tok.is_initialized() {
        return Err(Error::UninitializedCodebook);
    }
    let (loss, grads, traces) = loss_and_grad_traced(tok, batch, opts)?;
    for (((p, g), adam), trace) in tok
        .parts
        .iter_mut()
        .zip(&grads)
        .zip(&mut state.adam)
        .zip(&traces)
    {
        adam.step(&mut p.net, g, opts);
        ema_from_trace(&mut p.books, trace, rng);
    }
    Ok(loss)
}

/// Optimizer state carried across steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    adam: Vec<Adam>,
}

impl TrainState {
    pub fn new(tok: &PartTokenizer) -> Self {
        TrainState {
            adam: tok.parts.iter().map(|p| Adam::new(&p.net)).collect(),
        }
    }
}

/// Sets per-column normalization from the data, initializes linear
/// encoder/decoder pairs to the leading principal directions of the stacked
/// frames (small random weights when a hidden layer is configured), and
/// seeds the codebooks.
pub fn initialize<R: Rng>(
    tok: &mut PartTokenizer,
    windows: &[&FeatureSequence],
    rng: &mut R,
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    for p in &mut tok.parts {
        let mut frames = Vec::new();
        for w in windows {
            frames.push(select_columns(w.data.view(), &p.columns));
        }
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let mean = all.mean_axis(Axis(0)).expect("non-empty");
        let std = all.std_axis(Axis(0), 0.0);
        p.net.shift = mean;
        p.net.scale = std.mapv(|s| if s > MIN_SCALE { s } else { 1.0 });
    }
    let batch = Batch::new(windows, tok)?;
    let layers = tok.config.layers;
    for (pi, p) in tok.parts.iter_mut().enumerate() {
        let x = &batch.inputs[pi];
        match tok.config.hidden {
            None => pca_init(&mut p.net, x.view()),
            Some(_) => random_init(&mut p.net, rng),
        }
        let z = p.net.encode_rows(x.view());
        let k = tok.config.part_codebook_size(p.kind);
        let gw = tok.config.group_width();
        for (g, book) in p.books.iter_mut().enumerate() {
            let zg = z.slice(s![.., g * gw..(g + 1) * gw]).to_owned();
            *book = seed_codebook(zg.view(), k, layers, rng)?;
        }
    }
    Ok(())
}

fn pca_init(net: &mut PartNetwork, x: ArrayView2<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centred = &x - &mean;
    let cov = centred.t().dot(&centred) / n;
    let sw = cov.nrows();
    let m = DMatrix::from_fn(sw, sw, |i, j| cov[(i, j)]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..sw).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d = net.dim;
    let mut w = Array2::zeros((sw, d));
    for (c, &e) in order.iter().take(d).enumerate() {
        for r in 0..sw {
            w[(r, c)] = eig.eigenvectors[(r, e)];
        }
    }
    let enc = &mut net.encoder[0];
    enc.b = -mean.dot(&w);
    enc.w = w.clone();
    let dec = &mut net.decoder[0];
    dec.w = w.t().as_standard_layout().into_owned();
    dec.b = mean;
}

fn random_init<R: Rng>(net: &mut PartNetwork, rng: &mut R) {
    for layer in net.encoder.iter_mut().chain(net.decoder.iter_mut()) {
        let bound = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.random_range(-bound..bound));
        layer.b.fill(0.0);
    }
}

/// k-means++ seeding layer by layer: each layer contributes `k / layers`
/// codes fitted to the residuals left by the codes chosen so far, refined by
/// a few Lloyd iterations.
fn seed_codebook<R: Rng>(
    z: ArrayView2<f64>,
    k: usize,
    layers: usize,
    rng: &mut R,
) -> Result<Codebook> {
    let width = z.ncols();
    let mut codes = Array2::<f64>::zeros((0, width));
    let mut residual = z.to_owned();
    for l in 0..layers {
        let remaining = k - codes.nrows();
        let share = if l + 1 == layers {
            remaining
        } else {
            (k / layers).max(1).min(remaining)
        };
        if share == 0 {
            break;
        }
        let mut centres = kmeans_pp_seed(residual.view(), share, rng);
        for _ in 0..LLOYD_ITERS {
            let book = Codebook::from_codes(centres.clone());
            let idx = book.nearest(residual.view())?;
            let mut sums = Array2::<f64>::zeros(centres.raw_dim());
            let mut counts = Array1::<f64>::zeros(share);
            for (i, &c) in idx.iter().enumerate() {
                let mut row = sums.row_mut(c);
                row += &residual.row(i);
                counts[c] += 1.0;
            }
            for c in 0..share {
                if counts[c] > 0.0 {
                    let mean = sums.row(c).mapv(|v| v / counts[c]);
                    centres.row_mut(c).assign(&mean);
                }
            }
        }
        codes = ndarray::concatenate(Axis(0), &[codes.view(), centres.view()]).expect("same width");
        let book = Codebook::from_codes(codes.clone());
        let (_, z_hat) = grq_quantize(z, std::slice::from_ref(&book), l + 1)?;
        residual = &z - &z_hat;
    }
    Ok(Codebook::from_codes(codes))
}

/// Trains a tokenizer from scratch on equal-length windows. `progress` is
/// called after every epoch with the mean pre-step loss. The returned
/// model is narrowed to `f32` so it survives saving unchanged.
pub fn train_tokenizer(
    windows: &[FeatureSequence],
    config: QuantizerConfig,
    opts: &TrainOptions,
    mut progress: impl FnMut(usize, &LossReport),
) -> Result<(PartTokenizer, Vec<LossReport>)> {
    let mut tok = PartTokenizer::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let refs: Vec<&FeatureSequence> = windows.iter().collect();
    initialize(&mut tok, &refs, &mut rng)?;
    let mut state = TrainState::new(&tok);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let batch_size = opts.batch.max(1);
    let mut ceiling: Option<f64> = None;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut mean = LossReport::default();
        let batches = order.len().div_ceil(batch_size);
        for chunk in order.chunks(batch_size) {
            let members: Vec<&FeatureSequence> = chunk.iter().map(|&i| &windows[i]).collect();
            let batch = Batch::new(&members, &tok)?;
            let loss = train_step(&mut tok, &batch, opts, &mut state, &mut rng)?;
            let limit = *ceiling.get_or_insert(opts.divergence_factor * loss.total.max(1.0));
            if loss.total > limit {
                return Err(Error::TrainingDiverged(format!(
                    "loss {} in epoch {epoch} exceeds {limit}",
                    loss.total
                )));
            }
            mean.accumulate(&loss, 1.0 / batches as f64);
        }
        log::debug!("epoch {epoch}: {mean:?}");
        progress(epoch, &mean);
        history.push(mean);
    }
    tok.round_to_f32();
    Ok((tok, history))
}

/// Sum of per-part encoder/decoder gradients flattened in parameter order.
pub fn flatten_grads(grads: &[NetGrad]) -> Vec<f64> {
    grads.iter().flat_map(NetGrad::flatten).collect()
}
