//! The clustering network: deep auto-encoder, GCN stack with
//! heterogeneity-wise fusion, scale-wise fusion into the learned
//! distribution Z, the Student's-t soft assignment Q, the target
//! distribution P, and distribution-wise fusion into the final F.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;

pub const DEFAULT_DIMS: [usize; 4] = [500, 500, 2000, 10];
pub const LRELU_SLOPE: f64 = 0.2;

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder layer widths d_1..d_l; the GCN mirrors them and appends one
    /// extra layer of width d_l.
    pub dims: Vec<usize>,
    pub k: usize,
    pub lrelu_slope: f64,
    pub alpha: f64,
    /// Attention-based HWF/SWF; fixed equal weights when false.
    pub attention_fusion: bool,
    /// Distribution-wise fusion; F := Z when false.
    pub use_dwf: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize, dims: Vec<usize>, k: usize) -> Self {
        ModelConfig {
            input_dim,
            dims,
            k,
            lrelu_slope: LRELU_SLOPE,
            alpha: 1.0,
            attention_fusion: true,
            use_dwf: true,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len()
    }

    /// Width of the concatenated multi-scale feature, d_1+...+d_l+d_l.
    pub fn concat_width(&self) -> usize {
        self.dims.iter().sum::<usize>() + self.bottleneck()
    }

    pub fn bottleneck(&self) -> usize {
        *self.dims.last().expect("validated non-empty dims")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidParameter("dims must not be empty".into()));
        }
        if self.dims.contains(&0) || self.input_dim == 0 {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "LReLU slope must lie in (0,1), got {}",
                self.lrelu_slope
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// All learnable state. Field order is the canonical parameter order used
/// by the optimizer, gradient checks, and the checkpoint format:
/// encoder (W,b per layer), decoder (W,b per layer), GCN weights W_0..W_l,
/// HWF attention weights, SWF weight, final projection, DWF weight,
/// centroids.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub enc_w: Vec<Tensor>,
    pub enc_b: Vec<Tensor>,
    pub dec_w: Vec<Tensor>,
    pub dec_b: Vec<Tensor>,
    pub gcn_w: Vec<Tensor>,
    pub hwf_w: Vec<Tensor>,
    pub swf_w: Tensor,
    pub proj_w: Tensor,
    pub dwf_w: Tensor,
    pub centroids: Tensor,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, values).expect("positive dims")
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, zero centroids, drawn in
    /// canonical parameter order from a seeded generator.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cfg.layer_count();
        let d = cfg.input_dim;

        let mut enc_w = Vec::with_capacity(l);
        let mut enc_b = Vec::with_capacity(l);
        let mut prev = d;
        for &width in &cfg.dims {
            enc_w.push(xavier(&mut rng, prev, width));
            enc_b.push(Tensor::zeros(1, width));
            prev = width;
        }

        let mut dec_w = Vec::with_capacity(l);
        let mut dec_b = Vec::with_capacity(l);
        let mut prev = cfg.bottleneck();
        for i in 0..l {
            let next = if i + 1 == l { d } else { cfg.dims[l - 2 - i] };
            dec_w.push(xavier(&mut rng, prev, next));
            dec_b.push(Tensor::zeros(1, next));
            prev = next;
        }

        let mut gcn_w = Vec::with_capacity(l + 1);
        let mut prev = d;
        for &width in &cfg.dims {
            gcn_w.push(xavier(&mut rng, prev, width));
            prev = width;
        }
        gcn_w.push(xavier(&mut rng, cfg.bottleneck(), cfg.bottleneck()));

        let hwf_w = (0..l)
            .map(|i| xavier(&mut rng, 2 * cfg.dims[i], 2))
            .collect();
        let swf_w = xavier(&mut rng, cfg.concat_width(), l + 1);
        let proj_w = xavier(&mut rng, cfg.concat_width(), cfg.k);
        let dwf_w = xavier(&mut rng, 2 * cfg.k, 2);
        let centroids = Tensor::zeros(cfg.k, cfg.bottleneck());

        Ok(ModelParams {
            cfg,
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            gcn_w,
            hwf_w,
            swf_w,
            proj_w,
            dwf_w,
            centroids,
        })
    }

    /// Parameters in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for i in 0..self.cfg.layer_count() {
            out.push(&self.enc_w[i]);
            out.push(&self.enc_b[i]);
        }
        for i in 0..self.cfg.layer_count() {
            out.push(&self.dec_w[i]);
            out.push(&self.dec_b[i]);
        }
        out.extend(self.gcn_w.iter());
        out.extend(self.hwf_w.iter());
        out.push(&self.swf_w);
        out.push(&self.proj_w);
        out.push(&self.dwf_w);
        out.push(&self.centroids);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (w, b) in self.enc_w.iter_mut().zip(self.enc_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        for (w, b) in self.dec_w.iter_mut().zip(self.dec_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.gcn_w.iter_mut());
        out.extend(self.hwf_w.iter_mut());
        out.push(&mut self.swf_w);
        out.push(&mut self.proj_w);
        out.push(&mut self.dwf_w);
        out.push(&mut self.centroids);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.values().len()).sum()
    }

    /// Indices of the DAE subset (encoder+decoder weights and biases)
    /// within the canonical order; pretraining updates only these.
    pub fn dae_indices(&self) -> std::ops::Range<usize> {
        0..4 * self.cfg.layer_count()
    }
}

/// Everything one forward pass produces.
pub struct ForwardState {
    /// Encoder activations H_1..H_l.
    pub h: Vec<Tensor>,
    /// Reconstruction of the input.
    pub x_hat: Tensor,
    /// GCN activations Z_1..Z_{l+1}.
    pub gcn: Vec<Tensor>,
    /// HWF attention rows (layerwise, n x 2).
    pub attention_m: Vec<Tensor>,
    /// SWF attention rows (n x (l+1)).
    pub attention_u: Tensor,
    /// DWF attention rows (n x 2); absent when DWF is disabled.
    pub attention_v: Option<Tensor>,
    /// Soft assignment from bottleneck features and centroids.
    pub q: Tensor,
    /// Distribution from scale-wise fusion.
    pub z: Tensor,
    /// Final fused distribution.
    pub f: Tensor,
}

/// Bias add via a constant all-ones column: ones(n,1) · b broadcasts the
/// 1xW bias to n rows and the backward rule reduces to column sums.
fn add_bias(tape: &mut Tape, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ones = Tensor::ones(x.rows(), 1);
    let broadcast = tape.matmul(&ones, b)?;
    tape.add(x, &broadcast)
}

fn linear(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xw = tape.matmul(x, w)?;
    add_bias(tape, &xw, b)
}

/// Encoder/decoder chain: ReLU on every layer except the final decoder
/// layer, which stays linear so reconstructions can take any value.
pub fn dae_forward(
    tape: &mut Tape,
    params: &ModelParams,
    x: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let l = params.cfg.layer_count();
    let mut h = Vec::with_capacity(l);
    let mut cur = x.clone();
    for i in 0..l {
        let pre = linear(tape, &cur, &params.enc_w[i], &params.enc_b[i])?;
        cur = tape.relu(&pre);
        h.push(cur.clone());
    }
    for i in 0..l {
        let pre = linear(tape, &cur, &params.dec_w[i], &params.dec_b[i])?;
        cur = if i + 1 == l { pre } else { tape.relu(&pre) };
    }
    Ok((h, cur))
}

/// Attention rows for a two-block fusion: softmax-l2 of LReLU([a‖b]·w).
fn fusion_attention(
    tape: &mut Tape,
    a: &Tensor,
    b: &Tensor,
    w: &Tensor,
    slope: f64,
) -> Result<Tensor> {
    let cat = tape.concat_cols(&[a.clone(), b.clone()])?;
    let logits = tape.matmul(&cat, w)?;
    let act = tape.leaky_relu(&logits, slope);
    let soft = tape.row_softmax(&act);
    tape.row_l2_normalize(&soft)
}

/// Blend per-layer GCN and DAE features with learned rowwise weights.
/// Returns the fused feature and the attention matrix M_i.
pub fn hwf_fuse(
    tape: &mut Tape,
    params: &ModelParams,
    z_i: &Tensor,
    h_i: &Tensor,
    layer: usize,
) -> Result<(Tensor, Tensor)> {
    if z_i.shape() != h_i.shape() {
        return Err(Error::shape("hwf_fuse", z_i.shape(), h_i.shape()));
    }
    if !params.cfg.attention_fusion {
        let sum = tape.add(z_i, h_i)?;
        let fused = tape.scale(&sum, 0.5);
        return Ok((fused, Tensor::filled(z_i.rows(), 2, 0.5)));
    }
    let m = fusion_attention(tape, z_i, h_i, &params.hwf_w[layer], params.cfg.lrelu_slope)?;
    let m1 = tape.col_slice(&m, 0, 1)?;
    let m2 = tape.col_slice(&m, 1, 1)?;
    let part_z = tape.col_broadcast_scale(&m1, z_i)?;
    let part_h = tape.col_broadcast_scale(&m2, h_i)?;
    let fused = tape.add(&part_z, &part_h)?;
    Ok((fused, m))
}

/// One graph convolution: LReLU(op · z · w).
pub fn gcn_layer(
    tape: &mut Tape,
    op: &Arc<PropagationOperator>,
    z: &Tensor,
    w: &Tensor,
) -> Result<Tensor> {
    let zw = tape.matmul(z, w)?;
    let propagated = tape.spmm(op, &zw)?;
    Ok(tape.leaky_relu(&propagated, LRELU_SLOPE))
}

fn gcn_layer_with_slope(
    tape: &mut Tape,
    op: &Arc<PropagationOperator>,
    z: &Tensor,
    w: &Tensor,
    slope: f64,
) -> Result<Tensor> {
    let zw = tape.matmul(z, w)?;
    let propagated = tape.spmm(op, &zw)?;
    Ok(tape.leaky_relu(&propagated, slope))
}

/// Scale-wise fusion: attention-weighted concatenation of all GCN layers,
/// smoothed by the propagation operator and projected to a rowwise
/// distribution over clusters. Returns (Z, U).
pub fn swf_fuse(
    tape: &mut Tape,
    params: &ModelParams,
    zs: &[Tensor],
    op: &Arc<PropagationOperator>,
) -> Result<(Tensor, Tensor)> {
    let blocks = params.cfg.layer_count() + 1;
    if zs.len() != blocks {
        return Err(Error::Contract {
            op: "swf_fuse",
            msg: format!("expected {blocks} feature blocks, got {}", zs.len()),
        });
    }
    let n = zs[0].rows();
    let (scaled, u) = if params.cfg.attention_fusion {
        let cat = tape.concat_cols(zs)?;
        if cat.cols() != params.swf_w.rows() {
            return Err(Error::shape("swf_fuse", cat.shape(), params.swf_w.shape()));
        }
        let logits = tape.matmul(&cat, &params.swf_w)?;
        let act = tape.leaky_relu(&logits, params.cfg.lrelu_slope);
        let soft = tape.row_softmax(&act);
        let u = tape.row_l2_normalize(&soft)?;
        let mut scaled = Vec::with_capacity(blocks);
        for (j, z) in zs.iter().enumerate() {
            let uj = tape.col_slice(&u, j, 1)?;
            scaled.push(tape.col_broadcast_scale(&uj, z)?);
        }
        (scaled, u)
    } else {
        let weight = 1.0 / blocks as f64;
        let scaled = zs.iter().map(|z| tape.scale(z, weight)).collect();
        (scaled, Tensor::filled(n, blocks, weight))
    };
    let fused = tape.concat_cols(&scaled)?;
    let projected = tape.matmul(&fused, &params.proj_w)?;
    let smoothed = tape.spmm(op, &projected)?;
    let z = tape.row_softmax(&smoothed);
    Ok((z, u))
}

/// Student's-t soft assignment between rows of `h` and the centroids,
/// rows normalized: q_ij ∝ (1 + ‖h_i − μ_j‖²/α)^{−(α+1)/2}.
pub fn soft_assignment_q(
    tape: &mut Tape,
    h: &Tensor,
    centroids: &Tensor,
    alpha: f64,
) -> Result<Tensor> {
    if h.cols() != centroids.cols() {
        return Err(Error::shape("soft_assignment_q", h.shape(), centroids.shape()));
    }
    let (n, d) = h.shape();
    let k = centroids.rows();
    // ‖h_i − μ_j‖² = ‖h_i‖² + ‖μ_j‖² − 2 h_i·μ_j, assembled from matmuls so
    // gradients flow to both h and μ.
    let ones_d = Tensor::ones(d, 1);
    let h_sq = tape.square(h);
    let h_norms = tape.matmul(&h_sq, &ones_d)?; // n x 1
    let ones_k_row = Tensor::ones(1, k);
    let h_part = tape.matmul(&h_norms, &ones_k_row)?; // n x k

    let mu_sq = tape.square(centroids);
    let mu_norms = tape.matmul(&mu_sq, &ones_d)?; // k x 1
    let mu_norms_row = tape.transpose(&mu_norms); // 1 x k
    let ones_n_col = Tensor::ones(n, 1);
    let mu_part = tape.matmul(&ones_n_col, &mu_norms_row)?; // n x k

    let mu_t = tape.transpose(centroids);
    let cross = tape.matmul(h, &mu_t)?;
    let cross_scaled = tape.scale(&cross, -2.0);

    let sums = tape.add(&h_part, &mu_part)?;
    let dist_sq = tape.add(&sums, &cross_scaled)?;

    let base = {
        let scaled = tape.scale(&dist_sq, 1.0 / alpha);
        tape.add_scalar(&scaled, 1.0)
    };
    let kernel = tape.pow_scalar(&base, -(alpha + 1.0) / 2.0);
    tape.row_normalize(&kernel)
}

/// Sharpened, cluster-frequency-normalized target distribution, computed
/// from values only: no gradient flows through it. Columns with vanishing
/// mass are clamped to 1e-12.
pub fn target_distribution_p(z: &Tensor) -> Tensor {
    let (n, k) = z.shape();
    let mut col_mass = vec![0.0; k];
    for i in 0..n {
        for (j, &v) in z.row(i).iter().enumerate() {
            col_mass[j] += v;
        }
    }
    for m in col_mass.iter_mut() {
        *m = m.max(1e-12);
    }
    let mut values = vec![0.0; n * k];
    for i in 0..n {
        let row = z.row(i);
        let mut sum = 0.0;
        for j in 0..k {
            let w = row[j] * row[j] / col_mass[j];
            values[i * k + j] = w;
            sum += w;
        }
        for v in values[i * k..(i + 1) * k].iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(n, k, values).expect("z is non-empty")
}

/// Distribution-wise fusion of Z and Q into the final distribution F.
/// Returns (F, V).
pub fn dwf_fuse(
    tape: &mut Tape,
    params: &ModelParams,
    z: &Tensor,
    q: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if z.shape() != q.shape() {
        return Err(Error::shape("dwf_fuse", z.shape(), q.shape()));
    }
    let v = fusion_attention(tape, z, q, &params.dwf_w, params.cfg.lrelu_slope)?;
    let v1 = tape.col_slice(&v, 0, 1)?;
    let v2 = tape.col_slice(&v, 1, 1)?;
    let part_z = tape.col_broadcast_scale(&v1, z)?;
    let part_q = tape.col_broadcast_scale(&v2, q)?;
    let pre = tape.add(&part_z, &part_q)?;
    let f = tape.row_softmax(&pre);
    Ok((f, v))
}

/// Hard labels from a rowwise distribution; ties break to the smallest
/// index.
pub fn predict_labels(f: &Tensor) -> Vec<usize> {
    (0..f.rows())
        .map(|i| {
            let row = f.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Full forward pass through every module.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    x: &Tensor,
    op: &Arc<PropagationOperator>,
) -> Result<ForwardState> {
    let cfg = &params.cfg;
    let l = cfg.layer_count();
    let (h, x_hat) = dae_forward(tape, params, x)?;

    let mut gcn = Vec::with_capacity(l + 1);
    let z1 = gcn_layer_with_slope(tape, op, x, &params.gcn_w[0], cfg.lrelu_slope)?;
    gcn.push(z1);
    let mut attention_m = Vec::with_capacity(l);
    for i in 0..l {
        let (fused, m) = hwf_fuse(tape, params, &gcn[i], &h[i], i)?;
        attention_m.push(m);
        let next = gcn_layer_with_slope(tape, op, &fused, &params.gcn_w[i + 1], cfg.lrelu_slope)?;
        gcn.push(next);
    }

    let (z, attention_u) = swf_fuse(tape, params, &gcn, op)?;
    let q = soft_assignment_q(tape, &h[l - 1], &params.centroids, cfg.alpha)?;

    let (f, attention_v) = if cfg.use_dwf {
        let (f, v) = dwf_fuse(tape, params, &z, &q)?;
        (f, Some(v))
    } else {
        (z.clone(), None)
    };

    Ok(ForwardState {
        h,
        x_hat,
        gcn,
        attention_m,
        attention_u,
        attention_v,
        q,
        z,
        f,
    })
}

// ---- checkpoint format ---------------------------------------------------
//
// magic "DAGC" | version u32 LE | layer count u64 LE | each layer width u64 |
// then every parameter tensor in canonical order as
// rows u64 | cols u64 | row-major f64 LE values.

const CHECKPOINT_MAGIC: &[u8; 4] = b"DAGC";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.cfg.dims.len() as u64).to_le_bytes())
        .map_err(io)?;
    for &d in &params.cfg.dims {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    for t in params.tensors() {
        w.write_all(&(t.rows() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(t.cols() as u64).to_le_bytes()).map_err(io)?;
        for v in t.values() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let l = read_u64(&mut r, path)? as usize;
    if l == 0 || l > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {l}")));
    }
    let mut dims = Vec::with_capacity(l);
    for _ in 0..l {
        dims.push(read_u64(&mut r, path)? as usize);
    }

    let tensor_count = 6 * l + 5;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let rows = read_u64(&mut r, path)? as usize;
        let cols = read_u64(&mut r, path)? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 32) {
            return Err(Error::Checkpoint(format!("implausible tensor {rows}x{cols}")));
        }
        let mut values = vec![0.0; rows * cols];
        for v in values.iter_mut() {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf, path)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push(Tensor::new(rows, cols, values)?);
    }

    // reconstruct the config from stored shapes
    let input_dim = tensors[0].rows();
    let k = tensors[6 * l + 2].cols(); // proj_w in canonical order
    let cfg = ModelConfig::new(input_dim, dims, k);
    cfg.validate()?;

    let mut it = tensors.into_iter();
    let mut next = |expect_rows: usize, expect_cols: usize, name: &str| -> Result<Tensor> {
        let t = it.next().expect("count checked above");
        if t.shape() != (expect_rows, expect_cols) {
            return Err(Error::Checkpoint(format!(
                "{name}: expected {expect_rows}x{expect_cols}, found {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        Ok(t)
    };

    let mut enc_w = Vec::with_capacity(l);
    let mut enc_b = Vec::with_capacity(l);
    let mut prev = cfg.input_dim;
    for &width in &cfg.dims {
        enc_w.push(next(prev, width, "encoder weight")?);
        enc_b.push(next(1, width, "encoder bias")?);
        prev = width;
    }
    let mut dec_w = Vec::with_capacity(l);
    let mut dec_b = Vec::with_capacity(l);
    let mut prev = cfg.bottleneck();
    for i in 0..l {
        let nextw = if i + 1 == l { cfg.input_dim } else { cfg.dims[l - 2 - i] };
        dec_w.push(next(prev, nextw, "decoder weight")?);
        dec_b.push(next(1, nextw, "decoder bias")?);
        prev = nextw;
    }
    let mut gcn_w = Vec::with_capacity(l + 1);
    let mut prev = cfg.input_dim;
    for &width in &cfg.dims {
        gcn_w.push(next(prev, width, "gcn weight")?);
        prev = width;
    }
    gcn_w.push(next(cfg.bottleneck(), cfg.bottleneck(), "gcn weight")?);
    let mut hwf_w = Vec::with_capacity(l);
    for i in 0..l {
        hwf_w.push(next(2 * cfg.dims[i], 2, "hwf weight")?);
    }
    let swf_w = next(cfg.concat_width(), l + 1, "swf weight")?;
    let proj_w = next(cfg.concat_width(), cfg.k, "projection weight")?;
    let dwf_w = next(2 * cfg.k, 2, "dwf weight")?;
    let centroids = next(cfg.k, cfg.bottleneck(), "centroids")?;

    Ok(ModelParams {
        cfg,
        enc_w,
        enc_b,
        dec_w,
        dec_b,
        gcn_w,
        hwf_w,
        swf_w,
        proj_w,
        dwf_w,
        centroids,
    })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path)?;
    Ok(u64::from_le_bytes(buf))
}
