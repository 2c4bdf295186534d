//! Quantized autoencoder with EMA codebooks.
//!
//! With one level this is the first stage of the semantic-id tokenizer; with
//! `L` levels it is the residual-quantization baseline, where level `l`
//! quantizes what is left after subtracting the entries chosen at levels
//! `0..l`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::kmeans::{kmeans, nearest};
use super::TokenizerConfig;
use crate::numerics::{
    adagrad_step, AdagradConfig, AdagradState, Graph, ParamId, ParamStore, Tensor, Var,
};
use crate::Result;

const LAPLACE_EPS: f64 = 1e-5;

/// Nearest codebook entry (ties to the lowest index) and the residual
/// `z − e_r`.
pub fn quantize_vector(codebook: &Tensor, z: &[f64]) -> (u32, Vec<f64>) {
    let (r, _) = nearest(codebook, z);
    let residual = z.iter().zip(codebook.row(r)).map(|(a, b)| a - b).collect();
    (r as u32, residual)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedAutoencoder {
    pub params: ParamStore,
    encoder: Vec<(ParamId, ParamId)>,
    decoder: Vec<(ParamId, ParamId)>,
    pub codebooks: Vec<Tensor>,
    pub ema_counts: Vec<Vec<f64>>,
    pub ema_sums: Vec<Tensor>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub epochs: usize,
    pub loss_history: Vec<f64>,
    pub reseeds: usize,
}

/// Per-item digits of every level plus the running sums of chosen entries.
pub struct Assignment {
    /// `digits[item][level]`.
    pub digits: Vec<Vec<u32>>,
    /// `cumulative[l]` holds `Σ_{i≤l} e^{(i)}` per item.
    pub cumulative: Vec<Tensor>,
}

fn mlp(
    params: &mut ParamStore,
    prefix: &str,
    widths: &[usize],
    rng: &mut impl Rng,
) -> Vec<(ParamId, ParamId)> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        let last = i + 2 == widths.len();
        let std = if last {
            (1.0 / w[0] as f64).sqrt()
        } else {
            (2.0 / w[0] as f64).sqrt()
        };
        let wid = params.add(
            format!("{prefix}.{i}.w"),
            Tensor::randn(&[w[0], w[1]], std, rng),
        );
        let bid = params.add(format!("{prefix}.{i}.b"), Tensor::zeros(&[w[1]]));
        layers.push((wid, bid));
    }
    layers
}

fn run_mlp(
    g: &mut Graph,
    params: &ParamStore,
    layers: &[(ParamId, ParamId)],
    mut h: Var,
) -> Result<Var> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        let wv = g.param(params, w);
        let bv = g.param(params, b);
        h = g.matmul(h, wv)?;
        h = g.add_bias(h, bv)?;
        if i + 1 < layers.len() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

fn gather(features: &Tensor, idx: &[usize]) -> Tensor {
    let d = features.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(features.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).expect("gathered rows")
}

impl QuantizedAutoencoder {
    fn init(input_dim: usize, cfg: &TokenizerConfig, levels: usize, rng: &mut impl Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(cfg.latent_dim);
        let mut params = ParamStore::new();
        let encoder = mlp(&mut params, "encoder", &widths, rng);
        widths.reverse();
        let decoder = mlp(&mut params, "decoder", &widths, rng);
        Self {
            params,
            encoder,
            decoder,
            codebooks: Vec::with_capacity(levels),
            ema_counts: Vec::with_capacity(levels),
            ema_sums: Vec::with_capacity(levels),
        }
    }

    pub fn levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = run_mlp(&mut g, &self.params, &self.encoder, xv)?;
        Ok(g.value(z).clone())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let x = run_mlp(&mut g, &self.params, &self.decoder, zv)?;
        Ok(g.value(x).clone())
    }

    pub fn assign(&self, z: &Tensor) -> Assignment {
        let n = z.rows();
        let d = z.cols();
        let mut digits = vec![Vec::with_capacity(self.levels()); n];
        let mut cumulative = vec![Tensor::zeros(&[n, d]); self.levels()];
        for i in 0..n {
            let mut residual = z.row(i).to_vec();
            let mut acc = vec![0.0; d];
            for (l, cb) in self.codebooks.iter().enumerate() {
                let (r, next) = quantize_vector(cb, &residual);
                for (a, e) in acc.iter_mut().zip(cb.row(r as usize)) {
                    *a += e;
                }
                cumulative[l].row_mut(i).copy_from_slice(&acc);
                digits[i].push(r);
                residual = next;
            }
        }
        Assignment { digits, cumulative }
    }

    /// Residual left after level `level` (0-based) for every item.
    pub fn residuals(&self, z: &Tensor, a: &Assignment, level: usize) -> Tensor {
        let mut out = z.clone();
        for (o, c) in out.data_mut().iter_mut().zip(a.cumulative[level].data()) {
            *o -= c;
        }
        out
    }

    fn init_codebooks(
        &mut self,
        z: &Tensor,
        cfg: &TokenizerConfig,
        levels: usize,
        batch: usize,
        rng: &mut impl Rng,
    ) {
        let n = z.rows();
        let scale = batch as f64 / n as f64;
        let mut residual = z.clone();
        for _ in 0..levels {
            let km = kmeans(&residual, cfg.k, &cfg.kmeans, rng);
            let mut counts = vec![0.0; cfg.k];
            for &j in &km.assignment {
                counts[j] += 1.0;
            }
            let counts: Vec<f64> = counts.iter().map(|c| (c * scale).max(1.0)).collect();
            let mut sums = km.centroids.clone();
            for j in 0..cfg.k {
                sums.row_mut(j).iter_mut().for_each(|v| *v *= counts[j]);
            }
            for i in 0..n {
                let (r, _) = nearest(&km.centroids, residual.row(i));
                let row = residual.row_mut(i);
                for (v, e) in row.iter_mut().zip(km.centroids.row(r)) {
                    *v -= e;
                }
            }
            self.codebooks.push(km.centroids);
            self.ema_counts.push(counts);
            self.ema_sums.push(sums);
        }
    }

    fn ema_update(&mut self, z: &Tensor, a: &Assignment, decay: f64) {
        let d = z.cols();
        for l in 0..self.levels() {
            let k = self.codebooks[l].rows();
            let mut counts = vec![0.0; k];
            let mut sums = vec![0.0; k * d];
            for i in 0..z.rows() {
                let j = a.digits[i][l] as usize;
                counts[j] += 1.0;
                let prev = if l == 0 {
                    None
                } else {
                    Some(a.cumulative[l - 1].row(i))
                };
                for c in 0..d {
                    let r = z.row(i)[c] - prev.map_or(0.0, |p| p[c]);
                    sums[j * d + c] += r;
                }
            }
            let ema_n = &mut self.ema_counts[l];
            let ema_s = self.ema_sums[l].data_mut();
            for j in 0..k {
                ema_n[j] = decay * ema_n[j] + (1.0 - decay) * counts[j];
                for c in 0..d {
                    ema_s[j * d + c] = decay * ema_s[j * d + c] + (1.0 - decay) * sums[j * d + c];
                }
            }
            let total: f64 = ema_n.iter().sum();
            let cb = self.codebooks[l].data_mut();
            for j in 0..k {
                let smoothed = (ema_n[j] + LAPLACE_EPS) / (total + k as f64 * LAPLACE_EPS) * total;
                for c in 0..d {
                    cb[j * d + c] = ema_s[j * d + c] / smoothed;
                }
            }
        }
    }

    /// Trains encoder, decoder and `levels` codebooks on `features` with
    /// `L_rec + β Σ_l ‖r_l − sg[e_l]‖²` and a straight-through bottleneck.
    pub fn fit(
        features: &Tensor,
        cfg: &TokenizerConfig,
        levels: usize,
        rng: &mut impl Rng,
    ) -> Result<(Self, FitReport)> {
        cfg.validate()?;
        let n = features.rows();
        let batch = cfg.batch_size.min(n).max(1);
        let mut model = Self::init(features.cols(), cfg, levels, rng);
        let z0 = model.encode(features)?;
        model.init_codebooks(&z0, cfg, levels, batch, rng);

        let opt = AdagradConfig {
            lr: cfg.lr,
            eps: 1e-10,
        };
        let mut opt_state = AdagradState::new(&model.params);
        let mut report = FitReport::default();
        let mut idle = vec![vec![0usize; cfg.k]; levels];
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.max_epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            let mut used = vec![vec![false; cfg.k]; levels];
            for idx in order.chunks(batch) {
                let x = gather(features, idx);
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let z = run_mlp(&mut g, &model.params, &model.encoder, xv)?;
                let zval = g.value(z).clone();
                let a = model.assign(&zval);
                let zq = g.straight_through(z, a.cumulative[levels - 1].clone())?;
                let xhat = run_mlp(&mut g, &model.params, &model.decoder, zq)?;
                let mut loss = g.mean_squared_rows(xhat, &x)?;
                for target in &a.cumulative {
                    let q = g.mean_squared_rows(z, target)?;
                    let q = g.scale(q, cfg.beta);
                    loss = g.add(loss, q)?;
                }
                epoch_loss += g.value(loss).data()[0] * idx.len() as f64;
                let grads = g.backward(loss)?.for_params(&model.params);
                adagrad_step(&mut model.params, &grads, &mut opt_state, &opt)?;
                model.ema_update(&zval, &a, cfg.ema_decay);
                for digits in &a.digits {
                    for (l, &dgt) in digits.iter().enumerate() {
                        used[l][dgt as usize] = true;
                    }
                }
            }
            epoch_loss /= n as f64;
            report.loss_history.push(epoch_loss);
            report.epochs = epoch + 1;

            let mut dead = Vec::new();
            for l in 0..levels {
                for j in 0..cfg.k {
                    idle[l][j] = if used[l][j] { 0 } else { idle[l][j] + 1 };
                    if idle[l][j] >= cfg.dead_code_patience.max(1) {
                        dead.push((l, j));
                    }
                }
            }
            if !dead.is_empty() {
                let z = model.encode(features)?;
                let a = model.assign(&z);
                let mut taken = vec![vec![false; n]; levels];
                for (l, j) in dead {
                    // The worst-quantized item at this level seeds the entry.
                    let src = if l == 0 {
                        z.clone()
                    } else {
                        model.residuals(&z, &a, l - 1)
                    };
                    let err = |i: usize| {
                        let e = model.codebooks[l].row(a.digits[i][l] as usize);
                        src.row(i).iter().zip(e).map(|(x, c)| (x - c) * (x - c)).sum::<f64>()
                    };
                    let Some(item) = (0..n)
                        .filter(|&i| !taken[l][i])
                        .max_by(|&p, &q| err(p).total_cmp(&err(q)).then(q.cmp(&p)))
                    else {
                        continue;
                    };
                    taken[l][item] = true;
                    let source = src.row(item).to_vec();
                    model.codebooks[l].row_mut(j).copy_from_slice(&source);
                    model.ema_counts[l][j] = 1.0;
                    model.ema_sums[l].row_mut(j).copy_from_slice(&source);
                    idle[l][j] = 0;
                    report.reseeds += 1;
                    tracing::debug!(level = l, entry = j, epoch, "re-seeded dead codebook entry");
                }
            }

            if epoch >= cfg.plateau_epochs {
                let before = report.loss_history[epoch - cfg.plateau_epochs];
                if (before - epoch_loss) / before.abs().max(f64::MIN_POSITIVE)
                    < cfg.min_rel_improvement
                {
                    break;
                }
            }
        }
        Ok((model, report))
    }
}
