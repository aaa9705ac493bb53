//! Variational graph autoencoder over the correlation graph.
//!
//! Encoder: `H = ReLU(P·X·W¹)`, `μ = P·H·W_μ`, `logσ = P·H·W_σ`,
//! `Z = μ + σ ⊙ ε`. Decoder: `Â = Sigmoid(Z·Zᵀ)`. Training maximizes
//! `Σ_{m<m′} [a·log Â + (1−a)·log(1−Â)] − KL(q ‖ N(0, I))` by plain gradient
//! ascent, with soft targets `a = (A + 1)/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphcraft::CorrelationGraph;
use crate::mathcore::{Matrix, SeededRng};

const PROB_CLAMP: f64 = 1e-7;

/// `D̃^{-1/2}·(A⁺ + I)·D̃^{-1/2}` with `A⁺ = max(A, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationMatrix(pub Matrix);

pub fn normalize_adjacency(a: &Matrix) -> Result<PropagationMatrix> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let tilde = Matrix::from_fn(n, n, |i, j| {
        a[(i, j)].max(0.0) + if i == j { 1.0 } else { 0.0 }
    });
    let deg = tilde.row_sums();
    assert!(
        deg.iter().all(|&d| d > 0.0),
        "clamped degrees are at least one"
    );
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(PropagationMatrix(Matrix::from_fn(n, n, |i, j| {
        (inv[i] * inv[j]) * tilde[(i, j)]
    })))
}

/// Sigmoid of the latent Gram matrix.
pub fn decode(z: &Matrix) -> Result<Matrix> {
    Ok(z.matmul_t(z)?.map(sigmoid))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft edge targets `(A + 1)/2` in `[0, 1]`.
pub fn soft_targets(a: &Matrix) -> Matrix {
    a.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFeatures {
    /// Each node carries its column of observed values.
    #[default]
    Observed,
    /// Identity features (featureless encoder).
    Identity,
}

/// Which latent matrix produces the `Â` handed to the spectral stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeFrom {
    #[default]
    Mean,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub features: NodeFeatures,
    pub decode_from: DecodeFrom,
    /// Drop the noise path so that `Z = μ` exactly.
    pub deterministic: bool,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 32,
            epochs: 30,
            lr: 0.01,
            features: NodeFeatures::Observed,
            decode_from: DecodeFrom::Mean,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeParams {
    /// `input_dim × h₁`
    pub w1: Matrix,
    /// `h₁ × h₂`
    pub w_mu: Matrix,
    /// `h₁ × h₂`
    pub w_sigma: Matrix,
}

impl VgaeParams {
    /// `N(0, 1/fan_in)` for every weight.
    pub fn init(input_dim: usize, hidden: usize, latent: usize, rng: &mut SeededRng) -> Self {
        let mut draw = |r: usize, c: usize| {
            let std = (1.0 / r as f64).sqrt();
            Matrix::from_fn(r, c, |_, _| std * rng.normal())
        };
        let w1 = draw(input_dim, hidden);
        let w_mu = draw(hidden, latent);
        let w_sigma = draw(hidden, latent);
        Self { w1, w_mu, w_sigma }
    }

    fn axpy(&mut self, alpha: f64, g: &VgaeParams) -> Result<()> {
        self.w1.axpy(alpha, &g.w1)?;
        self.w_mu.axpy(alpha, &g.w_mu)?;
        self.w_sigma.axpy(alpha, &g.w_sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub z: Matrix,
    pub mu: Matrix,
    pub log_sigma: Matrix,
    /// The standard normal draw behind `z`; zero in deterministic mode.
    pub eps: Matrix,
}

struct Forward {
    px: Matrix,
    pre1: Matrix,
    ph: Matrix,
    enc: Encoding,
}

fn forward(
    x: &Matrix,
    p: &PropagationMatrix,
    params: &VgaeParams,
    eps: Option<Matrix>,
) -> Result<Forward> {
    let m = p.0.rows();
    if x.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "vgae encode (node count)",
            expected: m,
            actual: x.rows(),
        });
    }
    if x.cols() != params.w1.rows() {
        return Err(Error::DimensionMismatch {
            context: "vgae encode (feature width)",
            expected: params.w1.rows(),
            actual: x.cols(),
        });
    }
    let px = p.0.matmul(x)?;
    let pre1 = px.matmul(&params.w1)?;
    let h = pre1.map(|v| v.max(0.0));
    let ph = p.0.matmul(&h)?;
    let mu = ph.matmul(&params.w_mu)?;
    let log_sigma = ph.matmul(&params.w_sigma)?;
    let (z, eps) = match eps {
        Some(eps) => {
            let z = Matrix::from_fn(m, mu.cols(), |i, j| {
                mu[(i, j)] + log_sigma[(i, j)].exp() * eps[(i, j)]
            });
            (z, eps)
        }
        None => (mu.clone(), Matrix::zeros(m, mu.cols())),
    };
    Ok(Forward {
        px,
        pre1,
        ph,
        enc: Encoding {
            z,
            mu,
            log_sigma,
            eps,
        },
    })
}

/// Runs the encoder. `rng = None` selects the deterministic path `Z = μ`.
pub fn encode(
    x: &Matrix,
    p: &PropagationMatrix,
    params: &VgaeParams,
    rng: Option<&mut SeededRng>,
) -> Result<Encoding> {
    let eps = rng.map(|r| Matrix::from_fn(x.rows(), params.w_mu.cols(), |_, _| r.normal()));
    Ok(forward(x, p, params, eps)?.enc)
}

/// Reconstruction log-likelihood over unordered pairs minus the KL term.
///
/// When `log_sigma` is `None` the posterior is treated as a point mass and
/// only the mean part `½Σμ²` of the KL term remains.
pub fn elbo(
    a_hat: &Matrix,
    target: &Matrix,
    mu: &Matrix,
    log_sigma: Option<&Matrix>,
) -> Result<f64> {
    let n = a_hat.rows();
    if a_hat.shape() != target.shape() || !a_hat.is_square() {
        return Err(Error::DimensionMismatch {
            context: "elbo (adjacency shapes)",
            expected: n * n,
            actual: target.rows() * target.cols(),
        });
    }
    let mut rec = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let p = a_hat[(i, j)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let t = target[(i, j)];
            rec += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
    }
    let kl = kl_term(mu, log_sigma);
    let value = rec - kl;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("elbo (reconstruction {rec}, kl {kl})"),
        });
    }
    Ok(value)
}

fn kl_term(mu: &Matrix, log_sigma: Option<&Matrix>) -> f64 {
    match log_sigma {
        Some(ls) => {
            0.5 * mu
                .as_slice()
                .iter()
                .zip(ls.as_slice())
                .map(|(&m, &l)| m * m + (2.0 * l).exp() - 2.0 * l - 1.0)
                .sum::<f64>()
        }
        None => 0.5 * mu.as_slice().iter().map(|m| m * m).sum::<f64>(),
    }
}

/// ELBO at fixed noise `eps` and its gradient with respect to every weight.
/// `eps = None` is the deterministic path.
pub fn elbo_and_grad(
    x: &Matrix,
    p: &PropagationMatrix,
    target: &Matrix,
    params: &VgaeParams,
    eps: Option<&Matrix>,
) -> Result<(f64, VgaeParams)> {
    let fw = forward(x, p, params, eps.cloned())?;
    let enc = &fw.enc;
    let a_hat = decode(&enc.z)?;
    let stochastic = eps.is_some();
    let value = elbo(
        &a_hat,
        target,
        &enc.mu,
        stochastic.then_some(&enc.log_sigma),
    )?;

    let n = a_hat.rows();
    // d/dlogit of the pair term is (a − Â) unless the clamp is active.
    let g = Matrix::from_fn(n, n, |i, j| {
        let v = a_hat[(i, j)];
        if i == j || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&v) {
            0.0
        } else {
            target[(i, j)] - v
        }
    });
    let dz = g.matmul(&enc.z)?;
    let dmu = dz.sub(&enc.mu)?;
    let dls = if stochastic {
        let ls = &enc.log_sigma;
        Matrix::from_fn(n, ls.cols(), |i, j| {
            let s = ls[(i, j)].exp();
            dz[(i, j)] * enc.eps[(i, j)] * s - (s * s - 1.0)
        })
    } else {
        Matrix::zeros(n, enc.log_sigma.cols())
    };
    let g_mu = fw.ph.t_matmul(&dmu)?;
    let g_sigma = fw.ph.t_matmul(&dls)?;
    let dph = dmu
        .matmul_t(&params.w_mu)?
        .add(&dls.matmul_t(&params.w_sigma)?)?;
    let dh = p.0.t_matmul(&dph)?;
    let dpre = Matrix::from_fn(dh.rows(), dh.cols(), |i, j| {
        if fw.pre1[(i, j)] > 0.0 {
            dh[(i, j)]
        } else {
            0.0
        }
    });
    let g1 = fw.px.t_matmul(&dpre)?;
    Ok((
        value,
        VgaeParams {
            w1: g1,
            w_mu: g_mu,
            w_sigma: g_sigma,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeState {
    pub params: VgaeParams,
    pub z: Matrix,
    pub mu: Matrix,
    pub log_sigma: Matrix,
    pub a_hat: Matrix,
    /// ELBO before each epoch's step, then at the final weights.
    pub elbo_trace: Vec<f64>,
}

/// Node-feature matrix for the encoder: `Fᵀ` (`M × B`) or `I_M`.
pub fn node_features(graph: &CorrelationGraph, kind: NodeFeatures) -> Matrix {
    match kind {
        NodeFeatures::Observed => graph.features.transpose(),
        NodeFeatures::Identity => Matrix::identity(graph.nodes()),
    }
}

pub fn train_vgae(
    graph: &CorrelationGraph,
    cfg: &VgaeConfig,
    rng: &mut SeededRng,
) -> Result<VgaeState> {
    if cfg.hidden == 0 || cfg.latent == 0 {
        return Err(Error::invalid("VGAE layer widths must be positive"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(format!(
            "VGAE learning rate {} is invalid",
            cfg.lr
        )));
    }
    let x = node_features(graph, cfg.features);
    let p = normalize_adjacency(&graph.adjacency)?;
    let target = soft_targets(&graph.adjacency);
    let mut params = VgaeParams::init(
        x.cols(),
        cfg.hidden,
        cfg.latent,
        &mut rng.split("vgae-init"),
    );
    let mut noise = rng.split("vgae-noise");
    let m = graph.nodes();
    let mut draw =
        |det: bool| (!det).then(|| Matrix::from_fn(m, cfg.latent, |_, _| noise.normal()));

    // The ELBO sums over all node pairs; stepping on the per-pair average
    // keeps the step size independent of graph size.
    let pairs = (m * m.saturating_sub(1) / 2).max(1) as f64;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let eps = draw(cfg.deterministic);
        let (value, grad) =
            elbo_and_grad(&x, &p, &target, &params, eps.as_ref()).map_err(|e| Error::Diverged {
                stage: "train_vgae",
                round: graph.round,
                detail: format!("epoch {epoch}: {e}"),
            })?;
        trace.push(value);
        params.axpy(cfg.lr / pairs, &grad)?;
    }
    let eps = draw(cfg.deterministic);
    let fw = forward(&x, &p, &params, eps)?;
    let enc = fw.enc;
    let final_value = elbo(
        &decode(&enc.z)?,
        &target,
        &enc.mu,
        (!cfg.deterministic).then_some(&enc.log_sigma),
    )
    .map_err(|e| Error::Diverged {
        stage: "train_vgae",
        round: graph.round,
        detail: format!("final weights: {e}"),
    })?;
    trace.push(final_value);
    let a_hat = match cfg.decode_from {
        DecodeFrom::Mean => decode(&enc.mu)?,
        DecodeFrom::Sample => decode(&enc.z)?,
    };
    Ok(VgaeState {
        params,
        z: enc.z,
        mu: enc.mu,
        log_sigma: enc.log_sigma,
        a_hat,
        elbo_trace: trace,
    })
}
