use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sample::{Condition, Sample, Shape};
use super::schedule::NoiseSchedule;

/// Live role of a parameter set. A `Reference`-tagged instance is never
/// mutated by any training operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Trainable,
    Reference,
    Oracle,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Trainable => write!(f, "trainable"),
            Role::Reference => write!(f, "reference"),
            Role::Oracle => write!(f, "oracle"),
        }
    }
}

/// Architecture of the epsilon-prediction MLP.
///
/// Input features are the concatenation of x_t, the condition embedding
/// (zeros for NULL) plus a NULL indicator, and sinusoidal timestep features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub data_shape: Shape,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetSpec {
    pub fn input_dim(&self) -> usize {
        self.data_shape.len() + self.cond_dim + 1 + self.time_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// Row-major out_dim x in_dim.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn random(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| crate::rng::standard_normal(rng) * scale)
            .collect();
        Linear {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.w.chunks_exact(self.in_dim).zip(&self.b))
        {
            let mut acc = *b;
            for (wij, xj) in row.iter().zip(x) {
                acc += wij * xj;
            }
            *o = acc;
        }
    }
}

/// Additive low-rank update for one linear layer: the effective weight is
/// W + (alpha/rank) * up * down. The up factor is zero-initialized so a fresh
/// adapter is an exact no-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankAdapter {
    /// Row-major rank x in_dim.
    pub down: Vec<f64>,
    /// Row-major out_dim x rank.
    pub up: Vec<f64>,
    pub rank: usize,
    pub alpha: f64,
}

impl LowRankAdapter {
    fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Small feed-forward epsilon predictor with optional low-rank adapters.
/// Hidden layers use tanh; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsNet {
    pub spec: NetSpec,
    pub layers: Vec<Linear>,
    pub adapters: Option<Vec<LowRankAdapter>>,
}

struct ForwardCache {
    /// Layer inputs a_0 .. a_{L-1} (a_0 = input features).
    inputs: Vec<Vec<f64>>,
    /// down * a_i per adapted layer.
    down_acts: Option<Vec<Vec<f64>>>,
    output: Vec<f64>,
}

impl EpsNet {
    pub fn new(spec: NetSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![spec.input_dim()];
        dims.extend(spec.hidden.iter().copied());
        dims.push(spec.data_shape.len());
        let layers = dims
            .windows(2)
            .map(|pair| Linear::random(pair[0], pair[1], rng))
            .collect();
        EpsNet {
            spec,
            layers,
            adapters: None,
        }
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let mut dims = vec![spec.input_dim()];
        dims.extend(spec.hidden.iter().copied());
        dims.push(spec.data_shape.len());
        let layers = dims
            .windows(2)
            .map(|pair| Linear::zeros(pair[0], pair[1]))
            .collect();
        EpsNet {
            spec,
            layers,
            adapters: None,
        }
    }

    /// Attach fresh adapters to every layer. Down factors random, up factors
    /// zero, so the adapted output equals the base output exactly.
    pub fn attach_adapter(&mut self, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) {
        let adapters = self
            .layers
            .iter()
            .map(|layer| {
                let scale = 1.0 / (layer.in_dim as f64).sqrt();
                let down = (0..rank * layer.in_dim)
                    .map(|_| rng.gen_range(-scale..scale))
                    .collect();
                LowRankAdapter {
                    down,
                    up: vec![0.0; layer.out_dim * rank],
                    rank,
                    alpha,
                }
            })
            .collect();
        self.adapters = Some(adapters);
    }

    pub fn base_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        let adapter: usize = self
            .adapters
            .iter()
            .flatten()
            .map(|a| a.down.len() + a.up.len())
            .sum();
        self.base_param_count() + adapter
    }

    /// Flat parameter vector: all base layers (w then b), then all adapters
    /// (down then up).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        for a in self.adapters.iter().flatten() {
            out.extend_from_slice(&a.down);
            out.extend_from_slice(&a.up);
        }
        out
    }

    pub fn set_from_flat(&mut self, vals: &[f64]) -> Result<()> {
        if vals.len() != self.param_count() {
            return Err(Error::shape(
                format!("{} params", self.param_count()),
                format!("{} values", vals.len()),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&vals[off..off + wn]);
            off += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&vals[off..off + bn]);
            off += bn;
        }
        if let Some(adapters) = &mut self.adapters {
            for a in adapters {
                let dn = a.down.len();
                a.down.copy_from_slice(&vals[off..off + dn]);
                off += dn;
                let un = a.up.len();
                a.up.copy_from_slice(&vals[off..off + un]);
                off += un;
            }
        }
        Ok(())
    }

    /// Range of the flat vector holding adapter parameters.
    pub fn adapter_param_range(&self) -> std::ops::Range<usize> {
        self.base_param_count()..self.param_count()
    }

    fn features(&self, x: &[f64], c: &Condition, t: usize) -> Result<Vec<f64>> {
        let mut feats = Vec::with_capacity(self.spec.input_dim());
        feats.extend_from_slice(x);
        match c {
            Condition::Null => {
                feats.extend(std::iter::repeat(0.0).take(self.spec.cond_dim));
                feats.push(1.0);
            }
            Condition::Embedding(e) => {
                if e.len() != self.spec.cond_dim {
                    return Err(Error::shape(
                        format!("condition dim {}", self.spec.cond_dim),
                        format!("dim {}", e.len()),
                    ));
                }
                feats.extend_from_slice(e);
                feats.push(0.0);
            }
        }
        feats.extend(time_features(t, self.spec.time_dim));
        Ok(feats)
    }

    fn forward_cached(&self, x: &[f64], c: &Condition, t: usize) -> Result<ForwardCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut down_acts = self.adapters.as_ref().map(|_| Vec::new());
        let mut act = self.features(x, c, t)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim];
            layer.apply(&act, &mut z);
            if let Some(adapters) = &self.adapters {
                let a = &adapters[i];
                let mut d = vec![0.0; a.rank];
                for (dk, row) in d.iter_mut().zip(a.down.chunks_exact(layer.in_dim)) {
                    *dk = row.iter().zip(&act).map(|(v, x)| v * x).sum();
                }
                let s = a.scale();
                for (zo, row) in z.iter_mut().zip(a.up.chunks_exact(a.rank)) {
                    *zo += s * row.iter().zip(&d).map(|(u, dk)| u * dk).sum::<f64>();
                }
                down_acts.as_mut().unwrap().push(d);
            }
            inputs.push(act);
            if i < last {
                act = z.iter().map(|v| v.tanh()).collect();
            } else {
                act = z;
            }
            if !act.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("activations of layer {i}"),
                });
            }
        }
        Ok(ForwardCache {
            inputs,
            down_acts,
            output: act,
        })
    }

    pub fn forward(&self, x: &[f64], c: &Condition, t: usize) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, c, t)?.output)
    }

    /// Forward pass plus reverse-mode accumulation of d(upstream . output)/dparams
    /// into `grad_acc` (flat layout, same as `flatten_params`). Returns the output.
    pub fn forward_backward(
        &self,
        x: &[f64],
        c: &Condition,
        t: usize,
        upstream: &[f64],
        grad_acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x, c, t)?;
        debug_assert_eq!(grad_acc.len(), self.param_count());
        debug_assert_eq!(upstream.len(), cache.output.len());

        // Per-layer flat offsets.
        let mut base_offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            base_offsets.push(off);
            off += l.w.len() + l.b.len();
        }
        let mut adapter_offsets = Vec::new();
        if let Some(adapters) = &self.adapters {
            for a in adapters {
                adapter_offsets.push(off);
                off += a.down.len() + a.up.len();
            }
        }

        let mut g: Vec<f64> = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let a_in = &cache.inputs[i];
            let boff = base_offsets[i];

            // dL/dW and dL/db
            for (o, go) in g.iter().enumerate() {
                let row = &mut grad_acc[boff + o * layer.in_dim..boff + (o + 1) * layer.in_dim];
                for (slot, xj) in row.iter_mut().zip(a_in) {
                    *slot += go * xj;
                }
            }
            let b_base = boff + layer.w.len();
            for (o, go) in g.iter().enumerate() {
                grad_acc[b_base + o] += go;
            }

            // dL/dx through base weight
            let mut gx = vec![0.0; layer.in_dim];
            for (go, row) in g.iter().zip(layer.w.chunks_exact(layer.in_dim)) {
                for (slot, wij) in gx.iter_mut().zip(row) {
                    *slot += go * wij;
                }
            }

            if let Some(adapters) = &self.adapters {
                let a = &adapters[i];
                let s = a.scale();
                let d = &cache.down_acts.as_ref().unwrap()[i];
                let aoff = adapter_offsets[i];
                // up^T g
                let mut utg = vec![0.0; a.rank];
                for (go, row) in g.iter().zip(a.up.chunks_exact(a.rank)) {
                    for (slot, u) in utg.iter_mut().zip(row) {
                        *slot += go * u;
                    }
                }
                // dL/ddown += s * (up^T g) outer a_in
                for (k, uk) in utg.iter().enumerate() {
                    let row = &mut grad_acc[aoff + k * layer.in_dim..aoff + (k + 1) * layer.in_dim];
                    for (slot, xj) in row.iter_mut().zip(a_in) {
                        *slot += s * uk * xj;
                    }
                }
                // dL/dup += s * g outer d
                let up_base = aoff + a.down.len();
                for (o, go) in g.iter().enumerate() {
                    let row = &mut grad_acc[up_base + o * a.rank..up_base + (o + 1) * a.rank];
                    for (slot, dk) in row.iter_mut().zip(d) {
                        *slot += s * go * dk;
                    }
                }
                // dL/dx through adapter: s * down^T (up^T g)
                for (uk, row) in utg.iter().zip(a.down.chunks_exact(layer.in_dim)) {
                    for (slot, dij) in gx.iter_mut().zip(row) {
                        *slot += s * uk * dij;
                    }
                }
            }

            if i > 0 {
                // a_in of this layer is tanh(z_{i-1}); tanh' = 1 - tanh^2.
                for (slot, a) in gx.iter_mut().zip(a_in) {
                    *slot *= 1.0 - a * a;
                }
                g = gx;
            }
        }
        Ok(cache.output)
    }
}

pub fn time_features(t: usize, dim: usize) -> Vec<f64> {
    let half = (dim / 2).max(1);
    let mut feats = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-(k as f64) / half as f64);
        feats.push((t as f64 * omega).sin());
        feats.push((t as f64 * omega).cos());
    }
    if dim % 2 == 1 {
        feats.push(t as f64 / 1000.0);
    }
    feats
}

/// Epsilon predictor: a trainable/reference network or the closed-form
/// posterior-mean oracle for Gaussian data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DenoiserKind {
    Net(EpsNet),
    /// For x0 ~ N(mean, cov_scale^2 I):
    /// E[eps | x_t] = sqrt(1-abar_t) (x_t - sqrt(abar_t) mean) / (abar_t cov_scale^2 + 1 - abar_t)
    Oracle {
        mean: Vec<f64>,
        cov_scale: f64,
        alpha_bars: Vec<f64>,
        shape: Shape,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub kind: DenoiserKind,
    pub role: Role,
}

impl Denoiser {
    pub fn from_net(net: EpsNet, role: Role) -> Self {
        Denoiser {
            kind: DenoiserKind::Net(net),
            role,
        }
    }

    /// Closed-form posterior-mean noise predictor for N(mean, cov_scale^2 I) data.
    pub fn oracle(mean: Vec<f64>, cov_scale: f64, schedule: &NoiseSchedule) -> Result<Self> {
        if cov_scale <= 0.0 || !cov_scale.is_finite() {
            return Err(Error::invalid("cov_scale must be positive and finite"));
        }
        let shape = Shape::Vector(mean.len());
        Ok(Denoiser {
            kind: DenoiserKind::Oracle {
                mean,
                cov_scale,
                alpha_bars: schedule.alpha_bars.clone(),
                shape,
            },
            role: Role::Oracle,
        })
    }

    pub fn data_shape(&self) -> Shape {
        match &self.kind {
            DenoiserKind::Net(net) => net.spec.data_shape,
            DenoiserKind::Oracle { shape, .. } => *shape,
        }
    }

    pub fn net(&self) -> Option<&EpsNet> {
        match &self.kind {
            DenoiserKind::Net(net) => Some(net),
            _ => None,
        }
    }

    pub fn net_mut(&mut self) -> Option<&mut EpsNet> {
        match &mut self.kind {
            DenoiserKind::Net(net) => Some(net),
            _ => None,
        }
    }

    /// Copy with the given role tag.
    pub fn with_role(&self, role: Role) -> Self {
        Denoiser {
            kind: self.kind.clone(),
            role,
        }
    }

    pub fn predict_eps(&self, x_t: &Sample, c: &Condition, t: usize) -> Result<Sample> {
        if x_t.shape != self.data_shape() {
            return Err(Error::shape(
                self.data_shape().to_string(),
                x_t.shape.to_string(),
            ));
        }
        let data = match &self.kind {
            DenoiserKind::Net(net) => net.forward(&x_t.data, c, t)?,
            DenoiserKind::Oracle {
                mean,
                cov_scale,
                alpha_bars,
                ..
            } => {
                if t >= alpha_bars.len() {
                    return Err(Error::TimestepOutOfRange {
                        t,
                        max: alpha_bars.len(),
                    });
                }
                let abar = alpha_bars[t];
                let denom = abar * cov_scale * cov_scale + 1.0 - abar;
                let coef = (1.0 - abar).sqrt() / denom;
                x_t.data
                    .iter()
                    .zip(mean)
                    .map(|(x, m)| coef * (x - abar.sqrt() * m))
                    .collect()
            }
        };
        Sample::new(data, x_t.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn spec2() -> NetSpec {
        NetSpec {
            data_shape: Shape::Vector(2),
            cond_dim: 3,
            time_dim: 4,
            hidden: vec![8, 8],
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = EpsNet::zeros(spec2());
        let out = net
            .forward(&[1.5, -0.3], &Condition::Embedding(vec![1.0, 2.0, 3.0]), 5)
            .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn fresh_adapter_is_exact_noop() {
        let mut rng = rng_from(11);
        let base = EpsNet::new(spec2(), &mut rng);
        let mut adapted = base.clone();
        adapted.attach_adapter(4, 4.0, &mut rng);
        let mut input_rng = rng_from(99);
        for i in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| input_rng.gen_range(-2.0..2.0)).collect();
            let c = Condition::Embedding(vec![
                input_rng.gen_range(-1.0..1.0),
                input_rng.gen_range(-1.0..1.0),
                input_rng.gen_range(-1.0..1.0),
            ]);
            let a = base.forward(&x, &c, i % 10).unwrap();
            let b = adapted.forward(&x, &c, i % 10).unwrap();
            assert_eq!(a, b, "adapter must be a no-op at init");
        }
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = rng_from(3);
        let mut net = EpsNet::new(spec2(), &mut rng);
        net.attach_adapter(2, 2.0, &mut rng);
        let flat = net.flatten_params();
        let mut other = net.clone();
        other.set_from_flat(&flat).unwrap();
        assert_eq!(net, other);
        assert_eq!(flat.len(), net.param_count());
        assert!(net.adapter_param_range().start < net.adapter_param_range().end);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from(42);
        let mut net = EpsNet::new(spec2(), &mut rng);
        net.attach_adapter(2, 3.0, &mut rng);
        // make up factors nonzero so adapter grads are exercised
        let mut flat = net.flatten_params();
        let range = net.adapter_param_range();
        let mut prng = rng_from(7);
        for v in &mut flat[range] {
            *v = prng.gen_range(-0.3..0.3);
        }
        net.set_from_flat(&flat).unwrap();

        let x = [0.7, -1.2];
        let c = Condition::Embedding(vec![0.2, -0.5, 1.0]);
        let upstream = [0.9, -0.4];
        let mut grad = vec![0.0; net.param_count()];
        net.forward_backward(&x, &c, 3, &upstream, &mut grad).unwrap();

        let loss = |n: &EpsNet| -> f64 {
            let y = n.forward(&x, &c, 3).unwrap();
            y.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let flat = net.flatten_params();
        let mut check_rng = rng_from(123);
        for _ in 0..200 {
            let i = check_rng.gen_range(0..flat.len());
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let mut np = net.clone();
            np.set_from_flat(&plus).unwrap();
            let mut nm = net.clone();
            nm.set_from_flat(&minus).unwrap();
            let fd = (loss(&np) - loss(&nm)) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-5,
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn oracle_standard_normal_is_scaled_identity() {
        let schedule = crate::diffusion::make_linear_schedule(50, 0.01, 0.2).unwrap();
        let oracle = Denoiser::oracle(vec![0.0, 0.0], 1.0, &schedule).unwrap();
        for t in [0, 10, 49] {
            let x = Sample::new(vec![1.0, -2.0], Shape::Vector(2)).unwrap();
            let e = oracle.predict_eps(&x, &Condition::Null, t).unwrap();
            let coef = (1.0 - schedule.alpha_bars[t]).sqrt();
            assert!((e.data[0] - coef * 1.0).abs() < 1e-14);
            assert!((e.data[1] - coef * -2.0).abs() < 1e-14);
            // x_t = 0, mu = 0 -> prediction 0
            let zero = oracle
                .predict_eps(&Sample::zeros(Shape::Vector(2)), &Condition::Null, t)
                .unwrap();
            assert_eq!(zero.data, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn non_finite_params_surface_as_error() {
        let mut net = EpsNet::zeros(spec2());
        net.layers[0].b[0] = f64::NAN;
        let err = net.forward(&[0.0, 0.0], &Condition::Null, 0);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }
}
