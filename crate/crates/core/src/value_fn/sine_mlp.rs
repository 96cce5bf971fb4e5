use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ValueFunction;
use crate::seed::{fnv1a, FNV_OFFSET};
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::math;

/// Dense layer, `w` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Multilayer perceptron with sine activations.
///
/// Hidden layer `l` maps `h ↦ sin(ω0·W_l h + b_l)`, the output layer is
/// affine. Inputs are normalized per dimension by `(x - center) / halfwidth`.
/// A time-conditioned network takes `t` as input 0 and is always evaluated at
/// `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineMlp {
    layer_sizes: Vec<usize>,
    omega0: f64,
    input_center: Vec<f64>,
    input_halfwidth: Vec<f64>,
    time_conditioned: bool,
    layers: Vec<Layer>,
}

/// Per-call activations, reused across evaluations to avoid allocation.
///
/// One flat buffer holding, in order: the input of every affine layer, the
/// `cos` of every hidden pre-activation (the sine's derivative), and two
/// scratch vectors for back-propagation.
#[derive(Debug, Clone)]
pub struct Workspace {
    buf: Vec<f64>,
}

impl SineMlp {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        omega0: f64,
        input_center: Vec<f64>,
        input_halfwidth: Vec<f64>,
        time_conditioned: bool,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Shape(format!("need at least 2 layer sizes, got {}", layer_sizes.len())));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("zero-width layer in {layer_sizes:?}")));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Shape(format!("output width must be 1, got {}", layer_sizes.last().unwrap())));
        }
        if time_conditioned && layer_sizes[0] < 2 {
            return Err(Error::Shape(String::from("time-conditioned input needs width ≥ 2")));
        }
        let n_in = layer_sizes[0];
        if input_center.len() != n_in || input_halfwidth.len() != n_in {
            return Err(Error::Shape(format!(
                "normalization has {} centers and {} halfwidths for input width {n_in}",
                input_center.len(),
                input_halfwidth.len()
            )));
        }
        if input_halfwidth.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Shape(String::from("input halfwidths must be positive")));
        }
        if !omega0.is_finite() {
            return Err(Error::Shape(String::from("omega0 must be finite")));
        }
        if layers.len() != layer_sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layers for {} layer sizes",
                layers.len(),
                layer_sizes.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if layer.w.len() != fan_in * fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: w has {} entries, expected {fan_out}x{fan_in}",
                    layer.w.len()
                )));
            }
            if layer.b.len() != fan_out {
                return Err(Error::Shape(format!("layer {l}: b has {} entries, expected {fan_out}", layer.b.len())));
            }
        }
        Ok(Self { layer_sizes, omega0, input_center, input_halfwidth, time_conditioned, layers })
    }

    /// All weights and biases zero.
    pub fn zeros(
        layer_sizes: &[usize],
        omega0: f64,
        input_center: Vec<f64>,
        input_halfwidth: Vec<f64>,
        time_conditioned: bool,
    ) -> Result<Self> {
        let layers = layer_sizes
            .windows(2)
            .map(|p| Layer { w: vec![0.0; p[0] * p[1]], b: vec![0.0; p[1]] })
            .collect();
        Self::from_parts(layer_sizes.to_vec(), omega0, input_center, input_halfwidth, time_conditioned, layers)
    }

    /// Sinusoidal-network initialization: first layer weights uniform in
    /// `±1/fan_in`, deeper layers in `±√(6/fan_in)/ω0`, biases in `±1/√fan_in`.
    pub fn siren(
        layer_sizes: &[usize],
        omega0: f64,
        input_center: Vec<f64>,
        input_halfwidth: Vec<f64>,
        time_conditioned: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, omega0, input_center, input_halfwidth, time_conditioned)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net.layers.len();
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let fan_in = layer_sizes[l] as f64;
            let wb = if l == 0 { 1.0 / fan_in } else { math::sqrt(6.0 / fan_in) / if omega0 == 0.0 { 1.0 } else { omega0.abs() } };
            let bb = 1.0 / math::sqrt(fan_in);
            layer.w.iter_mut().for_each(|w| *w = rng.random_range(-wb..=wb));
            if l + 1 < n {
                layer.b.iter_mut().for_each(|b| *b = rng.random_range(-bb..=bb));
            }
        }
        Ok(net)
    }

    /// Sinusoidal initialization with normalization taken from the domain box.
    pub fn for_system(spec: &SystemSpec, hidden: &[usize], omega0: f64, seed: u64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(spec.state_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let center = spec.domain_lower.iter().zip(&spec.domain_upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let half = spec.domain_lower.iter().zip(&spec.domain_upper).map(|(l, u)| 0.5 * (u - l)).collect();
        Self::siren(&sizes, omega0, center, half, false, seed)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn input_center(&self) -> &[f64] {
        &self.input_center
    }

    pub fn input_halfwidth(&self) -> &[f64] {
        &self.input_halfwidth
    }

    pub fn time_conditioned(&self) -> bool {
        self.time_conditioned
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn offset(&self) -> usize {
        usize::from(self.time_conditioned)
    }

    fn widest(&self) -> usize {
        self.layer_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Total width of all affine-layer inputs.
    fn act_len(&self) -> usize {
        self.layer_sizes[..self.layers.len()].iter().sum()
    }

    pub fn workspace(&self) -> Workspace {
        let n_act = self.act_len();
        let n_dact = n_act - self.layer_sizes[0];
        Workspace { buf: vec![0.0; n_act + n_dact + 2 * self.widest()] }
    }

    /// Evaluates the network at state `x`, keeping what the gradient
    /// methods need in `ws`.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        self.forward_impl(x, ws, true)
    }

    fn forward_impl(&self, x: &[f64], ws: &mut Workspace, derivs: bool) -> f64 {
        let off = self.offset();
        let n_act = self.act_len();
        let (acts, rest) = ws.buf.split_at_mut(n_act);
        let dact = &mut rest[..n_act - self.layer_sizes[0]];
        if self.time_conditioned {
            acts[0] = (0.0 - self.input_center[0]) / self.input_halfwidth[0];
        }
        for i in 0..x.len() {
            acts[i + off] = (x[i] - self.input_center[i + off]) / self.input_halfwidth[i + off];
        }
        let last = self.layers.len() - 1;
        let (mut a_off, mut d_off) = (0, 0);
        for (l, layer) in self.layers[..last].iter().enumerate() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (prev, next) = acts.split_at_mut(a_off + fan_in);
            let h = &prev[a_off..];
            let d = &mut dact[d_off..d_off + fan_out];
            for (((o, d), row), b) in next[..fan_out].iter_mut().zip(d).zip(layer.w.chunks_exact(fan_in)).zip(&layer.b) {
                let dot: f64 = row.iter().zip(h).map(|(w, v)| w * v).sum();
                let z = self.omega0 * dot + b;
                if derivs {
                    (*o, *d) = math::sin_cos(z);
                } else {
                    *o = math::sin(z);
                }
            }
            a_off += fan_in;
            d_off += fan_out;
        }
        let out = &self.layers[last];
        let h = &acts[a_off..a_off + self.layer_sizes[last]];
        out.w.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + out.b[0]
    }

    /// Back-propagates `∂ŷ/∂(input)` through the activations of the last
    /// [`SineMlp::forward`] call and, if `params` is given, adds
    /// `dy · ∂ŷ/∂θ` into it (layout of [`SineMlp::params`]).
    fn backward(&self, ws: &mut Workspace, dy: f64, mut params: Option<&mut [f64]>, input: Option<&mut [f64]>) {
        let last = self.layers.len() - 1;
        let n_act = self.act_len();
        let n_dact = n_act - self.layer_sizes[0];
        let widest = self.widest();
        let (acts, rest) = ws.buf.split_at_mut(n_act);
        let (dact, scratch) = rest.split_at_mut(n_dact);
        let (grad_h, grad_z) = scratch.split_at_mut(widest);
        // parameter, activation and derivative offsets of the layer being
        // visited, walking backwards
        let mut base = self.n_params();
        let mut a_off = n_act;
        let mut d_off = n_dact;

        let width_last = self.layer_sizes[last];
        base -= width_last + 1;
        a_off -= width_last;
        let out = &self.layers[last];
        if let Some(p) = params.as_deref_mut() {
            for (g, v) in p[base..base + width_last].iter_mut().zip(&acts[a_off..]) {
                *g += dy * v;
            }
            p[base + width_last] += dy;
        }
        for (g, w) in grad_h[..width_last].iter_mut().zip(&out.w) {
            *g = dy * w;
        }

        for l in (0..last).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            base -= fan_in * fan_out + fan_out;
            a_off -= fan_in;
            d_off -= fan_out;
            let gz = &mut grad_z[..fan_out];
            for ((z, h), d) in gz.iter_mut().zip(&grad_h[..fan_out]).zip(&dact[d_off..d_off + fan_out]) {
                *z = h * d;
            }
            let h = &acts[a_off..a_off + fan_in];
            if let Some(p) = params.as_deref_mut() {
                let (pw, pb) = p[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for (row, z) in pw.chunks_exact_mut(fan_in).zip(gz.iter()) {
                    let s = self.omega0 * z;
                    for (r, v) in row.iter_mut().zip(h) {
                        *r += s * v;
                    }
                }
                for (b, z) in pb.iter_mut().zip(gz.iter()) {
                    *b += z;
                }
            }
            if l == 0 && input.is_none() {
                break;
            }
            let gh = &mut grad_h[..fan_in];
            gh.fill(0.0);
            for (row, z) in self.layers[l].w.chunks_exact(fan_in).zip(gz.iter()) {
                for (g, w) in gh.iter_mut().zip(row) {
                    *g += w * z;
                }
            }
            gh.iter_mut().for_each(|g| *g *= self.omega0);
        }

        if let Some(g) = input {
            let off = self.offset();
            for i in 0..g.len() {
                g[i] = grad_h[i + off] / self.input_halfwidth[i + off];
            }
        }
    }

    /// Spatial gradient at the point of the last forward pass.
    pub fn input_gradient(&self, ws: &mut Workspace, grad: &mut [f64]) {
        self.backward(ws, 1.0, None, Some(grad));
    }

    /// Adds `dy · ∂ŷ/∂θ` at the point of the last forward pass into `grad`.
    pub fn accumulate_param_gradient(&self, ws: &mut Workspace, dy: f64, grad: &mut [f64]) {
        self.backward(ws, dy, Some(grad), None);
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened parameters: per layer, `w` row-major then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::LengthMismatch { left: p.len(), right: self.n_params() });
        }
        let mut o = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[o..o + nw]);
            o += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[o..o + nb]);
            o += nb;
        }
        Ok(())
    }

    /// `θ ← θ + alpha · g`.
    pub fn add_scaled(&mut self, g: &[f64], alpha: f64) {
        let mut o = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v += alpha * g[o];
                o += 1;
            }
        }
    }

    /// `ŷ ← scale · ŷ + shift`, applied to the output layer.
    pub fn affine_output(&mut self, scale: f64, shift: f64) {
        let out = self.layers.last_mut().unwrap();
        out.w.iter_mut().for_each(|w| *w *= scale);
        out.b[0] = scale * out.b[0] + shift;
    }
}

impl ValueFunction for SineMlp {
    fn input_dim(&self) -> usize {
        self.layer_sizes[0] - self.offset()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut ws = self.workspace();
        self.forward_impl(x, &mut ws, false)
    }

    fn eval_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut ws = self.workspace();
        let y = self.forward(x, &mut ws);
        self.input_gradient(&mut ws, grad);
        y
    }

    fn clamp_to_domain(&self, x: &mut [f64]) -> bool {
        let off = self.offset();
        let mut changed = false;
        for (i, v) in x.iter_mut().enumerate() {
            let (c, h) = (self.input_center[i + off], self.input_halfwidth[i + off]);
            let clamped = v.clamp(c - h, c + h);
            changed |= clamped != *v;
            *v = clamped;
        }
        changed
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        fnv1a(&mut h, b"sine_mlp:");
        for s in &self.layer_sizes {
            fnv1a(&mut h, &(*s as u64).to_le_bytes());
        }
        fnv1a(&mut h, &[u8::from(self.time_conditioned)]);
        let floats = core::iter::once(&self.omega0)
            .chain(&self.input_center)
            .chain(&self.input_halfwidth)
            .chain(self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)));
        for v in floats {
            fnv1a(&mut h, &v.to_bits().to_le_bytes());
        }
        h
    }
}
