//! Network instantiation, forward evaluation, and exact reverse-mode
//! differentiation with respect to both parameters and the input.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{derive_seed, ChannelStack};
use crate::netcore::spec::{NetSpec, SkipFrom};

/// A network plus its flat parameter vector.
///
/// Immutable during forward/backward; training mutates parameters through
/// [`NetHandle::params_mut`]. Shared read-only handles are safe to query from
/// multiple threads.
#[derive(Debug, Clone)]
pub struct NetHandle {
    spec: NetSpec,
    params: Vec<f64>,
}

/// Offsets of one layer's weights and biases inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlice {
    pub w: usize,
    pub b: usize,
    pub end: usize,
}

/// Builds a network with fan-in-scaled uniform initialization, deterministic
/// in the seed.
pub fn build_net(spec: &NetSpec, seed: u64) -> Result<NetHandle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "net-init"));
    let mut params = Vec::with_capacity(spec.param_count());
    for layer in &spec.layers {
        let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let n_w = layer.out_channels * layer.in_channels * layer.kernel * layer.kernel;
        for _ in 0..n_w {
            params.push(rng.random_range(-bound..bound));
        }
        for _ in 0..layer.out_channels {
            params.push(rng.random_range(-bound..bound));
        }
    }
    Ok(NetHandle { spec: spec.clone(), params })
}

/// Cached intermediate state from [`NetHandle::forward_cached`], consumed by
/// [`NetHandle::backward`]. Stores the input and each layer's activated
/// output; activation derivatives and concatenated layer inputs are
/// reconstructed from these during the reverse pass.
pub struct Tape {
    input: ChannelStack,
    activated: Vec<ChannelStack>,
}

impl Tape {
    pub fn output(&self) -> &ChannelStack {
        self.activated.last().expect("tape from a validated net has layers")
    }
}

/// A layer's assembled input: borrowed straight from the main path when the
/// layer has no skips, materialized otherwise.
enum LayerInput<'a> {
    Borrowed(&'a ChannelStack),
    Owned(ChannelStack),
}

impl LayerInput<'_> {
    fn get(&self) -> &ChannelStack {
        match self {
            LayerInput::Borrowed(s) => s,
            LayerInput::Owned(s) => s,
        }
    }
}

impl NetHandle {
    pub fn from_parts(spec: NetSpec, params: Vec<f64>) -> Result<NetHandle> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, spec needs {}",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(NetHandle { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// FNV-1a over the parameter bytes; used by frozen-model guards.
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for byte in p.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }

    pub(crate) fn layer_slices(&self) -> Vec<LayerSlice> {
        let mut slices = Vec::with_capacity(self.spec.layers.len());
        let mut off = 0;
        for layer in &self.spec.layers {
            let n_w = layer.out_channels * layer.in_channels * layer.kernel * layer.kernel;
            let w = off;
            let b = off + n_w;
            off = b + layer.out_channels;
            slices.push(LayerSlice { w, b, end: off });
        }
        slices
    }

    fn check_input(&self, input: &ChannelStack) -> Result<()> {
        if input.channels() != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, spec expects {}",
                input.channels(),
                self.spec.input_channels
            )));
        }
        Ok(())
    }

    /// Assembles the concatenated input for layer `j`: main path first, then
    /// skip sources in declaration order. Borrows when the layer has no
    /// skips.
    fn assemble_input<'a>(
        &self,
        j: usize,
        input: &'a ChannelStack,
        activated: &'a [ChannelStack],
    ) -> LayerInput<'a> {
        let main: &ChannelStack = if j == 0 { input } else { &activated[j - 1] };
        let extra: Vec<&ChannelStack> = self
            .spec
            .skips_into(j)
            .map(|s| match s.from {
                SkipFrom::Input => input,
                SkipFrom::Layer(i) => &activated[i],
            })
            .collect();
        if extra.is_empty() {
            return LayerInput::Borrowed(main);
        }
        let (h, w) = (main.height(), main.width());
        let channels = main.channels() + extra.iter().map(|s| s.channels()).sum::<usize>();
        let mut data = Vec::with_capacity(channels * h * w);
        data.extend_from_slice(main.data());
        for s in extra {
            data.extend_from_slice(s.data());
        }
        LayerInput::Owned(
            ChannelStack::from_data(channels, h, w, data).expect("assembled sizes are consistent"),
        )
    }

    fn run_layers(&self, input: &ChannelStack) -> Result<Vec<ChannelStack>> {
        self.check_input(input)?;
        let slices = self.layer_slices();
        let mut activated: Vec<ChannelStack> = Vec::with_capacity(self.spec.layers.len());
        for (j, layer) in self.spec.layers.iter().enumerate() {
            let concat_in = self.assemble_input(j, input, &activated);
            let weights = &self.params[slices[j].w..slices[j].b];
            let biases = &self.params[slices[j].b..slices[j].end];
            let mut act =
                conv2d_forward(concat_in.get(), weights, biases, layer.kernel, layer.out_channels);
            for v in act.data_mut() {
                *v = layer.activation.apply(*v);
            }
            activated.push(act);
        }
        Ok(activated)
    }

    /// Runs the network. Spatial dimensions are preserved.
    pub fn forward(&self, input: &ChannelStack) -> Result<ChannelStack> {
        let mut activated = self.run_layers(input)?;
        Ok(activated.pop().expect("validated spec has layers"))
    }

    /// Runs the network, returning the output and the tape for [`backward`].
    ///
    /// [`backward`]: NetHandle::backward
    pub fn forward_cached(&self, input: &ChannelStack) -> Result<(ChannelStack, Tape)> {
        let activated = self.run_layers(input)?;
        let output = activated.last().expect("validated spec has layers").clone();
        let tape = Tape { input: input.clone(), activated };
        Ok((output, tape))
    }

    /// Exact reverse-mode pass. Given dLoss/dOutput, returns dLoss/dParams
    /// (flat, aligned with [`NetHandle::params`]) and dLoss/dInput.
    pub fn backward(
        &self,
        tape: &Tape,
        output_grad: &ChannelStack,
    ) -> Result<(Vec<f64>, ChannelStack)> {
        let last = tape.activated.last().expect("tape has layers");
        if output_grad.channels() != last.channels()
            || output_grad.height() != last.height()
            || output_grad.width() != last.width()
        {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}x{}, forward output was {}x{}x{}",
                output_grad.channels(),
                output_grad.height(),
                output_grad.width(),
                last.channels(),
                last.height(),
                last.width()
            )));
        }
        let slices = self.layer_slices();
        let n_layers = self.spec.layers.len();
        let mut param_grads = vec![0.0; self.params.len()];
        // Accumulated dLoss/d(activated output of layer j).
        let mut act_grads: Vec<Option<ChannelStack>> = vec![None; n_layers];
        act_grads[n_layers - 1] = Some(output_grad.clone());
        let mut input_grad = ChannelStack::zeros(
            self.spec.input_channels,
            tape.input.height(),
            tape.input.width(),
        );
        for j in (0..n_layers).rev() {
            let layer = &self.spec.layers[j];
            let mut dz = act_grads[j].take().unwrap_or_else(|| {
                ChannelStack::zeros(
                    layer.out_channels,
                    tape.activated[j].height(),
                    tape.activated[j].width(),
                )
            });
            {
                let act = tape.activated[j].data();
                let dz_data = dz.data_mut();
                for i in 0..dz_data.len() {
                    dz_data[i] *= layer.activation.derivative_from_output(act[i]);
                }
            }
            let concat_in = self.assemble_input(j, &tape.input, &tape.activated);
            let concat_in = concat_in.get();
            let (w_grads, b_grads) =
                conv2d_param_grads(concat_in, &dz, layer.kernel, layer.out_channels);
            param_grads[slices[j].w..slices[j].b].copy_from_slice(&w_grads);
            param_grads[slices[j].b..slices[j].end].copy_from_slice(&b_grads);
            let weights = &self.params[slices[j].w..slices[j].b];
            let d_concat = conv2d_input_grad(
                &dz,
                weights,
                layer.kernel,
                concat_in.channels(),
            );
            // Route concat channels back to their sources: main path first,
            // then skips in declaration order.
            let hw = d_concat.height() * d_concat.width();
            let mut offset = 0;
            let main_channels = if j == 0 {
                self.spec.input_channels
            } else {
                self.spec.layers[j - 1].out_channels
            };
            route_grad(&d_concat, offset, main_channels, hw, |seg| {
                if j == 0 {
                    add_into(input_grad.data_mut(), seg);
                } else {
                    let dst = act_grads[j - 1].get_or_insert_with(|| {
                        ChannelStack::zeros(main_channels, d_concat.height(), d_concat.width())
                    });
                    add_into(dst.data_mut(), seg);
                }
            });
            offset += main_channels;
            let skips: Vec<_> = self.spec.skips_into(j).copied().collect();
            for skip in skips {
                let width = match skip.from {
                    SkipFrom::Input => self.spec.input_channels,
                    SkipFrom::Layer(i) => self.spec.layers[i].out_channels,
                };
                route_grad(&d_concat, offset, width, hw, |seg| match skip.from {
                    SkipFrom::Input => add_into(input_grad.data_mut(), seg),
                    SkipFrom::Layer(i) => {
                        let dst = act_grads[i].get_or_insert_with(|| {
                            ChannelStack::zeros(width, d_concat.height(), d_concat.width())
                        });
                        add_into(dst.data_mut(), seg);
                    }
                });
                offset += width;
            }
        }
        Ok((param_grads, input_grad))
    }
}

fn route_grad(
    d_concat: &ChannelStack,
    offset: usize,
    channels: usize,
    hw: usize,
    mut sink: impl FnMut(&[f64]),
) {
    let start = offset * hw;
    let end = (offset + channels) * hw;
    sink(&d_concat.data()[start..end]);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Stride-1, same-padding convolution. Weight layout: `[out][in][ky][kx]`.
pub(crate) fn conv2d_forward(
    input: &ChannelStack,
    weights: &[f64],
    biases: &[f64],
    kernel: usize,
    out_channels: usize,
) -> ChannelStack {
    let ic = input.channels();
    let h = input.height();
    let w = input.width();
    let n = h * w;
    let pad = (kernel / 2) as isize;
    let mut out = vec![0.0; out_channels * n];
    for o in 0..out_channels {
        let out_o = &mut out[o * n..(o + 1) * n];
        out_o.fill(biases[o]);
        for i in 0..ic {
            let in_i = input.channel(i);
            let w_base = (o * ic + i) * kernel * kernel;
            if kernel == 3 {
                stencil3_accumulate(out_o, in_i, &weights[w_base..w_base + 9], h, w);
                continue;
            }
            for ky in 0..kernel {
                let dy = ky as isize - pad;
                for kx in 0..kernel {
                    let dx = kx as isize - pad;
                    let wv = weights[w_base + ky * kernel + kx];
                    accumulate_shifted(out_o, in_i, wv, h, w, dy, dx);
                }
            }
        }
    }
    ChannelStack::from_data(out_channels, h, w, out).expect("conv output sizes are consistent")
}

/// Fused single-pass 3x3 stencil: `out[y][x] += sum k[t] * src[y+dy][x+dx]`.
fn stencil3_accumulate(out: &mut [f64], src: &[f64], k: &[f64], h: usize, w: usize) {
    for y in 0..h {
        let out_row = &mut out[y * w..(y + 1) * w];
        for (kr, sy) in [(0usize, y.checked_sub(1)), (1, Some(y)), (2, (y + 1 < h).then_some(y + 1))]
        {
            let Some(sy) = sy else { continue };
            let row = &src[sy * w..(sy + 1) * w];
            let k0 = k[kr * 3];
            let k1 = k[kr * 3 + 1];
            let k2 = k[kr * 3 + 2];
            if w == 1 {
                out_row[0] += k1 * row[0];
                continue;
            }
            out_row[0] += k1 * row[0] + k2 * row[1];
            for x in 1..w - 1 {
                out_row[x] += k0 * row[x - 1] + k1 * row[x] + k2 * row[x + 1];
            }
            out_row[w - 1] += k0 * row[w - 2] + k1 * row[w - 1];
        }
    }
}

/// Fused 3x3 tap gradients: `g[t] = sum dz[y][x] * src[y+dy][x+dx]`.
fn stencil3_grads(dz: &[f64], src: &[f64], h: usize, w: usize) -> [f64; 9] {
    let mut g = [0.0; 9];
    for y in 0..h {
        let dz_row = &dz[y * w..(y + 1) * w];
        for (kr, sy) in [(0usize, y.checked_sub(1)), (1, Some(y)), (2, (y + 1 < h).then_some(y + 1))]
        {
            let Some(sy) = sy else { continue };
            let row = &src[sy * w..(sy + 1) * w];
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            if w == 1 {
                s1 = dz_row[0] * row[0];
            } else {
                s1 += dz_row[0] * row[0];
                s2 += dz_row[0] * row[1];
                for x in 1..w - 1 {
                    let d = dz_row[x];
                    s0 += d * row[x - 1];
                    s1 += d * row[x];
                    s2 += d * row[x + 1];
                }
                let d = dz_row[w - 1];
                s0 += d * row[w - 2];
                s1 += d * row[w - 1];
            }
            g[kr * 3] += s0;
            g[kr * 3 + 1] += s1;
            g[kr * 3 + 2] += s2;
        }
    }
    g
}

/// out[y][x] += wv * src[y+dy][x+dx] over the valid region.
#[inline]
fn accumulate_shifted(out: &mut [f64], src: &[f64], wv: f64, h: usize, w: usize, dy: isize, dx: isize) {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
    for y in y_lo..y_hi {
        let src_row = ((y as isize + dy) as usize) * w;
        let out_row = y * w;
        let s = &src[src_row + (x_lo as isize + dx) as usize..];
        let o = &mut out[out_row + x_lo..out_row + x_hi];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wv * sv;
        }
    }
}

/// sum over valid region of a[y][x] * b[y+dy][x+dx].
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
    let mut acc = 0.0;
    for y in y_lo..y_hi {
        let b_row = ((y as isize + dy) as usize) * w;
        let a_row = y * w;
        let av = &a[a_row + x_lo..a_row + x_hi];
        let bv = &b[b_row + (x_lo as isize + dx) as usize..];
        for (x, y) in av.iter().zip(bv) {
            acc += x * y;
        }
    }
    acc
}

/// Gradients of the convolution parameters given the pre-activation grads.
fn conv2d_param_grads(
    input: &ChannelStack,
    dz: &ChannelStack,
    kernel: usize,
    out_channels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ic = input.channels();
    let h = input.height();
    let w = input.width();
    let pad = (kernel / 2) as isize;
    let mut w_grads = vec![0.0; out_channels * ic * kernel * kernel];
    let mut b_grads = vec![0.0; out_channels];
    for o in 0..out_channels {
        let dz_o = dz.channel(o);
        b_grads[o] = dz_o.iter().sum();
        for i in 0..ic {
            let in_i = input.channel(i);
            let w_base = (o * ic + i) * kernel * kernel;
            if kernel == 3 {
                let g = stencil3_grads(dz_o, in_i, h, w);
                w_grads[w_base..w_base + 9].copy_from_slice(&g);
                continue;
            }
            for ky in 0..kernel {
                let dy = ky as isize - pad;
                for kx in 0..kernel {
                    let dx = kx as isize - pad;
                    w_grads[w_base + ky * kernel + kx] = dot_shifted(dz_o, in_i, h, w, dy, dx);
                }
            }
        }
    }
    (w_grads, b_grads)
}

/// Gradient with respect to the convolution input.
fn conv2d_input_grad(
    dz: &ChannelStack,
    weights: &[f64],
    kernel: usize,
    in_channels: usize,
) -> ChannelStack {
    let oc = dz.channels();
    let h = dz.height();
    let w = dz.width();
    let n = h * w;
    let pad = (kernel / 2) as isize;
    let mut din = vec![0.0; in_channels * n];
    for i in 0..in_channels {
        let din_i = &mut din[i * n..(i + 1) * n];
        for o in 0..oc {
            let dz_o = dz.channel(o);
            let w_base = (o * in_channels + i) * kernel * kernel;
            if kernel == 3 {
                // din[y'][x'] += w[t] * dz[y'-dy][x'-dx]: a stencil over dz
                // with the kernel rotated 180 degrees.
                let k = &weights[w_base..w_base + 9];
                let rot = [k[8], k[7], k[6], k[5], k[4], k[3], k[2], k[1], k[0]];
                stencil3_accumulate(din_i, dz_o, &rot, h, w);
                continue;
            }
            for ky in 0..kernel {
                let dy = ky as isize - pad;
                for kx in 0..kernel {
                    let dx = kx as isize - pad;
                    let wv = weights[w_base + ky * kernel + kx];
                    // din[y+dy][x+dx] += wv * dz[y][x]  ==  din[y'][x'] += wv * dz[y'-dy][x'-dx]
                    accumulate_shifted(din_i, dz_o, wv, h, w, -dy, -dx);
                }
            }
        }
    }
    ChannelStack::from_data(in_channels, h, w, din).expect("input grad sizes are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::spec::{Activation, NetSpec, SkipFrom};

    fn rand_stack(channels: usize, h: usize, w: usize, seed: u64) -> ChannelStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        ChannelStack::from_data(channels, h, w, data).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let spec = NetSpec::conv_stack(1, &[8, 8], 1, 3, Activation::Relu, Activation::Sigmoid);
        let a = build_net(&spec, 11).unwrap();
        let b = build_net(&spec, 11).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.param_count(), spec.param_count());
        let c = build_net(&spec, 12).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_weights_with_sigmoid_head_give_half() {
        let spec = NetSpec::conv_stack(1, &[4], 1, 3, Activation::Relu, Activation::Sigmoid);
        let mut net = build_net(&spec, 0).unwrap();
        net.params_mut().fill(0.0);
        let out = net.forward(&rand_stack(1, 16, 16, 1)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn output_shape_is_preserved() {
        let spec =
            NetSpec::conv_stack(2, &[8, 8], 3, 3, Activation::LeakyRelu, Activation::Sigmoid)
                .with_skip(SkipFrom::Input, 2);
        let net = build_net(&spec, 5).unwrap();
        let out = net.forward(&rand_stack(2, 24, 16, 2)).unwrap();
        assert_eq!((out.channels(), out.height(), out.width()), (3, 24, 16));
    }

    #[test]
    fn forward_rejects_channel_mismatch() {
        let spec = NetSpec::conv_stack(2, &[4], 1, 3, Activation::Relu, Activation::Sigmoid);
        let net = build_net(&spec, 0).unwrap();
        assert!(net.forward(&rand_stack(1, 8, 8, 0)).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        // One 3x3 layer, linear activation, kernel set to the unit impulse.
        let spec = NetSpec::conv_stack(1, &[], 1, 3, Activation::Linear, Activation::Linear);
        let mut net = build_net(&spec, 0).unwrap();
        net.params_mut().fill(0.0);
        net.params_mut()[4] = 1.0; // center tap of the 3x3 kernel
        let input = rand_stack(1, 12, 12, 3);
        let out = net.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn box_kernel_matches_direct_summation() {
        // Independent oracle: a literal shifted-neighborhood average with its
        // own bounds handling.
        let spec = NetSpec::conv_stack(1, &[], 1, 3, Activation::Linear, Activation::Linear);
        let mut net = build_net(&spec, 0).unwrap();
        for p in net.params_mut().iter_mut().take(9) {
            *p = 1.0 / 9.0;
        }
        net.params_mut()[9] = 0.25; // bias
        let input = rand_stack(1, 10, 14, 4);
        let out = net.forward(&input).unwrap();
        let (h, w) = (10usize, 14usize);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.25;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let yy = y as i32 + dy;
                        let xx = x as i32 + dx;
                        if yy >= 0 && yy < h as i32 && xx >= 0 && xx < w as i32 {
                            acc += input.data()[(yy as usize) * w + xx as usize] / 9.0;
                        }
                    }
                }
                let got = out.data()[y * w + x];
                assert!((got - acc).abs() < 1e-12, "({y},{x}): {got} vs {acc}");
            }
        }
    }

    /// Central finite differences on a scalar loss; the independent oracle
    /// for reverse-mode correctness.
    fn fd_check(spec: &NetSpec, seed: u64, n_params: usize, tol: f64) {
        let net = build_net(spec, seed).unwrap();
        let input = rand_stack(spec.input_channels, 12, 12, seed ^ 0xfeed);
        // Loss = sum of squared outputs / 2 so dL/dout = out.
        let loss = |net: &NetHandle, input: &ChannelStack| -> f64 {
            let out = net.forward(input).unwrap();
            out.data().iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let (out, tape) = net.forward_cached(&input).unwrap();
        let (pgrads, igrads) = net.backward(&tape, &out).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let eps = 1e-4;
        for _ in 0..n_params {
            let idx = rng.random_range(0..net.param_count());
            let mut plus = net.clone();
            plus.params_mut()[idx] += eps;
            let mut minus = net.clone();
            minus.params_mut()[idx] -= eps;
            let fd = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * eps);
            let an = pgrads[idx];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom <= tol,
                "param {idx}: fd {fd} vs reverse {an}"
            );
        }
        for _ in 0..n_params {
            let idx = rng.random_range(0..input.data().len());
            let mut plus = input.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= eps;
            let fd = (loss(&net, &plus) - loss(&net, &minus)) / (2.0 * eps);
            let an = igrads.data()[idx];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom <= tol,
                "input {idx}: fd {fd} vs reverse {an}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_plain() {
        let spec =
            NetSpec::conv_stack(2, &[6, 6], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        fd_check(&spec, 21, 20, 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences_with_skips() {
        let spec = NetSpec::conv_stack(2, &[5, 5, 5], 2, 3, Activation::Tanh, Activation::Sigmoid)
            .with_skip(SkipFrom::Input, 3)
            .with_skip(SkipFrom::Layer(0), 2);
        fd_check(&spec, 33, 20, 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences_relu() {
        let spec = NetSpec::conv_stack(1, &[8], 1, 5, Activation::Relu, Activation::Sigmoid);
        fd_check(&spec, 44, 20, 1e-3);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let spec = NetSpec::conv_stack(1, &[4], 1, 3, Activation::Relu, Activation::Sigmoid);
        let net = build_net(&spec, 7).unwrap();
        let input = rand_stack(1, 8, 8, 7);
        let (out, tape) = net.forward_cached(&input).unwrap();
        let zeros = ChannelStack::zeros(out.channels(), out.height(), out.width());
        let (pg, ig) = net.backward(&tape, &zeros).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn all_ones_grad_equals_sum_gradient() {
        // d(sum of outputs)/dparam computed by finite differences matches
        // backward with an all-ones output gradient.
        let spec = NetSpec::conv_stack(1, &[4], 1, 3, Activation::Tanh, Activation::Sigmoid);
        let net = build_net(&spec, 13).unwrap();
        let input = rand_stack(1, 8, 8, 31);
        let (_, tape) = net.forward_cached(&input).unwrap();
        let ones = ChannelStack::from_data(1, 8, 8, vec![1.0; 64]).unwrap();
        let (pg, _) = net.backward(&tape, &ones).unwrap();
        let eps = 1e-5;
        for idx in [0usize, 9, 20, net.param_count() - 1] {
            let mut plus = net.clone();
            plus.params_mut()[idx] += eps;
            let mut minus = net.clone();
            minus.params_mut()[idx] -= eps;
            let f = |n: &NetHandle| n.forward(&input).unwrap().data().iter().sum::<f64>();
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert!((fd - pg[idx]).abs() <= 1e-5 * fd.abs().max(1.0), "idx {idx}");
        }
    }

    #[test]
    fn sigmoid_head_keeps_output_in_unit_range() {
        let spec = NetSpec::conv_stack(1, &[8, 8], 1, 3, Activation::Relu, Activation::Sigmoid);
        for seed in 0..6 {
            let net = build_net(&spec, seed).unwrap();
            let out = net.forward(&rand_stack(1, 16, 16, seed + 100)).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = NetSpec::conv_stack(1, &[6], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        let net = build_net(&spec, 3).unwrap();
        let input = rand_stack(1, 16, 16, 9);
        let a = net.forward(&input).unwrap();
        let b = net.forward(&input).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
