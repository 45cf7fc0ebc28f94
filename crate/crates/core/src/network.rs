//! Per-pixel update networks with cross-view max-pooling.
//!
//! Every iteration has its own [`IterationNet`]. A net maps, independently
//! at each MPI pixel, `K` per-view input vectors to one output vector:
//!
//! ```text
//! per view:  f_k = encoder(x_k)
//! stage s:   m = max_k f_k;  f_k = stage_s([f_k, m])
//! joint:     j = joint(max_k f_k);  out = head(j)
//! ```
//!
//! All hidden layers use the Elu activation; the head is linear. The only
//! interaction between views is the element-wise maximum, so the output is
//! invariant to view order and to duplicated views.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::channel;

pub const WEIGHTS_FORMAT: &str = "mpi-lgd-weights";
pub const WEIGHTS_VERSION: u32 = 1;

/// Inputs of the initialization net: input PSV colour plus validity mask.
pub const INIT_INPUTS: usize = 4;

/// Inputs of an update net: RGBA, extra channels, gradient components, mask.
pub fn update_inputs(extra_channels: usize) -> usize {
    4 + extra_channels + channel::WITH_MASK
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Elu derivative expressed through its output.
#[inline]
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Affine per-pixel layer, `rows` outputs by `cols` inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            matrix: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Uniform init with variance `1 / cols`, zero bias.
    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (3.0 / cols as f64).sqrt();
        Self {
            rows,
            cols,
            matrix: (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; rows],
        }
    }

    pub fn param_count(&self) -> usize {
        self.matrix.len() + self.bias.len()
    }

    fn check(&self) -> Result<()> {
        if self.matrix.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::WeightShape(format!(
                "layer {}x{} has {} weights and {} biases",
                self.rows,
                self.cols,
                self.matrix.len(),
                self.bias.len()
            )));
        }
        if !self.matrix.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(())
    }

    /// `out[p] = act(W x[p] + b)` for `pixels` rows of `x`.
    fn forward(&self, x: &[f64], pixels: usize, activate: bool) -> Vec<f64> {
        let mut out = vec![0.0; pixels * self.rows];
        for p in 0..pixels {
            let xp = &x[p * self.cols..(p + 1) * self.cols];
            let op = &mut out[p * self.rows..(p + 1) * self.rows];
            for (o, (row, b)) in op
                .iter_mut()
                .zip(self.matrix.chunks_exact(self.cols).zip(&self.bias))
            {
                let z = b + row.iter().zip(xp).map(|(w, v)| w * v).sum::<f64>();
                *o = if activate { elu(z) } else { z };
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input. `g_out` is taken after the activation
    /// derivative has been applied.
    fn backward(
        &self,
        x: &[f64],
        g_out: &[f64],
        pixels: usize,
        grad: &mut Layer,
        want_input: bool,
    ) -> Vec<f64> {
        let mut g_in = if want_input {
            vec![0.0; pixels * self.cols]
        } else {
            Vec::new()
        };
        for p in 0..pixels {
            let xp = &x[p * self.cols..(p + 1) * self.cols];
            let gp = &g_out[p * self.rows..(p + 1) * self.rows];
            for (o, &g) in gp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let grow = &mut grad.matrix[o * self.cols..(o + 1) * self.cols];
                for (gw, v) in grow.iter_mut().zip(xp) {
                    *gw += g * v;
                }
                if want_input {
                    let row = &self.matrix[o * self.cols..(o + 1) * self.cols];
                    let gi = &mut g_in[p * self.cols..(p + 1) * self.cols];
                    for (a, w) in gi.iter_mut().zip(row) {
                        *a += g * w;
                    }
                }
            }
        }
        g_in
    }
}

/// Widths of one iteration net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub hidden: usize,
    pub encoder_layers: usize,
    /// Pool-then-per-view stages before the final pool.
    pub stages: usize,
    pub stage_layers: usize,
    pub joint_layers: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            hidden: 32,
            encoder_layers: 2,
            stages: 1,
            stage_layers: 1,
            joint_layers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationNet {
    pub encoder: Vec<Layer>,
    pub stages: Vec<Vec<Layer>>,
    pub joint: Vec<Layer>,
    pub head: Layer,
}

/// Activations retained for the backward pass of one forward call.
#[derive(Clone, Debug, Default)]
pub struct NetCache {
    pixels: usize,
    /// Per view: input followed by every per-view layer output.
    view_acts: Vec<Vec<Vec<f64>>>,
    /// Per pool (stages then final): pooled values and argmax view.
    pools: Vec<(Vec<f64>, Vec<u32>)>,
    /// Pooled input followed by every joint layer output.
    joint_acts: Vec<Vec<f64>>,
}

impl NetCache {
    pub fn bytes(&self) -> usize {
        let floats: usize = self
            .view_acts
            .iter()
            .flatten()
            .map(Vec::len)
            .chain(self.pools.iter().map(|(v, _)| v.len() * 3 / 2))
            .chain(self.joint_acts.iter().map(Vec::len))
            .sum();
        floats * 8
    }
}

fn max_pool(features: &[&[f64]]) -> (Vec<f64>, Vec<u32>) {
    let mut pooled = features[0].to_vec();
    let mut arg = vec![0u32; pooled.len()];
    for (k, f) in features.iter().enumerate().skip(1) {
        for ((m, a), &v) in pooled.iter_mut().zip(arg.iter_mut()).zip(f.iter()) {
            if v > *m {
                *m = v;
                *a = k as u32;
            }
        }
    }
    (pooled, arg)
}

fn concat_rows(a: &[f64], b: &[f64], pixels: usize) -> Vec<f64> {
    let (wa, wb) = (a.len() / pixels, b.len() / pixels);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for p in 0..pixels {
        out.extend_from_slice(&a[p * wa..(p + 1) * wa]);
        out.extend_from_slice(&b[p * wb..(p + 1) * wb]);
    }
    out
}

fn apply_elu_grad(g: &mut [f64], y: &[f64]) {
    for (gv, &yv) in g.iter_mut().zip(y) {
        *gv *= elu_grad_from_output(yv);
    }
}

impl IterationNet {
    pub fn random(
        inputs: usize,
        outputs: usize,
        shape: &NetworkShape,
        zero_head: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let h = shape.hidden;
        let mut width = inputs;
        let mut encoder = Vec::new();
        for _ in 0..shape.encoder_layers.max(1) {
            encoder.push(Layer::random(h, width, rng));
            width = h;
        }
        let stages = (0..shape.stages)
            .map(|_| {
                (0..shape.stage_layers.max(1))
                    .enumerate()
                    .map(|(i, _)| Layer::random(h, if i == 0 { 2 * h } else { h }, rng))
                    .collect()
            })
            .collect();
        let joint = (0..shape.joint_layers).map(|_| Layer::random(h, h, rng)).collect();
        let head = if zero_head {
            Layer::zeros(outputs, h)
        } else {
            Layer::random(outputs, h, rng)
        };
        Self {
            encoder,
            stages,
            joint,
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Layer| Layer::zeros(l.rows, l.cols);
        Self {
            encoder: self.encoder.iter().map(z).collect(),
            stages: self.stages.iter().map(|s| s.iter().map(z).collect()).collect(),
            joint: self.joint.iter().map(z).collect(),
            head: z(&self.head),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.encoder[0].cols
    }

    pub fn output_channels(&self) -> usize {
        self.head.rows
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder
            .iter()
            .chain(self.stages.iter().flatten())
            .chain(&self.joint)
            .chain(std::iter::once(&self.head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder
            .iter_mut()
            .chain(self.stages.iter_mut().flatten())
            .chain(self.joint.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// Checks that layer widths chain correctly.
    pub fn validate(&self, inputs: usize, outputs: usize) -> Result<()> {
        for l in self.layers() {
            l.check()?;
        }
        let err = |m: String| Err(Error::WeightShape(m));
        if self.encoder.is_empty() {
            return err("encoder has no layers".into());
        }
        if self.encoder[0].cols != inputs {
            return err(format!(
                "encoder expects {} inputs, found {}",
                inputs, self.encoder[0].cols
            ));
        }
        let mut width = self.encoder[0].rows;
        for l in &self.encoder[1..] {
            if l.cols != width {
                return err(format!("encoder layer expects {} inputs, have {width}", l.cols));
            }
            width = l.rows;
        }
        for stage in &self.stages {
            if stage.is_empty() {
                return err("empty stage".into());
            }
            if stage[0].cols != 2 * width {
                return err(format!("stage expects {} inputs, have {}", stage[0].cols, 2 * width));
            }
            width = stage[0].rows;
            for l in &stage[1..] {
                if l.cols != width {
                    return err(format!("stage layer expects {} inputs, have {width}", l.cols));
                }
                width = l.rows;
            }
        }
        for l in &self.joint {
            if l.cols != width {
                return err(format!("joint layer expects {} inputs, have {width}", l.cols));
            }
            width = l.rows;
        }
        if self.head.cols != width || self.head.rows != outputs {
            return err(format!(
                "head is {}x{}, expected {outputs}x{width}",
                self.head.rows, self.head.cols
            ));
        }
        Ok(())
    }

    /// Evaluates the net on `pixels` positions; `inputs[k]` holds view `k`.
    pub fn forward(&self, inputs: Vec<Vec<f64>>, pixels: usize) -> (Vec<f64>, NetCache) {
        assert!(!inputs.is_empty(), "at least one view");
        let mut view_acts: Vec<Vec<Vec<f64>>> = inputs.into_iter().map(|x| vec![x]).collect();
        for layer in &self.encoder {
            for acts in &mut view_acts {
                let y = layer.forward(acts.last().unwrap(), pixels, true);
                acts.push(y);
            }
        }
        let mut pools = Vec::with_capacity(self.stages.len() + 1);
        for stage in &self.stages {
            let (pooled, arg) = {
                let feats: Vec<&[f64]> = view_acts.iter().map(|a| a.last().unwrap().as_slice()).collect();
                max_pool(&feats)
            };
            for acts in &mut view_acts {
                let joined = concat_rows(acts.last().unwrap(), &pooled, pixels);
                acts.push(joined);
                for layer in stage {
                    let y = layer.forward(acts.last().unwrap(), pixels, true);
                    acts.push(y);
                }
            }
            pools.push((pooled, arg));
        }
        let (pooled, arg) = {
            let feats: Vec<&[f64]> = view_acts.iter().map(|a| a.last().unwrap().as_slice()).collect();
            max_pool(&feats)
        };
        let mut joint_acts = vec![pooled.clone()];
        pools.push((pooled, arg));
        for layer in &self.joint {
            let y = layer.forward(joint_acts.last().unwrap(), pixels, true);
            joint_acts.push(y);
        }
        let out = self.head.forward(joint_acts.last().unwrap(), pixels, false);
        (
            out,
            NetCache {
                pixels,
                view_acts,
                pools,
                joint_acts,
            },
        )
    }

    /// Back-propagates `grad_out`, accumulating parameter gradients into
    /// `grads`. Returns per-view input gradients when `want_inputs`.
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_out: &[f64],
        grads: &mut IterationNet,
        want_inputs: bool,
    ) -> Vec<Vec<f64>> {
        let pixels = cache.pixels;
        let views = cache.view_acts.len();
        let jl = self.joint.len();
        let mut g = self.head.backward(
            &cache.joint_acts[jl],
            grad_out,
            pixels,
            &mut grads.head,
            true,
        );
        for (i, layer) in self.joint.iter().enumerate().rev() {
            apply_elu_grad(&mut g, &cache.joint_acts[i + 1]);
            g = layer.backward(&cache.joint_acts[i], &g, pixels, &mut grads.joint[i], true);
        }
        // Final pool routes the gradient to the arg-max view.
        let (_, arg) = cache.pools.last().unwrap();
        let width = g.len() / pixels;
        let mut g_views: Vec<Vec<f64>> = vec![vec![0.0; pixels * width]; views];
        for (i, (&gv, &k)) in g.iter().zip(arg).enumerate() {
            g_views[k as usize][i] += gv;
        }

        let enc = self.encoder.len();
        // Index into view_acts of the output of each stage.
        let mut stage_offsets = Vec::with_capacity(self.stages.len());
        let mut idx = enc;
        for stage in &self.stages {
            stage_offsets.push(idx);
            idx += 1 + stage.len();
        }
        for (s, stage) in self.stages.iter().enumerate().rev() {
            let base = stage_offsets[s];
            let mut g_pooled = vec![0.0; cache.pools[s].0.len()];
            let prev_width = cache.view_acts[0][base].len() / pixels;
            for (k, acts) in cache.view_acts.iter().enumerate() {
                let mut gk = std::mem::take(&mut g_views[k]);
                for (li, layer) in stage.iter().enumerate().rev() {
                    apply_elu_grad(&mut gk, &acts[base + 2 + li]);
                    gk = layer.backward(
                        &acts[base + 1 + li],
                        &gk,
                        pixels,
                        &mut grads.stages[s][li],
                        true,
                    );
                }
                // Split the concatenation [f_k, m].
                let mut g_f = vec![0.0; pixels * prev_width];
                for p in 0..pixels {
                    let row = &gk[p * 2 * prev_width..(p + 1) * 2 * prev_width];
                    g_f[p * prev_width..(p + 1) * prev_width].copy_from_slice(&row[..prev_width]);
                    for (a, b) in g_pooled[p * prev_width..(p + 1) * prev_width]
                        .iter_mut()
                        .zip(&row[prev_width..])
                    {
                        *a += b;
                    }
                }
                g_views[k] = g_f;
            }
            let (_, arg) = &cache.pools[s];
            for (i, (&gv, &k)) in g_pooled.iter().zip(arg).enumerate() {
                g_views[k as usize][i] += gv;
            }
        }

        let mut input_grads = Vec::new();
        for (k, acts) in cache.view_acts.iter().enumerate() {
            let mut gk = std::mem::take(&mut g_views[k]);
            for (li, layer) in self.encoder.iter().enumerate().rev() {
                apply_elu_grad(&mut gk, &acts[li + 1]);
                let need = want_inputs || li > 0;
                gk = layer.backward(&acts[li], &gk, pixels, &mut grads.encoder[li], need);
            }
            if want_inputs {
                input_grads.push(gk);
            }
        }
        input_grads
    }
}

/// Weights of the whole unrolled solver: iteration 0 is the initialization net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateNetwork {
    pub extra_channels: usize,
    pub iterations: Vec<IterationNet>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: UpdateNetwork,
}

impl UpdateNetwork {
    /// Random weights for `iterations` nets. Update heads start at zero when
    /// `zero_update_heads`, so each update begins as the identity.
    pub fn random(
        iterations: usize,
        extra_channels: usize,
        shape: &NetworkShape,
        zero_update_heads: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let out = 4 + extra_channels;
        let nets = (0..iterations)
            .map(|n| {
                if n == 0 {
                    IterationNet::random(INIT_INPUTS, out, shape, false, rng)
                } else {
                    IterationNet::random(update_inputs(extra_channels), out, shape, zero_update_heads, rng)
                }
            })
            .collect();
        Self {
            extra_channels,
            iterations: nets,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extra_channels: self.extra_channels,
            iterations: self.iterations.iter().map(IterationNet::zeros_like).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.iterations.iter().map(IterationNet::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() {
            return Err(Error::WeightShape("no iteration nets".into()));
        }
        let out = 4 + self.extra_channels;
        for (n, net) in self.iterations.iter().enumerate() {
            let inputs = if n == 0 {
                INIT_INPUTS
            } else {
                update_inputs(self.extra_channels)
            };
            net.validate(inputs, out)
                .map_err(|e| Error::WeightShape(format!("iteration {n}: {e}")))?;
        }
        Ok(())
    }

    /// All parameters in a fixed traversal order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in &self.iterations {
            for l in net.layers() {
                out.extend_from_slice(&l.matrix);
                out.extend_from_slice(&l.bias);
            }
        }
        out
    }

    pub fn load_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::WeightShape(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for net in &mut self.iterations {
            for l in net.layers_mut() {
                let m = l.matrix.len();
                l.matrix.copy_from_slice(&params[at..at + m]);
                at += m;
                let b = l.bias.len();
                l.bias.copy_from_slice(&params[at..at + b]);
                at += b;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WeightFile {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            network: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: WeightFile = serde_json::from_str(s)?;
        if file.format != WEIGHTS_FORMAT {
            return Err(Error::Format(format!("unknown weight format {:?}", file.format)));
        }
        if file.version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported weight version {}", file.version)));
        }
        file.network.validate()?;
        Ok(file.network)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(inputs: usize, rng: &mut ChaCha8Rng) -> IterationNet {
        let shape = NetworkShape {
            hidden: 5,
            encoder_layers: 2,
            stages: 1,
            stage_layers: 2,
            joint_layers: 1,
        };
        IterationNet::random(inputs, 3, &shape, false, rng)
    }

    fn random_inputs(views: usize, pixels: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..views)
            .map(|_| (0..pixels * width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn view_order_and_duplicates_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = small_net(4, &mut rng);
        let x = random_inputs(3, 6, 4, &mut rng);
        let (a, _) = net.forward(x.clone(), 6);
        let permuted = vec![x[2].clone(), x[0].clone(), x[1].clone()];
        let (b, _) = net.forward(permuted, 6);
        assert_eq!(a, b);
        let mut dup = x.clone();
        dup.push(x[1].clone());
        let (c, _) = net.forward(dup, 6);
        assert_eq!(a, c);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = small_net(4, &mut rng);
        let pixels = 3;
        let x = random_inputs(2, pixels, 4, &mut rng);
        let w: Vec<f64> = (0..pixels * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |n: &IterationNet, x: &Vec<Vec<f64>>| -> f64 {
            let (out, _) = n.forward(x.clone(), pixels);
            out.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward(x.clone(), pixels);
        let mut grads = net.zeros_like();
        let g_in = net.backward(&cache, &w, &mut grads, true);

        let wrap = |n: IterationNet| UpdateNetwork {
            extra_channels: 0,
            iterations: vec![n],
        };
        let flat = wrap(net.clone()).flatten();
        let analytic = wrap(grads).flatten();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut up = wrap(net.clone());
            let mut p = flat.clone();
            p[i] += h;
            up.load_flat(&p).unwrap();
            let mut down = wrap(net.clone());
            p[i] -= 2.0 * h;
            down.load_flat(&p).unwrap();
            let fd = (objective(&up.iterations[0], &x) - objective(&down.iterations[0], &x)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", analytic[i]);
        }
        for k in 0..2 {
            for i in 0..x[k].len() {
                let mut xu = x.clone();
                xu[k][i] += h;
                let mut xd = x.clone();
                xd[k][i] -= h;
                let fd = (objective(&net, &xu) - objective(&net, &xd)) / (2.0 * h);
                assert!((fd - g_in[k][i]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn weight_file_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = UpdateNetwork::random(2, 4, &NetworkShape::default(), true, &mut rng);
        net.validate().unwrap();
        let json = net.to_json().unwrap();
        assert!(json.contains("\"version\":1"));
        let back = UpdateNetwork::from_json(&json).unwrap();
        assert_eq!(back, net);
        let mut broken = net.clone();
        broken.iterations[1].head.rows = 3;
        assert!(broken.validate().is_err());
        assert!(UpdateNetwork::from_json(&json.replace(WEIGHTS_FORMAT, "other")).is_err());
    }

    #[test]
    fn zero_heads_make_updates_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = UpdateNetwork::random(2, 2, &NetworkShape::default(), true, &mut rng);
        let x = random_inputs(2, 4, update_inputs(2), &mut rng);
        let (out, _) = net.iterations[1].forward(x, 4);
        assert!(out.iter().all(|v| *v == 0.0));
    }
}
