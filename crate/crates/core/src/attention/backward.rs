//! Reverse-mode gradients for a single forward trace.

use serde::{Deserialize, Serialize};

use super::linalg::{dot, Matrix};
use super::network::{AttentionMode, ForwardTrace, LayerStack};
use crate::error::{ElaError, Result};

/// Parameter families of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamClass {
    Backbone,
    BackboneBias,
    Query,
    Key,
    Value,
    Lambda,
    Output,
    OutputBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub backbone: Matrix,
    pub backbone_bias: Vec<f64>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub lambda: Vec<f64>,
}

/// Same shape as the stack's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub output: Matrix,
    pub output_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(stack: &LayerStack) -> Self {
        let d = stack.geometry.dim;
        Gradients {
            layers: (0..stack.geometry.layers)
                .map(|_| LayerGrads {
                    backbone: Matrix::zeros(d, d),
                    backbone_bias: vec![0.0; d],
                    query: Matrix::zeros(d, d),
                    key: Matrix::zeros(d, d),
                    value: Matrix::zeros(d, d),
                    lambda: vec![0.0; d],
                })
                .collect(),
            output: Matrix::zeros(stack.geometry.classes, d),
            output_bias: vec![0.0; stack.geometry.classes],
        }
    }

    /// Flat views in the same order as [`LayerStack::param_slices_mut`].
    pub fn slices(&self) -> Vec<(ParamClass, usize, &[f64])> {
        let mut out = Vec::new();
        for (l, g) in self.layers.iter().enumerate() {
            out.push((ParamClass::Backbone, l + 1, g.backbone.data.as_slice()));
            out.push((ParamClass::BackboneBias, l + 1, g.backbone_bias.as_slice()));
            out.push((ParamClass::Query, l + 1, g.query.data.as_slice()));
            out.push((ParamClass::Key, l + 1, g.key.data.as_slice()));
            out.push((ParamClass::Value, l + 1, g.value.data.as_slice()));
            out.push((ParamClass::Lambda, l + 1, g.lambda.as_slice()));
        }
        out.push((ParamClass::Output, 0, self.output.data.as_slice()));
        out.push((ParamClass::OutputBias, 0, self.output_bias.as_slice()));
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in self.layers.iter_mut() {
            out.push(&mut g.backbone.data);
            out.push(&mut g.backbone_bias);
            out.push(&mut g.query.data);
            out.push(&mut g.key.data);
            out.push(&mut g.value.data);
            out.push(&mut g.lambda);
        }
        out.push(&mut self.output.data);
        out.push(&mut self.output_bias);
        out
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, (_, _, src)) in self.slices_mut().into_iter().zip(other.slices()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }
}

impl LayerStack {
    /// Mutable flat views of every parameter tensor, matching [`Gradients::slices`].
    /// Bumps the version, so earlier traces become stale.
    pub fn param_slices_mut(&mut self) -> Vec<(ParamClass, usize, &mut [f64])> {
        self.touch();
        let mut out: Vec<(ParamClass, usize, &mut [f64])> = Vec::new();
        for (l, p) in self.layers.iter_mut().enumerate() {
            out.push((ParamClass::Backbone, l + 1, &mut p.backbone.data));
            out.push((ParamClass::BackboneBias, l + 1, &mut p.backbone_bias));
            out.push((ParamClass::Query, l + 1, &mut p.query.data));
            out.push((ParamClass::Key, l + 1, &mut p.key.data));
            out.push((ParamClass::Value, l + 1, &mut p.value.data));
            out.push((ParamClass::Lambda, l + 1, &mut p.lambda));
        }
        out.push((ParamClass::Output, 0, &mut self.output.data));
        out.push((ParamClass::OutputBias, 0, &mut self.output_bias));
        out
    }

    /// Plain SGD step `θ −= lr · g`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for ((_, _, p), (_, _, g)) in self.param_slices_mut().into_iter().zip(grads.slices()) {
            for (w, gw) in p.iter_mut().zip(g) {
                *w -= lr * gw;
            }
        }
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = super::linalg::softmax(logits);
    let loss = -p[label].max(1e-300).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}

/// Gradients of `Σ upstream_i · logits_i` with respect to every parameter.
pub fn backward(stack: &LayerStack, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients> {
    if trace.stack_version != stack.version() || trace.mode != stack.mode {
        return Err(ElaError::Structural(
            "stale trace: the stack changed after this forward pass".into(),
        ));
    }
    let geo = stack.geometry;
    if upstream.len() != geo.classes {
        return Err(ElaError::Structural(format!(
            "upstream gradient has {} entries for {} classes",
            upstream.len(),
            geo.classes
        )));
    }
    let mut grads = Gradients::zeros_like(stack);
    let x_last = trace.inputs.last().expect("trace holds x^L");
    grads.output.add_outer(upstream, x_last);
    grads.output_bias.copy_from_slice(upstream);
    let g_x = stack.output.matvec_t(upstream);

    match trace.mode {
        AttentionMode::MrlaB | AttentionMode::Ela => softmax_backward(stack, trace, g_x, &mut grads),
        AttentionMode::MrlaL => linear_backward(stack, trace, g_x, &mut grads),
    }
    Ok(grads)
}

fn backbone_backward(stack: &LayerStack, trace: &ForwardTrace, l: usize, g_h: &[f64], grads: &mut Gradients) -> Vec<f64> {
    let h = &trace.features[l];
    let g_z: Vec<f64> = g_h.iter().zip(h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
    grads.layers[l].backbone.add_outer(&g_z, &trace.inputs[l]);
    for (b, g) in grads.layers[l].backbone_bias.iter_mut().zip(&g_z) {
        *b += g;
    }
    stack.layers[l].backbone.matvec_t(&g_z)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn softmax_backward(stack: &LayerStack, trace: &ForwardTrace, mut g_x: Vec<f64>, grads: &mut Gradients) {
    let geo = stack.geometry;
    let hd = geo.head_dim();
    let d = geo.dim;
    let scale = 1.0 / stack.softmax_scaling.sqrt();
    let mut g_keys = vec![vec![0.0; d]; geo.layers];
    let mut g_values = vec![vec![0.0; d]; geo.layers];
    // Query gradient owed to a layer whose query a later layer replayed.
    let mut g_replayed = vec![vec![0.0; d]; geo.layers];

    for l in (0..geo.layers).rev() {
        let mut g_h = g_x.clone();
        if trace.mask_bits[l] {
            let g_o = &g_x;
            let q = trace.queries[l].as_ref().expect("active layer has a query");
            let replay = stack.replay_source(l);
            let mut g_q = std::mem::take(&mut g_replayed[l]);
            g_q.resize(d, 0.0);
            let slots: Vec<usize> = (0..=l)
                .filter(|&i| trace.keys[i].is_some() && !(replay.is_some() && i == l))
                .collect();
            for head in 0..geo.heads {
                let r = head * hd..(head + 1) * hd;
                let w = &trace.distributions[l][head].weights;
                let g_w: Vec<f64> = slots
                    .iter()
                    .map(|&i| dot(&g_o[r.clone()], &trace.values[i].as_ref().expect("active")[r.clone()]))
                    .collect();
                let mean: f64 = slots.iter().zip(&g_w).map(|(&i, gw)| w[i] * gw).sum();
                for (&i, gw) in slots.iter().zip(&g_w) {
                    for (gv, go) in g_values[i][r.clone()].iter_mut().zip(&g_o[r.clone()]) {
                        *gv += w[i] * go;
                    }
                    let g_s = w[i] * (gw - mean) * scale;
                    if g_s == 0.0 {
                        continue;
                    }
                    let k = &trace.keys[i].as_ref().expect("active")[r.clone()];
                    for (gq, kv) in g_q[r.clone()].iter_mut().zip(k) {
                        *gq += g_s * kv;
                    }
                    for (gk, qv) in g_keys[i][r.clone()].iter_mut().zip(&q[r.clone()]) {
                        *gk += g_s * qv;
                    }
                }
            }
            if let Some(a) = replay {
                add_into(&mut g_replayed[a], &g_q);
                g_q = vec![0.0; d];
            }
            let h = &trace.features[l];
            let p = &stack.layers[l];
            let lg = &mut grads.layers[l];
            lg.query.add_outer(&g_q, h);
            lg.key.add_outer(&g_keys[l], h);
            lg.value.add_outer(&g_values[l], h);
            add_into(&mut g_h, &p.query.matvec_t(&g_q));
            add_into(&mut g_h, &p.key.matvec_t(&g_keys[l]));
            add_into(&mut g_h, &p.value.matvec_t(&g_values[l]));
        }
        g_x = backbone_backward(stack, trace, l, &g_h, grads);
    }
}

fn linear_backward(stack: &LayerStack, trace: &ForwardTrace, mut g_x: Vec<f64>, grads: &mut Gradients) {
    let geo = stack.geometry;
    let hd = geo.head_dim();
    let d = geo.dim;
    // Gradient reaching o^l through o^{l+1} = λ^{l+1} ⊙ o^l + …
    let mut carry = vec![0.0; d];
    for l in (0..geo.layers).rev() {
        let g_o: Vec<f64> = g_x.iter().zip(&carry).map(|(a, b)| a + b).collect();
        let p = &stack.layers[l];
        let prev_o = if l == 0 {
            vec![0.0; d]
        } else {
            trace.outputs[l - 1].clone().expect("recurrence keeps every output")
        };
        for ((gl, go), po) in grads.layers[l].lambda.iter_mut().zip(&g_o).zip(&prev_o) {
            *gl += go * po;
        }
        carry = p.lambda.iter().zip(&g_o).map(|(lam, go)| lam * go).collect();

        let q = trace.queries[l].as_ref().expect("query");
        let k = trace.keys[l].as_ref().expect("key");
        let v = trace.values[l].as_ref().expect("value");
        let mut g_q = vec![0.0; d];
        let mut g_k = vec![0.0; d];
        let mut g_v = vec![0.0; d];
        for head in 0..geo.heads {
            let r = head * hd..(head + 1) * hd;
            let c = dot(&q[r.clone()], &k[r.clone()]);
            let g_c = dot(&g_o[r.clone()], &v[r.clone()]);
            for j in r {
                g_v[j] = c * g_o[j];
                g_q[j] = g_c * k[j];
                g_k[j] = g_c * q[j];
            }
        }
        let h = &trace.features[l];
        let lg = &mut grads.layers[l];
        lg.query.add_outer(&g_q, h);
        lg.key.add_outer(&g_k, h);
        lg.value.add_outer(&g_v, h);
        let mut g_h = g_x.clone();
        add_into(&mut g_h, &p.query.matvec_t(&g_q));
        add_into(&mut g_h, &p.key.matvec_t(&g_k));
        add_into(&mut g_h, &p.value.matvec_t(&g_v));
        g_x = backbone_backward(stack, trace, l, &g_h, grads);
    }
}
