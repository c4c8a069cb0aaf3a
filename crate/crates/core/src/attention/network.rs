//! Layer stack and the three forward modes.
//!
//! Each layer applies a dense backbone `h = tanh(W x + b)`, projects `h` to a
//! query, key and value, and attends over the keys/values of earlier layers.
//! The attention output is added to the backbone output: `x = h + o`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, softmax, Matrix};
use crate::divergence::AttentionDistribution;
use crate::error::{ElaError, Result};
use crate::pruning::PruneMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Softmax attention over every earlier layer.
    MrlaB,
    /// Unnormalized linear recurrence `o^l = λ ⊙ o^{l−1} + (q·k) v`.
    MrlaL,
    /// Softmax attention restricted to the unmasked layers.
    Ela,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackGeometry {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub classes: usize,
}

impl StackGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.classes == 0 {
            return Err(ElaError::Config(format!("stack geometry must be positive: {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(ElaError::Config(format!(
                "head count {} does not divide feature dim {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub backbone: Matrix,
    pub backbone_bias: Vec<f64>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// λ_o, used by the linear recurrence only.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub geometry: StackGeometry,
    pub mode: AttentionMode,
    /// D_k; scores are multiplied by 1/√D_k.
    pub softmax_scaling: f64,
    pub layers: Vec<LayerParams>,
    pub output: Matrix,
    pub output_bias: Vec<f64>,
    mask: PruneMask,
    /// `(source, target)`: the target layer reuses the source layer's query
    /// and skips its own slot, replaying the source's retrieval.
    #[serde(default)]
    retrieval_tie: Option<(usize, usize)>,
    version: u64,
}

/// Query, key and value of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

/// Everything a forward pass produced for one input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: AttentionMode,
    pub stack_version: u64,
    pub mask_bits: Vec<bool>,
    /// `inputs[l]` is the input to layer `l + 1`; the last entry is x^L.
    pub inputs: Vec<Vec<f64>>,
    /// Backbone outputs h^l.
    pub features: Vec<Vec<f64>>,
    pub queries: Vec<Option<Vec<f64>>>,
    /// Cached K/V rows; `None` where the layer's retrieval is pruned.
    pub keys: Vec<Option<Vec<f64>>>,
    pub values: Vec<Option<Vec<f64>>>,
    /// Attention outputs o^l.
    pub outputs: Vec<Option<Vec<f64>>>,
    /// Per layer, one distribution per head (empty when pruned). Weights
    /// cover slots `1..=l`; pruned slots carry 0.
    pub distributions: Vec<Vec<AttentionDistribution>>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// Head-averaged distribution of 1-based layer `l`, if it retrieved.
    pub fn layer_distribution(&self, l: usize) -> Option<AttentionDistribution> {
        let heads = self.distributions.get(l.checked_sub(1)?)?;
        if heads.is_empty() {
            return None;
        }
        AttentionDistribution::head_average(heads).ok()
    }
}

impl LayerStack {
    /// Seeded stack: weights uniform in ±1/√d, λ_o all ones, all-ones mask.
    pub fn new(geometry: StackGeometry, mode: AttentionMode, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let d = geometry.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..geometry.layers)
            .map(|_| LayerParams {
                backbone: Matrix::uniform(d, d, bound, &mut rng),
                backbone_bias: Matrix::uniform(1, d, bound, &mut rng).data,
                query: Matrix::uniform(d, d, bound, &mut rng),
                key: Matrix::uniform(d, d, bound, &mut rng),
                value: Matrix::uniform(d, d, bound, &mut rng),
                lambda: vec![1.0; d],
            })
            .collect();
        let output = Matrix::uniform(geometry.classes, d, bound, &mut rng);
        let output_bias = vec![0.0; geometry.classes];
        Ok(LayerStack {
            geometry,
            mode,
            softmax_scaling: geometry.head_dim() as f64,
            layers,
            output,
            output_bias,
            mask: PruneMask::all_ones(geometry.layers),
            retrieval_tie: None,
            version: 0,
        })
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: PruneMask) -> Result<()> {
        mask.validate()?;
        if mask.len() != self.geometry.layers {
            return Err(ElaError::Structural(format!(
                "mask has {} bits for {} layers",
                mask.len(),
                self.geometry.layers
            )));
        }
        self.mask = mask;
        self.touch();
        Ok(())
    }

    pub fn set_mode(&mut self, mode: AttentionMode) {
        self.mode = mode;
        self.touch();
    }

    /// Makes layer `target` replay the retrieval of layer `source`: it queries
    /// with the source's query over the slots before `target`. Only applies
    /// while both layers are active, and only to softmax attention.
    pub fn tie_retrieval(&mut self, source: usize, target: usize) -> Result<()> {
        if source == 0 || source >= target || target > self.geometry.layers {
            return Err(ElaError::Config(format!(
                "cannot tie layer {target} to layer {source} in a {}-layer stack",
                self.geometry.layers
            )));
        }
        self.retrieval_tie = Some((source, target));
        self.touch();
        Ok(())
    }

    pub fn retrieval_tie(&self) -> Option<(usize, usize)> {
        self.retrieval_tie
    }

    /// 0-based source layer whose query 0-based layer `l` replays, if any.
    pub(crate) fn replay_source(&self, l: usize) -> Option<usize> {
        let (s, t) = self.retrieval_tie?;
        (t - 1 == l && self.mask.bits[s - 1] && self.mask.bits[t - 1]).then_some(s - 1)
    }

    /// Layer indices (1-based) whose retrieval is active.
    pub fn active_layers(&self) -> Vec<usize> {
        self.mask.active_layers()
    }

    /// Version counter; bumped on every parameter, mask or mode change.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks parameters as changed so older traces become stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// q, k, v of layer `l` (1-based) for feature `x`.
    pub fn project_qkv(&self, l: usize, x: &[f64]) -> Result<Qkv> {
        if l == 0 || l > self.geometry.layers {
            return Err(ElaError::Structural(format!(
                "layer {l} outside 1..={}",
                self.geometry.layers
            )));
        }
        if x.len() != self.geometry.dim {
            return Err(ElaError::Structural(format!(
                "feature has {} components, stack dim is {}",
                x.len(),
                self.geometry.dim
            )));
        }
        let p = &self.layers[l - 1];
        Ok(Qkv {
            q: p.query.matvec(x),
            k: p.key.matvec(x),
            v: p.value.matvec(x),
        })
    }

    /// Forward pass in the stack's own mode.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        match self.mode {
            AttentionMode::MrlaB if !self.mask.is_all_ones() => {
                Err(ElaError::Structural("MRLA-B runs without pruning; switch the stack to ELA".into()))
            }
            AttentionMode::MrlaB | AttentionMode::Ela => self.softmax_forward(x),
            AttentionMode::MrlaL => self.linear_forward(x),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.geometry.dim {
            return Err(ElaError::Structural(format!(
                "input has {} components, stack dim is {}",
                x.len(),
                self.geometry.dim
            )));
        }
        Ok(())
    }

    fn backbone(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let p = &self.layers[l];
        let mut z = p.backbone.matvec(x);
        for (zi, b) in z.iter_mut().zip(&p.backbone_bias) {
            *zi = (*zi + b).tanh();
        }
        z
    }

    fn empty_trace(&self, x: &[f64]) -> ForwardTrace {
        let n = self.geometry.layers;
        let mut inputs = Vec::with_capacity(n + 1);
        inputs.push(x.to_vec());
        ForwardTrace {
            mode: self.mode,
            stack_version: self.version,
            mask_bits: self.mask.bits.clone(),
            inputs,
            features: Vec::with_capacity(n),
            queries: Vec::with_capacity(n),
            keys: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            distributions: Vec::with_capacity(n),
            logits: Vec::new(),
        }
    }

    fn finish(&self, trace: &mut ForwardTrace) {
        let last = trace.inputs.last().expect("inputs always hold x^0");
        let mut logits = self.output.matvec(last);
        for (o, b) in logits.iter_mut().zip(&self.output_bias) {
            *o += b;
        }
        trace.logits = logits;
    }

    fn softmax_forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let g = self.geometry;
        let hd = g.head_dim();
        let scale = 1.0 / self.softmax_scaling.sqrt();
        let mut t = self.empty_trace(x);
        for l in 0..g.layers {
            let h = self.backbone(l, t.inputs.last().expect("nonempty"));
            if !self.mask.bits[l] {
                t.inputs.push(h.clone());
                t.features.push(h);
                t.queries.push(None);
                t.keys.push(None);
                t.values.push(None);
                t.outputs.push(None);
                t.distributions.push(Vec::new());
                continue;
            }
            let mut qkv = self.project_qkv(l + 1, &h)?;
            let replay = self.replay_source(l);
            if let Some(a) = replay {
                qkv.q = t.queries[a].clone().expect("replay source is active");
            }
            t.keys.push(Some(qkv.k));
            t.values.push(Some(qkv.v));
            let slots: Vec<usize> = (0..=l)
                .filter(|&i| t.keys[i].is_some() && !(replay.is_some() && i == l))
                .collect();
            let mut o = vec![0.0; g.dim];
            let mut heads = Vec::with_capacity(g.heads);
            for head in 0..g.heads {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = slots
                    .iter()
                    .map(|&i| scale * dot(&qkv.q[r.clone()], &t.keys[i].as_ref().expect("active")[r.clone()]))
                    .collect();
                let w = softmax(&scores);
                let mut full = vec![0.0; l + 1];
                for (&i, &wi) in slots.iter().zip(&w) {
                    full[i] = wi;
                    let v = &t.values[i].as_ref().expect("active")[r.clone()];
                    for (oj, vj) in o[r.clone()].iter_mut().zip(v) {
                        *oj += wi * vj;
                    }
                }
                heads.push(AttentionDistribution {
                    layer_index: l + 1,
                    head_index: head,
                    weights: full,
                });
            }
            let next: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
            t.inputs.push(next);
            t.features.push(h);
            t.queries.push(Some(qkv.q));
            t.outputs.push(Some(o));
            t.distributions.push(heads);
        }
        self.finish(&mut t);
        Ok(t)
    }

    fn linear_forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        if !self.mask.is_all_ones() {
            return Err(ElaError::Structural("the linear recurrence does not support pruned layers".into()));
        }
        let g = self.geometry;
        let hd = g.head_dim();
        let mut t = self.empty_trace(x);
        let mut prev_o = vec![0.0; g.dim];
        // Per earlier slot: Π λ over the layers after it, and q·k per head.
        let mut lam_prod: Vec<Vec<f64>> = Vec::with_capacity(g.layers);
        let mut self_scores: Vec<Vec<f64>> = Vec::with_capacity(g.layers);
        for l in 0..g.layers {
            let p = &self.layers[l];
            let h = self.backbone(l, t.inputs.last().expect("nonempty"));
            let qkv = self.project_qkv(l + 1, &h)?;
            let mut o: Vec<f64> = p.lambda.iter().zip(&prev_o).map(|(a, b)| a * b).collect();
            let mut coeffs = Vec::with_capacity(g.heads);
            for head in 0..g.heads {
                let r = head * hd..(head + 1) * hd;
                let c = dot(&qkv.q[r.clone()], &qkv.k[r.clone()]);
                coeffs.push(c);
                for (oj, vj) in o[r.clone()].iter_mut().zip(&qkv.v[r]) {
                    *oj += c * vj;
                }
            }
            for prod in lam_prod.iter_mut() {
                for (pj, lj) in prod.iter_mut().zip(&p.lambda) {
                    *pj *= lj;
                }
            }
            lam_prod.push(vec![1.0; g.dim]);
            self_scores.push(coeffs);

            let heads = (0..g.heads)
                .map(|head| {
                    let r = head * hd..(head + 1) * hd;
                    let mags: Vec<f64> = (0..=l)
                        .map(|i| {
                            let lam = lam_prod[i][r.clone()].iter().map(|v| v.abs()).sum::<f64>() / hd as f64;
                            self_scores[i][head].abs() * lam
                        })
                        .collect();
                    let total: f64 = mags.iter().sum();
                    let weights = if total > 0.0 && total.is_finite() {
                        mags.iter().map(|m| m / total).collect()
                    } else {
                        vec![1.0 / (l + 1) as f64; l + 1]
                    };
                    AttentionDistribution {
                        layer_index: l + 1,
                        head_index: head,
                        weights,
                    }
                })
                .collect();

            let next: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
            t.inputs.push(next);
            t.features.push(h);
            t.queries.push(Some(qkv.q));
            t.keys.push(Some(qkv.k));
            t.values.push(Some(qkv.v));
            t.outputs.push(Some(o.clone()));
            t.distributions.push(heads);
            prev_o = o;
        }
        self.finish(&mut t);
        Ok(t)
    }
}

/// Full softmax attention; the stack must be in MRLA-B mode with no pruning.
pub fn mrla_b_forward(stack: &LayerStack, x: &[f64]) -> Result<ForwardTrace> {
    if stack.mode != AttentionMode::MrlaB {
        return Err(ElaError::Structural(format!("expected MRLA-B mode, stack is {:?}", stack.mode)));
    }
    if !stack.mask.is_all_ones() {
        return Err(ElaError::Structural("MRLA-B runs without pruning".into()));
    }
    stack.softmax_forward(x)
}

/// Linear recurrence; the stack must be in MRLA-L mode.
pub fn mrla_l_forward(stack: &LayerStack, x: &[f64]) -> Result<ForwardTrace> {
    if stack.mode != AttentionMode::MrlaL {
        return Err(ElaError::Structural(format!("expected MRLA-L mode, stack is {:?}", stack.mode)));
    }
    stack.linear_forward(x)
}

/// Masked softmax attention; the stack must be in ELA mode.
pub fn ela_forward(stack: &LayerStack, x: &[f64]) -> Result<ForwardTrace> {
    if stack.mode != AttentionMode::Ela {
        return Err(ElaError::Structural(format!("expected ELA mode, stack is {:?}", stack.mode)));
    }
    stack.softmax_forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(layers: usize, dim: usize, heads: usize) -> StackGeometry {
        StackGeometry {
            layers,
            dim,
            heads,
            classes: 3,
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(geom(0, 4, 1).validate().is_err());
        assert!(geom(2, 6, 4).validate().is_err());
        assert!(geom(2, 8, 4).validate().is_ok());
    }

    #[test]
    fn identity_projections() {
        let mut s = LayerStack::new(geom(1, 2, 1), AttentionMode::MrlaB, 1).unwrap();
        s.layers[0].query = Matrix::identity(2);
        s.layers[0].key = Matrix::identity(2);
        s.layers[0].value = Matrix::identity(2);
        let qkv = s.project_qkv(1, &[1.0, 0.0]).unwrap();
        assert_eq!(qkv.q, vec![1.0, 0.0]);
        assert_eq!(qkv.k, vec![1.0, 0.0]);
        assert_eq!(qkv.v, vec![1.0, 0.0]);

        s.layers[0].query = Matrix::zeros(2, 2);
        assert_eq!(s.project_qkv(1, &[0.3, 0.7]).unwrap().q, vec![0.0, 0.0]);
        assert!(s.project_qkv(2, &[0.0, 0.0]).is_err());
        assert!(s.project_qkv(1, &[0.0]).is_err());
    }

    #[test]
    fn single_layer_output_is_its_value() {
        let s = LayerStack::new(geom(1, 4, 2), AttentionMode::MrlaB, 3).unwrap();
        let t = mrla_b_forward(&s, &[0.1, -0.2, 0.3, 0.4]).unwrap();
        let v = t.values[0].as_ref().unwrap();
        assert_eq!(t.outputs[0].as_ref().unwrap(), v);
        assert_eq!(t.distributions[0][0].weights, vec![1.0]);
    }

    #[test]
    fn symmetric_scores_give_uniform_weights() {
        let mut s = LayerStack::new(geom(2, 2, 1), AttentionMode::MrlaB, 4).unwrap();
        // Zero query: every score is 0.
        s.layers[1].query = Matrix::zeros(2, 2);
        let t = mrla_b_forward(&s, &[0.5, -0.5]).unwrap();
        assert_eq!(t.distributions[1][0].weights, vec![0.5, 0.5]);
    }

    #[test]
    fn mode_preconditions() {
        let mut s = LayerStack::new(geom(2, 4, 1), AttentionMode::Ela, 0).unwrap();
        assert!(mrla_b_forward(&s, &[0.0; 4]).is_err());
        assert!(mrla_l_forward(&s, &[0.0; 4]).is_err());
        s.set_mask(PruneMask::from_bits(vec![true, false]).unwrap()).unwrap();
        s.set_mode(AttentionMode::MrlaB);
        assert!(mrla_b_forward(&s, &[0.0; 4]).is_err());
    }

    #[test]
    fn pruned_layer_passes_backbone_through() {
        let mut s = LayerStack::new(geom(2, 4, 2), AttentionMode::Ela, 9).unwrap();
        s.set_mask(PruneMask::from_bits(vec![true, false]).unwrap()).unwrap();
        let t = ela_forward(&s, &[0.2, 0.1, -0.4, 0.3]).unwrap();
        assert!(t.outputs[1].is_none());
        assert!(t.distributions[1].is_empty());
        assert_eq!(t.inputs[2], s.backbone(1, &t.inputs[1]));
    }

    #[test]
    fn linear_recurrence_with_zero_lambda_is_self_term() {
        let mut s = LayerStack::new(geom(3, 4, 1), AttentionMode::MrlaL, 5).unwrap();
        for p in &mut s.layers {
            p.lambda = vec![0.0; 4];
        }
        let t = mrla_l_forward(&s, &[0.3, 0.1, -0.2, 0.5]).unwrap();
        for l in 0..3 {
            let q = t.queries[l].as_ref().unwrap();
            let k = t.keys[l].as_ref().unwrap();
            let v = t.values[l].as_ref().unwrap();
            let c = dot(q, k);
            for (o, vj) in t.outputs[l].as_ref().unwrap().iter().zip(v) {
                assert!((o - c * vj).abs() < 1e-15);
            }
            // All mass sits on the layer's own slot.
            assert_eq!(*t.distributions[l][0].weights.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn traces_carry_valid_distributions() {
        for mode in [AttentionMode::MrlaB, AttentionMode::MrlaL] {
            let s = LayerStack::new(geom(4, 8, 2), mode, 11).unwrap();
            let t = s.forward(&[0.1; 8]).unwrap();
            for (l, heads) in t.distributions.iter().enumerate() {
                assert_eq!(heads.len(), 2);
                for d in heads {
                    assert_eq!(d.weights.len(), l + 1);
                    assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
