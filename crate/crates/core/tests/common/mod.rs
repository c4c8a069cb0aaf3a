//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use ela_core::attention::{LayerStack, ParamClass};

/// I_x(a, b) for integer a, b via the binomial sum
/// Σ_{j=a}^{a+b−1} C(a+b−1, j) x^j (1−x)^{a+b−1−j}.
pub fn beta_cdf_binomial(x: f64, a: u32, b: u32) -> f64 {
    let n = a + b - 1;
    let mut sum = 0.0;
    for j in a..=n {
        sum += binomial(n, j) * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32);
    }
    sum
}

pub fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * f64::from(n - i) / f64::from(i + 1);
    }
    c
}

/// Erlang CDF for integer shape `k` and scale `theta`: 1 − e^{−y} Σ_{n<k} yⁿ/n!.
pub fn erlang_cdf(x: f64, k: u32, theta: f64) -> f64 {
    let y = x / theta;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..k {
        term *= y / f64::from(n);
        sum += term;
    }
    1.0 - (-y).exp() * sum
}

/// Double-exponential (tanh-sinh) quadrature of `f` over [a, b]. `f` receives
/// the abscissa together with its distances to both endpoints so
/// endpoint singularities can be evaluated without cancellation.
pub fn tanh_sinh<F>(f: F, a: f64, b: f64) -> f64
where
    F: Fn(f64, f64, f64) -> f64,
{
    let half = 0.5 * (b - a);
    let h = 1.0 / 64.0;
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let kmax = (6.5 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = pi2 * t.sinh();
        let cosh_u = u.cosh();
        // 1 − tanh(u) and 1 + tanh(u) computed stably.
        let e = (-2.0 * u.abs()).exp();
        let small = 2.0 * e / (1.0 + e);
        let (one_minus, one_plus) = if u >= 0.0 { (small, 2.0 - small) } else { (2.0 - small, small) };
        let w = pi2 * t.cosh() / (cosh_u * cosh_u);
        let da = half * one_plus;
        let db = half * one_minus;
        if da <= 0.0 || db <= 0.0 {
            continue;
        }
        let x = a + da;
        let v = f(x, da, db);
        if v.is_finite() {
            sum += w * v;
        }
    }
    sum * half * h
}

/// I_x(a, b) as a ratio of two quadratures of the Beta integrand.
pub fn beta_cdf_quadrature(x: f64, a: f64, b: f64) -> f64 {
    let integrand = |t: f64, from_left: f64, _| {
        // distance to 1 is 1 − t; only the [0, 1] integral needs it exactly.
        t.max(from_left).powf(a - 1.0) * (1.0 - t).powf(b - 1.0)
    };
    let num = tanh_sinh(integrand, 0.0, x);
    let den = tanh_sinh(
        |_t, from_left, from_right| from_left.powf(a - 1.0) * from_right.powf(b - 1.0),
        0.0,
        1.0,
    );
    num / den
}

/// Φ(x) by Simpson integration of the normal density from 0.
pub fn normal_cdf_simpson(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Σ p_i ln(p_i/q_i) over the common prefix plus ε ln(ε/q_last), by plain loop.
pub fn padded_kl_direct(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            total += p[i] * (p[i] / q[i]).ln();
        }
    }
    total + eps * (eps / q[p.len()]).ln()
}

/// #{j : x_j ≤ x_i} / n by double loop.
pub fn ecdf_double_loop(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut c = 0;
        for j in 0..n {
            if xs[j] <= xs[i] {
                c += 1;
            }
        }
        out[i] = c as f64 / n as f64;
    }
    out
}

/// Explicit-loop masked softmax layer attention on a stack's parameters.
/// Returns (per-layer attention outputs or None, per-layer per-head full-length weights, logits).
pub fn dense_attention_oracle(
    stack: &LayerStack,
    x0: &[f64],
    mask: &[bool],
) -> (Vec<Option<Vec<f64>>>, Vec<Vec<Vec<f64>>>, Vec<f64>) {
    let g = stack.geometry;
    let d = g.dim;
    let hd = d / g.heads;
    let scale = 1.0 / stack.softmax_scaling.sqrt();
    let matvec = |m: &ela_core::attention::Matrix, v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m.rows];
        for r in 0..m.rows {
            let mut s = 0.0;
            for c in 0..m.cols {
                s += m.data[r * m.cols + c] * v[c];
            }
            out[r] = s;
        }
        out
    };
    let mut x = x0.to_vec();
    let mut keys: Vec<Option<Vec<f64>>> = Vec::new();
    let mut vals: Vec<Option<Vec<f64>>> = Vec::new();
    let mut outs = Vec::new();
    let mut weights = Vec::new();
    for l in 0..g.layers {
        let p = &stack.layers[l];
        let mut h = matvec(&p.backbone, &x);
        for i in 0..d {
            h[i] = (h[i] + p.backbone_bias[i]).tanh();
        }
        if !mask[l] {
            keys.push(None);
            vals.push(None);
            outs.push(None);
            weights.push(Vec::new());
            x = h;
            continue;
        }
        let q = matvec(&p.query, &h);
        keys.push(Some(matvec(&p.key, &h)));
        vals.push(Some(matvec(&p.value, &h)));
        let mut o = vec![0.0; d];
        let mut per_head = Vec::new();
        for head in 0..g.heads {
            let mut scores = vec![f64::NEG_INFINITY; l + 1];
            for i in 0..=l {
                if let Some(k) = &keys[i] {
                    let mut s = 0.0;
                    for j in head * hd..(head + 1) * hd {
                        s += q[j] * k[j];
                    }
                    scores[i] = s * scale;
                }
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let mut w = vec![0.0; l + 1];
            for i in 0..=l {
                if scores[i].is_finite() {
                    w[i] = (scores[i] - m).exp();
                    z += w[i];
                }
            }
            for i in 0..=l {
                w[i] /= z;
                if let Some(v) = &vals[i] {
                    for j in head * hd..(head + 1) * hd {
                        o[j] += w[i] * v[j];
                    }
                }
            }
            per_head.push(w);
        }
        x = (0..d).map(|i| h[i] + o[i]).collect();
        outs.push(Some(o));
        weights.push(per_head);
    }
    let mut logits = matvec(&stack.output, &x);
    for (o, b) in logits.iter_mut().zip(&stack.output_bias) {
        *o += b;
    }
    (outs, weights, logits)
}

/// Central finite-difference gradient of `loss(stack)` for every parameter,
/// grouped like `LayerStack::param_slices_mut`.
pub fn finite_difference_grads<F>(stack: &LayerStack, step: f64, loss: F) -> Vec<(ParamClass, usize, Vec<f64>)>
where
    F: Fn(&LayerStack) -> f64,
{
    let mut work = stack.clone();
    let shapes: Vec<(ParamClass, usize, usize)> = work
        .param_slices_mut()
        .into_iter()
        .map(|(c, l, s)| (c, l, s.len()))
        .collect();
    let mut out = Vec::new();
    for (idx, (class, layer, len)) in shapes.into_iter().enumerate() {
        let mut g = vec![0.0; len];
        for j in 0..len {
            let orig = work.param_slices_mut()[idx].2[j];
            work.param_slices_mut()[idx].2[j] = orig + step;
            let up = loss(&work);
            work.param_slices_mut()[idx].2[j] = orig - step;
            let down = loss(&work);
            work.param_slices_mut()[idx].2[j] = orig;
            g[j] = (up - down) / (2.0 * step);
        }
        out.push((class, layer, g));
    }
    out
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute norm when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Random point on the probability simplex.
pub fn random_simplex<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-6f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
