//! Forward operations and their exact reverse-mode gradients.
//!
//! Each op comes as a pair: a forward function and a `*_backward` function
//! taking the forward inputs (or a cache) and the upstream gradient. All
//! reductions run in a fixed index order, so results are bit-reproducible.

use crate::error::{Result, SanasError};
use crate::numcore::Tensor;

fn shape_err(op: &str, what: &str, got: &[usize], want: &[usize]) -> SanasError {
    SanasError::Config(format!("{op}: {what} has shape {got:?}, expected {want:?}"))
}

/// `y = W x (+ b)`. `x` may have any shape; it is read as a flat vector.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n_out, n_in) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(shape_err("linear", "weight", s, &[0, 0])),
    };
    if x.len() != n_in {
        return Err(SanasError::Config(format!(
            "linear: input shape {:?} ({} values) does not match weight shape {:?}",
            x.shape(),
            x.len(),
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.shape() != [n_out] {
            return Err(shape_err("linear", "bias", b.shape(), &[n_out]));
        }
    }
    let xs = x.data();
    let ws = w.data();
    let mut out = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let row = &ws[o * n_in..(o + 1) * n_in];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(xs) {
            acc += wv * xv;
        }
        if let Some(b) = b {
            acc += b.data()[o];
        }
        out.push(acc);
    }
    Ok(Tensor::vector(out))
}

pub struct LinearGrads {
    /// Gradient w.r.t. the input, shaped like the input. `None` when not requested.
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor, need_dx: bool) -> LinearGrads {
    let n_out = w.shape()[0];
    let n_in = w.shape()[1];
    let xs = x.data();
    let ws = w.data();
    let dys = dy.data();
    let mut dw = vec![0.0; n_out * n_in];
    for o in 0..n_out {
        let g = dys[o];
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (d, xv) in row.iter_mut().zip(xs) {
            *d = g * xv;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n_in];
        for o in 0..n_out {
            let g = dys[o];
            let row = &ws[o * n_in..(o + 1) * n_in];
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
        Tensor::new(x.shape().to_vec(), dx).expect("input shape")
    });
    LinearGrads {
        dx,
        dw: Tensor::new(vec![n_out, n_in], dw).expect("weight shape"),
        db: dy.clone(),
    }
}

/// Stride in (frequency, time).
pub type Stride = (usize, usize);

pub fn conv2d_output_dims(f: usize, t: usize, kf: usize, kt: usize, stride: Stride) -> Option<(usize, usize)> {
    if kf == 0 || kt == 0 || stride.0 == 0 || stride.1 == 0 || kf > f || kt > t {
        return None;
    }
    Some(((f - kf) / stride.0 + 1, (t - kt) / stride.1 + 1))
}

struct ConvGeom {
    c_in: usize,
    f: usize,
    t: usize,
    c_out: usize,
    kf: usize,
    kt: usize,
    fo: usize,
    to: usize,
    sf: usize,
    st: usize,
}

fn conv_geometry(x: &Tensor, k: &Tensor, stride: Stride) -> Result<ConvGeom> {
    let [c_in, f, t] = *x.shape() else {
        return Err(shape_err("conv2d", "input", x.shape(), &[0, 0, 0]));
    };
    let [c_out, kc, kf, kt] = *k.shape() else {
        return Err(shape_err("conv2d", "kernel", k.shape(), &[0, 0, 0, 0]));
    };
    if kc != c_in {
        return Err(SanasError::Config(format!(
            "conv2d: kernel {:?} expects {kc} input channels, input {:?} has {c_in}",
            k.shape(),
            x.shape()
        )));
    }
    let (fo, to) = conv2d_output_dims(f, t, kf, kt, stride).ok_or_else(|| {
        SanasError::Config(format!(
            "conv2d: kernel {:?} with stride {stride:?} does not fit input {:?}",
            k.shape(),
            x.shape()
        ))
    })?;
    Ok(ConvGeom {
        c_in,
        f,
        t,
        c_out,
        kf,
        kt,
        fo,
        to,
        sf: stride.0,
        st: stride.1,
    })
}

/// Valid (unpadded) 2-D cross-correlation over a `[C_in, F, T]` input.
pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: Stride) -> Result<Tensor> {
    let g = conv_geometry(x, k, stride)?;
    if b.shape() != [g.c_out] {
        return Err(shape_err("conv2d", "bias", b.shape(), &[g.c_out]));
    }
    let xs = x.data();
    let ks = k.data();
    let mut out = vec![0.0; g.c_out * g.fo * g.to];
    for co in 0..g.c_out {
        for fo in 0..g.fo {
            for to in 0..g.to {
                let mut acc = b.data()[co];
                for ci in 0..g.c_in {
                    for kf in 0..g.kf {
                        let xrow = (ci * g.f + fo * g.sf + kf) * g.t + to * g.st;
                        let krow = ((co * g.c_in + ci) * g.kf + kf) * g.kt;
                        let xw = &xs[xrow..xrow + g.kt];
                        let kw = &ks[krow..krow + g.kt];
                        for (a, c) in xw.iter().zip(kw) {
                            acc += a * c;
                        }
                    }
                }
                out[(co * g.fo + fo) * g.to + to] = acc;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.fo, g.to], out)
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dk: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(x: &Tensor, k: &Tensor, stride: Stride, dy: &Tensor, need_dx: bool) -> Result<ConvGrads> {
    let g = conv_geometry(x, k, stride)?;
    if dy.shape() != [g.c_out, g.fo, g.to] {
        return Err(shape_err("conv2d_backward", "upstream", dy.shape(), &[g.c_out, g.fo, g.to]));
    }
    let xs = x.data();
    let ks = k.data();
    let dys = dy.data();
    let mut dk = vec![0.0; ks.len()];
    let mut db = vec![0.0; g.c_out];
    let mut dx = if need_dx { vec![0.0; xs.len()] } else { Vec::new() };
    for co in 0..g.c_out {
        for fo in 0..g.fo {
            for to in 0..g.to {
                let d = dys[(co * g.fo + fo) * g.to + to];
                db[co] += d;
                if d == 0.0 {
                    continue;
                }
                for ci in 0..g.c_in {
                    for kf in 0..g.kf {
                        let xrow = (ci * g.f + fo * g.sf + kf) * g.t + to * g.st;
                        let krow = ((co * g.c_in + ci) * g.kf + kf) * g.kt;
                        let xw = &xs[xrow..xrow + g.kt];
                        for (dkv, xv) in dk[krow..krow + g.kt].iter_mut().zip(xw) {
                            *dkv += d * xv;
                        }
                        if need_dx {
                            let kw = &ks[krow..krow + g.kt];
                            for (dxv, kv) in dx[xrow..xrow + g.kt].iter_mut().zip(kw) {
                                *dxv += d * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: need_dx.then(|| Tensor::new(x.shape().to_vec(), dx).expect("input shape")),
        dk: Tensor::new(k.shape().to_vec(), dk)?,
        db: Tensor::vector(db),
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient mask is `pre > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect();
    Tensor::new(pre.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Takes the forward *output* `y = sigmoid(x)`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &d)| d * s * (1.0 - s))
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// `softmax(logits) - onehot(target)`.
pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if target >= k {
        return Err(SanasError::Input(format!(
            "target class {target} out of range for {k} logits"
        )));
    }
    let ls = logits.data();
    let top = logits.argmax();
    let m = ls[top];
    let exps: Vec<f64> = ls.iter().map(|&l| (l - m).exp()).collect();
    // Sum without the max term (which is exactly 1) keeps precision in the
    // saturated regime via ln_1p.
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &e)| e)
        .sum();
    let loss = (m - ls[target]) + rest.ln_1p();
    let total = 1.0 + rest;
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[target] -= 1.0;
    if !loss.is_finite() {
        return Err(SanasError::Numeric(format!("cross-entropy is {loss}")));
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Parameters of a single-layer GRU cell with hidden size `d` and input size `d_in`.
///
/// Update gate `a`, reset gate `r`, candidate `c`:
/// `a = σ(W_a u + U_a z + b_a)`, `r = σ(W_r u + U_r z + b_r)`,
/// `c = tanh(W_c u + U_c (r∘z) + b_c)`, `z' = (1-a)∘c + a∘z`.
#[derive(Clone, Copy)]
pub struct GruParams<'a> {
    pub w_a: &'a Tensor,
    pub u_a: &'a Tensor,
    pub b_a: &'a Tensor,
    pub w_r: &'a Tensor,
    pub u_r: &'a Tensor,
    pub b_r: &'a Tensor,
    pub w_c: &'a Tensor,
    pub u_c: &'a Tensor,
    pub b_c: &'a Tensor,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    z_prev: Tensor,
    u: Tensor,
    a: Tensor,
    r: Tensor,
    c: Tensor,
    rz: Tensor,
}

#[derive(Clone, Debug)]
pub struct GruGrads {
    pub w_a: Tensor,
    pub u_a: Tensor,
    pub b_a: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_c: Tensor,
    pub u_c: Tensor,
    pub b_c: Tensor,
}

impl GruParams<'_> {
    fn check(&self, d: usize, d_in: usize) -> Result<()> {
        let expect = [
            ("w_update", self.w_a, vec![d, d_in]),
            ("u_update", self.u_a, vec![d, d]),
            ("b_update", self.b_a, vec![d]),
            ("w_reset", self.w_r, vec![d, d_in]),
            ("u_reset", self.u_r, vec![d, d]),
            ("b_reset", self.b_r, vec![d]),
            ("w_cand", self.w_c, vec![d, d_in]),
            ("u_cand", self.u_c, vec![d, d]),
            ("b_cand", self.b_c, vec![d]),
        ];
        for (name, t, want) in expect {
            if t.shape() != want.as_slice() {
                return Err(shape_err("gru_cell", name, t.shape(), &want));
            }
        }
        Ok(())
    }
}

fn add3(a: Tensor, b: &Tensor, c: &Tensor) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((x, y), z)| x + y + z)
        .collect();
    Tensor::vector(data)
}

pub fn gru_cell(p: GruParams<'_>, z_prev: &Tensor, u: &Tensor) -> Result<(Tensor, GruCache)> {
    let d = z_prev.len();
    let d_in = u.len();
    p.check(d, d_in)?;
    let a = sigmoid(&add3(linear(u, p.w_a, None)?, &linear(z_prev, p.u_a, None)?, p.b_a));
    let r = sigmoid(&add3(linear(u, p.w_r, None)?, &linear(z_prev, p.u_r, None)?, p.b_r));
    let rz = Tensor::vector(r.data().iter().zip(z_prev.data()).map(|(x, y)| x * y).collect());
    let pre_c = add3(linear(u, p.w_c, None)?, &linear(&rz, p.u_c, None)?, p.b_c);
    let c = Tensor::vector(pre_c.data().iter().map(|v| v.tanh()).collect());
    let z_new: Vec<f64> = (0..d)
        .map(|i| {
            let ai = a.data()[i];
            (1.0 - ai) * c.data()[i] + ai * z_prev.data()[i]
        })
        .collect();
    let cache = GruCache {
        z_prev: Tensor::vector(z_prev.data().to_vec()),
        u: Tensor::vector(u.data().to_vec()),
        a,
        r,
        c,
        rz,
    };
    Ok((Tensor::vector(z_new), cache))
}

/// Returns `(dz_prev, du, parameter grads)`.
pub fn gru_backward(p: GruParams<'_>, cache: &GruCache, dz_new: &Tensor) -> (Tensor, Tensor, GruGrads) {
    let d = cache.z_prev.len();
    let dzn = dz_new.data();
    let z = cache.z_prev.data();
    let a = cache.a.data();
    let r = cache.r.data();
    let c = cache.c.data();

    let mut dz_prev: Vec<f64> = (0..d).map(|i| dzn[i] * a[i]).collect();
    let dpre_a = Tensor::vector((0..d).map(|i| dzn[i] * (z[i] - c[i]) * a[i] * (1.0 - a[i])).collect());
    let dpre_c = Tensor::vector((0..d).map(|i| dzn[i] * (1.0 - a[i]) * (1.0 - c[i] * c[i])).collect());

    let cand = linear_backward(&cache.rz, p.u_c, &dpre_c, true);
    let drz = cand.dx.expect("requested");
    let drz = drz.data();
    let dpre_r = Tensor::vector((0..d).map(|i| drz[i] * z[i] * r[i] * (1.0 - r[i])).collect());
    for i in 0..d {
        dz_prev[i] += drz[i] * r[i];
    }

    let upd = linear_backward(&cache.z_prev, p.u_a, &dpre_a, true);
    let rst = linear_backward(&cache.z_prev, p.u_r, &dpre_r, true);
    for (i, v) in dz_prev.iter_mut().enumerate() {
        *v += upd.dx.as_ref().expect("requested").data()[i];
        *v += rst.dx.as_ref().expect("requested").data()[i];
    }

    let in_a = linear_backward(&cache.u, p.w_a, &dpre_a, true);
    let in_r = linear_backward(&cache.u, p.w_r, &dpre_r, true);
    let in_c = linear_backward(&cache.u, p.w_c, &dpre_c, true);
    let du = add3(
        in_a.dx.expect("requested"),
        in_r.dx.as_ref().expect("requested"),
        in_c.dx.as_ref().expect("requested"),
    );

    let grads = GruGrads {
        w_a: in_a.dw,
        u_a: upd.dw,
        b_a: dpre_a,
        w_r: in_r.dw,
        u_r: rst.dw,
        b_r: dpre_r,
        w_c: in_c.dw,
        u_c: cand.dw,
        b_c: dpre_c,
    };
    (Tensor::vector(dz_prev), du, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn with(t: &Tensor, data: &[f64]) -> Tensor {
        Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let y = linear(&x, &eye, Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let y = linear(&x, &Tensor::zeros(&[2, 3]), Some(&Tensor::filled(&[2], 5.0))).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let err = linear(&Tensor::zeros(&[4]), &Tensor::zeros(&[2, 3]), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4]") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[3]);
            let w = rand_tensor(&mut rng, &[4, 3]);
            let b = rand_tensor(&mut rng, &[4]);
            let probe = rand_tensor(&mut rng, &[4]);
            let g = linear_backward(&x, &w, &probe, true);
            let f = |xx: &Tensor, ww: &Tensor, bb: &Tensor| {
                linear(xx, ww, Some(bb)).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let ex = grad_check(|v| f(&with(&x, v), &w, &b), g.dx.as_ref().unwrap().data(), x.data(), 1e-5).unwrap();
            let ew = grad_check(|v| f(&x, &with(&w, v), &b), g.dw.data(), w.data(), 1e-5).unwrap();
            let eb = grad_check(|v| f(&x, &w, &with(&b, v)), g.db.data(), b.data(), 1e-5).unwrap();
            assert!(ex.max(ew).max(eb) <= 1e-6, "{ex} {ew} {eb}");
        }
    }

    #[test]
    fn conv_identity_kernel_and_hand_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[1, 4, 5]);
        let k = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), (1, 1)).unwrap();
        assert_eq!(y, x);

        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let k = Tensor::zeros(&[1, 1, 4, 1]);
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]), (1, 1)), Err(SanasError::Config(_))));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..20 {
            let stride = [(1, 1), (2, 1), (1, 2), (3, 2)][i % 4];
            let x = rand_tensor(&mut rng, &[2, 6, 7]);
            let k = rand_tensor(&mut rng, &[3, 2, 3, 2]);
            let b = rand_tensor(&mut rng, &[3]);
            let y = conv2d(&x, &k, &b, stride).unwrap();
            let probe = rand_tensor(&mut rng, y.shape());
            let g = conv2d_backward(&x, &k, stride, &probe, true).unwrap();
            let f = |xx: &Tensor, kk: &Tensor, bb: &Tensor| {
                conv2d(xx, kk, bb, stride).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let ex = grad_check(|v| f(&with(&x, v), &k, &b), g.dx.as_ref().unwrap().data(), x.data(), 1e-5).unwrap();
            let ek = grad_check(|v| f(&x, &with(&k, v), &b), g.dk.data(), k.data(), 1e-5).unwrap();
            let eb = grad_check(|v| f(&x, &k, &with(&b, v)), g.db.data(), b.data(), 1e-5).unwrap();
            assert!(ex.max(ek).max(eb) <= 1e-6, "{ex} {ek} {eb}");
        }
    }

    #[test]
    fn relu_cases() {
        let y = relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let y = relu(&Tensor::vector(vec![-1.0, -3.0]));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_gradient_away_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            // keep every entry at least 0.1 from the kink
            let x: Vec<f64> = (0..6)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.1..1.0);
                    if rng.gen_bool(0.5) { v } else { -v }
                })
                .collect();
            let x = Tensor::vector(x);
            let probe = rand_tensor(&mut rng, &[6]);
            let g = relu_backward(&x, &probe);
            for (i, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                let mask = if xv > 0.0 { 1.0 } else { 0.0 };
                assert_eq!(gv, probe.data()[i] * mask);
            }
            let err = grad_check(
                |v| relu(&Tensor::vector(v.to_vec())).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum(),
                g.data(),
                x.data(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-6);
        }
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for x in [1.0, 10.0, 20.0, 30.0, 36.0] {
            let s = sigmoid_scalar(x);
            assert!(s < 1.0, "sigmoid({x}) hit 1.0");
        }
        assert!(sigmoid_scalar(-700.0) >= 0.0);
        let mut last = 0.0;
        for i in -50..=50 {
            let s = sigmoid_scalar(i as f64);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn sigmoid_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[5]);
            let probe = rand_tensor(&mut rng, &[5]);
            let g = sigmoid_backward(&sigmoid(&x), &probe);
            let err = grad_check(
                |v| sigmoid(&Tensor::vector(v.to_vec())).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum(),
                g.data(),
                x.data(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-6, "{err}");
        }
    }

    #[test]
    fn xent_uniform_and_saturated() {
        let (loss, _) = softmax_xent(&Tensor::zeros(&[12]), 3).unwrap();
        assert!((loss - 12f64.ln()).abs() < 1e-12);
        assert!((loss - 2.48491).abs() < 1e-5);
        for k in 2..=16 {
            let (loss, _) = softmax_xent(&Tensor::zeros(&[k]), 0).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
        let mut logits = Tensor::zeros(&[12]);
        logits.data_mut()[4] = 40.0;
        let (loss, _) = softmax_xent(&logits, 4).unwrap();
        assert!(loss < 1e-15);
        assert!(loss >= 0.0);
    }

    #[test]
    fn xent_target_out_of_range() {
        assert!(matches!(softmax_xent(&Tensor::zeros(&[3]), 3), Err(SanasError::Input(_))));
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..20 {
            let x = rand_tensor(&mut rng, &[5]);
            let (_, g) = softmax_xent(&x, i % 5).unwrap();
            let err = grad_check(|v| softmax_xent(&Tensor::vector(v.to_vec()), i % 5).unwrap().0, g.data(), x.data(), 1e-5).unwrap();
            assert!(err <= 1e-6, "{err}");
        }
    }

    struct OwnedGru([Tensor; 9]);

    impl OwnedGru {
        fn random(rng: &mut ChaCha8Rng, d: usize, d_in: usize) -> Self {
            OwnedGru([
                rand_tensor(rng, &[d, d_in]),
                rand_tensor(rng, &[d, d]),
                rand_tensor(rng, &[d]),
                rand_tensor(rng, &[d, d_in]),
                rand_tensor(rng, &[d, d]),
                rand_tensor(rng, &[d]),
                rand_tensor(rng, &[d, d_in]),
                rand_tensor(rng, &[d, d]),
                rand_tensor(rng, &[d]),
            ])
        }

        fn zeros(d: usize, d_in: usize) -> Self {
            OwnedGru([
                Tensor::zeros(&[d, d_in]),
                Tensor::zeros(&[d, d]),
                Tensor::zeros(&[d]),
                Tensor::zeros(&[d, d_in]),
                Tensor::zeros(&[d, d]),
                Tensor::zeros(&[d]),
                Tensor::zeros(&[d, d_in]),
                Tensor::zeros(&[d, d]),
                Tensor::zeros(&[d]),
            ])
        }

        fn params(&self) -> GruParams<'_> {
            let t = &self.0;
            GruParams {
                w_a: &t[0],
                u_a: &t[1],
                b_a: &t[2],
                w_r: &t[3],
                u_r: &t[4],
                b_r: &t[5],
                w_c: &t[6],
                u_c: &t[7],
                b_c: &t[8],
            }
        }
    }

    #[test]
    fn gru_zero_parameters() {
        let p = OwnedGru::zeros(4, 3);
        let (z, _) = gru_cell(p.params(), &Tensor::zeros(&[4]), &Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let v = Tensor::vector(vec![1.0, -2.0, 0.5, 4.0]);
        let (z, _) = gru_cell(p.params(), &v, &Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        for (a, b) in z.data().iter().zip(v.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (d, d_in) = (4, 3);
            let owned = OwnedGru::random(&mut rng, d, d_in);
            let z0 = rand_tensor(&mut rng, &[d]);
            let u = rand_tensor(&mut rng, &[d_in]);
            let probe = rand_tensor(&mut rng, &[d]);
            let (_, cache) = gru_cell(owned.params(), &z0, &u).unwrap();
            let (dz, du, grads) = gru_backward(owned.params(), &cache, &probe);
            let obj = |p: &OwnedGru, z: &Tensor, uu: &Tensor| {
                let (y, _) = gru_cell(p.params(), z, uu).unwrap();
                y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut worst: f64 = grad_check(|v| obj(&owned, &Tensor::vector(v.to_vec()), &u), dz.data(), z0.data(), 1e-5).unwrap();
            worst = worst.max(grad_check(|v| obj(&owned, &z0, &Tensor::vector(v.to_vec())), du.data(), u.data(), 1e-5).unwrap());
            let analytic = [
                &grads.w_a, &grads.u_a, &grads.b_a, &grads.w_r, &grads.u_r, &grads.b_r, &grads.w_c, &grads.u_c, &grads.b_c,
            ];
            for (slot, g) in analytic.iter().enumerate() {
                let e = grad_check(
                    |v| {
                        let mut p = OwnedGru(owned.0.clone());
                        p.0[slot] = with(&owned.0[slot], v);
                        obj(&p, &z0, &u)
                    },
                    g.data(),
                    owned.0[slot].data(),
                    1e-5,
                )
                .unwrap();
                worst = worst.max(e);
            }
            assert!(worst <= 1e-5, "{worst}");
        }
    }
}
