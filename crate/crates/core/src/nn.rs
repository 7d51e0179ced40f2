//! Small neural building blocks over candle tensors, in f64 on the CPU.
//!
//! Parameters live in a [`ParamStore`] keyed by name. Initial values come from
//! a ChaCha8 stream keyed by `(seed, name)`, so two models that share a
//! parameter name start from the same values regardless of creation order.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform on `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Normal(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub struct ParamStore {
    seed: u64,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, vars: BTreeMap::new() }
    }

    /// The parameter `name`, created with `init` on first use.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!("parameter {name}: {:?} vs {:?}", v.dims(), shape)));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = seed::rng(self.seed, &[seed::hash_str(name)]);
        let data: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                let k = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-k..k)).collect()
            }
            Init::Normal(std) => {
                let normal = rand_distr::Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..n).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &device())?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn n_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, ParamValue>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let data = v.as_tensor().flatten_all()?.to_vec1::<f64>()?;
                Ok((k.clone(), ParamValue { shape: v.dims().to_vec(), data }))
            })
            .collect()
    }

    /// Overwrites every parameter from `values`, which must cover them exactly.
    pub fn load(&mut self, values: &BTreeMap<String, ParamValue>) -> Result<()> {
        if values.len() != self.vars.len() || values.keys().any(|k| !self.vars.contains_key(k)) {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (k, v) in values {
            let var = &self.vars[k];
            if var.dims() != v.shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter {k}: shape {:?} vs {:?}", var.dims(), v.shape)));
            }
            var.set(&Tensor::from_vec(v.data.clone(), v.shape.as_slice(), &device())?)?;
        }
        Ok(())
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}

pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (rows.len(), width), &device())?)
}

pub fn log_softmax(x: &Tensor, dim: D) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor, dim: D) -> Result<Tensor> {
    Ok(log_softmax(x, dim)?.exp()?)
}

/// `log Σ exp` along `dim`, keeping the dimension.
pub fn logsumexp(x: &Tensor, dim: D) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    Ok(x.broadcast_sub(&max)?.exp()?.sum_keepdim(dim)?.log()?.broadcast_add(&max)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.affine(0.5, 0.0)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Maps reals onto `(lo, hi)`.
pub fn bounded(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    Ok(sigmoid(x)?.affine(hi - lo, lo)?)
}

pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Linear {
            w: ps.get(&format!("{name}.w"), &[d_in, d_out], Init::Uniform { fan_in: d_in })?,
            b: ps.get(&format!("{name}.b"), &[d_out], Init::Uniform { fan_in: d_in })?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w)?.broadcast_add(&self.b)?)
    }

    pub fn d_out(&self) -> usize {
        self.b.dims()[0]
    }
}

/// Two-layer tanh perceptron.
pub struct Mlp {
    l1: Linear,
    l2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, width: usize, d_out: usize) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(ps, &format!("{name}.l1"), d_in, width)?,
            l2: Linear::new(ps, &format!("{name}.l2"), width, d_out)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(x)?.tanh()?)
    }
}

pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: ps.get(&format!("{name}.gain"), &[dim], Init::Const(1.0))?,
            bias: ps.get(&format!("{name}.bias"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

pub struct GruCell {
    wx: Linear,
    wh: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(GruCell {
            wx: Linear::new(ps, &format!("{name}.x"), d_in, 3 * hidden)?,
            wh: Linear::new(ps, &format!("{name}.h"), hidden, 3 * hidden)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x: [n, d_in]`, `h: [n, hidden]`.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let n = self.hidden;
        let gx = self.wx.forward(x)?;
        let gh = self.wh.forward(h)?;
        let r = sigmoid(&(gx.narrow(1, 0, n)? + gh.narrow(1, 0, n)?)?)?;
        let z = sigmoid(&(gx.narrow(1, n, n)? + gh.narrow(1, n, n)?)?)?;
        let cand = (gx.narrow(1, 2 * n, n)? + (r * gh.narrow(1, 2 * n, n)?)?)?.tanh()?;
        let keep = z.affine(-1.0, 1.0)?;
        Ok(((keep * cand)? + (z * h)?)?)
    }

    /// Runs right to left over padded sequences `x: [n, len, d_in]` whose
    /// valid prefixes have the given lengths. Position `i` of the result
    /// encodes the suffix starting at `i`.
    pub fn suffix_states(&self, x: &Tensor, lengths: &[usize], h0: Option<&Tensor>) -> Result<Tensor> {
        let (n, len, _) = x.dims3()?;
        let mut h = match h0 {
            Some(h0) => h0.clone(),
            None => Tensor::zeros((n, self.hidden), DTYPE, &device())?,
        };
        let mut out = vec![None; len];
        for i in (0..len).rev() {
            let mask: Vec<f64> = lengths.iter().map(|&l| if i < l { 1.0 } else { 0.0 }).collect();
            let m = Tensor::from_vec(mask, (n, 1), &device())?;
            let next = self.step(&x.narrow(1, i, 1)?.squeeze(1)?, &h)?;
            h = (next.broadcast_mul(&m)? + h.broadcast_mul(&m.affine(-1.0, 1.0)?)?)?;
            out[i] = Some(h.clone());
        }
        let out: Vec<Tensor> = out.into_iter().map(|t| t.expect("every position visited")).collect();
        Ok(Tensor::stack(&out, 1)?)
    }

    /// Left-to-right states for padded sequences; `h0: [n, hidden]`.
    pub fn prefix_states(&self, x: &Tensor, h0: &Tensor) -> Result<Tensor> {
        let (_, len, _) = x.dims3()?;
        let mut h = h0.clone();
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            h = self.step(&x.narrow(1, i, 1)?.squeeze(1)?, &h)?;
            out.push(h.clone());
        }
        Ok(Tensor::stack(&out, 1)?)
    }
}

/// One pre-norm transformer block with causal multi-head self-attention and a
/// learned positional table, followed by a final layer norm.
pub struct CausalEncoder {
    input: Linear,
    pos: Tensor,
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff: Mlp,
    ln_out: LayerNorm,
    heads: usize,
    dim: usize,
}

impl CausalEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, dim: usize, heads: usize, max_len: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArgument(format!("{heads} heads do not divide width {dim}")));
        }
        Ok(CausalEncoder {
            input: Linear::new(ps, &format!("{name}.input"), d_in, dim)?,
            pos: ps.get(&format!("{name}.pos"), &[max_len, dim], Init::Normal(0.1))?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim)?,
            out: Linear::new(ps, &format!("{name}.attn_out"), dim, dim)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            ff: Mlp::new(ps, &format!("{name}.ff"), dim, 2 * dim, dim)?,
            ln_out: LayerNorm::new(ps, &format!("{name}.ln_out"), dim)?,
            heads,
            dim,
        })
    }

    pub fn max_len(&self) -> usize {
        self.pos.dims()[0]
    }

    /// `x: [n, len, d_in]` → `[n, len, dim]`; position `i` sees positions `≤ i`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, len, _) = x.dims3()?;
        if len > self.max_len() {
            return Err(Error::Shape(format!("sequence of {len} exceeds positional table of {}", self.max_len())));
        }
        let h = self.input.forward(x)?.broadcast_add(&self.pos.narrow(0, 0, len)?)?;
        let (hd, nh) = (self.dim / self.heads, self.heads);
        let qkv = self.qkv.forward(&self.ln1.forward(&h)?)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv.narrow(2, i * self.dim, self.dim)?.reshape((n, len, nh, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (hd as f64).sqrt())?;
        let mask: Vec<f64> =
            (0..len).flat_map(|i| (0..len).map(move |j| if j <= i { 0.0 } else { -1e9 })).collect();
        let mask = Tensor::from_vec(mask, (len, len), &device())?;
        let attn = softmax(&scores.broadcast_add(&mask)?, D::Minus1)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((n, len, self.dim))?;
        let h = (h + self.out.forward(&ctx)?)?;
        let h = (&h + self.ff.forward(&self.ln2.forward(&h)?)?)?;
        self.ln_out.forward(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, v.len(), &device()).unwrap()
    }

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::new(1);
        let mut b = ParamStore::new(1);
        let a1 = a.get("x", &[3], Init::Uniform { fan_in: 3 }).unwrap();
        a.get("y", &[3], Init::Uniform { fan_in: 3 }).unwrap();
        b.get("y", &[3], Init::Uniform { fan_in: 3 }).unwrap();
        let b1 = b.get("x", &[3], Init::Uniform { fan_in: 3 }).unwrap();
        assert_eq!(a1.to_vec1::<f64>().unwrap(), b1.to_vec1::<f64>().unwrap());
    }

    #[test]
    fn primitive_nonlinearities() {
        let x = t(&[-30.0, -1.0, 0.0, 2.0, 30.0]);
        let s = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        let sp = softplus(&x).unwrap().to_vec1::<f64>().unwrap();
        for (i, v) in [-30.0f64, -1.0, 0.0, 2.0, 30.0].iter().enumerate() {
            assert!((s[i] - 1.0 / (1.0 + (-v).exp())).abs() < 1e-12);
            assert!((sp[i] - (1.0 + v.exp()).ln()).abs() < 1e-9);
        }
        let ls = log_softmax(&t(&[1.0, 2.0, 3.0]), D::Minus1).unwrap().exp().unwrap();
        assert!((ls.sum_all().unwrap().to_scalar::<f64>().unwrap() - 1.0).abs() < 1e-12);
        let lse = logsumexp(&t(&[1000.0, 1000.0]), D::Minus1).unwrap().to_vec1::<f64>().unwrap();
        assert!((lse[0] - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn causal_encoder_ignores_the_future() {
        let mut ps = ParamStore::new(0);
        let enc = CausalEncoder::new(&mut ps, "enc", 3, 8, 2, 16).unwrap();
        let a = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], (1, 3, 3), &device()).unwrap();
        let b = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -5.0, 3.0, 1.0], (1, 3, 3), &device()).unwrap();
        let ya = enc.forward(&a).unwrap().narrow(1, 0, 2).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let yb = enc.forward(&b).unwrap().narrow(1, 0, 2).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (x, y) in ya.iter().zip(&yb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn suffix_states_respect_lengths() {
        let mut ps = ParamStore::new(0);
        let gru = GruCell::new(&mut ps, "g", 2, 4).unwrap();
        // Row 1 is row 0 with one padded step appended.
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 9.0, 9.0], (2, 3, 2), &device())
            .unwrap();
        let h = gru.suffix_states(&x, &[2, 2], None).unwrap();
        let h0 = h.narrow(1, 0, 1).unwrap().squeeze(1).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(h0[0], h0[1]);
    }
}
