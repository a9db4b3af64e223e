use std::io::{self, Read, Write};

use thiserror::Error;

use crate::activations::AdaptiveParams;
use crate::tensor::Tensor;

pub type ParamId = usize;

const MAGIC: &[u8; 4] = b"ULUK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamStoreError {
    #[error("parameter name `{0}` already registered")]
    DuplicateName(String),
    #[error("bad magic bytes, expected ULUK")]
    BadMagic,
    #[error("unsupported parameter file version {0}")]
    UnsupportedVersion(u32),
    #[error("parameter file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Learnable state of one model: named weight tensors with their gradient and
/// momentum buffers, plus one [`AdaptiveParams`] per AULU site.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    velocity: Vec<Tensor>,
    pub adaptive: Vec<AdaptiveParams>,
    pub(crate) adaptive_velocity: Vec<[f64; 2]>,
    /// Betas are held fixed by the optimizer when set.
    pub freeze_adaptive: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, ParamStoreError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(ParamStoreError::DuplicateName(name));
        }
        self.names.push(name);
        self.grads.push(value.zeros_like());
        self.velocity.push(value.zeros_like());
        self.values.push(value);
        Ok(self.values.len() - 1)
    }

    pub fn add_adaptive(&mut self, p: AdaptiveParams) -> usize {
        self.adaptive.push(p);
        self.adaptive_velocity.push([0.0; 2]);
        self.adaptive.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id]
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id]
    }

    /// `(value, grad, velocity)` for every named tensor.
    pub(crate) fn update_slots(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor, &mut Tensor)> {
        self.values
            .iter_mut()
            .zip(&self.grads)
            .zip(self.velocity.iter_mut())
            .map(|((v, g), m)| (v, g, m))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Number of scalar weights in the named tensors (betas not included).
    pub fn tensor_param_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
        self.adaptive.iter_mut().for_each(AdaptiveParams::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
            && self
                .adaptive
                .iter()
                .all(|p| p.beta1.is_finite() && p.beta2.is_finite())
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
            && self
                .adaptive
                .iter()
                .all(|p| p.grad_beta1.is_finite() && p.grad_beta2.is_finite())
    }

    /// Little-endian layout: `ULUK`, version, tensor count, then per tensor
    /// `name_len, name, rank, dims.., data..`, then adaptive count and
    /// `(beta1, beta2)` pairs.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), ParamStoreError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.adaptive.len() as u32).to_le_bytes())?;
        for p in &self.adaptive {
            w.write_all(&p.beta1.to_le_bytes())?;
            w.write_all(&p.beta2.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`ParamStore::write_to`]. Gradients and velocities start at zero.
    pub fn read_from(mut r: impl Read) -> Result<Self, ParamStoreError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ParamStoreError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ParamStoreError::UnsupportedVersion(version));
        }
        let mut store = ParamStore::new();
        let count = read_u32(&mut r)?;
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| ParamStoreError::Malformed("name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::from_vec(shape, data)
                .map_err(|e| ParamStoreError::Malformed(e.to_string()))?;
            store.add(name, t)?;
        }
        let adaptive = read_u32(&mut r)?;
        for _ in 0..adaptive {
            let b1 = read_f64(&mut r)?;
            let b2 = read_f64(&mut r)?;
            store.add_adaptive(AdaptiveParams::new(b1, b2));
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
