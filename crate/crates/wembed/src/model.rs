//! The siamese encoder and decoder: a histogram is embedded into `R^p` so
//! that squared Euclidean distances between embeddings track exact squared
//! 2-Wasserstein distances, and decoded back into a histogram through a
//! softmax head.
//!
//! Inference (`embed`, `decode`, `predict_w2`) runs a plain forward pass;
//! training builds the same layers on an autodiff [`Tape`]. Both paths call
//! the same kernels, so their outputs are bitwise identical.

use crate::autodiff::{
    conv2d_forward, dense_forward, relu_forward, softmax_forward, AutodiffError, Tape, Tensor, Var,
};
use crate::formats::crc32::crc32;
use crate::hist::{HistError, Histogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("histogram {0}x{1} does not match model image size {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("non-finite activation in forward pass")]
    NonFiniteActivation,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Hist(#[from] HistError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("truncated checkpoint")]
    Truncated,
}

/// Layer sizes of the encoder/decoder pair. Filter counts and kernel sizes
/// are fixed; the image size and embedding dimension are parameters so
/// small desk-scale models share the code path with the full 28x28 one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub image_height: usize,
    pub image_width: usize,
    /// Embedding dimension p.
    pub embed_dim: usize,
    /// (filters, kernel) of the first encoder convolution.
    pub enc_conv1: (usize, usize),
    pub enc_conv2: (usize, usize),
    pub enc_dense1: usize,
    pub dec_dense1: usize,
    /// Channels of the reshaped decoder tensor.
    pub dec_channels: usize,
    pub dec_conv1: (usize, usize),
    pub dec_conv2: (usize, usize),
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self::for_image(28, 28, 50)
    }
}

impl ArchitectureSpec {
    pub fn for_image(height: usize, width: usize, embed_dim: usize) -> Self {
        Self {
            image_height: height,
            image_width: width,
            embed_dim,
            enc_conv1: (20, 3),
            enc_conv2: (5, 5),
            enc_dense1: 100,
            dec_dense1: 100,
            dec_channels: 5,
            dec_conv1: (20, 5),
            dec_conv2: (1, 3),
        }
    }

    fn pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Decoder dense output size: dec_channels * H * W.
    fn dec_dense2(&self) -> usize {
        self.dec_channels * self.pixels()
    }

    /// Parameter tensor shapes in declaration (checkpoint) order.
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (f1, k1) = self.enc_conv1;
        let (f2, k2) = self.enc_conv2;
        let (d1, dk1) = self.dec_conv1;
        let (d2, dk2) = self.dec_conv2;
        vec![
            vec![f1, 1, k1, k1],
            vec![f1],
            vec![f2, f1, k2, k2],
            vec![f2],
            vec![self.enc_dense1, f2 * self.pixels()],
            vec![self.enc_dense1],
            vec![self.embed_dim, self.enc_dense1],
            vec![self.embed_dim],
            vec![self.dec_dense1, self.embed_dim],
            vec![self.dec_dense1],
            vec![self.dec_dense2(), self.dec_dense1],
            vec![self.dec_dense2()],
            vec![d1, self.dec_channels, dk1, dk1],
            vec![d1],
            vec![d2, d1, dk2, dk2],
            vec![d2],
        ]
    }
}

/// Point in the embedding space `R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVec(pub Vec<f64>);

impl EmbeddingVec {
    pub fn squared_distance(&self, other: &EmbeddingVec) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// All weights of the encoder and decoder, immutable during inference.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    spec: ArchitectureSpec,
    tensors: Vec<Arc<Tensor>>,
}

// Parameter slot indices, in checkpoint order.
const ENC_CONV1_K: usize = 0;
const ENC_CONV1_B: usize = 1;
const ENC_CONV2_K: usize = 2;
const ENC_CONV2_B: usize = 3;
const ENC_DENSE1_W: usize = 4;
const ENC_DENSE1_B: usize = 5;
const ENC_DENSE2_W: usize = 6;
const ENC_DENSE2_B: usize = 7;
const DEC_DENSE1_W: usize = 8;
const DEC_DENSE1_B: usize = 9;
const DEC_DENSE2_W: usize = 10;
const DEC_DENSE2_B: usize = 11;
const DEC_CONV1_K: usize = 12;
const DEC_CONV1_B: usize = 13;
const DEC_CONV2_K: usize = 14;
const DEC_CONV2_B: usize = 15;
const N_PARAMS: usize = 16;

const CHECKPOINT_MAGIC: &[u8; 4] = b"DWE1";
const CHECKPOINT_VERSION: u32 = 1;

impl NetworkParams {
    /// Seeded He-style uniform initialization; biases start at zero.
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let tensors = spec
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let numel: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0; numel]
                } else {
                    // fan-in = product of all dims except the first
                    let fan_in: usize = shape.iter().skip(1).product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Arc::new(Tensor { shape, data })
            })
            .collect();
        Self { spec, tensors }
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Arc<Tensor>] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        N_PARAMS
    }

    fn check_dims(&self, h: &Histogram) -> Result<(), ModelError> {
        if h.height() != self.spec.image_height || h.width() != self.spec.image_width {
            return Err(ModelError::ShapeMismatch(
                h.height(),
                h.width(),
                self.spec.image_height,
                self.spec.image_width,
            ));
        }
        Ok(())
    }

    /// Encoder forward pass: conv -> relu -> conv -> relu -> dense(100)
    /// -> relu -> dense(p), linear output.
    pub fn embed(&self, h: &Histogram) -> Result<EmbeddingVec, ModelError> {
        self.check_dims(h)?;
        let s = &self.spec;
        let (hh, ww) = (s.image_height, s.image_width);
        let t = &self.tensors;
        let c1 = conv2d_forward(
            h.mass(),
            &t[ENC_CONV1_K].data,
            &t[ENC_CONV1_B].data,
            1,
            hh,
            ww,
            s.enc_conv1.0,
            s.enc_conv1.1,
        );
        let a1 = relu_forward(&c1);
        let c2 = conv2d_forward(
            &a1,
            &t[ENC_CONV2_K].data,
            &t[ENC_CONV2_B].data,
            s.enc_conv1.0,
            hh,
            ww,
            s.enc_conv2.0,
            s.enc_conv2.1,
        );
        let a2 = relu_forward(&c2);
        let d1 = dense_forward(&a2, &t[ENC_DENSE1_W].data, &t[ENC_DENSE1_B].data);
        let a3 = relu_forward(&d1);
        let e = dense_forward(&a3, &t[ENC_DENSE2_W].data, &t[ENC_DENSE2_B].data);
        if e.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation);
        }
        Ok(EmbeddingVec(e))
    }

    /// Decoder forward pass ending in a softmax over the full image, so
    /// the output always satisfies the histogram invariants.
    pub fn decode(&self, e: &EmbeddingVec) -> Result<Histogram, ModelError> {
        let s = &self.spec;
        if e.0.len() != s.embed_dim {
            return Err(ModelError::ShapeMismatch(1, e.0.len(), 1, s.embed_dim));
        }
        let t = &self.tensors;
        let d1 = dense_forward(&e.0, &t[DEC_DENSE1_W].data, &t[DEC_DENSE1_B].data);
        let a1 = relu_forward(&d1);
        let d2 = dense_forward(&a1, &t[DEC_DENSE2_W].data, &t[DEC_DENSE2_B].data);
        let (hh, ww) = (s.image_height, s.image_width);
        let c1 = conv2d_forward(
            &d2,
            &t[DEC_CONV1_K].data,
            &t[DEC_CONV1_B].data,
            s.dec_channels,
            hh,
            ww,
            s.dec_conv1.0,
            s.dec_conv1.1,
        );
        let a2 = relu_forward(&c1);
        let c2 = conv2d_forward(
            &a2,
            &t[DEC_CONV2_K].data,
            &t[DEC_CONV2_B].data,
            s.dec_conv1.0,
            hh,
            ww,
            s.dec_conv2.0,
            s.dec_conv2.1,
        );
        let out = softmax_forward(&c2);
        Ok(Histogram::from_normalized(out, hh, ww)?)
    }

    /// `||embed(a) - embed(b)||^2`; symmetric by construction since both
    /// sides share one parameter set.
    pub fn predict_w2(&self, a: &Histogram, b: &Histogram) -> Result<f64, ModelError> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        Ok(ea.squared_distance(&eb))
    }

    /// Encoder layers on an autodiff tape; `input` must be a `[1, H, W]`
    /// tensor already on the tape. Returns the embedding var.
    pub fn embed_on_tape(&self, tape: &mut Tape, input: Var) -> Result<Var, ModelError> {
        let t = &self.tensors;
        let k1 = tape.param(ENC_CONV1_K, t[ENC_CONV1_K].clone());
        let b1 = tape.param(ENC_CONV1_B, t[ENC_CONV1_B].clone());
        let k2 = tape.param(ENC_CONV2_K, t[ENC_CONV2_K].clone());
        let b2 = tape.param(ENC_CONV2_B, t[ENC_CONV2_B].clone());
        let w1 = tape.param(ENC_DENSE1_W, t[ENC_DENSE1_W].clone());
        let wb1 = tape.param(ENC_DENSE1_B, t[ENC_DENSE1_B].clone());
        let w2 = tape.param(ENC_DENSE2_W, t[ENC_DENSE2_W].clone());
        let wb2 = tape.param(ENC_DENSE2_B, t[ENC_DENSE2_B].clone());
        let c1 = tape.conv2d(input, k1, b1)?;
        let a1 = tape.relu(c1);
        let c2 = tape.conv2d(a1, k2, b2)?;
        let a2 = tape.relu(c2);
        let flat = tape.reshape(a2, vec![self.spec.enc_conv2.0 * self.spec.pixels()])?;
        let d1 = tape.dense(flat, w1, wb1)?;
        let a3 = tape.relu(d1);
        let e = tape.dense(a3, w2, wb2)?;
        Ok(e)
    }

    /// Decoder layers on an autodiff tape; `embedding` is a `[p]` var.
    /// Returns the softmax reconstruction var (flat `[H*W]`).
    pub fn decode_on_tape(&self, tape: &mut Tape, embedding: Var) -> Result<Var, ModelError> {
        let s = &self.spec;
        let t = &self.tensors;
        let w1 = tape.param(DEC_DENSE1_W, t[DEC_DENSE1_W].clone());
        let b1 = tape.param(DEC_DENSE1_B, t[DEC_DENSE1_B].clone());
        let w2 = tape.param(DEC_DENSE2_W, t[DEC_DENSE2_W].clone());
        let b2 = tape.param(DEC_DENSE2_B, t[DEC_DENSE2_B].clone());
        let k1 = tape.param(DEC_CONV1_K, t[DEC_CONV1_K].clone());
        let kb1 = tape.param(DEC_CONV1_B, t[DEC_CONV1_B].clone());
        let k2 = tape.param(DEC_CONV2_K, t[DEC_CONV2_K].clone());
        let kb2 = tape.param(DEC_CONV2_B, t[DEC_CONV2_B].clone());
        let d1 = tape.dense(embedding, w1, b1)?;
        let a1 = tape.relu(d1);
        let d2 = tape.dense(a1, w2, b2)?;
        let cube = tape.reshape(d2, vec![s.dec_channels, s.image_height, s.image_width])?;
        let c1 = tape.conv2d(cube, k1, kb1)?;
        let a2 = tape.relu(c1);
        let c2 = tape.conv2d(a2, k2, kb2)?;
        let flat = tape.reshape(c2, vec![s.pixels()])?;
        Ok(tape.softmax(flat))
    }

    /// Little-endian binary checkpoint: magic `DWE1`, version, the
    /// architecture header, raw f64 weight arrays in declaration order,
    /// then a trailing CRC-32 of everything before it.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let s = &self.spec;
        for v in [
            s.image_height,
            s.image_width,
            s.embed_dim,
            s.enc_conv1.0,
            s.enc_conv1.1,
            s.enc_conv2.0,
            s.enc_conv2.1,
            s.enc_dense1,
            s.dec_dense1,
            s.dec_channels,
            s.dec_conv1.0,
            s.dec_conv1.1,
            s.dec_conv2.0,
            s.dec_conv2.1,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in &self.tensors {
            for &x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 4 {
            return Err(ModelError::Truncated);
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        if bytes.len() < 8 + 14 * 4 + 4 {
            return Err(ModelError::Truncated);
        }
        let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32(&bytes[..bytes.len() - 4]) != crc_stored {
            return Err(ModelError::ChecksumMismatch);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionUnsupported(version));
        }
        let mut fields = [0usize; 14];
        for (i, f) in fields.iter_mut().enumerate() {
            let off = 8 + i * 4;
            *f = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        }
        let spec = ArchitectureSpec {
            image_height: fields[0],
            image_width: fields[1],
            embed_dim: fields[2],
            enc_conv1: (fields[3], fields[4]),
            enc_conv2: (fields[5], fields[6]),
            enc_dense1: fields[7],
            dec_dense1: fields[8],
            dec_channels: fields[9],
            dec_conv1: (fields[10], fields[11]),
            dec_conv2: (fields[12], fields[13]),
        };
        let mut off = 8 + 14 * 4;
        let body_end = bytes.len() - 4;
        let mut tensors = Vec::with_capacity(N_PARAMS);
        for shape in spec.param_shapes() {
            let numel: usize = shape.iter().product();
            let need = numel * 8;
            if off + need > body_end {
                return Err(ModelError::Truncated);
            }
            let data: Vec<f64> = bytes[off..off + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += need;
            tensors.push(Arc::new(Tensor { shape, data }));
        }
        if off != body_end {
            return Err(ModelError::Truncated);
        }
        Ok(Self { spec, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn random_hist(seed: u64, h: usize, w: usize) -> Histogram {
        let mut rng = StdRng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        Histogram::normalize(&raw, h, w).unwrap()
    }

    fn toy_params(seed: u64) -> NetworkParams {
        NetworkParams::init(ArchitectureSpec::for_image(8, 8, 10), seed)
    }

    #[test]
    fn embed_is_deterministic() {
        let p = toy_params(1);
        let h = random_hist(2, 8, 8);
        let e1 = p.embed(&h).unwrap();
        let e2 = p.embed(&h).unwrap();
        assert_eq!(e1.0, e2.0);
    }

    #[test]
    fn zero_params_embed_to_final_bias() {
        let mut p = toy_params(3);
        for t in p.tensors_mut() {
            let inner = Arc::make_mut(t);
            inner.data.iter_mut().for_each(|x| *x = 0.0);
        }
        // Set a recognizable final bias.
        {
            let b = Arc::make_mut(&mut p.tensors_mut()[ENC_DENSE2_B]);
            for (i, v) in b.data.iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        let h = random_hist(4, 8, 8);
        let e = p.embed(&h).unwrap();
        for (i, v) in e.0.iter().enumerate() {
            assert_eq!(*v, i as f64);
        }
    }

    #[test]
    fn decode_output_is_a_histogram() {
        let p = toy_params(5);
        let e = EmbeddingVec(vec![0.3; 10]);
        let h = p.decode(&e).unwrap();
        let sum: f64 = h.mass().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(h.mass().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn equal_embeddings_decode_identically() {
        let p = toy_params(6);
        let e = EmbeddingVec(vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0, 0.5, 0.25, 2.0, -0.75]);
        let h1 = p.decode(&e).unwrap();
        let h2 = p.decode(&e.clone()).unwrap();
        assert_eq!(h1.mass(), h2.mass());
    }

    #[test]
    fn predict_w2_symmetry_and_self_zero() {
        let p = toy_params(7);
        let a = random_hist(8, 8, 8);
        let b = random_hist(9, 8, 8);
        assert_eq!(p.predict_w2(&a, &a).unwrap(), 0.0);
        let ab = p.predict_w2(&a, &b).unwrap();
        let ba = p.predict_w2(&b, &a).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
        assert!(ab >= 0.0);
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let p = toy_params(10);
        let h = random_hist(11, 8, 8);
        let plain = p.embed(&h).unwrap();
        let mut tape = Tape::new();
        let input = tape.constant(Tensor::new(vec![1, 8, 8], h.mass().to_vec()).unwrap());
        let evar = p.embed_on_tape(&mut tape, input).unwrap();
        assert_eq!(tape.value(evar).data, plain.0);

        let recon_plain = p.decode(&plain).unwrap();
        let rvar = p.decode_on_tape(&mut tape, evar).unwrap();
        assert_eq!(tape.value(rvar).data, recon_plain.mass());
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dwe");
        let p = toy_params(12);
        p.save_checkpoint(&path).unwrap();
        let q = NetworkParams::load_checkpoint(&path).unwrap();
        assert_eq!(p.spec(), q.spec());
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dwe");
        let p = toy_params(13);
        p.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            NetworkParams::from_checkpoint_bytes(cut),
            Err(ModelError::ChecksumMismatch) | Err(ModelError::Truncated)
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let bytes = b"NOPE12345678".to_vec();
        assert!(matches!(
            NetworkParams::from_checkpoint_bytes(&bytes),
            Err(ModelError::BadMagic)
        ));
    }

    #[test]
    fn mismatched_image_dims_rejected_at_use() {
        let p = toy_params(14);
        let h = random_hist(15, 6, 6);
        assert!(matches!(
            p.embed(&h),
            Err(ModelError::ShapeMismatch(6, 6, 8, 8))
        ));
    }

    use rand::Rng;
}
