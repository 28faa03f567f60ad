use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};
use crate::Rng;

pub const KERNEL: usize = 5;
const PAD: usize = 2;

/// Frozen random backbone: `channels` zero-mean, unit-norm 5x5 filters
/// applied with the given stride and padding 2, followed by ReLU. No bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExtractor {
    seed: u64,
    channels: usize,
    stride: usize,
    /// `channels x 25`, row-major taps.
    kernels: Vec<f64>,
}

impl EmbeddingExtractor {
    pub fn new(seed: u64, channels: usize, stride: usize) -> Result<Self> {
        if channels == 0 || stride == 0 {
            return Err(Error::invalid("extractor", "channels and stride must be positive"));
        }
        let mut rng = Rng::derive(seed, 0x5eed);
        let taps = KERNEL * KERNEL;
        let mut kernels = Vec::with_capacity(channels * taps);
        for _ in 0..channels {
            let mut k: Vec<f64> = (0..taps).map(|_| rng.normal()).collect();
            let mean = k.iter().sum::<f64>() / taps as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            k.iter_mut().for_each(|v| *v /= norm);
            kernels.extend(k);
        }
        Ok(Self {
            seed,
            channels,
            stride,
            kernels,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Map size for an image side: `(len + 2*2 - 5) / stride + 1`, which is
    /// `ceil(len / stride)` for stride 4.
    pub fn map_len(&self, len: usize) -> usize {
        (len + 2 * PAD - KERNEL) / self.stride + 1
    }

    /// `(1, C, map_len(h), map_len(w))` embedding of a row-major image.
    pub fn extract<T: Scalar>(&self, frame: &[f32], h: usize, w: usize) -> Result<Tensor4<T>> {
        if frame.len() != h * w {
            return Err(Error::shape("extract_embedding", frame.len(), format!("{h}x{w}")));
        }
        if h < KERNEL || w < KERNEL {
            return Err(Error::invalid("extract_embedding", format!("frame {h}x{w} smaller than the 5x5 kernel")));
        }
        let (oh, ow) = (self.map_len(h), self.map_len(w));
        let taps = KERNEL * KERNEL;
        let mut out = Tensor4::zeros(Dims::new(1, self.channels, oh, ow));
        let mut patch = [0.0f64; KERNEL * KERNEL];
        for oy in 0..oh {
            for ox in 0..ow {
                for i in 0..KERNEL {
                    let y = (oy * self.stride + i) as isize - PAD as isize;
                    for j in 0..KERNEL {
                        let x = (ox * self.stride + j) as isize - PAD as isize;
                        patch[i * KERNEL + j] = if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            f64::from(frame[y as usize * w + x as usize])
                        } else {
                            0.0
                        };
                    }
                }
                for c in 0..self.channels {
                    let k = &self.kernels[c * taps..(c + 1) * taps];
                    let v: f64 = k.iter().zip(&patch).map(|(a, b)| a * b).sum();
                    out.set(0, c, oy, ox, T::lit(v.max(0.0)));
                }
            }
        }
        Ok(out)
    }
}
