//! Orthonormal type-II DCT over 3-D volumes, applied separably.

/// A `width × height × depth` real volume stored slice-major
/// (`data[(t * height + y) * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(width: usize, height: usize, depth: usize) -> Self {
        Self {
            width,
            height,
            depth,
            data: vec![0.0; width * height * depth],
        }
    }

    pub fn from_slices(width: usize, height: usize, slices: &[&[f64]]) -> Self {
        let mut data = Vec::with_capacity(width * height * slices.len());
        for s in slices {
            assert_eq!(s.len(), width * height, "slice size mismatch");
            data.extend_from_slice(s);
        }
        Self {
            width,
            height,
            depth: slices.len(),
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `basis[k * n + i]` = orthonormal DCT-II basis value for frequency `k` at
/// sample `i`.
pub fn dct_basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            b[k * n + i] = s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    b
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
    T,
}

/// Multiplies every 1-D line along `axis` by the basis (forward) or its
/// transpose (inverse).
fn transform_axis(v: &Volume, axis: Axis, inverse: bool) -> Volume {
    let n = match axis {
        Axis::X => v.width,
        Axis::Y => v.height,
        Axis::T => v.depth,
    };
    let basis = dct_basis(n);
    let mut out = Volume::zeros(v.width, v.height, v.depth);
    let stride = match axis {
        Axis::X => 1,
        Axis::Y => v.width,
        Axis::T => v.width * v.height,
    };
    let mut line = vec![0.0; n];
    for t in 0..v.depth {
        for y in 0..v.height {
            for x in 0..v.width {
                let pos = match axis {
                    Axis::X => x,
                    Axis::Y => y,
                    Axis::T => t,
                };
                if pos != 0 {
                    continue;
                }
                let base = v.idx(x, y, t);
                for (i, l) in line.iter_mut().enumerate() {
                    *l = v.data[base + i * stride];
                }
                for k in 0..n {
                    let mut acc = 0.0;
                    for (i, &l) in line.iter().enumerate() {
                        acc += if inverse { basis[i * n + k] } else { basis[k * n + i] } * l;
                    }
                    out.data[base + k * stride] = acc;
                }
            }
        }
    }
    out
}

pub fn dct3(v: &Volume) -> Volume {
    let a = transform_axis(v, Axis::X, false);
    let b = transform_axis(&a, Axis::Y, false);
    transform_axis(&b, Axis::T, false)
}

pub fn idct3(c: &Volume) -> Volume {
    let a = transform_axis(c, Axis::T, true);
    let b = transform_axis(&a, Axis::Y, true);
    transform_axis(&b, Axis::X, true)
}

/// Number of low-frequency indices kept along an axis of `len` samples.
pub fn kept_indices(len: usize, cutoff: f64) -> usize {
    ((cutoff * len as f64).ceil() as usize).clamp(1, len)
}

/// Zeroes every coefficient with any index at or beyond the per-axis cutoff.
pub fn low_pass(coeffs: &mut Volume, cutoff: f64) {
    let kx = kept_indices(coeffs.width, cutoff);
    let ky = kept_indices(coeffs.height, cutoff);
    let kt = kept_indices(coeffs.depth, cutoff);
    for t in 0..coeffs.depth {
        for y in 0..coeffs.height {
            for x in 0..coeffs.width {
                if x >= kx || y >= ky || t >= kt {
                    let i = coeffs.idx(x, y, t);
                    coeffs.data[i] = 0.0;
                }
            }
        }
    }
}

/// Low-frequency approximation of the whole volume.
pub fn low_pass_reconstruct(v: &Volume, cutoff: f64) -> Volume {
    let mut c = dct3(v);
    low_pass(&mut c, cutoff);
    idct3(&c)
}
