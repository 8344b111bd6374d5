//! Dense row-major 2D rasters shared by images, masks and score maps.

use serde::{Deserialize, Serialize};

/// Row-major `height x width` raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Grayscale intensity image, normalized to `[0, 1]`.
pub type SampleImage = Grid<f32>;
/// Per-pixel class ids.
pub type AnnotationMask = Grid<u8>;
/// Per-pixel instance ids, 0 meaning "no instance".
pub type InstanceMask = Grid<u16>;
/// Binary prediction or ground-truth mask.
pub type BinaryMask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Horizontal mirror.
    pub fn flipped_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width.max(1)) {
            data.extend(row.iter().rev().cloned());
        }
        Self { data, ..*self }
    }

    /// Vertical mirror.
    pub fn flipped_vertical(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width.max(1)).rev() {
            data.extend(row.iter().cloned());
        }
        Self { data, ..*self }
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::default())
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Index into `0..len` with symmetric (edge-duplicating) reflection:
/// `... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...`.
pub fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// 1D Gaussian taps for a kernel of `size` samples, normalized to sum 1.
///
/// Tap `k` sits at offset `k - size/2` from the output sample and is weighted
/// by its distance to the kernel center `(size - 1) / 2`. For even sizes the
/// center therefore falls half a pixel before the output sample.
pub fn gaussian_taps(sigma: f64, size: usize) -> Vec<(isize, f64)> {
    assert!(size >= 1 && sigma > 0.0);
    let center = (size as f64 - 1.0) / 2.0;
    let half = (size / 2) as isize;
    let mut taps: Vec<(isize, f64)> = (0..size)
        .map(|k| {
            let u = k as f64 - center;
            (k as isize - half, (-(u * u) / (2.0 * sigma * sigma)).exp())
        })
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= total;
    }
    taps
}

/// Separable convolution with symmetric boundary padding.
pub fn convolve_separable(input: &Grid<f64>, taps: &[(isize, f64)]) -> Grid<f64> {
    let (w, h) = input.dims();
    let mut tmp = Grid::<f64>::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(off, wt) in taps {
                acc += wt * input.get(reflect_index(x as isize + off, w), y);
            }
            *tmp.get_mut(x, y) = acc;
        }
    }
    let mut out = Grid::<f64>::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(off, wt) in taps {
                acc += wt * tmp.get(x, reflect_index(y as isize + off, h));
            }
            *out.get_mut(x, y) = acc;
        }
    }
    out
}

/// Gaussian blur with a kernel radius of `ceil(3 sigma)`.
pub fn gaussian_blur(input: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let size = 2 * (3.0 * sigma).ceil().max(1.0) as usize + 1;
    convolve_separable(input, &gaussian_taps(sigma, size))
}
