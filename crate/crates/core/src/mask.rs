use alloc::vec;
use alloc::vec::Vec;

/// Boolean `height × width` image, row-major, addressed as `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask2d {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask2d {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// # Panics
    /// If `bits.len() != width * height`.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer size");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// `true` when no pixel is set.
    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &Mask2d) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Coordinates `(x, y)` of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Clears everything outside the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn retain_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in 0..self.height {
            for x in 0..self.width {
                if x < x0 || x >= x1 || y < y0 || y >= y1 {
                    self.bits[y * self.width + x] = false;
                }
            }
        }
    }
}
