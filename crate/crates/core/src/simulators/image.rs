/// Side length of every image in the toolkit.
pub const SIDE: usize = 28;

/// Pixel count of one image.
pub const PIXELS: usize = SIDE * SIDE;

/// One 28x28 grayscale image with values in [-1, 1].
///
/// Layout is row-major with the origin at the top left: pixel (x, y) lives at
/// `data[y * SIDE + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: [f32; PIXELS],
}

impl Image {
    pub const BACKGROUND: f32 = -1.0;

    pub fn background() -> Self {
        Image { data: [Self::BACKGROUND; PIXELS] }
    }

    pub fn from_slice(data: &[f32]) -> Self {
        let mut img = Image::background();
        img.data.copy_from_slice(data);
        img
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * SIDE + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Count of pixels above the given threshold; handy for sparse signals.
    pub fn count_above(&self, thresh: f32) -> usize {
        self.data.iter().filter(|&&v| v > thresh).count()
    }
}
