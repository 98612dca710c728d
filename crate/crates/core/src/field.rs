//! Channel-first multi-channel 2-D grids of `f64`.

use serde::{Deserialize, Serialize};

use crate::error::FieldError;

/// A `channels × height × width` grid stored row-major per channel.
///
/// Images, probability maps, one-hot masks and network activations all use
/// this layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(FieldError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a field by evaluating `f(channel, row, col)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Side length for square fields; `None` when height and width differ.
    pub fn side(&self) -> Option<usize> {
        (self.height == self.width).then_some(self.height)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies one channel out as a single-channel field.
    pub fn channel(&self, c: usize) -> ScalarField {
        ScalarField {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Stacks fields of equal spatial size along the channel axis.
    pub fn concat(fields: &[&ScalarField]) -> Result<ScalarField, FieldError> {
        let first = fields.first().ok_or(FieldError::Empty)?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for f in fields {
            if f.height != h || f.width != w {
                return Err(FieldError::ShapeMismatch {
                    expected: (first.channels, h, w),
                    actual: (f.channels, f.height, f.width),
                });
            }
            channels += f.channels;
            data.extend_from_slice(&f.data);
        }
        Ok(ScalarField {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Index of the largest channel at `(y, x)`; ties resolve to the lower channel.
    pub fn argmax_at(&self, y: usize, x: usize) -> usize {
        let mut best = 0;
        let mut best_v = self.get(0, y, x);
        for c in 1..self.channels {
            let v = self.get(c, y, x);
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// One-hot encodes an integer label plane: channel `k` is 1 where `labels == k`.
    pub fn one_hot(
        labels: &[usize],
        height: usize,
        width: usize,
        classes: usize,
    ) -> Result<ScalarField, FieldError> {
        if labels.len() != height * width {
            return Err(FieldError::LengthMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        let mut out = ScalarField::zeros(classes, height, width);
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(FieldError::LabelOutOfRange { label: l, classes });
            }
            out.data[l * height * width + i] = 1.0;
        }
        Ok(out)
    }
}
