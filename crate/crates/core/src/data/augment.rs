//! The 8 dihedral spatial transforms and the 6 RGB channel permutations.

use crate::tensor::{Element, Tensor, TensorError};

/// Horizontal flip (if `flip`) followed by `rot90` counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dihedral {
    pub rot90: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self { rot90: 0, flip: false };

    pub fn all() -> [Self; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Self {
                rot90: (i % 4) as u8,
                flip: i >= 4,
            };
        }
        out
    }

    /// Flip-only subgroup: identity, horizontal, vertical, and both.
    pub fn flips() -> [Self; 4] {
        [
            Self::IDENTITY,
            Self { rot90: 0, flip: true },
            Self { rot90: 2, flip: true },
            Self { rot90: 2, flip: false },
        ]
    }

    pub fn inverse(self) -> Self {
        if self.flip {
            self
        } else {
            Self {
                rot90: (4 - self.rot90 % 4) % 4,
                flip: false,
            }
        }
    }

    /// Applies the transform to the spatial axes of an `N×C×H×W` tensor.
    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut out = if self.flip { hflip(t)? } else { t.clone() };
        for _ in 0..self.rot90 % 4 {
            out = rot90(&out)?;
        }
        Ok(out)
    }
}

fn hflip<T: Element>(t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = t.dims4()?;
    let mut out = Vec::with_capacity(t.numel());
    for row in t.data().chunks_exact(w) {
        out.extend(row.iter().rev().copied());
    }
    Tensor::from_vec(vec![n, c, h, w], out)
}

/// Counter-clockwise quarter turn: `out[i][j] = in[j][W−1−i]`.
fn rot90<T: Element>(t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = t.dims4()?;
    let mut out = Vec::with_capacity(t.numel());
    for plane in t.data().chunks_exact(h * w) {
        for i in 0..w {
            for j in 0..h {
                out.push(plane[j * w + (w - 1 - i)]);
            }
        }
    }
    Tensor::from_vec(vec![n, c, w, h], out)
}

/// Output channel `c` takes input channel `self.0[c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelPerm(pub [usize; 3]);

impl Default for ChannelPerm {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl ChannelPerm {
    pub const IDENTITY: Self = Self([0, 1, 2]);

    pub fn all() -> [Self; 6] {
        [
            Self([0, 1, 2]),
            Self([0, 2, 1]),
            Self([1, 0, 2]),
            Self([1, 2, 0]),
            Self([2, 0, 1]),
            Self([2, 1, 0]),
        ]
    }

    pub fn inverse(self) -> Self {
        let mut inv = [0; 3];
        for (c, &src) in self.0.iter().enumerate() {
            inv[src] = c;
        }
        Self(inv)
    }

    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let [n, c, h, w] = t.dims4()?;
        if c != 3 {
            return Err(crate::tensor::TensorError::Shape {
                op: "channel_perm",
                detail: format!("expected 3 channels, got {c}"),
            });
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(t.numel());
        for s in 0..n {
            for &src in &self.0 {
                let start = (s * 3 + src) * plane;
                out.extend_from_slice(&t.data()[start..start + plane]);
            }
        }
        Tensor::from_vec(vec![n, c, h, w], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let data = (0..3 * h * w).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32).collect();
        Tensor::from_vec(vec![1, 3, h, w], data).unwrap()
    }

    #[test]
    fn rot90_layout() {
        let t = Tensor::from_vec(vec![1, 1, 2, 3], vec![1.0f32, 2., 3., 4., 5., 6.]).unwrap();
        let r = rot90(&t).unwrap();
        assert_eq!(r.shape(), &[1, 1, 3, 2]);
        assert_eq!(r.data(), &[3.0, 6., 2., 5., 1., 4.]);
    }

    #[test]
    fn group_elements_are_distinct() {
        let t = sample(3, 5, 1);
        let images: Vec<_> = Dihedral::all().iter().map(|d| d.apply(&t).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(images[i], images[j], "{i} vs {j}");
            }
        }
    }

    #[test]
    fn permutation_moves_channels() {
        let t = sample(2, 2, 5);
        let p = ChannelPerm([2, 0, 1]).apply(&t).unwrap();
        assert_eq!(&p.data()[..4], &t.data()[8..12]);
        assert_eq!(&p.data()[4..8], &t.data()[..4]);
    }

    proptest! {
        #[test]
        fn transforms_invert(d in 0usize..8, p in 0usize..6, h in 1usize..7, w in 1usize..7, seed in 0u64..1000) {
            let t = sample(h, w, seed);
            let dih = Dihedral::all()[d];
            let perm = ChannelPerm::all()[p];
            let forward = perm.apply(&dih.apply(&t).unwrap()).unwrap();
            let back = dih.inverse().apply(&perm.inverse().apply(&forward).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn dihedral_closure(a in 0usize..8, b in 0usize..8) {
            let t = sample(3, 4, 9);
            let (da, db) = (Dihedral::all()[a], Dihedral::all()[b]);
            let composed = db.apply(&da.apply(&t).unwrap()).unwrap();
            let hits = Dihedral::all().iter().filter(|d| d.apply(&t).unwrap() == composed).count();
            prop_assert_eq!(hits, 1);
        }
    }
}
