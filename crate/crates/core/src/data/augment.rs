use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Element, Tensor4};

/// A symmetry of the square: optional horizontal flip followed by `rot`
/// quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aug {
    pub hflip: bool,
    pub rot: u8,
}

impl Aug {
    pub const IDENTITY: Aug = Aug {
        hflip: false,
        rot: 0,
    };

    pub fn all() -> impl Iterator<Item = Aug> {
        (0..8).map(|i| Aug {
            hflip: i >= 4,
            rot: (i % 4) as u8,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Aug {
        Aug {
            hflip: rng.gen_bool(0.5),
            rot: rng.gen_range(0..4),
        }
    }

    /// The single transform equal to applying `self` and then `next`.
    pub fn then(self, next: Aug) -> Aug {
        let (k1, k2) = (self.rot as i32, next.rot as i32);
        if next.hflip {
            // F R^k = R^-k F
            Aug {
                hflip: !self.hflip,
                rot: (k2 - k1).rem_euclid(4) as u8,
            }
        } else {
            Aug {
                hflip: self.hflip,
                rot: (k1 + k2).rem_euclid(4) as u8,
            }
        }
    }

    pub fn inverse(self) -> Aug {
        Aug::all()
            .find(|&a| self.then(a) == Aug::IDENTITY)
            .expect("the group is closed")
    }

    /// Output `(h, w)` for an input of `(h, w)`.
    pub fn output_hw(self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinate feeding output `(y, x)` of an `oh×ow` result.
    fn source(self, y: usize, x: usize, oh: usize, ow: usize) -> (usize, usize) {
        // undo the rotation one quarter turn at a time
        let (mut y, mut x, mut h, mut w) = (y, x, oh, ow);
        for _ in 0..self.rot {
            // out[i][j] = in[j][w_in - 1 - i], with w_in = h
            let (ny, nx) = (x, h - 1 - y);
            (y, x) = (ny, nx);
            (h, w) = (w, h);
        }
        if self.hflip {
            x = w - 1 - x;
        }
        (y, x)
    }

    pub fn apply<T: Element>(self, t: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = t.shape();
        let (oh, ow) = self.output_hw(s.h, s.w);
        let mut out = Tensor4::zeros(s.with_hw(oh, ow));
        let map: Vec<usize> = (0..oh * ow)
            .map(|i| {
                let (y, x) = self.source(i / ow, i % ow, oh, ow);
                y * s.w + x
            })
            .collect();
        for n in 0..s.n {
            for c in 0..s.c {
                let src = t.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (d, &m) in dst.iter_mut().zip(&map) {
                    *d = src[m];
                }
            }
        }
        Ok(out)
    }
}
