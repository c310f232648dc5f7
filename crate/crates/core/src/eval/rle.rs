//! COCO run-length encoding: column-major runs that start with background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl Rle {
    /// Encodes a row-major mask.
    pub fn encode(mask: &[bool], height: usize, width: usize) -> Result<Rle> {
        if mask.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask pixels for {height}x{width}",
                mask.len()
            )));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for x in 0..width {
            for y in 0..height {
                let v = mask[y * width + x];
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Ok(Rle { height, width, counts })
    }

    /// Decodes into a row-major mask.
    pub fn decode(&self) -> Result<Vec<bool>> {
        let total: u64 = self.counts.iter().sum();
        let n = (self.height * self.width) as u64;
        if total != n {
            return Err(Error::CorruptRle(format!(
                "runs cover {total} pixels, canvas has {n}"
            )));
        }
        let mut mask = vec![false; self.height * self.width];
        let mut i = 0usize;
        for (k, &c) in self.counts.iter().enumerate() {
            if k % 2 == 1 {
                for j in i..i + c as usize {
                    let (x, y) = (j / self.height, j % self.height);
                    mask[y * self.width + x] = true;
                }
            }
            i += c as usize;
        }
        Ok(mask)
    }

    /// Compact string form used by COCO for compressed RLE.
    pub fn to_compressed(&self) -> String {
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut ch = x & 0x1f;
                x >>= 5;
                let more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                out.push((ch as u8 + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    pub fn from_compressed(s: &str, height: usize, width: usize) -> Result<Rle> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u64> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let Some(&b) = bytes.get(p) else {
                    return Err(Error::CorruptRle("truncated run".into()));
                };
                if !(48..48 + 64).contains(&b) || k >= 13 {
                    return Err(Error::CorruptRle(format!("bad byte {b:#x} in counts")));
                }
                let c = (b - 48) as i64;
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            let m = counts.len();
            if m > 2 {
                x += counts[m - 2] as i64;
            }
            if x < 0 {
                return Err(Error::CorruptRle(format!("negative run {x}")));
            }
            counts.push(x as u64);
        }
        Ok(Rle { height, width, counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_decoded_runs() {
        let rle = Rle {
            height: 1,
            width: 10,
            counts: vec![3, 2, 5],
        };
        let m = rle.decode().unwrap();
        let on: Vec<usize> = (0..10).filter(|&i| m[i]).collect();
        assert_eq!(on, vec![3, 4]);
    }

    #[test]
    fn column_major_order() {
        // 2x2, foreground in the first column
        let rle = Rle {
            height: 2,
            width: 2,
            counts: vec![0, 2, 2],
        };
        assert_eq!(rle.decode().unwrap(), vec![true, false, true, false]);
    }

    #[test]
    fn short_counts_are_corrupt() {
        let rle = Rle {
            height: 2,
            width: 3,
            counts: vec![1, 2],
        };
        assert!(matches!(rle.decode(), Err(Error::CorruptRle(_))));
    }

    #[test]
    fn known_compressed_string() {
        // counts [3, 2, 5] encode to "32" followed by '5'
        let rle = Rle {
            height: 1,
            width: 10,
            counts: vec![3, 2, 5],
        };
        assert_eq!(rle.to_compressed(), "325");
        let big = Rle {
            height: 100,
            width: 1,
            counts: vec![40, 50, 10],
        };
        let s = big.to_compressed();
        assert_eq!(Rle::from_compressed(&s, 100, 1).unwrap(), big);
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
            let mut state = seed | 1;
            let mask: Vec<bool> = (0..h * w).map(|_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                state % 3 == 0
            }).collect();
            let rle = Rle::encode(&mask, h, w).unwrap();
            prop_assert_eq!(rle.decode().unwrap(), mask);
            let back = Rle::from_compressed(&rle.to_compressed(), h, w).unwrap();
            prop_assert_eq!(back, rle);
        }
    }
}
