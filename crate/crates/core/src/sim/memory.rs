use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::tensor::{Dims, Scalar, Tensor4};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<T> {
    pub embedding: Tensor4<T>,
    pub bbox: BoundingBox,
    pub frame: usize,
}

/// Bounded FIFO of historical samples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMemory<T> {
    capacity: usize,
    entries: VecDeque<MemoryEntry<T>>,
}

impl<T: Scalar> SampleMemory<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("sample_memory", "capacity must be positive"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Append, evicting the oldest entry when full. Embeddings must be
    /// `(1, C, h, w)` and agree with what is already stored.
    pub fn push(&mut self, embedding: Tensor4<T>, bbox: BoundingBox, frame: usize) -> Result<()> {
        let d = embedding.dims();
        if d.n != 1 {
            return Err(Error::shape("memory_push", d, "1xCxhxw"));
        }
        if let Some(first) = self.entries.front() {
            if first.embedding.dims() != d {
                return Err(Error::shape("memory_push", d, first.embedding.dims()));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(MemoryEntry { embedding, bbox, frame });
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry<T>> {
        self.entries.iter()
    }

    pub fn newest(&self) -> Option<&MemoryEntry<T>> {
        self.entries.back()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// The bank as one `(len, C, h, w)` tensor plus its boxes, oldest first.
    pub fn stack(&self) -> Result<(Tensor4<T>, Vec<BoundingBox>)> {
        if self.entries.is_empty() {
            return Err(Error::invalid("memory_stack", "memory is empty"));
        }
        let parts: Vec<_> = self.entries.iter().map(|e| &e.embedding).collect();
        Ok((Tensor4::stack(&parts)?, self.entries.iter().map(|e| e.bbox).collect()))
    }
}

/// Circular shift of every channel plane by `(dy, dx)` cells.
fn roll<T: Scalar>(x: &Tensor4<T>, dy: isize, dx: isize) -> Tensor4<T> {
    let d = x.dims();
    let (h, w) = (d.h as isize, d.w as isize);
    Tensor4::from_fn(d, |n, c, y, xx| {
        let sy = (y as isize - dy).rem_euclid(h) as usize;
        let sx = (xx as isize - dx).rem_euclid(w) as usize;
        x.get(n, c, sy, sx)
    })
}

/// Mirror every channel plane left-right.
pub fn hflip<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let d = x.dims();
    Tensor4::from_fn(d, |n, c, y, xx| x.get(n, c, y, d.w - 1 - xx))
}

/// Sample-level variants of one embedding and its box.
///
/// Variant 0 is the input itself. Every other variant applies a circular
/// shift of up to 2 cells per axis, a horizontal flip with probability 1/2,
/// and additive Gaussian noise (std 0.01), with the box moved to match.
/// `stride` converts cells to pixels.
pub fn build_training_set<T: Scalar>(
    template: &Tensor4<T>,
    bbox: BoundingBox,
    n: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<(Tensor4<T>, Vec<BoundingBox>)> {
    let d = template.dims();
    if n == 0 {
        return Err(Error::invalid("build_training_set", "n must be positive"));
    }
    if d.n != 1 {
        return Err(Error::shape("build_training_set", d, "1xCxhxw"));
    }
    let s = stride as f64;
    let img_w = (d.w * stride) as f64;
    let mut samples = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    samples.push(template.clone());
    boxes.push(bbox);
    for _ in 1..n {
        let dy = rng.below(5) as isize - 2;
        let dx = rng.below(5) as isize - 2;
        let mut x = roll(template, dy, dx);
        let mut b = BoundingBox { x: bbox.x + dx as f64 * s, y: bbox.y + dy as f64 * s, ..bbox };
        if rng.below(2) == 1 {
            x = hflip(&x);
            b.x = img_w - b.x - b.w;
        }
        for v in x.data_mut() {
            *v = *v + T::lit(0.01 * rng.normal());
        }
        samples.push(x);
        boxes.push(b);
    }
    let refs: Vec<_> = samples.iter().collect();
    let stacked = Tensor4::stack(&refs)?;
    debug_assert_eq!(stacked.dims(), Dims::new(n, d.c, d.h, d.w));
    Ok((stacked, boxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4d;
    use crate::Rng;
    use proptest::prelude::*;

    fn emb(v: f64) -> Tensor4d {
        Tensor4d::full([1, 2, 3, 3], v)
    }

    fn bx(i: usize) -> BoundingBox {
        BoundingBox::new(i as f64, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn capacity_one_keeps_newest() {
        let mut m = SampleMemory::new(1).unwrap();
        for i in 0..4 {
            m.push(emb(i as f64), bx(i), i).unwrap();
        }
        assert_eq!(m.len(), 1);
        assert_eq!(m.newest().unwrap().frame, 3);
    }

    #[test]
    fn overflow_evicts_first() {
        let mut m = SampleMemory::new(3).unwrap();
        for i in 0..4 {
            m.push(emb(i as f64), bx(i), i).unwrap();
        }
        let frames: Vec<_> = m.entries().map(|e| e.frame).collect();
        assert_eq!(frames, vec![1, 2, 3]);
        let (x, boxes) = m.stack().unwrap();
        assert_eq!(x.dims(), Dims::new(3, 2, 3, 3));
        assert_eq!(x.get(0, 0, 0, 0), 1.0);
        assert_eq!(boxes[2], bx(3));
    }

    #[test]
    fn rejects_mismatched_embedding() {
        let mut m = SampleMemory::new(3).unwrap();
        m.push(emb(0.0), bx(0), 0).unwrap();
        assert!(m.push(Tensor4d::zeros([1, 2, 4, 3]), bx(1), 1).is_err());
        assert!(m.push(Tensor4d::zeros([2, 2, 3, 3]), bx(1), 1).is_err());
        assert!(SampleMemory::<f64>::new(0).is_err());
        assert!(SampleMemory::<f64>::new(2).unwrap().stack().is_err());
    }

    proptest! {
        #[test]
        fn fifo_invariants(cap in 1usize..8, pushes in 0usize..30) {
            let mut m = SampleMemory::new(cap).unwrap();
            for i in 0..pushes {
                m.push(emb(i as f64), bx(i), i).unwrap();
                prop_assert!(m.len() <= cap);
            }
            let frames: Vec<_> = m.entries().map(|e| e.frame).collect();
            let start = pushes.saturating_sub(cap);
            prop_assert_eq!(frames, (start..pushes).collect::<Vec<_>>());
        }
    }

    #[test]
    fn training_set_variants() {
        let mut rng = Rng::new(3);
        let t = Tensor4d::randn([1, 3, 6, 6], 1.0, &mut rng);
        let b = BoundingBox::new(8.0, 8.0, 4.0, 4.0).unwrap();
        let (x, boxes) = build_training_set(&t, b, 1, 4, &mut rng).unwrap();
        assert_eq!(x, t);
        assert_eq!(boxes, vec![b]);

        let (x, boxes) = build_training_set(&t, b, 15, 4, &mut rng).unwrap();
        assert_eq!(x.dims(), Dims::new(15, 3, 6, 6));
        assert_eq!(x.sample(0), t);
        assert_eq!(boxes.len(), 15);
        assert!((1..15).any(|i| x.sample(i).max_abs_diff(&t).unwrap() > 0.05));
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut rng = Rng::new(4);
        let t = Tensor4d::randn([2, 3, 5, 4], 1.0, &mut rng);
        assert_eq!(hflip(&hflip(&t)), t);
        assert_ne!(hflip(&t), t);
    }

    #[test]
    fn shifted_box_tracks_content() {
        // a single hot cell moves with its box
        let mut t = Tensor4d::zeros([1, 1, 8, 8]);
        t.set(0, 0, 3, 3, 1.0);
        let b = BoundingBox::new(12.0, 12.0, 4.0, 4.0).unwrap();
        let mut rng = Rng::new(9);
        let (x, boxes) = build_training_set(&t, b, 30, 4, &mut rng).unwrap();
        for i in 0..30 {
            let s = x.sample(i);
            let hot = s.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let (cy, cx) = (hot / 8, hot % 8);
            assert_eq!((boxes[i].x / 4.0) as usize, cx, "variant {i}");
            assert_eq!((boxes[i].y / 4.0) as usize, cy, "variant {i}");
        }
    }
}
