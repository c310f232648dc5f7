use proptest::prelude::*;

use freeseg::backbones::{Tensor, TensorCache};
use freeseg::eval::{CocoSegmentation, Rle};

prop_compose! {
    fn mask()(h in 1usize..40, w in 1usize..40, density in 0.0f64..1.0)
        (bits in prop::collection::vec(prop::bool::weighted(density), h * w), h in Just(h), w in Just(w))
        -> (usize, usize, Vec<bool>)
    {
        (h, w, bits)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rle_round_trips((h, w, bits) in mask()) {
        let rle = Rle::encode(&bits, h, w).unwrap();
        prop_assert_eq!(rle.counts.iter().sum::<u64>(), (h * w) as u64);
        prop_assert_eq!(&rle.decode().unwrap(), &bits);
        let packed = rle.to_compressed();
        let back = Rle::from_compressed(&packed, h, w).unwrap();
        prop_assert_eq!(&back, &rle);
        // the COCO JSON form decodes to the same mask
        let json = serde_json::json!({"size": [h, w], "counts": packed});
        let seg: CocoSegmentation = serde_json::from_value(json).unwrap();
        prop_assert_eq!(seg.to_mask(h, w).unwrap(), bits);
    }

    #[test]
    fn cache_is_bit_exact(
        shape in prop::collection::vec(1usize..6, 0..=4),
        bits in prop::collection::vec(any::<u32>(), 1296),
    ) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b)).collect();
        let tensor = Tensor::new(shape, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = TensorCache::new(dir.path());
        cache.put("img", "t", &tensor).unwrap();
        let back = cache.get("img", "t").unwrap().unwrap();
        prop_assert_eq!(&back.shape, &tensor.shape);
        let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = tensor.data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}
