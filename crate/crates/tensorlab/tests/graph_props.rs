//! Property tests for the structural invariants of the engine.

use proptest::prelude::*;
use tensorlab::{Graph, Tensor};

proptest! {
    /// Softmax rows sum to 1 within 1e-6 for arbitrary finite input.
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        raw in prop::collection::vec(-1e6f64..1e6, 1..35),
    ) {
        let mut data = vec![0.0; rows * cols];
        for (i, slot) in data.iter_mut().enumerate() {
            *slot = raw[i % raw.len()];
        }
        let mut g = Graph::new(true);
        let x = g.input(Tensor::new(rows, cols, data).unwrap()).unwrap();
        let s = g.softmax_rows(x, None).unwrap();
        let v = g.value(s);
        for i in 0..rows {
            let sum: f64 = v.row_slice(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
        }
    }

    /// Concat then slice recovers both originals exactly, on either axis.
    #[test]
    fn concat_then_slice_roundtrips(
        p in 1usize..5,
        ca in 1usize..5,
        cb in 1usize..5,
        axis in 0usize..2,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // For axis 0 the column counts must agree; reuse ca for both.
        let (pa, cola, pb, colb) = if axis == 0 {
            (p, ca, cb, ca)
        } else {
            (p, ca, p, cb)
        };
        let ta = Tensor::new(pa, cola, (0..pa * cola).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let tb = Tensor::new(pb, colb, (0..pb * colb).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();

        let mut g = Graph::new(true);
        let a = g.input(ta.clone()).unwrap();
        let b = g.input(tb.clone()).unwrap();
        let cat = g.concat(a, b, axis).unwrap();
        let (first, second) = if axis == 0 {
            (
                g.slice(cat, 0, 0, pa).unwrap(),
                g.slice(cat, 0, pa, pa + pb).unwrap(),
            )
        } else {
            (
                g.slice(cat, 1, 0, cola).unwrap(),
                g.slice(cat, 1, cola, cola + colb).unwrap(),
            )
        };
        prop_assert_eq!(g.value(first), &ta);
        prop_assert_eq!(g.value(second), &tb);
    }
}
