use pogars::verify::conv1d_direct;
use pogars::{grad_check, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

/// `[B, C, T]` input, `[O, C, K]` kernel, `[O]` bias and padding.
fn conv_problem() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, Tensor<f64>, usize)> {
    (
        1usize..3,
        1usize..5,
        1usize..5,
        1usize..4,
        0usize..3,
        0usize..6,
    )
        .prop_flat_map(|(b, c, o, k, pad, extra)| {
            let t = (k + extra).saturating_sub(2 * pad).max(1);
            let pad = pad.min((t + 2 * pad).saturating_sub(k));
            (
                tensor(vec![b, c, t], -1.0, 1.0),
                tensor(vec![o, c, k], -1.0, 1.0),
                tensor(vec![o], -1.0, 1.0),
                Just(pad),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_equals_direct_sum((x, k, b, pad) in conv_problem()) {
        prop_assume!(x.shape()[2] + 2 * pad >= k.shape()[2]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(&x), tape.leaf(&k), tape.leaf(&b));
        let y = tape.conv1d(xv, kv, bv, pad).unwrap();
        let want = conv1d_direct(&x, &k, &b, pad);
        prop_assert_eq!(tape.value(y).shape(), want.shape());
        for (a, w) in tape.value(y).values().iter().zip(want.values()) {
            prop_assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions_at_any_magnitude(x in tensor(vec![4, 9], -1e3, 1e3)) {
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let y = tape.softmax(xv, 1).unwrap();
        for row in tape.value(y).values().chunks(9) {
            prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_a_shift_per_row(x in tensor(vec![3, 5], -5.0, 5.0), shift in -50.0f64..50.0) {
        let moved = Tensor::new([3, 5], x.values().iter().map(|v| v + shift).collect()).unwrap();
        let mut tape = Tape::new();
        let (a, b) = (tape.leaf(&x), tape.leaf(&moved));
        let (sa, sb) = (tape.softmax(a, 1).unwrap(), tape.softmax(b, 1).unwrap());
        for (p, q) in tape.value(sa).values().iter().zip(tape.value(sb).values()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_keeps_every_value_in_place(
        a in tensor(vec![2, 3, 4], -1.0, 1.0),
        b in tensor(vec![2, 1, 4], -1.0, 1.0),
    ) {
        let mut tape = Tape::new();
        let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
        let c = tape.concat(&[av, bv], 1).unwrap();
        let c = tape.value(c);
        prop_assert_eq!(c.shape(), &[2, 4, 4]);
        for s in 0..2 {
            for t in 0..4 {
                for ch in 0..3 {
                    prop_assert_eq!(c.at(&[s, ch, t]), a.at(&[s, ch, t]));
                }
                prop_assert_eq!(c.at(&[s, 3, t]), b.at(&[s, 0, t]));
            }
        }
    }

    #[test]
    fn concat_gradient_splits_the_upstream_gradient(
        a in tensor(vec![3, 2], -1.0, 1.0),
        b in tensor(vec![3, 5], -1.0, 1.0),
        w in tensor(vec![3, 7], -1.0, 1.0),
    ) {
        let (a, b) = (a.requiring_grad(), b.requiring_grad());
        let mut tape = Tape::new();
        let (av, bv, wv) = (tape.leaf(&a), tape.leaf(&b), tape.leaf(&w));
        let c = tape.concat(&[av, bv], 1).unwrap();
        let m = tape.mul(c, wv).unwrap();
        let s = tape.sum(m).unwrap();
        let grads = tape.backward(s).unwrap();
        let (ga, gb) = (grads.get(av).unwrap(), grads.get(bv).unwrap());
        for r in 0..3 {
            prop_assert_eq!(&ga[r * 2..r * 2 + 2], &w.values()[r * 7..r * 7 + 2]);
            prop_assert_eq!(&gb[r * 5..r * 5 + 5], &w.values()[r * 7 + 2..r * 7 + 7]);
        }
    }

    #[test]
    fn linear_matches_row_by_row_dot_products(
        x in tensor(vec![3, 4], -1.0, 1.0),
        w in tensor(vec![5, 4], -1.0, 1.0),
        b in tensor(vec![5], -1.0, 1.0),
    ) {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
        let y = tape.linear(xv, wv, bv).unwrap();
        let y = tape.value(y);
        for r in 0..3 {
            for o in 0..5 {
                let want = b.values()[o] + (0..4).map(|i| x.at(&[r, i]) * w.at(&[o, i])).sum::<f64>();
                prop_assert!((y.at(&[r, o]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_shift_invariant(
        x in tensor(vec![4, 6], -3.0, 3.0),
        labels in prop::collection::vec(0usize..6, 4),
    ) {
        let shifted = Tensor::new([4, 6], x.values().iter().map(|v| v + 100.0).collect()).unwrap();
        let mut tape = Tape::new();
        let (a, b) = (tape.leaf(&x), tape.leaf(&shifted));
        let (la, lb) = (tape.cross_entropy(a, &labels).unwrap(), tape.cross_entropy(b, &labels).unwrap());
        for (p, q) in tape.value(la).values().iter().zip(tape.value(lb).values()) {
            prop_assert!(*p >= 0.0);
            prop_assert!((p - q).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn composite_gradients_match_finite_differences(
        x in tensor(vec![2, 3, 5], -1.0, 1.0),
        k in tensor(vec![4, 3, 3], -1.0, 1.0),
        b in tensor(vec![4], -1.0, 1.0),
    ) {
        let report = grad_check(
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 1)?;
                let y = t.relu(y)?;
                let w = t.softmax(y, 2)?;
                let z = t.mul(w, y)?;
                let p = t.mean_axis(z, 2)?;
                let p2 = t.mul(p, p)?;
                t.sum(p2)
            },
            &[x, k, b],
            1e-6,
        )
        .unwrap();
        prop_assert!(report.checked > 0);
        prop_assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
