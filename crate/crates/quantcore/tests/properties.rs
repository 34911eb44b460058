//! Property tests for the quantizer invariants.

use nnkit::Tensor;
use proptest::prelude::*;
use quantcore::{
    compute_scales, dequantize, fake_quantize, quantize_to_int, IntPrecision, Precision,
    Signedness,
};

fn arb_precision() -> impl Strategy<Value = IntPrecision> {
    prop_oneof![
        (2u8..=16).prop_map(|b| IntPrecision::new(b, Signedness::Signed).unwrap()),
        (1u8..=16).prop_map(|b| IntPrecision::new(b, Signedness::Unsigned).unwrap()),
    ]
}

fn arb_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            8 => -4.0f64..4.0,
            1 => -1e6f64..1e6,
            1 => Just(0.0f64),
            1 => prop_oneof![Just(f64::INFINITY), Just(f64::NEG_INFINITY)],
        ],
        1..48,
    )
}

proptest! {
    #[test]
    fn idempotence_bit_exact(values in arb_values(), p in arb_precision(), bound in 1e-4f64..100.0) {
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let n = values.len();
        let x = Tensor::from_vec(&[n, 1], values).unwrap();
        let once = fake_quantize(&x, &scales, range, 1).unwrap();
        let twice = fake_quantize(&once, &scales, range, 1).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_is_preserved_exactly(p in arb_precision(), bound in 0.0f64..100.0) {
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        let y = fake_quantize(&x, &scales, range, 1).unwrap();
        prop_assert_eq!(y.data()[0].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn error_bounded_inside_clipping_window(
        p in arb_precision(),
        bound in 1e-3f64..50.0,
        frac in -1.0f64..1.0,
    ) {
        // draw x inside the pass-through window of the format
        let x_val = match p.signedness() {
            Signedness::Signed => frac * bound,
            Signedness::Unsigned => frac.abs() * bound,
        };
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let s = scales.values()[0];
        let x = Tensor::from_vec(&[1, 1], vec![x_val]).unwrap();
        let y = fake_quantize(&x, &scales, range, 1).unwrap();
        let err = (y.data()[0] - x_val).abs();
        prop_assert!(
            err <= 0.5 / s + 1e-12,
            "err {} exceeds half bucket {}", err, 0.5 / s
        );
    }

    #[test]
    fn clipping_saturates_outside_bounds(
        p in arb_precision(),
        bound in 1e-3f64..50.0,
        over in 1.001f64..1e4,
    ) {
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let s = scales.values()[0];
        let x = Tensor::from_vec(&[2, 1], vec![bound * over, -bound * over]).unwrap();
        let y = fake_quantize(&x, &scales, range, 1).unwrap();
        prop_assert_eq!(y.data()[0], range.hi as f64 / s);
        prop_assert_eq!(y.data()[1], range.lo as f64 / s);
    }

    #[test]
    fn integer_values_stay_in_range(values in arb_values(), p in arb_precision(), bound in 0.0f64..100.0) {
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let n = values.len();
        let x = Tensor::from_vec(&[n, 1], values).unwrap();
        let q = quantize_to_int(&x, &scales, range, 1).unwrap();
        for &v in q.values() {
            prop_assert!(range.lo <= v && v <= range.hi);
        }
    }

    #[test]
    fn fake_quantize_is_monotone(
        mut values in prop::collection::vec(-10.0f64..10.0, 2..32),
        p in arb_precision(),
        bound in 1e-3f64..10.0,
    ) {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let n = values.len();
        let x = Tensor::from_vec(&[n, 1], values).unwrap();
        let y = fake_quantize(&x, &scales, range, 1).unwrap();
        for w in y.data().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn dequantize_of_integers_equals_fake_quantize(
        values in arb_values(),
        p in arb_precision(),
        bound in 1e-4f64..100.0,
    ) {
        let prec = Precision::Int(p);
        let scales = compute_scales(&[bound], &prec).unwrap();
        let range = prec.quant_range().unwrap();
        let n = values.len();
        let x = Tensor::from_vec(&[n, 1], values).unwrap();
        let fq = fake_quantize(&x, &scales, range, 1).unwrap();
        let dq = dequantize(&quantize_to_int(&x, &scales, range, 1).unwrap());
        for (a, b) in fq.data().iter().zip(dq.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
