mod common;

use proptest::prelude::*;
use tcbp::grad::{Tape, Tensor};
use tcbp::sketch::{
    cbp_encode, circular_convolve, count_sketch, init_sketch_params, tcbp_encode, tcbp_project, tensor_sketch,
    SketchMode, SketchParams,
};
use tcbp::FeatureMap;

use common::{direct_convolve, max_rel_err, outer_product_sketch, scaled_err, tcbp_direct, tcbp_grad_direct};

fn vec_in(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #[test]
    fn count_sketch_is_linear(
        (x, y, h, s, d) in (1usize..12, 1usize..10).prop_flat_map(|(n, d)| (
            vec_in(n), vec_in(n),
            prop::collection::vec(0..d, n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), n),
            Just(d),
        )),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = count_sketch(&mix, &h, &s, d).unwrap();
        let cx = count_sketch(&x, &h, &s, d).unwrap();
        let cy = count_sketch(&y, &h, &s, d).unwrap();
        let rhs: Vec<f64> = cx.iter().zip(&cy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_rel_err(&lhs, &rhs, 1.0) < 1e-12);
    }

    #[test]
    fn tensor_sketch_matches_outer_product_sketch(c in 1usize..=4, d in 1usize..=8, seed in any::<u64>(), x in vec_in(4)) {
        let p = init_sketch_params(c, 1, d, seed, SketchMode::Cbp).unwrap();
        let x = &x[..c];
        let want = outer_product_sketch(x, p.h1(), p.s1(), p.h2(), p.s2(), d);
        let got = tensor_sketch(x, &p).unwrap();
        prop_assert!(scaled_err(&got, &want) < 1e-9);
    }

    #[test]
    fn fft_convolution_matches_direct((a, b) in (1usize..40).prop_flat_map(|d| (vec_in(d), vec_in(d)))) {
        let got = circular_convolve(&a, &b).unwrap();
        let want = direct_convolve(&a, &b);
        prop_assert!(scaled_err(&got, &want) < 1e-9);
    }

    #[test]
    fn tcbp_matches_direct_sums(c in 1usize..6, t in 1usize..5, d in 1usize..16, seed in any::<u64>(), x in vec_in(30)) {
        let p = init_sketch_params(c, t, d, seed, SketchMode::Tcbp).unwrap();
        let map = FeatureMap::new(c, t, x[..c * t].to_vec()).unwrap();
        let got = tcbp_encode(&map, &p).unwrap();
        let want = tcbp_direct(map.data(), c, t, p.h1(), p.s1(), p.h2(), p.s2(), d);
        prop_assert!(scaled_err(&got, &want) < 1e-9);
    }

    #[test]
    fn one_hot_lands_on_channel_slot(c in 1usize..8, t in 1usize..5, d in 1usize..12, seed in any::<u64>()) {
        let p = init_sketch_params(c, t, d, seed, SketchMode::Tcbp).unwrap();
        for i in 0..c {
            for tau in 0..t {
                let map = FeatureMap::from_fn(c, t, |r, s| if (r, s) == (i, tau) { 1.0 } else { 0.0 }).unwrap();
                let (u1, u2) = tcbp_project(&map, &p).unwrap();
                for (u, h, s) in [(&u1, p.h1(), p.s1()), (&u2, p.h2(), p.s2())] {
                    for (j, &v) in u.iter().enumerate() {
                        let want = if j == h[i] { f64::from(s[i * t + tau]) } else { 0.0 };
                        prop_assert_eq!(v, want);
                    }
                }
                let y = tcbp_encode(&map, &p).unwrap();
                let slot = (p.h1()[i] + p.h2()[i]) % d;
                for (j, &v) in y.iter().enumerate() {
                    if j != slot {
                        prop_assert!(v.abs() < 1e-12);
                    }
                }
                let sign = f64::from(p.s1()[i * t + tau] * p.s2()[i * t + tau]);
                prop_assert!((y[slot] - sign).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_counts_follow_the_formulas(c in 1usize..300, t in 1usize..8, seed in any::<u64>()) {
        let cbp = init_sketch_params(c, 1, 16, seed, SketchMode::Cbp).unwrap();
        let tcbp = init_sketch_params(c, t, 16, seed, SketchMode::Tcbp).unwrap();
        prop_assert_eq!(cbp.parameter_count(), 2 * 2 * c);
        prop_assert_eq!(tcbp.parameter_count(), 2 * (c + c * t));
        prop_assert_eq!(tcbp.s1().len(), c * t);
    }

    #[test]
    fn serialization_round_trips(c in 1usize..50, t in 1usize..6, d in 1usize..64, seed in any::<u64>(), tcbp in any::<bool>()) {
        let mode = if tcbp { SketchMode::Tcbp } else { SketchMode::Cbp };
        let p = init_sketch_params(c, if tcbp { t } else { 1 }, d, seed, mode).unwrap();
        let back = SketchParams::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.checksum(), p.checksum());
    }
}

#[test]
fn cbp_and_tcbp_agree_at_one_segment() {
    for seed in 0..50u64 {
        let c = 1 + (seed as usize % 9);
        let d = 1 + (seed as usize * 7 % 33);
        let cbp = init_sketch_params(c, 1, d, seed, SketchMode::Cbp).unwrap();
        let tcbp = init_sketch_params(c, 1, d, seed, SketchMode::Tcbp).unwrap();
        let x = FeatureMap::from_fn(c, 1, |i, _| ((i as f64 + 0.3) * (seed as f64 + 1.1)).sin()).unwrap();
        assert_eq!(cbp_encode(&x, &cbp).unwrap(), tcbp_encode(&x, &tcbp).unwrap());
    }
}

/// Tape gradient of `<g, tcbp(x)>` (FFT backward) against direct correlation.
#[test]
fn tcbp_gradient_fft_matches_direct() {
    for seed in 0..20u64 {
        let (c, t, d) = (3 + seed as usize % 4, 1 + seed as usize % 4, [1, 2, 3, 7, 8, 12, 64][seed as usize % 7]);
        let p = init_sketch_params(c, t, d, seed, SketchMode::Tcbp).unwrap();
        let x: Vec<f64> = (0..c * t).map(|k| ((k as f64 + 1.0) * (seed as f64 + 0.7)).cos()).collect();
        let g: Vec<f64> = (0..d).map(|k| ((k as f64 + 2.0) * 1.3 + seed as f64).sin()).collect();

        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(c, t, x.clone()).unwrap());
        let u1 = tape.sketch_temporal(xv, p.h1(), p.s1(), d).unwrap();
        let u2 = tape.sketch_temporal(xv, p.h2(), p.s2(), d).unwrap();
        let y = tape.circ_conv(u1, u2, p.convolver()).unwrap();
        let got = tape.backward(y, &g).unwrap().get(xv).unwrap().to_vec();

        let want = tcbp_grad_direct(&x, &g, c, t, (p.h1(), p.s1()), (p.h2(), p.s2()), d);
        assert!(scaled_err(&got, &want) < 1e-8, "seed {seed}");
    }
}

#[test]
fn shape_errors_are_reported() {
    let p = init_sketch_params(4, 2, 8, 0, SketchMode::Tcbp).unwrap();
    assert!(tcbp_encode(&FeatureMap::zeros(3, 2), &p).is_err());
    assert!(cbp_encode(&FeatureMap::zeros(4, 2), &p).is_err());
    assert!(circular_convolve(&[1.0, 2.0], &[1.0]).is_err());
    assert!(count_sketch(&[1.0], &[9], &[1], 4).is_err());
}
