use lumafix_autograd::Tensor;

/// Display transfer exponent assumed for encoded pixel values.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Exposure change of `ev` stops: gain `2^ev` in linear light, clipped,
/// re-encoded.
pub fn apply_exposure_shift(img: &Tensor, ev: f64) -> Tensor {
    let gain = ev.exp2();
    img.map(|v| {
        let lin = v.clamp(0.0, 1.0).powf(DISPLAY_GAMMA) * gain;
        lin.clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA)
    })
}

/// `clip(illum * img^gamma)`.
pub fn apply_lowlight(img: &Tensor, gamma: f64, illum: f64) -> Tensor {
    img.map(|v| (illum * v.clamp(0.0, 1.0).powf(gamma)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 1], v)
    }

    #[test]
    fn exposure_cases() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![0.0, 0.4, 1.0]).unwrap();
        assert!(apply_exposure_shift(&x, 0.0).max_abs_diff(&x).unwrap() < 1e-15);
        let hand = (0.4f64.powf(2.2) * 2.0).powf(1.0 / 2.2);
        let y = apply_exposure_shift(&px(0.4), 1.0).data()[0];
        assert!((y - hand).abs() < 1e-12);
        // gamma is a pure power, so +1 stop scales encoded values by 2^(1/2.2)
        assert!((y - 0.4 * 2f64.powf(1.0 / 2.2)).abs() < 1e-12);
        // 0.5487 when the linear value is rounded to 0.1337 first
        assert!((y - 0.5487).abs() < 1e-3, "{y}");
        assert_eq!(apply_exposure_shift(&px(0.6), 4.0).data()[0], 1.0);
    }

    #[test]
    fn lowlight_cases() {
        assert_eq!(apply_lowlight(&px(0.37), 1.0, 1.0).data()[0], 0.37);
        assert_eq!(apply_lowlight(&px(0.5), 2.0, 1.0).data()[0], 0.25);
        assert_eq!(apply_lowlight(&px(0.5), 2.0, 0.5).data()[0], 0.125);
    }

    proptest! {
        #[test]
        fn exposure_round_trip_with_headroom(ev in 0.5f64..3.5, frac in 0.0f64..1.0) {
            // linear value below 2^-|ev| cannot clip when brightened
            let lin = frac * (-ev).exp2();
            let v = lin.powf(1.0 / DISPLAY_GAMMA);
            let up = apply_exposure_shift(&px(v), ev);
            let back = apply_exposure_shift(&up, -ev).data()[0];
            prop_assert!((back - v).abs() < 1e-4);
            let down = apply_exposure_shift(&px(v), -ev);
            let back = apply_exposure_shift(&down, ev).data()[0];
            prop_assert!((back - v).abs() < 1e-4);
        }

        #[test]
        fn lowlight_is_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0, g in 0.1f64..5.0, i in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ylo = apply_lowlight(&px(lo), g, i).data()[0];
            let yhi = apply_lowlight(&px(hi), g, i).data()[0];
            prop_assert!(ylo <= yhi);
            prop_assert!((0.0..=1.0).contains(&ylo) && (0.0..=1.0).contains(&yhi));
        }

        #[test]
        fn exposure_stays_in_unit_range(v in -0.5f64..1.5, ev in -6.0f64..6.0) {
            let y = apply_exposure_shift(&px(v), ev).data()[0];
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }
}
