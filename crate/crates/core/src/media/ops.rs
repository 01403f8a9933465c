use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::{Frame, GrayFrame};
use crate::error::{Error, Result};

/// BT.601 luma coefficients for red, green, blue.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

pub fn to_grayscale(frame: &Frame) -> GrayFrame {
    let px = frame.pixels();
    let intensity = px.map_axis(Axis(2), |rgb| {
        let y = LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2];
        y.clamp(0.0, 1.0)
    });
    GrayFrame { intensity }
}

/// Elementwise `|b - a|`.
pub fn frame_difference(a: &GrayFrame, b: &GrayFrame) -> Result<Array2<f32>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "frame_difference: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Zip::from(&a.intensity)
        .and(&b.intensity)
        .map_collect(|&x, &y| (y - x).abs()))
}

/// Area-weighted resampling. Every output cell averages the input cells it
/// covers, weighted by overlap, so the output range stays inside the input range.
pub fn resize_area(map: ArrayView2<'_, f32>, out_h: usize, out_w: usize) -> Result<Array2<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w) = map.dim();
    if in_h == 0 || in_w == 0 {
        return Err(Error::invalid("cannot resize an empty map"));
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(map.to_owned());
    }
    let rows = overlap_weights(in_h, out_h);
    let cols = overlap_weights(in_w, out_w);
    let (lo, hi) = map
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for (oy, row_w) in rows.iter().enumerate() {
        for (ox, col_w) in cols.iter().enumerate() {
            let mut acc = 0.0f64;
            let mut mass = 0.0f64;
            for &(iy, wy) in row_w {
                for &(ix, wx) in col_w {
                    let w = wy * wx;
                    acc += w * f64::from(map[[iy, ix]]);
                    mass += w;
                }
            }
            out[[oy, ox]] = ((acc / mass) as f32).clamp(lo, hi);
        }
    }
    Ok(out)
}

/// For each output index, the input indices it overlaps and the overlap length.
fn overlap_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let start = o as f64 * scale;
            let end = (o + 1) as f64 * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let w = end.min(i as f64 + 1.0) - start.max(i as f64);
                    (w > 1e-12).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn gray(v: f32, h: usize, w: usize) -> GrayFrame {
        GrayFrame {
            intensity: Array2::from_elem((h, w), v),
        }
    }

    #[test]
    fn grayscale_of_white_black_red() {
        let white = to_grayscale(&Frame::filled(8, 8, [1.0; 3]).unwrap());
        assert!(white.intensity.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let black = to_grayscale(&Frame::filled(8, 8, [0.0; 3]).unwrap());
        assert!(black.intensity.iter().all(|&v| v == 0.0));
        let red = to_grayscale(&Frame::filled(8, 8, [1.0, 0.0, 0.0]).unwrap());
        assert!(red.intensity.iter().all(|&v| (v - 0.299).abs() < 1e-7));
    }

    #[test]
    fn resize_examples() {
        let c = Array2::from_elem((13, 7), 0.37f32);
        let r = resize_area(c.view(), 4, 3).unwrap();
        for &v in &r {
            assert_abs_diff_eq!(v, 0.37, epsilon = 1e-6);
        }
        let m = array![[0.0f32, 1.0], [0.0, 1.0]];
        assert_abs_diff_eq!(resize_area(m.view(), 1, 1).unwrap()[[0, 0]], 0.5, epsilon = 1e-7);
        let id = resize_area(m.view(), 2, 2).unwrap();
        assert_eq!(id, m);
        assert!(resize_area(m.view(), 0, 2).is_err());
    }

    #[test]
    fn resize_fractional_ratio_matches_hand_weights() {
        // 3 -> 2: output 0 covers [0, 1.5), output 1 covers [1.5, 3).
        let m = array![[0.0f32, 3.0, 6.0]];
        let r = resize_area(m.view(), 1, 2).unwrap();
        assert_abs_diff_eq!(r[[0, 0]], (0.0 + 0.5 * 3.0) / 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(r[[0, 1]], (0.5 * 3.0 + 6.0) / 1.5, epsilon = 1e-6);
    }

    #[test]
    fn difference_examples() {
        assert!(frame_difference(&gray(0.4, 8, 8), &gray(0.4, 8, 8))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(frame_difference(&gray(0.0, 8, 8), &gray(1.0, 8, 8))
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        assert!(frame_difference(&gray(0.3, 8, 8), &gray(0.8, 8, 8))
            .unwrap()
            .iter()
            .all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(frame_difference(&gray(0.3, 8, 8), &gray(0.8, 8, 9)).is_err());
    }

    proptest! {
        #[test]
        fn grayscale_in_unit_range(vals in proptest::collection::vec(0.0f32..=1.0, 8 * 8 * 3)) {
            let f = Frame::new(Array3::from_shape_vec((8, 8, 3), vals).unwrap()).unwrap();
            let g = to_grayscale(&f);
            prop_assert!(g.intensity.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn resize_commutes_with_offset(
            vals in proptest::collection::vec(0.0f32..1.0, 12 * 10),
            c in -2.0f32..2.0,
            oh in 1usize..12, ow in 1usize..10,
        ) {
            let m = Array2::from_shape_vec((12, 10), vals).unwrap();
            let a = resize_area(m.view(), oh, ow).unwrap().mapv(|v| v + c);
            let b = resize_area(m.mapv(|v| v + c).view(), oh, ow).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
            let (lo, hi) = (m.iter().cloned().fold(f32::MAX, f32::min), m.iter().cloned().fold(f32::MIN, f32::max));
            let r = resize_area(m.view(), oh, ow).unwrap();
            prop_assert!(r.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn difference_symmetric(
            a in proptest::collection::vec(0.0f32..=1.0, 64),
            b in proptest::collection::vec(0.0f32..=1.0, 64),
        ) {
            let ga = GrayFrame { intensity: Array2::from_shape_vec((8, 8), a).unwrap() };
            let gb = GrayFrame { intensity: Array2::from_shape_vec((8, 8), b).unwrap() };
            prop_assert_eq!(frame_difference(&ga, &gb).unwrap(), frame_difference(&gb, &ga).unwrap());
        }
    }
}
