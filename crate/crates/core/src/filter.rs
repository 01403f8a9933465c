//! Small separable 2-D filters shared by the weighting, compositing and metric code.

use ndarray::Array2;

/// Normalized 1-D Gaussian taps over `[-radius, radius]`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Truncation radius covering three standard deviations.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Out-of-bounds samples count as zero.
    Zero,
    /// Out-of-bounds taps are dropped and the remaining taps renormalized, so
    /// constant regions stay exactly constant up to the border.
    Renormalize,
}

fn convolve_axis(map: &Array2<f64>, taps: &[f64], along_rows: bool, border: Border) -> Array2<f64> {
    let (h, w) = map.dim();
    let r = (taps.len() / 2) as isize;
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let off = k as isize - r;
                let (yy, xx) = if along_rows {
                    (y as isize, x as isize + off)
                } else {
                    (y as isize + off, x as isize)
                };
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                acc += t * map[[yy as usize, xx as usize]];
                mass += t;
            }
            out[[y, x]] = match border {
                Border::Zero => acc,
                Border::Renormalize => {
                    if mass > 0.0 {
                        acc / mass
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    out
}

/// Separable convolution with the same taps along both axes.
pub fn separable(map: &Array2<f64>, taps: &[f64], border: Border) -> Array2<f64> {
    let tmp = convolve_axis(map, taps, true, border);
    convolve_axis(&tmp, taps, false, border)
}

pub fn gaussian_blur(map: &Array2<f64>, sigma: f64, radius: usize, border: Border) -> Array2<f64> {
    separable(map, &gaussian_kernel(sigma, radius), border)
}

/// Zero-padded box sum over a `window x window` neighbourhood centred on each cell.
pub fn box_sum(map: &Array2<f64>, window: usize) -> Array2<f64> {
    if window <= 1 {
        return map.clone();
    }
    let (h, w) = map.dim();
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        let y0 = y.saturating_sub(before);
        let y1 = (y + after).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(before);
            let x1 = (x + after).min(w - 1);
            let mut acc = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    acc += map[[yy, xx]];
                }
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Grayscale dilation: each cell becomes the max over the square of half-width
/// `radius` around it, clipped to the map.
pub fn dilate_max(map: &Array2<f32>, radius: usize) -> Array2<f32> {
    if radius == 0 {
        return map.clone();
    }
    let (h, w) = map.dim();
    // Square elements are separable for max.
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius).min(w - 1);
            tmp[[y, x]] = (x0..=x1).map(|xx| map[[y, xx]]).fold(f32::NEG_INFINITY, f32::max);
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius).min(h - 1);
        for x in 0..w {
            out[[y, x]] = (y0..=y1).map(|yy| tmp[[yy, x]]).fold(f32::NEG_INFINITY, f32::max);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one_and_is_symmetric() {
        let k = gaussian_kernel(1.5, 5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn renormalized_blur_keeps_constants_exact() {
        let ones = Array2::<f64>::ones((9, 7));
        let b = gaussian_blur(&ones, 1.5, 3, Border::Renormalize);
        assert!(b.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn box_sum_counts_neighbours() {
        let ones = Array2::<f64>::ones((5, 5));
        let s = box_sum(&ones, 3);
        assert_eq!(s[[2, 2]], 9.0);
        assert_eq!(s[[0, 0]], 4.0);
    }

    #[test]
    fn dilation_grows_a_dot_into_a_square() {
        let mut m = Array2::<f32>::zeros((9, 9));
        m[[4, 4]] = 1.0;
        let d = dilate_max(&m, 2);
        for y in 0..9 {
            for x in 0..9 {
                let inside = (2..=6).contains(&y) && (2..=6).contains(&x);
                assert_eq!(d[[y, x]], if inside { 1.0 } else { 0.0 });
            }
        }
    }
}
