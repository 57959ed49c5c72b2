//! Soft dynamic time warping with squared Euclidean ground cost.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

/// Stands in for +∞ on the DP boundary so gradients never see `inf - inf`.
pub const SENTINEL: f64 = 1e300;

/// Largest N or M accepted by [`enumerate_paths`].
pub const MAX_ENUMERATION: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SdtwError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("feature dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("path enumeration limited to {MAX_ENUMERATION}x{MAX_ENUMERATION}, got {0}x{1}")]
    TooLarge(usize, usize),
}

/// Smoothed minimum `-γ log Σ exp(-v/γ)`, stabilised by subtracting the
/// hard minimum. Sentinel inputs get zero weight.
pub fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

fn check(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(), SdtwError> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(SdtwError::EmptySequence);
    }
    if x.ncols() != y.ncols() {
        return Err(SdtwError::DimMismatch(x.ncols(), y.ncols()));
    }
    Ok(())
}

/// Pairwise squared distances `Δ[i, j] = ‖x_i − y_j‖²`.
pub fn cost_matrix(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        x.row(i)
            .iter()
            .zip(y.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// DP table from a forward pass, `(N+1) × (M+1)` with the boundary row and
/// column held at [`SENTINEL`].
#[derive(Clone, Debug)]
pub struct Alignment {
    pub cost: Array2<f64>,
    pub r: Array2<f64>,
    pub gamma: f64,
}

impl Alignment {
    pub fn value(&self) -> f64 {
        self.r[[self.cost.nrows(), self.cost.ncols()]]
    }
}

pub fn sdtw_forward(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<Alignment, SdtwError> {
    check(x, y)?;
    if !(gamma > 0.0) {
        return Err(SdtwError::BadGamma(gamma));
    }
    let cost = cost_matrix(x, y);
    let (n, m) = cost.dim();
    let mut r = Array2::from_elem((n + 1, m + 1), SENTINEL);
    r[[0, 0]] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let soft = softmin3(r[[i - 1, j]], r[[i, j - 1]], r[[i - 1, j - 1]], gamma);
            r[[i, j]] = cost[[i - 1, j - 1]] + soft;
        }
    }
    Ok(Alignment { cost, r, gamma })
}

/// Expected alignment matrix `E = ∂R(N,M)/∂Δ`, shape `N × M`.
pub fn expected_alignment(al: &Alignment) -> Array2<f64> {
    let (n, m) = al.cost.dim();
    let g = al.gamma;
    // Padded copies: index (i, j) here is cell (i, j) of the 1-based DP.
    let mut r = Array2::from_elem((n + 2, m + 2), -SENTINEL);
    let mut d = Array2::zeros((n + 2, m + 2));
    for i in 1..=n {
        for j in 1..=m {
            r[[i, j]] = al.r[[i, j]];
            d[[i, j]] = al.cost[[i - 1, j - 1]];
        }
    }
    r[[n + 1, m + 1]] = al.r[[n, m]];
    let mut e = Array2::zeros((n + 2, m + 2));
    e[[n + 1, m + 1]] = 1.0;
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let here = r[[i, j]];
            let w = |ii: usize, jj: usize| ((r[[ii, jj]] - here - d[[ii, jj]]) / g).exp();
            e[[i, j]] = e[[i + 1, j]] * w(i + 1, j)
                + e[[i, j + 1]] * w(i, j + 1)
                + e[[i + 1, j + 1]] * w(i + 1, j + 1);
        }
    }
    e.slice(ndarray::s![1..=n, 1..=m]).to_owned()
}

/// Gradients of the soft-DTW value with respect to both inputs.
pub fn sdtw_grad(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    al: &Alignment,
) -> (Array2<f64>, Array2<f64>) {
    let e = expected_alignment(al);
    let mut gx = Array2::zeros(x.raw_dim());
    let mut gy = Array2::zeros(y.raw_dim());
    for ((i, j), &w) in e.indexed_iter() {
        for k in 0..x.ncols() {
            let diff = 2.0 * w * (x[[i, k]] - y[[j, k]]);
            gx[[i, k]] += diff;
            gy[[j, k]] -= diff;
        }
    }
    (gx, gy)
}

/// Soft-DTW value and gradient with respect to `x` in one call.
pub fn sdtw_value_grad(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<(f64, Array2<f64>), SdtwError> {
    let al = sdtw_forward(x, y, gamma)?;
    let (gx, _) = sdtw_grad(x, y, &al);
    Ok((al.value(), gx))
}

/// Classic DTW with the same boundary convention.
pub fn hard_dtw(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64, SdtwError> {
    check(x, y)?;
    let cost = cost_matrix(x, y);
    let (n, m) = cost.dim();
    let mut r = Array2::from_elem((n + 1, m + 1), f64::INFINITY);
    r[[0, 0]] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            r[[i, j]] =
                cost[[i - 1, j - 1]] + r[[i - 1, j]].min(r[[i, j - 1]]).min(r[[i - 1, j - 1]]);
        }
    }
    Ok(r[[n, m]])
}

/// Every monotone path from (0, 0) to (n-1, m-1) using right, down and
/// diagonal steps, as 0-based cell lists.
pub fn enumerate_paths(n: usize, m: usize) -> Result<Vec<Vec<(usize, usize)>>, SdtwError> {
    if n == 0 || m == 0 {
        return Err(SdtwError::EmptySequence);
    }
    if n > MAX_ENUMERATION || m > MAX_ENUMERATION {
        return Err(SdtwError::TooLarge(n, m));
    }
    fn extend(
        path: &mut Vec<(usize, usize)>,
        n: usize,
        m: usize,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let (i, j) = *path.last().expect("path starts non-empty");
        if (i, j) == (n - 1, m - 1) {
            out.push(path.clone());
            return;
        }
        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
            if i + di < n && j + dj < m {
                path.push((i + di, j + dj));
                extend(path, n, m, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut vec![(0, 0)], n, m, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmin_cases() {
        assert_eq!(softmin3(0.0, SENTINEL, SENTINEL, 1.0), 0.0);
        assert!((softmin3(1.0, 1.0, 1.0, 1.0) - (1.0 - 3f64.ln())).abs() < 1e-15);
        assert!((softmin3(2.0, 5.0, 7.0, 1e-4) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn trivial_alignments() {
        let x = array![[1.0, 2.0]];
        assert_eq!(sdtw_forward(x.view(), x.view(), 1.0).unwrap().value(), 0.0);
        let y = array![[3.0, -1.0]];
        let v = sdtw_forward(x.view(), y.view(), 1.0).unwrap().value();
        assert!((v - 13.0).abs() < 1e-12);
        let (gx, gy) = {
            let al = sdtw_forward(x.view(), y.view(), 1.0).unwrap();
            sdtw_grad(x.view(), y.view(), &al)
        };
        assert_eq!(gx, array![[-4.0, 6.0]]);
        assert_eq!(gy, array![[4.0, -6.0]]);
    }

    #[test]
    fn hard_dtw_cases() {
        let a = array![[0.0], [0.0], [0.0]];
        let b = array![[1.0], [1.0], [1.0]];
        assert_eq!(hard_dtw(a.view(), b.view()).unwrap(), 3.0);
        assert_eq!(hard_dtw(b.view(), b.view()).unwrap(), 0.0);
    }

    #[test]
    fn path_counts_are_delannoy() {
        assert_eq!(enumerate_paths(1, 1).unwrap().len(), 1);
        assert_eq!(enumerate_paths(2, 2).unwrap().len(), 3);
        assert_eq!(enumerate_paths(3, 3).unwrap().len(), 13);
        assert_eq!(enumerate_paths(5, 5).unwrap().len(), 321);
        assert!(matches!(
            enumerate_paths(9, 2),
            Err(SdtwError::TooLarge(9, 2))
        ));
    }

    #[test]
    fn errors() {
        let e = Array2::<f64>::zeros((0, 2));
        let x = array![[1.0, 2.0]];
        assert_eq!(
            sdtw_forward(e.view(), x.view(), 1.0).unwrap_err(),
            SdtwError::EmptySequence
        );
        let z = array![[1.0]];
        assert!(matches!(
            sdtw_forward(x.view(), z.view(), 1.0),
            Err(SdtwError::DimMismatch(2, 1))
        ));
        assert!(matches!(
            sdtw_forward(x.view(), x.view(), 0.0),
            Err(SdtwError::BadGamma(_))
        ));
    }

    #[test]
    fn alignment_weights_are_probabilities_at_corners() {
        let x = array![[0.1], [0.5], [-0.3], [0.9]];
        let y = array![[0.2], [0.0], [0.7]];
        let al = sdtw_forward(x.view(), y.view(), 1.0).unwrap();
        let e = expected_alignment(&al);
        // Every path visits both corner cells.
        assert!((e[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((e[[3, 2]] - 1.0).abs() < 1e-12);
        assert!(e.iter().all(|&w| (0.0..=1.0 + 1e-12).contains(&w)));
    }

    proptest::proptest! {
        #[test]
        fn self_alignment_is_finite(v in proptest::collection::vec(-5.0f64..5.0, 2..24)) {
            let x = Array2::from_shape_vec((v.len() / 2, 2), v[..v.len() / 2 * 2].to_vec()).unwrap();
            let al = sdtw_forward(x.view(), x.view(), 1.0).unwrap();
            proptest::prop_assert!(al.value().is_finite());
            let (gx, gy) = sdtw_grad(x.view(), x.view(), &al);
            proptest::prop_assert!(gx.iter().chain(gy.iter()).all(|g| g.is_finite()));
        }

        #[test]
        fn soft_below_hard(v in proptest::collection::vec(-3.0f64..3.0, 8), g in 0.01f64..2.0) {
            let x = Array2::from_shape_vec((4, 1), v[..4].to_vec()).unwrap();
            let y = Array2::from_shape_vec((4, 1), v[4..].to_vec()).unwrap();
            let soft = sdtw_forward(x.view(), y.view(), g).unwrap().value();
            proptest::prop_assert!(soft <= hard_dtw(x.view(), y.view()).unwrap() + 1e-12);
        }
    }
}
