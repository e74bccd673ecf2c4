//! Squared-cosine repulsion between control points. Off by default.

use ndarray::Array1;

use crate::error::{Error, Result};

fn norms(points: &[Array1<f64>]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::domain("repulsion needs at least two control points"));
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = p.dot(p).sqrt();
            if n == 0.0 {
                Err(Error::domain(format!("control point {i} has zero norm")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// `sum_{i<j} cos^2(theta_i, theta_j)`.
pub fn repulsive_penalty(points: &[Array1<f64>]) -> Result<f64> {
    let n = norms(points)?;
    let mut total = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let c = points[i].dot(&points[j]) / (n[i] * n[j]);
            total += c * c;
        }
    }
    Ok(total)
}

/// Gradient of [`repulsive_penalty`] with respect to every point.
pub fn repulsive_gradient(points: &[Array1<f64>]) -> Result<Vec<Array1<f64>>> {
    let n = norms(points)?;
    let mut grads: Vec<Array1<f64>> = points.iter().map(|p| Array1::zeros(p.len())).collect();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let c = points[i].dot(&points[j]) / (n[i] * n[j]);
            // d cos / d theta_i = theta_j / (|i||j|) - cos theta_i / |i|^2
            grads[i].scaled_add(2.0 * c / (n[i] * n[j]), &points[j]);
            grads[i].scaled_add(-2.0 * c * c / (n[i] * n[i]), &points[i]);
            grads[j].scaled_add(2.0 * c / (n[i] * n[j]), &points[i]);
            grads[j].scaled_add(-2.0 * c * c / (n[j] * n[j]), &points[j]);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn examples() {
        assert_eq!(repulsive_penalty(&[array![1.0, 0.0], array![0.0, 2.0]]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            repulsive_penalty(&[array![1.0, 1.0], array![3.0, 3.0]]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // in the plane two pairs sit at 45 degrees and one at 90
        let planar = [array![1.0, 0.0], array![s, s], array![0.0, 1.0]];
        assert_abs_diff_eq!(repulsive_penalty(&planar).unwrap(), 1.0, epsilon = 1e-15);
        // all three pairs at 45 degrees needs a third dimension
        let x = s * (1.0 - s) / s;
        let spatial = [
            array![1.0, 0.0, 0.0],
            array![s, s, 0.0],
            array![s, x, (1.0 - s * s - x * x).sqrt()],
        ];
        assert_abs_diff_eq!(repulsive_penalty(&spatial).unwrap(), 1.5, epsilon = 1e-14);
        assert!(repulsive_penalty(&[array![1.0]]).is_err());
        assert!(repulsive_penalty(&[array![1.0, 0.0], array![0.0, 0.0]]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pts = vec![array![0.3, -1.2, 0.5], array![1.0, 0.4, -0.2], array![-0.7, 0.1, 0.9]];
        let g = repulsive_gradient(&pts).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..3 {
                let mut plus = pts.clone();
                plus[i][k] += h;
                let mut minus = pts.clone();
                minus[i][k] -= h;
                let fd = (repulsive_penalty(&plus).unwrap() - repulsive_penalty(&minus).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(g[i][k], fd, epsilon = 1e-8);
            }
        }
    }
}
