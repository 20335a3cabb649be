//! Moment checks on the noise samplers, 3-standard-error gates.

use upcycled_fl::models::{ModelVector, Shape};
use upcycled_fl::privacy::{gaussian_perturb, sample_exp_norm_noise};
use upcycled_fl::rng::{stream, Purpose};

const DRAWS: usize = 100_000;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn within(xs: &[f64], target: f64) -> bool {
    let (m, se) = mean_se(xs);
    (m - target).abs() <= 3.0 * se
}

#[test]
fn gaussian_noise_has_diagonal_covariance() {
    let shape = Shape::new(1, 2);
    let sigma = 1.5;
    let zero = ModelVector::zeros(shape);
    let mut rng = stream(21, Purpose::OutputNoise, 0, 0);
    let draws: Vec<Vec<f64>> = (0..DRAWS)
        .map(|_| gaussian_perturb(&zero, sigma, &mut rng).into_values())
        .collect();
    for i in 0..shape.len() {
        let coord: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        assert!(within(&coord, 0.0), "mean of coordinate {i}");
        for j in i..shape.len() {
            let prod: Vec<f64> = draws.iter().map(|d| d[i] * d[j]).collect();
            let target = if i == j { sigma * sigma } else { 0.0 };
            assert!(within(&prod, target), "covariance ({i},{j})");
        }
    }
}

#[test]
fn perturbation_is_centred_on_the_input() {
    let shape = Shape::new(2, 2);
    let v = ModelVector::from_values(shape, vec![1.0, -2.0, 0.5, 3.0, 0.0, -0.25]).unwrap();
    let mut rng = stream(22, Purpose::OutputNoise, 0, 0);
    // One pooled gate over every coordinate's residual.
    let residuals: Vec<f64> = (0..DRAWS)
        .flat_map(|_| {
            let d = gaussian_perturb(&v, 0.3, &mut rng).into_values();
            d.into_iter().zip(v.values()).map(|(x, t)| x - t).collect::<Vec<_>>()
        })
        .collect();
    assert!(within(&residuals, 0.0));
}

#[test]
fn exp_norm_radius_is_gamma() {
    for (dim, alpha) in [(1usize, 0.5), (3, 2.0), (44, 10.0)] {
        let mut rng = stream(23, Purpose::ObjectiveNoise, dim as u64, 0);
        let norms: Vec<f64> = (0..DRAWS)
            .map(|_| sample_exp_norm_noise(dim, alpha, &mut rng).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let d = dim as f64;
        assert!(within(&norms, d / alpha), "mean for dim {dim}");
        let (m, _) = mean_se(&norms);
        let sq_dev: Vec<f64> = norms.iter().map(|r| (r - m).powi(2)).collect();
        assert!(within(&sq_dev, d / (alpha * alpha)), "variance for dim {dim}");
    }
}

#[test]
fn exp_norm_direction_is_isotropic() {
    let dim = 5;
    let mut rng = stream(24, Purpose::ObjectiveNoise, 0, 0);
    let units: Vec<Vec<f64>> = (0..DRAWS)
        .map(|_| {
            let n = sample_exp_norm_noise(dim, 1.0, &mut rng);
            let r = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            n.iter().map(|x| x / r).collect()
        })
        .collect();
    for j in 0..dim {
        let coord: Vec<f64> = units.iter().map(|u| u[j]).collect();
        assert!(within(&coord, 0.0));
        let sq: Vec<f64> = units.iter().map(|u| u[j] * u[j]).collect();
        assert!(within(&sq, 1.0 / dim as f64));
    }
}
