use super::TrainError;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by `N`).
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// RMSE divided by the population standard deviation of `targets`, so the
/// constant mean predictor scores exactly 1.
pub fn normalized_rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() {
        return Err(TrainError::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(TrainError::TooFewSamples(targets.len()));
    }
    let std = population_std(targets);
    if !(std > 0.0) {
        return Err(TrainError::DegenerateTarget);
    }
    // Same summation shape as `population_std` so the mean predictor
    // reproduces the denominator bit for bit.
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt() / std)
}
