use eivuq::{Error, Result};

/// `‖pred − ref‖₂ / ‖ref‖₂`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeError(format!(
            "{} predictions for {} reference values",
            pred.len(),
            reference.len()
        )));
    }
    let den = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(Error::InvalidInput("reference field has zero norm".into()));
    }
    let num = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>().sqrt();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let r = [3.0, -4.0, 1.0, 2.0];
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert!((relative_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        let c = 0.3;
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want = c * (r.len() as f64).sqrt() / norm;
        assert!((relative_l2(&shifted, &r).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(relative_l2(&[1.0], &[0.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(relative_l2(&[1.0, 2.0], &[1.0]), Err(Error::ShapeError(_))));
    }
}
