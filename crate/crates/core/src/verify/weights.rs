use crate::grid::GridSpec;

/// Per-latitude area weights `α(w) = W·cos θ_w / Σ_j cos θ_j`, averaging to one.
#[derive(Clone, Debug, PartialEq)]
pub struct LatitudeWeights(pub Vec<f64>);

pub fn latitude_weights(grid: &GridSpec) -> LatitudeWeights {
    let cos: Vec<f64> = grid
        .lat_degrees
        .iter()
        .map(|d| d.to_radians().cos())
        .collect();
    let total: f64 = cos.iter().sum();
    let n = cos.len() as f64;
    LatitudeWeights(cos.iter().map(|c| n * c / total).collect())
}

impl LatitudeWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_latitudes_at_45_are_unit() {
        let g = GridSpec::global(2, 4).unwrap();
        assert_eq!(g.lat_degrees, vec![45.0, -45.0]);
        let w = latitude_weights(&g);
        assert!((w.0[0] - 1.0).abs() < 1e-15 && (w.0[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mirrored_rows_have_identical_weights() {
        for n in [7, 11, 90, 721] {
            let w = latitude_weights(&GridSpec::global(n, 2 * n).unwrap());
            for i in 0..n / 2 {
                assert_eq!(w.0[i], w.0[n - 1 - i], "{n} latitudes, row {i}");
            }
        }
    }
}
