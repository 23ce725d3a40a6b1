use serde::{Deserialize, Serialize};

/// Per-action linear weights over sparse binary features:
/// `value(a) = sum of w[a][i] over the active indices i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    actions: usize,
    features: usize,
    w: Vec<f64>,
}

impl LinearWeights {
    pub fn zeros(actions: usize, features: usize) -> Self {
        LinearWeights {
            actions,
            features,
            w: vec![0.0; actions * features],
        }
    }

    pub fn from_rows(actions: usize, features: usize, w: Vec<f64>) -> Option<Self> {
        (w.len() == actions * features).then_some(LinearWeights {
            actions,
            features,
            w,
        })
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.w[action * self.features..(action + 1) * self.features]
    }

    pub fn row_mut(&mut self, action: usize) -> &mut [f64] {
        &mut self.w[action * self.features..(action + 1) * self.features]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn value(&self, action: usize, active: &[usize]) -> f64 {
        let row = self.row(action);
        active.iter().map(|&i| row[i]).sum()
    }

    pub fn values(&self, active: &[usize]) -> Vec<f64> {
        (0..self.actions).map(|a| self.value(a, active)).collect()
    }

    /// Adds `delta` to every active weight of `action`.
    pub fn add(&mut self, action: usize, active: &[usize], delta: f64) {
        let row = self.row_mut(action);
        for &i in active {
            row[i] += delta;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.w.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn fill(&mut self, value: f64) {
        self.w.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0, -2.0, -0.5]), 2);
    }

    #[test]
    fn value_sums_active() {
        let mut w = LinearWeights::zeros(2, 4);
        w.add(1, &[0, 3], 0.25);
        assert_eq!(w.value(1, &[0, 3]), 0.5);
        assert_eq!(w.value(1, &[1]), 0.0);
        assert_eq!(w.value(0, &[0, 3]), 0.0);
    }
}
