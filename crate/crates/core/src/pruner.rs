//! Gradient-statistic pruning.
//!
//! Each pruning step removes the `k` live parameters with the smallest
//! running squared-gradient estimate. The statistic itself comes from the
//! caller and may be refreshed between steps.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("cannot prune {k} parameters, only {live} are live")]
    TooMany { k: usize, live: usize },
    #[error("arrays differ in length: {values} values, {grad_sq} gradient statistics, {mask} mask entries")]
    LengthMismatch { values: usize, grad_sq: usize, mask: usize },
    #[error("gradient statistic at index {0} is not comparable")]
    Incomparable(usize),
    #[error("target sparsity must lie in [0, 1), got {0}")]
    BadSparsity(f64),
    #[error("at least one pruning step is required")]
    NoSteps,
    #[error("row {row}: {reason}")]
    Csv { row: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneState<T> {
    values: Vec<T>,
    grad_sq: Vec<T>,
    mask: Vec<bool>,
}

impl<T: Copy + PartialOrd> PruneState<T> {
    /// All parameters live.
    pub fn new(values: Vec<T>, grad_sq: Vec<T>) -> Result<Self, PruneError> {
        let mask = vec![true; values.len()];
        Self::with_mask(values, grad_sq, mask)
    }

    pub fn with_mask(values: Vec<T>, grad_sq: Vec<T>, mask: Vec<bool>) -> Result<Self, PruneError> {
        if values.len() != grad_sq.len() || values.len() != mask.len() {
            return Err(PruneError::LengthMismatch {
                values: values.len(),
                grad_sq: grad_sq.len(),
                mask: mask.len(),
            });
        }
        Ok(PruneState { values, grad_sq, mask })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn grad_sq(&self) -> &[T] {
        &self.grad_sq
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn live_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            1.0 - self.live_count() as f64 / self.len() as f64
        }
    }

    /// Replaces the gradient statistic, e.g. after more training.
    pub fn refresh_grad_sq(&mut self, grad_sq: Vec<T>) -> Result<(), PruneError> {
        if grad_sq.len() != self.values.len() {
            return Err(PruneError::LengthMismatch {
                values: self.values.len(),
                grad_sq: grad_sq.len(),
                mask: self.mask.len(),
            });
        }
        self.grad_sq = grad_sq;
        Ok(())
    }

    /// Indices that a step of size `k` would prune, in ascending order of
    /// the statistic (lower index first on ties).
    pub fn select(&self, k: usize) -> Result<Vec<usize>, PruneError> {
        let live = self.live_count();
        if k > live {
            return Err(PruneError::TooMany { k, live });
        }
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.mask[i]).collect();
        if let Some(&bad) = idx.iter().find(|&&i| self.grad_sq[i].partial_cmp(&self.grad_sq[i]).is_none()) {
            return Err(PruneError::Incomparable(bad));
        }
        let cmp = |&i: &usize, &j: &usize| {
            self.grad_sq[i]
                .partial_cmp(&self.grad_sq[j])
                .unwrap_or(Ordering::Equal)
                .then(i.cmp(&j))
        };
        if k < idx.len() && k > 0 {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        idx.truncate(k);
        idx.sort_by(cmp);
        Ok(idx)
    }

    /// Prunes the `k` live parameters with the smallest statistic.
    pub fn prune_step(&self, k: usize) -> Result<Self, PruneError> {
        let mut next = self.clone();
        for i in self.select(k)? {
            next.mask[i] = false;
        }
        Ok(next)
    }
}

pub fn adam_prune_step<T: Copy + PartialOrd>(s: &PruneState<T>, k: usize) -> Result<PruneState<T>, PruneError> {
    s.prune_step(k)
}

/// Per-step prune counts summing to `round_half_even(total * target)`,
/// as equal as possible with earlier steps taking the remainder.
pub fn sparsity_schedule(total_params: usize, target_sparsity: f64, steps: usize) -> Result<Vec<usize>, PruneError> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(PruneError::BadSparsity(target_sparsity));
    }
    if steps == 0 {
        return Err(PruneError::NoSteps);
    }
    let to_prune = (total_params as f64 * target_sparsity).round_ties_even() as usize;
    let (base, extra) = (to_prune / steps, to_prune % steps);
    Ok((0..steps).map(|i| base + usize::from(i < extra)).collect())
}

/// Runs a schedule, letting `refresh` update the statistic before each step.
pub fn run_schedule<T, F>(mut state: PruneState<T>, schedule: &[usize], mut refresh: F) -> Result<Vec<PruneState<T>>, PruneError>
where
    T: Copy + PartialOrd,
    F: FnMut(usize, &PruneState<T>) -> Option<Vec<T>>,
{
    let mut history = Vec::with_capacity(schedule.len());
    for (step, &k) in schedule.iter().enumerate() {
        if let Some(g) = refresh(step, &state) {
            state.refresh_grad_sq(g)?;
        }
        state = state.prune_step(k)?;
        history.push(state.clone());
    }
    Ok(history)
}

impl PruneState<f64> {
    /// `index,value,grad_sq,live`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,value,grad_sq,live\n");
        for i in 0..self.len() {
            out.push_str(&format!("{i},{},{},{}\n", self.values[i], self.grad_sq[i], u8::from(self.mask[i])));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PruneError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let (mut values, mut grad_sq, mut mask) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in reader.records().enumerate() {
            let err = |reason: String| PruneError::Csv { row: row + 1, reason };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", rec.len())));
            }
            let index: usize = rec[0].parse().map_err(|_| err(format!("bad index `{}`", &rec[0])))?;
            if index != row {
                return Err(err(format!("index {index} out of sequence")));
            }
            values.push(rec[1].parse().map_err(|_| err(format!("bad value `{}`", &rec[1])))?);
            grad_sq.push(rec[2].parse().map_err(|_| err(format!("bad grad_sq `{}`", &rec[2])))?);
            mask.push(match &rec[3] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(err(format!("bad live flag `{other}`"))),
            });
        }
        Self::with_mask(values, grad_sq, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prunes_two_smallest() {
        let s = PruneState::new(vec![1.0; 4], vec![0.9, 0.1, 0.5, 0.05]).unwrap();
        assert_eq!(s.select(2).unwrap(), vec![3, 1]);
        let next = adam_prune_step(&s, 2).unwrap();
        assert_eq!(next.mask(), &[true, false, true, false]);
    }

    #[test]
    fn zero_k_is_identity() {
        let s = PruneState::new(vec![1.0; 3], vec![0.3, 0.2, 0.1]).unwrap();
        assert_eq!(adam_prune_step(&s, 0).unwrap(), s);
    }

    #[test]
    fn too_many_is_an_error() {
        let s = PruneState::with_mask(vec![1.0; 3], vec![0.3, 0.2, 0.1], vec![true, false, true]).unwrap();
        assert_eq!(s.prune_step(3).unwrap_err(), PruneError::TooMany { k: 3, live: 2 });
    }

    #[test]
    fn ties_break_by_index_and_pruned_stay_pruned() {
        let s = PruneState::with_mask(vec![0.0; 5], vec![0.2, 0.1, 0.1, 0.0, 0.1], vec![true, true, true, false, true]).unwrap();
        assert_eq!(s.select(2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn nan_statistic_is_rejected() {
        let s = PruneState::new(vec![0.0; 2], vec![f64::NAN, 1.0]).unwrap();
        assert_eq!(s.select(1).unwrap_err(), PruneError::Incomparable(0));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(PruneState::new(vec![1.0, 2.0], vec![1.0]), Err(PruneError::LengthMismatch { .. })));
    }

    #[test]
    fn schedules() {
        assert_eq!(sparsity_schedule(100, 0.8, 4).unwrap(), vec![20, 20, 20, 20]);
        // 10 * 0.85 = 8.5 rounds to even.
        assert_eq!(sparsity_schedule(10, 0.85, 4).unwrap(), vec![2, 2, 2, 2]);
        assert_eq!(sparsity_schedule(10, 0.9, 4).unwrap(), vec![3, 2, 2, 2]);
        assert_eq!(sparsity_schedule(10, 0.95, 4).unwrap(), vec![3, 3, 2, 2]);
        assert_eq!(sparsity_schedule(100, 0.0, 3).unwrap(), vec![0, 0, 0]);
        assert!(sparsity_schedule(100, 1.0, 3).is_err());
        assert!(sparsity_schedule(100, 0.5, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = PruneState::with_mask(vec![0.5, -1.25], vec![0.01, 2.0], vec![true, false]).unwrap();
        assert_eq!(PruneState::from_csv(&s.to_csv()).unwrap(), s);
        assert!(PruneState::from_csv("index,value,grad_sq,live\n1,0,0,1\n").is_err());
        assert!(PruneState::from_csv("index,value,grad_sq,live\n0,0,0,maybe\n").is_err());
    }
}
