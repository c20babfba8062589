use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Fails if any index is in both partitions.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut test = self.test.clone();
        test.sort_unstable();
        if let Some(i) = self.train.iter().find(|i| test.binary_search(i).is_ok()) {
            return Err(Error::InvalidArgument(format!("sample {i} is in both train and test")));
        }
        Ok(())
    }
}

/// `k` folds over `0..n_total`; fold `i` tests on the `i`-th contiguous block.
pub fn make_cv_folds(n_total: usize, k: usize) -> Result<Vec<Fold>> {
    if k < 2 || n_total % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_total} samples cannot be split into {k} equal test partitions"
        )));
    }
    let block = n_total / k;
    Ok((0..k)
        .map(|i| {
            let test: Vec<usize> = (i * block..(i + 1) * block).collect();
            let train = (0..n_total).filter(|j| j / block != i).collect();
            Fold { train, test }
        })
        .collect())
}
