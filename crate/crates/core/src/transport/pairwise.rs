use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which entries of a distance matrix to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSelection {
    Full,
    /// Consecutive pairs, every pair with `reference`, and the endpoints `(0, n-1)`.
    Trajectory {
        reference: usize,
    },
}

/// Symmetric matrix with unevaluated entries left as `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, d: f64) {
        self.entries[i * self.n + j] = Some(d);
        self.entries[j * self.n + i] = Some(d);
    }
}

/// Distances between the items of an ordered list under `distance`.
///
/// Equal items are assigned 0 without calling `distance`; entries are evaluated in parallel
/// and assembled in a fixed order.
pub fn pairwise_distance_matrix<T, F>(items: &[T], selection: PairSelection, distance: F) -> Result<DistanceMatrix>
where
    T: PartialEq + Sync,
    F: Fn(&T, &T) -> Result<f64> + Sync,
{
    let n = items.len();
    if n < 2 {
        return Err(Error::Usage("pairwise distances need at least two items".into()));
    }
    let mut pairs: Vec<(usize, usize)> = match selection {
        PairSelection::Full => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        PairSelection::Trajectory { reference } => {
            if reference >= n {
                return Err(Error::Usage(format!("reference index {reference} out of range")));
            }
            let mut p: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            p.extend(
                (0..n)
                    .filter(|&i| i != reference)
                    .map(|i| (i.min(reference), i.max(reference))),
            );
            p.push((0, n - 1));
            p
        }
    };
    pairs.sort_unstable();
    pairs.dedup();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if items[i] == items[j] {
                Ok(0.0)
            } else {
                distance(&items[i], &items[j])
            }
        })
        .collect::<Result<_>>()?;
    let mut out = DistanceMatrix {
        n,
        entries: vec![None; n * n],
    };
    for i in 0..n {
        out.entries[i * n + i] = Some(0.0);
    }
    for (&(i, j), d) in pairs.iter().zip(values) {
        out.set(i, j, d);
    }
    Ok(out)
}
