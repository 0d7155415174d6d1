use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions {:?} must be in [0, 1] and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }

    /// Floor of each share, then the remainder handed out one at a time
    /// starting with train.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let mut sizes = self.fractions.map(|f| ((f * n as f64) + 1e-9).floor() as usize);
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut i = 0;
        while left > 0 {
            sizes[i % 3] += 1;
            left -= 1;
            i += 1;
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DataSplit<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn part(&self, tag: SplitTag) -> &[T] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

/// Seeded shuffle followed by a contiguous three-way cut.
pub fn split_dataset<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<DataSplit<T>> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [a, b, _] = spec.sizes(samples.len());
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(DataSplit {
        train: pick(&order[..a]),
        val: pick(&order[a..a + b]),
        test: pick(&order[a + b..]),
    })
}
