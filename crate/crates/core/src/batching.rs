//! Mini-batch schedules: which sub-potential drives each integrator step,
//! and the factor K applied to its gradient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::phase_space::RngStream;
use crate::potentials::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchMode {
    Full,
    /// Each block of K steps visits every batch once, in a fresh random order.
    PermutationSweep,
    /// Each step picks a batch uniformly at random.
    IidUniform,
}

impl BatchMode {
    pub fn name(self) -> &'static str {
        match self {
            BatchMode::Full => "full",
            BatchMode::PermutationSweep => "perm",
            BatchMode::IidUniform => "iid",
        }
    }
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BatchMode::Full),
            "perm" | "permutation" => Ok(BatchMode::PermutationSweep),
            "iid" | "uniform" => Ok(BatchMode::IidUniform),
            _ => Err(Error::config(format!("unknown batch mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSchedule {
    mode: BatchMode,
    k: usize,
    rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    /// FULL ignores `k`. For the other modes K = 1 emits batch 0 with scale 1.
    pub fn new(mode: BatchMode, k: usize, rng: RngStream) -> Result<Self> {
        if k < 1 {
            return Err(Error::config("number of batches K must be >= 1"));
        }
        let k = if mode == BatchMode::Full { 1 } else { k };
        Ok(BatchSchedule {
            mode,
            k,
            rng,
            order: (0..k).collect(),
            cursor: k,
        })
    }

    pub fn full() -> Self {
        Self::new(BatchMode::Full, 1, RngStream::new(0, 0)).unwrap()
    }

    pub fn mode(&self) -> BatchMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Gradient multiplier reported with every emission.
    pub fn scale(&self) -> f64 {
        match self.mode {
            BatchMode::Full => 1.0,
            _ => self.k as f64,
        }
    }

    pub fn next_batch(&mut self) -> (Batch, f64) {
        let scale = self.scale();
        match self.mode {
            BatchMode::Full => (Batch::Full, 1.0),
            BatchMode::IidUniform => (Batch::Index(self.rng.below(self.k)), scale),
            BatchMode::PermutationSweep => {
                if self.cursor == self.k {
                    // Fisher–Yates.
                    for i in (1..self.k).rev() {
                        let j = self.rng.below(i + 1);
                        self.order.swap(i, j);
                    }
                    self.cursor = 0;
                }
                let b = self.order[self.cursor];
                self.cursor += 1;
                (Batch::Index(b), scale)
            }
        }
    }
}

impl Iterator for BatchSchedule {
    type Item = (Batch, f64);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}
