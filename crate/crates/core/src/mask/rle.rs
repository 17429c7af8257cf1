use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{check_dims, Mask, MaskError};

/// Run-length encoded binary mask.
///
/// Runs alternate background/foreground in row-major order and always start
/// with a background run, which is the only run allowed to be empty. On the
/// wire the mask is a flat array `[width, height, run_count, runs...]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u64>,
}

impl RleMask {
    /// Validates the run invariants.
    pub fn new(width: u32, height: u32, runs: Vec<u64>) -> Result<Self, MaskError> {
        let n = check_dims(width, height)? as u64;
        if runs.is_empty() {
            return Err(MaskError::MalformedRuns("no runs".into()));
        }
        if let Some(i) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(MaskError::MalformedRuns(format!("zero-length run at index {}", i + 1)));
        }
        let total = runs
            .iter()
            .try_fold(0u64, |acc, &r| acc.checked_add(r))
            .ok_or_else(|| MaskError::MalformedRuns("run sum overflows".into()))?;
        if total != n {
            return Err(MaskError::MalformedRuns(format!(
                "runs sum to {total}, expected {n}"
            )));
        }
        Ok(Self { width, height, runs })
    }

    pub fn encode(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &bit in mask.bits() {
            if bit != current {
                runs.push(len);
                len = 0;
                current = bit;
            }
            len += 1;
        }
        runs.push(len);
        Self {
            width: mask.width(),
            height: mask.height(),
            runs,
        }
    }

    pub fn decode(&self) -> Result<Mask, MaskError> {
        // re-validate; fields may come from an untrusted constructor path
        let checked = Self::new(self.width, self.height, self.runs.clone())?;
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &run) in checked.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        Mask::from_bits(self.width, self.height, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u64] {
        &self.runs
    }

    /// Foreground pixel count, read off the odd runs.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).sum()
    }

    pub fn to_flat(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.runs.len() + 3);
        out.push(self.width as u64);
        out.push(self.height as u64);
        out.push(self.runs.len() as u64);
        out.extend_from_slice(&self.runs);
        out
    }

    pub fn from_flat(flat: &[u64]) -> Result<Self, MaskError> {
        let [w, h, count, runs @ ..] = flat else {
            return Err(MaskError::MalformedRuns("header needs width, height, run count".into()));
        };
        if *count as usize != runs.len() {
            return Err(MaskError::MalformedRuns(format!(
                "declared {count} runs, found {}",
                runs.len()
            )));
        }
        let w = u32::try_from(*w).map_err(|_| MaskError::MalformedRuns("width out of range".into()))?;
        let h = u32::try_from(*h).map_err(|_| MaskError::MalformedRuns("height out of range".into()))?;
        Self::new(w, h, runs.to_vec())
    }
}

impl Serialize for RleMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_flat().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let flat = Vec::<u64>::deserialize(deserializer)?;
        RleMask::from_flat(&flat).map_err(D::Error::custom)
    }
}
