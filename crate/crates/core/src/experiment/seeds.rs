//! Counter-based per-trial seed derivation.
//!
//! A seed is the SplitMix64 finalizer folded over `(master, domain, subject,
//! method, trial)`. The derivation is fixed: changing it changes every
//! published result.

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Controller decisions and simulated observations of a spelling trial.
    Trial = 0x01,
    /// The intended letter of a spelling trial, shared across methods.
    Target = 0x02,
    /// Idle-user trials.
    Idle = 0x03,
    /// Calibration data per subject.
    Calibration = 0x04,
    /// Bootstrap resampling in reports.
    Bootstrap = 0x05,
}

pub fn derive_seed(master: u64, domain: Domain, subject: u64, method: u64, trial: u64) -> u64 {
    [domain as u64, subject, method, trial]
        .into_iter()
        .fold(mix64(master), |acc, x| mix64(acc ^ mix64(x)))
}
