//! Adversarial host strategies. Each strategy is a pure, deterministic
//! function of the host's observable state: adversaries may load wrong
//! values, replay stale sealed state, mutate relayed samples, or go silent,
//! but they cannot forge signatures or open other parties' commitments.

use serde::{Deserialize, Serialize};

use crate::relay::SamplePackage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Load a model different from the committed one at the commit step.
    ForgeModel,
    /// Replay the `replay_index`-th sealed state the host has seen at the
    /// given evaluation step (0 = first evaluation resume).
    Rollback { replay_step: u8, replay_index: u8 },
    /// Mutate the relayed samples at a tamper site before feeding them
    /// into the enclave.
    TamperSamples { site: usize },
    /// Never run the key-release step after the buyer's deposit.
    WithholdKey,
    /// Load a key different from the committed one at the release step.
    SwapKey,
    /// Buyer never follows up with the key-request transaction.
    Repudiate,
}

impl Strategy {
    pub const ALL_NAMES: [&'static str; 6] = [
        "forge_model",
        "rollback",
        "tamper_samples",
        "withhold_key",
        "swap_key",
        "repudiate",
    ];

    pub fn from_name(name: &str) -> Option<Strategy> {
        match name {
            "forge_model" => Some(Strategy::ForgeModel),
            "rollback" => Some(Strategy::Rollback { replay_step: 1, replay_index: 0 }),
            "tamper_samples" => Some(Strategy::TamperSamples { site: 0 }),
            "withhold_key" => Some(Strategy::WithholdKey),
            "swap_key" => Some(Strategy::SwapKey),
            "repudiate" => Some(Strategy::Repudiate),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ForgeModel => "forge_model",
            Strategy::Rollback { .. } => "rollback",
            Strategy::TamperSamples { .. } => "tamper_samples",
            Strategy::WithholdKey => "withhold_key",
            Strategy::SwapKey => "swap_key",
            Strategy::Repudiate => "repudiate",
        }
    }

    /// True for strategies acting during the benchmarking stage.
    pub fn attacks_benchmark(&self) -> bool {
        matches!(
            self,
            Strategy::ForgeModel | Strategy::Rollback { .. } | Strategy::TamperSamples { .. }
        )
    }
}

/// Number of distinct single-byte tamper sites in a package: every byte of
/// every sample, frame, and label is addressable.
pub fn tamper_site_count(package: &SamplePackage) -> usize {
    let mut count = 0;
    for cells in &package.corruption {
        for cell in cells {
            for sample in cell {
                count += 4 + sample.features.len() * 4;
            }
        }
    }
    for seqs in &package.perturbation {
        for seq in seqs {
            count += 4;
            for frame in &seq.frames {
                count += frame.len() * 4;
            }
        }
    }
    for sample in &package.clean {
        count += 4 + sample.features.len() * 4;
    }
    count
}

/// Flip one bit of the package at the given site (modulo the site count).
/// Sites enumerate label bytes and feature bytes across all sections, so a
/// sweep over sites exercises tampering at every byte position.
pub fn tamper_package_at(package: &mut SamplePackage, site: usize) {
    let total = tamper_site_count(package);
    let mut site = site % total.max(1);

    for cells in &mut package.corruption {
        for cell in cells.iter_mut() {
            for sample in cell.iter_mut() {
                let len = 4 + sample.features.len() * 4;
                if site < len {
                    tamper_sample(sample, site);
                    return;
                }
                site -= len;
            }
        }
    }
    for seqs in &mut package.perturbation {
        for seq in seqs.iter_mut() {
            if site < 4 {
                seq.label ^= 1 << (site * 8);
                return;
            }
            site -= 4;
            for frame in seq.frames.iter_mut() {
                let len = frame.len() * 4;
                if site < len {
                    let mut bytes = frame[site / 4].to_le_bytes();
                    bytes[site % 4] ^= 0x01;
                    frame[site / 4] = f32::from_le_bytes(bytes);
                    return;
                }
                site -= len;
            }
        }
    }
    for sample in package.clean.iter_mut() {
        let len = 4 + sample.features.len() * 4;
        if site < len {
            tamper_sample(sample, site);
            return;
        }
        site -= len;
    }
}

fn tamper_sample(sample: &mut crate::benchmark::Sample, site: usize) {
    if site < 4 {
        sample.label ^= 1 << (site * 8);
    } else {
        let idx = (site - 4) / 4;
        let mut bytes = sample.features[idx].to_le_bytes();
        bytes[(site - 4) % 4] ^= 0x01;
        sample.features[idx] = f32::from_le_bytes(bytes);
    }
}
