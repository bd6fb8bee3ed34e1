//! Synthetic corruption/perturbation benchmark data: dense float vectors
//! standing in for images, derived from one clean base set. Generation is
//! a pure function of the seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Frames per perturbation sequence. The first frame is clean; each later
/// frame perturbs the previous one slightly.
pub const FRAMES_PER_SEQUENCE: usize = 31;
pub const SEVERITIES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub frames: Vec<Vec<f32>>,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSuite {
    pub dim: u32,
    pub classes: u32,
    pub samples: Vec<Sample>,
}

/// Corrupted copies of the clean base set, one cell per
/// (corruption kind, severity 1..=5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSuite {
    pub kinds: Vec<String>,
    /// `cells[kind][severity - 1]` holds the corrupted base set.
    pub cells: Vec<Vec<Vec<Sample>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSuite {
    pub kinds: Vec<String>,
    /// `sequences[kind]` holds the per-kind sequences.
    pub sequences: Vec<Vec<Sequence>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suites {
    pub clean: CleanSuite,
    pub corruption: CorruptionSuite,
    pub perturbation: PerturbationSuite,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub dim: u32,
    pub classes: u32,
    pub clean_per_class: u32,
    pub corruption_kinds: Vec<String>,
    pub perturbation_kinds: Vec<String>,
    pub sequences_per_kind: u32,
    /// Spread of clean samples around their class prototype.
    pub clean_noise: f32,
    /// Per-frame step size of the perturbation walks.
    pub perturbation_step: f32,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            dim: 64,
            classes: 10,
            clean_per_class: 100,
            corruption_kinds: vec![
                "additive_noise".into(),
                "blur".into(),
                "brightness".into(),
            ],
            perturbation_kinds: vec!["noise_walk".into(), "drift".into(), "flicker".into()],
            sequences_per_kind: 20,
            clean_noise: 0.08,
            perturbation_step: 0.06,
        }
    }
}

/// Standard normal via Box-Muller; f64 internally for stable tails.
fn gauss(rng: &mut impl RngCore) -> f64 {
    loop {
        let u1: f64 = (rng.next_u64() as f64 + 1.0) / (u64::MAX as f64 + 2.0);
        let u2: f64 = rng.next_u64() as f64 / u64::MAX as f64;
        let r = (-2.0 * u1.ln()).sqrt();
        if r.is_finite() {
            return r * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn unit_vector(dim: usize, rng: &mut impl RngCore) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// Class prototypes: unit vectors kept pairwise well separated so the
/// clean base set is cleanly classifiable.
fn prototypes(classes: usize, dim: usize, rng: &mut impl RngCore) -> Vec<Vec<f64>> {
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while protos.len() < classes {
        let cand = unit_vector(dim, rng);
        let separated = protos.iter().all(|p| {
            let cos: f64 = p.iter().zip(&cand).map(|(a, b)| a * b).sum();
            cos.abs() < 0.3
        });
        if separated {
            protos.push(cand);
        }
    }
    protos
}

fn corrupt(kind: &str, sample: &Sample, severity: usize, rng: &mut impl RngCore) -> Sample {
    let s = severity as f32;
    let mut features = sample.features.clone();
    match kind {
        "additive_noise" => {
            for v in features.iter_mut() {
                *v += 0.15 * s * gauss(rng) as f32;
            }
        }
        "blur" => {
            // neighbour mixing, stronger with severity
            let alpha = 0.12 * s;
            let orig = sample.features.clone();
            let n = orig.len();
            for i in 0..n {
                let left = orig[(i + n - 1) % n];
                let right = orig[(i + 1) % n];
                features[i] = (1.0 - alpha) * orig[i] + alpha * 0.5 * (left + right);
            }
        }
        "brightness" => {
            let shift = 0.10 * s;
            for v in features.iter_mut() {
                *v += shift;
            }
        }
        other => panic!("unknown corruption kind {other}"),
    }
    Sample {
        features,
        label: sample.label,
    }
}

/// Pull factor keeping perturbation walks in a bounded orbit around the
/// clean start frame, so frames stay slight perturbations of the image.
const WALK_REVERSION: f32 = 0.12;

fn perturb_walk(kind: &str, start: &Sample, step: f32, rng: &mut impl RngCore) -> Sequence {
    let dim = start.features.len();
    let mut frames = Vec::with_capacity(FRAMES_PER_SEQUENCE);
    frames.push(start.features.clone());
    let mut drift_dir: Vec<f64> = unit_vector(dim, rng);
    let pattern: Vec<f64> = unit_vector(dim, rng);
    let scale = (dim as f32).sqrt();
    for f in 1..FRAMES_PER_SEQUENCE {
        let prev = frames[f - 1].clone();
        let mut next = prev.clone();
        match kind {
            // random walk
            "noise_walk" => {
                for v in next.iter_mut() {
                    *v += step * gauss(rng) as f32;
                }
            }
            // slowly turning directional drift with a small jitter on top
            "drift" => {
                let mut norm = 0.0f64;
                for d in drift_dir.iter_mut() {
                    *d += 0.4 * gauss(rng) / (dim as f64).sqrt();
                    norm += *d * *d;
                }
                let norm = norm.sqrt().max(1e-12);
                for d in drift_dir.iter_mut() {
                    *d /= norm;
                }
                for (v, d) in next.iter_mut().zip(&drift_dir) {
                    *v += step * 0.8 * *d as f32 * scale + step * 0.5 * gauss(rng) as f32;
                }
            }
            // alternating pattern riding on a slow walk
            "flicker" => {
                let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
                for (v, p) in next.iter_mut().zip(&pattern) {
                    *v += sign * step * 1.2 * *p as f32 * scale + step * 0.6 * gauss(rng) as f32;
                }
            }
            other => panic!("unknown perturbation kind {other}"),
        }
        for (v, anchor) in next.iter_mut().zip(&start.features) {
            *v -= WALK_REVERSION * (*v - anchor);
        }
        frames.push(next);
    }
    Sequence {
        frames,
        label: start.label,
    }
}

/// Generate the three suites from one clean base set. Bit-identical for
/// equal seeds; labels depend only on the configuration, not the seed.
pub fn generate_suites(config: &SuiteConfig, seed: u64) -> Suites {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = config.dim as usize;
    let classes = config.classes as usize;
    let protos = prototypes(classes, dim, &mut rng);

    // clean base set, class-major so labels are seed-independent
    let mut samples = Vec::with_capacity(classes * config.clean_per_class as usize);
    for (class, proto) in protos.iter().enumerate() {
        for _ in 0..config.clean_per_class {
            let features: Vec<f32> = proto
                .iter()
                .map(|p| (*p as f32) + config.clean_noise * gauss(&mut rng) as f32)
                .collect();
            samples.push(Sample {
                features,
                label: class as u32,
            });
        }
    }
    let clean = CleanSuite {
        dim: config.dim,
        classes: config.classes,
        samples,
    };

    let mut cells = Vec::with_capacity(config.corruption_kinds.len());
    for kind in &config.corruption_kinds {
        let mut by_severity = Vec::with_capacity(SEVERITIES);
        for severity in 1..=SEVERITIES {
            let corrupted: Vec<Sample> = clean
                .samples
                .iter()
                .map(|s| corrupt(kind, s, severity, &mut rng))
                .collect();
            by_severity.push(corrupted);
        }
        cells.push(by_severity);
    }
    let corruption = CorruptionSuite {
        kinds: config.corruption_kinds.clone(),
        cells,
    };

    let mut sequences = Vec::with_capacity(config.perturbation_kinds.len());
    for kind in &config.perturbation_kinds {
        let mut seqs = Vec::with_capacity(config.sequences_per_kind as usize);
        for i in 0..config.sequences_per_kind {
            // spread sequence starts across classes
            let start_idx = (i as usize * clean.samples.len() / config.sequences_per_kind as usize
                + rng.gen_range(0..config.clean_per_class as usize))
                % clean.samples.len();
            seqs.push(perturb_walk(
                kind,
                &clean.samples[start_idx],
                config.perturbation_step,
                &mut rng,
            ));
        }
        sequences.push(seqs);
    }
    let perturbation = PerturbationSuite {
        kinds: config.perturbation_kinds.clone(),
        sequences,
    };

    Suites {
        clean,
        corruption,
        perturbation,
        seed,
    }
}

fn distortion_energy(base: &[Sample], cell: &[Sample]) -> f64 {
    let mut total = 0.0;
    for (b, c) in base.iter().zip(cell) {
        for (x, y) in b.features.iter().zip(&c.features) {
            let d = (*x - *y) as f64;
            total += d * d;
        }
    }
    total / base.len() as f64
}

/// Every corruption kind must distort strictly more at each higher severity.
pub fn check_severity_monotonicity(suites: &Suites) -> bool {
    suites.corruption.cells.iter().all(|by_severity| {
        let energies: Vec<f64> = by_severity
            .iter()
            .map(|cell| distortion_energy(&suites.clean.samples, cell))
            .collect();
        energies.windows(2).all(|w| w[0] < w[1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SuiteConfig {
        SuiteConfig {
            clean_per_class: 20,
            sequences_per_kind: 4,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let a = generate_suites(&small_config(), 5);
        let b = generate_suites(&small_config(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_preserve_clean_labels() {
        let a = generate_suites(&small_config(), 5);
        let b = generate_suites(&small_config(), 6);
        assert_ne!(a.clean.samples[0].features, b.clean.samples[0].features);
        let labels_a: Vec<u32> = a.clean.samples.iter().map(|s| s.label).collect();
        let labels_b: Vec<u32> = b.clean.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels_a, labels_b);
    }

    #[test]
    fn severity_strictly_increases_distortion() {
        let suites = generate_suites(&small_config(), 7);
        assert!(check_severity_monotonicity(&suites));
    }

    #[test]
    fn sequences_have_exactly_31_frames_starting_clean() {
        let suites = generate_suites(&small_config(), 8);
        for seqs in &suites.perturbation.sequences {
            for seq in seqs {
                assert_eq!(seq.frames.len(), FRAMES_PER_SEQUENCE);
                // first frame is a clean base sample
                assert!(suites
                    .clean
                    .samples
                    .iter()
                    .any(|s| s.features == seq.frames[0] && s.label == seq.label));
            }
        }
    }

    #[test]
    fn corruption_cells_cover_all_severities_and_derive_from_base() {
        let suites = generate_suites(&small_config(), 9);
        for by_severity in &suites.corruption.cells {
            assert_eq!(by_severity.len(), SEVERITIES);
            for cell in by_severity {
                assert_eq!(cell.len(), suites.clean.samples.len());
                for (base, corrupted) in suites.clean.samples.iter().zip(cell) {
                    assert_eq!(base.label, corrupted.label);
                }
            }
        }
    }
}
