//! Authenticated off-chain data feed: an intermediator enclave fetches
//! benchmark samples from the dataset server, anchors their digest (and its
//! signature) on the ledger, and forwards the samples to the seller's host.
//! Sampling randomness is derived inside the intermediator enclave from the
//! latest block hash, so it is unbiased and reproducible.
//!
//! The server-to-intermediator hop is authentic by assumption (an
//! HTTPS-style channel); the adversary can only tamper with samples after
//! the relay, which the seller enclave detects against the anchored digest.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::suites::{Sample, Sequence, Suites, FRAMES_PER_SEQUENCE, SEVERITIES};
use crate::crypto::{self, hash, Digest, PublicKey, Signature, SignatureKeypair};
use crate::ledger::Address;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RelayError {
    #[error("no eligible intermediator besides the requesting seller")]
    NoIntermediator,
    #[error("sample count {count} exceeds dataset size {size}")]
    CountExceedsDataset { count: usize, size: usize },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset manifest: {0}")]
    Manifest(String),
}

/// How many records the relay draws for one benchmark run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackageSpec {
    /// Base images per corruption kind; each carries all 5 severities.
    pub images_per_corruption: usize,
    /// Whole sequences per perturbation kind.
    pub sequences_per_perturbation: usize,
    /// Clean samples.
    pub clean_count: usize,
}

impl Default for PackageSpec {
    fn default() -> Self {
        PackageSpec {
            images_per_corruption: 25,
            sequences_per_perturbation: 8,
            clean_count: 200,
        }
    }
}

/// The sampled benchmark data delivered into the seller's enclave.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePackage {
    pub corruption_kinds: Vec<String>,
    /// `corruption[kind][severity - 1]` holds the sampled cell.
    pub corruption: Vec<Vec<Vec<Sample>>>,
    pub perturbation_kinds: Vec<String>,
    pub perturbation: Vec<Vec<Sequence>>,
    pub clean: Vec<Sample>,
}

impl SamplePackage {
    /// Canonical encoding: section tags, record counts, then length-prefixed
    /// records in index order. The anchored digest is the hash of exactly
    /// these bytes.
    pub fn encode_canonical(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"PKG1");
        push_section(&mut out, b"corr", self.corruption_kinds.len());
        for (kind, cells) in self.corruption_kinds.iter().zip(&self.corruption) {
            push_record(&mut out, kind.as_bytes());
            out.extend_from_slice(&(cells.len() as u32).to_le_bytes());
            for cell in cells {
                out.extend_from_slice(&(cell.len() as u32).to_le_bytes());
                for sample in cell {
                    push_record(&mut out, &encode_sample(sample));
                }
            }
        }
        push_section(&mut out, b"pert", self.perturbation_kinds.len());
        for (kind, seqs) in self.perturbation_kinds.iter().zip(&self.perturbation) {
            push_record(&mut out, kind.as_bytes());
            out.extend_from_slice(&(seqs.len() as u32).to_le_bytes());
            for seq in seqs {
                push_record(&mut out, &encode_sequence(seq));
            }
        }
        push_section(&mut out, b"clea", self.clean.len());
        for sample in &self.clean {
            push_record(&mut out, &encode_sample(sample));
        }
        out
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode_canonical())
    }

    /// Canonical byte size, the `|samples|` term of the cost accounting.
    pub fn byte_len(&self) -> usize {
        self.encode_canonical().len()
    }
}

fn push_section(out: &mut Vec<u8>, tag: &[u8; 4], count: usize) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(count as u32).to_le_bytes());
}

fn push_record(out: &mut Vec<u8>, record: &[u8]) {
    out.extend_from_slice(&(record.len() as u32).to_le_bytes());
    out.extend_from_slice(record);
}

fn encode_sample(sample: &Sample) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + sample.features.len() * 4);
    out.extend_from_slice(&sample.label.to_le_bytes());
    for f in &sample.features {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

fn encode_sequence(seq: &Sequence) -> Vec<u8> {
    let dim = seq.frames.first().map(|f| f.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(8 + seq.frames.len() * dim * 4);
    out.extend_from_slice(&seq.label.to_le_bytes());
    out.extend_from_slice(&(seq.frames.len() as u32).to_le_bytes());
    for frame in &seq.frames {
        for f in frame {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

/// Uniform sampling without replacement, deterministic in the seed bytes.
/// `count == n` yields a permutation of all indices.
pub fn sample_indices(n: usize, count: usize, seed: &[u8]) -> Result<Vec<usize>, RelayError> {
    if count > n {
        return Err(RelayError::CountExceedsDataset { count, size: n });
    }
    let mut rng = ChaCha20Rng::from_seed(hash(seed).0);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut picked = Vec::with_capacity(count);
    for i in 0..count {
        let j = i + (rng.next_u64() as usize) % (n - i);
        pool.swap(i, j);
        picked.push(pool[i]);
    }
    Ok(picked)
}

/// Deterministically choose the intermediator for a request from the
/// registered relay candidates, never the requesting seller.
pub fn pick_intermediator(
    candidates: &[(Address, Address)], // (seller host, relay enclave account)
    requester: &Address,
    block_hash: &Digest,
    request_id: u64,
) -> Result<(Address, Address), RelayError> {
    let eligible: Vec<&(Address, Address)> = candidates
        .iter()
        .filter(|(seller, _)| seller != requester)
        .collect();
    if eligible.is_empty() {
        return Err(RelayError::NoIntermediator);
    }
    let pick = crypto::hash_parts(&[
        b"pick-intermediator",
        block_hash.as_bytes(),
        &request_id.to_le_bytes(),
    ]);
    let idx = u64::from_le_bytes(pick.0[..8].try_into().unwrap()) as usize % eligible.len();
    Ok(*eligible[idx])
}

/// On-chain record of one relay: the anchored digest, its signature under
/// the intermediator enclave's key, and the sampling seed that was used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayRecord {
    pub request_id: u64,
    pub url: String,
    pub params: String,
    pub digest: Digest,
    pub sampling_seed: Digest,
    pub sigma: Signature,
    pub sigma_att: Signature,
    pub relay_pk: PublicKey,
}

/// Message the relay enclave signs over an anchored digest. The seller
/// enclave re-derives this to authenticate received samples.
pub fn relay_digest_message(request_id: u64, digest: &Digest) -> Vec<u8> {
    let mut msg = b"relay-digest".to_vec();
    msg.extend_from_slice(&request_id.to_le_bytes());
    msg.extend_from_slice(digest.as_bytes());
    msg
}

/// The intermediator enclave: fetches from the server, samples with
/// PRF-derived randomness, signs the digest.
pub struct RelayEnclave {
    keypair: SignatureKeypair,
    pub host: Address,
    pub account: Address,
}

impl RelayEnclave {
    pub fn new(keypair: SignatureKeypair, host: Address, account: Address) -> RelayEnclave {
        RelayEnclave {
            keypair,
            host,
            account,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    /// Sign a transaction payload with the relay enclave's key.
    pub fn attest(&self, payload: &[u8]) -> Signature {
        self.keypair.sign(payload)
    }

    /// Serve one request: sample the suites, anchor-sign the digest.
    /// Randomness comes from `prf(sk, block_hash || request_id)`.
    pub fn serve(
        &self,
        server: &DatasetServer,
        request_id: u64,
        block_hash: &Digest,
        spec: &PackageSpec,
        url: &str,
        params: &str,
    ) -> Result<(SamplePackage, RelayRecord), RelayError> {
        let mut prf_input = block_hash.as_bytes().to_vec();
        prf_input.extend_from_slice(&request_id.to_le_bytes());
        let (seed_key, _) = crypto::prf(&self.keypair.secret_bytes(), &prf_input);
        let seed = seed_key.0;

        let package = sample_package(&server.suites, spec, &seed)?;
        let digest = package.digest();
        let sigma = self
            .keypair
            .sign(&relay_digest_message(request_id, &digest));
        let mut att_msg = b"relay-attestation".to_vec();
        att_msg.extend_from_slice(digest.as_bytes());
        let sigma_att = self.keypair.sign(&att_msg);

        let record = RelayRecord {
            request_id,
            url: url.to_string(),
            params: params.to_string(),
            digest,
            sampling_seed: hash(&seed),
            sigma,
            sigma_att,
            relay_pk: self.keypair.public(),
        };
        Ok((package, record))
    }
}

/// Draw a package from the full suites with the given 32-byte seed.
pub fn sample_package(
    suites: &Suites,
    spec: &PackageSpec,
    seed: &[u8; 32],
) -> Result<SamplePackage, RelayError> {
    let base_len = suites.clean.samples.len();
    let mut corruption = Vec::with_capacity(suites.corruption.kinds.len());
    for (k, by_severity) in suites.corruption.cells.iter().enumerate() {
        let mut sub_seed = seed.to_vec();
        sub_seed.extend_from_slice(b"corr");
        sub_seed.extend_from_slice(&(k as u32).to_le_bytes());
        let picked = sample_indices(base_len, spec.images_per_corruption, &sub_seed)?;
        let mut cells = Vec::with_capacity(SEVERITIES);
        for cell in by_severity {
            cells.push(picked.iter().map(|i| cell[*i].clone()).collect::<Vec<_>>());
        }
        corruption.push(cells);
    }

    let mut perturbation = Vec::with_capacity(suites.perturbation.kinds.len());
    for (k, seqs) in suites.perturbation.sequences.iter().enumerate() {
        let mut sub_seed = seed.to_vec();
        sub_seed.extend_from_slice(b"pert");
        sub_seed.extend_from_slice(&(k as u32).to_le_bytes());
        let picked = sample_indices(seqs.len(), spec.sequences_per_perturbation, &sub_seed)?;
        perturbation.push(picked.iter().map(|i| seqs[*i].clone()).collect::<Vec<_>>());
    }

    let mut sub_seed = seed.to_vec();
    sub_seed.extend_from_slice(b"clean");
    let picked = sample_indices(base_len, spec.clean_count, &sub_seed)?;
    let clean = picked
        .iter()
        .map(|i| suites.clean.samples[*i].clone())
        .collect();

    Ok(SamplePackage {
        corruption_kinds: suites.corruption.kinds.clone(),
        corruption,
        perturbation_kinds: suites.perturbation.kinds.clone(),
        perturbation,
        clean,
    })
}

/// Read-only benchmark dataset source. Content is immutable during a
/// scenario; lookups are deterministic.
pub struct DatasetServer {
    pub suites: Suites,
}

impl DatasetServer {
    pub fn new(suites: Suites) -> DatasetServer {
        DatasetServer { suites }
    }

    /// Write the datasets as a manifest plus binary record files.
    pub fn save_to_dir(&self, dir: &Path) -> Result<(), RelayError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        let dim = self.suites.clean.dim as usize;

        let clean_file = "clean.bin";
        write_samples(&dir.join(clean_file), &self.suites.clean.samples)?;
        entries.push(ManifestEntry {
            name: "clean".into(),
            kind: "clean".into(),
            records: self.suites.clean.samples.len() as u64,
            record_bytes: (4 + dim * 4) as u64,
            file: clean_file.into(),
        });

        for (k, kind) in self.suites.corruption.kinds.iter().enumerate() {
            for (s, cell) in self.suites.corruption.cells[k].iter().enumerate() {
                let file = format!("corruption_{kind}_s{}.bin", s + 1);
                write_samples(&dir.join(&file), cell)?;
                entries.push(ManifestEntry {
                    name: format!("corruption/{kind}/s{}", s + 1),
                    kind: "corruption".into(),
                    records: cell.len() as u64,
                    record_bytes: (4 + dim * 4) as u64,
                    file,
                });
            }
        }

        for (k, kind) in self.suites.perturbation.kinds.iter().enumerate() {
            let file = format!("perturbation_{kind}.bin");
            write_sequences(&dir.join(&file), &self.suites.perturbation.sequences[k])?;
            entries.push(ManifestEntry {
                name: format!("perturbation/{kind}"),
                kind: "perturbation".into(),
                records: self.suites.perturbation.sequences[k].len() as u64,
                record_bytes: (8 + FRAMES_PER_SEQUENCE * dim * 4) as u64,
                file,
            });
        }

        let manifest = Manifest {
            version: DATASET_FORMAT_VERSION,
            name: format!("synthetic-seed-{}", self.suites.seed),
            dim: self.suites.clean.dim,
            classes: self.suites.clean.classes,
            seed: self.suites.seed,
            entries,
        };
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| RelayError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn load_from_dir(dir: &Path) -> Result<DatasetServer, RelayError> {
        let text = fs::read_to_string(dir.join("manifest.toml"))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| RelayError::Manifest(e.to_string()))?;
        if manifest.version != DATASET_FORMAT_VERSION {
            return Err(RelayError::Manifest(format!(
                "unsupported dataset version {}",
                manifest.version
            )));
        }
        let dim = manifest.dim as usize;

        let mut clean = Vec::new();
        let mut corruption_kinds: Vec<String> = Vec::new();
        let mut corruption: Vec<Vec<Vec<Sample>>> = Vec::new();
        let mut perturbation_kinds = Vec::new();
        let mut perturbation = Vec::new();

        for entry in &manifest.entries {
            match entry.kind.as_str() {
                "clean" => {
                    clean = read_samples(&dir.join(&entry.file), dim, entry.records as usize)?;
                }
                "corruption" => {
                    let parts: Vec<&str> = entry.name.split('/').collect();
                    if parts.len() != 3 {
                        return Err(RelayError::Manifest(format!("bad entry {}", entry.name)));
                    }
                    let kind = parts[1].to_string();
                    let severity: usize = parts[2]
                        .trim_start_matches('s')
                        .parse()
                        .map_err(|_| RelayError::Manifest(format!("bad severity {}", parts[2])))?;
                    let idx = match corruption_kinds.iter().position(|k| *k == kind) {
                        Some(i) => i,
                        None => {
                            corruption_kinds.push(kind);
                            corruption.push(vec![Vec::new(); SEVERITIES]);
                            corruption_kinds.len() - 1
                        }
                    };
                    corruption[idx][severity - 1] =
                        read_samples(&dir.join(&entry.file), dim, entry.records as usize)?;
                }
                "perturbation" => {
                    let kind = entry
                        .name
                        .split('/')
                        .nth(1)
                        .ok_or_else(|| RelayError::Manifest(format!("bad entry {}", entry.name)))?;
                    perturbation_kinds.push(kind.to_string());
                    perturbation.push(read_sequences(
                        &dir.join(&entry.file),
                        dim,
                        entry.records as usize,
                    )?);
                }
                other => {
                    return Err(RelayError::Manifest(format!("unknown suite kind {other}")));
                }
            }
        }

        Ok(DatasetServer {
            suites: Suites {
                clean: crate::benchmark::CleanSuite {
                    dim: manifest.dim,
                    classes: manifest.classes,
                    samples: clean,
                },
                corruption: crate::benchmark::CorruptionSuite {
                    kinds: corruption_kinds,
                    cells: corruption,
                },
                perturbation: crate::benchmark::PerturbationSuite {
                    kinds: perturbation_kinds,
                    sequences: perturbation,
                },
                seed: manifest.seed,
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    name: String,
    dim: u32,
    classes: u32,
    seed: u64,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: String,
    records: u64,
    record_bytes: u64,
    file: String,
}

fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), RelayError> {
    let mut out = Vec::new();
    for s in samples {
        out.extend_from_slice(&s.label.to_le_bytes());
        for f in &s.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_samples(path: &Path, dim: usize, records: usize) -> Result<Vec<Sample>, RelayError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let record_len = 4 + dim * 4;
    if bytes.len() != records * record_len {
        return Err(RelayError::Manifest(format!(
            "{} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            records * record_len
        )));
    }
    let mut samples = Vec::with_capacity(records);
    for r in 0..records {
        let base = r * record_len;
        let label = u32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let mut features = Vec::with_capacity(dim);
        for d in 0..dim {
            let off = base + 4 + d * 4;
            features.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        samples.push(Sample { features, label });
    }
    Ok(samples)
}

fn write_sequences(path: &Path, seqs: &[Sequence]) -> Result<(), RelayError> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&(s.frames.len() as u32).to_le_bytes());
        for frame in &s.frames {
            for f in frame {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_sequences(path: &Path, dim: usize, records: usize) -> Result<Vec<Sequence>, RelayError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let record_len = 8 + FRAMES_PER_SEQUENCE * dim * 4;
    if bytes.len() != records * record_len {
        return Err(RelayError::Manifest(format!(
            "{} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            records * record_len
        )));
    }
    let mut seqs = Vec::with_capacity(records);
    for r in 0..records {
        let base = r * record_len;
        let label = u32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let frames_n = u32::from_le_bytes(bytes[base + 4..base + 8].try_into().unwrap()) as usize;
        if frames_n != FRAMES_PER_SEQUENCE {
            return Err(RelayError::Manifest(format!(
                "sequence with {frames_n} frames, expected {FRAMES_PER_SEQUENCE}"
            )));
        }
        let mut frames = Vec::with_capacity(frames_n);
        for fi in 0..frames_n {
            let mut frame = Vec::with_capacity(dim);
            for d in 0..dim {
                let off = base + 8 + (fi * dim + d) * 4;
                frame.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            }
            frames.push(frame);
        }
        seqs.push(Sequence { frames, label });
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::suites::{generate_suites, SuiteConfig};
    use rand::SeedableRng;

    fn small_suites() -> Suites {
        generate_suites(
            &SuiteConfig {
                clean_per_class: 10,
                sequences_per_kind: 5,
                ..SuiteConfig::default()
            },
            3,
        )
    }

    #[test]
    fn sample_indices_full_count_is_permutation() {
        let mut idx = sample_indices(20, 20, b"seed").unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn sample_indices_deterministic_and_seed_sensitive() {
        let a = sample_indices(100, 10, b"alpha").unwrap();
        let b = sample_indices(100, 10, b"alpha").unwrap();
        assert_eq!(a, b);
        let mut distinct = 0;
        for t in 0..1000u32 {
            let x = sample_indices(100, 10, &t.to_le_bytes()).unwrap();
            let y = sample_indices(100, 10, &(t + 1_000_000).to_le_bytes()).unwrap();
            if x != y {
                distinct += 1;
            }
        }
        assert!(distinct >= 999, "different seeds almost always differ");
    }

    #[test]
    fn sample_indices_rejects_oversized_count() {
        assert!(matches!(
            sample_indices(5, 6, b"s"),
            Err(RelayError::CountExceedsDataset { .. })
        ));
    }

    #[test]
    fn package_covers_all_severities_per_corruption() {
        let suites = small_suites();
        let spec = PackageSpec {
            images_per_corruption: 7,
            sequences_per_perturbation: 2,
            clean_count: 30,
        };
        let package = sample_package(&suites, &spec, &[9u8; 32]).unwrap();
        for cells in &package.corruption {
            assert_eq!(cells.len(), SEVERITIES);
            for cell in cells {
                assert_eq!(cell.len(), 7);
            }
        }
        assert_eq!(package.clean.len(), 30);
        // same base images at every severity of a kind
        let labels_s1: Vec<u32> = package.corruption[0][0].iter().map(|s| s.label).collect();
        let labels_s5: Vec<u32> = package.corruption[0][4].iter().map(|s| s.label).collect();
        assert_eq!(labels_s1, labels_s5);
    }

    #[test]
    fn canonical_encoding_is_stable_and_tamper_evident() {
        let suites = small_suites();
        let spec = PackageSpec {
            images_per_corruption: 10,
            sequences_per_perturbation: 3,
            clean_count: 40,
        };
        let package = sample_package(&suites, &spec, &[1u8; 32]).unwrap();
        let digest = package.digest();
        assert_eq!(digest, package.digest());

        let mut tampered = package.clone();
        tampered.clean[0].features[0] += 1e-3;
        assert_ne!(digest, tampered.digest());
    }

    #[test]
    fn intermediator_choice_excludes_requester_and_is_deterministic() {
        let mk = |b: u8| Address([b; 20]);
        let candidates = vec![(mk(1), mk(11)), (mk(2), mk(12)), (mk(3), mk(13))];
        let block = hash(b"block");
        let chosen = pick_intermediator(&candidates, &mk(2), &block, 7).unwrap();
        assert_ne!(chosen.0, mk(2));
        let again = pick_intermediator(&candidates, &mk(2), &block, 7).unwrap();
        assert_eq!(chosen, again);

        // single other seller -> that seller
        let two = vec![(mk(1), mk(11)), (mk(2), mk(12))];
        let only = pick_intermediator(&two, &mk(2), &block, 9).unwrap();
        assert_eq!(only.0, mk(1));

        // bootstrap case: only the requester registered
        let alone = vec![(mk(2), mk(12))];
        assert!(matches!(
            pick_intermediator(&alone, &mk(2), &block, 9),
            Err(RelayError::NoIntermediator)
        ));
    }

    #[test]
    fn relay_serve_signs_the_package_digest() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let kp = SignatureKeypair::generate(&mut rng);
        let relay = RelayEnclave::new(kp, Address([1; 20]), Address([2; 20]));
        let server = DatasetServer::new(small_suites());
        let spec = PackageSpec {
            images_per_corruption: 5,
            sequences_per_perturbation: 2,
            clean_count: 20,
        };
        let (package, record) = relay
            .serve(&server, 42, &hash(b"blk"), &spec, "https://data.example/suites", "")
            .unwrap();
        assert_eq!(record.digest, package.digest());
        assert!(crypto::verify(
            &record.relay_pk,
            &relay_digest_message(42, &record.digest),
            &record.sigma
        ));

        // same block hash and request id: identical package on replay
        let (package2, _) = relay
            .serve(&server, 42, &hash(b"blk"), &spec, "https://data.example/suites", "")
            .unwrap();
        assert_eq!(package.digest(), package2.digest());
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let server = DatasetServer::new(small_suites());
        server.save_to_dir(dir.path()).unwrap();
        let loaded = DatasetServer::load_from_dir(dir.path()).unwrap();
        assert_eq!(server.suites, loaded.suites);
    }
}
