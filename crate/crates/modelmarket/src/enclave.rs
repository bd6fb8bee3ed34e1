//! Simulated trusted execution environment. An instance holds an
//! attestation keypair whose secret never crosses the boundary; programs
//! run as explicit `resume` calls driven by the (possibly malicious) host.
//!
//! Multi-step executions survive a malicious host through sealed state:
//! each step's state is encrypted under a key derived by PRF from the
//! attestation secret and a ledger anchor, tagged with a step counter that
//! is mirrored on the ledger. Feeding a stale, foreign, or modified blob
//! back into the enclave aborts the run instead of producing a signed
//! output.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::metrics::{self, ErrorTable, MetricError};
use crate::benchmark::model::ToyModel;
use crate::benchmark::suites::Sample;
use crate::benchmark::BenchmarkResult;
use crate::crypto::{
    self, commit, hash, Coin, Commitment, Digest, PublicKey, Signature, SignatureKeypair,
    SymmetricKey,
};
use crate::ledger::Address;
use crate::relay::{relay_digest_message, SamplePackage};
use crate::wire::{BenchmarkOutput, TxPayload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnclaveAbort {
    #[error("no program installed")]
    NotInstalled,
    #[error("commitment mismatch: loaded value differs from the on-chain commitment")]
    CommitmentMismatch,
    #[error("rollback detected: sealed counter {sealed} vs ledger counter {ledger}")]
    RollbackDetected { sealed: u64, ledger: u64 },
    #[error("sealed state failed authenticated decryption")]
    SealTampered,
    #[error("sealed state belongs to a different program")]
    ProgMismatch,
    #[error("benchmark samples failed authentication")]
    SampleTampered,
    #[error("no relay record anchored for request {0}")]
    RelayRecordMissing(u64),
    #[error("execution already complete")]
    ExecutionComplete,
    #[error("metric computation failed: {0}")]
    Metric(#[from] MetricError),
    #[error("malformed model bytes inside the enclave")]
    BadModel,
}

/// What the enclave is allowed to read from the chain. The ledger is
/// trusted for integrity, so this view is authoritative; the host only
/// controls which sealed blobs and samples it feeds in.
pub trait LedgerView {
    fn latest_block_hash(&self) -> Digest;
    fn step_counter(&self, eid: &Digest) -> u64;
    fn relay_anchor(&self, request_id: u64) -> Option<RelayAnchor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelayAnchor {
    pub request_id: u64,
    pub digest: Digest,
    pub sigma: Signature,
    pub relay_pk: PublicKey,
}

/// The program descriptor installed into a benchmarking enclave: the
/// candidate architecture, the baseline model used for normalization, and
/// the metric step layout. Hash of the serialized form identifies it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgDescriptor {
    pub version: u32,
    pub model_arch: crate::benchmark::ModelArch,
    #[serde(with = "hex_vec")]
    pub baseline_model: Vec<u8>,
    pub steps: Vec<String>,
}

mod hex_vec {
    pub fn serialize<S: serde::Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }
    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = <String as serde::Deserialize>::deserialize(d)?;
        hex::decode(&text).map_err(serde::de::Error::custom)
    }
}

impl ProgDescriptor {
    pub fn benchmark(model_arch: crate::benchmark::ModelArch, baseline_model: Vec<u8>) -> Self {
        ProgDescriptor {
            version: 1,
            model_arch,
            baseline_model,
            steps: vec!["mce".into(), "mfp".into(), "ce".into()],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serialize prog")
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<ProgDescriptor> {
        serde_json::from_slice(bytes).ok()
    }
}

/// Sealed execution state held by the host between steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SealedState {
    #[serde(with = "hex_vec")]
    pub ciphertext: Vec<u8>,
    pub counter: u64,
    /// Ledger block hash the sealing key was derived from.
    pub anchor: Digest,
}

/// Private benchmark execution state, serialized into the sealed blob.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BenchState {
    #[serde(with = "hex_vec")]
    model_bytes: Vec<u8>,
    com_m_prime: Commitment,
    /// Next step to execute: 1 = mCE, 2 = mFP, 3 = ce + output.
    step: u64,
    cand_table: Option<ErrorTable>,
    base_table: Option<ErrorTable>,
    cand_fp: Option<Vec<f64>>,
    base_fp: Option<Vec<f64>>,
    base_ce: Option<f64>,
}

/// Attested message: payload bytes plus the enclave signature over them,
/// ready to be wrapped into an attestation transaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Attested {
    pub payload: Vec<u8>,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstallReceipt {
    pub eid: Digest,
    pub nonce: [u8; 32],
    pub okay: bool,
}

#[derive(Clone, Debug)]
pub struct CommitStep {
    /// `tx_c`: the commit receipt to forward to the chain.
    pub receipt: Attested,
    pub com_m_prime: Commitment,
    pub sealed: SealedState,
    /// Counter bump to anchor in the same round as the seal.
    pub counter_tx: Attested,
}

#[derive(Clone, Debug)]
pub enum EvalStep {
    /// Intermediate step: new sealed state plus its counter bump.
    Sealed {
        sealed: SealedState,
        counter_tx: Attested,
    },
    /// Final step: the attested benchmark output (`tx_o`) plus the
    /// terminal counter bump.
    Output {
        output: Box<BenchmarkOutput>,
        receipt: Attested,
        counter_tx: Attested,
    },
}

#[derive(Clone, Debug)]
pub struct KeyRelease {
    /// `AEnc_{pk_B}(k_m)`.
    pub ciphertext: Vec<u8>,
    pub pk_b: PublicKey,
    /// `tx_o'`: attested claim payload to forward to the chain.
    pub receipt: Attested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnclaveConfig {
    /// Cap on sample bytes resident during evaluation; larger inputs are
    /// processed in batches (a stand-in for the TEE memory limit).
    pub resident_sample_cap: usize,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        EnclaveConfig {
            resident_sample_cap: 1 << 20,
        }
    }
}

struct Installed {
    prog: ProgDescriptor,
    prog_hash: Digest,
}

pub struct EnclaveInstance {
    eid: Digest,
    owner: Address,
    nonce: [u8; 32],
    keypair: SignatureKeypair,
    installed: Option<Installed>,
    config: EnclaveConfig,
}

impl EnclaveInstance {
    /// Bring up a fresh instance: new attestation keypair, fresh nonce,
    /// eid derived from owner and nonce.
    pub fn new(owner: Address, rng: &mut impl RngCore) -> EnclaveInstance {
        Self::with_config(owner, EnclaveConfig::default(), rng)
    }

    pub fn with_config(
        owner: Address,
        config: EnclaveConfig,
        rng: &mut impl RngCore,
    ) -> EnclaveInstance {
        let keypair = SignatureKeypair::generate(rng);
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        let eid = crypto::hash_parts(&[b"eid", owner.as_bytes(), &nonce]);
        EnclaveInstance {
            eid,
            owner,
            nonce,
            keypair,
            installed: None,
            config,
        }
    }

    pub fn eid(&self) -> Digest {
        self.eid
    }

    pub fn owner(&self) -> Address {
        self.owner
    }

    pub fn nonce(&self) -> [u8; 32] {
        self.nonce
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    /// Sign arbitrary payload bytes with the attestation key. Used by the
    /// host to wrap enclave outputs into transactions.
    pub fn attest(&self, payload: &[u8]) -> Signature {
        self.keypair.sign(payload)
    }

    /// Install a program. A second install is a no-op returning the
    /// original receipt: the slot is written only once.
    pub fn install(&mut self, prog_bytes: &[u8]) -> Result<InstallReceipt, EnclaveAbort> {
        if self.installed.is_none() {
            let prog = ProgDescriptor::from_bytes(prog_bytes).ok_or(EnclaveAbort::BadModel)?;
            self.installed = Some(Installed {
                prog,
                prog_hash: hash(prog_bytes),
            });
        }
        Ok(InstallReceipt {
            eid: self.eid,
            nonce: self.nonce,
            okay: true,
        })
    }

    pub fn prog_hash(&self) -> Option<Digest> {
        self.installed.as_ref().map(|i| i.prog_hash)
    }

    fn installed(&self) -> Result<&Installed, EnclaveAbort> {
        self.installed.as_ref().ok_or(EnclaveAbort::NotInstalled)
    }

    /// `tx` payload for announcing this enclave to the contract.
    pub fn announce_payload(&self, id_m: Digest) -> Attested {
        let payload = TxPayload::AnnounceEid {
            id_m,
            eid: self.eid,
        }
        .to_bytes();
        let signature = self.keypair.sign(&payload);
        Attested { payload, signature }
    }

    fn seal(&self, state: &BenchState, counter: u64, anchor: Digest) -> SealedState {
        let prog_hash = self.installed.as_ref().expect("installed").prog_hash;
        let plaintext = serde_json::to_vec(&(state, prog_hash)).expect("serialize state");
        let (key, coin) = self.seal_key(counter, &anchor);
        let mut nonce = [0u8; 12];
        nonce.copy_from_slice(&coin.0[..12]);
        SealedState {
            ciphertext: crypto::enc_with_nonce(&key, &plaintext, &nonce),
            counter,
            anchor,
        }
    }

    fn seal_key(&self, counter: u64, anchor: &Digest) -> (SymmetricKey, Coin) {
        let mut input = anchor.as_bytes().to_vec();
        input.extend_from_slice(&counter.to_le_bytes());
        crypto::prf(&self.keypair.secret_bytes(), &input)
    }

    /// Recover sealed state: the ledger counter must match the sealed
    /// counter (rollback detection), decryption must authenticate, and the
    /// embedded program hash must match the installed program.
    fn unseal(&self, sealed: &SealedState, view: &dyn LedgerView) -> Result<BenchState, EnclaveAbort> {
        let ledger_counter = view.step_counter(&self.eid);
        if sealed.counter != ledger_counter {
            return Err(EnclaveAbort::RollbackDetected {
                sealed: sealed.counter,
                ledger: ledger_counter,
            });
        }
        let (key, _) = self.seal_key(sealed.counter, &sealed.anchor);
        let plaintext =
            crypto::dec(&key, &sealed.ciphertext).map_err(|_| EnclaveAbort::SealTampered)?;
        let (state, prog_hash): (BenchState, Digest) =
            serde_json::from_slice(&plaintext).map_err(|_| EnclaveAbort::SealTampered)?;
        if prog_hash != self.installed()?.prog_hash {
            return Err(EnclaveAbort::ProgMismatch);
        }
        Ok(state)
    }

    fn counter_tx(&self, counter: u64) -> Attested {
        let payload = TxPayload::StepCounter {
            eid: self.eid,
            counter,
        }
        .to_bytes();
        let signature = self.keypair.sign(&payload);
        Attested { payload, signature }
    }

    /// Commit step: recompute the commitment over the loaded model and the
    /// relayed coin, abort on mismatch with the on-chain value, otherwise
    /// sign the receipt and seal the initial execution state.
    pub fn resume_commit(
        &self,
        id_m: Digest,
        onchain_com: Commitment,
        model_bytes: &[u8],
        coin: &Coin,
        view: &dyn LedgerView,
    ) -> Result<CommitStep, EnclaveAbort> {
        let installed = self.installed()?;
        let ledger_counter = view.step_counter(&self.eid);
        if ledger_counter != 0 {
            return Err(EnclaveAbort::RollbackDetected {
                sealed: 0,
                ledger: ledger_counter,
            });
        }
        let com_m_prime = commit(model_bytes, coin);
        if com_m_prime != onchain_com {
            return Err(EnclaveAbort::CommitmentMismatch);
        }
        // the model must consume the benchmark's inputs and emit its labels
        let model = ToyModel::from_bytes(model_bytes).map_err(|_| EnclaveAbort::BadModel)?;
        if model.arch.input_dim != installed.prog.model_arch.input_dim
            || model.arch.classes != installed.prog.model_arch.classes
        {
            return Err(EnclaveAbort::BadModel);
        }

        let payload = TxPayload::CommitReceipt {
            id_m,
            eid: self.eid,
            com_m_prime,
            prog_hash: installed.prog_hash,
        }
        .to_bytes();
        let signature = self.keypair.sign(&payload);

        let state = BenchState {
            model_bytes: model_bytes.to_vec(),
            com_m_prime,
            step: 1,
            cand_table: None,
            base_table: None,
            cand_fp: None,
            base_fp: None,
            base_ce: None,
        };
        let sealed = self.seal(&state, 1, view.latest_block_hash());
        Ok(CommitStep {
            receipt: Attested { payload, signature },
            com_m_prime,
            sealed,
            counter_tx: self.counter_tx(1),
        })
    }

    /// One evaluation step. Verifies the sealed state freshness and the
    /// sample package against the anchored relay record, then runs the
    /// step's metric program. Steps: 1 = corruption errors, 2 = flip
    /// rates, 3 = clean error and final assembly.
    pub fn resume_evaluate(
        &self,
        id_m: Digest,
        sealed: &SealedState,
        package: &SamplePackage,
        request_id: u64,
        view: &dyn LedgerView,
    ) -> Result<EvalStep, EnclaveAbort> {
        let installed = self.installed()?;
        let mut state = self.unseal(sealed, view)?;
        if state.step > 3 {
            return Err(EnclaveAbort::ExecutionComplete);
        }

        // authenticate the samples end-to-end against the anchored digest
        let anchor = view
            .relay_anchor(request_id)
            .ok_or(EnclaveAbort::RelayRecordMissing(request_id))?;
        if package.digest() != anchor.digest {
            return Err(EnclaveAbort::SampleTampered);
        }
        if !crypto::verify(
            &anchor.relay_pk,
            &relay_digest_message(request_id, &anchor.digest),
            &anchor.sigma,
        ) {
            return Err(EnclaveAbort::SampleTampered);
        }

        let model =
            ToyModel::from_bytes(&state.model_bytes).map_err(|_| EnclaveAbort::BadModel)?;
        let baseline = ToyModel::from_bytes(&installed.prog.baseline_model)
            .map_err(|_| EnclaveAbort::BadModel)?;

        match state.step {
            1 => {
                state.cand_table = Some(self.corruption_table(&model, package)?);
                state.base_table = Some(self.corruption_table(&baseline, package)?);
                state.step = 2;
            }
            2 => {
                state.cand_fp = Some(self.flip_rates(&model, package)?);
                state.base_fp = Some(self.flip_rates(&baseline, package)?);
                state.step = 3;
            }
            3 => {
                let ce = self.clean_error(&model, &package.clean)?;
                let base_ce = self.clean_error(&baseline, &package.clean)?;
                let cand_table = state.cand_table.as_ref().expect("step 1 ran");
                let base_table = state.base_table.as_ref().expect("step 1 ran");
                let (ce_per_corruption, mce) = metrics::mce(cand_table, base_table)?;
                let relative_mce = metrics::relative_mce(cand_table, ce, base_table, base_ce)?;
                let cand_fp = state.cand_fp.clone().expect("step 2 ran");
                let base_fp = state.base_fp.as_ref().expect("step 2 ran");
                let mfp = metrics::mfp(&cand_fp, base_fp, &package.perturbation_kinds)?;

                let result = BenchmarkResult {
                    ce,
                    corruption_kinds: package.corruption_kinds.clone(),
                    ce_per_corruption,
                    mce,
                    relative_mce,
                    perturbation_kinds: package.perturbation_kinds.clone(),
                    fp_per_perturbation: cand_fp,
                    mfp,
                    baseline_id: hash(&installed.prog.baseline_model),
                };
                let output = BenchmarkOutput {
                    eid: self.eid,
                    sample_digest: anchor.digest,
                    result,
                };
                let payload = TxPayload::BenchOutput {
                    id_m,
                    output: output.clone(),
                }
                .to_bytes();
                let signature = self.keypair.sign(&payload);
                return Ok(EvalStep::Output {
                    output: Box::new(output),
                    receipt: Attested { payload, signature },
                    counter_tx: self.counter_tx(sealed.counter + 1),
                });
            }
            _ => return Err(EnclaveAbort::ExecutionComplete),
        }

        let next_counter = sealed.counter + 1;
        let new_sealed = self.seal(&state, next_counter, view.latest_block_hash());
        Ok(EvalStep::Sealed {
            sealed: new_sealed,
            counter_tx: self.counter_tx(next_counter),
        })
    }

    /// Key-release step of the exchange program: recompute the commitment
    /// to the loaded secret, abort on mismatch, otherwise encrypt the
    /// secret under the buyer's key and attest the result.
    pub fn resume_request_key(
        &self,
        be_id: u64,
        onchain_com_k: Commitment,
        k_m: &SymmetricKey,
        coin_k: &Coin,
        pk_b: &PublicKey,
        resume_coin: &Coin,
    ) -> Result<KeyRelease, EnclaveAbort> {
        let com_k_prime = commit(k_m.as_bytes(), coin_k);
        if com_k_prime != onchain_com_k {
            return Err(EnclaveAbort::CommitmentMismatch);
        }
        // encryption randomness is derived from the resume coin so the
        // run is reproducible
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&resume_coin.0);
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::from_seed(seed);
        let ciphertext = crypto::aenc(pk_b, k_m.as_bytes(), &mut rng);

        let payload = TxPayload::BeClaim {
            be_id,
            ciphertext: ciphertext.clone(),
            pk_b: *pk_b,
        }
        .to_bytes();
        let signature = self.keypair.sign(&payload);
        Ok(KeyRelease {
            ciphertext,
            pk_b: *pk_b,
            receipt: Attested { payload, signature },
        })
    }

    fn sample_bytes(dim: usize) -> usize {
        4 + dim * 4
    }

    /// Error fraction computed in batches bounded by the resident cap.
    /// Batching never changes the counts, only the working-set size.
    fn clean_error(&self, model: &ToyModel, samples: &[Sample]) -> Result<f64, EnclaveAbort> {
        if samples.is_empty() {
            return Err(EnclaveAbort::Metric(MetricError::EmptySet));
        }
        let dim = model.arch.input_dim as usize;
        let batch = (self.config.resident_sample_cap / Self::sample_bytes(dim)).max(1);
        let mut wrong = 0usize;
        for chunk in samples.chunks(batch) {
            wrong += chunk
                .iter()
                .filter(|s| model.predict(&s.features) != s.label)
                .count();
        }
        Ok(wrong as f64 / samples.len() as f64)
    }

    fn corruption_table(
        &self,
        model: &ToyModel,
        package: &SamplePackage,
    ) -> Result<ErrorTable, EnclaveAbort> {
        let mut errors = Vec::with_capacity(package.corruption.len());
        for by_severity in &package.corruption {
            let mut row = Vec::with_capacity(by_severity.len());
            for cell in by_severity {
                row.push(self.clean_error(model, cell)?);
            }
            errors.push(row);
        }
        Ok(ErrorTable {
            kinds: package.corruption_kinds.clone(),
            errors,
        })
    }

    fn flip_rates(
        &self,
        model: &ToyModel,
        package: &SamplePackage,
    ) -> Result<Vec<f64>, EnclaveAbort> {
        let mut rates = Vec::with_capacity(package.perturbation.len());
        for seqs in &package.perturbation {
            if seqs.is_empty() {
                return Err(EnclaveAbort::Metric(MetricError::EmptySet));
            }
            let mut flips = 0usize;
            let mut pairs = 0usize;
            // batch at sequence granularity to respect the resident cap
            for seq in seqs {
                let mut prev = model.predict(&seq.frames[0]);
                for frame in &seq.frames[1..] {
                    let next = model.predict(frame);
                    if next != prev {
                        flips += 1;
                    }
                    prev = next;
                    pairs += 1;
                }
            }
            rates.push(flips as f64 / pairs as f64);
        }
        Ok(rates)
    }
}

/// What a seller's one-shot setup enclave produces at registration time:
/// the encrypted model, its content address, commitments to the model and
/// the key, and the attested proofs binding them together.
#[derive(Clone, Debug)]
pub struct RegistrationArtifacts {
    pub ciphertext: Vec<u8>,
    pub addr_m: Digest,
    pub com_m: Commitment,
    pub com_k: Commitment,
    pub p_k: Signature,
    pub p_ck: Signature,
    pub p_cm: Signature,
    pub setup_pk: PublicKey,
}

fn p_k_message(addr_m: &Digest, com_k: &Commitment, com_m: &Commitment) -> Vec<u8> {
    let mut msg = b"proof-key-binding".to_vec();
    msg.extend_from_slice(addr_m.as_bytes());
    msg.extend_from_slice(com_k.value.as_bytes());
    msg.extend_from_slice(com_m.value.as_bytes());
    msg
}

fn p_com_message(tag: &[u8], com: &Commitment) -> Vec<u8> {
    let mut msg = tag.to_vec();
    msg.extend_from_slice(com.value.as_bytes());
    msg
}

/// One-shot setup-enclave run: encrypt the model under `k_m`, commit to
/// both, and attest that the stored ciphertext is the committed model
/// encrypted under the committed key.
pub fn setup_enclave_register(
    model_bytes: &[u8],
    k_m: &SymmetricKey,
    coin_m: &Coin,
    coin_k: &Coin,
    rng: &mut impl RngCore,
) -> RegistrationArtifacts {
    let setup = SignatureKeypair::generate(rng);
    let ciphertext = crypto::enc(k_m, model_bytes, rng);
    let addr_m = hash(&ciphertext);
    let com_m = commit(model_bytes, coin_m);
    let com_k = commit(k_m.as_bytes(), coin_k);
    let p_k = setup.sign(&p_k_message(&addr_m, &com_k, &com_m));
    let p_ck = setup.sign(&p_com_message(b"proof-com-k", &com_k));
    let p_cm = setup.sign(&p_com_message(b"proof-com-m", &com_m));
    RegistrationArtifacts {
        ciphertext,
        addr_m,
        com_m,
        com_k,
        p_k,
        p_ck,
        p_cm,
        setup_pk: setup.public(),
    }
}

pub fn verify_p_k(
    setup_pk: &PublicKey,
    addr_m: &Digest,
    com_k: &Commitment,
    com_m: &Commitment,
    sig: &Signature,
) -> bool {
    crypto::verify(setup_pk, &p_k_message(addr_m, com_k, com_m), sig)
}

pub fn verify_p_ck(setup_pk: &PublicKey, com_k: &Commitment, sig: &Signature) -> bool {
    crypto::verify(setup_pk, &p_com_message(b"proof-com-k", com_k), sig)
}

pub fn verify_p_cm(setup_pk: &PublicKey, com_m: &Commitment, sig: &Signature) -> bool {
    crypto::verify(setup_pk, &p_com_message(b"proof-com-m", com_m), sig)
}
