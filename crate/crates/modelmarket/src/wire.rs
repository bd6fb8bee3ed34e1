//! On-chain payload formats shared by enclaves (which sign them) and
//! contracts (which parse them). Encoding is canonical JSON of these
//! structs; the signature of an attestation transaction covers exactly
//! these bytes.

use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkResult;
use crate::crypto::{Commitment, Digest, PublicKey, Signature};
use crate::ledger::{Address, Money};

/// Attestation output signed by the enclave over the benchmark result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub eid: Digest,
    /// Digest of the sample package the metrics were computed on.
    pub sample_digest: Digest,
    pub result: BenchmarkResult,
}

impl BenchmarkOutput {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serialize output")
    }
}

/// Model report fields a seller publishes at registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSubmission {
    pub id_m: Digest,
    /// Content address of the encrypted model blob.
    pub addr_m: Digest,
    /// Hash of the candidate model's architecture program.
    pub prog_m: Digest,
    pub com_m: Commitment,
    pub com_k: Commitment,
    pub p_k: Signature,
    pub p_ck: Signature,
    pub p_cm: Signature,
    /// Key of the setup enclave that produced the registration proofs.
    pub setup_pk: PublicKey,
    /// Account bound to the seller's exchange enclave; claims must be
    /// attested under its key.
    pub exchange_account: Address,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TxPayload {
    /// Seller registration: publish a model report.
    PublishReport(ReportSubmission),
    /// Enclave announces itself for a benchmark flow ("transaction
    /// containing eid").
    AnnounceEid { id_m: Digest, eid: Digest },
    /// Commit receipt: the enclave attests the commitment it recomputed.
    CommitReceipt {
        id_m: Digest,
        eid: Digest,
        com_m_prime: Commitment,
        prog_hash: Digest,
    },
    /// Rollback-protection counter bump for a multi-step execution.
    StepCounter { eid: Digest, counter: u64 },
    /// Intermediator's anchored sample digest.
    RelayRecord {
        request_id: u64,
        digest: Digest,
        sampling_seed: Digest,
        attestation: Signature,
    },
    /// Final benchmark output.
    BenchOutput { id_m: Digest, output: BenchmarkOutput },
    /// Buyer opens an exchange with a deposit.
    BeInit {
        id_m: Digest,
        p_k: Signature,
        com_k: Commitment,
        deposit: Money,
    },
    /// Buyer reveals the key they want the secret encrypted under.
    BeRequest { be_id: u64, pk_b: PublicKey },
    /// Enclave-attested key release: ciphertext of the model secret under
    /// the buyer's key.
    BeClaim {
        be_id: u64,
        #[serde(with = "hex_vec")]
        ciphertext: Vec<u8>,
        pk_b: PublicKey,
    },
}

impl TxPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serialize payload")
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<TxPayload> {
        serde_json::from_slice(bytes).ok()
    }
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

/// Messages a contract emits for off-chain parties; the protocol driver
/// delivers them within the round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ContractMessage {
    /// Ask the seller to install the benchmarking program.
    Install {
        id_m: Digest,
        seller: Address,
        deadline: u64,
    },
    /// Ask the seller to commit their model inside the enclave.
    Commit {
        id_m: Digest,
        seller: Address,
        com_m: Commitment,
        deadline: u64,
    },
    /// Ask the chosen intermediator to fetch and relay benchmark samples.
    RelayRequest {
        request_id: u64,
        intermediator: Address,
        seller: Address,
        url: String,
        params: String,
    },
    /// Samples are anchored; ask the seller to run the evaluation.
    Evaluate {
        id_m: Digest,
        seller: Address,
        request_id: u64,
        sample_digest: Digest,
        deadline: u64,
    },
    /// Ask the seller to release the model secret to a buyer's key.
    RequestKey {
        be_id: u64,
        seller: Address,
        pk_b: PublicKey,
        com_k: Commitment,
        deadline: u64,
    },
}
