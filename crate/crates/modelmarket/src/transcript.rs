//! Flow transcripts: an ordered log of every message and storage write a
//! scenario produces, with per-item byte sizes. The byte accounting over a
//! transcript reproduces the closed-form space/communication totals of the
//! design's cost analysis, and the transcript digest is the determinism
//! witness for whole scenario runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest};
use crate::ledger::Address;

/// Accounting identity of a participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Seller(Address),
    Buyer(Address),
    /// Host account of the intermediator serving a relay request.
    RelayHost(Address),
    /// Account an enclave's attestation key is bound to.
    EnclaveAccount(Address),
    /// An enclave instance itself (host/enclave boundary traffic).
    Enclave(Digest),
    BmContract,
    BeContract,
    /// The chain itself, for read-from-ledger deliveries.
    Ledger,
    DataServer,
}

/// Which flow an event belongs to; accounting is grouped per flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flow {
    /// Registration and other bookkeeping outside the analysed flows.
    Setup,
    /// Benchmark flow of one model report.
    Bench(Digest),
    /// One buyer-initiated exchange.
    Exchange(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadItem {
    pub label: String,
    pub bytes: u64,
}

impl PayloadItem {
    pub fn new(label: &str, bytes: usize) -> PayloadItem {
        PayloadItem {
            label: label.to_string(),
            bytes: bytes as u64,
        }
    }
}

/// One message between parties. `payload` lists the objects the cost
/// analysis counts for this hop; bookkeeping-only messages carry none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: u64,
    pub from: Party,
    pub to: Party,
    pub kind: String,
    pub flow: Flow,
    pub payload: Vec<PayloadItem>,
}

/// One storage write attributed to a party.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEvent {
    pub round: u64,
    pub party: Party,
    pub flow: Flow,
    pub label: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
    pub stores: Vec<StoreEvent>,
    /// Terminal verdict lines, one per completed or aborted flow.
    pub verdicts: Vec<String>,
}

impl Transcript {
    pub fn push_event(
        &mut self,
        round: u64,
        from: Party,
        to: Party,
        kind: &str,
        flow: Flow,
        payload: Vec<PayloadItem>,
    ) {
        self.events.push(Event {
            round,
            from,
            to,
            kind: kind.to_string(),
            flow,
            payload,
        });
    }

    pub fn push_store(&mut self, round: u64, party: Party, flow: Flow, label: &str, bytes: usize) {
        self.stores.push(StoreEvent {
            round,
            party,
            flow,
            label: label.to_string(),
            bytes: bytes as u64,
        });
    }

    pub fn push_verdict(&mut self, line: String) {
        self.verdicts.push(line);
    }

    /// JSON-lines export: one event or store per line, in order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("serialize event"));
            out.push('\n');
        }
        for s in &self.stores {
            out.push_str(&serde_json::to_string(s).expect("serialize store"));
            out.push('\n');
        }
        for v in &self.verdicts {
            out.push_str(&serde_json::to_string(v).expect("serialize verdict"));
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> Digest {
        hash(self.to_jsonl().as_bytes())
    }

    /// Per-party, per-flow byte totals.
    pub fn account(&self) -> AccountingReport {
        let mut comm: BTreeMap<(Flow, Party), CommTotals> = BTreeMap::new();
        for e in &self.events {
            let bytes: u64 = e.payload.iter().map(|p| p.bytes).sum();
            if bytes == 0 {
                continue;
            }
            comm.entry((e.flow, e.from)).or_default().sent += bytes;
            comm.entry((e.flow, e.to)).or_default().received += bytes;
        }
        let mut space: BTreeMap<(Flow, Party), u64> = BTreeMap::new();
        for s in &self.stores {
            *space.entry((s.flow, s.party)).or_default() += s.bytes;
        }
        AccountingReport { comm, space }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CommTotals {
    pub sent: u64,
    pub received: u64,
}

impl CommTotals {
    pub fn total(&self) -> u64 {
        self.sent + self.received
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AccountingReport {
    pub comm: BTreeMap<(Flow, Party), CommTotals>,
    pub space: BTreeMap<(Flow, Party), u64>,
}

impl AccountingReport {
    fn comm_where(&self, flow: Flow, pick: impl Fn(&Party) -> bool) -> u64 {
        self.comm
            .iter()
            .filter(|((f, p), _)| *f == flow && pick(p))
            .map(|(_, t)| t.total())
            .sum()
    }

    fn space_where(&self, flow: Flow, pick: impl Fn(&Party) -> bool) -> u64 {
        self.space
            .iter()
            .filter(|((f, p), _)| *f == flow && pick(p))
            .map(|(_, b)| *b)
            .sum()
    }

    pub fn bm_contract_comm(&self, flow: Flow) -> u64 {
        self.comm_where(flow, |p| matches!(p, Party::BmContract))
    }

    pub fn bm_contract_space(&self, flow: Flow) -> u64 {
        self.space_where(flow, |p| matches!(p, Party::BmContract))
    }

    pub fn seller_comm(&self, flow: Flow) -> u64 {
        self.comm_where(flow, |p| matches!(p, Party::Seller(_)))
    }

    pub fn seller_space(&self, flow: Flow) -> u64 {
        self.space_where(flow, |p| matches!(p, Party::Seller(_)))
    }

    pub fn buyer_comm(&self, flow: Flow) -> u64 {
        self.comm_where(flow, |p| matches!(p, Party::Buyer(_)))
    }

    pub fn be_contract_comm(&self, flow: Flow) -> u64 {
        self.comm_where(flow, |p| matches!(p, Party::BeContract))
    }

    pub fn be_contract_space(&self, flow: Flow) -> u64 {
        self.space_where(flow, |p| matches!(p, Party::BeContract))
    }
}

/// The element sizes a scenario fixes; every closed-form total below is a
/// function of these.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowSizes {
    pub prog: u64,
    pub outp: u64,
    pub model: u64,
    pub samples: u64,
    pub aenc_key: u64,
}

/// Closed-form space and communication totals of the cost analysis.
/// Fixed element sizes: digests and commitments 32 bytes, public keys 64,
/// signatures and attestations 70.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosedFormTotals {
    /// Benchmark contract storage: `4*32 + |prog| + |outp|`
    /// (Addr_m, ID_m, Com_m, Hash(samples), the program, the output).
    pub bm_contract_space: u64,
    /// Benchmark contract traffic:
    /// `|prog| + 2*32 + 2*70 + 3*70 + |outp|`.
    pub bm_contract_comm: u64,
    /// Seller storage in the benchmark flow:
    /// `32 + |samples| + |model| + |prog| + |outp|`.
    pub bm_seller_space: u64,
    /// Seller traffic in the benchmark flow:
    /// `|prog| + 2*32 + 2*70 + 70 + |model| + |samples| + |outp|`.
    pub bm_seller_comm: u64,
    /// Seller storage in the exchange flow:
    /// `2*32 + 64 + |aenc| + 70`.
    pub me_seller_space: u64,
    /// Seller traffic in the exchange flow:
    /// `64 + 2*32 + 70 + (64 + |aenc|) + 70`.
    pub me_seller_comm: u64,
    /// Buyer submissions in the exchange flow: `32 + 32 + 64 + 70`.
    pub me_buyer_comm: u64,
    /// Exchange contract storage: `2*32 + 64 + |aenc| + 2*70`.
    pub be_contract_space: u64,
    /// Exchange contract traffic: `(64 + 2*32 + 70) + (70 + 64 + |aenc|)`.
    pub be_contract_comm: u64,
}

pub fn closed_form_totals(sizes: &FlowSizes) -> ClosedFormTotals {
    let FlowSizes {
        prog,
        outp,
        model,
        samples,
        aenc_key,
    } = *sizes;
    ClosedFormTotals {
        bm_contract_space: 4 * 32 + prog + outp,
        bm_contract_comm: prog + 2 * 32 + 2 * 70 + 3 * 70 + outp,
        bm_seller_space: 32 + samples + model + prog + outp,
        bm_seller_comm: prog + 2 * 32 + 2 * 70 + 70 + model + samples + outp,
        me_seller_space: 2 * 32 + 64 + aenc_key + 70,
        me_seller_comm: 64 + 2 * 32 + 70 + (64 + aenc_key) + 70,
        me_buyer_comm: 32 + 32 + 64 + 70,
        be_contract_space: 2 * 32 + 64 + aenc_key + 2 * 70,
        be_contract_comm: (64 + 2 * 32 + 70) + (70 + 64 + aenc_key),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting_sums_payload_items_per_party() {
        let mut t = Transcript::default();
        let flow = Flow::Bench(Digest::ZERO);
        let seller = Party::Seller(Address([1; 20]));
        t.push_event(
            1,
            Party::BmContract,
            seller,
            "install",
            flow,
            vec![PayloadItem::new("prog", 100)],
        );
        t.push_event(
            2,
            seller,
            Party::BmContract,
            "tx_c",
            flow,
            vec![PayloadItem::new("sig_c", 70)],
        );
        t.push_store(1, Party::BmContract, flow, "prog", 100);

        let report = t.account();
        assert_eq!(report.bm_contract_comm(flow), 170);
        assert_eq!(report.seller_comm(flow), 170);
        assert_eq!(report.bm_contract_space(flow), 100);
    }

    #[test]
    fn digest_tracks_content() {
        let mut a = Transcript::default();
        let b = Transcript::default();
        assert_eq!(a.digest(), b.digest());
        a.push_verdict("flow ok".into());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn closed_forms_match_hand_arithmetic() {
        let sizes = FlowSizes {
            prog: 1000,
            outp: 500,
            model: 2000,
            samples: 4000,
            aenc_key: 124,
        };
        let t = closed_form_totals(&sizes);
        assert_eq!(t.bm_contract_space, 128 + 1000 + 500);
        assert_eq!(t.bm_contract_comm, 1000 + 64 + 350 + 500);
        assert_eq!(t.bm_seller_space, 32 + 4000 + 2000 + 1000 + 500);
        assert_eq!(t.bm_seller_comm, 1000 + 64 + 210 + 2000 + 4000 + 500);
        assert_eq!(t.me_seller_space, 64 + 64 + 124 + 70);
        assert_eq!(t.me_seller_comm, 64 + 64 + 70 + 64 + 124 + 70);
        assert_eq!(t.me_buyer_comm, 198);
        assert_eq!(t.be_contract_space, 64 + 64 + 124 + 140);
        assert_eq!(t.be_contract_comm, 198 + 134 + 124);
    }
}
