//! Simulated blockchain: append-only block log, account balances, a
//! round-based trusted clock, and transaction verification. Contract logic
//! lives elsewhere; the ledger delivers each sealed transaction to a
//! [`TxHandlers`] implementation in order, once per round.
//!
//! Attestation transactions are verified under the enclave public key bound
//! to the sender account, so enclave-signed messages are ordinary
//! transactions here.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest, PublicKey, Signature};

pub type Money = u64;
pub type Round = u64;

pub const ADDRESS_LEN: usize = 20;

/// 20-byte account id derived from a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Address {
        let d = hash(pk.as_bytes());
        let mut a = [0u8; ADDRESS_LEN];
        a.copy_from_slice(&d.0[12..32]);
        Address(a)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..8])
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let raw = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let arr: [u8; ADDRESS_LEN] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("wrong length"))?;
        Ok(Address(arr))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Account {
    pub address: Address,
    pub balance: Money,
    /// Key the account owner signs plain transactions with.
    pub user_pk: PublicKey,
    /// Enclave attestation key bound to this account, immutable once set.
    pub bound_enclave_pk: Option<PublicKey>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxKind {
    Plain,
    Attestation,
}

#[derive(Clone, Debug, Serialize)]
pub struct Transaction {
    pub sender: Address,
    pub kind: TxKind,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub signature: Signature,
}

mod hex_bytes {
    pub fn serialize<S: serde::Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }
}

impl Transaction {
    pub fn tx_hash(&self) -> Digest {
        hash_parts(&[
            self.sender.as_bytes(),
            &[match self.kind {
                TxKind::Plain => 0u8,
                TxKind::Attestation => 1u8,
            }],
            &self.payload,
            self.signature.as_bytes(),
        ])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Block {
    pub height: Round,
    pub parent: Digest,
    pub hash: Digest,
    pub transactions: Vec<Transaction>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown sender account")]
    UnknownSender,
    #[error("bad transaction signature")]
    BadSignature,
    #[error("sender account has no bound enclave key")]
    UnboundEnclaveKey,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("unknown account")]
    UnknownAccount,
    #[error("unknown escrow pot")]
    UnknownEscrow,
    #[error("enclave key already bound")]
    AlreadyBound,
}

/// Contract-side view of the chain during a round: money operations plus
/// the clock and sealing-block hash. All mutation funnels through here.
pub struct RoundCtx<'a> {
    accounts: &'a mut BTreeMap<Address, Account>,
    escrows: &'a mut BTreeMap<u64, EscrowPot>,
    pub round: Round,
    pub block_hash: Digest,
}

#[derive(Clone, Debug, Serialize)]
pub struct EscrowPot {
    pub amount: Money,
    pub payer: Address,
}

impl RoundCtx<'_> {
    pub fn balance(&self, addr: &Address) -> Option<Money> {
        self.accounts.get(addr).map(|a| a.balance)
    }

    pub fn transfer(&mut self, from: &Address, to: &Address, amount: Money) -> Result<(), LedgerError> {
        if !self.accounts.contains_key(to) {
            return Err(LedgerError::UnknownAccount);
        }
        {
            let src = self.accounts.get_mut(from).ok_or(LedgerError::UnknownAccount)?;
            if src.balance < amount {
                return Err(LedgerError::InsufficientFunds);
            }
            src.balance -= amount;
        }
        self.accounts.get_mut(to).expect("checked").balance += amount;
        Ok(())
    }

    /// Move `amount` from `from` into the escrow pot `id`, held by the
    /// contract until released or refunded.
    pub fn escrow(&mut self, id: u64, from: &Address, amount: Money) -> Result<(), LedgerError> {
        let src = self.accounts.get_mut(from).ok_or(LedgerError::UnknownAccount)?;
        if src.balance < amount {
            return Err(LedgerError::InsufficientFunds);
        }
        src.balance -= amount;
        self.escrows.insert(id, EscrowPot { amount, payer: *from });
        Ok(())
    }

    pub fn release(&mut self, id: u64, to: &Address) -> Result<Money, LedgerError> {
        let pot = self.escrows.remove(&id).ok_or(LedgerError::UnknownEscrow)?;
        let dst = self.accounts.get_mut(to).ok_or(LedgerError::UnknownAccount)?;
        dst.balance += pot.amount;
        Ok(pot.amount)
    }

    pub fn refund(&mut self, id: u64) -> Result<Money, LedgerError> {
        let pot = self.escrows.remove(&id).ok_or(LedgerError::UnknownEscrow)?;
        let dst = self
            .accounts
            .get_mut(&pot.payer)
            .ok_or(LedgerError::UnknownAccount)?;
        dst.balance += pot.amount;
        Ok(pot.amount)
    }
}

/// Contract dispatch: called once per sealed transaction, then once at the
/// end of each round for time-based rules.
pub trait TxHandlers {
    fn on_transaction(&mut self, ctx: &mut RoundCtx<'_>, tx: &Transaction);
    fn on_time(&mut self, ctx: &mut RoundCtx<'_>);
}

pub struct Ledger {
    accounts: BTreeMap<Address, Account>,
    escrows: BTreeMap<u64, EscrowPot>,
    blocks: Vec<Block>,
    mempool: Vec<Transaction>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Ledger {
        let genesis = Block {
            height: 0,
            parent: Digest::ZERO,
            hash: hash(b"genesis"),
            transactions: Vec::new(),
        };
        Ledger {
            accounts: BTreeMap::new(),
            escrows: BTreeMap::new(),
            blocks: vec![genesis],
            mempool: Vec::new(),
        }
    }

    /// Current round clock: the height of the latest block.
    pub fn round(&self) -> Round {
        self.blocks.last().expect("genesis").height
    }

    pub fn latest_block_hash(&self) -> Digest {
        self.blocks.last().expect("genesis").hash
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn create_account(&mut self, user_pk: PublicKey, balance: Money) -> Address {
        let address = Address::from_public_key(&user_pk);
        self.accounts.insert(
            address,
            Account {
                address,
                balance,
                user_pk,
                bound_enclave_pk: None,
            },
        );
        address
    }

    /// Bind an enclave attestation key to an account. One-shot: rebinding
    /// is rejected.
    pub fn bind_enclave_key(&mut self, addr: &Address, pk: PublicKey) -> Result<(), LedgerError> {
        let account = self.accounts.get_mut(addr).ok_or(LedgerError::UnknownAccount)?;
        if account.bound_enclave_pk.is_some() {
            return Err(LedgerError::AlreadyBound);
        }
        account.bound_enclave_pk = Some(pk);
        Ok(())
    }

    pub fn account(&self, addr: &Address) -> Option<&Account> {
        self.accounts.get(addr)
    }

    pub fn balance(&self, addr: &Address) -> Money {
        self.accounts.get(addr).map(|a| a.balance).unwrap_or(0)
    }

    /// Total money in the system: balances plus escrowed pots. Constant
    /// across any scenario run.
    pub fn total_money(&self) -> Money {
        let balances: Money = self.accounts.values().map(|a| a.balance).sum();
        let escrowed: Money = self.escrows.values().map(|p| p.amount).sum();
        balances + escrowed
    }

    pub fn escrow_amount(&self, id: u64) -> Option<Money> {
        self.escrows.get(&id).map(|p| p.amount)
    }

    /// Queue a transaction for the next block. Rejected up front when the
    /// sender is unknown or the signature does not verify under the right
    /// key for its kind.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), LedgerError> {
        let account = self.accounts.get(&tx.sender).ok_or(LedgerError::UnknownSender)?;
        let pk = match tx.kind {
            TxKind::Plain => &account.user_pk,
            TxKind::Attestation => account
                .bound_enclave_pk
                .as_ref()
                .ok_or(LedgerError::UnboundEnclaveKey)?,
        };
        if !crate::crypto::verify(pk, &tx.payload, &tx.signature) {
            return Err(LedgerError::BadSignature);
        }
        self.mempool.push(tx);
        Ok(())
    }

    /// Seal the mempool into the next block, increment the clock, and
    /// deliver each transaction (then the time tick) to the handlers.
    pub fn advance_round(&mut self, handlers: &mut dyn TxHandlers) -> Round {
        let height = self.round() + 1;
        let parent = self.latest_block_hash();
        let txs: Vec<Transaction> = std::mem::take(&mut self.mempool);

        let mut parts: Vec<Vec<u8>> = vec![height.to_le_bytes().to_vec(), parent.0.to_vec()];
        for tx in &txs {
            parts.push(tx.tx_hash().0.to_vec());
        }
        let part_refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
        let block_hash = hash_parts(&part_refs);

        self.blocks.push(Block {
            height,
            parent,
            hash: block_hash,
            transactions: txs.clone(),
        });

        let mut ctx = RoundCtx {
            accounts: &mut self.accounts,
            escrows: &mut self.escrows,
            round: height,
            block_hash,
        };
        for tx in &txs {
            handlers.on_transaction(&mut ctx, tx);
        }
        handlers.on_time(&mut ctx);
        height
    }

    /// Block log as a JSON-lines transcript, one block per line.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&serde_json::to_string(block).expect("serialize block"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SignatureKeypair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct NoopHandlers;
    impl TxHandlers for NoopHandlers {
        fn on_transaction(&mut self, _ctx: &mut RoundCtx<'_>, _tx: &Transaction) {}
        fn on_time(&mut self, _ctx: &mut RoundCtx<'_>) {}
    }

    /// Records the round each delivered payload was sealed at and rejects
    /// anything at or past its deadline, mirroring contract `assert T < T_x`.
    struct DeadlineHandler {
        deadline: Round,
        accepted: Vec<Round>,
        rejected: Vec<Round>,
    }
    impl TxHandlers for DeadlineHandler {
        fn on_transaction(&mut self, ctx: &mut RoundCtx<'_>, _tx: &Transaction) {
            if ctx.round < self.deadline {
                self.accepted.push(ctx.round);
            } else {
                self.rejected.push(ctx.round);
            }
        }
        fn on_time(&mut self, _ctx: &mut RoundCtx<'_>) {}
    }

    fn setup() -> (Ledger, SignatureKeypair, Address) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = SignatureKeypair::generate(&mut rng);
        let mut ledger = Ledger::new();
        let addr = ledger.create_account(kp.public(), 100);
        (ledger, kp, addr)
    }

    fn plain_tx(kp: &SignatureKeypair, sender: Address, payload: &[u8]) -> Transaction {
        Transaction {
            sender,
            kind: TxKind::Plain,
            payload: payload.to_vec(),
            signature: kp.sign(payload),
        }
    }

    #[test]
    fn valid_plain_tx_accepted() {
        let (mut ledger, kp, addr) = setup();
        assert!(ledger.submit(plain_tx(&kp, addr, b"hello")).is_ok());
    }

    #[test]
    fn flipped_payload_bit_rejected() {
        let (mut ledger, kp, addr) = setup();
        let mut tx = plain_tx(&kp, addr, b"hello");
        tx.payload[0] ^= 0x01;
        assert_eq!(ledger.submit(tx), Err(LedgerError::BadSignature));
    }

    #[test]
    fn unknown_sender_rejected() {
        let (mut ledger, kp, _) = setup();
        let tx = plain_tx(&kp, Address([9u8; ADDRESS_LEN]), b"hello");
        assert_eq!(ledger.submit(tx), Err(LedgerError::UnknownSender));
    }

    #[test]
    fn attestation_requires_bound_key() {
        let (mut ledger, _kp, addr) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let enclave = SignatureKeypair::generate(&mut rng);

        let tx = Transaction {
            sender: addr,
            kind: TxKind::Attestation,
            payload: b"att".to_vec(),
            signature: enclave.sign(b"att"),
        };
        assert_eq!(ledger.submit(tx.clone()), Err(LedgerError::UnboundEnclaveKey));

        ledger.bind_enclave_key(&addr, enclave.public()).unwrap();
        assert!(ledger.submit(tx).is_ok());

        // signed by a key that is not the bound one
        let rogue = SignatureKeypair::generate(&mut rng);
        let bad = Transaction {
            sender: addr,
            kind: TxKind::Attestation,
            payload: b"att".to_vec(),
            signature: rogue.sign(b"att"),
        };
        assert_eq!(ledger.submit(bad), Err(LedgerError::BadSignature));

        // binding is immutable
        assert_eq!(
            ledger.bind_enclave_key(&addr, rogue.public()),
            Err(LedgerError::AlreadyBound)
        );
    }

    #[test]
    fn rounds_chain_and_increment() {
        let (mut ledger, _, _) = setup();
        assert_eq!(ledger.round(), 0);
        ledger.advance_round(&mut NoopHandlers);
        ledger.advance_round(&mut NoopHandlers);
        assert_eq!(ledger.round(), 2);
        let blocks = ledger.blocks();
        assert_eq!(blocks[1].height, 1);
        assert_eq!(blocks[2].height, 2);
        assert_eq!(blocks[1].parent, blocks[0].hash);
        assert_eq!(blocks[2].parent, blocks[1].hash);
        assert!(blocks[1].transactions.is_empty());
    }

    #[test]
    fn tx_sealed_at_deadline_round_is_rejected_by_handler() {
        let (mut ledger, kp, addr) = setup();
        let mut handler = DeadlineHandler {
            deadline: 2,
            accepted: vec![],
            rejected: vec![],
        };
        ledger.submit(plain_tx(&kp, addr, b"one")).unwrap();
        ledger.advance_round(&mut handler); // sealed at T = 1 < 2
        ledger.submit(plain_tx(&kp, addr, b"two")).unwrap();
        ledger.advance_round(&mut handler); // sealed at T = 2, not < 2
        assert_eq!(handler.accepted, vec![1]);
        assert_eq!(handler.rejected, vec![2]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(128))]

        /// Any sequence of transfers, escrows, releases, and refunds keeps
        /// the total supply constant; failed operations change nothing.
        #[test]
        fn money_conservation_under_arbitrary_ops(
            ops in proptest::collection::vec((0u8..4, 0usize..4, 0usize..4, 0u64..2_000), 1..60),
            seed in proptest::prelude::any::<u64>(),
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut ledger = Ledger::new();
            let accounts: Vec<Address> = (0..4u64)
                .map(|i| {
                    ledger.create_account(SignatureKeypair::generate(&mut rng).public(), 500 * (i + 1))
                })
                .collect();
            let total = ledger.total_money();

            let mut pots: Vec<u64> = Vec::new();
            let mut next_pot = 0u64;
            for (op, a, b, amount) in ops {
                let from = accounts[a];
                let to = accounts[b];
                let mut ctx = RoundCtx {
                    accounts: &mut ledger.accounts,
                    escrows: &mut ledger.escrows,
                    round: 1,
                    block_hash: Digest::ZERO,
                };
                match op {
                    0 => {
                        let _ = ctx.transfer(&from, &to, amount);
                    }
                    1 => {
                        if ctx.escrow(next_pot, &from, amount).is_ok() {
                            pots.push(next_pot);
                            next_pot += 1;
                        }
                    }
                    2 => {
                        if let Some(pot) = pots.pop() {
                            let _ = ctx.release(pot, &to);
                        }
                    }
                    _ => {
                        if let Some(pot) = pots.pop() {
                            let _ = ctx.refund(pot);
                        }
                    }
                }
                proptest::prop_assert_eq!(ledger.total_money(), total);
            }
        }
    }

    #[test]
    fn escrow_release_and_refund_conserve_money() {
        let (mut ledger, _, buyer) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let seller_kp = SignatureKeypair::generate(&mut rng);
        let seller = ledger.create_account(seller_kp.public(), 0);
        let total = ledger.total_money();

        // escrow 60 of the buyer's 100, release to seller
        {
            let mut ctx = RoundCtx {
                accounts: &mut ledger.accounts,
                escrows: &mut ledger.escrows,
                round: 1,
                block_hash: Digest::ZERO,
            };
            ctx.escrow(1, &buyer, 60).unwrap();
            assert_eq!(ctx.balance(&buyer), Some(40));
            ctx.release(1, &seller).unwrap();
        }
        assert_eq!(ledger.balance(&buyer), 40);
        assert_eq!(ledger.balance(&seller), 60);
        assert_eq!(ledger.total_money(), total);

        // escrow exceeding balance is rejected, balances unchanged
        {
            let mut ctx = RoundCtx {
                accounts: &mut ledger.accounts,
                escrows: &mut ledger.escrows,
                round: 2,
                block_hash: Digest::ZERO,
            };
            assert_eq!(ctx.escrow(2, &buyer, 41), Err(LedgerError::InsufficientFunds));
            assert_eq!(ctx.balance(&buyer), Some(40));

            // escrow then timeout refund restores the payer
            ctx.escrow(3, &buyer, 40).unwrap();
            ctx.refund(3).unwrap();
            assert_eq!(ctx.balance(&buyer), Some(40));
        }
        assert_eq!(ledger.total_money(), total);
    }
}
