//! Simulated programmable blockchain: signed transactions, host-registered
//! contract handlers, per-block TxRoot/StateRoot, confirmation-depth
//! finality and Merkle proofs against recorded roots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::crypto::{Digest, KeyRing, PrincipalId, SecretKey, Signature};
use crate::merkle::{MembershipProof, MerkleTree};
use crate::value::{Decimal, Value};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Call {
    pub method: String,
    pub args: Vec<Value>,
}

/// An on-chain transaction, signed by the owner of `from`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OnChainTx {
    pub chain: String,
    pub from: String,
    pub to: String,
    pub value: u64,
    pub unit: String,
    pub call: Option<Call>,
    pub nonce: u64,
    pub signer: PrincipalId,
    pub sig: Signature,
}

impl OnChainTx {
    #[allow(clippy::too_many_arguments)]
    pub fn signed(
        chain: &str,
        from: &str,
        to: &str,
        value: u64,
        unit: &str,
        call: Option<Call>,
        nonce: u64,
        signer: &str,
        key: &SecretKey,
    ) -> OnChainTx {
        let mut tx = OnChainTx {
            chain: chain.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            value,
            unit: unit.to_string(),
            call,
            nonce,
            signer: signer.to_string(),
            sig: Signature([0; 32]),
        };
        tx.sig = key.sign(&tx.signing_bytes());
        tx
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        codec::encode(&(&self.chain, &self.from, &self.to, self.value, &self.unit, &self.call, self.nonce, &self.signer))
    }

    pub fn digest(&self) -> Digest {
        codec::digest_of(self)
    }
}

/// Outcome recorded under TxRoot for each included transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub chain: String,
    pub height: u64,
    pub prev: Digest,
    pub tx_root: Digest,
    pub state_root: Digest,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest {
        codec::digest_of(self)
    }
}

#[derive(Debug, Clone)]
pub struct ChainBlock {
    pub header: BlockHeader,
    pub txs: Vec<(OnChainTx, Receipt)>,
    tx_tree: MerkleTree,
    state_tree: MerkleTree,
    state: ChainState,
}

impl ChainBlock {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainState {
    /// `(address, unit) -> amount`
    pub balances: BTreeMap<(String, String), u64>,
    /// `(contract, var) -> value`
    pub storage: BTreeMap<(String, String), Value>,
    pub nonces: BTreeMap<String, u64>,
}

impl ChainState {
    pub fn balance(&self, address: &str, unit: &str) -> u64 {
        self.balances.get(&(address.to_string(), unit.to_string())).copied().unwrap_or(0)
    }

    pub fn var(&self, contract: &str, var: &str) -> Option<&Value> {
        self.storage.get(&(contract.to_string(), var.to_string()))
    }

    /// Key/value view committed under StateRoot.
    fn entries(&self) -> BTreeMap<Vec<u8>, Vec<u8>> {
        let mut m = BTreeMap::new();
        for ((a, u), v) in &self.balances {
            m.insert(balance_key(a, u), codec::encode(v));
        }
        for ((c, n), v) in &self.storage {
            m.insert(var_key(c, n), codec::encode(v));
        }
        for (a, n) in &self.nonces {
            m.insert(format!("nonce/{a}").into_bytes(), codec::encode(n));
        }
        m
    }
}

pub fn balance_key(address: &str, unit: &str) -> Vec<u8> {
    format!("bal/{address}/{unit}").into_bytes()
}

pub fn var_key(contract: &str, var: &str) -> Vec<u8> {
    format!("var/{contract}/{var}").into_bytes()
}

/// Mutable view a handler gets of its own contract's storage.
pub struct ContractCtx<'a> {
    pub storage: &'a mut BTreeMap<String, Value>,
    pub caller: &'a str,
    pub method: &'a str,
    pub args: &'a [Value],
}

impl ContractCtx<'_> {
    fn num_arg(&self, i: usize) -> Result<Decimal, String> {
        self.args.get(i).and_then(Value::as_num).cloned().ok_or_else(|| format!("argument {i} must be numeric"))
    }

    fn arity(&self, n: usize) -> Result<(), String> {
        if self.args.len() == n {
            Ok(())
        } else {
            Err(format!("{} takes {n} argument(s), got {}", self.method, self.args.len()))
        }
    }

    fn get_num(&self, var: &str) -> Decimal {
        self.storage.get(var).and_then(Value::as_num).cloned().unwrap_or_else(Decimal::zero)
    }
}

pub type Handler = fn(&mut ContractCtx) -> Result<(), String>;

/// Built-in contract handlers, registered by symbolic name in genesis files.
pub fn handler(name: &str) -> Option<Handler> {
    Some(match name {
        "broker" => broker,
        "option" => option,
        "vault" => vault,
        "ballot" => ballot,
        "aggregator" => aggregator,
        _ => return None,
    })
}

/// Publishes the feed price as the strike price.
fn broker(cx: &mut ContractCtx) -> Result<(), String> {
    match cx.method {
        "GetStrikePrice" => {
            cx.arity(0)?;
            let feed = cx.storage.get("Feed").cloned().ok_or("no price feed")?;
            cx.storage.insert("StrikePrice".into(), feed);
            Ok(())
        }
        m => Err(format!("broker has no method {m}")),
    }
}

fn option(cx: &mut ContractCtx) -> Result<(), String> {
    match cx.method {
        "CashSettle" => {
            cx.arity(2)?;
            let amount = cx.num_arg(0)?;
            let strike = cx.num_arg(1)?;
            if !strike.is_positive() {
                return Err("strike price must be positive".into());
            }
            let n = cx.get_num("Settlements").add(&Decimal::one());
            cx.storage.insert("LastAmount".into(), Value::Num(amount));
            cx.storage.insert("LastStrike".into(), Value::Num(strike));
            cx.storage.insert("Settlements".into(), Value::Num(n));
            Ok(())
        }
        m => Err(format!("option has no method {m}")),
    }
}

fn vault(cx: &mut ContractCtx) -> Result<(), String> {
    match cx.method {
        "Deposit" => {
            cx.arity(1)?;
            let amount = cx.num_arg(0)?;
            let total = cx.get_num("Total").add(&amount);
            cx.storage.insert("Total".into(), Value::Num(total));
            cx.storage.insert("Depositor".into(), Value::Str(cx.caller.to_string()));
            Ok(())
        }
        m => Err(format!("vault has no method {m}")),
    }
}

/// Regional ballot: `Close()` freezes the current tally.
fn ballot(cx: &mut ContractCtx) -> Result<(), String> {
    match cx.method {
        "Close" => {
            cx.arity(0)?;
            if cx.storage.get("Closed") == Some(&Value::Bool(true)) {
                return Err("ballot already closed".into());
            }
            let yes = cx.get_num("Yes");
            let no = cx.get_num("No");
            cx.storage.insert("Closed".into(), Value::Bool(true));
            cx.storage.insert("Margin".into(), Value::Num(yes.sub(&no)));
            Ok(())
        }
        m => Err(format!("ballot has no method {m}")),
    }
}

/// Sums regional margins.
fn aggregator(cx: &mut ContractCtx) -> Result<(), String> {
    match cx.method {
        "Aggregate" => {
            cx.arity(2)?;
            let total = cx.num_arg(0)?.add(&cx.num_arg(1)?);
            let passed = total.is_positive();
            cx.storage.insert("Total".into(), Value::Num(total));
            cx.storage.insert("Passed".into(), Value::Bool(passed));
            Ok(())
        }
        m => Err(format!("aggregator has no method {m}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub address: String,
    pub owner: PrincipalId,
    #[serde(default)]
    pub balances: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisContract {
    pub address: String,
    pub handler: String,
    /// Initial storage; values parse as numbers or booleans where possible.
    #[serde(default)]
    pub storage: BTreeMap<String, String>,
}

/// Genesis fixture for one chain.
///
/// ```toml
/// id = "ChainX"
/// confirm_depth = 1
/// [[accounts]]
/// address = "0x7019"
/// owner = "client"
/// balances = { xcoin = 100 }
/// [[contracts]]
/// address = "0xbba7"
/// handler = "broker"
/// storage = { Feed = "42" }
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub id: String,
    #[serde(default = "one")]
    pub confirm_depth: u64,
    #[serde(default)]
    pub accounts: Vec<GenesisAccount>,
    #[serde(default)]
    pub contracts: Vec<GenesisContract>,
}

fn one() -> u64 {
    1
}

pub fn parse_stored(s: &str) -> Value {
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => s.parse::<Decimal>().map(Value::Num).unwrap_or_else(|_| Value::Str(s.to_string())),
    }
}

impl Genesis {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("transaction for {0} sent to the wrong chain")]
    WrongChain(String),
    #[error("unknown sender account {0}")]
    UnknownSender(String),
    #[error("bad signature")]
    BadSignature,
    #[error("expected nonce {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("transaction already submitted")]
    Duplicate,
    #[error("not found")]
    NotFound,
    #[error("genesis: {0}")]
    Genesis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxStatus {
    NotFound,
    /// In the pool, or included but not yet `confirm_depth` deep.
    Pending,
    Finalized {
        height: u64,
        ok: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Chain {
    id: String,
    confirm_depth: u64,
    verifier: KeyRing,
    owners: BTreeMap<String, PrincipalId>,
    handlers: BTreeMap<String, Handler>,
    state: ChainState,
    pool: Vec<OnChainTx>,
    blocks: Vec<ChainBlock>,
    /// tx digest -> including height
    index: BTreeMap<Digest, u64>,
}

impl Chain {
    pub fn new(genesis: &Genesis, verifier: KeyRing) -> Result<Chain, ChainError> {
        let mut state = ChainState::default();
        let mut owners = BTreeMap::new();
        for a in &genesis.accounts {
            if owners.insert(a.address.clone(), a.owner.clone()).is_some() {
                return Err(ChainError::Genesis(format!("duplicate account {}", a.address)));
            }
            for (unit, amount) in &a.balances {
                state.balances.insert((a.address.clone(), unit.clone()), *amount);
            }
        }
        let mut handlers = BTreeMap::new();
        for c in &genesis.contracts {
            let h = handler(&c.handler).ok_or_else(|| ChainError::Genesis(format!("unknown handler {}", c.handler)))?;
            if owners.contains_key(&c.address) || handlers.insert(c.address.clone(), h).is_some() {
                return Err(ChainError::Genesis(format!("duplicate address {}", c.address)));
            }
            for (k, v) in &c.storage {
                state.storage.insert((c.address.clone(), k.clone()), parse_stored(v));
            }
        }
        let mut chain = Chain {
            id: genesis.id.clone(),
            confirm_depth: genesis.confirm_depth,
            verifier,
            owners,
            handlers,
            state,
            pool: Vec::new(),
            blocks: Vec::new(),
            index: BTreeMap::new(),
        };
        chain.seal(Vec::new(), Digest::ZERO, 0);
        Ok(chain)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn confirm_depth(&self) -> u64 {
        self.confirm_depth
    }

    pub fn owner(&self, address: &str) -> Option<&str> {
        self.owners.get(address).map(String::as_str)
    }

    pub fn is_contract(&self, address: &str) -> bool {
        self.handlers.contains_key(address)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn block_height(&self) -> u64 {
        self.blocks.last().map(ChainBlock::height).unwrap_or(0)
    }

    pub fn block(&self, height: u64) -> Option<&ChainBlock> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[ChainBlock] {
        &self.blocks
    }

    pub fn pending(&self) -> &[OnChainTx] {
        &self.pool
    }

    /// Admission checks; a valid transaction joins the pool.
    pub fn exec(&mut self, tx: OnChainTx) -> Result<Digest, ChainError> {
        if tx.chain != self.id {
            return Err(ChainError::WrongChain(tx.chain.clone()));
        }
        let owner = self.owners.get(&tx.from).ok_or_else(|| ChainError::UnknownSender(tx.from.clone()))?;
        if *owner != tx.signer || !self.verifier.verify(&tx.signer, &tx.signing_bytes(), &tx.sig) {
            return Err(ChainError::BadSignature);
        }
        if tx.call.is_some() && !self.handlers.contains_key(&tx.to) {
            return Err(ChainError::UnknownContract(tx.to.clone()));
        }
        let digest = tx.digest();
        if self.index.contains_key(&digest) || self.pool.iter().any(|p| p.digest() == digest) {
            return Err(ChainError::Duplicate);
        }
        let queued = self.pool.iter().filter(|p| p.from == tx.from).count() as u64;
        let expected = self.state.nonces.get(&tx.from).copied().unwrap_or(0) + queued;
        if tx.nonce != expected {
            return Err(ChainError::BadNonce { expected, got: tx.nonce });
        }
        self.pool.push(tx);
        Ok(digest)
    }

    fn apply(&mut self, tx: &OnChainTx) -> Result<(), String> {
        let from_key = (tx.from.clone(), tx.unit.clone());
        let have = self.state.balances.get(&from_key).copied().unwrap_or(0);
        if have < tx.value {
            return Err(format!("insufficient {}: have {have}, need {}", tx.unit, tx.value));
        }
        if let Some(call) = &tx.call {
            let h = self.handlers[&tx.to];
            let mut local: BTreeMap<String, Value> =
                self.state.storage.iter().filter(|((c, _), _)| *c == tx.to).map(|((_, k), v)| (k.clone(), v.clone())).collect();
            h(&mut ContractCtx { storage: &mut local, caller: &tx.from, method: &call.method, args: &call.args })?;
            self.state.storage.retain(|(c, _), _| *c != tx.to);
            for (k, v) in local {
                self.state.storage.insert((tx.to.clone(), k), v);
            }
        }
        if tx.value > 0 {
            self.state.balances.insert(from_key, have - tx.value);
            *self.state.balances.entry((tx.to.clone(), tx.unit.clone())).or_insert(0) += tx.value;
        }
        Ok(())
    }

    /// Executes the pool in arrival order and appends a block.
    pub fn advance_epoch(&mut self) -> &ChainBlock {
        let pool = std::mem::take(&mut self.pool);
        let mut included = Vec::with_capacity(pool.len());
        for tx in pool {
            let receipt = match self.apply(&tx) {
                Ok(()) => Receipt { ok: true, error: None },
                Err(e) => Receipt { ok: false, error: Some(e) },
            };
            *self.state.nonces.entry(tx.from.clone()).or_insert(0) += 1;
            included.push((tx, receipt));
        }
        let prev = self.blocks.last().map(|b| b.header.hash()).unwrap_or(Digest::ZERO);
        let height = self.block_height() + 1;
        self.seal(included, prev, height);
        self.blocks.last().expect("just sealed")
    }

    fn seal(&mut self, txs: Vec<(OnChainTx, Receipt)>, prev: Digest, height: u64) {
        let leaves = txs.iter().map(|(t, r)| (t.digest().0.to_vec(), codec::encode(r))).collect();
        let tx_tree = MerkleTree::build(leaves, false).expect("admission rejects duplicates");
        let state_tree = MerkleTree::from_map(&self.state.entries());
        for (t, _) in &txs {
            self.index.insert(t.digest(), height);
        }
        let header = BlockHeader { chain: self.id.clone(), height, prev, tx_root: tx_tree.root(), state_root: state_tree.root() };
        self.blocks.push(ChainBlock { header, txs, tx_tree, state_tree, state: self.state.clone() });
    }

    pub fn query_status(&self, tx: &Digest) -> TxStatus {
        match self.index.get(tx) {
            Some(&h) => {
                if self.block_height() - h >= self.confirm_depth {
                    let ok = self.blocks[h as usize].txs.iter().find(|(t, _)| t.digest() == *tx).map(|(_, r)| r.ok);
                    TxStatus::Finalized { height: h, ok: ok.unwrap_or(false) }
                } else {
                    TxStatus::Pending
                }
            }
            None if self.pool.iter().any(|p| p.digest() == *tx) => TxStatus::Pending,
            None => TxStatus::NotFound,
        }
    }

    /// Finalized block heights: `0..=finalized_height()`.
    pub fn finalized_height(&self) -> Option<u64> {
        self.block_height().checked_sub(self.confirm_depth)
    }

    /// Inclusion proof against the including block's TxRoot.
    pub fn tx_proof(&self, tx: &Digest) -> Result<(u64, MembershipProof), ChainError> {
        let h = *self.index.get(tx).ok_or(ChainError::NotFound)?;
        let proof = self.blocks[h as usize].tx_tree.prove_membership(&tx.0).map_err(|_| ChainError::NotFound)?;
        Ok((h, proof))
    }

    /// Proof of a state entry against the StateRoot at `height`.
    pub fn state_proof(&self, height: u64, key: &[u8]) -> Result<MembershipProof, ChainError> {
        let b = self.block(height).ok_or(ChainError::NotFound)?;
        b.state_tree.prove_membership(key).map_err(|_| ChainError::NotFound)
    }

    /// Value of a contract variable after block `height`.
    pub fn var_at(&self, height: u64, contract: &str, var: &str) -> Option<&Value> {
        self.block(height)?.state.var(contract, var)
    }

    /// Digests of every transaction ever included, with heights.
    pub fn included(&self) -> &BTreeMap<Digest, u64> {
        &self.index
    }

    /// Addresses known to this chain.
    pub fn addresses(&self) -> BTreeSet<&str> {
        self.owners.keys().chain(self.handlers.keys()).map(String::as_str).collect()
    }
}
