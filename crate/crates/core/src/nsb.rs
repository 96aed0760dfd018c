//! Network status blockchain: staked certificates under a sorted ActionMT,
//! quorum-attested chain status under a per-chain sharded StatusMT.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, TxStatus};
use crate::codec;
use crate::crypto::{Digest, KeyRing, SecretKey, Signature};
use crate::isc::cert::Certificate;
use crate::merkle::{verify_membership, MembershipProof, MerkleTree, NonMembershipProof};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub n: usize,
    pub k: usize,
    /// Peers that sign every claim without checking it.
    #[serde(default)]
    pub byzantine: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsbConfig {
    pub quorum: QuorumConfig,
    /// Items per pool per block.
    pub capacity: usize,
    /// Commit finalized relevant chain blocks instead of per-transaction claims.
    #[serde(default)]
    pub watching: bool,
    /// Epochs a claim may wait for quorum before it is dropped.
    #[serde(default = "default_ttl")]
    pub claim_ttl: u64,
}

fn default_ttl() -> u64 {
    16
}

impl Default for NsbConfig {
    fn default() -> Self {
        NsbConfig {
            quorum: QuorumConfig { n: 4, k: 3, byzantine: BTreeSet::new() },
            capacity: 64,
            watching: false,
            claim_ttl: default_ttl(),
        }
    }
}

pub fn peer_principal(i: usize) -> String {
    format!("nsb-peer-{i}")
}

/// Finalized chain block summary stored under StatusRoot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StatusRecord {
    pub chain: String,
    pub height: u64,
    pub tx_root: Digest,
    pub state_root: Digest,
}

/// Claim that `tx` is finalized in the block summarized by `record`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusClaim {
    pub tx: Digest,
    pub record: StatusRecord,
    /// Session transaction the claim serves; used only for accounting.
    pub tid: Option<Digest>,
}

/// StatusMT key for a per-transaction claim.
pub fn claim_key(tx: &Digest) -> Vec<u8> {
    let mut k = b"tx".to_vec();
    k.extend_from_slice(&tx.0);
    k
}

/// StatusMT key for a watched block.
pub fn block_key(height: u64) -> Vec<u8> {
    let mut k = b"blk".to_vec();
    k.extend_from_slice(&height.to_be_bytes());
    k
}

/// Two-level proof: entry in the chain's subtree, subtree root in the top tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusProof {
    pub entry: MembershipProof,
    pub shard: MembershipProof,
}

impl StatusProof {
    pub fn verify(&self, status_root: &Digest, record: &StatusRecord) -> bool {
        self.entry.value == codec::encode(record)
            && verify_membership(&self.entry.root, &self.entry)
            && self.shard.key == record.chain.as_bytes()
            && self.shard.value == self.entry.root.0
            && verify_membership(status_root, &self.shard)
    }

    pub fn key(&self) -> &[u8] {
        &self.entry.key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsbHeader {
    pub height: u64,
    pub prev: Digest,
    pub tx_root: Digest,
    pub action_root: Digest,
    pub status_root: Digest,
}

impl NsbHeader {
    pub fn hash(&self) -> Digest {
        codec::digest_of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NsbTx {
    AddAction(Digest),
    Claim(StatusClaim),
    Watch(StatusRecord),
}

#[derive(Debug, Clone)]
pub struct NsbBlock {
    pub header: NsbHeader,
    pub actions: Vec<Certificate>,
    pub status: Vec<(Vec<u8>, StatusRecord)>,
    action_tree: MerkleTree,
    shards: BTreeMap<String, MerkleTree>,
    top: MerkleTree,
}

impl NsbBlock {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Root of one chain's status subtree in this block.
    pub fn shard_root(&self, chain: &str) -> Option<Digest> {
        self.shards.get(chain).map(MerkleTree::root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NsbError {
    #[error("malformed certificate")]
    MalformedCert,
    #[error("not found")]
    NotFound,
    #[error("key is present")]
    Present,
    #[error("unknown block {0}")]
    UnknownBlock(u64),
}

#[derive(Debug, Clone)]
struct Pending {
    key: Vec<u8>,
    record: StatusRecord,
    /// Transaction the claim is about; `None` for watched blocks.
    tx: Option<Digest>,
    sigs: BTreeMap<usize, Signature>,
    since: u64,
}

#[derive(Debug, Clone)]
pub struct Nsb {
    cfg: NsbConfig,
    verifier: KeyRing,
    peers: Vec<SecretKey>,
    blocks: Vec<NsbBlock>,
    tx_pool: VecDeque<NsbTx>,
    action_pool: VecDeque<Certificate>,
    status_pool: VecDeque<(String, Vec<u8>, StatusRecord)>,
    pending: Vec<Pending>,
    action_index: BTreeMap<Digest, u64>,
    status_index: BTreeMap<(String, Vec<u8>), u64>,
    watched: BTreeSet<(String, String)>,
    watch_cursor: BTreeMap<String, u64>,
    submissions: BTreeMap<Digest, usize>,
}

impl Nsb {
    /// `verifier` must know every certificate signer and every peer.
    pub fn new(cfg: NsbConfig, verifier: KeyRing) -> Nsb {
        assert!(cfg.quorum.k >= 1 && cfg.quorum.k <= cfg.quorum.n, "quorum needs 1 <= K <= N");
        let peers = (0..cfg.quorum.n).map(|i| verifier.secret(&peer_principal(i)).expect("peer key issued")).collect();
        let mut nsb = Nsb {
            cfg,
            verifier,
            peers,
            blocks: Vec::new(),
            tx_pool: VecDeque::new(),
            action_pool: VecDeque::new(),
            status_pool: VecDeque::new(),
            pending: Vec::new(),
            action_index: BTreeMap::new(),
            status_index: BTreeMap::new(),
            watched: BTreeSet::new(),
            watch_cursor: BTreeMap::new(),
            submissions: BTreeMap::new(),
        };
        nsb.seal(Vec::new(), Vec::new(), Vec::new());
        nsb
    }

    pub fn config(&self) -> &NsbConfig {
        &self.cfg
    }

    pub fn height(&self) -> u64 {
        self.blocks.last().map(NsbBlock::height).unwrap_or(0)
    }

    pub fn block(&self, height: u64) -> Option<&NsbBlock> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[NsbBlock] {
        &self.blocks
    }

    pub fn header(&self, height: u64) -> Option<&NsbHeader> {
        self.block(height).map(|b| &b.header)
    }

    /// NSB transactions submitted on behalf of a session transaction.
    pub fn submissions(&self, tid: &Digest) -> usize {
        self.submissions.get(tid).copied().unwrap_or(0)
    }

    pub fn submission_counts(&self) -> &BTreeMap<Digest, usize> {
        &self.submissions
    }

    /// Registers an account whose transactions make a chain block relevant
    /// in watching mode.
    pub fn watch(&mut self, chain: &str, address: &str) {
        self.watched.insert((chain.to_string(), address.to_string()));
    }

    pub fn add_action(&mut self, cert: Certificate) -> Result<Digest, NsbError> {
        if !cert.verify(&self.verifier) {
            return Err(NsbError::MalformedCert);
        }
        let key = cert.key();
        *self.submissions.entry(cert.payload.tid).or_insert(0) += 1;
        self.tx_pool.push_back(NsbTx::AddAction(key));
        if !self.action_index.contains_key(&key) && !self.action_pool.iter().any(|c| c.key() == key) {
            self.action_pool.push_back(cert);
        }
        Ok(key)
    }

    /// Queues a claim for the peers; it commits once K of them sign.
    pub fn closure_claim(&mut self, claim: StatusClaim) {
        if let Some(tid) = claim.tid {
            *self.submissions.entry(tid).or_insert(0) += 1;
        }
        let key = claim_key(&claim.tx);
        self.tx_pool.push_back(NsbTx::Claim(claim.clone()));
        self.enqueue(key, claim.record, Some(claim.tx));
    }

    fn enqueue(&mut self, key: Vec<u8>, record: StatusRecord, tx: Option<Digest>) {
        let dup = self.status_index.contains_key(&(record.chain.clone(), key.clone()))
            || self.status_pool.iter().any(|(c, k, _)| *c == record.chain && *k == key)
            || self.pending.iter().any(|p| p.key == key && p.record == record);
        if !dup {
            self.pending.push(Pending { key, record, tx, sigs: BTreeMap::new(), since: self.height() });
        }
    }

    /// What an honest peer checks before signing.
    fn authentic(chains: &BTreeMap<String, Chain>, p: &Pending) -> bool {
        let Some(chain) = chains.get(&p.record.chain) else { return false };
        let finalized = match p.tx {
            Some(tx) => matches!(chain.query_status(&tx), TxStatus::Finalized { height, .. } if height == p.record.height),
            None => chain.finalized_height().is_some_and(|h| p.record.height <= h),
        };
        let header = chain.block(p.record.height).map(|b| &b.header);
        finalized && header.is_some_and(|h| h.tx_root == p.record.tx_root && h.state_root == p.record.state_root)
    }

    fn sign_message(key: &[u8], record: &StatusRecord) -> Vec<u8> {
        codec::encode(&(key, record))
    }

    /// Valid signatures from distinct peers.
    fn valid_sigs(&self, p: &Pending) -> usize {
        let msg = Self::sign_message(&p.key, &p.record);
        p.sigs.iter().filter(|(i, s)| self.verifier.verify(&peer_principal(**i), &msg, s)).count()
    }

    fn collect_watched(&mut self, chains: &BTreeMap<String, Chain>) {
        for (id, chain) in chains {
            let Some(fin) = chain.finalized_height() else { continue };
            let start = self.watch_cursor.get(id).map(|h| h + 1).unwrap_or(1);
            for h in start..=fin {
                let b = chain.block(h).expect("finalized block exists");
                let relevant = b.txs.iter().any(|(t, _)| {
                    self.watched.contains(&(id.clone(), t.from.clone())) || self.watched.contains(&(id.clone(), t.to.clone()))
                });
                if relevant {
                    let record = StatusRecord { chain: id.clone(), height: h, tx_root: b.header.tx_root, state_root: b.header.state_root };
                    self.tx_pool.push_back(NsbTx::Watch(record.clone()));
                    self.enqueue(block_key(h), record, None);
                }
            }
            if fin >= start {
                self.watch_cursor.insert(id.clone(), fin);
            }
        }
    }

    /// One quorum round over pending claims.
    fn quorum_round(&mut self, chains: &BTreeMap<String, Chain>) {
        let now = self.height();
        let mut pending = std::mem::take(&mut self.pending);
        for p in &mut pending {
            let msg = Self::sign_message(&p.key, &p.record);
            let honest_ok = Self::authentic(chains, p);
            for (i, key) in self.peers.iter().enumerate() {
                if p.sigs.contains_key(&i) {
                    continue;
                }
                if self.cfg.quorum.byzantine.contains(&i) || honest_ok {
                    p.sigs.insert(i, key.sign(&msg));
                }
            }
        }
        for p in pending {
            if self.valid_sigs(&p) >= self.cfg.quorum.k {
                self.status_pool.push_back((p.record.chain.clone(), p.key, p.record));
            } else if now - p.since < self.cfg.claim_ttl {
                self.pending.push(p);
            }
        }
    }

    /// Runs the quorum round and appends a block built from the pools.
    pub fn advance_epoch(&mut self, chains: &BTreeMap<String, Chain>) -> &NsbBlock {
        if self.cfg.watching {
            self.collect_watched(chains);
        }
        self.quorum_round(chains);
        let cap = self.cfg.capacity;
        let txs: Vec<NsbTx> = drain_up_to(&mut self.tx_pool, cap);
        let actions = drain_up_to(&mut self.action_pool, cap);
        let status = drain_up_to(&mut self.status_pool, cap);
        self.seal(txs, actions, status);
        self.blocks.last().expect("just sealed")
    }

    fn seal(&mut self, txs: Vec<NsbTx>, mut actions: Vec<Certificate>, status: Vec<(String, Vec<u8>, StatusRecord)>) {
        actions.sort_by_key(Certificate::key);
        let height = self.blocks.len() as u64;
        let prev = self.blocks.last().map(|b| b.header.hash()).unwrap_or(Digest::ZERO);
        let tx_leaves = txs.iter().enumerate().map(|(i, t)| (codec::encode(&(height, i as u64)), codec::encode(t))).collect();
        let tx_tree = MerkleTree::build(tx_leaves, false).expect("positional keys are unique");
        let action_tree =
            MerkleTree::build(actions.iter().map(|c| (c.key().0.to_vec(), c.to_bytes())).collect(), true).expect("pool deduplicates");
        let mut per_chain: BTreeMap<String, BTreeMap<Vec<u8>, Vec<u8>>> = BTreeMap::new();
        for (chain, key, record) in &status {
            per_chain.entry(chain.clone()).or_default().insert(key.clone(), codec::encode(record));
        }
        let shards: BTreeMap<String, MerkleTree> = per_chain.iter().map(|(c, m)| (c.clone(), MerkleTree::from_map(m))).collect();
        let top = MerkleTree::from_map(&shards.iter().map(|(c, t)| (c.as_bytes().to_vec(), t.root().0.to_vec())).collect());
        for c in &actions {
            self.action_index.insert(c.key(), height);
        }
        for (chain, key, _) in &status {
            self.status_index.insert((chain.clone(), key.clone()), height);
        }
        let header = NsbHeader { height, prev, tx_root: tx_tree.root(), action_root: action_tree.root(), status_root: top.root() };
        let status = status.into_iter().map(|(_, k, r)| (k, r)).collect();
        self.blocks.push(NsbBlock { header, actions, status, action_tree, shards, top });
    }

    /// ActionMT proof for a staked certificate, with the committing height.
    pub fn action_proof(&self, key: &Digest) -> Result<(u64, MembershipProof), NsbError> {
        let h = *self.action_index.get(key).ok_or(NsbError::NotFound)?;
        let p = self.blocks[h as usize].action_tree.prove_membership(&key.0).map_err(|_| NsbError::NotFound)?;
        Ok((h, p))
    }

    pub fn action_non_membership(&self, key: &Digest, height: u64) -> Result<NonMembershipProof, NsbError> {
        let b = self.block(height).ok_or(NsbError::UnknownBlock(height))?;
        b.action_tree.prove_non_membership(&key.0).map_err(|_| NsbError::Present)
    }

    /// Committed status entry with its two-level proof.
    pub fn status_proof(&self, chain: &str, key: &[u8]) -> Result<(u64, StatusRecord, StatusProof), NsbError> {
        let h = *self.status_index.get(&(chain.to_string(), key.to_vec())).ok_or(NsbError::NotFound)?;
        let b = &self.blocks[h as usize];
        let shard = &b.shards[chain];
        let entry = shard.prove_membership(key).map_err(|_| NsbError::NotFound)?;
        let record = codec::decode(&entry.value).map_err(|_| NsbError::NotFound)?;
        let top = b.top.prove_membership(chain.as_bytes()).map_err(|_| NsbError::NotFound)?;
        Ok((h, record, StatusProof { entry, shard: top }))
    }

    /// Status proof covering `tx` included at `height`, in either mode.
    pub fn status_for_tx(&self, chain: &str, tx: &Digest, height: u64) -> Option<(u64, StatusRecord, StatusProof)> {
        self.status_proof(chain, &claim_key(tx))
            .or_else(|_| self.status_proof(chain, &block_key(height)))
            .ok()
            .filter(|(_, r, _)| r.height == height)
    }

    pub fn pending_claims(&self) -> usize {
        self.pending.len()
    }
}

fn drain_up_to<T>(q: &mut VecDeque<T>, n: usize) -> Vec<T> {
    let n = n.min(q.len());
    q.drain(..n).collect()
}
