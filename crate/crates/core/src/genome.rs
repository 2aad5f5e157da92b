//! Bit-exact genome encoding of network candidates.
//!
//! A genome describes one U-shaped network: `2*depth + 1` blocks, each a
//! small DAG over `n_int` intermediate nodes. Per block it stores
//! connection genes (one bit per ordered node pair, lower-to-higher only)
//! and per-node operation genes. Three gene widths exist:
//!
//! * joint mode: 4 bits per node = kernel, activation order, norm, neuron;
//! * arch-only mode: 3 bits per node (neuron fixed conventional);
//! * neuron-only mode: 1 bit per node (architecture frozen elsewhere).
//!
//! The text form writes each block as dash-joined connection groups, a
//! colon, then dash-joined per-node genes, with blocks joined by `/`:
//! `1-00-110-0101:1011-0000-0111-1111-0001`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum GenomeError {
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },
    #[error("genome mismatch: {0}")]
    Mismatch(String),
    #[error("operation sequence {0} out of range 1..=16")]
    BadSequence(u32),
    #[error("gene value {0} out of range")]
    BadValue(u32),
    #[error("unsupported depth {0} (expected 2, 3 or 4)")]
    BadDepth(usize),
}

pub type Result<T> = std::result::Result<T, GenomeError>;

pub const MIN_DEPTH: usize = 2;
pub const MAX_DEPTH: usize = 4;
pub const DEFAULT_N_INT: usize = 5;

/// Which gene set a genome carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "arch-only")]
    ArchOnly,
    #[serde(rename = "neuron-only")]
    NeuronOnly,
}

impl Mode {
    /// Gene bits per node in this mode.
    pub fn gene_bits(self) -> usize {
        match self {
            Mode::Joint => 4,
            Mode::ArchOnly => 3,
            Mode::NeuronOnly => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::ArchOnly => "arch-only",
            Mode::NeuronOnly => "neuron-only",
        }
    }
}

/// 4-bit operation gene: kernel size, activation order, normalization,
/// neuron type, most significant bit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OpGene {
    /// 0 selects a 3x3 kernel, 1 a 5x5 kernel.
    pub kernel5: bool,
    /// 0 is pre-activation ([IN]->ReLU->Conv), 1 post-activation.
    pub post_act: bool,
    /// Instance normalization present.
    pub norm: bool,
    /// Quadratic neuron instead of conventional.
    pub quad: bool,
}

impl OpGene {
    pub fn value(self) -> u8 {
        (self.kernel5 as u8) << 3 | (self.post_act as u8) << 2 | (self.norm as u8) << 1 | self.quad as u8
    }

    pub fn from_value(v: u8) -> Result<Self> {
        if v > 15 {
            return Err(GenomeError::BadValue(v as u32));
        }
        Ok(OpGene {
            kernel5: v & 8 != 0,
            post_act: v & 4 != 0,
            norm: v & 2 != 0,
            quad: v & 1 != 0,
        })
    }

    /// Display sequence number, 1..=16.
    pub fn sequence(self) -> u8 {
        self.value() + 1
    }

    pub fn from_sequence(seq: u8) -> Result<Self> {
        if !(1..=16).contains(&seq) {
            return Err(GenomeError::BadSequence(seq as u32));
        }
        Self::from_value(seq - 1)
    }

    pub fn kernel(self) -> usize {
        if self.kernel5 {
            5
        } else {
            3
        }
    }

    pub fn arch(self) -> ArchGene {
        ArchGene { kernel5: self.kernel5, post_act: self.post_act, norm: self.norm }
    }

    pub fn bits_string(self) -> String {
        format!("{:04b}", self.value())
    }
}

/// 3-bit architecture gene (joint gene minus the neuron bit).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchGene {
    pub kernel5: bool,
    pub post_act: bool,
    pub norm: bool,
}

impl ArchGene {
    pub fn value(self) -> u8 {
        (self.kernel5 as u8) << 2 | (self.post_act as u8) << 1 | self.norm as u8
    }

    pub fn from_value(v: u8) -> Result<Self> {
        if v > 7 {
            return Err(GenomeError::BadValue(v as u32));
        }
        Ok(ArchGene { kernel5: v & 4 != 0, post_act: v & 2 != 0, norm: v & 1 != 0 })
    }

    pub fn with_neuron(self, quad: bool) -> OpGene {
        OpGene { kernel5: self.kernel5, post_act: self.post_act, norm: self.norm, quad }
    }

    pub fn bits_string(self) -> String {
        format!("{:03b}", self.value())
    }
}

/// Per-node genes of one block, width depending on mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockGenes {
    Joint(Vec<OpGene>),
    Arch(Vec<ArchGene>),
    Neuron(Vec<bool>),
}

impl BlockGenes {
    pub fn len(&self) -> usize {
        match self {
            BlockGenes::Joint(v) => v.len(),
            BlockGenes::Arch(v) => v.len(),
            BlockGenes::Neuron(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            BlockGenes::Joint(_) => Mode::Joint,
            BlockGenes::Arch(_) => Mode::ArchOnly,
            BlockGenes::Neuron(_) => Mode::NeuronOnly,
        }
    }
}

/// One block: connection bits over the intermediate-node DAG plus per-node
/// genes. Connection bit groups follow the lower-to-higher rule: node `k`
/// (2-based) owns `k-1` predecessor bits, leftmost referring to node 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGenome {
    conn: Vec<bool>,
    genes: BlockGenes,
}

impl BlockGenome {
    pub fn new(conn: Vec<bool>, genes: BlockGenes) -> Result<Self> {
        let n = genes.len();
        if conn.len() != conn_bits(n) {
            return Err(GenomeError::Mismatch(format!(
                "{} connection bits do not fit {} intermediate nodes (expected {})",
                conn.len(),
                n,
                conn_bits(n)
            )));
        }
        Ok(BlockGenome { conn, genes })
    }

    pub fn n_int(&self) -> usize {
        self.genes.len()
    }

    pub fn conn(&self) -> &[bool] {
        &self.conn
    }

    pub fn genes(&self) -> &BlockGenes {
        &self.genes
    }

    /// Predecessors of 1-based node `k` among earlier nodes.
    pub fn preds(&self, k: usize) -> Vec<usize> {
        debug_assert!((1..=self.n_int()).contains(&k));
        if k == 1 {
            return Vec::new();
        }
        let start = conn_bits(k - 1);
        (1..k).filter(|j| self.conn[start + j - 1]).collect()
    }

    /// Nodes that feed 1-based node `j` forward (successors).
    pub fn succs(&self, j: usize) -> Vec<usize> {
        (j + 1..=self.n_int()).filter(|&k| self.conn[conn_bits(k - 1) + j - 1]).collect()
    }

    /// Number of internal edges.
    pub fn edge_count(&self) -> usize {
        self.conn.iter().filter(|b| **b).count()
    }

    fn conn_string(&self) -> String {
        let mut groups = Vec::new();
        for k in 2..=self.n_int() {
            let start = conn_bits(k - 1);
            let g: String =
                self.conn[start..start + k - 1].iter().map(|&b| if b { '1' } else { '0' }).collect();
            groups.push(g);
        }
        groups.join("-")
    }

    fn genes_string(&self) -> String {
        let parts: Vec<String> = match &self.genes {
            BlockGenes::Joint(v) => v.iter().map(|g| g.bits_string()).collect(),
            BlockGenes::Arch(v) => v.iter().map(|g| g.bits_string()).collect(),
            BlockGenes::Neuron(v) => v.iter().map(|&b| if b { "1".into() } else { "0".into() }).collect(),
        };
        parts.join("-")
    }

    /// Majority operation sequence of a joint block; ties break toward the
    /// lower sequence number.
    pub fn majority_sequence(&self) -> Result<u8> {
        let BlockGenes::Joint(genes) = &self.genes else {
            return Err(GenomeError::Mismatch("majority sequence requires a joint-mode block".into()));
        };
        let mut counts = [0usize; 16];
        for g in genes {
            counts[g.value() as usize] += 1;
        }
        let best = (0..16).max_by_key(|&v| (counts[v], 15 - v)).expect("non-empty");
        Ok(best as u8 + 1)
    }
}

/// Connection bits for `n` intermediate nodes: n(n-1)/2.
pub fn conn_bits(n: usize) -> usize {
    n * (n - 1) / 2
}

/// A full network candidate: `2*depth + 1` blocks (depth encoder blocks,
/// one bottleneck, depth decoder blocks).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GenomeJson", into = "GenomeJson")]
pub struct Genome {
    depth: usize,
    n_int: usize,
    mode: Mode,
    blocks: Vec<BlockGenome>,
}

impl Genome {
    pub fn new(depth: usize, n_int: usize, blocks: Vec<BlockGenome>) -> Result<Self> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
            return Err(GenomeError::BadDepth(depth));
        }
        if blocks.len() != 2 * depth + 1 {
            return Err(GenomeError::Mismatch(format!(
                "depth {} requires {} blocks, got {}",
                depth,
                2 * depth + 1,
                blocks.len()
            )));
        }
        let mode = blocks[0].genes.mode();
        for (i, b) in blocks.iter().enumerate() {
            if b.n_int() != n_int {
                return Err(GenomeError::Mismatch(format!(
                    "block {} has {} nodes, expected {}",
                    i,
                    b.n_int(),
                    n_int
                )));
            }
            if b.genes.mode() != mode {
                return Err(GenomeError::Mismatch(format!("block {} mode differs", i)));
            }
        }
        Ok(Genome { depth, n_int, mode, blocks })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_int(&self) -> usize {
        self.n_int
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn blocks(&self) -> &[BlockGenome] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total bit length: blocks * (conn bits + gene bits per node * nodes).
    pub fn bit_len(&self) -> usize {
        self.blocks.len() * (conn_bits(self.n_int) + self.mode.gene_bits() * self.n_int)
    }

    /// Canonical text encoding.
    pub fn encode(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("{}:{}", b.conn_string(), b.genes_string()))
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Parse the canonical text encoding. Reports byte offsets on error.
    pub fn decode(text: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0usize;
        for part in text.split('/') {
            blocks.push(parse_block(part, offset)?);
            offset += part.len() + 1;
        }
        if blocks.len() < 2 * MIN_DEPTH + 1 || blocks.len() % 2 == 0 {
            return Err(GenomeError::Parse {
                offset: 0,
                detail: format!("{} blocks do not form a 2*depth+1 U-shape", blocks.len()),
            });
        }
        let depth = (blocks.len() - 1) / 2;
        if depth > MAX_DEPTH {
            return Err(GenomeError::BadDepth(depth));
        }
        let n_int = blocks[0].n_int();
        Genome::new(depth, n_int, blocks)
    }

    /// Uniformly random genome.
    pub fn random(depth: usize, n_int: usize, mode: Mode, rng: &mut Rng) -> Result<Self> {
        let blocks = (0..2 * depth + 1)
            .map(|_| {
                let conn: Vec<bool> = (0..conn_bits(n_int)).map(|_| rng.random::<bool>()).collect();
                let genes = match mode {
                    Mode::Joint => BlockGenes::Joint(
                        (0..n_int)
                            .map(|_| OpGene::from_value(rng.random_range(0..16u8)).expect("in range"))
                            .collect(),
                    ),
                    Mode::ArchOnly => BlockGenes::Arch(
                        (0..n_int)
                            .map(|_| ArchGene::from_value(rng.random_range(0..8u8)).expect("in range"))
                            .collect(),
                    ),
                    Mode::NeuronOnly => {
                        BlockGenes::Neuron((0..n_int).map(|_| rng.random::<bool>()).collect())
                    }
                };
                BlockGenome::new(conn, genes).expect("consistent sizes")
            })
            .collect();
        Genome::new(depth, n_int, blocks)
    }

    /// Random neuron-only genome sharing `arch`'s connection bits. Used by
    /// the plug-and-play second phase, where the architecture is frozen and
    /// only neuron assignments vary.
    pub fn random_neuron_overlay(arch: &Genome, rng: &mut Rng) -> Result<Self> {
        let blocks = arch
            .blocks
            .iter()
            .map(|b| {
                BlockGenome::new(
                    b.conn.clone(),
                    BlockGenes::Neuron((0..b.n_int()).map(|_| rng.random::<bool>()).collect()),
                )
                .expect("consistent sizes")
            })
            .collect();
        Genome::new(arch.depth, arch.n_int, blocks)
    }

    /// The homogeneous all-conventional comparator: every node is a 3x3
    /// conventional pre-activation conv without normalization, and nodes
    /// form a chain (node k fed by node k-1).
    pub fn baseline(depth: usize, n_int: usize) -> Result<Self> {
        let blocks = (0..2 * depth + 1)
            .map(|_| chain_block(n_int, BlockGenes::Joint(vec![OpGene::from_value(0).unwrap(); n_int])))
            .collect();
        Genome::new(depth, n_int, blocks)
    }

    /// Expand a per-block summary string like `16-3-13-12-9-14-13` into a
    /// joint genome: every node of block i carries the listed gene, nodes
    /// chained sequentially. The entry count fixes the depth (2d+1).
    pub fn from_summary(summary: &str, n_int: usize) -> Result<Self> {
        let mut seqs = Vec::new();
        let mut offset = 0usize;
        for part in summary.split('-') {
            let seq: u8 = part.parse().map_err(|_| GenomeError::Parse {
                offset,
                detail: format!("summary entry {:?} is not a sequence number", part),
            })?;
            seqs.push(OpGene::from_sequence(seq)?);
            offset += part.len() + 1;
        }
        if seqs.len() % 2 == 0 {
            return Err(GenomeError::Mismatch(format!(
                "{} summary entries do not form 2*depth+1 blocks",
                seqs.len()
            )));
        }
        let depth = (seqs.len() - 1) / 2;
        let blocks =
            seqs.iter().map(|&g| chain_block(n_int, BlockGenes::Joint(vec![g; n_int]))).collect();
        Genome::new(depth, n_int, blocks)
    }

    /// Per-block majority sequence numbers joined by dashes (the compact
    /// display form, length 2*depth+1).
    pub fn summary_string(&self) -> Result<String> {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| b.majority_sequence().map(|s| s.to_string()))
            .collect::<Result<_>>()?;
        Ok(parts.join("-"))
    }

    /// Fraction of neuron bits set to quadratic (joint mode) or of gene
    /// bits set (neuron-only). Used by surrogate fitnesses and stats.
    pub fn quad_fraction(&self) -> f64 {
        let mut quad = 0usize;
        let mut total = 0usize;
        for b in &self.blocks {
            match &b.genes {
                BlockGenes::Joint(v) => {
                    total += v.len();
                    quad += v.iter().filter(|g| g.quad).count();
                }
                BlockGenes::Neuron(v) => {
                    total += v.len();
                    quad += v.iter().filter(|&&q| q).count();
                }
                BlockGenes::Arch(v) => total += v.len(),
            }
        }
        if total == 0 {
            0.0
        } else {
            quad as f64 / total as f64
        }
    }

    // ───────────────────── flat bit view & variation ─────────────────────

    /// Full flattened bitstring: per block, connection bits then gene bits
    /// (each gene MSB first).
    pub fn flat_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.bit_len());
        for b in &self.blocks {
            bits.extend_from_slice(&b.conn);
            match &b.genes {
                BlockGenes::Joint(v) => {
                    for g in v {
                        let val = g.value();
                        for s in (0..4).rev() {
                            bits.push(val >> s & 1 != 0);
                        }
                    }
                }
                BlockGenes::Arch(v) => {
                    for g in v {
                        let val = g.value();
                        for s in (0..3).rev() {
                            bits.push(val >> s & 1 != 0);
                        }
                    }
                }
                BlockGenes::Neuron(v) => bits.extend_from_slice(v),
            }
        }
        bits
    }

    /// Rebuild a genome of this genome's shape from a flat bitstring.
    pub fn with_bits(&self, bits: &[bool]) -> Result<Self> {
        if bits.len() != self.bit_len() {
            return Err(GenomeError::Mismatch(format!(
                "bitstring length {} != genome length {}",
                bits.len(),
                self.bit_len()
            )));
        }
        let per_block = conn_bits(self.n_int) + self.mode.gene_bits() * self.n_int;
        let blocks = (0..self.blocks.len())
            .map(|bi| {
                let seg = &bits[bi * per_block..(bi + 1) * per_block];
                let conn = seg[..conn_bits(self.n_int)].to_vec();
                let gene_bits = &seg[conn_bits(self.n_int)..];
                let genes = match self.mode {
                    Mode::Joint => BlockGenes::Joint(
                        gene_bits
                            .chunks(4)
                            .map(|c| {
                                OpGene::from_value(pack_bits(c) as u8).expect("4 bits in range")
                            })
                            .collect(),
                    ),
                    Mode::ArchOnly => BlockGenes::Arch(
                        gene_bits
                            .chunks(3)
                            .map(|c| {
                                ArchGene::from_value(pack_bits(c) as u8).expect("3 bits in range")
                            })
                            .collect(),
                    ),
                    Mode::NeuronOnly => BlockGenes::Neuron(gene_bits.to_vec()),
                };
                BlockGenome::new(conn, genes).expect("consistent sizes")
            })
            .collect();
        Genome::new(self.depth, self.n_int, blocks)
    }

    fn check_aligned(&self, other: &Genome) -> Result<()> {
        if self.depth != other.depth || self.n_int != other.n_int || self.mode != other.mode {
            return Err(GenomeError::Mismatch(format!(
                "genomes not aligned: ({}, {}, {}) vs ({}, {}, {})",
                self.depth,
                self.n_int,
                self.mode.as_str(),
                other.depth,
                other.n_int,
                other.mode.as_str()
            )));
        }
        Ok(())
    }
}

/// Hamming distance over the full flattened bitstrings.
pub fn hamming(a: &Genome, b: &Genome) -> Result<usize> {
    a.check_aligned(b)?;
    Ok(a.flat_bits().iter().zip(b.flat_bits()).filter(|(x, y)| **x != *y).count())
}

/// Two-point crossover with probability `p_cross`; otherwise the children
/// are copies of the parents. Cut points are drawn uniformly over bit
/// boundaries and the middle segment is exchanged.
pub fn crossover(a: &Genome, b: &Genome, p_cross: f64, rng: &mut Rng) -> Result<(Genome, Genome)> {
    a.check_aligned(b)?;
    if rng.random::<f64>() >= p_cross {
        return Ok((a.clone(), b.clone()));
    }
    let len = a.bit_len();
    let (i, j) = {
        let x = rng.random_range(0..=len);
        let y = rng.random_range(0..=len);
        (x.min(y), x.max(y))
    };
    let mut ba = a.flat_bits();
    let mut bb = b.flat_bits();
    for k in i..j {
        std::mem::swap(&mut ba[k], &mut bb[k]);
    }
    Ok((a.with_bits(&ba)?, b.with_bits(&bb)?))
}

/// Mutation: with probability `p_mut`, pick one block uniformly and flip
/// each of its bits independently with probability `p_flip`. In neuron-only
/// mode only the neuron bits are flipped; the connection bits describe the
/// frozen architecture and never change.
pub fn mutate(g: &Genome, p_mut: f64, p_flip: f64, rng: &mut Rng) -> Result<Genome> {
    if rng.random::<f64>() >= p_mut {
        return Ok(g.clone());
    }
    let block = rng.random_range(0..g.n_blocks());
    let per_block = conn_bits(g.n_int) + g.mode.gene_bits() * g.n_int;
    let start = block * per_block;
    let flip_range = match g.mode {
        Mode::NeuronOnly => start + conn_bits(g.n_int)..start + per_block,
        _ => start..start + per_block,
    };
    let mut bits = g.flat_bits();
    for bit in &mut bits[flip_range] {
        if rng.random::<f64>() < p_flip {
            *bit = !*bit;
        }
    }
    g.with_bits(&bits)
}

/// Split a joint genome into its architecture part (3-bit genes) and its
/// neuron part (1 bit per node). Both keep the connection bits.
pub fn split_plugplay(g: &Genome) -> Result<(Genome, Genome)> {
    if g.mode != Mode::Joint {
        return Err(GenomeError::Mismatch(format!(
            "split requires a joint genome, got {}",
            g.mode.as_str()
        )));
    }
    let mut arch_blocks = Vec::new();
    let mut neuron_blocks = Vec::new();
    for b in &g.blocks {
        let BlockGenes::Joint(genes) = &b.genes else { unreachable!() };
        arch_blocks.push(
            BlockGenome::new(b.conn.clone(), BlockGenes::Arch(genes.iter().map(|g| g.arch()).collect()))
                .expect("same sizes"),
        );
        neuron_blocks.push(
            BlockGenome::new(
                b.conn.clone(),
                BlockGenes::Neuron(genes.iter().map(|g| g.quad).collect()),
            )
            .expect("same sizes"),
        );
    }
    Ok((
        Genome::new(g.depth, g.n_int, arch_blocks)?,
        Genome::new(g.depth, g.n_int, neuron_blocks)?,
    ))
}

/// Inverse of [`split_plugplay`]. The two parts must agree on shape and
/// connection bits.
pub fn merge_plugplay(arch: &Genome, neuron: &Genome) -> Result<Genome> {
    if arch.mode != Mode::ArchOnly || neuron.mode != Mode::NeuronOnly {
        return Err(GenomeError::Mismatch(format!(
            "merge requires arch-only + neuron-only, got {} + {}",
            arch.mode.as_str(),
            neuron.mode.as_str()
        )));
    }
    if arch.depth != neuron.depth || arch.n_int != neuron.n_int {
        return Err(GenomeError::Mismatch("merge: genome shapes differ".into()));
    }
    let blocks = arch
        .blocks
        .iter()
        .zip(&neuron.blocks)
        .map(|(ab, nb)| {
            if ab.conn != nb.conn {
                return Err(GenomeError::Mismatch(
                    "merge: connection bits differ between arch and neuron parts".into(),
                ));
            }
            let BlockGenes::Arch(ag) = &ab.genes else { unreachable!() };
            let BlockGenes::Neuron(ng) = &nb.genes else { unreachable!() };
            Ok(BlockGenome::new(
                ab.conn.clone(),
                BlockGenes::Joint(ag.iter().zip(ng).map(|(a, &q)| a.with_neuron(q)).collect()),
            )
            .expect("same sizes"))
        })
        .collect::<Result<Vec<_>>>()?;
    Genome::new(arch.depth, arch.n_int, blocks)
}

fn chain_block(n_int: usize, genes: BlockGenes) -> BlockGenome {
    let mut conn = vec![false; conn_bits(n_int)];
    for k in 2..=n_int {
        // node k fed by node k-1: last bit of its group
        conn[conn_bits(k - 1) + k - 2] = true;
    }
    BlockGenome::new(conn, genes).expect("consistent sizes")
}

fn pack_bits(bits: &[bool]) -> u32 {
    bits.iter().fold(0, |acc, &b| acc << 1 | b as u32)
}

/// Parse the connection segment of a block (`"1-00-110-0101"`) into flat
/// connection bits. `base` is the byte offset of the segment in the full
/// text, used for error reporting.
pub fn parse_connections(text: &str, base: usize) -> Result<(Vec<bool>, usize)> {
    let mut conn = Vec::new();
    let mut offset = base;
    if text.is_empty() {
        return Ok((conn, 1));
    }
    for (gi, group) in text.split('-').enumerate() {
        let expected = gi + 1;
        if group.len() != expected {
            return Err(GenomeError::Parse {
                offset,
                detail: format!(
                    "connection group {} has {} bits, expected {} (lower-to-higher rule)",
                    gi + 1,
                    group.len(),
                    expected
                ),
            });
        }
        for (ci, ch) in group.chars().enumerate() {
            match ch {
                '0' => conn.push(false),
                '1' => conn.push(true),
                _ => {
                    return Err(GenomeError::Parse {
                        offset: offset + ci,
                        detail: format!("non-binary character {:?} in connection gene", ch),
                    })
                }
            }
        }
        offset += group.len() + 1;
    }
    let n_int = text.split('-').count() + 1;
    Ok((conn, n_int))
}

fn parse_block(text: &str, base: usize) -> Result<BlockGenome> {
    let colon = text.find(':').ok_or_else(|| GenomeError::Parse {
        offset: base,
        detail: "block is missing the ':' between connection and operation genes".into(),
    })?;
    let (conn_part, gene_part) = (&text[..colon], &text[colon + 1..]);
    let (conn, n_int) = parse_connections(conn_part, base)?;
    let gene_base = base + colon + 1;

    let gene_strs: Vec<&str> = gene_part.split('-').collect();
    if gene_strs.len() != n_int {
        return Err(GenomeError::Parse {
            offset: gene_base,
            detail: format!("{} operation genes for {} nodes", gene_strs.len(), n_int),
        });
    }
    let width = gene_strs[0].len();
    let mut offset = gene_base;
    let mut packed = Vec::with_capacity(n_int);
    for gs in &gene_strs {
        if gs.len() != width {
            return Err(GenomeError::Parse {
                offset,
                detail: format!("gene {:?} differs in width from the first gene", gs),
            });
        }
        let mut v = 0u32;
        for (ci, ch) in gs.chars().enumerate() {
            match ch {
                '0' => v <<= 1,
                '1' => v = v << 1 | 1,
                _ => {
                    return Err(GenomeError::Parse {
                        offset: offset + ci,
                        detail: format!("non-binary character {:?} in operation gene", ch),
                    })
                }
            }
        }
        packed.push(v);
        offset += gs.len() + 1;
    }
    let genes = match width {
        4 => BlockGenes::Joint(
            packed.iter().map(|&v| OpGene::from_value(v as u8).expect("4 bits")).collect(),
        ),
        3 => BlockGenes::Arch(
            packed.iter().map(|&v| ArchGene::from_value(v as u8).expect("3 bits")).collect(),
        ),
        1 => BlockGenes::Neuron(packed.iter().map(|&v| v != 0).collect()),
        other => {
            return Err(GenomeError::Parse {
                offset: gene_base,
                detail: format!("gene width {} is not one of 4 (joint), 3 (arch), 1 (neuron)", other),
            })
        }
    };
    BlockGenome::new(conn, genes)
}

// ───────────────────────── JSON representation ─────────────────────────

#[derive(Clone, Serialize, Deserialize)]
struct BlockJson {
    conn: String,
    ops: Vec<String>,
}

#[derive(Clone, Serialize, Deserialize)]
struct GenomeJson {
    depth: usize,
    n_int: usize,
    mode: Mode,
    blocks: Vec<BlockJson>,
}

impl From<Genome> for GenomeJson {
    fn from(g: Genome) -> Self {
        GenomeJson {
            depth: g.depth,
            n_int: g.n_int,
            mode: g.mode,
            blocks: g
                .blocks
                .iter()
                .map(|b| BlockJson {
                    conn: b.conn_string(),
                    ops: b.genes_string().split('-').map(String::from).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GenomeJson> for Genome {
    type Error = GenomeError;

    fn try_from(j: GenomeJson) -> Result<Self> {
        let text = j
            .blocks
            .iter()
            .map(|b| format!("{}:{}", b.conn, b.ops.join("-")))
            .collect::<Vec<_>>()
            .join("/");
        let g = Genome::decode(&text)?;
        if g.depth != j.depth || g.n_int != j.n_int || g.mode != j.mode {
            return Err(GenomeError::Mismatch("JSON header disagrees with block contents".into()));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    /// The worked connection example: "1-00-110-0101".
    #[test]
    fn worked_example_adjacency() {
        let (conn, n_int) = parse_connections("1-00-110-0101", 0).unwrap();
        let block = BlockGenome::new(conn, BlockGenes::Neuron(vec![false; n_int])).unwrap();
        assert_eq!(block.preds(2), vec![1]);
        assert_eq!(block.preds(3), Vec::<usize>::new());
        assert_eq!(block.preds(4), vec![1, 2]);
        assert_eq!(block.preds(5), vec![2, 4]);
        assert_eq!(block.edge_count(), 5);
    }

    #[test]
    fn all_zero_connections() {
        let (conn, n_int) = parse_connections("0-00-000-0000", 0).unwrap();
        assert_eq!(n_int, 5);
        assert!(conn.iter().all(|&b| !b));
    }

    #[test]
    fn malformed_group_reports_position() {
        let err = parse_connections("1-0-110-0101", 0).unwrap_err();
        match err {
            GenomeError::Parse { offset, detail } => {
                assert_eq!(offset, 2);
                assert!(detail.contains("group 2"), "{}", detail);
            }
            other => panic!("unexpected error {:?}", other),
        }
    }

    /// The node-sequence table, hand-typed: (seq, gene, norm, kernel, quad, post).
    const OP_TABLE: [(u8, &str, bool, usize, bool, bool); 16] = [
        (1, "0000", false, 3, false, false),
        (2, "0001", false, 3, true, false),
        (3, "0010", true, 3, false, false),
        (4, "0011", true, 3, true, false),
        (5, "0100", false, 3, false, true),
        (6, "0101", false, 3, true, true),
        (7, "0110", true, 3, false, true),
        (8, "0111", true, 3, true, true),
        (9, "1000", false, 5, false, false),
        (10, "1001", false, 5, true, false),
        (11, "1010", true, 5, false, false),
        (12, "1011", true, 5, true, false),
        (13, "1100", false, 5, false, true),
        (14, "1101", false, 5, true, true),
        (15, "1110", true, 5, false, true),
        (16, "1111", true, 5, true, true),
    ];

    #[test]
    fn sequence_gene_table_reproduced() {
        for &(seq, bits, norm, kernel, quad, post) in &OP_TABLE {
            let g = OpGene::from_sequence(seq).unwrap();
            assert_eq!(g.bits_string(), bits);
            assert_eq!(g.norm, norm);
            assert_eq!(g.kernel(), kernel);
            assert_eq!(g.quad, quad);
            assert_eq!(g.post_act, post);
            assert_eq!(g.sequence(), seq);
            // display number invariant
            assert_eq!(
                seq as u32,
                8 * g.kernel5 as u32 + 4 * g.post_act as u32 + 2 * g.norm as u32 + g.quad as u32 + 1
            );
        }
        assert!(OpGene::from_sequence(0).is_err());
        assert!(OpGene::from_sequence(17).is_err());
    }

    #[test]
    fn sequence_12_is_quadratic_5x5_in() {
        let g = OpGene::from_sequence(12).unwrap();
        assert_eq!(g.bits_string(), "1011");
        assert_eq!(g.kernel(), 5);
        assert!(!g.post_act);
        assert!(g.norm);
        assert!(g.quad);
    }

    /// Plug-and-play table: 3-bit step-1 genes plus the neuron bit.
    const ARCH_TABLE: [(&str, usize, bool, bool); 8] = [
        ("000", 3, false, false),
        ("001", 3, false, true),
        ("010", 3, true, false),
        ("011", 3, true, true),
        ("100", 5, false, false),
        ("101", 5, false, true),
        ("110", 5, true, false),
        ("111", 5, true, true),
    ];

    #[test]
    fn plugplay_table_reproduced() {
        for &(bits, kernel, post, norm) in &ARCH_TABLE {
            let v = u8::from_str_radix(bits, 2).unwrap();
            let a = ArchGene::from_value(v).unwrap();
            assert_eq!(a.bits_string(), bits);
            assert_eq!(if a.kernel5 { 5 } else { 3 }, kernel);
            assert_eq!(a.post_act, post);
            assert_eq!(a.norm, norm);
            // both neuron choices produce adjacent sequences
            let conv = a.with_neuron(false);
            let quad = a.with_neuron(true);
            assert_eq!(quad.sequence(), conv.sequence() + 1);
        }
    }

    #[test]
    fn gene_1011_splits_to_101_plus_1() {
        let g = OpGene::from_sequence(12).unwrap(); // 1011
        assert_eq!(g.arch().bits_string(), "101");
        assert!(g.quad);
        assert_eq!(g.arch().with_neuron(true), g);
    }

    #[test]
    fn encode_decode_roundtrip_all_modes() {
        for &mode in &[Mode::Joint, Mode::ArchOnly, Mode::NeuronOnly] {
            let mut rng = rng_for(1, mode.as_str());
            for i in 0..200 {
                let depth = 2 + (i % 3);
                let g = Genome::random(depth, 5, mode, &mut rng).unwrap();
                let text = g.encode();
                let back = Genome::decode(&text).unwrap();
                assert_eq!(g, back, "roundtrip failed for {}", text);
                assert_eq!(
                    g.bit_len(),
                    (2 * depth + 1) * (10 + mode.gene_bits() * 5),
                    "bit length formula"
                );
            }
        }
    }

    #[test]
    fn hamming_basics() {
        let mut rng = rng_for(3, "ham");
        let g = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        assert_eq!(hamming(&g, &g).unwrap(), 0);
        // flip a single neuron bit (last bit of the first block's first gene)
        let mut bits = g.flat_bits();
        let idx = conn_bits(5) + 3;
        bits[idx] = !bits[idx];
        let g2 = g.with_bits(&bits).unwrap();
        assert_eq!(hamming(&g, &g2).unwrap(), 1);
        assert_eq!(hamming(&g2, &g).unwrap(), 1);
    }

    #[test]
    fn hamming_shape_mismatch_is_error() {
        let mut rng = rng_for(3, "ham2");
        let a = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let b = Genome::random(3, 5, Mode::Joint, &mut rng).unwrap();
        assert!(hamming(&a, &b).is_err());
    }

    #[test]
    fn crossover_skip_copies_parents() {
        let mut rng = rng_for(9, "cross");
        let a = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let b = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let (c1, c2) = crossover(&a, &b, 0.0, &mut rng).unwrap();
        assert_eq!(c1, a);
        assert_eq!(c2, b);
    }

    #[test]
    fn mutation_all_flips_complements_block() {
        let mut rng = rng_for(9, "mut");
        let g = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let m = mutate(&g, 1.0, 1.0, &mut rng).unwrap();
        let per_block = conn_bits(5) + 4 * 5;
        let (gb, mb) = (g.flat_bits(), m.flat_bits());
        let changed: Vec<usize> = (0..gb.len()).filter(|&i| gb[i] != mb[i]).collect();
        assert_eq!(changed.len(), per_block, "exactly one block complemented");
        let block = changed[0] / per_block;
        assert!(changed.iter().all(|&i| i / per_block == block));
    }

    #[test]
    fn neuron_mode_mutation_preserves_connections() {
        let mut rng = rng_for(10, "mutn");
        let g = Genome::random(2, 5, Mode::NeuronOnly, &mut rng).unwrap();
        for _ in 0..20 {
            let m = mutate(&g, 1.0, 1.0, &mut rng).unwrap();
            for (a, b) in g.blocks().iter().zip(m.blocks()) {
                assert_eq!(a.conn(), b.conn());
            }
        }
    }

    #[test]
    fn split_merge_roundtrip() {
        let mut rng = rng_for(12, "split");
        for _ in 0..200 {
            let g = Genome::random(3, 5, Mode::Joint, &mut rng).unwrap();
            let (arch, neuron) = split_plugplay(&g).unwrap();
            assert_eq!(arch.mode(), Mode::ArchOnly);
            assert_eq!(neuron.mode(), Mode::NeuronOnly);
            let merged = merge_plugplay(&arch, &neuron).unwrap();
            assert_eq!(merged, g);
        }
    }

    #[test]
    fn all_conventional_split_has_zero_neuron_part() {
        let g = Genome::baseline(2, 5).unwrap();
        let (_, neuron) = split_plugplay(&g).unwrap();
        for b in neuron.blocks() {
            let BlockGenes::Neuron(v) = b.genes() else { panic!() };
            assert!(v.iter().all(|&q| !q));
        }
    }

    #[test]
    fn offspring_always_decode() {
        let mut rng = rng_for(77, "fuzz");
        let mut a = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let mut b = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        for _ in 0..2500 {
            let (c1, c2) = crossover(&a, &b, 0.9, &mut rng).unwrap();
            let m1 = mutate(&c1, 0.7, 0.5, &mut rng).unwrap();
            let m2 = mutate(&c2, 0.7, 0.5, &mut rng).unwrap();
            assert_eq!(Genome::decode(&m1.encode()).unwrap(), m1);
            assert_eq!(Genome::decode(&m2.encode()).unwrap(), m2);
            a = m1;
            b = m2;
        }
    }

    #[test]
    fn summary_roundtrip_and_majority() {
        let g = Genome::from_summary("16-3-13-12-9-14-13", 5).unwrap();
        assert_eq!(g.depth(), 3);
        assert_eq!(g.summary_string().unwrap(), "16-3-13-12-9-14-13");
        // ties break toward the lower sequence number
        let genes = vec![
            OpGene::from_sequence(4).unwrap(),
            OpGene::from_sequence(4).unwrap(),
            OpGene::from_sequence(2).unwrap(),
            OpGene::from_sequence(2).unwrap(),
            OpGene::from_sequence(9).unwrap(),
        ];
        let block = BlockGenome::new(vec![false; 10], BlockGenes::Joint(genes)).unwrap();
        assert_eq!(block.majority_sequence().unwrap(), 2);
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = rng_for(6, "json");
        let g = Genome::random(2, 5, Mode::Joint, &mut rng).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: Genome = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn decode_rejects_bad_block_counts() {
        let block = "1:0000-0000"; // valid 2-node joint block
        assert!(Genome::decode(&[block; 4].join("/")).is_err(), "even block count");
        assert!(Genome::decode(&[block; 3].join("/")).is_err(), "depth 1 unsupported");
        assert!(Genome::decode(&[block; 11].join("/")).is_err(), "depth 5 unsupported");
        assert!(Genome::decode(&[block; 5].join("/")).is_ok(), "depth 2 fine");
    }
}
