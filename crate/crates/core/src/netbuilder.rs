//! Build executable U-shaped networks from genomes.
//!
//! The backbone is fixed: a 3x3 stem conv, `depth` encoder levels with
//! channel doubling (2x2 maxpool then 1x1 conv between levels), a
//! bottleneck, a mirrored decoder (nearest 2x upsample then 1x1 conv
//! halving channels), skip connections merged by elementwise addition, and
//! a 1x1 conv head followed by a sigmoid. Only the per-block DAGs and node
//! operations come from the genome; intra-block channel width is the
//! block's level width.

use thiserror::Error;

use crate::genome::{BlockGenes, Genome, GenomeError, Mode, OpGene};
use crate::layers::{ConvNeuronLayer, LrGroup, LrGroups, QuadNeuronLayer, QuadVars};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("input {h}x{w} is not divisible by 2^{depth}; pad inputs to a multiple of {factor} at the data layer")]
    SpatialDivisibility { h: usize, w: usize, depth: usize, factor: usize },
    #[error("cannot build a network from a neuron-only genome; merge it with its architecture first")]
    NeuronOnlyGenome,
    #[error("base_channels must be at least 1")]
    ZeroChannels,
    #[error("checkpoint does not match this network: {0}")]
    CheckpointMismatch(String),
}

pub type Result<T> = std::result::Result<T, BuildError>;

/// One named parameter tensor with its learning-rate group.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: LrGroup,
}

#[derive(Clone, Debug)]
enum NodeParams {
    Conv { w: usize, b: usize },
    Quad { w1: usize, b1: usize, w2: usize, b2: usize, w3: usize, b3: usize },
}

#[derive(Clone, Debug)]
struct NodePlan {
    gene: OpGene,
    params: NodeParams,
}

#[derive(Clone, Debug)]
struct BlockPlan {
    nodes: Vec<NodePlan>,
    /// 0-based predecessor lists per node.
    preds: Vec<Vec<usize>>,
    /// 0-based nodes with no successors; their outputs are summed.
    out_nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
struct ConvRef {
    w: usize,
    b: usize,
}

/// An executable network: flat parameter storage plus the wiring plan.
#[derive(Clone, Debug)]
pub struct Network<T> {
    genome: Genome,
    base_channels: usize,
    in_channels: usize,
    params: Vec<Param<T>>,
    stem: ConvRef,
    blocks: Vec<BlockPlan>,
    down: Vec<ConvRef>,
    up: Vec<ConvRef>,
    head: ConvRef,
}

/// Result of wiring a forward pass onto a tape.
pub struct ForwardPass {
    pub output: Var,
    pub param_vars: Vec<Var>,
}

/// Channel width of block `bi` in a network of the given depth.
fn block_width(base_channels: usize, depth: usize, bi: usize) -> usize {
    let level = if bi <= depth { bi } else { 2 * depth - bi };
    base_channels << level
}

/// Parameters of one node: conventional `w k^2 Cin Cout + Cout`, quadratic
/// three filter banks and three biases.
pub fn node_param_count(quad: bool, width: usize, kernel: usize) -> usize {
    let one = width * width * kernel * kernel + width;
    if quad {
        3 * one
    } else {
        one
    }
}

/// Closed-form parameter count of the network a genome builds, including
/// the fixed stem, level transitions and head.
pub fn param_count(genome: &Genome, base_channels: usize, in_channels: usize) -> Result<usize> {
    if genome.mode() == Mode::NeuronOnly {
        return Err(BuildError::NeuronOnlyGenome);
    }
    if base_channels == 0 {
        return Err(BuildError::ZeroChannels);
    }
    let d = genome.depth();
    let c = base_channels;
    let mut total = in_channels * c * 9 + c; // stem
    for (bi, block) in genome.blocks().iter().enumerate() {
        let w = block_width(c, d, bi);
        for j in 0..genome.n_int() {
            let (kernel, quad) = match block.genes() {
                BlockGenes::Joint(v) => (v[j].kernel(), v[j].quad),
                BlockGenes::Arch(v) => (if v[j].kernel5 { 5 } else { 3 }, false),
                BlockGenes::Neuron(_) => unreachable!(),
            };
            total += node_param_count(quad, w, kernel);
        }
    }
    for i in 0..d {
        let (lo, hi) = (c << i, c << (i + 1));
        total += lo * hi + hi; // down transition 1x1
        total += hi * lo + lo; // up transition 1x1
    }
    total += c + 1; // head 1x1 to a single channel
    Ok(total)
}

/// Build an executable network. Quadratic nodes are ReLinear-initialized;
/// parameter names and values are deterministic in `(genome, seed)`.
pub fn build<T: Scalar>(
    genome: &Genome,
    base_channels: usize,
    in_channels: usize,
    seed: u64,
) -> Result<Network<T>> {
    if genome.mode() == Mode::NeuronOnly {
        return Err(BuildError::NeuronOnlyGenome);
    }
    if base_channels == 0 {
        return Err(BuildError::ZeroChannels);
    }
    let d = genome.depth();
    let c = base_channels;
    let mut params: Vec<Param<T>> = Vec::new();

    let push_conv = |params: &mut Vec<Param<T>>, name: &str, cin: usize, cout: usize, k: usize| {
        let layer = ConvNeuronLayer::<T>::init(cin, cout, k, &mut rng_for(seed, &format!("init:{name}")));
        let w = params.len();
        params.push(Param { name: format!("{name}.w"), value: layer.w, group: LrGroup::Base });
        params.push(Param { name: format!("{name}.b"), value: layer.b, group: LrGroup::Base });
        ConvRef { w, b: w + 1 }
    };

    let stem = push_conv(&mut params, "stem", in_channels, c, 3);

    let mut blocks = Vec::new();
    for (bi, block) in genome.blocks().iter().enumerate() {
        let width = block_width(c, d, bi);
        let mut nodes = Vec::new();
        let mut preds = Vec::new();
        for j in 1..=genome.n_int() {
            let gene = match block.genes() {
                BlockGenes::Joint(v) => v[j - 1],
                BlockGenes::Arch(v) => v[j - 1].with_neuron(false),
                BlockGenes::Neuron(_) => unreachable!(),
            };
            let name = format!("blk{bi}.node{j}");
            let mut rng = rng_for(seed, &format!("init:{name}"));
            let node_params = if gene.quad {
                let layer = QuadNeuronLayer::<T>::relinear_init(width, width, gene.kernel(), &mut rng);
                let base = params.len();
                params.push(Param { name: format!("{name}.w1"), value: layer.w1, group: LrGroup::Base });
                params.push(Param { name: format!("{name}.b1"), value: layer.b1, group: LrGroup::Base });
                params.push(Param { name: format!("{name}.w2"), value: layer.w2, group: LrGroup::Quad });
                params.push(Param { name: format!("{name}.b2"), value: layer.b2, group: LrGroup::Quad });
                params.push(Param { name: format!("{name}.w3"), value: layer.w3, group: LrGroup::Quad });
                params.push(Param { name: format!("{name}.b3"), value: layer.b3, group: LrGroup::Quad });
                NodeParams::Quad {
                    w1: base,
                    b1: base + 1,
                    w2: base + 2,
                    b2: base + 3,
                    w3: base + 4,
                    b3: base + 5,
                }
            } else {
                let layer = ConvNeuronLayer::<T>::init(width, width, gene.kernel(), &mut rng);
                let base = params.len();
                params.push(Param { name: format!("{name}.w1"), value: layer.w, group: LrGroup::Base });
                params.push(Param { name: format!("{name}.b1"), value: layer.b, group: LrGroup::Base });
                NodeParams::Conv { w: base, b: base + 1 }
            };
            nodes.push(NodePlan { gene, params: node_params });
            preds.push(block.preds(j).iter().map(|p| p - 1).collect());
        }
        let out_nodes: Vec<usize> =
            (1..=genome.n_int()).filter(|&j| block.succs(j).is_empty()).map(|j| j - 1).collect();
        blocks.push(BlockPlan { nodes, preds, out_nodes });
    }

    let mut down = Vec::new();
    let mut up = Vec::new();
    for i in 0..d {
        down.push(push_conv(&mut params, &format!("down{i}"), c << i, c << (i + 1), 1));
    }
    for i in 0..d {
        up.push(push_conv(&mut params, &format!("up{i}"), c << (i + 1), c << i, 1));
    }
    let head = push_conv(&mut params, "head", c, 1, 1);

    Ok(Network {
        genome: genome.clone(),
        base_channels,
        in_channels,
        params,
        stem,
        blocks,
        down,
        up,
        head,
    })
}

impl<T: Scalar> Network<T> {
    pub fn genome(&self) -> &Genome {
        &self.genome
    }

    pub fn depth(&self) -> usize {
        self.genome.depth()
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Partition of parameter indices into learning-rate groups. Every
    /// parameter belongs to exactly one group by construction.
    pub fn lr_groups(&self) -> LrGroups {
        let mut groups = LrGroups::default();
        for (i, p) in self.params.iter().enumerate() {
            match p.group {
                LrGroup::Base => groups.base.push(i),
                LrGroup::Quad => groups.quad.push(i),
            }
        }
        groups
    }

    /// Per-parameter learning rates from the group split.
    pub fn lrs(&self, lr_base: f64, lr_quad: f64) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| match p.group {
                LrGroup::Base => lr_base,
                LrGroup::Quad => lr_quad,
            })
            .collect()
    }

    /// Wire a forward pass for input `x` (BCHW) onto `tape`. With
    /// `trainable` the parameters are inserted as gradient leaves.
    pub fn forward(&self, tape: &mut Tape<T>, x: Tensor<T>, trainable: bool) -> Result<ForwardPass> {
        let (_, cin, h, w) = x.dims4("network input")?;
        let d = self.depth();
        let factor = 1 << d;
        if h % factor != 0 || w % factor != 0 {
            return Err(BuildError::SpatialDivisibility { h, w, depth: d, factor });
        }
        if cin != self.in_channels {
            return Err(BuildError::Tensor(TensorError::ShapeMismatch {
                op: "network input",
                detail: format!("expected {} channels, got {}", self.in_channels, cin),
            }));
        }
        let param_vars: Vec<Var> =
            self.params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect();
        let xin = tape.leaf(x, false);

        let mut cur = tape.conv2d(xin, param_vars[self.stem.w], param_vars[self.stem.b])?;
        let mut skips = Vec::with_capacity(d);
        for i in 0..d {
            cur = self.block_forward(tape, &self.blocks[i], cur, &param_vars)?;
            skips.push(cur);
            let pooled = tape.maxpool2x2(cur)?;
            cur = tape.conv2d(pooled, param_vars[self.down[i].w], param_vars[self.down[i].b])?;
        }
        cur = self.block_forward(tape, &self.blocks[d], cur, &param_vars)?;
        for i in (0..d).rev() {
            let upsampled = tape.upsample_nearest2x(cur)?;
            let reduced =
                tape.conv2d(upsampled, param_vars[self.up[i].w], param_vars[self.up[i].b])?;
            let merged = tape.add(reduced, skips[i])?;
            cur = self.block_forward(tape, &self.blocks[2 * d - i], merged, &param_vars)?;
        }
        let logits = tape.conv2d(cur, param_vars[self.head.w], param_vars[self.head.b])?;
        let output = tape.sigmoid(logits)?;
        Ok(ForwardPass { output, param_vars })
    }

    fn block_forward(
        &self,
        tape: &mut Tape<T>,
        block: &BlockPlan,
        input: Var,
        pv: &[Var],
    ) -> Result<Var> {
        let mut outs: Vec<Var> = Vec::with_capacity(block.nodes.len());
        for (j, node) in block.nodes.iter().enumerate() {
            // dangling-in nodes read the block input; others sum predecessors
            let mut acc = if block.preds[j].is_empty() {
                input
            } else {
                let mut it = block.preds[j].iter();
                let mut acc = outs[*it.next().unwrap()];
                for &p in it {
                    acc = tape.add(acc, outs[p])?;
                }
                acc
            };
            acc = self.node_forward(tape, node, acc, pv)?;
            outs.push(acc);
        }
        let mut it = block.out_nodes.iter();
        let mut sum = outs[*it.next().expect("every DAG has a sink")];
        for &o in it {
            sum = tape.add(sum, outs[o])?;
        }
        Ok(sum)
    }

    fn node_forward(&self, tape: &mut Tape<T>, node: &NodePlan, x: Var, pv: &[Var]) -> Result<Var> {
        let conv = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            match node.params {
                NodeParams::Conv { w, b } => Ok(tape.conv2d(x, pv[w], pv[b])?),
                NodeParams::Quad { w1, b1, w2, b2, w3, b3 } => {
                    let layer_vars = QuadVars {
                        w1: pv[w1],
                        b1: pv[b1],
                        w2: pv[w2],
                        b2: pv[b2],
                        w3: pv[w3],
                        b3: pv[b3],
                    };
                    let lin1 = tape.conv2d(x, layer_vars.w1, layer_vars.b1)?;
                    let lin2 = tape.conv2d(x, layer_vars.w2, layer_vars.b2)?;
                    let xx = tape.hadamard(x, x)?;
                    let sq = tape.conv2d(xx, layer_vars.w3, layer_vars.b3)?;
                    let prod = tape.hadamard(lin1, lin2)?;
                    Ok(tape.add(prod, sq)?)
                }
            }
        };
        if node.gene.post_act {
            // Conv -> [IN] -> ReLU
            let mut v = conv(tape, x)?;
            if node.gene.norm {
                v = tape.instance_norm(v, INSTANCE_NORM_EPS)?;
            }
            Ok(tape.relu(v)?)
        } else {
            // [IN] -> ReLU -> Conv
            let mut v = x;
            if node.gene.norm {
                v = tape.instance_norm(v, INSTANCE_NORM_EPS)?;
            }
            v = tape.relu(v)?;
            conv(tape, v)
        }
    }
}

/// DOT rendering of every block DAG, one digraph per block. `in`/`out`
/// pseudo-nodes carry the dangling-node convention.
pub fn to_dot(genome: &Genome) -> std::result::Result<String, BuildError> {
    if genome.mode() == Mode::NeuronOnly {
        return Err(BuildError::NeuronOnlyGenome);
    }
    let mut out = String::new();
    for (bi, block) in genome.blocks().iter().enumerate() {
        out.push_str(&format!("digraph blk{bi} {{\n"));
        out.push_str("  rankdir=LR;\n");
        out.push_str("  in [shape=point];\n  out [shape=point];\n");
        for j in 1..=genome.n_int() {
            let gene = match block.genes() {
                BlockGenes::Joint(v) => v[j - 1],
                BlockGenes::Arch(v) => v[j - 1].with_neuron(false),
                BlockGenes::Neuron(_) => unreachable!(),
            };
            let label = format!(
                "{k}x{k} {conv}{norm} ({act})",
                k = gene.kernel(),
                conv = if gene.quad { "QConv" } else { "Conv" },
                norm = if gene.norm { "+IN" } else { "" },
                act = if gene.post_act { "post" } else { "pre" },
            );
            out.push_str(&format!("  n{j} [label=\"{label}\"];\n"));
        }
        for j in 1..=genome.n_int() {
            let preds = block.preds(j);
            if preds.is_empty() {
                out.push_str(&format!("  in -> n{j};\n"));
            }
            for p in preds {
                out.push_str(&format!("  n{p} -> n{j};\n"));
            }
            if block.succs(j).is_empty() {
                out.push_str(&format!("  n{j} -> out;\n"));
            }
        }
        out.push_str("}\n");
    }
    Ok(out)
}
