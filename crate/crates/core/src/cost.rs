//! Analytical parameter and FLOP accounting for convolution, Ghost, C3Ghost
//! and PSA attention blocks. FLOPs are reported as `2 * MACs`; bias and
//! normalization terms are excluded from MACs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("channel mismatch at {at}: expected {expected}, found {found}")]
    ChannelMismatch { at: String, expected: u64, found: u64 },
    #[error("invalid block spec at {at}: {reason}")]
    InvalidSpec { at: String, reason: String },
    #[error("cannot read cost model: {0}")]
    Parse(String),
}

fn invalid(at: &str, reason: impl Into<String>) -> CostError {
    CostError::InvalidSpec {
        at: at.to_string(),
        reason: reason.into(),
    }
}

/// Channels and spatial size of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub channels: u64,
    pub height: u64,
    pub width: u64,
}

impl Shape {
    pub fn new(channels: u64, height: u64, width: u64) -> Self {
        Shape { channels, height, width }
    }

    pub fn pixels(&self) -> u64 {
        self.height * self.width
    }
}

/// One node of a cost breakdown. Totals of an inner node are the sums over
/// its children.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Ghost leaves: parameters relative to the standard convolution they replace.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<CostReport>,
}

impl CostReport {
    pub fn leaf(name: impl Into<String>, params: u64, macs: u64) -> Self {
        CostReport {
            name: name.into(),
            params,
            macs,
            compression: None,
            children: Vec::new(),
        }
    }

    pub fn group(name: impl Into<String>, children: Vec<CostReport>) -> Self {
        CostReport {
            name: name.into(),
            params: children.iter().map(|c| c.params).sum(),
            macs: children.iter().map(|c| c.macs).sum(),
            compression: None,
            children,
        }
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn leaves(&self) -> Vec<&CostReport> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    /// Breakdown as an indented table with Table 2 style totals.
    pub fn render_table(&self) -> String {
        let mut rows = Vec::new();
        collect_rows(self, 0, &mut rows);
        let width = rows.iter().map(|(n, _, _)| n.chars().count()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>12}  {:>14}  {:>8}  {:>8}\n", "block", "params", "FLOPs", "Param.", "FLOPs");
        for (name, params, flops) in rows {
            let _ = writeln!(
                out,
                "{name:<width$}  {params:>12}  {flops:>14}  {:>8}  {:>8}",
                human_params(params),
                human_flops(flops)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,block,params,macs,flops\n");
        let mut stack = Vec::new();
        depth_rows(self, 0, &mut stack);
        for (depth, node) in stack {
            let _ = writeln!(out, "{depth},{},{},{},{}", node.name, node.params, node.macs, node.flops());
        }
        out
    }
}

fn collect_rows(node: &CostReport, depth: usize, rows: &mut Vec<(String, u64, u64)>) {
    let mut name = format!("{}{}", "  ".repeat(depth), node.name);
    if let Some(c) = node.compression {
        let _ = write!(name, " (x{c:.2} vs conv)");
    }
    rows.push((name, node.params, node.flops()));
    for c in &node.children {
        collect_rows(c, depth + 1, rows);
    }
}

fn depth_rows<'a>(node: &'a CostReport, depth: usize, out: &mut Vec<(usize, &'a CostReport)>) {
    out.push((depth, node));
    for c in &node.children {
        depth_rows(c, depth + 1, out);
    }
}

/// `1.77M` style.
pub fn human_params(n: u64) -> String {
    let n = n as f64;
    if n >= 1e6 {
        format!("{:.2}M", n / 1e6)
    } else if n >= 1e3 {
        format!("{:.2}K", n / 1e3)
    } else {
        format!("{n}")
    }
}

/// `7.3G` style.
pub fn human_flops(n: u64) -> String {
    let n = n as f64;
    if n >= 1e9 {
        format!("{:.1}G", n / 1e9)
    } else if n >= 1e6 {
        format!("{:.1}M", n / 1e6)
    } else if n >= 1e3 {
        format!("{:.1}K", n / 1e3)
    } else {
        format!("{n}")
    }
}

pub fn conv_out(size: u64, stride: u64) -> u64 {
    size.div_ceil(stride)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: u64,
    pub c_out: u64,
    pub k: u64,
    pub stride: u64,
    pub groups: u64,
    pub bias: bool,
    pub height: u64,
    pub width: u64,
}

impl ConvSpec {
    pub fn new(c_in: u64, c_out: u64, k: u64, height: u64, width: u64) -> Self {
        ConvSpec {
            c_in,
            c_out,
            k,
            stride: 1,
            groups: 1,
            bias: false,
            height,
            width,
        }
    }

    pub fn depthwise(c: u64, k: u64, height: u64, width: u64) -> Self {
        ConvSpec {
            groups: c,
            ..ConvSpec::new(c, c, k, height, width)
        }
    }

    pub fn validate(&self, at: &str) -> Result<(), CostError> {
        let all_positive = [self.c_in, self.c_out, self.k, self.stride, self.groups, self.height, self.width]
            .iter()
            .all(|&v| v > 0);
        if !all_positive {
            return Err(invalid(at, "all sizes must be positive"));
        }
        if !self.c_in.is_multiple_of(self.groups) || !self.c_out.is_multiple_of(self.groups) {
            return Err(invalid(
                at,
                format!("groups {} must divide c_in {} and c_out {}", self.groups, self.c_in, self.c_out),
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> u64 {
        self.c_in / self.groups * self.k * self.k * self.c_out
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.c_out, conv_out(self.height, self.stride), conv_out(self.width, self.stride))
    }

    fn label(&self) -> String {
        let kind = if self.groups == 1 {
            "conv"
        } else if self.groups == self.c_in && self.c_in == self.c_out {
            "dwconv"
        } else {
            "gconv"
        };
        format!("{kind}{0}x{0} {1}->{2} s{3}", self.k, self.c_in, self.c_out, self.stride)
    }
}

pub fn conv_cost(spec: &ConvSpec) -> Result<CostReport, CostError> {
    spec.validate("conv")?;
    let weights = spec.weights();
    let params = weights + if spec.bias { spec.c_out } else { 0 };
    Ok(CostReport::leaf(spec.label(), params, weights * spec.output().pixels()))
}

/// Primary `k x k` conv to `ceil(c_out / ratio)` channels, then a depthwise
/// `d x d` cheap op that produces the remaining channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostSpec {
    pub c_in: u64,
    pub c_out: u64,
    pub ratio: u64,
    pub k: u64,
    pub d: u64,
    pub stride: u64,
    pub height: u64,
    pub width: u64,
}

impl GhostSpec {
    pub fn new(c_in: u64, c_out: u64, height: u64, width: u64) -> Self {
        GhostSpec {
            c_in,
            c_out,
            ratio: 2,
            k: 1,
            d: 3,
            stride: 1,
            height,
            width,
        }
    }

    pub fn primary_channels(&self) -> u64 {
        self.c_out.div_ceil(self.ratio)
    }

    pub fn cheap_channels(&self) -> u64 {
        self.c_out - self.primary_channels()
    }

    pub fn validate(&self, at: &str) -> Result<(), CostError> {
        if [self.c_in, self.k, self.d, self.stride, self.height, self.width].contains(&0) {
            return Err(invalid(at, "all sizes must be positive"));
        }
        if !(2 <= self.ratio && self.ratio <= self.c_out) {
            return Err(invalid(at, format!("need 2 <= ratio <= c_out, got ratio {} and c_out {}", self.ratio, self.c_out)));
        }
        Ok(())
    }

    /// The standard convolution with the same channels, kernel and stride.
    pub fn equivalent_conv(&self) -> ConvSpec {
        ConvSpec {
            stride: self.stride,
            ..ConvSpec::new(self.c_in, self.c_out, self.k, self.height, self.width)
        }
    }
}

pub fn ghost_cost(spec: &GhostSpec) -> Result<CostReport, CostError> {
    spec.validate("ghost")?;
    let p = spec.primary_channels();
    let primary = ConvSpec {
        stride: spec.stride,
        ..ConvSpec::new(spec.c_in, p, spec.k, spec.height, spec.width)
    };
    let out = primary.output();
    let cheap_params = spec.cheap_channels() * spec.d * spec.d;
    let mut report = CostReport::group(
        format!("ghost {}->{} s={} d={}", spec.c_in, spec.c_out, spec.ratio, spec.d),
        vec![
            conv_cost(&primary)?,
            CostReport::leaf(
                format!("cheap dw{0}x{0} {1}ch", spec.d, spec.cheap_channels()),
                cheap_params,
                cheap_params * out.pixels(),
            ),
        ],
    );
    report.compression = Some(report.params as f64 / spec.equivalent_conv().weights() as f64);
    Ok(report)
}

/// Multi-head self-attention over `tokens` tokens of width `d_model` plus a
/// two-layer feed-forward leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub d_model: u64,
    pub heads: u64,
    pub tokens: u64,
    pub ffn_expansion: u64,
}

impl AttentionSpec {
    pub fn validate(&self, at: &str) -> Result<(), CostError> {
        if self.d_model == 0 || self.heads == 0 || self.tokens == 0 {
            return Err(invalid(at, "d_model, heads and tokens must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(invalid(at, format!("d_model {} is not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.heads
    }

    /// MACs of `QK^T` plus `attention * V`.
    pub fn score_macs(&self) -> u64 {
        2 * self.tokens * self.tokens * self.d_model
    }
}

pub fn attention_cost(spec: &AttentionSpec) -> Result<CostReport, CostError> {
    spec.validate("attention")?;
    let (d, n, e) = (spec.d_model, spec.tokens, spec.ffn_expansion);
    let proj = 4 * d * d;
    let ffn = 2 * e * d * d;
    Ok(CostReport::group(
        format!("attention d={d} h={} n={n}", spec.heads),
        vec![
            CostReport::leaf("qkv+out projections", proj, n * proj),
            CostReport::leaf("scores QK^T, AV", 0, spec.score_macs()),
            CostReport::leaf(format!("ffn x{e}"), ffn, n * ffn),
        ],
    ))
}

fn one() -> u64 {
    1
}
fn two() -> u64 {
    2
}
fn three() -> u64 {
    3
}
fn half() -> f64 {
    0.5
}

/// A block tree. Input channels and resolution flow from the parent; a
/// leaf's optional `c_in` is checked against the incoming channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Block {
    Conv {
        name: Option<String>,
        c_in: Option<u64>,
        /// Defaults to the input channels.
        c_out: Option<u64>,
        #[serde(default = "one")]
        k: u64,
        #[serde(default = "one")]
        stride: u64,
        #[serde(default = "one")]
        groups: u64,
        #[serde(default)]
        depthwise: bool,
        #[serde(default)]
        bias: bool,
    },
    Ghost {
        name: Option<String>,
        c_in: Option<u64>,
        c_out: u64,
        #[serde(default = "two")]
        ratio: u64,
        #[serde(default = "one")]
        k: u64,
        #[serde(default = "three")]
        d: u64,
        #[serde(default = "one")]
        stride: u64,
    },
    /// Two Ghost modules with an identity residual.
    GhostBottleneck {
        name: Option<String>,
        c_in: Option<u64>,
        /// Defaults to half the input channels.
        hidden: Option<u64>,
        #[serde(default = "two")]
        ratio: u64,
        #[serde(default = "three")]
        d: u64,
    },
    /// Split into a 1x1 passthrough conv and a 1x1 conv followed by `n`
    /// Ghost bottlenecks, concatenate, fuse with a 1x1 conv.
    C3ghost {
        name: Option<String>,
        c_in: Option<u64>,
        c_out: u64,
        /// Defaults to half of `c_out`.
        hidden: Option<u64>,
        #[serde(default = "three")]
        n: u64,
        #[serde(default = "two")]
        ratio: u64,
        #[serde(default = "three")]
        d: u64,
    },
    /// 1x1 conv, attention on a `split_ratio` share of the channels, 1x1 conv.
    Psa {
        name: Option<String>,
        c_in: Option<u64>,
        #[serde(default = "half")]
        split_ratio: f64,
        heads: u64,
        #[serde(default = "two")]
        ffn_expansion: u64,
    },
    Attention {
        name: Option<String>,
        heads: u64,
        #[serde(default = "two")]
        ffn_expansion: u64,
    },
    Sequential {
        name: Option<String>,
        blocks: Vec<Block>,
    },
    /// Parallel branches on the same input, concatenated along channels.
    Concat {
        name: Option<String>,
        blocks: Vec<Block>,
    },
    /// `x + f(x)`; the wrapped block must preserve the shape.
    Residual {
        name: Option<String>,
        block: Box<Block>,
    },
}

fn check_c_in(at: &str, declared: Option<u64>, input: &Shape) -> Result<u64, CostError> {
    match declared {
        Some(c) if c != input.channels => Err(CostError::ChannelMismatch {
            at: at.to_string(),
            expected: c,
            found: input.channels,
        }),
        _ => Ok(input.channels),
    }
}

fn named(report: CostReport, name: &Option<String>) -> CostReport {
    match name {
        Some(n) => CostReport { name: n.clone(), ..report },
        None => report,
    }
}

fn bottleneck(at: &str, c: u64, hidden: u64, ratio: u64, d: u64, input: &Shape) -> Result<CostReport, CostError> {
    let g1 = GhostSpec {
        ratio,
        d,
        ..GhostSpec::new(c, hidden, input.height, input.width)
    };
    let g2 = GhostSpec {
        ratio,
        d,
        ..GhostSpec::new(hidden, c, input.height, input.width)
    };
    g1.validate(&format!("{at}/ghost1"))?;
    g2.validate(&format!("{at}/ghost2"))?;
    Ok(CostReport::group(
        format!("ghost_bottleneck {c}->{hidden}->{c}"),
        vec![ghost_cost(&g1)?, ghost_cost(&g2)?, CostReport::leaf("residual add", 0, 0)],
    ))
}

impl Block {
    fn kind(&self) -> &'static str {
        match self {
            Block::Conv { .. } => "conv",
            Block::Ghost { .. } => "ghost",
            Block::GhostBottleneck { .. } => "ghost_bottleneck",
            Block::C3ghost { .. } => "c3ghost",
            Block::Psa { .. } => "psa",
            Block::Attention { .. } => "attention",
            Block::Sequential { .. } => "sequential",
            Block::Concat { .. } => "concat",
            Block::Residual { .. } => "residual",
        }
    }

    /// Cost of this block on `input`, plus its output shape. `at` is the path
    /// used in error messages.
    pub fn cost(&self, input: &Shape, at: &str) -> Result<(CostReport, Shape), CostError> {
        let at = format!("{at}/{}", self.kind());
        let at = at.as_str();
        match self {
            Block::Conv {
                name,
                c_in,
                c_out,
                k,
                stride,
                groups,
                depthwise,
                bias,
            } => {
                let c = check_c_in(at, *c_in, input)?;
                let spec = ConvSpec {
                    c_in: c,
                    c_out: c_out.unwrap_or(c),
                    k: *k,
                    stride: *stride,
                    groups: if *depthwise { c } else { *groups },
                    bias: *bias,
                    height: input.height,
                    width: input.width,
                };
                spec.validate(at)?;
                Ok((named(conv_cost(&spec)?, name), spec.output()))
            }
            Block::Ghost {
                name,
                c_in,
                c_out,
                ratio,
                k,
                d,
                stride,
            } => {
                let spec = GhostSpec {
                    c_in: check_c_in(at, *c_in, input)?,
                    c_out: *c_out,
                    ratio: *ratio,
                    k: *k,
                    d: *d,
                    stride: *stride,
                    height: input.height,
                    width: input.width,
                };
                spec.validate(at)?;
                let out = Shape::new(*c_out, conv_out(input.height, *stride), conv_out(input.width, *stride));
                Ok((named(ghost_cost(&spec)?, name), out))
            }
            Block::GhostBottleneck {
                name,
                c_in,
                hidden,
                ratio,
                d,
            } => {
                let c = check_c_in(at, *c_in, input)?;
                let r = bottleneck(at, c, hidden.unwrap_or(c / 2), *ratio, *d, input)?;
                Ok((named(r, name), *input))
            }
            Block::C3ghost {
                name,
                c_in,
                c_out,
                hidden,
                n,
                ratio,
                d,
            } => {
                let c = check_c_in(at, *c_in, input)?;
                let h = hidden.unwrap_or(c_out / 2);
                if h == 0 {
                    return Err(invalid(at, "hidden width must be positive"));
                }
                let (hh, ww) = (input.height, input.width);
                let mut main = vec![conv_cost(&ConvSpec::new(c, h, 1, hh, ww))?];
                let inner = Shape::new(h, hh, ww);
                for i in 0..*n {
                    main.push(bottleneck(&format!("{at}/m{i}"), h, h / 2, *ratio, *d, &inner)?);
                }
                let children = vec![
                    CostReport::group("cv1 + bottlenecks", main),
                    named(conv_cost(&ConvSpec::new(c, h, 1, hh, ww))?, &Some("cv2 passthrough".into())),
                    CostReport::leaf("concat", 0, 0),
                    named(conv_cost(&ConvSpec::new(2 * h, *c_out, 1, hh, ww))?, &Some("cv3 fuse".into())),
                ];
                let r = CostReport::group(format!("c3ghost {c}->{c_out} n={n}"), children);
                Ok((named(r, name), Shape::new(*c_out, hh, ww)))
            }
            Block::Psa {
                name,
                c_in,
                split_ratio,
                heads,
                ffn_expansion,
            } => {
                let c = check_c_in(at, *c_in, input)?;
                let share = c as f64 * split_ratio;
                if !(*split_ratio > 0.0 && *split_ratio <= 1.0) || share.fract() != 0.0 {
                    return Err(invalid(at, format!("split_ratio {split_ratio} must select a whole number of the {c} channels")));
                }
                let attn = AttentionSpec {
                    d_model: share as u64,
                    heads: *heads,
                    tokens: input.pixels(),
                    ffn_expansion: *ffn_expansion,
                };
                attn.validate(at)?;
                let (hh, ww) = (input.height, input.width);
                let children = vec![
                    named(conv_cost(&ConvSpec::new(c, c, 1, hh, ww))?, &Some("cv1".into())),
                    attention_cost(&attn)?,
                    named(conv_cost(&ConvSpec::new(c, c, 1, hh, ww))?, &Some("cv2".into())),
                ];
                Ok((named(CostReport::group(format!("psa c={c}"), children), name), *input))
            }
            Block::Attention {
                name,
                heads,
                ffn_expansion,
            } => {
                let spec = AttentionSpec {
                    d_model: input.channels,
                    heads: *heads,
                    tokens: input.pixels(),
                    ffn_expansion: *ffn_expansion,
                };
                spec.validate(at)?;
                Ok((named(attention_cost(&spec)?, name), *input))
            }
            Block::Sequential { name, blocks } => {
                let mut shape = *input;
                let mut children = Vec::with_capacity(blocks.len());
                for (i, b) in blocks.iter().enumerate() {
                    let (r, s) = b.cost(&shape, &format!("{at}[{i}]"))?;
                    children.push(r);
                    shape = s;
                }
                let label = name.clone().unwrap_or_else(|| "sequential".into());
                Ok((CostReport::group(label, children), shape))
            }
            Block::Concat { name, blocks } => {
                if blocks.is_empty() {
                    return Err(invalid(at, "concat needs at least one branch"));
                }
                let mut children = Vec::with_capacity(blocks.len() + 1);
                let mut out: Option<Shape> = None;
                for (i, b) in blocks.iter().enumerate() {
                    let (r, s) = b.cost(input, &format!("{at}[{i}]"))?;
                    children.push(r);
                    out = Some(match out {
                        None => s,
                        Some(o) if (o.height, o.width) == (s.height, s.width) => {
                            Shape::new(o.channels + s.channels, o.height, o.width)
                        }
                        Some(o) => {
                            return Err(invalid(
                                at,
                                format!("branch {i} outputs {}x{}, expected {}x{}", s.height, s.width, o.height, o.width),
                            ))
                        }
                    });
                }
                children.push(CostReport::leaf("concat", 0, 0));
                let label = name.clone().unwrap_or_else(|| "concat".into());
                Ok((CostReport::group(label, children), out.expect("non-empty")))
            }
            Block::Residual { name, block } => {
                let (r, s) = block.cost(input, at)?;
                if s.channels != input.channels {
                    return Err(CostError::ChannelMismatch {
                        at: at.to_string(),
                        expected: input.channels,
                        found: s.channels,
                    });
                }
                if (s.height, s.width) != (input.height, input.width) {
                    return Err(invalid(at, "residual branch changes the resolution"));
                }
                let label = name.clone().unwrap_or_else(|| "residual".into());
                Ok((CostReport::group(label, vec![r, CostReport::leaf("add", 0, 0)]), s))
            }
        }
    }
}

/// Published totals to print next to the computed ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTotals {
    pub params: f64,
    pub flops: f64,
}

/// A cost-model file: input shape and a block tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub name: Option<String>,
    pub input: Shape,
    pub block: Block,
    pub reference: Option<ReferenceTotals>,
}

impl CostModel {
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        toml::from_str(text).map_err(|e| CostError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = fs::read_to_string(path).map_err(|e| CostError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn evaluate(&self) -> Result<(CostReport, Shape), CostError> {
        let (r, s) = self.block.cost(&self.input, "")?;
        Ok((named(r, &self.name), s))
    }
}

pub fn composite_cost(block: &Block, input: &Shape) -> Result<CostReport, CostError> {
    Ok(block.cost(input, "")?.0)
}
