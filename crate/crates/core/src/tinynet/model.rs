//! Dual-branch encoder–decoder with selectable ways of passing tissue
//! context to the cell branch.
//!
//! Each branch at input side `R`:
//!
//! ```text
//! e1 = silu(conv3x3(x))                 R      dropout
//! e2 = silu(conv3x3(pool(e1)))          R/2    dropout   <- Encoder position
//! b  = silu(conv3x3(pool(e2')))         R/4              <- Bottleneck position
//! d1 = silu(conv3x3([up(b'), e2']))     R/2
//! d2 = silu(conv3x3([up(d1), e1]))      R                <- Decoder position
//! y  = softmax(conv1x1(d2'))            R
//! ```
//!
//! A primed name is the feature after anything injected at that position has
//! been concatenated. The input position sits before `e1`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{Group, ParamStore};
use super::tensor::Tensor;
use crate::error::NetError;
use crate::field::ScalarField;
use crate::geometry::{
    crop_and_upsample_plan, downsample_and_pad_plan, PatchGeometry, ResampleMode,
};
use crate::tissue::TISSUE_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Input,
    Encoder,
    Bottleneck,
    Decoder,
}

impl Position {
    pub const ALL: [Position; 4] = [Self::Input, Self::Encoder, Self::Bottleneck, Self::Decoder];

    /// Spatial downsampling exponent relative to the branch input.
    pub fn level(self) -> u32 {
        match self {
            Self::Input | Self::Decoder => 0,
            Self::Encoder => 1,
            Self::Bottleneck => 2,
        }
    }
}

/// Direction(s) of feature exchange at one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    #[default]
    None,
    T2c,
    C2t,
    Both,
}

impl ShareMode {
    pub const ALL: [ShareMode; 4] = [Self::None, Self::T2c, Self::C2t, Self::Both];

    pub fn tissue_to_cell(self) -> bool {
        matches!(self, Self::T2c | Self::Both)
    }

    pub fn cell_to_tissue(self) -> bool {
        matches!(self, Self::C2t | Self::Both)
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::T2c => "t2c",
            Self::C2t => "c2t",
            Self::Both => "both",
        }
    }
}

impl FromStr for ShareMode {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| NetError::Config(format!("unknown share mode {s:?} (none, t2c, c2t, both)")))
    }
}

/// Exchange modes at the encoder, bottleneck and decoder positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SharingConfig {
    pub encoder: ShareMode,
    pub bottleneck: ShareMode,
    pub decoder: ShareMode,
}

pub const SHARE_POSITIONS: [Position; 3] = [Position::Encoder, Position::Bottleneck, Position::Decoder];

impl SharingConfig {
    pub fn at(&self, pos: Position) -> ShareMode {
        match pos {
            Position::Encoder => self.encoder,
            Position::Bottleneck => self.bottleneck,
            Position::Decoder => self.decoder,
            Position::Input => ShareMode::None,
        }
    }
}

impl fmt::Display for SharingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.encoder.as_str(), self.bottleneck.as_str(), self.decoder.as_str())
    }
}

impl FromStr for SharingConfig {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(NetError::Config(format!(
                "sharing config {s:?} must be <encoder>-<bottleneck>-<decoder>"
            )));
        }
        Ok(Self {
            encoder: parts[0].parse()?,
            bottleneck: parts[1].parse()?,
            decoder: parts[2].parse()?,
        })
    }
}

/// All 4³ combinations, encoder mode varying slowest.
pub fn enumerate_sharing_configs() -> Vec<SharingConfig> {
    let mut out = Vec::with_capacity(64);
    for encoder in ShareMode::ALL {
        for bottleneck in ShareMode::ALL {
            for decoder in ShareMode::ALL {
                out.push(SharingConfig {
                    encoder,
                    bottleneck,
                    decoder,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    CellOnly,
    /// Ground-truth tissue labels concatenated to the cell input (upper bound).
    TissueLabelLeaking,
    /// Tissue-branch prediction injected into the cell branch at a position.
    PredTo(Position),
    FeatureSharing(SharingConfig),
}

impl ModelVariant {
    pub const BASELINES: [ModelVariant; 6] = [
        Self::CellOnly,
        Self::TissueLabelLeaking,
        Self::PredTo(Position::Input),
        Self::PredTo(Position::Encoder),
        Self::PredTo(Position::Bottleneck),
        Self::PredTo(Position::Decoder),
    ];

    pub fn has_tissue_branch(&self) -> bool {
        matches!(self, Self::PredTo(_) | Self::FeatureSharing(_))
    }

    pub fn needs_tissue_labels(&self) -> bool {
        matches!(self, Self::TissueLabelLeaking)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CellOnly => f.write_str("cell-only"),
            Self::TissueLabelLeaking => f.write_str("label-leaking"),
            Self::PredTo(Position::Input) => f.write_str("pred-to-input"),
            Self::PredTo(Position::Encoder) => f.write_str("pred-to-inter-1"),
            Self::PredTo(Position::Bottleneck) => f.write_str("pred-to-inter-2"),
            Self::PredTo(Position::Decoder) => f.write_str("pred-to-output"),
            Self::FeatureSharing(c) => write!(f, "sharing:{c}"),
        }
    }
}

impl FromStr for ModelVariant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("sharing:") {
            return Ok(Self::FeatureSharing(rest.parse()?));
        }
        Self::BASELINES
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                NetError::Config(format!(
                    "unknown variant {s:?} (cell-only, label-leaking, pred-to-input, pred-to-inter-1, \
                     pred-to-inter-2, pred-to-output, sharing:<enc>-<bott>-<dec>)"
                ))
            })
    }
}

impl Serialize for ModelVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub in_channels: usize,
    /// Channel widths of the two encoder blocks.
    pub widths: [usize; 2],
    pub bottleneck: usize,
    pub out_channels: usize,
    /// Spatial dropout probability after each encoder block.
    pub dropout: f64,
}

impl BranchSpec {
    pub fn width_at(&self, pos: Position) -> usize {
        match pos {
            Position::Input => self.in_channels,
            Position::Encoder => self.widths[1],
            Position::Bottleneck => self.bottleneck,
            Position::Decoder => self.widths[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub cell: BranchSpec,
    pub tissue: BranchSpec,
    /// Stop gradients from the cell loss flowing into the tissue branch
    /// through injected predictions.
    pub detach_injection: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            cell: BranchSpec {
                in_channels: 3,
                widths: [8, 16],
                bottleneck: 32,
                out_channels: 3,
                dropout: 0.3,
            },
            tissue: BranchSpec {
                in_channels: 3,
                widths: [8, 16],
                bottleneck: 32,
                out_channels: TISSUE_CHANNELS,
                dropout: 0.1,
            },
            detach_injection: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BranchParams {
    enc1: Conv,
    enc2: Conv,
    bott: Conv,
    dec1: Conv,
    dec2: Conv,
    head: Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Adapters {
    t2c: [Option<Conv>; 3],
    c2t: [Option<Conv>; 3],
}

fn share_index(pos: Position) -> usize {
    match pos {
        Position::Encoder => 0,
        Position::Bottleneck => 1,
        Position::Decoder => 2,
        Position::Input => unreachable!("no sharing at the input"),
    }
}

/// One training or inference example as seen by the network.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    /// `[3, S, S]` cell image.
    pub cell_image: &'a ScalarField,
    /// `[3, T, T]` tissue image.
    pub tissue_image: &'a ScalarField,
    /// `[3, T, T]` one-hot tissue labels; only the label-leaking variant reads them.
    pub tissue_labels: Option<&'a ScalarField>,
    pub geometry: PatchGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardNodes {
    pub cell_prob: NodeId,
    pub tissue_prob: Option<NodeId>,
}

/// Draws a fresh channel mask for every dropout site, in forward order.
struct Dropper {
    rng: Option<ChaCha8Rng>,
}

impl Dropper {
    fn apply(&mut self, g: &mut Graph, x: NodeId, p: f64) -> NodeId {
        let Some(rng) = self.rng.as_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let c = g.value(x).shape[0];
        let scale = (0..c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect();
        g.channel_scale(x, scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetwork {
    variant: ModelVariant,
    config: NetworkConfig,
    params: ParamStore,
    cell: BranchParams,
    tissue: Option<BranchParams>,
    adapters: Adapters,
}

/// Extra input channels concatenated at each position of one branch.
type Extras = [usize; 4];

fn pos_index(p: Position) -> usize {
    match p {
        Position::Input => 0,
        Position::Encoder => 1,
        Position::Bottleneck => 2,
        Position::Decoder => 3,
    }
}

fn build_branch(
    params: &mut ParamStore,
    name: &str,
    group: Group,
    spec: &BranchSpec,
    extra: Extras,
    rng: &mut ChaCha8Rng,
) -> BranchParams {
    let [w1, w2] = spec.widths;
    let wb = spec.bottleneck;
    let mut conv = |layer: &str, cin, cout, k| {
        let (w, b) = params.add_conv(&format!("{name}.{layer}"), group, cin, cout, k, rng);
        Conv { w, b }
    };
    BranchParams {
        enc1: conv("enc1", spec.in_channels + extra[0], w1, 3),
        enc2: conv("enc2", w1, w2, 3),
        bott: conv("bott", w2 + extra[1], wb, 3),
        dec1: conv("dec1", wb + extra[2] + w2 + extra[1], w2, 3),
        dec2: conv("dec2", w2 + w1, w1, 3),
        head: conv("head", w1 + extra[3], spec.out_channels, 1),
    }
}

impl TinyNetwork {
    pub fn new(variant: ModelVariant, config: NetworkConfig, seed: u64) -> Result<Self, NetError> {
        for (name, s) in [("cell", &config.cell), ("tissue", &config.tissue)] {
            if !(0.0..1.0).contains(&s.dropout) {
                return Err(NetError::Config(format!("{name} dropout {} outside [0, 1)", s.dropout)));
            }
            if s.widths.contains(&0) || s.bottleneck == 0 || s.out_channels < 2 || s.in_channels == 0 {
                return Err(NetError::Config(format!("{name} branch has an empty layer")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (c, t) = (&config.cell, &config.tissue);
        let mut cell_extra: Extras = [0; 4];
        let mut tissue_extra: Extras = [0; 4];
        match variant {
            ModelVariant::CellOnly => {}
            ModelVariant::TissueLabelLeaking => cell_extra[0] = TISSUE_CHANNELS,
            ModelVariant::PredTo(p) => cell_extra[pos_index(p)] = t.out_channels,
            ModelVariant::FeatureSharing(s) => {
                for p in SHARE_POSITIONS {
                    if s.at(p).tissue_to_cell() {
                        cell_extra[pos_index(p)] += t.width_at(p);
                    }
                    if s.at(p).cell_to_tissue() {
                        tissue_extra[pos_index(p)] += c.width_at(p);
                    }
                }
            }
        }
        let cell = build_branch(&mut params, "cell", Group::Cell, c, cell_extra, &mut rng);
        let tissue = variant
            .has_tissue_branch()
            .then(|| build_branch(&mut params, "tissue", Group::Tissue, t, tissue_extra, &mut rng));
        let mut adapters = Adapters {
            t2c: [None; 3],
            c2t: [None; 3],
        };
        if let ModelVariant::FeatureSharing(s) = variant {
            for p in SHARE_POSITIONS {
                let i = share_index(p);
                let lvl = format!("{p:?}").to_lowercase();
                if s.at(p).tissue_to_cell() {
                    let w = t.width_at(p);
                    let (wi, bi) = params.add_conv(&format!("adapter.t2c.{lvl}"), Group::Cell, w, w, 3, &mut rng);
                    adapters.t2c[i] = Some(Conv { w: wi, b: bi });
                }
                if s.at(p).cell_to_tissue() {
                    let w = c.width_at(p);
                    let (wi, bi) = params.add_conv(&format!("adapter.c2t.{lvl}"), Group::Tissue, w, w, 3, &mut rng);
                    adapters.c2t[i] = Some(Conv { w: wi, b: bi });
                }
            }
        }
        Ok(Self {
            variant,
            config,
            params,
            cell,
            tissue,
            adapters,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the forward pass for one example. `dropout_seed = None` runs
    /// in inference mode; a seed fixes every dropout mask.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &NetInput<'_>,
        dropout_seed: Option<u64>,
    ) -> Result<ForwardNodes, NetError> {
        let s = check_image(input.cell_image, self.config.cell.in_channels, "cell image")?;
        let t = check_image(input.tissue_image, self.config.tissue.in_channels, "tissue image")?;
        let mut drop = Dropper {
            rng: dropout_seed.map(ChaCha8Rng::seed_from_u64),
        };
        let pnodes: Vec<NodeId> = (0..self.params.len()).map(|i| g.param(i, self.params.get(i))).collect();
        let ctx = Ctx {
            pnodes: &pnodes,
            geom: input.geometry,
            cell_side: s,
            tissue_side: t,
        };
        let cell_x = g.input(Tensor::from_field(input.cell_image));

        match self.variant {
            ModelVariant::CellOnly => {
                let cell_prob = self.run_branch(g, &ctx, &self.cell, &self.config.cell, cell_x, &mut drop, &mut |_, _, x| Ok(x))?;
                Ok(ForwardNodes {
                    cell_prob,
                    tissue_prob: None,
                })
            }
            ModelVariant::TissueLabelLeaking => {
                let labels = input.tissue_labels.ok_or(NetError::MissingTissueLabels)?;
                check_image(labels, TISSUE_CHANNELS, "tissue labels")?;
                if labels.side() != Some(t) {
                    return Err(NetError::Shape {
                        context: "tissue labels".into(),
                        detail: format!("{:?}, expected side {t}", labels.shape()),
                    });
                }
                let lab = g.input(Tensor::from_field(labels));
                let up = ctx.tissue_to_cell(g, lab, Position::Input, ResampleMode::Nearest)?;
                let x = g.concat(&[cell_x, up])?;
                let cell_prob = self.run_branch(g, &ctx, &self.cell, &self.config.cell, x, &mut drop, &mut |_, _, x| Ok(x))?;
                Ok(ForwardNodes {
                    cell_prob,
                    tissue_prob: None,
                })
            }
            ModelVariant::PredTo(pos) => {
                let tb = self.tissue.expect("variant has a tissue branch");
                let tissue_x = g.input(Tensor::from_field(input.tissue_image));
                let tissue_prob =
                    self.run_branch(g, &ctx, &tb, &self.config.tissue, tissue_x, &mut drop, &mut |_, _, x| Ok(x))?;
                let src = if self.config.detach_injection {
                    g.detach(tissue_prob)
                } else {
                    tissue_prob
                };
                let inj = ctx.tissue_to_cell(g, src, pos, ResampleMode::Bilinear)?;
                let cell_prob = if pos == Position::Input {
                    let x = g.concat(&[cell_x, inj])?;
                    self.run_branch(g, &ctx, &self.cell, &self.config.cell, x, &mut drop, &mut |_, _, x| Ok(x))?
                } else {
                    self.run_branch(g, &ctx, &self.cell, &self.config.cell, cell_x, &mut drop, &mut |g, p, x| {
                        if p == pos {
                            g.concat(&[x, inj])
                        } else {
                            Ok(x)
                        }
                    })?
                };
                Ok(ForwardNodes {
                    cell_prob,
                    tissue_prob: Some(tissue_prob),
                })
            }
            ModelVariant::FeatureSharing(cfg) => {
                let tissue_x = g.input(Tensor::from_field(input.tissue_image));
                let (c, tp) = self.run_shared(g, &ctx, cell_x, tissue_x, cfg, &mut drop)?;
                Ok(ForwardNodes {
                    cell_prob: c,
                    tissue_prob: Some(tp),
                })
            }
        }
    }

    fn conv(&self, g: &mut Graph, ctx: &Ctx<'_>, c: Conv, x: NodeId) -> Result<NodeId, NetError> {
        g.conv2d(x, ctx.pnodes[c.w], ctx.pnodes[c.b])
    }

    fn block(&self, g: &mut Graph, ctx: &Ctx<'_>, c: Conv, x: NodeId) -> Result<NodeId, NetError> {
        let y = self.conv(g, ctx, c, x)?;
        Ok(g.silu(y))
    }

    /// Single branch; `hook` may concatenate extra channels at the encoder,
    /// bottleneck and decoder positions.
    #[allow(clippy::too_many_arguments)]
    fn run_branch(
        &self,
        g: &mut Graph,
        ctx: &Ctx<'_>,
        bp: &BranchParams,
        spec: &BranchSpec,
        x: NodeId,
        drop: &mut Dropper,
        hook: &mut dyn FnMut(&mut Graph, Position, NodeId) -> Result<NodeId, NetError>,
    ) -> Result<NodeId, NetError> {
        let e1 = self.block(g, ctx, bp.enc1, x)?;
        let e1 = drop.apply(g, e1, spec.dropout);
        let p1 = g.avg_pool2(e1)?;
        let e2 = self.block(g, ctx, bp.enc2, p1)?;
        let e2 = drop.apply(g, e2, spec.dropout);
        let e2 = hook(g, Position::Encoder, e2)?;
        let p2 = g.avg_pool2(e2)?;
        let b = self.block(g, ctx, bp.bott, p2)?;
        let b = hook(g, Position::Bottleneck, b)?;
        let d2 = self.decode(g, ctx, bp, b, e2, e1)?;
        let d2 = hook(g, Position::Decoder, d2)?;
        let logits = self.conv(g, ctx, bp.head, d2)?;
        Ok(g.softmax(logits))
    }

    fn decode(
        &self,
        g: &mut Graph,
        ctx: &Ctx<'_>,
        bp: &BranchParams,
        b: NodeId,
        e2: NodeId,
        e1: NodeId,
    ) -> Result<NodeId, NetError> {
        let u = g.upsample2(b);
        let cat = g.concat(&[u, e2])?;
        let d1 = self.block(g, ctx, bp.dec1, cat)?;
        let u = g.upsample2(d1);
        let cat = g.concat(&[u, e1])?;
        self.block(g, ctx, bp.dec2, cat)
    }

    /// Exchanges features at each sharing position; both directions read the
    /// features as they were before that position's exchange.
    fn exchange(
        &self,
        g: &mut Graph,
        ctx: &Ctx<'_>,
        cfg: SharingConfig,
        pos: Position,
        cell: NodeId,
        tissue: NodeId,
    ) -> Result<(NodeId, NodeId), NetError> {
        let i = share_index(pos);
        let mode = cfg.at(pos);
        let mut new_cell = cell;
        let mut new_tissue = tissue;
        if mode.tissue_to_cell() {
            let a = self.block(g, ctx, self.adapters.t2c[i].expect("adapter"), tissue)?;
            let up = ctx.tissue_to_cell(g, a, pos, ResampleMode::Bilinear)?;
            new_cell = g.concat(&[cell, up])?;
        }
        if mode.cell_to_tissue() {
            let a = self.block(g, ctx, self.adapters.c2t[i].expect("adapter"), cell)?;
            let down = ctx.cell_to_tissue(g, a, pos)?;
            new_tissue = g.concat(&[tissue, down])?;
        }
        Ok((new_cell, new_tissue))
    }

    fn run_shared(
        &self,
        g: &mut Graph,
        ctx: &Ctx<'_>,
        cell_x: NodeId,
        tissue_x: NodeId,
        cfg: SharingConfig,
        drop: &mut Dropper,
    ) -> Result<(NodeId, NodeId), NetError> {
        let (cb, tb) = (self.cell, self.tissue.expect("variant has a tissue branch"));
        let (cs, ts) = (self.config.cell, self.config.tissue);

        let enc = |g: &mut Graph, drop: &mut Dropper, bp: &BranchParams, spec: &BranchSpec, x| -> Result<(NodeId, NodeId), NetError> {
            let e1 = self.block(g, ctx, bp.enc1, x)?;
            let e1 = drop.apply(g, e1, spec.dropout);
            let p1 = g.avg_pool2(e1)?;
            let e2 = self.block(g, ctx, bp.enc2, p1)?;
            Ok((e1, drop.apply(g, e2, spec.dropout)))
        };
        let (ce1, ce2) = enc(g, drop, &cb, &cs, cell_x)?;
        let (te1, te2) = enc(g, drop, &tb, &ts, tissue_x)?;
        let (ce2, te2) = self.exchange(g, ctx, cfg, Position::Encoder, ce2, te2)?;

        let bott = |g: &mut Graph, bp: &BranchParams, e2| -> Result<NodeId, NetError> {
            let p = g.avg_pool2(e2)?;
            self.block(g, ctx, bp.bott, p)
        };
        let cb_ = bott(g, &cb, ce2)?;
        let tb_ = bott(g, &tb, te2)?;
        let (cb_, tb_) = self.exchange(g, ctx, cfg, Position::Bottleneck, cb_, tb_)?;

        let cd = self.decode(g, ctx, &cb, cb_, ce2, ce1)?;
        let td = self.decode(g, ctx, &tb, tb_, te2, te1)?;
        let (cd, td) = self.exchange(g, ctx, cfg, Position::Decoder, cd, td)?;

        let cl = self.conv(g, ctx, cb.head, cd)?;
        let tl = self.conv(g, ctx, tb.head, td)?;
        Ok((g.softmax(cl), g.softmax(tl)))
    }

    /// Runs inference and returns `(cell probabilities, tissue probabilities)`.
    pub fn predict(&self, input: &NetInput<'_>) -> Result<(ScalarField, Option<ScalarField>), NetError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input, None)?;
        Ok((
            g.value(out.cell_prob).to_field(),
            out.tissue_prob.map(|t| g.value(t).to_field()),
        ))
    }
}

struct Ctx<'a> {
    pnodes: &'a [NodeId],
    geom: PatchGeometry,
    cell_side: usize,
    tissue_side: usize,
}

impl Ctx<'_> {
    fn level_geometry(&self, pos: Position) -> (PatchGeometry, usize) {
        let l = pos.level();
        let mut geom = self.geom;
        geom.cell_side_px = self.cell_side >> l;
        (geom, self.tissue_side >> l)
    }

    /// Crops the cell window out of a tissue-branch tensor at `pos` and
    /// resamples it onto the cell-branch grid at the same position.
    fn tissue_to_cell(&self, g: &mut Graph, x: NodeId, pos: Position, mode: ResampleMode) -> Result<NodeId, NetError> {
        let (geom, _) = self.level_geometry(pos);
        let side = g.value(x).shape[1];
        let plan = crop_and_upsample_plan(&geom, side, mode)?;
        g.resample(x, plan)
    }

    fn cell_to_tissue(&self, g: &mut Graph, x: NodeId, pos: Position) -> Result<NodeId, NetError> {
        let (geom, tissue_side) = self.level_geometry(pos);
        let plan = downsample_and_pad_plan(&geom, tissue_side)?;
        g.pool_pad(x, plan)
    }
}

fn check_image(f: &ScalarField, channels: usize, what: &str) -> Result<usize, NetError> {
    let side = f.side().filter(|s| s % 4 == 0 && *s > 0);
    match side {
        Some(s) if f.channels() == channels => Ok(s),
        _ => Err(NetError::Shape {
            context: what.into(),
            detail: format!("{:?}, expected [{channels}, S, S] with S a positive multiple of 4", f.shape()),
        }),
    }
}
